"""Command-line entry point.

    hybridpinn <mode> <config> [--seed N] [--workers N] [--warm-start PATH] [--out DIR] [--epochs N]
    hybridpinn info <checkpoint>

Exit codes: 0 ok, 2 config error, 3 numerical abort, 4 I/O error.
"""
from __future__ import annotations

import argparse
import json
import logging
import math
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__, datasets, loss, network, refsolver, sampling, scaling, trainer
from .config import SEED_DATA, SEED_NOISE, MODES, derive_seed, load_config
from .data import LabelledData, read_dataset_csv, write_dataset_csv
from .errors import (CheckpointError, ConfigError, DomainError, HybridPinnError, NumericalError,
                     StructuralError, TrainingAborted)

log = logging.getLogger("hybridpinn")

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC, EXIT_IO = 0, 2, 3, 4


class RunFailed(Exception):
    def __init__(self, code, message):
        super().__init__(message)
        self.code = code


def _clean(v):
    if isinstance(v, dict):
        return {str(k): _clean(x) for k, x in v.items()}
    if isinstance(v, (list, tuple)):
        return [_clean(x) for x in v]
    if isinstance(v, (np.floating, float)):
        v = float(v)
        return v if math.isfinite(v) else None
    if isinstance(v, np.integer):
        return int(v)
    return v


def write_metrics(metrics, path):
    Path(path).write_text(json.dumps(_clean(metrics), sort_keys=True, indent=2) + "\n")


def _oracle(cfg, dom, phys, laser):
    log.info("solving reference field")
    return refsolver.solve(dom, phys, laser, cfg.grid())


def _need_grid(cfg, section, key):
    if not cfg.values.get("grid", {}).get("spacing"):
        cfg.fail(section, key, "'reference' needs a [grid] section with spacing")


def _load_data(cfg, dom, phys, laser, cache):
    """Auxiliary/hybrid training data per the [data] section."""
    d = cfg.values.get("data")
    if not d or d["source"] == "none":
        return LabelledData.empty(dom.ndim)
    if d["source"] == "reference":
        _need_grid(cfg, "data", "source")
        if "snaps" not in cache:
            cache["snaps"] = _oracle(cfg, dom, phys, laser)
        full = refsolver.export_dataset(cache["snaps"])
    else:
        full = read_dataset_csv(cfg.resolve_path(d["source"]), ndim=dom.ndim)
    if d["band"] > 0:
        top = dom.lengths[-1]
        full = full.subset(np.flatnonzero(full.pts[:, -1] >= top - d["band"] * (1 + 1e-9)))
    if d["n_points"]:
        full = sampling.subsample_data(full, d["n_points"], derive_seed(cfg.seed, SEED_DATA))
    if d["noise_sigma"] > 0:
        rng = np.random.default_rng(derive_seed(cfg.seed, SEED_NOISE))
        full = LabelledData(full.pts, full.t, full.T + rng.normal(0.0, d["noise_sigma"], len(full)))
    return full


def _load_validation(cfg, dom, phys, laser, cache):
    v = cfg.values.get("validation")
    if not v or v["source"] == "none":
        return None
    if v["source"] == "reference":
        _need_grid(cfg, "validation", "source")
        if "snaps" not in cache:
            cache["snaps"] = _oracle(cfg, dom, phys, laser)
        full = refsolver.export_dataset(cache["snaps"])
    else:
        full = read_dataset_csv(cfg.resolve_path(v["source"]), ndim=dom.ndim)
    if v["stride"] < 1:
        cfg.fail("validation", "stride", "must be >= 1")
    return full.subset(np.arange(0, len(full), v["stride"]))


def _ir_data(cfg, dom, phys, laser, cache):
    ir = cfg["ir"]
    if ir["source"] == "synthetic":
        _need_grid(cfg, "ir", "source")
        if "snaps" not in cache:
            cache["snaps"] = _oracle(cfg, dom, phys, laser)
        stack = datasets.gen_synthetic_ir(cache["snaps"], laser, cfg.ir_spec(), dom)
    else:
        crop = ir["crop"] or None
        if crop is not None and len(crop) != 4:
            cfg.fail("ir", "crop", "need row0, col0, n_rows, n_cols")
        stack = datasets.ingest_ir(cfg.resolve_path(ir["source"]), crop, ir["factor"])
    placement = datasets.Placement(dom.ndim, ir["offset"], ir["flip_rows"],
                                   dom.lengths[-1] if dom.ndim == 3 else 0.0)
    data, dropped = datasets.frames_to_data(stack, placement, domain=dom)
    if dropped:
        log.warning("%d IR records fall outside the domain and were dropped", dropped)
    return data, stack, dropped


def _scaling_meta(sc):
    return {"lengths": list(sc.lengths), "t_end": sc.t_end, "T0": sc.T0, "delta_T": sc.delta_T,
            "input_dim": sc.input_dim}


def _train_mode(cfg, args, metrics, out):
    dom = cfg.domain()
    phys = cfg.phys()
    laser = cfg.laser()
    t = cfg["training"]
    cache = {}
    top_edge = "data" if cfg.mode == "hybrid" else t["top_edge"]
    if cfg.mode == "inverse":
        data, _, dropped = _ir_data(cfg, dom, phys, laser, cache)
        metrics["ir_records"] = len(data)
        metrics["ir_dropped"] = dropped
    else:
        data = _load_data(cfg, dom, phys, laser, cache)
    if cfg.mode == "hybrid" and len(data) == 0:
        cfg.fail("data", "source", "hybrid mode needs measured data")
    validation = _load_validation(cfg, dom, phys, laser, cache)
    spec = cfg.network_spec(dom.ndim)
    mu = cfg.mu_init() if cfg.mode == "inverse" else {}
    if args.warm_start:
        loaded, lspec, _ = network.load_checkpoint(args.warm_start)
        if lspec.layer_sizes != spec.layer_sizes:
            raise ConfigError(f"warm-start network {list(lspec.layer_sizes)} does not match "
                              f"configured {list(spec.layer_sizes)}", path=cfg.path)
        params = network.NetworkParams(loaded.weights, loaded.biases, mu or dict(loaded.mu))
        metrics["warm_start"] = str(Path(args.warm_start).resolve())
    else:
        params = network.init(spec, mu)
    sc = cfg.scaling(dom, phys, spec.input_dim)
    problem = loss.HeatProblem(dom, phys, laser, sc, top_edge=top_edge, flux_scale=t["flux_scale"],
                               residual_scale=t["residual_scale"], workers=cfg["run"]["workers"])
    scfg = cfg.sampling()
    colloc = sampling.build_collocation(dom, laser, scfg, phys.T0, data=data,
                                        surfaces=problem.boundary_surfaces())
    metrics.update({"N_r": colloc.N_r, "N_b": colloc.N_b, "N_i": colloc.N_i, "N_d": colloc.N_d,
                    "q_ref": problem.q_ref, "r_ref": problem.r_ref})
    if colloc.warnings:
        metrics["warnings"] = list(colloc.warnings)
    tcfg = cfg.train_config()
    try:
        res = trainer.train(params, colloc, problem, cfg.weights(), tcfg, validation=validation)
    except TrainingAborted as exc:
        if exc.history:
            trainer.write_history_csv(exc.history, out / "history.csv")
        metrics["status"] = "aborted"
        metrics["error"] = str(exc)
        raise RunFailed(EXIT_NUMERIC, str(exc)) from exc
    trainer.write_history_csv(res.history, out / "history.csv")
    final = res.final
    metrics.update({k: final[k] for k in ("L_b", "L_i", "L_r", "L_d", "total", "nmse", "rmse_K")})
    metrics["epochs"] = res.state.epoch
    metrics["mu"] = res.params.mu_values()
    if validation is not None:
        T_pred = trainer.predict_temperature(res.params, sc, validation.pts, validation.t)
        rise = validation.T - phys.T0
        metrics["rel_l2_rise"] = float(np.linalg.norm(T_pred - validation.T) / np.linalg.norm(rise)) \
            if np.any(rise) else None
        span = float(validation.T.max() - validation.T.min())
        metrics["rmse_over_range"] = final["rmse_K"] / span if span > 0 else None
    res.state.metadata.update({"mode": cfg.mode, "seed": cfg.seed, "scaling": _scaling_meta(sc),
                               "final_total": final["total"]})
    network.save_checkpoint(res.params, spec, res.state, out / "model.ckpt")


def _reference_mode(cfg, args, metrics, out):
    dom, phys, laser = cfg.domain(), cfg.phys(), cfg.laser()
    snaps = _oracle(cfg, dom, phys, laser)
    snap_dir = out / "snapshots"
    snap_dir.mkdir(parents=True, exist_ok=True)
    rows = []
    for i, s in enumerate(snaps):
        refsolver.write_snapshot_csv(s, snap_dir / f"snap_{i:04d}.csv")
        rows.append({"time": s.time, "T_max": float(s.values.max()), "T_min": float(s.values.min())})
    trainer.write_history_csv(rows, out / "history.csv")
    d = cfg["data"]
    ds = refsolver.export_dataset(snaps, "random", d["n_points"], derive_seed(cfg.seed, SEED_DATA)) \
        if d["n_points"] else refsolver.export_dataset(snaps)
    write_dataset_csv(ds, out / "dataset.csv")
    metrics.update({"n_snapshots": len(snaps), "n_records": len(ds),
                    "T_max": max(r["T_max"] for r in rows),
                    "warnings": [w for s in snaps for w in s.warnings]})


def _make_ir_mode(cfg, args, metrics, out):
    dom, phys, laser = cfg.domain(), cfg.phys(), cfg.laser()
    data, stack, dropped = _ir_data(cfg, dom, phys, laser, {})
    datasets.write_irstack(stack, out / "frames.irstack")
    write_dataset_csv(data, out / "ir_dataset.csv")
    rows = [{"time": f.time, "valid": int(f.mask.sum())} for f in stack.frames]
    trainer.write_history_csv(rows, out / "history.csv")
    n_pix = len(stack) * stack.shape[0] * stack.shape[1]
    metrics.update({"n_frames": len(stack), "n_valid": stack.n_valid(), "n_invalid": n_pix - stack.n_valid(),
                    "n_records": len(data), "n_dropped": dropped})


def _eval_mode(cfg, args, metrics, out):
    e = cfg["eval"]
    params, spec, state = network.load_checkpoint(cfg.resolve_path(e["checkpoint"]))
    meta = state.metadata.get("scaling") if state is not None else None
    if meta is None:
        if "domain" not in cfg.values:
            cfg.fail("eval", "checkpoint", "checkpoint has no scaling metadata; add [domain]/[physical]")
        dom, phys = cfg.domain(), cfg.phys()
        delta = cfg.values.get("training", {}).get("delta_T", scaling.DEFAULT_DELTA_T)
        sc = scaling.ScalingSpec(dom.lengths, dom.t_end, phys.T0, delta, spec.input_dim)
    else:
        sc = scaling.ScalingSpec(tuple(meta["lengths"]), meta["t_end"], meta["T0"], meta["delta_T"],
                                 meta["input_dim"])
    data = read_dataset_csv(cfg.resolve_path(e["dataset"]), ndim=sc.n_spatial)
    nmse, rmse = trainer.evaluate(params, data, sc)
    trainer.write_history_csv([{"n_points": len(data), "nmse": nmse, "rmse_K": rmse}], out / "history.csv")
    metrics.update({"nmse": nmse, "rmse_K": rmse, "n_points": len(data), "mu": params.mu_values()})


_DISPATCH = {
    "reference": _reference_mode,
    "make-ir": _make_ir_mode,
    "forward": _train_mode,
    "inverse": _train_mode,
    "hybrid": _train_mode,
    "eval": _eval_mode,
}


def run(mode, config_path, seed=None, workers=None, warm_start=None, out=None, epochs=None):
    """Run one workflow; returns the exit code."""
    args = argparse.Namespace(warm_start=warm_start)
    try:
        cfg = load_config(config_path)
        if cfg.mode != mode:
            raise ConfigError(f"config is for mode {cfg.mode!r}, not {mode!r}",
                              line=cfg.lines.get(("run", "mode")), path=cfg.path)
        if seed is not None:
            cfg.override("run", "seed", int(seed))
        if workers is not None:
            if workers < 1:
                raise ConfigError("--workers must be >= 1")
            cfg.override("run", "workers", int(workers))
        if epochs is not None:
            if "training" not in cfg.values:
                raise ConfigError(f"--epochs has no effect in {mode} mode")
            if epochs < 1:
                raise ConfigError("--epochs must be >= 1")
            cfg.override("training", "epochs", int(epochs))
        if warm_start is not None and mode not in ("forward", "inverse", "hybrid"):
            raise ConfigError(f"--warm-start has no effect in {mode} mode")
        out_dir = Path(out) if out else (cfg.resolve_path(cfg["run"]["out"]) if cfg["run"]["out"]
                                         else Path("runs") / mode)
        cfg.override("run", "out", str(out_dir.resolve()))
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    try:
        out_dir.mkdir(parents=True, exist_ok=True)
        (out_dir / "config.resolved.ini").write_text(cfg.dumps())
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    metrics = {"mode": mode, "seed": cfg.seed, "version": __version__, "status": "ok"}
    t0 = time.perf_counter()
    code = EXIT_OK
    try:
        _DISPATCH[mode](cfg, args, metrics, out_dir)
    except RunFailed as exc:
        print(f"aborted: {exc}", file=sys.stderr)
        code = exc.code
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        metrics.update(status="config_error", error=str(exc))
        code = EXIT_CONFIG
    except NumericalError as exc:
        print(f"numerical error: {exc}", file=sys.stderr)
        metrics.update(status="aborted", error=str(exc))
        code = EXIT_NUMERIC
    except (OSError, CheckpointError) as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        metrics.update(status="io_error", error=str(exc))
        code = EXIT_IO
    except (StructuralError, DomainError) as exc:
        # malformed inputs referenced by the config (datasets, frame files)
        print(f"input error: {exc}", file=sys.stderr)
        metrics.update(status="input_error", error=str(exc))
        code = EXIT_IO
    metrics["wall_time"] = time.perf_counter() - t0
    try:
        write_metrics(metrics, out_dir / "metrics.json")
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    return code


def info(path):
    try:
        params, spec, state = network.load_checkpoint(path)
    except (OSError, CheckpointError) as exc:
        print(f"cannot read checkpoint {path}: {exc}", file=sys.stderr)
        return EXIT_IO
    print(f"checkpoint: {path}")
    print(f"layers: {list(spec.layer_sizes)}")
    print(f"activations: {spec.hidden_activation} / {spec.output_activation}")
    print(f"init seed: {spec.seed}")
    print(f"parameters: {params.n_theta}")
    if params.mu:
        for name, val in params.mu_values().items():
            flag = "trainable" if params.mu[name].trainable else "fixed"
            print(f"mu {name}: {val:.6g} ({flag})")
    else:
        print("mu: none")
    if state is not None:
        print(f"epoch: {state.epoch}")
        print(f"adam step: {state.adam_step}")
        for key in sorted(state.metadata):
            print(f"{key}: {json.dumps(state.metadata[key], sort_keys=True)}")
    return EXIT_OK


def build_parser():
    p = argparse.ArgumentParser(prog="hybridpinn", description="Hybrid PINN thermal modelling for laser AM.")
    p.add_argument("--version", action="version", version=__version__)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="mode", required=True)
    for mode in MODES:
        sp = sub.add_parser(mode)
        sp.add_argument("config")
        sp.add_argument("--seed", type=int)
        sp.add_argument("--workers", type=int)
        sp.add_argument("--warm-start", dest="warm_start")
        sp.add_argument("--out")
        sp.add_argument("--epochs", type=int)
    ip = sub.add_parser("info")
    ip.add_argument("checkpoint")
    return p


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_CONFIG if exc.code else EXIT_OK
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.mode == "info":
        return info(args.checkpoint)
    try:
        return run(args.mode, args.config, args.seed, args.workers, args.warm_start, args.out, args.epochs)
    except HybridPinnError as exc:  # pragma: no cover - last resort
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
