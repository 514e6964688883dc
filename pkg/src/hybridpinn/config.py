"""INI run configuration: parsing, validation, resolution and echo.

Every key is listed in :data:`SCHEMA` with its type and default. Unknown
sections or keys, bad values and missing required keys raise
:class:`~hybridpinn.errors.ConfigError` pointing at the offending line.
"""
from __future__ import annotations

import configparser
import re
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import datasets, network, physics, refsolver, sampling, scaling
from .errors import ConfigError, DomainError, StructuralError
from .loss import LossWeights
from .trainer import TrainConfig

__all__ = ["RunConfig", "load_config", "parse_config", "MODES", "SCHEMA", "derive_seed"]

MODES = ("reference", "forward", "inverse", "hybrid", "make-ir", "eval")
REQUIRED = object()


def _floats(s):
    return tuple(float(v) for v in s.replace(";", ",").split(",") if v.strip())


def _ints(s):
    return tuple(int(v) for v in s.replace(";", ",").split(",") if v.strip())


def _bool(s):
    v = s.strip().lower()
    if v in ("1", "true", "yes", "on"):
        return True
    if v in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {s!r}")


def _opt_float(s):
    return None if s.strip().lower() in ("", "none", "auto") else float(s)


def _names(s):
    return tuple(v.strip() for v in s.split(",") if v.strip())


def _str(s):
    return s.strip()


# section -> key -> (parser, default)
SCHEMA = {
    "run": {
        "mode": (_str, REQUIRED),
        "seed": (int, 0),
        "out": (_str, ""),
        "workers": (int, 1),
    },
    "domain": {
        "mode": (_str, REQUIRED),
        "lengths": (_floats, REQUIRED),
        "t_end": (float, REQUIRED),
        "thickness": (float, 0.0),
        "k_sub": (float, 0.0),
        "H_sub": (float, 0.0),
        "base_bc": (_str, "dirichlet"),
        "area": (float, 1e-6),
    },
    "physical": {
        "rho": (float, REQUIRED),
        "cp": (float, REQUIRED),
        "cp_slope": (float, 0.0),
        "k": (float, REQUIRED),
        "k_slope": (float, 0.0),
        "h": (float, REQUIRED),
        "emissivity": (float, REQUIRED),
        "absorptivity": (float, REQUIRED),
        "T0": (float, 298.0),
    },
    "laser": {
        "power": (float, 0.0),
        "beam_radius": (float, 1.5e-3),
        "start": (_floats, ()),
        "end": (_floats, ()),
        "speed": (float, 0.0),
        "passes": (int, 1),
        "dwell": (float, 0.0),
    },
    "grid": {
        "spacing": (_floats, ()),
        "dt": (float, 5e-3),
        "integrator": (_str, "cn"),
        "output_interval": (float, 0.1),
    },
    "sampling": {
        "dt": (float, 0.05),
        "coarse_spacing": (float, 1e-3),
        "fine_spacing": (float, 0.25e-3),
        "fine_window": (float, 6e-3),
        "fine_boundary": (_bool, True),
        "boundary_at_t0": (_bool, True),
        "top_spacing": (float, 0.5e-3),
        "top_depth": (float, 1e-3),
        "lower_factor": (float, 4.0),
        "interior_mode": (_str, "grid"),
        "random_per_slice": (int, 0),
    },
    "network": {
        "hidden_layers": (_ints, (64, 64, 64)),
        "input_dim": (int, 0),
    },
    "training": {
        "epochs": (int, 50000),
        "learning_rate": (float, 2e-4),
        "mu_learning_rate": (_opt_float, None),
        "eval_every": (int, 100),
        "divergence_threshold": (float, 1e6),
        "divergence_patience": (int, 100),
        "w_b": (float, 1.0),
        "w_i": (float, 1.0),
        "w_r": (float, 1.0),
        "w_d": (float, 1.0),
        "delta_T": (float, scaling.DEFAULT_DELTA_T),
        "flux_scale": (_opt_float, None),
        "residual_scale": (_opt_float, None),
        "top_edge": (_str, "flux"),
    },
    "inverse": {
        "trainable": (_names, ()),
        "init": (_floats, ()),
    },
    "data": {
        "source": (_str, "none"),
        "n_points": (int, 0),
        "noise_sigma": (float, 0.0),
        "band": (float, 0.0),
    },
    "validation": {
        "source": (_str, "none"),
        "stride": (int, 1),
    },
    "ir": {
        "source": (_str, "synthetic"),
        "window": (float, 6e-3),
        "pitch": (float, 0.25e-3),
        "frame_rate": (float, 10.0),
        "threshold": (float, 2000.0),
        "sigma": (float, 100.0),
        "crop": (_ints, ()),
        "factor": (int, 1),
        "offset": (_floats, (0.0, 0.0)),
        "flip_rows": (_bool, False),
    },
    "eval": {
        "checkpoint": (_str, ""),
        "dataset": (_str, ""),
    },
}

_SECTIONS_FOR = {
    "reference": {"run", "domain", "physical", "laser", "grid", "data"},
    "make-ir": {"run", "domain", "physical", "laser", "grid", "ir"},
    "forward": {"run", "domain", "physical", "laser", "sampling", "network", "training"},
    "inverse": {"run", "domain", "physical", "laser", "sampling", "network", "training", "inverse", "ir"},
    "hybrid": {"run", "domain", "physical", "laser", "sampling", "network", "training", "data"},
    "eval": {"run", "eval"},
}


def derive_seed(seed, tag):
    """Independent child seed for one consumer (network init, noise, subsampling...)."""
    return int(np.random.SeedSequence([int(seed), int(tag)]).generate_state(1)[0])


SEED_NETWORK, SEED_DATA, SEED_NOISE, SEED_IR, SEED_VALIDATION = range(1, 6)


@dataclass
class RunConfig:
    """Validated configuration; ``values`` holds every key after defaults."""

    values: dict
    path: Path | None = None
    lines: dict = field(default_factory=dict)

    def __getitem__(self, section):
        return self.values[section]

    @property
    def mode(self):
        return self.values["run"]["mode"]

    @property
    def seed(self):
        return self.values["run"]["seed"]

    @property
    def base_dir(self):
        return self.path.parent if self.path is not None else Path.cwd()

    def resolve_path(self, p):
        p = Path(p)
        return p if p.is_absolute() else (self.base_dir / p)

    def fail(self, section, key, message):
        line = self.lines.get((section, key))
        raise ConfigError(f"[{section}] {key}: {message}", line=line, path=self.path)

    def override(self, section, key, value):
        self.values.setdefault(section, {})[key] = value

    # ---- builders ------------------------------------------------------

    def domain(self):
        d = self["domain"]
        try:
            return physics.DomainSpec(d["mode"], d["lengths"], d["t_end"], d["thickness"], d["k_sub"],
                                      d["H_sub"], d["base_bc"], d["area"])
        except (StructuralError, DomainError) as exc:
            self.fail("domain", "mode", str(exc))

    def phys(self):
        p = self["physical"]
        try:
            pp = physics.PhysicalParams(
                p["rho"], physics.PropertyModel(p["cp"], p["cp_slope"]),
                physics.PropertyModel(p["k"], p["k_slope"]), p["h"], p["emissivity"],
                p["absorptivity"], p["T0"])
            return pp.validate()
        except DomainError as exc:
            word = re.match(r"\w+", str(exc)).group(0)
            key = word if word in p else "rho"
            self.fail("physical", key, str(exc))

    def laser(self):
        lz = self.values.get("laser", {})
        if not lz or lz["power"] == 0.0 and not lz["start"]:
            return physics.LaserSpec(0.0, lz.get("beam_radius", 1.5e-3) or 1.5e-3)
        try:
            if not lz["start"]:
                return physics.LaserSpec(lz["power"], lz["beam_radius"])
            if len(lz["start"]) != len(lz["end"]):
                self.fail("laser", "end", "start and end need the same number of coordinates")
            if not lz["speed"] > 0:
                self.fail("laser", "speed", "must be > 0 when a path is given")
            return physics.LaserSpec.bidirectional(lz["power"], lz["beam_radius"], lz["start"],
                                                   lz["end"], lz["speed"], lz["passes"], lz["dwell"])
        except DomainError as exc:
            self.fail("laser", "power", str(exc))

    def grid(self):
        g = self["grid"]
        dom = self.domain()
        spacing = g["spacing"]
        if len(spacing) == 1:
            spacing = spacing * dom.ndim
        if len(spacing) != dom.ndim:
            self.fail("grid", "spacing", f"need 1 or {dom.ndim} values")
        try:
            return refsolver.GridSpec(spacing, g["dt"], g["integrator"], g["output_interval"])
        except (StructuralError, DomainError) as exc:
            self.fail("grid", "spacing", str(exc))

    def sampling(self):
        s = self["sampling"]
        return sampling.SamplingConfig(seed=derive_seed(self.seed, SEED_DATA), **s)

    def network_spec(self, n_spatial):
        n = self["network"]
        dim = n["input_dim"] or n_spatial + 1
        try:
            return network.NetworkSpec(dim, n["hidden_layers"], seed=derive_seed(self.seed, SEED_NETWORK))
        except StructuralError as exc:
            self.fail("network", "hidden_layers", str(exc))

    def scaling(self, domain, phys, input_dim):
        t = self["training"]
        return scaling.ScalingSpec(domain.lengths, domain.t_end, phys.T0, t["delta_T"], input_dim)

    def train_config(self):
        t = self["training"]
        try:
            return TrainConfig(t["epochs"], t["learning_rate"], t["mu_learning_rate"],
                               eval_every=t["eval_every"], divergence_threshold=t["divergence_threshold"],
                               divergence_patience=t["divergence_patience"])
        except DomainError as exc:
            self.fail("training", "epochs", str(exc))

    def weights(self):
        t = self["training"]
        try:
            return LossWeights(t["w_b"], t["w_i"], t["w_r"], t["w_d"])
        except DomainError as exc:
            self.fail("training", "w_b", str(exc))

    def mu_init(self):
        inv = self.values.get("inverse", {})
        names, init = inv.get("trainable", ()), inv.get("init", ())
        if len(names) != len(init):
            self.fail("inverse", "init", f"{len(names)} trainable names but {len(init)} initial values")
        out = {}
        for name, v in zip(names, init):
            if name not in network.MU_SCALES:
                self.fail("inverse", "trainable", f"unknown parameter {name!r}; choose from {sorted(network.MU_SCALES)}")
            if not v > 0:
                self.fail("inverse", "init", f"initial {name} must be > 0")
            out[name] = network.MuParam(network.mu_raw_for(name, v), True)
        return out

    def ir_spec(self):
        i = self["ir"]
        try:
            return datasets.IRWindowSpec(i["window"], i["pitch"], i["frame_rate"], i["threshold"],
                                         i["sigma"], derive_seed(self.seed, SEED_IR),
                                         self["physical"]["T0"])
        except DomainError as exc:
            self.fail("ir", "pitch", str(exc))

    # ---- echo ----------------------------------------------------------

    def dumps(self):
        """Resolved config text; paths are made absolute so the copy re-runs anywhere."""
        out = []
        for section, keys in SCHEMA.items():
            if section not in self.values:
                continue
            out.append(f"[{section}]")
            for key in keys:
                v = self.values[section][key]
                if key in _PATH_KEYS.get(section, ()) and _looks_like_path(v):
                    v = str(self.resolve_path(v).resolve())
                out.append(f"{key} = {_fmt(v)}")
            out.append("")
        return "\n".join(out)


_PATH_KEYS = {"data": ("source",), "validation": ("source",), "ir": ("source",),
              "eval": ("checkpoint", "dataset"), "run": ("out",)}


def _looks_like_path(v):
    return isinstance(v, str) and v not in ("", "none", "synthetic", "reference")


def _fmt(v):
    if v is None:
        return "none"
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return repr(v)
    if isinstance(v, tuple):
        return ", ".join(_fmt(x) for x in v)
    return str(v)


_HEADER = re.compile(r"^\s*\[([^\]]+)\]")
_KEY = re.compile(r"^\s*([^=:#;\s][^=:]*?)\s*[=:]")


def _line_index(text):
    lines = {}
    section = None
    for lineno, line in enumerate(text.splitlines(), start=1):
        m = _HEADER.match(line)
        if m:
            section = m.group(1).strip()
            lines.setdefault((section, None), lineno)
            continue
        m = _KEY.match(line)
        if m and section is not None and not line.lstrip().startswith(("#", ";")):
            lines.setdefault((section, m.group(1).strip()), lineno)
    return lines


def parse_config(text, path=None):
    lines = _line_index(text)
    cp = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#", ";"))
    cp.optionxform = str
    try:
        cp.read_string(text, source=str(path) if path else "<config>")
    except configparser.Error as exc:
        line = getattr(exc, "lineno", None)
        msg = exc.message if hasattr(exc, "message") else str(exc)
        raise ConfigError(msg.splitlines()[0], line=line, path=path) from None
    values = {}
    for section in cp.sections():
        if section not in SCHEMA:
            raise ConfigError(f"unknown section [{section}]", line=lines.get((section, None)), path=path)
        values[section] = {}
        for key, raw in cp.items(section):
            if key not in SCHEMA[section]:
                raise ConfigError(f"[{section}] unknown key {key!r}", line=lines.get((section, key)), path=path)
            parser, _ = SCHEMA[section][key]
            try:
                values[section][key] = parser(raw)
            except ValueError as exc:
                raise ConfigError(f"[{section}] {key}: bad value {raw!r} ({exc})",
                                  line=lines.get((section, key)), path=path) from None
    if "run" not in values or "mode" not in values["run"]:
        raise ConfigError("missing [run] mode", line=lines.get(("run", None)), path=path)
    mode = values["run"]["mode"]
    if mode not in MODES:
        raise ConfigError(f"unknown mode {mode!r}; choose from {', '.join(MODES)}",
                          line=lines.get(("run", "mode")), path=path)
    needed = _SECTIONS_FOR[mode]
    for section in sorted(needed):
        given = values.setdefault(section, {})
        for key, (_, default) in SCHEMA[section].items():
            if key in given:
                continue
            if default is REQUIRED:
                raise ConfigError(f"[{section}] missing required key {key!r}",
                                  line=lines.get((section, None)), path=path)
            given[key] = default
    # optional sections used by several modes get their defaults too
    for section in ("data", "validation", "ir", "inverse", "grid"):
        if section in values:
            for key, (_, default) in SCHEMA[section].items():
                if default is not REQUIRED:
                    values[section].setdefault(key, default)
    cfg = RunConfig(values, Path(path) if path else None, lines)
    _validate(cfg)
    return cfg


def load_config(path):
    p = Path(path)
    try:
        text = p.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config: {exc.strerror}", path=p) from None
    return parse_config(text, p)


def _validate(cfg):
    v = cfg.values
    if v["run"]["workers"] < 1:
        cfg.fail("run", "workers", "must be >= 1")
    if cfg.mode == "eval" and "domain" not in v:
        dom = None
    else:
        if "domain" not in v or "physical" not in v:
            raise ConfigError("missing [domain] or [physical] section", path=cfg.path)
        dom = cfg.domain()
        cfg.phys()
    lz = v.get("laser")
    if lz and dom is not None:
        if lz["power"] < 0:
            cfg.fail("laser", "power", "must be >= 0")
        if not lz["beam_radius"] > 0:
            cfg.fail("laser", "beam_radius", "must be > 0")
        for key in ("start", "end"):
            if lz[key] and len(lz[key]) != max(dom.ndim - 1, 1):
                cfg.fail("laser", key, f"need {max(dom.ndim - 1, 1)} coordinates for a {dom.mode} domain")
        cfg.laser()
    if dom is not None and ("grid" in v and cfg.mode in ("reference", "make-ir") or v.get("grid", {}).get("spacing")):
        if not v["grid"]["spacing"]:
            cfg.fail("grid", "spacing", "required")
        cfg.grid()
    if "training" in v:
        t = v["training"]
        if t["top_edge"] not in ("flux", "data"):
            cfg.fail("training", "top_edge", "must be 'flux' or 'data'")
        if not t["delta_T"] > 0:
            cfg.fail("training", "delta_T", "must be > 0")
        if t["epochs"] < 1:
            cfg.fail("training", "epochs", "must be >= 1")
        cfg.train_config()
        cfg.weights()
    if "network" in v and dom is not None:
        cfg.network_spec(dom.ndim + 1)
    if cfg.mode == "inverse":
        if not v["inverse"]["trainable"]:
            cfg.fail("inverse", "trainable", "inverse mode needs at least one trainable parameter")
        cfg.mu_init()
    if "ir" in v:
        cfg.ir_spec()
    if "sampling" in v and v["sampling"]["interior_mode"] not in ("grid", "random"):
        cfg.fail("sampling", "interior_mode", "must be 'grid' or 'random'")
    if cfg.mode == "hybrid" and dom.mode != "wall":
        cfg.fail("domain", "mode", "hybrid mode needs a wall domain")
    if cfg.mode == "eval":
        for key in ("checkpoint", "dataset"):
            if not v["eval"][key]:
                cfg.fail("eval", key, "required in eval mode")
