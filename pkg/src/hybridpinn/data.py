"""Labelled temperature records and their CSV form.

The CSV has a ``x,y,z,t,T`` header and one record per line in SI units with
17 significant digits; unused spatial axes are written as 0.
"""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import StructuralError

__all__ = ["LabelledData", "write_dataset_csv", "read_dataset_csv"]

HEADER = "x,y,z,t,T"


@dataclass
class LabelledData:
    pts: np.ndarray  # (N, ndim)
    t: np.ndarray
    T: np.ndarray
    weight: np.ndarray | None = None

    def __post_init__(self):
        self.pts = np.asarray(self.pts, dtype=np.float64)
        if self.pts.ndim == 1:
            self.pts = self.pts[:, None]
        self.t = np.asarray(self.t, dtype=np.float64).reshape(-1)
        self.T = np.asarray(self.T, dtype=np.float64).reshape(-1)
        n = self.pts.shape[0]
        if self.t.size != n or self.T.size != n:
            raise StructuralError("labelled data arrays differ in length")
        if self.weight is None:
            self.weight = np.ones(n)
        else:
            self.weight = np.asarray(self.weight, dtype=np.float64).reshape(-1)

    def __len__(self):
        return self.t.size

    @property
    def ndim(self):
        return self.pts.shape[1]

    def subset(self, idx):
        return LabelledData(self.pts[idx], self.t[idx], self.T[idx], self.weight[idx])

    @classmethod
    def empty(cls, ndim):
        return cls(np.zeros((0, ndim)), np.zeros(0), np.zeros(0))

    @classmethod
    def concat(cls, parts):
        parts = [p for p in parts if len(p)]
        if not parts:
            raise StructuralError("nothing to concatenate")
        return cls(np.concatenate([p.pts for p in parts]), np.concatenate([p.t for p in parts]),
                   np.concatenate([p.T for p in parts]), np.concatenate([p.weight for p in parts]))


def write_dataset_csv(data, path):
    n = len(data)
    cols = np.zeros((n, 5))
    cols[:, :data.ndim] = data.pts
    cols[:, 3] = data.t
    cols[:, 4] = data.T
    with open(path, "w") as fh:
        fh.write(HEADER + "\n")
        for row in cols:
            fh.write(",".join(f"{v:.17g}" for v in row) + "\n")


def read_dataset_csv(path, ndim=3):
    lines = Path(path).read_text().splitlines()
    if not lines or lines[0].strip().replace(" ", "") != HEADER:
        raise StructuralError(f"{path}: expected header {HEADER!r}")
    rows = []
    for lineno, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        parts = line.split(",")
        if len(parts) != 5:
            raise StructuralError(f"{path}:{lineno}: expected 5 fields, got {len(parts)}")
        try:
            rows.append([float(p) for p in parts])
        except ValueError:
            raise StructuralError(f"{path}:{lineno}: non-numeric field") from None
    arr = np.array(rows, dtype=np.float64).reshape(-1, 5)
    return LabelledData(arr[:, :ndim], arr[:, 3], arr[:, 4])
