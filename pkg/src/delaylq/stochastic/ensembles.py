"""Path ensembles: per-path, per-node samples of a vector process."""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np

from ..model import Grid, ModelError

__all__ = ["PathEnsemble"]

_MAGIC = b"DLQE"
_VERSION = 1


@dataclass
class PathEnsemble:
    """Samples of a vector process driven by one shared Brownian bundle.

    ``values`` has shape (paths, n_nodes, dim).  ``adapted`` certifies that
    the producing recursion consumed only increments with interval index
    below the node index (regression coefficients, which average the whole
    cross-section, are the one deliberate exception of the method).
    """

    grid: Grid
    values: np.ndarray
    adapted: bool = True
    name: str = ""
    seed: int = -1
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.values.ndim != 3 or self.values.shape[1] != self.grid.n_nodes:
            raise ModelError(f"ensemble values have shape {self.values.shape}")

    @property
    def paths(self) -> int:
        return self.values.shape[0]

    @property
    def dim(self) -> int:
        return self.values.shape[2]

    def mean(self) -> np.ndarray:
        return self.values.mean(axis=0)

    def se(self) -> np.ndarray:
        return self.values.std(axis=0, ddof=1) / np.sqrt(self.paths) if self.paths > 1 else np.zeros(self.values.shape[1:])

    def node(self, k: int) -> np.ndarray:
        return self.values[:, k]

    def check_finite(self):
        if not np.all(np.isfinite(self.values)):
            raise ModelError(f"ensemble {self.name!r} contains non-finite samples")

    def to_csv(self, path):
        dim = self.dim
        header = "path,node,t," + ",".join(f"x_{i+1}" for i in range(dim))
        with open(path, "w") as fh:
            fh.write(header + "\n")
            for p in range(self.paths):
                for k in range(self.grid.n_nodes):
                    row = [str(p), str(k), f"{self.grid.times[k]:.17g}"]
                    row += [f"{v:.17g}" for v in self.values[p, k]]
                    fh.write(",".join(row) + "\n")

    def to_binary(self, path):
        g = self.grid
        with open(path, "wb") as fh:
            fh.write(_MAGIC)
            fh.write(struct.pack("<IqqqQ", _VERSION, self.paths, g.n_nodes, self.dim, self.seed & 0xFFFFFFFFFFFFFFFF))
            fh.write(struct.pack("<ddddq", g.s, g.T, g.delta, g.h, g.m))
            fh.write(np.ascontiguousarray(self.values, dtype="<f8").tobytes())

    @classmethod
    def read_binary(cls, path, grid: Grid) -> "PathEnsemble":
        with open(path, "rb") as fh:
            if fh.read(4) != _MAGIC:
                raise ModelError("not an ensemble dump")
            version, paths, n_nodes, dim, seed = struct.unpack("<IqqqQ", fh.read(36))
            if version != _VERSION:
                raise ModelError(f"unsupported dump version {version}")
            s, T, delta, h, m = struct.unpack("<ddddq", fh.read(40))
            if n_nodes != grid.n_nodes or abs(h - grid.h) > 1e-12:
                raise ModelError("dump grid does not match")
            data = np.frombuffer(fh.read(), dtype="<f8").reshape(paths, n_nodes, dim).copy()
        return cls(grid, data, seed=int(np.int64(seed)))
