"""(z, x, y) observation container shared by simulation, fitting and empirics."""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

__all__ = ["Dataset"]


@dataclass(frozen=True, eq=False)
class Dataset:
    """Rows of (z, x, y), optionally tagged with a unit id.

    Arrays are converted to contiguous float64 and must be finite.
    """

    z: np.ndarray
    x: np.ndarray
    y: np.ndarray
    unit_id: np.ndarray | None = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        arrs = [np.ascontiguousarray(a, dtype=np.float64).ravel() for a in (self.z, self.x, self.y)]
        if not (len(arrs[0]) == len(arrs[1]) == len(arrs[2])):
            raise ValueError("z, x and y must have the same length")
        if len(arrs[0]) == 0:
            raise ValueError("no rows")
        for name, a in zip("zxy", arrs):
            if not np.all(np.isfinite(a)):
                raise ValueError(f"non-finite values in column {name}")
            a.setflags(write=False)
            object.__setattr__(self, name, a)
        if self.unit_id is not None:
            uid = np.asarray(self.unit_id)
            if len(uid) != len(arrs[0]):
                raise ValueError("unit_id length mismatch")
            object.__setattr__(self, "unit_id", uid)

    def __len__(self) -> int:
        return len(self.z)

    def levels(self) -> np.ndarray:
        return np.unique(self.z)

    def take(self, idx) -> "Dataset":
        uid = None if self.unit_id is None else self.unit_id[idx]
        return Dataset(self.z[idx], self.x[idx], self.y[idx], uid, dict(self.meta))

    def with_x(self, x) -> "Dataset":
        return Dataset(self.z, x, self.y, self.unit_id, dict(self.meta))

    def digest(self) -> str:
        h = hashlib.sha256()
        for a in (self.z, self.x, self.y):
            h.update(a.tobytes())
        return h.hexdigest()

    def to_csv(self, path: str | Path) -> None:
        """Write ``z,x,y`` (plus ``unit_id`` first, when present) with round-trip precision."""
        with open(path, "w", newline="") as fh:
            if self.unit_id is None:
                fh.write("z,x,y\n")
                for z, x, y in zip(self.z.tolist(), self.x.tolist(), self.y.tolist()):
                    fh.write(f"{z!r},{x!r},{y!r}\n")
            else:
                fh.write("unit_id,z,x,y\n")
                for u, z, x, y in zip(self.unit_id.tolist(), self.z.tolist(), self.x.tolist(), self.y.tolist()):
                    fh.write(f"{u},{z!r},{x!r},{y!r}\n")
