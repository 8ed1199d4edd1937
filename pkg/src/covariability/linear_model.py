"""
Random-coefficient bivariate Gaussian model.

For a unit observed at confounder level ``z``::

    x = mu_x + (b_x + e_bx) * z + e_x
    y = mu_y + (b_y + e_by) * z + e_y

with ``(e_bx, e_x, e_by, e_y) ~ N(0, Sigma)``. The two cross terms
cov(e_bx, e_y) and cov(e_by, e_x) only enter through their sum and are
tied to a single value ``cov_bxey``. Given ``z`` the pair (x, y) is Gaussian
with

    var(x | z)   = var_bx z^2 + 2 cov_bxex z + var_ex
    var(y | z)   = var_by z^2 + 2 cov_byey z + var_ey
    cov(x, y | z) = cov_bxby z^2 + 2 cov_bxey z + cov_exey

The *reduced* model fixes ``cov_bxby = 0`` (no covariability of the slopes),
so the conditional covariance becomes linear in ``z``.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, replace
from pathlib import Path

import numpy as np
import yaml

from .dataset import Dataset
from .streams import BLOCK_SIZE, block_ranges, map_ordered, stream

__all__ = [
    "CovarianceParams",
    "LinearModelParams",
    "ConditionalMoments",
    "NotPositiveDefiniteError",
    "conditional_moments",
    "simulate",
    "TABLE3_FULL",
    "TABLE3_REDUCED",
    "PARAM_NAMES",
]

COV_NAMES = (
    "var_bx",
    "var_by",
    "var_ex",
    "var_ey",
    "cov_bxby",
    "cov_exey",
    "cov_bxex",
    "cov_byey",
    "cov_bxey",
)
PARAM_NAMES = ("mu_x", "mu_y", "b_x", "b_y") + COV_NAMES


class NotPositiveDefiniteError(ValueError):
    """A conditional 2x2 (or the 4x4 coefficient) covariance is not positive (semi)definite."""

    def __init__(self, message: str, z=None, eigenvalues=None):
        super().__init__(message)
        self.z = z
        self.eigenvalues = eigenvalues


@dataclass(frozen=True)
class CovarianceParams:
    var_bx: float
    var_by: float
    var_ex: float
    var_ey: float
    cov_bxby: float
    cov_exey: float
    cov_bxex: float
    cov_byey: float
    cov_bxey: float
    reduced: bool = False

    def __post_init__(self):
        for name in COV_NAMES:
            v = float(getattr(self, name))
            if not np.isfinite(v):
                raise ValueError(f"{name} is not finite")
            object.__setattr__(self, name, v)
        for name in ("var_bx", "var_by", "var_ex", "var_ey"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be non-negative, got {getattr(self, name)}")
        if self.reduced and self.cov_bxby != 0.0:
            raise ValueError("the reduced model requires cov_bxby == 0")

    def sigma(self) -> np.ndarray:
        """4x4 covariance of (e_bx, e_x, e_by, e_y) with the cross-term tie applied."""
        return np.array(
            [
                [self.var_bx, self.cov_bxex, self.cov_bxby, self.cov_bxey],
                [self.cov_bxex, self.var_ex, self.cov_bxey, self.cov_exey],
                [self.cov_bxby, self.cov_bxey, self.var_by, self.cov_byey],
                [self.cov_bxey, self.cov_exey, self.cov_byey, self.var_ey],
            ]
        )


@dataclass(frozen=True)
class LinearModelParams:
    mu_x: float
    mu_y: float
    b_x: float
    b_y: float
    cov: CovarianceParams

    def __post_init__(self):
        for name in ("mu_x", "mu_y", "b_x", "b_y"):
            v = float(getattr(self, name))
            if not np.isfinite(v):
                raise ValueError(f"{name} is not finite")
            object.__setattr__(self, name, v)

    @property
    def reduced(self) -> bool:
        return self.cov.reduced

    def as_dict(self) -> dict[str, float]:
        out = {k: getattr(self, k) for k in ("mu_x", "mu_y", "b_x", "b_y")}
        out.update({k: getattr(self.cov, k) for k in COV_NAMES})
        return out

    def as_vector(self) -> np.ndarray:
        return np.array([self.as_dict()[k] for k in PARAM_NAMES])

    @classmethod
    def from_dict(cls, d: dict, reduced: bool | None = None) -> "LinearModelParams":
        missing = [k for k in PARAM_NAMES if k not in d and not (k == "cov_bxby" and (reduced or d.get("reduced")))]
        if missing:
            raise ValueError(f"missing parameters: {missing}")
        unknown = set(d) - set(PARAM_NAMES) - {"reduced"}
        if unknown:
            raise ValueError(f"unknown parameters: {sorted(unknown)}")
        red = bool(d.get("reduced", False)) if reduced is None else reduced
        cov = CovarianceParams(**{k: d.get(k, 0.0) for k in COV_NAMES}, reduced=red)
        return cls(d["mu_x"], d["mu_y"], d["b_x"], d["b_y"], cov)

    @classmethod
    def from_vector(cls, v, reduced: bool = False) -> "LinearModelParams":
        return cls.from_dict(dict(zip(PARAM_NAMES, map(float, v))), reduced=reduced)

    def to_reduced(self) -> "LinearModelParams":
        """Same parameters with the slope covariance removed."""
        return replace(self, cov=replace(self.cov, cov_bxby=0.0, reduced=True))

    def swapped(self) -> "LinearModelParams":
        """Parameters with the roles of x and y exchanged."""
        c = self.cov
        cov = CovarianceParams(
            c.var_by, c.var_bx, c.var_ey, c.var_ex, c.cov_bxby, c.cov_exey, c.cov_byey, c.cov_bxex, c.cov_bxey, c.reduced
        )
        return LinearModelParams(self.mu_y, self.mu_x, self.b_y, self.b_x, cov)

    # files

    def to_yaml(self) -> str:
        d = {k: float(v) for k, v in self.as_dict().items()}
        d["reduced"] = self.reduced
        return yaml.safe_dump(d, sort_keys=False)

    def write(self, path: str | Path) -> None:
        Path(path).write_text(self.to_yaml())

    @classmethod
    def read(cls, path: str | Path) -> "LinearModelParams":
        d = yaml.safe_load(Path(path).read_text())
        if not isinstance(d, dict):
            raise ValueError(f"{path}: expected a mapping of parameter names to values")
        return cls.from_dict(d)


@dataclass(frozen=True)
class ConditionalMoments:
    z: np.ndarray | float
    mean_x: np.ndarray | float
    mean_y: np.ndarray | float
    var_x: np.ndarray | float
    var_y: np.ndarray | float
    cov_xy: np.ndarray | float

    def as_dict(self) -> dict:
        return asdict(self)


def _moment_arrays(p: LinearModelParams, z: np.ndarray):
    c = p.cov
    mean_x = p.mu_x + p.b_x * z
    mean_y = p.mu_y + p.b_y * z
    var_x = c.var_bx * z * z + 2.0 * c.cov_bxex * z + c.var_ex
    var_y = c.var_by * z * z + 2.0 * c.cov_byey * z + c.var_ey
    cov_xy = c.cov_bxby * z * z + 2.0 * c.cov_bxey * z + c.cov_exey
    return mean_x, mean_y, var_x, var_y, cov_xy


def conditional_moments(p: LinearModelParams, z, check: bool = True) -> ConditionalMoments:
    """Mean, variances and covariance of (x, y) given ``z`` (scalar or array).

    Raises
    ------
    NotPositiveDefiniteError
        If ``check`` and the 2x2 conditional covariance is not positive
        definite at some ``z``; the error carries that ``z`` and the eigenvalues.
    """
    scalar = np.ndim(z) == 0
    zz = np.atleast_1d(np.asarray(z, dtype=float))
    if not np.all(np.isfinite(zz)):
        raise ValueError("z must be finite")
    mx, my, vx, vy, cxy = _moment_arrays(p, zz)
    if check:
        bad = ~((vx > 0) & (vy > 0) & (vx * vy - cxy * cxy > 0))
        if bad.any():
            i = int(np.argmax(bad))
            eig = np.linalg.eigvalsh(np.array([[vx[i], cxy[i]], [cxy[i], vy[i]]]))
            raise NotPositiveDefiniteError(
                f"conditional covariance not positive definite at z={zz[i]:g} (eigenvalues {eig})",
                z=float(zz[i]),
                eigenvalues=eig,
            )
    if scalar:
        return ConditionalMoments(float(zz[0]), float(mx[0]), float(my[0]), float(vx[0]), float(vy[0]), float(cxy[0]))
    return ConditionalMoments(zz, mx, my, vx, vy, cxy)


def _sigma_factor(sigma: np.ndarray) -> np.ndarray:
    w, v = np.linalg.eigh(sigma)
    tol = 1e-12 * max(1.0, float(np.abs(w).max()))
    if w.min() < -tol:
        raise NotPositiveDefiniteError(
            f"coefficient covariance is not positive semi-definite (smallest eigenvalue {w.min():.6g})",
            eigenvalues=w,
        )
    try:
        return np.linalg.cholesky(sigma)
    except np.linalg.LinAlgError:
        return v * np.sqrt(np.clip(w, 0.0, None))


def simulate(
    p: LinearModelParams,
    z_values,
    seed: int,
    threads: int = 1,
    block_size: int = BLOCK_SIZE,
) -> Dataset:
    """One unit per entry of ``z_values``; returns the observed (z, x, y).

    Each block of ``block_size`` units draws from its own seeded stream, so
    the output depends only on ``seed`` and not on ``threads``.

    Raises
    ------
    NotPositiveDefiniteError
        If the 4x4 coefficient covariance is not positive semi-definite.
    """
    z = np.asarray(z_values, dtype=float).ravel()
    if len(z) == 0:
        raise ValueError("no z values to simulate")
    L = _sigma_factor(p.cov.sigma())

    def block(k: int, start: int, stop: int):
        e = stream(seed, k).standard_normal((stop - start, 4)) @ L.T
        zb = z[start:stop]
        x = p.mu_x + (p.b_x + e[:, 0]) * zb + e[:, 1]
        y = p.mu_y + (p.b_y + e[:, 2]) * zb + e[:, 3]
        return x, y

    parts = map_ordered(block, block_ranges(len(z), block_size), threads)
    x = np.concatenate([a for a, _ in parts])
    y = np.concatenate([b for _, b in parts])
    return Dataset(z, x, y, meta={"seed": seed, "source": "simulate"})


def uniform_levels(levels, n: int, seed: int) -> np.ndarray:
    """``n`` draws uniformly from ``levels`` (seeded, independent of the simulation stream)."""
    levels = np.asarray(levels, dtype=float)
    return levels[stream(seed, 2**31 - 1).integers(0, len(levels), size=n)]


def balanced_levels(levels, n: int) -> np.ndarray:
    """``n`` values cycling through ``levels`` so every level gets n/len(levels) rows (+-1)."""
    levels = np.asarray(levels, dtype=float)
    return levels[np.arange(n) % len(levels)]


# Reported maximum-likelihood estimates; z is body weight in kg, not centred.
TABLE3_FULL = LinearModelParams(
    mu_x=67.7,
    mu_y=310.9,
    b_x=7.4,
    b_y=4.6,
    cov=CovarianceParams(
        var_bx=2.24,
        var_by=1.01,
        var_ex=114.4,
        var_ey=2401.0,
        cov_bxby=0.63,
        cov_exey=-523.0,
        cov_bxex=0.25,
        cov_byey=0.81,
        cov_bxey=-0.23,
    ),
)

# Not positive semi-definite as a 4x4 (smallest eigenvalue about -0.002); fine for
# conditional moments, rejected by simulate().
TABLE3_REDUCED = LinearModelParams(
    mu_x=65.0,
    mu_y=308.6,
    b_x=7.5,
    b_y=4.6,
    cov=CovarianceParams(
        var_bx=2.75,
        var_by=1.03,
        var_ex=3213.0,
        var_ey=2575.0,
        cov_bxby=0.0,
        cov_exey=-2317.0,
        cov_bxex=-39.77,
        cov_byey=-1.05,
        cov_bxey=34.5,
        reduced=True,
    ),
)

WEIGHT_LEVELS = tuple(range(64, 76))
