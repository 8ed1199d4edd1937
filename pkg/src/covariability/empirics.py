"""
Data ingestion, case selection and empirical conditional-moment curves.

Curves are computed per level of ``z`` (or per fixed-width bin). Means get
normal-approximation intervals; variances and the covariance get percentile
bootstrap intervals computed within each bin.
"""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from .dataset import Dataset
from .linear_model import LinearModelParams, conditional_moments
from .streams import map_ordered, stream

__all__ = [
    "Dataset",
    "IngestError",
    "ingest",
    "MomentCurve",
    "moment_curve",
    "overlay",
    "PANELS",
    "write_panels",
]

log = logging.getLogger(__name__)

PANELS = ("mean_x", "mean_y", "var_x", "var_y", "cov_xy")


class IngestError(ValueError):
    pass


def ingest(
    path: str | Path,
    schema: Mapping[str, str] | None = None,
    filters: Iterable[tuple[str, float, float]] = (),
) -> Dataset:
    """Read a CSV file with a header into a :class:`Dataset`.

    Parameters
    ----------
    schema : mapping
        Maps ``"z"``, ``"x"``, ``"y"`` (and optionally ``"unit_id"``) to column
        names. Defaults to columns named ``z``, ``x``, ``y``.
    filters : iterable of (column, lo, hi)
        Keep rows with ``lo <= column <= hi``. Any column of the file may be
        used, not only those in the schema.

    The kept/dropped counts are logged and stored in ``Dataset.meta``.
    """
    schema = dict(schema or {"z": "z", "x": "x", "y": "y"})
    for role in ("z", "x", "y"):
        if role not in schema:
            raise IngestError(f"schema has no column for {role!r}")
    filters = [(str(c), float(lo), float(hi)) for c, lo, hi in filters]

    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise IngestError(f"{path}: no rows") from None
        index = {h: i for i, h in enumerate(header)}
        wanted = list(schema.values()) + [c for c, _, _ in filters]
        for col in wanted:
            if col not in index:
                raise IngestError(f"{path}: unknown column {col!r} (header: {header})")
        numeric = {col: index[col] for col in set(wanted) if col != schema.get("unit_id")}
        cols: dict[str, list[float]] = {col: [] for col in numeric}
        uid: list[str] = []
        kept = dropped = 0
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != len(header):
                raise IngestError(f"{path}: line {lineno}: expected {len(header)} fields, got {len(row)}")
            try:
                vals = {col: float(row[i]) for col, i in numeric.items()}
            except ValueError as exc:
                raise IngestError(f"{path}: line {lineno}: {exc}") from None
            if any(not math.isfinite(v) for v in vals.values()):
                raise IngestError(f"{path}: line {lineno}: non-finite value")
            if all(lo <= vals[c] <= hi for c, lo, hi in filters):
                for col, v in vals.items():
                    cols[col].append(v)
                if "unit_id" in schema:
                    uid.append(row[index[schema["unit_id"]]])
                kept += 1
            else:
                dropped += 1
    if kept == 0:
        raise IngestError(f"{path}: no rows" + (" after filtering" if dropped else ""))
    log.info("%s: kept %d rows, dropped %d", path, kept, dropped)
    return Dataset(
        np.array(cols[schema["z"]]),
        np.array(cols[schema["x"]]),
        np.array(cols[schema["y"]]),
        np.array(uid) if "unit_id" in schema else None,
        meta={"source": str(path), "kept": kept, "dropped": dropped},
    )


@dataclass(frozen=True)
class MomentCurve:
    """Per-bin sample moments with 95% intervals.

    ``estimate[name]``, ``lower[name]`` and ``upper[name]`` are arrays aligned
    with ``z`` (the bin level or bin centre) for every name in ``PANELS``.
    """

    z: np.ndarray
    n: np.ndarray
    estimate: dict[str, np.ndarray]
    lower: dict[str, np.ndarray]
    upper: dict[str, np.ndarray]
    n_boot: int
    seed: int


def _bins(z: np.ndarray, binning) -> tuple[np.ndarray, np.ndarray]:
    if binning in (None, "exact"):
        return np.unique(z, return_inverse=True)
    width = float(binning)
    if not width > 0:
        raise ValueError("bin width must be positive")
    k = np.floor(z / width).astype(np.int64)
    ks, inv = np.unique(k, return_inverse=True)
    return (ks + 0.5) * width, inv


def _sample_moments(x: np.ndarray, y: np.ndarray) -> tuple[float, float, float]:
    dx, dy = x - x.mean(), y - y.mean()
    n = len(x)
    return float(dx @ dx / (n - 1)), float(dy @ dy / (n - 1)), float(dx @ dy / (n - 1))


def _boot_bin(x: np.ndarray, y: np.ndarray, n_boot: int, seed: int, b: int, chunk: int = 64):
    rng = stream(seed, b)
    n = len(x)
    out = np.empty((n_boot, 3))
    for start in range(0, n_boot, chunk):
        stop = min(start + chunk, n_boot)
        idx = rng.integers(0, n, size=(stop - start, n))
        xs, ys = x[idx], y[idx]
        dx = xs - xs.mean(axis=1, keepdims=True)
        dy = ys - ys.mean(axis=1, keepdims=True)
        out[start:stop, 0] = (dx * dx).sum(axis=1) / (n - 1)
        out[start:stop, 1] = (dy * dy).sum(axis=1) / (n - 1)
        out[start:stop, 2] = (dx * dy).sum(axis=1) / (n - 1)
    return np.percentile(out, [2.5, 97.5], axis=0)


def moment_curve(
    d: Dataset,
    binning: str | float = "exact",
    n_boot: int = 200,
    seed: int = 0,
    threads: int = 1,
) -> MomentCurve:
    """Conditional means, variances and covariance of (x, y) per z bin.

    Bins with fewer than two rows are dropped. Bin ``b`` (in increasing z
    order) bootstraps from the stream ``(seed, b)``.

    Raises
    ------
    ValueError
        If fewer than two bins have at least two rows.
    """
    if n_boot < 2:
        raise ValueError("n_boot must be >= 2")
    centres, inv = _bins(d.z, binning)
    order = np.argsort(inv, kind="stable")
    counts = np.bincount(inv, minlength=len(centres))
    splits = np.split(order, np.cumsum(counts)[:-1])
    keep = [b for b in range(len(centres)) if counts[b] >= 2]
    if len(keep) < 2:
        raise ValueError("need at least two z bins with two or more rows")

    est = {k: np.empty(len(keep)) for k in PANELS}
    lo = {k: np.empty(len(keep)) for k in PANELS}
    hi = {k: np.empty(len(keep)) for k in PANELS}
    tasks = []
    for j, b in enumerate(keep):
        xi, yi = d.x[splits[b]], d.y[splits[b]]
        n = len(xi)
        vx, vy, cxy = _sample_moments(xi, yi)
        for name, arr, v in (("mean_x", xi, vx), ("mean_y", yi, vy)):
            m = float(arr.mean())
            se = math.sqrt(v / n)
            est[name][j], lo[name][j], hi[name][j] = m, m - 1.96 * se, m + 1.96 * se
        est["var_x"][j], est["var_y"][j], est["cov_xy"][j] = vx, vy, cxy
        tasks.append((xi, yi, n_boot, seed, j))
    bands = map_ordered(_boot_bin, tasks, threads)
    for j, q in enumerate(bands):
        for c, name in enumerate(("var_x", "var_y", "cov_xy")):
            lo[name][j], hi[name][j] = q[0, c], q[1, c]
    return MomentCurve(np.asarray(centres, dtype=float)[keep], counts[keep], est, lo, hi, n_boot, seed)


def overlay(
    p_full: LinearModelParams | None,
    p_reduced: LinearModelParams | None,
    curve: MomentCurve,
) -> dict[str, dict[str, np.ndarray]]:
    """Plot-ready columns per panel: observed moments with bands plus model predictions.

    Returns ``{panel: {"z", "n", "observed", "lower", "upper"[, "full"][, "reduced"]}}``.
    Model predictions are evaluated without the positive-definiteness check so
    that a poor model can still be drawn.
    """
    preds = {}
    for label, p in (("full", p_full), ("reduced", p_reduced)):
        if p is not None:
            preds[label] = conditional_moments(p, curve.z, check=False).as_dict()
    out = {}
    for name in PANELS:
        cols = {
            "z": curve.z,
            "n": curve.n.astype(float),
            "observed": curve.estimate[name],
            "lower": curve.lower[name],
            "upper": curve.upper[name],
        }
        for label, m in preds.items():
            cols[label] = np.asarray(m[name], dtype=float)
        out[name] = cols
    return out


def write_panels(panels: Mapping[str, Mapping[str, Sequence[float]]], out_dir: str | Path) -> list[Path]:
    """One CSV per panel (``<panel>.csv``) in ``out_dir``."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    written = []
    for name, cols in panels.items():
        path = out_dir / f"{name}.csv"
        keys = list(cols)
        with open(path, "w", newline="") as fh:
            fh.write(",".join(keys) + "\n")
            for row in zip(*(np.asarray(cols[k]).tolist() for k in keys)):
                fh.write(",".join(repr(v) for v in row) + "\n")
        written.append(path)
    return written
