"""
Structural causal models over a population of units.

A model is a set of structural assignments, one per node, plus a
distribution of *unit parameters*: values drawn once per unit (effect
modulators, random slopes, unit-level disturbances) and then shared by all of
that unit's observations.

Supported assignment families
-----------------------------
``exogenous``
    A root node drawn from ``normal``, ``bernoulli``, ``choice`` or
    ``constant``.
``linear_gaussian``
    ``sum(coef * factor) + N(0, noise_sd^2)``
``bernoulli_linear_prob``
    ``Bernoulli(sum(coef * factor))``; the probability must lie in [0, 1].

Every term is ``coef * factor`` where ``coef`` is a number or the name of a
unit parameter and ``factor`` is a parent node or ``None`` (the constant 1).
The binary example, for instance, writes ``P(X=1) = 0.5 + alpha + alpha*Z``.

In the population model the modulators of X and Y depend on each other
through a common source U. Written out, one might attach U_Y to X and U_X to
Y; here the modulator named for X always feeds X and the one named for Y
feeds Y, which is the reading under which the diagrams and the per-unit
model agree. A joint unit-parameter distribution over (U_X, U_Y) stands in
for U, which is never observed.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np
import yaml

from .graph import CausalDag
from .streams import BLOCK_SIZE, block_ranges, derive_seed, map_ordered, stream

__all__ = [
    "ScmError",
    "Term",
    "StructuralAssignment",
    "DiscreteParams",
    "GaussianParams",
    "ScmSpec",
    "SampledPopulation",
    "ContrastResult",
    "AdjustedEstimate",
    "sample_population",
    "intervene",
    "causal_contrast",
    "adjusted_estimate",
    "binary_example_spec",
    "linear_model_spec",
]

KINDS = ("exogenous", "linear_gaussian", "bernoulli_linear_prob")
DISTRIBUTIONS = ("normal", "bernoulli", "choice", "constant")
PROB_SLACK = 1e-12


class ScmError(ValueError):
    """Malformed model or a sampling-time violation."""


@dataclass(frozen=True)
class Term:
    coef: float | str
    factor: str | None = None

    def to_dict(self) -> dict:
        d: dict = {"coef": self.coef}
        if self.factor is not None:
            d["parent"] = self.factor
        return d


def _term(t) -> Term:
    if isinstance(t, Term):
        return t
    if isinstance(t, Mapping):
        return Term(t["coef"] if isinstance(t["coef"], str) else float(t["coef"]), t.get("parent"))
    coef, factor = t
    return Term(coef if isinstance(coef, str) else float(coef), factor)


@dataclass(frozen=True)
class StructuralAssignment:
    kind: str
    terms: tuple[Term, ...] = ()
    noise_sd: float = 0.0
    distribution: str | None = None
    params: Mapping[str, object] = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ScmError(f"unknown assignment kind {self.kind!r}")
        object.__setattr__(self, "terms", tuple(_term(t) for t in self.terms))
        if self.kind == "exogenous":
            if self.terms:
                raise ScmError("exogenous assignments take no terms")
            if self.distribution not in DISTRIBUTIONS:
                raise ScmError(f"exogenous distribution must be one of {DISTRIBUTIONS}")
            p = dict(self.params)
            if self.distribution == "choice":
                vals = [float(v) for v in p["values"]]
                w = p.get("weights")
                w = [1.0 / len(vals)] * len(vals) if w is None else [float(v) for v in w]
                if len(w) != len(vals) or abs(sum(w) - 1.0) > 1e-9 or min(w) < 0:
                    raise ScmError("choice weights must be non-negative and sum to 1")
                p = {"values": vals, "weights": w}
            elif self.distribution == "bernoulli":
                p = {"p": float(p["p"])}
                if not 0.0 <= p["p"] <= 1.0:
                    raise ScmError("bernoulli p must lie in [0, 1]")
            elif self.distribution == "normal":
                p = {"mean": float(p.get("mean", 0.0)), "sd": float(p.get("sd", 1.0))}
                if p["sd"] < 0:
                    raise ScmError("normal sd must be >= 0")
            else:
                p = {"value": float(p["value"])}
            object.__setattr__(self, "params", p)
        elif self.distribution is not None:
            raise ScmError(f"{self.kind} assignments do not take a distribution")
        if self.noise_sd < 0:
            raise ScmError("noise_sd must be >= 0")
        if self.kind == "bernoulli_linear_prob" and self.noise_sd:
            raise ScmError("bernoulli_linear_prob assignments have no additive noise")

    @property
    def parents(self) -> frozenset[str]:
        return frozenset(t.factor for t in self.terms if t.factor is not None)

    @property
    def unit_params(self) -> frozenset[str]:
        return frozenset(t.coef for t in self.terms if isinstance(t.coef, str))

    @classmethod
    def constant(cls, value: float) -> "StructuralAssignment":
        return cls("exogenous", distribution="constant", params={"value": value})

    def to_dict(self) -> dict:
        d: dict = {"kind": self.kind}
        if self.kind == "exogenous":
            d["distribution"] = self.distribution
            d.update(self.params)
        else:
            d["terms"] = [t.to_dict() for t in self.terms]
            if self.kind == "linear_gaussian":
                d["noise_sd"] = float(self.noise_sd)
        return d

    @classmethod
    def from_dict(cls, d: Mapping) -> "StructuralAssignment":
        d = dict(d)
        kind = d.pop("kind")
        if kind == "exogenous":
            dist = d.pop("distribution")
            return cls(kind, distribution=dist, params=d)
        return cls(kind, tuple(d.get("terms", ())), float(d.get("noise_sd", 0.0)))


@dataclass(frozen=True)
class DiscreteParams:
    """Unit parameters drawn jointly from a finite set of value rows."""

    names: tuple[str, ...]
    values: tuple[tuple[float, ...], ...]
    weights: tuple[float, ...]

    def __post_init__(self):
        names = tuple(self.names)
        values = tuple(tuple(float(v) for v in row) for row in self.values)
        weights = tuple(float(w) for w in self.weights)
        if any(len(r) != len(names) for r in values):
            raise ScmError("each discrete value row needs one entry per parameter name")
        if len(weights) != len(values) or abs(sum(weights) - 1.0) > 1e-9 or min(weights) < 0:
            raise ScmError("discrete weights must be non-negative and sum to 1")
        object.__setattr__(self, "names", names)
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "weights", weights)

    def draw(self, rng: np.random.Generator, m: int) -> dict[str, np.ndarray]:
        idx = rng.choice(len(self.values), size=m, p=np.asarray(self.weights))
        table = np.asarray(self.values)
        return {n: table[idx, j] for j, n in enumerate(self.names)}

    def to_dict(self) -> dict:
        return {"kind": "discrete", "names": list(self.names), "values": [list(r) for r in self.values], "weights": list(self.weights)}


@dataclass(frozen=True)
class GaussianParams:
    """Unit parameters drawn jointly from a multivariate normal."""

    names: tuple[str, ...]
    mean: tuple[float, ...]
    cov: tuple[tuple[float, ...], ...]

    def __post_init__(self):
        names = tuple(self.names)
        mean = tuple(float(v) for v in self.mean)
        cov = tuple(tuple(float(v) for v in row) for row in self.cov)
        k = len(names)
        if len(mean) != k or len(cov) != k or any(len(r) != k for r in cov):
            raise ScmError("gaussian unit parameters: mean/cov shape mismatch")
        c = np.asarray(cov)
        if not np.allclose(c, c.T):
            raise ScmError("gaussian unit-parameter covariance must be symmetric")
        w = np.linalg.eigvalsh(c)
        if w.min() < -1e-12 * max(1.0, abs(w).max()):
            raise ScmError(f"gaussian unit-parameter covariance not PSD (smallest eigenvalue {w.min():.4g})")
        object.__setattr__(self, "names", names)
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "cov", cov)

    def _factor(self) -> np.ndarray:
        c = np.asarray(self.cov)
        try:
            return np.linalg.cholesky(c)
        except np.linalg.LinAlgError:
            w, v = np.linalg.eigh(c)
            return v * np.sqrt(np.clip(w, 0.0, None))

    def draw(self, rng: np.random.Generator, m: int) -> dict[str, np.ndarray]:
        e = rng.standard_normal((m, len(self.names))) @ self._factor().T + np.asarray(self.mean)
        return {n: e[:, j] for j, n in enumerate(self.names)}

    def to_dict(self) -> dict:
        return {"kind": "gaussian", "names": list(self.names), "mean": list(self.mean), "cov": [list(r) for r in self.cov]}


def _param_block(d: Mapping):
    kind = d.get("kind")
    if kind == "discrete":
        return DiscreteParams(tuple(d["names"]), tuple(map(tuple, d["values"])), tuple(d["weights"]))
    if kind == "gaussian":
        return GaussianParams(tuple(d["names"]), tuple(d["mean"]), tuple(map(tuple, d["cov"])))
    raise ScmError(f"unknown unit-parameter block kind {kind!r}")


class ScmSpec:
    """Structural causal model for a population of units.

    Parameters
    ----------
    assignments : mapping node -> StructuralAssignment
    unit_params : sequence of DiscreteParams / GaussianParams blocks
    dag : CausalDag, optional
        Must have exactly the parent sets implied by the assignments; built
        from them when omitted.
    """

    def __init__(
        self,
        assignments: Mapping[str, StructuralAssignment],
        unit_params: Sequence[DiscreteParams | GaussianParams] = (),
        dag: CausalDag | None = None,
        interventions: Mapping[str, float] | None = None,
    ):
        self.assignments = dict(assignments)
        self.unit_params = tuple(unit_params)
        self.interventions = dict(interventions or {})
        implied = CausalDag(
            [(p, n) for n, a in self.assignments.items() for p in sorted(a.parents)], self.assignments.keys()
        )
        if dag is None:
            dag = implied
        for n in dag.nodes:
            if n not in self.assignments:
                raise ScmError(f"node {n!r} has no structural assignment")
        for n, a in self.assignments.items():
            if n not in dag.nodes:
                raise ScmError(f"assignment for {n!r} which is not a graph node")
            if set(dag.parents(n)) != set(a.parents):
                raise ScmError(
                    f"assignment parents of {n!r} {sorted(a.parents)} differ from graph parents {sorted(dag.parents(n))}"
                )
        self.dag = dag
        declared: list[str] = [name for b in self.unit_params for name in b.names]
        if len(set(declared)) != len(declared):
            raise ScmError("unit parameter declared twice")
        clash = set(declared) & set(self.assignments)
        if clash:
            raise ScmError(f"unit parameters share names with nodes: {sorted(clash)}")
        for n, a in self.assignments.items():
            missing = a.unit_params - set(declared)
            if missing:
                raise ScmError(f"node {n!r} references undeclared unit parameters {sorted(missing)}")
        self.param_names = tuple(declared)

    @property
    def nodes(self) -> tuple[str, ...]:
        return self.dag.topological_order()

    def to_dict(self) -> dict:
        d = {
            "nodes": {n: self.assignments[n].to_dict() for n in self.nodes},
            "unit_params": [b.to_dict() for b in self.unit_params],
        }
        if self.interventions:
            d["interventions"] = dict(sorted(self.interventions.items()))
        return d

    @classmethod
    def from_dict(cls, d: Mapping) -> "ScmSpec":
        if "nodes" not in d:
            raise ScmError("model file needs a 'nodes' section")
        assignments = {str(n): StructuralAssignment.from_dict(a) for n, a in d["nodes"].items()}
        blocks = [_param_block(b) for b in d.get("unit_params", ()) or ()]
        return cls(assignments, blocks, interventions=d.get("interventions"))

    def to_yaml(self) -> str:
        return yaml.safe_dump(self.to_dict(), sort_keys=False)

    def write(self, path: str | Path) -> None:
        Path(path).write_text(self.to_yaml())

    @classmethod
    def read(cls, path: str | Path) -> "ScmSpec":
        d = yaml.safe_load(Path(path).read_text())
        if not isinstance(d, Mapping):
            raise ScmError(f"{path}: expected a mapping")
        return cls.from_dict(d)

    def digest(self) -> str:
        canon = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(canon.encode()).hexdigest()

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, ScmSpec):
            return NotImplemented
        return self.to_dict() == other.to_dict()

    def __repr__(self) -> str:
        return f"ScmSpec(nodes={list(self.nodes)}, unit_params={list(self.param_names)})"


@dataclass(frozen=True, eq=False)
class SampledPopulation:
    """Column-oriented records. ``columns`` holds every node and unit parameter."""

    unit_id: np.ndarray
    columns: dict[str, np.ndarray]
    nodes: tuple[str, ...]
    param_names: tuple[str, ...]
    spec_hash: str
    seed: int
    interventions: dict[str, float]
    obs_per_unit: int

    def __len__(self) -> int:
        return len(self.unit_id)

    def __getitem__(self, name: str) -> np.ndarray:
        return self.columns[name]

    def provenance(self) -> str:
        iv = ",".join(f"{k}={v!r}" for k, v in sorted(self.interventions.items())) or "none"
        return f"spec_hash={self.spec_hash} seed={self.seed} intervention={iv}"

    def to_csv(self, path: str | Path, include_unit_params: bool = False) -> None:
        names = list(self.nodes) + (list(self.param_names) if include_unit_params else [])
        cols = [self.columns[n].tolist() for n in names]
        with open(path, "w", newline="") as fh:
            fh.write(",".join(["unit_id"] + names) + "\n")
            for i, uid in enumerate(self.unit_id.tolist()):
                fh.write(",".join([str(uid)] + [repr(c[i]) for c in cols]) + "\n")


def _eval_linear(a: StructuralAssignment, vals: dict, params: dict, m: int) -> np.ndarray:
    out = np.zeros(m)
    for t in a.terms:
        coef = params[t.coef] if isinstance(t.coef, str) else t.coef
        out = out + (coef * vals[t.factor] if t.factor is not None else coef)
    return out


def _sample_block(spec: ScmSpec, seed, k: int, start: int, stop: int, obs_per_unit: int):
    rng = stream(seed, k)
    m_units = stop - start
    unit_vals: dict[str, np.ndarray] = {}
    for b in spec.unit_params:
        unit_vals.update(b.draw(rng, m_units))
    m = m_units * obs_per_unit
    params = {n: np.repeat(v, obs_per_unit) for n, v in unit_vals.items()}
    vals: dict[str, np.ndarray] = {}
    for node in spec.nodes:
        a = spec.assignments[node]
        if a.kind == "exogenous":
            p = a.params
            if a.distribution == "normal":
                v = p["mean"] + p["sd"] * rng.standard_normal(m)
            elif a.distribution == "bernoulli":
                v = (rng.random(m) < p["p"]).astype(float)
            elif a.distribution == "choice":
                v = np.asarray(p["values"])[rng.choice(len(p["values"]), size=m, p=np.asarray(p["weights"]))]
            else:
                v = np.full(m, p["value"])
        elif a.kind == "linear_gaussian":
            v = _eval_linear(a, vals, params, m)
            if a.noise_sd:
                v = v + a.noise_sd * rng.standard_normal(m)
        else:
            prob = _eval_linear(a, vals, params, m)
            bad = (prob < -PROB_SLACK) | (prob > 1 + PROB_SLACK) | ~np.isfinite(prob)
            if bad.any():
                raise ScmError(f"node {node!r}: probability {prob[np.argmax(bad)]!r} outside [0, 1]")
            v = (rng.random(m) < prob).astype(float)
        vals[node] = v
    unit_id = np.repeat(np.arange(start, stop, dtype=np.int64), obs_per_unit)
    return unit_id, vals, params


def sample_population(
    spec: ScmSpec,
    n_units: int,
    obs_per_unit: int = 1,
    seed: int = 0,
    threads: int = 1,
    block_size: int = BLOCK_SIZE,
) -> SampledPopulation:
    """Draw unit parameters once per unit, then ``obs_per_unit`` observations each.

    Units are processed in fixed blocks with one seeded stream per block, so
    the result does not depend on ``threads``.

    Raises
    ------
    ScmError
        If a Bernoulli probability leaves [0, 1]; the message names the node.
    """
    if n_units < 1 or obs_per_unit < 1:
        raise ScmError("n_units and obs_per_unit must be positive")
    parts = map_ordered(
        lambda k, a, b: _sample_block(spec, seed, k, a, b, obs_per_unit),
        block_ranges(n_units, block_size),
        threads,
    )
    unit_id = np.concatenate([p[0] for p in parts])
    columns = {n: np.concatenate([p[1][n] for p in parts]) for n in spec.nodes}
    columns.update({n: np.concatenate([p[2][n] for p in parts]) for n in spec.param_names})
    return SampledPopulation(
        unit_id, columns, spec.nodes, spec.param_names, spec.digest(), int(seed), dict(spec.interventions), obs_per_unit
    )


def intervene(spec: ScmSpec, node: str, value: float) -> ScmSpec:
    """do(node = value): constant assignment, incoming arrows removed, rest untouched."""
    if node not in spec.assignments:
        raise ScmError(f"unknown node {node!r}")
    assignments = dict(spec.assignments)
    assignments[node] = StructuralAssignment.constant(float(value))
    interventions = dict(spec.interventions)
    interventions[node] = float(value)
    return ScmSpec(assignments, spec.unit_params, spec.dag.without_incoming(node), interventions)


@dataclass(frozen=True)
class ContrastResult:
    risk_difference: float
    risk_difference_se: float
    risk_ratio: float
    risk_ratio_se: float
    mean_treated: float
    mean_control: float


def _unit_means(pop: SampledPopulation, node: str) -> np.ndarray:
    if pop.obs_per_unit == 1:
        return pop[node]
    return pop[node].reshape(-1, pop.obs_per_unit).mean(axis=1)


def causal_contrast(
    spec: ScmSpec,
    x_node: str,
    y_node: str,
    x1: float,
    x0: float,
    n_units: int,
    seed: int = 0,
    obs_per_unit: int = 1,
    threads: int = 1,
) -> ContrastResult:
    """Monte Carlo E[Y | do(X=x1)] - E[Y | do(X=x0)] and the ratio of the two.

    The two arms are sampled from independent streams; standard errors use
    unit-level means, so repeated observations within a unit are handled.
    """
    if y_node not in spec.assignments:
        raise ScmError(f"unknown node {y_node!r}")
    if y_node in spec.dag.ancestors(x_node) - {x_node}:
        raise ScmError(f"{y_node!r} is upstream of {x_node!r}")
    arms = []
    for arm, value in enumerate((x1, x0)):
        pop = sample_population(intervene(spec, x_node, value), n_units, obs_per_unit, derive_seed(seed, arm), threads)
        arms.append(_unit_means(pop, y_node))
    y1, y0 = arms
    m1, m0 = float(y1.mean()), float(y0.mean())
    v1 = float(y1.var(ddof=1)) / len(y1) if len(y1) > 1 else 0.0
    v0 = float(y0.var(ddof=1)) / len(y0) if len(y0) > 1 else 0.0
    rd_se = float(np.sqrt(v1 + v0))
    if m0 == 0:
        rr, rr_se = float("nan"), float("nan")
    else:
        rr = m1 / m0
        rr_se = abs(rr) * float(np.sqrt(v1 / m1**2 + v0 / m0**2)) if m1 != 0 else float("nan")
    return ContrastResult(m1 - m0, rd_se, rr, rr_se, m1, m0)


@dataclass(frozen=True)
class AdjustedEstimate:
    estimate: float
    standard_error: float
    n_strata: int
    excluded_strata: tuple[tuple[float, ...], ...]
    excluded_weight: float

    def __float__(self) -> float:
        return self.estimate


def adjusted_estimate(
    pop: SampledPopulation,
    x_node: str,
    y_node: str,
    z_nodes: str | Iterable[str],
    x1: float = 1.0,
    x0: float = 0.0,
) -> AdjustedEstimate:
    """Stratified contrast ``sum_z [E(Y|x1,z) - E(Y|x0,z)] P(z)``.

    ``z_nodes`` may name nodes or unit parameters. Strata lacking either
    exposure level are dropped, reported, and the remaining weights
    renormalized. The standard error treats observations as independent.

    Raises
    ------
    ScmError
        If no stratum contains both exposure levels.
    """
    z_nodes = [z_nodes] if isinstance(z_nodes, str) else list(z_nodes)
    for n in [x_node, y_node, *z_nodes]:
        if n not in pop.columns:
            raise ScmError(f"unknown column {n!r}")
    x, y = pop[x_node], pop[y_node]
    if z_nodes:
        zmat = np.column_stack([pop[n] for n in z_nodes])
        levels, inv = np.unique(zmat, axis=0, return_inverse=True)
        inv = inv.ravel()
    else:
        levels, inv = np.zeros((1, 0)), np.zeros(len(x), dtype=np.int64)
    k = len(levels)
    n_z = np.bincount(inv, minlength=k).astype(float)
    stats = {}
    for label, xv in (("1", x1), ("0", x0)):
        sel = x == xv
        cnt = np.bincount(inv[sel], minlength=k).astype(float)
        s = np.bincount(inv[sel], weights=y[sel], minlength=k)
        ss = np.bincount(inv[sel], weights=y[sel] ** 2, minlength=k)
        with np.errstate(invalid="ignore", divide="ignore"):
            mean = s / cnt
            var = (ss - cnt * mean**2) / (cnt - 1)
        stats[label] = (cnt, mean, np.where(cnt > 1, np.maximum(var, 0.0), 0.0))
    usable = (stats["1"][0] > 0) & (stats["0"][0] > 0)
    if not usable.any():
        raise ScmError("no stratum contains both exposure levels")
    w = n_z[usable] / n_z[usable].sum()
    delta = stats["1"][1][usable] - stats["0"][1][usable]
    est = float(np.sum(w * delta))
    var_within = np.sum(
        w**2 * (stats["1"][2][usable] / stats["1"][0][usable] + stats["0"][2][usable] / stats["0"][0][usable])
    )
    var_weights = np.sum(w * (delta - est) ** 2) / n_z[usable].sum()
    excluded = tuple(tuple(float(v) for v in levels[i]) for i in np.flatnonzero(~usable))
    return AdjustedEstimate(
        est,
        float(np.sqrt(var_within + var_weights)),
        int(usable.sum()),
        excluded,
        float(n_z[~usable].sum() / n_z.sum()),
    )


def binary_example_spec(
    alphas: Sequence[float] = (0.1, 0.2),
    weights: Sequence[float] | None = None,
    base_x: float = 0.5,
    base_y: float = 0.1,
    p_z1: float = 0.5,
) -> ScmSpec:
    """The binary confounding example as a population SCM.

    ``P(X=1) = base_x + alpha (1 + Z)``, ``P(Y=1) = base_y + alpha (1 + Z)``,
    with ``alpha`` a unit parameter; Y does not depend on X.
    """
    weights = [1.0 / len(alphas)] * len(alphas) if weights is None else list(weights)
    rows = tuple((float(a),) for a in alphas)

    def prob(base):
        return StructuralAssignment(
            "bernoulli_linear_prob", (Term(float(base)), Term("alpha"), Term("alpha", "Z"))
        )

    return ScmSpec(
        {
            "Z": StructuralAssignment("exogenous", distribution="bernoulli", params={"p": p_z1}),
            "X": prob(base_x),
            "Y": prob(base_y),
        },
        [DiscreteParams(("alpha",), rows, tuple(weights))],
    )


def linear_model_spec(p, z_levels: Sequence[float]) -> ScmSpec:
    """The random-coefficient linear model as an SCM with Gaussian unit parameters.

    ``p`` is a :class:`covariability.linear_model.LinearModelParams`.
    """
    return ScmSpec(
        {
            "Z": StructuralAssignment("exogenous", distribution="choice", params={"values": list(z_levels)}),
            "X": StructuralAssignment(
                "linear_gaussian", (Term(p.mu_x), Term(p.b_x, "Z"), Term("e_bx", "Z"), Term("e_x"))
            ),
            "Y": StructuralAssignment(
                "linear_gaussian", (Term(p.mu_y), Term(p.b_y, "Z"), Term("e_by", "Z"), Term("e_y"))
            ),
        },
        [GaussianParams(("e_bx", "e_x", "e_by", "e_y"), (0.0,) * 4, tuple(map(tuple, p.cov.sigma())))],
    )

