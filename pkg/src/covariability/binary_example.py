"""
Exact arithmetic for the binary exposure/outcome/confounder example.

Each unit carries an effect modulator ``alpha`` drawn from a finite set.
Within a unit and a level ``z`` of the binary confounder,

    P(X=1) = base_x + alpha * (1 + z)
    P(Y=1) = base_y + alpha * (1 + z)

and X and Y are independent. X has no effect on Y. Mixing over ``alpha``
makes X and Y dependent within every level of Z, which is the residual
confounding this module quantifies.

All arithmetic is done with :class:`fractions.Fraction`; floats passed in are
converted through their shortest decimal representation so that ``0.1`` means
exactly one tenth.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from decimal import ROUND_HALF_EVEN, Decimal
from fractions import Fraction
from numbers import Rational
from typing import Iterable, Mapping

__all__ = [
    "MixtureExampleSpec",
    "ContingencyTable",
    "SummaryMeasures",
    "unit_table",
    "population_table",
    "odds_ratio",
    "conditional_odds",
    "summary_measures",
    "adjusted_risk_difference",
]


def _frac(v) -> Fraction:
    if isinstance(v, Fraction):
        return v
    if isinstance(v, Rational):
        return Fraction(v)
    if isinstance(v, float):
        return Fraction(repr(v))
    return Fraction(str(v))


@dataclass(frozen=True)
class MixtureExampleSpec:
    """Population of units with a discrete effect modulator.

    ``alpha_weights`` maps each modulator value to its population share.
    The default reproduces the two-valued example (0.1 and 0.2, equal shares).
    """

    alpha_weights: Mapping[Fraction, Fraction] = field(
        default_factory=lambda: {Fraction(1, 10): Fraction(1, 2), Fraction(2, 10): Fraction(1, 2)}
    )
    base_x: Fraction = Fraction(1, 2)
    base_y: Fraction = Fraction(1, 10)
    p_z1: Fraction = Fraction(1, 2)

    def __post_init__(self):
        weights = {_frac(a): _frac(w) for a, w in dict(self.alpha_weights).items()}
        object.__setattr__(self, "alpha_weights", weights)
        object.__setattr__(self, "base_x", _frac(self.base_x))
        object.__setattr__(self, "base_y", _frac(self.base_y))
        object.__setattr__(self, "p_z1", _frac(self.p_z1))
        if not weights:
            raise ValueError("at least one alpha value is required")
        if any(w < 0 for w in weights.values()):
            raise ValueError("alpha weights must be non-negative")
        if sum(weights.values()) != 1:
            raise ValueError(f"alpha weights sum to {sum(weights.values())}, expected 1")
        if not 0 <= self.p_z1 <= 1:
            raise ValueError("P(Z=1) must lie in [0, 1]")
        for a in weights:
            for z in (0, 1):
                self.p_x1(a, z)
                self.p_y1(a, z)

    @classmethod
    def from_values(cls, alphas: Iterable, weights: Iterable | None = None, **kw) -> "MixtureExampleSpec":
        alphas = [_frac(a) for a in alphas]
        if weights is None:
            weights = [Fraction(1, len(alphas))] * len(alphas)
        return cls(dict(zip(alphas, (_frac(w) for w in weights))), **kw)

    @property
    def alpha_values(self) -> tuple[Fraction, ...]:
        return tuple(sorted(self.alpha_weights))

    def _prob(self, base: Fraction, alpha, z: int, name: str) -> Fraction:
        p = base + _frac(alpha) * (1 + z)
        if not 0 <= p <= 1:
            raise ValueError(f"P({name}=1) = {p} outside [0, 1] for alpha={alpha}, z={z}")
        return p

    def p_x1(self, alpha, z: int) -> Fraction:
        return self._prob(self.base_x, alpha, z, "X")

    def p_y1(self, alpha, z: int) -> Fraction:
        return self._prob(self.base_y, alpha, z, "Y")

    def p_z(self, z: int) -> Fraction:
        return self.p_z1 if z == 1 else 1 - self.p_z1


@dataclass(frozen=True)
class ContingencyTable:
    """2x2 table over (X, Y); ``p[x][y]``."""

    p00: Fraction
    p01: Fraction
    p10: Fraction
    p11: Fraction

    def __post_init__(self):
        for name in ("p00", "p01", "p10", "p11"):
            v = _frac(getattr(self, name))
            if v < 0:
                raise ValueError(f"negative cell {name}={v}")
            object.__setattr__(self, name, v)

    @property
    def p(self) -> tuple[tuple[Fraction, Fraction], tuple[Fraction, Fraction]]:
        return ((self.p00, self.p01), (self.p10, self.p11))

    def cells(self) -> tuple[Fraction, Fraction, Fraction, Fraction]:
        return (self.p00, self.p01, self.p10, self.p11)

    def total(self) -> Fraction:
        return sum(self.cells())

    def normalized(self) -> "ContingencyTable":
        t = self.total()
        return ContingencyTable(*(c / t for c in self.cells()))

    def rounded(self, digits: int = 2) -> "ContingencyTable":
        """Cells rounded half-to-even to ``digits`` decimals (exact decimal rounding)."""
        q = Decimal(1).scaleb(-digits)

        def r(c: Fraction) -> Fraction:
            d = Decimal(c.numerator) / Decimal(c.denominator)
            return Fraction(d.quantize(q, rounding=ROUND_HALF_EVEN))

        return ContingencyTable(*(r(c) for c in self.cells()))

    def to_floats(self) -> tuple[tuple[float, float], tuple[float, float]]:
        return tuple(tuple(float(v) for v in row) for row in self.p)

    def __add__(self, other: "ContingencyTable") -> "ContingencyTable":
        return ContingencyTable(*(a + b for a, b in zip(self.cells(), other.cells())))

    def scaled(self, w) -> "ContingencyTable":
        w = _frac(w)
        return ContingencyTable(*(c * w for c in self.cells()))


def unit_table(spec: MixtureExampleSpec, alpha, z: int) -> ContingencyTable:
    """P(X, Y | Z=z, alpha) for a single unit type: a product table."""
    alpha = _frac(alpha)
    if alpha not in spec.alpha_weights and alpha != 0:
        # alpha=0 is allowed as the no-effect baseline even if not in the mixture
        raise ValueError(f"alpha={alpha} is not one of {list(map(str, spec.alpha_values))}")
    if z not in (0, 1):
        raise ValueError("z must be 0 or 1")
    px, py = spec.p_x1(alpha, z), spec.p_y1(alpha, z)
    return ContingencyTable((1 - px) * (1 - py), (1 - px) * py, px * (1 - py), px * py)


def population_table(spec: MixtureExampleSpec, z: int) -> ContingencyTable:
    """P(X, Y | Z=z) with the modulator marginalized out."""
    out = ContingencyTable(0, 0, 0, 0)
    for a, w in sorted(spec.alpha_weights.items()):
        out = out + unit_table(spec, a, z).scaled(w)
    return out


def odds_ratio(t: ContingencyTable) -> Fraction:
    """(p11 * p00) / (p10 * p01); exact when the cells are exact."""
    if min(t.cells()) <= 0:
        raise ValueError(f"odds ratio undefined for a table with an empty cell: {t}")
    return (t.p11 * t.p00) / (t.p10 * t.p01)


def conditional_odds(t: ContingencyTable, x: int) -> Fraction:
    """Odds of Y=1 given X=x, i.e. P(Y=1|X=x) / P(Y=0|X=x)."""
    row = t.p[x]
    if row[0] == 0:
        raise ValueError("P(Y=0|X=x) is zero")
    return row[1] / row[0]


@dataclass(frozen=True)
class SummaryMeasures:
    mode: str
    stratum_or: dict[int, Fraction]
    average_or: Fraction
    marginal_or: Fraction
    causal_rr: Fraction
    tables: dict[int, ContingencyTable]
    marginal_table: ContingencyTable


def summary_measures(spec: MixtureExampleSpec | None = None, mode: str = "exact") -> SummaryMeasures:
    """Stratum, average and marginal odds ratios and the causal relative risk.

    Parameters
    ----------
    mode : {"exact", "rounded"}
        ``"rounded"`` first rounds each P(X, Y | Z) cell to two decimals
        (as a printed table would be) and computes everything from the
        rounded cells.
    """
    spec = spec or MixtureExampleSpec()
    if mode not in ("exact", "rounded"):
        raise ValueError(f"unknown mode {mode!r}")
    tables = {z: population_table(spec, z) for z in (0, 1)}
    if mode == "rounded":
        tables = {z: t.rounded(2) for z, t in tables.items()}
    stratum = {z: odds_ratio(t) for z, t in tables.items()}
    average = sum(stratum.values()) / len(stratum)
    marginal = tables[0].scaled(spec.p_z(0)) + tables[1].scaled(spec.p_z(1))

    # Y has no X input, so P(Y=1 | do(X=x)) is the same for every x
    p_y_do = {
        x: sum(spec.p_z(z) * w * spec.p_y1(a, z) for a, w in spec.alpha_weights.items() for z in (0, 1))
        for x in (0, 1)
    }
    causal_rr = p_y_do[1] / p_y_do[0]
    return SummaryMeasures(mode, stratum, average, odds_ratio(marginal), causal_rr, tables, marginal)


def adjusted_risk_difference(spec: MixtureExampleSpec | None = None) -> Fraction:
    """Z-standardized risk difference sum_z [P(Y|X=1,z) - P(Y|X=0,z)] P(z).

    Nonzero whenever the modulator varies, although the causal risk
    difference is exactly zero.
    """
    spec = spec or MixtureExampleSpec()
    total = Fraction(0)
    for z in (0, 1):
        t = population_table(spec, z)
        r1 = t.p11 / (t.p10 + t.p11)
        r0 = t.p01 / (t.p00 + t.p01)
        total += (r1 - r0) * spec.p_z(z)
    return total
