"""Observed distributions of protected attributes and distances between them.

All divergences are in nats. Distributions over different supports are
compared on the union of their categories, missing categories having mass 0.
"""
from __future__ import annotations

import itertools
import math
import warnings
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .dataset_io import ColumnarTable, JoinedView
from .engine import Engine
from .errors import (
    AbsoluteContinuityWarning,
    DegenerateGroup,
    FairliftWarning,
    InvalidOrder,
    MissingColumn,
)

MASS_TOL = 1e-9

_DEFAULT_ENGINE = Engine()


def _engine(engine):
    return engine if engine is not None else _DEFAULT_ENGINE


@dataclass(frozen=True, eq=False)
class Distribution:
    """Probability mass over category tuples.

    `counts` are the raw (possibly expected, hence fractional) counts the mass
    was normalized from; for synthetic distributions they equal the mass.
    """

    support: tuple[tuple[str, ...], ...]
    mass: np.ndarray
    counts: np.ndarray = None
    dims: tuple[str, ...] = ()

    def __post_init__(self):
        support = tuple(tuple(s) if isinstance(s, (tuple, list)) else (s,) for s in self.support)
        mass = np.asarray(self.mass, dtype=np.float64)
        counts = mass if self.counts is None else np.asarray(self.counts)
        if len(support) != len(mass) or len(counts) != len(mass):
            raise ValueError("support, mass and counts must have equal length")
        if len(set(support)) != len(support):
            raise ValueError("support entries must be unique")
        if (mass < 0).any() or abs(mass.sum() - 1.0) > MASS_TOL:
            raise ValueError(f"mass must be non-negative and sum to 1, got sum {mass.sum()!r}")
        object.__setattr__(self, "support", support)
        object.__setattr__(self, "mass", mass)
        object.__setattr__(self, "counts", counts)
        object.__setattr__(self, "dims", tuple(self.dims))

    @classmethod
    def from_counts(cls, counts: Mapping, dims: Sequence[str] = ()) -> "Distribution":
        keys = list(counts)
        c = np.array([counts[k] for k in keys], dtype=np.float64)
        if c.sum() <= 0:
            raise ValueError("counts must have a positive total")
        return cls(tuple(keys), c / c.sum(), c, dims)

    @classmethod
    def from_mass(cls, mass: Sequence[float], support: Sequence = None) -> "Distribution":
        """Distribution over positional categories ("0", "1", ...) unless a support is given."""
        if support is None:
            support = [(str(i),) for i in range(len(mass))]
        return cls(tuple(support), np.asarray(mass, dtype=np.float64))

    def as_dict(self) -> dict:
        return dict(zip(self.support, self.mass.tolist()))

    def __len__(self) -> int:
        return len(self.support)

    def __repr__(self):
        body = ", ".join(f"{'|'.join(k)}: {m:.6g}" for k, m in zip(self.support, self.mass))
        return f"Distribution({body})"

    def kl_divergence(self, other: "Distribution") -> float:
        return kl_divergence(self, other)

    def js_divergence(self, other: "Distribution") -> float:
        return js_divergence(self, other)

    def lp_distance(self, other: "Distribution", p: float = 2.0) -> float:
        return lp_distance(self, other, p)

    def total_variation(self, other: "Distribution") -> float:
        return total_variation(self, other)


@dataclass(frozen=True)
class ReferenceSpec:
    """Desired distribution: uniform over the observed support, or explicit mass."""

    kind: str = "uniform"
    explicit_mass: Mapping | None = field(default=None, hash=False)

    def __post_init__(self):
        if self.kind not in ("uniform", "explicit"):
            raise ValueError(f"unknown reference kind {self.kind!r}")
        if self.kind == "explicit":
            if not self.explicit_mass:
                raise ValueError("explicit reference needs a mass mapping")
            total = sum(self.explicit_mass.values())
            if abs(total - 1.0) > MASS_TOL:
                raise ValueError(f"explicit reference mass sums to {total}, not 1")

    def resolve(self, observed: Distribution) -> Distribution:
        if self.kind == "uniform":
            k = len(observed.support)
            return Distribution(observed.support, np.full(k, 1.0 / k), dims=observed.dims)
        support, mass = [], []
        for key, m in self.explicit_mass.items():
            support.append(tuple(key.split("|")) if isinstance(key, str) else tuple(key))
            mass.append(m)
        return Distribution(tuple(support), np.array(mass), dims=observed.dims)


# --- aggregation ---------------------------------------------------------------

def _dim_codes(view: JoinedView, name: str):
    if name in view.attributes:
        col = view.attributes[name]
        return col.codes, col.categories
    if name == view.label_field:
        return view.labels, ("0", "1")
    raise MissingColumn(f"{name!r} is neither a protected attribute nor the label column")


def observed_distribution(view: JoinedView, dims: Sequence[str],
                          engine: Engine | None = None) -> Distribution:
    """Count rows per observed combination of `dims` and normalize.

    `dims` may name protected attributes and the label column. Counting is
    chunk-parallel; the resulting (small) distribution lives in memory.
    """
    if not dims:
        raise ValueError("dims must be non-empty")
    cols = [_dim_codes(view, d) for d in dims]
    keys = np.zeros(view.row_count, dtype=np.int64)
    for codes, cats in cols:
        keys = keys * len(cats) + codes
    n_keys = math.prod(len(c) for _, c in cols)
    table = ColumnarTable({"k": keys})
    counts = _engine(engine).map_reduce(
        table, lambda ch: np.bincount(ch["k"], minlength=n_keys),
        np.add, np.zeros(n_keys, dtype=np.int64))
    combos = list(itertools.product(*[c for _, c in cols]))
    seen = np.flatnonzero(counts)
    c = counts[seen]
    return Distribution(tuple(combos[i] for i in seen), c / c.sum(), c, tuple(dims))


# --- distances -----------------------------------------------------------------

def align(p: Distribution, q: Distribution) -> tuple[list, np.ndarray, np.ndarray]:
    """Masses of both distributions on the union of their supports (sorted)."""
    pm, qm = p.as_dict(), q.as_dict()
    support = sorted(set(pm) | set(qm))
    return (support, np.array([pm.get(k, 0.0) for k in support]),
            np.array([qm.get(k, 0.0) for k in support]))


def _resolve_pair(p, q):
    if isinstance(p, ReferenceSpec):
        p = p.resolve(q)
    if isinstance(q, ReferenceSpec):
        q = q.resolve(p)
    return align(p, q)


def _log_ratio(p: np.ndarray, q: np.ndarray) -> np.ndarray:
    """ln(p/q) for positive p, q; falls back to ln p - ln q where p/q overflows."""
    with np.errstate(over="ignore"):
        r = p / q
    return np.where(np.isfinite(r), np.log(r, where=np.isfinite(r), out=np.zeros_like(r)),
                    np.log(p) - np.log(q))


def _kl(p: np.ndarray, q: np.ndarray) -> float:
    nz = p > 0
    if (q[nz] == 0).any():
        return math.inf
    # >= 0 by Gibbs' inequality; rounding in masses that sum to 1 +/- ulp can dip below
    return max(float(np.sum(p[nz] * _log_ratio(p[nz], q[nz]))), 0.0)


def _kl_to_midpoint(p: np.ndarray, q: np.ndarray) -> float:
    """KL(P || (P+Q)/2) without forming the midpoint, which can underflow to 0."""
    nz = p > 0
    p, q = p[nz], q[nz]
    with np.errstate(over="ignore"):
        r = q / p
    finite = np.isfinite(r)
    log_ratio = np.where(finite, math.log(2) - np.log1p(r, where=finite, out=np.zeros_like(r)),
                         math.log(2) + np.log(p) - np.log(p + q))
    return float(np.sum(p * log_ratio))


def kl_divergence(p, q) -> float:
    """KL(P || Q) in nats; P is typically the reference, Q the observed distribution.

    Returns ``math.inf`` (with an AbsoluteContinuityWarning) when Q assigns
    zero mass to a category P supports.
    """
    support, pa, qa = _resolve_pair(p, q)
    value = _kl(pa, qa)
    if math.isinf(value):
        missing = [support[i] for i in np.flatnonzero((pa > 0) & (qa == 0))]
        warnings.warn(f"KL divergence is infinite: categories {missing} have zero mass in Q",
                      AbsoluteContinuityWarning, stacklevel=2)
    return value


def js_divergence(p, q) -> float:
    _, pa, qa = _resolve_pair(p, q)
    return max(0.5 * (_kl_to_midpoint(pa, qa) + _kl_to_midpoint(qa, pa)), 0.0)


def lp_distance(p, q, order: float = 2.0) -> float:
    """Lp norm of the mass difference; ``order=math.inf`` gives the max norm."""
    if not order >= 1:
        raise InvalidOrder(f"Lp distance needs p >= 1, got {order}")
    _, pa, qa = _resolve_pair(p, q)
    diff = np.abs(pa - qa)
    if math.isinf(order):
        return float(diff.max()) if diff.size else 0.0
    if order == 1:
        return float(diff.sum())
    return float(np.sum(diff ** order) ** (1.0 / order))


def total_variation(p, q) -> float:
    return 0.5 * lp_distance(p, q, 1)


# --- demographic parity on labels -----------------------------------------------

def group_label(group: tuple) -> str:
    return "|".join(group)


def describe_groups(groups: Sequence[tuple], limit: int = 10) -> str:
    shown = ", ".join(group_label(g) for g in groups[:limit])
    return shown + (f" and {len(groups) - limit} more" if len(groups) > limit else "")


def label_rates(view: JoinedView, group_fields: Sequence[str] | None = None,
                engine: Engine | None = None) -> dict[tuple, tuple[int, int]]:
    """(positives, rows) per group; groups without rows are omitted."""
    codes, groups = view.group_index(group_fields)
    k = len(groups)
    table = ColumnarTable({"g": codes, "y": view.labels})

    def count(ch):
        g = ch["g"]
        return np.stack([np.bincount(g, weights=ch["y"], minlength=k).astype(np.int64),
                         np.bincount(g, minlength=k)])

    pos, n = _engine(engine).map_reduce(table, count, np.add, np.zeros((2, k), dtype=np.int64))
    return {groups[i]: (int(pos[i]), int(n[i])) for i in range(k) if n[i] > 0}


def pairwise_gaps(rates: Mapping[tuple, float]) -> dict[tuple[tuple, tuple], float]:
    """|rate(g1) - rate(g2)| for every unordered pair, groups in sorted order."""
    groups = sorted(rates)
    return {(a, b): abs(rates[a] - rates[b]) for a, b in itertools.combinations(groups, 2)}


def demographic_parity_labels(view: JoinedView, group_fields: Sequence[str] | None = None,
                              engine: Engine | None = None) -> dict[tuple[tuple, tuple], float]:
    """Pairwise gaps in P(Y=1 | G=g) between protected groups."""
    if not view.label_field:
        raise MissingColumn("demographic parity on labels needs a label column")
    counts = label_rates(view, group_fields, engine)
    _, all_groups = view.group_index(group_fields)
    empty = [g for g in all_groups if g not in counts]
    if empty:
        warnings.warn(str(DegenerateGroup(f"groups without rows excluded from demographic "
                                          f"parity: {describe_groups(empty)}")),
                      FairliftWarning, stacklevel=2)
    if len(counts) < 2:
        warnings.warn(str(DegenerateGroup(
            f"demographic parity needs two non-empty groups, found {len(counts)}")),
            FairliftWarning, stacklevel=2)
        return {}
    return pairwise_gaps({g: pos / n for g, (pos, n) in counts.items()})
