"""Benefit vectors and inequality indices (generalized entropy, Theil L/T).

Indices are unweighted: each group contributes one element to the benefit
vector regardless of its size.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Callable, Mapping, Sequence

import numpy as np

from .dataset_io import JoinedView
from .dataset_metrics import group_label
from .engine import Engine
from .errors import (
    AllGroupsUndefined,
    FairliftWarning,
    InvalidAlpha,
    NonpositiveBenefit,
    NonpositiveMean,
    UndefinedMetric,
)
from .model_metrics import MATRIX_METRICS, group_auc, group_matrices, metric_or_undefined, \
    performance_metric
from .report import Undefined


@dataclass(frozen=True, eq=False)
class BenefitMap:
    entries: Mapping[tuple, float]
    metric_source: str = ""
    excluded: Mapping[tuple, str] = field(default_factory=dict)

    def __post_init__(self):
        if not self.entries:
            raise ValueError("a benefit map needs at least one entry")
        object.__setattr__(self, "entries", dict(self.entries))

    @classmethod
    def from_values(cls, values: Mapping, metric_source: str = "") -> "BenefitMap":
        """Keep defined values; undefined ones go to `excluded` with their reason."""
        entries, excluded = {}, {}
        for g, v in values.items():
            if isinstance(v, Undefined):
                excluded[g] = v.reason
            elif v is None or (isinstance(v, float) and math.isnan(v)):
                excluded[g] = "metric undefined"
            else:
                entries[g] = float(v)
        if not entries:
            raise AllGroupsUndefined(f"{metric_source or 'benefit metric'} is undefined for "
                                     f"every group: {excluded}")
        return cls(entries, metric_source, excluded)

    @property
    def values(self) -> np.ndarray:
        return np.array(list(self.entries.values()), dtype=np.float64)

    @property
    def mean(self) -> float:
        return float(self.values.mean())

    def __len__(self) -> int:
        return len(self.entries)

    def to_json(self) -> dict:
        out = {"metric": self.metric_source,
               "entries": {group_label(g) if isinstance(g, tuple) else str(g): v
                           for g, v in self.entries.items()},
               "mean": self.mean}
        if self.excluded:
            out["excluded"] = {group_label(g) if isinstance(g, tuple) else str(g): r
                               for g, r in self.excluded.items()}
        return out


@dataclass(frozen=True)
class InequalityIndex:
    kind: str
    value: float
    alpha: float | None = None

    def __float__(self) -> float:
        return self.value


def _benefits(b) -> np.ndarray:
    if isinstance(b, BenefitMap):
        return b.values
    arr = np.asarray(list(b.values()) if isinstance(b, Mapping) else b, dtype=np.float64)
    if arr.size == 0:
        raise ValueError("empty benefit vector")
    return arr


def _all_equal(v: np.ndarray) -> bool:
    return bool(np.all(v == v[0]))


def generalized_entropy_index(b, alpha: float) -> InequalityIndex:
    """GE(alpha) = 1/(n alpha (alpha-1)) * sum((b_i/mu)**alpha - 1)."""
    if alpha in (0, 1):
        raise InvalidAlpha("alpha 0 and 1 are the Theil L and T limits; use theil_l/theil_t")
    v = _benefits(b)
    if (v < 0).any():
        raise NonpositiveBenefit("benefits must be non-negative")
    # equal benefits are perfect equality, including the all-zero vector
    if _all_equal(v):
        return InequalityIndex("GEI", 0.0, alpha)
    mu = v.mean()
    if not mu > 0:
        raise NonpositiveMean("benefit mean must be positive")
    if alpha < 0 and (v == 0).any():
        raise NonpositiveBenefit(f"zero benefit with alpha={alpha} < 0")
    # expm1(alpha ln r) keeps precision as alpha approaches the Theil limits
    with np.errstate(divide="ignore"):
        terms = np.expm1(alpha * np.log(v / mu))
    value = float(np.sum(terms) / (len(v) * alpha * (alpha - 1.0)))
    return InequalityIndex("GEI", max(value, 0.0), alpha)


def _positive_benefits(b, kind) -> np.ndarray:
    v = _benefits(b)
    if (v < 0).any():
        raise NonpositiveBenefit(f"{kind} needs positive benefits")
    if _all_equal(v):
        return v
    if (v == 0).any():
        warnings.warn(f"{kind}: {int((v == 0).sum())} zero benefits excluded",
                      FairliftWarning, stacklevel=3)
        v = v[v > 0]
        if v.size == 0:
            raise NonpositiveBenefit(f"{kind} needs at least one positive benefit")
    return v


def theil_t(b) -> InequalityIndex:
    """T = mean((b/mu) * ln(b/mu)); the alpha -> 1 limit of GE."""
    v = _positive_benefits(b, "THEIL_T")
    if _all_equal(v):
        return InequalityIndex("THEIL_T", 0.0)
    r = v / v.mean()
    return InequalityIndex("THEIL_T", max(float(np.mean(r * np.log(r))), 0.0))


def theil_l(b) -> InequalityIndex:
    """L = mean(ln(mu/b)); the alpha -> 0 limit of GE."""
    v = _positive_benefits(b, "THEIL_L")
    if _all_equal(v):
        return InequalityIndex("THEIL_L", 0.0)
    return InequalityIndex("THEIL_L", max(float(np.mean(np.log(v.mean() / v))), 0.0))


INDEX_FUNCTIONS = {
    "GENERALIZED_ENTROPY_INDEX": lambda b, alpha: generalized_entropy_index(b, alpha),
    "THEIL_L_INDEX": lambda b, alpha=None: theil_l(b),
    "THEIL_T_INDEX": lambda b, alpha=None: theil_t(b),
}


def build_benefit_vector(view: JoinedView, metric: str | Callable,
                         group_fields: Sequence[str] | None = None,
                         engine: Engine | None = None, threshold: float | None = None,
                         name: str | None = None) -> BenefitMap:
    """One benefit per protected group: a built-in performance token, or a
    callable ``f(labels, scores) -> float`` evaluated on each group's rows."""
    if callable(metric):
        codes, groups = view.group_index(group_fields)
        present = np.flatnonzero(np.bincount(codes, minlength=len(groups)))
        values = {}
        for g in present:
            mask = codes == g
            values[groups[g]] = metric_or_undefined(metric, view.labels[mask], view.scores[mask])
        return BenefitMap.from_values(values, name or getattr(metric, "__name__", "custom"))
    if metric == "AUC":
        return BenefitMap.from_values(group_auc(view, group_fields), metric)
    if metric not in MATRIX_METRICS:
        raise UndefinedMetric(f"unknown benefit metric {metric!r}")
    mats = group_matrices(view, group_fields, engine, threshold)
    return BenefitMap.from_values(
        {g: metric_or_undefined(performance_metric, m, metric) for g, m in mats.items()}, metric)
