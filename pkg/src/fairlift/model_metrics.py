"""Per-group model performance from probabilistic scores.

Rates come from a generalized confusion matrix: instead of thresholding, a
row with score s contributes s to the predicted-positive cell and 1 - s to
the predicted-negative cell of its label row. Scores of exactly 0/1 give the
classical counts.
"""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np
from scipy.special import expit

from .dataset_io import ColumnarTable, JoinedView
from .dataset_metrics import Distribution, _engine, group_label, pairwise_gaps
from .engine import Engine, N_LIMBS, SCALE_BITS, grouped_fixed_sums, limbs_to_int
from .errors import (
    DegenerateGroup,
    EmptyGroup,
    MissingColumn,
    ScoreOutOfRange,
    SingleClassGroup,
    UndefinedMetric,
)
from .report import Undefined

PERFORMANCE_METRICS = ("PRECISION", "RECALL", "FPR", "FNR", "ACCURACY", "AUC")
MATRIX_METRICS = ("PRECISION", "RECALL", "FPR", "FNR", "ACCURACY")


class ScoreType(str, enum.Enum):
    PROB = "PROB"
    RAW = "RAW"


def normalize_scores(view: JoinedView, score_type: ScoreType | str) -> JoinedView:
    """RAW scores go through the logistic sigmoid; PROB scores must lie in [0, 1]."""
    score_type = ScoreType(score_type)
    s = view.scores
    if score_type is ScoreType.RAW:
        return view.with_scores(expit(s))
    bad = ~((s >= 0.0) & (s <= 1.0))
    if bad.any():
        i = int(np.flatnonzero(bad)[0])
        raise ScoreOutOfRange(f"PROB score {s[i]!r} at row {i} is outside [0, 1]")
    return view


@dataclass(frozen=True)
class GeneralizedConfusionMatrix:
    exp_tp: float
    exp_fp: float
    exp_tn: float
    exp_fn: float
    n: float

    @classmethod
    def from_cells(cls, tp, fp, tn, fn) -> "GeneralizedConfusionMatrix":
        return cls(float(tp), float(fp), float(tn), float(fn), float(tp + fp + tn + fn))

    @property
    def positives(self) -> float:
        return self.exp_tp + self.exp_fn

    @property
    def negatives(self) -> float:
        return self.exp_fp + self.exp_tn

    @property
    def prevalence(self) -> float:
        return self.positives / self.n

    @property
    def negative_share(self) -> float:
        """1 - prevalence, computed from the negatives so it keeps full precision."""
        return self.negatives / self.n

    @property
    def false_discovery_rate(self) -> float:
        """1 - PRECISION without the cancellation of subtracting a rounded rate."""
        return _ratio(self.exp_fp, self.exp_tp + self.exp_fp, "false discovery rate")

    @property
    def predicted_positive_rate(self) -> float:
        return (self.exp_tp + self.exp_fp) / self.n

    def metric(self, name: str) -> float:
        return performance_metric(self, name)

    def to_json(self) -> dict:
        return {"expTP": self.exp_tp, "expFP": self.exp_fp, "expTN": self.exp_tn,
                "expFN": self.exp_fn, "n": self.n, "prevalence": self.prevalence}


def _ratio(num, den, what):
    if den == 0:
        raise UndefinedMetric(f"{what} is undefined: zero denominator")
    return num / den


def performance_metric(gcm: GeneralizedConfusionMatrix, metric: str) -> float:
    if metric == "PRECISION":
        return _ratio(gcm.exp_tp, gcm.exp_tp + gcm.exp_fp, "PRECISION")
    if metric == "RECALL":
        return _ratio(gcm.exp_tp, gcm.exp_tp + gcm.exp_fn, "RECALL")
    if metric == "FPR":
        return _ratio(gcm.exp_fp, gcm.exp_fp + gcm.exp_tn, "FPR")
    if metric == "FNR":
        return _ratio(gcm.exp_fn, gcm.exp_tp + gcm.exp_fn, "FNR")
    if metric == "ACCURACY":
        return _ratio(gcm.exp_tp + gcm.exp_tn, gcm.n, "ACCURACY")
    raise ValueError(f"{metric!r} is not a confusion-matrix metric")


# --- exact aggregation ---------------------------------------------------------

@dataclass(frozen=True)
class ConfusionSums:
    """Exact per-group sufficient statistics of generalized confusion matrices.

    ``n[g, y]`` counts rows of group g with label y; ``s[g, y]`` is the exact
    sum of their scores as an integer numerator over 2**104.
    """

    n: np.ndarray
    s: list

    def matrix(self, g: int) -> GeneralizedConfusionMatrix:
        return _matrix(int(self.n[g, 1]), int(self.n[g, 0]), self.s[g][1], self.s[g][0])

    def total(self) -> GeneralizedConfusionMatrix:
        return _matrix(int(self.n[:, 1].sum()), int(self.n[:, 0].sum()),
                       sum(x[1] for x in self.s), sum(x[0] for x in self.s))


def _matrix(n_pos: int, n_neg: int, s_pos: int, s_neg: int) -> GeneralizedConfusionMatrix:
    one = 1 << SCALE_BITS
    return GeneralizedConfusionMatrix(
        exp_tp=s_pos / one, exp_fp=s_neg / one,
        exp_tn=(n_neg * one - s_neg) / one, exp_fn=(n_pos * one - s_pos) / one,
        n=float(n_pos + n_neg))


def confusion_sums(view: JoinedView, group_fields: Sequence[str] | None = None,
                   engine: Engine | None = None, threshold: float | None = None) -> tuple:
    """Chunk-parallel exact sums per (group, label). Returns ``(ConfusionSums, groups)``."""
    if not view.label_field or not view.score_field:
        raise MissingColumn("confusion matrices need both label and score columns")
    codes, groups = view.group_index(group_fields)
    k2 = 2 * len(groups)
    table = ColumnarTable({"key": codes * 2 + view.labels, "s": view.scores})

    def count(ch):
        s = ch["s"]
        if threshold is not None:
            s = (s >= threshold).astype(np.float64)
        return (np.bincount(ch["key"], minlength=k2), grouped_fixed_sums(s, ch["key"], k2))

    def combine(a, b):
        return (a[0] + b[0], a[1] + b[1])

    counts, sums = _engine(engine).map_reduce(
        table, count, combine,
        (np.zeros(k2, dtype=np.int64), np.zeros((k2, N_LIMBS), dtype=np.int64)))
    numerators = [limbs_to_int(row) for row in sums]
    s = [(numerators[2 * g], numerators[2 * g + 1]) for g in range(len(groups))]
    return ConfusionSums(counts.reshape(-1, 2), s), groups


def generalized_confusion_matrix(view: JoinedView, group: tuple | str | None = None,
                                 group_fields: Sequence[str] | None = None,
                                 engine: Engine | None = None,
                                 threshold: float | None = None) -> GeneralizedConfusionMatrix:
    """Expected TP/FP/TN/FN over the whole view, or over one protected group."""
    sums, groups = confusion_sums(view, group_fields, engine, threshold)
    if group is None:
        if view.row_count == 0:
            raise EmptyGroup("view has no rows")
        return sums.total()
    group = (group,) if isinstance(group, str) else tuple(group)
    if group not in groups or sums.n[groups.index(group)].sum() == 0:
        raise EmptyGroup(f"group {group_label(group)!r} has no rows")
    return sums.matrix(groups.index(group))


def group_matrices(view: JoinedView, group_fields: Sequence[str] | None = None,
                   engine: Engine | None = None,
                   threshold: float | None = None) -> dict[tuple, GeneralizedConfusionMatrix]:
    """Matrix per non-empty group, in group-code order."""
    sums, groups = confusion_sums(view, group_fields, engine, threshold)
    return {g: sums.matrix(i) for i, g in enumerate(groups) if sums.n[i].sum() > 0}


# --- AUC -------------------------------------------------------------------------

def auc(labels, scores) -> float:
    """Mann-Whitney AUC: P(random positive outscores random negative), ties count 1/2.

    Counts are integers throughout, so the result is exact up to the final
    division and independent of row order.
    """
    labels = np.asarray(labels)
    scores = np.asarray(scores, dtype=np.float64)
    n_pos = int(np.count_nonzero(labels))
    n_neg = len(labels) - n_pos
    if n_pos == 0 or n_neg == 0:
        raise SingleClassGroup("AUC needs at least one positive and one negative label")
    _, inv = np.unique(scores, return_inverse=True)
    inv = inv.reshape(-1)
    pos = np.bincount(inv, weights=labels != 0).astype(np.int64)
    neg = np.bincount(inv).astype(np.int64) - pos
    neg_below = np.cumsum(neg) - neg
    twice_u = 2 * int(np.dot(pos, neg_below)) + int(np.dot(pos, neg))
    return twice_u / (2 * n_pos * n_neg)


def group_auc(view: JoinedView, group_fields: Sequence[str] | None = None
              ) -> dict[tuple, float | Undefined]:
    codes, groups = view.group_index(group_fields)
    present = np.flatnonzero(np.bincount(codes, minlength=len(groups)))
    y, s = view.labels, view.scores
    out = {}
    for g in present:
        mask = codes == g
        try:
            out[groups[g]] = auc(y[mask], s[mask])
        except UndefinedMetric as exc:
            out[groups[g]] = Undefined(str(exc))
    return out


# --- metrics on raw rows ---------------------------------------------------------

def rows_metric(labels, scores, metric: str) -> float:
    """Metric on in-memory rows (single-system path used by sampling and tests)."""
    if metric == "AUC":
        return auc(labels, scores)
    labels = np.asarray(labels)
    scores = np.asarray(scores, dtype=np.float64)
    pos = labels != 0
    tp = float(scores[pos].sum())
    fp = float(scores[~pos].sum())
    n_pos = int(pos.sum())
    gcm = GeneralizedConfusionMatrix(tp, fp, (len(labels) - n_pos) - fp, n_pos - tp,
                                     float(len(labels)))
    return performance_metric(gcm, metric)


def metric_or_undefined(fn, *args):
    try:
        value = fn(*args)
    except UndefinedMetric as exc:
        return Undefined(str(exc))
    if isinstance(value, float) and math.isnan(value):
        return Undefined("metric evaluated to NaN")
    return value


def performance_by_group(view: JoinedView, metrics: Sequence[str] = PERFORMANCE_METRICS,
                         group_fields: Sequence[str] | None = None, engine: Engine | None = None,
                         threshold: float | None = None) -> dict[tuple, dict]:
    mats = group_matrices(view, group_fields, engine, threshold)
    aucs = group_auc(view, group_fields) if "AUC" in metrics else {}
    out = {}
    for g, m in mats.items():
        row = {"matrix": m}
        for name in metrics:
            if name == "AUC":
                row[name] = aucs[g]
            else:
                row[name] = metric_or_undefined(performance_metric, m, name)
        out[g] = row
    return out


# --- parity metrics on predictions -----------------------------------------------

def demographic_parity_predictions(view: JoinedView, group_fields: Sequence[str] | None = None,
                                   engine: Engine | None = None,
                                   threshold: float | None = None
                                   ) -> dict[tuple[tuple, tuple], float]:
    """Pairwise gaps in the expected positive-prediction rate (mean score)."""
    mats = group_matrices(view, group_fields, engine, threshold)
    if len(mats) < 2:
        raise DegenerateGroup(f"demographic parity needs two non-empty groups, found {len(mats)}")
    return pairwise_gaps({g: m.predicted_positive_rate for g, m in mats.items()})


def equalized_odds_from_matrices(mats: Mapping[tuple, GeneralizedConfusionMatrix]
                                 ) -> dict[tuple[int, tuple, tuple], float | Undefined]:
    """|P(Yhat=1 | Y=y, g1) - P(Yhat=1 | Y=y, g2)|: TPR gaps for y=1, FPR gaps for y=0."""
    if len(mats) < 2:
        raise DegenerateGroup(f"equalized odds needs two non-empty groups, found {len(mats)}")
    out = {}
    for y, name in ((1, "RECALL"), (0, "FPR")):
        rates = {g: metric_or_undefined(performance_metric, m, name) for g, m in mats.items()}
        groups = sorted(rates)
        for i, a in enumerate(groups):
            for b in groups[i + 1:]:
                ra, rb = rates[a], rates[b]
                if isinstance(ra, Undefined) or isinstance(rb, Undefined):
                    bad = a if isinstance(ra, Undefined) else b
                    out[(y, a, b)] = Undefined(
                        f"{name} undefined for group {group_label(bad)!r}")
                else:
                    out[(y, a, b)] = abs(ra - rb)
    return out


def equalized_odds(view: JoinedView, group_fields: Sequence[str] | None = None,
                   engine: Engine | None = None, threshold: float | None = None):
    return equalized_odds_from_matrices(group_matrices(view, group_fields, engine, threshold))


def prediction_distribution(view: JoinedView, group_fields: Sequence[str] | None = None,
                            engine: Engine | None = None,
                            threshold: float | None = None) -> Distribution:
    """Expected distribution over (protected groups..., predicted label)."""
    mats = group_matrices(view, group_fields, engine, threshold)
    counts = {}
    for g, m in mats.items():
        counts[g + ("0",)] = m.exp_tn + m.exp_fn
        counts[g + ("1",)] = m.exp_tp + m.exp_fp
    fields = tuple(group_fields) if group_fields else view.attribute_fields
    return Distribution.from_counts({k: v for k, v in counts.items() if v > 0},
                                    fields + ("prediction",))
