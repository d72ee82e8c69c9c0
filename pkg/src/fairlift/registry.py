"""Metric tokens usable in configurations, including user-registered ones."""
from __future__ import annotations

import threading
from dataclasses import dataclass
from typing import Callable

from .errors import DuplicateToken
from .model_metrics import PERFORMANCE_METRICS

DISTANCE_TOKENS = ("KL_DIVERGENCE", "JS_DIVERGENCE", "TOTAL_VAR_DIST", "INF_NORM_DIST",
                   "DEMOGRAPHIC_PARITY", "EQUALIZED_ODDS")
BENEFIT_TOKENS = PERFORMANCE_METRICS
OVERALL_TOKENS = ("GENERALIZED_ENTROPY_INDEX", "THEIL_L_INDEX", "THEIL_T_INDEX")

ON_DISTRIBUTION = "onDistribution"
ON_BENEFIT_MAP = "onBenefitMap"
ON_ROWS = "onRows"

# which config list each custom kind may appear in
_KIND_SECTION = {ON_DISTRIBUTION: "distance", ON_BENEFIT_MAP: "overall", ON_ROWS: "benefit"}


@dataclass(frozen=True)
class CustomMetricSpec:
    """A user-defined metric.

    Evaluator signatures by kind:
      onDistribution: ``f(observed: Distribution, reference: Distribution) -> float``
      onBenefitMap:   ``f(benefits: BenefitMap) -> float``
      onRows:         ``f(labels: ndarray, scores: ndarray) -> float``
    """

    name: str
    kind: str
    evaluator: Callable

    def __post_init__(self):
        if self.kind not in _KIND_SECTION:
            raise ValueError(f"unknown custom metric kind {self.kind!r}")
        if not self.name or "=" in self.name or "," in self.name:
            raise ValueError(f"invalid metric name {self.name!r}")


class MetricRegistry:
    def __init__(self):
        self._custom: dict[str, CustomMetricSpec] = {}
        self._lock = threading.Lock()

    @property
    def builtin(self) -> frozenset:
        return frozenset(DISTANCE_TOKENS + BENEFIT_TOKENS + OVERALL_TOKENS)

    def register(self, spec: CustomMetricSpec) -> CustomMetricSpec:
        with self._lock:
            if spec.name in self.builtin or spec.name in self._custom:
                raise DuplicateToken(f"metric token {spec.name!r} is already registered")
            self._custom[spec.name] = spec
        return spec

    def unregister(self, name: str) -> None:
        with self._lock:
            self._custom.pop(name, None)

    def custom(self, name: str) -> CustomMetricSpec | None:
        return self._custom.get(name)

    def tokens(self, section: str) -> frozenset:
        base = {"distance": DISTANCE_TOKENS, "benefit": BENEFIT_TOKENS,
                "overall": OVERALL_TOKENS}[section]
        extra = (n for n, s in self._custom.items() if _KIND_SECTION[s.kind] == section)
        return frozenset(base) | frozenset(extra)

    def __contains__(self, name) -> bool:
        return name in self.builtin or name in self._custom


DEFAULT_REGISTRY = MetricRegistry()


def register_custom_metric(spec: CustomMetricSpec,
                           registry: MetricRegistry | None = None) -> CustomMetricSpec:
    return (registry or DEFAULT_REGISTRY).register(spec)
