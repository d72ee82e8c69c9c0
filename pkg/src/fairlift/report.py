"""The fairness report document and its JSON serialization."""
from __future__ import annotations

import json
import math
import os
from dataclasses import dataclass, field
from typing import Any

from .errors import ReportIOError


@dataclass(frozen=True)
class Undefined:
    """A metric with no value; carries why. Serialized as ``{"value": null, "reason": ...}``."""

    reason: str

    def to_json(self) -> dict:
        return {"value": None, "reason": self.reason}


def is_undefined_json(obj) -> bool:
    return isinstance(obj, dict) and set(obj) == {"value", "reason"} and obj["value"] is None


def jsonable(obj):
    """Convert report values into plain JSON types; never emits NaN/Infinity."""
    if isinstance(obj, Undefined):
        return obj.to_json()
    if isinstance(obj, dict):
        return {str(k): jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [jsonable(v) for v in obj]
    if hasattr(obj, "to_json"):
        return obj.to_json()
    if hasattr(obj, "item") and not isinstance(obj, (str, bytes)):
        obj = obj.item()
    if isinstance(obj, float):
        if math.isnan(obj):
            return Undefined("not a number").to_json()
        if math.isinf(obj):
            sign = "+" if obj > 0 else "-"
            return Undefined(f"{sign}infinity").to_json()
    return obj


@dataclass
class FairnessReport:
    dataset_summary: dict = field(default_factory=dict)
    distance_metrics: dict = field(default_factory=dict)
    performance_by_group: dict = field(default_factory=dict)
    benefit_vectors: dict = field(default_factory=dict)
    benefit_metrics: dict = field(default_factory=dict)
    permutation_tests: list = field(default_factory=list)
    warnings: list = field(default_factory=list)
    provenance: dict = field(default_factory=dict)

    _KEYS = (
        ("datasetSummary", "dataset_summary"),
        ("distanceMetrics", "distance_metrics"),
        ("performanceByGroup", "performance_by_group"),
        ("benefitVectors", "benefit_vectors"),
        ("benefitMetrics", "benefit_metrics"),
        ("permutationTests", "permutation_tests"),
        ("warnings", "warnings"),
        ("provenance", "provenance"),
    )

    def to_json(self) -> dict:
        return {key: jsonable(getattr(self, attr)) for key, attr in self._KEYS}

    @classmethod
    def from_json(cls, doc: dict) -> "FairnessReport":
        return cls(**{attr: doc.get(key, [] if attr in ("permutation_tests", "warnings") else {})
                      for key, attr in cls._KEYS})

    def dumps(self) -> str:
        return json.dumps(self.to_json(), indent=2, allow_nan=False, ensure_ascii=False) + "\n"

    def merge(self, other: "FairnessReport") -> "FairnessReport":
        """Combine two partial reports; nested metric entries are merged key-wise."""
        out = FairnessReport()
        for _, attr in self._KEYS:
            a, b = getattr(self, attr), getattr(other, attr)
            if isinstance(a, list):
                setattr(out, attr, list(a) + [x for x in b if x not in a])
            else:
                setattr(out, attr, _deep_merge(a, b))
        return out


def _deep_merge(a: dict, b: dict) -> dict:
    out = dict(a)
    for k, v in b.items():
        if k in out and isinstance(out[k], dict) and isinstance(v, dict):
            out[k] = _deep_merge(out[k], v)
        else:
            out[k] = v
    return out


def write_report(report: FairnessReport, path) -> None:
    """Write `report` as UTF-8 JSON with stable key order."""
    text = report.dumps()
    try:
        parent = os.path.dirname(os.fspath(path))
        if parent:
            os.makedirs(parent, exist_ok=True)
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(text)
    except OSError as exc:
        raise ReportIOError(f"cannot write report to {path}: {exc}") from exc


def read_report(path) -> FairnessReport:
    with open(path, encoding="utf-8") as fh:
        return FairnessReport.from_json(json.load(fh))


def report_content(doc: dict, drop=("timestamp",)) -> Any:
    """Copy of a report document without volatile provenance fields."""
    doc = json.loads(json.dumps(doc))
    for key in drop:
        doc.get("provenance", {}).pop(key, None)
    return doc
