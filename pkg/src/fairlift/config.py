"""Configuration language.

A config is a list of ``key: value`` members separated by commas, optionally
wrapped in braces. Keys may be bare or quoted; strings use single or double
quotes and may span lines; ``//`` starts a comment. Lists may hold
``key: value`` pairs (``['GENERALIZED_ENTROPY_INDEX': '0.5']``), and metric
lists may also be one comma-separated string::

    'distanceMetrics': ['DEMOGRAPHIC_PARITY', 'EQUALIZED_ODDS'],
    overallMetrics: "GENERALIZED_ENTROPY_INDEX=0.5, THEIL_L_INDEX=",

Plain JSON is a subset, and is what `serialize_config` emits.
"""
from __future__ import annotations

import json
import math
import re
from dataclasses import dataclass, field

from .dataset_metrics import ReferenceSpec
from .engine import DEFAULT_CHUNK_ROWS
from .errors import ConfigError, ConfigSyntaxError, MissingRequiredKey, UnknownMetricToken
from .model_metrics import ScoreType
from .registry import DEFAULT_REGISTRY, MetricRegistry
from .stat_tests import DEFAULT_PERMUTATIONS, DEFAULT_SAMPLE_SIZE

_BARE = re.compile(r"[A-Za-z_][A-Za-z0-9_.\-]*")
_NUMBER = re.compile(r"-?(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?")
_ESCAPES = {"n": "\n", "t": "\t", "r": "\r", "\\": "\\", "'": "'", '"': '"', "/": "/"}


class Pair(tuple):
    """A ``key: value`` item inside a list."""

    def __new__(cls, key, value):
        return super().__new__(cls, (key, value))


class _Parser:
    def __init__(self, text: str):
        self.text = text
        self.pos = 0

    def error(self, message, pos=None):
        pos = self.pos if pos is None else pos
        line = self.text.count("\n", 0, pos) + 1
        col = pos - (self.text.rfind("\n", 0, pos) + 1) + 1
        raise ConfigSyntaxError(message, line, col)

    def peek(self):
        return self.text[self.pos] if self.pos < len(self.text) else ""

    def skip(self):
        text = self.text
        while self.pos < len(text):
            c = text[self.pos]
            if c.isspace():
                self.pos += 1
            elif text.startswith("//", self.pos):
                nl = text.find("\n", self.pos)
                self.pos = len(text) if nl < 0 else nl + 1
            else:
                break

    def expect(self, char):
        self.skip()
        if self.peek() != char:
            self.error(f"expected {char!r}, found {self.peek() or 'end of input'!r}")
        self.pos += 1

    def document(self) -> dict:
        self.skip()
        if self.peek() == "{":
            result = self.obj()
        else:
            result = self.members("")
        self.skip()
        if self.pos < len(self.text):
            self.error(f"unexpected {self.peek()!r} after end of document")
        return result

    def members(self, close) -> dict:
        out = {}
        while True:
            self.skip()
            if self.peek() == close:
                return out
            start = self.pos
            key = self.key()
            if key in out:
                self.error(f"duplicate key {key!r}", start)
            self.expect(":")
            out[key] = self.value()
            self.skip()
            if self.peek() == ",":
                self.pos += 1
            elif self.peek() != close:
                self.error(f"expected ',' or {close or 'end of input'!r} after value of {key!r}")

    def obj(self) -> dict:
        self.expect("{")
        out = self.members("}")
        self.pos += 1
        return out

    def key(self) -> str:
        c = self.peek()
        if c in "'\"":
            return self.string()
        m = _BARE.match(self.text, self.pos)
        if not m:
            self.error("expected a key")
        self.pos = m.end()
        return m.group()

    def string(self) -> str:
        quote = self.text[self.pos]
        start = self.pos
        self.pos += 1
        out = []
        while True:
            if self.pos >= len(self.text):
                self.error("unterminated string", start)
            c = self.text[self.pos]
            if c == quote:
                self.pos += 1
                return "".join(out)
            if c == "\\":
                nxt = self.text[self.pos + 1: self.pos + 2]
                if nxt not in _ESCAPES:
                    self.error(f"bad escape \\{nxt}")
                out.append(_ESCAPES[nxt])
                self.pos += 2
                continue
            out.append(c)
            self.pos += 1

    def value(self):
        self.skip()
        c = self.peek()
        if c in "'\"":
            return self.string()
        if c == "[":
            return self.array()
        if c == "{":
            return self.obj()
        m = _NUMBER.match(self.text, self.pos)
        if m:
            self.pos = m.end()
            text = m.group()
            return float(text) if any(ch in text for ch in ".eE") else int(text)
        m = _BARE.match(self.text, self.pos)
        if m:
            self.pos = m.end()
            return {"true": True, "false": False, "null": None}.get(m.group(), m.group())
        self.error(f"expected a value, found {c or 'end of input'!r}")

    def array(self) -> list:
        self.expect("[")
        out = []
        while True:
            self.skip()
            if self.peek() == "]":
                self.pos += 1
                return out
            item = self.value()
            self.skip()
            if self.peek() == ":":
                self.pos += 1
                item = Pair(item, self.value())
                self.skip()
            out.append(item)
            if self.peek() == ",":
                self.pos += 1
            elif self.peek() != "]":
                self.error(f"expected ',' or ']', found {self.peek() or 'end of input'!r}")


def parse_document(text: str) -> dict:
    return _Parser(text).document()


# --- typed configuration ---------------------------------------------------------

@dataclass(frozen=True)
class OverallMetric:
    name: str
    param: float | None = None

    @property
    def token(self) -> str:
        return f"{self.name}=" if self.param is None else f"{self.name}={self.param:g}"

    def __str__(self):
        return self.token


@dataclass(frozen=True)
class EngineSettings:
    workers: int | None = None
    chunk_rows: int = DEFAULT_CHUNK_ROWS
    cache_budget_bytes: int | None = None
    seed: int = 0


@dataclass(frozen=True)
class PermutationTestConfig:
    metrics: tuple[str, ...] = ("RECALL",)
    num_permutations: int = DEFAULT_PERMUTATIONS
    sample_size: int = DEFAULT_SAMPLE_SIZE
    seed: int | None = None


@dataclass(frozen=True)
class Config:
    dataset_path: str | None = None
    protected_dataset_path: str | None = None
    output_path: str | None = None
    uid_field: str | None = None
    label_field: str | None = None
    score_field: str | None = None
    score_type: ScoreType | None = None
    protected_attribute_fields: tuple[str, ...] = ()
    uid_protected_attribute_field: str | None = None
    distance_metrics: tuple[str, ...] = ()
    performance_benefit_metrics: tuple[str, ...] = ()
    overall_metrics: tuple[OverallMetric, ...] = ()
    reference_distribution: ReferenceSpec = field(default_factory=ReferenceSpec)
    engine: EngineSettings = field(default_factory=EngineSettings)
    permutation_test: PermutationTestConfig | None = None
    threshold: float | None = None
    dataset_format: str | None = None
    protected_dataset_format: str | None = None

    @property
    def protected_attribute_field(self) -> str:
        return ",".join(self.protected_attribute_fields)


_STRING_KEYS = {
    "datasetPath": "dataset_path",
    "protectedDatasetPath": "protected_dataset_path",
    "outputPath": "output_path",
    "uidField": "uid_field",
    "labelField": "label_field",
    "scoreField": "score_field",
    "uidProtectedAttributeField": "uid_protected_attribute_field",
    "datasetFormat": "dataset_format",
    "protectedDatasetFormat": "protected_dataset_format",
}
_REQUIRED = ("datasetPath", "protectedDatasetPath", "outputPath", "uidField",
             "protectedAttributeField", "uidProtectedAttributeField")
_KNOWN = set(_STRING_KEYS) | {
    "scoreType", "protectedAttributeField", "distanceMetrics", "performanceBenefitMetrics",
    "overallMetrics", "referenceDistribution", "engine", "permutationTest", "threshold"}


def _split_tokens(value, key) -> list:
    """Accept a list of strings/pairs or a single comma-separated string."""
    if value is None:
        return []
    if isinstance(value, str):
        return [t.strip() for t in value.split(",") if t.strip()]
    if isinstance(value, list):
        out = []
        for item in value:
            if isinstance(item, Pair):
                out.append(item)
            elif isinstance(item, str):
                out.extend(_split_tokens(item, key))
            else:
                raise ConfigError(f"{key}: expected metric tokens, got {item!r}")
        return out
    raise ConfigError(f"{key}: expected a list or comma-separated string, got {value!r}")


def _overall(item) -> OverallMetric:
    if isinstance(item, Pair):
        name, param = item
    elif "=" in item:
        name, param = item.split("=", 1)
    else:
        name, param = item, None
    name = str(name).strip()
    if isinstance(param, str):
        param = param.strip() or None
    if param is not None:
        try:
            param = float(param)
        except (TypeError, ValueError):
            raise ConfigError(f"overallMetrics: parameter of {name} must be a number, "
                              f"got {param!r}") from None
    return OverallMetric(name, param)


def _check_tokens(tokens, allowed, key):
    for t in tokens:
        if t not in allowed:
            raise UnknownMetricToken(f"{key}: unknown metric token {t!r}")


def _int(value, key, minimum=None):
    if isinstance(value, bool) or not isinstance(value, (int, float)) or value != int(value):
        raise ConfigError(f"{key} must be an integer, got {value!r}")
    value = int(value)
    if minimum is not None and value < minimum:
        raise ConfigError(f"{key} must be >= {minimum}, got {value}")
    return value


def config_from_dict(doc: dict, registry: MetricRegistry | None = None,
                     partial: bool = False) -> Config:
    """Validate a parsed document. `partial` allows fragments without paths/keys."""
    registry = registry or DEFAULT_REGISTRY
    unknown = set(doc) - _KNOWN
    if unknown:
        raise ConfigError(f"unknown configuration keys: {sorted(unknown)}")
    if not partial:
        missing = [k for k in _REQUIRED if doc.get(k) in (None, "")]
        if missing:
            raise MissingRequiredKey(f"missing required keys: {missing}")
    kw = {}
    for key, attr in _STRING_KEYS.items():
        if key in doc and doc[key] is not None:
            if not isinstance(doc[key], str) or not doc[key]:
                raise ConfigError(f"{key} must be a non-empty string")
            kw[attr] = doc[key]

    attrs = doc.get("protectedAttributeField")
    if attrs is not None:
        kw["protected_attribute_fields"] = tuple(
            a for a in _split_tokens(attrs, "protectedAttributeField") if isinstance(a, str))

    if doc.get("scoreType") is not None:
        try:
            kw["score_type"] = ScoreType(str(doc["scoreType"]).upper())
        except ValueError:
            raise ConfigError(f"scoreType must be PROB or RAW, got {doc['scoreType']!r}") from None
    elif "score_field" in kw:
        raise MissingRequiredKey("scoreType is required when scoreField is set")

    distance = _split_tokens(doc.get("distanceMetrics"), "distanceMetrics")
    benefit = _split_tokens(doc.get("performanceBenefitMetrics"), "performanceBenefitMetrics")
    if any(isinstance(t, Pair) for t in distance + benefit):
        raise ConfigError("distanceMetrics / performanceBenefitMetrics take no parameters")
    _check_tokens(distance, registry.tokens("distance"), "distanceMetrics")
    _check_tokens(benefit, registry.tokens("benefit"), "performanceBenefitMetrics")
    overall = [_overall(t) for t in _split_tokens(doc.get("overallMetrics"), "overallMetrics")]
    _check_tokens([o.name for o in overall], registry.tokens("overall"), "overallMetrics")
    for o in overall:
        if o.name == "GENERALIZED_ENTROPY_INDEX":
            if o.param is None or not math.isfinite(o.param):
                raise ConfigError("GENERALIZED_ENTROPY_INDEX needs a finite alpha, "
                                  "e.g. GENERALIZED_ENTROPY_INDEX=0.5")
            if o.param in (0.0, 1.0):
                raise ConfigError("GENERALIZED_ENTROPY_INDEX alpha 0/1: use THEIL_L_INDEX / "
                                  "THEIL_T_INDEX")
    kw["distance_metrics"] = tuple(distance)
    kw["performance_benefit_metrics"] = tuple(benefit)
    kw["overall_metrics"] = tuple(overall)

    ref = doc.get("referenceDistribution")
    if ref is not None:
        try:
            if isinstance(ref, str):
                kw["reference_distribution"] = ReferenceSpec(ref)
            elif isinstance(ref, dict):
                kw["reference_distribution"] = ReferenceSpec(ref.get("kind", "explicit"),
                                                             ref.get("mass"))
            else:
                raise ValueError(f"bad referenceDistribution {ref!r}")
        except ValueError as exc:
            raise ConfigError(f"referenceDistribution: {exc}") from None

    eng = doc.get("engine")
    if eng is not None:
        if not isinstance(eng, dict):
            raise ConfigError("engine must be an object")
        extra = set(eng) - {"workers", "chunkRows", "cacheBudgetBytes", "seed"}
        if extra:
            raise ConfigError(f"unknown engine keys: {sorted(extra)}")
        kw["engine"] = EngineSettings(
            workers=None if eng.get("workers") is None else _int(eng["workers"], "workers", 1),
            chunk_rows=_int(eng.get("chunkRows", DEFAULT_CHUNK_ROWS), "chunkRows", 1),
            cache_budget_bytes=None if eng.get("cacheBudgetBytes") is None
            else _int(eng["cacheBudgetBytes"], "cacheBudgetBytes", 0),
            seed=_int(eng.get("seed", 0), "seed"))

    pt = doc.get("permutationTest")
    if pt is not None:
        if not isinstance(pt, dict):
            raise ConfigError("permutationTest must be an object")
        extra = set(pt) - {"metrics", "numPermutations", "sampleSize", "seed"}
        if extra:
            raise ConfigError(f"unknown permutationTest keys: {sorted(extra)}")
        metrics = _split_tokens(pt.get("metrics", "RECALL"), "permutationTest.metrics")
        _check_tokens(metrics, registry.tokens("benefit"), "permutationTest.metrics")
        kw["permutation_test"] = PermutationTestConfig(
            tuple(metrics),
            _int(pt.get("numPermutations", DEFAULT_PERMUTATIONS), "numPermutations", 1),
            _int(pt.get("sampleSize", DEFAULT_SAMPLE_SIZE), "sampleSize", 2),
            None if pt.get("seed") is None else _int(pt["seed"], "seed"))

    if doc.get("threshold") is not None:
        t = doc["threshold"]
        if isinstance(t, bool) or not isinstance(t, (int, float)) or not 0 <= t <= 1:
            raise ConfigError(f"threshold must be a number in [0, 1], got {t!r}")
        kw["threshold"] = float(t)
    return Config(**kw)


def parse_config(text: str, registry: MetricRegistry | None = None,
                 partial: bool = False) -> Config:
    return config_from_dict(parse_document(text), registry, partial)


def load_config(path, registry: MetricRegistry | None = None, partial: bool = False) -> Config:
    try:
        with open(path, encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    return parse_config(text, registry, partial)


def config_to_dict(config: Config) -> dict:
    doc = {}
    for key, attr in _STRING_KEYS.items():
        if getattr(config, attr) is not None:
            doc[key] = getattr(config, attr)
    if config.score_type is not None:
        doc["scoreType"] = config.score_type.value
    if config.protected_attribute_fields:
        doc["protectedAttributeField"] = config.protected_attribute_field
    doc["distanceMetrics"] = list(config.distance_metrics)
    doc["performanceBenefitMetrics"] = list(config.performance_benefit_metrics)
    doc["overallMetrics"] = [
        o.name if o.param is None else f"{o.name}={o.param!r}" for o in config.overall_metrics]
    ref = config.reference_distribution
    doc["referenceDistribution"] = ref.kind if ref.kind == "uniform" else {
        "kind": ref.kind, "mass": dict(ref.explicit_mass)}
    e = config.engine
    doc["engine"] = {"workers": e.workers, "chunkRows": e.chunk_rows,
                     "cacheBudgetBytes": e.cache_budget_bytes, "seed": e.seed}
    if config.permutation_test is not None:
        p = config.permutation_test
        doc["permutationTest"] = {"metrics": list(p.metrics), "numPermutations": p.num_permutations,
                                  "sampleSize": p.sample_size, "seed": p.seed}
    if config.threshold is not None:
        doc["threshold"] = config.threshold
    return doc


def serialize_config(config: Config) -> str:
    return json.dumps(config_to_dict(config), indent=2) + "\n"
