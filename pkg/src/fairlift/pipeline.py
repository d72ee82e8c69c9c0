"""End-to-end driver: load, join, cache, compute metrics, write the report."""
from __future__ import annotations

import datetime as _dt
import logging
import math
import warnings
from contextlib import contextmanager

import numpy as np

from . import __version__
from .config import Config, config_to_dict
from .dataset_io import JoinedView, Schema, load_and_join
from .dataset_metrics import (
    demographic_parity_labels,
    group_label,
    js_divergence,
    kl_divergence,
    lp_distance,
    observed_distribution,
    total_variation,
)
from .engine import Engine
from .errors import FairliftError
from .inequality import INDEX_FUNCTIONS, BenefitMap, build_benefit_vector
from .model_metrics import (
    PERFORMANCE_METRICS,
    demographic_parity_predictions,
    equalized_odds_from_matrices,
    group_matrices,
    normalize_scores,
    performance_by_group,
    prediction_distribution,
)
from .registry import DEFAULT_REGISTRY, MetricRegistry
from .report import FairnessReport, Undefined, write_report
from .stat_tests import PermutationTestSpec, run_pairwise_tests

log = logging.getLogger(__name__)

_DIVERGENCES = {
    "KL_DIVERGENCE": kl_divergence,
    "JS_DIVERGENCE": js_divergence,
    "TOTAL_VAR_DIST": total_variation,
    "INF_NORM_DIST": lambda p, q: lp_distance(p, q, math.inf),
}


def build_engine(config: Config, workers: int | None = None) -> Engine:
    e = config.engine
    return Engine(workers or e.workers, e.chunk_rows, e.cache_budget_bytes, e.seed)


def load_view(config: Config) -> JoinedView:
    """Load both datasets, join them, and normalize scores."""
    schema = Schema(config.uid_field, config.label_field, config.score_field,
                    config.protected_attribute_fields)
    view = load_and_join(config.dataset_path, config.protected_dataset_path, schema,
                         config.uid_protected_attribute_field, config.dataset_format,
                         config.protected_dataset_format)
    if config.score_field:
        view = normalize_scores(view, config.score_type)
    return view


def _pairs(gaps: dict) -> dict:
    return {f"{group_label(a)} vs {group_label(b)}": v for (a, b), v in gaps.items()}


def _attempt(fn, *args):
    try:
        return fn(*args)
    except FairliftError as exc:
        return Undefined(f"{type(exc).__name__}: {exc}")


@contextmanager
def _collect_warnings(report: FairnessReport):
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        yield
    for w in caught:
        msg = str(w.message)
        if msg not in report.warnings:
            report.warnings.append(msg)


def _dataset_summary(view: JoinedView) -> dict:
    codes, groups = view.group_index()
    sizes = np.bincount(codes, minlength=len(groups))
    return {"rowCount": view.matched_rows + view.dropped_rows,
            "matchedRows": view.matched_rows,
            "droppedRows": view.dropped_rows,
            "protectedAttributes": list(view.attribute_fields),
            "groupCardinalities": {group_label(groups[i]): int(sizes[i])
                                   for i in np.flatnonzero(sizes)}}


def _resolve_view(config, view, engine):
    if view is None:
        view = engine.cache(lambda: load_view(config)).get()
    return view


def compute_dataset_metrics(config: Config, view: JoinedView | None = None,
                            engine: Engine | None = None,
                            registry: MetricRegistry | None = None) -> FairnessReport:
    """Training-data metrics: divergences of the (attributes, label) distribution
    from the reference, and demographic parity of labels."""
    registry = registry or DEFAULT_REGISTRY
    engine = engine or build_engine(config)
    view = _resolve_view(config, view, engine)
    report = FairnessReport(dataset_summary=_dataset_summary(view))
    dist = report.distance_metrics
    tokens = [t for t in config.distance_metrics if t != "EQUALIZED_ODDS"]
    if not view.label_field:
        for t in tokens:
            dist[t] = {"labels": Undefined("dataset metrics need labelField")}
        return report

    with _collect_warnings(report):
        observed = observed_distribution(view, view.attribute_fields + (view.label_field,),
                                         engine)
        reference = config.reference_distribution.resolve(observed)
        for t in tokens:
            if t == "DEMOGRAPHIC_PARITY":
                dist[t] = {"labels": _attempt(
                    lambda: _pairs(demographic_parity_labels(view, None, engine)))}
            elif t in _DIVERGENCES:
                dist[t] = {"labels": _attempt(_DIVERGENCES[t], reference, observed)}
            else:
                fn = registry.custom(t).evaluator
                dist[t] = {"labels": _attempt(fn, observed, reference)}
    return report


def _overall_value(overall, bmap: BenefitMap, registry):
    custom = registry.custom(overall.name)
    if custom is not None:
        return float(custom.evaluator(bmap))
    return INDEX_FUNCTIONS[overall.name](bmap, overall.param).value


def compute_model_performance_metrics(config: Config, view: JoinedView | None = None,
                                      engine: Engine | None = None,
                                      registry: MetricRegistry | None = None) -> FairnessReport:
    """Post-training metrics: per-group performance, prediction parity, equalized
    odds, inequality indices over benefit vectors, and permutation tests."""
    registry = registry or DEFAULT_REGISTRY
    engine = engine or build_engine(config)
    view = _resolve_view(config, view, engine)
    report = FairnessReport(dataset_summary=_dataset_summary(view))
    dist = report.distance_metrics

    if not (view.label_field and view.score_field):
        # only metrics that have no dataset-stage entry get a placeholder here
        reason = Undefined("model metrics need labelField and scoreField")
        if "EQUALIZED_ODDS" in config.distance_metrics:
            dist["EQUALIZED_ODDS"] = reason
        for o in config.overall_metrics:
            report.benefit_metrics[o.token] = {b: reason
                                               for b in config.performance_benefit_metrics}
        return report

    threshold = config.threshold
    with _collect_warnings(report):
        mats = group_matrices(view, None, engine, threshold)
        perf = performance_by_group(view, PERFORMANCE_METRICS, None, engine, threshold)
        report.performance_by_group = {
            group_label(g): {"matrix": row.pop("matrix"), **row} for g, row in perf.items()}

        predicted = None
        for t in config.distance_metrics:
            if t == "EQUALIZED_ODDS":
                eo = _attempt(equalized_odds_from_matrices, mats)
                if isinstance(eo, Undefined):
                    dist[t] = eo
                else:
                    dist[t] = {f"label={y}": {f"{group_label(a)} vs {group_label(b)}": v
                                              for (yy, a, b), v in eo.items() if yy == y}
                               for y in (1, 0)}
            elif t == "DEMOGRAPHIC_PARITY":
                dist[t] = {"predictions": _attempt(
                    lambda: _pairs(demographic_parity_predictions(view, None, engine,
                                                                  threshold)))}
            else:
                if predicted is None:
                    predicted = prediction_distribution(view, None, engine, threshold)
                    reference = config.reference_distribution.resolve(predicted)
                if t in _DIVERGENCES:
                    dist[t] = {"predictions": _attempt(_DIVERGENCES[t], reference, predicted)}
                else:
                    fn = registry.custom(t).evaluator
                    dist[t] = {"predictions": _attempt(fn, predicted, reference)}

        for b in config.performance_benefit_metrics:
            custom = registry.custom(b)
            metric = custom.evaluator if custom is not None else b
            bmap = _attempt(build_benefit_vector, view, metric, None, engine, threshold, b)
            report.benefit_vectors[b] = bmap
            for o in config.overall_metrics:
                entry = report.benefit_metrics.setdefault(o.token, {})
                if isinstance(bmap, Undefined):
                    entry[b] = bmap
                else:
                    entry[b] = _attempt(_overall_value, o, bmap, registry)
        for o in config.overall_metrics:
            report.benefit_metrics.setdefault(o.token, {})

        pt = config.permutation_test
        if pt is not None:
            seed = config.engine.seed if pt.seed is None else pt.seed
            for name in pt.metrics:
                custom = registry.custom(name)
                spec = PermutationTestSpec(custom.evaluator if custom else name,
                                           pt.num_permutations, pt.sample_size, seed, name)
                report.permutation_tests.extend(run_pairwise_tests(view, spec, None, engine))
    return report


def run_pipeline(config: Config, engine: Engine | None = None,
                 registry: MetricRegistry | None = None, write: bool = True) -> FairnessReport:
    """load -> join -> cache -> dataset metrics -> model metrics -> tests -> report."""
    engine = engine or build_engine(config)
    handle = engine.cache(lambda: load_view(config))
    view = handle.get()
    log.info("joined view: %d rows matched, %d dropped", view.matched_rows, view.dropped_rows)
    report = compute_dataset_metrics(config, view, engine, registry)
    report = report.merge(compute_model_performance_metrics(config, view, engine, registry))
    seed = config.engine.seed
    report.provenance = {
        "version": __version__,
        "config": config_to_dict(config),
        "seeds": {"engine": seed,
                  "permutationTest": None if config.permutation_test is None else
                  (seed if config.permutation_test.seed is None
                   else config.permutation_test.seed)},
        "engine": {"workers": engine.workers, "chunkRows": engine.chunk_rows},
        "timestamp": _dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds"),
    }
    if write and config.output_path:
        write_report(report, config.output_path)
    return report


__all__ = ["build_engine", "load_view", "compute_dataset_metrics",
           "compute_model_performance_metrics", "run_pipeline", "write_report"]
