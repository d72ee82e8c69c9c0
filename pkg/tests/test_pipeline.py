import dataclasses
import json
import math

import numpy as np
import pytest

from fairlift.config import load_config, parse_config
from fairlift.dataset_metrics import Distribution, ReferenceSpec, kl_divergence
from fairlift.engine import Engine
from fairlift.errors import DuplicateToken, ReportIOError
from fairlift.pipeline import compute_dataset_metrics, compute_model_performance_metrics, \
    load_view, run_pipeline
from fairlift.registry import CustomMetricSpec, MetricRegistry
from fairlift.report import FairnessReport, Undefined, read_report, report_content, write_report
from fixtures import config_text, write_csv

DISTANCE = ("INF_NORM_DIST", "TOTAL_VAR_DIST", "JS_DIVERGENCE", "KL_DIVERGENCE",
            "DEMOGRAPHIC_PARITY", "EQUALIZED_ODDS")
OVERALL = ("GENERALIZED_ENTROPY_INDEX=0.5", "THEIL_L_INDEX=", "THEIL_T_INDEX=")
BENEFIT = ("AUC", "PRECISION", "RECALL", "FPR")


def _write_inputs(tmp_path, genders, labels, scores, extra_protected=0):
    n = len(genders)
    uid = np.arange(n) + 100
    write_csv(tmp_path / "data.csv", ("uid", "label", "score"), (uid, labels, scores))
    # protected rows in a different order, plus members absent from the data
    order = np.random.default_rng(0).permutation(n)
    puid = np.concatenate([uid[order], np.arange(extra_protected) + 10 ** 6])
    pg = np.concatenate([np.asarray(genders)[order], ["M"] * extra_protected])
    write_csv(tmp_path / "protected.csv", ("memberId", "gender"), (puid, pg))
    return tmp_path / "data.csv", tmp_path / "protected.csv"


def _config(tmp_path, extra="", **kw):
    data, prot = tmp_path / "data.csv", tmp_path / "protected.csv"
    return parse_config(config_text(data, prot, tmp_path / "out" / "report.json", extra=extra, **kw))


@pytest.fixture
def synthetic(tmp_path):
    rng = np.random.default_rng(21)
    n = 3000
    genders = rng.choice(["F", "M", "U"], n, p=[0.45, 0.45, 0.1])
    labels = rng.integers(0, 2, n)
    scores = np.clip(0.35 * labels + 0.5 * rng.random(n) + 0.1 * (genders == "M"), 0, 1)
    _write_inputs(tmp_path, genders, labels, scores.round(6))
    return tmp_path


def test_report_has_every_configured_metric_once(synthetic):
    report = run_pipeline(_config(synthetic))
    doc = json.loads((synthetic / "out" / "report.json").read_text())
    assert doc == report.to_json()
    assert tuple(doc["distanceMetrics"]) == DISTANCE
    assert set(doc["distanceMetrics"]["EQUALIZED_ODDS"]) == {"label=1", "label=0"}
    assert len(doc["distanceMetrics"]["EQUALIZED_ODDS"]["label=1"]) == 3
    for token in DISTANCE[:-1]:
        assert set(doc["distanceMetrics"][token]) == {"labels", "predictions"}
    assert tuple(doc["benefitMetrics"]) == OVERALL
    assert all(tuple(doc["benefitMetrics"][o]) == BENEFIT for o in OVERALL)
    values = [doc["benefitMetrics"][o][b] for o in OVERALL for b in BENEFIT]
    assert all(isinstance(v, float) and v >= 0 for v in values)
    assert set(doc["performanceByGroup"]) == {"F", "M", "U"}
    assert doc["datasetSummary"]["rowCount"] == 3000
    assert doc["provenance"]["config"]["distanceMetrics"] == list(DISTANCE)


def test_stages_match_combined_run(synthetic):
    config = _config(synthetic)
    engine = Engine(workers=2, chunk_rows=500)
    view = load_view(config)
    combined = report_content(run_pipeline(config, engine, write=False).to_json())
    first = compute_dataset_metrics(config, view, engine)
    second = compute_model_performance_metrics(config, view, engine)
    merged = first.merge(second).to_json()
    combined.pop("provenance")
    merged.pop("provenance")
    assert merged == combined


def test_rerun_is_identical_except_timestamp(synthetic):
    config = _config(synthetic, extra="permutationTest: {metrics: 'AUC,RECALL', "
                                      "numPermutations: 200, seed: 5}")
    a = run_pipeline(config, Engine(workers=1, chunk_rows=64), write=False).to_json()
    b = run_pipeline(config, Engine(workers=8, chunk_rows=1000), write=False).to_json()
    for doc in (a, b):
        doc["provenance"].pop("engine")
    assert report_content(a) == report_content(b)
    assert json.dumps(report_content(a)) == json.dumps(report_content(b))


def test_without_scores_only_dataset_metrics(synthetic):
    report = run_pipeline(_config(synthetic, score=False))
    doc = report.to_json()
    assert doc["performanceByGroup"] == {} and doc["permutationTests"] == []
    assert doc["distanceMetrics"]["EQUALIZED_ODDS"]["value"] is None
    for token in DISTANCE[:-1]:
        assert set(doc["distanceMetrics"][token]) == {"labels"}
    assert all(v["value"] is None for o in OVERALL for v in doc["benefitMetrics"][o].values())


def test_without_labels_everything_is_null_with_reason(synthetic):
    doc = run_pipeline(_config(synthetic, score=False, label=False), write=False).to_json()
    assert all("labelField" in doc["distanceMetrics"][t]["labels"]["reason"] for t in DISTANCE[:-1])


def test_balanced_data_has_zero_divergence(tmp_path):
    genders = np.repeat(["F", "M", "U"], 40)
    labels = np.tile([0, 1], 60)
    _write_inputs(tmp_path, genders, labels, np.full(120, 0.5))
    dist = run_pipeline(_config(tmp_path), write=False).distance_metrics
    for token in ("INF_NORM_DIST", "TOTAL_VAR_DIST", "JS_DIVERGENCE", "KL_DIVERGENCE"):
        assert abs(dist[token]["labels"]) <= 1e-12


def test_skewed_gender_kl_closed_form(tmp_path):
    shares = {"F": 0.6, "M": 0.3, "U": 0.1}
    genders = np.repeat(list(shares), [6000, 3000, 1000])
    _write_inputs(tmp_path, genders, np.ones(10_000, dtype=int), np.full(10_000, 0.7))
    report = run_pipeline(_config(tmp_path), write=False)
    # all labels 1: the (gender, label) distribution is the gender distribution
    kl = report.distance_metrics["KL_DIVERGENCE"]["labels"]
    assert kl == pytest.approx(sum(math.log(1 / (3 * p)) / 3 for p in shares.values()), abs=1e-3)
    observed = Distribution.from_mass(list(shares.values()), [(g, "1") for g in shares])
    assert kl_divergence(observed, ReferenceSpec()) == pytest.approx(
        sum(p * math.log(3 * p) for p in shares.values()), abs=1e-3)


def test_single_gender_has_empty_parity_and_warning(tmp_path):
    rng = np.random.default_rng(1)
    _write_inputs(tmp_path, ["F"] * 50, rng.integers(0, 2, 50), rng.random(50).round(4))
    report = run_pipeline(_config(tmp_path, score=False), write=False)
    assert report.distance_metrics["DEMOGRAPHIC_PARITY"]["labels"] == {}
    assert any("two non-empty groups" in w for w in report.warnings)
    assert isinstance(report.distance_metrics["JS_DIVERGENCE"]["labels"], float)


def test_perfect_classifier_has_no_inequality(tmp_path):
    rng = np.random.default_rng(2)
    labels = rng.integers(0, 2, 400)
    _write_inputs(tmp_path, rng.choice(["F", "M"], 400), labels, labels.astype(float))
    report = run_pipeline(_config(tmp_path), write=False)
    eo = report.distance_metrics["EQUALIZED_ODDS"]
    assert eo == {"label=1": {"F vs M": 0.0}, "label=0": {"F vs M": 0.0}}
    for o in OVERALL:
        assert all(v == 0.0 for v in report.benefit_metrics[o].values())


def test_dropped_rows_are_counted(tmp_path):
    rng = np.random.default_rng(3)
    _write_inputs(tmp_path, rng.choice(["F", "M"], 100), rng.integers(0, 2, 100),
                  rng.random(100).round(3), extra_protected=5)
    # drop 10 data rows from the protected side
    rows = (tmp_path / "protected.csv").read_text().splitlines()
    (tmp_path / "protected.csv").write_text("\n".join(rows[:1] + rows[11:]) + "\n")
    summary = run_pipeline(_config(tmp_path), write=False).dataset_summary
    assert (summary["rowCount"], summary["matchedRows"], summary["droppedRows"]) == (100, 90, 10)


def test_custom_metrics_flow_into_report(synthetic):
    registry = MetricRegistry()
    registry.register(CustomMetricSpec(
        "MAX_RATE_RATIO", "onBenefitMap", lambda b: float(b.values.max() / b.values.min())))
    registry.register(CustomMetricSpec(
        "HELLINGER", "onDistribution",
        lambda obs, ref: float(np.sqrt(0.5 * np.sum((np.sqrt(obs.mass) - np.sqrt(ref.mass)) ** 2)))))
    registry.register(CustomMetricSpec(
        "MEAN_SCORE", "onRows", lambda labels, scores: float(np.mean(scores))))
    doc = config_text(synthetic / "data.csv", synthetic / "protected.csv", synthetic / "r.json")
    doc = doc.replace('EQUALIZED_ODDS"', 'EQUALIZED_ODDS,HELLINGER"')
    doc = doc.replace('THEIL_T_INDEX="', 'THEIL_T_INDEX=,MAX_RATE_RATIO="')
    doc = doc.replace('"AUC,PRECISION,RECALL,FPR"', '"RECALL,MEAN_SCORE"')
    doc += ", permutationTest: {metrics: 'MEAN_SCORE', numPermutations: 100}\n"
    report = run_pipeline(parse_config(doc, registry), registry=registry, write=False)
    ratio = report.benefit_metrics["MAX_RATE_RATIO="]
    entries = report.benefit_vectors["RECALL"].entries
    assert ratio["RECALL"] == pytest.approx(max(entries.values()) / min(entries.values()))
    assert set(ratio) == {"RECALL", "MEAN_SCORE"}
    assert 0 < report.distance_metrics["HELLINGER"]["labels"] < 1
    assert report.benefit_vectors["MEAN_SCORE"].metric_source == "MEAN_SCORE"
    assert {t.metric for t in report.permutation_tests} == {"MEAN_SCORE"}
    assert len(report.permutation_tests) == 3


def test_duplicate_registration():
    registry = MetricRegistry()
    spec = CustomMetricSpec("MAX_RATE_RATIO", "onBenefitMap", lambda b: 1.0)
    registry.register(spec)
    with pytest.raises(DuplicateToken):
        registry.register(spec)
    with pytest.raises(DuplicateToken):
        registry.register(CustomMetricSpec("AUC", "onRows", lambda y, s: 0.5))


def test_write_and_read_round_trip(synthetic):
    report = run_pipeline(_config(synthetic), write=False)
    path = synthetic / "nested" / "dir" / "report.json"
    write_report(report, path)
    again = read_report(path)
    assert again.to_json() == report.to_json()
    assert path.read_text(encoding="utf-8") == report.dumps()


def test_unwritable_path(tmp_path):
    blocker = tmp_path / "file"
    blocker.write_text("x")
    with pytest.raises(ReportIOError):
        write_report(FairnessReport(), blocker / "report.json")


def test_nulls_have_reasons_never_nan():
    report = FairnessReport(distance_metrics={"a": float("nan"), "b": math.inf,
                                              "c": Undefined("zero denominator"),
                                              "d": np.float64(0.25)})
    text = report.dumps()
    assert "NaN" not in text and "Infinity" not in text
    doc = json.loads(text)["distanceMetrics"]
    assert doc["a"] == {"value": None, "reason": "not a number"}
    assert doc["b"]["value"] is None and doc["c"]["reason"] == "zero denominator"
    assert doc["d"] == 0.25


def test_degenerate_group_becomes_null(tmp_path):
    genders = ["F"] * 30 + ["M"] * 30
    labels = [1] * 30 + [0, 1] * 15
    rng = np.random.default_rng(4)
    _write_inputs(tmp_path, genders, labels, rng.random(60).round(4))
    doc = run_pipeline(_config(tmp_path), write=False).to_json()
    eo0 = doc["distanceMetrics"]["EQUALIZED_ODDS"]["label=0"]["F vs M"]
    assert eo0["value"] is None and "FPR" in eo0["reason"]
    assert doc["performanceByGroup"]["F"]["AUC"]["value"] is None
    # FPR benefit vector keeps only M, so its indices are 0
    assert doc["benefitVectors"]["FPR"]["excluded"].keys() == {"F"}
    assert doc["benefitMetrics"]["THEIL_T_INDEX="]["FPR"] == 0.0


def test_raw_scores_go_through_sigmoid(tmp_path):
    _write_inputs(tmp_path, ["F", "M"] * 10, [1, 0] * 10, [0.0] * 20)
    config = dataclasses.replace(_config(tmp_path), score_type="RAW")
    view = load_view(config)
    assert np.all(view.scores == 0.5)


def test_load_config_from_file(synthetic):
    path = synthetic / "run.conf"
    path.write_text(config_text(synthetic / "data.csv", synthetic / "protected.csv",
                                synthetic / "o.json"))
    assert load_config(path).distance_metrics == DISTANCE
