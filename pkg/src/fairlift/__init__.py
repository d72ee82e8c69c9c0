"""Fairness metrics for large scored datasets: divergences, parity gaps,
inequality indices and permutation tests, computed deterministically in chunks."""

__version__ = "0.1.0"

from .config import Config, load_config, parse_config, serialize_config
from .dataset_io import ColumnarTable, JoinedView, Schema, join_protected, load_table, project
from .dataset_metrics import (
    Distribution,
    ReferenceSpec,
    demographic_parity_labels,
    js_divergence,
    kl_divergence,
    lp_distance,
    observed_distribution,
    total_variation,
)
from .engine import Engine
from .inequality import (
    BenefitMap,
    generalized_entropy_index,
    theil_l,
    theil_t,
)
from .model_metrics import (
    GeneralizedConfusionMatrix,
    ScoreType,
    auc,
    demographic_parity_predictions,
    equalized_odds,
    generalized_confusion_matrix,
    performance_by_group,
)
from .pipeline import compute_dataset_metrics, compute_model_performance_metrics, run_pipeline
from .registry import CustomMetricSpec, MetricRegistry, register_custom_metric
from .report import FairnessReport, Undefined, read_report, write_report
from .stat_tests import PermutationTestSpec, permutation_test, run_pairwise_tests

__all__ = [
    "BenefitMap", "ColumnarTable", "Config", "CustomMetricSpec", "Distribution", "Engine",
    "FairnessReport", "GeneralizedConfusionMatrix", "JoinedView", "MetricRegistry",
    "PermutationTestSpec", "ReferenceSpec", "Schema", "ScoreType", "Undefined", "auc",
    "compute_dataset_metrics", "compute_model_performance_metrics",
    "demographic_parity_labels", "demographic_parity_predictions", "equalized_odds",
    "generalized_confusion_matrix", "generalized_entropy_index", "join_protected",
    "js_divergence", "kl_divergence", "load_config", "load_table", "lp_distance",
    "observed_distribution", "parse_config", "performance_by_group", "permutation_test",
    "project", "read_report", "register_custom_metric", "run_pairwise_tests", "run_pipeline",
    "serialize_config", "theil_l", "theil_t", "total_variation", "write_report",
]
