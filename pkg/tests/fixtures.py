"""Data builders shared by the test modules.

The Adult files under tests/data/adult are the UCI census extract (32561 train
records, 16281 test records). A logistic regression is fitted on the train split
with sklearn; the protected columns (sex, race) and fnlwgt are kept out of the
feature set.
"""
from __future__ import annotations

import csv
import gzip
import textwrap
from dataclasses import dataclass
from pathlib import Path

import numpy as np

ADULT_DIR = Path(__file__).parent / "data" / "adult"
ADULT_COLUMNS = ("age", "workclass", "fnlwgt", "education", "education-num", "marital-status",
                 "occupation", "relationship", "race", "sex", "capital-gain", "capital-loss",
                 "hours-per-week", "native-country", "income")
NUMERIC = ("age", "education-num", "capital-gain", "capital-loss", "hours-per-week")
CATEGORICAL = ("workclass", "education", "marital-status", "occupation", "relationship",
               "native-country")

# per-group rates of the published Adult results table
TPR = {"Female": 0.5111, "Male": 0.5932}
FPR = {"Female": 0.0706, "Male": 0.1704}


@dataclass
class AdultSplit:
    numeric: np.ndarray       # float64 (n, len(NUMERIC))
    categorical: np.ndarray   # object  (n, len(CATEGORICAL))
    sex: np.ndarray
    race: np.ndarray
    label: np.ndarray

    def __len__(self):
        return len(self.label)


def read_adult(name: str) -> AdultSplit:
    """Parse adult.data / adult.test; '?' stays a category of its own."""
    rows = []
    with gzip.open(ADULT_DIR / f"{name}.gz", "rt", encoding="ascii") as fh:
        for line in fh:
            line = line.strip()
            if not line or line.startswith("|"):
                continue
            rows.append([f.strip() for f in line.split(",")])
    col = {c: i for i, c in enumerate(ADULT_COLUMNS)}
    pick = lambda names: [[r[col[c]] for c in names] for r in rows]  # noqa: E731
    return AdultSplit(
        numeric=np.array(pick(NUMERIC), dtype=np.float64),
        categorical=np.array(pick(CATEGORICAL), dtype=object),
        sex=np.array([r[col["sex"]] for r in rows], dtype=object),
        race=np.array([r[col["race"]] for r in rows], dtype=object),
        label=np.array([r[col["income"]].rstrip(".") == ">50K" for r in rows], dtype=np.int64),
    )


class AdultScorer:
    """One-hot + standardized features into a logistic regression."""

    def __init__(self, train: AdultSplit):
        from sklearn.linear_model import LogisticRegression
        from sklearn.preprocessing import OneHotEncoder, StandardScaler

        self.encoder = OneHotEncoder(handle_unknown="ignore").fit(train.categorical)
        self.scaler = StandardScaler().fit(train.numeric)
        self.model = LogisticRegression(max_iter=2000).fit(self.features(train), train.label)

    def features(self, split_or_numeric, categorical=None):
        import scipy.sparse as sp

        if categorical is None:
            numeric, categorical = split_or_numeric.numeric, split_or_numeric.categorical
        else:
            numeric = split_or_numeric
        return sp.hstack([sp.csr_matrix(self.scaler.transform(numeric)),
                          self.encoder.transform(categorical)], format="csr")

    def score(self, numeric, categorical, chunk_rows: int = 262_144) -> np.ndarray:
        """Positive-class probabilities, computed chunk by chunk."""
        out = np.empty(len(numeric))
        for start in range(0, len(numeric), chunk_rows):
            stop = start + chunk_rows
            x = self.features(numeric[start:stop], categorical[start:stop])
            out[start:stop] = self.model.predict_proba(x)[:, 1]
        return out


def write_csv(path: Path, header, columns) -> Path:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        w.writerows(zip(*columns))
    return path


def write_tiled_csv(path: Path, header, uid_base: np.ndarray, suffix_columns, copies: int,
                    uid_stride: int) -> Path:
    """Write `copies` replicas of a block; replica k gets uids shifted by k*uid_stride."""
    suffix = [",".join(map(str, vals)) for vals in zip(*suffix_columns)]
    base = uid_base.tolist()
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(",".join(header) + "\n")
        for k in range(copies):
            shift = k * uid_stride
            fh.write("\n".join(f"{u + shift},{s}" for u, s in zip(base, suffix)))
            fh.write("\n")
    return path


def rate_fixture(per_class: int = 10_000, seed: int = 7):
    """Rows whose hard 0/1 predictions reproduce the published group rates exactly.

    Each gender gets `per_class` positives and `per_class` negatives; the
    first round(TPR * per_class) positives (resp. FPR negatives) predict 1.
    Rows are shuffled so groups interleave.
    """
    genders, labels, preds = [], [], []
    for g in ("Female", "Male"):
        tp = round(TPR[g] * per_class)
        fp = round(FPR[g] * per_class)
        genders += [g] * (2 * per_class)
        labels += [1] * per_class + [0] * per_class
        preds += [1] * tp + [0] * (per_class - tp) + [1] * fp + [0] * (per_class - fp)
    order = np.random.default_rng(seed).permutation(len(labels))
    return (np.array(genders, dtype=object)[order], np.array(labels)[order],
            np.array(preds, dtype=np.float64)[order])


def config_text(data, protected, output, *, score=True, label=True, attributes="gender",
                extra="") -> str:
    """A config document in the unquoted comma-list style."""
    lines = [
        f"datasetPath: '{data}',",
        f"protectedDatasetPath: '{protected}',",
        f"outputPath: '{output}',",
        "uidField: 'uid',",
        f"protectedAttributeField: '{attributes}',",
        "uidProtectedAttributeField: 'memberId',",
    ]
    if label:
        lines.append("labelField: 'label',")
    if score:
        lines += ["scoreField: 'score',", "scoreType: 'PROB',"]
    lines += [
        'distanceMetrics: "INF_NORM_DIST,TOTAL_VAR_DIST,JS_DIVERGENCE,',
        '                  KL_DIVERGENCE,DEMOGRAPHIC_PARITY,',
        '                  EQUALIZED_ODDS",',
        'overallMetrics: "GENERALIZED_ENTROPY_INDEX=0.5,',
        '                 THEIL_L_INDEX=,THEIL_T_INDEX=",',
        'performanceBenefitMetrics: "AUC,PRECISION,RECALL,FPR"',
    ]
    body = "\n".join(lines)
    if extra:
        body += ",\n" + textwrap.dedent(extra).strip()
    return body + "\n"
