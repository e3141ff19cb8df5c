"""Which scene features separate the best-scored streets from the worst.

Images in the top and bottom score deciles are classified from ingested
segmentation/object features with an L2 logistic model (Newton-fitted,
per-fold standardisation, stratified cross-validation); an L1 screen
offers sparse feature selection. Coefficients are reported on the
standardised scale so magnitudes are comparable across features.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np
from scipy.special import expit

from .ranking import decile_buckets

FEATURE_SEMANTICS = ("fraction", "count")
_ZERO_COEF = 1e-9


class InterpretError(ValueError):
    pass


@dataclass
class FeatureTable:
    image_ids: list[str]
    feature_names: list[str]
    matrix: np.ndarray  # (n, p)
    semantics: dict[str, str]  # name -> fraction | count

    def rows_for(self, ids: Sequence[str]) -> np.ndarray:
        index = {img: i for i, img in enumerate(self.image_ids)}
        return self.matrix[[index[i] for i in ids]]


def read_feature_table(path: str | Path, meta_path: str | Path) -> FeatureTable:
    """Load ``image_id,<name>...`` CSV plus its semantics sidecar (JSON).

    Fraction-valued features must lie in [0, 1]; counts must be
    non-negative. Every row must carry the full column set.
    """
    with open(meta_path) as fh:
        semantics = json.load(fh)
    for name, kind in semantics.items():
        if kind not in FEATURE_SEMANTICS:
            raise InterpretError(f"{meta_path}: {name!r} semantics must be fraction|count")

    ids: list[str] = []
    rows: list[list[float]] = []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        names = header[1:]
        unknown = [n for n in names if n not in semantics]
        if unknown:
            raise InterpretError(f"{path}: features missing from metadata: {unknown}")
        for lineno, rec in enumerate(reader, start=2):
            if len(rec) != len(header):
                raise InterpretError(f"{path}:{lineno}: expected {len(header)} columns")
            ids.append(rec[0])
            rows.append([float(v) for v in rec[1:]])

    matrix = np.array(rows, dtype=float) if rows else np.zeros((0, len(names)))
    for j, name in enumerate(names):
        col = matrix[:, j] if len(rows) else np.array([])
        if semantics[name] == "fraction" and len(col) and (col.min() < 0 or col.max() > 1):
            raise InterpretError(f"{path}: fraction feature {name!r} outside [0, 1]")
        if semantics[name] == "count" and len(col) and col.min() < 0:
            raise InterpretError(f"{path}: count feature {name!r} is negative")
    return FeatureTable(ids, list(names), matrix, dict(semantics))


def label_extremes(scaled_scores: Mapping[str, float]) -> dict[str, str]:
    """Label top-decile images ``top`` and bottom-decile ``bottom``.

    The middle eighty percent is excluded. Uses the same quantile
    bucketing as the oversampling weights.
    """
    if len(scaled_scores) < 20:
        raise InterpretError("need at least 20 images to label score extremes")
    if len(set(scaled_scores.values())) < 2:
        raise InterpretError("degenerate score spread: all scores identical")
    buckets = decile_buckets(scaled_scores)
    labels = {img: "top" for img, b in buckets.items() if b == 10}
    labels.update({img: "bottom" for img, b in buckets.items() if b == 1})
    if not any(v == "top" for v in labels.values()) or not any(
        v == "bottom" for v in labels.values()
    ):
        raise InterpretError("degenerate score spread: an extreme decile is empty")
    return labels


# logistic regression internals ------------------------------------------------


def logistic_loss_grad(
    w: np.ndarray, x: np.ndarray, y: np.ndarray, l2: float
) -> tuple[float, np.ndarray]:
    """Summed log-loss with L2 penalty on all but w[0] (the intercept)."""
    z = x @ w
    loss = float(np.sum(np.logaddexp(0.0, z) - y * z))
    grad = x.T @ (expit(z) - y)
    loss += 0.5 * l2 * float(np.sum(w[1:] ** 2))
    grad[1:] += l2 * w[1:]
    return loss, grad


def _newton_logistic(
    x: np.ndarray, y: np.ndarray, l2: float, gtol: float = 1e-8, max_iter: int = 100
) -> np.ndarray:
    """Newton iterations to gradient norm < gtol; x includes the intercept column."""
    w = np.zeros(x.shape[1])
    for _ in range(max_iter):
        _, grad = logistic_loss_grad(w, x, y, l2)
        if np.linalg.norm(grad) < gtol:
            break
        p = expit(x @ w)
        curv = np.maximum(p * (1.0 - p), 1e-10)
        hess = (x * curv[:, None]).T @ x
        hess[1:, 1:] += l2 * np.eye(x.shape[1] - 1)
        try:
            step = np.linalg.solve(hess, grad)
        except np.linalg.LinAlgError:
            step = np.linalg.lstsq(hess, grad, rcond=None)[0]
        w -= step
    return w


def _standardise(train: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    mean = train.mean(axis=0)
    std = train.std(axis=0)
    std[std == 0.0] = 1.0  # constant columns carry no signal; avoid 0/0
    return mean, std


def _stratified_folds(y: np.ndarray, folds: int, seed: int) -> list[np.ndarray]:
    """Deal each class round-robin into folds after a seeded shuffle."""
    rng = np.random.default_rng(seed)
    assignment = np.empty(len(y), dtype=int)
    for cls in (0, 1):
        idx = np.flatnonzero(y == cls)
        rng.shuffle(idx)
        assignment[idx] = np.arange(len(idx)) % folds
    return [np.flatnonzero(assignment == f) for f in range(folds)]


@dataclass
class LogisticCvResult:
    coefficients: dict[str, float]  # standardised scale, full-data fit
    intercept: float
    fold_accuracies: list[float]
    mean_accuracy: float


def fit_logistic_cv(
    table: FeatureTable,
    labels: Mapping[str, str],
    folds: int = 5,
    l2: float = 1.0,
    seed: int = 0,
) -> LogisticCvResult:
    """Cross-validated top/bottom classifier with interpretable coefficients.

    Features are standardised on each training fold and the transform
    applied to its validation fold; accuracy is the mean over folds. The
    reported coefficients come from a fit on all rows (standardised on all
    rows), which is what gets plotted and interpreted.
    """
    # canonical row order: results are invariant to table row permutation
    ids = sorted(img for img in table.image_ids if img in labels)
    if folds < 2:
        raise InterpretError("folds must be >= 2")
    y = np.array([1.0 if labels[img] == "top" else 0.0 for img in ids])
    if len(np.unique(y)) < 2:
        raise InterpretError("labels contain a single class")
    if min(int((y == 1).sum()), int((y == 0).sum())) < folds:
        raise InterpretError("too few samples in a class for the requested folds")
    x = table.rows_for(ids)

    accuracies: list[float] = []
    for fold in _stratified_folds(y, folds, seed):
        mask = np.ones(len(y), dtype=bool)
        mask[fold] = False
        mean, std = _standardise(x[mask])
        xt = np.column_stack([np.ones(mask.sum()), (x[mask] - mean) / std])
        xv = np.column_stack([np.ones(len(fold)), (x[fold] - mean) / std])
        w = _newton_logistic(xt, y[mask], l2)
        pred = (expit(xv @ w) >= 0.5).astype(float)
        accuracies.append(float(np.mean(pred == y[fold])))

    mean, std = _standardise(x)
    xs = np.column_stack([np.ones(len(y)), (x - mean) / std])
    w = _newton_logistic(xs, y, l2)
    return LogisticCvResult(
        coefficients={name: float(c) for name, c in zip(table.feature_names, w[1:])},
        intercept=float(w[0]),
        fold_accuracies=accuracies,
        mean_accuracy=float(np.mean(accuracies)),
    )


def select_features(
    table: FeatureTable,
    labels: Mapping[str, str],
    l1_strength: float,
    max_iter: int = 100,
) -> list[str]:
    """L1-logistic screen: feature names whose coefficient stays non-zero.

    Coordinate descent over an IRLS working response (soft-threshold per
    coordinate), so exactly collinear duplicates keep at most one member
    active. Raises when the penalty kills every feature.
    """
    if l1_strength < 0:
        raise InterpretError("l1_strength must be non-negative")
    ids = sorted(img for img in table.image_ids if img in labels)
    y = np.array([1.0 if labels[img] == "top" else 0.0 for img in ids])
    if len(np.unique(y)) < 2:
        raise InterpretError("labels contain a single class")
    x = table.rows_for(ids)
    mean, std = _standardise(x)
    xs = (x - mean) / std
    n, p = xs.shape

    w = np.zeros(p)
    base = y.mean()
    b = math.log(base / (1.0 - base)) if 0 < base < 1 else 0.0
    for _ in range(max_iter):
        eta = b + xs @ w
        prob = expit(eta)
        wq = np.maximum(prob * (1.0 - prob), 1e-5)
        z = eta + (y - prob) / wq
        max_delta = 0.0
        for _sweep in range(100):
            delta = 0.0
            resid = z - b - xs @ w
            for j in range(p):
                rj = resid + xs[:, j] * w[j]
                num = float(np.sum(wq * xs[:, j] * rj)) / n
                den = float(np.sum(wq * xs[:, j] ** 2)) / n
                new = math.copysign(max(abs(num) - l1_strength, 0.0), num) / den
                if new != w[j]:
                    resid += xs[:, j] * (w[j] - new)
                    delta = max(delta, abs(new - w[j]))
                    w[j] = new
            new_b = b + float(np.sum(wq * resid)) / float(np.sum(wq))
            resid += b - new_b
            delta = max(delta, abs(new_b - b))
            b = new_b
            if delta < 1e-10:
                break
        max_delta = delta
        if max_delta < 1e-9:
            break

    retained = [name for name, c in zip(table.feature_names, w) if abs(c) > _ZERO_COEF]
    if not retained:
        raise InterpretError(
            f"l1_strength={l1_strength} removed every feature; try a weaker penalty"
        )
    return retained


def write_coefficients_csv(result: LogisticCvResult, path: str | Path) -> None:
    """``feature,coef,abs_rank`` sorted by coefficient magnitude."""
    ranked = sorted(result.coefficients.items(), key=lambda kv: -abs(kv[1]))
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["feature", "coef", "abs_rank"])
        for rank, (name, coef) in enumerate(ranked, start=1):
            writer.writerow([name, repr(coef), rank])


def write_cv_report(result: LogisticCvResult, path: str | Path) -> None:
    with open(path, "w") as fh:
        json.dump(
            {
                "fold_accuracies": result.fold_accuracies,
                "mean_accuracy": result.mean_accuracy,
                "intercept": result.intercept,
            },
            fh,
            indent=2,
            sort_keys=True,
        )
        fh.write("\n")
