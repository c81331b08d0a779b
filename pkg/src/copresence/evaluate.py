"""Stratified cross-validation and the AUC / EER / FAR / FRR metric suite.

Scores are the predicted probability of the copresent class. A sample is
accepted (predicted copresent) when its score is at or above a threshold,
so FAR falls and FRR rises as the threshold sweeps upward.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import network
from .features import FeatureMatrix, apply_scaling, fit_variance_scaling

DEFAULT_FOLDS = 5
DEFAULT_FOLD_SEED = 123


class MetricError(ValueError):
    pass


@dataclass
class FoldPlan:
    k: int
    seed: int
    assignments: np.ndarray    # fold id per sample

    def __post_init__(self):
        self.assignments = np.asarray(self.assignments, dtype=int)

    def test_indices(self, fold: int) -> np.ndarray:
        return np.flatnonzero(self.assignments == fold)

    def train_indices(self, fold: int) -> np.ndarray:
        return np.flatnonzero(self.assignments != fold)


def _check_two_classes(labels: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    labels = np.asarray(labels, dtype=int)
    pos = labels == 1
    neg = labels == 0
    if not pos.any() or not neg.any():
        raise MetricError("need both copresent and non-copresent samples")
    if not np.all(pos | neg):
        raise MetricError("labels must be binary (unlabeled rows present?)")
    return pos, neg


def stratified_folds(labels, k: int = DEFAULT_FOLDS, seed: int = DEFAULT_FOLD_SEED) -> FoldPlan:
    """Seeded shuffle, then per-class round robin into k folds.

    The round-robin start rotates by each class's remainder so fold sizes
    differ by at most one while every fold keeps the class ratio to
    within one sample.
    """
    labels = np.asarray(labels, dtype=int)
    n = len(labels)
    if n < k:
        raise MetricError(f"need at least k={k} samples, got {n}")
    _check_two_classes(labels)
    order = np.random.default_rng(seed).permutation(n)
    assignments = np.empty(n, dtype=int)
    offset = 0
    for cls in (0, 1):
        members = order[labels[order] == cls]
        for j, idx in enumerate(members):
            assignments[idx] = (offset + j) % k
        offset = (offset + len(members)) % k
    return FoldPlan(k=k, seed=seed, assignments=assignments)


def _average_ranks(values: np.ndarray) -> np.ndarray:
    order = np.argsort(values, kind="mergesort")
    sorted_vals = values[order]
    ranks = np.empty(len(values))
    i = 0
    while i < len(values):
        j = i
        while j + 1 < len(values) and sorted_vals[j + 1] == sorted_vals[i]:
            j += 1
        ranks[order[i:j + 1]] = 0.5 * (i + j) + 1.0
        i = j + 1
    return ranks


def roc_auc(scores, labels) -> float:
    """Probability a random positive outranks a random negative (ties count half)."""
    scores = np.asarray(scores, dtype=float)
    pos, neg = _check_two_classes(labels)
    ranks = _average_ranks(scores)
    n_pos, n_neg = int(pos.sum()), int(neg.sum())
    rank_sum = ranks[pos].sum()
    return float((rank_sum - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg))


def roc_points(scores, labels) -> np.ndarray:
    """(threshold, FAR, FRR, TPR) rows over all distinct-score thresholds."""
    scores = np.asarray(scores, dtype=float)
    pos, neg = _check_two_classes(labels)
    thresholds = np.concatenate(([-np.inf], np.unique(scores), [np.inf]))
    pos_scores = scores[pos]
    neg_scores = scores[neg]
    rows = []
    for t in thresholds:
        far = float(np.mean(neg_scores >= t))
        frr = float(np.mean(pos_scores < t))
        rows.append((float(t), far, frr, 1.0 - frr))
    return np.array(rows)


def eer(scores, labels) -> tuple[float, float]:
    """Equal error rate and its threshold.

    Sweeps all distinct thresholds; when FAR and FRR never meet exactly,
    interpolates linearly between the bracketing thresholds.
    """
    points = roc_points(scores, labels)
    t, far, frr = points[:, 0], points[:, 1], points[:, 2]
    diff = far - frr
    k = int(np.argmax(diff <= 0.0))          # first index past the crossing
    if diff[k] == 0.0:
        return float(far[k]), float(t[k])
    alpha = diff[k - 1] / (diff[k - 1] - diff[k])
    value = far[k - 1] + alpha * (far[k] - far[k - 1])
    if np.isinf(t[k - 1]) or np.isinf(t[k]):
        threshold = t[k] if np.isinf(t[k - 1]) else t[k - 1]
    else:
        threshold = t[k - 1] + alpha * (t[k] - t[k - 1])
    return float(value), float(threshold)


@dataclass
class FoldMetrics:
    fold: int
    auc: float
    eer: float
    eer_threshold: float
    n_test: int


@dataclass
class EvalReport:
    k: int
    fold_seed: int
    folds: list[FoldMetrics]
    auc: float
    eer: float
    eer_threshold: float
    roc: np.ndarray
    scores: np.ndarray = field(repr=False)
    labels: np.ndarray = field(repr=False)


def default_model_factory(input_dim: int, seed: int) -> network.MlpModel:
    return network.build_model(input_dim, seed=seed)


def cross_validate(
    fm: FeatureMatrix,
    cfg: network.TrainConfig,
    k: int = DEFAULT_FOLDS,
    fold_seed: int = DEFAULT_FOLD_SEED,
    model_factory=default_model_factory,
) -> EvalReport:
    """Stratified k-fold protocol over a raw (unnormalized) feature matrix.

    Scaling statistics are fit on each fold's training rows only.
    Aggregate metrics pool the out-of-fold scores of all samples.
    """
    plan = stratified_folds(fm.labels, k=k, seed=fold_seed)
    pooled = np.empty(fm.n)
    fold_metrics = []
    for fold in range(k):
        train_idx = plan.train_indices(fold)
        test_idx = plan.test_indices(fold)
        train_fm = fm.rows(train_idx)
        stats = fit_variance_scaling(train_fm)
        x_train = apply_scaling(train_fm, stats).data
        x_test = apply_scaling(fm.rows(test_idx), stats).data
        fold_cfg = replace(cfg, rng_seed=cfg.rng_seed + 7919 * (fold + 1))
        model = model_factory(fm.dim, fold_cfg.rng_seed)
        network.train(model, x_train, fm.labels[train_idx], fold_cfg)
        scores = network.predict_proba(model, x_test)[:, 1]
        pooled[test_idx] = scores
        f_auc = roc_auc(scores, fm.labels[test_idx])
        f_eer, f_thr = eer(scores, fm.labels[test_idx])
        fold_metrics.append(FoldMetrics(fold, f_auc, f_eer, f_thr, len(test_idx)))
    total_auc = roc_auc(pooled, fm.labels)
    total_eer, total_thr = eer(pooled, fm.labels)
    return EvalReport(
        k=k, fold_seed=fold_seed, folds=fold_metrics,
        auc=total_auc, eer=total_eer, eer_threshold=total_thr,
        roc=roc_points(pooled, fm.labels), scores=pooled, labels=fm.labels.copy(),
    )


# -- report emission ---------------------------------------------------------

def write_report(report: EvalReport, path: str | Path) -> None:
    lines = [
        "#eval-report v1",
        f"folds={report.k}",
        f"fold_seed={report.fold_seed}",
        f"auc={report.auc!r}",
        f"eer={report.eer!r}",
        f"eer_threshold={report.eer_threshold!r}",
    ]
    for fm in report.folds:
        lines.append(
            f"fold={fm.fold} auc={fm.auc!r} eer={fm.eer!r} "
            f"eer_threshold={fm.eer_threshold!r} n_test={fm.n_test}"
        )
    Path(path).write_text("\n".join(lines) + "\n")


def write_roc_points(report: EvalReport, path: str | Path) -> None:
    lines = ["#roc-points v1 threshold,far,frr,tpr"]
    for t, far, frr, tpr in report.roc:
        lines.append(f"{t!r},{far!r},{frr!r},{tpr!r}")
    Path(path).write_text("\n".join(lines) + "\n")


def render_roc_svg(report: EvalReport, path: str | Path, size: int = 360) -> None:
    """Standalone SVG of the ROC curve (TPR against FAR), no plotting deps."""
    margin = 40.0
    span = size - 2 * margin

    def sx(v: float) -> float:
        return margin + v * span

    def sy(v: float) -> float:
        return size - margin - v * span

    pts = sorted((float(far), float(tpr)) for _, far, _, tpr in report.roc)
    poly = " ".join(f"{sx(x):.2f},{sy(y):.2f}" for x, y in pts)
    svg = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{size}" height="{size}" '
        f'viewBox="0 0 {size} {size}">',
        f'<rect x="{margin}" y="{margin}" width="{span}" height="{span}" '
        'fill="white" stroke="black"/>',
        f'<line x1="{sx(0):.2f}" y1="{sy(0):.2f}" x2="{sx(1):.2f}" y2="{sy(1):.2f}" '
        'stroke="#bbbbbb" stroke-dasharray="4 4"/>',
        f'<polyline points="{poly}" fill="none" stroke="#c03030" stroke-width="1.5"/>',
        f'<text x="{size / 2:.0f}" y="{size - 8:.0f}" text-anchor="middle" '
        'font-size="12">false accept rate</text>',
        f'<text x="12" y="{size / 2:.0f}" font-size="12" text-anchor="middle" '
        f'transform="rotate(-90 12 {size / 2:.0f})">true positive rate</text>',
        f'<text x="{sx(0.98):.0f}" y="{sy(0.02):.0f}" text-anchor="end" font-size="12">'
        f"AUC={report.auc:.4f} EER={report.eer:.4f}</text>",
        "</svg>",
    ]
    Path(path).write_text("\n".join(svg) + "\n")
