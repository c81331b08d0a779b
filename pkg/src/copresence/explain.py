"""Input-gradient interpretability and hypothesis-ensemble hardening.

A trained classifier's input gradients say which features carry its
decision. Penalizing the gradients of chosen features during retraining
forces the network onto alternative features, yielding a family of
models ("hypotheses") that rely on progressively different parts of the
input. Their majority vote, gated on per-model AUC, hardens decisions
against samples crafted to fool any single hypothesis.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import network
from .evaluate import roc_auc
from .network import AnnotationPenalty, MlpModel, TrainConfig


class ExplainError(ValueError):
    pass


class DegenerateBaselineError(RuntimeError):
    """The unpenalized model already scores below the stopping AUC."""


@dataclass
class RrrConfig:
    lam: float = 1000.0
    importance_threshold: float = 0.10
    auc_stop: float = 0.85
    ratio_threshold: float = 0.67
    max_iterations: int = 25

    def __post_init__(self):
        if self.lam <= 0:
            raise ValueError("lam must be > 0")
        for name in ("importance_threshold", "auc_stop", "ratio_threshold"):
            v = getattr(self, name)
            if not 0.0 < v < 1.0:
                raise ValueError(f"{name} must be in (0, 1)")


@dataclass
class Hypothesis:
    model: MlpModel
    penalized: tuple[int, ...]     # sorted feature indices
    auc: float


def column_mask(n_rows: int, n_cols: int, features) -> np.ndarray:
    """Column-constant binary annotation mask penalizing ``features``."""
    mask = np.zeros((n_rows, n_cols))
    mask[:, sorted(features)] = 1.0
    return mask


def penalty(mask: np.ndarray, input_grads: np.ndarray) -> float:
    """Sum over samples and features of the squared masked input gradients."""
    mask = np.asarray(mask, dtype=float)
    input_grads = np.asarray(input_grads, dtype=float)
    if mask.shape != input_grads.shape:
        raise ExplainError(f"shape mismatch: {mask.shape} vs {input_grads.shape}")
    masked = mask * input_grads
    return float(np.sum(masked * masked))


def feature_importance(model: MlpModel, x: np.ndarray, ratio_threshold: float = 0.67) -> np.ndarray:
    """Fraction of instances on which each feature's gradient is dominant.

    Per instance the absolute input gradients are divided by their
    maximum component; a feature counts when its ratio reaches the
    threshold. Instances with an all-zero gradient carry no counts.
    """
    grads = network.input_gradients(model, x)
    peak = np.abs(grads).max(axis=1)
    alive = peak > 0.0
    if not alive.any():
        raise ExplainError("all instances have zero input gradients")
    ratios = np.abs(grads[alive]) / peak[alive, None]
    counts = (ratios >= ratio_threshold).sum(axis=0)
    return counts / grads.shape[0]


def rrr_iterate(
    x_train: np.ndarray,
    y_train: np.ndarray,
    x_test: np.ndarray,
    y_test: np.ndarray,
    cfg: RrrConfig,
    train_cfg: TrainConfig,
    model_factory=None,
) -> list[Hypothesis]:
    """Grow a hypothesis set by cumulatively penalizing dominant features.

    Iteration 0 trains unpenalized. Each following iteration adds every
    feature whose relative importance reaches the threshold to the
    penalty set, retrains with the input-gradient penalty, and records
    the test AUC. The loop stops when the AUC falls below the stopping
    value or no new feature qualifies. All models that kept the AUC bar
    are returned, plus the terminating model.
    """
    x_train = np.asarray(x_train, dtype=float)
    x_test = np.asarray(x_test, dtype=float)
    if model_factory is None:
        model_factory = lambda dim, seed: network.build_model(dim, seed=seed)

    def fit(iteration: int, penalized: set[int]) -> Hypothesis:
        seed = train_cfg.rng_seed + 104729 * iteration
        model = model_factory(x_train.shape[1], seed)
        pen = None
        if penalized:
            mask = column_mask(len(x_train), x_train.shape[1], penalized)
            pen = AnnotationPenalty(mask=mask, lam=cfg.lam)
            # Start inside the penalty's feasible set: with the penalized
            # input rows disconnected, their gradients are exactly zero and
            # the quadratic penalty holds them there while the remaining
            # features learn. From a dense random init the optimizer
            # instead settles in a stable zero-confidence equilibrium.
            model.layers[0].weights[sorted(penalized)] = 0.0
        network.train(model, x_train, y_train, replace(train_cfg, rng_seed=seed), penalty=pen)
        auc = roc_auc(network.predict_proba(model, x_test)[:, 1], y_test)
        return Hypothesis(model=model, penalized=tuple(sorted(penalized)), auc=auc)

    baseline = fit(0, set())
    if baseline.auc < cfg.auc_stop:
        raise DegenerateBaselineError(
            f"baseline AUC {baseline.auc:.3f} is already below the stop value {cfg.auc_stop}"
        )
    hypotheses = [baseline]
    penalized: set[int] = set()
    for iteration in range(1, cfg.max_iterations + 1):
        importance = feature_importance(
            hypotheses[-1].model, x_train, ratio_threshold=cfg.ratio_threshold
        )
        new = set(np.flatnonzero(importance >= cfg.importance_threshold)) - penalized
        if not new:
            break
        penalized |= new
        hyp = fit(iteration, penalized)
        hypotheses.append(hyp)
        if hyp.auc < cfg.auc_stop:
            break
    return hypotheses


@dataclass
class EnsembleGate:
    aucs: tuple[float, ...]
    auc_threshold: float
    min_models: int
    n_passing: int = field(init=False)
    passed: bool = field(init=False)

    def __post_init__(self):
        self.n_passing = sum(a >= self.auc_threshold for a in self.aucs)
        self.passed = self.n_passing >= self.min_models


def ensemble_vote(
    hypotheses: list[Hypothesis],
    x: np.ndarray,
    probe_labels=None,
    auc_threshold: float = 0.9,
    min_models: int = 3,
) -> tuple[np.ndarray, EnsembleGate]:
    """Majority vote of per-model hard decisions; ties resolve non-copresent.

    The gate reports how many models clear the AUC threshold, scored on
    the probe labels when given, otherwise on each hypothesis's recorded
    test AUC. A failed gate flags the ensemble as untrustworthy; the vote
    is still returned.
    """
    if not hypotheses:
        raise ExplainError("empty hypothesis set")
    x = np.atleast_2d(np.asarray(x, dtype=float))
    votes = np.zeros(len(x), dtype=int)
    aucs = []
    for hyp in hypotheses:
        scores = network.predict_proba(hyp.model, x)[:, 1]
        votes += (scores >= 0.5).astype(int)
        if probe_labels is not None:
            aucs.append(roc_auc(scores, probe_labels))
        else:
            aucs.append(hyp.auc)
    decisions = votes * 2 > len(hypotheses)          # strict majority, tie rejects
    gate = EnsembleGate(aucs=tuple(aucs), auc_threshold=auc_threshold, min_models=min_models)
    return decisions, gate


# -- persistence -------------------------------------------------------------

def save_hypotheses(hypotheses: list[Hypothesis], directory: str | Path,
                    pipeline_meta: dict | None = None) -> None:
    """Write one model file per hypothesis plus a manifest."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    lines = ["#hypotheses v1"]
    for i, hyp in enumerate(hypotheses):
        name = f"hypothesis_{i:03d}.model"
        network.save_model(hyp.model, directory / name, pipeline_meta=pipeline_meta)
        feats = ";".join(str(f) for f in hyp.penalized)
        lines.append(f"model={name} auc={hyp.auc!r} penalized={feats}")
    (directory / "manifest.txt").write_text("\n".join(lines) + "\n")


def load_hypotheses(directory: str | Path) -> tuple[list[Hypothesis], dict]:
    directory = Path(directory)
    manifest = directory / "manifest.txt"
    if not manifest.is_file():
        raise ExplainError(f"no manifest.txt in {directory}")
    lines = manifest.read_text().splitlines()
    if not lines or lines[0] != "#hypotheses v1":
        raise ExplainError("bad hypothesis manifest header")
    hypotheses = []
    meta: dict = {}
    for line in lines[1:]:
        if not line.strip():
            continue
        kv = dict(part.split("=", 1) for part in line.split())
        model, meta = network.load_model(directory / kv["model"])
        feats = tuple(int(f) for f in kv["penalized"].split(";") if f)
        hypotheses.append(Hypothesis(model=model, penalized=feats, auc=float(kv["auc"])))
    if not hypotheses:
        raise ExplainError(f"manifest in {directory} lists no models")
    return hypotheses, meta


def write_importance(importance: np.ndarray, path: str | Path) -> None:
    """Two-column table: feature index, relative importance."""
    lines = [f"{i}\t{v!r}" for i, v in enumerate(importance)]
    Path(path).write_text("\n".join(lines) + "\n")
