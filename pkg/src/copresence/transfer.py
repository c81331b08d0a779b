"""Transfer learning: reuse a trained representation in a new environment.

The first two layers of the base model hold the learned feature
representation; freezing them and retraining only the head on the new
environment's data reaches the accuracy of a from-scratch model at a
fraction of the forward-pass training FLOPs.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from . import network
from .network import MlpModel, TrainConfig

FROZEN_LAYERS = 2
DEFAULT_TRANSFER_EPOCHS = 10


@dataclass
class TransferReport:
    full_flops: int
    trainable_flops: int
    epochs: int
    final_loss: float

    @property
    def flop_reduction(self) -> float:
        return self.full_flops / self.trainable_flops


def transfer_train(
    base: MlpModel,
    x_new: np.ndarray,
    y_new: np.ndarray,
    train_cfg: TrainConfig,
    epochs: int = DEFAULT_TRANSFER_EPOCHS,
    frozen_layers: int = FROZEN_LAYERS,
) -> tuple[MlpModel, TransferReport]:
    """Retrain the head of ``base`` on new (already normalized) data.

    The base model is copied, never mutated. Data from a different
    channel preset has a different feature dimension and is rejected.
    """
    x_new = np.asarray(x_new, dtype=float)
    if x_new.ndim != 2 or x_new.shape[1] != base.input_dim:
        raise ValueError(
            f"new data dimension {x_new.shape} does not match the base model input "
            f"dim {base.input_dim} (cross-band transfer is not supported)"
        )
    model = base.copy()
    network.freeze_prefix(model, frozen_layers)
    cfg = replace(train_cfg, epochs=epochs)
    model, history = network.train(model, x_new, y_new, cfg)
    report = TransferReport(
        full_flops=network.flops_forward(model),
        trainable_flops=network.flops_forward(model, only_trainable=True),
        epochs=epochs,
        final_loss=history[-1],
    )
    return model, report


def write_transfer_report(report: TransferReport, path) -> None:
    from pathlib import Path

    Path(path).write_text(
        "#transfer-report v1\n"
        f"full_flops={report.full_flops}\n"
        f"trainable_flops={report.trainable_flops}\n"
        f"flop_reduction={report.flop_reduction!r}\n"
        f"epochs={report.epochs}\n"
        f"final_loss={report.final_loss!r}\n"
    )
