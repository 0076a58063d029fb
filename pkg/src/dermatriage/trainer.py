"""SGD fine-tuning with step LR decay, early stopping, and k-fold CV.

A training run is one logical thread of control: seeded shuffles,
mini-batches of 16, forward/backward, SGD with momentum on the trainable
parameters only, step LR decay, checkpoint at each new validation-loss
minimum, early stop when the minimum stops improving.
"""

from __future__ import annotations

import hashlib
import logging
import math
import random
import statistics
import tempfile
import time
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Callable, Literal, Sequence

import torch
import torch.nn as nn

from dermatriage.corpus.manifest import ImageRecord
from dermatriage.labels import DiseaseLabel, label_index
from dermatriage.modelzoo import (
    Checkpoint,
    ModelHandle,
    ScoreVector,
    eval_transform,
    load_image,
    save_checkpoint,
    train_transform,
)

log = logging.getLogger(__name__)

# Probabilities are clamped here before the log, so a zero probability for
# the true class yields -ln(1e-12) ~= 27.63 rather than infinity.
CE_EPSILON = 1e-12


@dataclass(frozen=True)
class TrainConfig:
    batch_size: int = 16
    learning_rate: float = 0.001
    momentum: float = 0.9
    lr_decay_factor: float = 0.1
    lr_decay_every: int = 7
    max_epochs: int = 25
    early_stop_patience: int = 5
    k_folds: int = 5
    seed: int = 0

    def __post_init__(self) -> None:
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be > 0")
        if not 0 < self.lr_decay_factor < 1:
            raise ValueError("lr_decay_factor must lie strictly between 0 and 1")
        if self.lr_decay_every < 1:
            raise ValueError("lr_decay_every must be >= 1")
        if self.max_epochs < 1:
            raise ValueError("max_epochs must be >= 1")
        if self.early_stop_patience < 1:
            raise ValueError("early_stop_patience must be >= 1")
        if self.k_folds < 2:
            raise ValueError("k_folds must be >= 2")

    def digest(self) -> str:
        items = sorted(f"{k}={v}" for k, v in asdict(self).items())
        return hashlib.sha256("\n".join(items).encode()).hexdigest()[:12]


@dataclass(frozen=True)
class EpochMetrics:
    epoch: int
    train_loss: float
    train_accuracy: float
    val_loss: float
    val_accuracy: float
    epoch_seconds: float

    def __post_init__(self) -> None:
        for name in ("train_accuracy", "val_accuracy"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{name}={v} outside [0, 1]")
        for name in ("train_loss", "val_loss"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0")

    def to_line(self) -> str:
        return (
            f"epoch={self.epoch}\ttrain_loss={self.train_loss:.6f}"
            f"\ttrain_accuracy={self.train_accuracy:.6f}\tval_loss={self.val_loss:.6f}"
            f"\tval_accuracy={self.val_accuracy:.6f}\tepoch_seconds={self.epoch_seconds:.3f}"
        )


@dataclass
class TrainingRun:
    network: str
    strategy: str
    config: TrainConfig
    history: list[EpochMetrics]
    best_epoch: int
    best_checkpoint: Checkpoint
    total_minutes: float
    stopped_early: bool

    @property
    def best_val_loss(self) -> float:
        return self.history[self.best_epoch].val_loss

    @property
    def best_val_accuracy(self) -> float:
        return self.history[self.best_epoch].val_accuracy

    def write_history(self, path: str | Path) -> Path:
        path = Path(path)
        path.write_text("".join(m.to_line() + "\n" for m in self.history), encoding="utf-8")
        return path

    def write_summary(self, path: str | Path) -> Path:
        """One-run summary: network, strategy, peak validation accuracy, minutes."""
        path = Path(path)
        lines = [
            f"network={self.network}",
            f"strategy={self.strategy}",
            f"best_val_accuracy={self.best_val_accuracy:.6f}",
            f"total_minutes={self.total_minutes:.2f}",
            f"best_epoch={self.best_epoch}",
            f"stopped_early={str(self.stopped_early).lower()}",
            f"config_digest={self.config.digest()}",
            f"checkpoint={self.best_checkpoint.weights_path}",
        ]
        path.write_text("".join(line + "\n" for line in lines), encoding="utf-8")
        return path


def cross_entropy_loss(
    scores: ScoreVector | Sequence[float] | Sequence[ScoreVector],
    true_label: DiseaseLabel | int | Sequence[DiseaseLabel | int],
) -> float:
    """-log of the probability assigned to the true class; batch mean if given
    sequences of score vectors and labels."""
    if isinstance(scores, Sequence) and scores and isinstance(scores[0], ScoreVector):
        labels = list(true_label)  # type: ignore[arg-type]
        if len(labels) != len(scores):
            raise ValueError("batch scores and labels differ in length")
        return sum(cross_entropy_loss(s, t) for s, t in zip(scores, labels)) / len(scores)
    probs = scores.probabilities if isinstance(scores, ScoreVector) else tuple(scores)
    idx = true_label if isinstance(true_label, int) else label_index(true_label)
    if not 0 <= idx < len(probs):
        raise ValueError(f"true label index {idx} out of range")
    return -math.log(max(probs[idx], CE_EPSILON))


def early_stop_check(
    val_loss_history: Sequence[float], patience: int
) -> Literal["continue", "stop"]:
    """Stop once the minimum validation loss has gone ``patience`` consecutive
    epochs without a strict improvement. Ties keep the earliest minimum."""
    if not val_loss_history:
        raise ValueError("val_loss_history must be non-empty")
    if patience < 1:
        raise ValueError("patience must be >= 1")
    best_idx = 0
    for i, loss in enumerate(val_loss_history):
        if loss < val_loss_history[best_idx]:
            best_idx = i
    stalled = len(val_loss_history) - 1 - best_idx
    return "stop" if stalled >= patience else "continue"


def lr_at_epoch(config: TrainConfig, epoch: int) -> float:
    """Step schedule: base rate decayed by the factor once per period."""
    if epoch < 0:
        raise ValueError("epoch must be >= 0")
    return config.learning_rate * config.lr_decay_factor ** (epoch // config.lr_decay_every)


def _load_tensor_batch(
    records: Sequence[ImageRecord], transform
) -> tuple[torch.Tensor, torch.Tensor]:
    images = torch.stack([transform(load_image(r.path)) for r in records])
    targets = torch.tensor([label_index(r.label) for r in records], dtype=torch.long)
    return images, targets


def _validate_records(name: str, records: Sequence[ImageRecord]) -> None:
    if not records:
        raise ValueError(f"{name} records must be non-empty")


@torch.no_grad()
def _evaluate_split(
    handle: ModelHandle, records: Sequence[ImageRecord], batch_size: int
) -> tuple[float, float]:
    handle.eval_mode()
    criterion = nn.CrossEntropyLoss(reduction="sum")
    transform = eval_transform()
    loss_sum = 0.0
    correct = 0
    for start in range(0, len(records), batch_size):
        batch = records[start : start + batch_size]
        images, targets = _load_tensor_batch(batch, transform)
        logits = handle.module(images)
        loss_sum += float(criterion(logits, targets))
        correct += int((logits.argmax(dim=1) == targets).sum())
    return loss_sum / len(records), correct / len(records)


def train(
    handle: ModelHandle,
    train_records: Sequence[ImageRecord],
    val_records: Sequence[ImageRecord],
    config: TrainConfig,
    checkpoint_dir: str | Path | None = None,
    checkpoint_name: str = "best",
) -> TrainingRun:
    """Optimize the handle's trainable parameters on the training records.

    Per epoch: seeded-shuffled mini-batches, forward/backward, SGD update,
    decayed learning rate; the best checkpoint is rewritten at each new
    validation-loss minimum and early stopping ends the run once the
    minimum stalls for the configured patience.
    """
    _validate_records("train", train_records)
    _validate_records("validation", val_records)
    if checkpoint_dir is None:
        checkpoint_dir = Path(tempfile.mkdtemp(prefix="dermatriage-ckpt-"))
    checkpoint_dir = Path(checkpoint_dir)

    torch.manual_seed(config.seed)
    shuffle_rng = random.Random(config.seed)
    criterion = nn.CrossEntropyLoss()
    optimizer = torch.optim.SGD(
        handle.trainable_parameters(), lr=config.learning_rate, momentum=config.momentum
    )
    tf_train = train_transform()

    history: list[EpochMetrics] = []
    best_checkpoint: Checkpoint | None = None
    best_val_loss = math.inf
    stopped_early = False
    started = time.perf_counter()

    train_list = list(train_records)
    for epoch in range(config.max_epochs):
        epoch_start = time.perf_counter()
        lr = lr_at_epoch(config, epoch)
        for group in optimizer.param_groups:
            group["lr"] = lr

        handle.train_mode()
        order = list(range(len(train_list)))
        shuffle_rng.shuffle(order)
        loss_sum = 0.0
        correct = 0
        for start in range(0, len(order), config.batch_size):
            batch = [train_list[i] for i in order[start : start + config.batch_size]]
            images, targets = _load_tensor_batch(batch, tf_train)
            optimizer.zero_grad()
            logits = handle.module(images)
            loss = criterion(logits, targets)
            if not torch.isfinite(loss):
                raise RuntimeError(
                    f"non-finite training loss {float(loss.detach())!r} at epoch {epoch}, "
                    f"batch starting at {start} (lr={lr:g}); aborting run"
                )
            loss.backward()
            optimizer.step()
            loss_sum += float(loss.detach()) * len(batch)
            correct += int((logits.argmax(dim=1) == targets).sum())

        train_loss = loss_sum / len(train_list)
        train_accuracy = correct / len(train_list)
        val_loss, val_accuracy = _evaluate_split(handle, val_records, config.batch_size)
        metrics = EpochMetrics(
            epoch=epoch,
            train_loss=train_loss,
            train_accuracy=train_accuracy,
            val_loss=val_loss,
            val_accuracy=val_accuracy,
            epoch_seconds=time.perf_counter() - epoch_start,
        )
        history.append(metrics)
        log.info("%s", metrics.to_line() + f"\tlr={lr:g}")

        if val_loss < best_val_loss:
            best_val_loss = val_loss
            best_checkpoint = save_checkpoint(
                handle,
                {
                    "best_epoch": epoch,
                    "best_val_loss": f"{val_loss:.6f}",
                    "best_val_accuracy": f"{val_accuracy:.6f}",
                    "config_digest": config.digest(),
                },
                checkpoint_dir / checkpoint_name,
            )
        if early_stop_check([m.val_loss for m in history], config.early_stop_patience) == "stop":
            stopped_early = True
            log.info("early stop at epoch %d (best epoch %d)", epoch, _argmin_val_loss(history))
            break

    assert best_checkpoint is not None  # max_epochs >= 1 guarantees one epoch ran
    return TrainingRun(
        network=handle.backbone.name,
        strategy=handle.strategy.value,
        config=config,
        history=history,
        best_epoch=_argmin_val_loss(history),
        best_checkpoint=best_checkpoint,
        total_minutes=(time.perf_counter() - started) / 60.0,
        stopped_early=stopped_early,
    )


def _argmin_val_loss(history: Sequence[EpochMetrics]) -> int:
    best = 0
    for i, m in enumerate(history):
        if m.val_loss < history[best].val_loss:
            best = i
    return best


@dataclass
class CrossValidationResult:
    runs: list[TrainingRun]
    mean_val_accuracy: float
    std_val_accuracy: float
    best_fold: int
    best_checkpoint: Checkpoint

    def summary(self) -> str:
        return (
            f"{len(self.runs)}-fold CV: best_val_accuracy mean={self.mean_val_accuracy:.4f} "
            f"std={self.std_val_accuracy:.4f}; best fold {self.best_fold} "
            f"(val_loss={self.runs[self.best_fold].best_val_loss:.4f})"
        )


def cross_validate(
    handle_factory: Callable[[], ModelHandle],
    folds: Sequence[Sequence[ImageRecord]],
    config: TrainConfig,
    checkpoint_dir: str | Path | None = None,
) -> CrossValidationResult:
    """Train one run per fold (validating on the held-out fold) and aggregate.

    ``handle_factory`` must return a freshly built, identically initialized
    handle on every call (pass a fixed seed to ``build_classifier``). The
    held-out fold is also the early-stopping monitor. The checkpoint with
    the lowest validation loss across folds is designated best.
    """
    if len(folds) < 2:
        raise ValueError("cross-validation needs at least 2 folds")
    if checkpoint_dir is None:
        checkpoint_dir = Path(tempfile.mkdtemp(prefix="dermatriage-cv-"))
    checkpoint_dir = Path(checkpoint_dir)

    runs: list[TrainingRun] = []
    for i in range(len(folds)):
        val_fold = list(folds[i])
        train_fold = [r for j, fold in enumerate(folds) if j != i for r in fold]
        handle = handle_factory()
        run = train(
            handle,
            train_fold,
            val_fold,
            config,
            checkpoint_dir=checkpoint_dir,
            checkpoint_name=f"fold{i}",
        )
        log.info(
            "fold %d/%d: best_val_accuracy=%.4f best_val_loss=%.4f",
            i + 1, len(folds), run.best_val_accuracy, run.best_val_loss,
        )
        runs.append(run)

    accuracies = [run.best_val_accuracy for run in runs]
    best_fold = min(range(len(runs)), key=lambda i: runs[i].best_val_loss)
    return CrossValidationResult(
        runs=runs,
        mean_val_accuracy=statistics.mean(accuracies),
        std_val_accuracy=statistics.stdev(accuracies) if len(accuracies) > 1 else 0.0,
        best_fold=best_fold,
        best_checkpoint=runs[best_fold].best_checkpoint,
    )
