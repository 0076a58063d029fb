"""Trainer: loss fixtures, early stopping, LR schedule, optimization contracts."""

from __future__ import annotations

import math
import random
from pathlib import Path

import pytest
import torch
import torch.nn as nn
from hypothesis import given, settings
from hypothesis import strategies as st

from dermatriage.corpus import ingest
from dermatriage.corpus.manifest import Split
from dermatriage.labels import CANONICAL_LABELS, DiseaseLabel
from dermatriage.modelzoo import (
    ScoreVector,
    TuningStrategy,
    build_classifier,
    eval_transform,
    load_checkpoint,
)
from dermatriage.trainer import (
    CE_EPSILON,
    TrainConfig,
    cross_entropy_loss,
    cross_validate,
    early_stop_check,
    lr_at_epoch,
    train,
)

from conftest import CLASS_COLORS, make_corpus_tree, solid_image


# -- cross-entropy -------------------------------------------------------------


def one_hot(index: int) -> ScoreVector:
    probs = [0.0] * 9
    probs[index] = 1.0
    return ScoreVector(tuple(probs))


def test_ce_one_hot_correct_is_zero():
    assert cross_entropy_loss(one_hot(4), 4) == 0.0


def test_ce_uniform_is_ln9():
    uniform = ScoreVector(tuple([1.0 / 9] * 9))
    assert cross_entropy_loss(uniform, DiseaseLabel.CRUST) == pytest.approx(math.log(9), abs=1e-9)


def test_ce_half_is_ln2():
    probs = [0.5] + [0.5 / 8] * 8
    assert cross_entropy_loss(ScoreVector(tuple(probs)), 0) == pytest.approx(math.log(2), abs=1e-12)


def test_ce_zero_probability_clamped_not_infinite():
    loss = cross_entropy_loss(one_hot(2), 0)  # true-class probability is 0
    assert loss == pytest.approx(-math.log(CE_EPSILON))
    assert math.isfinite(loss)


def test_ce_batch_mean():
    scores = [one_hot(0), ScoreVector(tuple([1.0 / 9] * 9))]
    expected = (0.0 + math.log(9)) / 2
    assert cross_entropy_loss(scores, [0, 3]) == pytest.approx(expected, abs=1e-9)


# -- early stopping --------------------------------------------------------------


def test_early_stop_improving_continues():
    assert early_stop_check([1.0, 0.9, 0.8], patience=5) == "continue"


def test_early_stop_fires_after_patience_exhausted():
    history = [1.0, 0.9, 0.91, 0.92, 0.93, 0.94, 0.95]
    assert early_stop_check(history[:6], patience=5) == "continue"
    assert early_stop_check(history, patience=5) == "stop"


def test_early_stop_new_minimum_resets():
    assert early_stop_check([1.0, 0.9, 0.95, 0.85], patience=2) == "continue"


@given(
    history=st.lists(st.floats(min_value=0.01, max_value=10.0), min_size=1, max_size=40),
    patience=st.integers(min_value=1, max_value=10),
)
@settings(max_examples=200, deadline=None)
def test_early_stop_soundness(history, patience):
    # if a stop fires, the stop epoch is at least best_epoch + patience
    best = min(range(len(history)), key=lambda i: (history[i], i))
    decision = early_stop_check(history, patience)
    if decision == "stop":
        assert len(history) - 1 >= best + patience
    else:
        assert len(history) - 1 - best < patience


# -- learning-rate schedule --------------------------------------------------------


def test_lr_base():
    assert lr_at_epoch(TrainConfig(), 0) == 0.001


def test_lr_before_first_decay():
    assert lr_at_epoch(TrainConfig(), 6) == 0.001


def test_lr_after_one_period():
    assert lr_at_epoch(TrainConfig(), 7) == pytest.approx(0.0001)
    assert lr_at_epoch(TrainConfig(), 14) == pytest.approx(0.00001)


def test_config_invariants():
    with pytest.raises(ValueError):
        TrainConfig(batch_size=0)
    with pytest.raises(ValueError):
        TrainConfig(learning_rate=0)
    with pytest.raises(ValueError):
        TrainConfig(lr_decay_factor=1.0)
    with pytest.raises(ValueError):
        TrainConfig(early_stop_patience=0)
    with pytest.raises(ValueError):
        TrainConfig(k_folds=1)


# -- gradient contracts ------------------------------------------------------------


def _two_image_batch() -> tuple[torch.Tensor, torch.Tensor]:
    transform = eval_transform()
    images = torch.stack(
        [transform(solid_image(CLASS_COLORS[i], noise_seed=i)) for i in range(2)]
    )
    return images, torch.tensor([0, 1])


def test_head_gradient_matches_central_differences():
    handle = build_classifier("ResNet18", strategy="HEAD_ONLY", pretrained=False, seed=5)
    module = handle.module.double().eval()
    images, targets = _two_image_batch()
    images = images.double()
    criterion = nn.CrossEntropyLoss()

    captured: dict[str, torch.Tensor] = {}
    hook = handle.head.register_forward_hook(
        lambda mod, inp, out: captured.__setitem__("features", inp[0].detach())
    )
    module.zero_grad()
    loss = criterion(module(images), targets)
    loss.backward()
    hook.remove()
    analytic_w = handle.head.weight.grad.detach().clone()
    analytic_b = handle.head.bias.grad.detach().clone()

    # Finite differences through the head alone: the frozen backbone's
    # features do not depend on head parameters, so this is the same loss
    # surface restricted to the head.
    features = captured["features"]

    def head_loss(weight: torch.Tensor, bias: torch.Tensor) -> float:
        return float(criterion(features @ weight.t() + bias, targets))

    weight = handle.head.weight.detach().clone()
    bias = handle.head.bias.detach().clone()
    eps = 1e-6
    rng = random.Random(0)
    coords = [(rng.randrange(9), rng.randrange(512)) for _ in range(30)]
    worst = 0.0
    for i, j in coords:
        bumped = weight.clone()
        bumped[i, j] += eps
        up = head_loss(bumped, bias)
        bumped[i, j] -= 2 * eps
        down = head_loss(bumped, bias)
        fd = (up - down) / (2 * eps)
        a = float(analytic_w[i, j])
        worst = max(worst, abs(fd - a) / max(abs(a), abs(fd), 1e-10))
    for i in range(9):
        bumped = bias.clone()
        bumped[i] += eps
        up = head_loss(weight, bumped)
        bumped[i] -= 2 * eps
        down = head_loss(weight, bumped)
        fd = (up - down) / (2 * eps)
        a = float(analytic_b[i])
        worst = max(worst, abs(fd - a) / max(abs(a), abs(fd), 1e-10))
    assert worst <= 1e-3


def test_single_sgd_step_descends_on_fixed_batch():
    handle = build_classifier("ResNet18", strategy="FULL", pretrained=False, seed=8)
    images, targets = _two_image_batch()
    criterion = nn.CrossEntropyLoss()
    optimizer = torch.optim.SGD(handle.trainable_parameters(), lr=1e-4, momentum=0.0)
    handle.module.train()
    first = criterion(handle.module(images), targets)
    optimizer.zero_grad()
    first.backward()
    optimizer.step()
    with torch.no_grad():
        second = criterion(handle.module(images), targets)
    assert float(second) < float(first.detach())


# -- training loop ------------------------------------------------------------------


def _tiny_split(tmp_path: Path, labels=3, per_class=3):
    tree = make_corpus_tree(tmp_path / "corpus", per_class=per_class, side=32)
    manifest = ingest(tree)
    train_records, val_records = [], []
    for label in CANONICAL_LABELS[:labels]:
        records = manifest.select(label=label)
        train_records.extend(r.with_split(Split.TRAIN) for r in records[:-1])
        val_records.extend(r.with_split(Split.VALIDATION) for r in records[-1:])
    return train_records, val_records


def _fast_config(**overrides) -> TrainConfig:
    defaults = dict(batch_size=4, max_epochs=2, seed=17)
    defaults.update(overrides)
    return TrainConfig(**defaults)


def test_head_only_training_leaves_backbone_bit_identical(tmp_path):
    train_records, val_records = _tiny_split(tmp_path)
    handle = build_classifier("ResNet18", strategy="HEAD_ONLY", pretrained=False, seed=2)
    head_names = handle.head_parameter_names()
    before = {
        n: p.detach().clone() for n, p in handle.module.named_parameters() if n not in head_names
    }
    run = train(handle, train_records, val_records, _fast_config(), checkpoint_dir=tmp_path / "ck")
    for name, param in handle.module.named_parameters():
        if name in head_names:
            continue
        assert torch.equal(param.detach(), before[name]), f"frozen {name} drifted"
    assert len(run.history) == 2


def test_full_training_updates_backbone(tmp_path):
    train_records, val_records = _tiny_split(tmp_path)
    handle = build_classifier("ResNet18", strategy="FULL", pretrained=False, seed=2)
    head_names = handle.head_parameter_names()
    before = {
        n: p.detach().clone() for n, p in handle.module.named_parameters() if n not in head_names
    }
    train(handle, train_records, val_records, _fast_config(max_epochs=1), checkpoint_dir=tmp_path / "ck")
    changed = any(
        not torch.equal(p.detach(), before[n])
        for n, p in handle.module.named_parameters()
        if n not in head_names
    )
    assert changed


def test_training_run_records_best_epoch_and_checkpoint(tmp_path):
    train_records, val_records = _tiny_split(tmp_path)
    handle = build_classifier("ResNet18", strategy="FULL", pretrained=False, seed=4)
    run = train(handle, train_records, val_records, _fast_config(), checkpoint_dir=tmp_path / "ck")
    losses = [m.val_loss for m in run.history]
    assert run.best_epoch == losses.index(min(losses))
    assert run.best_checkpoint.weights_path.exists()
    assert run.total_minutes * 60 >= sum(m.epoch_seconds for m in run.history) - 1e-6
    for m in run.history:
        assert 0.0 <= m.train_accuracy <= 1.0
        assert 0.0 <= m.val_accuracy <= 1.0
        assert m.train_loss >= 0 and m.val_loss >= 0
    loaded = load_checkpoint(run.best_checkpoint.weights_path)
    assert loaded.backbone.name == "ResNet18"


def test_training_reproducible_with_same_seed(tmp_path):
    train_records, val_records = _tiny_split(tmp_path)

    def run_once(tag: str):
        handle = build_classifier("ResNet18", strategy="FULL", pretrained=False, seed=21)
        run = train(
            handle, train_records, val_records, _fast_config(), checkpoint_dir=tmp_path / tag
        )
        # wall-clock excluded: it can never repeat
        return [(m.train_loss, m.train_accuracy, m.val_loss, m.val_accuracy) for m in run.history]

    assert run_once("a") == run_once("b")


def test_train_rejects_empty_splits(tmp_path):
    train_records, val_records = _tiny_split(tmp_path)
    handle = build_classifier("ResNet18", strategy="FULL", pretrained=False)
    with pytest.raises(ValueError, match="non-empty"):
        train(handle, [], val_records, _fast_config())
    with pytest.raises(ValueError, match="non-empty"):
        train(handle, train_records, [], _fast_config())


def test_train_writes_history_and_summary(tmp_path):
    train_records, val_records = _tiny_split(tmp_path)
    handle = build_classifier("ResNet18", strategy="FULL", pretrained=False, seed=4)
    run = train(handle, train_records, val_records, _fast_config(max_epochs=1), checkpoint_dir=tmp_path)
    history_path = run.write_history(tmp_path / "r.history")
    lines = history_path.read_text().splitlines()
    assert len(lines) == 1
    assert lines[0].startswith("epoch=0\ttrain_loss=")
    summary_path = run.write_summary(tmp_path / "r.summary")
    body = summary_path.read_text()
    assert "network=ResNet18" in body
    assert "strategy=FULL" in body
    assert "best_val_accuracy=" in body
    assert "total_minutes=" in body


# -- cross-validation -----------------------------------------------------------------


def test_cross_validate_smallest_legal_case(tmp_path):
    # 2 folds over 4 records: each run trains on 2, validates on 2
    tree = make_corpus_tree(tmp_path / "corpus", per_class=2, side=32)
    manifest = ingest(tree)
    records = [
        r.with_split(Split.TRAIN)
        for r in manifest.records
        if r.label in (CANONICAL_LABELS[0], CANONICAL_LABELS[1])
    ]
    folds = [records[0::2], records[1::2]]
    result = cross_validate(
        lambda: build_classifier("ResNet18", strategy="FULL", pretrained=False, seed=3),
        folds,
        _fast_config(max_epochs=1, batch_size=2),
        checkpoint_dir=tmp_path / "cv",
    )
    assert len(result.runs) == 2
    assert result.best_fold in (0, 1)
    assert result.best_checkpoint.weights_path.exists()
    assert 0.0 <= result.mean_val_accuracy <= 1.0


def test_cross_validate_requires_two_folds(tmp_path):
    with pytest.raises(ValueError, match="2 folds"):
        cross_validate(lambda: None, [[]], _fast_config())
