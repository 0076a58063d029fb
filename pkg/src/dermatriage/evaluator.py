"""Held-out test scoring: confusion matrix, top-1 accuracy, latency, comparisons.

Percentages are rounded to one decimal for display while the raw counts
are always retained, so nothing is lost to rounding. "Top-1 accuracy" is
the micro average (total correct over total); the macro average (mean of
per-class accuracies) is reported alongside and labeled as such.
"""

from __future__ import annotations

import logging
import statistics
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

from dermatriage.corpus.manifest import ImageRecord, Split
from dermatriage.labels import CANONICAL_LABELS, NUM_CLASSES, DiseaseLabel, label_index
from dermatriage.modelzoo import ImageDecodeError, ModelHandle, ScoreVector

log = logging.getLogger(__name__)


class EvaluationError(ValueError):
    pass


@dataclass(frozen=True)
class PredictionPair:
    record_id: str
    true_label: DiseaseLabel
    predicted_label: DiseaseLabel
    scores: ScoreVector


@dataclass(frozen=True)
class ConfusionMatrix:
    counts: tuple[tuple[int, ...], ...]  # indexed [actual][predicted]

    def __post_init__(self) -> None:
        if len(self.counts) != NUM_CLASSES or any(len(row) != NUM_CLASSES for row in self.counts):
            raise ValueError(f"confusion matrix must be {NUM_CLASSES}x{NUM_CLASSES}")

    @property
    def total(self) -> int:
        return sum(sum(row) for row in self.counts)

    @property
    def trace(self) -> int:
        return sum(self.counts[i][i] for i in range(NUM_CLASSES))

    def row_total(self, actual_index: int) -> int:
        return sum(self.counts[actual_index])

    @property
    def row_percentages(self) -> tuple[tuple[float, ...], ...]:
        """Rows as percentages at one-decimal precision; all-zero rows stay zero.

        Tenths are allocated by largest remainder so every sampled row sums
        to exactly 100.0; independent per-cell rounding can drift by up to
        0.4 over nine cells.
        """
        rows = []
        for row in self.counts:
            n = sum(row)
            if n == 0:
                rows.append(tuple(0.0 for _ in row))
                continue
            exact_tenths = [1000.0 * c / n for c in row]
            base = [int(t) for t in exact_tenths]
            owed = 1000 - sum(base)
            order = sorted(
                range(len(row)), key=lambda i: (-(exact_tenths[i] - base[i]), i)
            )
            for i in order[:owed]:
                base[i] += 1
            rows.append(tuple(b / 10.0 for b in base))
        return tuple(rows)

    @property
    def empty_classes(self) -> tuple[DiseaseLabel, ...]:
        """Classes with no test samples, flagged so zero rows are not misread."""
        return tuple(
            CANONICAL_LABELS[i] for i in range(NUM_CLASSES) if self.row_total(i) == 0
        )

    @property
    def per_class_accuracy(self) -> tuple[float, ...]:
        out = []
        for i in range(NUM_CLASSES):
            n = self.row_total(i)
            out.append(self.counts[i][i] / n if n else 0.0)
        return tuple(out)

    def render(self) -> str:
        names = [lab.value for lab in CANONICAL_LABELS]
        width = max(len(n) for n in names) + 2
        header = " " * width + "".join(f"{n[:10]:>11}" for n in names)
        lines = [header]
        for i, row in enumerate(self.row_percentages):
            cells = "".join(f"{p:>10.1f}%" for p in row)
            suffix = "  (no samples)" if self.row_total(i) == 0 else ""
            lines.append(f"{names[i]:<{width}}{cells}{suffix}")
        return "\n".join(lines)


def confusion_matrix(pairs: Sequence[PredictionPair]) -> ConfusionMatrix:
    """Tally (actual, predicted) counts over the pairs."""
    if not pairs:
        raise EvaluationError("cannot build a confusion matrix from zero pairs")
    grid = [[0] * NUM_CLASSES for _ in range(NUM_CLASSES)]
    for pair in pairs:
        grid[label_index(pair.true_label)][label_index(pair.predicted_label)] += 1
    return ConfusionMatrix(tuple(tuple(row) for row in grid))


def top1_accuracy(pairs: Sequence[PredictionPair]) -> float:
    """Fraction of pairs whose predicted label equals the true label."""
    if not pairs:
        raise EvaluationError("cannot compute accuracy over zero pairs")
    correct = sum(1 for p in pairs if p.predicted_label is p.true_label)
    return correct / len(pairs)


@dataclass(frozen=True)
class LatencyStats:
    mean_seconds: float
    p50_seconds: float
    p95_seconds: float
    device: str
    samples: int
    repetitions: int


def _percentile(sorted_values: list[float], q: float) -> float:
    if len(sorted_values) == 1:
        return sorted_values[0]
    pos = q * (len(sorted_values) - 1)
    lo = int(pos)
    hi = min(lo + 1, len(sorted_values) - 1)
    frac = pos - lo
    return sorted_values[lo] * (1 - frac) + sorted_values[hi] * frac


def latency_benchmark(
    model: ModelHandle | Callable[[object], ScoreVector],
    sample_images: Sequence[object],
    repetitions: int = 5,
) -> LatencyStats:
    """Serialized single-image CPU latency: mean, p50, p95.

    One warm-up pass over the samples runs first and is discarded. The
    loop is strictly serial (batch size 1) to mirror per-request serving.
    """
    if not sample_images:
        raise EvaluationError("latency benchmark needs at least one sample image")
    if repetitions < 3:
        raise EvaluationError(f"insufficient repetitions: {repetitions} (need >= 3)")
    predict = model if callable(model) else model.predict
    for image in sample_images:  # warm-up, not measured
        predict(image)
    timings: list[float] = []
    for _ in range(repetitions):
        for image in sample_images:
            started = time.perf_counter()
            predict(image)
            timings.append(time.perf_counter() - started)
    timings.sort()
    return LatencyStats(
        mean_seconds=statistics.mean(timings),
        p50_seconds=_percentile(timings, 0.50),
        p95_seconds=_percentile(timings, 0.95),
        device="cpu",
        samples=len(sample_images),
        repetitions=repetitions,
    )


@dataclass
class EvalReport:
    top1_accuracy: float  # micro average: total correct / total
    macro_accuracy: float  # mean of per-class accuracies over sampled classes
    per_class_accuracy: tuple[float, ...]
    confusion: ConfusionMatrix
    latency: LatencyStats
    model_digest: str
    evaluated: int
    failures: list[str] = field(default_factory=list)  # record ids that failed to decode

    def render(self) -> str:
        lines = [
            f"model_digest={self.model_digest}",
            f"evaluated={self.evaluated}",
            f"top1_accuracy={self.top1_accuracy:.4f}",
            f"macro_accuracy={self.macro_accuracy:.4f}",
            f"latency_mean_seconds={self.latency.mean_seconds:.4f}",
            f"latency_p50_seconds={self.latency.p50_seconds:.4f}",
            f"latency_p95_seconds={self.latency.p95_seconds:.4f}",
            f"latency_device={self.latency.device}",
        ]
        if self.failures:
            lines.append("decode_failures=" + ",".join(self.failures))
        for i, lab in enumerate(CANONICAL_LABELS):
            lines.append(f"class_accuracy.{lab.value}={self.per_class_accuracy[i]:.4f}")
        counts_block = "\n".join(
            "counts." + CANONICAL_LABELS[i].value + "=" + ",".join(map(str, row))
            for i, row in enumerate(self.confusion.counts)
        )
        return "\n".join(lines) + "\n" + counts_block + "\n\n" + self.confusion.render() + "\n"

    def save(self, path: str | Path) -> Path:
        path = Path(path)
        path.write_text(self.render(), encoding="utf-8")
        return path


def evaluate(
    handle: ModelHandle,
    test_records: Sequence[ImageRecord],
    model_digest: str = "",
) -> EvalReport:
    """Score every TEST record with one forward pass each and aggregate.

    Undecodable images are recorded as failures and excluded from every
    denominator rather than aborting the run.
    """
    if not test_records:
        raise EvaluationError("test set is empty")
    offenders = [r.id for r in test_records if r.split is not Split.TEST]
    if offenders:
        raise EvaluationError(
            f"records outside the TEST split passed to evaluate: {offenders[:5]}"
        )

    pairs: list[PredictionPair] = []
    failures: list[str] = []
    timings: list[float] = []
    for record in test_records:
        started = time.perf_counter()
        try:
            scores = handle.predict(record.path)
        except ImageDecodeError as exc:
            log.warning("evaluation failure on %s: %s", record.id, exc)
            failures.append(record.id)
            continue
        timings.append(time.perf_counter() - started)
        pairs.append(
            PredictionPair(
                record_id=record.id,
                true_label=record.label,
                predicted_label=scores.predicted_label,
                scores=scores,
            )
        )
    if not pairs:
        raise EvaluationError("every test record failed to decode")

    matrix = confusion_matrix(pairs)
    sampled = [matrix.per_class_accuracy[i] for i in range(NUM_CLASSES) if matrix.row_total(i) > 0]
    timings.sort()
    latency = LatencyStats(
        mean_seconds=statistics.mean(timings),
        p50_seconds=_percentile(timings, 0.50),
        p95_seconds=_percentile(timings, 0.95),
        device="cpu",
        samples=len(timings),
        repetitions=1,
    )
    return EvalReport(
        top1_accuracy=top1_accuracy(pairs),
        macro_accuracy=statistics.mean(sampled),
        per_class_accuracy=matrix.per_class_accuracy,
        confusion=matrix,
        latency=latency,
        model_digest=model_digest,
        evaluated=len(pairs),
        failures=failures,
    )


# -- run comparison ---------------------------------------------------------


@dataclass(frozen=True)
class RunSummary:
    network: str
    strategy: str
    val_accuracy_pct: float
    train_minutes: float
    test_top1_pct: float | None = None

    @classmethod
    def from_files(cls, summary_path: str | Path, eval_path: str | Path | None = None) -> "RunSummary":
        fields = _read_kv(summary_path)
        test_pct = None
        if eval_path is not None:
            eval_fields = _read_kv(eval_path)
            test_pct = float(eval_fields["top1_accuracy"]) * 100.0
        return cls(
            network=fields["network"],
            strategy=fields["strategy"],
            val_accuracy_pct=float(fields["best_val_accuracy"]) * 100.0,
            train_minutes=float(fields["total_minutes"]),
            test_top1_pct=test_pct,
        )


def _read_kv(path: str | Path) -> dict[str, str]:
    out: dict[str, str] = {}
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        if "=" in line:
            key, value = line.split("=", 1)
            out[key] = value
    return out


def compare_runs(entries: Sequence[RunSummary]) -> "ComparisonTable":
    """Rank run summaries by validation accuracy, best first."""
    if not entries:
        raise EvaluationError("compare_runs needs at least one entry")
    ranked = sorted(entries, key=lambda e: -e.val_accuracy_pct)
    return ComparisonTable(tuple(ranked))


@dataclass(frozen=True)
class ComparisonTable:
    rows: tuple[RunSummary, ...]

    COLUMNS = ("network", "strategy", "validation", "minutes", "test_top1")

    def render(self) -> str:
        header = f"{'Network':<14}{'Strategy':<12}{'Validation':>12}{'Time (min)':>12}{'Test Top-1':>12}"
        lines = [header, "-" * len(header)]
        for row in self.rows:
            test = f"{row.test_top1_pct:.2f}%" if row.test_top1_pct is not None else "-"
            lines.append(
                f"{row.network:<14}{row.strategy:<12}{row.val_accuracy_pct:>11.2f}%"
                f"{row.train_minutes:>12.2f}{test:>12}"
            )
        return "\n".join(lines)

    def render_csv(self) -> str:
        lines = [",".join(self.COLUMNS)]
        for row in self.rows:
            test = f"{row.test_top1_pct:.2f}" if row.test_top1_pct is not None else ""
            lines.append(
                f"{row.network},{row.strategy},{row.val_accuracy_pct:.2f},"
                f"{row.train_minutes:.2f},{test}"
            )
        return "\n".join(lines)
