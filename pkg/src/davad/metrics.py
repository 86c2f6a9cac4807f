"""Detection error rate, dev-set selection, aggregation, domain confusion.

The detection error rate is (false alarm + missed detection) / total
reference speech, as durations; corpus-level values sum durations before
taking the ratio (micro average).
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .data import Waveform
from .errors import ParameterError, UndefinedRateError, ValidationError
from .inference import SlidingWindowConfig, binarize, score_file
from .model import VadModel
from .timeline import Timeline


@dataclass
class DetectionCounts:
    false_alarm: float = 0.0  # seconds of non-speech classified as speech
    missed_detection: float = 0.0  # seconds of speech classified as non-speech
    total_speech: float = 0.0  # seconds of speech in the reference

    def __add__(self, other: "DetectionCounts") -> "DetectionCounts":
        return DetectionCounts(
            self.false_alarm + other.false_alarm,
            self.missed_detection + other.missed_detection,
            self.total_speech + other.total_speech,
        )


def detection_counts(
    reference: Timeline, hypothesis: Timeline, extent: tuple[float, float]
) -> DetectionCounts:
    """Exact interval arithmetic over the merged boundary points."""
    lo, hi = extent
    if hi <= lo:
        raise ValidationError(f"empty extent [{lo}, {hi})")
    for name, tl in (("reference", reference), ("hypothesis", hypothesis)):
        for start, end in tl:
            if start < lo - 1e-9 or end > hi + 1e-9:
                raise ValidationError(
                    f"{name} region [{start}, {end}) outside extent [{lo}, {hi})"
                )

    points = sorted({lo, hi} | {p for r in reference for p in r} | {p for r in hypothesis for p in r})
    fa = miss = 0.0
    for a, b in zip(points[:-1], points[1:]):
        mid = 0.5 * (a + b)
        in_ref = reference.contains(mid)
        in_hyp = hypothesis.contains(mid)
        if in_hyp and not in_ref:
            fa += b - a
        elif in_ref and not in_hyp:
            miss += b - a
    return DetectionCounts(fa, miss, reference.duration())


def detection_error_rate(counts: DetectionCounts) -> float:
    """(false alarm + miss) / total as a percentage; undefined for no speech."""
    if counts.total_speech <= 0.0:
        raise UndefinedRateError("no reference speech: detection error rate is undefined")
    return 100.0 * (counts.false_alarm + counts.missed_detection) / counts.total_speech


def false_alarm_rate(counts: DetectionCounts) -> float:
    if counts.total_speech <= 0.0:
        raise UndefinedRateError("no reference speech: false alarm rate is undefined")
    return 100.0 * counts.false_alarm / counts.total_speech


def miss_rate(counts: DetectionCounts) -> float:
    if counts.total_speech <= 0.0:
        raise UndefinedRateError("no reference speech: miss rate is undefined")
    return 100.0 * counts.missed_detection / counts.total_speech


def aggregate_over_domains(per_domain: Sequence[DetectionCounts]) -> DetectionCounts:
    """Componentwise sum of durations; rates recomputed on the sums."""
    if not per_domain:
        raise ParameterError("nothing to aggregate")
    total = DetectionCounts()
    for counts in per_domain:
        total = total + counts
    return total


# ---------------------------------------------------------------------------
# dev-set epoch and threshold selection


@dataclass
class TuningResult:
    best_epoch: int
    best_threshold: float
    dev_error_rate: float


def sigma_grid(start: float = 0.0, stop: float = 1.0, step: float = 0.01) -> np.ndarray:
    n = int(round((stop - start) / step)) + 1
    return np.round(start + step * np.arange(n), 10)


def tune(
    dev_files: Sequence[tuple[Waveform, Timeline]],
    checkpoints: Sequence[tuple[int, Path]],
    grid: np.ndarray,
    window_cfg: SlidingWindowConfig,
    batch_size: int = 64,
) -> tuple[TuningResult, list[tuple[int, float, float]]]:
    """Exhaustive scan of every (epoch, threshold) pair on the dev set.

    Each checkpoint scores the dev files once; thresholds reuse the scores.
    Micro-averaged detection error rate decides; ties break toward the
    smaller epoch, then the smaller threshold.  Also returns the full
    (epoch, threshold, rate) table.
    """
    if not checkpoints:
        raise ParameterError("need at least one checkpoint to tune")
    if len(grid) == 0:
        raise ParameterError("empty threshold grid")
    best: Optional[TuningResult] = None
    table: list[tuple[int, float, float]] = []
    for epoch, path in sorted(checkpoints):
        model = VadModel.load(path)
        scored = [
            (score_file(model, w, window_cfg, batch_size=batch_size), ref, w.duration)
            for w, ref in dev_files
        ]
        for sigma in grid:
            counts = DetectionCounts()
            for scores, ref, duration in scored:
                hyp = binarize(scores, float(sigma)).crop(0.0, duration)
                counts = counts + detection_counts(ref, hyp, (0.0, duration))
            rate = detection_error_rate(counts)
            table.append((epoch, float(sigma), rate))
            if best is None or rate < best.dev_error_rate:
                best = TuningResult(epoch, float(sigma), rate)
    return best, table


# ---------------------------------------------------------------------------
# domain confusion


@dataclass
class ConfusionMatrix:
    counts: np.ndarray  # [n, n], rows = true domain, columns = predicted
    domains: list[str]

    @property
    def accuracy(self) -> float:
        total = self.counts.sum()
        if total == 0:
            raise UndefinedRateError("no chunks were classified")
        return float(np.trace(self.counts) / total)


def domain_confusion(
    model: VadModel,
    chunks: Sequence[tuple[np.ndarray, int]],
    domains: list[str],
    batch_size: int = 64,
) -> ConfusionMatrix:
    """Classify labeled fixed-length chunks with the domain branch.

    The predicted domain is the argmax of the branch output; no reversal
    semantics are involved at evaluation time.
    """
    n = len(domains)
    matrix = np.zeros((n, n), dtype=np.int64)
    for lo in range(0, len(chunks), batch_size):
        block = chunks[lo : lo + batch_size]
        x = np.stack([c[0] for c in block]).astype(model.config.np_dtype)
        feats = model.features(x)
        if model.config.domain_branch_tap == "after_frontend":
            tap = feats
        else:
            _, taps = model.vad_branch(feats, want_taps=True)
            tap = taps[model.config.domain_branch_tap]
        preds = model.domain_branch(tap, reversal_lambda=None).data.argmax(axis=1)
        for (_, true_idx), pred_idx in zip(block, preds):
            matrix[true_idx, pred_idx] += 1
    return ConfusionMatrix(matrix, list(domains))


# ---------------------------------------------------------------------------
# report formatting

_NA = "NA"


def _rate_cells(counts: DetectionCounts) -> tuple[str, str, str]:
    """(DetER, FA, Miss) cells; the displayed rate is the sum of the two
    displayed components, so the report identity holds at its precision."""
    if counts.total_speech <= 0.0:
        return _NA, _NA, _NA
    fa = round(false_alarm_rate(counts), 2)
    miss = round(miss_rate(counts), 2)
    return f"{fa + miss:.2f}", f"{fa:.2f}", f"{miss:.2f}"


def write_evaluation_report(path, scoped_counts: list[tuple[str, DetectionCounts]]) -> None:
    """Tab-separated rows: scope, DetER%, FA%, Miss%, total speech seconds."""
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("scope\tdeter_pct\tfa_pct\tmiss_pct\ttotal_s\n")
        for scope, counts in scoped_counts:
            deter, fa, miss = _rate_cells(counts)
            fh.write(f"{scope}\t{deter}\t{fa}\t{miss}\t{counts.total_speech:.2f}\n")


def write_confusion_csv(path, confusion: ConfusionMatrix) -> None:
    """CSV with a header row and column of domain names."""
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("," + ",".join(confusion.domains) + "\n")
        for name, row in zip(confusion.domains, confusion.counts):
            fh.write(name + "," + ",".join(str(int(v)) for v in row) + "\n")
