"""Whole-file prediction: overlapping windows, score averaging, thresholding.

Files are scored with sliding windows of the training chunk length; the
per-frame speech probabilities of overlapping windows are averaged on a
global frame grid, and frames with averaged score strictly greater than
the threshold become speech regions.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .data import Waveform
from .errors import FormatError, ParameterError, ValidationError
from .model import VadModel
from .timeline import Timeline

logger = logging.getLogger(__name__)


@dataclass
class SlidingWindowConfig:
    duration: float = 2.0  # must equal the training chunk duration
    step: float = 0.5
    threshold: float = 0.5

    def __post_init__(self):
        if not 0 < self.step <= self.duration:
            raise ParameterError(f"need 0 < step <= duration, got step={self.step}, duration={self.duration}")
        if not 0.0 <= self.threshold <= 1.0:
            raise ParameterError(f"threshold must be in [0, 1], got {self.threshold}")


@dataclass
class FrameScoreSequence:
    """Per-frame speech scores on an explicit time grid.

    Frame ``t`` is centered at ``origin + t * frame_period`` seconds.
    """

    scores: np.ndarray
    frame_period: float
    origin: float

    def centers(self) -> np.ndarray:
        return self.origin + np.arange(len(self.scores)) * self.frame_period


def slide_windows(file_duration: float, cfg: SlidingWindowConfig) -> list[float]:
    """Window offsets 0, step, 2*step, ... plus a final window ending at
    the file end when the stride does not land there exactly."""
    if file_duration < cfg.duration - 1e-9:
        raise ValidationError(
            f"file of {file_duration} s is shorter than one {cfg.duration} s window"
        )
    offsets = []
    k = 0
    while k * cfg.step + cfg.duration <= file_duration + 1e-9:
        offsets.append(k * cfg.step)
        k += 1
    if not offsets or offsets[-1] + cfg.duration < file_duration - 1e-9:
        offsets.append(file_duration - cfg.duration)
    return offsets


def aggregate_scores(
    window_scores: list[tuple[float, FrameScoreSequence]],
) -> FrameScoreSequence:
    """Average overlapping window scores on a global frame grid.

    The grid is anchored at t=0 with the shared frame period; each window
    frame maps to the nearest global frame.  In the rare layout where some
    grid position is covered by no window, it inherits the nearest covered
    score.
    """
    if not window_scores:
        raise ValidationError("no window scores to aggregate")
    period = window_scores[0][1].frame_period
    origin = window_scores[0][1].origin
    for _, fss in window_scores:
        if abs(fss.frame_period - period) > 1e-12:
            raise ValidationError("windows disagree on the frame period")

    base_indices = [int(round(offset / period)) for offset, _ in window_scores]
    n_global = max(b + len(fss.scores) for b, (_, fss) in zip(base_indices, window_scores))
    sums = np.zeros(n_global, dtype=np.float64)
    counts = np.zeros(n_global, dtype=np.int64)
    for base, (_, fss) in zip(base_indices, window_scores):
        sums[base : base + len(fss.scores)] += fss.scores
        counts[base : base + len(fss.scores)] += 1

    covered = np.nonzero(counts)[0]
    if len(covered) < n_global:
        holes = np.nonzero(counts == 0)[0]
        nearest = covered[
            np.clip(np.searchsorted(covered, holes), 0, len(covered) - 1)
        ]
        left = covered[np.clip(np.searchsorted(covered, holes) - 1, 0, len(covered) - 1)]
        pick = np.where(np.abs(left - holes) <= np.abs(nearest - holes), left, nearest)
        sums[holes] = sums[pick] / counts[pick]
        counts[holes] = 1
    return FrameScoreSequence(sums / counts, period, origin)


def binarize(scores: FrameScoreSequence, threshold: float) -> Timeline:
    """Maximal runs of frames with score strictly above the threshold become
    regions spanning half a frame period past the first and last centers."""
    if not 0.0 <= threshold <= 1.0:
        raise ParameterError(f"threshold must be in [0, 1], got {threshold}")
    mask = scores.scores > threshold
    if not mask.any():
        return Timeline()
    half = scores.frame_period / 2.0
    edges = np.flatnonzero(np.diff(np.concatenate(([0], mask.view(np.int8), [0]))))
    regions = []
    for first, last_plus in zip(edges[::2], edges[1::2]):
        start = scores.origin + first * scores.frame_period - half
        end = scores.origin + (last_plus - 1) * scores.frame_period + half
        regions.append((start, end))
    return Timeline(regions)


def score_file(
    model: VadModel, waveform: Waveform, cfg: SlidingWindowConfig, batch_size: int = 64
) -> FrameScoreSequence:
    """Sliding-window speech scores for a whole file (threshold not applied)."""
    if waveform.sample_rate != model.config.sample_rate:
        raise FormatError(
            f"sample rate {waveform.sample_rate} != model rate {model.config.sample_rate}; "
            "no implicit resampling"
        )
    fs = waveform.sample_rate
    chunk_samples = int(round(cfg.duration * fs))
    samples = waveform.samples
    padded = False
    if len(samples) < chunk_samples:
        logger.info("zero-padding a %.3f s file to one %.1f s window", waveform.duration, cfg.duration)
        samples = np.concatenate([samples, np.zeros(chunk_samples - len(samples), dtype=samples.dtype)])
        padded = True
    duration = len(samples) / fs

    offsets = slide_windows(duration, cfg)
    starts = [min(int(round(o * fs)), len(samples) - chunk_samples) for o in offsets]
    windows = np.stack([samples[s : s + chunk_samples] for s in starts])

    period, origin = model.frame_geometry()
    pieces: list[tuple[float, FrameScoreSequence]] = []
    for lo in range(0, len(windows), batch_size):
        block = windows[lo : lo + batch_size].astype(model.config.np_dtype)
        probs = model.vad_branch(model.features(block)).data[:, :, 1]
        for row, start in enumerate(starts[lo : lo + batch_size]):
            pieces.append((start / fs, FrameScoreSequence(probs[row], period, origin)))
    merged = aggregate_scores(pieces)
    if padded:
        keep = merged.centers() <= waveform.duration
        merged = FrameScoreSequence(merged.scores[keep], merged.frame_period, merged.origin)
    return merged


def apply_file(
    model: VadModel, waveform: Waveform, cfg: SlidingWindowConfig, batch_size: int = 64
) -> tuple[FrameScoreSequence, Timeline]:
    """Score a file and binarize at the configured threshold.

    Returns both the raw averaged scores and the hypothesis regions,
    cropped to the file extent.
    """
    scores = score_file(model, waveform, cfg, batch_size=batch_size)
    hypothesis = binarize(scores, cfg.threshold).crop(0.0, waveform.duration)
    return scores, hypothesis


def write_score_dump(path, scores: FrameScoreSequence) -> None:
    """Optional per-frame dump: tab-separated time and score."""
    with open(path, "w", encoding="utf-8") as fh:
        for t, s in zip(scores.centers(), scores.scores):
            fh.write(f"{t:.6f}\t{s:.6f}\n")
