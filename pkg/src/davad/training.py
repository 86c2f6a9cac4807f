"""Losses, chunk sampling, additive-noise augmentation, and the training loop.

The speech loss is cross-entropy summed over frames and averaged over the
batch; the domain loss is the mean squared error between the one-hot
domain label and the domain head output.  In adversarial mode both losses
share one backward pass; the gradient reversal inside the graph supplies
the negative, scaled domain gradient reaching the feature extractor.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np

from . import autograd as ag
from .autograd import CyclicalLr, Sgd, Tape, Tensor
from .data import ManifestEntry, Waveform, parse_segments, read_wav
from .errors import CorpusError, ParameterError, ShapeError, StateError
from .model import VadModel
from .timeline import Timeline

logger = logging.getLogger(__name__)

LOG_CLAMP = 1e-12
OBJECTIVES = ("vad", "adversarial", "domain")


@dataclass
class TrainConfig:
    chunk_duration: float = 2.0
    batch_size: int = 64
    max_epochs: int = 300
    steps_per_epoch: int = 0  # 0 = one pass-equivalent of audio per epoch
    snr_min: float = 10.0
    snr_max: float = 20.0
    augment_probability: float = 1.0
    seed: int = 0
    objective: str = "vad"
    lr_min: float = 1e-4
    lr_max: float = 1e-2
    lr_cycle_epochs: int = 21

    def __post_init__(self):
        if self.chunk_duration <= 0:
            raise ParameterError("chunk_duration must be positive")
        if self.batch_size < 1:
            raise ParameterError("batch_size must be >= 1")
        if self.snr_min > self.snr_max:
            raise ParameterError(f"snr range [{self.snr_min}, {self.snr_max}] is inverted")
        if self.objective not in OBJECTIVES:
            raise ParameterError(f"unknown objective {self.objective!r}; choose from {OBJECTIVES}")
        if not 0.0 <= self.augment_probability <= 1.0:
            raise ParameterError("augment_probability must be in [0, 1]")

    @property
    def adversarial(self) -> bool:
        return self.objective == "adversarial"


@dataclass
class TrainingChunk:
    waveform: Waveform
    frame_labels: np.ndarray  # [T] in {0, 1}
    domain_onehot: np.ndarray  # [n_domains]
    source_uri: str
    source_offset: float


@dataclass
class EpochRecord:
    epoch: int
    vad_loss: float
    domain_loss: Optional[float]
    learning_rate: float
    checkpoint_path: Optional[Path]


# ---------------------------------------------------------------------------
# corpus access


@dataclass
class CorpusFile:
    uri: str
    waveform: Waveform
    reference: Timeline
    domain_index: int


class TrainingCorpus:
    """Training-split audio and references held in memory for fast sampling."""

    def __init__(self, entries: list[ManifestEntry], domains: list[str]):
        if not entries:
            raise CorpusError("empty file list")
        self.domains = list(domains)
        index = {d: i for i, d in enumerate(self.domains)}
        self.files: list[CorpusFile] = []
        for e in entries:
            if e.domain not in index:
                raise CorpusError(f"{e.uri}: domain {e.domain!r} not in {self.domains}")
            waveform = read_wav(e.audio_path)
            ann = parse_segments(e.annotation_path)
            if ann.regions.end() > waveform.duration + 1e-6:
                raise CorpusError(f"{e.uri}: annotation extends past the audio")
            self.files.append(CorpusFile(e.uri, waveform, ann.regions, index[e.domain]))

    @property
    def n_domains(self) -> int:
        return len(self.domains)

    def total_duration(self) -> float:
        return sum(f.waveform.duration for f in self.files)


def project_labels(
    timeline: Timeline, chunk_offset: float, n_frames: int, frame_period: float, origin: float
) -> np.ndarray:
    """Frame labels by center membership: 1 iff the frame center is in speech."""
    centers = chunk_offset + origin + np.arange(n_frames) * frame_period
    if not len(timeline):
        return np.zeros(n_frames, dtype=np.int8)
    starts = np.array([r[0] for r in timeline])
    ends = np.array([r[1] for r in timeline])
    idx = np.searchsorted(starts, centers, side="right") - 1
    inside = (idx >= 0) & (centers < ends[np.clip(idx, 0, None)])
    return inside.astype(np.int8)


def sample_subsequences(
    corpus: TrainingCorpus,
    cfg: TrainConfig,
    rng: np.random.Generator,
    model: VadModel,
    noise_bank: Optional[list[Waveform]] = None,
) -> list[TrainingChunk]:
    """Draw one batch of chunks, file-weighted by annotated duration.

    The chunk offset is uniform over valid sample positions; labels come
    from projecting the reference through the model's frame-time mapping.
    Augmentation, when enabled, mixes a random noise crop at a random SNR.
    """
    fs = model.config.sample_rate
    chunk_samples = int(round(cfg.chunk_duration * fs))
    eligible = [f for f in corpus.files if len(f.waveform.samples) >= chunk_samples]
    if not eligible:
        raise CorpusError(
            f"no file is at least {cfg.chunk_duration} s long; cannot draw chunks"
        )
    weights = np.array([f.waveform.duration for f in eligible])
    weights = weights / weights.sum()
    n_frames = model.output_frames(chunk_samples)
    period, origin = model.frame_geometry()

    batch = []
    for _ in range(cfg.batch_size):
        file = eligible[int(rng.choice(len(eligible), p=weights))]
        max_start = len(file.waveform.samples) - chunk_samples
        start = int(rng.integers(0, max_start + 1))
        offset = start / fs
        samples = file.waveform.samples[start : start + chunk_samples]
        w = Waveform(samples, fs)
        if noise_bank and cfg.augment_probability > 0:
            apply_it = cfg.augment_probability >= 1.0 or rng.random() < cfg.augment_probability
            snr = float(rng.uniform(cfg.snr_min, cfg.snr_max))
            noise = noise_bank[int(rng.integers(0, len(noise_bank)))]
            if apply_it:
                w = augment_additive_noise(w, noise, snr, rng)
        labels = project_labels(file.reference, offset, n_frames, period, origin)
        onehot = np.zeros(corpus.n_domains, dtype=np.float64)
        onehot[file.domain_index] = 1.0
        batch.append(TrainingChunk(w, labels, onehot, file.uri, offset))
    return batch


def augment_additive_noise(
    w: Waveform, noise: Waveform, snr_db: float, rng: Optional[np.random.Generator] = None
) -> Waveform:
    """Mix a noise crop into the signal at the requested SNR, clipped to [-1, 1].

    The gain is sqrt(P_signal / (P_noise * 10^(snr/10))) with P the mean
    squared amplitude.  A zero-power signal is returned unchanged.
    """
    n = len(w.samples)
    if len(noise.samples) < n:
        raise ParameterError(
            f"noise of {len(noise.samples)} samples is shorter than the signal ({n})"
        )
    if len(noise.samples) == n or rng is None:
        crop = noise.samples[:n]
    else:
        start = int(rng.integers(0, len(noise.samples) - n + 1))
        crop = noise.samples[start : start + n]
    p_signal = float(np.mean(np.square(w.samples, dtype=np.float64)))
    p_noise = float(np.mean(np.square(crop, dtype=np.float64)))
    if p_signal <= 0.0 or p_noise <= 0.0:
        logger.info("skipping augmentation of a zero-power signal or noise crop")
        return w
    gain = math.sqrt(p_signal / (p_noise * 10.0 ** (snr_db / 10.0)))
    mixed = np.clip(w.samples + gain * crop.astype(w.samples.dtype), -1.0, 1.0)
    return Waveform(mixed.astype(w.samples.dtype), w.sample_rate)


# ---------------------------------------------------------------------------
# losses


def vad_loss(scores: Tensor, labels: np.ndarray) -> Tensor:
    """Cross-entropy of per-frame distributions, summed over frames and
    averaged over the batch; the log is clamped at 1e-12."""
    labels = np.asarray(labels)
    if scores.data.ndim != 3 or scores.shape[2] != 2:
        raise ShapeError(f"scores must be [N, T, 2], got {scores.shape}")
    if labels.shape != scores.shape[:2]:
        raise ShapeError(f"labels {labels.shape} do not match scores {scores.shape}")
    onehot = np.eye(2, dtype=scores.data.dtype)[labels.astype(np.int64)]
    picked = (scores * onehot).sum(axis=2)  # [N, T]
    logp = ag.log(ag.maximum(picked, LOG_CLAMP))
    return -(logp.sum(axis=1).mean())


def domain_loss(preds: Tensor, onehots: np.ndarray) -> Tensor:
    """Mean over the batch of squared L2 distance to the one-hot label."""
    onehots = np.asarray(onehots)
    if preds.data.ndim != 2:
        raise ShapeError(f"domain predictions must be [N, n], got {preds.shape}")
    if onehots.shape != preds.data.shape:
        raise ShapeError(f"labels {onehots.shape} do not match predictions {preds.shape}")
    diff = preds - onehots.astype(preds.data.dtype)
    return (diff * diff).sum(axis=1).mean()


# ---------------------------------------------------------------------------
# optimization


def trainable_parameters(model: VadModel, objective: str) -> dict[str, Tensor]:
    parts = model.partitions()
    if objective == "vad":
        return {**parts["frontend"], **parts["vad"]}
    if objective == "adversarial":
        return {**parts["frontend"], **parts["vad"], **parts["domain"]}
    if objective == "domain":
        return {**parts["frontend"], **parts["domain"]}
    raise ParameterError(f"unknown objective {objective!r}")


def train_step(
    model: VadModel, batch: list[TrainingChunk], cfg: TrainConfig, opt: Sgd
) -> tuple[Optional[float], Optional[float]]:
    """One optimization step; returns (vad loss, domain loss) values.

    Adversarial mode backpropagates the sum of both losses in a single
    pass; the reversal layer scales and negates the domain gradient that
    reaches the shared feature extractor, so the parameter updates realize
    the standard adversarial rules.
    """
    x = np.stack([c.waveform.samples for c in batch]).astype(model.config.np_dtype)
    labels = np.stack([c.frame_labels for c in batch])
    lv_value = ld_value = None
    with Tape() as tape:
        feats = model.features(Tensor(x))
        if cfg.objective == "domain":
            tap = feats
            if model.config.domain_branch_tap != "after_frontend":
                _, taps = model.vad_branch(feats, want_taps=True)
                tap = taps[model.config.domain_branch_tap]
            preds = model.domain_branch(tap, reversal_lambda=None)
            ld = domain_loss(preds, np.stack([c.domain_onehot for c in batch]))
            loss = ld
            ld_value = ld.item()
        elif cfg.adversarial:
            scores, taps = model.vad_branch(feats, want_taps=True)
            lv = vad_loss(scores, labels)
            tap = model.tap_of(feats, taps)
            preds = model.domain_branch(tap, reversal_lambda=model.config.reversal_lambda)
            ld = domain_loss(preds, np.stack([c.domain_onehot for c in batch]))
            loss = lv + ld
            lv_value, ld_value = lv.item(), ld.item()
        else:
            scores = model.vad_branch(feats)
            lv = vad_loss(scores, labels)
            loss = lv
            lv_value = lv.item()
        tape.backward(loss)
    opt.step()
    return lv_value, ld_value


def default_steps_per_epoch(total_seconds: float, cfg: TrainConfig) -> int:
    return max(1, math.ceil(total_seconds / (cfg.chunk_duration * cfg.batch_size)))


def train(
    corpus: TrainingCorpus,
    cfg: TrainConfig,
    model: VadModel,
    out_dir,
    noise_bank: Optional[list[Waveform]] = None,
    log_every: int = 0,
) -> list[EpochRecord]:
    """Run the full loop: cyclical learning rate, one checkpoint per epoch.

    Deterministic given the seed; writes ``train_log.tsv`` and
    ``checkpoints/epoch_NNNN.ckpt`` under ``out_dir``.
    """
    out_dir = Path(out_dir)
    ckpt_dir = out_dir / "checkpoints"
    ckpt_dir.mkdir(parents=True, exist_ok=True)
    steps = cfg.steps_per_epoch or default_steps_per_epoch(corpus.total_duration(), cfg)
    schedule = CyclicalLr(cfg.lr_min, cfg.lr_max, cfg.lr_cycle_epochs)
    opt = Sgd(trainable_parameters(model, cfg.objective), learning_rate=cfg.lr_min)
    rng = np.random.default_rng(np.random.SeedSequence(entropy=cfg.seed, spawn_key=(101,)))

    records: list[EpochRecord] = []
    log_path = out_dir / "train_log.tsv"
    with open(log_path, "w", encoding="utf-8") as log:
        for epoch in range(cfg.max_epochs):
            epoch_lr = schedule(float(epoch))
            lv_sum = ld_sum = 0.0
            lv_n = ld_n = 0
            for step in range(steps):
                opt.learning_rate = schedule(epoch + step / steps)
                batch = sample_subsequences(corpus, cfg, rng, model, noise_bank)
                lv, ld = train_step(model, batch, cfg, opt)
                for value, name in ((lv, "vad"), (ld, "domain")):
                    if value is not None and not math.isfinite(value):
                        raise StateError(
                            f"non-finite {name} loss {value} at epoch {epoch} step {step}"
                        )
                if lv is not None:
                    lv_sum += lv
                    lv_n += 1
                if ld is not None:
                    ld_sum += ld
                    ld_n += 1
            mean_lv = lv_sum / lv_n if lv_n else float("nan")
            mean_ld = ld_sum / ld_n if ld_n else None
            ckpt = ckpt_dir / f"epoch_{epoch:04d}.ckpt"
            model.save(ckpt)
            records.append(EpochRecord(epoch, mean_lv, mean_ld, epoch_lr, ckpt))
            ld_text = f"{mean_ld:.6f}" if mean_ld is not None else "NA"
            log.write(f"{epoch}\t{epoch_lr:.8g}\t{mean_lv:.6f}\t{ld_text}\t{ckpt.name}\n")
            log.flush()
            if log_every and (epoch + 1) % log_every == 0:
                logger.info("epoch %d: L_v=%.4f L_d=%s lr=%.2e", epoch, mean_lv, ld_text, epoch_lr)
    return records
