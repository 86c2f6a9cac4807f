"""Waveform-to-features front-ends.

Two extractors map a fixed-length audio chunk to a frame sequence: a
trainable band-pass sinc filterbank followed by two standard convolution
layers (pool / per-channel time normalization / leaky ReLU after each),
and a fixed MFCC extractor used as the handcrafted-feature baseline.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import as_strided

from . import autograd as ag
from .autograd import Tensor
from .data import Waveform
from .errors import ParameterError, ShapeError

MIN_LOW_HZ = 30.0
MIN_BAND_HZ = 50.0
NORM_EPS = 1e-5


@dataclass
class FeatureSequence:
    """Per-frame feature vectors with their time grid.

    Frame ``t`` is centered at ``origin + t * frame_period`` seconds from
    the start of the chunk.
    """

    frames: Tensor  # [T, D]
    frame_period: float
    origin: float


# ---------------------------------------------------------------------------
# mel scale and filter initialization


def hz_to_mel(hz):
    return 2595.0 * np.log10(1.0 + np.asarray(hz, dtype=np.float64) / 700.0)


def mel_to_hz(mel):
    return 700.0 * (10.0 ** (np.asarray(mel, dtype=np.float64) / 2595.0) - 1.0)


def init_mel_cutoffs(filter_count: int, sample_rate: int = 16000) -> list[tuple[float, float]]:
    """Band edges at mel-uniform points between 30 Hz and Nyquist."""
    if filter_count < 1:
        raise ParameterError(f"filter_count must be >= 1, got {filter_count}")
    nyquist = sample_rate / 2.0
    edges = mel_to_hz(np.linspace(hz_to_mel(MIN_LOW_HZ), hz_to_mel(nyquist), filter_count + 1))
    bands = [(float(edges[i]), float(edges[i + 1])) for i in range(filter_count)]
    if any(f2 - f1 < 1.0 for f1, f2 in bands):
        raise ParameterError(
            f"{filter_count} filters leave bands narrower than 1 Hz below {nyquist} Hz"
        )
    return bands


# ---------------------------------------------------------------------------
# sinc filterbank


def _bandpass_sinc_rows(f_norm: Tensor, n_grid: np.ndarray) -> Tensor:
    """Rows y[f, j] = 2*f[f]*sinc(2*f[f]*n[j]) for normalized cutoffs f.

    This is a low-pass prototype evaluated on the symmetric sample grid;
    the derivative w.r.t. a cutoff is exactly 2*cos(2*pi*f*n).
    """
    fd = f_norm.data[:, None]
    out = Tensor(2.0 * fd * np.sinc(2.0 * fd * n_grid[None, :]), requires_grad=f_norm.requires_grad)

    def backward(g):
        return ((g * 2.0 * np.cos(2.0 * np.pi * fd * n_grid[None, :])).sum(axis=1),)

    ag.record(out, (f_norm,), backward)
    return out


@dataclass
class SincFilterParams:
    """Raw per-filter parameters reparameterized to valid band cutoffs.

    Realized cutoffs always satisfy 0 < f1 < f2 <= Nyquist:
    f1 = clip(MIN_LOW_HZ + |u_low|, max = Nyquist - MIN_BAND_HZ) and
    f2 = clip(f1 + MIN_BAND_HZ + |u_band|, max = Nyquist).
    """

    u_low: Tensor  # [F]
    u_band: Tensor  # [F]
    kernel_length: int
    sample_rate: int

    def __post_init__(self):
        if self.kernel_length % 2 == 0 or self.kernel_length < 3:
            raise ParameterError(f"kernel_length must be odd and >= 3, got {self.kernel_length}")

    @property
    def filter_count(self) -> int:
        return self.u_low.shape[0]

    @classmethod
    def from_mel_init(cls, filter_count: int, kernel_length: int, sample_rate: int, dtype=np.float32):
        bands = init_mel_cutoffs(filter_count, sample_rate)
        f1 = np.array([b[0] for b in bands])
        width = np.array([b[1] - b[0] for b in bands])
        u_low = np.maximum(f1 - MIN_LOW_HZ, 0.0)
        u_band = np.maximum(width - MIN_BAND_HZ, 0.0)
        return cls(
            Tensor(u_low.astype(dtype), requires_grad=True),
            Tensor(u_band.astype(dtype), requires_grad=True),
            kernel_length,
            sample_rate,
        )

    def cutoff_tensors(self) -> tuple[Tensor, Tensor]:
        nyquist = self.sample_rate / 2.0
        f1 = ag.minimum(ag.absolute(self.u_low) + MIN_LOW_HZ, nyquist - MIN_BAND_HZ)
        f2 = ag.minimum(f1 + (ag.absolute(self.u_band) + MIN_BAND_HZ), nyquist)
        return f1, f2

    def cutoffs(self) -> np.ndarray:
        """Realized (f1, f2) pairs in Hz, shape [F, 2]."""
        f1, f2 = self.cutoff_tensors()
        return np.stack([f1.data, f2.data], axis=1)

    def build_kernels(self) -> Tensor:
        """Hamming-windowed band-pass sinc kernels, shape [F, 1, K].

        Built as the difference of two low-pass prototypes at the
        normalized cutoffs, so each kernel is exactly symmetric and its
        energy vanishes as the band collapses.
        """
        k = self.kernel_length
        n_grid = np.arange(k, dtype=np.float64) - (k - 1) / 2.0
        f1, f2 = self.cutoff_tensors()
        inv_fs = 1.0 / self.sample_rate
        low = _bandpass_sinc_rows(f1 * inv_fs, n_grid)
        high = _bandpass_sinc_rows(f2 * inv_fs, n_grid)
        window = np.hamming(k)
        kernels = (high - low) * window[None, :]
        return kernels.reshape((self.filter_count, 1, k))


def normalize_over_time(x: Tensor) -> Tensor:
    """Zero-mean unit-variance per channel along the last (time) axis."""
    return ag.normalize_last_axis(x, NORM_EPS)


@dataclass
class SincNetConfig:
    sinc_filters: int = 80
    sinc_kernel: int = 251
    sinc_stride: int = 10
    conv_channels: int = 60
    conv_kernel: int = 5
    pool: int = 3
    leaky_slope: float = 0.2
    sample_rate: int = 16000

    def layer_plan(self) -> list[tuple[str, int, int]]:
        # (kind, kernel/window, stride) in execution order
        return [
            ("conv", self.sinc_kernel, self.sinc_stride),
            ("pool", self.pool, self.pool),
            ("conv", self.conv_kernel, 1),
            ("pool", self.pool, self.pool),
            ("conv", self.conv_kernel, 1),
            ("pool", self.pool, self.pool),
        ]

    def frame_geometry(self) -> tuple[float, float]:
        """(frame_period, origin) in seconds from receptive-field arithmetic."""
        receptive, jump = 1, 1
        for _, k, stride in self.layer_plan():
            receptive += (k - 1) * jump
            jump *= stride
        return jump / self.sample_rate, ((receptive - 1) / 2.0) / self.sample_rate

    def receptive_field(self) -> int:
        receptive, jump = 1, 1
        for _, k, stride in self.layer_plan():
            receptive += (k - 1) * jump
            jump *= stride
        return receptive

    def output_frames(self, n_samples: int) -> int:
        length = n_samples
        for kind, k, stride in self.layer_plan():
            if kind == "conv":
                length = (length - k) // stride + 1
            else:
                length = length // k
        return length


class SincNet:
    """Trainable filterbank stack: sinc conv, then two plain conv layers."""

    def __init__(self, config: SincNetConfig, sinc: SincFilterParams, conv2_w: Tensor, conv3_w: Tensor):
        self.config = config
        self.sinc = sinc
        self.conv2_w = conv2_w
        self.conv3_w = conv3_w

    @classmethod
    def build(cls, config: SincNetConfig, rng: np.random.Generator, dtype=np.float32) -> "SincNet":
        sinc = SincFilterParams.from_mel_init(
            config.sinc_filters, config.sinc_kernel, config.sample_rate, dtype=dtype
        )
        def uniform(shape, fan_in):
            bound = 1.0 / np.sqrt(fan_in)
            return Tensor(rng.uniform(-bound, bound, size=shape).astype(dtype), requires_grad=True)

        c, f, k = config.conv_channels, config.sinc_filters, config.conv_kernel
        conv2_w = uniform((c, f, k), f * k)
        conv3_w = uniform((c, c, k), c * k)
        return cls(config, sinc, conv2_w, conv3_w)

    def parameters(self) -> dict[str, Tensor]:
        return {
            "sinc_u_low": self.sinc.u_low,
            "sinc_u_band": self.sinc.u_band,
            "conv2_w": self.conv2_w,
            "conv3_w": self.conv3_w,
        }

    @property
    def feature_dim(self) -> int:
        return self.config.conv_channels

    def forward(self, x: Tensor) -> Tensor:
        """Map waveforms [N, L] (or [L]) to frame features [N, T, D]."""
        cfg = self.config
        xd = x if isinstance(x, Tensor) else Tensor(x)
        if xd.data.ndim == 1:
            xd = xd.reshape((1, xd.shape[0]))
        n, length = xd.shape
        if length < cfg.receptive_field():
            raise ShapeError(
                f"chunk of {length} samples is shorter than the receptive field "
                f"({cfg.receptive_field()} samples)"
            )
        h = xd.reshape((n, 1, length))
        kernels = self.sinc.build_kernels()
        h = ag.conv1d(h, kernels, cfg.sinc_stride)
        h = ag.max_pool1d(h, cfg.pool)
        h = ag.leaky_relu(normalize_over_time(h), cfg.leaky_slope)
        h = ag.conv1d(h, self.conv2_w, 1)
        h = ag.max_pool1d(h, cfg.pool)
        h = ag.leaky_relu(normalize_over_time(h), cfg.leaky_slope)
        h = ag.conv1d(h, self.conv3_w, 1)
        h = ag.max_pool1d(h, cfg.pool)
        h = ag.leaky_relu(normalize_over_time(h), cfg.leaky_slope)
        return h.transpose((0, 2, 1))  # [N, T, D]


def sincnet_forward(net: SincNet, waveform: Waveform) -> FeatureSequence:
    """Extract the frame sequence of one chunk."""
    if waveform.sample_rate != net.config.sample_rate:
        raise ShapeError(
            f"waveform rate {waveform.sample_rate} != model rate {net.config.sample_rate}"
        )
    out = net.forward(Tensor(waveform.samples))
    period, origin = net.config.frame_geometry()
    return FeatureSequence(out.reshape(out.shape[1:]), period, origin)


# ---------------------------------------------------------------------------
# MFCC baseline

MFCC_WINDOW_S = 0.025
MFCC_HOP_S = 0.010
MFCC_MELS = 40
MFCC_KEPT = 19  # DCT coefficients 1..19; log-energy fills column 0
MFCC_LOG_FLOOR = 1e-10
MFCC_DIM = MFCC_KEPT + 1


def mel_filterbank(n_mels: int, n_fft: int, sample_rate: int) -> tuple[np.ndarray, np.ndarray]:
    """Triangular mel filters over the rfft bins; returns (weights, edges_hz)."""
    nyquist = sample_rate / 2.0
    edges = mel_to_hz(np.linspace(hz_to_mel(0.0), hz_to_mel(nyquist), n_mels + 2))
    freqs = np.fft.rfftfreq(n_fft, d=1.0 / sample_rate)
    weights = np.zeros((n_mels, len(freqs)))
    for m in range(n_mels):
        left, center, right = edges[m], edges[m + 1], edges[m + 2]
        rising = (freqs - left) / max(center - left, 1e-9)
        falling = (right - freqs) / max(right - center, 1e-9)
        weights[m] = np.clip(np.minimum(rising, falling), 0.0, None)
    return weights, edges


def _dct2_ortho(n: int) -> np.ndarray:
    grid = np.arange(n)
    mat = np.cos(np.pi * grid[:, None] * (2 * grid[None, :] + 1) / (2 * n)) * np.sqrt(2.0 / n)
    mat[0] *= np.sqrt(0.5)
    return mat


class MfccExtractor:
    """Fixed 20-dimensional MFCC features: log-energy + 19 cepstra.

    25 ms Hamming windows at a 10 ms hop, 40 mel bands with log floor
    1e-10, orthonormal DCT-II.
    """

    def __init__(self, sample_rate: int = 16000):
        self.sample_rate = sample_rate
        self.win = int(round(MFCC_WINDOW_S * sample_rate))
        self.hop = int(round(MFCC_HOP_S * sample_rate))
        self.n_fft = 1 << (self.win - 1).bit_length()
        self.window = np.hamming(self.win)
        self.mel_weights, self.mel_edges = mel_filterbank(MFCC_MELS, self.n_fft, sample_rate)
        self.dct = _dct2_ortho(MFCC_MELS)

    @property
    def feature_dim(self) -> int:
        return MFCC_DIM

    def frame_geometry(self) -> tuple[float, float]:
        return self.hop / self.sample_rate, (self.win / 2.0) / self.sample_rate

    def output_frames(self, n_samples: int) -> int:
        return (n_samples - self.win) // self.hop + 1

    def forward(self, x) -> Tensor:
        """Compute MFCCs for waveforms [N, L] (or [L]) -> [N, T, 20]."""
        xd = x.data if isinstance(x, Tensor) else np.asarray(x)
        squeeze = xd.ndim == 1
        if squeeze:
            xd = xd[None]
        n, length = xd.shape
        if length < self.win:
            raise ShapeError(f"chunk of {length} samples is shorter than one {self.win}-sample window")
        t = self.output_frames(length)
        xc = np.ascontiguousarray(xd, dtype=np.float64)
        sn, sl = xc.strides
        frames = as_strided(xc, shape=(n, t, self.win), strides=(sn, sl * self.hop, sl))
        windowed = frames * self.window
        power = np.abs(np.fft.rfft(windowed, n=self.n_fft, axis=-1)) ** 2
        mel_power = power @ self.mel_weights.T
        log_mel = np.log(np.maximum(mel_power, MFCC_LOG_FLOOR))
        cepstra = log_mel @ self.dct.T
        log_energy = np.log(np.maximum((windowed**2).sum(axis=-1), MFCC_LOG_FLOOR))
        out = np.concatenate([log_energy[..., None], cepstra[..., 1 : MFCC_KEPT + 1]], axis=-1)
        return Tensor(out[0] if squeeze else out, dtype=np.float32)


def mfcc(extractor: MfccExtractor, waveform: Waveform) -> FeatureSequence:
    """Extract the MFCC frame sequence of one chunk."""
    if waveform.sample_rate != extractor.sample_rate:
        raise ShapeError(
            f"waveform rate {waveform.sample_rate} != extractor rate {extractor.sample_rate}"
        )
    out = extractor.forward(waveform.samples)
    period, origin = extractor.frame_geometry()
    return FeatureSequence(out, period, origin)
