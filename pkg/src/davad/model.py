"""Full detection model: shared feature extractor, speech-labeling branch,
and domain-classification branch behind a gradient reversal.

The speech branch stacks two bidirectional LSTMs and three feed-forward
layers (the last one projecting to the two classes before softmax); the
domain branch is one unidirectional LSTM, a max pool over time, and one
feed-forward layer over the domains.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np

from . import autograd as ag
from .autograd import Tensor
from .checkpoint import load_archive, save_archive
from .data import Waveform
from .errors import CapabilityError, FormatError, ParameterError, ShapeError
from .frontend import MfccExtractor, SincFilterParams, SincNet, SincNetConfig

TAP_POINTS = ("after_frontend", "after_lstm1", "after_lstm2")


@dataclass
class ModelConfig:
    frontend: str = "sinc"  # sinc | mfcc
    sample_rate: int = 16000
    hidden_size: int = 128
    vad_bilstm_layers: int = 2
    vad_ff_layers: int = 3
    n_domains: int = 0  # 0 disables the domain branch
    reversal_lambda: float = 1.0
    domain_branch_tap: str = "after_frontend"
    domain_output: str = "softmax"  # softmax | linear (head feeding the MSE)
    dtype: str = "float32"
    sinc_filters: int = 80
    sinc_kernel: int = 251
    sinc_stride: int = 10
    conv_channels: int = 60
    conv_kernel: int = 5
    pool: int = 3
    leaky_slope: float = 0.2
    chunk_duration: float = 2.0

    def __post_init__(self):
        if self.frontend not in ("sinc", "mfcc"):
            raise ParameterError(f"unknown frontend {self.frontend!r}")
        if self.domain_branch_tap not in TAP_POINTS:
            raise ParameterError(f"unknown tap {self.domain_branch_tap!r}; choose from {TAP_POINTS}")
        if self.n_domains != 0 and self.n_domains < 2:
            raise ParameterError("the domain branch needs n_domains >= 2")
        if self.reversal_lambda < 0:
            raise ParameterError("reversal strength must be non-negative")
        if self.domain_output not in ("softmax", "linear"):
            raise ParameterError(f"unknown domain_output {self.domain_output!r}")
        if self.vad_bilstm_layers < 1 or self.vad_ff_layers < 1:
            raise ParameterError("need at least one LSTM and one FF layer")

    @property
    def np_dtype(self):
        return np.float64 if self.dtype == "float64" else np.float32

    @property
    def chunk_samples(self) -> int:
        return int(round(self.chunk_duration * self.sample_rate))

    def sincnet_config(self) -> SincNetConfig:
        return SincNetConfig(
            sinc_filters=self.sinc_filters,
            sinc_kernel=self.sinc_kernel,
            sinc_stride=self.sinc_stride,
            conv_channels=self.conv_channels,
            conv_kernel=self.conv_kernel,
            pool=self.pool,
            leaky_slope=self.leaky_slope,
            sample_rate=self.sample_rate,
        )

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        return cls(**d)


# ---------------------------------------------------------------------------
# LSTM


@dataclass
class LstmParams:
    """Input, recurrent, and bias parameters for the four gates (i, f, g, o)."""

    wx: Tensor  # [D, 4H]
    wh: Tensor  # [H, 4H]
    b: Tensor  # [4H]

    @property
    def hidden_size(self) -> int:
        return self.wh.shape[0]

    @property
    def input_size(self) -> int:
        return self.wx.shape[0]

    @classmethod
    def build(cls, input_size: int, hidden_size: int, rng: np.random.Generator, dtype) -> "LstmParams":
        def uniform(shape, fan_in):
            bound = 1.0 / np.sqrt(fan_in)
            return rng.uniform(-bound, bound, size=shape).astype(dtype)

        bias = np.zeros(4 * hidden_size, dtype=dtype)
        bias[hidden_size : 2 * hidden_size] = 1.0  # forget gate starts open
        return cls(
            Tensor(uniform((input_size, 4 * hidden_size), input_size), requires_grad=True),
            Tensor(uniform((hidden_size, 4 * hidden_size), hidden_size), requires_grad=True),
            Tensor(bias, requires_grad=True),
        )

    def tensors(self) -> dict[str, Tensor]:
        return {"wx": self.wx, "wh": self.wh, "b": self.b}


def _sigmoid_arr(x: np.ndarray) -> np.ndarray:
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def _lstm_step(x_t: Tensor, h_prev: Tensor, c_prev: Tensor, wh: Tensor) -> tuple[Tensor, Tensor]:
    """One gated cell update, fused into a single tape record.

    ``x_t`` is the precomputed input projection (x @ wx + b) for this
    step; leading batch axes broadcast through.  Gate order is input,
    forget, cell, output.
    """
    hs = h_prev.data.shape[-1]
    gates = x_t.data + h_prev.data @ wh.data
    i = _sigmoid_arr(gates[..., :hs])
    f = _sigmoid_arr(gates[..., hs : 2 * hs])
    g = np.tanh(gates[..., 2 * hs : 3 * hs])
    o = _sigmoid_arr(gates[..., 3 * hs :])
    c_new_data = f * c_prev.data + i * g
    tc = np.tanh(c_new_data)
    requires = x_t.requires_grad or h_prev.requires_grad or c_prev.requires_grad or wh.requires_grad
    h_new = Tensor(o * tc, requires_grad=requires)
    c_new = Tensor(c_new_data, requires_grad=requires)

    def backward(gs):
        gh, gc = gs
        if gh is None:
            gh = np.zeros_like(tc)
        gc_tot = gh * o * (1.0 - tc * tc)
        if gc is not None:
            gc_tot = gc_tot + gc
        dgates = np.empty_like(gates)
        dgates[..., :hs] = (gc_tot * g) * i * (1.0 - i)
        dgates[..., hs : 2 * hs] = (gc_tot * c_prev.data) * f * (1.0 - f)
        dgates[..., 2 * hs : 3 * hs] = (gc_tot * i) * (1.0 - g * g)
        dgates[..., 3 * hs :] = (gh * tc) * o * (1.0 - o)
        wh_t = np.swapaxes(wh.data, -1, -2)
        dh_prev = dgates @ wh_t if h_prev.requires_grad else None
        dwh = np.swapaxes(h_prev.data, -1, -2) @ dgates if wh.requires_grad else None
        dc_prev = gc_tot * f if c_prev.requires_grad else None
        return dgates, dh_prev, dc_prev, dwh

    ag.record_multi((h_new, c_new), (x_t, h_prev, c_prev, wh), backward)
    return h_new, c_new


def _recurrence(steps: tuple[Tensor, ...], wh: Tensor, state_shape: tuple, dtype) -> list[Tensor]:
    h = Tensor(np.zeros(state_shape, dtype=dtype))
    c = Tensor(np.zeros(state_shape, dtype=dtype))
    outputs = []
    for x_t in steps:
        h, c = _lstm_step(x_t, h, c, wh)
        outputs.append(h)
    return outputs


def _lstm_direction(xt: Tensor, params: LstmParams, reverse: bool) -> Tensor:
    """Run one direction over time-major input [T, N, D] -> [T, N, H]."""
    t, n, d = xt.shape
    h_size = params.hidden_size
    if reverse:
        xt = ag.flip(xt, axis=0)
    # project every timestep in one matmul; time-major unstacked steps are
    # contiguous slices, so the recurrence reads them for free
    proj = ag.matmul(xt.reshape((t * n, d)), params.wx) + params.b
    steps = ag.unstack(proj.reshape((t, n, 4 * h_size)), axis=0)
    outputs = _recurrence(steps, params.wh, (n, h_size), xt.data.dtype)
    out = ag.stack(outputs, axis=0)
    if reverse:
        out = ag.flip(out, axis=0)
    return out


def _lstm_unidirectional(x: Tensor, params: LstmParams) -> Tensor:
    out = _lstm_direction(x.transpose((1, 0, 2)), params, reverse=False)
    return out.transpose((1, 0, 2))  # [N, T, H]


def _lstm_bidirectional(x: Tensor, fwd: LstmParams, bwd: LstmParams) -> Tensor:
    xt = x.transpose((1, 0, 2))  # [T, N, D]
    fwd_out = _lstm_direction(xt, fwd, reverse=False)
    bwd_out = _lstm_direction(xt, bwd, reverse=True)
    out = ag.concat([fwd_out, bwd_out], axis=2)  # [T, N, 2H]
    return out.transpose((1, 0, 2))


def lstm_forward(x: Tensor, params: LstmParams | tuple[LstmParams, LstmParams]) -> Tensor:
    """Run an LSTM over [T, D] or [N, T, D] input.

    A (forward, backward) parameter pair runs both directions and
    concatenates them to 2H features; a single LstmParams runs forward only.
    """
    squeeze = x.data.ndim == 2
    if squeeze:
        x = x.reshape((1,) + x.shape)
    if x.data.ndim != 3:
        raise ShapeError(f"lstm input must be [T, D] or [N, T, D], got {x.shape}")
    if x.shape[1] == 0:
        raise ShapeError("lstm over an empty sequence")
    if isinstance(params, tuple):
        fwd, bwd = params
        if x.shape[2] != fwd.input_size:
            raise ShapeError(f"lstm input dim {x.shape[2]} != expected {fwd.input_size}")
        out = _lstm_bidirectional(x, fwd, bwd)
    else:
        if x.shape[2] != params.input_size:
            raise ShapeError(f"lstm input dim {x.shape[2]} != expected {params.input_size}")
        out = _lstm_unidirectional(x, params)
    return out.reshape(out.shape[1:]) if squeeze else out


# ---------------------------------------------------------------------------
# feed-forward layer


@dataclass
class FfParams:
    w: Tensor  # [D_in, D_out]
    b: Tensor  # [D_out]

    @classmethod
    def build(cls, d_in: int, d_out: int, rng: np.random.Generator, dtype) -> "FfParams":
        bound = 1.0 / np.sqrt(d_in)
        return cls(
            Tensor(rng.uniform(-bound, bound, size=(d_in, d_out)).astype(dtype), requires_grad=True),
            Tensor(np.zeros(d_out, dtype=dtype), requires_grad=True),
        )

    def apply(self, x: Tensor) -> Tensor:
        return ag.matmul(x, self.w) + self.b

    def tensors(self) -> dict[str, Tensor]:
        return {"w": self.w, "b": self.b}


# ---------------------------------------------------------------------------
# assembled model

_PARTITION_SEEDS = {"frontend": 11, "vad": 23, "domain": 37}


class VadModel:
    """Parameter container for the three partitions plus forward passes.

    Every trainable tensor belongs to exactly one of the frontend, vad, or
    domain partitions; partition init streams are independent, so building
    with or without the domain branch yields identical frontend/vad weights.
    """

    def __init__(self, config: ModelConfig, seed: int = 0):
        self.config = config
        dtype = config.np_dtype

        def partition_rng(name: str) -> np.random.Generator:
            return np.random.default_rng(
                np.random.SeedSequence(entropy=seed, spawn_key=(_PARTITION_SEEDS[name],))
            )

        if config.frontend == "sinc":
            self.sincnet = SincNet.build(config.sincnet_config(), partition_rng("frontend"), dtype)
            self.mfcc_extractor = None
            feature_dim = self.sincnet.feature_dim
        else:
            self.sincnet = None
            self.mfcc_extractor = MfccExtractor(config.sample_rate)
            feature_dim = self.mfcc_extractor.feature_dim
        self.feature_dim = feature_dim

        h = config.hidden_size
        rng_v = partition_rng("vad")
        self.vad_lstms: list[tuple[LstmParams, LstmParams]] = []
        d_in = feature_dim
        for _ in range(config.vad_bilstm_layers):
            self.vad_lstms.append(
                (LstmParams.build(d_in, h, rng_v, dtype), LstmParams.build(d_in, h, rng_v, dtype))
            )
            d_in = 2 * h
        self.vad_ffs: list[FfParams] = []
        for i in range(config.vad_ff_layers):
            d_out = 2 if i == config.vad_ff_layers - 1 else h
            self.vad_ffs.append(FfParams.build(d_in, d_out, rng_v, dtype))
            d_in = d_out

        self.domain_lstm = None
        self.domain_ff = None
        if config.n_domains >= 2:
            rng_d = partition_rng("domain")
            tap_dim = feature_dim if config.domain_branch_tap == "after_frontend" else 2 * h
            self.domain_lstm = LstmParams.build(tap_dim, h, rng_d, dtype)
            self.domain_ff = FfParams.build(h, config.n_domains, rng_d, dtype)

    # -- parameter bookkeeping ------------------------------------------------

    def partitions(self) -> dict[str, dict[str, Tensor]]:
        frontend: dict[str, Tensor] = {}
        if self.sincnet is not None:
            frontend = {f"frontend/{k}": v for k, v in self.sincnet.parameters().items()}
        vad: dict[str, Tensor] = {}
        for i, (fwd, bwd) in enumerate(self.vad_lstms):
            for k, v in fwd.tensors().items():
                vad[f"vad/lstm{i}_fwd_{k}"] = v
            for k, v in bwd.tensors().items():
                vad[f"vad/lstm{i}_bwd_{k}"] = v
        for i, ff in enumerate(self.vad_ffs):
            for k, v in ff.tensors().items():
                vad[f"vad/ff{i}_{k}"] = v
        domain: dict[str, Tensor] = {}
        if self.domain_lstm is not None:
            for k, v in self.domain_lstm.tensors().items():
                domain[f"domain/lstm_{k}"] = v
            for k, v in self.domain_ff.tensors().items():
                domain[f"domain/ff_{k}"] = v
        return {"frontend": frontend, "vad": vad, "domain": domain}

    def parameters(self) -> dict[str, Tensor]:
        flat: dict[str, Tensor] = {}
        for group in self.partitions().values():
            flat.update(group)
        return flat

    def count_parameters(self) -> dict[str, int]:
        parts = self.partitions()
        counts = {name: sum(t.size for t in group.values()) for name, group in parts.items()}
        counts["total"] = sum(counts.values())
        return counts

    # -- forward passes ---------------------------------------------------

    def features(self, x) -> Tensor:
        """Waveform batch [N, L] -> frame features [N, T, D]."""
        if self.sincnet is not None:
            return self.sincnet.forward(x)
        return self.mfcc_extractor.forward(x)

    def frame_geometry(self) -> tuple[float, float]:
        if self.sincnet is not None:
            return self.sincnet.config.frame_geometry()
        return self.mfcc_extractor.frame_geometry()

    def output_frames(self, n_samples: int) -> int:
        if self.sincnet is not None:
            return self.sincnet.config.output_frames(n_samples)
        return self.mfcc_extractor.output_frames(n_samples)

    def vad_branch(self, feats: Tensor, want_taps: bool = False):
        """Frame features -> per-frame class distribution [N, T, 2].

        With ``want_taps`` also returns the tap activations available to
        the domain branch.
        """
        taps = {"after_frontend": feats}
        h = feats
        for i, pair in enumerate(self.vad_lstms):
            h = lstm_forward(h, pair)
            taps[f"after_lstm{i + 1}"] = h
        n, t, d = h.shape
        flat = h.reshape((n * t, d))
        for i, ff in enumerate(self.vad_ffs):
            flat = ff.apply(flat)
            if i < len(self.vad_ffs) - 1:
                flat = ag.tanh(flat)
        scores = ag.softmax(flat.reshape((n, t, 2)), axis=2)
        return (scores, taps) if want_taps else scores

    def domain_branch(self, tap: Tensor, reversal_lambda: float | None = None) -> Tensor:
        """Tap activations [N, T, D] -> domain distribution [N, n_domains].

        ``reversal_lambda`` > 0 routes the input through gradient reversal
        (training mode); None or 0 leaves the branch detachment to the
        caller.
        """
        if self.domain_lstm is None:
            raise CapabilityError("model was built without a domain branch")
        h = tap
        if reversal_lambda is not None:
            h = ag.gradient_reverse(h, reversal_lambda)
        h = lstm_forward(h, self.domain_lstm)  # [N, T, H]
        n, t, hidden = h.shape
        pooled = ag.max_pool1d(h.transpose((0, 2, 1)), t).reshape((n, hidden))
        logits = self.domain_ff.apply(pooled)
        if self.config.domain_output == "linear":
            return logits
        return ag.softmax(logits, axis=1)

    def tap_of(self, feats: Tensor, taps: dict[str, Tensor]) -> Tensor:
        name = self.config.domain_branch_tap
        if name == "after_frontend":
            return feats
        return taps[name]

    # -- persistence --------------------------------------------------------

    def save(self, path) -> None:
        tensors = {name: t.data for name, t in self.parameters().items()}
        save_archive(path, tensors, meta={"config": self.config.to_dict()})

    @classmethod
    def load(cls, path) -> "VadModel":
        tensors, meta = load_archive(path)
        if "config" not in meta:
            raise FormatError(f"{path}: missing config metadata block")
        model = cls(ModelConfig.from_dict(meta["config"]))
        params = model.parameters()
        missing = sorted(set(params) - set(tensors))
        extra = sorted(set(tensors) - set(params))
        if missing or extra:
            raise FormatError(f"{path}: parameter mismatch (missing {missing}, extra {extra})")
        for name, tensor in params.items():
            if tensors[name].shape != tensor.data.shape:
                raise FormatError(
                    f"{path}: shape mismatch for {name}: "
                    f"{tensors[name].shape} vs {tensor.data.shape}"
                )
            tensor.data = tensors[name].astype(model.config.np_dtype)
        return model


# ---------------------------------------------------------------------------
# single-chunk convenience ops


def _single_chunk(model: VadModel, waveform: Waveform) -> Tensor:
    if waveform.sample_rate != model.config.sample_rate:
        raise ShapeError(
            f"waveform rate {waveform.sample_rate} != model rate {model.config.sample_rate}"
        )
    return Tensor(waveform.samples.reshape(1, -1))


def forward_vad(model: VadModel, waveform: Waveform) -> Tensor:
    """Per-frame speech distribution [T, 2] for one chunk."""
    scores = model.vad_branch(model.features(_single_chunk(model, waveform)))
    return scores.reshape(scores.shape[1:])


def forward_domain(model: VadModel, waveform: Waveform) -> Tensor:
    """Domain distribution [n_domains] for one chunk (no reversal applied)."""
    feats = model.features(_single_chunk(model, waveform))
    if model.config.domain_branch_tap == "after_frontend":
        tap = feats
    else:
        _, taps = model.vad_branch(feats, want_taps=True)
        tap = taps[model.config.domain_branch_tap]
    out = model.domain_branch(tap, reversal_lambda=None)
    return out.reshape(out.shape[1:])


def count_parameters(model: VadModel) -> dict[str, int]:
    """Exact trainable scalar counts per partition plus the total."""
    return model.count_parameters()
