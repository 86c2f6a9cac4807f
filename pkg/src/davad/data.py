"""Corpus I/O and the synthetic multi-domain corpus generator.

Covers WAV parsing/writing (PCM16 and IEEE float32, mono), speech segment
annotations (TSV), corpus manifests, train/dev/test split construction
including leave-one-domain-out folds, and a deterministic generator that
produces a desk-scale multi-domain corpus with exact ground truth plus a
noise bank for augmentation.
"""

from __future__ import annotations

import hashlib
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import CorpusError, FormatError, ParameterError, ValidationError
from .timeline import Timeline

# ---------------------------------------------------------------------------
# waveform container


@dataclass
class Waveform:
    """Mono PCM samples normalized to [-1, 1] with a sample rate in Hz."""

    samples: np.ndarray
    sample_rate: int = 16000

    def __post_init__(self):
        self.samples = np.asarray(self.samples)
        if self.samples.ndim != 1:
            raise ValidationError(f"waveform must be mono 1-d, got shape {self.samples.shape}")
        if self.sample_rate <= 0:
            raise ValidationError(f"sample rate must be positive, got {self.sample_rate}")
        if not np.all(np.isfinite(self.samples)):
            raise ValidationError("waveform contains non-finite samples")

    @property
    def duration(self) -> float:
        return len(self.samples) / self.sample_rate


# ---------------------------------------------------------------------------
# WAV file format

_FMT_PCM = 1
_FMT_IEEE_FLOAT = 3


def read_wav(path) -> Waveform:
    """Parse a RIFF/WAVE file: mono PCM 16-bit or IEEE float 32-bit.

    PCM samples are normalized by 1/32768; unknown chunks are skipped.
    """
    raw = Path(path).read_bytes()
    if len(raw) < 12 or raw[:4] != b"RIFF":
        raise FormatError(f"{path}: not a RIFF file")
    if raw[8:12] != b"WAVE":
        raise FormatError(f"{path}: RIFF form type is {raw[8:12]!r}, not WAVE")

    fmt = None
    data = None
    offset = 12
    while offset + 8 <= len(raw):
        chunk_id = raw[offset : offset + 4]
        (chunk_size,) = struct.unpack_from("<I", raw, offset + 4)
        body_start = offset + 8
        if chunk_id == b"fmt ":
            if chunk_size < 16 or body_start + 16 > len(raw):
                raise FormatError(f"{path}: truncated fmt chunk")
            fmt = struct.unpack_from("<HHIIHH", raw, body_start)
        elif chunk_id == b"data":
            if body_start + chunk_size > len(raw):
                raise FormatError(f"{path}: truncated data chunk "
                                  f"(declared {chunk_size}, available {len(raw) - body_start})")
            data = raw[body_start : body_start + chunk_size]
        # chunks are word-aligned
        offset = body_start + chunk_size + (chunk_size & 1)

    if fmt is None:
        raise FormatError(f"{path}: missing fmt chunk")
    if data is None:
        raise FormatError(f"{path}: missing data chunk")
    audio_format, channels, sample_rate, _byte_rate, _block_align, bits = fmt
    if channels != 1:
        raise FormatError(f"{path}: {channels} channels, only mono is supported")
    if audio_format == _FMT_PCM and bits == 16:
        ints = np.frombuffer(data, dtype="<i2")
        samples = ints.astype(np.float32) / 32768.0
    elif audio_format == _FMT_IEEE_FLOAT and bits == 32:
        samples = np.clip(np.frombuffer(data, dtype="<f4"), -1.0, 1.0)
    else:
        raise FormatError(f"{path}: unsupported codec (format {audio_format}, {bits} bits)")
    return Waveform(samples, sample_rate=int(sample_rate))


def write_wav(path, waveform: Waveform, codec: str = "pcm16") -> None:
    """Write a mono WAV file; pcm16 round-trips read_wav output bit-exactly."""
    if codec == "pcm16":
        ints = np.clip(np.round(waveform.samples * 32768.0), -32768, 32767).astype("<i2")
        payload = ints.tobytes()
        audio_format, bits = _FMT_PCM, 16
    elif codec == "float32":
        payload = waveform.samples.astype("<f4").tobytes()
        audio_format, bits = _FMT_IEEE_FLOAT, 32
    else:
        raise ParameterError(f"unsupported codec {codec!r}")
    block_align = bits // 8
    byte_rate = waveform.sample_rate * block_align
    fmt_chunk = struct.pack(
        "<HHIIHH", audio_format, 1, waveform.sample_rate, byte_rate, block_align, bits
    )
    riff_size = 4 + (8 + len(fmt_chunk)) + (8 + len(payload))
    with open(path, "wb") as fh:
        fh.write(b"RIFF" + struct.pack("<I", riff_size) + b"WAVE")
        fh.write(b"fmt " + struct.pack("<I", len(fmt_chunk)) + fmt_chunk)
        fh.write(b"data" + struct.pack("<I", len(payload)) + payload)


def wav_duration(path) -> float:
    """Duration in seconds from the header, without decoding samples."""
    w = read_wav(path)
    return w.duration


# ---------------------------------------------------------------------------
# segment annotations


@dataclass
class SegmentAnnotation:
    uri: str
    regions: Timeline


def parse_segments(path) -> SegmentAnnotation:
    """Parse a speech segment TSV: ``uri<TAB>start<TAB>end<TAB>label``.

    Overlapping speech regions are merged; output is sorted and normalized.
    """
    uri = ""
    regions = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\n")
            if not line.strip():
                continue
            parts = line.split("\t")
            if len(parts) != 4:
                raise FormatError(f"{path}:{lineno}: expected 4 tab-separated fields, got {len(parts)}")
            line_uri, start_s, end_s, label = parts
            if label != "speech":
                raise FormatError(f"{path}:{lineno}: unsupported label {label!r}")
            try:
                start, end = float(start_s), float(end_s)
            except ValueError as exc:
                raise FormatError(f"{path}:{lineno}: bad number ({exc})") from None
            if end <= start:
                raise ValidationError(f"{path}:{lineno}: end {end} must exceed start {start}")
            if uri and line_uri != uri:
                raise ValidationError(f"{path}:{lineno}: mixed uris {uri!r} and {line_uri!r}")
            uri = line_uri
            regions.append((start, end))
    return SegmentAnnotation(uri=uri, regions=Timeline(regions))


def write_segments(path, uri: str, timeline: Timeline) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for start, end in timeline:
            fh.write(f"{uri}\t{start:.6f}\t{end:.6f}\tspeech\n")


# ---------------------------------------------------------------------------
# manifests


@dataclass(frozen=True)
class ManifestEntry:
    uri: str
    audio_path: Path
    annotation_path: Path
    domain: str
    split: str


@dataclass
class CorpusManifest:
    entries: list[ManifestEntry] = field(default_factory=list)

    def domains(self) -> list[str]:
        return sorted({e.domain for e in self.entries})

    def split(self, name: str) -> list[ManifestEntry]:
        return [e for e in self.entries if e.split == name]

    def validate(self) -> None:
        uris = [e.uri for e in self.entries]
        if len(set(uris)) != len(uris):
            dupes = sorted({u for u in uris if uris.count(u) > 1})
            raise ValidationError(f"duplicate uris in manifest: {dupes}")
        for e in self.entries:
            if e.split not in ("train", "dev", "test"):
                raise ValidationError(f"{e.uri}: unknown split {e.split!r}")
            if not e.audio_path.exists():
                raise ValidationError(f"{e.uri}: missing audio file {e.audio_path}")
            if not e.annotation_path.exists():
                raise ValidationError(f"{e.uri}: missing annotation file {e.annotation_path}")


def load_manifest(path) -> CorpusManifest:
    """Load a manifest TSV; paths are resolved relative to its location."""
    path = Path(path)
    if not path.exists():
        raise ValidationError(f"manifest file {path} does not exist")
    base = path.parent
    entries = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\n")
            if not line.strip():
                continue
            parts = line.split("\t")
            if len(parts) != 5:
                raise FormatError(f"{path}:{lineno}: expected 5 tab-separated fields, got {len(parts)}")
            uri, audio, ann, domain, split = parts
            entries.append(
                ManifestEntry(uri, base / audio, base / ann, domain, split)
            )
    manifest = CorpusManifest(entries)
    manifest.validate()
    return manifest


def write_manifest(path, manifest: CorpusManifest) -> None:
    path = Path(path)
    base = path.parent
    with open(path, "w", encoding="utf-8") as fh:
        for e in manifest.entries:
            audio = e.audio_path.relative_to(base)
            ann = e.annotation_path.relative_to(base)
            fh.write(f"{e.uri}\t{audio.as_posix()}\t{ann.as_posix()}\t{e.domain}\t{e.split}\n")


def make_splits(
    manifest: CorpusManifest, mode: str, domain: str | None = None
) -> tuple[list[ManifestEntry], list[ManifestEntry], list[ManifestEntry]]:
    """Build (train, dev, test) file lists under a domain policy.

    ``in_domain`` keeps the declared splits; ``leave_one_out`` removes
    ``domain`` from train and dev and restricts test to it;
    ``single_domain`` restricts all three splits to ``domain``.
    """
    if mode not in ("in_domain", "leave_one_out", "single_domain"):
        raise ParameterError(f"unknown split mode {mode!r}")
    if mode != "in_domain":
        if domain is None:
            raise ParameterError(f"mode {mode!r} needs a domain")
        if domain not in manifest.domains():
            raise ParameterError(f"unknown domain {domain!r}; have {manifest.domains()}")
    train = manifest.split("train")
    dev = manifest.split("dev")
    test = manifest.split("test")
    if mode == "leave_one_out":
        train = [e for e in train if e.domain != domain]
        dev = [e for e in dev if e.domain != domain]
        test = [e for e in test if e.domain == domain]
    elif mode == "single_domain":
        train = [e for e in train if e.domain == domain]
        dev = [e for e in dev if e.domain == domain]
        test = [e for e in test if e.domain == domain]
    return train, dev, test


# ---------------------------------------------------------------------------
# synthetic corpus generation


@dataclass
class SynthSpec:
    """Parameters for the deterministic synthetic multi-domain corpus."""

    n_domains: int = 11
    train_files: int = 6
    dev_files: int = 3
    test_files: int = 3
    file_duration: float = 60.0
    speech_fraction: float = 0.5
    sample_rate: int = 16000
    seed: int = 0
    noise_files: int = 6
    noise_duration: float = 30.0
    utterance_min: float = 0.4
    utterance_max: float = 1.6

    def __post_init__(self):
        if self.n_domains < 1:
            raise ParameterError("need at least one domain")
        if min(self.train_files, self.dev_files, self.test_files) < 1:
            raise ParameterError("need at least one file per split")
        if not 0.05 <= self.speech_fraction <= 0.95:
            raise ParameterError("speech fraction must be in [0.05, 0.95]")
        if not 0.1 <= self.utterance_min <= self.utterance_max:
            raise ParameterError("utterance range must satisfy 0.1 <= min <= max")


_TEXTURES = ("white", "pink", "hum", "babble", "clicks")


def _file_rng(seed: int, uri: str) -> np.random.Generator:
    # stable per-file stream independent of generation order
    digest = hashlib.sha256(uri.encode("utf-8")).digest()
    key = int.from_bytes(digest[:8], "little")
    return np.random.default_rng(np.random.SeedSequence(entropy=seed, spawn_key=(key,)))


def _domain_center_hz(k: int, n: int) -> float:
    if n == 1:
        return 1500.0
    return 250.0 * (6600.0 / 250.0) ** (k / (n - 1))


def _channel_gain(freqs: np.ndarray, center: float) -> np.ndarray:
    # log-frequency band bump plus two narrow resonances pinned to the band:
    # a strong, stable spectral fingerprint per domain with a broadband floor
    # that keeps speech audible everywhere
    safe = np.maximum(freqs, 1.0)
    octaves = np.log2(safe / center)
    gain = 0.03 + 0.97 * np.exp(-0.5 * (octaves / 0.45) ** 2)
    for ratio in (0.82, 1.27):
        gain = gain + 2.5 * np.exp(-0.5 * ((freqs - center * ratio) / (0.04 * center)) ** 2)
    return gain


def _apply_channel(x: np.ndarray, center: float, fs: int) -> np.ndarray:
    spectrum = np.fft.rfft(x)
    freqs = np.fft.rfftfreq(len(x), d=1.0 / fs)
    return np.fft.irfft(spectrum * _channel_gain(freqs, center), n=len(x))


def _noise_texture(kind: str, n: int, fs: int, rng: np.random.Generator) -> np.ndarray:
    if kind == "white":
        noise = rng.normal(size=n)
    elif kind == "pink":
        white = rng.normal(size=n)
        spectrum = np.fft.rfft(white)
        freqs = np.fft.rfftfreq(n, d=1.0 / fs)
        spectrum /= np.sqrt(np.maximum(freqs, 1.0))
        noise = np.fft.irfft(spectrum, n=n)
    elif kind == "hum":
        t = np.arange(n) / fs
        noise = np.zeros(n)
        for h in range(1, 9):
            amp = 1.0 / h
            noise += amp * np.sin(2 * np.pi * 50.0 * h * t + rng.uniform(0, 2 * np.pi))
        noise += 0.05 * rng.normal(size=n)
    elif kind == "babble":
        white = rng.normal(size=n)
        spectrum = np.fft.rfft(white)
        freqs = np.fft.rfftfreq(n, d=1.0 / fs)
        band = (freqs > 400) & (freqs < 3200)
        spectrum *= band
        carrier = np.fft.irfft(spectrum, n=n)
        # slow amplitude modulation, 2-6 Hz
        env_src = rng.normal(size=n)
        env_spec = np.fft.rfft(env_src)
        env_spec *= np.fft.rfftfreq(n, d=1.0 / fs) < 6.0
        envelope = np.abs(np.fft.irfft(env_spec, n=n))
        envelope /= max(envelope.max(), 1e-9)
        noise = carrier * (0.2 + 0.8 * envelope)
    elif kind == "clicks":
        noise = 0.02 * rng.normal(size=n)
        n_clicks = max(1, int(n / fs * 15))
        positions = rng.integers(0, max(n - 50, 1), size=n_clicks)
        kernel = np.exp(-np.arange(40) / 6.0) * np.cos(np.arange(40) * 0.9)
        for p in positions:
            amp = rng.uniform(0.5, 1.0) * rng.choice([-1.0, 1.0])
            noise[p : p + 40] += amp * kernel[: max(0, min(40, n - p))]
    else:
        raise ParameterError(f"unknown texture {kind!r}")
    peak = np.max(np.abs(noise))
    return noise / max(peak, 1e-9)


def _synth_utterance(duration: float, fs: int, rng: np.random.Generator) -> np.ndarray:
    """Sawtooth-excited harmonic burst with formant-like spectral shaping."""
    n = int(round(duration * fs))
    if n < 16:
        return np.zeros(n)
    t = np.arange(n) / fs
    f0 = rng.uniform(90.0, 300.0)
    vibrato = 1.0 + 0.02 * np.sin(2 * np.pi * rng.uniform(2.0, 5.0) * t + rng.uniform(0, 2 * np.pi))
    phase = np.cumsum(f0 * vibrato) / fs
    saw = 2.0 * (phase - np.floor(phase)) - 1.0

    spectrum = np.fft.rfft(saw)
    freqs = np.fft.rfftfreq(n, d=1.0 / fs)
    envelope = np.full_like(freqs, 0.05)
    formants = (rng.uniform(300, 900), rng.uniform(900, 2500), rng.uniform(2500, 3500))
    for f_center in formants:
        bw = rng.uniform(80.0, 200.0)
        envelope += np.exp(-0.5 * ((freqs - f_center) / bw) ** 2)
    shaped = np.fft.irfft(spectrum * envelope, n=n)

    ramp = min(int(0.010 * fs), n // 2)
    window = np.ones(n)
    if ramp > 0:
        edge = 0.5 - 0.5 * np.cos(np.pi * np.arange(ramp) / ramp)
        window[:ramp] = edge
        window[-ramp:] = edge[::-1]
    shaped *= window
    rms = np.sqrt(np.mean(shaped**2))
    return shaped * (rng.uniform(0.10, 0.20) / max(rms, 1e-9))


def _synth_file(
    spec: SynthSpec, domain_index: int, uri: str
) -> tuple[np.ndarray, Timeline]:
    rng = _file_rng(spec.seed, uri)
    fs = spec.sample_rate
    n = int(round(spec.file_duration * fs))
    speech = np.zeros(n)
    regions = []

    frac = spec.speech_fraction
    mean_utterance = 0.5 * (spec.utterance_min + spec.utterance_max)
    pause_scale = mean_utterance * (1.0 - frac) / frac
    cursor = rng.uniform(0.0, 1.0) * pause_scale  # random initial silence
    while cursor < spec.file_duration - 0.25:
        dur = rng.uniform(spec.utterance_min, spec.utterance_max)
        dur = min(dur, spec.file_duration - cursor - 0.05)
        if dur < 0.2:
            break
        start_idx = int(round(cursor * fs))
        burst = _synth_utterance(dur, fs, rng)
        end_idx = min(start_idx + len(burst), n)
        speech[start_idx:end_idx] += burst[: end_idx - start_idx]
        regions.append((start_idx / fs, end_idx / fs))
        cursor = end_idx / fs + rng.uniform(0.4, 1.6) * pause_scale

    texture = _TEXTURES[domain_index % len(_TEXTURES)]
    noise = _noise_texture(texture, n, fs, rng)

    speech_mask = np.zeros(n, dtype=bool)
    for start, end in regions:
        speech_mask[int(round(start * fs)) : int(round(end * fs))] = True
    p_speech = float(np.mean(speech[speech_mask] ** 2)) if speech_mask.any() else 0.0
    p_noise = float(np.mean(noise**2))
    snr_db = 10.0 + 8.0 * (domain_index / max(spec.n_domains - 1, 1))
    gain = np.sqrt(p_speech / (p_noise * 10.0 ** (snr_db / 10.0))) if p_speech > 0 else 0.05

    mix = speech + gain * noise
    mix = _apply_channel(mix, _domain_center_hz(domain_index, spec.n_domains), fs)
    peak = np.max(np.abs(mix))
    mix = 0.89 * mix / max(peak, 1e-9)
    return mix.astype(np.float32), Timeline(regions)


def generate_synthetic_corpus(spec: SynthSpec, out_dir) -> CorpusManifest:
    """Generate WAVs, annotations, a noise bank, and a manifest on disk.

    Byte-identical given the same spec (including seed).
    """
    out_dir = Path(out_dir)
    audio_dir = out_dir / "audio"
    ann_dir = out_dir / "ann"
    noise_dir = out_dir / "noise"
    for d in (audio_dir, ann_dir, noise_dir):
        d.mkdir(parents=True, exist_ok=True)

    entries = []
    split_sizes = (("train", spec.train_files), ("dev", spec.dev_files), ("test", spec.test_files))
    for k in range(spec.n_domains):
        domain = f"dom{k:02d}"
        for split, count in split_sizes:
            for i in range(count):
                uri = f"{domain}_{split}{i:02d}"
                samples, regions = _synth_file(spec, k, uri)
                audio_path = audio_dir / f"{uri}.wav"
                ann_path = ann_dir / f"{uri}.tsv"
                write_wav(audio_path, Waveform(samples, spec.sample_rate))
                write_segments(ann_path, uri, regions)
                entries.append(ManifestEntry(uri, audio_path, ann_path, domain, split))

    for j in range(spec.noise_files):
        rng = _file_rng(spec.seed, f"noisebank{j:02d}")
        n = int(round(spec.noise_duration * spec.sample_rate))
        texture = _TEXTURES[j % len(_TEXTURES)]
        noise = 0.9 * _noise_texture(texture, n, spec.sample_rate, rng)
        write_wav(noise_dir / f"noise{j:02d}.wav", Waveform(noise.astype(np.float32), spec.sample_rate))

    manifest = CorpusManifest(entries)
    write_manifest(out_dir / "manifest.tsv", manifest)
    manifest.validate()
    return manifest


def load_noise_bank(noise_dir) -> list[Waveform]:
    noise_dir = Path(noise_dir)
    files = sorted(noise_dir.glob("*.wav"))
    if not files:
        raise CorpusError(f"no noise files in {noise_dir}")
    return [read_wav(p) for p in files]
