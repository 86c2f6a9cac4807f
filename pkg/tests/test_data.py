"""WAV parsing, segment annotations, manifests, splits, and the synthetic
corpus generator."""

import hashlib
import struct
from pathlib import Path

import numpy as np
import pytest

from davad.data import (
    SynthSpec,
    Waveform,
    generate_synthetic_corpus,
    load_manifest,
    make_splits,
    parse_segments,
    read_wav,
    write_manifest,
    write_segments,
    write_wav,
)
from davad.errors import FormatError, ParameterError, ValidationError
from davad.timeline import Timeline


def minimal_wav(samples: bytes, rate: int = 16000, fmt: int = 1, channels: int = 1, bits: int = 16) -> bytes:
    fmt_chunk = struct.pack("<HHIIHH", fmt, channels, rate, rate * 2, 2, bits)
    riff = 4 + 8 + len(fmt_chunk) + 8 + len(samples)
    return (
        b"RIFF" + struct.pack("<I", riff) + b"WAVE"
        + b"fmt " + struct.pack("<I", len(fmt_chunk)) + fmt_chunk
        + b"data" + struct.pack("<I", len(samples)) + samples
    )


# ---------------------------------------------------------------------------
# WAV


def test_minimal_wav_single_zero_sample(tmp_path):
    path = tmp_path / "one.wav"
    path.write_bytes(minimal_wav(struct.pack("<h", 0), rate=8000))
    w = read_wav(path)
    assert w.sample_rate == 8000
    assert np.array_equal(w.samples, [0.0])


def test_pcm16_normalization_of_extremes(tmp_path):
    path = tmp_path / "ext.wav"
    path.write_bytes(minimal_wav(struct.pack("<hh", 32767, -32768)))
    w = read_wav(path)
    assert w.samples[0] == pytest.approx(32767 / 32768)
    assert w.samples[1] == -1.0


def test_pcm16_round_trip_is_bit_exact(tmp_path):
    rng = np.random.default_rng(0)
    original = (rng.integers(-32768, 32768, size=1000).astype(np.float32)) / 32768.0
    p1, p2 = tmp_path / "a.wav", tmp_path / "b.wav"
    write_wav(p1, Waveform(original, 16000))
    first = read_wav(p1)
    write_wav(p2, first)
    assert p1.read_bytes() == p2.read_bytes()
    assert np.array_equal(first.samples, read_wav(p2).samples)


def test_float32_wav_supported_and_clipped(tmp_path):
    path = tmp_path / "f.wav"
    payload = np.array([0.5, -1.5, 2.0], dtype="<f4").tobytes()
    path.write_bytes(minimal_wav(payload, fmt=3, bits=32))
    w = read_wav(path)
    assert np.allclose(w.samples, [0.5, -1.0, 1.0])


def test_unknown_chunks_are_skipped(tmp_path):
    fmt_chunk = struct.pack("<HHIIHH", 1, 1, 16000, 32000, 2, 16)
    data = struct.pack("<h", 100)
    body = (
        b"fmt " + struct.pack("<I", len(fmt_chunk)) + fmt_chunk
        + b"LIST" + struct.pack("<I", 5) + b"abcde\x00"  # odd size, padded
        + b"data" + struct.pack("<I", len(data)) + data
    )
    path = tmp_path / "x.wav"
    path.write_bytes(b"RIFF" + struct.pack("<I", 4 + len(body)) + b"WAVE" + body)
    assert read_wav(path).samples[0] == pytest.approx(100 / 32768)


@pytest.mark.parametrize(
    "mutate, message",
    [
        (lambda b: b"JUNK" + b[4:], "RIFF"),
        (lambda b: b[:8] + b"EVAW" + b[12:], "WAVE"),
        (lambda b: b.replace(struct.pack("<HH", 1, 1), struct.pack("<HH", 2, 1)), "codec"),
        (lambda b: b.replace(struct.pack("<HH", 1, 1), struct.pack("<HH", 1, 2)), "channels"),
        (lambda b: b[:-2], "truncated data"),
    ],
)
def test_distinct_format_errors(tmp_path, mutate, message):
    path = tmp_path / "bad.wav"
    path.write_bytes(mutate(minimal_wav(struct.pack("<hh", 1, 2))))
    with pytest.raises(FormatError, match=message):
        read_wav(path)


def test_header_fuzz_rejects_without_crashing(tmp_path):
    pristine = minimal_wav(struct.pack("<4h", 10, -10, 20, -20))
    rng = np.random.default_rng(1)
    path = tmp_path / "fuzz.wav"
    outcomes = {"ok": 0, "rejected": 0}
    for _ in range(400):
        raw = bytearray(pristine)
        pos = int(rng.integers(0, 44))
        raw[pos] ^= 1 << int(rng.integers(0, 8))
        path.write_bytes(bytes(raw))
        try:
            read_wav(path)
            outcomes["ok"] += 1
        except FormatError:
            outcomes["rejected"] += 1
    assert outcomes["rejected"] > 100  # header flips are overwhelmingly fatal


# ---------------------------------------------------------------------------
# segments


def test_empty_segment_file(tmp_path):
    path = tmp_path / "empty.tsv"
    path.write_text("")
    ann = parse_segments(path)
    assert len(ann.regions) == 0


def test_overlapping_regions_merge(tmp_path):
    path = tmp_path / "seg.tsv"
    path.write_text("u\t1.0\t3.0\tspeech\nu\t2.0\t4.0\tspeech\n")
    ann = parse_segments(path)
    assert ann.regions.regions == ((1.0, 4.0),)


def test_unsorted_input_is_sorted_and_merged(tmp_path):
    rng = np.random.default_rng(2)
    regions = [(float(s), float(s) + rng.uniform(0.1, 2.0)) for s in rng.uniform(0, 50, size=20)]
    lines = [f"u\t{s}\t{e}\tspeech" for s, e in regions]
    rng.shuffle(lines)
    path = tmp_path / "seg.tsv"
    path.write_text("\n".join(lines) + "\n")
    ann = parse_segments(path)
    # oracle: sort + merge
    expected = Timeline(regions)
    assert ann.regions == expected
    starts = [s for s, _ in ann.regions]
    assert starts == sorted(starts)


def test_malformed_line_reports_line_number(tmp_path):
    path = tmp_path / "seg.tsv"
    path.write_text("u\t0\t1\tspeech\nu\t2\tspeech\n")
    with pytest.raises(FormatError, match=":2:"):
        parse_segments(path)


def test_inverted_region_rejected(tmp_path):
    path = tmp_path / "seg.tsv"
    path.write_text("u\t3.0\t1.0\tspeech\n")
    with pytest.raises(ValidationError):
        parse_segments(path)


def test_segment_round_trip(tmp_path):
    timeline = Timeline([(0.25, 1.5), (2.0, 3.75)])
    path = tmp_path / "seg.tsv"
    write_segments(path, "file1", timeline)
    ann = parse_segments(path)
    assert ann.uri == "file1"
    assert ann.regions == timeline


# ---------------------------------------------------------------------------
# manifest and splits


@pytest.fixture(scope="module")
def tiny_corpus(tmp_path_factory):
    out = tmp_path_factory.mktemp("corpus")
    spec = SynthSpec(
        n_domains=3, train_files=2, dev_files=1, test_files=1, file_duration=4.0, seed=42,
        noise_files=2, noise_duration=3.0,
    )
    manifest = generate_synthetic_corpus(spec, out)
    return out, spec, manifest


def test_manifest_round_trip(tiny_corpus, tmp_path):
    out, _, manifest = tiny_corpus
    loaded = load_manifest(out / "manifest.tsv")
    assert [e.uri for e in loaded.entries] == [e.uri for e in manifest.entries]
    assert loaded.domains() == ["dom00", "dom01", "dom02"]


def test_manifest_missing_file_rejected(tiny_corpus, tmp_path):
    out, _, _ = tiny_corpus
    lines = (out / "manifest.tsv").read_text().splitlines()
    broken = lines[:1] + ["ghost\taudio/ghost.wav\tann/ghost.tsv\tdom00\ttrain"]
    path = tmp_path / "manifest.tsv"
    path.write_text("\n".join(broken) + "\n")
    (tmp_path / "audio").symlink_to(out / "audio")
    (tmp_path / "ann").symlink_to(out / "ann")
    with pytest.raises(ValidationError, match="ghost"):
        load_manifest(path)


def test_duplicate_uri_rejected(tiny_corpus, tmp_path):
    out, _, _ = tiny_corpus
    lines = (out / "manifest.tsv").read_text().splitlines()
    path = tmp_path / "manifest.tsv"
    path.write_text("\n".join(lines + [lines[0]]) + "\n")
    (tmp_path / "audio").symlink_to(out / "audio")
    (tmp_path / "ann").symlink_to(out / "ann")
    with pytest.raises(ValidationError, match="duplicate"):
        load_manifest(path)


def test_in_domain_split_keeps_declared(tiny_corpus):
    _, spec, manifest = tiny_corpus
    train, dev, test = make_splits(manifest, "in_domain")
    assert len(train) == spec.n_domains * spec.train_files
    assert len(dev) == spec.n_domains * spec.dev_files
    assert len(test) == spec.n_domains * spec.test_files


def test_leave_one_out_partitions_correctly(tiny_corpus):
    _, _, manifest = tiny_corpus
    domains = manifest.domains()
    covered = []
    for domain in domains:
        train, dev, test = make_splits(manifest, "leave_one_out", domain)
        assert all(e.domain != domain for e in train)
        assert all(e.domain != domain for e in dev)
        assert all(e.domain == domain for e in test)
        covered.extend(sorted({e.domain for e in test}))
    assert covered == domains  # each fold's test covers exactly its own domain


def test_single_domain_split(tiny_corpus):
    _, _, manifest = tiny_corpus
    train, dev, test = make_splits(manifest, "single_domain", "dom01")
    for entries in (train, dev, test):
        assert entries and all(e.domain == "dom01" for e in entries)


def test_unknown_domain_and_mode_rejected(tiny_corpus):
    _, _, manifest = tiny_corpus
    with pytest.raises(ParameterError):
        make_splits(manifest, "leave_one_out", "nope")
    with pytest.raises(ParameterError):
        make_splits(manifest, "bogus")


# ---------------------------------------------------------------------------
# synthetic corpus properties


def tree_hash(root: Path) -> str:
    digest = hashlib.sha256()
    for path in sorted(root.rglob("*")):
        if path.is_file():
            digest.update(path.relative_to(root).as_posix().encode())
            digest.update(path.read_bytes())
    return digest.hexdigest()


def test_generation_is_deterministic(tmp_path):
    spec = SynthSpec(
        n_domains=2, train_files=1, dev_files=1, test_files=1, file_duration=3.0, seed=9,
        noise_files=1, noise_duration=2.0,
    )
    generate_synthetic_corpus(spec, tmp_path / "a")
    generate_synthetic_corpus(spec, tmp_path / "b")
    assert tree_hash(tmp_path / "a") == tree_hash(tmp_path / "b")


def test_different_seed_changes_output(tmp_path):
    base = dict(
        n_domains=2, train_files=1, dev_files=1, test_files=1, file_duration=3.0,
        noise_files=1, noise_duration=2.0,
    )
    generate_synthetic_corpus(SynthSpec(seed=1, **base), tmp_path / "a")
    generate_synthetic_corpus(SynthSpec(seed=2, **base), tmp_path / "b")
    assert tree_hash(tmp_path / "a") != tree_hash(tmp_path / "b")


def test_speech_fraction_near_target(tiny_corpus):
    out, spec, manifest = tiny_corpus
    total_speech = total = 0.0
    for entry in manifest.entries:
        ann = parse_segments(entry.annotation_path)
        total_speech += ann.regions.duration()
        total += spec.file_duration
    assert abs(total_speech / total - spec.speech_fraction) < 0.05


def test_annotations_within_audio(tiny_corpus):
    _, spec, manifest = tiny_corpus
    for entry in manifest.entries:
        ann = parse_segments(entry.annotation_path)
        assert ann.regions.end() <= spec.file_duration + 1e-9


def test_noise_bank_emitted(tiny_corpus):
    out, spec, _ = tiny_corpus
    noise_files = sorted((out / "noise").glob("*.wav"))
    assert len(noise_files) == spec.noise_files
    w = read_wav(noise_files[0])
    assert w.duration == pytest.approx(spec.noise_duration)
    assert np.max(np.abs(w.samples)) <= 1.0


def test_domain_separability_with_centroid_probe(tmp_path):
    """1-nearest-neighbour on spectral centroid over 2 s chunks must beat
    60% accuracy across domains (the design target that makes the
    confusion experiment meaningful)."""
    spec = SynthSpec(
        n_domains=11, train_files=1, dev_files=1, test_files=1, file_duration=8.0, seed=3,
        noise_files=1, noise_duration=2.0,
    )
    manifest = generate_synthetic_corpus(spec, tmp_path)
    feats, labels = [], []
    domains = manifest.domains()
    for entry in manifest.entries:
        w = read_wav(entry.audio_path)
        n = 2 * w.sample_rate
        for start in range(0, len(w.samples) - n + 1, n):
            chunk = w.samples[start : start + n]
            spectrum = np.abs(np.fft.rfft(chunk)) ** 2
            freqs = np.fft.rfftfreq(n, 1.0 / w.sample_rate)
            centroid = (freqs * spectrum).sum() / spectrum.sum()
            rolloff = freqs[np.searchsorted(np.cumsum(spectrum), 0.85 * spectrum.sum())]
            feats.append([np.log(centroid), np.log(rolloff + 1.0)])
            labels.append(domains.index(entry.domain))
    feats = np.array(feats)
    labels = np.array(labels)
    correct = 0
    for i in range(len(feats)):
        d = np.linalg.norm(feats - feats[i], axis=1)
        d[i] = np.inf
        correct += labels[int(np.argmin(d))] == labels[i]
    assert correct / len(feats) > 0.60
