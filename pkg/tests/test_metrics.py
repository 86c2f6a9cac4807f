"""Detection error rate arithmetic, the rasterization oracle, selection,
aggregation, and the confusion matrix."""

import numpy as np
import pytest

from davad.data import SynthSpec, Waveform, generate_synthetic_corpus
from davad.errors import ParameterError, UndefinedRateError, ValidationError
from davad.metrics import (
    ConfusionMatrix,
    DetectionCounts,
    aggregate_over_domains,
    detection_counts,
    detection_error_rate,
    domain_confusion,
    false_alarm_rate,
    miss_rate,
    sigma_grid,
    tune,
    write_confusion_csv,
    write_evaluation_report,
)
from davad.model import ModelConfig, VadModel
from davad.inference import SlidingWindowConfig
from davad.timeline import Timeline
from davad.training import TrainConfig, TrainingCorpus, train

TINY = dict(hidden_size=8, sinc_filters=4, sinc_kernel=31, conv_channels=4, chunk_duration=0.125)


# ---------------------------------------------------------------------------
# detection counts


def test_perfect_hypothesis_has_no_errors():
    ref = Timeline([(1.0, 3.0), (5.0, 6.0)])
    counts = detection_counts(ref, Timeline(ref.regions), (0.0, 10.0))
    assert counts.false_alarm == 0.0
    assert counts.missed_detection == 0.0
    assert detection_error_rate(counts) == 0.0


def test_empty_hypothesis_misses_everything():
    ref = Timeline([(1.0, 3.0)])
    counts = detection_counts(ref, Timeline(), (0.0, 5.0))
    assert counts.false_alarm == 0.0
    assert counts.missed_detection == pytest.approx(2.0)
    assert detection_error_rate(counts) == pytest.approx(100.0)


def test_half_overlap_interval_arithmetic():
    # reference [1,3), hypothesis [2,4): FA 1 s, Miss 1 s, total 2 s
    counts = detection_counts(Timeline([(1.0, 3.0)]), Timeline([(2.0, 4.0)]), (0.0, 5.0))
    assert counts.false_alarm == pytest.approx(1.0)
    assert counts.missed_detection == pytest.approx(1.0)
    assert counts.total_speech == pytest.approx(2.0)
    assert detection_error_rate(counts) == pytest.approx(100.0)


def test_regions_outside_extent_rejected():
    with pytest.raises(ValidationError):
        detection_counts(Timeline([(1.0, 3.0)]), Timeline(), (0.0, 2.0))
    with pytest.raises(ValidationError):
        detection_counts(Timeline(), Timeline([(-1.0, 1.0)]), (0.0, 2.0))


def test_zero_reference_rate_is_undefined_not_zero():
    counts = detection_counts(Timeline(), Timeline([(0.0, 1.0)]), (0.0, 2.0))
    assert counts.false_alarm == pytest.approx(1.0)
    for fn in (detection_error_rate, false_alarm_rate, miss_rate):
        with pytest.raises(UndefinedRateError):
            fn(counts)


def random_timeline(rng, extent=60.0, max_regions=8):
    n = int(rng.integers(0, max_regions + 1))
    regions = []
    for _ in range(n):
        start = float(rng.uniform(0, extent - 0.5))
        end = start + float(rng.uniform(0.05, 5.0))
        regions.append((start, min(end, extent)))
    return Timeline(regions)


def rasterize_counts(ref, hyp, extent, step=0.001):
    n = int(round(extent / step))
    grid = (np.arange(n) + 0.5) * step
    in_ref = np.zeros(n, dtype=bool)
    for s, e in ref:
        in_ref |= (grid >= s) & (grid < e)
    in_hyp = np.zeros(n, dtype=bool)
    for s, e in hyp:
        in_hyp |= (grid >= s) & (grid < e)
    return DetectionCounts(
        float(np.sum(in_hyp & ~in_ref)) * step,
        float(np.sum(in_ref & ~in_hyp)) * step,
        float(np.sum(in_ref)) * step,
    )


def test_interval_arithmetic_matches_1ms_rasterization_on_1000_pairs():
    rng = np.random.default_rng(0)
    extent = 20.0
    for _ in range(1000):
        ref = random_timeline(rng, extent)
        hyp = random_timeline(rng, extent)
        exact = detection_counts(ref, hyp, (0.0, extent))
        raster = rasterize_counts(ref, hyp, extent)
        boundaries = 2 * (len(ref) + len(hyp))
        budget = 0.002 * max(boundaries, 1)
        assert abs(exact.false_alarm - raster.false_alarm) <= budget
        assert abs(exact.missed_detection - raster.missed_detection) <= budget
        assert abs(exact.total_speech - raster.total_speech) <= budget


# ---------------------------------------------------------------------------
# paper-table rate identities


@pytest.mark.parametrize(
    "deter, fa, miss",
    [
        (11.2, 6.5, 4.7),
        (10.5, 6.8, 3.7),
        (9.9, 5.7, 4.2),
        (11.3, 6.8, 4.5),
        (10.1, 6.1, 4.0),
        (13.4, 9.0, 4.4),
        (11.8, 7.6, 4.2),
    ],
)
def test_rate_decomposition_identity_on_reference_rows(deter, fa, miss):
    """DetER% = FA% + Miss% at one-decimal precision, checked by building
    counts that realize the published FA/Miss splits."""
    total = 100.0
    counts = DetectionCounts(false_alarm=fa, missed_detection=miss, total_speech=total)
    assert round(detection_error_rate(counts), 1) == deter
    assert round(false_alarm_rate(counts) + miss_rate(counts), 1) == deter


# ---------------------------------------------------------------------------
# aggregation


def test_aggregate_single_domain_is_identity():
    counts = DetectionCounts(1.0, 2.0, 30.0)
    agg = aggregate_over_domains([counts])
    assert (agg.false_alarm, agg.missed_detection, agg.total_speech) == (1.0, 2.0, 30.0)


def test_aggregate_equal_totals_averages_rates():
    a = DetectionCounts(1.0, 0.0, 10.0)  # 10%
    b = DetectionCounts(2.0, 0.0, 10.0)  # 20%
    assert detection_error_rate(aggregate_over_domains([a, b])) == pytest.approx(15.0)


def test_aggregate_weights_by_duration():
    a = DetectionCounts(0.5, 0.5, 1.0)  # 100% on 1 s
    b = DetectionCounts(0.0, 0.0, 9.0)  # 0% on 9 s
    assert detection_error_rate(aggregate_over_domains([a, b])) == pytest.approx(10.0)


def test_aggregate_bounded_by_min_max():
    rng = np.random.default_rng(1)
    for _ in range(50):
        parts = [
            DetectionCounts(float(rng.uniform(0, 3)), float(rng.uniform(0, 3)), float(rng.uniform(1, 20)))
            for _ in range(int(rng.integers(1, 6)))
        ]
        rates = [detection_error_rate(c) for c in parts]
        agg = detection_error_rate(aggregate_over_domains(parts))
        assert min(rates) - 1e-9 <= agg <= max(rates) + 1e-9


def test_aggregate_empty_rejected():
    with pytest.raises(ParameterError):
        aggregate_over_domains([])


# ---------------------------------------------------------------------------
# tune


def make_dev_setup(tmp_path, n_epochs=3):
    spec = SynthSpec(n_domains=1, train_files=1, dev_files=1, test_files=1,
                     file_duration=3.0, seed=41, noise_files=1, noise_duration=1.0)
    manifest = generate_synthetic_corpus(spec, tmp_path / "corpus")
    model = VadModel(ModelConfig(n_domains=0, **TINY), seed=0)
    corpus = TrainingCorpus(manifest.split("train"), manifest.domains())
    cfg = TrainConfig(chunk_duration=0.125, batch_size=2, max_epochs=n_epochs,
                      steps_per_epoch=1, seed=43, objective="vad", augment_probability=0.0)
    train(corpus, cfg, model, tmp_path / "run")
    checkpoints = [
        (int(p.stem.split("_")[1]), p)
        for p in sorted((tmp_path / "run" / "checkpoints").glob("*.ckpt"))
    ]
    from davad.data import parse_segments, read_wav

    dev = []
    for entry in manifest.split("dev"):
        dev.append((read_wav(entry.audio_path), parse_segments(entry.annotation_path).regions))
    return dev, checkpoints


def test_sigma_grid_has_101_points():
    grid = sigma_grid(0.0, 1.0, 0.01)
    assert len(grid) == 101
    assert grid[0] == 0.0 and grid[-1] == 1.0


def test_tune_single_pair_returns_it(tmp_path):
    dev, checkpoints = make_dev_setup(tmp_path, n_epochs=1)
    window = SlidingWindowConfig(duration=0.125, step=0.0625, threshold=0.5)
    best, table = tune(dev, checkpoints[:1], np.array([0.5]), window)
    assert best.best_epoch == 0 and best.best_threshold == 0.5
    assert len(table) == 1


def test_tune_is_exhaustive_and_breaks_ties_low(tmp_path):
    dev, checkpoints = make_dev_setup(tmp_path, n_epochs=2)
    window = SlidingWindowConfig(duration=0.125, step=0.0625, threshold=0.5)
    grid = sigma_grid(0.1, 0.9, 0.2)
    best, table = tune(dev, checkpoints, grid, window)
    assert len(table) == len(checkpoints) * len(grid)
    rates = [r for _, _, r in table]
    assert best.dev_error_rate == min(rates)
    # ties break toward the smaller epoch, then smaller threshold
    candidates = [(e, s) for e, s, r in table if r == best.dev_error_rate]
    assert (best.best_epoch, best.best_threshold) == min(candidates)


def test_tune_validation(tmp_path):
    window = SlidingWindowConfig(duration=0.125, step=0.0625)
    with pytest.raises(ParameterError):
        tune([], [], np.array([0.5]), window)
    dev, checkpoints = make_dev_setup(tmp_path, n_epochs=1)
    with pytest.raises(ParameterError):
        tune(dev, checkpoints, np.array([]), window)


# ---------------------------------------------------------------------------
# confusion


def test_untrained_confusion_rows_sum_to_chunk_counts():
    model = VadModel(ModelConfig(n_domains=3, **TINY), seed=1)
    rng = np.random.default_rng(2)
    chunks = []
    per_domain = [7, 5, 9]
    for d, n in enumerate(per_domain):
        for _ in range(n):
            chunks.append(((rng.normal(size=2000) * 0.2).astype(np.float32), d))
    confusion = domain_confusion(model, chunks, ["a", "b", "c"], batch_size=8)
    assert confusion.counts.sum() == sum(per_domain)
    assert list(confusion.counts.sum(axis=1)) == per_domain
    assert 0.0 <= confusion.accuracy <= 1.0


def test_confusion_accuracy_is_trace_over_total():
    matrix = ConfusionMatrix(np.array([[5, 1], [2, 4]]), ["x", "y"])
    assert matrix.accuracy == pytest.approx(9 / 12)


def test_confusion_csv_layout(tmp_path):
    matrix = ConfusionMatrix(np.array([[3, 0], [1, 2]]), ["dom00", "dom01"])
    path = tmp_path / "confusion.csv"
    write_confusion_csv(path, matrix)
    lines = path.read_text().splitlines()
    assert lines[0] == ",dom00,dom01"
    assert lines[1] == "dom00,3,0"
    assert lines[2] == "dom01,1,2"


# ---------------------------------------------------------------------------
# report


def test_report_identity_and_na(tmp_path):
    rows = [
        ("file1", DetectionCounts(0.333, 0.777, 10.0)),
        ("file2", DetectionCounts(0.5, 0.0, 0.0)),  # no reference speech
        ("ALL", DetectionCounts(0.833, 0.777, 10.0)),
    ]
    path = tmp_path / "report.tsv"
    write_evaluation_report(path, rows)
    lines = path.read_text().splitlines()
    assert lines[0] == "scope\tdeter_pct\tfa_pct\tmiss_pct\ttotal_s"
    for line in lines[1:]:
        scope, deter, fa, miss, total = line.split("\t")
        if deter == "NA":
            assert scope == "file2"
            continue
        assert float(deter) == pytest.approx(float(fa) + float(miss), abs=1e-9)
