"""Experiment orchestration: configuration files, pipelines, and reports.

A flat INI file mirrors the configuration dataclasses, one section per
group; every value can be overridden on the command line.  Each command
writes its delimited outputs, a rendered figure alongside them, and a
``run.json`` summary holding the full configuration and full-precision
results, so a saved config plus seed reproduces a run byte-for-byte.
"""

from __future__ import annotations

import configparser
import dataclasses
import json
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Optional

import numpy as np

from . import plots
from .data import (
    CorpusManifest,
    ManifestEntry,
    SynthSpec,
    Waveform,
    generate_synthetic_corpus,
    load_manifest,
    load_noise_bank,
    make_splits,
    parse_segments,
    read_wav,
    write_segments,
)
from .errors import ParameterError, UsageError, ValidationError
from .inference import SlidingWindowConfig, apply_file, write_score_dump
from .metrics import (
    ConfusionMatrix,
    DetectionCounts,
    TuningResult,
    aggregate_over_domains,
    detection_counts,
    domain_confusion,
    sigma_grid,
    tune,
    write_confusion_csv,
    write_evaluation_report,
)
from .model import ModelConfig, VadModel
from .training import TrainConfig, TrainingCorpus, train
from .timeline import Timeline

MATRIX_ROWS = "ABCDE"
DEFAULT_SWEEP_LAMBDAS = (0.01, 0.1, 1.0, 10.0, 100.0)


@dataclass
class TuneSettings:
    sigma_start: float = 0.0
    sigma_stop: float = 1.0
    sigma_step: float = 0.01
    epoch_stride: int = 1  # evaluate every n-th checkpoint
    epoch_min: int = 0

    def grid(self) -> np.ndarray:
        return sigma_grid(self.sigma_start, self.sigma_stop, self.sigma_step)


@dataclass
class ExperimentConfig:
    experiment_id: str = "exp"
    out_dir: Path = Path("runs/exp")
    manifest_path: Optional[Path] = None
    noise_dir: Optional[Path] = None
    model: ModelConfig = field(default_factory=ModelConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    window: SlidingWindowConfig = field(default_factory=SlidingWindowConfig)
    tune_settings: TuneSettings = field(default_factory=TuneSettings)
    generate: SynthSpec = field(default_factory=SynthSpec)
    matrix_rows: str = MATRIX_ROWS
    folds: tuple[str, ...] = ()
    sweep_lambdas: tuple[float, ...] = DEFAULT_SWEEP_LAMBDAS

    def to_dict(self) -> dict:
        return {
            "experiment_id": self.experiment_id,
            "out_dir": str(self.out_dir),
            "manifest": str(self.manifest_path) if self.manifest_path else None,
            "noise_dir": str(self.noise_dir) if self.noise_dir else None,
            "model": dataclasses.asdict(self.model),
            "train": dataclasses.asdict(self.train),
            "window": dataclasses.asdict(self.window),
            "tune": dataclasses.asdict(self.tune_settings),
            "generate": dataclasses.asdict(self.generate),
            "matrix_rows": self.matrix_rows,
            "folds": list(self.folds),
            "sweep_lambdas": list(self.sweep_lambdas),
        }


_SECTION_FIELDS = {
    "model": ModelConfig,
    "train": TrainConfig,
    "window": SlidingWindowConfig,
    "tune": TuneSettings,
    "generate": SynthSpec,
}


def _parse_value(raw: str, like) -> object:
    if isinstance(like, bool):
        lowered = raw.strip().lower()
        if lowered in ("1", "true", "yes", "on"):
            return True
        if lowered in ("0", "false", "no", "off"):
            return False
        raise UsageError(f"expected a boolean, got {raw!r}")
    if isinstance(like, int):
        return int(raw)
    if isinstance(like, float):
        return float(raw)
    return raw


def _apply_section(values: dict[str, str], cls, current) -> object:
    defaults = {f.name: getattr(current, f.name) for f in dataclasses.fields(cls)}
    aliases = {"lambda": "reversal_lambda", "tap": "domain_branch_tap"}
    updates = {}
    for key, raw in values.items():
        name = aliases.get(key, key)
        if name == "adversarial" and cls is TrainConfig:
            updates["objective"] = (
                "adversarial" if _parse_value(raw, True) else updates.get("objective", "vad")
            )
            continue
        if name not in defaults:
            raise UsageError(f"unknown option {key!r} for section [{_section_of(cls)}]")
        updates[name] = _parse_value(raw, defaults[name])
    merged = {**defaults, **updates}
    return cls(**merged)


def _section_of(cls) -> str:
    for name, c in _SECTION_FIELDS.items():
        if c is cls:
            return name
    return "?"


def _split_csv(raw: str) -> list[str]:
    return [item.strip() for item in raw.split(",") if item.strip()]


def load_config(
    path=None, overrides: Optional[list[str]] = None, base_dir: Optional[Path] = None
) -> ExperimentConfig:
    """Build an ExperimentConfig from an optional INI file plus overrides.

    Overrides are ``section.key=value`` strings and win over the file.
    Relative paths in [data]/[experiment] resolve against the config file
    location (or ``base_dir``).
    """
    sections: dict[str, dict[str, str]] = {}
    root = Path(base_dir) if base_dir else Path.cwd()
    if path is not None:
        parser = configparser.ConfigParser()
        read = parser.read(path)
        if not read:
            raise UsageError(f"cannot read config file {path}")
        root = Path(path).resolve().parent
        for section in parser.sections():
            sections[section] = dict(parser.items(section))
    for item in overrides or []:
        if "=" not in item or "." not in item.split("=", 1)[0]:
            raise UsageError(f"override must look like section.key=value, got {item!r}")
        target, value = item.split("=", 1)
        section, key = target.split(".", 1)
        sections.setdefault(section.strip(), {})[key.strip()] = value.strip()

    cfg = ExperimentConfig()
    exp_section = sections.pop("experiment", {})
    if "id" in exp_section:
        cfg.experiment_id = exp_section.pop("id")
    if "out" in exp_section:
        cfg.out_dir = root / exp_section.pop("out")
    if exp_section:
        raise UsageError(f"unknown [experiment] options: {sorted(exp_section)}")

    data_section = sections.pop("data", {})
    if "manifest" in data_section:
        cfg.manifest_path = root / data_section.pop("manifest")
    if "noise_dir" in data_section:
        cfg.noise_dir = root / data_section.pop("noise_dir")
    if data_section:
        raise UsageError(f"unknown [data] options: {sorted(data_section)}")

    window_keys = set(sections.get("window", {}))
    for name, cls in _SECTION_FIELDS.items():
        if name in sections:
            attr = {"tune": "tune_settings"}.get(name, name)
            setattr(cfg, attr, _apply_section(sections.pop(name), cls, getattr(cfg, attr)))

    matrix_section = sections.pop("matrix", {})
    if "rows" in matrix_section:
        rows = matrix_section.pop("rows").upper()
        if any(r not in MATRIX_ROWS for r in rows):
            raise UsageError(f"matrix rows must be from {MATRIX_ROWS}, got {rows!r}")
        cfg.matrix_rows = rows
    if "folds" in matrix_section:
        cfg.folds = tuple(_split_csv(matrix_section.pop("folds")))
    if matrix_section:
        raise UsageError(f"unknown [matrix] options: {sorted(matrix_section)}")

    sweep_section = sections.pop("sweep", {})
    if "lambdas" in sweep_section:
        cfg.sweep_lambdas = tuple(float(v) for v in _split_csv(sweep_section.pop("lambdas")))
    if "folds" in sweep_section:
        cfg.folds = tuple(_split_csv(sweep_section.pop("folds")))
    if sweep_section:
        raise UsageError(f"unknown [sweep] options: {sorted(sweep_section)}")

    if sections:
        raise UsageError(f"unknown config sections: {sorted(sections)}")

    # the window length must match the training chunk; the model carries it.
    # an unconfigured step keeps the default 75% overlap ratio
    cfg.model = replace(cfg.model, chunk_duration=cfg.train.chunk_duration)
    if cfg.window.duration != cfg.train.chunk_duration:
        step = cfg.window.step if "step" in window_keys else cfg.train.chunk_duration / 4
        cfg.window = SlidingWindowConfig(
            duration=cfg.train.chunk_duration, step=step, threshold=cfg.window.threshold
        )
    return cfg


def write_run_summary(out_dir: Path, command: str, cfg: ExperimentConfig, results: dict) -> Path:
    out_dir.mkdir(parents=True, exist_ok=True)
    payload = {
        "command": command,
        "experiment_id": cfg.experiment_id,
        "config": cfg.to_dict(),
        "results": results,
    }
    path = out_dir / "run.json"
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return path


# ---------------------------------------------------------------------------
# shared pipeline pieces


def _require_manifest(cfg: ExperimentConfig) -> CorpusManifest:
    if cfg.manifest_path is None:
        raise UsageError("no manifest configured; set [data] manifest or --manifest")
    return load_manifest(cfg.manifest_path)


def _noise_bank(cfg: ExperimentConfig) -> Optional[list[Waveform]]:
    if cfg.train.augment_probability <= 0:
        return None
    noise_dir = cfg.noise_dir
    if noise_dir is None and cfg.manifest_path is not None:
        candidate = cfg.manifest_path.parent / "noise"
        noise_dir = candidate if candidate.is_dir() else None
    if noise_dir is None:
        return None
    return load_noise_bank(noise_dir)


def _build_model(cfg: ExperimentConfig, objective: str, n_train_domains: int,
                 reversal_lambda: Optional[float] = None) -> VadModel:
    uses_domains = objective in ("adversarial", "domain")
    model_cfg = replace(
        cfg.model,
        n_domains=n_train_domains if uses_domains else 0,
        reversal_lambda=cfg.model.reversal_lambda if reversal_lambda is None else reversal_lambda,
        chunk_duration=cfg.train.chunk_duration,
    )
    return VadModel(model_cfg, seed=cfg.train.seed)


def _load_eval_files(entries: list[ManifestEntry]) -> list[tuple[ManifestEntry, Waveform, Timeline]]:
    out = []
    for e in entries:
        out.append((e, read_wav(e.audio_path), parse_segments(e.annotation_path).regions))
    return out


def _select_checkpoints(run_dir: Path, settings: TuneSettings) -> list[tuple[int, Path]]:
    ckpt_dir = Path(run_dir) / "checkpoints"
    found = sorted(ckpt_dir.glob("epoch_*.ckpt"))
    if not found:
        raise ValidationError(f"no checkpoints under {ckpt_dir}")
    epochs = [(int(p.stem.split("_")[1]), p) for p in found]
    picked = [
        (e, p)
        for e, p in epochs
        if e >= settings.epoch_min and (e - settings.epoch_min) % settings.epoch_stride == 0
    ]
    if epochs[-1] not in picked:
        picked.append(epochs[-1])  # the final epoch is always a candidate
    return picked


def _counts_summary(counts: DetectionCounts) -> dict:
    out = {
        "false_alarm_s": counts.false_alarm,
        "missed_detection_s": counts.missed_detection,
        "total_speech_s": counts.total_speech,
    }
    if counts.total_speech > 0:
        out["deter_pct"] = 100.0 * (counts.false_alarm + counts.missed_detection) / counts.total_speech
        out["fa_pct"] = 100.0 * counts.false_alarm / counts.total_speech
        out["miss_pct"] = 100.0 * counts.missed_detection / counts.total_speech
    else:
        out["deter_pct"] = out["fa_pct"] = out["miss_pct"] = None
    return out


def evaluate_entries(
    files: list[tuple[ManifestEntry, Waveform, Timeline]],
    hypotheses: dict[str, Timeline],
    report_path: Optional[Path] = None,
    figure_path: Optional[Path] = None,
) -> dict:
    """Score hypotheses against references; per-file, per-domain, and ALL."""
    per_file: list[tuple[str, str, DetectionCounts]] = []
    for entry, waveform, reference in files:
        if entry.uri not in hypotheses:
            raise ValidationError(f"no hypothesis for {entry.uri}")
        counts = detection_counts(reference, hypotheses[entry.uri], (0.0, waveform.duration))
        per_file.append((entry.uri, entry.domain, counts))

    domains = sorted({d for _, d, _ in per_file})
    per_domain = {
        d: aggregate_over_domains([c for _, dd, c in per_file if dd == d]) for d in domains
    }
    overall = aggregate_over_domains([c for _, _, c in per_file])

    if report_path is not None:
        rows = [(uri, c) for uri, _, c in per_file]
        rows += [(d, per_domain[d]) for d in domains]
        rows.append(("ALL", overall))
        write_evaluation_report(report_path, rows)
    if figure_path is not None:
        plots.report_bars([(d, per_domain[d]) for d in domains] + [("ALL", overall)], figure_path)
    return {
        "overall": _counts_summary(overall),
        "per_domain": {d: _counts_summary(c) for d, c in per_domain.items()},
        "per_file": {uri: _counts_summary(c) for uri, _, c in per_file},
    }


def run_pipeline(
    cfg: ExperimentConfig,
    splits: tuple[list[ManifestEntry], list[ManifestEntry], list[ManifestEntry]],
    objective: str,
    out_dir: Path,
    reversal_lambda: Optional[float] = None,
    quiet: bool = False,
) -> dict:
    """Train, tune on dev, apply the tuned model to test, evaluate.

    Returns the full-precision result tree (also written to run.json by
    callers).
    """
    train_entries, dev_entries, test_entries = splits
    if not train_entries or not dev_entries or not test_entries:
        raise ValidationError("each split needs at least one file")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    train_domains = sorted({e.domain for e in train_entries})

    model = _build_model(cfg, objective, len(train_domains), reversal_lambda)
    corpus = TrainingCorpus(train_entries, train_domains)
    train_cfg = replace(cfg.train, objective=objective)
    records = train(corpus, train_cfg, model, out_dir, noise_bank=_noise_bank(cfg))
    plots.loss_curves(records, out_dir / "loss_curves.png")

    checkpoints = _select_checkpoints(out_dir, cfg.tune_settings)
    dev_files = _load_eval_files(dev_entries)
    best, table = tune(
        [(w, ref) for _, w, ref in dev_files],
        checkpoints,
        cfg.tune_settings.grid(),
        cfg.window,
        batch_size=cfg.train.batch_size,
    )
    _write_tune_outputs(out_dir, best, table)

    tuned_model = VadModel.load(dict(checkpoints)[best.best_epoch])
    window = replace(cfg.window, threshold=best.best_threshold)
    test_files = _load_eval_files(test_entries)
    hyp_dir = out_dir / "hyp"
    hyp_dir.mkdir(exist_ok=True)
    hypotheses = {}
    for entry, waveform, _ in test_files:
        _, hyp = apply_file(tuned_model, waveform, window, batch_size=cfg.train.batch_size)
        write_segments(hyp_dir / f"{entry.uri}.tsv", entry.uri, hyp)
        hypotheses[entry.uri] = hyp
    evaluation = evaluate_entries(
        test_files, hypotheses, out_dir / "report.tsv", out_dir / "report.png"
    )
    return {
        "objective": objective,
        "train_domains": train_domains,
        "tuning": {
            "best_epoch": best.best_epoch,
            "best_threshold": best.best_threshold,
            "dev_deter_pct": best.dev_error_rate,
        },
        "test": evaluation,
    }


def _write_tune_outputs(out_dir: Path, best: TuningResult, table) -> None:
    with open(out_dir / "tune.tsv", "w", encoding="utf-8") as fh:
        fh.write("epoch\tthreshold\tdeter_pct\n")
        for epoch, sigma, rate in table:
            fh.write(f"{epoch}\t{sigma:.2f}\t{rate:.6f}\n")
    plots.tune_curves(table, best, out_dir / "tune.png")
    with open(out_dir / "tuned.json", "w", encoding="utf-8") as fh:
        json.dump(
            {
                "best_epoch": best.best_epoch,
                "best_threshold": best.best_threshold,
                "dev_deter_pct": best.dev_error_rate,
            },
            fh,
            indent=2,
            sort_keys=True,
        )
        fh.write("\n")


# ---------------------------------------------------------------------------
# commands


def cmd_generate(cfg: ExperimentConfig) -> dict:
    out_dir = Path(cfg.out_dir)
    manifest = generate_synthetic_corpus(cfg.generate, out_dir)
    results = {
        "manifest": str(out_dir / "manifest.tsv"),
        "files": len(manifest.entries),
        "domains": manifest.domains(),
        "total_audio_s": cfg.generate.file_duration * len(manifest.entries),
    }
    write_run_summary(out_dir, "generate", cfg, results)
    return results


def cmd_train(cfg: ExperimentConfig) -> dict:
    manifest = _require_manifest(cfg)
    splits = make_splits(manifest, "in_domain")
    train_entries = splits[0]
    train_domains = sorted({e.domain for e in train_entries})
    model = _build_model(cfg, cfg.train.objective, len(train_domains))
    corpus = TrainingCorpus(train_entries, train_domains)
    out_dir = Path(cfg.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    records = train(corpus, cfg.train, model, out_dir, noise_bank=_noise_bank(cfg))
    plots.loss_curves(records, out_dir / "loss_curves.png")
    results = {
        "epochs": len(records),
        "final_vad_loss": records[-1].vad_loss,
        "final_domain_loss": records[-1].domain_loss,
        "checkpoints": str(out_dir / "checkpoints"),
    }
    write_run_summary(out_dir, "train", cfg, results)
    return results


def cmd_tune(cfg: ExperimentConfig, run_dir: Optional[Path] = None) -> dict:
    manifest = _require_manifest(cfg)
    _, dev_entries, _ = make_splits(manifest, "in_domain")
    run_dir = Path(run_dir) if run_dir else Path(cfg.out_dir)
    checkpoints = _select_checkpoints(run_dir, cfg.tune_settings)
    dev_files = _load_eval_files(dev_entries)
    best, table = tune(
        [(w, ref) for _, w, ref in dev_files],
        checkpoints,
        cfg.tune_settings.grid(),
        cfg.window,
        batch_size=cfg.train.batch_size,
    )
    _write_tune_outputs(run_dir, best, table)
    results = {
        "best_epoch": best.best_epoch,
        "best_threshold": best.best_threshold,
        "dev_deter_pct": best.dev_error_rate,
        "checkpoints_scanned": len(checkpoints),
        "grid_points": len(cfg.tune_settings.grid()),
    }
    write_run_summary(run_dir, "tune", cfg, results)
    return results


def cmd_apply(
    cfg: ExperimentConfig,
    checkpoint: Path,
    split: str = "test",
    sigma: Optional[float] = None,
    dump_scores: bool = False,
) -> dict:
    manifest = _require_manifest(cfg)
    entries = manifest.split(split)
    if not entries:
        raise ValidationError(f"no files in split {split!r}")
    model = VadModel.load(checkpoint)
    window = cfg.window if sigma is None else replace(cfg.window, threshold=sigma)
    out_dir = Path(cfg.out_dir)
    hyp_dir = out_dir / "hyp"
    hyp_dir.mkdir(parents=True, exist_ok=True)
    score_dir = out_dir / "scores"
    if dump_scores:
        score_dir.mkdir(parents=True, exist_ok=True)
    total = 0.0
    for entry in entries:
        waveform = read_wav(entry.audio_path)
        scores, hyp = apply_file(model, waveform, window, batch_size=cfg.train.batch_size)
        write_segments(hyp_dir / f"{entry.uri}.tsv", entry.uri, hyp)
        if dump_scores:
            write_score_dump(score_dir / f"{entry.uri}.tsv", scores)
        total += hyp.duration()
    results = {
        "files": len(entries),
        "threshold": window.threshold,
        "speech_s": total,
        "hyp_dir": str(hyp_dir),
    }
    write_run_summary(out_dir, "apply", cfg, results)
    return results


def cmd_evaluate(cfg: ExperimentConfig, hyp_dir: Path, split: str = "test") -> dict:
    manifest = _require_manifest(cfg)
    entries = manifest.split(split)
    if not entries:
        raise ValidationError(f"no files in split {split!r}")
    files = _load_eval_files(entries)
    hyp_dir = Path(hyp_dir)
    hypotheses = {}
    for entry, _, _ in files:
        path = hyp_dir / f"{entry.uri}.tsv"
        if not path.exists():
            raise ValidationError(f"missing hypothesis file {path}")
        hypotheses[entry.uri] = parse_segments(path).regions
    out_dir = Path(cfg.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    results = evaluate_entries(files, hypotheses, out_dir / "report.tsv", out_dir / "report.png")
    write_run_summary(out_dir, "evaluate", cfg, results)
    return results


_ROW_POLICIES = {
    # row: (domain policy, objective, out-domain inference)
    "A": ("single_domain", "vad", False),
    "B": ("in_domain", "vad", False),
    "C": ("in_domain", "adversarial", False),
    "D": ("leave_one_out", "vad", True),
    "E": ("leave_one_out", "adversarial", True),
}


def cmd_matrix(cfg: ExperimentConfig, rows: Optional[str] = None) -> dict:
    """Run the experiment grid over domain policies and adversarial flags.

    Per-domain rows (A, D, E) train one model per fold and aggregate the
    per-fold test counts across domains (micro average).
    """
    manifest = _require_manifest(cfg)
    domains = manifest.domains()
    rows = (rows or cfg.matrix_rows).upper()
    if any(r not in MATRIX_ROWS for r in rows):
        raise UsageError(f"matrix rows must be from {MATRIX_ROWS}, got {rows!r}")
    folds = list(cfg.folds) if cfg.folds else domains
    unknown = [f for f in folds if f not in domains]
    if unknown:
        raise ParameterError(f"unknown fold domains {unknown}; have {domains}")
    out_dir = Path(cfg.out_dir)
    row_results: dict[str, dict] = {}
    table_rows = []
    for row in MATRIX_ROWS:
        if row not in rows:
            continue
        policy, objective, out_domain = _ROW_POLICIES[row]
        if policy == "in_domain":
            cell_dir = out_dir / "cells" / row
            outcome = run_pipeline(cfg, make_splits(manifest, "in_domain"), objective, cell_dir)
            counts = _overall_counts(outcome)
            cells = {"all": outcome}
        else:
            per_fold = {}
            fold_counts = []
            for domain in folds:
                cell_dir = out_dir / "cells" / f"{row}_{domain}"
                outcome = run_pipeline(cfg, make_splits(manifest, policy, domain), objective, cell_dir)
                per_fold[domain] = outcome
                fold_counts.append(_overall_counts(outcome))
            counts = aggregate_over_domains(fold_counts)
            cells = per_fold
        summary = _counts_summary(counts)
        row_results[row] = {
            "policy": policy,
            "objective": objective,
            "out_domain": out_domain,
            "aggregate": summary,
            "cells": cells,
        }
        table_rows.append(
            (row, summary["deter_pct"], summary["fa_pct"], summary["miss_pct"])
        )

    _write_matrix_outputs(out_dir, rows, row_results, table_rows, folds)
    results = {"rows": row_results, "folds": folds}
    write_run_summary(out_dir, "matrix", cfg, results)
    return results


def _overall_counts(outcome: dict) -> DetectionCounts:
    o = outcome["test"]["overall"]
    return DetectionCounts(o["false_alarm_s"], o["missed_detection_s"], o["total_speech_s"])


def _write_matrix_outputs(out_dir, rows, row_results, table_rows, folds) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    with open(out_dir / "matrix.tsv", "w", encoding="utf-8") as fh:
        fh.write("row\tpolicy\tadversarial\tout_domain\tdeter_pct\tfa_pct\tmiss_pct\n")
        for row in rows:
            info = row_results[row]
            agg = info["aggregate"]
            fa = round(agg["fa_pct"], 2)
            miss = round(agg["miss_pct"], 2)
            fh.write(
                f"{row}\t{info['policy']}\t{info['objective'] == 'adversarial'}\t"
                f"{info['out_domain']}\t{fa + miss:.2f}\t{fa:.2f}\t{miss:.2f}\n"
            )
    plots.matrix_bars(table_rows, out_dir / "matrix.png")


def cmd_sweep_lambda(cfg: ExperimentConfig, lambdas: Optional[list[float]] = None) -> dict:
    """Leave-one-out sweep of the reversal weight against a fixed baseline.

    The baseline (no adversarial branch) is computed once per fold and is
    independent of the swept weight; improvements are relative decreases
    of the aggregated detection error rate.
    """
    manifest = _require_manifest(cfg)
    domains = manifest.domains()
    folds = list(cfg.folds) if cfg.folds else domains
    lambdas = list(cfg.sweep_lambdas) if lambdas is None else list(lambdas)
    if not lambdas:
        raise UsageError("empty sweep grid")
    out_dir = Path(cfg.out_dir)

    baseline_counts = []
    for domain in folds:
        cell_dir = out_dir / "baseline" / domain
        outcome = run_pipeline(cfg, make_splits(manifest, "leave_one_out", domain), "vad", cell_dir)
        baseline_counts.append(_overall_counts(outcome))
    baseline = aggregate_over_domains(baseline_counts)
    baseline_rate = _counts_summary(baseline)["deter_pct"]

    sweep_rows = []
    per_lambda = {}
    for lam in lambdas:
        fold_counts = []
        for domain in folds:
            cell_dir = out_dir / f"lambda_{lam:g}" / domain
            outcome = run_pipeline(
                cfg,
                make_splits(manifest, "leave_one_out", domain),
                "adversarial",
                cell_dir,
                reversal_lambda=lam,
            )
            fold_counts.append(_overall_counts(outcome))
        rate = _counts_summary(aggregate_over_domains(fold_counts))["deter_pct"]
        improvement = 100.0 * (baseline_rate - rate) / baseline_rate
        per_lambda[f"{lam:g}"] = {"deter_pct": rate, "relative_improvement_pct": improvement}
        sweep_rows.append((lam, rate, improvement))

    out_dir.mkdir(parents=True, exist_ok=True)
    with open(out_dir / "sweep.tsv", "w", encoding="utf-8") as fh:
        fh.write("lambda\tdeter_pct\trelative_improvement_pct\n")
        for lam, rate, improvement in sweep_rows:
            fh.write(f"{lam:g}\t{rate:.6f}\t{improvement:.6f}\n")
    plots.sweep_curve([r[0] for r in sweep_rows], [r[2] for r in sweep_rows], out_dir / "sweep.png")
    results = {
        "baseline_deter_pct": baseline_rate,
        "folds": folds,
        "per_lambda": per_lambda,
    }
    write_run_summary(out_dir, "sweep-lambda", cfg, results)
    return results


def cmd_confusion(cfg: ExperimentConfig) -> dict:
    """Train the feature extractor plus domain branch alone, then report the
    test-chunk confusion matrix."""
    manifest = _require_manifest(cfg)
    domains = manifest.domains()
    train_entries, _, test_entries = make_splits(manifest, "in_domain")
    out_dir = Path(cfg.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    model = _build_model(cfg, "domain", len(domains))
    corpus = TrainingCorpus(train_entries, domains)
    train_cfg = replace(cfg.train, objective="domain")
    records = train(corpus, train_cfg, model, out_dir, noise_bank=_noise_bank(cfg))
    plots.loss_curves(records, out_dir / "loss_curves.png")

    chunks = _tile_chunks(test_entries, domains, cfg.train.chunk_duration)
    confusion = domain_confusion(model, chunks, domains, batch_size=cfg.train.batch_size)
    write_confusion_csv(out_dir / "confusion.csv", confusion)
    plots.confusion_heatmap(
        confusion.counts, domains, confusion.accuracy, out_dir / "confusion.png"
    )
    results = {
        "accuracy": confusion.accuracy,
        "chunks": int(confusion.counts.sum()),
        "per_domain_chunks": {d: int(n) for d, n in zip(domains, confusion.counts.sum(axis=1))},
    }
    write_run_summary(out_dir, "confusion", cfg, results)
    return results


def _tile_chunks(
    entries: list[ManifestEntry], domains: list[str], chunk_duration: float
) -> list[tuple[np.ndarray, int]]:
    """Non-overlapping fixed-length chunks from every file, in manifest order."""
    index = {d: i for i, d in enumerate(domains)}
    chunks = []
    for entry in entries:
        waveform = read_wav(entry.audio_path)
        n = int(round(chunk_duration * waveform.sample_rate))
        for start in range(0, len(waveform.samples) - n + 1, n):
            chunks.append((waveform.samples[start : start + n], index[entry.domain]))
    return chunks
