"""Benchmark harness: model rows, seed aggregation, sweeps, tables, plots."""

from __future__ import annotations

import copy
import csv
import dataclasses
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence

import numpy as np
import torch

from netresgen.augment import (
    PipelineArtifacts,
    PipelineConfig,
    PipelineResult,
    run_pipeline,
    _clone_predictor,
)
from netresgen.baselines import SelfTrainConfig, self_train
from netresgen.data import DatasetSplit, NetworkSample, truncate_split
from netresgen.errors import ConfigurationError
from netresgen.metrics import MetricReport, aggregate_reports, compute_metrics
from netresgen.predictor import evaluate_predictor, train_predictor, _batch_tensors
from netresgen.theory import theory_label_unlabeled, _beta_or_zero

KNOWN_ROWS = (
    "vanilla",
    "st",
    "try",
    "tdnetgen",
    "tdnetgen_no_guidance",
    "tdnetgen_no_finetune",
    "tdnetgen_wo_trajectories",
)


@dataclass
class BenchmarkConfig:
    rows: Sequence[str] = ("vanilla", "st", "tdnetgen")
    seeds: Sequence[int] = (0, 1, 2)
    pipeline: PipelineConfig = field(default_factory=PipelineConfig)
    out_dir: Optional[Path] = None
    verbose: bool = False

    def __post_init__(self):
        unknown = set(self.rows) - set(KNOWN_ROWS)
        if unknown:
            raise ConfigurationError(f"unknown benchmark rows: {sorted(unknown)}")
        if len(self.seeds) < 1:
            raise ConfigurationError("need at least one seed")


def _theory_augment(split: DatasetSplit, n_cap: int) -> List[NetworkSample]:
    """Theory-labeled unlabeled samples, most confident first, capped for parity."""
    new = theory_label_unlabeled(split.labeled, split.unlabeled)
    res = [_beta_or_zero(s.graph) for s in split.labeled if s.label == 1]
    non = [_beta_or_zero(s.graph) for s in split.labeled if s.label == 0]
    hi, lo = max(min(res), max(non)), min(min(res), max(non))

    def margin(pair):
        s, label = pair
        b = _beta_or_zero(s.graph)
        return b - hi if label == 1 else lo - b

    new.sort(key=lambda pair: (-margin(pair), pair[0].id))
    out = []
    for s, label in new[:n_cap]:
        out.append(
            NetworkSample(
                id=s.id,
                graph=s.graph,
                observations=s.observations,
                label=label,
                seed=s.seed,
                meta={**s.meta, "theory_label": True},
            )
        )
    return out


def _write_predictions(path: Path, model, samples: Sequence[NetworkSample]) -> None:
    """Per-sample `id, y_hat, label` rows as delimited text."""
    adj, obs, mask, _ = _batch_tensors(samples)
    with torch.no_grad():
        probs = torch.sigmoid(model(adj, obs, mask)).tolist()
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["id", "y_hat", "label"])
        for s, p in zip(samples, probs):
            writer.writerow([s.id, f"{p:.6f}", "" if s.label is None else s.label])


def run_benchmark(split: DatasetSplit, cfg: BenchmarkConfig) -> Dict[str, MetricReport]:
    """Train and evaluate every requested model row over all seeds."""
    per_row: Dict[str, List[MetricReport]] = {r: [] for r in cfg.rows}
    out_dir = Path(cfg.out_dir) if cfg.out_dir is not None else None
    if out_dir is not None:
        out_dir.mkdir(parents=True, exist_ok=True)

    for seed in cfg.seeds:
        base_cfg = dataclasses.replace(cfg.pipeline, seed=seed)
        artifacts = PipelineArtifacts()
        result: Optional[PipelineResult] = None

        if "tdnetgen" in cfg.rows:
            # the full pipeline also materializes the shared stage stack
            result = run_pipeline(split, base_cfg, artifacts=artifacts, verbose=cfg.verbose)
            rep = evaluate_predictor(result.model, split.test, tag="tdnetgen")
            per_row["tdnetgen"].append(rep)
            _maybe_predictions(out_dir, "tdnetgen", seed, result.model, split.test)

        if artifacts.vanilla is None and {"vanilla", "st", "try"} & set(cfg.rows):
            artifacts.vanilla, _ = train_predictor(
                None, split.labeled, split.validation, base_cfg.predictor, seed=seed
            )

        if "vanilla" in cfg.rows:
            rep = evaluate_predictor(artifacts.vanilla, split.test, tag="vanilla")
            per_row["vanilla"].append(rep)
            _maybe_predictions(out_dir, "vanilla", seed, artifacts.vanilla, split.test)

        if "st" in cfg.rows:
            st_cfg = SelfTrainConfig(n_pseudo=min(base_cfg.n_augmented, len(split.unlabeled)))
            st_model, _ = self_train(
                _clone_predictor(artifacts.vanilla),
                split.labeled,
                split.unlabeled,
                split.validation,
                st_cfg,
                base_cfg.predictor,
                seed=seed,
                audit_labels=split.provenance.get("audit_labels"),
            )
            rep = evaluate_predictor(st_model, split.test, tag="st")
            per_row["st"].append(rep)
            _maybe_predictions(out_dir, "st", seed, st_model, split.test)

        if "try" in cfg.rows:
            extra = _theory_augment(split, base_cfg.n_augmented)
            try_model = _clone_predictor(artifacts.vanilla)
            try_model, _ = train_predictor(
                try_model,
                list(split.labeled) + extra,
                split.validation,
                base_cfg.predictor,
                seed=seed,
            )
            rep = evaluate_predictor(try_model, split.test, tag="try")
            per_row["try"].append(rep)
            _maybe_predictions(out_dir, "try", seed, try_model, split.test)

        if "tdnetgen_no_guidance" in cfg.rows:
            ng_cfg = dataclasses.replace(base_cfg, no_guidance=True)
            ng_art = PipelineArtifacts(
                dyn_model=artifacts.dyn_model,
                denoiser=artifacts.denoiser,
                schedule=artifacts.schedule,
                vanilla=artifacts.vanilla,
                finetuned=artifacts.finetuned,
            )
            ng_result = run_pipeline(split, ng_cfg, artifacts=ng_art, verbose=cfg.verbose)
            rep = evaluate_predictor(ng_result.model, split.test, tag="tdnetgen_no_guidance")
            per_row["tdnetgen_no_guidance"].append(rep)

        if "tdnetgen_no_finetune" in cfg.rows:
            nf_cfg = dataclasses.replace(base_cfg, no_finetune=True)
            nf_art = PipelineArtifacts(
                dyn_model=artifacts.dyn_model,
                denoiser=artifacts.denoiser,
                schedule=artifacts.schedule,
                vanilla=artifacts.vanilla,
            )
            nf_result = run_pipeline(split, nf_cfg, artifacts=nf_art, verbose=cfg.verbose)
            rep = evaluate_predictor(nf_result.model, split.test, tag="tdnetgen_no_finetune")
            per_row["tdnetgen_no_finetune"].append(rep)

        if "tdnetgen_wo_trajectories" in cfg.rows:
            wt_cfg = dataclasses.replace(base_cfg, labeled_only_dynlearn=True)
            wt_art = PipelineArtifacts(
                denoiser=artifacts.denoiser,
                schedule=artifacts.schedule,
                vanilla=artifacts.vanilla,
            )
            wt_result = run_pipeline(split, wt_cfg, artifacts=wt_art, verbose=cfg.verbose)
            rep = evaluate_predictor(wt_result.model, split.test, tag="tdnetgen_wo_trajectories")
            per_row["tdnetgen_wo_trajectories"].append(rep)

    table = {row: aggregate_reports(row, reps) for row, reps in per_row.items()}
    if out_dir is not None:
        write_table(out_dir, table)
        plot_benchmark(out_dir / "benchmark.svg", table)
    return table


def _maybe_predictions(out_dir, row, seed, model, samples):
    if out_dir is not None:
        _write_predictions(Path(out_dir) / f"predictions_{row}_seed{seed}.csv", model, samples)


def write_table(out_dir: Path, table: Dict[str, MetricReport]) -> None:
    out_dir = Path(out_dir)
    with open(out_dir / "table.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["model", "f1_mean", "f1_std", "acc_mean", "acc_std", "f1_per_seed", "acc_per_seed"])
        for row, rep in table.items():
            writer.writerow(
                [
                    row,
                    f"{rep.f1:.4f}",
                    f"{rep.f1_std:.4f}",
                    f"{rep.accuracy:.4f}",
                    f"{rep.acc_std:.4f}",
                    ";".join(f"{v:.4f}" for v in rep.f1_values),
                    ";".join(f"{v:.4f}" for v in rep.acc_values),
                ]
            )
    lines = [f"{'model':28s} {'F1':>8s} {'±':>7s} {'ACC':>8s} {'±':>7s}"]
    for row, rep in table.items():
        lines.append(
            f"{row:28s} {rep.f1:8.4f} {rep.f1_std:7.4f} {rep.accuracy:8.4f} {rep.acc_std:7.4f}"
        )
    (out_dir / "table.txt").write_text("\n".join(lines) + "\n")


def plot_benchmark(path: Path, table: Dict[str, MetricReport]) -> None:
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    rows = list(table)
    x = np.arange(len(rows))
    f1 = [table[r].f1 for r in rows]
    f1_err = [table[r].f1_std for r in rows]
    acc = [table[r].accuracy for r in rows]
    acc_err = [table[r].acc_std for r in rows]
    fig, axes = plt.subplots(1, 2, figsize=(10, 4))
    for ax, vals, errs, name in ((axes[0], f1, f1_err, "F1"), (axes[1], acc, acc_err, "ACC")):
        ax.bar(x, vals, yerr=errs, capsize=3)
        ax.set_xticks(x)
        ax.set_xticklabels(rows, rotation=30, ha="right")
        ax.set_ylabel(name)
        ax.set_ylim(0, 1)
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)


# --------------------------------------------------------------------------
# sweeps

SWEEP_AXES = ("n_labeled", "t_obs", "n_generated")


def _stratified_subset(samples: Sequence[NetworkSample], n: int, seed: int) -> List[NetworkSample]:
    rng = np.random.default_rng(seed)
    by_class: Dict[int, List[NetworkSample]] = {0: [], 1: []}
    for s in samples:
        by_class[s.label].append(s)
    for v in by_class.values():
        rng.shuffle(v)
    out: List[NetworkSample] = []
    i = 0
    while len(out) < n:
        cls = by_class[i % 2] or by_class[(i + 1) % 2]
        if not cls:
            break
        out.append(cls.pop())
        i += 1
    return out


def sweep(
    axis: str,
    values: Sequence,
    split: DatasetSplit,
    cfg: BenchmarkConfig,
) -> Dict:
    """Run (vanilla, tdnetgen) rows per sweep value; returns curve data."""
    if axis not in SWEEP_AXES:
        raise ConfigurationError(f"unknown sweep axis {axis!r}")
    if not values:
        raise ConfigurationError("sweep needs at least one value")
    curves: Dict[str, Dict] = {}
    out_dir = Path(cfg.out_dir) if cfg.out_dir is not None else None
    for value in values:
        sub_split = split
        pipeline = cfg.pipeline
        if axis == "n_labeled":
            labeled = _stratified_subset(split.labeled, int(value), seed=1234)
            if len({s.label for s in labeled}) < 2:
                raise ConfigurationError(f"n_labeled={value} cannot cover both classes")
            sub_split = DatasetSplit(
                labeled=labeled,
                unlabeled=split.unlabeled,
                validation=split.validation,
                test=split.test,
                provenance=split.provenance,
            )
        elif axis == "t_obs":
            sub_split = truncate_split(split, int(value))
        elif axis == "n_generated":
            pipeline = dataclasses.replace(
                cfg.pipeline, n_generate_per_class=max(1, int(value) // 2)
            )
        sub_cfg = BenchmarkConfig(
            rows=[r for r in cfg.rows if r in ("vanilla", "tdnetgen")] or ["vanilla", "tdnetgen"],
            seeds=cfg.seeds,
            pipeline=pipeline,
            out_dir=None,
            verbose=cfg.verbose,
        )
        table = run_benchmark(sub_split, sub_cfg)
        curves[str(value)] = {row: rep for row, rep in table.items()}
    result = {
        "axis": axis,
        "values": [str(v) for v in values],
        "curves": curves,
    }
    if out_dir is not None:
        out_dir.mkdir(parents=True, exist_ok=True)
        serializable = {
            "axis": axis,
            "values": result["values"],
            "rows": {
                row: {
                    "f1": [curves[str(v)][row].f1 for v in values],
                    "f1_std": [curves[str(v)][row].f1_std for v in values],
                    "acc": [curves[str(v)][row].accuracy for v in values],
                }
                for row in next(iter(curves.values()))
            },
        }
        (out_dir / f"sweep_{axis}.json").write_text(json.dumps(serializable, indent=1))
        plot_sweep(out_dir / f"sweep_{axis}.svg", axis, values, curves)
    return result


def plot_sweep(path: Path, axis: str, values: Sequence, curves: Dict) -> None:
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    fig, ax = plt.subplots(figsize=(5, 4))
    rows = list(next(iter(curves.values())).keys())
    xs = np.arange(len(values))
    for row in rows:
        ys = [curves[str(v)][row].f1 for v in values]
        errs = [curves[str(v)][row].f1_std for v in values]
        ax.errorbar(xs, ys, yerr=errs, marker="o", capsize=3, label=row)
    ax.set_xticks(xs)
    ax.set_xticklabels([str(v) for v in values])
    ax.set_xlabel(axis)
    ax.set_ylabel("F1")
    ax.legend()
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)
