"""End-to-end generative augmentation pipeline.

Seven stages: (1) fit the dynamics learner on observed trajectories,
(2) fit the topology denoiser, (3) train the vanilla predictor on the
labeled pool, (4) fine-tune it on learned trajectories, (5) generate
class-targeted topologies with classifier guidance and simulate their
trajectories, (6) subsample the generated pool, (7) retrain the predictor
on the union.  Every stage artifact can be persisted for resume.
"""

from __future__ import annotations

import json
import time
from dataclasses import dataclass, field, asdict
from pathlib import Path
from typing import List, Optional, Sequence, Tuple

import numpy as np
import torch

from netresgen.data import DatasetSplit, NetworkSample
from netresgen.denoiser import (
    DenoiserHyperparams,
    TopologyDenoiser,
    load_denoiser,
    sample_unconditional_batch,
    save_denoiser,
    train_denoiser,
)
from netresgen.diffusion import NoiseSchedule, build_schedule
from netresgen.dynlearn import (
    DynLearnHyperparams,
    NeuralDynamics,
    generate_trajectories,
    load_dynlearn,
    save_dynlearn,
    train_dynlearn,
)
from netresgen.errors import ConfigurationError
from netresgen.graphs import Graph, degree_stats
from netresgen.guidance import GuidanceConfig, sample_conditional_batch
from netresgen.predictor import (
    PredictorHyperparams,
    ResiliencePredictor,
    evaluate_predictor,
    finetune_predictor,
    load_predictor,
    save_predictor,
    train_predictor,
    _batch_tensors,
)


@dataclass
class PipelineConfig:
    n_generate_per_class: int = 60
    used_fraction: float = 0.5
    schedule_steps: int = 200
    sample_batch: int = 64
    guidance: GuidanceConfig = field(default_factory=GuidanceConfig)
    dynlearn: DynLearnHyperparams = field(default_factory=DynLearnHyperparams)
    denoiser: DenoiserHyperparams = field(default_factory=DenoiserHyperparams)
    predictor: PredictorHyperparams = field(default_factory=PredictorHyperparams)
    no_guidance: bool = False
    no_finetune: bool = False
    labeled_only_dynlearn: bool = False
    seed: int = 0

    def __post_init__(self):
        if self.n_generate_per_class <= 0:
            raise ConfigurationError("n_generate_per_class must be positive")
        if not 0.0 < self.used_fraction <= 1.0:
            raise ConfigurationError("used_fraction must lie in (0, 1]")

    @property
    def n_augmented(self) -> int:
        """Samples actually added to the training pool (the parity count)."""
        return int(round(2 * self.n_generate_per_class * self.used_fraction))


@dataclass
class PipelineArtifacts:
    """Reusable stage outputs; pass between pipeline variants to share work."""

    dyn_model: Optional[NeuralDynamics] = None
    denoiser: Optional[TopologyDenoiser] = None
    schedule: Optional[NoiseSchedule] = None
    vanilla: Optional[ResiliencePredictor] = None
    finetuned: Optional[ResiliencePredictor] = None


@dataclass
class PipelineResult:
    model: ResiliencePredictor
    report: dict
    artifacts: PipelineArtifacts
    generated: List[NetworkSample]


def _stage_path(stage_dir: Optional[Path], name: str) -> Optional[Path]:
    if stage_dir is None:
        return None
    stage_dir.mkdir(parents=True, exist_ok=True)
    return stage_dir / name


def _mean_density(samples: Sequence[NetworkSample]) -> float:
    return float(np.mean([degree_stats(s.graph)[2] for s in samples]))


def _assign_labels(
    predictor: ResiliencePredictor, samples: List[NetworkSample]
) -> List[NetworkSample]:
    """Predictor-assigned hard labels (the no-guidance ablation path)."""
    out = []
    for start in range(0, len(samples), 128):
        part = samples[start : start + 128]
        tmp = [
            NetworkSample(id=s.id, graph=s.graph, observations=s.observations, label=0)
            for s in part
        ]
        adj, obs, mask, _ = _batch_tensors(tmp)
        with torch.no_grad():
            probs = torch.sigmoid(predictor(adj, obs, mask))
        for s, p in zip(part, probs.tolist()):
            out.append(
                NetworkSample(
                    id=s.id,
                    graph=s.graph,
                    observations=s.observations,
                    label=int(p > 0.5),
                    seed=s.seed,
                    meta={**s.meta, "predictor_score": p},
                )
            )
    return out


def run_pipeline(
    split: DatasetSplit,
    cfg: PipelineConfig,
    stage_dir: Optional[Path] = None,
    artifacts: Optional[PipelineArtifacts] = None,
    verbose: bool = False,
) -> PipelineResult:
    """Execute the augmentation pipeline on a prepared dataset split."""
    art = artifacts or PipelineArtifacts()
    report: dict = {"config": _config_summary(cfg), "stages": {}}
    stage_dir = Path(stage_dir) if stage_dir is not None else None
    family = split.provenance["dynamics"]["family"]
    dt = split.provenance["sim"]["dt"]
    t_obs = split.labeled[0].t_obs
    rng = np.random.default_rng(cfg.seed)

    def log(msg: str):
        if verbose:
            print(msg, flush=True)

    def timed(name):
        return _StageTimer(report, name, log)

    # stage 1: dynamics learning
    with timed("dynlearn"):
        if art.dyn_model is None:
            path = _stage_path(stage_dir, "dynlearn.pt")
            if path is not None and path.exists():
                art.dyn_model = load_dynlearn(path)
                report["stages"]["dynlearn"] = {"resumed": True}
            else:
                train_pool = list(split.labeled)
                if not cfg.labeled_only_dynlearn:
                    train_pool += list(split.unlabeled)
                art.dyn_model, hist = train_dynlearn(
                    train_pool, dt, cfg.dynlearn, seed=cfg.seed
                )
                report["stages"]["dynlearn"] = {
                    "n_samples": hist["n_samples"],
                    "best_val_loss": hist["best_val_loss"],
                    "labeled_only": cfg.labeled_only_dynlearn,
                }
                if path is not None:
                    save_dynlearn(art.dyn_model, path)

    # stage 2: topology diffusion
    with timed("denoiser"):
        if art.denoiser is None:
            path = _stage_path(stage_dir, "denoiser.pt")
            if path is not None and path.exists():
                art.denoiser, art.schedule = load_denoiser(path)
                report["stages"]["denoiser"] = {"resumed": True}
            else:
                topologies = [s.graph for s in split.labeled + split.unlabeled]
                density = _mean_density(split.labeled + split.unlabeled)
                art.schedule = build_schedule(cfg.schedule_steps, density)
                art.denoiser, hist = train_denoiser(
                    topologies, art.schedule, cfg.denoiser, seed=cfg.seed
                )
                report["stages"]["denoiser"] = {
                    "n_graphs": len(topologies),
                    "target_density": density,
                    "best_val_loss": hist["best_val_loss"],
                }
                if path is not None:
                    save_denoiser(art.denoiser, art.schedule, path)

    # stage 3: vanilla predictor
    with timed("vanilla"):
        if art.vanilla is None:
            path = _stage_path(stage_dir, "predictor_vanilla.pt")
            if path is not None and path.exists():
                art.vanilla = load_predictor(path)
                report["stages"]["vanilla"] = {"resumed": True}
            else:
                art.vanilla, hist = train_predictor(
                    None, split.labeled, split.validation, cfg.predictor, seed=cfg.seed
                )
                report["stages"]["vanilla"] = {"best_val_f1": hist["best_val_f1"]}
                if path is not None:
                    save_predictor(art.vanilla, path)
        report["stages"].setdefault("vanilla", {})["test_f1"] = evaluate_predictor(
            art.vanilla, split.test
        ).f1

    # stage 4: fine-tune on learned trajectories
    with timed("finetune"):
        if cfg.no_finetune:
            guide_model = art.vanilla
            report["stages"]["finetune"] = {"skipped": True}
        elif art.finetuned is not None:
            guide_model = art.finetuned
        else:
            path = _stage_path(stage_dir, "predictor_ft.pt")
            if path is not None and path.exists():
                art.finetuned = load_predictor(path)
                report["stages"]["finetune"] = {"resumed": True}
            else:
                ft_model = _clone_predictor(art.vanilla)
                art.finetuned, hist = finetune_predictor(
                    ft_model,
                    split.labeled,
                    art.dyn_model,
                    family,
                    dt,
                    cfg.predictor,
                    seed=cfg.seed,
                )
                report["stages"]["finetune"] = {
                    "initial_accuracy": hist["initial_accuracy"],
                    "final_accuracy": hist["final_accuracy"],
                }
                if path is not None:
                    save_predictor(art.finetuned, path)
            guide_model = art.finetuned

    # stage 5: guided generation
    with timed("generate"):
        sizes_pool = [s.graph.n_nodes for s in split.labeled + split.unlabeled]
        guidance_cfg = GuidanceConfig(
            guidance_scale=cfg.guidance.guidance_scale,
            stride=cfg.guidance.stride,
            t_obs=t_obs,
            dt=dt,
            family=family,
        )
        generated: List[NetworkSample] = []
        if cfg.no_guidance:
            sizes = [int(rng.choice(sizes_pool)) for _ in range(2 * cfg.n_generate_per_class)]
            graphs = []
            for start in range(0, len(sizes), cfg.sample_batch):
                graphs += sample_unconditional_batch(
                    art.denoiser,
                    art.schedule,
                    sizes[start : start + cfg.sample_batch],
                    seed=cfg.seed + 7000 + start,
                )
            unlabeled_gen = _wrap_generated(
                graphs, art.dyn_model, family, t_obs, dt, cfg.seed, intended=None
            )
            generated = _assign_labels(guide_model, unlabeled_gen)
        else:
            for label in (1, 0):
                sizes = [int(rng.choice(sizes_pool)) for _ in range(cfg.n_generate_per_class)]
                graphs = []
                for start in range(0, len(sizes), cfg.sample_batch):
                    graphs += sample_conditional_batch(
                        art.denoiser,
                        art.dyn_model,
                        guide_model,
                        art.schedule,
                        sizes[start : start + cfg.sample_batch],
                        label,
                        guidance_cfg,
                        seed=cfg.seed + 9000 + 100 * label + start,
                    )
                generated += _wrap_generated(
                    graphs, art.dyn_model, family, t_obs, dt, cfg.seed, intended=label
                )
        counts = [sum(1 for s in generated if s.label == y) for y in (0, 1)]
        report["stages"]["generate"] = {
            "n_generated": len(generated),
            "label_counts": {"non_resilient": counts[0], "resilient": counts[1]},
            "mean_density": _mean_density(generated) if generated else 0.0,
        }

    # stage 6: subsample the generated pool
    with timed("subsample"):
        n_used = cfg.n_augmented
        order = rng.permutation(len(generated))
        used = [generated[i] for i in order[:n_used]]
        report["stages"]["subsample"] = {"n_used": len(used)}

    # stage 7: retrain on the union (warm start from the vanilla predictor)
    with timed("retrain"):
        final_model = _clone_predictor(art.vanilla)
        final_model, hist = train_predictor(
            final_model,
            list(split.labeled) + used,
            split.validation,
            cfg.predictor,
            seed=cfg.seed + 1,
        )
        test_report = evaluate_predictor(final_model, split.test)
        report["stages"]["retrain"] = {
            "best_val_f1": hist["best_val_f1"],
            "test_f1": test_report.f1,
            "test_acc": test_report.accuracy,
        }

    if stage_dir is not None:
        (stage_dir / "report.json").write_text(json.dumps(report, indent=1, sort_keys=True))
    return PipelineResult(final_model, report, art, generated)


def _wrap_generated(
    graphs: List[Graph],
    dyn_model: NeuralDynamics,
    family: str,
    t_obs: int,
    dt: float,
    seed: int,
    intended: Optional[int],
) -> List[NetworkSample]:
    out = []
    for i, g in enumerate(graphs):
        obs = generate_trajectories(dyn_model, g, family, t_obs, dt, seed=seed + i)
        meta = {"generated": True}
        if intended is not None:
            meta["intended_label"] = intended
        tag = "cond" if intended is not None else "uncond"
        out.append(
            NetworkSample(
                id=f"gen-{tag}-{intended if intended is not None else 'x'}-{i:05d}",
                graph=g,
                observations=obs,
                label=intended,
                meta=meta,
            )
        )
    return out


def _clone_predictor(model: ResiliencePredictor) -> ResiliencePredictor:
    clone = ResiliencePredictor(model.hp, model.n_trajectories)
    clone.load_state_dict({k: v.clone() for k, v in model.state_dict().items()})
    return clone


def _config_summary(cfg: PipelineConfig) -> dict:
    d = asdict(cfg)
    return d


class _StageTimer:
    def __init__(self, report: dict, name: str, log):
        self.report = report
        self.name = name
        self.log = log

    def __enter__(self):
        self.t0 = time.time()
        self.log(f"[pipeline] stage {self.name} ...")
        return self

    def __exit__(self, exc_type, exc, tb):
        elapsed = time.time() - self.t0
        self.report.setdefault("timing", {})[self.name] = round(elapsed, 2)
        if exc_type is not None:
            self.report["failed_stage"] = self.name
        self.log(f"[pipeline] stage {self.name} done in {elapsed:.1f}s")
        return False
