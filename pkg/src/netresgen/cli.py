"""Command-line entry point binding every pipeline stage.

All stages read one JSON config (see ``netresgen.config.CONFIG_SCHEMA``)
and write artifacts under ``--out/<stage>/``; no stage touches another
stage's directory.  ``--seed`` overrides the config seed.  The env var
``TDNETGEN_CACHE`` relocates the augment stage's intermediate checkpoints.
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys
import traceback
from pathlib import Path

import numpy as np

from netresgen import config as cfgmod
from netresgen.errors import ConfigurationError

STAGES = (
    "gen-data",
    "train-dyn",
    "train-diff",
    "train-pred",
    "finetune",
    "generate",
    "augment",
    "evaluate",
    "sweep",
    "theory",
)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="netresgen",
        description="Resilience prediction with generative augmentation of "
        "network topology and dynamics.",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name, help_text in (
        ("gen-data", "simulate and persist a labeled/unlabeled dataset"),
        ("train-dyn", "train the dynamics learning module"),
        ("train-diff", "train the topology diffusion denoiser"),
        ("train-pred", "train the vanilla resilience predictor"),
        ("finetune", "fine-tune the predictor on learned trajectories"),
        ("generate", "sample topologies (guided when guidance_scale > 0)"),
        ("augment", "run the full augmentation pipeline"),
        ("evaluate", "run the benchmark table"),
        ("sweep", "sweep one experiment axis"),
        ("theory", "emit beta_eff and theory labels per sample"),
    ):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", required=True, help="run config JSON")
        p.add_argument("--seed", type=int, default=None, help="override config seed")
        p.add_argument("--out", required=True, help="output root directory")
        p.add_argument("--data", default=None, help="override dataset path")
    return parser


def _load(args):
    cfg = cfgmod.load_config(args.config)
    if args.seed is not None:
        cfg["seed"] = args.seed
        cfg.setdefault("dataset", {})["seed"] = args.seed
    return cfg


def _dataset_dir(cfg, args) -> Path:
    if args.data:
        return Path(args.data)
    path = cfg.get("paths", {}).get("dataset")
    if path is None:
        raise ConfigurationError(
            "no dataset path: set paths.dataset in the config or pass --data"
        )
    return Path(path)


def _load_split(cfg, args):
    from netresgen.data import load_dataset

    return load_dataset(_dataset_dir(cfg, args))


def _stage_out(args, stage: str) -> Path:
    out = Path(args.out) / stage
    out.mkdir(parents=True, exist_ok=True)
    return out


def cmd_gen_data(cfg, args) -> int:
    from netresgen.data import build_dataset, save_dataset

    topo, dyn, sim, counts, t_obs, rule, seed = cfgmod.dataset_objects(cfg)
    split = build_dataset(topo, dyn, sim, counts, t_obs=t_obs, seed=seed, rule=rule)
    out = _stage_out(args, "dataset")
    save_dataset(split, out)
    print(f"dataset: {sum(len(getattr(split, p)) for p in ('labeled','unlabeled','validation','test'))} "
          f"samples -> {out}")
    print(f"labeled class counts: {split.provenance['label_counts']['labeled']}")
    return 0


def cmd_train_dyn(cfg, args) -> int:
    from netresgen.dynlearn import save_dynlearn, train_dynlearn

    split = _load_split(cfg, args)
    pc = cfgmod.pipeline_config(cfg)
    pool = list(split.labeled)
    if not pc.labeled_only_dynlearn:
        pool += list(split.unlabeled)
    dt = split.provenance["sim"]["dt"]
    model, hist = train_dynlearn(pool, dt, pc.dynlearn, seed=pc.seed)
    out = _stage_out(args, "dynlearn")
    save_dynlearn(model, out / "checkpoint.pt")
    (out / "history.json").write_text(json.dumps(
        {k: v for k, v in hist.items() if not isinstance(v, list)}, indent=1))
    print(f"dynlearn: trained on {hist['n_samples']} samples, "
          f"best val loss {hist['best_val_loss']:.4f} -> {out}")
    return 0


def cmd_train_diff(cfg, args) -> int:
    from netresgen.denoiser import save_denoiser, train_denoiser
    from netresgen.diffusion import build_schedule
    from netresgen.graphs import degree_stats

    split = _load_split(cfg, args)
    pc = cfgmod.pipeline_config(cfg)
    graphs = [s.graph for s in split.labeled + split.unlabeled]
    density = float(np.mean([degree_stats(g)[2] for g in graphs]))
    schedule = build_schedule(pc.schedule_steps, density)
    model, hist = train_denoiser(graphs, schedule, pc.denoiser, seed=pc.seed)
    out = _stage_out(args, "diffusion")
    save_denoiser(model, schedule, out / "checkpoint.pt")
    print(f"denoiser: {len(graphs)} graphs, target density {density:.4f}, "
          f"best val loss {hist['best_val_loss']:.4f} -> {out}")
    return 0


def cmd_train_pred(cfg, args) -> int:
    from netresgen.predictor import evaluate_predictor, save_predictor, train_predictor

    split = _load_split(cfg, args)
    pc = cfgmod.pipeline_config(cfg)
    model, hist = train_predictor(
        None, split.labeled, split.validation, pc.predictor, seed=pc.seed
    )
    out = _stage_out(args, "predictor")
    save_predictor(model, out / "checkpoint.pt")
    rep = evaluate_predictor(model, split.test)
    (out / "metrics.json").write_text(json.dumps(
        {"val_f1": hist["best_val_f1"], "test_f1": rep.f1, "test_acc": rep.accuracy},
        indent=1))
    print(f"predictor: val F1 {hist['best_val_f1']:.3f}, test F1 {rep.f1:.3f} -> {out}")
    return 0


def _checkpoint(cfg, args, key: str, default_stage: str, filename="checkpoint.pt") -> Path:
    path = cfg.get("paths", {}).get(key)
    if path is not None:
        return Path(path)
    return Path(args.out) / default_stage / filename


def cmd_finetune(cfg, args) -> int:
    from netresgen.dynlearn import load_dynlearn
    from netresgen.predictor import finetune_predictor, load_predictor, save_predictor

    split = _load_split(cfg, args)
    pc = cfgmod.pipeline_config(cfg)
    dyn = load_dynlearn(_checkpoint(cfg, args, "dynlearn", "dynlearn"))
    model = load_predictor(_checkpoint(cfg, args, "predictor", "predictor"))
    family = split.provenance["dynamics"]["family"]
    dt = split.provenance["sim"]["dt"]
    model, hist = finetune_predictor(
        model, split.labeled, dyn, family, dt, pc.predictor, seed=pc.seed
    )
    out = _stage_out(args, "finetune")
    save_predictor(model, out / "checkpoint.pt")
    print(f"finetune: accuracy on learned trajectories "
          f"{hist['initial_accuracy']:.3f} -> {hist['final_accuracy']:.3f}, saved {out}")
    return 0


def cmd_generate(cfg, args) -> int:
    from netresgen.augment import _wrap_generated
    from netresgen.data import DatasetSplit, save_dataset
    from netresgen.denoiser import load_denoiser, sample_unconditional_batch
    from netresgen.dynlearn import load_dynlearn
    from netresgen.guidance import GuidanceConfig, sample_conditional_batch
    from netresgen.predictor import load_predictor

    split = _load_split(cfg, args)
    pc = cfgmod.pipeline_config(cfg)
    gen = cfg.get("generation", {})
    denoiser, schedule = load_denoiser(_checkpoint(cfg, args, "denoiser", "diffusion"))
    dyn = load_dynlearn(_checkpoint(cfg, args, "dynlearn", "dynlearn"))
    family = split.provenance["dynamics"]["family"]
    dt = split.provenance["sim"]["dt"]
    t_obs = split.labeled[0].t_obs
    rng = np.random.default_rng(pc.seed)
    sizes_pool = [s.graph.n_nodes for s in split.labeled + split.unlabeled]
    n = gen.get("n_samples", 2 * pc.n_generate_per_class)
    sizes = [int(rng.choice(sizes_pool)) if gen.get("n_nodes") is None else gen["n_nodes"]
             for _ in range(n)]

    if pc.guidance.guidance_scale > 0 and not pc.no_guidance:
        predictor = load_predictor(
            _checkpoint(cfg, args, "predictor_ft", "finetune")
        )
        gcfg = GuidanceConfig(
            guidance_scale=pc.guidance.guidance_scale,
            stride=pc.guidance.stride,
            t_obs=t_obs,
            dt=dt,
            family=family,
        )
        target = gen.get("target_label", 1)
        graphs = []
        for start in range(0, n, pc.sample_batch):
            graphs += sample_conditional_batch(
                denoiser, dyn, predictor, schedule,
                sizes[start : start + pc.sample_batch], target, gcfg,
                seed=pc.seed + start,
            )
        samples = _wrap_generated(graphs, dyn, family, t_obs, dt, pc.seed, intended=target)
    else:
        graphs = []
        for start in range(0, n, pc.sample_batch):
            graphs += sample_unconditional_batch(
                denoiser, schedule, sizes[start : start + pc.sample_batch],
                seed=pc.seed + start,
            )
        samples = _wrap_generated(graphs, dyn, family, t_obs, dt, pc.seed, intended=None)

    out = _stage_out(args, "generate")
    container = DatasetSplit(labeled=[], unlabeled=samples, validation=[], test=[],
                             provenance={"schema_version": 1, "generated": True,
                                         "dynamics": split.provenance["dynamics"],
                                         "sim": split.provenance["sim"],
                                         "intended_label": gen.get("target_label")})
    save_dataset(container, out / "samples")
    print(f"generated {len(samples)} networks -> {out / 'samples'}")
    return 0


def cmd_augment(cfg, args) -> int:
    from netresgen.augment import run_pipeline

    split = _load_split(cfg, args)
    pc = cfgmod.pipeline_config(cfg)
    out = _stage_out(args, "augment")
    cache_root = os.environ.get("TDNETGEN_CACHE")
    stage_dir = Path(cache_root) / "augment_stages" if cache_root else out / "stages"
    result = run_pipeline(split, pc, stage_dir=stage_dir, verbose=True)
    (out / "report.json").write_text(json.dumps(result.report, indent=1, sort_keys=True))
    lines = [f"{'stage':12s} {'seconds':>8s}"]
    for stage, secs in result.report.get("timing", {}).items():
        lines.append(f"{stage:12s} {secs:8.1f}")
    lines.append("")
    lines.append(f"vanilla test F1:   {result.report['stages']['vanilla']['test_f1']:.4f}")
    lines.append(f"augmented test F1: {result.report['stages']['retrain']['test_f1']:.4f}")
    (out / "report.txt").write_text("\n".join(lines) + "\n")
    print("\n".join(lines))
    return 0


def cmd_evaluate(cfg, args) -> int:
    from netresgen.evaluation import BenchmarkConfig, run_benchmark

    split = _load_split(cfg, args)
    bench = cfg.get("benchmark", {})
    out = _stage_out(args, "evaluate")
    bcfg = BenchmarkConfig(
        rows=tuple(bench.get("rows", ["vanilla", "st", "tdnetgen"])),
        seeds=tuple(bench.get("seeds", [0, 1, 2])),
        pipeline=cfgmod.pipeline_config(cfg),
        out_dir=out,
    )
    table = run_benchmark(split, bcfg)
    print((out / "table.txt").read_text())
    return 0


def cmd_sweep(cfg, args) -> int:
    from netresgen.evaluation import BenchmarkConfig, sweep

    if "sweep" not in cfg:
        raise ConfigurationError("config has no 'sweep' section")
    split = _load_split(cfg, args)
    bench = cfg.get("benchmark", {})
    out = _stage_out(args, "sweep")
    bcfg = BenchmarkConfig(
        rows=tuple(bench.get("rows", ["vanilla", "tdnetgen"])),
        seeds=tuple(bench.get("seeds", [0])),
        pipeline=cfgmod.pipeline_config(cfg),
        out_dir=out,
    )
    sweep(cfg["sweep"]["axis"], cfg["sweep"]["values"], split, bcfg)
    print(f"sweep written to {out}")
    return 0


def cmd_theory(cfg, args) -> int:
    from netresgen.data import LABEL_NAMES
    from netresgen.theory import beta_eff, bifurcation_point, theory_predict
    from netresgen.errors import DomainError

    split = _load_split(cfg, args)
    _, dyn, *_ = cfgmod.dataset_objects(cfg)
    beta_crit = bifurcation_point(dyn)
    out = _stage_out(args, "theory")
    with open(out / "theory.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["id", "beta_eff", "theory_label"])
        for s in split.all_samples():
            try:
                b = beta_eff(s.graph)
                label = LABEL_NAMES[theory_predict(s.graph, dyn, beta_crit)]
            except DomainError:
                b, label = 0.0, LABEL_NAMES[0]
            writer.writerow([s.id, f"{b:.6f}", label])
    print(f"beta_crit = {beta_crit:.4f}; per-sample table -> {out / 'theory.csv'}")
    return 0


_COMMANDS = {
    "gen-data": cmd_gen_data,
    "train-dyn": cmd_train_dyn,
    "train-diff": cmd_train_diff,
    "train-pred": cmd_train_pred,
    "finetune": cmd_finetune,
    "generate": cmd_generate,
    "augment": cmd_augment,
    "evaluate": cmd_evaluate,
    "sweep": cmd_sweep,
    "theory": cmd_theory,
}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = _load(args)
    except ConfigurationError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    try:
        return _COMMANDS[args.command](cfg, args)
    except ConfigurationError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # stage failures carry the stage name
        print(f"stage {args.command} failed: {exc}", file=sys.stderr)
        traceback.print_exc()
        return 1


if __name__ == "__main__":
    sys.exit(main())
