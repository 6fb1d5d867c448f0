import dataclasses
import json

import numpy as np
import pytest
import torch

from netresgen.augment import PipelineArtifacts, PipelineConfig, run_pipeline
from netresgen.denoiser import DenoiserHyperparams
from netresgen.dynlearn import DynLearnHyperparams
from netresgen.guidance import GuidanceConfig
from netresgen.predictor import PredictorHyperparams

MICRO = PipelineConfig(
    n_generate_per_class=4,
    used_fraction=0.5,
    schedule_steps=8,
    guidance=GuidanceConfig(guidance_scale=200.0, stride=2),
    dynlearn=DynLearnHyperparams(d_hidden=8, epochs=15, val_fraction=0.0),
    denoiser=DenoiserHyperparams(
        n_layers=1, n_heads=2, d_node=16, d_edge=8, d_time=8, epochs=5, batch_size=8
    ),
    predictor=PredictorHyperparams(
        d_embed=16, n_encoder_layers=1, n_heads=2, n_gcn_layers=1, attn_hidden=4,
        epochs=20, patience=20, finetune_epochs=3,
    ),
    seed=0,
)

STAGES = ("dynlearn", "denoiser", "vanilla", "finetune", "generate", "subsample", "retrain")


@pytest.fixture(scope="module")
def result(tiny_split):
    return run_pipeline(tiny_split, MICRO)


def test_report_has_all_seven_stages(result):
    for stage in STAGES:
        assert stage in result.report["stages"], stage
        assert stage in result.report["timing"], stage


def test_generated_counts_and_metadata(result):
    gen = result.generated
    assert len(gen) == 8
    assert all(s.meta.get("generated") for s in gen)
    assert {s.meta["intended_label"] for s in gen} == {0, 1}
    assert all(s.label == s.meta["intended_label"] for s in gen)
    assert result.report["stages"]["subsample"]["n_used"] == MICRO.n_augmented == 4


def test_generated_never_in_eval_pools(result, tiny_split):
    gen_ids = {s.id for s in result.generated}
    eval_ids = {s.id for s in tiny_split.validation + tiny_split.test}
    assert not gen_ids & eval_ids


def test_observation_shapes_match_dataset(result, tiny_split):
    t_obs = tiny_split.labeled[0].t_obs
    for s in result.generated:
        assert s.observations.shape == (2, s.graph.n_nodes, t_obs)
        assert s.observations.dtype == np.float32


def test_no_guidance_ablation_assigns_predictor_labels(tiny_split):
    cfg = dataclasses.replace(MICRO, no_guidance=True, n_generate_per_class=3)
    res = run_pipeline(tiny_split, cfg)
    assert len(res.generated) == 6
    assert all("intended_label" not in s.meta for s in res.generated)
    assert all("predictor_score" in s.meta for s in res.generated)
    assert all(s.label in (0, 1) for s in res.generated)


def test_no_finetune_ablation_skips_stage(tiny_split):
    cfg = dataclasses.replace(MICRO, no_finetune=True)
    res = run_pipeline(tiny_split, cfg)
    assert res.report["stages"]["finetune"] == {"skipped": True}
    assert res.artifacts.finetuned is None


def test_labeled_only_dynlearn_counter(tiny_split):
    cfg = dataclasses.replace(MICRO, labeled_only_dynlearn=True)
    res = run_pipeline(tiny_split, cfg)
    assert res.report["stages"]["dynlearn"]["n_samples"] == len(tiny_split.labeled)
    assert res.report["stages"]["dynlearn"]["labeled_only"] is True


def test_artifact_reuse_skips_training(tiny_split, result):
    shared = PipelineArtifacts(
        dyn_model=result.artifacts.dyn_model,
        denoiser=result.artifacts.denoiser,
        schedule=result.artifacts.schedule,
        vanilla=result.artifacts.vanilla,
        finetuned=result.artifacts.finetuned,
    )
    cfg = dataclasses.replace(MICRO, no_guidance=True)
    res = run_pipeline(tiny_split, cfg, artifacts=shared)
    # stages 1-4 were not retrained: no fresh stage entries beyond evaluation
    assert "best_val_loss" not in res.report["stages"].get("dynlearn", {})
    assert res.artifacts.vanilla is result.artifacts.vanilla


def test_resume_from_stage_dir(tiny_split, tmp_path):
    stage_dir = tmp_path / "stages"
    first = run_pipeline(tiny_split, MICRO, stage_dir=stage_dir)
    assert (stage_dir / "dynlearn.pt").exists()
    assert (stage_dir / "report.json").exists()
    second = run_pipeline(tiny_split, MICRO, stage_dir=stage_dir)
    for stage in ("dynlearn", "denoiser", "vanilla", "finetune"):
        assert second.report["stages"][stage].get("resumed"), stage
    # resumed run reproduces the final metric of the fresh run
    assert second.report["stages"]["retrain"]["test_f1"] == pytest.approx(
        first.report["stages"]["retrain"]["test_f1"]
    )


def test_pipeline_reproducibility(tiny_split):
    a = run_pipeline(tiny_split, MICRO)
    b = run_pipeline(tiny_split, MICRO)
    ra = {k: v for k, v in a.report.items() if k != "timing"}
    rb = {k: v for k, v in b.report.items() if k != "timing"}
    assert json.dumps(ra, sort_keys=True) == json.dumps(rb, sort_keys=True)


def test_config_validation():
    with pytest.raises(Exception):
        PipelineConfig(n_generate_per_class=0)
    with pytest.raises(Exception):
        PipelineConfig(used_fraction=0.0)
