"""Run-configuration schema, validation and object construction.

A run is described by one JSON document; the same file drives every CLI
stage.  The schema below is the published contract -- configs are
validated against it before any stage executes, and validation failures
report the offending JSON path.
"""

from __future__ import annotations

import json
from pathlib import Path
from typing import Optional

import jsonschema

from netresgen.augment import PipelineConfig
from netresgen.baselines import SelfTrainConfig
from netresgen.denoiser import DenoiserHyperparams
from netresgen.dynamics import (
    DynamicsSpec,
    LabelRule,
    SimConfig,
    mutualistic_spec,
    neuronal_spec,
    regulatory_spec,
)
from netresgen.dynlearn import DynLearnHyperparams
from netresgen.errors import ConfigurationError
from netresgen.graphs import TopologySpec
from netresgen.guidance import GuidanceConfig
from netresgen.predictor import PredictorHyperparams

SCHEMA_VERSION = 1

_number = {"type": "number"}
_int = {"type": "integer"}
_bool = {"type": "boolean"}
_pair = {"type": "array", "items": {"type": "number"}, "minItems": 2, "maxItems": 2}

CONFIG_SCHEMA = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "type": "object",
    "additionalProperties": False,
    "required": ["schema_version", "dataset"],
    "properties": {
        "schema_version": {"const": SCHEMA_VERSION},
        "seed": _int,
        "paths": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "dataset": {"type": "string"},
                "dynlearn": {"type": "string"},
                "denoiser": {"type": "string"},
                "predictor": {"type": "string"},
                "predictor_ft": {"type": "string"},
            },
        },
        "dataset": {
            "type": "object",
            "additionalProperties": False,
            "required": ["family", "topology", "counts"],
            "properties": {
                "family": {"enum": ["MUTUALISTIC", "REGULATORY", "NEURONAL"]},
                "topology": {
                    "type": "object",
                    "additionalProperties": False,
                    "required": ["family"],
                    "properties": {
                        "family": {"enum": ["ER", "BA", "S1", "SBM", "MODULAR_PERTURBED"]},
                        "n_nodes": {"oneOf": [_int, _pair]},
                        "p": _number,
                        "p_range": _pair,
                        "m": _int,
                        "beta": _number,
                        "gamma": _number,
                        "mean_degree": _number,
                        "communities": _pair,
                        "p_intra": _number,
                        "p_inter": _number,
                        "removal_range": _pair,
                        "base_n_nodes": _int,
                        "base_seed": _int,
                    },
                },
                "dynamics": {"type": "object", "additionalProperties": _number},
                "counts": {
                    "type": "object",
                    "additionalProperties": False,
                    "required": ["n_unlabeled", "n_labeled", "n_val", "n_test"],
                    "properties": {
                        "n_unlabeled": _int,
                        "n_labeled": _int,
                        "n_val": _int,
                        "n_test": _int,
                    },
                },
                "t_obs": _int,
                "sim": {
                    "type": "object",
                    "additionalProperties": False,
                    "properties": {"t_max": _number, "dt": _number, "substeps": _int},
                },
                "label_rule": {
                    "type": "object",
                    "additionalProperties": False,
                    "properties": {"r": _number, "m": _number, "eps": _number},
                },
                "seed": _int,
            },
        },
        "dynlearn": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "d_hidden": _int,
                "n_gcn_layers": _int,
                "lr": _number,
                "epochs": _int,
                "patience": _int,
                "val_fraction": _number,
                "smooth_eps": _number,
                "plain_l1": _bool,
            },
        },
        "diffusion": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "steps": _int,
                "denoiser": {
                    "type": "object",
                    "additionalProperties": False,
                    "properties": {
                        "n_layers": _int,
                        "n_heads": _int,
                        "d_node": _int,
                        "d_edge": _int,
                        "d_time": _int,
                        "lr": _number,
                        "epochs": _int,
                        "batch_size": _int,
                        "val_fraction": _number,
                        "patience": _int,
                    },
                },
            },
        },
        "predictor": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "d_embed": _int,
                "n_encoder_layers": _int,
                "n_heads": _int,
                "n_gcn_layers": _int,
                "attn_hidden": _int,
                "max_t": _int,
                "lr": _number,
                "epochs": _int,
                "patience": _int,
                "finetune_lr": _number,
                "finetune_epochs": _int,
                "weight_decay": _number,
            },
        },
        "guidance": {
            "type": "object",
            "additionalProperties": False,
            "properties": {"guidance_scale": _number, "stride": _int},
        },
        "generation": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "n_per_class": _int,
                "used_fraction": _number,
                "sample_batch": _int,
                "target_label": {"enum": [0, 1]},
                "n_samples": _int,
                "n_nodes": _int,
            },
        },
        "pipeline": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "no_guidance": _bool,
                "no_finetune": _bool,
                "labeled_only_dynlearn": _bool,
            },
        },
        "self_training": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "n_pseudo": _int,
                "rounds": _int,
                "policy": {"enum": ["top_confidence", "threshold"]},
                "threshold": _number,
            },
        },
        "benchmark": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "rows": {"type": "array", "items": {"type": "string"}},
                "seeds": {"type": "array", "items": _int},
            },
        },
        "sweep": {
            "type": "object",
            "additionalProperties": False,
            "required": ["axis", "values"],
            "properties": {
                "axis": {"enum": ["n_labeled", "t_obs", "n_generated"]},
                "values": {"type": "array", "items": _int, "minItems": 1},
            },
        },
    },
}


def load_config(path) -> dict:
    """Parse and schema-validate a run config; raises ConfigurationError."""
    try:
        raw = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigurationError(f"{path}: cannot read config ({exc})") from exc
    try:
        jsonschema.validate(raw, CONFIG_SCHEMA)
    except jsonschema.ValidationError as exc:
        raise ConfigurationError(
            f"{path}: invalid config at {exc.json_path}: {exc.message}"
        ) from exc
    return raw


_FAMILY_SPECS = {
    "MUTUALISTIC": mutualistic_spec,
    "REGULATORY": regulatory_spec,
    "NEURONAL": neuronal_spec,
}


def dataset_objects(cfg: dict):
    """(topo_spec, dyn_spec, sim_cfg, counts, t_obs, label_rule, seed) from config."""
    d = cfg["dataset"]
    topo_raw = dict(d["topology"])
    if topo_raw["family"] == "MODULAR_PERTURBED":
        from netresgen.graphs import make_modular_base

        base = make_modular_base(
            n_nodes=topo_raw.pop("base_n_nodes", 60), seed=topo_raw.pop("base_seed", 0)
        )
        topo_raw["base"] = base
    else:
        topo_raw.pop("base_n_nodes", None)
        topo_raw.pop("base_seed", None)
    for key in ("n_nodes", "p_range", "communities", "removal_range"):
        if isinstance(topo_raw.get(key), list):
            topo_raw[key] = tuple(topo_raw[key])
    topo = TopologySpec(**topo_raw)
    dyn = _FAMILY_SPECS[d["family"]](**d.get("dynamics", {}))
    sim = SimConfig(**d.get("sim", {}))
    rule = LabelRule(**d.get("label_rule", {}))
    return (
        topo,
        dyn,
        sim,
        d["counts"],
        d.get("t_obs", 6),
        rule,
        d.get("seed", cfg.get("seed", 0)),
    )


def pipeline_config(cfg: dict, seed: Optional[int] = None) -> PipelineConfig:
    gen = cfg.get("generation", {})
    pipe = cfg.get("pipeline", {})
    return PipelineConfig(
        n_generate_per_class=gen.get("n_per_class", 60),
        used_fraction=gen.get("used_fraction", 0.5),
        sample_batch=gen.get("sample_batch", 64),
        schedule_steps=cfg.get("diffusion", {}).get("steps", 200),
        guidance=GuidanceConfig(**cfg.get("guidance", {})),
        dynlearn=DynLearnHyperparams(**cfg.get("dynlearn", {})),
        denoiser=DenoiserHyperparams(**cfg.get("diffusion", {}).get("denoiser", {})),
        predictor=PredictorHyperparams(**cfg.get("predictor", {})),
        no_guidance=pipe.get("no_guidance", False),
        no_finetune=pipe.get("no_finetune", False),
        labeled_only_dynlearn=pipe.get("labeled_only_dynlearn", False),
        seed=cfg.get("seed", 0) if seed is None else seed,
    )


def self_train_config(cfg: dict, default_n: int) -> SelfTrainConfig:
    st = cfg.get("self_training", {})
    return SelfTrainConfig(
        n_pseudo=st.get("n_pseudo", default_n),
        rounds=st.get("rounds", 1),
        policy=st.get("policy", "top_confidence"),
        threshold=st.get("threshold", 0.9),
    )
