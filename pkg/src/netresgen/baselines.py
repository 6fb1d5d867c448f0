"""Self-training baseline: pseudo-label confident unlabeled samples, retrain."""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple

import numpy as np
import torch

from netresgen.data import NetworkSample
from netresgen.errors import ConfigurationError
from netresgen.predictor import (
    PredictorHyperparams,
    ResiliencePredictor,
    _batch_tensors,
    train_predictor,
)


@dataclass
class SelfTrainConfig:
    n_pseudo: int = 60
    rounds: int = 1
    policy: str = "top_confidence"   # or "threshold"
    threshold: float = 0.9

    def __post_init__(self):
        if self.policy not in ("top_confidence", "threshold"):
            raise ConfigurationError(f"unknown confidence policy {self.policy!r}")


def score_unlabeled(
    model: ResiliencePredictor, unlabeled: Sequence[NetworkSample]
) -> np.ndarray:
    """Resilience probabilities for a pool of samples."""
    probs = []
    model.eval()
    # batched in chunks to bound padded-memory growth
    chunk = 128
    for start in range(0, len(unlabeled), chunk):
        part = list(unlabeled[start : start + chunk])
        a, obs, mask, _ = _batch_tensors_nolabel(part)
        with torch.no_grad():
            p = torch.sigmoid(model(a, obs, mask))
        probs.extend(p.tolist())
    return np.asarray(probs)


def _batch_tensors_nolabel(samples: Sequence[NetworkSample]):
    placeholder = [
        NetworkSample(
            id=s.id, graph=s.graph, observations=s.observations, label=0, seed=s.seed
        )
        for s in samples
    ]
    return _batch_tensors(placeholder)


def self_train(
    model: ResiliencePredictor,
    labeled: Sequence[NetworkSample],
    unlabeled: Sequence[NetworkSample],
    validation: Sequence[NetworkSample],
    cfg: SelfTrainConfig,
    hp: PredictorHyperparams,
    seed: int,
    audit_labels: Optional[dict] = None,
) -> Tuple[ResiliencePredictor, dict]:
    """One or more rounds of pseudo-labeling plus retraining.

    Pseudo-labeled samples are flagged in ``meta`` and never enter the
    validation pool.  When ``audit_labels`` (withheld ground truth) is
    given, the report includes the pseudo-label error rate -- audit only,
    never used for training.
    """
    if cfg.n_pseudo > len(unlabeled):
        raise ConfigurationError("n_pseudo exceeds the unlabeled pool size")
    report = {"rounds": []}
    pool = list(unlabeled)
    train_set = list(labeled)
    for rnd in range(cfg.rounds):
        probs = score_unlabeled(model, pool)
        confidence = np.abs(probs - 0.5)
        if cfg.policy == "top_confidence":
            order = sorted(
                range(len(pool)), key=lambda i: (-confidence[i], pool[i].id)
            )
            chosen = order[: cfg.n_pseudo]
        else:
            chosen = [i for i in range(len(pool)) if max(probs[i], 1 - probs[i]) >= cfg.threshold]
            chosen = chosen[: cfg.n_pseudo]
        if not chosen:
            warnings.warn("self-training round selected no samples; skipping", stacklevel=2)
            report["rounds"].append({"n_selected": 0})
            continue
        pseudo = []
        n_wrong = 0
        for i in chosen:
            s = pool[i]
            label = int(probs[i] > 0.5)
            if audit_labels is not None and s.id in audit_labels:
                truth = audit_labels[s.id]
                truth = 1 if truth == "resilient" else 0
                n_wrong += int(truth != label)
            pseudo.append(
                NetworkSample(
                    id=s.id,
                    graph=s.graph,
                    observations=s.observations,
                    label=label,
                    seed=s.seed,
                    meta={**s.meta, "pseudo_label": True},
                )
            )
        train_set = train_set + pseudo
        pool = [s for j, s in enumerate(pool) if j not in set(chosen)]
        model, _ = train_predictor(model, train_set, validation, hp, seed + rnd)
        entry = {"n_selected": len(pseudo)}
        if audit_labels is not None:
            entry["pseudo_error_rate"] = n_wrong / len(pseudo)
        report["rounds"].append(entry)
    return model, report
