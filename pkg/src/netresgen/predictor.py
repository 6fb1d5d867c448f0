"""Resilience classifier over (topology, observed trajectories) pairs.

Per node and trajectory, a small transformer encodes the observed time
steps and the terminal-step embedding feeds a message-passing stack built
on the normalized Laplacian operator.  A sigmoid-gated attention over
trajectories fuses the per-trajectory node embeddings; mean pooling over
nodes yields the network embedding that the output head classifies.

The forward pass is differentiable with respect to a *soft* adjacency
matrix, which is what classifier-guided generation relies on.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, asdict
from typing import List, Optional, Sequence, Tuple

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from netresgen.errors import ConfigurationError, DomainError, TrainingError
from netresgen.graphs import Graph
from netresgen.metrics import compute_metrics
from netresgen.nnutil import make_mlp, pad_adjacency, pad_observations, xavier_init


def laplacian_operator(adjacency) -> "np.ndarray | torch.Tensor":
    """Normalized Laplacian ``I - D^-1/2 A D^-1/2`` with zero-degree guards.

    Accepts hard or soft adjacencies, numpy or torch, batched or not;
    zero-degree normalizers are replaced by 0, so isolated nodes get an
    identity row rather than infinities.
    """
    if isinstance(adjacency, np.ndarray):
        return laplacian_operator(torch.as_tensor(adjacency, dtype=torch.float64)).numpy()
    a = adjacency
    deg = a.sum(-1)
    inv_sqrt = torch.where(deg > 0, deg.clamp(min=1e-12) ** -0.5, torch.zeros_like(deg))
    n = a.shape[-1]
    eye = torch.eye(n, dtype=a.dtype, device=a.device)
    if a.dim() == 3:
        eye = eye.unsqueeze(0)
    return eye - a * inv_sqrt.unsqueeze(-1) * inv_sqrt.unsqueeze(-2)


@dataclass
class PredictorHyperparams:
    d_embed: int = 64
    n_encoder_layers: int = 2
    n_heads: int = 4
    n_gcn_layers: int = 3
    attn_hidden: int = 8
    max_t: int = 32
    lr: float = 1e-3
    epochs: int = 300
    patience: int = 40
    finetune_lr: float = 1e-4
    finetune_epochs: int = 60
    weight_decay: float = 1e-4

    def to_dict(self) -> dict:
        return asdict(self)


class ResiliencePredictor(nn.Module):
    def __init__(self, hp: PredictorHyperparams, n_trajectories: int):
        super().__init__()
        self.hp = hp
        self.n_trajectories = n_trajectories
        d = hp.d_embed
        self.input_proj = nn.Linear(1, d)
        self.positional = nn.Parameter(torch.zeros(hp.max_t, d))
        layer = nn.TransformerEncoderLayer(
            d_model=d,
            nhead=hp.n_heads,
            dim_feedforward=2 * d,
            batch_first=True,
            dropout=0.0,
        )
        self.encoder = nn.TransformerEncoder(layer, hp.n_encoder_layers)
        self.gcn_self = nn.ModuleList(
            make_mlp([d, d, d]) for _ in range(hp.n_gcn_layers)
        )
        self.gcn_neigh = nn.ModuleList(
            make_mlp([d, d, d]) for _ in range(hp.n_gcn_layers)
        )
        m = n_trajectories
        self.attn_mlp = make_mlp([m, hp.attn_hidden, m])
        self.head = make_mlp([d, d // 2, 1])
        xavier_init(self)
        nn.init.normal_(self.positional, std=0.02)
        # untrained model starts at probability 1/2 exactly
        nn.init.zeros_(self.head[-1].weight)
        nn.init.zeros_(self.head[-1].bias)

    def embed(
        self,
        adjacency: torch.Tensor,
        observations: torch.Tensor,
        node_mask: Optional[torch.Tensor] = None,
    ) -> Tuple[torch.Tensor, torch.Tensor, torch.Tensor]:
        """Fused node embeddings, network embedding and trajectory weights.

        ``adjacency`` is (B, N, N) hard or soft; ``observations`` is
        (B, M, N, T).  Returns ``(Z (B,N,d), e_net (B,d), alpha (B,M))``.
        """
        b, m, n, t = observations.shape
        if m != self.n_trajectories:
            raise DomainError(
                f"model was built for M={self.n_trajectories} trajectories, got {m}"
            )
        if t > self.hp.max_t:
            raise DomainError(f"window of {t} steps exceeds max_t={self.hp.max_t}")
        if node_mask is None:
            node_mask = torch.ones(b, n, dtype=torch.bool, device=observations.device)
        fmask = node_mask.to(observations.dtype)

        seq = observations.reshape(b * m * n, t, 1)
        z = self.input_proj(seq) + self.positional[:t].to(observations.dtype)
        z = self.encoder(z)[:, -1, :]          # terminal-step embedding
        z = z.reshape(b, m, n, -1)

        psi = laplacian_operator(adjacency).unsqueeze(1).to(z.dtype)  # (B,1,N,N)
        z = z * fmask[:, None, :, None]
        for f_l, g_l in zip(self.gcn_self, self.gcn_neigh):
            z = f_l(z) + g_l(psi @ z)
            z = z * fmask[:, None, :, None]

        # trajectory attention from mean/max pools over nodes and features
        denom = (node_mask.sum(-1).clamp(min=1) * z.shape[-1]).to(z.dtype)
        s_avg = z.sum(dim=(2, 3)) / denom.unsqueeze(1)          # (B, M)
        neg = torch.finfo(z.dtype).min
        z_masked = z.masked_fill(~node_mask[:, None, :, None], neg)
        s_max = z_masked.amax(dim=(2, 3))                        # (B, M)
        alpha = torch.sigmoid(self.attn_mlp(s_avg) + self.attn_mlp(s_max))

        fused = (alpha[:, :, None, None] * z).sum(dim=1)         # (B, N, d)
        e_net = fused.sum(dim=1) / node_mask.sum(-1, keepdim=True).clamp(min=1).to(z.dtype)
        return fused, e_net, alpha

    def forward(
        self,
        adjacency: torch.Tensor,
        observations: torch.Tensor,
        node_mask: Optional[torch.Tensor] = None,
    ) -> torch.Tensor:
        """Resilience logits of shape (B,)."""
        _, e_net, _ = self.embed(adjacency, observations, node_mask)
        return self.head(e_net).squeeze(-1)


def embed_network(model: ResiliencePredictor, adjacency, observations):
    """Single-sample embedding: returns (Z (N,d), e_net (d,), alpha (M,))."""
    dtype = next(model.parameters()).dtype
    a = torch.as_tensor(np.asarray(adjacency), dtype=dtype).unsqueeze(0)
    obs = torch.as_tensor(np.asarray(observations), dtype=dtype).unsqueeze(0)
    with torch.no_grad():
        z, e_net, alpha = model.embed(a, obs)
    return z[0].numpy(), e_net[0].numpy(), alpha[0].numpy()


def predict_resilience(model: ResiliencePredictor, adjacency, observations) -> float:
    """Probability that one network is resilient."""
    dtype = next(model.parameters()).dtype
    a = torch.as_tensor(np.asarray(adjacency), dtype=dtype).unsqueeze(0)
    obs = torch.as_tensor(np.asarray(observations), dtype=dtype).unsqueeze(0)
    with torch.no_grad():
        logit = model(a, obs)
    p = float(torch.sigmoid(logit)[0])
    if not math.isfinite(p):
        raise TrainingError("predictor produced a non-finite probability")
    return p


# --------------------------------------------------------------------------
# training

def _batch_tensors(samples: Sequence, n_max: Optional[int] = None):
    graphs = [s.graph for s in samples]
    if n_max is None:
        n_max = max(g.n_nodes for g in graphs)
    b = len(samples)
    adj = torch.zeros(b, n_max, n_max)
    mask = torch.zeros(b, n_max, dtype=torch.bool)
    for i, g in enumerate(graphs):
        adj[i, : g.n_nodes, : g.n_nodes] = torch.as_tensor(
            np.asarray(g.adjacency), dtype=torch.float32
        )
        mask[i, : g.n_nodes] = True
    obs = pad_observations([s.observations for s in samples], n_max)
    labels = torch.as_tensor(
        [float(s.label) for s in samples], dtype=torch.float32
    )
    return adj, obs, mask, labels


def evaluate_predictor(model: ResiliencePredictor, samples: Sequence, tag: str = ""):
    """Hard-threshold metrics of the model on labeled samples."""
    adj, obs, mask, labels = _batch_tensors(samples)
    model.eval()
    with torch.no_grad():
        probs = torch.sigmoid(model(adj, obs, mask))
    preds = (probs > 0.5).long().tolist()
    return compute_metrics(preds, labels.long().tolist(), tag=tag)


def train_predictor(
    model: Optional[ResiliencePredictor],
    labeled: Sequence,
    validation: Sequence,
    hp: PredictorHyperparams,
    seed: int,
    n_trajectories: Optional[int] = None,
    log_every: int = 0,
) -> Tuple[ResiliencePredictor, dict]:
    """BCE training with early stopping on validation F1.

    Pass ``model=None`` to train from a fresh initialization (the vanilla
    predictor); pass an existing model to warm-start (retraining on
    augmented pools).
    """
    labels = {s.label for s in labeled}
    if labels != {0, 1}:
        raise ConfigurationError("labeled pool must contain both classes")
    torch.manual_seed(seed)
    if model is None:
        m = n_trajectories or labeled[0].observations.shape[0]
        model = ResiliencePredictor(hp, m)

    adj, obs, mask, y = _batch_tensors(labeled)
    opt = torch.optim.Adam(model.parameters(), lr=hp.lr, weight_decay=hp.weight_decay)
    best_f1 = -1.0
    best_state = {k: v.clone() for k, v in model.state_dict().items()}
    since_best = 0
    history = {"train_loss": [], "val_f1": []}

    for epoch in range(hp.epochs):
        model.train()
        logits = model(adj, obs, mask)
        loss = F.binary_cross_entropy_with_logits(logits, y)
        if not torch.isfinite(loss):
            raise TrainingError(f"predictor loss became non-finite at epoch {epoch}")
        opt.zero_grad()
        loss.backward()
        opt.step()
        history["train_loss"].append(loss.detach().item())

        val_report = evaluate_predictor(model, validation)
        history["val_f1"].append(val_report.f1)
        if log_every and epoch % log_every == 0:
            print(f"[predictor] epoch {epoch}  loss {loss.detach().item():.4f}  val F1 {val_report.f1:.3f}")
        if val_report.f1 > best_f1:
            best_f1 = val_report.f1
            best_state = {k: v.clone() for k, v in model.state_dict().items()}
            since_best = 0
        else:
            since_best += 1
            if since_best >= hp.patience:
                break

    model.load_state_dict(best_state)
    model.eval()
    history["best_val_f1"] = best_f1
    return model, history


def finetune_predictor(
    model: ResiliencePredictor,
    labeled: Sequence,
    dyn_model,
    family: str,
    dt: float,
    hp: PredictorHyperparams,
    seed: int = 0,
) -> Tuple[ResiliencePredictor, dict]:
    """Adapt the predictor to learned-dynamics trajectories.

    Each labeled sample's observations are regenerated with the dynamics
    learner on the *same* topology (ground-truth labels kept), and training
    continues at a reduced learning rate.  Returns the checkpoint with the
    best accuracy on those regenerated inputs, so the result is never worse
    than the input model on its fine-tuning distribution.
    """
    from netresgen.dynlearn import generate_trajectories

    t_obs = labeled[0].t_obs
    regen = []
    for i, s in enumerate(labeled):
        obs = generate_trajectories(dyn_model, s.graph, family, t_obs, dt, seed=seed + i)
        regen.append(
            type(s)(
                id=s.id,
                graph=s.graph,
                observations=obs,
                label=s.label,
                seed=s.seed,
                meta={**s.meta, "regenerated": True},
            )
        )

    adj, obs, mask, y = _batch_tensors(regen)
    opt = torch.optim.Adam(model.parameters(), lr=hp.finetune_lr)

    def train_accuracy() -> float:
        model.eval()
        with torch.no_grad():
            probs = torch.sigmoid(model(adj, obs, mask))
        return float(((probs > 0.5).float() == y).float().mean())

    best_acc = train_accuracy()
    best_state = {k: v.clone() for k, v in model.state_dict().items()}
    history = {"initial_accuracy": best_acc, "train_loss": []}
    for _ in range(hp.finetune_epochs):
        model.train()
        logits = model(adj, obs, mask)
        loss = F.binary_cross_entropy_with_logits(logits, y)
        if not torch.isfinite(loss):
            raise TrainingError("fine-tuning loss became non-finite")
        opt.zero_grad()
        loss.backward()
        opt.step()
        history["train_loss"].append(loss.detach().item())
        acc = train_accuracy()
        if acc > best_acc:
            best_acc = acc
            best_state = {k: v.clone() for k, v in model.state_dict().items()}

    model.load_state_dict(best_state)
    model.eval()
    history["final_accuracy"] = best_acc
    return model, history


# --------------------------------------------------------------------------
# checkpoints

CHECKPOINT_VERSION = 1


def save_predictor(model: ResiliencePredictor, path) -> None:
    torch.save(
        {
            "format_version": CHECKPOINT_VERSION,
            "kind": "predictor",
            "hyperparams": model.hp.to_dict(),
            "n_trajectories": model.n_trajectories,
            "state_dict": model.state_dict(),
        },
        path,
    )


def load_predictor(path) -> ResiliencePredictor:
    blob = torch.load(path, weights_only=False)
    if blob.get("format_version") != CHECKPOINT_VERSION or blob.get("kind") != "predictor":
        raise ConfigurationError(f"{path}: not a compatible predictor checkpoint")
    model = ResiliencePredictor(
        PredictorHyperparams(**blob["hyperparams"]), blob["n_trajectories"]
    )
    model.load_state_dict(blob["state_dict"])
    model.eval()
    return model
