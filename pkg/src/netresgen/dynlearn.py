"""Neural-ODE dynamics learning on fixed topologies.

The learned vector field is ``dx/dt = decode(GCN(encode(x)))``: nodal
states are lifted into a latent space, a graph-convolution stack couples
neighbors, and the decoded latent derivative is integrated in state space
with the same fixed-step RK4 grid as the simulator.  Rollouts past the
trained observation window are refused: beyond it the field has never
seen data and its outputs carry no guarantee.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, asdict
from typing import List, Optional, Sequence, Tuple

import numpy as np
import torch
import torch.nn as nn

from netresgen.dynamics import initial_states, trajectories_per_family
from netresgen.errors import (
    ConfigurationError,
    DomainError,
    SimulationDivergedError,
    TrainingError,
)
from netresgen.graphs import Graph
from netresgen.nnutil import make_mlp, xavier_init

@dataclass
class DynLearnHyperparams:
    d_hidden: int = 32
    n_gcn_layers: int = 2
    lr: float = 5e-3
    epochs: int = 400
    patience: int = 80
    val_fraction: float = 0.1
    smooth_eps: float = 1e-8
    plain_l1: bool = False

    def to_dict(self) -> dict:
        return asdict(self)


def kipf_normalize(adj: torch.Tensor) -> torch.Tensor:
    """Self-loop-augmented symmetric normalization, dense (..., N, N)."""
    n = adj.shape[-1]
    eye = torch.eye(n, dtype=adj.dtype, device=adj.device)
    a = adj + eye
    deg = a.sum(-1)
    inv_sqrt = torch.where(deg > 0, deg.clamp(min=1e-12) ** -0.5, torch.zeros_like(deg))
    return a * inv_sqrt.unsqueeze(-1) * inv_sqrt.unsqueeze(-2)


class NeuralDynamics(nn.Module):
    """Encoder / latent graph convolution / decoder vector field."""

    def __init__(self, hp: DynLearnHyperparams):
        super().__init__()
        self.hp = hp
        d = hp.d_hidden
        self.encoder = make_mlp([1, d, d], activation=nn.Tanh)
        self.gcn_weights = nn.ModuleList(
            nn.Linear(d, d) for _ in range(hp.n_gcn_layers)
        )
        self.decoder = make_mlp([d, d, 1], activation=nn.Tanh)
        xavier_init(self)
        # training metadata, set by train_dynlearn
        self.train_horizon: Optional[int] = None
        self.train_dt: Optional[float] = None

    def vector_field(self, x: torch.Tensor, adj_norm: torch.Tensor) -> torch.Tensor:
        """dx/dt for states x of shape (..., N); adj_norm is (N, N) or (B, N, N)."""
        z = self.encoder(x.unsqueeze(-1))
        for linear in self.gcn_weights:
            if adj_norm.is_sparse:
                shape = z.shape
                flat = z.movedim(-2, 0).reshape(shape[-2], -1)
                mixed = torch.sparse.mm(adj_norm, flat)
                z = mixed.reshape(shape[-2], *shape[:-2], shape[-1]).movedim(0, -2)
            else:
                a = adj_norm
                while a.dim() < z.dim():
                    a = a.unsqueeze(-3)
                z = a @ z
            z = torch.tanh(linear(z))
        return self.decoder(z).squeeze(-1)

    def rollout(
        self, x0: torch.Tensor, adj_norm: torch.Tensor, n_points: int, dt: float
    ) -> torch.Tensor:
        """RK4 rollout; returns (..., N, n_points) including x0 at index 0."""
        states = [x0]
        x = x0
        for _ in range(n_points - 1):
            k1 = self.vector_field(x, adj_norm)
            k2 = self.vector_field(x + 0.5 * dt * k1, adj_norm)
            k3 = self.vector_field(x + 0.5 * dt * k2, adj_norm)
            k4 = self.vector_field(x + dt * k3, adj_norm)
            x = x + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
            states.append(x)
        return torch.stack(states, dim=-1)


def _check_horizon(model: NeuralDynamics, n_points: int, allow_extrapolation: bool):
    if model.train_horizon is None:
        return
    if n_points > model.train_horizon and not allow_extrapolation:
        raise DomainError(
            f"requested horizon of {n_points} points exceeds the trained window "
            f"of {model.train_horizon}; extrapolation is refused by default"
        )


def simulate_latent(
    model: NeuralDynamics,
    g: Graph,
    x0: np.ndarray,
    horizon: int,
    dt: float,
    allow_extrapolation: bool = False,
) -> np.ndarray:
    """Simulate one trajectory (N, horizon) on the observation grid."""
    _check_horizon(model, horizon, allow_extrapolation)
    dtype = next(model.parameters()).dtype
    adj = torch.as_tensor(np.asarray(g.adjacency), dtype=dtype)
    adj_norm = kipf_normalize(adj)
    x0_t = torch.as_tensor(np.asarray(x0), dtype=dtype)
    with torch.no_grad():
        traj = model.rollout(x0_t, adj_norm, horizon, dt)
    out = traj.numpy()
    if not np.isfinite(out).all():
        raise SimulationDivergedError("learned dynamics diverged", time_index=-1)
    return out


def generate_trajectories(
    model: NeuralDynamics,
    g: Graph,
    family: str,
    t_obs: int,
    dt: float,
    seed: int = 0,
    allow_extrapolation: bool = False,
) -> np.ndarray:
    """Observation-compatible (M, N, t_obs) tensor from the learned field."""
    inits = initial_states(family, g.n_nodes, seed)
    rows = [
        simulate_latent(model, g, x0, t_obs, dt, allow_extrapolation) for x0 in inits
    ]
    return np.stack(rows).astype(np.float32)


def generate_trajectories_batch(
    model: NeuralDynamics,
    adj: torch.Tensor,
    node_mask: torch.Tensor,
    family: str,
    t_obs: int,
    dt: float,
    seed: int = 0,
    allow_extrapolation: bool = False,
) -> torch.Tensor:
    """Batched rollout on padded hard adjacencies: returns (B, M, N, t_obs)."""
    _check_horizon(model, t_obs, allow_extrapolation)
    b, n, _ = adj.shape
    m = trajectories_per_family(family)
    dtype = next(model.parameters()).dtype
    if family == "REGULATORY":
        rng = np.random.default_rng(seed)
        x0 = torch.as_tensor(
            rng.uniform(1.0, 5.0, size=(b, m, n)), dtype=dtype
        )
    else:
        x0 = torch.stack(
            [torch.full((b, n), 5.0, dtype=dtype), torch.zeros(b, n, dtype=dtype)],
            dim=1,
        )
    adj_norm = kipf_normalize(adj.to(dtype)).unsqueeze(1)  # broadcast over M
    with torch.no_grad():
        traj = model.rollout(x0, adj_norm, t_obs, dt)
    return traj * node_mask.to(dtype)[:, None, :, None]


# --------------------------------------------------------------------------
# training

def _union_graph(samples: Sequence) -> Tuple[torch.Tensor, torch.Tensor, List[int]]:
    """Block-diagonal sparse normalized adjacency over all samples.

    Returns ``(adj_norm sparse, observations (N_total, M, T), offsets)``.
    """
    offsets = []
    total = 0
    for s in samples:
        offsets.append(total)
        total += s.graph.n_nodes
    rows, cols, vals = [], [], []
    for s, off in zip(samples, offsets):
        adj = np.asarray(s.graph.adjacency, dtype=np.float64)
        n = s.graph.n_nodes
        a = adj + np.eye(n)
        deg = a.sum(1)
        inv = np.where(deg > 0, deg ** -0.5, 0.0)
        norm = a * inv[:, None] * inv[None, :]
        r, c = np.nonzero(norm)
        rows.append(r + off)
        cols.append(c + off)
        vals.append(norm[r, c])
    indices = torch.as_tensor(np.stack([np.concatenate(rows), np.concatenate(cols)]))
    values = torch.as_tensor(np.concatenate(vals), dtype=torch.float32)
    with torch.sparse.check_sparse_tensor_invariants():
        adj_norm = torch.sparse_coo_tensor(indices, values, (total, total)).coalesce()
    obs = torch.cat(
        [torch.as_tensor(s.observations, dtype=torch.float32).permute(1, 0, 2) for s in samples],
        dim=0,
    )  # (N_total, M, T)
    return adj_norm, obs, offsets


def smoothed_l1(residual: torch.Tensor, eps: float, plain: bool) -> torch.Tensor:
    if plain:
        return residual.abs().mean()
    return torch.sqrt(residual * residual + eps).mean()


def train_dynlearn(
    samples: Sequence,
    dt: float,
    hp: DynLearnHyperparams,
    seed: int,
    log_every: int = 0,
) -> Tuple[NeuralDynamics, dict]:
    """Fit the field to observed trajectories (labeled and/or unlabeled pool).

    The loss is the (smoothed) mean absolute error between RK4 rollouts from
    each observed initial state and the stored observations.
    """
    if len(samples) < 1:
        raise ConfigurationError("need at least one trajectory sample")
    t_obs = samples[0].t_obs
    torch.manual_seed(seed)
    rng = np.random.default_rng(seed)
    model = NeuralDynamics(hp)

    order = rng.permutation(len(samples))
    n_val = int(hp.val_fraction * len(samples))
    val_samples = [samples[i] for i in order[:n_val]]
    train_samples = [samples[i] for i in order[n_val:]] or list(samples)

    adj_norm, obs, _ = _union_graph(train_samples)
    x0 = obs[:, :, 0].transpose(0, 1)  # (M, N_total)
    target = obs.permute(1, 0, 2)      # (M, N_total, T)
    if val_samples:
        v_adj, v_obs, _ = _union_graph(val_samples)
        v_x0 = v_obs[:, :, 0].transpose(0, 1)
        v_target = v_obs.permute(1, 0, 2)

    opt = torch.optim.Adam(model.parameters(), lr=hp.lr)
    best_val = math.inf
    best_state = {k: v.clone() for k, v in model.state_dict().items()}
    since_best = 0
    history = {"train_loss": [], "val_loss": [], "n_samples": len(train_samples)}

    for epoch in range(hp.epochs):
        model.train()
        sim = model.rollout(x0, adj_norm, t_obs, dt)
        loss = smoothed_l1(sim - target, hp.smooth_eps, hp.plain_l1)
        if not torch.isfinite(loss):
            raise TrainingError(f"dynamics loss became non-finite at epoch {epoch}")
        opt.zero_grad()
        loss.backward()
        opt.step()
        history["train_loss"].append(loss.detach().item())

        if val_samples:
            model.eval()
            with torch.no_grad():
                v_sim = model.rollout(v_x0, v_adj, t_obs, dt)
                val_loss = float(smoothed_l1(v_sim - v_target, hp.smooth_eps, hp.plain_l1))
        else:
            val_loss = loss.detach().item()
        history["val_loss"].append(val_loss)
        if log_every and epoch % log_every == 0:
            print(f"[dynlearn] epoch {epoch}  train {loss.detach().item():.4f}  val {val_loss:.4f}")
        if val_loss < best_val - 1e-6:
            best_val = val_loss
            best_state = {k: v.clone() for k, v in model.state_dict().items()}
            since_best = 0
        else:
            since_best += 1
            if since_best >= hp.patience:
                break

    model.load_state_dict(best_state)
    model.eval()
    model.train_horizon = t_obs
    model.train_dt = dt
    history["best_val_loss"] = best_val
    return model, history


# --------------------------------------------------------------------------
# checkpoints

CHECKPOINT_VERSION = 1


def save_dynlearn(model: NeuralDynamics, path) -> None:
    torch.save(
        {
            "format_version": CHECKPOINT_VERSION,
            "kind": "dynlearn",
            "hyperparams": model.hp.to_dict(),
            "train_horizon": model.train_horizon,
            "train_dt": model.train_dt,
            "state_dict": model.state_dict(),
        },
        path,
    )


def load_dynlearn(path) -> NeuralDynamics:
    blob = torch.load(path, weights_only=False)
    if blob.get("format_version") != CHECKPOINT_VERSION or blob.get("kind") != "dynlearn":
        raise ConfigurationError(f"{path}: not a compatible dynamics checkpoint")
    model = NeuralDynamics(DynLearnHyperparams(**blob["hyperparams"]))
    model.load_state_dict(blob["state_dict"])
    model.train_horizon = blob["train_horizon"]
    model.train_dt = blob["train_dt"]
    model.eval()
    return model
