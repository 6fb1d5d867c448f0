"""Graph-transformer denoiser for the topology diffusion chain.

Node embeddings attend over all node pairs with an additive edge-feature
term in the attention logits; edge embeddings are updated from those
logits.  Structural (cycle membership) and spectral (component count,
low Laplacian eigenvectors) node features compensate for what message
passing cannot see on noisy graphs.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, asdict
from typing import List, Optional, Sequence, Tuple

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from netresgen.diffusion import (
    NoiseSchedule,
    posterior_step_batch,
    sample_marginal_state,
    validate_expanded,
)
from netresgen.errors import ConfigurationError, TrainingError
from netresgen.graphs import Graph
from netresgen.nnutil import (
    count_components,
    make_mlp,
    pad_adjacency,
    sinusoidal_embedding,
    xavier_init,
)

FEATURE_DIM = 6  # 3 cycle counts, 2 eigenvector magnitudes, component fraction


# --------------------------------------------------------------------------
# node features

@dataclass
class GraphFeatures:
    """Structural and spectral node features of one (noisy) topology.

    ``cycle_counts[:, k]`` is the number of simple (k+3)-cycles through each
    node for k = 0, 1, 2.  ``eigenvectors`` holds the eigenvectors of the two
    smallest nonzero Laplacian eigenvalues, signs fixed so the first entry
    above tolerance is positive; columns are zero-padded when the spectrum
    has fewer than two nonzero eigenvalues.
    """

    cycle_counts: np.ndarray
    n_components: int
    eigenvectors: np.ndarray


def node_cycle_counts(adjacency: np.ndarray) -> np.ndarray:
    """Exact per-node counts of 3-, 4- and 5-cycles from adjacency powers."""
    a = np.asarray(adjacency, dtype=np.float64)
    d = a.sum(axis=1)
    a2 = a @ a
    a3 = a2 @ a
    a4 = a3 @ a
    a5 = a4 @ a
    da3 = np.diagonal(a3)
    k3 = da3 / 2.0
    k4 = (np.diagonal(a4) - d * (d - 1.0) - a @ d) / 2.0
    k5 = (np.diagonal(a5) - 2.0 * d * da3 - 2.0 * (a * a2) @ d - a @ da3 + 5.0 * da3) / 2.0
    return np.stack([k3, k4, k5], axis=1)


def _fix_sign(vec: np.ndarray, tol: float = 1e-6) -> np.ndarray:
    for x in vec:
        if abs(x) > tol:
            return vec if x > 0 else -vec
    return vec


def spectral_features(adjacency: np.ndarray, tol: float = 1e-6) -> Tuple[int, np.ndarray]:
    """Component count and the two first nonzero-eigenvalue Laplacian eigenvectors."""
    a = np.asarray(adjacency, dtype=np.float64)
    n = a.shape[0]
    lap = np.diag(a.sum(axis=1)) - a
    evals, evecs = np.linalg.eigh(lap)
    nonzero = np.nonzero(evals > tol)[0]
    out = np.zeros((n, 2))
    for col, idx in enumerate(nonzero[:2]):
        out[:, col] = _fix_sign(evecs[:, idx], tol)
    return count_components(a), out


def compute_node_features(e_noisy: np.ndarray) -> GraphFeatures:
    """Features of a hard expanded adjacency (the denoiser's side input)."""
    validate_expanded(e_noisy)
    adj = (e_noisy[:, :, 1] > 0.5).astype(np.float64)
    np.fill_diagonal(adj, 0.0)
    n_comp, eig = spectral_features(adj)
    return GraphFeatures(
        cycle_counts=node_cycle_counts(adj),
        n_components=n_comp,
        eigenvectors=eig,
    )


def batched_feature_tensor(adj: torch.Tensor, node_mask: torch.Tensor) -> torch.Tensor:
    """Model-input features for a padded batch of hard adjacencies.

    Cycle counts enter through log1p; eigenvector entries through their
    magnitude, which makes the feature map exactly permutation-equivariant
    (the sign convention of :func:`spectral_features` is not).
    """
    b, n, _ = adj.shape
    a = adj.double()
    d = a.sum(-1)
    a2 = a @ a
    a3 = a2 @ a
    a4 = a3 @ a
    a5 = a4 @ a
    da3 = torch.diagonal(a3, dim1=1, dim2=2)
    k3 = da3 / 2.0
    k4 = (torch.diagonal(a4, dim1=1, dim2=2) - d * (d - 1.0) - (a @ d.unsqueeze(-1)).squeeze(-1)) / 2.0
    k5 = (
        torch.diagonal(a5, dim1=1, dim2=2)
        - 2.0 * d * da3
        - 2.0 * ((a * a2) @ d.unsqueeze(-1)).squeeze(-1)
        - (a @ da3.unsqueeze(-1)).squeeze(-1)
        + 5.0 * da3
    ) / 2.0
    cycles = torch.log1p(torch.stack([k3, k4, k5], dim=-1))

    lap = torch.diag_embed(d) - a
    evals, evecs = torch.linalg.eigh(lap)
    n_valid = node_mask.sum(-1)
    tol = 1e-6
    n_zero = (evals < tol).sum(-1)
    n_pad = n - n_valid
    comp_frac = ((n_zero - n_pad).clamp(min=1).double() / n_valid.double()).view(b, 1, 1)
    eig_feats = torch.zeros(b, n, 2, dtype=torch.float64, device=adj.device)
    for i in range(b):
        nz = torch.nonzero(evals[i] >= tol).flatten()
        for col, idx in enumerate(nz[:2]):
            eig_feats[i, :, col] = evecs[i, :, idx].abs()

    feats = torch.cat([cycles, eig_feats, comp_frac.expand(b, n, 1)], dim=-1)
    return (feats * node_mask.unsqueeze(-1)).float()


# --------------------------------------------------------------------------
# model

class GraphTransformerLayer(nn.Module):
    def __init__(self, d_node: int, d_edge: int, n_heads: int):
        super().__init__()
        if d_node % n_heads:
            raise ConfigurationError("d_node must be divisible by n_heads")
        self.n_heads = n_heads
        self.d_head = d_node // n_heads
        self.query = nn.Linear(d_node, d_node)
        self.key = nn.Linear(d_node, d_node)
        self.value = nn.Linear(d_node, d_node)
        self.edge_logit = nn.Linear(d_edge, n_heads)
        self.out_node = nn.Linear(d_node, d_node)
        self.out_edge = nn.Linear(n_heads, d_edge)
        self.norm_node1 = nn.LayerNorm(d_node)
        self.norm_node2 = nn.LayerNorm(d_node)
        self.norm_edge1 = nn.LayerNorm(d_edge)
        self.norm_edge2 = nn.LayerNorm(d_edge)
        self.ffn_node = make_mlp([d_node, 2 * d_node, d_node])
        self.ffn_edge = make_mlp([d_edge, 2 * d_edge, d_edge])

    def forward(self, h, e, node_mask):
        b, n, _ = h.shape
        q = self.query(h).view(b, n, self.n_heads, self.d_head)
        k = self.key(h).view(b, n, self.n_heads, self.d_head)
        v = self.value(h).view(b, n, self.n_heads, self.d_head)
        logits = torch.einsum("bihd,bjhd->bijh", q, k) / math.sqrt(self.d_head)
        logits = logits + self.edge_logit(e)
        blocked = ~node_mask[:, None, :, None]
        attn = logits.masked_fill(blocked, -1e9).softmax(dim=2)
        agg = torch.einsum("bijh,bjhd->bihd", attn, v).reshape(b, n, -1)
        h = self.norm_node1(h + self.out_node(agg))
        h = self.norm_node2(h + self.ffn_node(h))
        e = self.norm_edge1(e + self.out_edge(logits))
        e = self.norm_edge2(e + self.ffn_edge(e))
        return h, e


@dataclass
class DenoiserHyperparams:
    n_layers: int = 4
    n_heads: int = 8
    d_node: int = 64
    d_edge: int = 32
    d_time: int = 16
    lr: float = 3e-4
    epochs: int = 200
    batch_size: int = 64
    val_fraction: float = 0.1
    patience: int = 50

    def to_dict(self) -> dict:
        return asdict(self)


class TopologyDenoiser(nn.Module):
    """Predicts clean-edge probabilities from a noisy graph and its step."""

    def __init__(self, hp: DenoiserHyperparams, schedule_steps: int):
        super().__init__()
        self.hp = hp
        self.schedule_steps = schedule_steps
        self.node_in = nn.Linear(FEATURE_DIM + hp.d_time, hp.d_node)
        self.edge_in = nn.Linear(2, hp.d_edge)
        self.layers = nn.ModuleList(
            GraphTransformerLayer(hp.d_node, hp.d_edge, hp.n_heads)
            for _ in range(hp.n_layers)
        )
        self.edge_out = make_mlp([hp.d_edge, hp.d_edge, 1])
        xavier_init(self)
        # zero logits at init: the untrained model is an honest coin flip
        last = self.edge_out[-1]
        nn.init.zeros_(last.weight)
        nn.init.zeros_(last.bias)

    def forward(
        self,
        edge_onehot: torch.Tensor,
        steps: torch.Tensor,
        node_mask: torch.Tensor,
        features: Optional[torch.Tensor] = None,
    ) -> torch.Tensor:
        """Symmetric edge logits (B, N, N); padding and diagonal carry no meaning."""
        dtype = self.node_in.weight.dtype
        if features is None:
            features = batched_feature_tensor(edge_onehot[..., 1], node_mask)
        temb = sinusoidal_embedding(steps, self.hp.d_time, self.schedule_steps)
        temb = temb.to(dtype).unsqueeze(1).expand(-1, edge_onehot.shape[1], -1)
        h = self.node_in(torch.cat([features.to(dtype), temb], dim=-1))
        e = self.edge_in(edge_onehot.to(dtype))
        for layer in self.layers:
            h, e = layer(h, e, node_mask)
        logit = self.edge_out(e).squeeze(-1)
        return 0.5 * (logit + logit.transpose(1, 2))


def denoise_predict(
    model: TopologyDenoiser,
    e_noisy: np.ndarray,
    s: int,
    features: Optional[GraphFeatures] = None,
) -> np.ndarray:
    """Clean-edge probability matrix for one noisy graph (diagonal is ignored)."""
    validate_expanded(e_noisy)
    n = e_noisy.shape[0]
    onehot = torch.as_tensor(e_noisy, dtype=torch.float32).unsqueeze(0)
    mask = torch.ones(1, n, dtype=torch.bool)
    feats = None
    if features is not None:
        feats = torch.cat(
            [
                torch.log1p(torch.as_tensor(features.cycle_counts, dtype=torch.float64)),
                torch.as_tensor(np.abs(features.eigenvectors), dtype=torch.float64),
                torch.full((n, 1), features.n_components / n, dtype=torch.float64),
            ],
            dim=-1,
        ).float().unsqueeze(0)
    with torch.no_grad():
        logits = model(onehot, torch.tensor([s]), mask, feats)
        probs = torch.sigmoid(logits)[0].numpy().astype(np.float64)
    if not np.isfinite(probs).all():
        raise TrainingError("denoiser produced non-finite probabilities")
    return probs


# --------------------------------------------------------------------------
# training

def _noisy_batch(
    clean: np.ndarray,
    sizes: np.ndarray,
    steps: np.ndarray,
    schedule: NoiseSchedule,
    rng: np.random.Generator,
) -> np.ndarray:
    """Forward-noise a padded batch of clean edge indicators at given steps."""
    stay = schedule.Qbar[steps, 1, 1][:, None, None]
    appear = schedule.Qbar[steps, 0, 1][:, None, None]
    p_edge = clean * stay + (1.0 - clean) * appear
    u = rng.random(p_edge.shape)
    n_max = clean.shape[-1]
    upper = np.triu(np.ones((n_max, n_max)), k=1)
    hard = (u < p_edge) * upper
    hard = hard + np.swapaxes(hard, 1, 2)
    for i, n in enumerate(sizes):
        hard[i, n:, :] = 0.0
        hard[i, :, n:] = 0.0
    return hard.astype(np.float64)


def _to_onehot(hard: np.ndarray) -> torch.Tensor:
    t = torch.as_tensor(hard, dtype=torch.float32)
    return torch.stack([1.0 - t, t], dim=-1)


def _pair_loss(
    logits: torch.Tensor, clean: torch.Tensor, node_mask: torch.Tensor
) -> torch.Tensor:
    """Mean binary cross-entropy over valid upper-triangle pairs."""
    n = logits.shape[1]
    upper = torch.triu(torch.ones(n, n, dtype=torch.bool, device=logits.device), diagonal=1)
    valid = node_mask[:, :, None] & node_mask[:, None, :] & upper[None]
    return F.binary_cross_entropy_with_logits(logits[valid], clean[valid])


def train_denoiser(
    graphs: Sequence[Graph],
    schedule: NoiseSchedule,
    hp: DenoiserHyperparams,
    seed: int,
    log_every: int = 0,
) -> Tuple[TopologyDenoiser, dict]:
    """Fit the denoiser on clean topologies; keeps the best-validation weights."""
    if len(graphs) < 1:
        raise ConfigurationError("need at least one training graph")
    torch.manual_seed(seed)
    rng = np.random.default_rng(seed)
    model = TopologyDenoiser(hp, schedule.S)
    opt = torch.optim.Adam(model.parameters(), lr=hp.lr)

    order = rng.permutation(len(graphs))
    n_val = min(max(int(hp.val_fraction * len(graphs)), 1), max(len(graphs) - 1, 1))
    val_idx, train_idx = order[:n_val], order[n_val:]
    if len(train_idx) == 0:
        train_idx = val_idx

    def batch_tensors(idx: np.ndarray, steps: np.ndarray, noise_rng):
        batch_graphs = [graphs[i] for i in idx]
        adj, mask = pad_adjacency(batch_graphs)
        clean = adj.numpy().astype(np.float64)
        sizes = np.array([g.n_nodes for g in batch_graphs])
        noisy = _noisy_batch(clean, sizes, steps, schedule, noise_rng)
        return adj, mask, _to_onehot(noisy), torch.as_tensor(steps)

    # one frozen noisy realization of the validation set stabilizes early stopping
    val_steps = rng.integers(1, schedule.S + 1, size=len(val_idx))
    val_adj, val_mask, val_onehot, val_s = batch_tensors(
        val_idx, val_steps, np.random.default_rng(seed + 1)
    )
    val_feats = batched_feature_tensor(val_onehot[..., 1], val_mask)

    best_val = math.inf
    best_state = {k: v.clone() for k, v in model.state_dict().items()}
    since_best = 0
    history = {"train_loss": [], "val_loss": []}

    for epoch in range(hp.epochs):
        model.train()
        perm = rng.permutation(train_idx)
        losses = []
        for start in range(0, len(perm), hp.batch_size):
            idx = perm[start : start + hp.batch_size]
            steps = rng.integers(1, schedule.S + 1, size=len(idx))
            adj, mask, onehot, s_t = batch_tensors(idx, steps, rng)
            logits = model(onehot, s_t, mask)
            loss = _pair_loss(logits, adj, mask)
            if not torch.isfinite(loss):
                raise TrainingError(f"denoiser loss became non-finite at epoch {epoch}")
            opt.zero_grad()
            loss.backward()
            opt.step()
            losses.append(loss.detach().item())
        model.eval()
        with torch.no_grad():
            val_loss = float(
                _pair_loss(model(val_onehot, val_s, val_mask, val_feats), val_adj, val_mask)
            )
        history["train_loss"].append(float(np.mean(losses)))
        history["val_loss"].append(val_loss)
        if log_every and epoch % log_every == 0:
            print(f"[denoiser] epoch {epoch}  train {np.mean(losses):.4f}  val {val_loss:.4f}")
        if val_loss < best_val:
            best_val = val_loss
            best_state = {k: v.clone() for k, v in model.state_dict().items()}
            since_best = 0
        else:
            since_best += 1
            if since_best >= hp.patience:
                break

    model.load_state_dict(best_state)
    model.eval()
    history["best_val_loss"] = best_val
    return model, history


# --------------------------------------------------------------------------
# sampling

def sample_unconditional_batch(
    model: TopologyDenoiser,
    schedule: NoiseSchedule,
    sizes: Sequence[int],
    seed: int,
) -> List[Graph]:
    """Run the reverse chain for a batch of target sizes; returns hard graphs."""
    rng = np.random.default_rng(seed)
    sizes = list(sizes)
    n_max = max(sizes)
    hard = sample_marginal_state(sizes, schedule, rng)
    mask = torch.zeros(len(sizes), n_max, dtype=torch.bool)
    for i, n in enumerate(sizes):
        mask[i, :n] = True
    model.eval()
    for s in range(schedule.S, 0, -1):
        onehot = _to_onehot(hard)
        with torch.no_grad():
            logits = model(onehot, torch.full((len(sizes),), s), mask)
            p_hat = torch.sigmoid(logits).double().numpy()
        post = posterior_step_batch(p_hat, hard, s, schedule)
        u = rng.random(hard.shape)
        upper = np.triu(np.ones((n_max, n_max)), k=1)
        nxt = (u < post[..., 1]) * upper
        nxt = nxt + np.swapaxes(nxt, 1, 2)
        for i, n in enumerate(sizes):
            nxt[i, n:, :] = 0.0
            nxt[i, :, n:] = 0.0
        hard = nxt.astype(np.float64)
    return [
        Graph(n, hard[i, :n, :n].astype(np.int8)) for i, n in enumerate(sizes)
    ]


def sample_unconditional(
    model: TopologyDenoiser, schedule: NoiseSchedule, n_nodes: int, seed: int
) -> Graph:
    return sample_unconditional_batch(model, schedule, [n_nodes], seed)[0]


# --------------------------------------------------------------------------
# checkpoints

CHECKPOINT_VERSION = 1


def save_denoiser(model: TopologyDenoiser, schedule: NoiseSchedule, path) -> None:
    torch.save(
        {
            "format_version": CHECKPOINT_VERSION,
            "kind": "denoiser",
            "hyperparams": model.hp.to_dict(),
            "schedule": schedule.to_dict(),
            "state_dict": model.state_dict(),
        },
        path,
    )


def load_denoiser(path) -> Tuple[TopologyDenoiser, NoiseSchedule]:
    blob = torch.load(path, weights_only=False)
    if blob.get("format_version") != CHECKPOINT_VERSION or blob.get("kind") != "denoiser":
        raise ConfigurationError(f"{path}: not a compatible denoiser checkpoint")
    schedule = NoiseSchedule.from_dict(blob["schedule"])
    model = TopologyDenoiser(DenoiserHyperparams(**blob["hyperparams"]), schedule.S)
    model.load_state_dict(blob["state_dict"])
    model.eval()
    return model, schedule
