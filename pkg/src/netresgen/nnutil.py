"""Shared helpers for the torch-based modules."""

from __future__ import annotations

from typing import List, Sequence, Tuple

import numpy as np
import torch
import torch.nn as nn

from netresgen.graphs import Graph


def make_mlp(dims: Sequence[int], activation=nn.ReLU, final_activation=None) -> nn.Sequential:
    layers: List[nn.Module] = []
    for i in range(len(dims) - 1):
        layers.append(nn.Linear(dims[i], dims[i + 1]))
        if i < len(dims) - 2:
            layers.append(activation())
    if final_activation is not None:
        layers.append(final_activation())
    return nn.Sequential(*layers)


def xavier_init(module: nn.Module) -> None:
    for m in module.modules():
        if isinstance(m, nn.Linear):
            nn.init.xavier_uniform_(m.weight)
            if m.bias is not None:
                nn.init.zeros_(m.bias)


def pad_adjacency(
    graphs: Sequence[Graph], dtype=torch.float32
) -> Tuple[torch.Tensor, torch.Tensor]:
    """Stack graphs into a padded (B, Nmax, Nmax) tensor plus a node mask."""
    n_max = max(g.n_nodes for g in graphs)
    b = len(graphs)
    adj = torch.zeros(b, n_max, n_max, dtype=dtype)
    mask = torch.zeros(b, n_max, dtype=torch.bool)
    for i, g in enumerate(graphs):
        n = g.n_nodes
        adj[i, :n, :n] = torch.as_tensor(np.asarray(g.adjacency), dtype=dtype)
        mask[i, :n] = True
    return adj, mask


def pad_observations(
    obs_list: Sequence[np.ndarray], n_max: int, dtype=torch.float32
) -> torch.Tensor:
    """Stack (M, N_i, T) observation tensors into (B, M, Nmax, T)."""
    m, _, t = obs_list[0].shape
    out = torch.zeros(len(obs_list), m, n_max, t, dtype=dtype)
    for i, obs in enumerate(obs_list):
        out[i, :, : obs.shape[1], :] = torch.as_tensor(obs, dtype=dtype)
    return out


def pair_mask(node_mask: torch.Tensor) -> torch.Tensor:
    """(B, N, N) mask of valid off-diagonal node pairs."""
    m = node_mask.unsqueeze(1) & node_mask.unsqueeze(2)
    eye = torch.eye(node_mask.shape[1], dtype=torch.bool, device=node_mask.device)
    return m & ~eye.unsqueeze(0)


def sinusoidal_embedding(steps: torch.Tensor, dim: int, max_steps: int) -> torch.Tensor:
    """Transformer-style sinusoidal embedding of diffusion steps, shape (B, dim)."""
    half = dim // 2
    freqs = torch.exp(
        -np.log(10000.0) * torch.arange(half, dtype=torch.float64) / max(half - 1, 1)
    )
    angles = steps.double().unsqueeze(1) / max_steps * 1000.0 * freqs.unsqueeze(0)
    emb = torch.cat([torch.sin(angles), torch.cos(angles)], dim=1)
    if dim % 2:
        emb = torch.cat([emb, torch.zeros(len(steps), 1, dtype=emb.dtype)], dim=1)
    return emb


def count_components(adjacency: np.ndarray) -> int:
    """Connected components of a hard adjacency matrix (BFS)."""
    n = adjacency.shape[0]
    seen = np.zeros(n, dtype=bool)
    comps = 0
    for start in range(n):
        if seen[start]:
            continue
        comps += 1
        stack = [start]
        seen[start] = True
        while stack:
            u = stack.pop()
            for v in np.nonzero(adjacency[u])[0]:
                if not seen[v]:
                    seen[v] = True
                    stack.append(int(v))
    return comps
