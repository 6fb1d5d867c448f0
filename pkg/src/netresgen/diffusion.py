"""Discrete denoising diffusion over edge states.

Edges carry a two-state categorical value (no-edge / edge).  The forward
process multiplies each pair's one-hot state by row-stochastic transition
matrices ``Q^s`` that interpolate between the identity and a target
marginal; the reverse process mixes per-pair Bayes posteriors under the
denoiser's clean-graph prediction.  All chain arithmetic runs in float64
numpy; only the denoiser itself is a torch module.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import List, Optional, Sequence

import numpy as np

from netresgen.errors import ConfigurationError, DomainError
from netresgen.graphs import Graph


# --------------------------------------------------------------------------
# expanded adjacency

def graph_to_expanded(g: Graph) -> np.ndarray:
    """One-hot (N, N, 2) encoding; channel 1 marks an edge."""
    a = np.asarray(g.adjacency, dtype=np.float64)
    e = np.stack([1.0 - a, a], axis=-1)
    # the diagonal is pinned to the no-edge state
    idx = np.arange(g.n_nodes)
    e[idx, idx, 0] = 1.0
    e[idx, idx, 1] = 0.0
    return e

def expanded_to_graph(e: np.ndarray) -> Graph:
    validate_expanded(e)
    a = (e[:, :, 1] > 0.5).astype(np.int8)
    np.fill_diagonal(a, 0)
    return Graph(e.shape[0], a)


def validate_expanded(e: np.ndarray) -> None:
    if e.ndim != 3 or e.shape[0] != e.shape[1] or e.shape[2] != 2:
        raise DomainError(f"expanded adjacency must be (N, N, 2), got {e.shape}")
    if not np.allclose(e.sum(axis=-1), 1.0):
        raise DomainError("each pair state must be one-hot")
    if not np.allclose(e, np.transpose(e, (1, 0, 2))):
        raise DomainError("expanded adjacency must be symmetric in (i, j)")
    if not np.allclose(e[np.arange(e.shape[0]), np.arange(e.shape[0]), 1], 0.0):
        raise DomainError("diagonal must be in the no-edge state")


# --------------------------------------------------------------------------
# noise schedule

@dataclass
class NoiseSchedule:
    """Cosine retention schedule targeting a data-matched edge marginal.

    ``Q[s]`` (s = 1..S) are the per-step 2x2 transitions
    ``alpha_s * I + (1 - alpha_s) * 1 m^T`` with ``m = (1 - rho, rho)``;
    ``Qbar[s]`` is their running product (index 0 = identity).
    """

    S: int
    target_density: float
    alphas: np.ndarray       # (S+1,), alphas[0] = 1
    alpha_bars: np.ndarray   # (S+1,), alpha_bars[0] = 1, alpha_bars[S] = 0
    Q: np.ndarray            # (S+1, 2, 2), Q[0] = I (unused)
    Qbar: np.ndarray         # (S+1, 2, 2)

    @property
    def marginal(self) -> np.ndarray:
        return np.array([1.0 - self.target_density, self.target_density])

    def to_dict(self) -> dict:
        return {
            "S": self.S,
            "target_density": self.target_density,
            "alpha_bars": self.alpha_bars.tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "NoiseSchedule":
        sched = build_schedule(d["S"], d["target_density"])
        stored = np.asarray(d["alpha_bars"])
        if not np.allclose(stored, sched.alpha_bars, atol=1e-12):
            raise ConfigurationError("stored schedule does not match its parameters")
        return sched


def build_schedule(S: int, target_density: float) -> NoiseSchedule:
    """Cosine retention from identity (s=0) to the full marginal (s=S)."""
    if S < 1:
        raise ConfigurationError("S must be >= 1")
    if not 0.0 < target_density < 1.0:
        raise ConfigurationError("target_density must lie strictly inside (0, 1)")
    eps = 0.008
    s = np.arange(S + 1, dtype=np.float64)
    f = np.cos((s / S + eps) / (1.0 + eps) * np.pi / 2.0) ** 2
    alpha_bars = f / f[0]
    alpha_bars[S] = 0.0
    alphas = np.ones(S + 1)
    alphas[1:] = alpha_bars[1:] / alpha_bars[:-1]

    m = np.array([1.0 - target_density, target_density])
    ones_m = np.ones((2, 1)) @ m[None, :]
    eye = np.eye(2)
    Q = np.stack([a * eye + (1.0 - a) * ones_m for a in alphas])
    Qbar = np.empty_like(Q)
    Qbar[0] = eye
    for step in range(1, S + 1):
        Qbar[step] = Qbar[step - 1] @ Q[step]
    return NoiseSchedule(
        S=S,
        target_density=target_density,
        alphas=alphas,
        alpha_bars=alpha_bars,
        Q=Q,
        Qbar=Qbar,
    )


# --------------------------------------------------------------------------
# forward and reverse chain math

def _sample_symmetric(p_edge: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """Draw a symmetric hard edge indicator from per-pair edge probabilities."""
    n = p_edge.shape[-1]
    u = rng.random(p_edge.shape)
    hard = (u < p_edge).astype(np.float64)
    upper = np.triu(np.ones((n, n)), k=1)
    hard = hard * upper
    hard = hard + np.swapaxes(hard, -1, -2)
    return hard


def forward_sample(
    e0: np.ndarray, s: int, schedule: NoiseSchedule, seed: int
) -> np.ndarray:
    """Sample the noisy expanded adjacency at step ``s`` given the clean one."""
    validate_expanded(e0)
    if not 1 <= s <= schedule.S:
        raise DomainError(f"s must be in [1, {schedule.S}]")
    probs = e0 @ schedule.Qbar[s]          # (N, N, 2) rows of E0 * Qbar
    rng = np.random.default_rng(seed)
    hard = _sample_symmetric(probs[:, :, 1], rng)
    e = np.stack([1.0 - hard, hard], axis=-1)
    idx = np.arange(e.shape[0])
    e[idx, idx, 0] = 1.0
    e[idx, idx, 1] = 0.0
    return e


def posterior_tables(schedule: NoiseSchedule, s: int) -> np.ndarray:
    """q(e^{s-1} | e0, e^s) for all (e0, e^s, e^{s-1}) triples, shape (2, 2, 2).

    Rows with zero normalizer (impossible clean/noisy pairings under the
    chain) are returned as all-zero rather than dividing by zero.
    """
    if s < 1 or s > schedule.S:
        raise DomainError(f"s must be in [1, {schedule.S}]")
    q_step = schedule.Q[s]          # q(e^s | e^{s-1})
    q_prev = schedule.Qbar[s - 1]   # q(e^{s-1} | e0)
    # numer[e0, es, ep] = q(es | ep) * q(ep | e0)
    numer = q_step.T[None, :, :] * q_prev[:, None, :]
    z = numer.sum(axis=-1, keepdims=True)
    with np.errstate(invalid="ignore", divide="ignore"):
        table = np.where(z > 0.0, numer / np.where(z > 0.0, z, 1.0), 0.0)
    return table


def posterior_step(
    p_hat: np.ndarray, e_s: np.ndarray, s: int, schedule: NoiseSchedule
) -> np.ndarray:
    """Per-pair categorical over the previous step's edge states.

    ``p_hat`` is the denoiser's (N, N) clean-edge probability matrix and
    ``e_s`` the current noisy expanded adjacency.  Marginalizes the Bayes
    posterior over the two clean hypotheses, weighting by ``p_hat``.
    """
    validate_expanded(e_s)
    p_hat = np.asarray(p_hat, dtype=np.float64)
    table = posterior_tables(schedule, s)
    es_idx = (e_s[:, :, 1] > 0.5).astype(np.intp)
    mix = (1.0 - p_hat)[..., None] * table[0, es_idx] + p_hat[..., None] * table[1, es_idx]
    # the diagonal is pinned to the no-edge state throughout the chain
    idx = np.arange(mix.shape[0])
    mix[idx, idx] = (1.0, 0.0)
    total = mix.sum(axis=-1, keepdims=True)
    if np.any(total <= 0.0):
        raise DomainError("posterior mixture collapsed to zero mass for some pair")
    return mix / total


def posterior_step_batch(
    p_hat: np.ndarray, edge_ind: np.ndarray, s: int, schedule: NoiseSchedule
) -> np.ndarray:
    """Vectorized posterior over arbitrary leading dimensions.

    ``p_hat`` and ``edge_ind`` share shape (..., N, N); returns (..., N, N, 2).
    """
    table = posterior_tables(schedule, s)
    es_idx = (edge_ind > 0.5).astype(np.intp)
    mix = (1.0 - p_hat)[..., None] * table[0, es_idx] + p_hat[..., None] * table[1, es_idx]
    total = mix.sum(axis=-1, keepdims=True)
    total = np.where(total > 0.0, total, 1.0)
    return mix / total


def sample_marginal_state(
    sizes: Sequence[int], schedule: NoiseSchedule, rng: np.random.Generator
) -> np.ndarray:
    """Initial reverse-chain state: padded (B, Nmax, Nmax) edge indicators."""
    n_max = max(sizes)
    p = np.full((len(sizes), n_max, n_max), schedule.target_density)
    hard = _sample_symmetric(p, rng)
    for i, n in enumerate(sizes):
        hard[i, n:, :] = 0.0
        hard[i, :, n:] = 0.0
        np.fill_diagonal(hard[i], 0.0)
    return hard
