"""Ground-truth nodal-state dynamics: coupled ODE families, RK4, labeling.

Three dynamics families drive the simulated datasets:

* mutualistic -- species abundance with migration, logistic growth,
  an Allee threshold and saturating pairwise mutualism;
* regulatory -- Michaelis-Menten gene regulation with Hill activation;
* neuronal -- Wilson-Cowan activity with sigmoidal neighbor input.

Each network is integrated with a fixed-step fourth-order Runge-Kutta
stepper and labeled resilient / non-resilient from the terminal state of
its trajectories.
"""

from __future__ import annotations

from dataclasses import dataclass, asdict, field
from typing import Optional

import numpy as np

from netresgen.errors import ConfigurationError, DomainError, SimulationDivergedError
from netresgen.graphs import Graph

DYNAMICS_FAMILIES = ("MUTUALISTIC", "REGULATORY", "NEURONAL")

RESILIENT = 1
NON_RESILIENT = 0


@dataclass
class DynamicsSpec:
    """ODE family plus its parameters.

    Defaults are canonical values from the resilience literature,
    calibrated so that Erdos-Renyi graphs over the configured edge
    probability range produce both labels.
    """

    family: str
    # mutualistic
    B: float = 0.1
    K: float = 5.0
    C: float = 1.0
    D: float = 5.0
    E: float = 0.9
    H: float = 0.1
    # regulatory (reuses B as the degradation rate, default 1.0 there)
    f: int = 1
    h: float = 2.0
    # neuronal
    mu: float = 3.5
    delta: float = 2.0

    def __post_init__(self):
        if self.family not in DYNAMICS_FAMILIES:
            raise ConfigurationError(f"unknown dynamics family {self.family!r}")
        if self.family == "MUTUALISTIC" and not self.K > self.C > 0:
            raise ConfigurationError("mutualistic parameters require K > C > 0")
        if self.family == "REGULATORY":
            if self.f not in (1, 2):
                raise ConfigurationError("regulatory exponent f must be 1 or 2")
            if self.h < 1:
                raise ConfigurationError("Hill coefficient h must be >= 1")
        if self.family == "NEURONAL" and self.delta <= 0:
            raise ConfigurationError("neuronal slope delta must be positive")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "DynamicsSpec":
        return cls(**d)


def mutualistic_spec(**overrides) -> DynamicsSpec:
    """Mutualistic defaults; overrides are applied on top.

    The Allee threshold C=0.6 places the bifurcation of the mean-field
    reduction near beta_eff ~ 3.6, which is mid-range for Erdos-Renyi
    graphs with p in [0, 0.15] at a few dozen nodes, so both labels occur
    with near-equal frequency there.
    """
    params = dict(B=0.1, K=5.0, C=0.6, D=5.0, E=0.9, H=0.1)
    params.update(overrides)
    return DynamicsSpec(family="MUTUALISTIC", **params)


def regulatory_spec(**overrides) -> DynamicsSpec:
    params = dict(B=1.0, f=1, h=2.0)
    params.update(overrides)
    return DynamicsSpec(family="REGULATORY", **params)


def neuronal_spec(**overrides) -> DynamicsSpec:
    params = dict(mu=3.5, delta=2.0)
    params.update(overrides)
    return DynamicsSpec(family="NEURONAL", **params)


@dataclass
class SimConfig:
    """Integration horizon and grid: ``t_max`` time units at step ``dt``.

    ``substeps`` inserts fixed RK4 substeps between consecutive output
    points (the observation grid is unchanged).  The mutualistic family is
    stiff near its high equilibrium once node degrees reach ~5, where a
    single dt=0.5 step is outside the RK4 stability region; dataset recipes
    therefore use substeps > 1.
    """

    t_max: float = 50.0
    dt: float = 0.5
    substeps: int = 1

    def __post_init__(self):
        steps = self.t_max / self.dt
        if not np.isclose(steps, round(steps)) or steps <= 0:
            raise ConfigurationError("t_max / dt must be a positive integer")
        if self.substeps < 1:
            raise ConfigurationError("substeps must be >= 1")

    @property
    def n_steps(self) -> int:
        return int(round(self.t_max / self.dt))

    @property
    def n_points(self) -> int:
        return self.n_steps + 1

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "SimConfig":
        return cls(**d)


@dataclass
class Trajectory:
    """A stack of M trajectories over the same nodes and time grid.

    ``states`` has shape ``(M, N, T)`` with the initial condition at index
    ``t = 0``; ``times`` holds the T grid points.
    """

    states: np.ndarray
    times: np.ndarray

    def __post_init__(self):
        self.states = np.asarray(self.states, dtype=np.float64)
        self.times = np.asarray(self.times, dtype=np.float64)
        if self.states.ndim != 3:
            raise DomainError("trajectory states must have shape (M, N, T)")
        if self.states.shape[2] != self.times.shape[0]:
            raise DomainError("states and times disagree on T")
        if not np.isfinite(self.states).all():
            raise DomainError("trajectory contains non-finite states")

    @property
    def n_trajectories(self) -> int:
        return self.states.shape[0]

    @property
    def terminal_means(self) -> np.ndarray:
        """Average nodal state of each trajectory at the final time point."""
        return self.states[:, :, -1].mean(axis=1)


@dataclass
class LabelRule:
    """Thresholds of the resilience labeling rules."""

    r: float = 3.5
    m: float = 3.0
    eps: float = 0.05

    def __post_init__(self):
        if self.r <= 0 or self.m <= 0 or self.eps <= 0:
            raise ConfigurationError("label thresholds must be positive")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "LabelRule":
        return cls(**d)


def eval_derivative(x: np.ndarray, g: Graph, spec: DynamicsSpec) -> np.ndarray:
    """dx/dt for all nodes: self-dynamics plus neighbor interactions."""
    x = np.asarray(x, dtype=np.float64)
    a = g.adjacency
    if spec.family == "MUTUALISTIC":
        self_term = spec.B + x * (1.0 - x / spec.K) * (x / spec.C - 1.0)
        denom = spec.D + spec.E * x[:, None] + spec.H * x[None, :]
        pair = (x[:, None] * x[None, :]) / denom
        return self_term + (a * pair).sum(axis=1)
    if spec.family == "REGULATORY":
        self_term = -spec.B * x**spec.f
        xh = np.abs(x) ** spec.h
        return self_term + a @ (xh / (xh + 1.0))
    if spec.family == "NEURONAL":
        act = 1.0 / (1.0 + np.exp(np.clip(spec.mu - spec.delta * x, -60.0, 60.0)))
        return -x + a @ act
    raise ConfigurationError(f"unknown dynamics family {spec.family!r}")


def integrate_rk4(
    x0: np.ndarray, g: Graph, spec: DynamicsSpec, cfg: SimConfig
) -> np.ndarray:
    """Classic fixed-step RK4; returns states of shape ``(N, T)`` with x0 first."""
    x0 = np.asarray(x0, dtype=np.float64)
    if not np.isfinite(x0).all():
        raise DomainError("initial state contains non-finite values")
    n_points = cfg.n_points
    out = np.empty((g.n_nodes, n_points), dtype=np.float64)
    out[:, 0] = x0
    x = x0.copy()
    dt = cfg.dt / cfg.substeps
    with np.errstate(over="ignore", invalid="ignore"):
        for step in range(1, n_points):
            for _ in range(cfg.substeps):
                k1 = eval_derivative(x, g, spec)
                k2 = eval_derivative(x + 0.5 * dt * k1, g, spec)
                k3 = eval_derivative(x + 0.5 * dt * k2, g, spec)
                k4 = eval_derivative(x + dt * k3, g, spec)
                x = x + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
            if not np.isfinite(x).all():
                raise SimulationDivergedError(
                    f"integration diverged at step {step}", time_index=step
                )
            out[:, step] = x
    return out


def initial_states(
    family: str, n_nodes: int, seed: Optional[int] = None
) -> np.ndarray:
    """Per-family initial conditions, stacked as ``(M, N)``.

    Mutualistic and neuronal networks are probed from a high (x=5) and a
    low (x=0) start; regulatory networks from one random start in [1, 5]
    to avoid the trivial fixed point.
    """
    if family in ("MUTUALISTIC", "NEURONAL"):
        return np.stack([np.full(n_nodes, 5.0), np.zeros(n_nodes)])
    if family == "REGULATORY":
        rng = np.random.default_rng(seed)
        return rng.uniform(1.0, 5.0, size=(1, n_nodes))
    raise ConfigurationError(f"unknown dynamics family {family!r}")


def trajectories_per_family(family: str) -> int:
    return 2 if family in ("MUTUALISTIC", "NEURONAL") else 1


def simulate_sample(
    g: Graph, spec: DynamicsSpec, cfg: SimConfig, seed: int
) -> Trajectory:
    """Simulate all of a sample's trajectories on the full horizon."""
    inits = initial_states(spec.family, g.n_nodes, seed)
    states = np.stack([integrate_rk4(x0, g, spec, cfg) for x0 in inits])
    times = np.arange(cfg.n_points) * cfg.dt
    return Trajectory(states, times)


def label_resilience(
    traj: Trajectory, family: str, rule: LabelRule = LabelRule()
) -> int:
    """Assign RESILIENT / NON_RESILIENT from terminal trajectory means."""
    means = traj.terminal_means
    expected_m = trajectories_per_family(family)
    if traj.n_trajectories != expected_m:
        raise DomainError(
            f"{family} expects {expected_m} trajectories, got {traj.n_trajectories}"
        )
    if family == "MUTUALISTIC":
        return NON_RESILIENT if abs(means[0] - means[1]) > rule.r else RESILIENT
    if family == "REGULATORY":
        return RESILIENT if means[0] > rule.eps else NON_RESILIENT
    if family == "NEURONAL":
        separated = abs(means[0] - means[1]) > rule.r
        both_low = means[0] < rule.m and means[1] < rule.m
        return NON_RESILIENT if (separated or both_low) else RESILIENT
    raise ConfigurationError(f"unknown dynamics family {family!r}")
