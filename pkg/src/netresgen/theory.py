"""Mean-field dimension reduction: beta_eff, bifurcation point, theory labels.

The N-dimensional nodal dynamics collapse onto a 1-D surrogate
``dx/dt = F(x) + beta_eff * G(x, x)`` whose equilibrium structure changes
at a critical coupling ``beta_crit``.  Networks with ``beta_eff`` above
the critical value sit in the resilient phase.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from typing import Callable, Iterable, List, Sequence, Tuple

import numpy as np

from netresgen.dynamics import DynamicsSpec, RESILIENT, NON_RESILIENT
from netresgen.errors import AnalysisError, DomainError
from netresgen.graphs import Graph


def beta_eff(g: Graph) -> float:
    """Effective coupling of a topology: <s_out s_in> / <s>.

    For undirected graphs both degree vectors coincide, so this is
    ``sum(d^2) / sum(d)``.  Raises :class:`DomainError` on edgeless graphs
    (the mean degree vanishes).
    """
    d = g.degrees.astype(np.float64)
    total = d.sum()
    if total == 0:
        raise DomainError("beta_eff is undefined for an edgeless graph")
    return float(d @ d / total)


def reduced_derivative(x: np.ndarray, beta: float, spec: DynamicsSpec) -> np.ndarray:
    """F(x) + beta * G(x, x) of the 1-D reduced system, vectorized over x."""
    x = np.asarray(x, dtype=np.float64)
    if spec.family == "MUTUALISTIC":
        self_term = spec.B + x * (1.0 - x / spec.K) * (x / spec.C - 1.0)
        inter = x * x / (spec.D + (spec.E + spec.H) * x)
        return self_term + beta * inter
    if spec.family == "REGULATORY":
        xh = np.abs(x) ** spec.h
        return -spec.B * x**spec.f + beta * xh / (xh + 1.0)
    if spec.family == "NEURONAL":
        act = 1.0 / (1.0 + np.exp(np.clip(spec.mu - spec.delta * x, -60.0, 60.0)))
        return -x + beta * act
    raise DomainError(f"unknown dynamics family {spec.family!r}")


@dataclass
class Equilibrium:
    x: float
    stable: bool


def find_equilibria(
    spec: DynamicsSpec, beta: float, x_max: float | None = None, n_grid: int = 4000
) -> List[Equilibrium]:
    """Stable/unstable equilibria of the reduced system on [0, x_max].

    Sign changes of the reduced derivative on a fine grid are refined by
    bisection; an equilibrium is stable where the derivative crosses from
    positive to negative.  The origin is handled separately when it is an
    exact fixed point.
    """
    if x_max is None:
        x_max = _default_x_max(spec, beta)
    xs = np.linspace(0.0, x_max, n_grid)
    fx = reduced_derivative(xs, beta, spec)
    eqs: List[Equilibrium] = []

    if abs(fx[0]) < 1e-12:
        # exact fixed point at the origin: classify from the nearby sign
        eqs.append(Equilibrium(0.0, stable=fx[1] < 0.0))

    sign = np.sign(fx)
    for i in np.nonzero(sign[:-1] * sign[1:] < 0)[0]:
        lo, hi = xs[i], xs[i + 1]
        flo = fx[i]
        for _ in range(60):
            mid = 0.5 * (lo + hi)
            fmid = float(reduced_derivative(np.array([mid]), beta, spec)[0])
            if flo * fmid <= 0:
                hi = mid
            else:
                lo, flo = mid, fmid
        root = 0.5 * (lo + hi)
        stable = fx[i] > 0 > fx[i + 1]
        eqs.append(Equilibrium(float(root), stable=stable))
    return eqs


def _default_x_max(spec: DynamicsSpec, beta: float) -> float:
    if spec.family == "MUTUALISTIC":
        return 2.0 * spec.K + beta
    return max(4.0, 2.0 * beta + 2.0)


def _reduced_resilient(spec: DynamicsSpec, beta: float, n_grid: int = 4000) -> bool:
    """Family-specific resilience of the reduced system at coupling beta."""
    eqs = find_equilibria(spec, beta, n_grid=n_grid)
    stable = [e for e in eqs if e.stable]
    if spec.family == "MUTUALISTIC":
        # resilient phase: the low/middle equilibria have vanished
        return len(stable) == 1
    if spec.family == "REGULATORY":
        # resilient phase: a positive equilibrium beyond the trivial one
        return any(e.x > 0.05 for e in stable)
    if spec.family == "NEURONAL":
        # resilient phase: a single stable equilibrium on the high branch
        midpoint = spec.mu / spec.delta
        return len(stable) == 1 and stable[0].x > midpoint
    raise DomainError(f"unknown dynamics family {spec.family!r}")


def bifurcation_point(
    spec: DynamicsSpec,
    beta_window: Tuple[float, float] = (0.0, 20.0),
    scan_step: float = 0.1,
    tol: float = 1e-4,
    n_grid: int = 4000,
) -> float:
    """Critical coupling where the reduced system enters the resilient phase.

    Scans the window for a flip of the family resilience criterion and
    refines the boundary by bisection to ``tol``.
    """
    betas = np.arange(beta_window[0], beta_window[1] + scan_step, scan_step)
    flags = [_reduced_resilient(spec, float(b), n_grid) for b in betas]
    flip = None
    for i in range(len(flags) - 1):
        if flags[i] != flags[i + 1]:
            flip = i
            break
    if flip is None:
        raise AnalysisError(
            f"no resilience transition found for beta in {beta_window}; widen the window"
        )
    lo, hi = float(betas[flip]), float(betas[flip + 1])
    lo_flag = flags[flip]
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if _reduced_resilient(spec, mid, n_grid) == lo_flag:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def theory_predict(g: Graph, spec: DynamicsSpec, beta_crit: float | None = None) -> int:
    """Resilient iff beta_eff(g) exceeds the bifurcation point."""
    if beta_crit is None:
        beta_crit = bifurcation_point(spec)
    return RESILIENT if beta_eff(g) > beta_crit else NON_RESILIENT


def _beta_or_zero(g: Graph) -> float:
    # edgeless graphs sit at the sparse extreme of the coupling axis
    try:
        return beta_eff(g)
    except DomainError:
        return 0.0


def theory_label_unlabeled(
    labeled: Sequence, unlabeled: Sequence
) -> List[Tuple[object, int]]:
    """Label unlabeled samples whose beta_eff falls outside the labeled envelope.

    ``labeled`` and ``unlabeled`` hold objects with ``graph`` and ``label``
    attributes (e.g. :class:`netresgen.data.NetworkSample`).  Returns
    ``(sample, label)`` pairs for the newly labeled subset only; samples
    inside the ambiguous band are left untouched.
    """
    res = [_beta_or_zero(s.graph) for s in labeled if s.label == RESILIENT]
    non = [_beta_or_zero(s.graph) for s in labeled if s.label == NON_RESILIENT]
    if not res or not non:
        raise DomainError("labeled pool must contain both classes")
    beta_plus = min(res)
    beta_minus = max(non)
    if beta_plus < beta_minus:
        warnings.warn(
            "labeled set is theory-inconsistent (min resilient beta_eff < max "
            "non-resilient beta_eff); widening the ambiguous band",
            stacklevel=2,
        )
    hi = max(beta_plus, beta_minus)
    lo = min(beta_plus, beta_minus)
    out = []
    for s in unlabeled:
        b = _beta_or_zero(s.graph)
        if b > hi:
            out.append((s, RESILIENT))
        elif b < lo:
            out.append((s, NON_RESILIENT))
    return out
