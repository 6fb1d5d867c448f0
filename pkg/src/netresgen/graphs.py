"""Random-network generators for the five topology families in the datasets.

All generators are pure functions of ``(spec, seed)``: the same pair always
yields the same adjacency matrix, so dataset builds are reproducible and
generation parallelizes without coordination.
"""

from __future__ import annotations

from dataclasses import dataclass, field, asdict
from typing import Optional, Sequence, Tuple

import numpy as np

from netresgen.errors import ConfigurationError, DomainError

FAMILIES = ("ER", "BA", "S1", "SBM", "MODULAR_PERTURBED")


@dataclass
class Graph:
    """An undirected, unweighted network.

    Attributes
    ----------
    n_nodes : int
        Number of nodes ``N``.
    adjacency : np.ndarray
        ``N x N`` symmetric 0/1 matrix with zero diagonal.
    """

    n_nodes: int
    adjacency: np.ndarray

    def __post_init__(self):
        self.adjacency = np.asarray(self.adjacency)
        validate_graph(self)

    @property
    def degrees(self) -> np.ndarray:
        return self.adjacency.sum(axis=1).astype(np.int64)

    @property
    def n_edges(self) -> int:
        return int(self.adjacency.sum()) // 2

    def __eq__(self, other) -> bool:
        if not isinstance(other, Graph):
            return NotImplemented
        return self.n_nodes == other.n_nodes and np.array_equal(
            self.adjacency, other.adjacency
        )


def validate_graph(g: Graph) -> None:
    """Raise :class:`DomainError` unless ``g`` satisfies the Graph invariants."""
    a = g.adjacency
    if a.shape != (g.n_nodes, g.n_nodes):
        raise DomainError(f"adjacency shape {a.shape} does not match n_nodes={g.n_nodes}")
    vals = np.unique(a)
    if not np.isin(vals, (0, 1)).all():
        raise DomainError("adjacency entries must be exactly 0 or 1")
    if not np.array_equal(a, a.T):
        raise DomainError("adjacency must be symmetric")
    if np.any(np.diagonal(a) != 0):
        raise DomainError("adjacency must have a zero diagonal (no self-loops)")


def graph_from_edges(n_nodes: int, edges: Sequence[Tuple[int, int]]) -> Graph:
    a = np.zeros((n_nodes, n_nodes), dtype=np.int8)
    for u, v in edges:
        a[u, v] = 1
        a[v, u] = 1
    np.fill_diagonal(a, 0)
    return Graph(n_nodes, a)


@dataclass
class TopologySpec:
    """Parameters of one topology family.

    ``n_nodes`` is either a fixed count or an inclusive ``(lo, hi)`` range
    sampled uniformly per graph.  Family-specific fields:

    * ER -- ``p`` fixed edge probability, or ``p_range`` sampled uniformly
      per graph.
    * BA -- ``m`` edges attached by each incoming node; the seed graph is a
      complete graph on ``m`` nodes.
    * S1 -- hyperbolic geometric model with inverse temperature ``beta``,
      hidden-degree exponent ``gamma`` and target ``mean_degree``.
    * SBM -- ``communities`` inclusive range, ``p_intra`` / ``p_inter``
      block probabilities.
    * MODULAR_PERTURBED -- ``base`` graph plus a node-removal fraction drawn
      from ``removal_range``.
    """

    family: str
    n_nodes: int | Tuple[int, int] = 30
    p: Optional[float] = None
    p_range: Optional[Tuple[float, float]] = None
    m: int = 4
    beta: float = 1.5
    gamma: float = 2.7
    mean_degree: float = 5.0
    communities: Tuple[int, int] = (2, 5)
    p_intra: float = 0.05
    p_inter: float = 0.3
    base: Optional[Graph] = None
    removal_range: Tuple[float, float] = (0.0, 0.15)

    def validate(self) -> None:
        if self.family not in FAMILIES:
            raise ConfigurationError(f"unknown topology family {self.family!r}")
        lo, hi = self._node_range()
        if lo < 2:
            raise DomainError("n_nodes must be at least 2")
        if hi < lo:
            raise ConfigurationError("n_nodes range must satisfy lo <= hi")
        if self.family == "ER":
            if self.p is None and self.p_range is None:
                raise ConfigurationError("ER spec needs p or p_range")
            probs = (self.p, self.p) if self.p is not None else self.p_range
            if not (0.0 <= probs[0] <= 1.0 and 0.0 <= probs[1] <= 1.0):
                raise ConfigurationError("edge probabilities must lie in [0, 1]")
        if self.family == "BA" and self.m < 1:
            raise ConfigurationError("BA attachment count m must be >= 1")
        if self.family == "S1":
            if self.gamma <= 2.0:
                raise ConfigurationError("S1 exponent gamma must exceed 2")
            if self.mean_degree <= 0:
                raise ConfigurationError("S1 mean degree must be positive")
        if self.family == "SBM":
            for p in (self.p_intra, self.p_inter):
                if not 0.0 <= p <= 1.0:
                    raise ConfigurationError("SBM probabilities must lie in [0, 1]")
        if self.family == "MODULAR_PERTURBED" and self.base is None:
            raise ConfigurationError("MODULAR_PERTURBED spec needs a base graph")

    def _node_range(self) -> Tuple[int, int]:
        if isinstance(self.n_nodes, (tuple, list)):
            return int(self.n_nodes[0]), int(self.n_nodes[1])
        return int(self.n_nodes), int(self.n_nodes)

    def to_dict(self) -> dict:
        d = asdict(self)
        if self.base is not None:
            d["base"] = {
                "n_nodes": self.base.n_nodes,
                "edges": [[int(u), int(v)] for u, v in zip(*np.nonzero(np.triu(self.base.adjacency)))],
            }
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "TopologySpec":
        d = dict(d)
        if d.get("base") is not None:
            b = d["base"]
            d["base"] = graph_from_edges(b["n_nodes"], [tuple(e) for e in b["edges"]])
        for key in ("n_nodes", "p_range", "communities", "removal_range"):
            if isinstance(d.get(key), list):
                d[key] = tuple(d[key])
        return cls(**d)


def generate_topology(spec: TopologySpec, seed: int) -> Graph:
    """Draw one graph from ``spec``; all randomness is fixed by ``seed``."""
    spec.validate()
    rng = np.random.default_rng(seed)
    lo, hi = spec._node_range()
    n = int(rng.integers(lo, hi + 1)) if hi > lo else lo

    if spec.family == "ER":
        p = spec.p if spec.p is not None else rng.uniform(*spec.p_range)
        return _erdos_renyi(n, p, rng)
    if spec.family == "BA":
        return _barabasi_albert(n, spec.m, rng)
    if spec.family == "S1":
        return _s1_hyperbolic(n, spec.beta, spec.gamma, spec.mean_degree, rng)
    if spec.family == "SBM":
        k = int(rng.integers(spec.communities[0], spec.communities[1] + 1))
        return _stochastic_block(n, k, spec.p_intra, spec.p_inter, rng)
    if spec.family == "MODULAR_PERTURBED":
        frac = rng.uniform(*spec.removal_range)
        return _perturb_modular(spec.base, frac, rng)
    raise ConfigurationError(f"unknown topology family {spec.family!r}")


def _symmetrize_upper(upper: np.ndarray) -> np.ndarray:
    a = np.triu(upper, k=1)
    return (a + a.T).astype(np.int8)


def _erdos_renyi(n: int, p: float, rng: np.random.Generator) -> Graph:
    u = (rng.random((n, n)) < p).astype(np.int8)
    return Graph(n, _symmetrize_upper(u))


def _barabasi_albert(n: int, m: int, rng: np.random.Generator) -> Graph:
    if n <= m:
        raise DomainError(f"BA model needs n_nodes > m (got n={n}, m={m})")
    a = np.zeros((n, n), dtype=np.int8)
    # seed graph: complete graph on the first m nodes
    a[:m, :m] = 1
    np.fill_diagonal(a, 0)
    # each endpoint appears once per incident edge; sampling uniformly from
    # this list is degree-proportional attachment
    repeated: list[int] = [i for i in range(m) for _ in range(max(m - 1, 1))]
    for new in range(m, n):
        targets: set[int] = set()
        while len(targets) < m:
            targets.add(repeated[rng.integers(len(repeated))])
        for t in targets:
            a[new, t] = 1
            a[t, new] = 1
            repeated.append(t)
        repeated.extend([new] * m)
    return Graph(n, a)


def _s1_hyperbolic(
    n: int, beta: float, gamma: float, mean_degree: float, rng: np.random.Generator
) -> Graph:
    theta = rng.uniform(0.0, 2.0 * np.pi, size=n)
    # hidden degrees from a Pareto law with E[kappa] = mean_degree
    kappa0 = mean_degree * (gamma - 2.0) / (gamma - 1.0)
    kappa = kappa0 * rng.pareto(gamma - 1.0, size=n) + kappa0
    radii = 2.0 * np.log(n) - 2.0 * np.log(kappa / kappa0)

    dtheta = np.abs(theta[:, None] - theta[None, :])
    dtheta = np.minimum(dtheta, 2.0 * np.pi - dtheta)
    with np.errstate(divide="ignore"):
        dist = radii[:, None] + radii[None, :] + 2.0 * np.log(np.sin(dtheta / 2.0))
    np.fill_diagonal(dist, np.inf)

    def expected_degree(r_cut: float) -> float:
        p = 1.0 / (1.0 + np.exp(np.clip(beta * (dist - r_cut) / 2.0, -50.0, 50.0)))
        return float(p.sum() / n)

    # calibrate the connection radius to the target mean degree by bisection
    finite = dist[np.isfinite(dist)]
    lo_r, hi_r = float(finite.min()) - 50.0, float(finite.max()) + 50.0
    for _ in range(80):
        mid = 0.5 * (lo_r + hi_r)
        if expected_degree(mid) < mean_degree:
            lo_r = mid
        else:
            hi_r = mid
    r_cut = 0.5 * (lo_r + hi_r)
    p = 1.0 / (1.0 + np.exp(np.clip(beta * (dist - r_cut) / 2.0, -50.0, 50.0)))
    u = (rng.random((n, n)) < p).astype(np.int8)
    return Graph(n, _symmetrize_upper(u))


def _stochastic_block(
    n: int, k: int, p_intra: float, p_inter: float, rng: np.random.Generator
) -> Graph:
    sizes = np.full(k, n // k, dtype=int)
    sizes[: n % k] += 1
    membership = np.repeat(np.arange(k), sizes)
    same = membership[:, None] == membership[None, :]
    prob = np.where(same, p_intra, p_inter)
    u = (rng.random((n, n)) < prob).astype(np.int8)
    return Graph(n, _symmetrize_upper(u))


def _perturb_modular(base: Graph, removal_fraction: float, rng: np.random.Generator) -> Graph:
    n = base.n_nodes
    n_remove = int(round(removal_fraction * n))
    if n - n_remove < 2:
        raise DomainError("node removal would leave fewer than 2 nodes")
    keep = np.sort(rng.choice(n, size=n - n_remove, replace=False))
    sub = base.adjacency[np.ix_(keep, keep)]
    return Graph(len(keep), sub.astype(np.int8))


def make_modular_base(
    n_nodes: int = 60,
    p_intra: float = 0.25,
    p_inter: float = 0.02,
    seed: int = 0,
) -> Graph:
    """Two dense hemispheres joined by sparse cross-links.

    A synthetic stand-in for an empirical two-module connectome; used as the
    ``base`` of MODULAR_PERTURBED specs.
    """
    rng = np.random.default_rng(seed)
    g = _stochastic_block(n_nodes, 2, p_intra, p_inter, rng)
    return g


def degree_stats(g: Graph) -> Tuple[np.ndarray, float, float]:
    """Return ``(degree sequence, mean degree, density)`` of ``g``."""
    validate_graph(g)
    deg = g.degrees
    n = g.n_nodes
    mean = float(deg.mean())
    density = float(deg.sum() / (n * (n - 1)))
    return deg, mean, density


def save_edges(g: Graph, path) -> None:
    """Write ``g`` as an edge-list text file: header ``N=<n>``, then ``u v`` lines."""
    lines = [f"N={g.n_nodes}"]
    rows, cols = np.nonzero(np.triu(g.adjacency, k=1))
    lines.extend(f"{u} {v}" for u, v in zip(rows.tolist(), cols.tolist()))
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def load_edges(path) -> Graph:
    with open(path) as fh:
        header = fh.readline().strip()
        if not header.startswith("N="):
            raise DomainError(f"{path}: expected 'N=<n>' header, got {header!r}")
        n = int(header[2:])
        edges = []
        for line in fh:
            line = line.strip()
            if not line:
                continue
            u, v = map(int, line.split())
            edges.append((u, v))
    return graph_from_edges(n, edges)
