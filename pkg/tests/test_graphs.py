import numpy as np
import pytest

from netresgen.errors import ConfigurationError, DomainError
from netresgen.graphs import (
    Graph,
    TopologySpec,
    degree_stats,
    generate_topology,
    graph_from_edges,
    load_edges,
    make_modular_base,
    save_edges,
    validate_graph,
)
from netresgen.nnutil import count_components

ALL_SPECS = [
    TopologySpec(family="ER", n_nodes=(8, 20), p_range=(0.0, 0.3)),
    TopologySpec(family="ER", n_nodes=15, p=0.2),
    TopologySpec(family="BA", n_nodes=(10, 20), m=3),
    TopologySpec(family="S1", n_nodes=30, beta=1.5, gamma=2.7, mean_degree=5.0),
    TopologySpec(family="SBM", n_nodes=(20, 30), communities=(2, 4)),
    TopologySpec(
        family="MODULAR_PERTURBED",
        n_nodes=60,
        base=make_modular_base(60, seed=3),
        removal_range=(0.0, 0.15),
    ),
]


@pytest.mark.parametrize("spec", ALL_SPECS, ids=lambda s: s.family)
def test_generated_graphs_satisfy_invariants(spec):
    for seed in range(5):
        g = generate_topology(spec, seed=seed)
        validate_graph(g)


@pytest.mark.parametrize("spec", ALL_SPECS, ids=lambda s: s.family)
def test_determinism(spec):
    a = generate_topology(spec, seed=123)
    b = generate_topology(spec, seed=123)
    assert a == b
    c = generate_topology(spec, seed=124)
    assert a.n_nodes != c.n_nodes or not np.array_equal(a.adjacency, c.adjacency)


def test_er_zero_probability_is_edgeless():
    g = generate_topology(TopologySpec(family="ER", n_nodes=12, p=0.0), seed=0)
    assert g.n_edges == 0


def test_er_uniform_p_range_mean_edges():
    # binomial/uniform oracle: E[#edges] = E[p] * C(N, 2); the recipe's own
    # expectation, asserted instead of the (inconsistent) published table
    spec = TopologySpec(family="ER", n_nodes=36, p_range=(0.0, 0.15))
    n_pairs = 36 * 35 / 2
    expected = 0.075 * n_pairs
    counts = [generate_topology(spec, seed=s).n_edges for s in range(300)]
    # var(E) = E[var|p] + var(E[p|...]): dominated by the p-spread term
    p = np.random.default_rng(0).uniform(0, 0.15, 20000)
    sd = np.std(p * n_pairs + 0)  # leading-order spread over p draws
    assert abs(np.mean(counts) - expected) < 3 * sd / np.sqrt(len(counts)) + 3.0


def test_er_mean_degree_matches_binomial_expectation():
    spec = TopologySpec(family="ER", n_nodes=50, p=0.1)
    means = [degree_stats(generate_topology(spec, seed=s))[1] for s in range(100)]
    # per-graph sd of mean degree = 2*sd(E)/N with E ~ Binomial(1225, 0.1)
    sd_graph = 2.0 * np.sqrt(1225 * 0.1 * 0.9) / 50.0
    tol = 3.0 * sd_graph / np.sqrt(100)
    assert abs(np.mean(means) - 4.9) < tol


def test_ba_edge_count_recurrence():
    # complete seed graph on m nodes, then m edges per new node
    g = generate_topology(TopologySpec(family="BA", n_nodes=10, m=4), seed=11)
    enumerated = int(np.triu(g.adjacency, k=1).sum())
    assert enumerated == 4 * 3 // 2 + (10 - 4) * 4
    degs = g.degrees
    assert degs.min() >= 4


def test_ba_connected():
    spec = TopologySpec(family="BA", n_nodes=25, m=1)
    for seed in range(10):
        g = generate_topology(spec, seed=seed)
        assert count_components(np.asarray(g.adjacency)) == 1


def test_s1_mean_degree_calibration():
    spec = TopologySpec(family="S1", n_nodes=40, beta=1.5, gamma=2.7, mean_degree=5.0)
    means = [degree_stats(generate_topology(spec, seed=s))[1] for s in range(200)]
    assert abs(np.mean(means) - 5.0) / 5.0 < 0.15


def test_sbm_block_probabilities():
    # paper's convention is implemented as written: inter 0.3, intra 0.05
    spec = TopologySpec(family="SBM", n_nodes=40, communities=(2, 2))
    within, cross = [], []
    for seed in range(40):
        g = generate_topology(spec, seed=seed)
        a = np.asarray(g.adjacency, dtype=float)
        within.append(a[:20, :20][np.triu_indices(20, 1)].mean())
        cross.append(a[:20, 20:].mean())
    assert abs(np.mean(within) - 0.05) < 0.02
    assert abs(np.mean(cross) - 0.3) < 0.04


def test_modular_perturbed_is_induced_subgraph():
    base = make_modular_base(40, seed=1)
    spec = TopologySpec(
        family="MODULAR_PERTURBED", n_nodes=40, base=base, removal_range=(0.1, 0.1)
    )
    g = generate_topology(spec, seed=5)
    assert g.n_nodes == 36
    # every edge of the perturbed graph exists in the base graph
    sub_degrees = g.degrees.sum()
    assert sub_degrees <= base.degrees.sum()
    validate_graph(g)


def test_degree_stats_four_cycle():
    g = graph_from_edges(4, [(0, 1), (1, 2), (2, 3), (3, 0)])
    deg, mean, density = degree_stats(g)
    assert deg.tolist() == [2, 2, 2, 2]
    assert mean == 2.0
    assert density == pytest.approx(2.0 / 3.0)


def test_degree_stats_edgeless():
    g = Graph(5, np.zeros((5, 5), dtype=np.int8))
    deg, mean, density = degree_stats(g)
    assert deg.tolist() == [0] * 5
    assert mean == 0.0 and density == 0.0


def test_invalid_family_raises():
    with pytest.raises(ConfigurationError):
        generate_topology(TopologySpec(family="WS", n_nodes=10, p=0.1), seed=0)


def test_too_few_nodes_raises():
    with pytest.raises(DomainError):
        generate_topology(TopologySpec(family="ER", n_nodes=1, p=0.1), seed=0)


def test_graph_invariant_violations_rejected():
    bad = np.zeros((4, 4), dtype=np.int8)
    bad[0, 1] = 1  # asymmetric
    with pytest.raises(DomainError):
        Graph(4, bad)
    loops = np.eye(3, dtype=np.int8)
    with pytest.raises(DomainError):
        Graph(3, loops)
    weighted = np.zeros((3, 3), dtype=float)
    weighted[0, 1] = weighted[1, 0] = 0.5
    with pytest.raises(DomainError):
        Graph(3, weighted)


def test_edge_list_round_trip(tmp_path):
    g = generate_topology(TopologySpec(family="ER", n_nodes=17, p=0.25), seed=3)
    path = tmp_path / "g.edges"
    save_edges(g, path)
    assert path.read_text().splitlines()[0] == "N=17"
    assert load_edges(path) == g
