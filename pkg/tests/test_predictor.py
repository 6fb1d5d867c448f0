import numpy as np
import pytest
import torch
import torch.nn.functional as F

from netresgen.data import NetworkSample
from netresgen.dynlearn import DynLearnHyperparams, train_dynlearn, generate_trajectories
from netresgen.errors import ConfigurationError, DomainError
from netresgen.graphs import Graph, TopologySpec, generate_topology, graph_from_edges
from netresgen.predictor import (
    PredictorHyperparams,
    ResiliencePredictor,
    embed_network,
    evaluate_predictor,
    finetune_predictor,
    laplacian_operator,
    load_predictor,
    predict_resilience,
    save_predictor,
    train_predictor,
)

TINY_HP = PredictorHyperparams(
    d_embed=16,
    n_encoder_layers=1,
    n_heads=2,
    n_gcn_layers=2,
    attn_hidden=4,
    epochs=60,
    patience=60,
)


def test_laplacian_regular_graph():
    cycle = graph_from_edges(4, [(0, 1), (1, 2), (2, 3), (3, 0)])
    a = np.asarray(cycle.adjacency, dtype=float)
    psi = laplacian_operator(a)
    assert np.allclose(psi, np.eye(4) - a / 2.0)


def test_laplacian_edgeless_is_identity():
    psi = laplacian_operator(np.zeros((5, 5)))
    assert np.allclose(psi, np.eye(5))


def test_laplacian_star_hand_values():
    star = graph_from_edges(4, [(0, 1), (0, 2), (0, 3)])
    psi = laplacian_operator(np.asarray(star.adjacency, dtype=float))
    # degrees (3,1,1,1): center-leaf entries -1/sqrt(3)
    for leaf in (1, 2, 3):
        assert psi[0, leaf] == pytest.approx(-1.0 / np.sqrt(3.0))
        assert psi[leaf, leaf] == pytest.approx(1.0)
    assert psi[1, 2] == 0.0


def _random_sample(n, m=2, t=6, seed=0, label=1):
    rng = np.random.default_rng(seed)
    g = generate_topology(TopologySpec(family="ER", n_nodes=n, p=0.3), seed=seed)
    return NetworkSample(
        id=f"s{seed}",
        graph=g,
        observations=rng.normal(size=(m, n, t)).astype(np.float32),
        label=label,
    )


def test_single_trajectory_attention():
    torch.manual_seed(0)
    model = ResiliencePredictor(TINY_HP, n_trajectories=1)
    s = _random_sample(8, m=1)
    z, e_net, alpha = embed_network(model, s.graph.adjacency, s.observations)
    assert alpha.shape == (1,)
    assert 0.0 < alpha[0] < 1.0
    assert z.shape == (8, 16)
    assert np.isfinite(e_net).all()


def test_permutation_invariance():
    torch.manual_seed(1)
    model = ResiliencePredictor(TINY_HP, n_trajectories=2)
    s = _random_sample(11, seed=5)
    perm = np.random.default_rng(2).permutation(11)
    a_p = s.graph.adjacency[np.ix_(perm, perm)]
    obs_p = s.observations[:, perm, :]
    z, e_net, _ = embed_network(model, s.graph.adjacency, s.observations)
    zp, e_net_p, _ = embed_network(model, a_p, obs_p)
    assert np.abs(z[perm] - zp).max() < 1e-5
    assert np.abs(e_net - e_net_p).max() < 1e-5
    p1 = predict_resilience(model, s.graph.adjacency, s.observations)
    p2 = predict_resilience(model, a_p, obs_p)
    assert abs(p1 - p2) < 1e-5


def test_zero_inputs_remain_finite():
    torch.manual_seed(0)
    model = ResiliencePredictor(TINY_HP, n_trajectories=2)
    for p in model.parameters():
        torch.nn.init.zeros_(p)
    n = 6
    prob = predict_resilience(model, np.zeros((n, n)), np.zeros((2, n, 4), dtype=np.float32))
    assert np.isfinite(prob)


def test_untrained_outputs_near_half():
    probs = []
    for seed in range(8):
        torch.manual_seed(seed)
        model = ResiliencePredictor(TINY_HP, n_trajectories=2)
        s = _random_sample(9, seed=seed)
        probs.append(predict_resilience(model, s.graph.adjacency, s.observations))
    assert all(abs(p - 0.5) < 0.2 for p in probs)


def test_attention_weights_in_sigmoid_range(tiny_split):
    torch.manual_seed(0)
    model = ResiliencePredictor(TINY_HP, n_trajectories=2)
    s = tiny_split.labeled[0]
    _, _, alpha = embed_network(model, s.graph.adjacency, s.observations)
    assert alpha.shape == (2,)
    assert np.all((alpha > 0) & (alpha < 1))


def test_overfits_small_labeled_pool(tiny_split):
    labeled = tiny_split.labeled
    hp = PredictorHyperparams(
        d_embed=32, n_encoder_layers=1, n_heads=2, n_gcn_layers=2,
        epochs=250, patience=250, lr=2e-3, weight_decay=0.0,
    )
    model, _ = train_predictor(None, labeled, labeled, hp, seed=0)
    rep = evaluate_predictor(model, labeled)
    assert rep.f1 > 0.95


def test_training_beats_majority_on_held_out(tiny_split):
    model, _ = train_predictor(
        None, tiny_split.labeled, tiny_split.validation, TINY_HP, seed=0
    )
    rep = evaluate_predictor(model, tiny_split.test)
    labels = [s.label for s in tiny_split.test]
    majority = max(np.mean(labels), 1 - np.mean(labels))
    assert rep.accuracy > majority


def test_gradient_wrt_soft_adjacency_matches_fd():
    torch.manual_seed(0)
    model = ResiliencePredictor(
        PredictorHyperparams(d_embed=8, n_encoder_layers=1, n_heads=2, n_gcn_layers=2),
        n_trajectories=2,
    ).double()
    # move off the zero-logit initialization so the adjacency gets gradient
    torch.nn.init.normal_(model.head[-1].weight, std=0.3)
    torch.nn.init.normal_(model.head[-1].bias, std=0.1)
    n = 5
    rng = np.random.default_rng(0)
    soft = rng.uniform(0.1, 0.9, size=(n, n))
    soft = (soft + soft.T) / 2
    np.fill_diagonal(soft, 0.0)
    obs = torch.as_tensor(rng.normal(size=(1, 2, n, 4)), dtype=torch.float64)
    target = torch.ones(1, dtype=torch.float64)

    a = torch.tensor(soft, dtype=torch.float64, requires_grad=True)

    def loss_of(adj_tensor):
        logits = model(adj_tensor.unsqueeze(0), obs)
        return F.binary_cross_entropy_with_logits(logits, target)

    loss = loss_of(a)
    loss.backward()
    grad = a.grad.numpy()

    worst = 0.0
    for i, j in ((0, 1), (2, 3), (1, 4)):
        h = 1e-6
        ap = soft.copy()
        ap[i, j] += h
        am = soft.copy()
        am[i, j] -= h
        lp = float(loss_of(torch.as_tensor(ap, dtype=torch.float64)))
        lm = float(loss_of(torch.as_tensor(am, dtype=torch.float64)))
        fd = (lp - lm) / (2 * h)
        rel = abs(fd - grad[i, j]) / max(abs(fd), 1e-12)
        worst = max(worst, rel)
    assert worst < 1e-3


def test_threshold_invariant_to_monotone_logit_reparameterization():
    torch.manual_seed(0)
    model = ResiliencePredictor(TINY_HP, n_trajectories=2)
    s = _random_sample(9, seed=3)
    a = torch.as_tensor(np.asarray(s.graph.adjacency), dtype=torch.float32).unsqueeze(0)
    obs = torch.as_tensor(s.observations).unsqueeze(0)
    with torch.no_grad():
        logit = model(a, obs)[0]
    decision = torch.sigmoid(logit) > 0.5
    for scale in (0.5, 2.0, 10.0):
        assert (torch.sigmoid(scale * logit) > 0.5) == decision
    assert (logit > 0) == decision


def test_single_class_pool_rejected(tiny_split):
    ones = [s for s in tiny_split.labeled if s.label == 1]
    with pytest.raises(ConfigurationError):
        train_predictor(None, ones, tiny_split.validation, TINY_HP, seed=0)


def test_wrong_trajectory_count_rejected():
    torch.manual_seed(0)
    model = ResiliencePredictor(TINY_HP, n_trajectories=2)
    s = _random_sample(6, m=1)
    with pytest.raises(DomainError):
        predict_resilience(model, s.graph.adjacency, s.observations)


def test_finetune_improves_on_learned_trajectories(tiny_split):
    labeled = tiny_split.labeled
    dyn_hp = DynLearnHyperparams(d_hidden=8, epochs=40, val_fraction=0.0)
    dyn_model, _ = train_dynlearn(labeled, 0.5, dyn_hp, seed=0)
    model, _ = train_predictor(None, labeled, tiny_split.validation, TINY_HP, seed=0)

    regen = [
        NetworkSample(
            id=s.id,
            graph=s.graph,
            observations=generate_trajectories(dyn_model, s.graph, "MUTUALISTIC", 6, 0.5),
            label=s.label,
        )
        for s in labeled
    ]
    before = evaluate_predictor(model, regen).accuracy
    tuned, hist = finetune_predictor(
        model, labeled, dyn_model, "MUTUALISTIC", 0.5, TINY_HP, seed=0
    )
    after = evaluate_predictor(tuned, regen).accuracy
    assert after >= before
    assert hist["final_accuracy"] >= hist["initial_accuracy"]


def test_checkpoint_round_trip(tmp_path):
    torch.manual_seed(0)
    model = ResiliencePredictor(TINY_HP, n_trajectories=2)
    save_predictor(model, tmp_path / "p.pt")
    loaded = load_predictor(tmp_path / "p.pt")
    s = _random_sample(7, seed=1)
    assert predict_resilience(model, s.graph.adjacency, s.observations) == pytest.approx(
        predict_resilience(loaded, s.graph.adjacency, s.observations)
    )
