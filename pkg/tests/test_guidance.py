import numpy as np
import pytest
import torch

from netresgen.denoiser import DenoiserHyperparams, TopologyDenoiser
from netresgen.diffusion import build_schedule, graph_to_expanded
from netresgen.dynlearn import DynLearnHyperparams, NeuralDynamics, train_dynlearn
from netresgen.errors import ConfigurationError, DomainError
from netresgen.graphs import TopologySpec, generate_topology
from netresgen.guidance import (
    GuidanceConfig,
    guidance_gradient,
    guided_posterior,
    sample_conditional,
    sample_conditional_batch,
)
from netresgen.predictor import PredictorHyperparams, ResiliencePredictor
from netresgen.nnutil import pad_adjacency

PRED_HP = PredictorHyperparams(
    d_embed=16, n_encoder_layers=1, n_heads=2, n_gcn_layers=2, attn_hidden=4
)
GCFG = GuidanceConfig(guidance_scale=100.0, stride=1, t_obs=5, dt=0.5, family="MUTUALISTIC")


def test_guided_posterior_zero_guidance_identity():
    rng = np.random.default_rng(0)
    base = rng.random((4, 4, 2))
    base = base / base.sum(-1, keepdims=True)
    grad = rng.normal(size=(4, 4, 2))
    out = guided_posterior(base, grad, 0.0)
    assert np.abs(out - base).max() < 1e-15


def test_guided_posterior_hand_arithmetic():
    base = np.array([[[0.3, 0.7]]])
    grad = np.array([[[0.2, -0.1]]])
    lam = 5.0
    out = guided_posterior(base, grad, lam)
    w = np.array([0.3 * np.exp(-lam * 0.2), 0.7 * np.exp(lam * 0.1)])
    assert np.allclose(out[0, 0], w / w.sum(), atol=1e-12)


def test_guided_posterior_constant_shift_invariance():
    base = np.array([[[0.25, 0.75]]])
    grad = np.full((1, 1, 2), 0.37)
    out = guided_posterior(base, grad, 123.0)
    assert np.allclose(out, base, atol=1e-12)


def test_guided_posterior_row_stochastic_under_extreme_tilt():
    rng = np.random.default_rng(1)
    base = rng.random((6, 6, 2))
    base = base / base.sum(-1, keepdims=True)
    grad = rng.normal(size=(6, 6, 2)) * 10.0
    out = guided_posterior(base, grad, 2000.0)
    assert np.isfinite(out).all()
    assert np.abs(out.sum(-1) - 1.0).max() < 1e-9


def test_guided_posterior_monotone_steering():
    base = np.array([[[0.5, 0.5]]])
    grad = np.array([[[0.3, -0.3]]])  # edge state has the smaller component
    masses = []
    for lam in (0.0, 0.5, 1.0, 2.0, 5.0):
        masses.append(guided_posterior(base, grad, lam)[0, 0, 1])
    assert all(b > a for a, b in zip(masses, masses[1:]))


def test_guided_posterior_lambda_continuity():
    rng = np.random.default_rng(2)
    base = rng.random((3, 3, 2))
    base = base / base.sum(-1, keepdims=True)
    grad = rng.normal(size=(3, 3, 2))
    a = guided_posterior(base, grad, 0.0)
    b = guided_posterior(base, grad, 1e-3)
    assert np.abs(a - b).max() < 5e-3


def test_guidance_config_validation():
    with pytest.raises(ConfigurationError):
        GuidanceConfig(guidance_scale=-1.0)
    with pytest.raises(ConfigurationError):
        GuidanceConfig(stride=0)


@pytest.fixture(scope="module")
def stack(tiny_split):
    torch.manual_seed(0)
    dyn_hp = DynLearnHyperparams(d_hidden=8, epochs=30, val_fraction=0.0)
    dyn_model, _ = train_dynlearn(tiny_split.labeled, 0.5, dyn_hp, seed=0)
    predictor = ResiliencePredictor(PRED_HP, n_trajectories=2)
    # break the zero head so gradients are informative
    torch.nn.init.normal_(predictor.head[-1].weight, std=0.3)
    denoiser = TopologyDenoiser(
        DenoiserHyperparams(n_layers=1, n_heads=2, d_node=16, d_edge=8, d_time=8),
        schedule_steps=10,
    )
    schedule = build_schedule(10, 0.15)
    return dyn_model, predictor, denoiser, schedule


def _edge_state(graphs):
    adj, mask = pad_adjacency(graphs)
    return torch.stack([1.0 - adj, adj], dim=-1), mask


def test_guidance_gradient_shape_and_symmetry(stack):
    dyn_model, predictor, _, _ = stack
    graphs = [
        generate_topology(TopologySpec(family="ER", n_nodes=n, p=0.3), seed=n)
        for n in (7, 9)
    ]
    state, mask = _edge_state(graphs)
    grad = guidance_gradient(predictor, dyn_model, state, mask, 1, GCFG, seed=0)
    assert grad.shape == (2, 9, 9, 2)
    assert torch.all(grad[..., 0] == 0)
    g = grad[..., 1]
    assert torch.allclose(g, g.transpose(1, 2))


def test_guidance_gradient_matches_finite_differences(stack):
    dyn_model, _, _, _ = stack
    torch.manual_seed(3)
    predictor = ResiliencePredictor(PRED_HP, n_trajectories=2).double()
    torch.nn.init.normal_(predictor.head[-1].weight, std=0.3)
    dyn64 = NeuralDynamics(dyn_model.hp).double()
    dyn64.load_state_dict(
        {k: v.double() for k, v in dyn_model.state_dict().items()}
    )
    dyn64.train_horizon = dyn_model.train_horizon
    dyn64.train_dt = dyn_model.train_dt

    g = generate_topology(TopologySpec(family="ER", n_nodes=5, p=0.5), seed=1)
    state, mask = _edge_state([g])
    state = state.double()
    grad = guidance_gradient(predictor, dyn64, state, mask, 1, GCFG, seed=0)[0]

    # finite differences on the soft edge channel with held-fixed trajectories
    from netresgen.dynlearn import generate_trajectories_batch
    import torch.nn.functional as F

    hard = (state[..., 1] > 0.5).double()
    traj = generate_trajectories_batch(
        dyn64, hard, mask, GCFG.family, GCFG.t_obs, GCFG.dt, seed=0
    )

    def loss_at(a_np):
        a = torch.as_tensor(a_np, dtype=torch.float64).unsqueeze(0)
        logits = predictor(a, traj, mask)
        return float(
            F.binary_cross_entropy_with_logits(
                logits, torch.ones(1, dtype=torch.float64), reduction="sum"
            )
        )

    base = state[0, :, :, 1].numpy()
    worst = 0.0
    for i, j in ((0, 1), (1, 3), (2, 4)):
        h = 1e-6
        ap = base.copy()
        ap[i, j] += h
        ap[j, i] += h
        am = base.copy()
        am[i, j] -= h
        am[j, i] -= h
        fd = (loss_at(ap) - loss_at(am)) / (2 * h)
        # both symmetric entries moved together: compare against the pair sum
        auto = float(grad[i, j, 1] + grad[j, i, 1])
        rel = abs(fd - auto) / max(abs(fd), 1e-12)
        worst = max(worst, rel)
    assert worst < 1e-3


def test_saturated_correct_prediction_gives_tiny_gradient(stack):
    dyn_model, _, _, _ = stack

    class Saturated(ResiliencePredictor):
        def forward(self, adjacency, observations, node_mask=None):
            # enormous positive logit, still (weakly) tied to the adjacency
            return 50.0 + 1e-3 * adjacency.sum(dim=(1, 2))

    torch.manual_seed(0)
    predictor = Saturated(PRED_HP, n_trajectories=2)
    g = generate_topology(TopologySpec(family="ER", n_nodes=6, p=0.4), seed=2)
    state, mask = _edge_state([g])
    grad = guidance_gradient(predictor, dyn_model, state, mask, 1, GCFG, seed=0)
    assert grad.abs().max() < 1e-6


def test_flipping_target_flips_gradient_direction(stack):
    dyn_model, predictor, _, _ = stack
    g = generate_topology(TopologySpec(family="ER", n_nodes=8, p=0.3), seed=3)
    state, mask = _edge_state([g])
    g1 = guidance_gradient(predictor, dyn_model, state, mask, 1, GCFG, seed=0)
    g0 = guidance_gradient(predictor, dyn_model, state, mask, 0, GCFG, seed=0)
    a, b = g1[..., 1].flatten(), g0[..., 1].flatten()
    cosine = float((a @ b) / (a.norm() * b.norm()))
    assert cosine < 0.0


def test_sample_conditional_deterministic_and_valid(stack):
    dyn_model, predictor, denoiser, schedule = stack
    cfg = GuidanceConfig(guidance_scale=50.0, stride=2, t_obs=5, dt=0.5, family="MUTUALISTIC")
    a = sample_conditional(denoiser, dyn_model, predictor, schedule, 9, 1, cfg, seed=5)
    b = sample_conditional(denoiser, dyn_model, predictor, schedule, 9, 1, cfg, seed=5)
    assert a == b
    assert a.n_nodes == 9


def test_zero_guidance_chain_matches_unconditional_chain(stack):
    from netresgen.denoiser import sample_unconditional_batch

    dyn_model, predictor, denoiser, schedule = stack
    cfg = GuidanceConfig(guidance_scale=0.0, t_obs=5, dt=0.5, family="MUTUALISTIC")
    cond = sample_conditional_batch(
        denoiser, dyn_model, predictor, schedule, [8] * 6, 1, cfg, seed=4
    )
    uncond = sample_unconditional_batch(denoiser, schedule, [8] * 6, seed=4)
    # identical RNG consumption: the zero-tilt chain is the unconditional chain
    assert all(c == u for c, u in zip(cond, uncond))
