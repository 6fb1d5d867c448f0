"""Complex-network resilience prediction with generative data augmentation.

The package couples three learned components -- a discrete diffusion model
over network topologies, a neural-ODE module that imitates nodal-state
dynamics, and a resilience classifier -- and uses classifier-guided
generation to augment sparse labeled datasets of simulated networks.
"""

from netresgen.graphs import Graph, TopologySpec, generate_topology, degree_stats
from netresgen.dynamics import (
    DynamicsSpec,
    SimConfig,
    Trajectory,
    LabelRule,
    eval_derivative,
    integrate_rk4,
    simulate_sample,
    label_resilience,
)
from netresgen.data import (
    NetworkSample,
    DatasetSplit,
    build_dataset,
    truncate_observations,
    save_dataset,
    load_dataset,
)
from netresgen.theory import (
    beta_eff,
    bifurcation_point,
    theory_predict,
    theory_label_unlabeled,
)
from netresgen.metrics import MetricReport, compute_metrics

__version__ = "0.1.0"

__all__ = [
    "Graph",
    "TopologySpec",
    "generate_topology",
    "degree_stats",
    "DynamicsSpec",
    "SimConfig",
    "Trajectory",
    "LabelRule",
    "eval_derivative",
    "integrate_rk4",
    "simulate_sample",
    "label_resilience",
    "NetworkSample",
    "DatasetSplit",
    "build_dataset",
    "truncate_observations",
    "save_dataset",
    "load_dataset",
    "beta_eff",
    "bifurcation_point",
    "theory_predict",
    "theory_label_unlabeled",
    "MetricReport",
    "compute_metrics",
]
