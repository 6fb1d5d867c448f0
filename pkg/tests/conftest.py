import numpy as np
import pytest
import torch

torch.set_num_threads(1)

from netresgen.data import build_dataset
from netresgen.dynamics import SimConfig, mutualistic_spec
from netresgen.graphs import TopologySpec


@pytest.fixture(scope="session")
def tiny_split():
    """Small mutualistic dataset shared by the integration-flavored tests."""
    topo = TopologySpec(family="ER", n_nodes=(10, 18), p_range=(0.0, 0.3))
    return build_dataset(
        topo,
        mutualistic_spec(),
        SimConfig(t_max=50.0, dt=0.5, substeps=10),
        counts=dict(n_unlabeled=24, n_labeled=12, n_val=12, n_test=12),
        t_obs=6,
        seed=7,
    )
