import json

import numpy as np
import pytest

from netresgen.data import (
    DatasetSplit,
    NetworkSample,
    build_dataset,
    load_dataset,
    read_array,
    save_dataset,
    truncate_observations,
    write_array,
)
from netresgen.dynamics import SimConfig, mutualistic_spec, simulate_sample
from netresgen.errors import ConfigurationError, DatasetIOError, DomainError
from netresgen.graphs import TopologySpec, generate_topology


def samples_equal(a: NetworkSample, b: NetworkSample) -> bool:
    if a.id != b.id or a.label != b.label or a.seed != b.seed:
        return False
    if a.graph != b.graph:
        return False
    if not np.array_equal(a.observations, b.observations):
        return False
    if (a.full is None) != (b.full is None):
        return False
    if a.full is not None and not np.array_equal(a.full.states, b.full.states):
        return False
    return True


def splits_equal(a: DatasetSplit, b: DatasetSplit) -> bool:
    for pool in ("labeled", "unlabeled", "validation", "test"):
        xs, ys = getattr(a, pool), getattr(b, pool)
        if len(xs) != len(ys) or not all(samples_equal(x, y) for x, y in zip(xs, ys)):
            return False
    return a.provenance == b.provenance


def test_split_structure(tiny_split):
    split = tiny_split
    assert len(split.labeled) == 12
    assert len(split.unlabeled) == 24
    assert all(s.label in (0, 1) for s in split.labeled)
    assert all(s.label is None for s in split.unlabeled)
    assert all(s.label is not None for s in split.validation + split.test)
    ids = [s.id for s in split.all_samples()]
    assert len(ids) == len(set(ids))
    counts = split.provenance["label_counts"]["labeled"]
    assert counts["resilient"] > 0 and counts["non_resilient"] > 0
    # withheld ground truth is available for audits only
    assert split.audit_label(split.unlabeled[0].id) in (0, 1)
    assert all(s.t_obs == 6 for s in split.all_samples())


def test_build_dataset_determinism():
    topo = TopologySpec(family="ER", n_nodes=(8, 12), p_range=(0.0, 0.3))
    kwargs = dict(
        counts=dict(n_unlabeled=6, n_labeled=4, n_val=4, n_test=4), t_obs=4, seed=3
    )
    cfg = SimConfig(substeps=10)
    a = build_dataset(topo, mutualistic_spec(), cfg, **kwargs)
    b = build_dataset(topo, mutualistic_spec(), cfg, **kwargs)
    assert splits_equal(a, b)


def test_resimulation_from_provenance(tiny_split):
    split = tiny_split
    sample = split.validation[0]
    topo = TopologySpec.from_dict(split.provenance["topology"])
    dyn = mutualistic_spec(**{
        k: v for k, v in split.provenance["dynamics"].items()
        if k not in ("family",)
    })
    cfg = SimConfig(**split.provenance["sim"])
    seed = split.provenance["sample_seeds"][sample.id]
    g = generate_topology(topo, seed=seed)
    assert g == sample.graph
    traj = simulate_sample(g, dyn, cfg, seed=seed)
    assert np.array_equal(traj.states, sample.full.states)
    assert np.array_equal(
        traj.states[:, :, :6].astype(np.float32), sample.observations
    )


def test_truncate_observations(tiny_split):
    s = tiny_split.labeled[0]
    same = truncate_observations(s, s.t_obs)
    assert np.array_equal(same.observations, s.observations)
    cut = truncate_observations(s, 3)
    assert cut.observations.shape == (2, s.graph.n_nodes, 3)
    assert np.array_equal(cut.observations, s.observations[:, :, :3])
    assert cut.label == s.label
    with pytest.raises(DomainError):
        truncate_observations(s, s.t_obs + 1)


def test_save_load_round_trip(tiny_split, tmp_path):
    path = tmp_path / "ds"
    save_dataset(tiny_split, path)
    loaded = load_dataset(path)
    assert splits_equal(tiny_split, loaded)


def test_load_corrupt_array(tmp_path, tiny_split):
    path = tmp_path / "ds"
    save_dataset(tiny_split, path)
    target = path / "samples" / tiny_split.labeled[0].id / "obs.f32"
    raw = target.read_bytes()
    target.write_bytes(raw[: len(raw) // 2])
    with pytest.raises(DatasetIOError):
        load_dataset(path)


def test_load_missing_manifest(tmp_path):
    with pytest.raises(DatasetIOError):
        load_dataset(tmp_path / "nope")


def test_load_wrong_schema_version(tmp_path, tiny_split):
    path = tmp_path / "ds"
    save_dataset(tiny_split, path)
    manifest = json.loads((path / "manifest.json").read_text())
    manifest["schema_version"] = 999
    (path / "manifest.json").write_text(json.dumps(manifest))
    with pytest.raises(DatasetIOError):
        load_dataset(path)


def test_array_container_round_trip(tmp_path):
    rng = np.random.default_rng(0)
    a32 = rng.normal(size=(3, 5, 7)).astype(np.float32)
    a64 = rng.normal(size=(11,))
    write_array(tmp_path / "a.f32", a32, "f32")
    write_array(tmp_path / "b.f64", a64, "f64")
    assert np.array_equal(read_array(tmp_path / "a.f32"), a32)
    assert np.array_equal(read_array(tmp_path / "b.f64"), a64)
    header = (tmp_path / "a.f32").read_bytes().split(b"\n", 1)[0]
    assert header == b"f32 3 3 5 7"


def test_counts_validation():
    topo = TopologySpec(family="ER", n_nodes=8, p=0.2)
    with pytest.raises(ConfigurationError):
        build_dataset(
            topo,
            mutualistic_spec(),
            SimConfig(substeps=5),
            counts=dict(n_unlabeled=0, n_labeled=2, n_val=2, n_test=2),
        )
    with pytest.raises(ConfigurationError):
        build_dataset(
            topo,
            mutualistic_spec(),
            SimConfig(substeps=5),
            counts=dict(n_unlabeled=2, n_labeled=2, n_val=2, n_test=2),
            t_obs=1,
        )
