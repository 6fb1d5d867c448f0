"""Dataset assembly and the on-disk container.

A dataset directory is self-describing::

    <root>/
      manifest.json             # schema version, specs, counts, per-sample rows
      samples/<id>/graph.edges  # edge list, 'N=<n>' header
      samples/<id>/obs.f32      # observation tensor (M, N, T_obs), float32
      samples/<id>/label.txt    # present on labeled / validation / test samples
      samples/<id>/full.f64     # optional full ground-truth trajectory

Arrays are stored little-endian behind a one-line ASCII shape header, so
the files are readable from any language.  The manifest records every
simulation seed: re-simulating from provenance reproduces the stored
trajectories bit-for-bit.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence

import numpy as np

from netresgen.dynamics import (
    DynamicsSpec,
    LabelRule,
    SimConfig,
    Trajectory,
    label_resilience,
    simulate_sample,
)
from netresgen.errors import (
    ConfigurationError,
    DatasetIOError,
    DomainError,
    SimulationDivergedError,
)
from netresgen.graphs import Graph, TopologySpec, generate_topology, load_edges, save_edges

SCHEMA_VERSION = 1
LABEL_NAMES = {0: "non_resilient", 1: "resilient"}
LABEL_CODES = {v: k for k, v in LABEL_NAMES.items()}


@dataclass
class NetworkSample:
    """One network with its observed trajectory window.

    ``label`` is ``None`` on the unlabeled pool; the simulated ground truth
    for those samples lives only in the split's provenance (audit use).
    ``full`` keeps the complete trajectory where ground-truth evaluation
    needs it.
    """

    id: str
    graph: Graph
    observations: np.ndarray
    label: Optional[int] = None
    full: Optional[Trajectory] = None
    seed: Optional[int] = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.observations = np.asarray(self.observations, dtype=np.float32)
        if self.observations.ndim != 3:
            raise DomainError("observations must have shape (M, N, T_obs)")
        if self.observations.shape[1] != self.graph.n_nodes:
            raise DomainError("observation node axis does not match the graph")

    @property
    def t_obs(self) -> int:
        return self.observations.shape[2]


@dataclass
class DatasetSplit:
    labeled: List[NetworkSample]
    unlabeled: List[NetworkSample]
    validation: List[NetworkSample]
    test: List[NetworkSample]
    provenance: dict = field(default_factory=dict)

    def all_samples(self) -> List[NetworkSample]:
        return [*self.labeled, *self.unlabeled, *self.validation, *self.test]

    def audit_label(self, sample_id: str) -> Optional[int]:
        """Withheld ground-truth label of an unlabeled sample (audit only)."""
        name = self.provenance.get("audit_labels", {}).get(sample_id)
        return LABEL_CODES[name] if name is not None else None


def truncate_observations(sample: NetworkSample, t_obs: int) -> NetworkSample:
    """Slice a sample's observation window down to its first t_obs points."""
    if t_obs > sample.t_obs:
        raise DomainError(
            f"cannot truncate to {t_obs} points; sample holds {sample.t_obs}"
        )
    return NetworkSample(
        id=sample.id,
        graph=sample.graph,
        observations=sample.observations[:, :, :t_obs].copy(),
        label=sample.label,
        full=sample.full,
        seed=sample.seed,
        meta=dict(sample.meta),
    )


def truncate_split(split: DatasetSplit, t_obs: int) -> DatasetSplit:
    return DatasetSplit(
        labeled=[truncate_observations(s, t_obs) for s in split.labeled],
        unlabeled=[truncate_observations(s, t_obs) for s in split.unlabeled],
        validation=[truncate_observations(s, t_obs) for s in split.validation],
        test=[truncate_observations(s, t_obs) for s in split.test],
        provenance=dict(split.provenance),
    )


def build_dataset(
    topo_spec: TopologySpec,
    dyn_spec: DynamicsSpec,
    cfg: SimConfig,
    counts: Dict[str, int],
    t_obs: int = 6,
    seed: int = 0,
    rule: LabelRule = LabelRule(),
    keep_full: str = "eval",
    max_retries: int = 5,
) -> DatasetSplit:
    """Simulate and split a labeled/unlabeled dataset.

    ``counts`` holds ``n_unlabeled``, ``n_labeled``, ``n_val``, ``n_test``.
    Every sample is simulated on the full horizon and labeled internally;
    labels are withheld from the unlabeled pool (kept in provenance for
    audits).  ``keep_full`` controls which pools retain the complete
    trajectory: ``"none"``, ``"eval"`` (validation + test) or ``"all"``.
    """
    for key in ("n_unlabeled", "n_labeled", "n_val", "n_test"):
        if counts.get(key, 0) <= 0:
            raise ConfigurationError(f"counts[{key!r}] must be positive")
    if t_obs < 2:
        raise ConfigurationError("t_obs must be at least 2")
    if t_obs > cfg.n_points:
        raise ConfigurationError("t_obs exceeds the simulation horizon")

    pools = (
        ("unlabeled", counts["n_unlabeled"]),
        ("labeled", counts["n_labeled"]),
        ("validation", counts["n_val"]),
        ("test", counts["n_test"]),
    )
    total = sum(n for _, n in pools)
    root = np.random.SeedSequence(seed)
    sample_seeds = root.generate_state(total * (max_retries + 1)).reshape(
        total, max_retries + 1
    )

    out: Dict[str, List[NetworkSample]] = {name: [] for name, _ in pools}
    audit: Dict[str, str] = {}
    seeds_used: Dict[str, int] = {}
    label_counts = {"labeled": [0, 0], "all": [0, 0]}

    idx = 0
    for pool_name, n in pools:
        for j in range(n):
            sample_id = f"{pool_name}-{j:05d}"
            sample = None
            for attempt in range(max_retries + 1):
                s = int(sample_seeds[idx, attempt])
                try:
                    g = generate_topology(topo_spec, seed=s)
                    traj = simulate_sample(g, dyn_spec, cfg, seed=s)
                except SimulationDivergedError:
                    continue
                label = label_resilience(traj, dyn_spec.family, rule)
                keep = keep_full == "all" or (
                    keep_full == "eval" and pool_name in ("validation", "test")
                )
                sample = NetworkSample(
                    id=sample_id,
                    graph=g,
                    observations=traj.states[:, :, :t_obs].astype(np.float32),
                    label=None if pool_name == "unlabeled" else label,
                    full=traj if keep else None,
                    seed=s,
                )
                break
            if sample is None:
                raise SimulationDivergedError(
                    f"sample {sample_id} diverged for {max_retries + 1} seeds",
                    time_index=-1,
                )
            seeds_used[sample_id] = sample.seed
            audit[sample_id] = LABEL_NAMES[label]
            label_counts["all"][label] += 1
            if pool_name == "labeled":
                label_counts["labeled"][label] += 1
            out[pool_name].append(sample)
            idx += 1

    if 0 in label_counts["labeled"]:
        raise ConfigurationError(
            "labeled pool is single-class; widen the topology range or adjust "
            f"dynamics parameters (counts: {label_counts['labeled']})"
        )

    # JSON round-trip keeps the in-memory provenance identical to what a
    # reload produces (tuples become lists, keys become strings)
    provenance = {
        "schema_version": SCHEMA_VERSION,
        "seed": seed,
        "counts": dict(counts),
        "t_obs": t_obs,
        "topology": topo_spec.to_dict(),
        "dynamics": dyn_spec.to_dict(),
        "sim": cfg.to_dict(),
        "label_rule": rule.to_dict(),
        "sample_seeds": seeds_used,
        "audit_labels": audit,
        "label_counts": {
            "labeled": {LABEL_NAMES[i]: c for i, c in enumerate(label_counts["labeled"])},
            "all": {LABEL_NAMES[i]: c for i, c in enumerate(label_counts["all"])},
        },
    }
    return DatasetSplit(
        labeled=out["labeled"],
        unlabeled=out["unlabeled"],
        validation=out["validation"],
        test=out["test"],
        provenance=json.loads(json.dumps(provenance)),
    )


# --------------------------------------------------------------------------
# array container: one-line ASCII shape header + raw little-endian payload

_DTYPES = {"f32": "<f4", "f64": "<f8"}


def write_array(path, arr: np.ndarray, dtype: str) -> None:
    arr = np.ascontiguousarray(arr.astype(_DTYPES[dtype]))
    header = f"{dtype} {arr.ndim} {' '.join(str(s) for s in arr.shape)}\n"
    with open(path, "wb") as fh:
        fh.write(header.encode("ascii"))
        fh.write(arr.tobytes())


def read_array(path) -> np.ndarray:
    try:
        with open(path, "rb") as fh:
            header = fh.readline().decode("ascii").split()
            dtype, ndim = header[0], int(header[1])
            shape = tuple(int(s) for s in header[2 : 2 + ndim])
            raw = fh.read()
    except (OSError, UnicodeDecodeError, IndexError, ValueError) as exc:
        raise DatasetIOError(f"{path}: unreadable array container ({exc})") from exc
    if dtype not in _DTYPES:
        raise DatasetIOError(f"{path}: unknown dtype tag {dtype!r}")
    expected = int(np.prod(shape)) * np.dtype(_DTYPES[dtype]).itemsize
    if len(raw) != expected:
        raise DatasetIOError(
            f"{path}: payload is {len(raw)} bytes, expected {expected} (corrupt file?)"
        )
    # copy: frombuffer yields a read-only view of the raw bytes
    return np.frombuffer(raw, dtype=_DTYPES[dtype]).reshape(shape).copy()


def _write_sample(dir_path: Path, s: NetworkSample) -> None:
    dir_path.mkdir(parents=True, exist_ok=True)
    save_edges(s.graph, dir_path / "graph.edges")
    write_array(dir_path / "obs.f32", s.observations, "f32")
    if s.label is not None:
        (dir_path / "label.txt").write_text(LABEL_NAMES[s.label] + "\n")
    if s.full is not None:
        write_array(dir_path / "full.f64", s.full.states, "f64")
        write_array(dir_path / "times.f64", s.full.times, "f64")


def _read_sample(dir_path: Path, sample_id: str, row: dict) -> NetworkSample:
    try:
        g = load_edges(dir_path / "graph.edges")
    except (OSError, DomainError, ValueError) as exc:
        raise DatasetIOError(f"{dir_path}: bad graph file ({exc})") from exc
    obs = read_array(dir_path / "obs.f32")
    label = None
    label_file = dir_path / "label.txt"
    if label_file.exists():
        name = label_file.read_text().strip()
        if name not in LABEL_CODES:
            raise DatasetIOError(f"{label_file}: unknown label {name!r}")
        label = LABEL_CODES[name]
    full = None
    if (dir_path / "full.f64").exists():
        states = read_array(dir_path / "full.f64")
        times = read_array(dir_path / "times.f64")
        full = Trajectory(states, times)
    return NetworkSample(
        id=sample_id,
        graph=g,
        observations=obs,
        label=label,
        full=full,
        seed=row.get("seed"),
        meta=row.get("meta", {}),
    )


def save_dataset(split: DatasetSplit, path) -> None:
    """Persist a split; the round-trip through :func:`load_dataset` is lossless."""
    root = Path(path)
    root.mkdir(parents=True, exist_ok=True)
    rows = []
    for pool in ("labeled", "unlabeled", "validation", "test"):
        for s in getattr(split, pool):
            rows.append(
                {"id": s.id, "pool": pool, "seed": s.seed, "meta": s.meta or {}}
            )
            _write_sample(root / "samples" / s.id, s)
    manifest = {
        "schema_version": SCHEMA_VERSION,
        "provenance": split.provenance,
        "samples": rows,
    }
    (root / "manifest.json").write_text(json.dumps(manifest, indent=1, sort_keys=True))


def load_dataset(path) -> DatasetSplit:
    root = Path(path)
    manifest_path = root / "manifest.json"
    if not manifest_path.exists():
        raise DatasetIOError(f"{root}: no manifest.json")
    try:
        manifest = json.loads(manifest_path.read_text())
    except json.JSONDecodeError as exc:
        raise DatasetIOError(f"{manifest_path}: invalid JSON ({exc})") from exc
    version = manifest.get("schema_version")
    if version != SCHEMA_VERSION:
        raise DatasetIOError(
            f"{root}: schema version {version} not supported (expected {SCHEMA_VERSION})"
        )
    pools: Dict[str, List[NetworkSample]] = {
        "labeled": [],
        "unlabeled": [],
        "validation": [],
        "test": [],
    }
    for row in manifest["samples"]:
        sample = _read_sample(root / "samples" / row["id"], row["id"], row)
        pools[row["pool"]].append(sample)
    return DatasetSplit(provenance=manifest.get("provenance", {}), **pools)
