import json
import logging
from dataclasses import asdict, dataclass, field
from enum import Enum
from pathlib import Path
from typing import Dict, List, Tuple

import numpy as np
from joblib import Parallel, delayed

from panel.dataset import PanelDataset
from simulation.topology import Topology, draw_support
from settings import settings

logger = logging.getLogger(__name__)

TRUTH_SCHEMA_VERSION = 1
MAX_SUPPORT_REDRAWS = 200


class ObservationModel(str, Enum):
    GGM = "ggm"
    VAR = "var"


class SpuriousKind(str, Enum):
    UNIFORM = "uniform"
    NORMAL = "normal"
    MIXED = "mixed"


@dataclass(frozen=True)
class SimConfig:
    n_subjects: int = settings.sim_n_subjects
    n_nodes: int = settings.sim_n_nodes
    n_scans: int = settings.sim_n_scans
    cluster_sizes: Tuple[int, ...] = settings.sim_cluster_sizes
    cps_per_cluster: Tuple[int, ...] = settings.sim_cps_per_cluster
    topology: Topology = field(default_factory=Topology)
    obs_model: ObservationModel = ObservationModel.GGM
    ar_coeff: float = settings.sim_var_coefficient
    n_spurious: int = 0
    spurious_kind: SpuriousKind = SpuriousKind.UNIFORM
    cp_jitter: int = settings.sim_cp_jitter
    min_segment: int = settings.sim_min_segment
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "cluster_sizes", tuple(int(s) for s in self.cluster_sizes))
        object.__setattr__(self, "cps_per_cluster", tuple(int(c) for c in self.cps_per_cluster))
        object.__setattr__(self, "obs_model", ObservationModel(self.obs_model))
        object.__setattr__(self, "spurious_kind", SpuriousKind(self.spurious_kind))
        if isinstance(self.topology, dict):
            object.__setattr__(self, "topology", Topology(**self.topology))
        if sum(self.cluster_sizes) != self.n_subjects:
            raise ValueError(f"cluster sizes {self.cluster_sizes} do not sum to N={self.n_subjects}")
        if any(s < 1 for s in self.cluster_sizes):
            raise ValueError("every cluster needs at least one subject")
        if len(self.cps_per_cluster) != len(self.cluster_sizes):
            raise ValueError("cps_per_cluster needs one count per cluster")
        if self.n_nodes < 2:
            raise ValueError("at least two nodes are required")
        for count in self.cps_per_cluster:
            if count < 0 or count >= self.n_scans / 4:
                raise ValueError(f"{count} change points is not below T/4 = {self.n_scans / 4}")
            if (count + 1) * self.anchor_spacing > self.n_scans:
                raise ValueError(f"{count} change points with minimum segment {self.min_segment} and jitter "
                                 f"{self.cp_jitter} do not fit in T={self.n_scans}")
        if not 0 <= self.n_spurious <= 8:
            raise ValueError(f"n_spurious must lie in 0..8, got {self.n_spurious}")
        if not 0 <= self.ar_coeff < 1:
            raise ValueError(f"ar_coeff must lie in [0, 1) for a stable VAR, got {self.ar_coeff}")

    @property
    def n_clusters(self) -> int:
        return len(self.cluster_sizes)

    @property
    def anchor_spacing(self) -> int:
        return self.min_segment + 2 * self.cp_jitter

    @property
    def n_cluster_bits(self) -> int:
        return int(np.ceil(np.log2(self.n_clusters))) if self.n_clusters > 1 else 0

    def to_dict(self) -> dict:
        document = asdict(self)
        document["topology"] = {**asdict(self.topology), "kind": self.topology.kind.value}
        document["obs_model"] = self.obs_model.value
        document["spurious_kind"] = self.spurious_kind.value
        document["cluster_sizes"] = list(self.cluster_sizes)
        document["cps_per_cluster"] = list(self.cps_per_cluster)
        return document


@dataclass
class SimTruth:
    """
    Ground truth of a simulated panel. Change points are 1-based scans starting a new phase;
    phase_precisions[i] is (phases, V, V) for subject i.
    """
    true_cps: List[List[int]]
    phase_precisions: List[np.ndarray]
    true_labels: np.ndarray
    covariates: np.ndarray
    cluster_cps: Dict[int, List[int]] = field(default_factory=dict)

    @property
    def n_subjects(self) -> int:
        return len(self.true_cps)

    def phase_of_scans(self, subject: int, n_scans: int) -> np.ndarray:
        """Phase index of every scan of one subject"""
        return np.searchsorted(np.asarray(self.true_cps[subject]) - 1, np.arange(n_scans), side="right")

    def precisions(self, n_scans: int) -> np.ndarray:
        """(N, T, V, V) true precision matrices"""
        return np.stack([self.phase_precisions[i][self.phase_of_scans(i, n_scans)]
                         for i in range(self.n_subjects)])

    def adjacency(self, n_scans: int) -> np.ndarray:
        """(N, T, V, V) true edge support"""
        support = self.precisions(n_scans) != 0
        idx = np.arange(support.shape[-1])
        support[..., idx, idx] = False
        return support

    def save(self, directory, subject_ids) -> None:
        directory = Path(directory)
        np.savez(directory / "truth.npz", phase_precisions=np.concatenate(self.phase_precisions),
                 phase_counts=np.array([len(p) for p in self.phase_precisions]), covariates=self.covariates)
        document = {
            "schema_version": TRUTH_SCHEMA_VERSION,
            "subjects": [{"subject_id": sid, "cluster": int(label), "changepoints": cps}
                         for sid, label, cps in zip(subject_ids, self.true_labels, self.true_cps)],
            "clusters": [{"cluster": int(k), "anchors": v} for k, v in sorted(self.cluster_cps.items())],
        }
        with open(directory / "truth.json", "w") as f:
            json.dump(document, f, indent=2)

    @classmethod
    def load(cls, directory) -> "SimTruth":
        directory = Path(directory)
        with open(directory / "truth.json") as f:
            document = json.load(f)
        if document.get("schema_version") != TRUTH_SCHEMA_VERSION:
            raise ValueError(f"Unsupported truth schema {document.get('schema_version')}")
        arrays = np.load(directory / "truth.npz")
        bounds = np.cumsum(arrays["phase_counts"])[:-1]
        subjects = document["subjects"]
        return cls(true_cps=[s["changepoints"] for s in subjects],
                   phase_precisions=np.split(arrays["phase_precisions"], bounds),
                   true_labels=np.array([s["cluster"] for s in subjects], dtype=int),
                   covariates=arrays["covariates"],
                   cluster_cps={c["cluster"]: c["anchors"] for c in document["clusters"]})


def cluster_anchors(config: SimConfig, n_cps: int, rng: np.random.Generator) -> np.ndarray:
    """0-based first scans of each new phase, spaced so jittered subject points keep min_segment"""
    spacing = config.anchor_spacing
    slack = config.n_scans - (n_cps + 1) * spacing
    offsets = np.sort(rng.integers(0, slack + 1, size=n_cps))
    return spacing * np.arange(1, n_cps + 1) + offsets


def cluster_supports(config: SimConfig) -> List[List[np.ndarray]]:
    """Per cluster, one support per phase; differs from the previous phase and from other clusters' same phase"""
    supports: List[List[np.ndarray]] = []
    for c, n_cps in enumerate(config.cps_per_cluster):
        phases = []
        for phase in range(n_cps + 1):
            for attempt in range(MAX_SUPPORT_REDRAWS):
                seed = int(np.random.SeedSequence([config.seed, 2, c, phase, attempt]).generate_state(1)[0])
                candidate = draw_support(config.topology, config.n_nodes, seed)
                clashes = [other[phase] for other in supports if phase < len(other)]
                if phases:
                    clashes.append(phases[-1])
                if not any(np.array_equal(candidate, other) for other in clashes):
                    break
            else:
                raise ValueError(f"could not draw a distinct support for cluster {c + 1} phase {phase + 1}; "
                                 f"V={config.n_nodes} is too small for this topology")
            phases.append(candidate)
        supports.append(phases)
    return supports


def weighted_precision(support: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """Uniform[-1, 1] weights on the support, diagonal 1 + absolute row sum"""
    n_nodes = support.shape[0]
    upper = np.triu(support, k=1) * rng.uniform(-1.0, 1.0, size=(n_nodes, n_nodes))
    omega = upper + upper.T
    np.fill_diagonal(omega, 1.0 + np.abs(omega).sum(axis=1))
    return omega


def draw_observations(omegas: np.ndarray, phases: np.ndarray, model: ObservationModel, ar_coeff: float,
                      rng: np.random.Generator) -> np.ndarray:
    """(V, T) observations; innovations at scan t have covariance inverse(omegas[phases[t]])"""
    n_nodes = omegas.shape[-1]
    chol = np.linalg.cholesky(omegas)
    z = rng.standard_normal((len(phases), n_nodes))
    noise = np.linalg.solve(np.swapaxes(chol[phases], -1, -2), z[..., None])[..., 0]
    if model == ObservationModel.GGM:
        return noise.T
    series = np.empty_like(noise)
    series[0] = noise[0]
    for t in range(1, len(phases)):
        series[t] = ar_coeff * series[t - 1] + noise[t]
    return series.T


def cluster_covariates(config: SimConfig, cluster: int) -> np.ndarray:
    """Binary encoding of the cluster index, most significant bit first"""
    bits = config.n_cluster_bits
    return np.array([(cluster >> (bits - 1 - b)) & 1 for b in range(bits)], dtype=float)


def spurious_covariates(config: SimConfig, rng: np.random.Generator) -> np.ndarray:
    columns = []
    for j in range(config.n_spurious):
        kind = config.spurious_kind
        if kind == SpuriousKind.MIXED:
            kind = SpuriousKind.UNIFORM if j % 2 == 0 else SpuriousKind.NORMAL
        if kind == SpuriousKind.UNIFORM:
            columns.append(rng.uniform(0.0, 1.0, size=config.n_subjects))
        else:
            columns.append(rng.standard_normal(config.n_subjects))
    return np.column_stack(columns) if columns else np.zeros((config.n_subjects, 0))


def _simulate_subject(config: SimConfig, subject: int, cluster: int, anchors: np.ndarray,
                      supports: List[np.ndarray]):
    rng = np.random.default_rng([config.seed, 3, subject])
    jitter = rng.integers(-config.cp_jitter, config.cp_jitter + 1, size=len(anchors))
    starts = np.sort(anchors + jitter)
    omegas = np.stack([weighted_precision(s, rng) for s in supports])
    phases = np.searchsorted(starts, np.arange(config.n_scans), side="right")
    series = draw_observations(omegas, phases, config.obs_model, config.ar_coeff, rng)
    return [int(s) + 1 for s in starts], omegas, series


def generate(config: SimConfig, n_jobs: int = 1) -> Tuple[PanelDataset, SimTruth]:
    """Covariate-keyed clusters with piecewise-constant sparse precision matrices per subject"""
    logger.info(f"Simulating N={config.n_subjects}, V={config.n_nodes}, T={config.n_scans}, "
                f"{config.n_clusters} clusters, {config.topology.kind.value}, {config.obs_model.value}")
    anchor_rng = np.random.default_rng([config.seed, 1])
    anchors = [cluster_anchors(config, n, anchor_rng) for n in config.cps_per_cluster]
    supports = cluster_supports(config)
    labels = np.repeat(np.arange(config.n_clusters), config.cluster_sizes)

    results = Parallel(n_jobs=n_jobs)(
        delayed(_simulate_subject)(config, i, int(labels[i]), anchors[labels[i]], supports[labels[i]])
        for i in range(config.n_subjects))

    covariates = np.column_stack([
        np.stack([cluster_covariates(config, int(c)) for c in labels]).reshape(config.n_subjects, -1),
        spurious_covariates(config, np.random.default_rng([config.seed, 4])),
    ])
    panel = PanelDataset(data=np.stack([r[2] for r in results]), covariates=covariates)
    truth = SimTruth(true_cps=[r[0] for r in results],
                     phase_precisions=[r[1] for r in results],
                     true_labels=labels + 1,
                     covariates=covariates,
                     cluster_cps={c + 1: [int(a) + 1 for a in anchors[c]] for c in range(config.n_clusters)})
    return panel, truth
