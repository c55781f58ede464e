import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence

import numpy as np
from joblib import Parallel, delayed

from changepoint.cluster_changepoints import cluster_changepoints
from changepoint.tv_segment import select_lambda_u, tv_segment
from panel.dataset import ClusterAssignment, DynamicNetworkSet
from settings import settings

logger = logging.getLogger(__name__)

REPORT_SCHEMA_VERSION = 1
EDGE_REPORT = "edge_changepoints.json"


@dataclass
class ChangePointReport:
    """
    Subject-level and cluster-level change points (1-based scans) of one set of networks.
    piecewise is the (N, T, E) total-variation approximation; subject_lambdas the lambda_u
    used per subject and lambda_u_used their median.
    """
    per_subject: List[List[int]]
    piecewise: np.ndarray
    lambda_u_used: float
    subject_lambdas: List[float] = field(default_factory=list)
    cluster_level: Dict[int, List[int]] = field(default_factory=dict)
    per_edge: Optional[Dict[int, List[List[int]]]] = None
    subject_ids: List[str] = field(default_factory=list)

    def with_clusters(self, assignment: ClusterAssignment, freq_threshold: float = settings.cp_freq_threshold,
                      window: int = settings.cp_merge_window) -> "ChangePointReport":
        self.cluster_level = cluster_changepoints(self.per_subject, assignment, freq_threshold, window)
        return self

    def to_dict(self) -> dict:
        ids = self.subject_ids or [f"S{i + 1:03d}" for i in range(len(self.per_subject))]
        document = {
            "schema_version": REPORT_SCHEMA_VERSION,
            "lambda_u_used": self.lambda_u_used,
            "subjects": [{"subject_id": sid, "changepoints": cps, "lambda_u": lam}
                         for sid, cps, lam in zip(ids, self.per_subject, self.subject_lambdas)],
            "clusters": [{"cluster": int(k), "changepoints": v} for k, v in sorted(self.cluster_level.items())],
        }
        return document

    def edge_document(self) -> dict:
        """Per-edge change points, one list per subject for every 1-based edge"""
        return {"schema_version": REPORT_SCHEMA_VERSION,
                "edges": [{"edge": int(k), "changepoints": v} for k, v in sorted((self.per_edge or {}).items())]}

    def save(self, path) -> None:
        path = Path(path)
        with open(path, "w") as f:
            json.dump(self.to_dict(), f, indent=2)
        np.save(path.with_suffix(".npy"), self.piecewise)
        if self.per_edge is not None:
            with open(path.parent / EDGE_REPORT, "w") as f:
                json.dump(self.edge_document(), f, indent=2)

    @classmethod
    def load(cls, path) -> "ChangePointReport":
        path = Path(path)
        with open(path) as f:
            document = json.load(f)
        if document.get("schema_version") != REPORT_SCHEMA_VERSION:
            raise ValueError(f"Unsupported change-point report schema {document.get('schema_version')}")
        subjects = document["subjects"]
        piecewise_path = path.with_suffix(".npy")
        per_edge = None
        if (path.parent / EDGE_REPORT).exists():
            with open(path.parent / EDGE_REPORT) as f:
                per_edge = {e["edge"]: e["changepoints"] for e in json.load(f)["edges"]}
        return cls(per_subject=[s["changepoints"] for s in subjects],
                   piecewise=np.load(piecewise_path) if piecewise_path.exists() else np.empty(0),
                   lambda_u_used=document["lambda_u_used"],
                   subject_lambdas=[s["lambda_u"] for s in subjects],
                   cluster_level={c["cluster"]: c["changepoints"] for c in document["clusters"]},
                   per_edge=per_edge,
                   subject_ids=[s["subject_id"] for s in subjects])


def segment_subject(series: np.ndarray, grid: Optional[Sequence[float]] = None, lambda_u: Optional[float] = None):
    """(lambda_u, piecewise, change points) for one subject's (T, E) connectivity series"""
    if lambda_u is None:
        lambda_u = select_lambda_u(series, grid)
    piecewise, cps = tv_segment(series, lambda_u)
    return lambda_u, piecewise, cps


def _edge_changepoints(series: np.ndarray) -> List[List[int]]:
    """Per-edge change points of one subject, each edge with its own lambda_u"""
    return [segment_subject(series[:, [e]])[2] for e in range(series.shape[1])]


def detect_changepoints(networks: DynamicNetworkSet, grid: Optional[Sequence[float]] = None,
                        lambda_u: Optional[float] = None, edge_level: bool = False, n_jobs: int = 1,
                        subject_ids: Sequence[str] = ()) -> ChangePointReport:
    """Network-level change points per subject on the (subject, scan, edge) connectivity signal"""
    signal = networks.edge_series()
    logger.info(f"Segmenting {signal.shape[0]} subjects over {signal.shape[1]} scans and {signal.shape[2]} edges")
    results = Parallel(n_jobs=n_jobs)(delayed(segment_subject)(signal[i], grid, lambda_u)
                                      for i in range(signal.shape[0]))
    lambdas = [float(r[0]) for r in results]
    report = ChangePointReport(per_subject=[r[2] for r in results],
                               piecewise=np.stack([r[1] for r in results]),
                               lambda_u_used=float(np.median(lambdas)),
                               subject_lambdas=lambdas,
                               subject_ids=list(subject_ids))
    if edge_level:
        per_subject_edges = Parallel(n_jobs=n_jobs)(delayed(_edge_changepoints)(signal[i])
                                                    for i in range(signal.shape[0]))
        report.per_edge = {e + 1: [edges[e] for edges in per_subject_edges] for e in range(signal.shape[2])}
    counts = [len(cps) for cps in report.per_subject]
    logger.info(f"Change points per subject: mean {np.mean(counts):.2f}, max {max(counts)}")
    return report
