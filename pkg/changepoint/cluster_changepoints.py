import logging
from typing import Dict, List, Sequence

from changepoint.candidate import CandidateChangePoint
from panel.dataset import ClusterAssignment
from settings import settings

logger = logging.getLogger(__name__)


class ClusterChangePoints:
    """Pools the change points of one cluster's members into candidate locations"""

    def __init__(self, window: int):
        self.window = window
        self.candidates: Dict[int, CandidateChangePoint] = {}
        self.next_candidate_id = 1

    def add_points(self, points: Sequence[tuple]) -> None:
        """points: (scan, subject) pairs; sorted scans join the open candidate while within the window"""
        current = None
        for scan, subject in sorted(points):
            if current is None or scan not in current:
                current = CandidateChangePoint(self.next_candidate_id, self.window)
                self.candidates[current.id] = current
                self.next_candidate_id += 1
            current.add(subject, scan)
        self.consolidate()

    def consolidate(self) -> None:
        """Merge neighbouring candidates whose representatives ended up within the window"""
        ordered = sorted(self.candidates.values(), key=lambda c: c.representative)
        for left, right in zip(ordered, ordered[1:]):
            if left.id in self.candidates and abs(right.representative - left.representative) <= self.window:
                right.merge(self.candidates, left)

    def check_integrity(self) -> None:
        representatives = sorted(c.representative for c in self.candidates.values())
        for a, b in zip(representatives, representatives[1:]):
            if a == b:
                raise ValueError(f"Two candidate change points share scan {a}")

    def supported(self, n_members: int, freq_threshold: float) -> List[int]:
        return sorted(c.representative for c in self.candidates.values()
                      if c.support(n_members) >= freq_threshold)


def cluster_changepoints(per_subject_cps: Sequence[Sequence[int]], assignment: ClusterAssignment,
                         freq_threshold: float = settings.cp_freq_threshold,
                         window: int = settings.cp_merge_window) -> Dict[int, List[int]]:
    """Cluster-level change points: candidates supported by at least freq_threshold of the members"""
    if not 0 < freq_threshold <= 1:
        raise ValueError(f"freq_threshold must lie in (0, 1], got {freq_threshold}")
    if window < 0:
        raise ValueError(f"window must be non-negative, got {window}")
    if len(per_subject_cps) != len(assignment.labels):
        raise ValueError(f"{len(per_subject_cps)} change-point lists for {len(assignment.labels)} subjects")

    result = {}
    for cluster in range(1, assignment.n_clusters + 1):
        members = assignment.members(cluster)
        pool = ClusterChangePoints(window)
        pool.add_points([(int(scan), int(i)) for i in members for scan in per_subject_cps[i]])
        pool.check_integrity()
        result[cluster] = pool.supported(len(members), freq_threshold)
        logger.debug(f"Cluster {cluster}: {len(members)} members, {len(pool.candidates)} candidates, "
                     f"kept {result[cluster]}")
    return result
