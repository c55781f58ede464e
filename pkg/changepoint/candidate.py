from typing import List, Set


class CandidateChangePoint:
    """Pooled member change points that fall within a window of each other"""

    def __init__(self, id, window: int):
        self.id = id
        self.window = window
        self.scans: List[int] = []
        self.subjects: Set[int] = set()

    def __contains__(self, scan: int) -> bool:
        return bool(self.scans) and abs(scan - self.representative) <= self.window

    @property
    def representative(self) -> int:
        """Lower median of the pooled scans"""
        ordered = sorted(self.scans)
        return ordered[(len(ordered) - 1) // 2]

    def add(self, subject: int, scan: int) -> None:
        self.scans.append(scan)
        self.subjects.add(subject)

    def merge(self, registry: dict, candidate: "CandidateChangePoint") -> None:
        self.scans.extend(candidate.scans)
        self.subjects |= candidate.subjects
        del registry[candidate.id]

    def support(self, n_members: int) -> float:
        """Fraction of cluster members with at least one pooled point"""
        return len(self.subjects) / n_members if n_members else 0.0
