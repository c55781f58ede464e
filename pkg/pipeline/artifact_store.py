import json
import logging
from pathlib import Path
from typing import Dict, List, Optional

import numpy as np
import pandas as pd

from mixture.mixture_state import MixtureState
from panel.dataset import ClusterAssignment, DynamicNetworkSet, NetworkKind

logger = logging.getLogger(__name__)

MANIFEST = "manifest.json"


class ArtifactMismatchError(Exception):
    """Raised when a stage's inputs were produced under a different configuration or dataset"""
    def __init__(self, what: str, expected: str, found: str):
        self.expected = expected
        self.found = found
        super().__init__(f"{what} mismatch: expected {expected[:12]}, found {found[:12]} (use --force to override)")


class ArtifactStore:
    """File-based store of stage outputs and their manifests under one run directory"""

    def __init__(self, root):
        self.root = Path(root)

    def stage_dir(self, stage: str, method: Optional[str] = None) -> Path:
        path = self.root / stage if method is None else self.root / stage / method
        path.mkdir(parents=True, exist_ok=True)
        return path

    def get_manifest(self, stage: str, method: Optional[str] = None) -> Optional[Dict]:
        path = (self.root / stage if method is None else self.root / stage / method) / MANIFEST
        if not path.exists():
            logger.debug(f"No manifest for {stage} {method or ''}")
            return None
        with open(path) as f:
            return json.load(f)

    def set_manifest(self, stage: str, status: str, config_hash: str, seed: int, method: Optional[str] = None,
                     dataset_hash: str = "", **extra) -> None:
        manifest = {"stage": stage, "method": method, "status": status, "config_hash": config_hash,
                    "dataset_hash": dataset_hash, "seed": seed, **extra}
        with open(self.stage_dir(stage, method) / MANIFEST, "w") as f:
            json.dump(manifest, f, indent=2, sort_keys=True)
        logger.debug(f"Manifest for {stage} {method or ''}: {status}")

    def is_completed(self, stage: str, config_hash: str, method: Optional[str] = None) -> bool:
        manifest = self.get_manifest(stage, method)
        return bool(manifest) and manifest.get("status") == "completed" and manifest.get("config_hash") == config_hash

    def save_json(self, path: Path, document) -> None:
        with open(path, "w") as f:
            json.dump(document, f, indent=2, sort_keys=True)

    def load_json(self, path: Path):
        with open(path) as f:
            return json.load(f)

    def save_networks(self, directory: Path, networks: DynamicNetworkSet) -> None:
        np.savez(directory / "networks.npz", kind=np.array(networks.kind.value), values=networks.values,
                 n_nodes=np.array(networks.n_nodes))

    def load_networks(self, directory: Path) -> DynamicNetworkSet:
        arrays = np.load(directory / "networks.npz")
        return DynamicNetworkSet(kind=NetworkKind(str(arrays["kind"])), values=arrays["values"],
                                 n_nodes=int(arrays["n_nodes"]))

    def save_states(self, directory: Path, states: List[MixtureState]) -> None:
        """Mixture parameters of one or more fitted units, stacked along a leading axis"""
        np.savez(directory / "mixture_state.npz",
                 atoms=np.stack([s.atoms for s in states]),
                 sigma2=np.stack([s.sigma2 for s in states]),
                 beta=np.stack([s.beta for s in states]))

    def save_assignment(self, directory: Path, assignment: ClusterAssignment, subject_ids) -> None:
        pd.DataFrame({"subject_id": list(subject_ids), "subgroup": assignment.labels}).to_csv(
            directory / "subgroups.csv", index=False)

    def load_assignment(self, directory: Path) -> Optional[ClusterAssignment]:
        path = directory / "subgroups.csv"
        if not path.exists():
            return None
        frame = pd.read_csv(path)
        return ClusterAssignment(frame["subgroup"].to_numpy())
