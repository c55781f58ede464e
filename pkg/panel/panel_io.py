import hashlib
import logging
import struct
from pathlib import Path
from typing import List, Optional, Tuple

import numpy as np
import pandas as pd

from panel.dataset import PanelDataset, PanelValidationError
from settings import settings

logger = logging.getLogger(__name__)

# magic, N, V, T, reserved u64, padding to 32 bytes
HEADER = struct.Struct("<4sIIIQ8x")
MISSING_TOKENS = {"nan", "na", "n/a", "null", "none", ""}


def file_hash(*paths: Path) -> str:
    digest = hashlib.sha256()
    for path in paths:
        if path is not None:
            digest.update(Path(path).read_bytes())
    return digest.hexdigest()


def _numeric_frame(frame: pd.DataFrame, subject: Optional[int], what: str) -> np.ndarray:
    """Convert a string frame to floats, naming the first NaN or non-numeric cell"""
    values = frame.apply(pd.to_numeric, errors="coerce")
    bad = values.isna().to_numpy()
    if bad.any():
        row, col = np.argwhere(bad)[0]
        raw = str(frame.iat[row, col]).strip()
        reason = "NaN present" if raw.lower() in MISSING_TOKENS else f"non-numeric cell {raw!r}"
        if what == "data":
            raise PanelValidationError(f"{reason} at scan {col + 1}", subject=subject, node=row + 1)
        raise PanelValidationError(f"{reason} in covariate column {col + 1}", subject=row + 1)
    return values.to_numpy(dtype=float)


def read_binary_tensor(path: Path) -> np.ndarray:
    raw = Path(path).read_bytes()
    if len(raw) < HEADER.size:
        raise PanelValidationError(f"{path} is too short for a panel header")
    magic, n, v, t, _ = HEADER.unpack_from(raw)
    if magic != settings.binary_magic:
        raise PanelValidationError(f"{path} does not start with the {settings.binary_magic!r} magic")
    expected = n * v * t * 8
    if len(raw) - HEADER.size != expected:
        raise PanelValidationError(
            f"dimension mismatch: header declares {n}x{v}x{t} but payload holds {len(raw) - HEADER.size} bytes")
    values = np.frombuffer(raw, dtype="<f8", offset=HEADER.size, count=n * v * t)
    return values.reshape(n, v, t).astype(float)


def read_manifest(path: Path) -> Tuple[np.ndarray, List[str]]:
    """Manifest CSV with columns subject_id,file; each subject file has rows=nodes, columns=scans"""
    manifest = pd.read_csv(path, dtype=str, keep_default_na=False)
    if list(manifest.columns[:2]) != ["subject_id", "file"]:
        raise PanelValidationError(f"{path}: manifest needs columns subject_id,file")
    tensors = []
    for i, row in enumerate(manifest.itertuples(index=False)):
        subject_path = Path(path).parent / row.file
        frame = pd.read_csv(subject_path, header=None, dtype=str, keep_default_na=False)
        tensors.append(_numeric_frame(frame, i + 1, "data"))
    shapes = {t.shape for t in tensors}
    if len(shapes) != 1:
        raise PanelValidationError(f"dimension mismatch: subjects have shapes {sorted(shapes)}")
    return np.stack(tensors), list(manifest["subject_id"])


def read_covariates(path: Path, subject_ids: Optional[List[str]], n_subjects: int) -> Tuple[np.ndarray, List[str]]:
    frame = pd.read_csv(path, dtype=str, keep_default_na=False)
    ids = list(frame.iloc[:, 0])
    if len(ids) != n_subjects:
        raise PanelValidationError(f"dimension mismatch: {len(ids)} covariate rows for {n_subjects} subjects")
    if frame.shape[1] > 1:
        values = _numeric_frame(frame.iloc[:, 1:], None, "covariates")
    else:
        values = np.zeros((len(ids), 0))
    if subject_ids is not None:
        order = {sid: k for k, sid in enumerate(ids)}
        missing = [sid for sid in subject_ids if sid not in order]
        if missing:
            raise PanelValidationError(f"covariates missing for subject ids {missing[:5]}")
        values = values[[order[sid] for sid in subject_ids]]
        ids = list(subject_ids)
    return values, ids


def load_panel(data_path, covariate_path=None, demean: bool = True) -> PanelDataset:
    """
    Load a binary tensor or a CSV manifest plus an optional covariate CSV.
    Subject ids come from the manifest, else from the covariate file.
    """
    data_path = Path(data_path)
    if not data_path.exists():
        raise FileNotFoundError(f"data file not found: {data_path}")
    if covariate_path is not None and not Path(covariate_path).exists():
        raise FileNotFoundError(f"covariate file not found: {covariate_path}")

    with open(data_path, "rb") as handle:
        is_binary = handle.read(4) == settings.binary_magic
    if is_binary:
        data, subject_ids = read_binary_tensor(data_path), None
    else:
        data, subject_ids = read_manifest(data_path)

    if covariate_path is not None:
        covariates, subject_ids = read_covariates(Path(covariate_path), subject_ids, data.shape[0])
    else:
        covariates = np.zeros((data.shape[0], 0))

    panel = PanelDataset(data=data, covariates=covariates, subject_ids=tuple(subject_ids or ()),
                         source_hash=file_hash(data_path, covariate_path))
    logger.info(f"Loaded panel {data_path.name}: N={panel.n_subjects}, V={panel.n_nodes}, "
                f"T={panel.n_scans}, q={panel.n_covariates}")
    return panel.demeaned() if demean else panel


def save_panel_binary(panel: PanelDataset, data_path, covariate_path=None) -> None:
    n, v, t = panel.data.shape
    with open(data_path, "wb") as handle:
        handle.write(HEADER.pack(settings.binary_magic, n, v, t, 0))
        handle.write(np.ascontiguousarray(panel.data, dtype="<f8").tobytes())
    if covariate_path is not None:
        save_covariates(panel, covariate_path)


def save_covariates(panel: PanelDataset, covariate_path) -> None:
    columns = [f"x{j + 1}" for j in range(panel.n_covariates)]
    frame = pd.DataFrame(panel.covariates, columns=columns)
    frame.insert(0, "subject_id", list(panel.subject_ids))
    frame.to_csv(covariate_path, index=False, float_format="%.17g")


def save_panel_csv(panel: PanelDataset, directory, covariate_path=None) -> Path:
    """Write one CSV per subject plus manifest.csv; returns the manifest path"""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    rows = []
    for i, subject_id in enumerate(panel.subject_ids):
        name = f"subject_{i + 1:04d}.csv"
        pd.DataFrame(panel.data[i]).to_csv(directory / name, header=False, index=False, float_format="%.17g")
        rows.append({"subject_id": subject_id, "file": name})
    manifest = directory / "manifest.csv"
    pd.DataFrame(rows, columns=["subject_id", "file"]).to_csv(manifest, index=False)
    if covariate_path is not None:
        save_covariates(panel, covariate_path)
    return manifest
