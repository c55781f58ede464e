import hashlib
import json
import logging
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Dict, List, Optional, Tuple

from panel.dataset import HyperParams
from settings import settings
from simulation.generator import SimConfig

logger = logging.getLogger(__name__)

METHODS = ("idpac", "idpmac", "idpac-naive", "idpmac-naive", "baseline", "baseline-precision")
METHOD_GROUPS = {"both": ("idpac", "idpmac")}
STAGE_SECTIONS = {
    "simulate": ("seed", "simulate", "prewhiten"),
    "fit": ("seed", "simulate", "prewhiten", "hyper", "fit"),
    "postprocess": ("seed", "simulate", "prewhiten", "hyper", "fit", "changepoint", "subgroups"),
}
STAGE_SECTIONS["evaluate"] = STAGE_SECTIONS["postprocess"]


class ConfigError(Exception):
    """Raised when a run configuration is malformed"""
    def __init__(self, key: str, reason: str):
        self.key = key
        super().__init__(f"Invalid configuration at '{key}': {reason}")


@dataclass(frozen=True)
class PrewhitenOptions:
    enabled: bool = False
    max_ar_order: int = settings.max_ar_order
    criterion: str = "bic"


@dataclass(frozen=True)
class FitOptions:
    data: Optional[str] = None
    covariates: Optional[str] = None
    standardize: bool = True
    standardize_covariates: bool = True
    freeze_lambda: bool = False
    select_h: Optional[Tuple[int, ...]] = None
    baseline_window: int = settings.baseline_window


@dataclass(frozen=True)
class ChangePointOptions:
    lambda_grid: Optional[Tuple[float, ...]] = None
    lambda_u: Optional[float] = None
    freq_threshold: float = settings.cp_freq_threshold
    window: int = settings.cp_merge_window
    edge_level: bool = False


@dataclass(frozen=True)
class SubgroupOptions:
    n_clusters: Optional[int] = None
    max_clusters: Optional[int] = None


@dataclass(frozen=True)
class RunConfig:
    seed: int = 0
    threads: int = 1
    output_dir: str = "runs"
    method: str = "idpac"
    simulate: SimConfig = field(default_factory=SimConfig)
    prewhiten: PrewhitenOptions = field(default_factory=PrewhitenOptions)
    hyper: HyperParams = field(default_factory=HyperParams)
    fit: FitOptions = field(default_factory=FitOptions)
    changepoint: ChangePointOptions = field(default_factory=ChangePointOptions)
    subgroups: SubgroupOptions = field(default_factory=SubgroupOptions)

    @property
    def methods(self) -> List[str]:
        return list(METHOD_GROUPS.get(self.method, (self.method,)))

    def to_dict(self) -> dict:
        simulate = self.simulate.to_dict()
        simulate.pop("seed")
        return {
            "schema_version": settings.config_schema_version,
            "seed": self.seed,
            "threads": self.threads,
            "output_dir": self.output_dir,
            "method": self.method,
            "simulate": simulate,
            "prewhiten": asdict(self.prewhiten),
            "hyper": {**asdict(self.hyper), "lambda_grid": list(self.hyper.lambda_grid)},
            "fit": {**asdict(self.fit), "select_h": list(self.fit.select_h) if self.fit.select_h else None},
            "changepoint": {**asdict(self.changepoint),
                            "lambda_grid": list(self.changepoint.lambda_grid) if self.changepoint.lambda_grid else None},
            "subgroups": asdict(self.subgroups),
        }

    def with_overrides(self, **changes) -> "RunConfig":
        config = replace(self, **changes)
        if "seed" in changes:
            config = replace(config, simulate=replace(config.simulate, seed=changes["seed"]))
        return config


def config_hash(config: RunConfig, stage: str = "evaluate") -> str:
    """
    SHA-256 of the canonical JSON of the sections that can change a stage's outputs.
    threads, output_dir and method never enter: methods write to their own directories.
    """
    if stage not in STAGE_SECTIONS:
        raise ValueError(f"unknown stage {stage!r}")
    document = {k: v for k, v in config.to_dict().items() if k in STAGE_SECTIONS[stage]}
    return hashlib.sha256(json.dumps(document, sort_keys=True).encode()).hexdigest()


def _section(cls, values, name: str, converters: Dict = None):
    if values is None:
        return cls()
    if not isinstance(values, dict):
        raise ConfigError(name, "section must be an object")
    allowed = {f.name for f in fields(cls)}
    for key in values:
        if key not in allowed:
            raise ConfigError(f"{name}.{key}", "unknown key")
    values = dict(values)
    for key, convert in (converters or {}).items():
        if values.get(key) is not None:
            values[key] = convert(values[key])
    try:
        return cls(**values)
    except (TypeError, ValueError) as e:
        raise ConfigError(name, str(e))


def parse_config(document: dict) -> RunConfig:
    """Validate a configuration document; every key must be known"""
    if not isinstance(document, dict):
        raise ConfigError("<root>", "configuration must be an object")
    document = dict(document)
    version = document.pop("schema_version", settings.config_schema_version)
    if version != settings.config_schema_version:
        raise ConfigError("schema_version", f"expected {settings.config_schema_version}, got {version}")
    top_level = {"seed", "threads", "output_dir", "method", "simulate", "prewhiten", "hyper", "fit",
                 "changepoint", "subgroups"}
    for key in document:
        if key not in top_level:
            raise ConfigError(key, "unknown key")

    seed = document.get("seed", 0)
    if not isinstance(seed, int) or seed < 0:
        raise ConfigError("seed", f"must be a non-negative integer, got {seed!r}")
    threads = document.get("threads", 1)
    if not isinstance(threads, int) or threads < 1:
        raise ConfigError("threads", f"must be a positive integer, got {threads!r}")
    method = document.get("method", "idpac")
    if method not in METHODS and method not in METHOD_GROUPS:
        raise ConfigError("method", f"must be one of {list(METHODS) + list(METHOD_GROUPS)}, got {method!r}")

    simulate = dict(document.get("simulate") or {})
    if "seed" in simulate:
        raise ConfigError("simulate.seed", "the seed is set at the top level")
    simulate["seed"] = seed
    config = RunConfig(
        seed=seed,
        threads=threads,
        output_dir=str(document.get("output_dir", "runs")),
        method=method,
        simulate=_section(SimConfig, simulate, "simulate", {"cluster_sizes": tuple, "cps_per_cluster": tuple}),
        prewhiten=_section(PrewhitenOptions, document.get("prewhiten"), "prewhiten"),
        hyper=_section(HyperParams, document.get("hyper"), "hyper", {"lambda_grid": tuple}),
        fit=_section(FitOptions, document.get("fit"), "fit", {"select_h": tuple}),
        changepoint=_section(ChangePointOptions, document.get("changepoint"), "changepoint",
                             {"lambda_grid": tuple}),
        subgroups=_section(SubgroupOptions, document.get("subgroups"), "subgroups"),
    )
    if config.prewhiten.criterion not in ("aic", "bic"):
        raise ConfigError("prewhiten.criterion", f"must be 'aic' or 'bic', got {config.prewhiten.criterion!r}")
    if not 0 < config.changepoint.freq_threshold <= 1:
        raise ConfigError("changepoint.freq_threshold", "must lie in (0, 1]")
    if config.fit.baseline_window % 2 == 0 or config.fit.baseline_window < 3:
        raise ConfigError("fit.baseline_window", "must be odd and at least 3")
    return config


def load_config(path=None) -> RunConfig:
    if path is None:
        return parse_config({})
    try:
        with open(Path(path)) as f:
            document = json.load(f)
    except json.JSONDecodeError as e:
        raise ConfigError("<file>", f"not valid JSON: {e}")
    except OSError as e:
        raise ConfigError("<file>", str(e))
    return parse_config(document)
