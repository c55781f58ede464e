from pipeline.artifact_store import ArtifactMismatchError, ArtifactStore
from pipeline.component_selection import network_criterion, select_n_components
from pipeline.run_config import ConfigError, RunConfig, config_hash, load_config, parse_config
from pipeline.stage_processor import StageProcessor
