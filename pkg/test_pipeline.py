#!/usr/bin/env python3
"""
Tests for run configuration, the artifact store, the stage runner and the command-line front end
"""

import json

import numpy as np
import pandas as pd
import pytest

from panel.dataset import ClusterAssignment, DynamicNetworkSet, NetworkKind, PanelDataset
from panel.panel_io import save_panel_csv
from pipeline import (ArtifactMismatchError, ArtifactStore, ConfigError, StageProcessor, config_hash, load_config,
                      parse_config)
from run_bpmm import EXIT_OK, EXIT_USAGE, main

TINY_SIMULATION = {"n_subjects": 4, "n_nodes": 6, "n_scans": 60, "cluster_sizes": [2, 2], "cps_per_cluster": [1, 1]}


def tiny_document(output_dir, **changes):
    document = {"schema_version": 1, "seed": 1, "output_dir": str(output_dir), "method": "baseline",
                "simulate": dict(TINY_SIMULATION), "fit": {"baseline_window": 7},
                "hyper": {"n_components": 2, "max_em_iters": 2, "lambda_grid": [0.5, 2.0]}}
    document.update(changes)
    return document


@pytest.fixture
def config_file(tmp_path):
    path = tmp_path / "run.json"
    path.write_text(json.dumps(tiny_document(tmp_path / "run")))
    return path


def test_parse_config_rejects_unknown_and_misplaced_keys():
    with pytest.raises(ConfigError) as excinfo:
        parse_config({"bogus": 1})
    assert excinfo.value.key == "bogus"
    with pytest.raises(ConfigError) as excinfo:
        parse_config({"simulate": {"colour": "red"}})
    assert excinfo.value.key == "simulate.colour"
    with pytest.raises(ConfigError) as excinfo:
        parse_config({"simulate": {"seed": 3}})
    assert excinfo.value.key == "simulate.seed"
    with pytest.raises(ConfigError):
        parse_config({"schema_version": 2})
    with pytest.raises(ConfigError):
        parse_config({"method": "lasso"})


def test_parse_config_wraps_section_validation():
    with pytest.raises(ConfigError) as excinfo:
        parse_config({"simulate": {**TINY_SIMULATION, "cluster_sizes": [2, 3]}})
    assert excinfo.value.key == "simulate"
    with pytest.raises(ConfigError):
        parse_config({"hyper": {"n_components": 0}})
    with pytest.raises(ConfigError):
        parse_config({"fit": {"baseline_window": 8}})
    with pytest.raises(ConfigError):
        parse_config({"changepoint": {"freq_threshold": 0.0}})


def test_parsed_config_values(tmp_path):
    config = parse_config(tiny_document(tmp_path))
    assert config.simulate.seed == 1
    assert config.simulate.cluster_sizes == (2, 2)
    assert config.hyper.lambda_grid == (0.5, 2.0)
    assert config.methods == ["baseline"]
    assert parse_config({"method": "both"}).methods == ["idpac", "idpmac"]
    assert config.with_overrides(seed=5).simulate.seed == 5


def test_load_config_errors(tmp_path):
    assert load_config().seed == 0
    broken = tmp_path / "broken.json"
    broken.write_text("{not json")
    with pytest.raises(ConfigError):
        load_config(broken)
    with pytest.raises(ConfigError):
        load_config(tmp_path / "missing.json")


def test_config_hash_scopes(tmp_path):
    config = parse_config(tiny_document(tmp_path))
    assert config_hash(config) == config_hash(config.with_overrides(threads=4, output_dir="elsewhere"))
    assert config_hash(config) == config_hash(config.with_overrides(method="idpac"))
    assert config_hash(config) != config_hash(config.with_overrides(seed=2))
    other_hyper = parse_config(tiny_document(tmp_path, hyper={"n_components": 3}))
    assert config_hash(config, "simulate") == config_hash(other_hyper, "simulate")
    assert config_hash(config, "fit") != config_hash(other_hyper, "fit")
    with pytest.raises(ValueError):
        config_hash(config, "publish")


def test_artifact_store_manifests_and_round_trips(tmp_path):
    store = ArtifactStore(tmp_path)
    assert store.get_manifest("fit", "idpac") is None
    store.set_manifest("fit", "completed", "abc", 3, "idpac", dataset_hash="d1", converged=True)
    assert store.is_completed("fit", "abc", "idpac")
    assert not store.is_completed("fit", "xyz", "idpac")
    manifest = store.get_manifest("fit", "idpac")
    assert manifest["seed"] == 3 and manifest["converged"] and manifest["dataset_hash"] == "d1"

    directory = store.stage_dir("fit", "idpac")
    networks = DynamicNetworkSet(kind=NetworkKind.PAIRWISE_FISHER_Z, values=np.arange(6.0).reshape(1, 2, 3) / 10,
                                 n_nodes=3)
    store.save_networks(directory, networks)
    loaded = store.load_networks(directory)
    assert loaded.kind == NetworkKind.PAIRWISE_FISHER_Z
    assert np.array_equal(loaded.values, networks.values)
    assert store.load_assignment(directory) is None
    store.save_assignment(directory, ClusterAssignment(np.array([1, 2, 2])), ["a", "b", "c"])
    assert store.load_assignment(directory).labels.tolist() == [1, 2, 2]


def test_baseline_run_end_to_end_and_resume(tmp_path):
    config = parse_config(tiny_document(tmp_path / "run"))
    processor = StageProcessor(config)
    converged, reports = processor.run_all()
    assert converged
    report = reports["baseline"]
    assert 0.0 <= report.f1 <= 1.0
    assert report.mse is not None
    assert report.ce is None and report.cp_sensitivity is None

    root = tmp_path / "run"
    for name in ("simulate/data.bin", "simulate/truth.json", "fit/baseline/networks.npz",
                 "postprocess/baseline/changepoints.json", "evaluate/baseline/metrics.txt",
                 "evaluate/baseline/f1_over_time.csv"):
        assert (root / name).exists(), name

    (root / "evaluate/baseline/metrics.txt").unlink()
    _, again = StageProcessor(config).run_all()
    assert not (root / "evaluate/baseline/metrics.txt").exists()
    assert again["baseline"] == report

    StageProcessor(config, force=True).evaluate()
    assert (root / "evaluate/baseline/metrics.txt").exists()


def test_same_config_gives_identical_simulation(tmp_path):
    first = StageProcessor(parse_config(tiny_document(tmp_path / "a")))
    second = StageProcessor(parse_config(tiny_document(tmp_path / "b")))
    first.simulate()
    second.simulate()
    assert (tmp_path / "a/simulate/data.bin").read_bytes() == (tmp_path / "b/simulate/data.bin").read_bytes()


def test_pairwise_run_writes_subgroups(tmp_path):
    config = parse_config(tiny_document(tmp_path / "run", method="idpac"))
    _, reports = StageProcessor(config).run_all()
    report = reports["idpac"]
    assert 0.0 <= report.ce <= 0.5
    assert report.vi >= 0.0
    assert report.cp_sensitivity is not None
    post = tmp_path / "run/postprocess/idpac"
    assert (post / "subgroups.csv").exists()
    assert (post / "similarity.csv").exists()
    assert (tmp_path / "run/fit/idpac/labels.npy").exists()
    assert (tmp_path / "run/evaluate/idpac/cluster_changepoints.csv").exists()


def test_postprocess_keeps_the_panel_subject_ids(tmp_path):
    rng = np.random.default_rng(4)
    ids = ("ctl-a", "ctl-b", "pat-a", "pat-b")
    panel = PanelDataset(data=rng.normal(size=(4, 4, 40)), covariates=rng.normal(size=(4, 1)), subject_ids=ids)
    manifest = save_panel_csv(panel, tmp_path / "data", tmp_path / "covariates.csv")
    document = tiny_document(tmp_path / "run", method="idpac",
                             fit={"data": str(manifest), "covariates": str(tmp_path / "covariates.csv")})
    processor = StageProcessor(parse_config(document))
    processor.fit()
    processor.postprocess()
    assert processor.store.get_manifest("fit", "idpac")["subject_ids"] == list(ids)
    post = tmp_path / "run/postprocess/idpac"
    assert pd.read_csv(post / "subgroups.csv")["subject_id"].tolist() == list(ids)
    report = json.loads((post / "changepoints.json").read_text())
    assert [s["subject_id"] for s in report["subjects"]] == list(ids)


def test_missing_upstream_stage(tmp_path):
    processor = StageProcessor(parse_config(tiny_document(tmp_path / "run")))
    with pytest.raises(FileNotFoundError):
        processor.fit()
    with pytest.raises(FileNotFoundError):
        processor.evaluate()


def test_mismatched_upstream_needs_force(tmp_path):
    StageProcessor(parse_config(tiny_document(tmp_path / "run"))).simulate()
    changed = parse_config(tiny_document(tmp_path / "run", simulate={**TINY_SIMULATION, "cp_jitter": 2}))
    with pytest.raises(ArtifactMismatchError):
        StageProcessor(changed).fit()
    assert StageProcessor(changed, force=True).fit()
    # fit settings alone do not invalidate the simulation
    other_fit = parse_config(tiny_document(tmp_path / "run", fit={"baseline_window": 9}))
    assert StageProcessor(other_fit).fit()


def test_failed_stage_is_recorded(tmp_path):
    config = parse_config(tiny_document(tmp_path / "run", fit={"baseline_window": 61}))
    processor = StageProcessor(config)
    processor.simulate()
    with pytest.raises(ValueError):
        processor.fit()
    manifest = processor.store.get_manifest("fit", "baseline")
    assert manifest["status"] == "failed"
    assert "window" in manifest["error"]


def test_cli_stages_and_exit_codes(config_file, capsys):
    assert main(["--config", str(config_file), "evaluate"]) == EXIT_USAGE
    assert main(["--config", str(config_file), "simulate"]) == EXIT_OK
    assert main(["--config", str(config_file), "fit"]) == EXIT_OK
    assert main(["--config", str(config_file), "postprocess"]) == EXIT_OK
    assert main(["--config", str(config_file), "evaluate"]) == EXIT_OK
    out = capsys.readouterr().out
    assert "[baseline]" in out
    assert "ce=NA" in out


def test_cli_usage_errors(config_file, tmp_path):
    assert main(["--config", str(config_file), "fit", "--select-h", "a,b"]) == EXIT_USAGE
    assert main(["--config", str(config_file), "fit", "--method", "lasso"]) == EXIT_USAGE
    assert main(["--config", str(tmp_path / "missing.json"), "simulate"]) == EXIT_USAGE
    assert main(["--config", str(config_file), "--threads", "0", "simulate"]) == EXIT_USAGE
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps(tiny_document(tmp_path, simulate={**TINY_SIMULATION, "cluster_sizes": [1, 1]})))
    assert main(["--config", str(bad), "simulate"]) == EXIT_USAGE
