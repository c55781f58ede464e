import logging
from dataclasses import replace
from pathlib import Path
from typing import Callable, Dict, List, Optional, Tuple

import numpy as np
import pandas as pd

from changepoint.report import ChangePointReport, detect_changepoints
from estimators.base_estimator import derive_seed
from estimators.pairwise_estimator import fit_all_edges
from estimators.precision_estimator import fit_idpmac
from metrics.evaluator import MetricEvaluator
from metrics.reports import f1_curves, group_by_cluster, group_by_method
from metrics.scores import MetricReport
from panel.dataset import PanelDataset
from panel.panel_io import file_hash, load_panel, save_panel_binary
from pipeline.artifact_store import ArtifactMismatchError, ArtifactStore
from pipeline.component_selection import select_n_components
from pipeline.run_config import STAGE_SECTIONS, RunConfig, config_hash
from settings import settings
from simulation.baseline import sliding_window_baseline, sliding_window_precision
from simulation.generator import SimConfig, SimTruth, generate
from simulation.prewhiten import prewhiten_report
from subgroups.kmeans_subgroups import kmeans_subgroups
from subgroups.similarity import build_similarity

logger = logging.getLogger(__name__)

REPRODUCE_METHODS = ["idpac", "idpac-naive", "idpmac", "baseline", "baseline-precision"]
REPRODUCE_SCENARIOS = (("informative", 0), ("spurious", 4))


class StageProcessor:
    """Runs the simulate, fit, postprocess and evaluate stages of one run directory"""

    def __init__(self, config: RunConfig, force: bool = False):
        self.config = config
        self.force = force
        self.store = ArtifactStore(config.output_dir)
        self.stage_hashes = {stage: config_hash(config, stage) for stage in STAGE_SECTIONS}
        self.evaluator = MetricEvaluator()

    def _run_stage(self, stage: str, method: Optional[str], work: Callable[[], Dict],
                   dataset_hash: str = "") -> Optional[Dict]:
        """Skip a completed stage unless forced; record completed or failed in its manifest"""
        label = f"{stage}/{method}" if method else stage
        if not self.force and self.store.is_completed(stage, self.stage_hashes[stage], method):
            logger.info(f"Stage {label} already completed; skipping (use --force to rerun)")
            return None
        logger.info(f"Running stage {label}")
        try:
            extra = work() or {}
        except Exception as e:
            logger.error(f"Stage {label} failed: {e}")
            self.store.set_manifest(stage, "failed", self.stage_hashes[stage], self.config.seed, method,
                                    dataset_hash=dataset_hash, error=str(e))
            raise
        self.store.set_manifest(stage, "completed", self.stage_hashes[stage], self.config.seed, method,
                                dataset_hash=extra.pop("dataset_hash", dataset_hash), **extra)
        logger.info(f"Stage {label} completed")
        return extra

    def _check_upstream(self, stage: str, method: Optional[str] = None) -> Dict:
        manifest = self.store.get_manifest(stage, method)
        label = f"{stage}/{method}" if method else stage
        if manifest is None or manifest.get("status") != "completed":
            raise FileNotFoundError(f"Stage {label} has not completed in {self.store.root}; run it first")
        if manifest["config_hash"] != self.stage_hashes[stage]:
            if not self.force:
                raise ArtifactMismatchError(f"{label} config hash", self.stage_hashes[stage], manifest["config_hash"])
            logger.warning(f"Using {label} artifacts produced under a different configuration")
        return manifest

    def simulate(self) -> Optional[Dict]:
        def work():
            directory = self.store.stage_dir("simulate")
            panel, truth = generate(self.config.simulate, n_jobs=self.config.threads)
            if self.config.prewhiten.enabled:
                panel, report = prewhiten_report(panel, self.config.prewhiten.max_ar_order,
                                                 self.config.prewhiten.criterion)
                report.to_csv(directory / "prewhiten.csv", index=False)
            save_panel_binary(panel, directory / "data.bin", directory / "covariates.csv")
            truth.save(directory, panel.subject_ids)
            return {"dataset_hash": file_hash(directory / "data.bin", directory / "covariates.csv"),
                    "n_subjects": panel.n_subjects, "n_nodes": panel.n_nodes, "n_scans": panel.n_scans}
        return self._run_stage("simulate", None, work)

    def load_dataset(self) -> Tuple[PanelDataset, str]:
        if self.config.fit.data:
            paths = [Path(self.config.fit.data)]
            if self.config.fit.covariates:
                paths.append(Path(self.config.fit.covariates))
            panel = load_panel(*paths)
            if self.config.prewhiten.enabled:
                panel = prewhiten_report(panel, self.config.prewhiten.max_ar_order,
                                         self.config.prewhiten.criterion)[0]
            return panel, file_hash(*paths)
        manifest = self._check_upstream("simulate")
        directory = self.store.root / "simulate"
        return load_panel(directory / "data.bin", directory / "covariates.csv"), manifest["dataset_hash"]

    def _fit_method(self, method: str, panel: PanelDataset, directory: Path) -> Dict:
        config = self.config
        fit_options = {"standardize": config.fit.standardize,
                       "standardize_covariates": config.fit.standardize_covariates,
                       "freeze_lambda": config.fit.freeze_lambda,
                       "covariate_naive": method.endswith("-naive")}
        hyper = config.hyper
        if method.startswith("idpac"):
            if config.fit.select_h:
                best, table = select_n_components(panel, config.fit.select_h, hyper, config.seed,
                                                  n_jobs=config.threads, **fit_options)
                table.to_csv(directory / "component_selection.csv", index=False)
                hyper = replace(hyper, n_components=best)
            fit = fit_all_edges(panel, hyper, config.seed, n_jobs=config.threads, **fit_options)
            self.store.save_networks(directory, fit.networks)
            self.store.save_states(directory, [e.state for e in fit.edge_fits])
            np.save(directory / "labels.npy", fit.labels())
            fit.diagnostics().to_csv(directory / "diagnostics.csv", index=False)
            return {"converged": fit.converged, "n_components": hyper.n_components}
        if method.startswith("idpmac"):
            fit = fit_idpmac(panel, hyper, config.seed, n_jobs=config.threads, **fit_options)
            self.store.save_networks(directory, fit.networks)
            self.store.save_states(directory, [fit.state])
            np.save(directory / "labels.npy", fit.labels())
            fit.diagnostics().to_csv(directory / "diagnostics.csv", index=False)
            return {"converged": fit.converged, "n_components": hyper.n_components, "jitters": fit.jitters}
        if method == "baseline":
            self.store.save_networks(directory, sliding_window_baseline(panel, config.fit.baseline_window))
        else:
            self.store.save_networks(directory, sliding_window_precision(panel, config.fit.baseline_window))
        return {"converged": True}

    def fit(self, methods: Optional[List[str]] = None) -> bool:
        """Fit every method; False when an estimator stopped at max_em_iters"""
        panel, dataset_hash = self.load_dataset()
        converged = True
        for method in methods or self.config.methods:
            directory = self.store.stage_dir("fit", method)
            work = lambda: dict(self._fit_method(method, panel, directory), subject_ids=list(panel.subject_ids))
            result = self._run_stage("fit", method, work, dataset_hash=dataset_hash)
            if result is None:
                result = self.store.get_manifest("fit", method)
            converged = converged and bool(result.get("converged", True))
        return converged

    def _postprocess_method(self, method: str, fit_manifest: Dict) -> Dict:
        source = self.store.root / "fit" / method
        directory = self.store.stage_dir("postprocess", method)
        options = self.config.changepoint
        networks = self.store.load_networks(source)
        subject_ids = fit_manifest.get("subject_ids") or [f"S{i + 1:03d}" for i in range(networks.n_subjects)]
        n_components = fit_manifest.get("n_components") or self.config.hyper.n_components
        report = detect_changepoints(networks, options.lambda_grid, options.lambda_u, options.edge_level,
                                     n_jobs=self.config.threads, subject_ids=subject_ids)
        result = {"n_clusters": None}
        if (source / "labels.npy").exists():
            similarity = build_similarity(np.load(source / "labels.npy"))
            pd.DataFrame(similarity.values).to_csv(directory / "similarity.csv", index=False, header=False)
            assignment = kmeans_subgroups(similarity, self.config.subgroups.n_clusters,
                                          self.config.subgroups.max_clusters or n_components, seed=self.config.seed)
            self.store.save_assignment(directory, assignment, subject_ids)
            report.with_clusters(assignment, options.freq_threshold, options.window)
            result["n_clusters"] = assignment.n_clusters
        report.save(directory / "changepoints.json")
        return result

    def postprocess(self, methods: Optional[List[str]] = None) -> None:
        for method in methods or self.config.methods:
            manifest = self._check_upstream("fit", method)
            self._run_stage("postprocess", method,
                            lambda: self._postprocess_method(method, manifest),
                            dataset_hash=manifest.get("dataset_hash", ""))

    def _evaluate_method(self, method: str, truth: SimTruth, n_scans: int) -> Dict:
        directory = self.store.stage_dir("evaluate", method)
        networks = self.store.load_networks(self.store.root / "fit" / method)
        post = self.store.root / "postprocess" / method
        assignment = self.store.load_assignment(post)
        cp_report = ChangePointReport.load(post / "changepoints.json")
        result = self.evaluator.evaluate(networks, truth, n_scans, assignment, cp_report)
        report: MetricReport = result["report"]
        with open(directory / "metrics.txt", "w") as f:
            f.write(report.to_text())
        self.store.save_json(directory / "metrics.json", report.to_dict())
        if result["cluster_table"] is not None:
            result["cluster_table"].to_csv(directory / "cluster_changepoints.csv", index=False)
        if result["subject_table"] is not None:
            result["subject_table"].to_csv(directory / "subject_changepoints.csv", index=False)
            group_by_cluster(result["subject_table"]).to_csv(directory / "changepoints_by_cluster.csv", index=False)
        if result["f1_over_time"] is not None:
            f1_curves({method: result["f1_over_time"]}).to_csv(directory / "f1_over_time.csv", index=False)
        return {"metrics": report.to_dict()}

    def evaluate(self, methods: Optional[List[str]] = None) -> Dict[str, MetricReport]:
        simulate_manifest = self._check_upstream("simulate")
        truth = SimTruth.load(self.store.root / "simulate")
        n_scans = simulate_manifest["n_scans"]
        reports = {}
        for method in methods or self.config.methods:
            fit_manifest = self._check_upstream("fit", method)
            self._check_upstream("postprocess", method)
            if fit_manifest.get("dataset_hash") != simulate_manifest["dataset_hash"]:
                if not self.force:
                    raise ArtifactMismatchError(f"fit/{method} dataset hash", simulate_manifest["dataset_hash"],
                                                fit_manifest.get("dataset_hash", ""))
                logger.warning(f"fit/{method} was produced from a different dataset")
            self._run_stage("evaluate", method, lambda: self._evaluate_method(method, truth, n_scans),
                            dataset_hash=simulate_manifest["dataset_hash"])
            reports[method] = MetricReport(**self.store.get_manifest("evaluate", method)["metrics"])
        return reports

    def run_all(self, methods: Optional[List[str]] = None) -> Tuple[bool, Dict[str, MetricReport]]:
        self.simulate()
        converged = self.fit(methods)
        self.postprocess(methods)
        return converged, self.evaluate(methods)

    def reproduce_tables(self) -> pd.DataFrame:
        """Scaled simulation protocol over replicates and covariate scenarios; writes the summary tables"""
        root = self.store.stage_dir("reproduce")
        rows, curves = [], {}
        for replicate in range(settings.repro_replicates):
            seed = derive_seed(self.config.seed, replicate)
            for scenario, n_spurious in REPRODUCE_SCENARIOS:
                simulate = SimConfig(n_subjects=settings.repro_n_subjects, n_nodes=settings.repro_n_nodes,
                                     n_scans=settings.repro_n_scans, cluster_sizes=settings.repro_cluster_sizes,
                                     cps_per_cluster=settings.repro_cps_per_cluster,
                                     topology=self.config.simulate.topology, obs_model=self.config.simulate.obs_model,
                                     n_spurious=n_spurious, seed=seed)
                config = replace(self.config, seed=seed, simulate=simulate,
                                 output_dir=str(root / f"{scenario}_rep{replicate + 1}"))
                logger.info(f"Reproduction replicate {replicate + 1}, scenario {scenario}")
                _, reports = StageProcessor(config, force=self.force).run_all(REPRODUCE_METHODS)
                for method, report in reports.items():
                    rows.append({"replicate": replicate + 1, "scenario": scenario, "method": method,
                                 **report.to_dict()})
                if scenario == "informative":
                    for method in REPRODUCE_METHODS:
                        path = Path(config.output_dir) / "evaluate" / method / "f1_over_time.csv"
                        curves.setdefault(method, []).append(pd.read_csv(path)["f1"].to_numpy())

        frame = pd.DataFrame(rows)
        frame.to_csv(root / "metrics_by_replicate.csv", index=False)
        for scenario, part in frame.groupby("scenario"):
            group_by_method(part.to_dict("records")).to_csv(root / f"summary_{scenario}.csv", index=False)
        mean_ce = frame.pivot_table(index="method", columns="scenario", values="ce", aggfunc="mean")
        if {"informative", "spurious"} <= set(mean_ce.columns):
            degradation = (mean_ce["spurious"] - mean_ce["informative"]).rename("ce_increase").reset_index()
            degradation.to_csv(root / "spurious_degradation.csv", index=False)
        f1_curves({m: np.mean(c, axis=0) for m, c in curves.items()}).to_csv(root / "f1_over_time.csv", index=False)
        with open(root / "metrics_summary.txt", "w") as f:
            for record in group_by_method(frame[frame["scenario"] == "informative"].to_dict("records")).to_dict("records"):
                f.write(" ".join(f"{k}={v:.6f}" if isinstance(v, float) else f"{k}={v}" for k, v in record.items()))
                f.write("\n")
        logger.info(f"Reproduction tables written to {root}")
        return frame
