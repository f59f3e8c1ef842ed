"""Experiment orchestration and CSV emission.

Runs a configured scan pipeline against a built scenario, verifies the
attacker's findings against the scenario's ground truth, and serializes the
summary, the per-query series and (optionally) the raw event log in fixed
CSV schemas.  Identical (config, seed) pairs always produce byte-identical
files.
"""

from __future__ import annotations

import csv
import enum
from dataclasses import dataclass, field, replace
from pathlib import Path

from .attacker import AttackEngine, ScanFailed, ScanReport, SeriesPoint
from .scenario import ConfigError, Scenario, ScenarioConfig, build_scenario
from .stackmodel import HostModel

SUMMARY_HEADER = (
    "stage",
    "scenario",
    "scan_time_s",
    "queries",
    "pings",
    "max_targets_per_query",
    "spoofed_segments",
    "reflected_segments",
    "success",
)

SERIES_HEADER = (
    "query_id",
    "stage",
    "x_lo",
    "x_hi",
    "avg_rtt_s",
    "loss_rate",
    "classification",
)


class Pipeline(enum.Enum):
    PORT_ONLY = "port"
    FULL_RFC793 = "full-rfc793"
    FULL_NETFILTER = "full-netfilter"


_PIPELINE_MODELS = {
    Pipeline.PORT_ONLY: set(HostModel),
    Pipeline.FULL_RFC793: {HostModel.RFC793_BARE, HostModel.WINXP_FW},
    Pipeline.FULL_NETFILTER: {HostModel.LINUX_NETFILTER},
}


@dataclass
class ExperimentResult:
    cfg: ScenarioConfig
    pipeline: Pipeline
    report: ScanReport
    series: list[SeriesPoint]
    scenario: Scenario

    @property
    def success(self) -> bool:
        return self.report.success


def _max_targets(cfg: ScenarioConfig, pipeline: Pipeline) -> int:
    if pipeline is Pipeline.FULL_NETFILTER:
        return max(cfg.ports_per_query, cfg.ack_values_per_query)
    return cfg.ports_per_query


def run_experiment(cfg: ScenarioConfig, pipeline: Pipeline) -> ExperimentResult:
    """Execute one scan pipeline to completion and verify the result."""
    if cfg.host_model not in _PIPELINE_MODELS[pipeline]:
        raise ConfigError(
            f"pipeline {pipeline.value} cannot run against victim_model={cfg.victim_model}"
        )
    scn = build_scenario(cfg)
    engine = AttackEngine(scn)
    engine.warm_up()
    try:
        if cfg.port_known:
            engine.assume_port(scn.truth.port)
        else:
            engine.find_ephemeral_port("range")
        if engine.port is not None:
            if pipeline is Pipeline.FULL_RFC793:
                engine.search_inwindow_seq_rfc793()
                engine.binary_search_peer_sndnxt()
                engine.binary_search_victim_sndnxt_rfc793()
            elif pipeline is Pipeline.FULL_NETFILTER:
                engine.search_acceptable_ack_netfilter()
                engine.binary_search_victim_sndnxt_netfilter()
                if cfg.data_probe:
                    engine.probe_peer_sndnxt_data()
    except ScanFailed:
        engine.failed = True
    report = engine.report(scn.truth)
    return ExperimentResult(
        cfg=cfg, pipeline=pipeline, report=report, series=engine.series, scenario=scn
    )


def sweep(cfg: ScenarioConfig, seeds: list[int], pipeline: Pipeline = Pipeline.PORT_ONLY) -> dict:
    """Run independent instances over seeds and aggregate the outcomes."""
    if not seeds:
        raise ConfigError("sweep requires at least one seed")
    results = []
    for seed in sorted(seeds):
        results.append(run_experiment(replace(cfg, seed=seed), pipeline))
    reports = [r.report for r in results]
    return {
        "results": results,
        "seeds": sorted(seeds),
        "success_rate": sum(r.success for r in reports) / len(reports),
        "mean_queries": sum(r.queries for r in reports) / len(reports),
        "max_queries": max(r.queries for r in reports),
        "mean_spoofed_segments": sum(r.spoofed_segments for r in reports) / len(reports),
        "max_spoofed_segments": max(r.spoofed_segments for r in reports),
    }


def _fmt(value) -> str:
    if value is None:
        return ""
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return f"{value:.6f}"
    return str(value)


def write_summary_csv(result: ExperimentResult, path: Path) -> None:
    """One row per scan stage plus a total row, in the table column layout."""
    report = result.report
    max_targets = _max_targets(result.cfg, result.pipeline)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(SUMMARY_HEADER)
        for stage in report.stages:
            writer.writerow(
                [
                    stage.name,
                    report.scenario,
                    _fmt(stage.sim_time_s),
                    stage.queries,
                    stage.pings,
                    max_targets,
                    stage.spoofed_segments,
                    stage.reflected_segments,
                    _fmt(report.success),
                ]
            )
        writer.writerow(
            [
                "total",
                report.scenario,
                _fmt(report.scan_time_s),
                report.queries,
                report.pings,
                max_targets,
                report.spoofed_segments,
                report.reflected_segments,
                _fmt(report.success),
            ]
        )


def emit_series_csv(series: list[SeriesPoint], path: Path) -> None:
    """Per-query series for plotting: probed value, avg RTT, loss rate."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(SERIES_HEADER)
        for point in series:
            writer.writerow(
                [
                    point.query_id,
                    point.stage,
                    point.x_lo,
                    point.x_hi,
                    _fmt(point.avg_rtt_s),
                    _fmt(point.loss_rate),
                    point.classification,
                ]
            )


def write_outputs(result: ExperimentResult, out_dir: Path, prefix: str = "run") -> list[Path]:
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = []
    summary = out_dir / f"{prefix}-summary.csv"
    write_summary_csv(result, summary)
    paths.append(summary)
    series = out_dir / f"{prefix}-series.csv"
    emit_series_csv(result.series, series)
    paths.append(series)
    if result.cfg.event_log:
        events = out_dir / f"{prefix}-events.csv"
        result.scenario.sim.log.write_csv(events)
        paths.append(events)
    return paths
