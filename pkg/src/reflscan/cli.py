"""Command-line entry points: run one experiment, sweep seeds, or rebuild tables.

Exit codes: 0 on success, 1 when a scan fails to recover the secrets,
2 for configuration errors.
"""

from __future__ import annotations

import argparse
import sys
from dataclasses import replace
from pathlib import Path

from .harness import Pipeline, run_experiment, sweep, write_outputs
from .scenario import ConfigError, ScenarioConfig, builtin_scenarios, load_scenario

_PIPELINES = {p.value: p for p in Pipeline}

EXIT_OK = 0
EXIT_SCAN_FAILED = 1
EXIT_CONFIG_ERROR = 2


def _load(args) -> ScenarioConfig:
    cfg = load_scenario(args.config) if args.config else ScenarioConfig()
    if args.seed is not None:
        cfg = replace(cfg, seed=args.seed)
    cfg.validate()
    return cfg


def _cmd_run(args) -> int:
    cfg = _load(args)
    pipeline = _PIPELINES[args.pipeline]
    result = run_experiment(cfg, pipeline)
    report = result.report
    if args.out_dir:
        for path in write_outputs(result, Path(args.out_dir), prefix=f"seed{cfg.seed}"):
            print(f"wrote {path}")
    print(
        f"scenario={report.scenario} model={cfg.victim_model} seed={cfg.seed} "
        f"queries={report.queries} spoofed={report.spoofed_segments} "
        f"reflected={report.reflected_segments} sim_time={report.scan_time_s:.1f}s "
        f"success={report.success}"
    )
    if report.inferred_port is not None:
        print(f"inferred ephemeral port: {report.inferred_port}")
    if report.inferred_victim_snd_nxt is not None:
        print(f"inferred victim SND.NXT: {report.inferred_victim_snd_nxt}")
    if report.inferred_peer_snd_nxt is not None:
        print(f"inferred peer SND.NXT:   {report.inferred_peer_snd_nxt}")
    if report.session_corrupted:
        print("warning: the probed session was corrupted by an accepted data byte")
    return EXIT_OK if report.success else EXIT_SCAN_FAILED


def _cmd_sweep(args) -> int:
    cfg = _load(args)
    seeds = [int(s) for s in args.seeds.split(",") if s.strip()]
    stats = sweep(cfg, seeds, _PIPELINES[args.pipeline])
    if args.out_dir:
        out = Path(args.out_dir)
        for result in stats["results"]:
            write_outputs(result, out, prefix=f"seed{result.cfg.seed}")
    print(
        f"seeds={len(stats['seeds'])} success_rate={stats['success_rate']:.2f} "
        f"mean_queries={stats['mean_queries']:.1f} max_queries={stats['max_queries']} "
        f"mean_spoofed={stats['mean_spoofed_segments']:.0f}"
    )
    return EXIT_OK if stats["success_rate"] == 1.0 else EXIT_SCAN_FAILED


_TABLE_RUNS = [
    ("table1-idle", "idle-netfilter", Pipeline.PORT_ONLY),
    ("table1-download", "download-netfilter", Pipeline.PORT_ONLY),
    ("table1-upload", "upload-netfilter", Pipeline.PORT_ONLY),
    ("table2-idle", "idle-rfc793", Pipeline.FULL_RFC793),
    ("table3-idle", "idle-netfilter", Pipeline.FULL_NETFILTER),
    ("table3-download", "download-netfilter", Pipeline.FULL_NETFILTER),
    ("table3-upload", "upload-netfilter", Pipeline.FULL_NETFILTER),
]


def _cmd_tables(args) -> int:
    out = Path(args.out_dir)
    ok = True
    for prefix, scenario_name, pipeline in _TABLE_RUNS:
        cfg = load_scenario(scenario_name)
        if args.seed is not None:
            cfg = replace(cfg, seed=args.seed)
        if pipeline is not Pipeline.PORT_ONLY:
            cfg = replace(cfg, port_known=True)
        result = run_experiment(cfg, pipeline)
        write_outputs(result, out, prefix=prefix)
        print(
            f"{prefix}: queries={result.report.queries} "
            f"spoofed={result.report.spoofed_segments} "
            f"sim_time={result.report.scan_time_s:.1f}s success={result.report.success}"
        )
        ok = ok and result.report.success
    return EXIT_OK if ok else EXIT_SCAN_FAILED


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="reflscan",
        description="Simulated off-path TCP scans through a shared-queue congestion side channel",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="config file path or built-in scenario name")
        p.add_argument("--seed", type=int, default=None, help="override the scenario seed")
        p.add_argument("--out-dir", default=None, help="directory for CSV outputs")
        p.add_argument(
            "--pipeline",
            choices=sorted(_PIPELINES),
            default=Pipeline.PORT_ONLY.value,
            help="scan pipeline to execute",
        )

    run_p = sub.add_parser("run", help="run one experiment")
    common(run_p)
    run_p.set_defaults(fn=_cmd_run)

    sweep_p = sub.add_parser("sweep", help="run a batch of seeds")
    common(sweep_p)
    sweep_p.add_argument("--seeds", required=True, help="comma-separated seed list")
    sweep_p.set_defaults(fn=_cmd_sweep)

    tables_p = sub.add_parser("tables", help="reproduce the result tables at simulated scale")
    tables_p.add_argument("--out-dir", required=True)
    tables_p.add_argument("--seed", type=int, default=None)
    tables_p.set_defaults(fn=_cmd_tables)

    list_p = sub.add_parser("scenarios", help="list built-in scenario names")
    list_p.set_defaults(fn=lambda args: (print("\n".join(builtin_scenarios())), EXIT_OK)[1])
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG_ERROR


if __name__ == "__main__":
    sys.exit(main())
