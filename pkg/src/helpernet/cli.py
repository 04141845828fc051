"""Command-line entry point.

Subcommands: ``validate`` (check a scenario without running), ``run`` (one
simulation, CSV + plots), ``battery`` (the SEEK-vs-greedy sweep), ``calibrate``
(measure the single-link goodput used for throughput normalization) and
``serve`` (wall-clock emulation with the JSON bridge socket).

Exit codes: 0 ok, 2 usage, 3 scenario invalid, 4 runtime failure.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from .battery import BatteryConfig, calibrate_link_throughput, experiment_battery
from .engine import World, run as run_scenario
from .scenario import ScenarioError, load_scenario

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_SCENARIO = 3
EXIT_RUNTIME = 4


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="helpernet",
        description="Emergency ad hoc network simulator and emulation host")
    sub = parser.add_subparsers(dest="command", required=True)

    p_val = sub.add_parser("validate", help="check a scenario file")
    p_val.add_argument("scenario", type=Path)

    p_run = sub.add_parser("run", help="run one scenario deterministically")
    p_run.add_argument("scenario", type=Path)
    p_run.add_argument("--routing", choices=("seek", "greedy"))
    p_run.add_argument("--seed", type=int)
    p_run.add_argument("--out", type=Path, default=Path("out"))
    p_run.add_argument("--no-plots", action="store_true")

    p_bat = sub.add_parser("battery", help="run the comparison battery")
    p_bat.add_argument("config", type=Path, nargs="?",
                       help="battery config JSON (defaults built in)")
    p_bat.add_argument("--out", type=Path, default=Path("battery-out"))
    p_bat.add_argument("--no-plots", action="store_true")

    p_cal = sub.add_parser("calibrate",
                           help="measure point-to-point link throughput")
    p_cal.add_argument("--out", type=Path,
                       help="write calibration JSON here")

    p_srv = sub.add_parser("serve", help="run the live emulation bridge")
    p_srv.add_argument("scenario", type=Path)
    p_srv.add_argument("--bind", default="127.0.0.1:8777",
                       help="websocket bind address (host:port)")
    p_srv.add_argument("--time-scale", type=float, default=1.0,
                       help="emulated seconds per wall second")
    p_srv.add_argument("--seed", type=int)
    return parser


def _write_run_outputs(log, out: Path, plots: bool) -> None:
    out.mkdir(parents=True, exist_ok=True)
    (out / "run_summary.csv").write_text(log.summary_csv())
    (out / "energy_series.csv").write_text(log.energy_csv())
    (out / "deliveries.csv").write_text(log.deliveries_csv())
    if plots:
        import matplotlib
        matplotlib.use("Agg")
        import matplotlib.pyplot as plt

        fig, ax = plt.subplots(figsize=(6, 4))
        nodes = sorted(log.initial_energy)
        for nid in nodes:
            pts = [(t, r) for t, n, r in log.energy_samples if n == nid]
            ax.plot([p[0] for p in pts], [p[1] for p in pts], label=str(nid))
        ax.set_xlabel("time (s)")
        ax.set_ylabel("residual energy (J)")
        ax.grid(True, alpha=0.3)
        if len(nodes) <= 10:
            ax.legend(title="node", fontsize=8)
        fig.tight_layout()
        fig.savefig(out / "residual_energy.png", dpi=120)
        plt.close(fig)


def main(argv: list[str] | None = None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return EXIT_USAGE if e.code not in (0, None) else EXIT_OK

    try:
        if args.command == "validate":
            load_scenario(args.scenario)
            print(f"{args.scenario}: ok")
            return EXIT_OK

        if args.command == "run":
            sc = load_scenario(args.scenario)
            log = run_scenario(sc, mode=args.routing, seed=args.seed)
            _write_run_outputs(log, args.out, plots=not args.no_plots)
            delivered, sent = log.total_delivered(), log.total_sent()
            print(f"{sc.name}: {delivered}/{sent} delivered, "
                  f"lifetime {log.network_lifetime():.1f} s, "
                  f"outputs in {args.out}/")
            return EXIT_OK

        if args.command == "battery":
            if args.config is not None:
                doc = json.loads(Path(args.config).read_text())
                cfg = BatteryConfig.from_dict(doc)
            else:
                cfg = BatteryConfig()
            rows = experiment_battery(cfg, args.out, plots=not args.no_plots)
            bad = [r for r in rows if r.error]
            print(f"battery: {len(rows)} rows ({len(bad)} failed) "
                  f"-> {args.out}/battery.csv")
            return EXIT_OK

        if args.command == "calibrate":
            thl = calibrate_link_throughput()
            print(f"link throughput: {thl:.1f} bit/s")
            if args.out:
                args.out.parent.mkdir(parents=True, exist_ok=True)
                args.out.write_text(json.dumps(
                    {"link_throughput_bps": thl}, indent=2) + "\n")
            return EXIT_OK

        if args.command == "serve":
            from .emu import serve_forever

            sc = load_scenario(args.scenario)
            host, _, port = args.bind.rpartition(":")
            serve_forever(sc, host or "127.0.0.1", int(port),
                          time_scale=args.time_scale, seed=args.seed)
            return EXIT_OK

    except ScenarioError as e:
        print(f"scenario error: {e}", file=sys.stderr)
        return EXIT_SCENARIO
    except (OSError, ValueError, RuntimeError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_RUNTIME
    except KeyboardInterrupt:
        return EXIT_OK
    return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
