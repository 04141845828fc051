"""Experiment battery: the seeded SEEK-vs-greedy comparison sweeps.

Three run families mirror the testbed evaluation:

* ``lifetime``   — sessions stream until the first node dies; metric is the
                   network lifetime (first-death time) plus the minimum
                   residual-energy curve.
* ``throughput`` — fixed-horizon runs; metrics are normalized throughput
                   (against the calibrated single-link goodput) and packets
                   delivered.
* ``delay``      — every session sends a fixed packet count; metric is the
                   mean per-packet delivery delay.

Each (mode, session-count, seed, metric) becomes one CSV row; plots show
seed means with one-sigma bars.
"""

from __future__ import annotations

import csv
import io
import itertools
import json
import statistics
from dataclasses import dataclass, field
from pathlib import Path

from .engine import run
from .metrics import MetricsLog
from .scenario import Scenario, canonical_grid, scenario_from_dict


@dataclass
class BatteryConfig:
    name: str = "grid-battery"
    seeds: list[int] = field(default_factory=lambda: list(range(20)))
    modes: tuple[str, ...] = ("seek", "greedy")
    session_counts: tuple[int, ...] = (1, 2, 3, 4)
    combinatorial: bool = True  # average every k-subset of the session set
    energy: float = 2.0
    interval: float = 0.1
    payload: int = 200
    lifetime_duration: float = 900.0
    throughput_seeds: int = 10
    throughput_energy: float = 1000.0  # death-free: isolates MAC saturation
    throughput_duration: float = 120.0
    delay_packets: int = 100
    delay_seeds: int = 10
    delay_duration: float = 900.0
    families: tuple[str, ...] = ("lifetime", "throughput", "delay")

    @classmethod
    def from_dict(cls, doc: dict) -> "BatteryConfig":
        known = set(cls.__dataclass_fields__)
        unknown = set(doc) - known
        if unknown:
            raise ValueError(f"unknown battery fields: {sorted(unknown)}")
        cfg = cls(**doc)
        cfg.modes = tuple(cfg.modes)
        cfg.session_counts = tuple(cfg.session_counts)
        cfg.families = tuple(cfg.families)
        return cfg

    def subsets(self, k: int, family: str = "lifetime") -> list[tuple]:
        """k-session subsets for one run family.

        The lifetime family averages every k-subset of the session set
        ("taken k at a time"); the throughput and delay families add
        sessions incrementally, mirroring how the testbed grew its load.
        """
        from .scenario import SESSION_CYCLE

        if self.combinatorial and family == "lifetime":
            return list(itertools.combinations(SESSION_CYCLE, k))
        return [tuple(SESSION_CYCLE[:k])]


def calibrate_link_throughput(energy: float = 1000.0, payload: int = 200,
                              interval: float = 0.1, duration: float = 60.0,
                              seed: int = 1) -> float:
    """Measure Th_l: goodput of a saturated two-node point-to-point link
    with the same PHY settings the grid runs use."""
    from .core import GeoPosition
    from .radio import LinkModel
    from .scenario import NodeSpec, Session

    sc = Scenario(name="calibration", seed=seed, duration=duration,
                  routing="seek", erc=1, link=LinkModel(range_m=1500.0),
                  nodes=[NodeSpec(0, GeoPosition(0.0, 0.0), energy),
                         NodeSpec(1, GeoPosition(1000.0, 0.0), energy)],
                  sessions=[Session(src=0, dst=1, payload=payload,
                                    interval=interval, duration=duration)])
    log = run(sc)
    if log.delivered_bits() == 0:
        raise RuntimeError("calibration run delivered nothing")
    return log.delivered_bits() / log.end_time


@dataclass
class BatteryRow:
    scenario: str
    family: str
    mode: str
    sessions: int
    seed: int
    metric: str
    value: float
    error: str = ""


def _lifetime_runs(cfg: BatteryConfig, rows: list[BatteryRow]) -> dict:
    """Sessions stream until the first node dies. These runs also yield the
    delivered-packet counts the SEEK-vs-greedy advantage is computed from:
    packets a network delivers before it loses its first node is the
    delivery metric that matches the lifetime framing."""
    logs = {}
    for mode in cfg.modes:
        for k in cfg.session_counts:
            for subset in cfg.subsets(k):
                for seed in cfg.seeds:
                    name = f"grid-{mode}-{k}s-" + "".join(a + b for a, b in subset)
                    try:
                        sc = canonical_grid(mode, seed=seed, energy=cfg.energy,
                                            duration=cfg.lifetime_duration,
                                            interval=cfg.interval,
                                            payload=cfg.payload,
                                            stop_at_first_death=True,
                                            session_pairs=subset)
                        log = run(sc)
                        rows.append(BatteryRow(name, "lifetime", mode, k, seed,
                                               "network_lifetime_s",
                                               log.network_lifetime()))
                        rows.append(BatteryRow(name, "lifetime", mode, k, seed,
                                               "packets_delivered",
                                               float(log.total_delivered())))
                        logs[(mode, k, subset, seed)] = log
                    except Exception as e:  # battery continues past bad rows
                        rows.append(BatteryRow(name, "lifetime", mode, k, seed,
                                               "network_lifetime_s", float("nan"),
                                               error=f"{type(e).__name__}: {e}"))
    return logs


def _throughput_runs(cfg: BatteryConfig, thl: float,
                     rows: list[BatteryRow]) -> None:
    """Death-free saturation runs for the normalized-throughput trend."""
    for mode in cfg.modes:
        for k in cfg.session_counts:
            for subset in cfg.subsets(k, "throughput"):
                for seed in cfg.seeds[:cfg.throughput_seeds]:
                    name = f"grid-{mode}-{k}s-" + "".join(a + b for a, b in subset)
                    try:
                        sc = canonical_grid(mode, seed=seed,
                                            energy=cfg.throughput_energy,
                                            duration=cfg.throughput_duration,
                                            interval=cfg.interval,
                                            payload=cfg.payload,
                                            session_pairs=subset)
                        log = run(sc)
                        rows.append(BatteryRow(name, "throughput", mode, k, seed,
                                               "normalized_throughput",
                                               log.normalized_throughput(thl)))
                    except Exception as e:
                        rows.append(BatteryRow(name, "throughput", mode, k, seed,
                                               "normalized_throughput",
                                               float("nan"),
                                               error=f"{type(e).__name__}: {e}"))


def _delay_runs(cfg: BatteryConfig, rows: list[BatteryRow]) -> None:
    for mode in cfg.modes:
        for k in cfg.session_counts:
            for subset in cfg.subsets(k, "delay"):
                for seed in cfg.seeds[:cfg.delay_seeds]:
                    name = f"grid-{mode}-{k}s-" + "".join(a + b for a, b in subset)
                    try:
                        sc = canonical_grid(mode, seed=seed, energy=cfg.energy,
                                            duration=cfg.delay_duration,
                                            interval=cfg.interval,
                                            payload=cfg.payload,
                                            count=cfg.delay_packets,
                                            session_pairs=subset)
                        log = run(sc)
                        rows.append(BatteryRow(name, "delay", mode, k, seed,
                                               "mean_delay_s", log.mean_delay()))
                    except Exception as e:
                        rows.append(BatteryRow(name, "delay", mode, k, seed,
                                               "mean_delay_s", float("nan"),
                                               error=f"{type(e).__name__}: {e}"))


def experiment_battery(cfg: BatteryConfig, out_dir: str | Path,
                       plots: bool = True) -> list[BatteryRow]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    rows: list[BatteryRow] = []
    thl = calibrate_link_throughput(payload=cfg.payload, interval=cfg.interval)
    (out / "calibration.json").write_text(
        json.dumps({"link_throughput_bps": thl}, indent=2) + "\n")

    logs = {}
    if "lifetime" in cfg.families:
        logs = _lifetime_runs(cfg, rows)
    if "throughput" in cfg.families:
        _throughput_runs(cfg, thl, rows)
    if "delay" in cfg.families:
        _delay_runs(cfg, rows)

    (out / "battery.csv").write_text(rows_to_csv(rows))
    if plots:
        render_plots(cfg, rows, logs, out)
    return rows


def rows_to_csv(rows: list[BatteryRow]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf)
    w.writerow(["scenario", "family", "mode", "sessions", "seed", "metric",
                "value", "error"])
    for r in rows:
        w.writerow([r.scenario, r.family, r.mode, r.sessions, r.seed,
                    r.metric, repr(r.value), r.error])
    return buf.getvalue()


def seed_means(rows: list[BatteryRow], family: str, metric: str,
               mode: str) -> dict[int, tuple[float, float]]:
    """{session_count: (mean, stdev)} over seeds, NaN rows skipped."""
    out = {}
    counts = sorted({r.sessions for r in rows if r.family == family})
    for k in counts:
        vals = [r.value for r in rows
                if r.family == family and r.metric == metric
                and r.mode == mode and r.sessions == k
                and r.value == r.value]
        if vals:
            out[k] = (statistics.mean(vals),
                      statistics.stdev(vals) if len(vals) > 1 else 0.0)
    return out


def delivered_gain_pct(rows: list[BatteryRow]) -> dict[int, float]:
    """Percent increase in delivered packets of SEEK over greedy, per
    session count (means over the lifetime-family runs)."""
    seek = seed_means(rows, "lifetime", "packets_delivered", "seek")
    greedy = seed_means(rows, "lifetime", "packets_delivered", "greedy")
    return {k: 100.0 * (seek[k][0] - greedy[k][0]) / greedy[k][0]
            for k in sorted(set(seek) & set(greedy)) if greedy[k][0] > 0}


def render_plots(cfg: BatteryConfig, rows: list[BatteryRow], logs: dict,
                 out: Path) -> None:
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    styles = {"seek": dict(color="tab:blue", marker="o"),
              "greedy": dict(color="tab:orange", marker="s")}

    def curve(ax, family, metric, ylabel):
        for mode in cfg.modes:
            means = seed_means(rows, family, metric, mode)
            if not means:
                continue
            ks = sorted(means)
            m = [means[k][0] for k in ks]
            e = [means[k][1] for k in ks]
            ax.errorbar(ks, m, yerr=e, label=mode.upper(), capsize=3,
                        **styles.get(mode, {}))
        ax.set_xlabel("number of sessions")
        ax.set_ylabel(ylabel)
        ax.set_xticks(list(cfg.session_counts))
        ax.grid(True, alpha=0.3)
        ax.legend()

    if any(r.family == "lifetime" for r in rows):
        fig, ax = plt.subplots(figsize=(6, 4))
        curve(ax, "lifetime", "network_lifetime_s", "network lifetime (s)")
        fig.tight_layout()
        fig.savefig(out / "lifetime_vs_sessions.png", dpi=120)
        plt.close(fig)

    if any(r.family == "throughput" for r in rows):
        fig, ax = plt.subplots(figsize=(6, 4))
        curve(ax, "throughput", "normalized_throughput",
              "normalized throughput")
        fig.tight_layout()
        fig.savefig(out / "throughput_vs_sessions.png", dpi=120)
        plt.close(fig)

        gains = delivered_gain_pct(rows)
        if gains:
            fig, ax = plt.subplots(figsize=(6, 4))
            ks = sorted(gains)
            ax.bar(ks, [gains[k] for k in ks], color="tab:green", width=0.5)
            ax.set_xlabel("number of sessions")
            ax.set_ylabel("packets delivered: SEEK gain over greedy (%)")
            ax.set_xticks(ks)
            ax.grid(True, axis="y", alpha=0.3)
            fig.tight_layout()
            fig.savefig(out / "delivered_gain_vs_sessions.png", dpi=120)
            plt.close(fig)

    if any(r.family == "delay" for r in rows):
        fig, ax = plt.subplots(figsize=(6, 4))
        curve(ax, "delay", "mean_delay_s", "mean per-packet delay (s)")
        fig.tight_layout()
        fig.savefig(out / "delay_vs_sessions.png", dpi=120)
        plt.close(fig)

    if logs:
        fig, ax = plt.subplots(figsize=(6, 4))
        k = max(cfg.session_counts)
        seed = cfg.seeds[0]
        subset = cfg.subsets(k, "lifetime")[0]
        for mode in cfg.modes:
            log = logs.get((mode, k, subset, seed))
            if log is None:
                continue
            ts = sorted({t for t, _, _ in log.energy_samples})
            curve_vals = [log.min_residual(t) for t in ts]
            ax.plot(ts, curve_vals, label=f"{mode.upper()}",
                    color=styles.get(mode, {}).get("color"))
        ax.set_xlabel("time (s)")
        ax.set_ylabel("minimum residual energy (J)")
        ax.grid(True, alpha=0.3)
        ax.legend()
        fig.tight_layout()
        fig.savefig(out / "min_residual_energy.png", dpi=120)
        plt.close(fig)
