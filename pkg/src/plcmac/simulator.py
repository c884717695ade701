"""Slot-level simulation of saturated stations running the 1901 backoff.

Every contention slot is idle, a success, or a collision.  A station whose
backoff counter is zero transmits; everyone else counts the slot down, and
on a busy slot also counts down the deferral counter, jumping a stage
without transmitting when that counter is already exhausted.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import _kernels
from .config import ProtocolConfig, TimingParams


def _kernel_arrays(config: ProtocolConfig):
    cw = np.array(config.cw, dtype=np.int64)
    d = np.array([config.effective_deferral(i) for i in range(config.m)], dtype=np.int64)
    return cw, d


@dataclass
class SimulationReport:
    n_stations: int
    seed: int
    total_slots: int
    idle_slots: int
    success_slots: int
    collision_slots: int
    per_station: np.ndarray  # rows: (attempts, successes, collisions)
    deferral_jumps: int
    throughput: float
    gamma_est: float
    pe_trace: np.ndarray
    success_ids: np.ndarray
    run_lengths: dict
    stage_occupancy: np.ndarray  # time-averaged stations per stage
    pe_window: int = 500

    @property
    def idle_fraction(self) -> float:
        return self.idle_slots / self.total_slots

    def write_csv(self, out_dir) -> None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        with open(out / "summary.csv", "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(
                ["N", "seed", "slots", "throughput", "gamma", "idle_slots", "success_slots", "collision_slots"]
            )
            w.writerow(
                [
                    self.n_stations,
                    self.seed,
                    self.total_slots,
                    repr(self.throughput),
                    repr(self.gamma_est),
                    self.idle_slots,
                    self.success_slots,
                    self.collision_slots,
                ]
            )
        with open(out / "pe_trace.csv", "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["window_index", "pe"])
            for i, v in enumerate(self.pe_trace):
                w.writerow([i, repr(float(v))])
        with open(out / "success_ids.csv", "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["index", "station"])
            for i, s in enumerate(self.success_ids):
                w.writerow([i, int(s)])


def run_lengths(success_ids) -> dict[int, dict[int, int]]:
    """Histogram of consecutive-success run lengths, keyed by station."""
    ids = np.asarray(success_ids)
    out: dict[int, dict[int, int]] = {}
    if ids.size == 0:
        return out
    starts = np.flatnonzero(np.concatenate([[True], ids[1:] != ids[:-1]]))
    lengths = np.diff(np.concatenate([starts, [ids.size]]))
    for station, length in zip(ids[starts], lengths):
        hist = out.setdefault(int(station), {})
        hist[int(length)] = hist.get(int(length), 0) + 1
    return out


def run_simulation(
    config: ProtocolConfig,
    n_stations: int,
    timing: Optional[TimingParams] = None,
    total_slots: int = 1_000_000,
    seed: int = 0,
    pe_window: int = 500,
) -> SimulationReport:
    """Simulate ``total_slots`` contention slots; deterministic for a given seed."""
    if n_stations < 1 or total_slots < 1 or pe_window < 1:
        raise ValueError("n_stations, total_slots and pe_window must be positive")
    timing = timing or TimingParams()
    cw, d = _kernel_arrays(config)
    rng = np.random.default_rng(seed)
    counts, stats, ids, pe_trace, occ = _kernels.simulate(
        cw, d, int(n_stations), int(total_slots), rng, int(pe_window)
    )
    idle, succ, coll = (int(c) for c in counts)
    per_station = stats[:, :3].copy()
    attempts = per_station[:, 0].sum()
    return SimulationReport(
        n_stations=n_stations,
        seed=seed,
        total_slots=total_slots,
        idle_slots=idle,
        success_slots=succ,
        collision_slots=coll,
        per_station=per_station,
        deferral_jumps=int(stats[:, 3].sum()),
        throughput=float(timing.throughput(succ, coll, idle)),
        gamma_est=float(per_station[:, 2].sum() / attempts) if attempts else 0.0,
        pe_trace=pe_trace,
        success_ids=ids,
        run_lengths=run_lengths(ids),
        stage_occupancy=occ,
        pe_window=pe_window,
    )


@dataclass(frozen=True)
class RunSummary:
    """Aggregate over independent replications (order of inputs does not matter)."""

    n_stations: int
    seeds: tuple
    total_slots: int
    throughput: float
    throughput_stderr: float
    gamma: float
    gamma_stderr: float
    idle_fraction: float


def summarize_runs(reports: Sequence[SimulationReport]) -> RunSummary:
    if not reports:
        raise ValueError("no reports to summarize")
    reports = sorted(reports, key=lambda r: r.seed)
    s = np.array([r.throughput for r in reports])
    g = np.array([r.gamma_est for r in reports])
    k = len(reports)

    def stderr(v):
        return float(v.std(ddof=1) / np.sqrt(k)) if k > 1 else 0.0

    slots = sum(r.total_slots for r in reports)
    return RunSummary(
        n_stations=reports[0].n_stations,
        seeds=tuple(r.seed for r in reports),
        total_slots=slots,
        throughput=float(s.mean()),
        throughput_stderr=stderr(s),
        gamma=float(g.mean()),
        gamma_stderr=stderr(g),
        idle_fraction=sum(r.idle_slots for r in reports) / slots,
    )


def mean_stage_paths(
    config: ProtocolConfig, n_stations: int, slots: int, replications: int, seed: int = 0
) -> np.ndarray:
    """Average number of stations per stage after each slot, all starting at stage 0."""
    cw, d = _kernel_arrays(config)
    rng = np.random.default_rng(seed)
    return _kernels.stage_count_paths(cw, d, int(n_stations), int(slots), int(replications), rng)


@dataclass(frozen=True)
class Autocorrelation:
    values: np.ndarray  # lags 1..max_lag
    zero_variance: bool = False


def acf(success_ids, max_lag: int) -> Autocorrelation:
    """Biased sample autocorrelation of the station sequence at lags 1..max_lag."""
    x = np.asarray(success_ids, dtype=float) + 1.0
    if max_lag < 1 or x.size <= max_lag:
        raise ValueError("need 1 <= max_lag < len(success_ids)")
    xc = x - x.mean()
    denom = float(np.dot(xc, xc))
    if denom == 0.0:
        return Autocorrelation(np.zeros(max_lag), zero_variance=True)
    vals = np.array([np.dot(xc[:-k], xc[k:]) / denom for k in range(1, max_lag + 1)])
    return Autocorrelation(vals)


def jain_index(values) -> float:
    v = np.asarray(values, dtype=float)
    sq = float(np.dot(v, v))
    return float(v.sum() ** 2 / (v.size * sq)) if sq > 0 else 1.0


@dataclass(frozen=True)
class FairnessSummary:
    mean_run: dict  # station -> mean consecutive-success run length
    max_run: dict
    overall_mean_run: float
    jain_windows: np.ndarray
    mean_jain: float


def fairness_summary(success_ids, n_stations: Optional[int] = None, window: int = 50) -> FairnessSummary:
    """Run lengths of consecutive successes and Jain's index over windows of successes."""
    ids = np.asarray(success_ids, dtype=np.int64)
    if ids.size == 0:
        raise ValueError("empty success sequence")
    if n_stations is None:
        n_stations = int(ids.max()) + 1
    hist = run_lengths(ids)
    mean_run = {}
    max_run = {}
    total_len = 0
    total_runs = 0
    for station, h in sorted(hist.items()):
        runs = sum(h.values())
        length = sum(k * v for k, v in h.items())
        mean_run[station] = length / runs
        max_run[station] = max(h)
        total_len += length
        total_runs += runs
    n_win = ids.size // window
    jain = np.array(
        [
            jain_index(np.bincount(ids[i * window : (i + 1) * window], minlength=n_stations))
            for i in range(n_win)
        ]
    )
    return FairnessSummary(
        mean_run=mean_run,
        max_run=max_run,
        overall_mean_run=total_len / total_runs,
        jain_windows=jain,
        mean_jain=float(jain.mean()) if jain.size else float("nan"),
    )
