"""Transient drift iteration, the mean-field ODE limit and convergence probes."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from . import _kernels
from .config import ProtocolConfig, satisfies_cond

_TAIL = 200


def kernel_stages(config: ProtocolConfig):
    """Distinct (cw, effective d) arrays and the stage -> type index."""
    uniq, index = config.distinct_stages()
    cw = np.array([c for c, _ in uniq], dtype=np.int64)
    d = np.array([c if dd is None else min(dd, c) for c, dd in uniq], dtype=np.int64)
    return cw, d, index


def _as_state(config: ProtocolConfig, n) -> np.ndarray:
    n = np.asarray(n, dtype=float)
    if n.shape != (config.m,):
        raise ValueError(f"state must have {config.m} entries, got shape {n.shape}")
    if np.any(n < 0):
        raise ValueError("station counts must be non-negative")
    return n


@dataclass(frozen=True)
class StageRates:
    pe: float
    tau: np.ndarray
    p: np.ndarray
    beta: np.ndarray


def solve_pe_given_n(config: ProtocolConfig, n) -> StageRates:
    """Self-consistent idle probability and per-stage rates at occupancy ``n``."""
    n = _as_state(config, n)
    if n.sum() < 1:
        raise ValueError("need at least one station in total")
    cw, d, index = kernel_stages(config)
    f, pe, tau, p, beta = _kernels.drift_at(n, cw, d, index)
    return StageRates(pe=float(pe), tau=tau, p=p, beta=beta)


def drift(config: ProtocolConfig, n) -> np.ndarray:
    """Expected change of the per-stage station counts over one slot."""
    n = _as_state(config, n)
    cw, d, index = kernel_stages(config)
    return _kernels.drift_at(n, cw, d, index)[0]


@dataclass
class TransientResult:
    steps: np.ndarray
    n: np.ndarray
    pe: np.ndarray
    residual: np.ndarray
    converged: bool
    n_steps: int
    pe_tail: np.ndarray

    @property
    def final(self) -> np.ndarray:
        return self.n[-1]

    @property
    def final_residual(self) -> float:
        return float(self.residual[-1])

    def write_csv(self, path) -> None:
        m = self.n.shape[1]
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["step"] + [f"n_{i}" for i in range(m)] + ["pe", "residual"])
            for s, row, pe, r in zip(self.steps, self.n, self.pe, self.residual):
                w.writerow([int(s)] + [repr(float(x)) for x in row] + [repr(float(pe)), repr(float(r))])


def iterate_transient(
    config: ProtocolConfig,
    n0,
    max_steps: int = 100_000,
    eps: float = 1e-8,
    stride: Optional[int] = None,
) -> TransientResult:
    """Run ``n(t+1) = n(t) + F(n(t))`` from ``n0``.

    Stops once ``max|F| < eps``.  Non-convergence is reported, not raised:
    configurations with several equilibria can cycle.  Every
    ``ceil(max_steps / 5000)``-th state is kept unless ``stride`` is given.
    """
    n0 = _as_state(config, n0)
    if stride is None:
        stride = max(1, math.ceil(max_steps / 5000))
    cw, d, index = kernel_stages(config)
    steps, n, pe, res, converged, n_steps, tail = _kernels.run_transient(
        n0, cw, d, index, int(max_steps), float(eps), int(stride), _TAIL
    )
    return TransientResult(steps, n, pe, res, bool(converged), int(n_steps), tail)


@dataclass(frozen=True)
class MeanFieldState:
    y: np.ndarray
    rho: float
    time: float


def mean_field_rho(config: ProtocolConfig, y) -> float:
    y = np.asarray(y, dtype=float)
    if y.shape != (config.m,) or np.any(y < -1e-12) or abs(y.sum() - 1.0) > 1e-9:
        raise ValueError("y must be a point of the probability simplex")
    cw, d, index = kernel_stages(config)
    return float(_kernels.mean_field_rho(y, cw, d, index))


class IntegrationError(RuntimeError):
    pass


@dataclass
class OdeTrajectory:
    times: np.ndarray
    y: np.ndarray
    rho: np.ndarray

    @property
    def final(self) -> MeanFieldState:
        return MeanFieldState(self.y[-1], float(self.rho[-1]), float(self.times[-1]))


def integrate_ode(config: ProtocolConfig, y0, t_end: float, dt: float = 0.5) -> OdeTrajectory:
    """Fixed-step RK4 integration of the mean-field limit.

    A step that drives any fraction below -1e-9 is retried with half the
    step, at most 10 times.
    """
    y = np.asarray(y0, dtype=float)
    if y.shape != (config.m,) or abs(y.sum() - 1) > 1e-9 or np.any(y < 0):
        raise ValueError("y0 must be a point of the probability simplex")
    if not dt > 0:
        raise ValueError("dt must be positive")
    cw, d, index = kernel_stages(config)

    def rhs(v):
        return _kernels.ode_rhs(v, cw, d, index)

    times = [0.0]
    ys = [y.copy()]
    dy, rho = rhs(y)
    rhos = [rho]
    t = 0.0
    while t < t_end - 1e-12:
        h = min(dt, t_end - t)
        for _ in range(11):
            k1 = dy
            k2 = rhs(y + 0.5 * h * k1)[0]
            k3 = rhs(y + 0.5 * h * k2)[0]
            k4 = rhs(y + h * k3)[0]
            y_new = y + h / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
            if np.all(y_new >= -1e-9):
                break
            h *= 0.5
        else:
            raise IntegrationError(f"negative fractions at t={t} even with dt={h}")
        t += h
        y = y_new
        dy, rho = rhs(y)
        times.append(t)
        ys.append(y.copy())
        rhos.append(rho)
    return OdeTrajectory(np.array(times), np.array(ys), np.array(rhos))


def random_simplex_point(rng: np.random.Generator, n_stations: int, m: int) -> np.ndarray:
    """Uniform draw from the integer compositions of ``n_stations`` into ``m`` parts."""
    bars = np.sort(rng.choice(n_stations + m - 1, size=m - 1, replace=False))
    edges = np.concatenate([[-1], bars, [n_stations + m - 1]])
    return (np.diff(edges) - 1).astype(float)


@dataclass
class ProbeSummary:
    trials: int = 0
    converged: int = 0
    max_steps_used: int = 0
    failures: list = field(default_factory=list)  # (config index, trial, final residual)
    per_config: list = field(default_factory=list)  # (converged, trials) per config


def stability_probe(
    configs: Sequence[ProtocolConfig],
    trials_per_config: int,
    n_stations: int = 20,
    eps: float = 1e-8,
    seed=0,
    max_steps: int = 100_000,
) -> ProbeSummary:
    """Run the drift map from random integer initial states and tally convergence."""
    summary = ProbeSummary()
    if trials_per_config < 1:
        return summary
    children = np.random.SeedSequence(seed).spawn(len(configs))
    for ci, (config, ss) in enumerate(zip(configs, children)):
        ok = 0
        for trial, trial_ss in enumerate(ss.spawn(trials_per_config)):
            rng = np.random.default_rng(trial_ss)
            n0 = random_simplex_point(rng, n_stations, config.m)
            res = iterate_transient(config, n0, max_steps=max_steps, eps=eps, stride=max_steps)
            summary.trials += 1
            summary.max_steps_used = max(summary.max_steps_used, res.n_steps)
            if res.converged:
                ok += 1
            else:
                summary.failures.append((ci, trial, res.final_residual))
        summary.converged += ok
        summary.per_config.append((ok, trials_per_config))
    return summary


CONVERGENCE_CW = (8, 16, 32, 64)
CONVERGENCE_M = (3, 4, 5, 6)
CONVERGENCE_D = (0, 1, 2, 3, 4, 5, 6, 7, 8, 9, 10, 15, 20, 25, 30)


def sample_convergence_grid(count: int, seed=0, require_cond: bool = True) -> list[ProtocolConfig]:
    """Random configurations from the window/deferral grid used for convergence studies."""
    rng = np.random.default_rng(seed)
    out: list[ProtocolConfig] = []
    seen = set()
    while len(out) < count:
        m = int(rng.choice(CONVERGENCE_M))
        cw = tuple(sorted(int(c) for c in rng.choice(CONVERGENCE_CW, size=m)))
        dc = tuple(int(x) for x in rng.choice(CONVERGENCE_D, size=m))
        config = ProtocolConfig(cw, dc)
        if config in seen:
            continue
        if require_cond and not satisfies_cond(config):
            continue
        seen.add(config)
        out.append(config)
    return out
