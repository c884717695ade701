"""Reconstructed decoupling-assumption (D.A.) model.

Every station is assumed to see one time-invariant busy probability ``p``,
whatever its stage.  The stage quantities are the same as in the coupled
model; only the coupling differs.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy.optimize import brentq

from .config import ProtocolConfig, TimingParams
from .equilibrium import BracketError, k_factors, occupancy
from .stage import stage_curves

LABEL = "reconstructed D.A."


@dataclass(frozen=True)
class DaSolution:
    n_stations: int
    p: float
    tau_avg: float
    stage_occupancy: tuple[float, ...]
    p_idle: float
    p_success: float
    throughput: float
    gamma: float


def _single_station(config: ProtocolConfig, p: float):
    """Time fraction per stage and mean attempt rate of one station at busy probability p."""
    rows = [stage_curves(cw, d, p) for cw, d in (config.stage(i) for i in range(config.m))]
    tau = np.array([r.tau[0] for r in rows])[:, None]
    beta = np.array([r.beta[0] for r in rows])[:, None]
    pp = np.full_like(tau, p)
    pi = occupancy(k_factors(tau, pp, beta), 1.0)[:, 0]
    return pi, float(pi @ tau[:, 0])


def solve_da(
    config: ProtocolConfig,
    n_stations: int,
    timing: Optional[TimingParams] = None,
    tol: float = 1e-13,
) -> DaSolution:
    """Fixed point ``p = 1 - (1 - tau_avg(p))**(N-1)``."""
    if n_stations < 1:
        raise ValueError("need at least one station")
    timing = timing or TimingParams()

    def g(p):
        return 1.0 - (1.0 - _single_station(config, p)[1]) ** (n_stations - 1) - p

    if n_stations == 1:
        p = 0.0
    else:
        g0, g1 = g(0.0), g(1.0)
        if not (g0 >= 0.0 >= g1):
            raise BracketError(f"D.A. fixed point not bracketed: g(0)={g0}, g(1)={g1}")
        p = brentq(g, 0.0, 1.0, xtol=tol, rtol=4 * np.finfo(float).eps, maxiter=500)
    pi, tau_avg = _single_station(config, p)
    p_idle = (1.0 - tau_avg) ** n_stations
    p_s = n_stations * tau_avg * (1.0 - tau_avg) ** (n_stations - 1)
    p_c = max(0.0, 1.0 - p_idle - p_s)
    return DaSolution(
        n_stations=n_stations,
        p=float(p),
        tau_avg=tau_avg,
        stage_occupancy=tuple(map(float, pi)),
        p_idle=p_idle,
        p_success=p_s,
        throughput=float(timing.throughput(p_s, p_c, p_idle)),
        gamma=float(p),
    )
