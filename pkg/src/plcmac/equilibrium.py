"""Steady state of the coupled model: idle probability, stage occupancy, throughput."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .config import ConfigError, ProtocolConfig, TimingParams, check_cond_numeric
from .stage import stage_curves, tau_at_zero

# Inner solves must be tighter than the outer residual they feed.
INNER_TOL = 1e-15
_MAX_BISECT = 200
_ENDPOINT_TOL = 1e-12


class BracketError(RuntimeError):
    """A bisection bracket did not contain a sign change."""


class CondViolationError(ConfigError):
    """The configuration may admit several equilibria; use scan_fixed_points."""


def _clip_p(pe, tau):
    return np.clip(1.0 - pe / (1.0 - tau), 0.0, 1.0)


def _tau_of_pe(cw: int, d: Optional[int], pe: np.ndarray, tol: float = INNER_TOL):
    """Vectorized bisection for ``tau = tau_stage(1 - pe / (1 - tau))``."""
    pe = np.asarray(pe, dtype=float)
    lo_tau, hi_tau = stage_curves(cw, d, [1.0, 0.0]).tau
    if hi_tau - lo_tau <= 0.0:
        tau = np.full(pe.shape, hi_tau)
        return tau, _clip_p(pe, tau)

    def h(tau):
        return stage_curves(cw, d, _clip_p(pe, tau).ravel()).tau.reshape(pe.shape) - tau

    lo = np.full(pe.shape, lo_tau)
    hi = np.full(pe.shape, hi_tau)
    h_lo, h_hi = h(lo), h(hi)
    bad = (h_lo < -1e-14) | (h_hi > 1e-14)
    if np.any(bad):
        k = np.flatnonzero(bad.ravel())[0]
        raise BracketError(
            f"no sign change for tau(pe) at pe={pe.ravel()[k]!r}: "
            f"h({lo_tau})={h_lo.ravel()[k]:.3g}, h({hi_tau})={h_hi.ravel()[k]:.3g}"
        )
    for _ in range(_MAX_BISECT):
        if np.all(hi - lo <= tol):
            break
        mid = 0.5 * (lo + hi)
        up = h(mid) > 0
        lo = np.where(up, mid, lo)
        hi = np.where(up, hi, mid)
    tau = 0.5 * (lo + hi)
    return tau, _clip_p(pe, tau)


def tau_of_pe(config: ProtocolConfig, stage: int, pe: float) -> tuple[float, float]:
    """Attempt probability and busy probability of ``stage`` at idle probability ``pe``."""
    if not 0.0 <= pe <= 1.0:
        raise ValueError(f"pe={pe} outside [0, 1]")
    cw, d = config.stage(stage)
    tau, p = _tau_of_pe(cw, d, np.array([pe]))
    return float(tau[0]), float(p[0])


def pe_upper(config: ProtocolConfig) -> float:
    """Upper end of the idle-probability domain, ``1 - 2 / (CW_0 + 1)``."""
    return 1.0 - tau_at_zero(config.cw[0])


def _stage_arrays(config: ProtocolConfig, pe: np.ndarray):
    """tau, p, beta per stage (shape m x len(pe)); distinct stages solved once."""
    uniq, index = config.distinct_stages()
    solved = []
    for cw, d in uniq:
        tau, p = _tau_of_pe(cw, d, pe)
        beta = stage_curves(cw, d, p).beta
        solved.append((tau, p, beta))
    tau = np.stack([solved[j][0] for j in index])
    p = np.stack([solved[j][1] for j in index])
    beta = np.stack([solved[j][2] for j in index])
    return tau, p, beta


def k_factors(tau: np.ndarray, p: np.ndarray, beta: np.ndarray) -> np.ndarray:
    """Ratios between consecutive stage occupancies at a drift equilibrium.

    Arrays are indexed by stage along axis 0.  The last factor is infinite
    when the last stage never succeeds (``p = 1``).
    """
    m = tau.shape[0]
    k = np.ones_like(tau)
    with np.errstate(divide="ignore", invalid="ignore"):
        for i in range(1, m):
            inflow = tau[i - 1] * p[i - 1] + beta[i - 1]
            if i < m - 1:
                k[i] = inflow / (tau[i] + beta[i])
            else:
                k[i] = inflow / (tau[i] * (1.0 - p[i]))
    return k


def occupancy(k: np.ndarray, total: float) -> np.ndarray:
    """Stage occupancies proportional to the running products of ``k``."""
    with np.errstate(divide="ignore", invalid="ignore"):
        log_w = np.cumsum(np.log(k), axis=0)
        top = np.max(log_w, axis=0)
        stuck = np.isinf(top) & (top > 0)
        w = np.exp(log_w - np.where(stuck, 0.0, top))
        n = total * w / w.sum(axis=0)
    if np.any(stuck):
        # all mass ends in the last stage when it can never leave
        last = np.zeros_like(n)
        last[-1] = total
        n = np.where(stuck, last, n)
    return n


def _phi_details(config: ProtocolConfig, n_stations: float, pe):
    pe = np.atleast_1d(np.asarray(pe, dtype=float))
    tau, p, beta = _stage_arrays(config, pe)
    k = k_factors(tau, p, beta)
    n_hat = occupancy(k, float(n_stations))
    with np.errstate(divide="ignore", invalid="ignore"):
        log_terms = np.where(n_hat > 0, n_hat * np.log1p(-tau), 0.0)
    phi = np.exp(log_terms.sum(axis=0))
    return {"pe": pe, "tau": tau, "p": p, "beta": beta, "k": k, "n_hat": n_hat, "phi": phi}


def phi(config: ProtocolConfig, n_stations: float, pe):
    """Idle probability implied by the equilibrium occupancy at idle probability ``pe``."""
    scalar = np.ndim(pe) == 0
    out = _phi_details(config, n_stations, pe)["phi"]
    return float(out[0]) if scalar else out


@dataclass(frozen=True)
class EquilibriumSolution:
    n_stations: float
    pe: float
    p: tuple[float, ...]
    tau: tuple[float, ...]
    beta: tuple[float, ...]
    n_hat: tuple[float, ...]
    k_factors: tuple[float, ...]
    p_success: float
    p_collision: float
    throughput: float
    gamma: float
    residual: float

    def as_row(self) -> dict:
        row = {
            "N": self.n_stations,
            "pe": self.pe,
            "S": self.throughput,
            "gamma": self.gamma,
            "p_s": self.p_success,
            "p_c": self.p_collision,
        }
        for i, n in enumerate(self.n_hat):
            row[f"n_{i}"] = n
        return row


def equilibrium_at(
    config: ProtocolConfig, n_stations: float, pe: float, timing: Optional[TimingParams] = None
) -> EquilibriumSolution:
    """All steady-state quantities at a given fixed point ``pe``."""
    timing = timing or TimingParams()
    det = _phi_details(config, n_stations, pe)
    tau = det["tau"][:, 0]
    p = det["p"][:, 0]
    n_hat = det["n_hat"][:, 0]
    p_s = float(np.sum(n_hat * tau * (1 - p)))
    p_c = 1.0 - pe - p_s
    attempts = float(np.sum(n_hat * tau))
    gamma = float(np.sum(n_hat * tau * p)) / attempts
    return EquilibriumSolution(
        n_stations=n_stations,
        pe=float(pe),
        p=tuple(map(float, p)),
        tau=tuple(map(float, tau)),
        beta=tuple(map(float, det["beta"][:, 0])),
        n_hat=tuple(map(float, n_hat)),
        k_factors=tuple(map(float, det["k"][:, 0])),
        p_success=p_s,
        p_collision=p_c,
        throughput=float(timing.throughput(p_s, p_c, pe)),
        gamma=gamma,
        residual=abs(float(det["phi"][0]) - float(pe)),
    )


def solve_equilibrium(
    config: ProtocolConfig,
    n_stations: float,
    timing: Optional[TimingParams] = None,
    tol: float = 1e-12,
    max_iter: int = _MAX_BISECT,
    check_cond: bool = True,
) -> EquilibriumSolution:
    """Unique equilibrium by bisection on ``phi(pe) - pe``.

    Raises :class:`CondViolationError` when the configuration fails the
    numeric ``tau_i > tau_{i+1}`` check, since the root may not be unique.
    """
    if n_stations < 1:
        raise ValueError("need at least one station")
    if check_cond:
        failed = [v for v in check_cond_numeric(config) if not v.passed]
        if failed:
            where = ", ".join(f"{v.stage}->{v.stage + 1}" for v in failed[:3])
            if len(failed) > 3:
                where += f" and {len(failed) - 3} more"
            raise CondViolationError(
                f"attempt rates not decreasing at transition(s) {where}; "
                "equilibrium may not be unique, use scan_fixed_points"
            )
    lo, hi = 0.0, pe_upper(config)
    g_lo = phi(config, n_stations, lo) - lo
    g_hi = phi(config, n_stations, hi) - hi
    pe = None
    if abs(g_hi) < max(tol, _ENDPOINT_TOL):
        # a lone station sits exactly on the upper end of the domain
        pe = hi
    elif abs(g_lo) < tol:
        pe = lo
    elif g_lo < 0 or g_hi > 0:
        raise BracketError(f"phi(pe) - pe has no sign change: g(0)={g_lo}, g({hi})={g_hi}")
    for _ in range(max_iter if pe is None else 0):
        mid = 0.5 * (lo + hi)
        g = phi(config, n_stations, mid) - mid
        if abs(g) < tol:
            pe = mid
            break
        if not lo < mid < hi:
            break
        if g > 0:
            lo = mid
        else:
            hi = mid
    if pe is None:
        raise RuntimeError(f"equilibrium not within tol={tol} after {max_iter} bisections")
    return equilibrium_at(config, n_stations, pe, timing)


@dataclass(frozen=True)
class FixedPoint:
    pe: float
    residual: float


def scan_fixed_points(config: ProtocolConfig, n_stations: float, grid: int = 1000) -> list[FixedPoint]:
    """Every root of ``phi(pe) = pe`` found by grid bracketing and bisection."""
    if grid < 100:
        raise ValueError("grid must have at least 100 points")
    xs = np.linspace(0.0, pe_upper(config), grid)
    g = phi(config, n_stations, xs) - xs
    # a root on the domain boundary (one station) only shows up as rounding noise
    for end in (0, -1):
        if abs(g[end]) < _ENDPOINT_TOL:
            g[end] = 0.0
    roots = [float(x) for x in xs[g == 0.0]]
    idx = np.flatnonzero((g[:-1] * g[1:]) < 0)
    if idx.size:
        lo, hi = xs[idx].copy(), xs[idx + 1].copy()
        g_lo = g[idx]
        for _ in range(_MAX_BISECT):
            if np.all(hi - lo <= 1e-16):
                break
            mid = 0.5 * (lo + hi)
            gm = phi(config, n_stations, mid) - mid
            same = np.sign(gm) == np.sign(g_lo)
            lo = np.where(same, mid, lo)
            g_lo = np.where(same, gm, g_lo)
            hi = np.where(same, hi, mid)
        roots.extend(float(r) for r in 0.5 * (lo + hi))
    roots.sort()
    res = np.abs(phi(config, n_stations, np.array(roots)) - np.array(roots)) if roots else []
    return [FixedPoint(r, float(e)) for r, e in zip(roots, res)]
