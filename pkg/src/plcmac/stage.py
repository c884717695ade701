"""Per-stage renewal quantities as functions of the busy probability.

A station at stage ``i`` draws its backoff counter uniformly in
``{0, ..., CW_i - 1}`` and senses each slot busy with a fixed probability
``p``.  Everything here follows from the probability ``x_k`` of leaving the
stage through deferral expiry within ``k`` slots.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy.special import gammaln

from .config import ProtocolConfig

# Above this window size the jump probabilities are accumulated in log space.
LOG_SPACE_CW = 1024


def _effective_d(cw: int, d: Optional[int]) -> int:
    # d >= cw - 1 can never expire before the backoff counter does.
    return cw - 1 if d is None else min(int(d), cw - 1)


def jump_increments(cw: int, d: Optional[int], p) -> np.ndarray:
    """Probability that the deferral expiry happens exactly at slot ``k``.

    Returns an array of shape ``(len(p), cw - d - 1)`` whose column ``j``
    holds ``C(k-1, d) p**(d+1) (1-p)**(k-d-1)`` for ``k = d + 1 + j``.
    """
    p = np.atleast_1d(np.asarray(p, dtype=float))
    d = _effective_d(cw, d)
    ks = np.arange(d + 1, cw)
    if ks.size == 0:
        return np.zeros((p.size, 0))
    if cw <= LOG_SPACE_CW:
        # inc_{k+1} / inc_k = k / (k - d) * (1 - p)
        ratio = (ks[:-1] / (ks[:-1] - d))[None, :] * (1.0 - p)[:, None]
        steps = np.concatenate([np.ones((p.size, 1)), np.cumprod(ratio, axis=1)], axis=1)
        return p[:, None] ** (d + 1) * steps
    log_binom = gammaln(ks) - gammaln(d + 1) - gammaln(ks - d)
    with np.errstate(divide="ignore", invalid="ignore"):
        log_p = np.log(p)[:, None] * (d + 1)
        log_q = np.log1p(-p)[:, None] * (ks - d - 1)[None, :]
    log_q = np.where((ks - d - 1)[None, :] == 0, 0.0, log_q)
    return np.exp(log_binom[None, :] + log_p + log_q)


def jump_cdf(cw: int, d: Optional[int], p) -> np.ndarray:
    """``x_k`` for ``k = d+1 .. cw-1`` (rows follow ``p``)."""
    return np.minimum(np.cumsum(jump_increments(cw, d, p), axis=1), 1.0)


def busy_jump_cdf(cw: int, d: Optional[int], p: float, k: int) -> float:
    """P(Bin(k, p) > d): deferral expiry within ``k`` slots."""
    if not 0 <= k <= cw - 1:
        raise ValueError(f"k={k} outside 0..{cw - 1}")
    if d is None or k <= d:
        return 0.0
    return float(jump_cdf(k + 1, d, p)[0, -1])


@dataclass(frozen=True)
class StageCurves:
    """Stage quantities evaluated on an array of busy probabilities."""

    p: np.ndarray
    bc: np.ndarray
    t: np.ndarray
    tau: np.ndarray
    beta: np.ndarray
    big_b: np.ndarray


def stage_curves(cw: int, d: Optional[int], p) -> StageCurves:
    p = np.atleast_1d(np.asarray(p, dtype=float))
    de = _effective_d(cw, d)
    inc = jump_increments(cw, d, p)
    x = np.minimum(np.cumsum(inc, axis=1), 1.0)
    ks = np.arange(de + 1, cw, dtype=float)

    # expected slots in the stage: transmission at slot k+1 or expiry at slot j
    expiry_slot = np.cumsum(ks[None, :] * inc, axis=1)
    bc = ((ks + 1) * (1 - x) + expiry_slot).sum(axis=1) / cw + (de + 1) * (de + 2) / (2 * cw)
    t = (1 - x).sum(axis=1) / cw + (de + 1) / cw
    beta_num = x.sum(axis=1) / cw
    tau = t / bc
    beta = beta_num / bc
    big_b = (cw * (cw - 1) / 2 - ((cw - 1 - ks) * x).sum(axis=1)) / (cw - x.sum(axis=1))
    return StageCurves(p=p, bc=bc, t=t, tau=tau, beta=beta, big_b=big_b)


def bc_simplified(cw: int, d: Optional[int], p) -> np.ndarray:
    """Expected stage sojourn via ``(CW+1)/2 - sum_k sum_{j<=k} x_j / CW``."""
    x = jump_cdf(cw, d, p)
    return (cw + 1) / 2 - np.cumsum(x, axis=1).sum(axis=1) / cw


def tau_at_zero(cw: int) -> float:
    """Attempt probability when the medium is never busy."""
    return 2.0 / (cw + 1)


@dataclass(frozen=True)
class StagePoint:
    stage: int
    p: float
    x: np.ndarray
    bc: float
    t: float
    tau: float
    beta: float
    big_b: float


def stage_point(config: ProtocolConfig, stage: int, p: float) -> StagePoint:
    if not 0 <= stage < config.m:
        raise IndexError(f"stage {stage} outside 0..{config.m - 1}")
    if not 0.0 <= p <= 1.0:
        raise ValueError(f"p={p} outside [0, 1]")
    cw, d = config.stage(stage)
    curves = stage_curves(cw, d, p)
    return StagePoint(
        stage=stage,
        p=float(p),
        x=jump_cdf(cw, d, p)[0],
        bc=float(curves.bc[0]),
        t=float(curves.t[0]),
        tau=float(curves.tau[0]),
        beta=float(curves.beta[0]),
        big_b=float(curves.big_b[0]),
    )


@dataclass(frozen=True)
class OracleEstimate:
    replications: int
    bc: float
    bc_se: float
    t: float
    t_se: float
    tau: float
    tau_se: float
    beta: float
    beta_se: float


def stage_oracle(cw: int, d: Optional[int], p: float, replications: int, seed) -> OracleEstimate:
    """Monte-Carlo estimate of the stage renewal by direct slot simulation.

    Each replication draws a backoff counter, then walks slot by slot: a
    zero counter means a transmission (reward 1); otherwise the slot is busy
    with probability ``p``, and a busy slot with an exhausted deferral
    counter ends the stage without transmitting (reward 0).
    """
    if replications < 10_000:
        raise ValueError("stage_oracle needs at least 10**4 replications")
    rng = np.random.default_rng(seed)
    bc = rng.integers(0, cw, size=replications)
    dc = np.full(replications, -1 if d is None else d, dtype=np.int64)
    slots = np.zeros(replications, dtype=np.int64)
    reward = np.zeros(replications)
    alive = np.arange(replications)
    while alive.size:
        tx = bc[alive] == 0
        slots[alive] += 1
        reward[alive[tx]] = 1.0
        alive = alive[~tx]
        busy = rng.random(alive.size) < p
        if d is not None:
            expire = busy & (dc[alive] == 0)
            dc[alive[busy & ~expire]] -= 1
            alive = alive[~expire]
        bc[alive] -= 1

    s = slots.astype(float)
    n = float(replications)
    s_mean = s.mean()
    r_mean = reward.mean()
    tau = r_mean / s_mean
    beta = (1 - r_mean) / s_mean
    # delta-method standard errors for the ratio estimators
    tau_se = np.std(reward - tau * s) / (s_mean * np.sqrt(n))
    beta_se = np.std((1 - reward) - beta * s) / (s_mean * np.sqrt(n))
    return OracleEstimate(
        replications=replications,
        bc=s_mean,
        bc_se=s.std() / np.sqrt(n),
        t=r_mean,
        t_se=reward.std() / np.sqrt(n),
        tau=tau,
        tau_se=float(tau_se),
        beta=beta,
        beta_se=float(beta_se),
    )
