from math import comb

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from plcmac.config import INFINITE, ProtocolConfig
from plcmac.stage import (
    bc_simplified,
    busy_jump_cdf,
    jump_cdf,
    stage_curves,
    stage_oracle,
    stage_point,
    tau_at_zero,
)


def brute_x(k, d, p):
    return sum(comb(k, j) * p**j * (1 - p) ** (k - j) for j in range(d + 1, k + 1))


@pytest.mark.parametrize(
    "args, expected", [((8, 0, 0.0, 5), 0.0), ((8, 0, 1.0, 5), 1.0), ((8, 1, 0.5, 2), 0.25)]
)
def test_busy_jump_cdf_examples(args, expected):
    assert busy_jump_cdf(*args) == pytest.approx(expected, abs=1e-15)


def test_busy_jump_cdf_infinite_and_small_k():
    assert busy_jump_cdf(16, INFINITE, 0.9, 15) == 0.0
    assert busy_jump_cdf(16, 5, 0.9, 5) == 0.0
    with pytest.raises(ValueError):
        busy_jump_cdf(8, 0, 0.5, 8)


@settings(max_examples=60, deadline=None)
@given(
    cw=st.integers(2, 64),
    d=st.integers(0, 40),
    p=st.floats(0, 1),
)
def test_jump_cdf_matches_binomial_sum(cw, d, p):
    x = jump_cdf(cw, d, p)[0]
    de = min(d, cw - 1)
    ks = range(de + 1, cw)
    assert x.size == len(ks)
    for k, v in zip(ks, x):
        assert v == pytest.approx(brute_x(k, d, p), abs=1e-12)
    assert np.all(np.diff(x) >= -1e-15) and np.all((x >= 0) & (x <= 1))


def test_log_space_path_matches_linear():
    p = np.array([0.0, 0.01, 0.3, 0.9, 1.0])
    for d in (0, 5, 40):
        from scipy.stats import binom

        x = jump_cdf(2000, d, p)
        ks = np.arange(d + 1, 2000)
        ref = binom.sf(d, ks[None, :], p[:, None])
        assert np.allclose(x, ref, atol=1e-10)


def test_stage_point_endpoints(ca1):
    s = stage_point(ca1, 0, 0.0)
    assert s.bc == pytest.approx(4.5, abs=1e-12)
    assert s.tau == pytest.approx(2 / 9, abs=1e-12)
    assert s.beta == 0.0
    assert s.big_b == pytest.approx(3.5, abs=1e-12)
    s = stage_point(ca1, 0, 1.0)
    assert s.big_b == pytest.approx(7.0, abs=1e-12)
    assert s.tau == pytest.approx(1 / 8, abs=1e-12)


@settings(max_examples=80, deadline=None)
@given(cw=st.integers(2, 64), d=st.one_of(st.none(), st.integers(0, 70)), p=st.floats(0, 1))
def test_stage_invariants(cw, d, p):
    c = stage_curves(cw, d, p)
    bc, t, tau, beta, big_b = (float(a[0]) for a in (c.bc, c.t, c.tau, c.beta, c.big_b))
    assert tau == pytest.approx(t / bc, rel=1e-12)
    assert beta == pytest.approx((1 - t) / bc, abs=1e-12)
    assert tau + beta == pytest.approx(1 / bc, rel=1e-12)
    assert big_b == pytest.approx(1 / tau - 1, rel=1e-9)
    assert bc == pytest.approx(float(bc_simplified(cw, d, p)[0]), abs=1e-12)


def test_infinite_deferral_never_jumps():
    c = stage_curves(16, INFINITE, np.linspace(0, 1, 11))
    assert np.all(c.beta == 0)
    assert np.allclose(c.tau, 2 / 17)
    assert tau_at_zero(16) == 2 / 17


def test_stage_point_validation(ca1):
    with pytest.raises(IndexError):
        stage_point(ca1, 4, 0.5)
    with pytest.raises(ValueError):
        stage_point(ca1, 0, 1.5)


def test_oracle_needs_enough_replications():
    with pytest.raises(ValueError):
        stage_oracle(8, 0, 0.5, 100, 0)


def test_oracle_degenerate_cases():
    est = stage_oracle(8, 0, 0.0, 10**5, 1)
    assert abs(est.tau - 2 / 9) < 3 * est.tau_se + 1e-12
    est = stage_oracle(8, INFINITE, 0.7, 10**5, 2)
    assert est.beta == 0.0


@pytest.mark.parametrize("cw, d, p, seed", [(4, 1, 0.5, 3), (16, 3, 0.4, 4)])
def test_oracle_matches_closed_form(cw, d, p, seed):
    cfg = ProtocolConfig((cw,), (d,))
    s = stage_point(cfg, 0, p)
    est = stage_oracle(cw, d, p, 10**6, seed)
    assert abs(est.tau - s.tau) < 3 * est.tau_se
    assert abs(est.beta - s.beta) < 3 * est.beta_se
    assert abs(est.bc - s.bc) < 3 * est.bc_se
