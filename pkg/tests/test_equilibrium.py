import numpy as np
import pytest

from plcmac.config import TimingParams, builtin_config, satisfies_cond
from plcmac.dynamics import drift, sample_convergence_grid
from plcmac.equilibrium import (
    CondViolationError,
    phi,
    pe_upper,
    scan_fixed_points,
    solve_equilibrium,
    tau_of_pe,
)
from plcmac.stage import stage_curves


def damped_tau(cw, d, pe, iters=20000):
    # independent scalar solver: damped fixed-point iteration
    tau = 0.1
    for _ in range(iters):
        p = min(1.0, max(0.0, 1 - pe / (1 - tau)))
        tau = 0.5 * tau + 0.5 * float(stage_curves(cw, d, p).tau[0])
    return tau


def test_tau_of_pe_endpoints(ca1):
    tau, p = tau_of_pe(ca1, 0, 1 - 2 / 9)
    assert tau == pytest.approx(2 / 9, abs=1e-12) and p == pytest.approx(0, abs=1e-12)
    tau, p = tau_of_pe(ca1, 0, 0.0)
    assert tau == pytest.approx(1 / 8, abs=1e-12) and p == 1.0


def test_tau_of_pe_vs_damped_iteration(ca1):
    tau, p = tau_of_pe(ca1, 1, 0.5)
    assert tau == pytest.approx(damped_tau(16, 1, 0.5), abs=1e-10)
    assert p == pytest.approx(1 - 0.5 / (1 - tau), abs=1e-12)


def test_tau_of_pe_domain(ca1):
    with pytest.raises(ValueError):
        tau_of_pe(ca1, 0, 1.2)


def test_phi_boundary_and_monotone(ca1):
    hi = pe_upper(ca1)
    assert phi(ca1, 10, 0.0) > 0
    assert phi(ca1, 10, hi) < hi
    vals = phi(ca1, 10, np.linspace(0, hi, 200))
    assert np.all(np.diff(vals) < 0)


def test_single_station(ca1):
    t = TimingParams()
    sol = solve_equilibrium(ca1, 1, t)
    tau0 = 2 / 9
    assert sol.pe == pytest.approx(1 - tau0, abs=1e-12)
    assert sol.p[0] == pytest.approx(0, abs=1e-9)
    # empty stages keep the busy probability the idle-probability relation gives them
    assert all(p > 0 for p in sol.p[1:])
    assert np.allclose(sol.n_hat, [1, 0, 0, 0], atol=1e-9)
    s = tau0 * t.frame_d / (tau0 * t.t_success + (1 - tau0) * t.slot_sigma)
    assert sol.throughput == pytest.approx(s, rel=1e-9)
    assert sol.gamma == pytest.approx(0, abs=1e-9)


@pytest.mark.parametrize("n", [2, 5, 10, 20, 50, 200])
def test_solution_invariants(ca1, n):
    sol = solve_equilibrium(ca1, n)
    assert sum(sol.n_hat) == pytest.approx(n, abs=1e-9)
    assert sol.pe + sol.p_success + sol.p_collision == pytest.approx(1, abs=1e-9)
    for p, tau in zip(sol.p, sol.tau):
        assert p == pytest.approx(1 - sol.pe / (1 - tau), abs=1e-12)
    assert sol.residual < 1e-12
    assert 0 < sol.throughput < 1 and 0 <= sol.gamma <= 1
    assert np.max(np.abs(drift(ca1, np.array(sol.n_hat)))) < 1e-9


def test_known_values(ca1):
    sol = solve_equilibrium(ca1, 10)
    assert sol.pe == pytest.approx(0.631771, abs=1e-6)
    assert sol.throughput == pytest.approx(0.671786, abs=1e-6)


def test_cond_violation(ca3, counterexample):
    with pytest.raises(CondViolationError, match="scan_fixed_points"):
        solve_equilibrium(ca3, 5)
    with pytest.raises(CondViolationError):
        solve_equilibrium(counterexample, 10)


def test_scan_ca1(ca1):
    roots = scan_fixed_points(ca1, 10, 1000)
    assert len(roots) == 1
    assert roots[0].pe == pytest.approx(solve_equilibrium(ca1, 10).pe, abs=1e-9)
    roots = scan_fixed_points(ca1, 1, 1000)
    assert len(roots) == 1
    _, p0 = tau_of_pe(ca1, 0, roots[0].pe)
    assert p0 == pytest.approx(0, abs=1e-9)


def test_scan_grid_minimum(ca1):
    with pytest.raises(ValueError):
        scan_fixed_points(ca1, 10, 50)


def test_scan_counterexample(counterexample):
    roots = [r.pe for r in scan_fixed_points(counterexample, 10, 10000)]
    assert roots == pytest.approx([0.0585, 0.2087, 0.5202], abs=1e-3)


def test_grid_configs_have_unique_root():
    for cfg in sample_convergence_grid(6, seed=11):
        assert satisfies_cond(cfg)
        for n in (2, 5, 10, 20, 50):
            roots = scan_fixed_points(cfg, n, 400)
            assert len(roots) == 1, (cfg, n)
            assert roots[0].pe == pytest.approx(solve_equilibrium(cfg, n).pe, abs=1e-9)
            vals = phi(cfg, n, np.linspace(0, pe_upper(cfg), 200))
            assert np.all(np.diff(vals) < 0)
