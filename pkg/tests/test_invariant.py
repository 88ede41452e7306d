from __future__ import annotations

import numpy as np
import pytest

from rwre.environment import Environment, EnvironmentLaw
from rwre.invariant import (adjoint_harmonicity_check, adjoint_row_sums, adjoint_transition,
                            effective_matrix, harnack_ratio, log_survival, q_mean, rho_ball_ratio,
                            torus_invariant_measure, volume_doubling)
from rwre.observables import weight_component

from .oracles import dense_torus_rho


def test_constant_env_rho_is_one(const2):
    rho = torus_invariant_measure(const2, 8)
    assert np.allclose(rho.values, 1.0, atol=1e-14)


def test_rho_contract(env2, env3):
    for env, L in ((env2, 16), (env3, 6)):
        rho = torus_invariant_measure(env, L)
        assert rho.residual <= 1e-12
        assert rho.values.min() > 0
        assert abs(rho.values.mean() - 1) < 1e-13


def test_rho_matches_dense_eigenvector(env2):
    pts, ref = dense_torus_rho(env2, 4)
    rho = torus_invariant_measure(env2, 4)
    assert np.max(np.abs(rho.at(np.array(pts)) - ref)) <= 1e-10


def test_power_iteration_without_warm_start(env2):
    a = torus_invariant_measure(env2, 8, warm_start=False)
    b = torus_invariant_measure(env2, 8, warm_start=True)
    assert np.max(np.abs(a.values - b.values)) <= 1e-10
    with pytest.raises(ValueError):
        torus_invariant_measure(env2, 2)


def test_effective_matrix(const2, env2, env3):
    assert effective_matrix(const2, 8).a_bar == (0.5, 0.5)
    for env in (env2, env3):
        a = effective_matrix(env, 6).a_bar
        assert min(a) > 0 and abs(sum(a) - 1) < 1e-13
    eff = effective_matrix(env2, 8, psi=weight_component(0, 2))
    assert abs(eff.psi_bar - eff.a_bar[0]) < 1e-14


def test_q_mean_constant_env(const2):
    assert abs(q_mean(torus_invariant_measure(const2, 6), weight_component(1, 2)) - 0.5) < 1e-15


def test_rho_ball_ratio(const2, env2):
    rho1 = torus_invariant_measure(const2, 8)
    assert rho_ball_ratio(rho1, 1) == pytest.approx(1.0, abs=1e-14)
    assert rho_ball_ratio(rho1, 2) == pytest.approx(4 / 9, abs=1e-14)
    rho = torus_invariant_measure(env2, 32)
    vd = volume_doubling(rho, [2, 4, 8])
    assert all(0 < v < 1 for v in vd)
    with pytest.raises(ValueError):
        rho_ball_ratio(rho1, 6)


def test_adjoint_transition(const2, env2):
    rho1 = torus_invariant_measure(const2, 8)
    x, y = np.array([1, 1]), np.array([2, 1])
    assert adjoint_transition(const2, rho1, x, y) == pytest.approx(0.25, abs=1e-15)
    rho = torus_invariant_measure(env2, 12)
    assert np.max(np.abs(adjoint_row_sums(rho) - 1)) <= 10 * max(rho.residual, 1e-15) + 1e-12
    lhs = float(rho.at(x)) * adjoint_transition(env2, rho, x, y)
    rhs = float(rho.at(y)) * env2.periodized(12).weights(y)[0] / 2
    assert abs(lhs - rhs) < 1e-15
    assert adjoint_transition(env2, rho, x, np.array([3, 3])) == 0.0


def test_adjoint_harmonicity(const2, env2):
    rep = adjoint_harmonicity_check(const2, 16, 6, tol=1e-10)
    assert rep["residual"] <= 1e-10
    rep = adjoint_harmonicity_check(env2, 32, 12)
    assert rep["residual"] <= 1e-8 and rep["passed"]
    assert rep["source_error"] <= 1e-8


def test_harnack_ratio(env2):
    rho = torus_invariant_measure(env2, 72)
    ratios = [harnack_ratio(env2, rho, r) for r in (16, 24, 32)]
    assert all(r >= 1 for r in ratios)
    assert max(ratios) / min(ratios) <= 1.2


def test_log_survival_monotone():
    rng = np.random.default_rng(0)
    x, ls = log_survival(rng.exponential(size=200))
    assert np.all(np.diff(x) >= 0) and np.all(np.diff(ls) < 0)


def test_rho_tail_diagnostic():
    law = EnvironmentLaw(2, 0.1, "clipped-simplex", {}, 0)
    vals = [float(torus_invariant_measure(Environment(law.with_seed(s)), 8).at(np.zeros(2, int)))
            for s in range(60)]
    x, ls = log_survival(vals)
    assert np.all(np.isfinite(ls)) and min(vals) > 0
