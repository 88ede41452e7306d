from __future__ import annotations

import math

import numpy as np
import pytest
from scipy import stats

from rwre.environment import Environment, EnvironmentLaw
from rwre.kernels import (chapman_kolmogorov_residual, forward_equation_residual, green_whole,
                          green_whole_many, heat_kernel_continuous, heat_kernel_discrete,
                          kernel_envelope_stats, poisson_weights, potential_kernel, semigroup_apply,
                          time_integrated_field, time_integrated_kernel, truncation_radius)
from rwre.montecarlo import exit_statistics
from rwre.observables import by_name, constant, weight_component

from .oracles import srw_return_series

O2 = np.zeros(2, dtype=np.int64)


def const2_env() -> Environment:
    return Environment(EnvironmentLaw(2, 0.25, "constant"))


def const3_env() -> Environment:
    return Environment(EnvironmentLaw(3, 1 / 6, "constant"))


def test_discrete_kernel_examples(const2, env2):
    k0 = heat_kernel_discrete(env2, (1, 1), 0)
    assert k0.prob(np.array([1, 1])) == 1.0 and k0.total_mass == 1.0
    k1 = heat_kernel_discrete(env2, (0, 0), 1)
    w = env2.weights(O2)
    assert k1.prob(np.array([1, 0])) == w[0] / 2 and k1.prob(np.array([0, -1])) == w[1] / 2
    assert heat_kernel_discrete(const2, (0, 0), 2).prob(O2) == pytest.approx(0.25, abs=1e-15)
    k5 = heat_kernel_discrete(env2, (0, 0), 5)
    assert abs(k5.total_mass - 1) < 1e-14 and k5.deficit < 1e-14


def test_discrete_kernel_truncation_reports_deficit(env2):
    k = heat_kernel_discrete(env2, (0, 0), 12, radius=3)
    assert k.deficit > 0 and abs(k.total_mass + k.deficit - 1) < 1e-12


def test_continuous_kernel_point_mass(env2):
    k = heat_kernel_continuous(env2, (2, 0), 0.0)
    assert k.prob(np.array([2, 0])) == 1.0


def test_continuous_kernel_series_oracle(const2):
    pn = srw_return_series(2, 40)
    n = np.arange(41)
    ref = float(np.sum(stats.poisson.pmf(n, 1.0) * pn))
    k = heat_kernel_continuous(const2, (0, 0), 1.0, 1e-13)
    assert abs(k.prob(O2) - ref) < 1e-13


@pytest.mark.parametrize("t", [0.5, 3.0, 10.0])
def test_kernel_mass_and_sign(env2, t):
    tol = 1e-10
    k = heat_kernel_continuous(env2, (0, 0), t, tol)
    assert k.field.values.min() >= 0
    assert 1 - tol <= k.total_mass <= 1 + 1e-14
    assert k.deficit <= tol


def test_poisson_weights_tail():
    w = poisson_weights(7.0, 1e-12)
    assert 1 - w.sum() <= 1e-12 and np.all(w >= 0)


def test_truncation_radius_monotone():
    assert truncation_radius(20, 1e-6) > truncation_radius(10, 1e-6)
    assert truncation_radius(10, 1e-9) > truncation_radius(10, 1e-6)
    assert truncation_radius(0, 1e-6) <= 4 * math.log(1e6) + 1


def test_truncation_radius_exit_frequency(env2):
    # P(continuous walk leaves B_R by time t) = E[P(N_t >= tau_R)] given the discrete exit time
    t, tol = 25.0, 1e-3
    R = truncation_radius(t, tol)
    steps, _ = exit_statistics(env2, O2, R, 100000, seed=5)
    freq = float(np.mean(stats.poisson.sf(steps - 1, t)))
    assert freq <= 2e-3


def test_chapman_kolmogorov(env2):
    assert chapman_kolmogorov_residual(env2, (0, 0), 1.0, 1.0) <= 1e-11
    assert chapman_kolmogorov_residual(env2, (1, -2), 2.0, 3.0) <= 1e-11


def test_forward_equation_first_order(env2):
    r1 = forward_equation_residual(env2, (0, 0), 2.0, 1e-2)
    r2 = forward_equation_residual(env2, (0, 0), 2.0, 5e-3)
    assert 1.6 < r1 / r2 < 2.4


def test_semigroup_apply(const2, env2):
    assert abs(semigroup_apply(env2, constant(0.7, 2), 3.0) - 0.7) <= 1e-12 * 0.7 + 1e-15
    z = weight_component(0, 2)
    assert semigroup_apply(env2, z, 0.0) == env2.weights(O2)[0]
    for t in (0.5, 4.0):
        assert abs(semigroup_apply(const2, z, t) - 0.5) < 1e-12
    v = semigroup_apply(env2, by_name("w1w1e1", 2), 2.0)
    assert 0 < v < 1


def test_potential_kernel_classical(const2):
    assert potential_kernel(const2, (0, 0)) == 0.0
    assert abs(potential_kernel(const2, (1, 0)) - 1.0) <= 1e-3
    assert abs(potential_kernel(const2, (1, 1)) - 4 / math.pi) <= 1e-3
    with pytest.raises(ValueError):
        potential_kernel(const3_env(), (1, 0, 0))


def test_green_whole_constant_law(const3):
    pn = srw_return_series(3, 60)
    # tail of sum p_n(0,0) ~ 2 (3/(2 pi))^{3/2} n^{-1/2} beyond the computed range
    tail = 2 * (3 / (2 * math.pi)) ** 1.5 / math.sqrt(60)
    oracle = pn.sum() + tail
    g0, g1 = green_whole_many(const3, [[0, 0, 0], [1, 0, 0]])
    assert abs(g0 - oracle) <= 1e-2 and abs(g0 - 1.5164) <= 1e-2
    assert abs(g0 - g1 - 1.0) <= 1e-6
    assert green_whole(const3, (2, 1, 0)) > 0
    with pytest.raises(ValueError):
        green_whole_many(const2_env(), [[0, 0]])


def test_time_integrated_kernel(const2, env2):
    assert time_integrated_kernel(env2, (0, 0), 0.0) == 0.0
    T = 0.01
    assert abs(time_integrated_kernel(env2, (0, 0), T) - (T - T ** 2 / 2)) < 1e-5
    # int_0^T p_t(0,0) dt against quadrature of the series oracle
    pn = srw_return_series(2, 60)
    n = np.arange(61)
    ref = float(np.sum(stats.poisson.sf(n, 3.0) * pn))
    assert abs(time_integrated_kernel(const2, (0, 0), 3.0, 1e-12) - ref) < 1e-10


def test_time_integrated_shape_bounded(const2):
    R = 16
    f = time_integrated_field(const2, R ** 2, 1e-8)
    pts = np.array([[i, j] for i in range(-R, R + 1) for j in range(-R, R + 1) if i * i + j * j < R * R])
    r = np.sqrt((pts ** 2).sum(axis=1))
    ratio = f.get(pts) / (1 + np.log((R + 1) / (r + 1)))
    assert np.all(ratio > 0) and ratio.max() / ratio.min() < 10


def test_envelope_stats_positive(env2):
    s = kernel_envelope_stats(env2, [1.0, 4.0, 16.0], 0.1, 1.0, r_max=6)
    assert np.isfinite(s["upper"]) and s["lower"] > 0
