from __future__ import annotations

import numpy as np
from scipy import stats

from rwre.environment import EnvironmentLaw
from rwre.kernels import heat_kernel_continuous
from rwre.montecarlo import (continuous_positions, discrete_positions, env_process_integral,
                             exit_statistics, fclt_sample, first_exit,
                             mc_exit_time, mc_green_estimate, simulate_continuous, simulate_path)
from rwre.observables import constant, weight_component
from rwre.operators import expected_exit_time, green_ball

O2 = np.zeros(2, dtype=np.int64)


def test_simulate_path(env2):
    assert simulate_path(env2, O2, 0, 1).sites.tolist() == [[0, 0]]
    p = simulate_path(env2, O2, 50, 3)
    assert np.all(np.abs(np.diff(p.sites, axis=0)).sum(axis=1) == 1)
    assert np.array_equal(p.sites, simulate_path(env2, O2, 50, 3).sites)


def test_simulate_continuous(env2):
    assert simulate_continuous(env2, O2, 0.0, 1).sites.tolist() == [[0, 0]]
    p = simulate_continuous(env2, O2, 20.0, 4)
    assert np.all(np.diff(p.times) > 0) and p.times[-1] <= 20.0
    assert np.all(np.abs(np.diff(p.sites, axis=0)).sum(axis=1) == 1)


def test_martingale_moments(env2):
    n, reps = 20, 100000
    X = discrete_positions(env2, O2, n, reps, seed=2).astype(float)
    se = X.std(axis=0, ddof=1) / np.sqrt(reps)
    assert np.all(np.abs(X.mean(axis=0)) <= 4 * se)
    sq = (X ** 2).sum(axis=1)
    assert abs(sq.mean() - n) <= 4 * sq.std(ddof=1) / np.sqrt(reps)


def test_jump_counts_poisson(env2):
    t, reps = 5.0, 100000
    _, jumps = continuous_positions(env2, O2, t, reps, seed=3)
    assert abs(jumps.mean() - t) <= 4 * np.sqrt(t / reps)


def test_position_law_matches_kernel(env2):
    t, reps = 4.0, 40000
    pos, _ = continuous_positions(env2, O2, t, reps, seed=9)
    k = heat_kernel_continuous(env2, (0, 0), t)
    cells = np.array([[i, j] for i in range(-3, 4) for j in range(-3, 4)])
    p = k.prob(cells)
    counts = np.array([np.sum(np.all(pos == c, axis=1)) for c in cells])
    obs = np.r_[counts, reps - counts.sum()]
    exp = np.r_[p, 1 - p.sum()] * reps
    assert stats.chisquare(obs, exp).pvalue > 0.01


def test_first_exit(env2):
    steps, site = first_exit(env2, O2, 1, 0)
    assert steps == 1 and sum(map(abs, site)) == 1
    steps, pos = exit_statistics(env2, O2, 6.5, 500, 1)
    r = np.sqrt((pos.astype(float) ** 2).sum(axis=1))
    assert np.all((r >= 6.5) & (r < 7.5))


def test_exit_time_matches_solver(env2):
    R = 6
    mean, se = mc_exit_time(env2, O2, R, 100000, 4)
    exact = expected_exit_time(env2, R).get(O2)
    assert abs(mean - exact) <= 4 * se


def test_green_estimate(env2):
    m, se = mc_green_estimate(env2, O2, 1, [[0, 0]], 50, 0)
    assert m == 1.0 and se == 0.0
    assert mc_green_estimate(env2, O2, 4, [[9, 9]], 50, 0)[0] == 0.0
    m, se = mc_green_estimate(env2, O2, 6, [[1, 0]], 40000, 6)
    assert abs(m - green_ball(env2, 6, source=[[1, 0]]).get(O2)) <= 4 * se


def test_env_process_integral(const2, env2):
    assert abs(env_process_integral(env2, constant(1.0, 2), 7.5, 3) - 7.5) < 1e-12
    assert abs(env_process_integral(const2, weight_component(0, 2), 8.0, 1) - 4.0) < 1e-12
    assert abs(env_process_integral(env2, weight_component(0, 2), 8.0, 1)) <= 8.0


def test_fclt_sample():
    law = EnvironmentLaw(2, 0.1, "clipped-simplex", {}, 0)
    res = fclt_sample(law, constant(0.0, 2), 10.0, 20, 1, 0.0)
    assert np.all(res["samples"] == 0)
    a = fclt_sample(law, weight_component(0, 2), 20.0, 100, 2, 0.5)
    b = fclt_sample(law, weight_component(0, 2), 20.0, 100, 2, 0.5)
    assert np.array_equal(a["samples"], b["samples"])
    assert abs(a["mean"]) <= 4 * a["stderr"] + 0.05
