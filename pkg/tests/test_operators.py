from __future__ import annotations

import numpy as np
import pytest

from rwre.lattice import OutOfDomainError, ball_sites, box_sites
from rwre.operators import (Field, SolverConfig, apply_adjoint, apply_generator, dirichlet_solve,
                            expected_exit_time, generator_values, green_ball, second_difference)
from rwre.testfn import eta

from .oracles import ball_points, dense_generator, dense_green


def _field(domain, f):
    return Field.from_function(domain, f)


def test_second_difference():
    dom = box_sites((0, 0), 3)
    x = np.array([1, -1])
    assert second_difference(_field(dom, lambda s: np.full(len(s), 4.0)), x, 0) == 0
    assert second_difference(_field(dom, lambda s: s[:, 0] ** 2.0), x, 0) == 2
    lin = _field(dom, lambda s: s[:, 0].astype(float))
    assert second_difference(lin, x, 0) == 0 and second_difference(lin, x, 1) == 0
    with pytest.raises(OutOfDomainError):
        second_difference(lin, np.array([4, 0]), 0)


def test_generator_examples(const2, env2, env3):
    dom = box_sites((0, 0), 3)
    x = np.array([1, 2])
    assert apply_generator(env2, _field(dom, lambda s: np.full(len(s), 3.0)), x) == 0
    sq = _field(dom, lambda s: (s.astype(float) ** 2).sum(axis=1))
    assert abs(apply_generator(env2, sq, x) - 1.0) < 1e-14
    dom3 = box_sites((0, 0, 0), 2)
    sq3 = _field(dom3, lambda s: (s.astype(float) ** 2).sum(axis=1))
    assert np.allclose(generator_values(env3, sq3), 1.0, atol=1e-14)
    eta1 = _field(dom, lambda s: eta(s, 1.0))
    assert abs(apply_generator(const2, eta1, np.array([0, 0])) + 0.5) < 1e-15


def test_adjoint_constant_env(const2):
    dom = box_sites((0, 0), 3)
    rho = _field(dom, lambda s: np.ones(len(s)))
    v = _field(dom, lambda s: np.full(len(s), 2.0))
    assert apply_adjoint(const2, rho, v, np.array([0, 0])) == 0
    with pytest.raises(ValueError):
        apply_adjoint(const2, _field(dom, lambda s: np.zeros(len(s))), v, np.array([0, 0]))


def test_dirichlet_constant_boundary(env2):
    dom = ball_sites((0, 0), 7)
    u = dirichlet_solve(env2, dom, 0.0, 2.5)
    assert np.allclose(u.values, 2.5, atol=1e-12)


def test_singleton_ball(env2):
    dom = ball_sites((0, 0), 1)
    assert abs(dirichlet_solve(env2, dom, -1.0, 0.0).values[0] - 1.0) < 1e-14
    assert abs(green_ball(env2, 1).get(np.array([0, 0])) - 1.0) < 1e-14
    assert abs(expected_exit_time(env2, 1).get(np.array([0, 0])) - 1.0) < 1e-14


def test_dirichlet_matches_dense_oracle(env2):
    pts = ball_points(2, 6)
    P = dense_generator(env2, pts)
    f = np.array([np.sin(p[0]) * np.cos(p[1]) for p in pts])
    # boundary data g(x) = x_1 x_2: fold its contribution into the dense system
    dom = ball_sites((0, 0), 6)
    g = lambda s: (s[:, 0] * s[:, 1]).astype(float)  # noqa: E731
    u = dirichlet_solve(env2, dom, lambda s: np.sin(s[:, 0]) * np.cos(s[:, 1]), g)
    gb = np.zeros(len(pts))
    inside = set(pts)
    for k, p in enumerate(pts):
        w = env2.weights(np.array(p))
        for i in range(2):
            for s in (1, -1):
                q = list(p)
                q[i] += s
                if tuple(q) not in inside:
                    gb[k] += w[i] / 2 * q[0] * q[1]
    ref = np.linalg.solve(P - np.eye(len(pts)), f - gb)
    assert u.meta["residual"] <= 1e-10
    assert np.max(np.abs(u.at(np.array(pts)) - ref)) <= 1e-9


def test_green_small_ball_matches_dense(const2, env2):
    for env in (const2, env2):
        pts, ref = dense_green(env, 2)
        G = green_ball(env, 2)
        assert len(pts) == 9
        assert np.max(np.abs(G.at(np.array(pts)) - ref)) <= 1e-12


def test_green_properties(env2):
    G = green_ball(env2, 9, source=[[1, 2]])
    assert G.values.min() >= 0
    assert np.all(G.boundary_values == 0)
    Lg = generator_values(env2, G)
    mask = np.zeros(G.domain.n_sites)
    mask[G.domain.index(np.array([1, 2]))] = 1
    assert np.max(np.abs(Lg + mask)) <= 1e-10
    with pytest.raises(OutOfDomainError):
        green_ball(env2, 3, source=[[5, 5]])


def test_exit_time_sandwich(const2, env3):
    u = expected_exit_time(const2, 6)
    assert 36 <= u.get(np.array([0, 0])) <= 49
    R = 5.5
    v = expected_exit_time(env3, R)
    r2 = (v.domain.sites.astype(float) ** 2).sum(axis=1)
    assert np.all(v.interior >= R ** 2 - r2 - 1e-9)
    assert np.all(v.interior <= (R + 1) ** 2 - r2 + 1e-9)


def test_green_sum_equals_exit_time(env2):
    R = 5
    dom = ball_sites((0, 0), R)
    total = sum(green_ball(env2, R, source=[s]).interior for s in dom.sites)
    assert np.max(np.abs(total - expected_exit_time(env2, R).interior)) <= 1e-10


def test_linearity(env2):
    dom = ball_sites((0, 0), 6)
    f1 = lambda s: np.cos(s[:, 0]).astype(float)  # noqa: E731
    f2 = lambda s: s[:, 1].astype(float)  # noqa: E731
    u1 = dirichlet_solve(env2, dom, f1, f2)
    u2 = dirichlet_solve(env2, dom, f2, 1.0)
    u12 = dirichlet_solve(env2, dom, lambda s: 2 * f1(s) - 3 * f2(s), lambda s: 2 * f2(s) - 3)
    assert np.max(np.abs(u12.values - 2 * u1.values + 3 * u2.values)) <= 1e-10


def test_krylov_path_agrees_with_direct(env3):
    direct = green_ball(env3, 6, cfg=SolverConfig(direct_limit=10 ** 6))
    krylov = green_ball(env3, 6, cfg=SolverConfig(direct_limit=1))
    assert krylov.meta["residual"] <= 1e-10
    assert np.max(np.abs(direct.values - krylov.values)) <= 1e-9


def test_solver_config_validation():
    with pytest.raises(ValueError):
        SolverConfig(tol=1e-16)
    with pytest.raises(ValueError):
        SolverConfig(max_iters=0)
