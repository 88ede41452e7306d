"""Local discrepancies of occupation sums and counts of bad points.

For a local observable ``zeta`` with ``E_Q zeta`` known, the local
discrepancy at ``x`` is

    E^x[ sum_{i < sigma} (E_Q zeta - zeta(theta_{X_i} omega)) ],

with ``sigma`` the exit time of ``B_{R0}(x)``.  It is ``u(x)`` for the
solution of ``L u = zeta_bar - E_Q zeta`` in ``B_{R0}(x)``, ``u = 0`` outside.
"""

from __future__ import annotations

from typing import Sequence

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from ..environment import Environment
from ..invariant import q_mean, torus_invariant_measure
from ..lattice import ball_sites
from ..observables import Observable, weight_component
from ..operators import DEFAULT_CONFIG, SolverConfig, dirichlet_solve


def local_discrepancy(env: Environment, x, R0: float, zeta: Observable, zeta_mean: float,
                      cfg: SolverConfig = DEFAULT_CONFIG) -> float:
    """``E^x[sum_{i < sigma}(zeta_mean - zeta(theta_{X_i} omega))]`` on ``B_{R0}(x)``."""
    x = tuple(int(c) for c in np.asarray(x, dtype=np.int64))
    dom = ball_sites(x, R0)
    rhs = zeta.evaluate(env, dom.sites) - zeta_mean
    u = dirichlet_solve(env, dom, rhs, 0.0, cfg)
    return float(u.at(np.asarray(x)))


class _BallTemplate:
    """Sparse solves on translates ``B_{R0}(c)`` sharing one sparsity pattern."""

    def __init__(self, d: int, R0: float):
        self.dom = ball_sites((0,) * d, R0)
        self.n = self.dom.n_sites
        nb = self.dom.neighbor_index
        inner = nb < self.n
        self.rows = np.repeat(np.arange(self.n), 2 * d)[inner.ravel()]
        self.cols = nb.ravel()[inner.ravel()]
        self.inner = inner
        self.k0 = int(self.dom.index(np.zeros(d, dtype=np.int64)))

    def solve_at_center(self, W: np.ndarray, F: np.ndarray) -> np.ndarray:
        """Values at the center of the solutions of ``(P - I) u = F`` (columns), ``u = 0`` outside."""
        probs = np.repeat(0.5 * W, 2, axis=1)[self.inner]
        P = sp.csc_matrix((probs, (self.rows, self.cols)), shape=(self.n, self.n))
        M = sp.identity(self.n, format="csc") - P
        u = spla.splu(M).solve(-F)
        return u[self.k0]


def default_observables(d: int, psi: Observable | None = None) -> list[Observable]:
    obs = [weight_component(i, d) for i in range(d)]
    if psi is not None:
        obs.append(psi)
    return obs


def torus_means(env: Environment, observables: Sequence[Observable], L: int) -> list[float]:
    """``E_Q zeta`` estimated by the invariant measure of the periodized walk."""
    rho = torus_invariant_measure(env.periodized(L) if env.period is None else env, L)
    return [q_mean(rho, z) for z in observables]


def count_bad_points(env: Environment, R: float, R0: float, delta: float, C_thresh: float,
                     observables: Sequence[Observable] | None = None,
                     means: Sequence[float] | None = None, gamma: float = 0.5,
                     center=None, torus_L: int = 32) -> dict:
    """Count sites of ``B_{R - R0}(center)`` whose local discrepancy is too large.

    A site is bad when ``|local_discrepancy| > C_thresh * ||zeta||_inf * R0^{2 - delta}``
    for some observable (default: the weight components).  ``means`` default
    to invariant-measure averages on a torus of side ``torus_L``.  Also
    returns ``R^{-gamma} count^{1/d}``.
    """
    d = env.dim
    if R <= R0:
        raise ValueError("need R > R0")
    obs = list(observables) if observables is not None else default_observables(d)
    if means is None:
        means = torus_means(env, obs, torus_L)
    if len(means) != len(obs):
        raise ValueError("one mean per observable is required")
    c = np.zeros(d, dtype=np.int64) if center is None else np.asarray(center, dtype=np.int64)
    window = ball_sites(tuple(int(v) for v in c), R - R0).sites
    tpl = _BallTemplate(d, R0)
    offs = tpl.dom.sites
    bounds = np.array([z.bound for z in obs])
    thresh = C_thresh * bounds * R0 ** (2 - delta)
    disc = np.zeros((len(window), len(obs)))
    for k, x in enumerate(window):
        pts = offs + x
        W = env.weights(pts)
        F = np.stack([z.evaluate(env, pts) - m for z, m in zip(obs, means)], axis=1)
        disc[k] = tpl.solve_at_center(W, F)
    bad = np.any(np.abs(disc) > thresh, axis=1)
    count = int(bad.sum())
    return {
        "count": count,
        "n_points": len(window),
        "fraction": count / len(window),
        "statistic": float(R ** (-gamma) * count ** (1.0 / d)),
        "threshold": thresh.tolist(),
        "max_discrepancy": np.max(np.abs(disc), axis=0).tolist(),
        "bad_sites": window[bad].tolist(),
        "means": list(map(float, means)),
    }
