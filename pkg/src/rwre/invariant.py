"""Invariant measures of periodized walks, effective coefficients and adjoint diagnostics.

On the torus ``[0, L)^d`` the periodized walk has a unique invariant measure
``rho`` (``rho P = rho``), normalized here to have mean one.  It stands in for
the density of the environment process' stationary law with respect to the
i.i.d. law.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .environment import Environment, unit_vectors
from .lattice import ball_sites, torus_sites
from .observables import Observable
from .operators import DEFAULT_CONFIG, Field, SolverConfig, green_row


class ConvergenceError(RuntimeError):
    pass


@dataclass
class InvariantMeasure:
    """``rho`` on the torus of side ``L`` with its invariance residual."""

    L: int
    field: Field
    residual: float
    env: Environment
    iterations: int = 0
    meta: dict = field(default_factory=dict)

    @property
    def values(self) -> np.ndarray:
        return self.field.values

    def at(self, x) -> np.ndarray:
        """``rho`` at sites ``x`` (coordinates taken mod ``L``)."""
        return self.field.values[self.field.domain.index(x)]


@dataclass(frozen=True)
class EffectiveData:
    a_bar: tuple
    psi_bar: float | None = None


def torus_transition_matrix(env: Environment, L: int) -> sp.csr_matrix:
    dom = torus_sites(env.dim, L)
    n = dom.n_sites
    W = env.weights(dom.sites)
    probs = np.repeat(0.5 * W, 2, axis=1)
    nb = dom.index(dom.sites[:, None, :] + unit_vectors(env.dim)[None, :, :])
    rows = np.repeat(np.arange(n), 2 * env.dim)
    P = sp.csr_matrix((probs.ravel(), (rows, nb.ravel())), shape=(n, n))
    P.sum_duplicates()
    return P


def _direct_guess(PT: sp.csr_matrix) -> np.ndarray:
    """Solve ``(P^T - I) rho = 0`` with the last equation replaced by ``rho_0 = 1``."""
    n = PT.shape[0]
    A = (PT - sp.identity(n, format="csr")).tolil()
    A[n - 1, :] = 0.0
    A[n - 1, 0] = 1.0
    b = np.zeros(n)
    b[n - 1] = 1.0
    rho = spla.splu(A.tocsc()).solve(b)
    return rho / rho.mean()


def torus_invariant_measure(env: Environment, L: int, tol: float = 1e-12,
                            max_iters: int = 200000, warm_start: bool | None = None) -> InvariantMeasure:
    """Invariant measure of the walk periodized on ``[0, L)^d``, mean one.

    The lazy power iteration ``rho <- (rho + rho P) / 2`` removes the period
    two of the lattice walk.  With ``warm_start`` it starts from a sparse
    direct solve, so usually only a few sweeps are needed to certify the
    residual ``max |rho P - rho| <= tol``.  By default the warm start is used
    in two dimensions only, where LU fill-in stays small.
    """
    if L < 3:
        raise ValueError("torus side must be >= 3")
    envp = env if env.period == L else env.periodized(L)
    P = torus_transition_matrix(envp, L)
    PT = P.T.tocsr()
    n = P.shape[0]
    if warm_start is None:
        warm_start = env.dim == 2 and n <= 200000
    rho = _direct_guess(PT) if warm_start else np.ones(n)
    if np.any(~np.isfinite(rho)) or np.any(rho <= 0):
        rho = np.ones(n)
    res = np.inf
    it = 0
    for it in range(max_iters + 1):
        nxt = PT @ rho
        res = float(np.max(np.abs(nxt - rho)))
        if res <= tol:
            break
        rho = 0.5 * (rho + nxt)
        rho /= rho.mean()
    else:
        raise ConvergenceError(f"power iteration stalled at residual {res:.3e}")
    if np.any(rho <= 0):
        raise ConvergenceError("invariant measure is not positive")
    dom = torus_sites(env.dim, L)
    return InvariantMeasure(int(L), Field(dom, rho), res, envp, it)


def effective_matrix(env: Environment, L: int, tol: float = 1e-12,
                     psi: Observable | None = None,
                     rho: InvariantMeasure | None = None) -> EffectiveData:
    """``a_bar_i = sum rho w_i / sum rho`` and ``psi_bar`` on the torus."""
    rho = rho or torus_invariant_measure(env, L, tol)
    sites = rho.field.domain.sites
    W = rho.env.weights(sites)
    r = rho.values
    a = tuple(float(v) for v in (r @ W) / r.sum())
    pb = None
    if psi is not None:
        pb = float(r @ psi.evaluate(rho.env, sites) / r.sum())
    return EffectiveData(a, pb)


def q_mean(rho: InvariantMeasure, zeta: Observable) -> float:
    """Torus estimate of ``E_Q[zeta]``: the rho-weighted average of ``zeta(theta_x omega)``."""
    sites = rho.field.domain.sites
    return float(rho.values @ zeta.evaluate(rho.env, sites) / rho.values.sum())


def ball_mass(rho: InvariantMeasure, r: float, center=None) -> float:
    d = rho.field.domain.dim
    center = (0,) * d if center is None else center
    if 2 * math.ceil(r) - 1 > rho.L:
        raise ValueError(f"B_{r} does not fit in the torus of side {rho.L}")
    ball = ball_sites(center, r)
    return float(rho.at(ball.sites).sum())


def rho_ball_ratio(rho: InvariantMeasure, r: float) -> float:
    """``r^d rho(0) / rho(B_r)``."""
    d = rho.field.domain.dim
    r0 = float(rho.at(np.zeros(d, dtype=np.int64)))
    return r ** d * r0 / ball_mass(rho, r)


def volume_doubling(rho: InvariantMeasure, r_grid) -> list[float]:
    """``rho(B_r) / rho(B_2r)`` for each ``r`` in the grid."""
    return [ball_mass(rho, r) / ball_mass(rho, 2 * r) for r in r_grid]


def adjoint_transition(env: Environment, rho: InvariantMeasure, x, y) -> float:
    """``omega*(x, y) = rho(y) omega(y, x) / rho(x)``."""
    x = np.asarray(x, dtype=np.int64)
    y = np.asarray(y, dtype=np.int64)
    rx, ry = float(rho.at(x)), float(rho.at(y))
    if rx <= 0 or ry <= 0:
        raise ValueError("rho must be positive")
    diff = x - y
    if np.abs(diff).sum() != 1:
        return 0.0
    i = int(np.flatnonzero(diff)[0])
    return ry * 0.5 * float(rho.env.weights(y)[i]) / rx


def adjoint_row_sums(rho: InvariantMeasure) -> np.ndarray:
    """``sum_y omega*(x, y)`` at every torus site (equals 1 for exact rho)."""
    P = torus_transition_matrix(rho.env, rho.L)
    r = rho.values
    return (P.T @ r) / r


def _adjoint_values(env: Environment, rho: InvariantMeasure, v: Field) -> np.ndarray:
    """``L* v`` at the interior sites of ``v.domain``."""
    dom = v.domain
    d = env.dim
    nbrs = dom.sites[:, None, :] + unit_vectors(d)[None, :, :]
    r_x = rho.at(dom.sites)
    r_y = rho.at(nbrs)
    axis = np.repeat(np.arange(d), 2)
    w_y = env.weights(nbrs)[:, np.arange(2 * d), axis]
    v_x = v.interior
    v_y = v.values[dom.neighbor_index]
    return np.sum(r_y * 0.5 * w_y / r_x[:, None] * (v_y - v_x[:, None]), axis=1)


def _adjoint_potential(env: Environment, L: int, r: float, tol: float, y0=None,
                       rho: InvariantMeasure | None = None,
                       cfg: SolverConfig = DEFAULT_CONFIG):
    envp = env if env.period == L else env.periodized(L)
    rho = rho or torus_invariant_measure(envp, L, tol=min(tol, 1e-12))
    d = env.dim
    if 2 * math.ceil(r) + 1 > L:
        raise ValueError(f"B_{r} and its boundary do not fit in the torus of side {L}")
    if y0 is None:
        y0 = np.zeros(d, dtype=np.int64)
        y0[0] = math.ceil(r / 2)
    y0 = np.asarray(y0, dtype=np.int64)
    dom = ball_sites((0,) * d, r)
    g = green_row(envp, dom, y0, cfg)
    v = Field(dom, g.values / rho.at(dom.all_sites), {"residual": g.meta["residual"]})
    return envp, rho, dom, y0, v


def adjoint_harmonicity_check(env: Environment, L: int, r: float, tol: float = 1e-8,
                              y0=None, rho: InvariantMeasure | None = None) -> dict:
    """Check that ``v(x) = G_r(y0, x) / rho(x)`` solves ``L* v = 0`` off ``y0``.

    At ``y0`` itself the occupation balance gives ``L* v(y0) = -1 / rho(y0)``.
    """
    envp, rho, dom, y0, v = _adjoint_potential(env, L, r, tol, y0, rho)
    Lv = _adjoint_values(envp, rho, v)
    k0 = int(dom.index(y0))
    off = np.delete(Lv, k0)
    residual = float(np.max(np.abs(off)))
    at_source = float(Lv[k0])
    expected = -1.0 / float(rho.at(y0))
    vmax = float(np.max(np.abs(v.values)))
    return {
        "residual": residual,
        "source_value": at_source,
        "source_expected": expected,
        "source_error": abs(at_source - expected),
        "v_sup": vmax,
        "rho_residual": rho.residual,
        "y0": [int(c) for c in y0],
        "passed": residual <= tol * (1 + vmax),
    }


def harnack_ratio(env: Environment, rho: InvariantMeasure, r: float, y0=None) -> float:
    """``max / min`` of ``v = G_r(y0, .) / rho`` over ``B_{r/4}``."""
    envp, rho, dom, y0, v = _adjoint_potential(env, rho.L, r, 1e-12, y0, rho)
    inner = ball_sites((0,) * env.dim, max(r / 4, 1.0))
    vals = v.at(inner.sites)
    return float(vals.max() / vals.min())


def log_survival(samples) -> tuple[np.ndarray, np.ndarray]:
    """Empirical ``(x, log P(X > x))`` from positive samples (for tail diagnostics)."""
    s = np.sort(np.asarray(samples, dtype=np.float64))
    n = len(s)
    surv = 1.0 - np.arange(1, n + 1) / (n + 1)
    return s, np.log(surv)
