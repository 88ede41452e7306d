"""Semigroup decay of the environment process, a Caccioppoli-type energy
identity and the finite-time stationary corrector, all on periodized
environments.

On the torus of side ``L`` the stationary extension of ``P_t zeta`` is the
field ``v(t, x) = P_t zeta(theta_x omega)``, which solves ``d_t v = L v``,
and ``Q`` is represented by the invariant measure ``rho`` (``Q ~ rho dP``).
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np

from .. import rng
from ..environment import Environment, EnvironmentLaw
from ..invariant import torus_invariant_measure
from ..kernels import TorusPropagator
from ..observables import Observable
from ..operators import Field
from ..parallel import ordered_map
from .homogenization import rate_fit

_EVOLVE_TOL = 1e-15


@dataclass
class DecayCurve:
    """``Var_Q(P_t zeta)`` and ``E_P |P_t zeta - E_Q zeta|`` on a time grid."""

    t: list
    var_q: list
    var_q_stderr: list
    l1: list
    l1_stderr: list
    n: list
    slope_var: float | None = None
    slope_l1: float | None = None
    meta: dict = field(default_factory=dict)

    def rows(self) -> list[tuple]:
        return list(zip(self.t, self.var_q, self.var_q_stderr, self.l1, self.l1_stderr, self.n))

    def to_dict(self) -> dict:
        return asdict(self)

    def nonincreasing(self, n_sigma: float = 2.0) -> bool:
        """Each consecutive increase is within ``n_sigma`` combined standard errors."""
        v, s = np.asarray(self.var_q), np.asarray(self.var_q_stderr)
        return bool(np.all(v[1:] - v[:-1] <= n_sigma * np.hypot(s[1:], s[:-1])))


def _torus_env(law: EnvironmentLaw, seed: int, L: int) -> Environment:
    return Environment(law.with_seed(int(seed)), period=int(L))


def _evolve(prop: TorusPropagator, f: np.ndarray, times: Sequence[float]) -> list[np.ndarray]:
    """``e^{t (P - I)} f`` at increasing times by successive increments."""
    out, cur, last = [], f, 0.0
    for t in times:
        if t < last:
            raise ValueError("times must be nondecreasing")
        if t > last:
            cur = prop.continuous(cur, t - last, _EVOLVE_TOL)
        out.append(cur)
        last = t
    return out


def _one_torus(args):
    law, zeta, t_grid, L, seed, rho_tol = args
    env = _torus_env(law, seed, L)
    rho = torus_invariant_measure(env, L, tol=rho_tol, warm_start=True)
    prop = TorusPropagator(env, L)
    z = zeta.evaluate(env, prop.domain.sites).reshape(prop.shape)
    r = rho.values.reshape(prop.shape)
    vs = _evolve(prop, z, t_grid)
    s0 = float(r.sum())
    # per-torus sums: sum rho, sum rho v, sum rho v^2, sum v, and the fields for L1
    return {
        "rho_sum": s0,
        "rho_z": float((r * z).sum()),
        "m2": [float((r * v * v).sum()) for v in vs],
        "v": vs,
        "n_sites": z.size,
    }


def semigroup_decay(law: EnvironmentLaw, zeta: Observable, t_grid: Sequence[float], n_env: int,
                    L: int, seed: int, threads: int | None = None, rho_tol: float = 1e-10) -> DecayCurve:
    """Decay of ``P_t zeta`` over ``n_env`` independent periodized environments.

    ``E_Q zeta`` is the pooled ``rho``-weighted average of ``zeta``; ``Var_Q``
    is the pooled ``rho``-weighted second moment of ``v(t) - E_Q zeta`` over
    all sites of all tori (self-normalized importance weights) and the L1
    norm is the plain site average of ``|v(t) - E_Q zeta|``.  Standard errors
    come from the spread of the per-torus estimates.  Slopes are fitted
    against ``log t`` on the positive times.
    """
    if n_env < 2:
        raise ValueError("need at least two environments")
    t_grid = [float(t) for t in t_grid]
    if any(b < a for a, b in zip(t_grid, t_grid[1:])):
        raise ValueError("t grid must be nondecreasing")
    seeds = rng.replicate_seed(seed, np.arange(n_env, dtype=np.int64))
    # first pass: pooled mean; the fields are needed again for L1, so keep them
    jobs = [(law, zeta, t_grid, L, int(s), rho_tol) for s in seeds]
    res = ordered_map(_one_torus, jobs, threads)
    rho_tot = sum(r["rho_sum"] for r in res)
    mean = sum(r["rho_z"] for r in res) / rho_tot
    var_q, var_se, l1, l1_se = [], [], [], []
    for j in range(len(t_grid)):
        # rho-weighted second moment around the pooled mean; sum rho v = sum rho zeta per torus
        per_var = np.array([(r["m2"][j] - 2 * mean * r["rho_z"] + mean ** 2 * r["rho_sum"]) / r["rho_sum"]
                            for r in res])
        w = np.array([r["rho_sum"] for r in res])
        var_q.append(float(np.sum(w * per_var) / w.sum()))
        var_se.append(float(per_var.std(ddof=1) / math.sqrt(n_env)))
        per_l1 = np.array([float(np.mean(np.abs(r["v"][j] - mean))) for r in res])
        l1.append(float(per_l1.mean()))
        l1_se.append(float(per_l1.std(ddof=1) / math.sqrt(n_env)))
    pos = [k for k, t in enumerate(t_grid) if t > 0 and var_q[k] > 0 and l1[k] > 0]
    sv = sl = None
    if len(pos) >= 2:
        sv = rate_fit([(t_grid[k], var_q[k]) for k in pos])[0]
        sl = rate_fit([(t_grid[k], l1[k]) for k in pos])[0]
    return DecayCurve(t_grid, var_q, var_se, l1, l1_se, [n_env] * len(t_grid), sv, sl,
                      {"e_q_zeta": mean, "L": L, "seed": seed, "law": law.to_dict(),
                       "zeta": zeta.name})


def _rho_stats(r: np.ndarray, v: np.ndarray, mean: float) -> float:
    return float(np.sum(r * (v - mean) ** 2) / r.sum())


def dirichlet_form(prop: TorusPropagator, r: np.ndarray, v: np.ndarray, weighted: bool = True) -> float:
    """``sum_e E_Q[c(0, e) (v(e) - v(0))^2]`` with ``c = omega`` or ``c = 1``."""
    total = 0.0
    for i in range(prop.d):
        for sh in (-1, 1):
            diff = np.roll(v, sh, axis=i) - v
            c = prop.half[i] if weighted else 1.0
            total += float(np.sum(r * c * diff * diff))
    return total / float(r.sum())


def caccioppoli_check(env: Environment, zeta: Observable, t: float, h: float, L: int,
                      rho_tol: float = 1e-12) -> dict:
    """Time derivative of ``Var_Q(P_t zeta)`` against the ``rho``-weighted energy.

    ``lhs`` is the central difference of the variance with step ``h``.  The
    exact identity is ``d/dt Var_Q = -sum_e E_Q[omega(0,e)(v(e) - v(0))^2]``;
    since ``omega(0, e) >= kappa`` the reported bound is
    ``lhs <= -kappa * energy + margin`` with the plain energy
    ``sum_e E_Q[(v(e) - v(0))^2]`` and ``margin`` a Richardson estimate of the
    finite-difference error.
    """
    if h <= 0 or h > t:
        raise ValueError("need 0 < h <= t")
    envp = env if env.period == L else env.periodized(L)
    rho = torus_invariant_measure(envp, L, tol=rho_tol)
    prop = TorusPropagator(envp, L)
    r = rho.values.reshape(prop.shape)
    z = zeta.evaluate(envp, prop.domain.sites).reshape(prop.shape)
    mean = float(np.sum(r * z) / r.sum())
    times = [t - h, t - h / 2, t, t + h / 2, t + h]
    vs = _evolve(prop, z, times)
    var = [_rho_stats(r, v, mean) for v in vs]
    lhs = (var[4] - var[0]) / (2 * h)
    lhs_half = (var[3] - var[1]) / h
    extrap = (4 * lhs_half - lhs) / 3
    margin = 4.0 / 3.0 * abs(lhs - lhs_half) + 1e-15
    dform = dirichlet_form(prop, r, vs[2], weighted=True)
    energy = dirichlet_form(prop, r, vs[2], weighted=False)
    kappa = env.kappa
    return {
        "lhs": lhs, "lhs_half_step": lhs_half, "lhs_extrapolated": extrap,
        "dirichlet_form": dform, "energy": energy,
        "identity_error": abs(extrap + dform), "margin": margin,
        "bound": -kappa * energy + margin, "holds": lhs <= -kappa * energy + margin,
        "variance": var[2], "h_ok": margin <= 1e-2 * abs(lhs) or margin <= 1e-12,
        "rho_residual": rho.residual,
    }


def stationary_corrector(env: Environment, zeta: Observable, T: float, quad_tol: float, L: int,
                         zeta_mean: float | None = None, rho_tol: float = 1e-12) -> dict:
    """``phi_T(theta_x omega) = -int_0^T (P_s zeta - E_Q zeta)(theta_x omega) ds`` on the torus.

    The integral is an adaptive Simpson rule over the backward evolution.
    Returns the field, ``E_Q zeta`` and the residual of the exact finite-time
    identity ``L phi_T = zeta_c - P_T zeta_c`` with ``zeta_c = zeta - E_Q zeta``.
    """
    envp = env if env.period == L else env.periodized(L)
    prop = TorusPropagator(envp, L)
    z = zeta.evaluate(envp, prop.domain.sites).reshape(prop.shape)
    rho = None
    if zeta_mean is None:
        rho = torus_invariant_measure(envp, L, tol=rho_tol)
        zeta_mean = float(np.sum(rho.values.reshape(prop.shape) * z) / rho.values.sum())
    zc = z - zeta_mean
    phi, n_int, pT = _integrate_semigroup(prop, zc, T, quad_tol)
    phi = -phi
    Lphi = prop.backward(phi) - phi
    residual = float(np.max(np.abs(Lphi - (zc - pT))))
    return {"phi": Field(prop.domain, phi.ravel()), "residual": residual, "e_q_zeta": zeta_mean,
            "intervals": n_int, "T": T, "quad_tol": quad_tol,
            "rho": None if rho is None else rho.values}


def _integrate_semigroup(prop: TorusPropagator, f: np.ndarray, T: float, tol: float,
                         n0: int = 8, max_doublings: int = 14):
    """Field-valued Simpson rule for ``int_0^T e^{s(P-I)} f ds``.

    Simpson values are Richardson combinations of trapezoid sums on a
    doubling grid; the step is halved until successive Simpson values agree
    to ``tol`` in the sup norm.  Returns the integral, the number of
    intervals and ``e^{T(P-I)} f``.
    """
    if T <= 0:
        return np.zeros_like(f), 0, f.copy()
    n = n0
    vals = _evolve(prop, f, np.linspace(0, T, n + 1))
    trap = T / n * (sum(vals) - 0.5 * (vals[0] + vals[-1]))
    prev = None
    for _ in range(max_doublings):
        h = T / n
        mids = [prop.continuous(v, h / 2, _EVOLVE_TOL) for v in vals[:-1]]
        merged = [None] * (2 * n + 1)
        merged[0::2] = vals
        merged[1::2] = mids
        vals = merged
        n *= 2
        trap_new = 0.5 * trap + (T / n) * sum(mids)
        simp = (4 * trap_new - trap) / 3
        trap = trap_new
        if prev is not None and float(np.max(np.abs(simp - prev))) <= tol:
            return simp, n, vals[-1]
        prev = simp
    raise RuntimeError(f"quadrature did not reach tolerance {tol:g}")


def corrector_cauchy(env: Environment, zeta: Observable, T_grid: Sequence[float], quad_tol: float,
                     L: int, rho_tol: float = 1e-12) -> dict:
    """``||phi_{2T} - phi_T||`` in ``L^2(rho)`` for each ``T`` (Cauchy diagnostic)."""
    envp = env if env.period == L else env.periodized(L)
    rho = torus_invariant_measure(envp, L, tol=rho_tol)
    prop = TorusPropagator(envp, L)
    r = rho.values.reshape(prop.shape)
    z = zeta.evaluate(envp, prop.domain.sites).reshape(prop.shape)
    mean = float(np.sum(r * z) / r.sum())
    rows = []
    for T in T_grid:
        a = stationary_corrector(envp, zeta, T, quad_tol, L, mean)
        b = stationary_corrector(envp, zeta, 2 * T, quad_tol, L, mean)
        diff = (b["phi"].values - a["phi"].values).reshape(prop.shape)
        rows.append({"T": float(T), "cauchy": math.sqrt(float(np.sum(r * diff * diff) / r.sum())),
                     "residual_T": a["residual"], "residual_2T": b["residual"]})
    c = [row["cauchy"] for row in rows]
    return {"rows": rows, "decreasing": all(y < x for x, y in zip(c, c[1:])), "e_q_zeta": mean}
