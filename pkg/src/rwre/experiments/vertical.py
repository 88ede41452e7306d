"""Vertical derivatives, the Efron-Stein sum and the Duhamel representation.

``omega'_y`` is the environment with the weights at ``y`` redrawn from the
law (keyed by an auxiliary seed), and ``d_y Z = Z(omega'_y) - Z(omega)``.

For ``v(t, x) = P_t zeta(theta_x omega)``, the generator difference is
supported at ``y`` and equals ``(1/2) sum_i (w'_i(y) - w_i(y)) grad_i^2`` there
(canonical weights, so the diffusion matrix is ``diag(w) / 2``), giving

    d_y v(t, x) = sum_{z in y - S} p_t(x, z) d_y zeta_bar(z)
                  + int_0^t p_{t-s}(x, y) K(s) ds,
    K(s) = (1/2) sum_i (w'_i(y) - w_i(y)) grad_i^2 v'(s, y),

with ``S`` the support of ``zeta`` and ``p``, ``v'`` built from ``omega`` and
``omega'_y`` respectively.
"""

from __future__ import annotations

import math
from typing import Callable, Iterable, Sequence

import numpy as np
from scipy import stats

from ..environment import Environment
from ..kernels import BoxPropagator, poisson_weights, truncation_radius
from ..observables import Observable


def vertical_derivative(env: Environment, aux_seed: int, y,
                        functional: Callable[[Environment], float]) -> float:
    """``Z(omega'_y) - Z(omega)``."""
    return float(functional(env.resample_site(y, aux_seed)) - functional(env))


def efron_stein_V(env: Environment, aux_seeds: int | Sequence[int], sites: Iterable,
                  functional: Callable[[Environment], float]) -> float:
    """``V(Z) = sum_y (d_y Z)^2`` truncated to the given site set.

    ``aux_seeds`` is one seed shared by all sites (the redraws stay
    independent because they are keyed by site) or one seed per site.
    """
    sites = [tuple(int(c) for c in s) for s in sites]
    seeds = [aux_seeds] * len(sites) if np.isscalar(aux_seeds) else list(aux_seeds)
    if len(seeds) != len(sites):
        raise ValueError("need one auxiliary seed per site")
    base = float(functional(env))
    total = 0.0
    for s, a in zip(sites, seeds):
        total += (float(functional(env.resample_site(s, a))) - base) ** 2
    return total


def _poisson_matrix(times: np.ndarray, n_max: int) -> np.ndarray:
    """``pi_n(s)`` for each time (rows) and ``n = 0..n_max`` (columns)."""
    n = np.arange(n_max + 1)
    return stats.poisson.pmf(n[None, :], np.maximum(times, 0)[:, None]) if len(times) else np.zeros((0, n_max + 1))


class DuhamelTerms:
    """Kernel data for one ``(omega, omega'_y, zeta, t, x)`` configuration."""

    def __init__(self, env: Environment, aux_seed: int, y, zeta: Observable, t: float,
                 x=None, kernel_tol: float = 1e-15):
        d = env.dim
        self.t = float(t)
        self.y = np.asarray(y, dtype=np.int64)
        self.x = np.zeros(d, dtype=np.int64) if x is None else np.asarray(x, dtype=np.int64)
        self.env = env
        self.env2 = env.resample_site(self.y, aux_seed)
        self.zeta = zeta
        pw = poisson_weights(t, kernel_tol)
        self.n_max = len(pw) - 1
        reach = int(np.max(np.abs(zeta.offsets))) if len(zeta.offsets) else 0
        spread = int(np.max(np.abs(self.y - self.x)))
        half = int(math.ceil(min(truncation_radius(t, kernel_tol), self.n_max))) + spread + reach + 2
        self.prop = BoxPropagator(env, tuple(self.x), half)
        self.prop2 = BoxPropagator(self.env2, tuple(self.x), half)
        sites = self.prop.domain.sites
        shape = self.prop.shape
        self.zbar = zeta.evaluate(env, sites).reshape(shape)
        self.zbar2 = zeta.evaluate(self.env2, sites).reshape(shape)
        self._rel = lambda p: tuple(np.asarray(p) - self.x + half)
        self.kernel_tol = kernel_tol

        # forward iterates p_m(x, .) at y and the continuous kernel at time t
        mu = self.prop.delta(self.x)
        a = np.empty(self.n_max + 1)
        pt = np.zeros(shape)
        for m in range(self.n_max + 1):
            if m:
                mu = self.prop.forward(mu)
            a[m] = mu[self._rel(self.y)]
            pt += pw[m] * mu
        self.a = a
        self.p_t = pt

        # backward iterates of zeta_bar' and their second differences at y
        w = self.env.weights(self.y)
        w2 = self.env2.weights(self.y)
        self.dw = 0.5 * (w2 - w)
        unit = np.eye(d, dtype=np.int64)
        c = np.empty(self.n_max + 1)
        u = self.zbar2
        for n in range(self.n_max + 1):
            if n:
                u = self.prop2.backward(u)
            acc = 0.0
            for i in range(d):
                lap = u[self._rel(self.y + unit[i])] + u[self._rel(self.y - unit[i])] - 2 * u[self._rel(self.y)]
                acc += self.dw[i] * lap
            c[n] = acc
        self.c = c

    def lhs(self) -> float:
        """``P_t zeta(theta_x omega'_y) - P_t zeta(theta_x omega)``."""
        v2 = self.prop2.continuous(self.prop2.delta(self.x), self.t, self.kernel_tol / 2)
        return float(np.sum(v2 * self.zbar2) - np.sum(self.p_t * self.zbar))

    def first_term(self) -> float:
        """``sum_{z in y - S} p_t(x, z) d_y zeta_bar(z)``."""
        total = 0.0
        for off in self.zeta.offsets:
            z = self.y - off
            r = self._rel(z)
            total += self.p_t[r] * (self.zbar2[r] - self.zbar[r])
        return float(total)

    def integrand(self, s: np.ndarray) -> np.ndarray:
        """``p_{t-s}(x, y) K(s)`` on an array of times."""
        s = np.asarray(s, dtype=np.float64)
        left = _poisson_matrix(self.t - s, self.n_max) @ self.a
        right = _poisson_matrix(s, self.n_max) @ self.c
        return left * right

    def exact_integral(self) -> float:
        """Closed form via ``int_0^t pi_m(t - s) pi_n(s) ds = pi_{m+n+1}(t)``."""
        m = np.arange(self.n_max + 1)
        P = stats.poisson.pmf(m[:, None] + m[None, :] + 1, self.t)
        return float(self.a @ P @ self.c)


def trapezoid_adaptive(f: Callable[[np.ndarray], np.ndarray], a: float, b: float, tol: float,
                       n0: int = 8, max_doublings: int = 20) -> tuple[float, int]:
    """Composite trapezoid, halving the step until successive values differ by ``<= tol``."""
    if b <= a:
        return 0.0, 0
    n = n0
    s = np.linspace(a, b, n + 1)
    vals = f(s)
    prev = (b - a) / n * (vals.sum() - 0.5 * (vals[0] + vals[-1]))
    for _ in range(max_doublings):
        mids = s[:-1] + 0.5 * (b - a) / n
        mv = f(mids)
        n *= 2
        s = np.linspace(a, b, n + 1)
        merged = np.empty(n + 1)
        merged[0::2] = vals
        merged[1::2] = mv
        vals = merged
        cur = (b - a) / n * (vals.sum() - 0.5 * (vals[0] + vals[-1]))
        if abs(cur - prev) <= tol:
            return float(cur), n
        prev = cur
    raise RuntimeError(f"trapezoid rule did not reach tolerance {tol:g}")


def duhamel_check(env: Environment, aux_seed: int, y, zeta: Observable, t: float,
                  quad_tol: float = 1e-8, x=None) -> dict:
    """Compare ``d_y v(t, x)`` with its Duhamel representation.

    The time integral uses the adaptive trapezoid rule with tolerance
    ``quad_tol``; kernels are computed to ``1e-15``.  ``passed`` applies the
    contract ``residual <= 10 quad_tol (1 + ||zeta||_inf)``.
    """
    if t < 0:
        raise ValueError("t must be nonnegative")
    terms = DuhamelTerms(env, aux_seed, y, zeta, t, x)
    lhs = terms.lhs()
    first = terms.first_term()
    integral, n_int = trapezoid_adaptive(terms.integrand, 0.0, float(t), quad_tol)
    residual = abs(lhs - first - integral)
    return {
        "lhs": lhs, "first_term": first, "integral": integral,
        "integral_exact": terms.exact_integral(), "residual": residual,
        "intervals": n_int, "quad_tol": quad_tol,
        "passed": residual <= 10 * quad_tol * (1 + zeta.bound),
    }
