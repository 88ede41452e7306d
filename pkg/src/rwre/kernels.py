"""Heat kernels, semigroups, the potential kernel and the whole-space Green function.

Discrete kernels are propagated exactly on a box around the starting point;
probability mass that leaves the box is dropped and reported as a deficit
rather than renormalized.  Continuous time uses uniformization: the walk
jumps at unit rate, so ``p_t = sum_n Poisson(t)(n) p_n`` exactly.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import stats

from .environment import Environment
from .lattice import LatticeDomain, box_sites, torus_sites
from .observables import Observable
from .operators import DEFAULT_CONFIG, Field, SolverConfig, green_ball

# truncation_radius holds for d <= _MAX_UNION_DIM; larger d tighten tol
_MAX_UNION_DIM = 5


@dataclass
class KernelSlice:
    """``y -> p(x0, y)`` on a box, with the probability mass lost outside."""

    x0: tuple
    time: float
    field: Field
    deficit: float
    discrete: bool = False
    meta: dict = field(default_factory=dict)

    def prob(self, y) -> float | np.ndarray:
        return self.field.get(np.asarray(y, dtype=np.int64), 0.0)

    @property
    def total_mass(self) -> float:
        return float(self.field.values.sum())


def truncation_radius(t: float, tol: float) -> float:
    """Half-width ``M`` of a box that a rate-1 walk leaves before ``t`` w.p. ``<= tol/2``.

    Each coordinate is a martingale with unit jumps and predictable quadratic
    variation at most ``t``.  Freedman's inequality and a union bound over
    the ``2d <= 10`` one-sided events give the bound once
    ``M^2 / (2 (t + M/3)) >= l`` with ``l = ln(20 / tol)``, which
    ``M = 2 max(sqrt(t l), l) + 1`` satisfies.
    """
    if t < 0 or not 0 < tol < 1:
        raise ValueError("need t >= 0 and tol in (0, 1)")
    ell = math.log(20.0 / tol)
    return 2.0 * max(math.sqrt(t * ell), ell) + 1.0


def _spatial_tol(tol: float, d: int) -> float:
    return tol * min(1.0, _MAX_UNION_DIM / d)


def poisson_weights(t: float, tol: float) -> np.ndarray:
    """``P(N_t = n)`` for ``n = 0..N`` with ``P(N_t > N) <= tol``."""
    if t == 0:
        return np.ones(1)
    n_max = int(stats.poisson.isf(tol, t)) + 1
    while stats.poisson.sf(n_max, t) > tol:
        n_max += 1
    return stats.poisson.pmf(np.arange(n_max + 1), t)


def _slc(ndim: int, axis: int, s: slice) -> tuple:
    out = [slice(None)] * ndim
    out[axis] = s
    return tuple(out)


class BoxPropagator:
    """One-step transition operators of the walk killed outside a box."""

    def __init__(self, env: Environment, center, half_width: int):
        self.env = env
        self.domain: LatticeDomain = box_sites(center, half_width)
        self.d = env.dim
        self.shape = (2 * int(half_width) + 1,) * self.d
        W = env.weights(self.domain.sites).reshape(self.shape + (self.d,))
        self.half = [0.5 * W[..., i] for i in range(self.d)]

    def delta(self, x) -> np.ndarray:
        mu = np.zeros(self.shape)
        rel = np.asarray(x, dtype=np.int64) - np.asarray(self.domain.center) + self.shape[0] // 2
        mu[tuple(rel)] = 1.0
        return mu

    def forward(self, mu: np.ndarray) -> np.ndarray:
        """``(mu P)(y) = sum_x mu(x) omega(x, y)``; mass leaving the box is lost."""
        out = np.zeros_like(mu)
        nd = mu.ndim
        for i in range(self.d):
            q = mu * self.half[i]
            out[_slc(nd, i, slice(1, None))] += q[_slc(nd, i, slice(None, -1))]
            out[_slc(nd, i, slice(None, -1))] += q[_slc(nd, i, slice(1, None))]
        return out

    def backward(self, u: np.ndarray) -> np.ndarray:
        """``(P u)(x) = sum_y omega(x, y) u(y)`` with ``u = 0`` outside the box."""
        out = np.zeros_like(u)
        nd = u.ndim
        for i in range(self.d):
            s = np.zeros_like(u)
            s[_slc(nd, i, slice(None, -1))] += u[_slc(nd, i, slice(1, None))]
            s[_slc(nd, i, slice(1, None))] += u[_slc(nd, i, slice(None, -1))]
            out += self.half[i] * s
        return out

    def continuous(self, mu: np.ndarray, t: float, tol: float, backward: bool = False) -> np.ndarray:
        step = self.backward if backward else self.forward
        acc = np.zeros_like(mu)
        cur = mu
        pw = poisson_weights(t, tol)
        for n, p in enumerate(pw):
            if n:
                cur = step(cur)
            acc += p * cur
        return acc

    def as_field(self, arr: np.ndarray) -> Field:
        vals = np.concatenate([arr.ravel(), np.zeros(self.domain.n_boundary)])
        return Field(self.domain, vals)


class TorusPropagator:
    """Transition operators of the walk in the periodized environment on ``[0, L)^d``."""

    def __init__(self, env: Environment, L: int):
        self.env = env
        self.L = int(L)
        self.d = env.dim
        self.domain = torus_sites(self.d, self.L)
        self.shape = (self.L,) * self.d
        W = env.weights(self.domain.sites).reshape(self.shape + (self.d,))
        self.weights = W
        self.half = [0.5 * W[..., i] for i in range(self.d)]

    def forward(self, mu: np.ndarray) -> np.ndarray:
        out = np.zeros_like(mu)
        for i in range(self.d):
            q = mu * self.half[i]
            out += np.roll(q, 1, axis=i) + np.roll(q, -1, axis=i)
        return out

    def backward(self, u: np.ndarray) -> np.ndarray:
        out = np.zeros_like(u)
        for i in range(self.d):
            out += self.half[i] * (np.roll(u, -1, axis=i) + np.roll(u, 1, axis=i))
        return out

    def continuous(self, f: np.ndarray, t: float, tol: float, backward: bool = True) -> np.ndarray:
        step = self.backward if backward else self.forward
        acc = np.zeros_like(f)
        cur = f
        for n, p in enumerate(poisson_weights(t, tol)):
            if n:
                cur = step(cur)
            acc += p * cur
        return acc


def _box_for(env: Environment, t: float, tol: float, n_max: int, extra: float = 0.0) -> int:
    r = truncation_radius(t, _spatial_tol(tol, env.dim)) + extra
    return int(min(math.ceil(r), n_max + math.ceil(extra)))


def heat_kernel_discrete(env: Environment, x0, n: int, radius: float | None = None) -> KernelSlice:
    """``y -> p_n(x0, y)``, exact when ``radius >= n``."""
    if n < 0:
        raise ValueError("n must be nonnegative")
    half = n if radius is None else int(min(n, max(0, math.floor(radius))))
    prop = BoxPropagator(env, x0, half)
    mu = prop.delta(x0)
    for _ in range(n):
        mu = prop.forward(mu)
    deficit = max(0.0, 1.0 - float(mu.sum()))
    return KernelSlice(tuple(int(c) for c in x0), float(n), prop.as_field(mu), deficit, True)


def heat_kernel_continuous(env: Environment, x0, t: float, tol: float = 1e-12) -> KernelSlice:
    """``y -> p_t(x0, y)`` with total mass ``>= 1 - tol``."""
    if t < 0:
        raise ValueError("t must be nonnegative")
    pw = poisson_weights(t, tol / 2)
    half = _box_for(env, t, tol, len(pw) - 1)
    prop = BoxPropagator(env, x0, half)
    mu = prop.continuous(prop.delta(x0), t, tol / 2)
    deficit = max(0.0, 1.0 - float(mu.sum()))
    return KernelSlice(tuple(int(c) for c in x0), float(t), prop.as_field(mu), deficit, False,
                       {"tol": tol, "half_width": half})


def evolve_measure(env: Environment, mu: KernelSlice, s: float, tol: float = 1e-12) -> KernelSlice:
    """``y -> sum_z mu(z) p_s(z, y)`` on the box of ``mu`` (killed outside)."""
    dom = mu.field.domain
    prop = BoxPropagator(env, dom.center, int(dom.radius))
    arr = mu.field.interior.reshape(prop.shape)
    out = prop.continuous(arr, s, tol / 2)
    deficit = max(0.0, 1.0 - float(out.sum()))
    return KernelSlice(mu.x0, mu.time + s, prop.as_field(out), deficit, False)


def chapman_kolmogorov_residual(env: Environment, x0, t: float, s: float, tol: float = 1e-12) -> float:
    """``max_y |p_{t+s}(x0, y) - sum_z p_t(x0, z) p_s(z, y)|`` on a common box."""
    whole = heat_kernel_continuous(env, x0, t + s, tol)
    dom = whole.field.domain
    prop = BoxPropagator(env, x0, int(dom.radius))
    first = prop.continuous(prop.delta(x0), t, tol / 2)
    second = prop.continuous(first, s, tol / 2)
    return float(np.max(np.abs(whole.field.interior - second.ravel())))


def forward_equation_residual(env: Environment, x0, t: float, h: float, tol: float = 1e-13) -> float:
    """``max_y |(p_{t+h} - p_t)/h - (p_t P - p_t)|``; first order in ``h``."""
    k = heat_kernel_continuous(env, x0, t + h, tol)
    dom = k.field.domain
    prop = BoxPropagator(env, x0, int(dom.radius))
    pt = prop.continuous(prop.delta(x0), t, tol / 2)
    lhs = (k.field.interior.reshape(prop.shape) - pt) / h
    rhs = prop.forward(pt) - pt
    return float(np.max(np.abs(lhs - rhs)))


def semigroup_apply(env: Environment, zeta: Observable, t: float, tol: float = 1e-12) -> float:
    """``P_t zeta(omega) = sum_z p_t(0, z) zeta(theta_z omega)``."""
    origin = (0,) * env.dim
    if t == 0:
        return float(zeta.evaluate(env, np.asarray(origin)))
    k = heat_kernel_continuous(env, origin, t, tol)
    dom = k.field.domain
    vals = zeta.evaluate(env, dom.sites)
    return float(np.dot(k.field.interior, vals))


def backward_kernel_to(env: Environment, target, n_steps: int, half_width: int):
    """Iterates ``u_k(y) = P^y(X_k = target, no exit)``, ``k = 0..n_steps``, on a box."""
    prop = BoxPropagator(env, target, half_width)
    u = prop.delta(target)
    yield prop, u
    for _ in range(n_steps):
        u = prop.backward(u)
        yield prop, u


def _integrated_kernel_terms(env: Environment, T: float, tol: float, extra: float):
    """``(prop, sum_n u_n(y) P(N_T > n))`` for the backward kernel to the origin."""
    # Poisson tail: sum_{n > N} P(N_T > n) <= tol/2
    n_max = int(T + 10 * math.sqrt(T + 1) + 10)
    while True:
        k = np.arange(n_max + 1, n_max + 400)
        if np.sum(stats.poisson.sf(k, T)) <= tol / 4:
            break
        n_max = int(1.5 * n_max) + 10
    sp_tol = tol / (2 * max(T, 1.0))
    half = int(min(math.ceil(truncation_radius(T, _spatial_tol(sp_tol, env.dim)) + extra),
                   n_max + math.ceil(extra)))
    surv = stats.poisson.sf(np.arange(n_max + 1), T)
    origin = (0,) * env.dim
    acc = None
    prop = None
    for n, (prop, u) in enumerate(backward_kernel_to(env, origin, n_max, half)):
        if acc is None:
            acc = np.zeros_like(u)
        acc += surv[n] * u
    return prop, acc


def time_integrated_kernel(env: Environment, x, T: float, tol: float = 1e-10) -> float:
    """``int_0^T p_t(x, 0) dt``.

    Uses ``int_0^T pi_n(t) dt = P(N_T > n)`` for the Poisson weights, so the
    integral is the exact series ``sum_n p_n(x, 0) P(N_T > n)`` truncated
    with a controlled tail.
    """
    if T <= 0:
        return 0.0
    x = np.asarray(x, dtype=np.int64)
    prop, acc = _integrated_kernel_terms(env, T, tol, float(np.max(np.abs(x))))
    return float(prop.as_field(acc).get(x, 0.0))


def time_integrated_field(env: Environment, T: float, tol: float = 1e-10) -> Field:
    """``y -> int_0^T p_t(y, 0) dt`` on the truncation box around the origin."""
    prop, acc = _integrated_kernel_terms(env, T, tol, 0.0)
    return prop.as_field(acc)


def potential_kernel(env: Environment, x, tol: float = 1e-4, max_doublings: int = 6) -> float:
    """``A(x) = sum_n [p_n(0, 0) - p_n(x, 0)]`` for two-dimensional walks.

    The continuous-time integral ``I(T) = int_0^T (p_t(0,0) - p_t(x,0)) dt``
    is evaluated exactly at ``T, 2T, 4T`` and extrapolated, assuming
    ``I(T) = A + a/T + b/T^2 + ...``.  ``T`` starts at
    ``max(|x|^2, 1) / sqrt(tol)`` and doubles until the three-point and
    two-point extrapolations agree to ``tol``.
    """
    if env.dim != 2:
        raise ValueError("the potential kernel is defined here for d = 2 only")
    x = np.asarray(x, dtype=np.int64)
    if not np.any(x):
        return 0.0
    T0 = max(float(x @ x), 1.0) / math.sqrt(tol)
    est = float("nan")
    for _ in range(max_doublings):
        Ts = (T0, 2 * T0, 4 * T0)
        vals = []
        for T in Ts:
            prop, acc = _integrated_kernel_terms(env, T, tol * 1e-2, float(np.max(np.abs(x))))
            f = prop.as_field(acc)
            vals.append(float(f.get(np.zeros(2, dtype=np.int64))) - float(f.get(x)))
        i1, i2, i4 = vals
        three = (8 * i4 - 6 * i2 + i1) / 3
        two = 2 * i4 - i2
        est = three
        if abs(three - two) <= tol:
            return est
        T0 *= 2
    raise RuntimeError(f"potential kernel tail extrapolation did not settle (last {est})")


def green_whole(env: Environment, x, tol: float = 1e-3, cfg: SolverConfig = DEFAULT_CONFIG,
                r_start: float = 8.0, r_max: float = 32.0) -> float:
    """Whole-space Green function ``G(x) = lim_R G_R(x, 0)`` for ``d >= 3``."""
    return float(green_whole_many(env, [x], tol, cfg, r_start, r_max)[0])


def green_whole_many(env: Environment, xs, tol: float = 1e-3, cfg: SolverConfig = DEFAULT_CONFIG,
                     r_start: float = 8.0, r_max: float = 32.0) -> np.ndarray:
    """``G(x)`` for several ``x`` from one sequence of ball solves.

    ``G_R(x) = G(x) - c R^{2-d} + ...`` so consecutive doublings are
    combined as ``(2^{d-2} G_{2R} - G_R) / (2^{d-2} - 1)``.  Radii double
    until the extrapolated value at the origin moves by less than ``tol``
    (and ``R >= 4 (|x| + 1)`` for every requested ``x``).  All points share
    the same radii, so linear relations between values are kept exactly.
    """
    d = env.dim
    if d < 3:
        raise ValueError("the whole-space Green function needs d >= 3")
    xs = np.asarray(xs, dtype=np.int64).reshape(-1, d)
    need = 4 * (np.sqrt((xs ** 2).sum(axis=1)).max() + 1)
    fac = 2.0 ** (d - 2)
    R = r_start
    prev_field = green_ball(env, R, cfg=cfg)
    prev_ext = None
    while True:
        R2 = 2 * R
        if R2 > r_max and prev_ext is not None:
            raise RuntimeError(f"green_whole did not reach tol={tol} by R={R}")
        cur = green_ball(env, R2, cfg=cfg)
        pts = np.vstack([np.zeros((1, d), dtype=np.int64), xs])
        ext = (fac * cur.get(pts) - prev_field.get(pts)) / (fac - 1)
        if prev_ext is not None and abs(ext[0] - prev_ext[0]) < tol and R2 >= need:
            return ext[1:]
        if R2 >= r_max and R2 >= need:
            if prev_ext is None or abs(ext[0] - prev_ext[0]) < tol:
                return ext[1:]
            raise RuntimeError(f"green_whole did not reach tol={tol} by R={R2}")
        prev_ext, prev_field, R = ext, cur, R2


def kernel_envelope_stats(env: Environment, t_grid, c0: float, C0: float,
                          r_max: int | None = None, tol: float = 1e-12) -> dict:
    """Upper/lower envelope statistics of ``p_t(x, 0)`` over an ``(x, t)`` grid.

    upper = ``sup p_t(x,0) (1+t)^{d/2} exp(c0 h(|x|, t))``,
    lower = ``inf p_t(x,0) (1+t)^{d/2} exp(C0 |x|^2 / t)`` over ``|x| <= r_max``.
    """
    from .testfn import mfh

    d = env.dim
    upper, lower = 0.0, math.inf
    for t in t_grid:
        pw = poisson_weights(t, tol / 2)
        half = _box_for(env, t, tol, len(pw) - 1)
        prop = BoxPropagator(env, (0,) * d, half)
        u = prop.continuous(prop.delta((0,) * d), t, tol / 2, backward=True)
        sites = prop.domain.sites
        r = np.sqrt((sites.astype(float) ** 2).sum(axis=1))
        keep = r <= (r_max if r_max is not None else math.sqrt(t) + 1)
        p = u.ravel()[keep]
        rr = r[keep]
        h = np.array([mfh(ri, t) for ri in rr])
        up = p * (1 + t) ** (d / 2) * np.exp(c0 * h)
        lo = p * (1 + t) ** (d / 2) * np.exp(C0 * rr ** 2 / t)
        upper = max(upper, float(up.max()))
        lower = min(lower, float(lo.min()))
    return {"upper": upper, "lower": lower}
