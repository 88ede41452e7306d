"""Deterministic comparison functions and numerical verifiers of their inequalities.

Radial profiles
---------------
``mfh(r, t) = r^2 / max(r, t) + r log(max(r / t, 1))``
``U(r) = -log r`` (d = 2), ``r^{2-d}`` (d >= 3)
``a(r) = -(log r) exp(r^-delta / delta)`` (d = 2), ``r^{2-d} exp(-r^-delta / delta)`` (d >= 3)
``b(r) = -(log r) exp(-r^-delta / delta)`` (d = 2), ``r^{2-d} exp(r^-delta / delta)`` (d >= 3)
``eta(r) = (1 + r^2)^-theta`` with ``theta = 1 / (4 kappa)``

The verifiers turn existence statements with unspecified constants into
grid searches over user-supplied ranges and report the constants found,
the worst margins and a witness site for every failure.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy.special import logsumexp

from .environment import Environment
from .lattice import ball_sites, euclidean_norm
from .operators import DEFAULT_CONFIG, Field, SolverConfig, dirichlet_solve, generator_values, green_ball


# closed-form profiles ---------------------------------------------------------

def mfh(r, t):
    """``r^2 / (r v t) + r log((r / t) v 1)``."""
    r = np.asarray(r, dtype=np.float64)
    t = np.asarray(t, dtype=np.float64)
    if np.any(t <= 0):
        raise ValueError("t must be positive")
    out = r * r / np.maximum(r, t) + r * np.log(np.maximum(r / t, 1.0))
    return float(out) if out.ndim == 0 else out


def u_profile(r, d: int):
    """``-log r`` for ``d = 2`` and ``r^{2-d}`` for ``d >= 3``."""
    r = np.asarray(r, dtype=np.float64)
    if np.any(r <= 0):
        raise ValueError("r must be positive")
    out = -np.log(r) if d == 2 else r ** (2.0 - d)
    return float(out) if out.ndim == 0 else out


def _check(r, delta):
    r = np.asarray(r, dtype=np.float64)
    if np.any(r <= 0) or delta <= 0:
        raise ValueError("need r > 0 and delta > 0")
    return r


def tfa_bar(r, delta: float, d: int):
    r = _check(r, delta)
    e = r ** (-delta) / delta
    out = -np.log(r) * np.exp(e) if d == 2 else r ** (2.0 - d) * np.exp(-e)
    return float(out) if out.ndim == 0 else out


def tfb_bar(r, delta: float, d: int):
    r = _check(r, delta)
    e = r ** (-delta) / delta
    out = -np.log(r) * np.exp(-e) if d == 2 else r ** (2.0 - d) * np.exp(e)
    return float(out) if out.ndim == 0 else out


def eta_bar(r, theta: float):
    r = np.asarray(r, dtype=np.float64)
    out = (1.0 + r * r) ** (-theta)
    return float(out) if out.ndim == 0 else out


def eta(y, theta: float):
    """``eta(y) = (1 + |y|^2)^-theta`` for points ``y`` of shape ``(..., d)``."""
    y = np.asarray(y, dtype=np.float64)
    return eta_bar(np.sqrt((y * y).sum(axis=-1)), theta)


def theta_of(kappa: float) -> float:
    return 1.0 / (4.0 * kappa)


def envelope_exponent(d: int, kappa: float) -> float:
    """``s = 2 + 1/(2 kappa) - d``."""
    return 2.0 + 1.0 / (2.0 * kappa) - d


@dataclass(frozen=True)
class RadialProfile:
    """A named radial function with its parameters, callable on radii."""

    kind: str
    params: dict = field(default_factory=dict)

    def __call__(self, r):
        p = self.params
        k = self.kind
        if k == "tfa":
            return tfa_bar(r, p["delta"], p["d"])
        if k == "tfb":
            return tfb_bar(r, p["delta"], p["d"])
        if k == "eta":
            return eta_bar(r, p["theta"])
        if k == "exp-linear":
            return np.exp(-2 * p["alpha"] * np.asarray(r, dtype=float) / p["R"])
        if k == "exp-quadratic":
            return np.exp(-p["A"] * np.asarray(r, dtype=float) ** 2 / p.get("R", 1.0) ** 2)
        if k == "U":
            return u_profile(r, p["d"])
        if k == "mfh":
            return mfh(r, p["t"])
        raise ValueError(f"unknown profile kind {k!r}")


# finite differences -----------------------------------------------------------

# fourth-order central stencils on offsets -3..3
_D1 = np.array([0, 1, -8, 0, 8, -1, 0]) / 12.0
_D2 = np.array([0, -1, 16, -30, 16, -1, 0]) / 12.0
_D3 = np.array([1, -8, 13, 0, -13, 8, -1]) / 8.0


def radial_derivatives(f: Callable, r: np.ndarray, h_rel: float = 1e-2):
    """``f', f'', f'''`` by fourth-order central differences with step ``h_rel * r``."""
    r = np.asarray(r, dtype=np.float64)
    h = h_rel * r
    offs = np.arange(-3, 4)
    vals = np.stack([f(r + k * h) for k in offs], axis=0)
    d1 = np.tensordot(_D1, vals, axes=1) / h
    d2 = np.tensordot(_D2, vals, axes=1) / h ** 2
    d3 = np.tensordot(_D3, vals, axes=1) / h ** 3
    return d1, d2, d3


@dataclass(frozen=True)
class VerifierConfig:
    """Search ranges and sample sizes for the lemma verifiers."""

    n_env: int = 100
    r_grid: tuple = tuple(np.linspace(10, 100, 91))
    alpha_grid: tuple = tuple(np.round(np.arange(0.05, 1.0, 0.05), 10))
    A_grid: tuple = tuple(np.round(np.arange(0.5, 12.01, 0.25), 10))
    C0_grid: tuple = tuple(np.round(np.arange(0.05, 10.01, 0.05), 10))
    gamma_grid: tuple = tuple(np.round(np.arange(1.0, 40.01, 1.0), 10))
    fd_step: float = 1e-2
    fd_check: float = 1e-6
    scan_radius: float | None = None


def _first_failure(r: np.ndarray, ok: np.ndarray):
    bad = np.flatnonzero(~ok)
    return None if len(bad) == 0 else float(r[bad[0]])


def _threshold(r: np.ndarray, ok: np.ndarray):
    """Smallest grid radius from which ``ok`` holds up to the end of the grid."""
    if ok.all():
        return float(r[0])
    bad = np.flatnonzero(~ok)
    last = bad[-1]
    return float(r[last + 1]) if last + 1 < len(r) else None


def verify_radial_lemma(delta: float, d: int, r_grid: Sequence[float] | None = None,
                        cfg: VerifierConfig = VerifierConfig()) -> dict:
    """Check the monotonicity, derivative, Laplacian and regularity claims for ``a``, ``b``.

    Checks on the grid, with radial derivatives by finite differences:

    * ``a_decreasing``, ``b_decreasing``: ``a' < 0`` and ``b' < 0``;
    * ``a_derivative``: ``-a'(r) r^{d-1}`` positive and finite (two-sided
      comparability with ``r^{1-d}``; its range is reported);
    * ``b_derivative``: ``0.5 <= -b'(r) r^{d-1} <= d - 0.5``;
    * ``a_laplacian``: ``-Lap a >= r^{-(2+delta)} |a|``;
    * ``b_laplacian``: ``-Lap b <= -r^{-(2+delta)} |b|``;
    * ``a_regularity``, ``b_regularity``: ``r^k |f^{(k)}| / |f|`` finite for
      ``k <= 3`` (ranges reported).

    ``Lap f(|y|) = f'' + (d - 1) f' / r``.
    """
    r = np.asarray(r_grid if r_grid is not None else cfg.r_grid, dtype=np.float64)
    if np.any(r <= 0) or np.any(np.diff(r) <= 0):
        raise ValueError("radius grid must be positive and increasing")
    out: dict = {"lemma": "radial", "delta": delta, "d": d,
                 "r_min": float(r[0]), "r_max": float(r[-1]), "checks": {}}
    fa = lambda x: tfa_bar(x, delta, d)  # noqa: E731
    fb = lambda x: tfb_bar(x, delta, d)  # noqa: E731
    derivs = {}
    fd_ok = True
    for name, f in (("a", fa), ("b", fb)):
        d1, d2, d3 = radial_derivatives(f, r, cfg.fd_step)
        e1, e2, e3 = radial_derivatives(f, r, cfg.fd_step / 2)
        scale = np.abs(f(r)) / r
        err = np.max(np.abs(d1 - e1) / np.maximum(np.abs(e1), scale))
        if err > cfg.fd_check:
            fd_ok = False
        derivs[name] = (f(r), e1, e2, e3)
    out["finite_difference_ok"] = fd_ok
    pw = r ** (-(2 + delta))

    def record(name, ok, margin, extra=None):
        rec = {"passed": bool(ok.all()), "first_failure": _first_failure(r, ok),
               "threshold": _threshold(r, ok), "worst_margin": float(np.min(margin))}
        if extra:
            rec.update(extra)
        out["checks"][name] = rec

    for name in ("a", "b"):
        f0, f1, f2, f3 = derivs[name]
        record(f"{name}_decreasing", f1 < 0, -f1 * r ** (d - 1))
        lap = f2 + (d - 1) * f1 / r
        if name == "a":
            margin = -lap - pw * np.abs(f0)
        else:
            margin = -(-lap + pw * np.abs(f0))
        record(f"{name}_laplacian", margin >= 0, margin / np.maximum(np.abs(f0) * pw, 1e-300))
        ratios = [r ** k * np.abs(fk) / np.abs(f0) for k, fk in ((1, f1), (2, f2), (3, f3))]
        finite = np.all([np.isfinite(q) for q in ratios], axis=0)
        record(f"{name}_regularity", finite, np.zeros_like(r),
               {"ratio_max": [float(np.max(q)) for q in ratios]})
    fa1 = derivs["a"][1]
    da = -fa1 * r ** (d - 1)
    record("a_derivative", (da > 0) & np.isfinite(da), da,
           {"range": [float(da.min()), float(da.max())]})
    db = -derivs["b"][1] * r ** (d - 1)
    record("b_derivative", (db >= 0.5) & (db <= d - 0.5), np.minimum(db - 0.5, d - 0.5 - db),
           {"range": [float(db.min()), float(db.max())]})
    all_ok = np.ones_like(r, dtype=bool)
    for rec in out["checks"].values():
        ff = rec["threshold"]
        if ff is None:
            all_ok[:] = False
        else:
            all_ok &= r >= ff
    out["threshold_radius"] = float(r[all_ok][0]) if all_ok.any() else None
    out["passed"] = all(rec["passed"] for rec in out["checks"].values()) and fd_ok
    out["failed_checks"] = [k for k, v in out["checks"].items() if not v["passed"]]
    return out


# exponential test functions --------------------------------------------------

def _annulus(R: float, d: int) -> np.ndarray:
    """Lattice sites with ``R/2 <= |x| < R``."""
    dom = ball_sites((0,) * d, R)
    s = dom.sites
    return s[euclidean_norm(s) >= R / 2]


def _half_w(env: Environment, sites: np.ndarray) -> np.ndarray:
    return 0.5 * env.weights(sites)


def exp_linear_ratio(env: Environment, sites: np.ndarray, alpha: float, R: float,
                     hw: np.ndarray | None = None) -> np.ndarray:
    """``L f / f`` for ``f(x) = exp(-2 alpha |x| / R)``; ``hw`` caches ``w / 2`` at ``sites``."""
    hw = _half_w(env, sites) if hw is None else hw
    x = sites.astype(np.float64)
    n0 = euclidean_norm(x)
    acc = np.zeros(len(x))
    for i in range(env.dim):
        e = np.zeros(env.dim)
        e[i] = 1.0
        a = -2 * alpha * (euclidean_norm(x + e) - n0) / R
        b = -2 * alpha * (euclidean_norm(x - e) - n0) / R
        acc += hw[:, i] * (np.expm1(a) + np.expm1(b))
    return acc


def exp_quadratic_log_bracket(env: Environment, sites: np.ndarray, A: float,
                              hw: np.ndarray | None = None) -> np.ndarray:
    """``log sum_i (w_i/2)(e^{-A(1+2x_i)} + e^{-A(1-2x_i)})``.

    ``L e^{-A|x|^2} >= 0`` at ``x`` exactly when this is ``>= 0``.
    """
    hw = _half_w(env, sites) if hw is None else hw
    x = sites.astype(np.float64)
    terms = np.concatenate([np.log(hw) - A * (1 + 2 * x), np.log(hw) - A * (1 - 2 * x)], axis=1)
    return logsumexp(terms, axis=1)


def exp_quadratic_scaled_ratio(env: Environment, sites: np.ndarray, A: float, R: float,
                               hw: np.ndarray | None = None) -> np.ndarray:
    """``L f / f`` for ``f(x) = exp(-A |x|^2 / R^2)``."""
    hw = _half_w(env, sites) if hw is None else hw
    x = sites.astype(np.float64)
    c = A / R ** 2
    return np.sum(hw * (np.expm1(-c * (1 + 2 * x)) + np.expm1(-c * (1 - 2 * x))), axis=1)


def verify_exponential_lemma(envs: Sequence[Environment], R: float,
                             cfg: VerifierConfig = VerifierConfig()) -> dict:
    """Grid-search the constants of the three exponential test-function displays.

    1. ``L exp(-2 alpha |x|/R) <= 0`` on ``R/2 <= |x| < R``: ``alpha0`` is the
       largest grid value such that every grid ``alpha <= alpha0`` passes.
    2. ``L exp(-A |x|^2) >= -1_{x=0}``: at ``x = 0`` the value is exactly
       ``e^{-A} - 1``; elsewhere the sign is checked on ``B_{R+1}``.
    3. ``L exp(-A |x|^2 / R^2) > 0`` on ``R/2 <= |x| < R`` for ``A <= sqrt(R)``.

    ``A0`` is the smallest grid value such that every grid ``A`` in
    ``[A0, sqrt(R)]`` passes displays 2 and 3 on every environment.
    """
    if not envs:
        raise ValueError("need at least one environment")
    d = envs[0].dim
    ann = _annulus(R, d)
    inner = ball_sites((0,) * d, R + 1).sites
    nz = inner[np.any(inner != 0, axis=1)]
    report: dict = {"lemma": "exponential", "R": R, "n_env": len(envs)}
    alphas = sorted(cfg.alpha_grid)
    A_vals = [A for A in sorted(cfg.A_grid) if A * A <= R]
    worst1 = np.full(len(alphas), -np.inf)
    worst2 = np.full(len(A_vals), np.inf)
    worst3 = np.full(len(A_vals), np.inf)
    wit1: dict = {}
    wit23: dict = {}
    origin_err = 0.0
    for k, e in enumerate(envs):
        hw_ann = _half_w(e, ann)
        hw_nz = _half_w(e, nz)
        for j, a in enumerate(alphas):
            v = exp_linear_ratio(e, ann, a, R, hw_ann)
            m = int(np.argmax(v))
            if v[m] > worst1[j]:
                worst1[j] = v[m]
                wit1[j] = {"alpha": a, "env": k, "site": ann[m].tolist(), "value": float(v[m])}
        for j, A in enumerate(A_vals):
            v2 = exp_quadratic_log_bracket(e, nz, A, hw_nz)
            v3 = exp_quadratic_scaled_ratio(e, ann, A, R, hw_ann)
            m2, m3 = int(np.argmin(v2)), int(np.argmin(v3))
            if v2[m2] < worst2[j]:
                worst2[j] = v2[m2]
                if v2[m2] < 0:
                    wit23[j] = {"A": A, "display": 2, "env": k, "site": nz[m2].tolist(), "value": float(v2[m2])}
            if v3[m3] < worst3[j]:
                worst3[j] = v3[m3]
                if v3[m3] <= 0 and j not in wit23:
                    wit23[j] = {"A": A, "display": 3, "env": k, "site": ann[m3].tolist(), "value": float(v3[m3])}
            # exact origin value: every neighbor has |x|^2 = 1
            origin_err = max(origin_err, abs(generator_values_at_origin(e, A) - (math.exp(-A) - 1)))

    # display 1: largest alpha0 such that every grid alpha <= alpha0 passes
    alpha0, j_bad = None, None
    for j, a in enumerate(alphas):
        if worst1[j] > 0:
            j_bad = j
            break
        alpha0 = a
    report["display1"] = {"alpha0": alpha0, "worst": dict(zip(map(str, alphas), worst1.tolist())),
                          "witness": wit1.get(j_bad) if j_bad is not None else None,
                          "passed": alpha0 is not None}

    # displays 2 and 3: smallest A0 such that every grid A in [A0, sqrt(R)] passes
    ok23 = (worst2 >= 0) & (worst3 > 0)
    A0, j_bad = None, None
    for j in range(len(A_vals) - 1, -1, -1):
        if not ok23[j]:
            j_bad = j
            break
        A0 = A_vals[j]
    report["display2"] = {"worst_log_bracket": dict(zip(map(str, A_vals), worst2.tolist())),
                          "origin_value_error": origin_err,
                          "origin_value_gt_minus_one": all(math.exp(-A) - 1 > -1 for A in A_vals)}
    report["display3"] = {"worst_ratio": dict(zip(map(str, A_vals), worst3.tolist()))}
    report["A0"] = A0
    report["A_range"] = [A0, A_vals[-1]] if A0 is not None else None
    report["witness_A"] = wit23.get(j_bad) if j_bad is not None else None
    report["passed"] = alpha0 is not None and A0 is not None
    return report


def generator_values_at_origin(env: Environment, A: float) -> float:
    """``L exp(-A |x|^2)`` at ``x = 0`` computed from the stencil."""
    w = env.weights(np.zeros(env.dim, dtype=np.int64))
    return float(np.sum(0.5 * w * (2 * math.exp(-A) - 2)))


def eta_log_ratio(env: Environment, sites: np.ndarray, theta: float) -> np.ndarray:
    """``L eta / eta`` at the given sites, computed without underflow."""
    hw = _half_w(env, sites)
    x = sites.astype(np.float64)
    q0 = 1 + (x * x).sum(axis=1)
    acc = np.zeros(len(x))
    for i in range(env.dim):
        qp = q0 + 1 + 2 * x[:, i]
        qm = q0 + 1 - 2 * x[:, i]
        acc += hw[:, i] * (np.expm1(theta * np.log(q0 / qp)) + np.expm1(theta * np.log(q0 / qm)))
    return acc


def verify_eta_lemma(envs: Sequence[Environment], kappa: float,
                     cfg: VerifierConfig = VerifierConfig()) -> dict:
    """Smallest grid ``C0`` with ``L eta >= 0`` outside ``B_{C0 theta^2}`` (and ``>= -1`` inside)."""
    theta = theta_of(kappa)
    d = envs[0].dim
    if theta < d / 2:
        raise ValueError("theta = 1/(4 kappa) must be at least d/2")
    scan = cfg.scan_radius or (3 * theta ** 2 + 10)
    sites = ball_sites((0,) * d, scan).sites
    r = euclidean_norm(sites)
    neg_r = 0.0
    inside_min = np.inf
    witness = None
    for k, e in enumerate(envs):
        ratio = eta_log_ratio(e, sites, theta)
        val = ratio * eta(sites, theta)
        inside_min = min(inside_min, float(val.min()))
        neg = ratio < 0
        if np.any(neg):
            j = int(np.argmax(np.where(neg, r, -1)))
            if r[j] >= neg_r:
                neg_r = float(r[j])
                witness = {"env": k, "site": sites[j].tolist(), "value": float(val[j])}
    C0 = None
    for c in sorted(cfg.C0_grid):
        if c * theta ** 2 > neg_r:
            C0 = float(c)
            break
    return {"lemma": "eta", "kappa": kappa, "theta": theta, "C0": C0,
            "negative_radius": neg_r, "region_radius": None if C0 is None else C0 * theta ** 2,
            "min_value": inside_min, "inside_ge_minus_one": inside_min >= -1.0,
            "scan_radius": scan, "witness": witness,
            "passed": C0 is not None and inside_min >= -1.0 and neg_r < scan - 1}


# assembled test functions h and ell ------------------------------------------

def c_alpha(R: float, alpha: float, delta: float, d: int) -> float:
    num = (tfa_bar(R / 2, delta, d) - tfa_bar(R, delta, d)) * R ** (d - 2)
    return num / (math.exp(-alpha + 2 * alpha / R) - math.exp(-2 * alpha))


def c_gamma(R: float, gamma: float, delta: float, d: int) -> float:
    num = (tfb_bar(R / 2, delta, d) - tfb_bar(R, delta, d)) * R ** (d - 2)
    return num / (math.exp(-gamma / 4) - math.exp(-gamma))


def h2_profile(r, R, R0, alpha, delta, d):
    a = lambda s: tfa_bar(s, delta, d)  # noqa: E731
    return R0 ** (d - 1) * ((1 / alpha - 1) * (a(R / 2) - a(R)) + a(r) - a(R))


def h3_profile(r, R, R0, alpha, delta, d):
    r = np.asarray(r, dtype=np.float64)
    C = c_alpha(R, alpha, delta, d)
    return R0 ** (d - 1) / alpha * C * R ** (2 - d) * (np.exp(-2 * alpha * (r - 1) / R) - math.exp(-2 * alpha))


def ell2_profile(r, R, R0, gamma, theta, delta, d):
    b = lambda s: tfb_bar(s, delta, d)  # noqa: E731
    return R0 ** (d - 2 - 2 * theta) * ((gamma ** -2 - 1) * (b(R / 2) - b(R)) + b(r) - b(R))


def ell3_profile(r, R, R0, gamma, theta, delta, d):
    r = np.asarray(r, dtype=np.float64)
    C = c_gamma(R, gamma, delta, d)
    return R0 ** (d - 2 - 2 * theta) * gamma ** -2 * C * R ** (2 - d) * (np.exp(-gamma * r ** 2 / R ** 2) - math.exp(-gamma))


@dataclass
class Assembly:
    """A piecewise test function on ``B_R`` plus its pieces and diagnostics."""

    field: Field
    inner: Field
    pieces: dict
    diagnostics: dict


def _check_radii(R, R0):
    if R < 4 * R0:
        raise ValueError("need R >= 4 R0")
    if R0 < 1:
        raise ValueError("need R0 >= 1")


def _sphere_points(d: int, radius: float, n: int = 16) -> np.ndarray:
    """Deterministic points on the sphere of the given radius."""
    g = np.random.default_rng(12345).normal(size=(n, d))
    g[0] = 0
    g[0, 0] = 1
    return radius * g / np.linalg.norm(g, axis=1, keepdims=True)


def assemble_h(env: Environment, R: float, R0: float, alpha: float, delta: float,
               cfg: SolverConfig = DEFAULT_CONFIG) -> Assembly:
    """The piecewise upper test function ``h`` on ``B_R`` and its boundary.

    ``h1`` solves ``L h1 = -L|x|`` in ``B_{R0}`` with ``h1 = h2`` on its
    boundary; ``h2`` and ``h3`` are the closed-form profiles.
    """
    _check_radii(R, R0)
    d = env.dim
    inner_dom = ball_sites((0,) * d, R0)
    rb = euclidean_norm(inner_dom.boundary)
    g = h2_profile(rb, R, R0, alpha, delta, d) + rb
    w = dirichlet_solve(env, inner_dom, 0.0, g, cfg)
    h1 = Field(inner_dom, w.values - euclidean_norm(inner_dom.all_sites), {"residual": w.meta["residual"]})

    outer = ball_sites((0,) * d, R)
    pts = outer.all_sites
    r = euclidean_norm(pts)
    vals = np.empty(len(pts))
    in1 = outer.index(pts) >= 0
    m1 = r < R0
    m2 = (r >= R0) & (r < R / 2)
    m3 = r >= R / 2
    vals[m1] = h1.at(pts[m1])
    vals[m2] = h2_profile(r[m2], R, R0, alpha, delta, d)
    vals[m3] = h3_profile(r[m3], R, R0, alpha, delta, d)
    assert in1.all()
    h = Field(outer, vals)

    # interface checks
    jump1 = float(np.max(np.abs(h1.boundary_values - h2_profile(rb, R, R0, alpha, delta, d))))
    sph = euclidean_norm(_sphere_points(d, R / 2))
    jump2 = float(np.max(np.abs(h2_profile(sph, R, R0, alpha, delta, d) - h3_profile(sph, R, R0, alpha, delta, d))))
    # generator identity L h1 = -L|x| on B_{R0}
    Lh1 = generator_values(env, h1)
    norm_field = Field(inner_dom, euclidean_norm(inner_dom.all_sites))
    Lnorm = generator_values(env, norm_field)
    ident = float(np.max(np.abs(Lh1 + Lnorm)))
    diag = {"interface_inner": jump1, "interface_outer": jump2, "generator_identity": ident,
            "solver_residual": w.meta["residual"], "scale": float(np.max(np.abs(vals)))}
    return Assembly(h, h1, {"alpha": alpha, "delta": delta, "R": R, "R0": R0}, diag)


def assemble_ell(env: Environment, R: float, R0: float, gamma: float, theta: float, delta: float,
                 cfg: SolverConfig = DEFAULT_CONFIG) -> Assembly:
    """The piecewise lower test function ``ell`` on ``B_R`` and its boundary.

    ``ell1`` solves ``L ell1 = L eta`` in ``B_{R0}`` with ``ell1 = ell2`` on
    its boundary; ``ell2`` and ``ell3`` are the closed-form profiles.
    """
    _check_radii(R, R0)
    d = env.dim
    inner_dom = ball_sites((0,) * d, R0)
    rb = euclidean_norm(inner_dom.boundary)
    g = ell2_profile(rb, R, R0, gamma, theta, delta, d) - eta_bar(rb, theta)
    w = dirichlet_solve(env, inner_dom, 0.0, g, cfg)
    eta_all = eta(inner_dom.all_sites, theta)
    l1 = Field(inner_dom, w.values + eta_all, {"residual": w.meta["residual"]})

    outer = ball_sites((0,) * d, R)
    pts = outer.all_sites
    r = euclidean_norm(pts)
    vals = np.empty(len(pts))
    m1 = r < R0
    m2 = (r >= R0) & (r < R / 2)
    m3 = r >= R / 2
    vals[m1] = l1.at(pts[m1])
    vals[m2] = ell2_profile(r[m2], R, R0, gamma, theta, delta, d)
    vals[m3] = ell3_profile(r[m3], R, R0, gamma, theta, delta, d)
    ell = Field(outer, vals)

    jump1 = float(np.max(np.abs(l1.boundary_values - ell2_profile(rb, R, R0, gamma, theta, delta, d))))
    sph = euclidean_norm(_sphere_points(d, R / 2))
    jump2 = float(np.max(np.abs(ell2_profile(sph, R, R0, gamma, theta, delta, d)
                                - ell3_profile(sph, R, R0, gamma, theta, delta, d))))
    Ll1 = generator_values(env, l1)
    Leta = generator_values(env, Field(inner_dom, eta_all))
    ident = float(np.max(np.abs(Ll1 - Leta)))
    diag = {"interface_inner": jump1, "interface_outer": jump2, "generator_identity": ident,
            "solver_residual": w.meta["residual"], "scale": float(np.max(np.abs(vals)))}
    return Assembly(ell, l1, {"gamma": gamma, "theta": theta, "delta": delta, "R": R, "R0": R0}, diag)


def _lattice_annulus(dom, lo: float, hi: float, closed_hi: bool = False) -> np.ndarray:
    pts = dom.all_sites
    r = euclidean_norm(pts)
    m = (r >= lo) & ((r <= hi) if closed_hi else (r < hi))
    return pts[m]


def verify_comparison(env: Environment, R: float, R0: float, alpha: float, gamma: float,
                      delta: float, kappa: float, C0: float,
                      cfg: SolverConfig = DEFAULT_CONFIG, with_lower: bool = True) -> dict:
    """Compare ``G_R`` with ``h`` and ``H_R = G_R(., B_{C0 theta^2})`` with ``ell``.

    Reports the minimum of ``h - G_R`` over the closed ball, the largest
    ``c`` with ``H_R >= c ell`` and the ordering properties of the pieces.
    With ``with_lower=False`` only the upper comparison ``G_R <= h`` is made.
    """
    d = env.dim
    theta = theta_of(kappa)
    hA = assemble_h(env, R, R0, alpha, delta, cfg)
    G = green_ball(env, R, cfg=cfg)
    dom = G.domain
    h = hA.field
    margin_h = h.values - G.values
    k = int(np.argmin(margin_h))
    out = {
        "R": R, "R0": R0, "alpha": alpha, "delta": delta, "theta": theta,
        "C_alpha": c_alpha(R, alpha, delta, d),
        "h_minus_G_min": float(margin_h[k]), "h_minus_G_witness": dom.all_sites[k].tolist(),
        "G_le_h": bool(margin_h.min() >= -10 * cfg.tol * max(1.0, G.sup_norm())),
        "h_diagnostics": hA.diagnostics,
        "G": G,
    }
    if not with_lower:
        return out
    lA = assemble_ell(env, R, R0, gamma, theta, delta, cfg)
    src_r = min(C0 * theta ** 2, R - 1e-9)
    src = ball_sites((0,) * d, max(src_r, 1.0)).sites
    src = src[dom.contains(src)]
    H = green_ball(env, R, source=src, cfg=cfg)
    ell = lA.field.values
    pos = ell > 0
    c_fit = float(np.min(H.values[pos] / ell[pos])) if np.any(pos) else math.inf

    checks = {}
    # ordering of the h pieces
    pts = _lattice_annulus(dom, R0 / 2, R0)
    pts = pts[dom.contains(pts)]
    if len(pts):
        rr = euclidean_norm(pts)
        checks["h2_ge_h1_inner"] = float(np.min(h2_profile(rr, R, R0, alpha, delta, d) - hA.inner.at(pts)))
        checks["ell2_le_ell1_inner"] = float(np.min(lA.inner.at(pts) - ell2_profile(rr, R, R0, gamma, theta, delta, d)))
    rr = euclidean_norm(_lattice_annulus(dom, R / 2, R, closed_hi=True))
    checks["h2_ge_h3_outer"] = float(np.min(h2_profile(rr, R, R0, alpha, delta, d) - h3_profile(rr, R, R0, alpha, delta, d)))
    checks["ell2_le_ell3_outer"] = float(np.min(ell3_profile(rr, R, R0, gamma, theta, delta, d)
                                                - ell2_profile(rr, R, R0, gamma, theta, delta, d)))
    rr = euclidean_norm(_lattice_annulus(dom, R / 2 - 1, R / 2))
    if len(rr):
        checks["h2_le_h3_band"] = float(np.min(h3_profile(rr, R, R0, alpha, delta, d) - h2_profile(rr, R, R0, alpha, delta, d)))
    rr = euclidean_norm(_lattice_annulus(dom, R / 2 - 2, R / 2))
    if len(rr):
        checks["ell2_ge_ell3_band"] = float(np.min(ell2_profile(rr, R, R0, gamma, theta, delta, d)
                                                   - ell3_profile(rr, R, R0, gamma, theta, delta, d)))
    ann = _annulus(R, d)
    checks["L_h3_le_0"] = float(-np.max(exp_linear_ratio(env, ann, alpha, R)))
    checks["L_ell3_ge_0"] = float(np.min(exp_quadratic_scaled_ratio(env, ann, gamma, R)))
    out.update({"gamma": gamma, "c_fit": c_fit, "H_ge_c_ell": c_fit > 0, "orderings": checks,
                "ell_diagnostics": lA.diagnostics})
    return out


def green_envelope_stats(env: Environment, R: float, G_R: Field, kappa: float) -> dict:
    """Envelope ratios ``G_R(x) / (U(|x|+1) - U(R+2))`` and the derived statistics.

    ``H_up = max_{x != 0} ratio^{1/(d-1)}``, ``H_low = max_x ratio^{-1/s}``
    with ``s = 2 + 1/(2 kappa) - d``.
    """
    d = env.dim
    dom = G_R.domain
    x = dom.sites
    r = euclidean_norm(x)
    env_u = u_profile(r + 1, d) - u_profile(R + 2, d)
    ratio = G_R.interior / env_u
    s = envelope_exponent(d, kappa)
    nz = np.any(x != 0, axis=1)
    H_up = float(np.max(ratio[nz]) ** (1.0 / (d - 1)))
    H_low = float(np.max((1.0 / ratio) ** (1.0 / s)))
    return {"H_up": H_up, "H_low": H_low, "ratio_min": float(ratio.min()),
            "ratio_max": float(ratio.max()), "s": s,
            "positive_finite": bool(np.all(np.isfinite(ratio)) and np.all(ratio > 0))}
