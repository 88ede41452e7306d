"""Quantitative homogenization of the Dirichlet problem and corrector growth.

The discrete problem on ``B_R`` is

    L u = R^-2 f(x/R) psi(theta_x omega)  in B_R,    u = g(x/|x|)  on the boundary,

and the effective problem on the unit ball is ``(1/2) tr(a_bar D^2 u_bar) = f psi_bar``
with ``u_bar = g`` on the sphere.  Each :class:`HomogCase` has a closed-form
``u_bar`` valid for every ``a_bar`` with unit trace (or, for case C, every
``a_bar`` with equal diagonal entries).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from ..environment import Environment
from ..lattice import ball_sites, euclidean_norm
from ..observables import Observable, constant, weight_component
from ..operators import DEFAULT_CONFIG, SolverConfig, dirichlet_solve


@dataclass(frozen=True)
class HomogCase:
    """A right-hand side, boundary datum and its closed-form effective solution.

    ``f`` and ``ubar`` act on points of the unit ball, ``g`` on points of the
    unit sphere; all take arrays of shape ``(n, d)``.  ``psi`` is ``None``
    when ``f`` vanishes.
    """

    id: str
    f: Callable[[np.ndarray], np.ndarray]
    g: Callable[[np.ndarray], np.ndarray]
    ubar: Callable[[np.ndarray], np.ndarray]
    psi: str | None = None
    requires_exchangeable: bool = False
    description: str = ""

    def check_valid(self, env: Environment) -> None:
        if self.requires_exchangeable and not env.law.exchangeable:
            raise ValueError(f"case {self.id} needs an axis-exchangeable law")


def _zero(p):
    return np.zeros(len(p))


def _one(p):
    return np.ones(len(p))


CASES = {
    "A": HomogCase("A", _zero, lambda s: s[:, 0], lambda p: p[:, 0],
                   description="f = 0, g = x_1, u_bar = x_1"),
    "B": HomogCase("B", _one, _zero, lambda p: (p * p).sum(axis=1) - 1.0, psi="one",
                   description="f psi = 1, g = 0, u_bar = |x|^2 - 1"),
    "C": HomogCase("C", _zero, lambda s: s[:, 0] ** 2 - s[:, 1] ** 2,
                   lambda p: p[:, 0] ** 2 - p[:, 1] ** 2, requires_exchangeable=True,
                   description="f = 0, g = x_1^2 - x_2^2, u_bar = x_1^2 - x_2^2"),
}


def get_case(case: str | HomogCase) -> HomogCase:
    if isinstance(case, HomogCase):
        return case
    try:
        return CASES[str(case).upper()]
    except KeyError:
        raise ValueError(f"unknown homogenization case {case!r}") from None


def effective_solution(case: str | HomogCase, x, env: Environment | None = None) -> float | np.ndarray:
    """Closed-form ``u_bar(x)`` for ``|x| <= 1``."""
    c = get_case(case)
    if env is not None:
        c.check_valid(env)
    p = np.asarray(x, dtype=np.float64)
    single = p.ndim == 1
    p = p.reshape(-1, p.shape[-1])
    if np.any((p * p).sum(axis=1) > 1 + 1e-12):
        raise ValueError("effective solution is defined on the closed unit ball")
    if c.id == "C" and p.shape[1] < 2:
        raise ValueError("case C needs d >= 2")
    out = c.ubar(p)
    return float(out[0]) if single else out


def _psi_observable(c: HomogCase, d: int) -> Observable:
    if c.psi is None or c.psi == "one":
        return constant(1.0, d)
    if c.psi.startswith("w"):
        return weight_component(int(c.psi[1:]) - 1, d)
    raise ValueError(f"unknown psi {c.psi!r}")


def solve_case(env: Environment, R: float, case: str | HomogCase,
               cfg: SolverConfig = DEFAULT_CONFIG):
    """The discrete solution ``u`` on ``B_R`` as a Field."""
    c = get_case(case)
    c.check_valid(env)
    if R < 2:
        raise ValueError("need R >= 2")
    d = env.dim
    dom = ball_sites((0,) * d, R)
    x = dom.sites.astype(np.float64)
    rhs = c.f(x / R) / R ** 2
    if np.any(rhs):
        rhs = rhs * _psi_observable(c, d).evaluate(env, dom.sites)
    b = dom.boundary.astype(np.float64)
    g = c.g(b / euclidean_norm(b)[:, None])
    return dirichlet_solve(env, dom, rhs, g, cfg)


def homogenization_error(env: Environment, R: float, case: str | HomogCase,
                         cfg: SolverConfig = DEFAULT_CONFIG) -> float:
    """``max_{x in B_R} |u(x) - u_bar(x / R)|``."""
    c = get_case(case)
    u = solve_case(env, R, c, cfg)
    x = u.domain.sites.astype(np.float64)
    return float(np.max(np.abs(u.interior - c.ubar(x / R))))


def rate_fit(pairs: Sequence[tuple[float, float]]) -> tuple[float, float, float]:
    """Least squares ``log err = slope log R + intercept``; returns ``(slope, intercept, rms)``."""
    arr = np.asarray(pairs, dtype=np.float64)
    if arr.ndim != 2 or arr.shape[1] != 2 or len(arr) < 2:
        raise ValueError("need at least two (R, err) pairs")
    if np.any(arr <= 0):
        raise ValueError("R and err must be positive")
    lx, ly = np.log(arr[:, 0]), np.log(arr[:, 1])
    slope, intercept = np.polyfit(lx, ly, 1)
    rms = float(np.sqrt(np.mean((ly - (slope * lx + intercept)) ** 2)))
    return float(slope), float(intercept), rms


def corrector_growth(env: Environment, R_grid: Sequence[float], a_bar: Sequence[float],
                     cfg: SolverConfig = DEFAULT_CONFIG) -> dict:
    """Solve ``L phi_i = a_bar_i - w_i`` on ``B_R`` with zero boundary for each axis.

    Reports ``max |phi_i|`` per radius and the fitted growth exponent of
    ``max_i max |phi_i|`` (``None`` when the corrector vanishes).
    """
    d = env.dim
    if len(a_bar) != d:
        raise ValueError("a_bar must have one entry per axis")
    rows = []
    for R in R_grid:
        dom = ball_sites((0,) * d, R)
        W = env.weights(dom.sites)
        sups, bnd = [], 0.0
        for i in range(d):
            phi = dirichlet_solve(env, dom, a_bar[i] - W[:, i], 0.0, cfg)
            sups.append(float(np.max(np.abs(phi.values))))
            bnd = max(bnd, float(np.max(np.abs(phi.boundary_values))) if dom.n_boundary else 0.0)
        rows.append({"R": float(R), "max_abs": sups, "max_all": max(sups), "boundary_max": bnd})
    pos = [(r["R"], r["max_all"]) for r in rows if r["max_all"] > 0]
    exponent = rate_fit(pos)[0] if len(pos) >= 2 else None
    return {"rows": rows, "exponent": exponent, "a_bar": list(map(float, a_bar))}
