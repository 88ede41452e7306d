"""The balanced generator, its adjoint, and Dirichlet solvers on lattice balls.

Under the normalization ``tr(omega) = 1`` the generator reads

    L u(x) = sum_i (w_i(x) / 2) * (u(x + e_i) + u(x - e_i) - 2 u(x)).

A Dirichlet problem ``L u = rhs`` in ``B``, ``u = g`` on the outer boundary is
the linear system ``(I - P_BB) u = P_Bb g - rhs`` for the killed transition
matrix ``P_BB``.  It is solved by sparse LU (moderate sizes), by a Krylov
method (large sizes), or by the killed-chain fixed point iteration
(``method="jacobi"`` / ``"gauss-seidel"``).  Every solve is followed by
iterative refinement and an explicit max-norm residual check.
"""

from __future__ import annotations

import math
import threading
from collections import OrderedDict
from dataclasses import dataclass, field
from typing import Any, Callable

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .environment import Environment, unit_vectors
from .lattice import LatticeDomain, OutOfDomainError, ball_sites


class SolverError(RuntimeError):
    """A linear solve did not reach the requested residual."""

    def __init__(self, message: str, residual: float = float("nan")):
        super().__init__(message)
        self.residual = residual


@dataclass
class Field:
    """Real values on the sites of a domain followed by its boundary sites."""

    domain: LatticeDomain
    values: np.ndarray
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        n = self.domain.n_sites + self.domain.n_boundary
        if self.values.shape != (n,):
            raise ValueError(f"field needs {n} values, got shape {self.values.shape}")

    @property
    def interior(self) -> np.ndarray:
        return self.values[: self.domain.n_sites]

    @property
    def boundary_values(self) -> np.ndarray:
        return self.values[self.domain.n_sites:]

    @property
    def sites(self) -> np.ndarray:
        return self.domain.all_sites

    def at(self, x):
        """Value(s) at site(s) ``x``; raises :class:`OutOfDomainError` outside."""
        idx = self.domain.index_strict(x)
        v = self.values[idx]
        return float(v) if np.ndim(v) == 0 else v

    def get(self, x, default: float = 0.0) -> np.ndarray:
        idx = self.domain.index(x)
        return np.where(idx >= 0, self.values[np.maximum(idx, 0)], default)

    def sup_norm(self) -> float:
        return float(np.max(np.abs(self.values))) if self.values.size else 0.0

    @classmethod
    def zeros(cls, domain: LatticeDomain) -> "Field":
        return cls(domain, np.zeros(domain.n_sites + domain.n_boundary))

    @classmethod
    def from_function(cls, domain: LatticeDomain, f: Callable[[np.ndarray], np.ndarray]) -> "Field":
        return cls(domain, np.asarray(f(domain.all_sites), dtype=np.float64))


@dataclass(frozen=True)
class SolverConfig:
    """Linear solver settings.

    ``tol`` is the target max-norm residual.  Direct and Krylov solves are
    refined until it is met; if refinement stalls at the roundoff floor the
    solve is accepted when the residual is below ``tol * max(1, |u|_inf)``.
    ``max_iters`` applies to the fixed-point methods (default
    ``50 (R + 1)^2 ln(1 / tol)``).  ``method`` is ``"auto"``, ``"direct"``,
    ``"krylov"``, ``"jacobi"`` or ``"gauss-seidel"``.
    """

    tol: float = 1e-12
    max_iters: int | None = None
    relaxation: float = 1.0
    method: str = "auto"
    direct_limit: int | None = None

    def __post_init__(self):
        if not self.tol >= 1e-14:
            raise ValueError("tol must be >= 1e-14")
        if self.max_iters is not None and self.max_iters < 1:
            raise ValueError("max_iters must be >= 1")
        if not 0.0 < self.relaxation <= 2.0:
            raise ValueError("relaxation must lie in (0, 2]")
        if self.method not in ("auto", "direct", "krylov", "jacobi", "gauss-seidel"):
            raise ValueError(f"unknown solver method {self.method!r}")

    def direct_cutoff(self, dim: int) -> int:
        if self.direct_limit is not None:
            return self.direct_limit
        return 60000 if dim == 2 else 2000

    def iteration_cap(self, radius: float) -> int:
        if self.max_iters is not None:
            return self.max_iters
        return int(50 * (radius + 1) ** 2 * math.log(1.0 / self.tol)) + 1


DEFAULT_CONFIG = SolverConfig()


# pointwise stencils ---------------------------------------------------------

def _site(x) -> np.ndarray:
    return np.asarray(x, dtype=np.int64)


def second_difference(u: Field, x, i: int) -> float:
    """``u(x + e_i) + u(x - e_i) - 2 u(x)``."""
    x = _site(x)
    e = np.zeros_like(x)
    e[i] = 1
    return u.at(x + e) + u.at(x - e) - 2.0 * u.at(x)


def apply_generator(env: Environment, u: Field, x) -> float:
    """``L u(x) = sum_y omega(x, y) (u(y) - u(x))``."""
    x = _site(x)
    w = env.weights(x)
    return float(sum(0.5 * w[i] * second_difference(u, x, i) for i in range(env.dim)))


def apply_adjoint(env: Environment, rho: Field, v: Field, x) -> float:
    """``L* v(x) = sum_y rho(y) omega(y, x) / rho(x) (v(y) - v(x))``."""
    x = _site(x)
    nbrs = x + unit_vectors(env.dim)
    r = rho.at(np.vstack([x[None, :], nbrs]))
    if np.any(r <= 0):
        raise ValueError("rho must be positive on the adjoint stencil")
    wy = env.weights(nbrs)
    axis = np.repeat(np.arange(env.dim), 2)
    omega_yx = 0.5 * wy[np.arange(2 * env.dim), axis]
    vx = v.at(x)
    vy = v.at(nbrs)
    return float(np.sum(r[1:] * omega_yx / r[0] * (vy - vx)))


def transition_matrix(env: Environment, domain: LatticeDomain) -> sp.csr_matrix:
    """Rows: interior sites; columns: interior then boundary sites."""
    n = domain.n_sites
    ncol = n + domain.n_boundary
    W = env.weights(domain.sites)
    probs = np.repeat(0.5 * W, 2, axis=1)
    nb = domain.neighbor_index
    rows = np.repeat(np.arange(n), 2 * env.dim)
    P = sp.csr_matrix((probs.ravel(), (rows, nb.ravel())), shape=(n, ncol))
    P.sum_duplicates()
    return P


def generator_values(env: Environment, u: Field) -> np.ndarray:
    """``L u`` at every interior site of ``u.domain``."""
    P = transition_matrix(env, u.domain)
    return P @ u.values - u.interior


# linear systems ---------------------------------------------------------------

class _System:
    """Killed-chain system ``M = I - P_II`` for one (environment, domain)."""

    def __init__(self, env: Environment, domain: LatticeDomain):
        self.domain = domain
        n = domain.n_sites
        self.P = transition_matrix(env, domain)
        self.P_II = self.P[:, :n].tocsr()
        self.P_IB = self.P[:, n:].tocsr()
        self.M = (sp.identity(n, format="csr") - self.P_II).tocsc()
        self._lu = None
        self._lu_t = None
        self._lock = threading.Lock()

    def lu(self, transpose: bool = False):
        with self._lock:
            if transpose:
                if self._lu_t is None:
                    self._lu_t = spla.splu(self.M.T.tocsc())
                return self._lu_t
            if self._lu is None:
                self._lu = spla.splu(self.M)
            return self._lu


_CACHE: "OrderedDict[tuple, _System]" = OrderedDict()
_CACHE_LOCK = threading.Lock()
_CACHE_SIZE = 8


def _system(env: Environment, domain: LatticeDomain) -> _System:
    key = (env.to_json(), domain.key)
    with _CACHE_LOCK:
        sys_ = _CACHE.get(key)
        if sys_ is not None:
            _CACHE.move_to_end(key)
            return sys_
    sys_ = _System(env, domain)
    with _CACHE_LOCK:
        _CACHE[key] = sys_
        while len(_CACHE) > _CACHE_SIZE:
            _CACHE.popitem(last=False)
    return sys_


def clear_cache() -> None:
    with _CACHE_LOCK:
        _CACHE.clear()


def _krylov(M, b: np.ndarray, rtol: float) -> np.ndarray:
    # bicgstab's breakdown test is absolute, so the right-hand side is normalized first
    nb = float(np.max(np.abs(b))) if b.size else 0.0
    if nb == 0.0:
        return np.zeros_like(b)
    b = b / nb
    x, info = spla.bicgstab(M, b, rtol=rtol, atol=0.0, maxiter=20 * M.shape[0])
    if info != 0 or not np.all(np.isfinite(x)):
        ilu = spla.spilu(M.tocsc(), drop_tol=1e-5, fill_factor=20)
        prec = spla.LinearOperator(M.shape, ilu.solve)
        x, info = spla.gmres(M, b, rtol=rtol, atol=0.0, M=prec, restart=100, maxiter=200)
    return nb * x


def _fixed_point(sys_: _System, b: np.ndarray, cfg: SolverConfig, radius: float) -> np.ndarray:
    """Killed-chain iteration ``u <- P_II u + b`` (optionally SOR-relaxed)."""
    n = b.shape[0]
    u = np.zeros_like(b)
    om = cfg.relaxation
    cap = cfg.iteration_cap(radius)
    check = max(1, min(50, cap))
    if cfg.method == "gauss-seidel":
        lower = sp.tril(sys_.P_II, k=-1, format="csr")
        upper = sp.triu(sys_.P_II, k=1, format="csr")
        T = (sp.identity(n, format="csr") - om * lower).tocsr()
    for it in range(1, cap + 1):
        if cfg.method == "jacobi":
            u = (1 - om) * u + om * (sys_.P_II @ u + b)
        else:
            rhs = om * (upper @ u + b) + (1 - om) * u
            u = spla.spsolve_triangular(T, rhs, lower=True)
        if it % check == 0 or it == cap:
            res = np.max(np.abs(b - sys_.M @ u)) if n else 0.0
            scale = max(1.0, float(np.max(np.abs(u))) if n else 0.0)
            if res <= cfg.tol * scale:
                return u
    res = float(np.max(np.abs(b - sys_.M @ u)))
    raise SolverError(f"{cfg.method} iteration did not converge in {cap} sweeps "
                      f"(residual {res:.3e})", res)


def _solve_matrix(sys_: _System, b: np.ndarray, cfg: SolverConfig, radius: float,
                  transpose: bool = False) -> np.ndarray:
    """Solve ``M u = b`` (or ``M^T u = b``) to the configured residual."""
    n = sys_.domain.n_sites
    M = sys_.M.T.tocsr() if transpose else sys_.M
    method = cfg.method
    cutoff = cfg.direct_cutoff(sys_.domain.dim)
    if method == "auto" or (transpose and method in ("jacobi", "gauss-seidel")):
        method = "direct" if n <= cutoff else "krylov"

    if method in ("jacobi", "gauss-seidel"):
        return _fixed_point(sys_, b, cfg, radius)

    def inner(rhs, rtol):
        if method == "direct":
            return sys_.lu(transpose).solve(rhs)
        if rhs.ndim == 1:
            return _krylov(M, rhs, rtol)
        return np.stack([_krylov(M, rhs[:, k], rtol) for k in range(rhs.shape[1])], axis=1)

    # refine towards the absolute target; the scaled bound is the fallback at the roundoff floor
    u = inner(b, 1e-12)
    best, best_res = u, np.inf
    for _ in range(8):
        r = b - M @ u
        res = float(np.max(np.abs(r))) if r.size else 0.0
        if res < best_res:
            best, best_res = u, res
        elif res > 0.5 * best_res:
            break
        if res <= cfg.tol:
            return u
        u = u + inner(r, 1e-8)
    u, res = best, best_res
    scale = max(1.0, float(np.max(np.abs(u))) if u.size else 0.0)
    if res <= cfg.tol * scale:
        return u
    raise SolverError(f"linear solve stalled at residual {res:.3e} (scale {scale:.3e})", res)


def _as_interior(domain: LatticeDomain, data) -> np.ndarray:
    n = domain.n_sites
    if isinstance(data, Field):
        if data.domain is domain:
            return data.interior.copy()
        return np.asarray(data.at(domain.sites), dtype=np.float64)
    if callable(data):
        return np.asarray(data(domain.sites), dtype=np.float64).reshape(n)
    arr = np.asarray(data, dtype=np.float64)
    if arr.ndim == 0:
        return np.full(n, float(arr))
    if arr.shape != (n,):
        raise ValueError(f"expected {n} interior values, got {arr.shape}")
    return arr.copy()


def _as_boundary(domain: LatticeDomain, data) -> np.ndarray:
    m = domain.n_boundary
    if isinstance(data, Field):
        if data.domain is domain:
            return data.boundary_values.copy()
        return np.asarray(data.at(domain.boundary), dtype=np.float64)
    if callable(data):
        return np.asarray(data(domain.boundary), dtype=np.float64).reshape(m)
    arr = np.asarray(data, dtype=np.float64)
    if arr.ndim == 0:
        return np.full(m, float(arr))
    if arr.shape != (m,):
        raise ValueError(f"expected {m} boundary values, got {arr.shape}")
    return arr.copy()


def dirichlet_solve(env: Environment, domain: LatticeDomain, rhs, boundary,
                    cfg: SolverConfig = DEFAULT_CONFIG) -> Field:
    """Solve ``L u = rhs`` in the domain with ``u = boundary`` on its boundary.

    ``rhs`` and ``boundary`` may be scalars, arrays in layout order, Fields
    or callables of an ``(k, d)`` site array.  The returned Field carries the
    achieved max-norm residual in ``meta["residual"]``.
    """
    if domain.kind == "torus" or domain.n_boundary == 0:
        raise ValueError("Dirichlet problems need a domain with a nonempty boundary")
    f = _as_interior(domain, rhs)
    g = _as_boundary(domain, boundary)
    sys_ = _system(env, domain)
    b = sys_.P_IB @ g - f
    u = _solve_matrix(sys_, b, cfg, domain.radius)
    values = np.concatenate([u, g])
    res = float(np.max(np.abs(sys_.P @ values - u - f))) if len(u) else 0.0
    out = Field(domain, values, {"residual": res, "tol": cfg.tol})
    if not np.any(f) and len(g):
        slack = 10 * cfg.tol * max(1.0, float(np.max(np.abs(g))))
        if u.min() < g.min() - slack or u.max() > g.max() + slack:
            raise SolverError("maximum principle violated by the computed solution", res)
    return out


def dirichlet_solve_many(env: Environment, domain: LatticeDomain, rhs_columns: np.ndarray,
                         cfg: SolverConfig = DEFAULT_CONFIG) -> np.ndarray:
    """Interior solutions of ``L u = rhs_k`` with zero boundary, one per column."""
    sys_ = _system(env, domain)
    B = -np.asarray(rhs_columns, dtype=np.float64)
    return _solve_matrix(sys_, B, cfg, domain.radius)


def _source_mask(domain: LatticeDomain, source) -> np.ndarray:
    src = np.asarray(source, dtype=np.int64).reshape(-1, domain.dim)
    idx = domain.index(src)
    if np.any((idx < 0) | (idx >= domain.n_sites)):
        raise OutOfDomainError("green function source must lie inside the ball")
    mask = np.zeros(domain.n_sites)
    mask[idx] = 1.0
    return mask


def green_ball(env: Environment, R: float, source=None, cfg: SolverConfig = DEFAULT_CONFIG,
               center=None) -> Field:
    """``x -> G_R(x, S)``: expected visits to ``S`` before leaving ``B_R(center)``."""
    center = (0,) * env.dim if center is None else center
    dom = ball_sites(center, R)
    source = [center] if source is None else source
    mask = _source_mask(dom, source)
    return dirichlet_solve(env, dom, -mask, 0.0, cfg)


def green_row(env: Environment, domain: LatticeDomain, y0,
              cfg: SolverConfig = DEFAULT_CONFIG) -> Field:
    """``x -> G(y0, x)``: expected visits to ``x`` of the walk started at ``y0``.

    Solves the transposed system ``(I - P)^T g = 1_{y0}``; the boundary
    values are zero.
    """
    sys_ = _system(env, domain)
    e = _source_mask(domain, [y0])
    g = _solve_matrix(sys_, e, cfg, domain.radius, transpose=True)
    res = float(np.max(np.abs(sys_.M.T @ g - e)))
    return Field(domain, np.concatenate([g, np.zeros(domain.n_boundary)]), {"residual": res})


def expected_exit_time(env: Environment, R: float, cfg: SolverConfig = DEFAULT_CONFIG,
                       center=None) -> Field:
    """``x -> E^x[tau_R]``: solves ``L u = -1`` with zero boundary values."""
    center = (0,) * env.dim if center is None else center
    dom = ball_sites(center, R)
    return dirichlet_solve(env, dom, -1.0, 0.0, cfg)


def solve_report(u: Field) -> dict[str, Any]:
    return {"n_sites": u.domain.n_sites, "residual": u.meta.get("residual")}
