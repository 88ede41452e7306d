"""Finite lattice domains: discrete balls, boxes and tori.

Every domain stores its interior sites and its discrete (outer) boundary
as lexicographically sorted integer arrays.  Field values are laid out as
``[interior..., boundary...]`` and :meth:`LatticeDomain.index` maps arbitrary
sites to positions in that layout (``-1`` when outside).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import cached_property

import numpy as np

from .environment import unit_vectors


class OutOfDomainError(LookupError):
    """Raised when a field or stencil is evaluated outside its support."""


def _lexsort(a: np.ndarray) -> np.ndarray:
    if len(a) == 0:
        return a
    order = np.lexsort(a.T[::-1])
    return a[order]


def _grid(lo: np.ndarray, hi: np.ndarray) -> np.ndarray:
    """All integer points of the box ``lo <= x <= hi`` in lexicographic order."""
    axes = [np.arange(a, b + 1, dtype=np.int64) for a, b in zip(lo, hi)]
    mesh = np.meshgrid(*axes, indexing="ij")
    return np.stack([m.ravel() for m in mesh], axis=-1)


def _outer_boundary(sites: np.ndarray, member) -> np.ndarray:
    d = sites.shape[1]
    cand = (sites[:, None, :] + unit_vectors(d)[None, :, :]).reshape(-1, d)
    cand = cand[~member(cand)]
    cand = np.unique(cand, axis=0)
    return _lexsort(cand)


@dataclass(frozen=True, eq=False)
class LatticeDomain:
    """A finite set of lattice sites plus its discrete boundary.

    Attributes
    ----------
    kind : ``"ball"``, ``"box"`` or ``"torus"``.
    sites : (n, d) interior sites, lexicographic.
    boundary : (m, d) sites at l1-distance 1 from ``sites`` but not in it
        (empty for tori).
    center, radius : ball parameters (``radius`` is the half-width for boxes).
    side : torus side length.
    """

    kind: str
    sites: np.ndarray
    boundary: np.ndarray
    center: tuple = ()
    radius: float = 0.0
    side: int = 0

    @property
    def dim(self) -> int:
        return self.sites.shape[1]

    @property
    def n_sites(self) -> int:
        return len(self.sites)

    @property
    def n_boundary(self) -> int:
        return len(self.boundary)

    @cached_property
    def all_sites(self) -> np.ndarray:
        return np.concatenate([self.sites, self.boundary], axis=0)

    @cached_property
    def key(self) -> tuple:
        return (self.kind, self.dim, tuple(self.center), float(self.radius), int(self.side))

    @cached_property
    def _lookup(self):
        pts = self.all_sites
        lo = pts.min(axis=0)
        hi = pts.max(axis=0)
        shape = tuple(int(s) for s in hi - lo + 1)
        table = np.full(shape, -1, dtype=np.int64)
        table[tuple((pts - lo).T)] = np.arange(len(pts))
        return lo, hi, table

    def index(self, x) -> np.ndarray:
        """Layout positions of sites ``x`` (shape ``(..., d)``); ``-1`` if absent."""
        x = np.asarray(x, dtype=np.int64)
        if self.kind == "torus":
            y = np.mod(x, self.side)
            flat = np.ravel_multi_index(tuple(np.moveaxis(y, -1, 0)), (self.side,) * self.dim)
            return np.asarray(flat, dtype=np.int64)
        lo, hi, table = self._lookup
        inside = np.all((x >= lo) & (x <= hi), axis=-1)
        out = np.full(x.shape[:-1], -1, dtype=np.int64)
        if np.any(inside):
            rel = x[inside] - lo
            out[inside] = table[tuple(rel.T)]
        return out

    def index_strict(self, x) -> np.ndarray:
        idx = self.index(x)
        if np.any(idx < 0):
            bad = np.asarray(x)[idx < 0] if np.ndim(idx) else np.asarray(x)
            raise OutOfDomainError(f"site(s) outside domain: {bad.reshape(-1, self.dim)[:3].tolist()}")
        return idx

    def contains(self, x) -> np.ndarray:
        """True for interior sites."""
        idx = self.index(x)
        return (idx >= 0) & (idx < self.n_sites)

    @cached_property
    def neighbor_index(self) -> np.ndarray:
        """(n, 2d) layout positions of the neighbors of each interior site."""
        nb = self.sites[:, None, :] + unit_vectors(self.dim)[None, :, :]
        return self.index_strict(nb)


def ball_sites(center, R: float) -> LatticeDomain:
    """The discrete ball ``{x : |x - center| < R}`` and its outer boundary."""
    if R < 1:
        raise ValueError(f"ball radius must be >= 1, got {R}")
    c = np.asarray(center, dtype=np.int64)
    d = c.shape[0]
    if d < 2:
        raise ValueError("dimension must be >= 2")
    k = int(math.ceil(R))
    cube = _grid(c - k, c + k)
    r2 = ((cube - c) ** 2).sum(axis=1)
    sites = cube[r2 < R * R]

    def member(p):
        return ((p - c) ** 2).sum(axis=1) < R * R

    return LatticeDomain("ball", _lexsort(sites), _outer_boundary(sites, member),
                         tuple(int(v) for v in c), float(R))


def box_sites(center, half_width: int) -> LatticeDomain:
    """The cube ``|x - center|_inf <= half_width`` and its outer boundary."""
    c = np.asarray(center, dtype=np.int64)
    m = int(half_width)
    if m < 0:
        raise ValueError("half width must be nonnegative")
    sites = _grid(c - m, c + m)

    def member(p):
        return np.all(np.abs(p - c) <= m, axis=1)

    return LatticeDomain("box", sites, _outer_boundary(sites, member),
                         tuple(int(v) for v in c), float(m))


def torus_sites(dim: int, L: int) -> LatticeDomain:
    """The torus ``(Z / L Z)^dim`` represented by ``[0, L)^dim``."""
    if L < 3:
        raise ValueError(f"torus side must be >= 3, got {L}")
    sites = _grid(np.zeros(dim, dtype=np.int64), np.full(dim, L - 1, dtype=np.int64))
    return LatticeDomain("torus", sites, np.zeros((0, dim), dtype=np.int64),
                         (0,) * dim, 0.0, int(L))


def euclidean_norm(sites) -> np.ndarray:
    return np.sqrt((np.asarray(sites, dtype=np.float64) ** 2).sum(axis=-1))
