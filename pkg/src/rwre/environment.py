"""Balanced i.i.d. random environments on Z^d.

Weights are stored in canonical form ``w = omega / tr(omega)`` so every site
carries a probability vector ``(w_1, ..., w_d)`` with ``w_i >= 2 kappa``.
The walk jumps ``x -> x +/- e_i`` with probability ``w_i(x) / 2``.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from typing import Any, Mapping

import numpy as np

from . import rng

LAW_KINDS = ("clipped-simplex", "two-point", "constant")


class LawError(ValueError):
    pass


@dataclass(frozen=True)
class EnvironmentLaw:
    """Single-site law of the normalized weight vector.

    ``clipped-simplex``: ``w = 2 kappa + (1 - 2 d kappa) * Dirichlet(1, ..., 1)``.
    ``two-point`` (d = 2 only): ``w_1`` is ``2 kappa`` or ``1 - 2 kappa`` with
    probability ``p`` (default 1/2) and ``1 - p``.
    ``constant``: ``w = (1/d, ..., 1/d)`` (the simple random walk).
    """

    dim: int
    kappa: float
    kind: str = "clipped-simplex"
    params: Mapping[str, float] = field(default_factory=dict)
    master_seed: int = 0

    def __post_init__(self):
        if self.dim < 2:
            raise LawError(f"dimension must be >= 2, got {self.dim}")
        if self.kind not in LAW_KINDS:
            raise LawError(f"unknown law kind {self.kind!r}")
        if not 0.0 < self.kappa <= 1.0 / (2 * self.dim) + 1e-15:
            raise LawError(f"kappa must lie in (0, 1/(2d)] = (0, {1 / (2 * self.dim):g}], "
                           f"got {self.kappa}")
        if self.kind == "two-point":
            if self.dim != 2:
                raise LawError("the two-point law is defined for d = 2 only")
            p = self.params.get("p", 0.5)
            if not 0.0 <= p <= 1.0:
                raise LawError("two-point probability must be in [0, 1]")
        object.__setattr__(self, "params", dict(self.params))

    @property
    def exchangeable(self) -> bool:
        """True when the law is symmetric under permutations of the axes."""
        if self.kind == "two-point":
            return self.params.get("p", 0.5) == 0.5
        return True

    def sample(self, keys: np.ndarray) -> np.ndarray:
        """Map hash keys of shape ``(...)`` to weights of shape ``(..., d)``."""
        keys = np.asarray(keys, dtype=np.uint64)
        d = self.dim
        if self.kind == "constant":
            return np.full(keys.shape + (d,), 1.0 / d)
        if self.kind == "two-point":
            p = self.params.get("p", 0.5)
            u = rng.uniforms(keys, 0)
            w1 = np.where(u < p, 2 * self.kappa, 1 - 2 * self.kappa)
            return np.stack([w1, 1.0 - w1], axis=-1)
        e = np.stack([-np.log(rng.uniforms(keys, j)) for j in range(d)], axis=-1)
        dirichlet = e / e.sum(axis=-1, keepdims=True)
        return 2 * self.kappa + (1 - 2 * d * self.kappa) * dirichlet

    def to_dict(self) -> dict[str, Any]:
        return {"dim": self.dim, "kappa": self.kappa, "kind": self.kind,
                "params": dict(sorted(self.params.items())),
                "master_seed": int(self.master_seed)}

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "EnvironmentLaw":
        return cls(int(d["dim"]), float(d["kappa"]), d["kind"],
                   dict(d.get("params", {})), int(d["master_seed"]))

    def with_seed(self, seed: int) -> "EnvironmentLaw":
        return replace(self, master_seed=int(seed))


def _as_sites(x, d: int) -> np.ndarray:
    a = np.asarray(x, dtype=np.int64)
    if a.shape[-1] != d:
        raise ValueError(f"expected sites with {d} coordinates, got shape {a.shape}")
    return a


@dataclass(frozen=True)
class Environment:
    """A realization of the environment, evaluated lazily site by site.

    ``offset`` implements the spatial shift ``(theta_x omega)(y) = omega(x + y)``;
    ``period`` (optional) periodizes the base field onto a torus of side ``L``.
    ``overrides`` are keyed by base-field coordinates and win over the hash.
    """

    law: EnvironmentLaw
    overrides: tuple = ()
    offset: tuple = ()
    period: int | None = None

    def __post_init__(self):
        if not self.offset:
            object.__setattr__(self, "offset", (0,) * self.law.dim)

    @property
    def dim(self) -> int:
        return self.law.dim

    @property
    def kappa(self) -> float:
        return self.law.kappa

    def _base(self, sites: np.ndarray) -> np.ndarray:
        b = sites + np.asarray(self.offset, dtype=np.int64)
        if self.period is not None:
            b = np.mod(b, self.period)
        return b

    def weights(self, sites) -> np.ndarray:
        """Weights at an array of sites ``(..., d)``; returns ``(..., d)``."""
        sites = _as_sites(sites, self.dim)
        shape = sites.shape
        base = self._base(sites.reshape(-1, self.dim))
        keys = rng.site_keys(rng.seed_key(self.law.master_seed, rng.TAG_SITE), base)
        w = self.law.sample(keys)
        for site, wv in self.overrides:
            mask = np.all(base == np.asarray(site), axis=-1)
            if np.any(mask):
                w[mask] = wv
        return w.reshape(shape)

    def shift(self, x) -> "Environment":
        x = tuple(int(c) for c in _as_sites(x, self.dim))
        new = tuple(a + b for a, b in zip(self.offset, x))
        return replace(self, offset=new)

    def periodized(self, L: int) -> "Environment":
        """The torus environment repeating the base field on ``[0, L)^d``."""
        if self.period is not None and self.period != L:
            raise ValueError("environment is already periodized with a different side")
        return replace(self, period=int(L))

    def resample_site(self, y, aux_seed: int) -> "Environment":
        """Replace the weights at ``y`` by a fresh draw keyed by ``aux_seed``."""
        y = _as_sites(y, self.dim)
        base = tuple(int(c) for c in self._base(y))
        key = rng.site_keys(rng.seed_key(aux_seed, rng.TAG_RESAMPLE), np.asarray(base))
        wv = tuple(float(v) for v in self.law.sample(key)[0])
        kept = tuple((s, w) for s, w in self.overrides if s != base)
        return replace(self, overrides=kept + ((base, wv),))

    def to_dict(self) -> dict[str, Any]:
        return {
            "law": self.law.to_dict(),
            "offset": list(self.offset),
            "period": self.period,
            "overrides": [{"site": list(s), "weights": list(w)} for s, w in self.overrides],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "Environment":
        law = EnvironmentLaw.from_dict(d["law"])
        ov = tuple((tuple(int(c) for c in o["site"]), tuple(float(v) for v in o["weights"]))
                   for o in d.get("overrides", []))
        return cls(law, ov, tuple(d.get("offset") or ()), d.get("period"))


def make_environment(dim: int, kappa: float, kind: str = "clipped-simplex",
                     seed: int = 0, **params) -> Environment:
    return Environment(EnvironmentLaw(dim, kappa, kind, params, seed))


def site_weights(env: Environment, x) -> np.ndarray:
    return env.weights(np.asarray(x, dtype=np.int64))


def transition_probability(env: Environment, x, y) -> float:
    """``omega(x, y)``: ``w_i(x)/2`` if ``y = x +/- e_i``, else 0."""
    x = np.asarray(x, dtype=np.int64)
    y = np.asarray(y, dtype=np.int64)
    diff = y - x
    if np.abs(diff).sum() != 1:
        return 0.0
    i = int(np.flatnonzero(diff)[0])
    return float(env.weights(x)[i]) / 2.0


def shift(env: Environment, x) -> Environment:
    return env.shift(x)


def resample_site(env: Environment, y, aux_seed: int) -> Environment:
    return env.resample_site(y, aux_seed)


def batch_weights(law: EnvironmentLaw, seeds, sites) -> np.ndarray:
    """Weights of independent environments, one master seed per leading index.

    ``seeds`` has shape ``(B,)`` and ``sites`` shape ``(B, ..., d)``; entry
    ``b`` is evaluated in the environment ``law.with_seed(seeds[b])``.
    """
    sites = np.asarray(sites, dtype=np.int64)
    keys = rng.seed_keys(np.asarray(seeds, dtype=np.uint64), rng.TAG_SITE)
    keys = keys.reshape(keys.shape + (1,) * (sites.ndim - 2))
    return law.sample(rng.site_keys(keys, sites))


def unit_vectors(d: int) -> np.ndarray:
    """Neighbor offsets in the fixed order ``+e_1, -e_1, ..., +e_d, -e_d``."""
    out = np.zeros((2 * d, d), dtype=np.int64)
    for i in range(d):
        out[2 * i, i] = 1
        out[2 * i + 1, i] = -1
    return out
