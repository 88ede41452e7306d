"""Local observables of the environment.

A local observable ``zeta`` depends on the environment only through the
weights at a finite set of offsets (its support).  Its stationary extension
``zeta(theta_x omega)`` is evaluated for many sites ``x`` at once.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .environment import Environment


@dataclass(frozen=True)
class Observable:
    """``zeta(omega) = evaluator(weights on support)``.

    Parameters
    ----------
    name : label used in reports and on the command line.
    support : offsets (tuples of length d) the observable reads.
    evaluator : maps an array of weights of shape ``(..., len(support), d)``
        to values of shape ``(...)``.
    bound : an upper bound for ``|zeta|``.
    """

    name: str
    support: tuple
    evaluator: Callable[[np.ndarray], np.ndarray]
    bound: float

    @property
    def offsets(self) -> np.ndarray:
        return np.asarray(self.support, dtype=np.int64).reshape(len(self.support), -1)

    def evaluate(self, env: Environment, sites) -> np.ndarray:
        """``zeta(theta_x omega)`` for each ``x`` in ``sites`` (shape ``(..., d)``)."""
        sites = np.asarray(sites, dtype=np.int64)
        pts = sites[..., None, :] + self.offsets
        return np.asarray(self.evaluator(env.weights(pts)), dtype=np.float64)

    def evaluate_weights(self, weights: np.ndarray) -> np.ndarray:
        return np.asarray(self.evaluator(weights), dtype=np.float64)

    def shifted_by(self, c: float, name: str | None = None) -> "Observable":
        """``zeta - c`` (used for centering)."""
        f = self.evaluator
        return Observable(name or f"{self.name}-{c:g}", self.support,
                          lambda w: f(w) - c, self.bound + abs(c))


def constant(value: float, dim: int) -> Observable:
    return Observable(f"const({value:g})", ((0,) * dim,),
                      lambda w: np.full(w.shape[:-2], float(value)), abs(float(value)))


def weight_component(i: int, dim: int, offset=None) -> Observable:
    """``zeta(omega) = w_i(offset)`` (zero-based axis ``i``)."""
    off = tuple(offset) if offset is not None else (0,) * dim
    return Observable(f"w{i + 1}", (off,), lambda w: w[..., 0, i], 1.0)


def weight_product(dim: int) -> Observable:
    """``d^d * prod_i w_i(0)``, a nonlinear single-site observable in ``[0, 1]``."""
    scale = float(dim) ** dim
    return Observable("wprod", ((0,) * dim,), lambda w: scale * np.prod(w[..., 0, :], axis=-1), 1.0)


def two_site(dim: int) -> Observable:
    """``w_1(0) * w_1(e_1)``, a two-site observable."""
    e1 = tuple(1 if k == 0 else 0 for k in range(dim))
    return Observable("w1w1e1", ((0,) * dim, e1), lambda w: w[..., 0, 0] * w[..., 1, 0], 1.0)


def by_name(name: str, dim: int) -> Observable:
    """Parse ``w1``..``wd``, ``wprod``, ``w1w1e1``, ``one`` or ``zero``."""
    if name == "one":
        return constant(1.0, dim)
    if name == "zero":
        return constant(0.0, dim)
    if name == "wprod":
        return weight_product(dim)
    if name == "w1w1e1":
        return two_site(dim)
    if name.startswith("w") and name[1:].isdigit():
        i = int(name[1:]) - 1
        if not 0 <= i < dim:
            raise ValueError(f"observable {name!r} needs axis in 1..{dim}")
        return weight_component(i, dim)
    raise ValueError(f"unknown observable {name!r}")
