"""Trajectory simulation, exit statistics and environment-process functionals.

Walkers are simulated in vectorized batches.  Every random number is a pure
function of (replicate seed, draw index): step ``k`` uses draw ``2k`` to pick
the neighbor and draw ``2k + 1`` for the holding time that precedes it, so a
replicate gives the same path whether simulated alone or inside a batch.

Neighbors are sampled by inverse CDF over ``w_1/2, w_1/2, ..., w_d/2, w_d/2``
in the order ``+e_1, -e_1, ..., +e_d, -e_d``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy import stats

from . import rng
from .environment import Environment, EnvironmentLaw, batch_weights, unit_vectors
from .lattice import ball_sites
from .observables import Observable


@dataclass
class PathSample:
    """Visited sites (and jump times for continuous-time paths)."""

    sites: np.ndarray
    times: np.ndarray | None = None
    meta: dict = field(default_factory=dict)

    @property
    def n_jumps(self) -> int:
        return len(self.sites) - 1


def path_keys(seeds) -> np.ndarray:
    """Per-path stream keys from replicate seeds."""
    return rng.combine(rng.seed_key(0, rng.TAG_PATH), np.asarray(seeds, dtype=np.uint64))


def replicate_seeds(master_seed: int, reps: int, offset: int = 0) -> np.ndarray:
    return rng.replicate_seed(master_seed, np.arange(offset, offset + reps, dtype=np.int64))


def choose_direction(W: np.ndarray, u: np.ndarray) -> np.ndarray:
    """Inverse-CDF neighbor choice; ``W`` is ``(B, d)``, ``u`` is ``(B,)``."""
    probs = np.repeat(0.5 * W, 2, axis=1)
    cum = np.cumsum(probs, axis=1)
    k = (u[:, None] >= cum).sum(axis=1)
    return np.minimum(k, probs.shape[1] - 1)


class _Lookup:
    """Weights of one environment, tabulated on a ball when the walk is confined."""

    def __init__(self, env: Environment, R: float | None = None):
        self.env = env
        self.dom = ball_sites((0,) * env.dim, R) if R is not None else None
        if self.dom is not None:
            self.table = env.weights(self.dom.all_sites)

    def __call__(self, idx: np.ndarray, pos: np.ndarray) -> np.ndarray:
        if self.dom is not None:
            k = self.dom.index(pos)
            if np.all(k >= 0):
                return self.table[k]
        return self.env.weights(pos)


def _discrete_run(weights: Callable, x0, keys: np.ndarray, n_steps: int | None = None,
                  stop: Callable | None = None, visit: Callable | None = None,
                  record: bool = False):
    """Lockstep discrete walks.  Returns final positions, step counts and paths."""
    d = len(x0)
    B = len(keys)
    pos = np.tile(np.asarray(x0, dtype=np.int64), (B, 1))
    steps = np.zeros(B, dtype=np.int64)
    active = np.ones(B, dtype=bool)
    if stop is not None:
        active &= ~stop(pos)
    uv = unit_vectors(d)
    hist = [pos.copy()] if record else None
    k = 0
    while np.any(active) and (n_steps is None or k < n_steps):
        idx = np.flatnonzero(active)
        if visit is not None:
            visit(idx, pos[idx])
        u = rng.uniforms(keys[idx], 2 * k)
        W = weights(idx, pos[idx])
        pos[idx] += uv[choose_direction(W, u)]
        steps[idx] += 1
        if stop is not None:
            active[idx] &= ~stop(pos[idx])
        if record:
            hist.append(pos.copy())
        k += 1
    return pos, steps, hist


def _continuous_run(weights: Callable, x0, keys: np.ndarray, t: float,
                    zeta: Callable | None = None, record: bool = False):
    """Lockstep continuous-time walks up to time ``t``.

    Returns final positions, jump counts, integrals of ``zeta`` along the
    path (if given) and, when ``record``, per-jump positions and times.
    """
    d = len(x0)
    B = len(keys)
    pos = np.tile(np.asarray(x0, dtype=np.int64), (B, 1))
    clock = np.zeros(B)
    jumps = np.zeros(B, dtype=np.int64)
    integral = np.zeros(B)
    active = np.ones(B, dtype=bool) if t > 0 else np.zeros(B, dtype=bool)
    uv = unit_vectors(d)
    sites_hist, times_hist = ([pos[0].copy()], []) if record else (None, None)
    k = 0
    while np.any(active):
        idx = np.flatnonzero(active)
        hold = -np.log(rng.uniforms(keys[idx], 2 * k + 1))
        remaining = t - clock[idx]
        done = hold >= remaining
        if zeta is not None:
            integral[idx] += np.minimum(hold, remaining) * zeta(idx, pos[idx])
        clock[idx] += hold
        jumping = idx[~done]
        if len(jumping):
            u = rng.uniforms(keys[jumping], 2 * k)
            W = weights(jumping, pos[jumping])
            pos[jumping] += uv[choose_direction(W, u)]
            jumps[jumping] += 1
            if record:
                sites_hist.append(pos[jumping[0]].copy())
                times_hist.append(clock[jumping[0]])
        active[idx[done]] = False
        k += 1
    return pos, jumps, integral, (sites_hist, times_hist)


def simulate_path(env: Environment, x0, n: int, rng_seed: int) -> PathSample:
    """``n`` steps of the discrete walk started at ``x0``."""
    keys = path_keys([rng_seed])
    lookup = _Lookup(env)
    _, _, hist = _discrete_run(lookup, x0, keys, n_steps=n, record=True)
    return PathSample(np.stack([h[0] for h in hist]))


def simulate_continuous(env: Environment, x0, t: float, rng_seed: int) -> PathSample:
    """Continuous-time walk on ``[0, t]``: visited sites and jump times."""
    keys = path_keys([rng_seed])
    _, _, _, (sites, times) = _continuous_run(_Lookup(env), x0, keys, t, record=True)
    return PathSample(np.stack(sites), np.asarray(times, dtype=np.float64))


def discrete_positions(env: Environment, x0, n: int, reps: int, seed: int) -> np.ndarray:
    """``X_n`` for ``reps`` independent walks (replicate ``i`` uses seed ``mix(seed, i)``)."""
    keys = path_keys(replicate_seeds(seed, reps))
    pos, _, _ = _discrete_run(_Lookup(env), x0, keys, n_steps=n)
    return pos


def continuous_positions(env: Environment, x0, t: float, reps: int, seed: int):
    """``(Y_t, number of jumps)`` for ``reps`` independent walks."""
    keys = path_keys(replicate_seeds(seed, reps))
    pos, jumps, _, _ = _continuous_run(_Lookup(env), x0, keys, t)
    return pos, jumps


def _outside(R: float):
    return lambda p: (p.astype(np.float64) ** 2).sum(axis=1) >= R * R


def first_exit(env: Environment, x0, R: float, rng_seed: int) -> tuple[int, tuple]:
    """``(tau_R, X_tau)`` for the discrete walk from ``x0`` in ``B_R(0)``."""
    keys = path_keys([rng_seed])
    pos, steps, _ = _discrete_run(_Lookup(env, R), x0, keys, stop=_outside(R))
    return int(steps[0]), tuple(int(c) for c in pos[0])


def exit_statistics(env: Environment, x0, R: float, reps: int, seed: int):
    """Exit times and exit sites of ``reps`` replicates."""
    keys = path_keys(replicate_seeds(seed, reps))
    pos, steps, _ = _discrete_run(_Lookup(env, R), x0, keys, stop=_outside(R))
    return steps, pos


def batch_stderr(values: np.ndarray, n_batches: int = 20) -> float:
    """Standard error from batch means over consecutive replicate blocks."""
    v = np.asarray(values, dtype=np.float64)
    n = len(v)
    if n < 2:
        return 0.0
    nb = min(n_batches, n)
    means = np.array([b.mean() for b in np.array_split(v, nb)])
    sizes = np.array([len(b) for b in np.array_split(v, nb)])
    if nb < 2:
        return 0.0
    # weighted batch-means variance of the grand mean
    grand = np.average(means, weights=sizes)
    var = np.sum(sizes * (means - grand) ** 2) / (nb - 1) / n
    return float(np.sqrt(var))


def mc_exit_time(env: Environment, x0, R: float, reps: int, seed: int) -> tuple[float, float]:
    steps, _ = exit_statistics(env, x0, R, reps, seed)
    return float(steps.mean()), batch_stderr(steps)


def mc_exit_functional(env: Environment, x0, R: float, f: Callable[[np.ndarray], np.ndarray],
                       reps: int, seed: int) -> tuple[float, float]:
    """``E^x0[sum_{n < tau_R} f(X_n)]`` for the discrete walk: ``(mean, stderr)``.

    ``f`` maps an ``(k, d)`` array of sites to ``k`` values.
    """
    totals = np.zeros(reps)

    def visit(i, p):
        totals[i] += f(p)

    keys = path_keys(replicate_seeds(seed, reps))
    _discrete_run(_Lookup(env, R), x0, keys, stop=_outside(R), visit=visit)
    return float(totals.mean()), batch_stderr(totals)


def mc_green_estimate(env: Environment, x0, R: float, S, reps: int, seed: int) -> tuple[float, float]:
    """Occupation count of ``S`` before exiting ``B_R``: ``(mean, stderr)``."""
    S = np.asarray(S, dtype=np.int64).reshape(-1, env.dim)
    dom = ball_sites((0,) * env.dim, R)
    idx = dom.index(S)
    mask = np.zeros(dom.n_sites + dom.n_boundary)
    mask[idx[(idx >= 0) & (idx < dom.n_sites)]] = 1.0
    return mc_exit_functional(env, x0, R, lambda p: mask[dom.index(p)], reps, seed)


def env_process_integral(env: Environment, zeta: Observable, t: float, rng_seed: int) -> float:
    """``int_0^t zeta(theta_{Y_s} omega) ds`` along one continuous-time path."""
    keys = path_keys([rng_seed])
    _, _, integral, _ = _continuous_run(_Lookup(env), np.zeros(env.dim, dtype=np.int64), keys, t,
                                        zeta=lambda i, p: zeta.evaluate(env, p))
    return float(integral[0])


def env_process_integrals(law: EnvironmentLaw, zeta: Observable, t: float, reps: int,
                          seed: int) -> np.ndarray:
    """Integrals for ``reps`` replicates, each with a fresh environment and path."""
    env_seeds = rng.replicate_seed(seed, 2 * np.arange(reps, dtype=np.int64))
    walk_seeds = rng.replicate_seed(seed, 2 * np.arange(reps, dtype=np.int64) + 1)
    keys = path_keys(walk_seeds)
    offs = zeta.offsets

    def weights(i, p):
        return batch_weights(law, env_seeds[i], p)

    def zfun(i, p):
        return zeta.evaluate_weights(batch_weights(law, env_seeds[i], p[:, None, :] + offs))

    _, _, integral, _ = _continuous_run(weights, np.zeros(law.dim, dtype=np.int64), keys, t, zeta=zfun)
    return integral


def fclt_sample(law: EnvironmentLaw, zeta: Observable, t: float, reps: int, seed: int,
                zeta_mean: float) -> dict:
    """Standardized additive functionals ``t^{-1/2} int_0^t (zeta - E_Q zeta)``.

    Returns the samples together with the two-sided Kolmogorov-Smirnov
    statistic and p-value against a normal law with the sample mean and
    variance.
    """
    integrals = env_process_integrals(law, zeta, t, reps, seed)
    samples = (integrals - t * zeta_mean) / np.sqrt(t)
    mean = float(samples.mean())
    sd = float(samples.std(ddof=1)) if reps > 1 else 0.0
    if sd > 0:
        ks = stats.kstest(samples, "norm", args=(mean, sd))
        ks_stat, p = float(ks.statistic), float(ks.pvalue)
    else:
        ks_stat, p = 0.0, 1.0
    return {"samples": samples, "mean": mean, "variance": sd ** 2,
            "stderr": float(sd / np.sqrt(reps)) if reps else 0.0,
            "ks_statistic": ks_stat, "ks_pvalue": p, "t": t, "reps": reps, "seed": seed}
