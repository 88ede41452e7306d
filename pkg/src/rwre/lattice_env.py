"""Lattice geometry and reproducible balanced environments in one namespace."""

from __future__ import annotations

from .environment import (LAW_KINDS, Environment, EnvironmentLaw, LawError, batch_weights,
                          make_environment, resample_site, shift, site_weights,
                          transition_probability, unit_vectors)
from .lattice import (LatticeDomain, OutOfDomainError, ball_sites, box_sites, euclidean_norm,
                      torus_sites)

__all__ = [
    "LAW_KINDS", "Environment", "EnvironmentLaw", "LatticeDomain", "LawError", "OutOfDomainError",
    "ball_sites", "batch_weights", "box_sites", "euclidean_norm", "make_environment",
    "resample_site", "shift", "site_weights", "torus_sites", "transition_probability",
    "unit_vectors",
]
