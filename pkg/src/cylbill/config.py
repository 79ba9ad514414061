"""Shared numerical tolerances and run configuration."""

from __future__ import annotations

from dataclasses import dataclass


@dataclass(frozen=True)
class Tolerances:
    """Numerical thresholds used across the package.

    ``rank_rel`` governs every rank decision on exactly-computed matrices;
    ``fd_rank_rel`` is the looser cutoff for matrices assembled from finite
    differences.  ``disc`` is the tangency guard on quadratic discriminants
    (scaled by the natural length^2 of the collision problem), ``t_min_gap``
    the minimal admissible advance between collisions, and ``fd_step`` the
    central-difference step.  Finite-difference probes refuse paths whose
    smallest collision incidence |<v, n>| is below ``fd_incidence``: closer
    to tangency the truncation error swamps the derivative.
    """

    ortho: float = 1e-12
    drop: float = 1e-10
    rank_rel: float = 1e-8
    fd_rank_rel: float = 1e-6
    fd_step: float = 1e-6
    fd_incidence: float = 0.03
    disc: float = 1e-12
    t_min_gap: float = 1e-9
    overlap: float = 1e-9


DEFAULT_TOLS = Tolerances()
