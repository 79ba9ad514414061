"""Builders for the standard system families.

* hard-ball gases: N balls with masses on the unit torus, realized as a
  cylindric billiard in mass-rescaled coordinates and reduced to the
  zero-total-momentum factor;
* direct-sum systems: prescribed base spaces decomposing the space as a
  linear (not necessarily orthogonal) direct sum;
* factor (sub-) billiards: retain a subset of cylinders and quotient out
  the directions their axes share.

The factor construction works in exact integer arithmetic on lattice
coefficients: the retained axes' common directions meet the lattice in a
primitive sublattice, a unimodular completion splits off the quotient, and
the projected lattice basis and quotient generator coefficients come out
exact.  This keeps factor systems in the integer representation whenever
the parent is integer.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from fractions import Fraction
from math import lcm

import numpy as np

from . import intlat
from .classify import non_orthogonality_graph
from .geometry import (
    Lattice,
    Subspace,
    complement,
    orthonormalize,
    projector_distance,
    span_of,
)
from .model import CylinderSpec, CylindricBilliardSystem

__all__ = [
    "HardBallParams",
    "HardBallEmbedding",
    "FactorReport",
    "hard_ball_system",
    "pair_radius",
    "direct_sum_system",
    "sub_billiard",
    "project_zero_momentum",
    "BuilderError",
    "NotDirectSumError",
    "FactorLatticeError",
]


class BuilderError(ValueError):
    pass


class NotDirectSumError(BuilderError):
    """Supplied base spaces do not decompose the space as a direct sum."""


class FactorLatticeError(RuntimeError):
    """The shared axis directions failed the lattice-subspace verification."""


# ---------------------------------------------------------------------------
# Hard-ball systems
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class HardBallParams:
    """N hard balls of one radius with positive masses on the unit torus."""

    n_balls: int
    torus_dim: int
    masses: tuple[float, ...]
    radius: float

    def __post_init__(self):
        if self.n_balls < 2:
            raise BuilderError("need at least 2 balls")
        if self.torus_dim < 2:
            raise BuilderError("torus dimension must be >= 2")
        object.__setattr__(self, "masses", tuple(float(m) for m in self.masses))
        if len(self.masses) != self.n_balls:
            raise BuilderError("one mass per ball required")
        if any(m <= 0 for m in self.masses):
            raise BuilderError("masses must be positive")
        if self.radius <= 0:
            raise BuilderError("ball radius must be positive")


def pair_radius(m_i: float, m_j: float, r: float) -> float:
    """Base-sphere radius of the collision cylinder of a ball pair."""
    return 2.0 * r * np.sqrt(m_i * m_j / (m_i + m_j))


@dataclass(eq=False)
class HardBallEmbedding:
    """Coordinate bookkeeping between ball space and the reduced system.

    Positions/velocities of the balls are rescaled by sqrt(mass) so the
    kinetic-energy metric becomes the standard inner product, then mapped
    onto the orthonormal basis of the zero-total-momentum subspace.
    """

    params: HardBallParams
    pairs: tuple[tuple[int, int], ...]
    scale: np.ndarray            # sqrt(mass) per flat coordinate
    reduced_basis: np.ndarray    # (nu*N, d) orthonormal, spans momentum-zero space
    full_system: CylindricBilliardSystem
    factor_report: "FactorReport"

    @property
    def reduced_dim(self) -> int:
        return self.reduced_basis.shape[1]

    def _flatten(self, arr) -> np.ndarray:
        p = self.params
        a = np.asarray(arr, dtype=float).reshape(p.n_balls, p.torus_dim)
        return a.reshape(-1)

    def reduce_positions(self, positions) -> np.ndarray:
        """Map ball positions (N, nu) to reduced coordinates."""
        return self.reduced_basis.T @ (self.scale * self._flatten(positions))

    def reduce_velocities(self, velocities, momentum_tol: float = 1e-9) -> np.ndarray:
        """Map zero-total-momentum ball velocities (N, nu) to reduced
        coordinates; raises if the total momentum is not (numerically) zero."""
        p = self.params
        v = np.asarray(velocities, dtype=float).reshape(p.n_balls, p.torus_dim)
        mom = np.sum(np.array(p.masses)[:, None] * v, axis=0)
        if np.linalg.norm(mom) > momentum_tol * max(1.0, float(np.abs(v).max())):
            raise BuilderError(
                f"total momentum {mom} is not zero; reduce it first"
            )
        return self.reduced_basis.T @ (self.scale * v.reshape(-1))

    def lift_positions(self, reduced) -> np.ndarray:
        """One representative ball configuration (N, nu) for a reduced point
        (the component along the factored-out uniform translations is 0)."""
        p = self.params
        flat = (self.reduced_basis @ np.asarray(reduced, dtype=float)) / self.scale
        return flat.reshape(p.n_balls, p.torus_dim)


def project_zero_momentum(masses, velocities) -> np.ndarray:
    """Remove the center-of-mass drift from ball velocities."""
    m = np.asarray(masses, dtype=float)
    v = np.asarray(velocities, dtype=float)
    drift = np.sum(m[:, None] * v, axis=0) / np.sum(m)
    return v - drift[None, :]


def hard_ball_system(
    params: HardBallParams,
) -> tuple[CylindricBilliardSystem, HardBallEmbedding]:
    """Construct the reduced hard-ball billiard.

    The full system lives in nu*N dimensions with the mass-rescaled integer
    lattice; one cylinder per ball pair encodes the pair's contact set, with
    base-sphere radius ``2 r sqrt(m_i m_j / (m_i + m_j))``.  The returned
    system is its factor by the common axis directions (uniform
    translations of all balls), of dimension nu*(N-1).
    """
    n, nu = params.n_balls, params.torus_dim
    full_dim = n * nu
    scale = np.repeat(np.sqrt(np.asarray(params.masses, dtype=float)), nu)
    lattice_basis = np.diag(scale)

    pairs: list[tuple[int, int]] = []
    cylinders: list[CylinderSpec] = []
    for i in range(n):
        for j in range(i + 1, n):
            cols = []
            for a in range(nu):
                col = np.zeros(full_dim, dtype=np.int64)
                col[i * nu + a] = 1
                col[j * nu + a] = 1
                cols.append(col)
            for k_ball in range(n):
                if k_ball in (i, j):
                    continue
                for a in range(nu):
                    col = np.zeros(full_dim, dtype=np.int64)
                    col[k_ball * nu + a] = 1
                    cols.append(col)
            cylinders.append(
                CylinderSpec(
                    radius=pair_radius(params.masses[i], params.masses[j],
                                       params.radius),
                    translation=np.zeros(full_dim),
                    generator_coeffs=np.column_stack(cols),
                )
            )
            pairs.append((i, j))

    full_system = CylindricBilliardSystem(
        dim=full_dim,
        lattice=Lattice(lattice_basis),
        cylinders=cylinders,
        interior_connected_asserted=True,
    )
    reduced, report = sub_billiard(full_system, range(len(pairs)))
    embedding = HardBallEmbedding(
        params=params,
        pairs=tuple(pairs),
        scale=scale,
        reduced_basis=report.active_space.basis,
        full_system=full_system,
        factor_report=report,
    )
    return reduced, embedding


# ---------------------------------------------------------------------------
# Direct-sum systems
# ---------------------------------------------------------------------------


def _rational_columns(m: np.ndarray, tol: float = 1e-9,
                      max_den: int = 10**6) -> np.ndarray | None:
    """Integer matrix with the same column span as ``m``, if its entries are
    recognizably rational; None otherwise."""
    cols = []
    for j in range(m.shape[1]):
        fracs = [Fraction(x).limit_denominator(max_den) for x in m[:, j]]
        den = lcm(*[f.denominator for f in fracs]) if fracs else 1
        if den > max_den:
            return None
        ints = np.array([int(f * den) for f in fracs], dtype=np.int64)
        approx = ints.astype(float) / den
        if np.max(np.abs(approx - m[:, j])) > tol:
            return None
        cols.append(ints)
    return np.column_stack(cols) if cols else np.zeros((m.shape[0], 0), np.int64)


def direct_sum_system(
    block_dims,
    bases,
    radii,
    translations=None,
    lattice_basis=None,
) -> tuple[CylindricBilliardSystem, "nx.Graph"]:
    """System whose base spaces are the given direct-sum blocks.

    The generator of each cylinder is the orthocomplement of its base
    space.  Generators that are recognizably rational in lattice
    coordinates are stored exactly as integer coefficient matrices; others
    fall back to a real axis basis with a provenance note (such systems are
    classification-grade, since no lattice is certified to align with
    their axes).  The non-orthogonality graph of the blocks is returned
    alongside the system.
    """
    bases = list(bases)
    block_dims = [int(x) for x in block_dims]
    if len(bases) != len(block_dims):
        raise NotDirectSumError("block_dims and bases disagree in length")
    if not bases:
        raise NotDirectSumError("need at least one block")
    d = bases[0].ambient_dim
    for s, dim_expected in zip(bases, block_dims):
        if s.ambient_dim != d:
            raise NotDirectSumError("blocks live in different ambient spaces")
        if s.dim != dim_expected:
            raise NotDirectSumError(
                f"block of dim {s.dim} where {dim_expected} was declared"
            )
    if sum(block_dims) != d:
        raise NotDirectSumError(f"block dims sum to {sum(block_dims)}, not {d}")
    if span_of(bases).dim != d:
        raise NotDirectSumError("blocks are linearly dependent; not a direct sum")

    radii = [float(r) for r in radii]
    if len(radii) != len(bases):
        raise BuilderError("one radius per block required")
    if translations is None:
        translations = [np.zeros(d)] * len(bases)
    lattice = Lattice(np.eye(d) if lattice_basis is None else lattice_basis)

    cylinders = []
    for idx, base in enumerate(bases):
        axis = complement(base)
        coords = lattice.inv_basis @ axis.basis
        coeffs = _rational_columns(coords) if axis.dim else np.zeros((d, 0), np.int64)
        if coeffs is not None and (
            coeffs.shape[1] == 0
            or projector_distance(
                orthonormalize((lattice.basis @ coeffs.astype(float)).T,
                               ambient_dim=d),
                axis,
            ) < 1e-9
        ):
            cylinders.append(
                CylinderSpec(
                    radius=radii[idx],
                    translation=translations[idx],
                    generator_coeffs=coeffs,
                )
            )
        else:
            cylinders.append(
                CylinderSpec(
                    radius=radii[idx],
                    translation=translations[idx],
                    generator_basis=axis.basis,
                    provenance="direct-sum builder: axis not lattice-aligned",
                )
            )
    system = CylindricBilliardSystem(
        dim=d,
        lattice=lattice,
        cylinders=cylinders,
        interior_connected_asserted=True,
    )
    return system, non_orthogonality_graph(bases)


# ---------------------------------------------------------------------------
# Factor (sub-) billiards
# ---------------------------------------------------------------------------


@dataclass(eq=False)
class FactorReport:
    """What the factor construction did and how it was verified."""

    parent_indices: tuple[int, ...]
    active_space: Subspace       # parent-frame span of the retained base spaces
    drift_space: Subspace        # parent-frame common axis directions
    drift_lattice_rank: int
    to_factor: np.ndarray        # (p, d): factor coords of an ambient vector
    verified: bool
    notes: list[str] = field(default_factory=list)


def sub_billiard(
    system: CylindricBilliardSystem, indices
) -> tuple[CylindricBilliardSystem, FactorReport]:
    """Factor billiard of the cylinders in ``indices``.

    The retained axes' common directions carry no dynamics (the velocity
    component along them never changes), so the configuration torus is
    quotiented by them; the result lives in the span of the retained base
    spaces with the projected lattice.  Requires an integer-generator
    parent; the quotient is computed exactly in lattice coefficients.
    """
    idx = sorted(set(int(i) for i in indices))
    if not idx:
        raise BuilderError("index set must be nonempty")
    for i in idx:
        if not 0 <= i < system.k:
            raise BuilderError(f"cylinder index {i} out of range")
        if not system.cylinders[i].lattice_aligned:
            raise BuilderError(
                "factor construction needs integer generator coefficients "
                f"(cylinder {i} carries a real axis basis)"
            )
    d = system.dim
    lat_basis = system.lattice.basis

    # common axis directions, exactly, in lattice coefficients
    annihilators = []
    for i in idx:
        c = np.asarray(system.cylinders[i].generator_coeffs)
        ann = intlat.integer_kernel(c.T).T     # rows annihilate span(c)
        annihilators.append(np.asarray(ann))
    stack = np.concatenate(
        [a for a in annihilators if a.shape[0]] or [np.zeros((0, d), np.int64)],
        axis=0,
    )
    kernel = intlat.integer_kernel(stack) if stack.shape[0] else np.eye(d, np.int64)
    nu0 = kernel.shape[1]

    span_l = span_of([system.base_space(i) for i in idx])
    if nu0 != d - span_l.dim:
        raise FactorLatticeError(
            f"common axis directions have lattice rank {nu0} but dimension "
            f"{d - span_l.dim}; lattice-subspace verification failed"
        )

    drift = (
        orthonormalize((lat_basis @ kernel.astype(float)).T, ambient_dim=d)
        if nu0
        else Subspace.zero(d)
    )
    active = complement(drift)
    notes = [
        f"drift space check: |P_active - P_span| = "
        f"{projector_distance(active, span_l):.3e}"
    ]

    completion = intlat.unimodular_completion(kernel)
    comp_inv = np.asarray(intlat.int_inverse(completion))
    w_cols = np.asarray(completion)[:, nu0:]
    q = active.basis                                   # (d, p)
    factor_lattice = q.T @ (lat_basis @ w_cols.astype(float))

    cylinders = []
    for i in idx:
        cyl = system.cylinders[i]
        c = np.asarray(cyl.generator_coeffs)
        quotient_cols = []
        for jcol in range(c.shape[1]):
            y = comp_inv @ c[:, jcol].astype(object)
            quotient_cols.append(np.asarray(y[nu0:], dtype=np.int64))
        # drop columns that add no rank (axis directions inside the drift space)
        chosen: list[np.ndarray] = []
        for col in quotient_cols:
            trial = np.column_stack(chosen + [col])
            if intlat.integer_rank(trial) == len(chosen) + 1:
                chosen.append(col)
        p = d - nu0
        coeffs = (
            np.column_stack(chosen) if chosen else np.zeros((p, 0), np.int64)
        )
        cylinders.append(
            CylinderSpec(
                radius=cyl.radius,
                translation=q.T @ cyl.translation,
                generator_coeffs=coeffs,
            )
        )

    factor = CylindricBilliardSystem(
        dim=d - nu0,
        lattice=Lattice(factor_lattice),
        cylinders=cylinders,
        interior_connected_asserted=system.interior_connected_asserted,
    )
    report = FactorReport(
        parent_indices=tuple(idx),
        active_space=active,
        drift_space=drift,
        drift_lattice_rank=nu0,
        to_factor=q.T,
        verified=True,
        notes=notes,
    )
    return factor, report
