"""Shared fixtures and independent oracles for the test suite."""

from __future__ import annotations

import numpy as np
import pytest

from cylbill.geometry import Lattice, Subspace
from cylbill.model import CylinderSpec, CylindricBilliardSystem
from cylbill.paths import EuclideanPathSpec, TraceError, sample_spec, trace


def make_sphere_system(d: int, r: float = 0.3, center=None,
                       lattice=None) -> CylindricBilliardSystem:
    """Single spherical scatterer (point axis) on the integer torus."""
    if center is None:
        center = np.full(d, 0.5)
    return CylindricBilliardSystem(
        dim=d,
        lattice=Lattice(np.eye(d) if lattice is None else lattice),
        cylinders=[CylinderSpec(radius=r, translation=center,
                                generator_coeffs=np.zeros((d, 0), np.int64))],
    )


def make_two_block_system(r1: float = 0.3,
                          r2: float = 0.3) -> CylindricBilliardSystem:
    """Two cylinders on the 4-torus with orthogonal coordinate-plane base
    spaces: base of cylinder 0 is span(e1, e2), base of cylinder 1 is
    span(e3, e4)."""
    coeffs0 = np.zeros((4, 2), np.int64)
    coeffs0[2, 0] = 1
    coeffs0[3, 1] = 1
    coeffs1 = np.zeros((4, 2), np.int64)
    coeffs1[0, 0] = 1
    coeffs1[1, 1] = 1
    return CylindricBilliardSystem(
        dim=4,
        lattice=Lattice(np.eye(4)),
        cylinders=[
            CylinderSpec(radius=r1, translation=np.full(4, 0.5),
                         generator_coeffs=coeffs0),
            CylinderSpec(radius=r2, translation=np.full(4, 0.25),
                         generator_coeffs=coeffs1),
        ],
    )


def random_int_system(rng: np.random.Generator, d: int,
                      k: int | None = None) -> CylindricBilliardSystem:
    """Random integer-generator system suitable for path tracing."""
    while True:
        basis = np.eye(d) + 0.3 * rng.uniform(-1, 1, size=(d, d))
        if abs(np.linalg.det(basis)) > 0.2:
            break
    if k is None:
        k = int(rng.integers(1, 3))
    cylinders = []
    for _ in range(k):
        g = int(rng.integers(0, d - 1))  # base dim d - g >= 2
        cols = rng.permutation(d)[:g]
        coeffs = np.zeros((d, g), np.int64)
        for jj, c in enumerate(cols):
            coeffs[c, jj] = 1
            if g and rng.random() < 0.4:
                other = int(rng.integers(0, d))
                coeffs[other, jj] += int(rng.integers(-1, 2))
        # re-check rational independence cheaply: fall back to plain axes
        if g and np.linalg.matrix_rank(coeffs) < g:
            coeffs = np.zeros((d, g), np.int64)
            for jj, c in enumerate(cols):
                coeffs[c, jj] = 1
        cylinders.append(
            CylinderSpec(
                radius=float(rng.uniform(0.15, 0.4)),
                translation=rng.uniform(0, 1, size=d),
                generator_coeffs=coeffs,
            )
        )
    return CylindricBilliardSystem(dim=d, lattice=Lattice(basis),
                                   cylinders=cylinders)


def sample_traceable_spec(system, labels, rng, tries: int = 200,
                          box_scale=None) -> EuclideanPathSpec | None:
    for _ in range(tries):
        spec = sample_spec(system, labels, rng, box_scale)
        try:
            trace(system, labels, spec)
        except TraceError:
            continue
        return spec
    return None


def row_reduction_rank(vectors, tol: float = 1e-10) -> int:
    """Independent rank oracle: Gaussian elimination with partial pivoting."""
    m = np.array([np.asarray(v, dtype=float) for v in vectors])
    if m.size == 0:
        return 0
    m = m.copy()
    rows, cols = m.shape
    rank = 0
    for c in range(cols):
        if rank == rows:
            break
        piv = rank + int(np.argmax(np.abs(m[rank:, c])))
        if abs(m[piv, c]) < tol:
            continue
        m[[rank, piv]] = m[[piv, rank]]
        m[rank] = m[rank] / m[rank, c]
        for i in range(rows):
            if i != rank:
                m[i] -= m[i, c] * m[rank]
        rank += 1
    return rank


def oracle_path_times(system, labels, spec, n_grid: int = 1_000_000,
                      chunk: float = 1.0, max_chunks: int = 64):
    """Independent collision-time oracle: dense time stepping + bisection.

    Walks each flight segment on a uniform grid of step ``chunk/n_grid``
    until the signed squared distance to the target cylinder changes sign,
    then bisects.  Reflection between segments reuses only the geometric
    normal at the refined crossing point.
    """
    d = system.dim
    x = np.zeros(d)
    v = np.asarray(spec.v0, dtype=float).copy()
    times = []
    t0 = 0.0
    for j, lab in enumerate(labels):
        basis = system.base_space(lab).basis
        r = system.cylinders[lab].radius
        a = spec.offsets[j]
        w = basis.T @ x - a
        u = basis.T @ v
        uu = float(u @ u)
        ww = float(w @ w) - r * r
        wu = float(w @ u)

        def g(s):
            return uu * s * s + 2.0 * wu * s + ww

        lo = None
        for c in range(max_chunks):
            ss = np.linspace(c * chunk, (c + 1) * chunk, n_grid, endpoint=False)
            vals = uu * ss * ss + 2.0 * wu * ss + ww
            neg = np.nonzero(vals < 0)[0]
            if neg.size:
                first = int(neg[0])
                if first == 0 and c == 0:
                    return None  # starts inside; not a valid path
                lo = ss[first] - chunk / n_grid
                hi = ss[first]
                break
        if lo is None:
            return None
        for _ in range(80):
            mid = 0.5 * (lo + hi)
            if g(mid) < 0:
                hi = mid
            else:
                lo = mid
        s_hit = 0.5 * (lo + hi)
        t0 += s_hit
        times.append(t0)
        x = x + s_hit * v
        n_local = (w + s_hit * u)
        n_local = n_local / np.linalg.norm(n_local)
        n = basis @ n_local
        v = v - 2.0 * float(v @ n) * n
    return np.array(times)


@pytest.fixture
def rng():
    return np.random.default_rng(20240817)
