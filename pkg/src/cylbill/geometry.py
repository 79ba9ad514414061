"""Dense linear algebra for subspaces, projections, ranks, and lattices.

Subspaces are carried as orthonormal column bases; every construction path
funnels through :func:`orthonormalize`, so the Gram-matrix invariant is
checked on each instance.  Rank decisions treat a singular value ``s`` as
zero iff ``s < rel_tol * s_max`` with one package-wide default, so all
dimension counts downstream use the same yardstick.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field

import numpy as np

TOL_ORTHO = 1e-12
TOL_DROP = 1e-10
RANK_REL_TOL = 1e-8
FD_RANK_REL_TOL = 1e-6

__all__ = [
    "Subspace",
    "Lattice",
    "orthonormalize",
    "project",
    "complement",
    "span_of",
    "intersect",
    "column_space",
    "null_space",
    "matrix_rank",
    "subspace_overlap",
    "containment_residual",
    "projector_distance",
    "random_subspace",
]


class DimensionMismatch(ValueError):
    """Inputs do not share one ambient dimension."""


def _as_columns(vectors, ambient_dim=None) -> np.ndarray:
    """Stack vectors into a (d, k) float matrix, validating dimensions."""
    vecs = [np.asarray(v, dtype=float).reshape(-1) for v in vectors]
    if not vecs:
        if ambient_dim is None:
            raise DimensionMismatch("empty input needs an explicit ambient_dim")
        return np.zeros((ambient_dim, 0))
    d = vecs[0].shape[0]
    for v in vecs:
        if v.shape[0] != d:
            raise DimensionMismatch(
                f"vectors of length {v.shape[0]} and {d} cannot share a space"
            )
    if ambient_dim is not None and ambient_dim != d:
        raise DimensionMismatch(f"vectors have length {d}, expected {ambient_dim}")
    return np.column_stack(vecs)


@dataclass(frozen=True, eq=False)
class Subspace:
    """A linear subspace of d-space held as an orthonormal column basis.

    ``basis`` has shape ``(ambient_dim, dim)``; ``dim`` may be zero.
    """

    ambient_dim: int
    basis: np.ndarray

    def __post_init__(self):
        if self.ambient_dim < 1:
            raise ValueError("ambient_dim must be positive")
        b = np.asarray(self.basis, dtype=float)
        if b.ndim != 2 or b.shape[0] != self.ambient_dim:
            raise ValueError(f"basis shape {b.shape} does not match ambient_dim")
        if b.shape[1] > self.ambient_dim:
            raise ValueError("more basis vectors than ambient dimensions")
        gram = b.T @ b
        if b.shape[1] and np.max(np.abs(gram - np.eye(b.shape[1]))) > 1e-10:
            raise ValueError("basis is not orthonormal within tolerance")
        b = b.copy()
        b.setflags(write=False)
        object.__setattr__(self, "basis", b)

    @property
    def dim(self) -> int:
        return self.basis.shape[1]

    @property
    def is_zero(self) -> bool:
        return self.dim == 0

    @property
    def is_full(self) -> bool:
        return self.dim == self.ambient_dim

    def projector(self) -> np.ndarray:
        return self.basis @ self.basis.T

    @staticmethod
    def zero(ambient_dim: int) -> "Subspace":
        return Subspace(ambient_dim, np.zeros((ambient_dim, 0)))

    @staticmethod
    def full(ambient_dim: int) -> "Subspace":
        return Subspace(ambient_dim, np.eye(ambient_dim))

    @staticmethod
    def span(vectors, ambient_dim=None) -> "Subspace":
        return orthonormalize(vectors, ambient_dim=ambient_dim)

    def __repr__(self):
        return f"Subspace(dim={self.dim}, ambient={self.ambient_dim})"


def orthonormalize(vectors, ambient_dim=None, drop_tol: float = TOL_DROP) -> Subspace:
    """Orthonormal basis of the span of ``vectors``.

    Modified Gram-Schmidt with one re-orthogonalization pass; a vector whose
    residual after projection has norm below ``drop_tol`` contributes no new
    direction and is dropped.
    """
    cols = _as_columns(vectors, ambient_dim)
    d = cols.shape[0]
    basis: list[np.ndarray] = []
    for i in range(cols.shape[1]):
        w = cols[:, i].copy()
        for _ in range(2):
            for b in basis:
                w -= (b @ w) * b
        nrm = float(np.linalg.norm(w))
        if nrm >= drop_tol:
            basis.append(w / nrm)
        if len(basis) == d:
            break
    return Subspace(d, _as_columns(basis, ambient_dim=d))


def project(s: Subspace, v) -> np.ndarray:
    """Orthogonal projection of ``v`` onto ``s``."""
    v = np.asarray(v, dtype=float).reshape(-1)
    if v.shape[0] != s.ambient_dim:
        raise DimensionMismatch(
            f"vector of length {v.shape[0]} in {s.ambient_dim}-space"
        )
    return s.basis @ (s.basis.T @ v)


def complement(s: Subspace) -> Subspace:
    """Orthogonal complement of ``s``."""
    if s.dim == 0:
        return Subspace.full(s.ambient_dim)
    if s.dim == s.ambient_dim:
        return Subspace.zero(s.ambient_dim)
    u, _, _ = np.linalg.svd(s.basis, full_matrices=True)
    return Subspace(s.ambient_dim, u[:, s.dim:])


def span_of(subspaces, ambient_dim=None) -> Subspace:
    """Span of a list of subspaces."""
    subs = list(subspaces)
    if not subs:
        if ambient_dim is None:
            raise DimensionMismatch("empty span needs an explicit ambient_dim")
        return Subspace.zero(ambient_dim)
    d = subs[0].ambient_dim
    for s in subs:
        if s.ambient_dim != d:
            raise DimensionMismatch("subspaces live in different ambient spaces")
    cols = np.hstack([s.basis for s in subs])
    return orthonormalize(cols.T, ambient_dim=d)


def intersect(subspaces, ambient_dim=None) -> Subspace:
    """Intersection of a list of subspaces, via complements of the spans."""
    subs = list(subspaces)
    if not subs:
        if ambient_dim is None:
            raise DimensionMismatch("empty intersection needs an explicit ambient_dim")
        return Subspace.full(ambient_dim)
    comps = [complement(s) for s in subs]
    return complement(span_of(comps))


def matrix_rank(m, rel_tol: float = RANK_REL_TOL) -> int:
    """Rank of a dense matrix with the package's relative cutoff."""
    m = np.atleast_2d(np.asarray(m, dtype=float))
    if m.size == 0:
        return 0
    s = np.linalg.svd(m, compute_uv=False)
    smax = s[0] if len(s) else 0.0
    if smax == 0.0:
        return 0
    return int(np.sum(s >= rel_tol * smax))


def column_space(m, rel_tol: float = RANK_REL_TOL) -> Subspace:
    """Column space of a matrix at the given relative rank tolerance."""
    m = np.atleast_2d(np.asarray(m, dtype=float))
    d = m.shape[0]
    if m.shape[1] == 0:
        return Subspace.zero(d)
    u, s, _ = np.linalg.svd(m, full_matrices=False)
    smax = s[0] if len(s) else 0.0
    if smax == 0.0:
        return Subspace.zero(d)
    r = int(np.sum(s >= rel_tol * smax))
    return Subspace(d, u[:, :r])


def null_space(m, rel_tol: float = RANK_REL_TOL) -> Subspace:
    """Kernel of a matrix at the given relative rank tolerance."""
    m = np.atleast_2d(np.asarray(m, dtype=float))
    n = m.shape[1]
    if n == 0:
        raise ValueError("null space of a matrix with no columns is undefined")
    _, s, vh = np.linalg.svd(m, full_matrices=True)
    smax = s[0] if len(s) else 0.0
    r = 0 if smax == 0.0 else int(np.sum(s >= rel_tol * smax))
    return Subspace(n, vh[r:].T)


def subspace_overlap(a: Subspace, b: Subspace) -> float:
    """Largest cosine of a principal angle between two subspaces.

    Zero iff the subspaces are orthogonal; used as the non-orthogonality
    test between cylinder base spaces.
    """
    if a.ambient_dim != b.ambient_dim:
        raise DimensionMismatch("subspaces live in different ambient spaces")
    if a.dim == 0 or b.dim == 0:
        return 0.0
    s = np.linalg.svd(a.basis.T @ b.basis, compute_uv=False)
    return float(s[0])


def containment_residual(inner: Subspace, outer: Subspace) -> float:
    """How far ``inner`` sticks out of ``outer`` (0 means contained)."""
    if inner.dim == 0:
        return 0.0
    rest = inner.basis - outer.basis @ (outer.basis.T @ inner.basis)
    return float(np.linalg.norm(rest, 2))


def projector_distance(a: Subspace, b: Subspace) -> float:
    """Operator-norm distance between the projectors of two subspaces."""
    return float(np.linalg.norm(a.projector() - b.projector(), 2))


def random_subspace(rng: np.random.Generator, ambient_dim: int, dim: int) -> Subspace:
    """Haar-ish random subspace via QR of a Gaussian matrix."""
    if dim == 0:
        return Subspace.zero(ambient_dim)
    g = rng.standard_normal((ambient_dim, dim))
    q, _ = np.linalg.qr(g)
    return Subspace(ambient_dim, q[:, :dim])


# ---------------------------------------------------------------------------
# Lattices
# ---------------------------------------------------------------------------


def _lll(basis: np.ndarray, delta: float = 0.75):
    """LLL-reduce lattice generators (columns).  Returns (reduced, U) with
    ``reduced = basis @ U`` and ``U`` integer unimodular."""
    b = basis.astype(float).copy()
    d, n = b.shape
    u = np.eye(n, dtype=np.int64)

    def gso(bm):
        g = bm.copy()
        mu = np.zeros((n, n))
        nrm = np.zeros(n)
        for i in range(n):
            for j in range(i):
                if nrm[j] > 0:
                    mu[i, j] = (bm[:, i] @ g[:, j]) / nrm[j]
                g[:, i] -= mu[i, j] * g[:, j]
            nrm[i] = g[:, i] @ g[:, i]
        return mu, nrm

    mu, nrm = gso(b)
    k = 1
    guard = 0
    while k < n:
        guard += 1
        if guard > 100000:
            raise RuntimeError("lattice reduction failed to terminate")
        for j in range(k - 1, -1, -1):
            q = int(round(mu[k, j]))
            if q:
                b[:, k] -= q * b[:, j]
                u[:, k] -= q * u[:, j]
                mu, nrm = gso(b)
        if nrm[k] >= (delta - mu[k, k - 1] ** 2) * nrm[k - 1]:
            k += 1
        else:
            b[:, [k - 1, k]] = b[:, [k, k - 1]]
            u[:, [k - 1, k]] = u[:, [k, k - 1]]
            mu, nrm = gso(b)
            k = max(k - 1, 1)
    return b, u


@dataclass(eq=False)
class Lattice:
    """A full-rank lattice in d-space, generated by the columns of ``basis``.

    The generating basis is arbitrary; a reduced (short, near-orthogonal)
    basis is computed lazily and cached since only image enumeration in the
    flow needs it.
    """

    basis: np.ndarray
    _reduced: np.ndarray | None = field(default=None, repr=False)
    _transform: np.ndarray | None = field(default=None, repr=False)
    _inv: np.ndarray | None = field(default=None, repr=False)
    _diameter: float | None = field(default=None, repr=False)

    def __post_init__(self):
        b = np.asarray(self.basis, dtype=float)
        if b.ndim != 2 or b.shape[0] != b.shape[1]:
            raise ValueError("lattice basis must be square")
        if abs(np.linalg.det(b)) <= 1e-12:
            raise ValueError("lattice basis is singular (|det| <= 1e-12)")
        b = b.copy()
        b.setflags(write=False)
        self.basis = b

    @property
    def ambient_dim(self) -> int:
        return self.basis.shape[0]

    @property
    def covolume(self) -> float:
        return float(abs(np.linalg.det(self.basis)))

    def _ensure_reduced(self):
        if self._reduced is None:
            red, u = _lll(self.basis)
            self._reduced = red
            self._transform = u

    @property
    def reduced_basis(self) -> np.ndarray:
        self._ensure_reduced()
        return self._reduced

    @property
    def reduced_transform(self) -> np.ndarray:
        """Integer U with ``reduced_basis = basis @ U``."""
        self._ensure_reduced()
        return self._transform

    @property
    def inv_basis(self) -> np.ndarray:
        if self._inv is None:
            self._inv = np.linalg.inv(self.basis)
        return self._inv

    @property
    def fundamental_diameter(self) -> float:
        """Diameter of the fundamental cell of the reduced basis."""
        if self._diameter is None:
            red = self.reduced_basis
            d = red.shape[0]
            if d <= 12:
                best = 0.0
                for signs in itertools.product((-1.0, 1.0), repeat=d):
                    best = max(best, float(np.linalg.norm(red @ np.array(signs))))
                self._diameter = best / 1.0
            else:
                self._diameter = float(np.sum(np.linalg.norm(red, axis=0)))
        return self._diameter

    def wrap(self, q) -> tuple[np.ndarray, np.ndarray]:
        """Representative of ``q`` in the fundamental cell.

        Returns ``(wrapped, shift)`` with ``q = wrapped + basis @ shift`` and
        the lattice coordinates of ``wrapped`` in [0, 1) up to roundoff.
        Idempotent: an already-wrapped point comes back unchanged (the small
        positive bias below keeps coordinates computing to -1 ulp from being
        shifted a full cell).
        """
        q = np.asarray(q, dtype=float).reshape(-1)
        y = self.inv_basis @ q
        shift = np.floor(y + 1e-12).astype(np.int64)
        if not shift.any():
            return q.copy(), shift
        return self.basis @ (y - shift), shift

    def nearest_image_delta(self, v) -> np.ndarray:
        """Shift ``v`` by a lattice vector so its lattice coordinates lie in
        [-1/2, 1/2).  Exact nearest image for separations small against the
        cell; used for tiny phase-space displacements."""
        v = np.asarray(v, dtype=float).reshape(-1)
        y = self.inv_basis @ v
        return self.basis @ (y - np.round(y))

    def enumerate_ball(self, center, radius, max_candidates: int = 4_000_000):
        """All lattice points within ``radius`` of ``center``.

        Returns ``(ints, points)`` where ``points = basis @ ints.T`` row-wise
        and ``ints`` are integer coordinates in the original basis.
        """
        c = np.asarray(center, dtype=float).reshape(-1)
        red = self.reduced_basis
        u = self.reduced_transform
        rinv = np.linalg.inv(red)
        y0 = rinv @ c
        row_norms = np.linalg.norm(rinv, axis=1)
        lo = np.ceil(y0 - radius * row_norms - 1e-12).astype(np.int64)
        hi = np.floor(y0 + radius * row_norms + 1e-12).astype(np.int64)
        counts = np.maximum(hi - lo + 1, 0)
        total = int(np.prod(counts.astype(np.float64)))
        if total > max_candidates:
            raise RuntimeError(
                f"lattice ball enumeration too large ({total} candidates)"
            )
        if total == 0:
            d = self.ambient_dim
            return np.zeros((0, d), dtype=np.int64), np.zeros((0, d))
        axes = [np.arange(l, h + 1, dtype=np.int64) for l, h in zip(lo, hi)]
        mesh = np.meshgrid(*axes, indexing="ij")
        coeffs = np.stack([m.reshape(-1) for m in mesh], axis=1)
        pts = coeffs @ red.T
        keep = np.linalg.norm(pts - c, axis=1) <= radius + 1e-9
        coeffs = coeffs[keep]
        pts = pts[keep]
        return coeffs @ u.T, pts
