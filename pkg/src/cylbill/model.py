"""Cylindric billiard systems: cylinders over a lattice, validation, file I/O.

A cylinder is the set of torus points within ``radius`` of a translated
subtorus.  Its axis direction (the generator subspace) is normally given as
integer combinations of the lattice basis, which makes the subtorus
structure exact by construction; factor systems built downstream may
instead carry a real axis basis together with a provenance note.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import fileio, intlat
from .geometry import Lattice, Subspace, complement, orthonormalize

__all__ = [
    "CylinderSpec",
    "CylindricBilliardSystem",
    "ValidationReport",
    "validate",
    "base_space",
    "generator_space",
    "save_system",
    "load_system",
    "system_to_dict",
    "system_from_dict",
    "SystemFormatError",
]

FORMAT_NAME = "cylbill-system"
FORMAT_VERSION = 1


class SystemFormatError(ValueError):
    """A system file failed to parse or carry the required fields."""


@dataclass(eq=False)
class CylinderSpec:
    """One spherical cylinder.

    Exactly one of ``generator_coeffs`` (integer columns of lattice-basis
    coefficients) or ``generator_basis`` (real ambient columns) must be
    present.  ``translation`` positions the cylinder in the torus and is
    stored as a fundamental-domain representative by the owning system.
    """

    radius: float
    translation: np.ndarray
    generator_coeffs: np.ndarray | None = None
    generator_basis: np.ndarray | None = None
    provenance: str = ""

    def __post_init__(self):
        self.radius = float(self.radius)
        self.translation = np.asarray(self.translation, dtype=float).reshape(-1)
        if (self.generator_coeffs is None) == (self.generator_basis is None):
            raise ValueError(
                "exactly one of generator_coeffs / generator_basis is required"
            )
        if self.generator_coeffs is not None:
            c = np.asarray(self.generator_coeffs)
            if c.ndim != 2:
                raise ValueError("generator_coeffs must be a matrix (d x n_gen)")
            if c.size and c.dtype != object and not np.issubdtype(c.dtype, np.integer):
                if not np.all(c == np.round(c)):
                    raise ValueError("generator_coeffs must be integral")
                c = c.astype(np.int64)
            self.generator_coeffs = c
        else:
            b = np.asarray(self.generator_basis, dtype=float)
            if b.ndim != 2:
                raise ValueError("generator_basis must be a matrix (d x n_gen)")
            self.generator_basis = b

    @property
    def n_generators(self) -> int:
        g = self.generator_coeffs
        return g.shape[1] if g is not None else self.generator_basis.shape[1]

    @property
    def lattice_aligned(self) -> bool:
        return self.generator_coeffs is not None


@dataclass(eq=False)
class CylindricBilliardSystem:
    """Static model: ambient dimension, structure lattice, cylinders."""

    dim: int
    lattice: Lattice
    cylinders: list[CylinderSpec]
    interior_connected_asserted: bool = True
    _gen_cache: dict = field(default_factory=dict, repr=False)
    _base_cache: dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        if self.lattice.ambient_dim != self.dim:
            raise ValueError("lattice dimension does not match system dimension")
        wrapped = []
        for cyl in self.cylinders:
            t = np.asarray(cyl.translation, dtype=float).reshape(-1)
            if t.shape[0] != self.dim:
                raise ValueError("cylinder translation has wrong dimension")
            tw, _ = self.lattice.wrap(t)
            wrapped.append(
                CylinderSpec(
                    radius=cyl.radius,
                    translation=tw,
                    generator_coeffs=cyl.generator_coeffs,
                    generator_basis=cyl.generator_basis,
                    provenance=cyl.provenance,
                )
            )
        self.cylinders = wrapped

    @property
    def k(self) -> int:
        return len(self.cylinders)

    def generator_space(self, i: int) -> Subspace:
        """Span of the i-th cylinder's axis directions."""
        if i not in self._gen_cache:
            cyl = self.cylinders[i]
            if cyl.generator_coeffs is not None:
                coeffs = np.asarray(cyl.generator_coeffs, dtype=float)
                vecs = self.lattice.basis @ coeffs
            else:
                vecs = cyl.generator_basis
            self._gen_cache[i] = orthonormalize(vecs.T, ambient_dim=self.dim)
        return self._gen_cache[i]

    def base_space(self, i: int) -> Subspace:
        """Orthocomplement of the i-th generator space; collisions change
        velocity only inside this subspace."""
        if i not in self._base_cache:
            self._base_cache[i] = complement(self.generator_space(i))
        return self._base_cache[i]

    def base_spaces(self) -> list[Subspace]:
        return [self.base_space(i) for i in range(self.k)]


def generator_space(system: CylindricBilliardSystem, i: int) -> Subspace:
    return system.generator_space(i)


def base_space(system: CylindricBilliardSystem, i: int) -> Subspace:
    return system.base_space(i)


@dataclass
class ValidationReport:
    """Diagnostic result of :func:`validate`; empty ``violations`` is a pass."""

    violations: list[tuple[int | None, str]] = field(default_factory=list)
    notes: list[str] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.violations

    def __str__(self):
        lines = []
        for idx, msg in self.violations:
            where = "system" if idx is None else f"cylinder {idx}"
            lines.append(f"VIOLATION [{where}]: {msg}")
        lines.extend(f"note: {n}" for n in self.notes)
        return "\n".join(lines) if lines else "valid"


def validate(system: CylindricBilliardSystem) -> ValidationReport:
    """Check every structural invariant; reports rather than raises."""
    rep = ValidationReport()
    d = system.dim
    if abs(np.linalg.det(system.lattice.basis)) <= 1e-12:
        rep.violations.append((None, "lattice basis is singular"))
        return rep
    for i, cyl in enumerate(system.cylinders):
        if cyl.radius <= 0:
            rep.violations.append((i, f"radius {cyl.radius} is not positive"))
        if cyl.translation.shape[0] != d:
            rep.violations.append((i, "translation dimension mismatch"))
            continue
        if cyl.generator_coeffs is not None:
            c = cyl.generator_coeffs
            if c.shape[0] != d:
                rep.violations.append((i, "generator_coeffs row count != dim"))
                continue
            if c.shape[1] and intlat.integer_rank(c) != c.shape[1]:
                rep.violations.append(
                    (i, "generator_coeffs columns are rationally dependent")
                )
                continue
            gen_dim = c.shape[1]
        else:
            b = cyl.generator_basis
            if b.shape[0] != d:
                rep.violations.append((i, "generator_basis row count != dim"))
                continue
            gen_dim = system.generator_space(i).dim
            if b.shape[1] != gen_dim:
                rep.violations.append(
                    (i, "generator_basis columns are linearly dependent")
                )
                continue
            rep.notes.append(
                f"cylinder {i} carries a real axis basis"
                + (f" ({cyl.provenance})" if cyl.provenance else "")
                + "; lattice alignment not certified"
            )
        base_dim = d - gen_dim
        if base_dim < 2:
            rep.violations.append(
                (i, f"base space dimension {base_dim} < 2")
            )
    return rep


# ---------------------------------------------------------------------------
# File format
# ---------------------------------------------------------------------------


def system_to_dict(system: CylindricBilliardSystem) -> dict:
    cyls = []
    for cyl in system.cylinders:
        entry = {
            "radius": cyl.radius,
            "translation": [float(x) for x in cyl.translation],
        }
        if cyl.generator_coeffs is not None:
            entry["generator_coeffs"] = [
                [int(x) for x in row] for row in cyl.generator_coeffs
            ]
        else:
            entry["generator_basis"] = [
                [float(x) for x in row] for row in cyl.generator_basis
            ]
        if cyl.provenance:
            entry["provenance"] = cyl.provenance
        cyls.append(entry)
    return {
        "format": FORMAT_NAME,
        "version": FORMAT_VERSION,
        "dim": system.dim,
        "lattice_basis": [[float(x) for x in row] for row in system.lattice.basis],
        "interior_connected_asserted": bool(system.interior_connected_asserted),
        "cylinders": cyls,
    }


def system_from_dict(doc: dict) -> CylindricBilliardSystem:
    if not isinstance(doc, dict):
        raise SystemFormatError("system document must be an object")
    if doc.get("format") != FORMAT_NAME:
        raise SystemFormatError(
            f"unrecognized format tag {doc.get('format')!r}; expected {FORMAT_NAME!r}"
        )
    try:
        d = int(doc["dim"])
        basis = np.asarray(doc["lattice_basis"], dtype=float)
        cyl_docs = doc["cylinders"]
    except KeyError as exc:
        raise SystemFormatError(f"missing field {exc.args[0]!r}") from exc
    if basis.shape != (d, d):
        raise SystemFormatError(f"lattice_basis shape {basis.shape} != ({d}, {d})")
    cylinders = []
    for j, entry in enumerate(cyl_docs):
        try:
            radius = float(entry["radius"])
            translation = np.asarray(entry["translation"], dtype=float)
        except KeyError as exc:
            raise SystemFormatError(
                f"cylinder {j}: missing field {exc.args[0]!r}"
            ) from exc
        coeffs = entry.get("generator_coeffs")
        gen_basis = entry.get("generator_basis")
        if (coeffs is None) == (gen_basis is None):
            raise SystemFormatError(
                f"cylinder {j}: exactly one of generator_coeffs/generator_basis"
            )
        try:
            cylinders.append(
                CylinderSpec(
                    radius=radius,
                    translation=translation,
                    generator_coeffs=None if coeffs is None
                    else np.asarray(coeffs, dtype=np.int64).reshape(d, -1),
                    generator_basis=None if gen_basis is None
                    else np.asarray(gen_basis, dtype=float).reshape(d, -1),
                    provenance=entry.get("provenance", ""),
                )
            )
        except ValueError as exc:
            raise SystemFormatError(f"cylinder {j}: {exc}") from exc
    try:
        return CylindricBilliardSystem(
            dim=d,
            lattice=Lattice(basis),
            cylinders=cylinders,
            interior_connected_asserted=bool(
                doc.get("interior_connected_asserted", False)
            ),
        )
    except ValueError as exc:
        raise SystemFormatError(str(exc)) from exc


def save_system(system: CylindricBilliardSystem, path) -> None:
    fileio.dump(system_to_dict(system), path)


def load_system(path) -> CylindricBilliardSystem:
    try:
        doc = fileio.load(path)
    except ValueError as exc:
        raise SystemFormatError(f"cannot parse {path}: {exc}") from exc
    return system_from_dict(doc)
