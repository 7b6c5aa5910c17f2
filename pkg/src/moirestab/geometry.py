"""Twisted-bilayer lattice geometry.

Builds the two layer bases, the long-wavelength (moire) superlattice they
generate, reciprocal bases, and the disregistry matrices that translate
between the different notions of local stacking offset.  All lengths are in
Angstrom, angles in radians.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import NotLatticePoint, SingularMoire

#: Tolerance (in basis coordinates) below which a point counts as a lattice point.
LATTICE_POINT_TOL = 1e-9

#: Condition-number threshold beyond which the moire construction is rejected.
SINGULAR_COND = 1e12


def rotation(angle: float) -> np.ndarray:
    """2x2 counter-clockwise rotation matrix."""
    c, s = np.cos(angle), np.sin(angle)
    return np.array([[c, -s], [s, c]])


def hexagonal_basis(lattice_constant: float) -> np.ndarray:
    """Triangular-lattice basis with both primitive vectors of the given length.

    Columns are the primitive vectors; the conventional choice for a
    single-atom honeycomb sublattice.
    """
    a = float(lattice_constant)
    return a * np.array([[np.sqrt(3) / 2, np.sqrt(3) / 2], [-0.5, 0.5]])


@dataclass(frozen=True)
class BilayerGeometry:
    """Immutable geometric data for one twisted pair of 2D lattices.

    ``a1``/``a2`` are the layer bases (columns = primitive vectors, Angstrom),
    ``a_moire`` the superlattice basis, ``b*`` the reciprocal bases (1/Angstrom)
    and ``d12``/``d21`` the dimensionless disregistry matrices
    ``I - A_{3-j} A_j^-1``.
    """

    a1: np.ndarray
    a2: np.ndarray
    a_moire: np.ndarray
    b1: np.ndarray
    b2: np.ndarray
    b_moire: np.ndarray
    d12: np.ndarray
    d21: np.ndarray
    theta: float
    cell_area1: float
    cell_area2: float
    cell_area_moire: float

    def __post_init__(self):
        for name in ("a1", "a2", "a_moire", "b1", "b2", "b_moire", "d12", "d21"):
            m = np.asarray(getattr(self, name), dtype=float)
            m.setflags(write=False)
            object.__setattr__(self, name, m)

    def layer_basis(self, j: int) -> np.ndarray:
        if j not in (1, 2):
            raise ValueError(f"layer index must be 1 or 2, got {j}")
        return self.a1 if j == 1 else self.a2

    def disregistry(self, j: int) -> np.ndarray:
        """Disregistry matrix D_{j -> 3-j}."""
        if j not in (1, 2):
            raise ValueError(f"layer index must be 1 or 2, got {j}")
        return self.d12 if j == 1 else self.d21


@dataclass(frozen=True)
class CellDecomposition:
    """Split of a point into a lattice point plus a remainder in the unit cell."""

    floor_part: np.ndarray
    frac_part: np.ndarray

    def __post_init__(self):
        for name in ("floor_part", "frac_part"):
            v = np.asarray(getattr(self, name), dtype=float)
            v.setflags(write=False)
            object.__setattr__(self, name, v)


def _reciprocal(basis: np.ndarray) -> np.ndarray:
    return 2 * np.pi * np.linalg.inv(basis).T


def build_twisted_pair(a: np.ndarray, theta: float) -> BilayerGeometry:
    """Construct the geometry of two copies of ``a`` twisted by ``+-theta/2``.

    Raises :class:`SingularMoire` when ``A1^-1 - A2^-1`` is numerically
    singular (zero twist, or a commensurate degeneracy at working precision).
    """
    a = np.asarray(a, dtype=float)
    if a.shape != (2, 2):
        raise ValueError("basis must be a 2x2 matrix")
    if np.linalg.cond(a) > SINGULAR_COND:
        raise SingularMoire("layer basis is numerically singular")

    a1 = rotation(theta / 2) @ a
    a2 = rotation(-theta / 2) @ a
    diff = np.linalg.inv(a1) - np.linalg.inv(a2)
    smax = np.linalg.norm(diff, 2)
    smin = 0.0 if smax == 0.0 else np.linalg.svd(diff, compute_uv=False)[-1]
    if smax == 0.0 or smin <= smax / SINGULAR_COND:
        raise SingularMoire(
            "A1^-1 - A2^-1 is numerically singular; twist angle is zero or "
            "degenerate at working precision"
        )
    a_moire = np.linalg.inv(diff)

    return BilayerGeometry(
        a1=a1,
        a2=a2,
        a_moire=a_moire,
        b1=_reciprocal(a1),
        b2=_reciprocal(a2),
        b_moire=_reciprocal(a_moire),
        d12=np.eye(2) - a2 @ np.linalg.inv(a1),
        d21=np.eye(2) - a1 @ np.linalg.inv(a2),
        theta=float(theta),
        cell_area1=abs(np.linalg.det(a1)),
        cell_area2=abs(np.linalg.det(a2)),
        cell_area_moire=abs(np.linalg.det(a_moire)),
    )


def wrap_cell_many(x: np.ndarray, basis: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Vectorised :func:`wrap_cell`: returns (floor_parts, frac_parts), shape (n, 2).

    ``frac = x - floor`` is computed in Cartesian coordinates so the two parts
    reconstruct the input exactly.
    """
    x = np.atleast_2d(np.asarray(x, dtype=float))
    t = x @ np.linalg.inv(basis).T
    n = np.floor(t)
    f = t - n
    # floating point can round t - floor(t) up to exactly 1.0; push such
    # components into the next cell so f stays in [0, 1)
    carry = f >= 1.0
    n[carry] += 1.0
    floor_part = n @ basis.T
    return floor_part, x - floor_part


def wrap_cell(x: np.ndarray, basis: np.ndarray) -> CellDecomposition:
    """Decompose ``x = floor + frac`` with floor in ``basis * Z^2`` and
    ``frac`` inside the half-open cell ``basis * [0, 1)^2``."""
    basis = np.asarray(basis, dtype=float)
    if basis.shape != (2, 2) or np.linalg.cond(basis) > SINGULAR_COND:
        raise ValueError("basis must be an invertible 2x2 matrix")
    floor_part, frac_part = wrap_cell_many(np.asarray(x, dtype=float), basis)
    return CellDecomposition(floor_part=floor_part[0], frac_part=frac_part[0])


def disregistry_transform(geom: BilayerGeometry, r: np.ndarray, layer: int) -> np.ndarray:
    """Stacking offset of the layer-``layer`` lattice point ``r`` relative to the
    opposite layer, computed through the disregistry matrix.

    ``r`` must lie on the lattice of its layer to within ``LATTICE_POINT_TOL``
    in basis coordinates.  The result equals
    ``wrap_cell(r, opposite basis).frac_part``.
    """
    r = np.asarray(r, dtype=float)
    basis = geom.layer_basis(layer)
    coords = np.linalg.solve(basis, r)
    if np.max(np.abs(coords - np.round(coords))) > LATTICE_POINT_TOL:
        raise NotLatticePoint(
            f"point {r} deviates from the layer-{layer} lattice by more than "
            f"{LATTICE_POINT_TOL} in basis coordinates"
        )
    other = geom.layer_basis(3 - layer)
    raw = geom.disregistry(layer) @ wrap_cell(r, geom.a_moire).frac_part
    if layer == 1:
        # the identity lands in the negated cell for j=1; the constant shift
        # moves it back, and the final wrap handles the closed boundary
        raw = raw + geom.a2 @ np.array([1.0, 1.0])
    return wrap_cell(raw, other).frac_part
