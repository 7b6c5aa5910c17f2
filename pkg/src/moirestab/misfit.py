"""Stacking-misfit energy surfaces on the unit torus.

A misfit surface maps a reduced stacking offset x in [0,1)^2 to the interlayer
energy density of that stacking.  Two sources are supported: a truncated
lattice sum of a pair potential (rescaled by the cell area), and the
generalized stacking fault energy (GSFE), a nine-term trigonometric model with
fitted coefficients.  Values, analytic gradients and Hessians are all in
reduced coordinates; physical Angstrom coordinates appear only inside the
potential calls.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Union

import numpy as np

from .errors import NotConverged
from .potentials import PairPotential, wderivs

#: Reduced coordinates of the two energy-minimising stackings.
X_AB = np.array([1.0 / 3.0, 1.0 / 3.0])
X_BA = np.array([2.0 / 3.0, 2.0 / 3.0])

# GSFE harmonics: first three carry c1, next three c2, last three c3
_GSFE_FREQS = np.array(
    [[1, 0], [0, 1], [1, 1], [1, 2], [1, -1], [2, 1], [2, 0], [0, 2], [2, 2]],
    dtype=float,
)


@dataclass(frozen=True)
class GsfeCoefficients:
    """Coefficients of the GSFE trigonometric model, meV per unit area."""

    c0: float
    c1: float
    c2: float
    c3: float

    def harmonic_weights(self) -> np.ndarray:
        return np.array([self.c1] * 3 + [self.c2] * 3 + [self.c3] * 3)


#: GSFE fit for bilayer graphene.
GSFE_GRAPHENE = GsfeCoefficients(c0=6.832, c1=4.064, c2=-0.374, c3=-0.095)


@dataclass(frozen=True)
class LatticeSumSource:
    """Truncated lattice sum of a pair potential over one layer basis."""

    basis: np.ndarray
    potential: PairPotential
    n_trunc: int

    def __post_init__(self):
        b = np.asarray(self.basis, dtype=float)
        b.setflags(write=False)
        object.__setattr__(self, "basis", b)
        if self.n_trunc < 1:
            raise ValueError("n_trunc must be at least 1")


Source = Union[GsfeCoefficients, LatticeSumSource]


@dataclass(frozen=True)
class MisfitSurface:
    """A periodic stacking-energy surface with its two wells."""

    source: Source

    @classmethod
    def gsfe(cls, coeffs: GsfeCoefficients = GSFE_GRAPHENE) -> "MisfitSurface":
        return cls(source=coeffs)

    @classmethod
    def lattice_sum(
        cls, basis: np.ndarray, potential: PairPotential, n_trunc: int = 10
    ) -> "MisfitSurface":
        return cls(source=LatticeSumSource(basis=basis, potential=potential, n_trunc=n_trunc))

    @property
    def wells(self) -> np.ndarray:
        """Reduced coordinates of the AB and BA stackings, shape (2, 2)."""
        return np.array([X_AB, X_BA])

    @property
    def is_gsfe(self) -> bool:
        return isinstance(self.source, GsfeCoefficients)


def _offsets(n_trunc: int) -> np.ndarray:
    ints = np.arange(-n_trunc, n_trunc + 1)
    return np.array(np.meshgrid(ints, ints, indexing="ij"), dtype=float).reshape(2, -1).T


_CHUNK = 2048
_RHO_FLOOR = 1e-12


def misfit_value_many(s: MisfitSurface, x: np.ndarray) -> np.ndarray:
    """Surface values at an (n, 2) array of reduced points."""
    x = np.atleast_2d(np.asarray(x, dtype=float))
    if s.is_gsfe:
        phases = 2.0 * np.pi * (x @ _GSFE_FREQS.T)
        return s.source.c0 + np.cos(phases) @ s.source.harmonic_weights()

    src = s.source
    area = abs(np.linalg.det(src.basis))
    offs = _offsets(src.n_trunc)
    out = np.empty(len(x))
    for lo in range(0, len(x), _CHUNK):
        t = x[lo : lo + _CHUNK]
        # wrap to [-1/2, 1/2): the window stays centred and inversion-symmetric,
        # making the sum exactly periodic and exactly even in x
        t = t - np.floor(t + 0.5)
        diffs = t[:, None, :] - offs[None, :, :]
        phys = diffs @ src.basis.T
        rho = np.linalg.norm(phys, axis=-1)
        out[lo : lo + _CHUNK] = wderivs(src.potential, rho, src.potential.height)[0].sum(axis=1)
    return out / area


def misfit_value(s: MisfitSurface, x) -> float:
    """Surface value at one reduced point (periodic extension)."""
    return float(misfit_value_many(s, np.asarray(x, dtype=float)[None, :])[0])


def misfit_grad_many(s: MisfitSurface, x: np.ndarray) -> np.ndarray:
    """Analytic gradients in reduced coordinates, shape (n, 2)."""
    x = np.atleast_2d(np.asarray(x, dtype=float))
    if s.is_gsfe:
        phases = 2.0 * np.pi * (x @ _GSFE_FREQS.T)
        w = s.source.harmonic_weights()
        return -2.0 * np.pi * (np.sin(phases) * w) @ _GSFE_FREQS

    src = s.source
    area = abs(np.linalg.det(src.basis))
    offs = _offsets(src.n_trunc)
    out = np.empty((len(x), 2))
    for lo in range(0, len(x), _CHUNK):
        t = x[lo : lo + _CHUNK]
        t = t - np.floor(t + 0.5)
        phys = (t[:, None, :] - offs[None, :, :]) @ src.basis.T
        rho = np.linalg.norm(phys, axis=-1)
        safe = np.maximum(rho, _RHO_FLOOR)
        _, w_r, _, _, _ = wderivs(src.potential, rho, src.potential.height)
        # d/dy of g(|A y|) is A^T g'(rho) u/rho with u = A y; the coefficient
        # w_r/rho stays finite as rho -> 0, and the u factor kills the term
        coef = np.where(rho < _RHO_FLOOR, 0.0, w_r / safe)
        out[lo : lo + _CHUNK] = np.einsum("nk,nkj->nj", coef, phys) @ src.basis / area
    return out


def misfit_hessian_many(s: MisfitSurface, x: np.ndarray) -> np.ndarray:
    """Analytic Hessians in reduced coordinates, shape (n, 2, 2)."""
    x = np.atleast_2d(np.asarray(x, dtype=float))
    if s.is_gsfe:
        phases = 2.0 * np.pi * (x @ _GSFE_FREQS.T)
        w = s.source.harmonic_weights()
        ff = _GSFE_FREQS[:, :, None] * _GSFE_FREQS[:, None, :]
        return -((2.0 * np.pi) ** 2) * np.einsum("nk,kij->nij", np.cos(phases) * w, ff)

    src = s.source
    area = abs(np.linalg.det(src.basis))
    offs = _offsets(src.n_trunc)
    a = src.basis
    out = np.empty((len(x), 2, 2))
    eye = np.eye(2)
    for lo in range(0, len(x), _CHUNK):
        t = x[lo : lo + _CHUNK]
        t = t - np.floor(t + 0.5)
        phys = (t[:, None, :] - offs[None, :, :]) @ a.T
        rho = np.linalg.norm(phys, axis=-1)
        small = rho < _RHO_FLOOR
        safe = np.where(small, 1.0, rho)
        _, w_r, w_rr, _, _ = wderivs(src.potential, rho, src.potential.height)
        unit = phys / safe[..., None]
        pmat = unit[..., :, None] * unit[..., None, :]
        coef_q = np.where(small, w_rr, w_r / safe)
        hx = coef_q[..., None, None] * (eye - pmat) + w_rr[..., None, None] * pmat
        out[lo : lo + _CHUNK] = a.T @ hx.sum(axis=1) @ a / area
    return out


def misfit_grad_hessian(s: MisfitSurface, x) -> tuple[np.ndarray, np.ndarray]:
    """Gradient and Hessian at one reduced point."""
    x = np.asarray(x, dtype=float)[None, :]
    return misfit_grad_many(s, x)[0], misfit_hessian_many(s, x)[0]


def surface_grid(s: MisfitSurface, res: int) -> np.ndarray:
    """Row-major res x res samples at reduced coordinates (i/res, j/res)."""
    if res < 2:
        raise ValueError("res must be at least 2")
    i, j = np.meshgrid(np.arange(res), np.arange(res), indexing="ij")
    pts = np.column_stack([i.ravel(), j.ravel()]) / res
    return misfit_value_many(s, pts).reshape(res, res)


def locate_well(s: MisfitSurface, x0, tol: float = 1e-12, max_iter: int = 60) -> np.ndarray:
    """Newton refinement of a well location starting from ``x0`` (reduced)."""
    x = np.asarray(x0, dtype=float).copy()
    for _ in range(max_iter):
        g, h = misfit_grad_hessian(s, x)
        if np.linalg.norm(g, np.inf) < tol:
            return x
        x = x - np.linalg.solve(h, g)
    raise NotConverged(f"well refinement from {x0} did not reach |grad| < {tol}")


def well_values(s: MisfitSurface) -> tuple[np.ndarray, float]:
    """Refined well locations and the (common) well energy."""
    wells = np.array([locate_well(s, w) for w in s.wells])
    vals = misfit_value_many(s, wells)
    return wells, float(vals.min())


@dataclass(frozen=True)
class WellReportRow:
    n_trunc: int
    min_eig_ab: float
    min_eig_ba: float


@dataclass(frozen=True)
class WellReport:
    rows: tuple[WellReportRow, ...]
    stable: bool

    def successive_gaps(self) -> list[float]:
        """|e(N_{k+1}) - e(N_k)| for the AB eigenvalue column."""
        e = [r.min_eig_ab for r in self.rows]
        return [abs(b - a) for a, b in zip(e, e[1:])]


def well_report(basis: np.ndarray, p: PairPotential, n_list) -> WellReport:
    """Minimum Hessian eigenvalue at both wells for each truncation in ``n_list``.

    The final row decides the stability flag: stable iff its AB and BA minima
    are both strictly positive.
    """
    n_list = list(n_list)
    if not n_list or any(b <= a for a, b in zip(n_list, n_list[1:])):
        raise ValueError("n_list must be non-empty and strictly increasing")
    rows = []
    for n in n_list:
        s = MisfitSurface.lattice_sum(basis, p, n_trunc=n)
        h = misfit_hessian_many(s, s.wells)
        eigs = np.linalg.eigvalsh(h)
        rows.append(
            WellReportRow(n_trunc=int(n), min_eig_ab=float(eigs[0, 0]), min_eig_ba=float(eigs[1, 0]))
        )
    last = rows[-1]
    return WellReport(rows=tuple(rows), stable=bool(last.min_eig_ab > 0 and last.min_eig_ba > 0))
