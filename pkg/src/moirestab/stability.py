"""Phonon stability and instability criteria for the coupled bilayer.

Three diagnostic routes are implemented:

* the pointwise lattice-sum criterion: positivity, as a quadratic form, of
  the sum of pair-potential Hessians over one layer's lattice, evaluated at
  every stacking offset (optionally along a relaxed difference field);
* the plane-integral instability criterion: a negative eigenvalue of the
  integral of the Hessian over the plane certifies an energy-lowering
  long-wavelength perturbation;
* the discrete antiparallel bump ansatz, whose quadratic-form value converges
  to a multiple of the plane-averaged vertical curvature m(d) as the bump
  radius grows.

The GSFE variant applies the same positivity test to the 2x2 Hessian of a
trigonometric stacking-energy model along a stacking field.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .errors import CutoffTooSmall, QuadratureNotConverged
from .geometry import BilayerGeometry
from .misfit import MisfitSurface, misfit_hessian_many
from .potentials import (
    PairPotential,
    hessian3d_many,
    hessian_norm_tail,
    length_scale,
    wderivs,
)

#: Default eigenvalue tolerance separating zero modes from genuine negatives.
TOL_EIG = 1e-6

#: Acceptable lattice-sum tail, meV/Angstrom^2.
CUTOFF_TAIL_TOL = 1e-8


@dataclass(frozen=True)
class DifferenceField:
    """Interlayer displacement-difference field at physical in-plane points.

    ``fn`` maps an (n, 2) array of Angstrom positions to (n, 2) in-plane
    offsets; ``max_norm`` bounds |fn| and widens lattice-sum tail margins.
    """

    fn: Callable[[np.ndarray], np.ndarray]
    max_norm: float

    def __call__(self, y: np.ndarray) -> np.ndarray:
        return self.fn(y)


@dataclass
class StabilityReport:
    """Sampled minimum eigenvalues, verdict and diagnostics for one criterion."""

    criterion: str
    verdict: str
    tol_eig: float
    worst_direction: np.ndarray
    samples_x: np.ndarray
    samples_min_eig: np.ndarray
    diagnostics: dict = field(default_factory=dict)

    def to_json_dict(self) -> dict:
        return {
            "criterion": self.criterion,
            "verdict": self.verdict,
            "tol_eig": self.tol_eig,
            "worst_direction": [float(v) for v in self.worst_direction],
            "samples": [
                {"x": [float(a) for a in x], "min_eig": float(e)}
                for x, e in zip(self.samples_x, self.samples_min_eig)
            ],
            "diagnostics": {
                "cutoff": float(self.diagnostics.get("cutoff", 0.0)),
                "quad_err": float(self.diagnostics.get("quad_err", 0.0)),
                "n_samples": int(self.diagnostics.get("n_samples", len(self.samples_min_eig))),
            },
        }


def lattice_points_within(basis: np.ndarray, center: np.ndarray, radius: float) -> np.ndarray:
    """All lattice points ``basis @ n`` with ``|point - center| <= radius``.

    Deterministic row order (lexicographic in n).
    """
    inv = np.linalg.inv(basis)
    corners = center[None, :] + radius * np.array(
        [[1, 1], [1, -1], [-1, 1], [-1, -1]], dtype=float
    )
    tc = corners @ inv.T
    lo = np.floor(tc.min(axis=0)).astype(int) - 1
    hi = np.ceil(tc.max(axis=0)).astype(int) + 1
    n1 = np.arange(lo[0], hi[0] + 1)
    n2 = np.arange(lo[1], hi[1] + 1)
    nn = np.array(np.meshgrid(n1, n2, indexing="ij"), dtype=float).reshape(2, -1).T
    pts = nn @ basis.T
    keep = np.linalg.norm(pts - center, axis=1) <= radius
    return pts[keep]


def cutoff_from_truncation(geom: BilayerGeometry, n: int) -> float:
    """Physical cutoff radius equivalent to an n-shell lattice-sum window."""
    return float(n * np.max(np.linalg.norm(geom.a1, axis=0)))


def stability_matrix(
    geom: BilayerGeometry,
    p: PairPotential,
    ueq: Optional[DifferenceField],
    x: np.ndarray,
    cutoff: float,
) -> np.ndarray:
    """Sum of 3x3 Hessians of the pair potential over layer-1 lattice points
    within ``cutoff`` of ``x``, each evaluated at the (possibly relaxed) offset.

    Raises :class:`CutoffTooSmall` when the analytic tail bound of the omitted
    terms exceeds ``CUTOFF_TAIL_TOL``.
    """
    x = np.asarray(x, dtype=float)
    margin = ueq.max_norm if ueq is not None else 0.0
    effective = cutoff - margin
    if effective <= 2.0 * length_scale(p):
        raise CutoffTooSmall(f"cutoff {cutoff} too small for the potential range")
    tail = hessian_norm_tail(p, p.height, effective) / geom.cell_area1
    if tail > CUTOFF_TAIL_TOL:
        raise CutoffTooSmall(
            f"lattice-sum tail bound {tail:.3e} meV/A^2 exceeds {CUTOFF_TAIL_TOL} "
            f"at cutoff {cutoff}"
        )
    pts = lattice_points_within(geom.a1, x, cutoff)
    y = x[None, :] - pts
    if ueq is not None:
        y = y + ueq(y)
    return hessian3d_many(p, y, p.height).sum(axis=0)


def stability_report(
    geom: BilayerGeometry,
    p: PairPotential,
    ueq: Optional[DifferenceField],
    grid_res: int,
    cutoff: float,
    tol_eig: float = TOL_EIG,
) -> StabilityReport:
    """Minimum eigenvalue of the stability matrix over a grid of the layer-1 cell.

    Verdict is ``stable`` iff every sampled minimum eigenvalue is at least
    ``-tol_eig``.
    """
    if grid_res < 4:
        raise ValueError("grid_res must be at least 4")
    i, j = np.meshgrid(np.arange(grid_res), np.arange(grid_res), indexing="ij")
    reduced = np.column_stack([i.ravel(), j.ravel()]) / grid_res
    xs = reduced @ geom.a1.T
    min_eigs = np.empty(len(xs))
    worst = (np.inf, np.zeros(3))
    for k, x in enumerate(xs):
        mat = stability_matrix(geom, p, ueq, x, cutoff)
        vals, vecs = np.linalg.eigh(mat)
        min_eigs[k] = vals[0]
        if vals[0] < worst[0]:
            worst = (vals[0], vecs[:, 0])
    verdict = "stable" if np.all(min_eigs >= -tol_eig) else "unstable"
    return StabilityReport(
        criterion="StableSum",
        verdict=verdict,
        tol_eig=tol_eig,
        worst_direction=worst[1],
        samples_x=xs,
        samples_min_eig=min_eigs,
        diagnostics={"cutoff": cutoff, "quad_err": 0.0, "n_samples": len(xs)},
    )


# --------------------------------------------------------------------------
# plane-integral instability criterion


@dataclass(frozen=True)
class InstabilityResult:
    matrix: np.ndarray
    min_eig: float
    worst_direction: np.ndarray
    quad_err: float
    r_cut: float


def _gauss_panels(breaks: np.ndarray, order: int) -> tuple[np.ndarray, np.ndarray]:
    nodes, weights = np.polynomial.legendre.leggauss(order)
    rs, ws = [], []
    for a, b in zip(breaks[:-1], breaks[1:]):
        mid, half = 0.5 * (a + b), 0.5 * (b - a)
        rs.append(mid + half * nodes)
        ws.append(half * weights)
    return np.concatenate(rs), np.concatenate(ws)


def instability_matrix(
    geom: BilayerGeometry,
    p: PairPotential,
    ueq: Optional[DifferenceField] = None,
    quad_tol: float = 1e-5,
) -> InstabilityResult:
    """Integral over the plane of the pair-potential Hessian along the relaxed
    offset, with its minimum eigenvalue and eigenvector.

    The integral is evaluated in polar form with panelled Gauss-Legendre
    radial nodes and an equispaced angular rule, both refined until the
    result is stable to ``quad_tol`` (absolute, meV); the truncation tail is
    bounded analytically.  Raises :class:`QuadratureNotConverged` if the
    combined estimate stalls above tolerance.
    """
    d = p.height
    margin = ueq.max_norm if ueq is not None else 0.0
    scale = length_scale(p)
    r_cut = max(8.0 * scale, 4.0 * d, 20.0)
    for _ in range(60):
        if hessian_norm_tail(p, d, max(r_cut - margin, scale)) < 0.25 * quad_tol:
            break
        r_cut *= 1.4
    tail = hessian_norm_tail(p, d, max(r_cut - margin, scale))

    breaks = [0.0, 0.25 * scale]
    while breaks[-1] < r_cut:
        breaks.append(min(2.0 * breaks[-1], r_cut))
    breaks = np.asarray(breaks)

    def value(n_angle: int, order: int) -> np.ndarray:
        rho, wr = _gauss_panels(breaks, order)
        phi = 2.0 * np.pi * np.arange(n_angle) / n_angle
        pts = np.empty((len(rho) * n_angle, 2))
        pts[:, 0] = np.outer(rho, np.cos(phi)).ravel()
        pts[:, 1] = np.outer(rho, np.sin(phi)).ravel()
        if ueq is not None:
            pts = pts + ueq(pts)
        h = hessian3d_many(p, pts, d).reshape(len(rho), n_angle, 3, 3)
        ang = h.mean(axis=1) * 2.0 * np.pi
        return np.einsum("r,r,rij->ij", wr, rho, ang)

    n_angle, order = 32, 16
    prev = value(n_angle, order)
    ang_err = np.inf
    for _ in range(7):
        n_angle *= 2
        cur = value(n_angle, order)
        ang_err = float(np.max(np.abs(cur - prev)))
        prev = cur
        if ang_err < 0.25 * quad_tol:
            break
    rad = value(n_angle, 2 * order)
    rad_err = float(np.max(np.abs(rad - prev)))
    total_err = ang_err + rad_err + tail
    if total_err > quad_tol:
        raise QuadratureNotConverged(
            f"plane integral error estimate {total_err:.3e} exceeds {quad_tol}"
        )
    mat = 0.5 * (rad + rad.T)
    vals, vecs = np.linalg.eigh(mat)
    return InstabilityResult(
        matrix=mat,
        min_eig=float(vals[0]),
        worst_direction=vecs[:, 0],
        quad_err=total_err,
        r_cut=float(r_cut),
    )


def instability_report(
    geom: BilayerGeometry,
    p: PairPotential,
    ueq: Optional[DifferenceField] = None,
    quad_tol: float = 1e-5,
    tol_eig: float = TOL_EIG,
) -> StabilityReport:
    """Wrap :func:`instability_matrix` into a report; verdict is ``unstable``
    iff the minimum eigenvalue is below ``-tol_eig``, else ``inconclusive``
    (a non-negative plane integral does not certify stability)."""
    res = instability_matrix(geom, p, ueq, quad_tol)
    verdict = "unstable" if res.min_eig < -tol_eig else "inconclusive"
    return StabilityReport(
        criterion="InstabilityIntegral",
        verdict=verdict,
        tol_eig=tol_eig,
        worst_direction=res.worst_direction,
        samples_x=np.zeros((1, 2)),
        samples_min_eig=np.array([res.min_eig]),
        diagnostics={"cutoff": res.r_cut, "quad_err": res.quad_err, "n_samples": 1},
    )


# --------------------------------------------------------------------------
# discrete antiparallel bump ansatz


def bump_profile(r: np.ndarray, r_bump: float, width: float) -> np.ndarray:
    """Smooth plateau: 1 on [0, r_bump], 0 beyond r_bump + width, smoothstep between."""
    t = np.clip((np.asarray(r, dtype=float) - r_bump) / width, 0.0, 1.0)
    return 1.0 - t * t * (3.0 - 2.0 * t)


def _interaction_radius(p: PairPotential, tol: float = 1e-5) -> float:
    from .potentials import _mz_tail

    r = max(10.0 * length_scale(p), 20.0)
    for _ in range(40):
        if _mz_tail(p, p.height, r) < tol:
            return r
        r *= 1.25
    return r


def _window_offsets(basis: np.ndarray, radius: float) -> np.ndarray:
    inv = np.linalg.inv(basis)
    reach = radius * np.max(np.abs(inv)) * 2.0 + 2.0
    m = int(np.ceil(reach))
    ints = np.arange(-m, m + 1)
    nn = np.array(np.meshgrid(ints, ints, indexing="ij"), dtype=float).reshape(2, -1).T
    keep = np.linalg.norm(nn @ basis.T, axis=1) <= radius + 2.0 * np.max(
        np.linalg.norm(basis, axis=0)
    )
    return nn[keep]


def discrete_form_value(
    geom: BilayerGeometry,
    p: PairPotential,
    r_bump: float,
    antiparallel: bool = True,
) -> float:
    """Quadratic-form value of the vertical bump ansatz over the truncated pair
    of lattices.

    The two layers carry normalised plateau fields of amplitude
    ``|cell area|^(1/2) / (sqrt(2 pi) r_bump)`` along +-e_z (antiparallel by
    default); the value is the double lattice sum of the vertical Hessian
    weighted by the field difference squared.
    """
    d = p.height
    a1, a2 = geom.a1, geom.a2
    area1, area2 = geom.cell_area1, geom.cell_area2
    width = max(np.max(np.linalg.norm(a1, axis=0)), np.max(np.linalg.norm(a2, axis=0)))
    if r_bump < 5.0 * width:
        raise ValueError("r_bump must be at least five lattice constants")
    r_int = _interaction_radius(p)

    sign = 1.0 if antiparallel else -1.0

    def support_points(basis):
        pts = lattice_points_within(basis, np.zeros(2), r_bump + width)
        return pts

    def cross_and_self(src_basis, src_pts, other_basis):
        """sum phi_src^2 * W_other and sum phi_src * (phi_other-weighted W)."""
        window = _window_offsets(other_basis, r_int)
        inv_other = np.linalg.inv(other_basis)
        t_self = 0.0
        t_cross = 0.0
        chunk = max(1, int(4e6 // max(len(window), 1)))
        phi_src_all = bump_profile(np.linalg.norm(src_pts, axis=1), r_bump, width)
        for lo in range(0, len(src_pts), chunk):
            y = src_pts[lo : lo + chunk]
            phi_s = phi_src_all[lo : lo + chunk]
            centers = np.round(y @ inv_other.T)
            cand = (centers[:, None, :] + window[None, :, :]) @ other_basis.T
            diff = y[:, None, :] - cand
            rho = np.linalg.norm(diff, axis=-1)
            wzz = wderivs(p, rho, d)[4]
            t_self += float(np.sum(phi_s**2 * wzz.sum(axis=1)))
            phi_o = bump_profile(np.linalg.norm(cand, axis=-1), r_bump, width)
            t_cross += float(np.sum(phi_s * np.sum(phi_o * wzz, axis=1)))
        return t_self, t_cross

    p1 = support_points(a1)
    p2 = support_points(a2)
    t1, t_cross = cross_and_self(a1, p1, a2)
    t3, _ = cross_and_self(a2, p2, a1)

    q = area1 * t1 + 2.0 * sign * np.sqrt(area1 * area2) * t_cross + area2 * t3
    return float(q / (2.0 * np.pi * r_bump**2))


def ansatz_limit_prefactor(geom: BilayerGeometry, which: str = "derived") -> float:
    """Large-radius limit coefficient of m(d) for the bump ansatz.

    ``derived``: (sqrt(area1)^-1 + sqrt(area2)^-1)^2 / 2, what the double sum
    converges to; ``printed``: (sqrt(area1)+sqrt(area2))^2 * area2 /
    (2 pi area1), the coefficient quoted alongside the ansatz in the
    literature.  The two disagree (the quoted form is dimensionally
    inconsistent); both are exposed so reports can show them side by side.
    """
    a1, a2 = geom.cell_area1, geom.cell_area2
    if which == "derived":
        return float(0.5 * (1.0 / np.sqrt(a1) + 1.0 / np.sqrt(a2)) ** 2)
    if which == "printed":
        return float((np.sqrt(a1) + np.sqrt(a2)) ** 2 * a2 / (2.0 * np.pi * a1))
    raise ValueError("which must be 'derived' or 'printed'")


# --------------------------------------------------------------------------
# GSFE criterion


def identity_stacking(res: int) -> np.ndarray:
    """The unrelaxed stacking grid s(y) = y on the unit torus, shape (res, res, 2)."""
    i, j = np.meshgrid(np.arange(res), np.arange(res), indexing="ij")
    return np.stack([i, j], axis=-1) / res


def gsfe_stability(
    s: MisfitSurface, stacking_field: np.ndarray, tol_eig: float = TOL_EIG
) -> StabilityReport:
    """Minimum eigenvalue of the GSFE Hessian along a stacking field.

    ``stacking_field`` is a (res, res, 2) or (n, 2) array of reduced stacking
    values, e.g. ``relax.stacking_field`` output or :func:`identity_stacking`.
    """
    if not s.is_gsfe:
        raise ValueError("gsfe_stability requires a GSFE-sourced misfit surface")
    pts = np.asarray(stacking_field, dtype=float).reshape(-1, 2)
    h = misfit_hessian_many(s, pts)
    vals, vecs = np.linalg.eigh(h)
    min_eigs = vals[:, 0]
    k = int(np.argmin(min_eigs))
    worst = np.array([vecs[k, 0, 0], vecs[k, 1, 0], 0.0])
    verdict = "stable" if np.all(min_eigs >= -tol_eig) else "unstable"
    return StabilityReport(
        criterion="GsfeWell",
        verdict=verdict,
        tol_eig=tol_eig,
        worst_direction=worst,
        samples_x=pts,
        samples_min_eig=min_eigs,
        diagnostics={"cutoff": 0.0, "quad_err": 0.0, "n_samples": len(pts)},
    )
