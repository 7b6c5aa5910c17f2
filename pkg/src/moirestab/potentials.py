"""Interlayer pair potentials and their curvature diagnostics.

Four potential families are supported: Lennard-Jones, Morse, the
Kolmogorov-Crespi registry potential with fixed vertical normals, and a
separable Morse(in-plane) x Lennard-Jones(vertical) product.  For each family
the module provides analytic radial derivatives, the full 3x3 Hessian of the
3D potential, and the plane-averaged vertical curvature

    m(z) = integral over R^2 of d^2/dz^2 v(x, z) dx,

evaluated both from closed forms quoted in the literature and from adaptive
radial quadrature.  The two routes disagree for some families (the quoted
closed forms are mutually inconsistent); ``curvature_report`` exposes the
values side by side rather than hiding the gap.

Energies are meV, lengths Angstrom.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Union

import numpy as np
from scipy.integrate import quad

from .errors import NoClosedForm, NoRootInBracket, QuadratureNotConverged


@dataclass(frozen=True)
class LennardJones:
    """4*eps0*[(sigma/r)^12 - (sigma/r)^6], 3D radial."""

    eps0: float
    sigma: float


@dataclass(frozen=True)
class Morse:
    """e0*(exp(-2*kappa*(r-r0)) - 2*exp(-kappa*(r-r0))), 3D radial."""

    e0: float
    kappa: float
    r0: float


@dataclass(frozen=True)
class KolmogorovCrespi:
    """exp(-lam*(r-z0))*(c + 2*f(rho)) - a0*(z0/r)^6 with normals fixed to e_z.

    f(rho) = exp(-(rho/delta)^2) * (c0 + c2*(rho/delta)^2 + c4*(rho/delta)^4),
    rho the in-plane distance, r the full 3D distance.
    """

    c: float
    c0: float
    c2: float
    c4: float
    delta: float
    lam: float
    a0: float
    z0: float


@dataclass(frozen=True)
class ProductMorseLJ:
    """Morse(|x|) times Lennard-Jones(z) with unit LJ well depth."""

    e0: float
    kappa: float
    r0: float
    sigma: float


Kind = Union[LennardJones, Morse, KolmogorovCrespi, ProductMorseLJ]


@dataclass(frozen=True)
class PairPotential:
    """A potential family plus the fixed interlayer distance of the 2D restriction."""

    kind: Kind
    height: float

    def __post_init__(self):
        if self.height <= 0:
            raise ValueError("interlayer distance must be positive")
        for name, value in vars(self.kind).items():
            if name in ("eps0", "sigma", "e0", "kappa", "r0", "delta", "lam", "z0"):
                if value <= 0:
                    raise ValueError(f"{type(self.kind).__name__}.{name} must be positive")


@dataclass(frozen=True)
class RadialDerivatives:
    """Value and first two in-plane radial derivatives of the 2D restriction."""

    g: float
    g1: float
    g2: float


# --------------------------------------------------------------------------
# scalar radial profiles


def _lj_profile(eps0, sigma, r):
    """(g, g', g'') of the Lennard-Jones profile at distance r."""
    s6 = (sigma / r) ** 6
    s12 = s6 * s6
    g = 4.0 * eps0 * (s12 - s6)
    g1 = 4.0 * eps0 * (-12.0 * s12 + 6.0 * s6) / r
    g2 = 4.0 * eps0 * (156.0 * s12 - 42.0 * s6) / r**2
    return g, g1, g2


def _morse_profile(e0, kappa, r0, r):
    """(g, g', g'') of the Morse profile at distance r."""
    e1 = np.exp(-kappa * (r - r0))
    e2 = e1 * e1
    g = e0 * (e2 - 2.0 * e1)
    g1 = 2.0 * kappa * e0 * (e1 - e2)
    g2 = kappa**2 * e0 * (4.0 * e2 - 2.0 * e1)
    return g, g1, g2


def _kc_f(kind: KolmogorovCrespi, rho):
    """(f, f', f'') of the Gaussian-polynomial registry factor."""
    t = (rho / kind.delta) ** 2
    et = np.exp(-t)
    q = (kind.c2 - kind.c0) + (2.0 * kind.c4 - kind.c2) * t - kind.c4 * t * t
    dq = (2.0 * kind.c4 - kind.c2) - 2.0 * kind.c4 * t
    f = et * (kind.c0 + kind.c2 * t + kind.c4 * t * t)
    f1 = (2.0 * rho / kind.delta**2) * et * q
    f2 = (2.0 / kind.delta**2) * et * q + (2.0 * rho / kind.delta**2) ** 2 * et * (dq - q)
    return f, f1, f2


def radial_profile_3d(p: PairPotential, r):
    """(g, g', g'') of the 3D radial profile; only defined for LJ and Morse."""
    kind = p.kind
    if isinstance(kind, LennardJones):
        return _lj_profile(kind.eps0, kind.sigma, np.asarray(r, dtype=float))
    if isinstance(kind, Morse):
        return _morse_profile(kind.e0, kind.kappa, kind.r0, np.asarray(r, dtype=float))
    raise NoClosedForm(f"{type(kind).__name__} is not a 3D radial potential")


def is_radial_3d(p: PairPotential) -> bool:
    return isinstance(p.kind, (LennardJones, Morse))


# --------------------------------------------------------------------------
# partial derivatives of w(rho, z) = v(x, z), rho = |x|


def wderivs(p: PairPotential, rho, z):
    """(w, w_rho, w_rhorho, w_rhoz, w_zz) at in-plane distance rho, height z.

    Vectorised over ``rho``.
    """
    rho = np.asarray(rho, dtype=float)
    kind = p.kind
    if isinstance(kind, (LennardJones, Morse)):
        r = np.sqrt(rho**2 + z**2)
        g, g1, g2 = radial_profile_3d(p, r)
        w = g
        w_r = g1 * rho / r
        w_rr = g2 * rho**2 / r**2 + g1 * z**2 / r**3
        w_rz = rho * z * (g2 / r**2 - g1 / r**3)
        w_zz = g2 * z**2 / r**2 + g1 * rho**2 / r**3
        return w, w_r, w_rr, w_rz, w_zz

    if isinstance(kind, KolmogorovCrespi):
        r = np.sqrt(rho**2 + z**2)
        e = np.exp(-kind.lam * (r - kind.z0))
        e1 = -kind.lam * e
        e2 = kind.lam**2 * e
        a6 = kind.a0 * kind.z0**6
        h = -a6 / r**6
        h1 = 6.0 * a6 / r**7
        h2 = -42.0 * a6 / r**8
        f, f1, f2 = _kc_f(kind, rho)
        phi = kind.c + 2.0 * f
        phi1 = 2.0 * f1
        phi2 = 2.0 * f2
        w = e * phi + h
        w_r = e1 * (rho / r) * phi + e * phi1 + h1 * rho / r
        w_rr = (
            phi * (e2 * rho**2 / r**2 + e1 * z**2 / r**3)
            + 2.0 * e1 * (rho / r) * phi1
            + e * phi2
            + h2 * rho**2 / r**2
            + h1 * z**2 / r**3
        )
        w_rz = phi * rho * z * (e2 / r**2 - e1 / r**3) + e1 * (z / r) * phi1 + rho * z * (
            h2 / r**2 - h1 / r**3
        )
        w_zz = phi * (e2 * z**2 / r**2 + e1 * rho**2 / r**3) + h2 * z**2 / r**2 + h1 * rho**2 / r**3
        return w, w_r, w_rr, w_rz, w_zz

    if isinstance(kind, ProductMorseLJ):
        f1v, f1d, f1dd = _morse_profile(kind.e0, kind.kappa, kind.r0, rho)
        f2v, f2d, f2dd = _lj_profile(1.0, kind.sigma, z)
        return f1v * f2v, f1d * f2v, f1dd * f2v, f1d * f2d, f1v * f2dd

    raise TypeError(f"unknown potential kind {type(kind).__name__}")


def value3d(p: PairPotential, x, z) -> float:
    """v(x, z) for a 2-vector x and height z."""
    rho = float(np.linalg.norm(np.asarray(x, dtype=float)))
    return float(wderivs(p, rho, z)[0])


def radial_value_derivs(p: PairPotential, rho: float) -> RadialDerivatives:
    """Value and radial derivatives of the 2D restriction at the fixed height."""
    if rho < 0:
        raise ValueError("rho must be non-negative")
    w, w_r, w_rr, _, _ = wderivs(p, float(rho), p.height)
    return RadialDerivatives(g=float(w), g1=float(w_r), g2=float(w_rr))


_RHO_LIMIT = 1e-12


def hessian3d_many(p: PairPotential, x: np.ndarray, z: float) -> np.ndarray:
    """Stacked 3x3 Hessians D^2 v(x_i, z) for an (n, 2) array of in-plane points.

    The rho -> 0 limit replaces w_rho/rho by w_rhorho and drops the cross
    terms, which is the analytic limit for the smooth families.
    """
    x = np.atleast_2d(np.asarray(x, dtype=float))
    rho = np.linalg.norm(x, axis=1)
    small = rho < _RHO_LIMIT
    rho_safe = np.where(small, 1.0, rho)
    _, w_r, w_rr, w_rz, w_zz = wderivs(p, rho, z)

    unit = x / rho_safe[:, None]
    out = np.zeros((len(x), 3, 3))
    pmat = unit[:, :, None] * unit[:, None, :]
    qmat = np.eye(2)[None, :, :] - pmat
    coef_q = np.where(small, w_rr, w_r / rho_safe)
    coef_p = w_rr
    out[:, :2, :2] = coef_q[:, None, None] * qmat + coef_p[:, None, None] * pmat
    cross = np.where(small, 0.0, w_rz)[:, None] * unit
    out[:, :2, 2] = cross
    out[:, 2, :2] = cross
    out[:, 2, 2] = w_zz
    if np.any(small):
        out[small, :2, :2] = w_rr[small, None, None] * np.eye(2)[None, :, :]
    return out


def hessian3d(p: PairPotential, x, z: float) -> np.ndarray:
    """Symmetric 3x3 Hessian of v at in-plane offset x and height z."""
    return hessian3d_many(p, np.asarray(x, dtype=float)[None, :], z)[0]


# --------------------------------------------------------------------------
# plane-averaged vertical curvature m(z)


def m_closed(p: PairPotential, z: float) -> float:
    """Closed-form m(z) as quoted in the literature for each family.

    The Kolmogorov-Crespi family has no quoted closed form; use
    :func:`m_quadrature` instead.
    """
    if z <= 0:
        raise ValueError("z must be positive")
    kind = p.kind
    az = abs(z)
    if isinstance(kind, LennardJones):
        s6 = (kind.sigma / az) ** 6
        return 8.0 * np.pi * kind.eps0 * (5.0 * s6 - 11.0 * s6 * s6)
    if isinstance(kind, Morse):
        k, r0 = kind.kappa, kind.r0
        e1 = np.exp(-k * (az - r0))
        e2 = e1 * e1
        return -4.0 * np.pi * kind.e0 * ((k * az - 1.0) * e2 - (k * az - 2.0) * e1)
    if isinstance(kind, ProductMorseLJ):
        k, r0 = kind.kappa, kind.r0
        s6 = (kind.sigma / az) ** 6
        moment = np.exp(2.0 * k * r0) - 8.0 * np.exp(k * r0)
        return (3.0 * np.pi * kind.e0 / (k**2 * az**2)) * moment * (-7.0 * s6 + 26.0 * s6 * s6)
    raise NoClosedForm("no closed-form m(z) is quoted for the Kolmogorov-Crespi family")


def m_radial_identity(p: PairPotential, z: float) -> float:
    """-2*pi*(|z| g'(|z|) + g(|z|)): what the quadrature yields for 3D radial families."""
    az = abs(z)
    g, g1, _ = radial_profile_3d(p, az)
    return float(-2.0 * np.pi * (az * g1 + g))


def m_printed_general(p: PairPotential, z: float) -> float:
    """2*pi*(|z| g'(|z|) + 2 g(|z|)): the general 3D-radial formula as printed."""
    az = abs(z)
    g, g1, _ = radial_profile_3d(p, az)
    return float(2.0 * np.pi * (az * g1 + 2.0 * g))


def product_moment(kind: ProductMorseLJ) -> float:
    """integral of rho*Morse(rho) over [0, inf): (e0/(4 kappa^2))(e^(2 k r0) - 8 e^(k r0))."""
    k, r0 = kind.kappa, kind.r0
    return (kind.e0 / (4.0 * k**2)) * (np.exp(2.0 * k * r0) - 8.0 * np.exp(k * r0))


def m_product_derived(p: PairPotential, z: float) -> float:
    """2*pi*(moment of the in-plane factor)*f2''(z) for the separable family."""
    kind = p.kind
    if not isinstance(kind, ProductMorseLJ):
        raise NoClosedForm("derived product formula only applies to the separable family")
    _, _, f2dd = _lj_profile(1.0, kind.sigma, abs(z))
    return float(2.0 * np.pi * product_moment(kind) * f2dd)


def _kc_phi_max(kind: KolmogorovCrespi) -> float:
    # sup of c + 2 f(rho): e^-t t <= 1/e, e^-t t^2 <= 4/e^2
    return kind.c + 2.0 * (kind.c0 + kind.c2 / np.e + 4.0 * kind.c4 / np.e**2)


def _mz_tail(p: PairPotential, z: float, rcut: float) -> float:
    """Upper bound on 2*pi * integral_{rcut}^inf rho |w_zz(rho, z)| drho."""
    kind = p.kind
    r1 = np.sqrt(rcut**2 + z**2)
    if isinstance(kind, LennardJones):
        s = kind.sigma
        return 2.0 * np.pi * 4.0 * kind.eps0 * (14.0 * s**12 / r1**12 + 8.0 * s**6 / r1**6)
    if isinstance(kind, Morse):
        k = kind.kappa
        if r1 < kind.r0:
            return np.inf
        c = (6.0 * k**2 + 4.0 * k / r1) * kind.e0 * np.exp(k * kind.r0)
        return 2.0 * np.pi * c * np.exp(-k * r1) * (r1 / k + 1.0 / k**2)
    if isinstance(kind, ProductMorseLJ):
        k = kind.kappa
        if rcut < kind.r0:
            return np.inf
        _, _, f2dd = _lj_profile(1.0, kind.sigma, abs(z))
        t2 = np.exp(2.0 * k * kind.r0) * np.exp(-2.0 * k * rcut) * (
            rcut / (2.0 * k) + 1.0 / (4.0 * k**2)
        )
        t1 = 2.0 * np.exp(k * kind.r0) * np.exp(-k * rcut) * (rcut / k + 1.0 / k**2)
        return 2.0 * np.pi * abs(f2dd) * kind.e0 * (t2 + t1)
    if isinstance(kind, KolmogorovCrespi):
        lam = kind.lam
        phi_max = _kc_phi_max(kind)
        a6 = kind.a0 * kind.z0**6
        exp_part = (
            phi_max
            * (lam**2 + lam / r1)
            * np.exp(lam * kind.z0)
            * np.exp(-lam * r1)
            * (r1 / lam + 1.0 / lam**2)
        )
        power_part = 48.0 * a6 / (6.0 * r1**6)
        return 2.0 * np.pi * (exp_part + power_part)
    raise TypeError(f"unknown potential kind {type(kind).__name__}")


def length_scale(p: PairPotential) -> float:
    kind = p.kind
    if isinstance(kind, LennardJones):
        return kind.sigma
    if isinstance(kind, Morse):
        return kind.r0
    if isinstance(kind, ProductMorseLJ):
        return max(kind.r0, kind.sigma)
    return max(kind.z0, kind.delta)


def m_quadrature(
    p: PairPotential, z: float, tol_rel: float = 1e-6, tol_abs: float = 1e-9
) -> float:
    """m(z) by adaptive radial quadrature 2*pi*int_0^inf rho*w_zz(rho, z) drho.

    The cutoff radius is grown until the analytic tail bound drops below the
    absolute tolerance.  Raises :class:`QuadratureNotConverged` when the
    combined error estimate exceeds max(tol_rel*|m|, tol_abs).
    """
    if z <= 0:
        raise ValueError("z must be positive")

    def integrand(rho):
        return float(wderivs(p, rho, z)[4]) * rho

    scale = length_scale(p)
    rcut = max(10.0 * scale, 5.0 * z, 30.0)
    for _ in range(60):
        if _mz_tail(p, z, rcut) < 0.25 * tol_abs:
            break
        rcut *= 1.5
    tail = _mz_tail(p, z, rcut)
    val, err = quad(
        integrand, 0.0, rcut, epsabs=0.05 * tol_abs, epsrel=1e-10, limit=400,
        points=[scale, 2.0 * scale],
    )
    result = 2.0 * np.pi * val
    total_err = 2.0 * np.pi * err + tail
    if total_err > max(tol_rel * abs(result), tol_abs):
        raise QuadratureNotConverged(
            f"m(z) error estimate {total_err:.3e} exceeds tolerance at z={z}"
        )
    return float(result)


def inplane_average(p: PairPotential, z: float, tol_abs: float = 1e-9) -> float:
    """Coefficient of the identity in the in-plane block of the plane integral
    of D^2 v; vanishes for decaying potentials.

    Computed as pi * int_0^inf (w_rho + rho*w_rhorho) drho, the radial form of
    the in-plane average.
    """

    def integrand(rho):
        _, w_r, w_rr, _, _ = wderivs(p, rho, z)
        return float(w_r + rho * w_rr)

    scale = length_scale(p)
    rcut = max(40.0 * scale, 10.0 * z, 150.0)
    val, _ = quad(integrand, 0.0, rcut, epsabs=0.1 * tol_abs, epsrel=1e-10, limit=400)
    return float(np.pi * val)


def _m_eval(p: PairPotential, z: float, use: str) -> float:
    if use == "closed":
        return m_closed(p, z)
    if use == "quadrature":
        return m_quadrature(p, z)
    raise ValueError("use must be 'closed' or 'quadrature'")


def sign_transition(
    p: PairPotential, bracket: tuple[float, float], use: str = "closed", n_scan: int = 2000
) -> list[float]:
    """Roots of m(.) inside the bracket, by scan plus bisection.

    Returns the roots in increasing order to a relative tolerance of 1e-9;
    raises :class:`NoRootInBracket` when the scan detects no sign change.
    """
    lo, hi = float(bracket[0]), float(bracket[1])
    if not (0.0 < lo < hi):
        raise ValueError("bracket must satisfy 0 < lo < hi")
    zs = np.linspace(lo, hi, n_scan)
    vals = np.array([_m_eval(p, float(zz), use) for zz in zs])
    roots = []
    for i in range(n_scan - 1):
        va, vb = vals[i], vals[i + 1]
        if va == 0.0:
            roots.append(float(zs[i]))
            continue
        if va * vb < 0.0:
            a, b = float(zs[i]), float(zs[i + 1])
            fa = va
            while (b - a) > 1e-9 * b:
                mid = 0.5 * (a + b)
                fm = _m_eval(p, mid, use)
                if fm == 0.0:
                    a = b = mid
                    break
                if fa * fm < 0.0:
                    b = mid
                else:
                    a, fa = mid, fm
            roots.append(0.5 * (a + b))
    if vals[-1] == 0.0:
        roots.append(float(zs[-1]))
    if not roots:
        raise NoRootInBracket(f"m has no sign change on [{lo}, {hi}] with use={use}")
    return sorted(roots)


def curvature_report(p: PairPotential, z: float) -> dict:
    """Side-by-side closed-form and quadrature values of m(z) with discrepancy flags.

    For 3D radial families the report also evaluates the two competing general
    formulas (the printed one and the integration-by-parts identity) so the
    coefficient and sign gaps between them are visible in the output.
    """
    report: dict = {"z_A": float(z), "kind": type(p.kind).__name__}
    try:
        closed = m_closed(p, z)
    except NoClosedForm:
        closed = None
    quadv = m_quadrature(p, z)
    report["m_closed_meV"] = closed
    report["m_quadrature_meV"] = quadv
    flags = []
    if is_radial_3d(p):
        ident = m_radial_identity(p, z)
        printed = m_printed_general(p, z)
        report["m_radial_identity_meV"] = ident
        report["m_printed_general_meV"] = printed
        if abs(ident - quadv) > 1e-6 * max(abs(ident), 1e-3):
            flags.append("quadrature deviates from the radial identity -2pi(z g' + g)")
        scale = max(abs(closed), abs(quadv), 1e-12)
        if abs(closed - quadv) > 1e-6 * scale:
            flags.append(
                "closed form and quadrature disagree "
                f"(rel gap {abs(closed - quadv) / scale:.3e}); "
                "the quoted closed forms are not mutually consistent"
            )
        if abs(printed - quadv) > 1e-6 * scale:
            flags.append("printed general formula 2pi(z g' + 2g) disagrees with quadrature")
    elif isinstance(p.kind, ProductMorseLJ):
        derived = m_product_derived(p, z)
        report["m_product_derived_meV"] = derived
        scale = max(abs(derived), abs(quadv), 1e-12)
        if abs(derived - quadv) > 1e-6 * scale:
            flags.append("quadrature deviates from the separable moment formula")
        if closed is not None and abs(closed - derived) > 1e-6 * scale:
            flags.append(
                "quoted product prefactor (3pi) disagrees with the derived moment "
                "formula (12pi); both values reported"
            )
    report["flags"] = flags
    return report


# --------------------------------------------------------------------------
# tail bound for full Hessian norms, used by lattice-sum cutoffs


def hessian_norm_tail(p: PairPotential, z: float, rcut: float) -> float:
    """Upper bound on 2*pi * integral_{rcut}^inf rho * ||D^2 v(rho, z)||_2 drho.

    Used to certify lattice-sum truncations; crude but safe constants.
    """
    kind = p.kind
    r1 = np.sqrt(rcut**2 + z**2)
    if isinstance(kind, (LennardJones, Morse)):
        # 3D radial: eigenvalues of D^2 v are g'' and g'/r, so the mz majorant applies
        return _mz_tail(p, z, rcut)
    if isinstance(kind, ProductMorseLJ):
        k = kind.kappa
        if rcut < max(kind.r0, 1.0):
            return np.inf
        f2v, f2d, f2dd = _lj_profile(1.0, kind.sigma, abs(z))
        fz = abs(f2v) + abs(f2d) + abs(f2dd)
        c = kind.e0 * (3.0 + 4.0 * k + 6.0 * k**2) * (1.0 + 1.0 / rcut) * fz
        return 2.0 * np.pi * c * np.exp(k * kind.r0) * np.exp(-k * rcut) * (
            rcut / k + 1.0 / k**2
        )
    if isinstance(kind, KolmogorovCrespi):
        lam = kind.lam
        phi_max = _kc_phi_max(kind)
        # registry-factor derivative maxima from a dense deterministic scan
        rgrid = np.linspace(0.0, 12.0 * kind.delta, 4001)
        _, f1g, f2g = _kc_f(kind, rgrid)
        phi1_max = 2.0 * float(np.max(np.abs(f1g))) * 1.5
        phi2_max = 2.0 * float(np.max(np.abs(f2g))) * 1.5
        a6 = kind.a0 * kind.z0**6
        cexp = phi_max * (lam**2 + 2.0 * lam / r1) + 2.0 * lam * phi1_max + phi2_max
        exp_part = cexp * np.exp(lam * kind.z0) * np.exp(-lam * r1) * (r1 / lam + 1.0 / lam**2)
        power_part = 54.0 * a6 / (6.0 * r1**6)
        return 2.0 * np.pi * (exp_part + power_part)
    raise TypeError(f"unknown potential kind {type(kind).__name__}")


# --------------------------------------------------------------------------
# bilayer-graphene parameter presets

GRAPHENE_LATTICE_CONSTANT = 2.46  # Angstrom
GRAPHENE_SPACING = 3.35  # Angstrom, equilibrium interlayer distance

LJ_GRAPHENE = LennardJones(eps0=2.39, sigma=3.41)
MORSE_GRAPHENE = Morse(e0=2.8437, kappa=1.8168, r0=3.6891)
KC_GRAPHENE = KolmogorovCrespi(
    c=3.030, c0=15.71, c2=12.29, c4=4.933, delta=0.578, lam=3.629, a0=10.238, z0=3.34
)
PRODUCT_GRAPHENE = ProductMorseLJ(e0=2.8437, kappa=1.8168, r0=3.6891, sigma=3.41)
