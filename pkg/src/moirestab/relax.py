"""Relaxation of the rescaled homobilayer energy on the unit torus.

Minimises

    integral over T^2 of  eps * grad(u) : E : grad(u) + (1/eps) * Phi0(x + 2u)

over periodic mean-zero displacement fields u, where Phi0 is a misfit surface
with its well energy shifted to zero, E is the elasticity tensor transformed
into reduced coordinates, and eps = 2*sin(theta/2).  Derivatives are spectral,
the discrete gradient is the exact gradient of the discretised functional, and
the minimiser is a limited-memory quasi-Newton descent with backtracking line
search on the mean-zero-projected gradient.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .misfit import MisfitSurface, misfit_grad_many, misfit_value_many, well_values
from .stability import DifferenceField


@dataclass(frozen=True)
class ElasticityTensor:
    """Isotropic 2D elasticity with its reduced-coordinate transform.

    ``components`` is C_klmn = lam*d_kl*d_mn + mu*(d_kn*d_lm + d_km*d_ln);
    ``transformed`` is the tensor acting on gradients of the rescaled fields,
    obtained by substituting u(x) = A U(Am^-1 x) with the moire basis
    Am = R(pi/2) A / (2 sin(theta/2)) and absorbing one factor of eps.
    """

    lam: float
    mu: float
    basis: np.ndarray
    components: np.ndarray = field(init=False, repr=False)
    transformed: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        if self.lam <= 0 or self.mu <= 0:
            raise ValueError("Lame parameters must be positive")
        a = np.asarray(self.basis, dtype=float)
        a.setflags(write=False)
        object.__setattr__(self, "basis", a)
        eye = np.eye(2)
        c = self.lam * np.einsum("kl,mn->klmn", eye, eye) + self.mu * (
            np.einsum("kn,lm->klmn", eye, eye) + np.einsum("km,ln->klmn", eye, eye)
        )
        rot = np.array([[0.0, -1.0], [1.0, 0.0]])  # R(pi/2)
        b = np.linalg.inv(a) @ rot
        e = np.einsum("klmn,ka,bl,mc,dn->abcd", c, a, b, a, b)
        c.setflags(write=False)
        e.setflags(write=False)
        object.__setattr__(self, "components", c)
        object.__setattr__(self, "transformed", e)


def elastic_quadratic_form(tensor: np.ndarray, m: np.ndarray) -> float:
    """M : T : M for a rank-4 tensor and a 2x2 matrix."""
    return float(np.einsum("ab,abcd,cd->", m, tensor, m))


@dataclass(frozen=True)
class DisplacementField:
    """Periodic in-plane displacement sampled on a uniform torus grid.

    ``values`` has shape (grid_res, grid_res, 2) in reduced units; node
    (i, j) sits at (i/res, j/res).
    """

    grid_res: int
    values: np.ndarray
    mean_zero: bool = True

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.shape != (self.grid_res, self.grid_res, 2):
            raise ValueError("values must have shape (grid_res, grid_res, 2)")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    @classmethod
    def zeros(cls, grid_res: int) -> "DisplacementField":
        return cls(grid_res=grid_res, values=np.zeros((grid_res, grid_res, 2)))


def default_initial_field(
    grid_res: int, seed: int = 0, amplitude: float = 1e-3
) -> DisplacementField:
    """Zero plus a fixed-seed smooth low-frequency perturbation of given amplitude.

    Breaks the symmetry of the initial stacking deterministically.
    """
    rng = np.random.default_rng(seed)
    t = np.arange(grid_res) / grid_res
    x1, x2 = np.meshgrid(t, t, indexing="ij")
    u = np.zeros((grid_res, grid_res, 2))
    for k1 in range(-2, 3):
        for k2 in range(-2, 3):
            if (k1, k2) <= (0, 0):
                continue  # one representative per +-k pair, skip zero mode
            phase = 2.0 * np.pi * (k1 * x1 + k2 * x2)
            coef = rng.standard_normal(2)
            sin_coef = rng.standard_normal(2)
            u += np.cos(phase)[..., None] * coef + np.sin(phase)[..., None] * sin_coef
    peak = np.max(np.abs(u))
    if peak > 0:
        u *= amplitude / peak
    u -= u.mean(axis=(0, 1))
    return DisplacementField(grid_res=grid_res, values=u)


@dataclass(frozen=True)
class RelaxProblem:
    """Misfit surface, elasticity, twist parameter and grid resolution."""

    surface: MisfitSurface
    elasticity: ElasticityTensor
    epsilon: float
    grid_res: int
    well_energy: float = field(init=False)

    def __post_init__(self):
        if self.epsilon <= 0:
            raise ValueError("epsilon must be positive")
        if self.grid_res < 4:
            raise ValueError("grid_res must be at least 4")
        _, well = well_values(self.surface)
        object.__setattr__(self, "well_energy", float(well))


def _wavenumbers(n: int) -> np.ndarray:
    k = np.fft.fftfreq(n, d=1.0 / n)
    if n % 2 == 0:
        k[n // 2] = 0.0  # keep the derivative operator skew-adjoint
    return k


def spectral_gradient(values: np.ndarray) -> np.ndarray:
    """G[i, j, a, b] = d u_a / d x_b by trigonometric differentiation."""
    n = values.shape[0]
    k = _wavenumbers(n)
    kx = k[:, None]
    ky = k[None, :]
    out = np.empty(values.shape[:2] + (2, 2))
    for a in range(2):
        uhat = np.fft.fft2(values[..., a])
        out[..., a, 0] = np.fft.ifft2(2j * np.pi * kx * uhat).real
        out[..., a, 1] = np.fft.ifft2(2j * np.pi * ky * uhat).real
    return out


def _spectral_divergence(t: np.ndarray) -> np.ndarray:
    """sum_b D_b T[..., a, b]; adjoint counterpart of spectral_gradient."""
    n = t.shape[0]
    k = _wavenumbers(n)
    kx = k[:, None]
    ky = k[None, :]
    out = np.empty(t.shape[:2] + (2,))
    for a in range(2):
        th0 = np.fft.fft2(t[..., a, 0])
        th1 = np.fft.fft2(t[..., a, 1])
        out[..., a] = np.fft.ifft2(2j * np.pi * (kx * th0 + ky * th1)).real
    return out


def _node_grid(n: int) -> np.ndarray:
    t = np.arange(n) / n
    x1, x2 = np.meshgrid(t, t, indexing="ij")
    return np.stack([x1, x2], axis=-1)


def energy(prob: RelaxProblem, u: DisplacementField) -> float:
    """Equal-weight torus quadrature of the rescaled functional."""
    if u.grid_res != prob.grid_res:
        raise ValueError("field resolution does not match the problem")
    g = spectral_gradient(u.values)
    e4 = prob.elasticity.transformed
    elastic = prob.epsilon * np.einsum("xyab,abcd,xycd->xy", g, e4, g).mean()
    s = _node_grid(prob.grid_res) + 2.0 * u.values
    vals = misfit_value_many(prob.surface, s.reshape(-1, 2))
    misfit = (vals.mean() - prob.well_energy) / prob.epsilon
    return float(elastic + misfit)


def gradient(prob: RelaxProblem, u: DisplacementField) -> np.ndarray:
    """Exact gradient of the discretised functional, sampled on the grid.

    Returned in the mean-weighted sense: the directional derivative along a
    perturbation v equals mean(gradient * v) over nodes.
    """
    if u.grid_res != prob.grid_res:
        raise ValueError("field resolution does not match the problem")
    g = spectral_gradient(u.values)
    e4 = prob.elasticity.transformed
    t = np.einsum("abcd,xycd->xyab", e4, g)
    elastic = -2.0 * prob.epsilon * _spectral_divergence(t)
    s = _node_grid(prob.grid_res) + 2.0 * u.values
    gm = misfit_grad_many(prob.surface, s.reshape(-1, 2)).reshape(s.shape)
    return elastic + (2.0 / prob.epsilon) * gm


def project_mean_zero(g: np.ndarray) -> np.ndarray:
    return g - g.mean(axis=(0, 1))


@dataclass
class RelaxDiagnostics:
    iterations: int
    converged: bool
    final_grad_inf: float
    energy_trace: list[float]
    n_energy_evals: int


def minimize(
    prob: RelaxProblem,
    u0: DisplacementField | None = None,
    tol: float = 1e-6,
    max_iter: int = 100_000,
    history: int = 12,
) -> tuple[DisplacementField, RelaxDiagnostics]:
    """Limited-memory quasi-Newton descent with Armijo backtracking.

    Terminates when the sup norm of the projected gradient drops below
    ``tol`` or after ``max_iter`` iterations; the energy trace is
    non-increasing over accepted steps.  On line-search failure the best
    iterate is returned with ``converged=False``.
    """
    if u0 is None:
        u0 = default_initial_field(prob.grid_res)
    n2 = prob.grid_res**2
    x = project_mean_zero(u0.values.copy())
    fx = energy(prob, DisplacementField(prob.grid_res, x))
    gx = project_mean_zero(gradient(prob, DisplacementField(prob.grid_res, x)))
    trace = [fx]
    evals = 1
    mem_s: list[np.ndarray] = []
    mem_y: list[np.ndarray] = []
    converged = False
    it = 0

    def two_loop(grad_arr):
        q = grad_arr.copy()
        alphas = []
        for s, y in zip(reversed(mem_s), reversed(mem_y)):
            rho = 1.0 / float(np.sum(y * s))
            a = rho * float(np.sum(s * q))
            alphas.append((a, rho, s, y))
            q -= a * y
        if mem_s:
            s, y = mem_s[-1], mem_y[-1]
            q *= float(np.sum(s * y) / np.sum(y * y))
        for a, rho, s, y in reversed(alphas):
            b = rho * float(np.sum(y * q))
            q += (a - b) * s
        return -q

    while it < max_iter:
        gnorm = float(np.max(np.abs(gx)))
        if gnorm < tol:
            converged = True
            break
        it += 1
        p = two_loop(gx) if mem_s else -gx / max(1.0, gnorm)
        slope = float(np.sum(gx * p)) / n2
        if slope >= 0:
            mem_s.clear()
            mem_y.clear()
            p = -gx / max(1.0, gnorm)
            slope = float(np.sum(gx * p)) / n2
        alpha = 1.0
        accepted = False
        for _ in range(60):
            x_new = project_mean_zero(x + alpha * p)
            f_new = energy(prob, DisplacementField(prob.grid_res, x_new))
            evals += 1
            if f_new <= fx + 1e-4 * alpha * slope:
                accepted = True
                break
            alpha *= 0.5
        if not accepted:
            if mem_s:
                mem_s.clear()
                mem_y.clear()
                continue
            break
        g_new = project_mean_zero(gradient(prob, DisplacementField(prob.grid_res, x_new)))
        s_vec = x_new - x
        y_vec = g_new - gx
        sy = float(np.sum(s_vec * y_vec))
        if sy > 1e-12 * np.linalg.norm(s_vec) * np.linalg.norm(y_vec):
            mem_s.append(s_vec)
            mem_y.append(y_vec)
            if len(mem_s) > history:
                mem_s.pop(0)
                mem_y.pop(0)
        x, fx, gx = x_new, f_new, g_new
        trace.append(fx)

    u_star = DisplacementField(prob.grid_res, x)
    diag = RelaxDiagnostics(
        iterations=it,
        converged=converged,
        final_grad_inf=float(np.max(np.abs(gx))),
        energy_trace=trace,
        n_energy_evals=evals,
    )
    return u_star, diag


def stacking_field(u: DisplacementField) -> np.ndarray:
    """s(y) = y + 2 u(y) mod Z^2 per grid node, shape (res, res, 2)."""
    s = _node_grid(u.grid_res) + 2.0 * u.values
    return s - np.floor(s)


def well_occupancy(stacking: np.ndarray, delta: float) -> float:
    """Area fraction of stacking values within torus distance delta of either well."""
    if not 0.0 < delta < 1.0 / 6.0:
        raise ValueError("delta must lie in (0, 1/6)")
    pts = np.asarray(stacking, dtype=float).reshape(-1, 2)
    frac = np.zeros(len(pts), dtype=bool)
    for well in (np.array([1.0, 1.0]) / 3.0, np.array([2.0, 2.0]) / 3.0):
        d = pts - well
        d -= np.round(d)
        frac |= np.linalg.norm(d, axis=1) <= delta
    return float(np.mean(frac))


# --------------------------------------------------------------------------
# evaluation off the grid and coupling to the stability criteria


def trig_interpolate(values: np.ndarray, points: np.ndarray) -> np.ndarray:
    """Evaluate the trigonometric interpolant of a periodic grid field.

    ``values`` has shape (n, n) or (n, n, m); ``points`` is (M, 2) in reduced
    coordinates (any real values; the interpolant is 1-periodic).
    """
    values = np.asarray(values, dtype=float)
    squeeze = values.ndim == 2
    if squeeze:
        values = values[..., None]
    n = values.shape[0]
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    k = np.fft.fftfreq(n, d=1.0 / n)
    out = np.empty((len(pts), values.shape[2]))
    chunk = max(1, int(2e6 // (n * n)) * 64)
    coeffs = np.fft.fft2(values, axes=(0, 1)) / (n * n)
    for lo in range(0, len(pts), chunk):
        t = pts[lo : lo + chunk]
        e1 = np.exp(2j * np.pi * np.outer(t[:, 0], k))
        e2 = np.exp(2j * np.pi * np.outer(t[:, 1], k))
        for c in range(values.shape[2]):
            tmp = e1 @ coeffs[:, :, c]
            out[lo : lo + chunk, c] = np.einsum("ck,ck->c", tmp, e2).real
    return out[:, 0] if squeeze else out


def relaxed_difference_field(u: DisplacementField, basis: np.ndarray) -> DifferenceField:
    """Physical interlayer difference field u2 - u1 induced by a homobilayer
    minimiser (U1 = -U2 = u), for use in the lattice-sum and plane-integral
    criteria.

    Maps a physical point y to -2 A u(A^-1 y) with trigonometric interpolation.
    """
    basis = np.asarray(basis, dtype=float)
    inv = np.linalg.inv(basis)
    phys = u.values @ basis.T
    max_norm = 2.0 * float(np.max(np.linalg.norm(phys, axis=-1))) * 1.05 + 1e-12

    def fn(y: np.ndarray) -> np.ndarray:
        t = np.atleast_2d(np.asarray(y, dtype=float)) @ inv.T
        vals = trig_interpolate(u.values, t)
        return -2.0 * (vals @ basis.T)

    return DifferenceField(fn=fn, max_norm=max_norm)


# --------------------------------------------------------------------------
# textual checkpoints


def save_field(path, u: DisplacementField) -> None:
    """Write ``u <res>`` then one ``i,j,u1,u2`` row per node."""
    with open(path, "w", newline="\n") as fh:
        fh.write(f"u {u.grid_res}\n")
        for i in range(u.grid_res):
            for j in range(u.grid_res):
                v = u.values[i, j]
                fh.write(f"{i},{j},{v[0]:.17g},{v[1]:.17g}\n")


def load_field(path) -> DisplacementField:
    with open(path) as fh:
        header = fh.readline().split()
        if len(header) != 2 or header[0] != "u":
            raise ValueError("not a displacement checkpoint")
        res = int(header[1])
        values = np.zeros((res, res, 2))
        for line in fh:
            i_s, j_s, a_s, b_s = line.strip().split(",")
            values[int(i_s), int(j_s)] = (float(a_s), float(b_s))
    mean = np.abs(values.mean(axis=(0, 1))).max()
    return DisplacementField(grid_res=res, values=values, mean_zero=bool(mean < 1e-12))
