"""Physical parameters, constitutive laws, energies and diagnostics.

All energies and norms are quadrature sums over the finite-element
expansions of the fields; concentrations are required to stay strictly
positive wherever a logarithm is taken, and any violation raises instead of
clamping (positivity is a property of the scheme, so a violation indicates a
bug or solver failure upstream).
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from . import fem
from .errors import PositivityError


@dataclass(frozen=True, eq=False)
class Params:
    """Nondimensional numbers and constitutive constants.

    ``w_steric`` is the species-interaction matrix; it must be symmetric with
    nonnegative entries and positive semidefinite (the zero matrix is the
    classical, steric-free coupling).  ``b_shift`` is the constant added under
    the square root of the auxiliary energy variable; None selects
    1 + max(0, -E_spnp(initial)) at setup time.
    """

    re: float = 1.0
    pe: float = 1.0
    co: float = 1.0
    lam: float = 1.0
    mu0: float = 1.0
    mu_inf: float = 0.5
    lambda1: float = 1.0
    k: float = 1.0
    z: tuple = (1, -1)
    w_steric: np.ndarray = field(default_factory=lambda: np.zeros((2, 2)))
    b_shift: float | None = None
    dt: float = 1e-2
    t_final: float = 1.0

    def __post_init__(self):
        for name in ("re", "pe", "co", "lam", "dt", "t_final", "k"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if not (self.mu0 > self.mu_inf > 0):
            raise ValueError("need mu0 > mu_inf > 0")
        if self.lambda1 < 0:
            raise ValueError("lambda1 must be nonnegative")
        w = np.asarray(self.w_steric, dtype=np.float64)
        if w.shape != (self.n_species, self.n_species):
            raise ValueError("steric matrix shape must match species count")
        if not np.allclose(w, w.T, atol=1e-12):
            raise ValueError("steric matrix must be symmetric")
        if np.any(w < 0):
            raise ValueError("steric matrix entries must be nonnegative")
        if np.linalg.eigvalsh(w).min() < -1e-12:
            raise ValueError("steric matrix must be positive semidefinite")
        object.__setattr__(self, "w_steric", w)
        if self.b_shift is not None and self.b_shift <= 0:
            raise ValueError("b_shift must be positive")

    @property
    def n_species(self):
        return len(self.z)

    def with_overrides(self, **kw):
        return replace(self, **kw)


@dataclass
class State:
    """Discrete fields of one time level.

    ``mu_q`` is the Carreau viscosity at quadrature points; it is only ever
    consumed inside assembly, so it is stored as an array rather than a
    Field.  ``xi`` is the auxiliary ratio that produced ``v`` from ``vbar``
    (1 at the initial level).
    """

    t: float
    u: fem.Field
    p: fem.Field
    sigma: list
    c: list
    vbar: fem.Field
    v: fem.Field
    mu_q: np.ndarray
    r: float
    xi: float = 1.0


@dataclass
class DiagnosticsRecord:
    """Per-step structure diagnostics."""

    t: float
    e_total: float
    e_spnp: float
    masses: tuple
    min_c: tuple
    xi: float
    r: float
    visc_dissip: float
    ionic_dissip: float


class Concentration:
    """Strictly positive concentration stored as scale * exp(log-field).

    Nodal coefficients are materialized for dof-level access, but every
    quadrature-point evaluation goes through the log field, so point values
    stay positive even where a direct quadratic interpolant of a sharp front
    would undershoot.
    """

    def __init__(self, sigma, scale=1.0):
        self.sigma = sigma
        self.scale = float(scale)
        self.dofmap = sigma.dofmap
        self.components = 1
        with np.errstate(over="ignore"):
            self.coefficients = self.scale * np.exp(sigma.coefficients)

    def copy(self):
        return Concentration(self.sigma.copy(), self.scale)


def concentration_from_callable(fn, dofmap, mesh):
    """Interpolate positive initial data through its logarithm.

    The result is rescaled so its mass matches the quadrature integral of
    the callable itself; this keeps analytically balanced species balanced
    to machine precision (the log interpolation alone would not).
    """
    field = fem.interpolate(fn, dofmap)
    if field.coefficients.min() <= 0.0:
        raise PositivityError("initial concentration must be strictly "
                              "positive at every dof")
    xy = fem.quad_points_physical(mesh)
    target = fem.integrate(np.broadcast_to(np.asarray(
        fn(xy[..., 0], xy[..., 1]), dtype=np.float64), xy.shape[:2]), mesh)
    sigma = fem.Field(dofmap, np.log(field.coefficients))
    raw_mass = fem.integrate(np.exp(fem.eval_values(sigma, mesh)), mesh)
    return Concentration(sigma, target / raw_mass)


def conc_values(c, mesh):
    """Concentration values at quadrature points."""
    if isinstance(c, Concentration):
        return c.scale * np.exp(fem.eval_values(c.sigma, mesh))
    return fem.eval_values(c, mesh)


def conc_log_values(c, mesh):
    """log(c) at quadrature points (exact for the exp representation)."""
    if isinstance(c, Concentration):
        return np.log(c.scale) + fem.eval_values(c.sigma, mesh)
    vals = fem.eval_values(c, mesh)
    if vals.min() <= 0.0:
        raise PositivityError(f"log of nonpositive concentration "
                              f"(min {vals.min():.3e})")
    return np.log(vals)


def conc_grads(c, mesh):
    """Concentration gradients at quadrature points."""
    if isinstance(c, Concentration):
        return conc_values(c, mesh)[..., None] * fem.eval_grads(c.sigma, mesh)
    return fem.eval_grads(c, mesh)


def carreau_viscosity(shear_sq, params):
    """Apparent viscosity for squared shear magnitude 2 D(u):D(u).

    mu = mu_inf + (mu0 - mu_inf) (1 + lambda1^2 s)^((k-1)/2).  The k = 1 case
    is the Newtonian limit and returns mu0 identically.
    """
    shear_sq = np.asarray(shear_sq, dtype=np.float64)
    if params.k == 1.0:
        return np.full_like(shear_sq, params.mu0)
    base = 1.0 + params.lambda1 ** 2 * shear_sq
    return params.mu_inf + (params.mu0 - params.mu_inf) \
        * np.power(base, 0.5 * (params.k - 1.0))


def shear_rate_sq(u, mesh):
    """2 D(u):D(u) at quadrature points for a vector field."""
    g = fem.eval_grads(u, mesh)   # (n_el, n_q, 2, 2)
    dxu, dyu = g[..., 0, 0], g[..., 0, 1]
    dxv, dyv = g[..., 1, 0], g[..., 1, 1]
    return 2.0 * (dxu ** 2 + dyv ** 2) + (dyu + dxv) ** 2


def _species_quad(c_fields, mesh):
    vals = [conc_values(c, mesh) for c in c_fields]
    for i, v in enumerate(vals):
        if v.min() <= 0.0:
            raise PositivityError(
                f"species {i} nonpositive at a quadrature point "
                f"(min {v.min():.3e})")
    return vals


def chemical_potential_bar(c_fields, vbar, species, params, mesh):
    """Values and gradients of log c_i + z_i Vbar + sum_j w_ij c_j.

    Everything is evaluated pointwise at quadrature points from the
    finite-element expansions.  Returns (values, gradients) with shapes
    (n_el, n_q) and (n_el, n_q, 2).
    """
    c_vals = _species_quad(c_fields, mesh)
    c_grads = [conc_grads(c, mesh) for c in c_fields]
    zi = params.z[species]
    w = params.w_steric
    vals = conc_log_values(c_fields[species], mesh) \
        + zi * fem.eval_values(vbar, mesh)
    grads = c_grads[species] / c_vals[species][..., None] \
        + zi * fem.eval_grads(vbar, mesh)
    for j in range(params.n_species):
        wij = w[species, j]
        if wij != 0.0:
            vals = vals + wij * c_vals[j]
            grads = grads + wij * c_grads[j]
    return vals, grads


def energy_spnp(c_fields, vbar, params, mesh):
    """Free energy of the ion/potential subsystem.

    (lam Co / 2) ||grad Vbar||^2 + Co sum_i (c_i, log c_i - 1)
    + (Co / 2) sum_ij w_ij (c_i, c_j), all by quadrature.
    """
    c_vals = _species_quad(c_fields, mesh)
    gv = fem.eval_grads(vbar, mesh)
    e_field = 0.5 * params.lam * params.co * fem.integrate(
        gv[..., 0] ** 2 + gv[..., 1] ** 2, mesh)
    e_ent = params.co * sum(
        fem.integrate(v * (conc_log_values(c, mesh) - 1.0), mesh)
        for v, c in zip(c_vals, c_fields))
    e_ster = 0.0
    w = params.w_steric
    for i in range(params.n_species):
        for j in range(params.n_species):
            if w[i, j] != 0.0:
                e_ster += 0.5 * params.co * w[i, j] * fem.integrate(
                    c_vals[i] * c_vals[j], mesh)
    return e_field + e_ent + e_ster


def kinetic_norms(u_new, u_old, mesh):
    """(||u_new||^2, ||2 u_new - u_old||^2) by quadrature."""
    vn = fem.eval_values(u_new, mesh)
    vo = fem.eval_values(u_old, mesh)
    sq = lambda v: fem.integrate(v[..., 0] ** 2 + v[..., 1] ** 2, mesh)
    comb = 2.0 * vn - vo
    return sq(vn), sq(comb)


def grad_norm_sq(p, mesh):
    g = fem.eval_grads(p, mesh)
    return fem.integrate(g[..., 0] ** 2 + g[..., 1] ** 2, mesh)


def discrete_energy(new, old, params, mesh):
    """Discrete total energy of a (new, old) state pair.

    E = 1/2 (1/2 ||u^{n+1}||^2 + 1/2 ||2u^{n+1} - u^n||^2)
        + (dt^2 / 3) ||grad p^{n+1}||^2
        + 1/2 (|r^{n+1}|^2 + |2 r^{n+1} - r^n|^2).
    """
    nu, ncomb = kinetic_norms(new.u, old.u, mesh)
    e_kin = 0.5 * (0.5 * nu + 0.5 * ncomb)
    e_p = params.dt ** 2 / 3.0 * grad_norm_sq(new.p, mesh)
    e_r = 0.5 * (new.r ** 2 + (2.0 * new.r - old.r) ** 2)
    return e_kin + e_p + e_r


def species_mass(c, mesh):
    """Integral of a concentration field."""
    return fem.integrate(conc_values(c, mesh), mesh)


def min_concentration(c, mesh):
    """Minimum over all dof coefficients and quadrature points."""
    return float(min(c.coefficients.min(), conc_values(c, mesh).min()))


def conc_error_l2(c, exact, mesh):
    """L2 distance of a concentration field from a callable."""
    xy = fem.quad_points_physical(mesh)
    diff = conc_values(c, mesh) - exact(xy[..., 0], xy[..., 1])
    return float(np.sqrt(fem.integrate(diff * diff, mesh)))


def nondimensionalize(rho, u_ref, l_ref, mu_ref, c0, kbt, e_charge,
                      diffusivity, permittivity):
    """Dimensionless groups (Re, Co, Pe, lam) from physical constants."""
    vals = (rho, u_ref, l_ref, mu_ref, c0, kbt, e_charge, diffusivity,
            permittivity)
    if any(v <= 0 for v in vals):
        raise ValueError("all physical constants must be positive")
    re = rho * u_ref * l_ref / mu_ref
    co = c0 * kbt / (rho * u_ref ** 2 * e_charge)
    pe = l_ref * u_ref / diffusivity
    lam = permittivity * kbt / (l_ref ** 2 * c0 * e_charge)
    return re, co, pe, lam


def resolve_b_shift(params, e_spnp_initial):
    """Shift constant for the auxiliary variable: fixed once at setup."""
    if params.b_shift is not None:
        return float(params.b_shift)
    return 1.0 + max(0.0, -e_spnp_initial)
