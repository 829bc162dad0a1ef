"""Reference elements, quadrature, form assembly and constraint handling.

Assembly is vectorized over all triangles at once: basis values are tabulated
on the reference triangle, pushed to physical gradients per cell through the
(affine) Jacobian, and contracted with quadrature weights via einsum.  Every
matrix is accumulated as coordinate triplets and compressed to CSR once, with
duplicates summed.

Nonlinear coefficients are always point values at quadrature points, taken
from the finite-element expansions of their fields.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .errors import CompatibilityError
from .sparse import SparseMatrix, solve_direct

# Symmetric 12-point rule on the reference triangle, exact through degree 6.
# Parameters refined to machine precision against the monomial integrals
# p! q! / (p+q+2)!.
_W1, _A1 = 0.11678627572638316, 0.24928674517090793
_W2, _A2 = 0.050844906370207305, 0.06308901449150253
_W3, _A3, _B3 = 0.08285107561837142, 0.31035245103378606, 0.05314504984481544

MAX_QUAD_DEGREE = 6


@dataclass
class QuadRule:
    """Quadrature rule in barycentric coordinates on the reference triangle.

    Weights are scaled to the reference area, so they sum to 1/2.
    """

    degree: int
    points: np.ndarray   # (n_q, 3) barycentric
    weights: np.ndarray  # (n_q,)


def quad_rule(min_degree=6):
    """Return a symmetric rule of exactness >= ``min_degree`` (degree 6)."""
    if min_degree > MAX_QUAD_DEGREE:
        raise ValueError(f"quadrature degree {min_degree} not supported "
                         f"(max {MAX_QUAD_DEGREE})")
    pts = []
    for a in (_A1, _A2):
        c = 1.0 - 2.0 * a
        pts += [(c, a, a), (a, c, a), (a, a, c)]
    c3 = 1.0 - _A3 - _B3
    pts += [(c3, _A3, _B3), (c3, _B3, _A3), (_A3, c3, _B3),
            (_B3, c3, _A3), (_A3, _B3, c3), (_B3, _A3, c3)]
    ws = [_W1] * 3 + [_W2] * 3 + [_W3] * 6
    return QuadRule(6, np.asarray(pts), 0.5 * np.asarray(ws))


_DEFAULT_RULE = None


def default_rule():
    global _DEFAULT_RULE
    if _DEFAULT_RULE is None:
        _DEFAULT_RULE = quad_rule(6)
    return _DEFAULT_RULE


class RefElement:
    """Lagrange basis tabulated at quadrature points on the reference triangle.

    P2 local ordering: vertex functions first, then edge-midpoint functions
    for edges (v0,v1), (v1,v2), (v2,v0).
    """

    def __init__(self, order, rule=None):
        if order not in (1, 2):
            raise ValueError(f"unsupported element order {order}")
        self.order = order
        rule = rule or default_rule()
        self.rule = rule
        self.values, self.grads = self.tabulate(rule.points)

    def tabulate(self, bary):
        """Basis values (n_b, n_q) and reference gradients (n_b, n_q, 2)."""
        bary = np.asarray(bary)
        l0, l1, l2 = bary[:, 0], bary[:, 1], bary[:, 2]
        one = np.ones_like(l0)
        zero = np.zeros_like(l0)
        # gradients of barycentrics wrt reference (x, y) = (l1, l2)
        dl = np.array([[-1.0, -1.0], [1.0, 0.0], [0.0, 1.0]])
        if self.order == 1:
            vals = np.stack([l0, l1, l2])
            grads = np.stack([np.stack([dl[i, 0] * one, dl[i, 1] * one], axis=-1)
                              for i in range(3)])
            return vals, grads
        vals = np.stack([
            l0 * (2 * l0 - 1),
            l1 * (2 * l1 - 1),
            l2 * (2 * l2 - 1),
            4 * l0 * l1,
            4 * l1 * l2,
            4 * l2 * l0,
        ])
        ls = (l0, l1, l2)
        grads = []
        for i in range(3):
            g = (4 * ls[i] - 1)[:, None] * dl[i][None, :]
            grads.append(g)
        for (i, j) in ((0, 1), (1, 2), (2, 0)):
            g = 4 * (ls[j][:, None] * dl[i][None, :] + ls[i][:, None] * dl[j][None, :])
            grads.append(g)
        return vals, np.stack(grads)


class _Geometry:
    """Per-mesh assembly tables: Jacobians, physical gradients, quadrature."""

    def __init__(self, mesh, rule):
        self.mesh = mesh
        self.rule = rule
        p = mesh.nodes[mesh.triangles]           # (n_el, 3, 2)
        B = np.stack([p[:, 1] - p[:, 0], p[:, 2] - p[:, 0]], axis=-1)
        det = B[:, 0, 0] * B[:, 1, 1] - B[:, 0, 1] * B[:, 1, 0]
        if np.any(det <= 0):
            raise ValueError("mesh has non-positively-oriented triangles")
        inv = np.empty_like(B)
        inv[:, 0, 0] = B[:, 1, 1]
        inv[:, 0, 1] = -B[:, 0, 1]
        inv[:, 1, 0] = -B[:, 1, 0]
        inv[:, 1, 1] = B[:, 0, 0]
        inv /= det[:, None, None]
        self.jac = B
        self.det = det                             # = 2 * area
        self.inv = inv
        self.wdet = rule.weights[None, :] * det[:, None]   # (n_el, n_q)
        bary = rule.points
        self.qpoints = (bary[None, :, 0, None] * p[:, None, 0, :]
                        + bary[None, :, 1, None] * p[:, None, 1, :]
                        + bary[None, :, 2, None] * p[:, None, 2, :])
        self._elements = {}

    def element(self, order):
        if order not in self._elements:
            ref = RefElement(order, self.rule)
            # phys_grads[e, a, q, d] = sum_r ref.grads[a, q, r] * inv[e, r, d]
            phys = np.einsum("aqr,erd->eaqd", ref.grads, self.inv)
            self._elements[order] = (ref.values, phys)
        return self._elements[order]


def geometry(mesh):
    """Assembly tables for a mesh, cached on the mesh object."""
    geo = getattr(mesh, "_fem_geometry", None)
    if geo is None:
        geo = _Geometry(mesh, default_rule())
        mesh._fem_geometry = geo
    return geo


def quad_points_physical(mesh):
    """Physical coordinates of all quadrature points, (n_el, n_q, 2)."""
    return geometry(mesh).qpoints


def integrate(values, mesh):
    """Integrate per-quadrature-point values (n_el, n_q) over the mesh."""
    return float(np.sum(geometry(mesh).wdet * values))


@dataclass
class Field:
    """Finite-element coefficient field.

    ``coefficients`` is flat with one block of ``n_dofs`` entries per
    component (x block then y block for vectors).
    """

    dofmap: object
    coefficients: np.ndarray
    components: int = 1

    def __post_init__(self):
        self.coefficients = np.asarray(self.coefficients, dtype=np.float64)
        expected = self.components * self.dofmap.n_dofs
        if self.coefficients.shape != (expected,):
            raise ValueError(f"coefficient vector must have length {expected}")

    def component(self, k):
        n = self.dofmap.n_dofs
        return self.coefficients[k * n:(k + 1) * n]

    def copy(self):
        return Field(self.dofmap, self.coefficients.copy(), self.components)


def zero_field(dofmap, components=1):
    return Field(dofmap, np.zeros(components * dofmap.n_dofs), components)


def interpolate(fn, dofmap, components=1):
    """Nodal interpolation of a callable (x, y) -> value or component tuple."""
    xy = dofmap.dof_coords()
    if components == 1:
        vals = np.asarray(fn(xy[:, 0], xy[:, 1]), dtype=np.float64)
        vals = np.broadcast_to(vals, (dofmap.n_dofs,)).copy()
        return Field(dofmap, vals)
    out = fn(xy[:, 0], xy[:, 1])
    blocks = [np.broadcast_to(np.asarray(c, dtype=np.float64), (dofmap.n_dofs,))
              for c in out]
    return Field(dofmap, np.concatenate(blocks), components)


def eval_values(field, mesh):
    """Field values at quadrature points: (n_el, n_q) or (n_el, n_q, 2)."""
    geo = geometry(mesh)
    phi, _ = geo.element(field.dofmap.order)
    cells = field.dofmap.cell_to_dofs
    if field.components == 1:
        return np.einsum("ea,aq->eq", field.coefficients[cells], phi)
    comps = [np.einsum("ea,aq->eq", field.component(k)[cells], phi)
             for k in range(field.components)]
    return np.stack(comps, axis=-1)


def eval_grads(field, mesh):
    """Field gradients at quadrature points.

    Scalar fields: (n_el, n_q, 2).  Vector fields: (n_el, n_q, 2, 2) with
    [i, j] = d u_i / d x_j.
    """
    geo = geometry(mesh)
    _, gphys = geo.element(field.dofmap.order)
    cells = field.dofmap.cell_to_dofs
    if field.components == 1:
        return np.einsum("ea,eaqd->eqd", field.coefficients[cells], gphys)
    comps = [np.einsum("ea,eaqd->eqd", field.component(k)[cells], gphys)
             for k in range(field.components)]
    return np.stack(comps, axis=2)


def _coeff_array(coeff, mesh):
    """Normalize a form coefficient to a (n_el, n_q) array (or scalar 1.0)."""
    if coeff is None:
        return 1.0
    if isinstance(coeff, Field):
        return eval_values(coeff, mesh)
    if np.isscalar(coeff):
        return float(coeff)
    return np.asarray(coeff)


def _scatter_matrix(local, test_cells, trial_cells, n_test, n_trial):
    n_el, nb_t, nb_s = local.shape
    rows = np.repeat(test_cells, nb_s, axis=1).ravel()
    cols = np.tile(trial_cells, (1, nb_t)).ravel()
    return SparseMatrix.from_coo(n_test, n_trial, rows, cols, local.ravel())


def assemble(form, trial, test, mesh, coeff=None):
    """Assemble a bilinear form into a sparse matrix (rows = test dofs).

    Supported forms
    ---------------
    mass          (w phi_trial, phi_test), optional scalar/field/array w
    stiffness     (w grad phi_trial . grad phi_test)
    advection     ((b . grad phi_trial) phi_test), b array (n_el, n_q, 2)
    grad_x/grad_y (d phi_trial, phi_test)
    vector_mass   block-diagonal mass on a 2-component space
    deformation   (2 w D(u) : D(v)) on a 2-component space
    div_coupling  ((div v) q), vector test space, scalar trial space

    Directional-gradient forms like (grad a . grad phi) psi are "advection"
    with b = grad a evaluated at quadrature points.
    """
    geo = geometry(mesh)
    phi_s, g_s = geo.element(trial.order)
    phi_t, g_t = geo.element(test.order)
    W = geo.wdet
    w = _coeff_array(coeff, mesh)

    if form == "mass":
        local = np.einsum("eq,iq,jq->eij", W * w, phi_t, phi_s)
        return _scatter_matrix(local, test.cell_to_dofs, trial.cell_to_dofs,
                               test.n_dofs, trial.n_dofs)
    if form == "stiffness":
        local = np.einsum("eq,eiqd,ejqd->eij", W * w, g_t, g_s)
        return _scatter_matrix(local, test.cell_to_dofs, trial.cell_to_dofs,
                               test.n_dofs, trial.n_dofs)
    if form == "advection":
        b = np.asarray(coeff)
        local = np.einsum("eq,iq,eqd,ejqd->eij", W, phi_t, b, g_s)
        return _scatter_matrix(local, test.cell_to_dofs, trial.cell_to_dofs,
                               test.n_dofs, trial.n_dofs)
    if form in ("grad_x", "grad_y"):
        d = 0 if form == "grad_x" else 1
        local = np.einsum("eq,iq,ejq->eij", W * w, phi_t, g_s[..., d])
        return _scatter_matrix(local, test.cell_to_dofs, trial.cell_to_dofs,
                               test.n_dofs, trial.n_dofs)
    if form == "vector_mass":
        local = np.einsum("eq,iq,jq->eij", W * w, phi_t, phi_s)
        return _vector_blocks({(0, 0): local, (1, 1): local}, trial, test)
    if form == "deformation":
        Ww = W * w
        gx_t, gy_t = g_t[..., 0], g_t[..., 1]
        gx_s, gy_s = g_s[..., 0], g_s[..., 1]
        # 2 mu D(u):D(v) = 2 mu (ux_x vx_x + uy_y vy_y)
        #                  + mu (ux_y + uy_x)(vx_y + vy_x)
        a00 = np.einsum("eq,eiq,ejq->eij", 2 * Ww, gx_t, gx_s) \
            + np.einsum("eq,eiq,ejq->eij", Ww, gy_t, gy_s)
        a11 = np.einsum("eq,eiq,ejq->eij", 2 * Ww, gy_t, gy_s) \
            + np.einsum("eq,eiq,ejq->eij", Ww, gx_t, gx_s)
        a01 = np.einsum("eq,eiq,ejq->eij", Ww, gy_t, gx_s)
        a10 = np.einsum("eq,eiq,ejq->eij", Ww, gx_t, gy_s)
        return _vector_blocks({(0, 0): a00, (0, 1): a01,
                               (1, 0): a10, (1, 1): a11}, trial, test)
    if form == "div_coupling":
        bx = np.einsum("eq,eiq,jq->eij", W * w, g_t[..., 0], phi_s)
        by = np.einsum("eq,eiq,jq->eij", W * w, g_t[..., 1], phi_s)
        n_t, n_s = test.n_dofs, trial.n_dofs
        rows_x = np.repeat(test.cell_to_dofs, phi_s.shape[0], axis=1).ravel()
        rows_y = rows_x + n_t
        cols = np.tile(trial.cell_to_dofs, (1, phi_t.shape[0])).ravel()
        rows = np.concatenate([rows_x, rows_y])
        cols2 = np.concatenate([cols, cols])
        vals = np.concatenate([bx.ravel(), by.ravel()])
        return SparseMatrix.from_coo(2 * n_t, n_s, rows, cols2, vals)
    raise ValueError(f"unknown form {form!r}")


def _vector_blocks(blocks, trial, test):
    n_t, n_s = test.n_dofs, trial.n_dofs
    nb_t = test.cell_to_dofs.shape[1]
    nb_s = trial.cell_to_dofs.shape[1]
    rows_all, cols_all, vals_all = [], [], []
    for (r, c), local in blocks.items():
        rows = np.repeat(test.cell_to_dofs + r * n_t, nb_s, axis=1).ravel()
        cols = np.tile(trial.cell_to_dofs + c * n_s, (1, nb_t)).ravel()
        rows_all.append(rows)
        cols_all.append(cols)
        vals_all.append(local.ravel())
    return SparseMatrix.from_coo(2 * n_t, 2 * n_s,
                                 np.concatenate(rows_all),
                                 np.concatenate(cols_all),
                                 np.concatenate(vals_all))


def _functional_array(coeff, mesh, vector=False):
    if callable(coeff):
        xy = quad_points_physical(mesh)
        out = coeff(xy[..., 0], xy[..., 1])
        if vector:
            return np.stack([np.broadcast_to(np.asarray(c, dtype=np.float64),
                                             xy.shape[:2]) for c in out], axis=-1)
        return np.broadcast_to(np.asarray(out, dtype=np.float64), xy.shape[:2])
    if isinstance(coeff, Field):
        return eval_values(coeff, mesh)
    if np.isscalar(coeff):
        shape = geometry(mesh).wdet.shape
        return np.full(shape + ((2,) if vector else ()), float(coeff))
    return np.asarray(coeff)


def _scatter_vector(local, cells, n_dofs):
    return np.bincount(cells.ravel(), weights=local.ravel(), minlength=n_dofs)


def assemble_vector(functional, test, mesh, coeff):
    """Assemble a linear functional into a dense vector.

    Supported functionals
    ---------------------
    source        (f, psi) with f a callable, Field, scalar or quad array
    vecflux       (b . grad psi) with b a quad array (n_el, n_q, 2)
    vector_source (f . v) on a 2-component test space
    """
    geo = geometry(mesh)
    phi, gphys = geo.element(test.order)
    W = geo.wdet

    if functional == "source":
        f = _functional_array(coeff, mesh)
        local = np.einsum("eq,iq->ei", W * f, phi)
        return _scatter_vector(local, test.cell_to_dofs, test.n_dofs)
    if functional == "vecflux":
        b = np.asarray(coeff)
        local = np.einsum("eq,eqd,eiqd->ei", W, b, gphys)
        return _scatter_vector(local, test.cell_to_dofs, test.n_dofs)
    if functional == "vector_source":
        f = _functional_array(coeff, mesh, vector=True)
        out = np.zeros(2 * test.n_dofs)
        for k in range(2):
            local = np.einsum("eq,iq->ei", W * f[..., k], phi)
            out[k * test.n_dofs:(k + 1) * test.n_dofs] = \
                _scatter_vector(local, test.cell_to_dofs, test.n_dofs)
        return out
    raise ValueError(f"unknown functional {functional!r}")


def apply_dirichlet(A, b, dofs, values, symmetric=False):
    """Impose Dirichlet values by row replacement.

    Rows listed in ``dofs`` become identity rows and the matching entries of
    ``b`` are set to ``values``.  With ``symmetric=True`` the columns are
    eliminated as well (known values moved to the right-hand side), keeping a
    symmetric matrix symmetric.
    """
    dofs = np.asarray(dofs, dtype=np.int64)
    b = np.asarray(b, dtype=np.float64).copy()
    if dofs.size == 0:
        return A, b
    values = np.broadcast_to(np.asarray(values, dtype=np.float64), dofs.shape)
    m = A.to_scipy().tocsr(copy=True)
    if symmetric:
        xk = np.zeros(A.n_cols)
        xk[dofs] = values
        b -= m @ xk
        mask_cols = np.isin(m.indices, dofs)
        m.data[mask_cols] = 0.0
    row_mask = np.zeros(A.n_rows, dtype=bool)
    row_mask[dofs] = True
    nnz_rows = np.repeat(row_mask, np.diff(m.indptr))
    m.data[nnz_rows] = 0.0
    m.eliminate_zeros()
    eye = sp.coo_matrix((np.ones(dofs.size), (dofs, dofs)), shape=m.shape)
    m = (m + eye.tocsr()).tocsr()
    m.sort_indices()
    b[dofs] = values
    return SparseMatrix.from_scipy(m), b


def zero_mean_system(A, weight):
    """Augment a singular Neumann system with one Lagrange multiplier row.

    ``weight`` is the vector of basis-function integrals, so the constraint
    enforces a zero quadrature mean exactly.
    """
    n = A.n_rows
    s = A.to_scipy().tocoo()
    rows = np.concatenate([s.row, np.full(n, n), np.arange(n)])
    cols = np.concatenate([s.col, np.arange(n), np.full(n, n)])
    vals = np.concatenate([s.data, weight, weight])
    return SparseMatrix.from_coo(n + 1, n + 1, rows, cols, vals)


def solve_zero_mean(A, b, weight, subtract_mean=False, comp_rtol=1e-8):
    """Solve a pure-Neumann system subject to a zero-mean constraint.

    The compatibility pairing of the right-hand side with the constant
    function is ``sum(b)``; when it exceeds ``comp_rtol * ||b||`` and
    ``subtract_mean`` is False a CompatibilityError is raised (for the
    potential equation this signals a net-charge imbalance).  With
    ``subtract_mean=True`` the multiplier absorbs the imbalance and its value
    is returned for logging.

    Returns (x, multiplier, SolveReport).
    """
    b = np.asarray(b, dtype=np.float64)
    imbalance = float(np.sum(b))
    nb = np.linalg.norm(b)
    if nb == 0.0:
        return np.zeros(A.n_rows), 0.0, None
    if not subtract_mean and abs(imbalance) > comp_rtol * nb:
        raise CompatibilityError(
            f"right-hand side pairing with constants is {imbalance:.3e} "
            f"(tolerance {comp_rtol * nb:.3e}); net-charge imbalance")
    aug = zero_mean_system(A, weight)
    x, report = solve_direct(aug, np.concatenate([b, [0.0]]))
    return x[:-1], float(x[-1]), report


def error_norm_l2(field, exact, mesh):
    """L2 norm of (field - exact) by quadrature.

    ``exact`` is a callable of (x, y); for vector fields it returns one array
    per component.
    """
    xy = quad_points_physical(mesh)
    vals = eval_values(field, mesh)
    if field.components == 1:
        diff = vals - exact(xy[..., 0], xy[..., 1])
        return float(np.sqrt(integrate(diff * diff, mesh)))
    ex = exact(xy[..., 0], xy[..., 1])
    total = 0.0
    for k in range(field.components):
        diff = vals[..., k] - ex[k]
        total += integrate(diff * diff, mesh)
    return float(np.sqrt(total))


def mean_value(field, mesh):
    """Quadrature mean of a scalar field."""
    return integrate(eval_values(field, mesh), mesh) / mesh.area


def basis_integrals(dofmap, mesh):
    """Integral of every basis function, used as the zero-mean weight."""
    return assemble_vector("source", dofmap, mesh, 1.0)
