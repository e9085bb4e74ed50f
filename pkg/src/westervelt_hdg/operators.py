"""Block assembly of the HDG operators for the mixed wave system.

Unknowns per element: a scalar polynomial (the acoustic potential), a vector
polynomial (its gradient proxy), and per interior facet a polynomial trace.
The assembled bilinear forms, with w/r/mu running over scalar/vector/facet
test functions:

    scalar_mass      (psi, w)_K                    element blocks
    vector_mass      (v, r)_K                      element blocks
    divergence       (psi, div r)_K                element blocks, rows = r
    boundary_penalty (tau psi, w)_{dK}             element blocks, all facets
    trace_vector     -(lam, [r . n])_F             sparse, interior facets
    trace_scalar     -(tau lam, w)_{dK interior}   sparse
    trace_penalty    (tau lam, mu)_{dK interior}   facet blocks

Vector dofs are stored per element as [x-component coeffs, y-component
coeffs]. Facet dofs exist on interior facets only; homogeneous Dirichlet
traces are hard zeros and never enter the system.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .basis import (
    SegmentBasis,
    TriangleBasis,
    scalar_space_dim,
    segment_quadrature,
    triangle_quadrature,
)
from .mesh import FacetTopology, Mesh


class AssemblyError(Exception):
    """Inconsistent sizes or parameters during operator assembly."""


class NondegeneracyError(Exception):
    """The nonlinear coefficient 1 + 2 k theta lost positivity."""

    def __init__(self, message, elements=()):
        super().__init__(message)
        self.elements = tuple(int(e) for e in elements)


class ProjectionError(Exception):
    """A local projection system could not be solved."""


# reference triangle vertices; local facet lf joins vertices lf, lf+1 (mod 3)
_REF_VERTS = np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]])
_LOCAL_FACETS = ((0, 1), (1, 2), (2, 0))

TAU_MODES = ("single_facet", "uniform")


@dataclass(frozen=True)
class DofLayout:
    """Global index layout for the three unknown fields."""

    degree: int
    n_elements: int
    n_interior_facets: int

    @property
    def dim_scalar(self) -> int:
        return scalar_space_dim(self.degree)

    @property
    def dim_facet(self) -> int:
        return self.degree + 1

    @property
    def n_scalar(self) -> int:
        return self.n_elements * self.dim_scalar

    @property
    def n_vector(self) -> int:
        return 2 * self.n_scalar

    @property
    def n_facet(self) -> int:
        return self.n_interior_facets * self.dim_facet

    def scalar_slice(self, e: int) -> slice:
        d = self.dim_scalar
        return slice(e * d, (e + 1) * d)

    def vector_slice(self, e: int) -> slice:
        d = 2 * self.dim_scalar
        return slice(e * d, (e + 1) * d)

    def facet_slice(self, interior_idx: int) -> slice:
        d = self.dim_facet
        return slice(interior_idx * d, (interior_idx + 1) * d)


def build_layout(mesh: Mesh, topo: FacetTopology, degree: int) -> DofLayout:
    if degree < 0:
        raise AssemblyError(f"polynomial degree must be >= 0, got {degree}")
    return DofLayout(
        degree=degree,
        n_elements=mesh.n_triangles,
        n_interior_facets=topo.n_interior,
    )


class ElementTables:
    """Geometry and basis evaluations shared by all assembly routines."""

    def __init__(self, mesh: Mesh, topo: FacetTopology, layout: DofLayout,
                 quad_order: int | None = None,
                 nonlinear_order: int | None = None):
        p = layout.degree
        self.mesh = mesh
        self.topo = topo
        self.layout = layout
        self.basis = TriangleBasis(p)
        self.facet_basis = SegmentBasis(p)
        self.cell_rule = triangle_quadrature(2 * p + 2 if quad_order is None
                                             else quad_order)
        self.nonlinear_rule = triangle_quadrature(
            max(3 * p, 2) if nonlinear_order is None else nonlinear_order)
        self.facet_rule = segment_quadrature(2 * p + 2 if quad_order is None
                                             else quad_order)

        self.phi, self.gphi = self.basis.eval(self.cell_rule.points)
        self.phi_nl = self.basis.eval_values(self.nonlinear_rule.points)
        self.mu = self.facet_basis.eval(self.facet_rule.points)

        tri = mesh.vertices[mesh.triangles]  # (ne, 3, 2)
        jac = np.stack([tri[:, 1] - tri[:, 0], tri[:, 2] - tri[:, 0]], axis=2)
        self.detj = jac[:, 0, 0] * jac[:, 1, 1] - jac[:, 0, 1] * jac[:, 1, 0]
        self.jinv_t = np.linalg.inv(jac).transpose(0, 2, 1)
        self.vert0 = tri[:, 0]
        self.jac = jac

        # physical quadrature points (ne, nq, 2) for both volume rules
        self.xq = self.vert0[:, None, :] + np.einsum(
            "eab,qb->eqa", jac, self.cell_rule.points)
        self.xq_nl = self.vert0[:, None, :] + np.einsum(
            "eab,qb->eqa", jac, self.nonlinear_rule.points)

        # physical gradients (ne, nq, d, 2)
        self.gphys = np.einsum("eab,qib->eqia", self.jinv_t, self.gphi)

        # element basis traces on each local facet for both facet
        # orientations, evaluated at the facet quadrature points
        s = self.facet_rule.points
        self.trace = np.empty((3, 2, s.shape[0], layout.dim_scalar))
        for lf, (la, lb) in enumerate(_LOCAL_FACETS):
            fwd = _REF_VERTS[la] + s[:, None] * (_REF_VERTS[lb] - _REF_VERTS[la])
            rev = _REF_VERTS[lb] + s[:, None] * (_REF_VERTS[la] - _REF_VERTS[lb])
            self.trace[lf, 1] = self.basis.eval_values(fwd)
            self.trace[lf, 0] = self.basis.eval_values(rev)

        # sides of each interior facet as (element, local facet) pairs
        sides: list[list[tuple[int, int]]] = [[] for _ in range(topo.n_interior)]
        for t in range(mesh.n_triangles):
            for lf in range(3):
                f = topo.elem_facets[t, lf]
                if topo.is_interior[f]:
                    sides[topo.interior_index[f]].append((t, lf))
        self.interior_sides = sides
        self.interior_facets = np.flatnonzero(topo.is_interior)

    def facet_points(self, fid: int) -> np.ndarray:
        """Physical quadrature points on facet fid, global orientation."""
        lo, hi = self.topo.facets[fid]
        plo, phi_v = self.mesh.vertices[lo], self.mesh.vertices[hi]
        return plo[None, :] + self.facet_rule.points[:, None] * (phi_v - plo)[None, :]


def tau_pattern(topo: FacetTopology, tau_bar: float, tau_mode: str) -> np.ndarray:
    """Per-(element, local facet) stabilization values."""
    if tau_bar <= 0.0:
        raise AssemblyError(f"stabilization parameter must be positive, got {tau_bar}")
    if tau_mode not in TAU_MODES:
        raise AssemblyError(f"unknown tau mode {tau_mode!r}, expected one of {TAU_MODES}")
    nt = topo.elem_facets.shape[0]
    if tau_mode == "uniform":
        return np.full((nt, 3), tau_bar)
    tau = np.zeros((nt, 3))
    tau[np.arange(nt), topo.stab_facet] = tau_bar
    return tau


def count_unstabilized_facets(topo: FacetTopology, tau: np.ndarray) -> int:
    """Interior facets carrying zero stabilization from both sides."""
    total = np.zeros(topo.n_facets)
    for t in range(tau.shape[0]):
        for lf in range(3):
            total[topo.elem_facets[t, lf]] += tau[t, lf]
    return int(np.count_nonzero(total[topo.is_interior] == 0.0))


@dataclass
class AssembledOperators:
    """Static matrices of the semidiscrete system in block storage."""

    layout: DofLayout
    tables: ElementTables
    tau: np.ndarray  # (ne, 3)
    tau_bar: float
    tau_mode: str
    scalar_mass: np.ndarray  # (ne, d, d)
    vector_mass: np.ndarray  # (ne, 2d, 2d)
    vector_mass_inv: np.ndarray  # (ne, 2d, 2d)
    divergence: np.ndarray  # (ne, 2d, d)
    boundary_penalty: np.ndarray  # (ne, d, d)
    trace_vector: sp.csr_matrix  # (n_vector, n_facet)
    trace_scalar: sp.csr_matrix  # (n_scalar, n_facet)
    trace_penalty: np.ndarray  # (n_interior, pf, pf)
    trace_vector_blocks: np.ndarray  # (n_interior, 2, 2d, pf) per-side blocks
    trace_scalar_blocks: np.ndarray  # (n_interior, 2, d, pf)
    n_unstabilized_facets: int = 0

    def scalar_mass_apply(self, u: np.ndarray) -> np.ndarray:
        return apply_blocks(self.scalar_mass, u)

    def vector_mass_solve(self, u: np.ndarray) -> np.ndarray:
        return apply_blocks(self.vector_mass_inv, u)


def apply_blocks(blocks: np.ndarray, u) -> np.ndarray:
    """Apply a block-diagonal operator (ne, d, d) to stacked coefficients."""
    ne, d = blocks.shape[0], blocks.shape[2]
    u = np.asarray(u)
    if u.ndim == 1:
        return (blocks @ u.reshape(ne, d, 1)).reshape(-1)
    return np.matmul(blocks, u.reshape(ne, d, -1)).reshape(ne * blocks.shape[1], -1)


def block_diag_csr(blocks: np.ndarray) -> sp.csr_matrix:
    """Expand (ne, r, c) blocks into the global block-diagonal sparse matrix."""
    ne, r, c = blocks.shape
    rows = np.repeat(np.arange(ne * r).reshape(ne, r, 1), c, axis=2)
    cols = np.repeat(np.arange(ne * c).reshape(ne, 1, c), r, axis=1)
    return sp.coo_matrix(
        (blocks.ravel(), (rows.ravel(), cols.ravel())),
        shape=(ne * r, ne * c),
    ).tocsr()


def assemble_operators(mesh: Mesh, topo: FacetTopology, layout: DofLayout,
                       tau_bar: float = 1.0,
                       tau_mode: str = "single_facet") -> AssembledOperators:
    """Assemble all static matrices of the scheme."""
    if layout.n_elements != mesh.n_triangles:
        raise AssemblyError("layout does not match the mesh")
    tab = ElementTables(mesh, topo, layout)
    tau = tau_pattern(topo, tau_bar, tau_mode)
    ne, d = layout.n_elements, layout.dim_scalar
    pf = layout.dim_facet
    w = tab.cell_rule.weights
    phi, gphys, detj = tab.phi, tab.gphys, tab.detj

    mass_ref = phi.T @ (w[:, None] * phi)
    scalar_mass = detj[:, None, None] * mass_ref[None, :, :]
    vector_mass = np.zeros((ne, 2 * d, 2 * d))
    vector_mass[:, :d, :d] = scalar_mass
    vector_mass[:, d:, d:] = scalar_mass

    # divergence[e, comp*d + i, j] = int_K phi_j d(phi_i)/d(x_comp);
    # the (comp, i) flattening matches the vector dof layout
    div = np.einsum("q,qj,eqic->ecij", w, phi, gphys) * detj[:, None, None, None]
    divergence = div.reshape(ne, 2 * d, d)

    wf = tab.facet_rule.weights
    mu = tab.mu
    boundary_penalty = np.zeros((ne, d, d))
    trace_penalty = np.zeros((topo.n_interior, pf, pf))
    mu_mass = mu.T @ (wf[:, None] * mu)

    e_rows: list[np.ndarray] = []
    e_cols: list[np.ndarray] = []
    e_data: list[np.ndarray] = []
    f_rows: list[np.ndarray] = []
    f_cols: list[np.ndarray] = []
    f_data: list[np.ndarray] = []
    e_blocks = np.zeros((topo.n_interior, 2, 2 * d, pf))
    f_blocks = np.zeros((topo.n_interior, 2, d, pf))
    side_count = np.zeros(topo.n_interior, dtype=int)

    for t in range(ne):
        for lf in range(3):
            fid = topo.elem_facets[t, lf]
            length = topo.facet_lengths[fid]
            trace = tab.trace[lf, int(topo.elem_facet_forward[t, lf])]
            if tau[t, lf] != 0.0:
                boundary_penalty[t] += tau[t, lf] * length * (
                    trace.T @ (wf[:, None] * trace))
            if not topo.is_interior[fid]:
                continue
            fi = topo.interior_index[fid]
            side = side_count[fi]
            side_count[fi] += 1
            # C[i, m] = int_F phi_i mu_m
            cmat = length * (trace.T @ (wf[:, None] * mu))
            nvec = topo.normals[t, lf]
            e_blocks[fi, side, :d] = -nvec[0] * cmat
            e_blocks[fi, side, d:] = -nvec[1] * cmat
            rows_x = np.arange(t * 2 * d, t * 2 * d + d)
            rows_y = rows_x + d
            cols = np.arange(fi * pf, (fi + 1) * pf)
            rr, cc = np.meshgrid(rows_x, cols, indexing="ij")
            e_rows.append(rr.ravel())
            e_cols.append(cc.ravel())
            e_data.append((-nvec[0] * cmat).ravel())
            rr, cc = np.meshgrid(rows_y, cols, indexing="ij")
            e_rows.append(rr.ravel())
            e_cols.append(cc.ravel())
            e_data.append((-nvec[1] * cmat).ravel())
            if tau[t, lf] != 0.0:
                f_blocks[fi, side] = -tau[t, lf] * cmat
                rows_s = np.arange(t * d, (t + 1) * d)
                rr, cc = np.meshgrid(rows_s, cols, indexing="ij")
                f_rows.append(rr.ravel())
                f_cols.append(cc.ravel())
                f_data.append((-tau[t, lf] * cmat).ravel())
                trace_penalty[fi] += tau[t, lf] * length * mu_mass

    def to_csr(rows, cols, data, shape):
        if rows:
            return sp.coo_matrix(
                (np.concatenate(data), (np.concatenate(rows), np.concatenate(cols))),
                shape=shape,
            ).tocsr()
        return sp.csr_matrix(shape)

    trace_vector = to_csr(e_rows, e_cols, e_data, (layout.n_vector, layout.n_facet))
    trace_scalar = to_csr(f_rows, f_cols, f_data, (layout.n_scalar, layout.n_facet))

    return AssembledOperators(
        layout=layout,
        tables=tab,
        tau=tau,
        tau_bar=tau_bar,
        tau_mode=tau_mode,
        scalar_mass=scalar_mass,
        vector_mass=vector_mass,
        vector_mass_inv=np.linalg.inv(vector_mass),
        divergence=divergence,
        boundary_penalty=boundary_penalty,
        trace_vector=trace_vector,
        trace_scalar=trace_scalar,
        trace_penalty=trace_penalty,
        trace_vector_blocks=e_blocks,
        trace_scalar_blocks=f_blocks,
        n_unstabilized_facets=count_unstabilized_facets(topo, tau),
    )


def assemble_nonlinear_mass(theta: np.ndarray, k: float,
                            tables: ElementTables) -> np.ndarray:
    """Element blocks of ((1 + 2 k theta) phi_i, phi_j)_K.

    theta holds scalar-field coefficients. Raises NondegeneracyError when
    1 + 2 k theta is not strictly positive at every quadrature point of the
    nonlinear rule.
    """
    lay = tables.layout
    ne, d = lay.n_elements, lay.dim_scalar
    theta = np.asarray(theta, dtype=float)
    if theta.shape != (lay.n_scalar,):
        raise AssemblyError(
            f"coefficient vector has shape {theta.shape}, expected ({lay.n_scalar},)")
    phi = tables.phi_nl
    theta_q = theta.reshape(ne, d) @ phi.T  # (ne, nq)
    coeff = 1.0 + 2.0 * k * theta_q
    if np.min(coeff) <= 0.0:
        bad = np.flatnonzero(np.min(coeff, axis=1) <= 0.0)
        raise NondegeneracyError(
            f"1 + 2k*theta nonpositive (min {np.min(coeff):.6g}) on elements "
            f"{bad[:8].tolist()}",
            elements=bad,
        )
    weights = coeff * (tables.nonlinear_rule.weights[None, :]
                       * tables.detj[:, None])
    return np.matmul((weights[:, :, None] * phi[None, :, :]).transpose(0, 2, 1),
                     phi)


def assemble_load(f, t: float, tables: ElementTables) -> np.ndarray:
    """Load vector (f(., t), phi_i)_K for a vectorized callable f(x, y, t)."""
    xq = tables.xq
    vals = f(xq[..., 0], xq[..., 1], t)
    weights = (tables.cell_rule.weights[None, :] * tables.detj[:, None]) * vals
    return (weights @ tables.phi).ravel()


def assemble_penalty_load(g, tables: ElementTables, tau: np.ndarray,
                          quad_order: int | None = None) -> np.ndarray:
    """Boundary moments sum_F tau_F (g, phi_i)_F of a callable g(x, y)."""
    lay = tables.layout
    rule = tables.facet_rule if quad_order is None else segment_quadrature(quad_order)
    out = np.zeros(lay.n_scalar)
    topo, mesh = tables.topo, tables.mesh
    for t in range(lay.n_elements):
        for lf in range(3):
            if tau[t, lf] == 0.0:
                continue
            fid = topo.elem_facets[t, lf]
            lo, hi = topo.facets[fid]
            plo, phi_v = mesh.vertices[lo], mesh.vertices[hi]
            pts = plo[None, :] + rule.points[:, None] * (phi_v - plo)[None, :]
            trace = _trace_at(tables, t, lf, topo.elem_facet_forward[t, lf],
                              rule.points)
            gv = g(pts[:, 0], pts[:, 1])
            out[lay.scalar_slice(t)] += tau[t, lf] * topo.facet_lengths[fid] * (
                trace.T @ (rule.weights * gv))
    return out


def _trace_at(tables: ElementTables, t: int, lf: int, forward: bool,
              s: np.ndarray) -> np.ndarray:
    la, lb = _LOCAL_FACETS[lf]
    if forward:
        ref = _REF_VERTS[la] + s[:, None] * (_REF_VERTS[lb] - _REF_VERTS[la])
    else:
        ref = _REF_VERTS[lb] + s[:, None] * (_REF_VERTS[la] - _REF_VERTS[lb])
    return tables.basis.eval_values(ref)


def hdg_project(psi, v, ops: AssembledOperators,
                quad_order: int | None = None):
    """Elementwise HDG projection of a smooth pair (psi, v).

    Returns coefficients (scalar, vector, facet-trace) where the scalar and
    vector parts match (psi, v) against all polynomials one degree lower and
    the projected normal flux v.n - tau psi matches facet-wise against the
    full trace space. The facet part is the plain facet L2 projection of psi
    on interior facets.
    """
    lay, tab = ops.layout, ops.tables
    p, d, pf = lay.degree, lay.dim_scalar, lay.dim_facet
    d_lo = scalar_space_dim(p - 1) if p > 0 else 0
    cell_rule = (tab.cell_rule if quad_order is None
                 else triangle_quadrature(quad_order))
    facet_rule = (tab.facet_rule if quad_order is None
                  else segment_quadrature(min(quad_order, 60)))
    phi = tab.basis.eval_values(cell_rule.points)
    mu = tab.facet_basis.eval(facet_rule.points)
    topo, mesh = tab.topo, tab.mesh

    psi_coef = np.zeros(lay.n_scalar)
    v_coef = np.zeros(lay.n_vector)
    lam_coef = np.zeros(lay.n_facet)

    for t in range(lay.n_elements):
        if not np.any(ops.tau[t] > 0.0):
            raise ProjectionError(
                f"element {t} has no positively stabilized facet")
        xq = tab.vert0[t][None, :] + cell_rule.points @ tab.jac[t].T
        psi_q = psi(xq[:, 0], xq[:, 1])
        v_q = np.asarray(v(xq[:, 0], xq[:, 1]))
        wdet = cell_rule.weights * tab.detj[t]
        n_unk = 3 * d
        amat = np.zeros((n_unk, n_unk))
        rhs = np.zeros(n_unk)
        mass = phi.T @ (wdet[:, None] * phi)
        # volume moment rows against the degree p-1 subspace
        for comp in range(2):
            rows = slice(comp * d_lo, (comp + 1) * d_lo)
            amat[rows, comp * d : comp * d + d] = mass[:d_lo]
            rhs[rows] = phi[:, :d_lo].T @ (wdet * v_q[comp])
        amat[2 * d_lo : 3 * d_lo, 2 * d :] = mass[:d_lo]
        rhs[2 * d_lo : 3 * d_lo] = phi[:, :d_lo].T @ (wdet * psi_q)
        # facet flux rows
        row = 3 * d_lo
        for lf in range(3):
            fid = topo.elem_facets[t, lf]
            lo, hi = topo.facets[fid]
            plo, phi_v = mesh.vertices[lo], mesh.vertices[hi]
            pts = plo[None, :] + facet_rule.points[:, None] * (phi_v - plo)[None, :]
            trace = _trace_at(tab, t, lf, topo.elem_facet_forward[t, lf],
                              facet_rule.points)
            wlen = facet_rule.weights * topo.facet_lengths[fid]
            cmat = trace.T @ (wlen[:, None] * mu)  # (d, pf)
            nvec = topo.normals[t, lf]
            tau = ops.tau[t, lf]
            psi_f = psi(pts[:, 0], pts[:, 1])
            v_f = np.asarray(v(pts[:, 0], pts[:, 1]))
            flux = v_f[0] * nvec[0] + v_f[1] * nvec[1] - tau * psi_f
            block = slice(row, row + pf)
            amat[block, 0:d] = nvec[0] * cmat.T
            amat[block, d : 2 * d] = nvec[1] * cmat.T
            amat[block, 2 * d :] = -tau * cmat.T
            rhs[block] = mu.T @ (wlen * flux)
            row += pf
            if topo.is_interior[fid]:
                fi = topo.interior_index[fid]
                lam_coef[lay.facet_slice(fi)] = mu.T @ (
                    facet_rule.weights * psi_f)
        try:
            sol = np.linalg.solve(amat, rhs)
        except np.linalg.LinAlgError as err:
            raise ProjectionError(
                f"singular projection system on element {t}") from err
        v_coef[lay.vector_slice(t)] = sol[: 2 * d]
        psi_coef[lay.scalar_slice(t)] = sol[2 * d :]
    return psi_coef, v_coef, lam_coef
