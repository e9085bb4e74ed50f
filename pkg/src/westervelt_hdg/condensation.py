"""Static condensation of the implicit step onto the facet unknowns.

For a time step dt and Newmark weights (gamma, beta), the corrector solves

    (M + mu Ks) a_psi + mu R a_lam = rhs,      Rt a_psi + A a_lam = 0,

with mu = c^2 dt^2 beta + delta gamma dt, Ks = S + Bt Mv^-1 B (element
blocks), R = F + Bt Mv^-1 E and A = G + Et Mv^-1 E. Eliminating a_psi element
by element leaves one sparse facet system; its matrix and the dt-independent
analog used by the stationary initial-data solves are factorized once.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .operators import AssembledOperators, apply_blocks


class CondensationError(Exception):
    """Invalid parameters or unusable condensed operators."""


class _EmptySolver:
    """Stand-in factorization for meshes without interior facets."""

    def solve(self, b):
        return np.zeros_like(b)


def _factorize(matrix: sp.spmatrix):
    if matrix.shape[0] == 0:
        return _EmptySolver()
    return spla.splu(matrix.tocsc())


@dataclass
class CondensedOperators:
    """Facet Schur complements and element elimination data for fixed
    (c, delta, dt, gamma, beta)."""

    c: float
    delta: float
    dt: float
    gamma: float
    beta: float
    mu: float
    stiffness: np.ndarray  # (ne, d, d) condensed element stiffness Ks
    shifted_inv: np.ndarray  # (ne, d, d) inverse of M + mu Ks
    coupling: sp.csr_matrix  # (n_scalar, n_facet) R
    facet_gram: sp.csr_matrix  # (n_facet, n_facet) A
    facet_schur: sp.csr_matrix  # (n_facet, n_facet) A - mu Rt (M + mu Ks)^-1 R
    vec_elim: sp.csr_matrix  # X with Mv X = E - B Y
    sca_elim: sp.csr_matrix  # Y = (M + mu Ks)^-1 mu R
    static_schur: sp.csr_matrix | None  # dt-independent analog (needs Ks^-1)
    static_vec_elim: sp.csr_matrix | None
    static_sca_elim: sp.csr_matrix | None
    stiffness_inv: np.ndarray | None
    static_error: str | None = None
    facet_solver: object = field(default=None, repr=False)
    gram_solver: object = field(default=None, repr=False)
    static_solver: object = field(default=None, repr=False)

    def check_params(self, c: float, delta: float, dt: float,
                     gamma: float, beta: float) -> None:
        mine = (self.c, self.delta, self.dt, self.gamma, self.beta)
        theirs = (c, delta, dt, gamma, beta)
        if mine != theirs:
            raise CondensationError(
                f"condensed operators were built for (c, delta, dt, gamma, "
                f"beta) = {mine}, refusing use with {theirs}"
            )

    def require_static(self) -> None:
        if self.static_schur is None:
            raise CondensationError(
                f"stationary elimination path unavailable: {self.static_error}")


def build_condensed(ops: AssembledOperators, c: float, delta: float,
                    dt: float, gamma: float, beta: float) -> CondensedOperators:
    if c <= 0.0:
        raise CondensationError(f"wave speed must be positive, got {c}")
    if delta < 0.0:
        raise CondensationError(f"damping parameter must be >= 0, got {delta}")
    if dt <= 0.0:
        raise CondensationError(f"time step must be positive, got {dt}")
    mu = c * c * dt * dt * beta + delta * gamma * dt

    lay = ops.layout
    tab = ops.tables
    ne, d, pf = lay.n_elements, lay.dim_scalar, lay.dim_facet
    nfac = lay.n_facet

    bt_minv = np.matmul(ops.divergence.transpose(0, 2, 1), ops.vector_mass_inv)
    stiffness = ops.boundary_penalty + np.matmul(bt_minv, ops.divergence)
    stiffness = 0.5 * (stiffness + stiffness.transpose(0, 2, 1))
    shifted = ops.scalar_mass + mu * stiffness
    shifted_inv = np.linalg.inv(shifted)

    stiffness_inv = None
    static_error = None
    try:
        np.linalg.cholesky(stiffness)
        stiffness_inv = np.linalg.inv(stiffness)
    except np.linalg.LinAlgError:
        bad = [t for t in range(ne)
               if np.linalg.eigvalsh(stiffness[t]).min() <= 0.0]
        static_error = (
            f"condensed stiffness block singular on elements {bad[:8]}")

    # interior facets per element as (interior index, side) in local order
    elem_ifacets: list[list[tuple[int, int]]] = [[] for _ in range(ne)]
    for fi, sides in enumerate(tab.interior_sides):
        for side, (t, _lf) in enumerate(sides):
            elem_ifacets[t].append((fi, side))

    schur = sp.lil_matrix((nfac, nfac))
    gram = sp.lil_matrix((nfac, nfac))
    static = sp.lil_matrix((nfac, nfac)) if stiffness_inv is not None else None
    coupling = sp.lil_matrix((lay.n_scalar, nfac))
    vec_elim = sp.lil_matrix((lay.n_vector, nfac))
    sca_elim = sp.lil_matrix((lay.n_scalar, nfac))
    static_vec = sp.lil_matrix((lay.n_vector, nfac)) if static is not None else None
    static_sca = sp.lil_matrix((lay.n_scalar, nfac)) if static is not None else None

    for fi in range(lay.n_interior_facets):
        sl = lay.facet_slice(fi)
        schur[sl, sl] = ops.trace_penalty[fi]
        gram[sl, sl] = ops.trace_penalty[fi]
        if static is not None:
            static[sl, sl] = ops.trace_penalty[fi]

    for t in range(ne):
        if not elem_ifacets[t]:
            continue
        cols = np.concatenate([
            np.arange(fi * pf, (fi + 1) * pf) for fi, _ in elem_ifacets[t]])
        e_loc = np.hstack([ops.trace_vector_blocks[fi][side]
                           for fi, side in elem_ifacets[t]])
        f_loc = np.hstack([ops.trace_scalar_blocks[fi][side]
                           for fi, side in elem_ifacets[t]])
        r_loc = f_loc + bt_minv[t] @ e_loc
        y_loc = shifted_inv[t] @ (mu * r_loc)
        x_loc = ops.vector_mass_inv[t] @ (e_loc - ops.divergence[t] @ y_loc)
        contrib = e_loc.T @ x_loc - f_loc.T @ y_loc
        schur[np.ix_(cols, cols)] += contrib
        gram[np.ix_(cols, cols)] += e_loc.T @ ops.vector_mass_inv[t] @ e_loc
        coupling[lay.scalar_slice(t), cols] = r_loc
        sca_elim[lay.scalar_slice(t), cols] = y_loc
        vec_elim[lay.vector_slice(t), cols] = x_loc
        if static is not None:
            ybar = stiffness_inv[t] @ r_loc
            xbar = ops.vector_mass_inv[t] @ (e_loc - ops.divergence[t] @ ybar)
            static[np.ix_(cols, cols)] += e_loc.T @ xbar - f_loc.T @ ybar
            static_sca[lay.scalar_slice(t), cols] = ybar
            static_vec[lay.vector_slice(t), cols] = xbar

    schur = schur.tocsr()
    gram = gram.tocsr()
    coupling = coupling.tocsr()
    cond = CondensedOperators(
        c=c, delta=delta, dt=dt, gamma=gamma, beta=beta, mu=mu,
        stiffness=stiffness,
        shifted_inv=shifted_inv,
        coupling=coupling,
        facet_gram=gram,
        facet_schur=schur,
        vec_elim=vec_elim.tocsr(),
        sca_elim=sca_elim.tocsr(),
        static_schur=None if static is None else static.tocsr(),
        static_vec_elim=None if static_vec is None else static_vec.tocsr(),
        static_sca_elim=None if static_sca is None else static_sca.tocsr(),
        stiffness_inv=stiffness_inv,
        static_error=static_error,
    )
    cond.facet_solver = _factorize(cond.facet_schur)
    cond.gram_solver = _factorize(cond.facet_gram)
    if cond.static_schur is not None:
        cond.static_solver = _factorize(cond.static_schur)
    return cond


def condensed_solve(cond: CondensedOperators,
                    rhs: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Solve the corrector linear system for a scalar-field right side.

    Returns accelerations (scalar, facet) of the coupled system
    (M + mu Ks) a_psi + mu R a_lam = rhs with Rt a_psi + A a_lam = 0.
    """
    z = apply_blocks(cond.shifted_inv, rhs)
    a_lam = cond.facet_solver.solve(-(cond.coupling.T @ z))
    a_psi = apply_blocks(cond.shifted_inv,
                         rhs - cond.mu * (cond.coupling @ a_lam))
    return a_psi, a_lam


def reconstruct_velocity(ops: AssembledOperators, psi: np.ndarray,
                         lam: np.ndarray) -> np.ndarray:
    """Element-wise velocity solve Mv v = -(B psi + E lam)."""
    rhs = apply_blocks(ops.divergence, psi) + ops.trace_vector @ lam
    return -ops.vector_mass_solve(rhs)
