"""Tests for field evaluation, error norms, postprocessing, and energies."""

import numpy as np
import numpy.polynomial.polynomial as npoly
import pytest

import oracles
from westervelt_hdg.mesh import Mesh, compute_facet_topology, generate_structured_mesh
from westervelt_hdg.operators import (
    NondegeneracyError,
    assemble_operators,
    build_layout,
)
from westervelt_hdg.condensation import build_condensed
from westervelt_hdg.newmark import (
    NewmarkConfig,
    ProblemDefinition,
    State,
    advance_step,
    compute_initial_acceleration,
    consistent_traces,
)
from westervelt_hdg.analysis import (
    DiscreteScalarField,
    DiscreteVectorField,
    convergence_rates,
    energy,
    l2_error,
    postprocess,
    scalar_field,
    vector_field,
)


def build(msh, degree, *, c=1.0, delta=0.0, dt=0.01, gamma=0.5, beta=0.25):
    topo = compute_facet_topology(msh)
    lay = build_layout(msh, topo, degree)
    ops = assemble_operators(msh, topo, lay)
    cond = build_condensed(ops, c, delta, dt, gamma, beta)
    return topo, lay, ops, cond


def unit_right_triangle():
    return Mesh(np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]]),
                np.array([[0, 1, 2]]))


def rand_poly2(rng, deg):
    c = rng.standard_normal((deg + 1, deg + 1))
    for i in range(deg + 1):
        for j in range(deg + 1):
            if i + j > deg:
                c[i, j] = 0.0
    return c


def polyder2d(c, axis):
    out = np.zeros_like(c)
    for k in range(1, c.shape[axis]):
        if axis == 0:
            out[k - 1, :] = k * c[k, :]
        else:
            out[:, k - 1] = k * c[:, k]
    return out


class TestFields:
    def test_eval_reference_reproduces_projected_polynomial(self):
        msh = oracles.perturbed_mesh(2, seed=1)
        coeffs = oracles.l2_project_scalar(msh, 2, lambda x, y: x * x - y)
        fld = DiscreteScalarField(msh, 2, coeffs)
        pts = np.array([[0.2, 0.3], [0.0, 0.0], [0.5, 0.25]])
        vals = fld.eval_reference(pts)
        vert0, jac = msh.vertices[msh.triangles][:, 0], None
        tri = msh.vertices[msh.triangles]
        jac = np.stack([tri[:, 1] - tri[:, 0], tri[:, 2] - tri[:, 0]], axis=2)
        xq = vert0[:, None, :] + np.einsum("eab,qb->eqa", jac, pts)
        want = xq[..., 0] ** 2 - xq[..., 1]
        assert np.max(np.abs(vals - want)) <= 1e-12

    def test_eval_at_physical_points(self):
        msh = oracles.perturbed_mesh(3, seed=4)
        coeffs = oracles.l2_project_scalar(msh, 1, lambda x, y: 2.0 * x - y)
        fld = DiscreteScalarField(msh, 1, coeffs)
        rng = np.random.default_rng(8)
        pts = rng.uniform(0.05, 0.95, size=(20, 2))
        vals = fld.eval_at(pts)
        assert np.max(np.abs(vals - (2.0 * pts[:, 0] - pts[:, 1]))) <= 1e-11

    def test_eval_at_rejects_outside_points(self):
        msh = generate_structured_mesh(1)
        fld = DiscreteScalarField(msh, 0, np.zeros(2))
        with pytest.raises(ValueError, match="outside"):
            fld.eval_at(np.array([[2.0, 2.0]]))

    def test_coefficient_length_validated(self):
        msh = generate_structured_mesh(1)
        with pytest.raises(ValueError, match="shape"):
            DiscreteScalarField(msh, 1, np.zeros(5))
        with pytest.raises(ValueError, match="shape"):
            DiscreteVectorField(msh, 1, np.zeros(11))

    def test_vector_eval_reference(self):
        msh = generate_structured_mesh(2)
        coeffs = oracles.l2_project_vector(
            msh, 1, lambda x, y: (x + y, x - y))
        fld = DiscreteVectorField(msh, 1, coeffs)
        pts = np.array([[0.25, 0.25], [0.1, 0.6]])
        vals = fld.eval_reference(pts)
        assert vals.shape == (msh.n_triangles, 2, 2)
        tri = msh.vertices[msh.triangles]
        jac = np.stack([tri[:, 1] - tri[:, 0], tri[:, 2] - tri[:, 0]], axis=2)
        xq = tri[:, 0][:, None, :] + np.einsum("eab,qb->eqa", jac, pts)
        assert np.max(np.abs(vals[..., 0]
                             - (xq[..., 0] + xq[..., 1]))) <= 1e-12
        assert np.max(np.abs(vals[..., 1]
                             - (xq[..., 0] - xq[..., 1]))) <= 1e-12

    def test_field_constructors_from_operators(self):
        msh = generate_structured_mesh(1)
        topo, lay, ops, cond = build(msh, 1)
        s = scalar_field(ops, np.zeros(lay.n_scalar))
        v = vector_field(ops, np.zeros(lay.n_vector))
        assert s.degree == 1 and v.degree == 1


class TestL2Error:
    def test_scalar_closed_form(self):
        # zero field against t x at t=2: || 2x ||_{L2} = 2 / sqrt(3)
        msh = generate_structured_mesh(2)
        fld = DiscreteScalarField(msh, 1, np.zeros(8 * 3))
        err = l2_error(fld, lambda x, y, t: t * x, t=2.0)
        assert abs(err - 2.0 / np.sqrt(3.0)) <= 1e-13

    def test_vector_closed_form(self):
        # zero field against (y, x): squared norm 2/3
        msh = generate_structured_mesh(2)
        fld = DiscreteVectorField(msh, 1, np.zeros(2 * 8 * 3))
        err = l2_error(fld, lambda x, y, t: (y, x))
        assert abs(err - np.sqrt(2.0 / 3.0)) <= 1e-13

    def test_projected_polynomial_has_zero_error(self):
        msh = oracles.perturbed_mesh(2, seed=2)
        coeffs = oracles.l2_project_scalar(msh, 2,
                                           lambda x, y: x * y + 0.5 * y * y)
        fld = DiscreteScalarField(msh, 2, coeffs)
        err = l2_error(fld, lambda x, y, t: x * y + 0.5 * y * y)
        assert err <= 1e-13

    def test_trigonometric_norm_high_order(self):
        # || sin(pi x) sin(pi y) || = 1/2 on the unit square
        msh = generate_structured_mesh(4)
        fld = DiscreteScalarField(msh, 1, np.zeros(32 * 3))
        err = l2_error(fld, lambda x, y, t: np.sin(np.pi * x)
                       * np.sin(np.pi * y), quad_order=20)
        assert abs(err - 0.5) <= 1e-10


class TestPostprocess:
    def test_constant_gradient_closed_form(self):
        # v = (2, 3) and element mean 5 recover 2x + 3y + 10/3
        msh = unit_right_triangle()
        topo, lay, ops, cond = build(msh, 1)
        psi = np.zeros(lay.n_scalar)
        psi[0] = 5.0 / np.sqrt(2.0)  # mode 0 has constant value sqrt(2)
        v = np.zeros(lay.n_vector)
        v[0] = 2.0 / np.sqrt(2.0)
        v[lay.dim_scalar] = 3.0 / np.sqrt(2.0)
        star = postprocess(psi, v, ops)
        assert star.degree == 2
        pts = np.array([[0.0, 0.0], [0.2, 0.3], [0.5, 0.5], [1.0, 0.0]])
        got = star.eval_at(pts)
        want = 2.0 * pts[:, 0] + 3.0 * pts[:, 1] + 10.0 / 3.0
        assert np.max(np.abs(got - want)) <= 1e-12

    def test_lowest_order_recovers_linears(self):
        msh = generate_structured_mesh(2)
        topo, lay, ops, cond = build(msh, 0)
        psi = oracles.l2_project_scalar(msh, 0, lambda x, y: x - 2.0 * y)
        v = oracles.l2_project_vector(
            msh, 0, lambda x, y: (np.ones_like(x), -2.0 * np.ones_like(x)))
        star = postprocess(psi, v, ops)
        err = l2_error(star, lambda x, y, t: x - 2.0 * y)
        assert err <= 1e-13

    @pytest.mark.parametrize("degree", [1, 2])
    def test_exact_for_enriched_polynomials(self, degree):
        rng = np.random.default_rng(degree)
        msh = oracles.perturbed_mesh(2, seed=degree)
        topo, lay, ops, cond = build(msh, degree)
        c = rand_poly2(rng, degree + 1)
        cx, cy = polyder2d(c, 0), polyder2d(c, 1)

        def psi(x, y):
            return npoly.polyval2d(x, y, c)

        def grad(x, y):
            return (npoly.polyval2d(x, y, cx), npoly.polyval2d(x, y, cy))

        psi_h = oracles.l2_project_scalar(msh, degree, psi)
        v_h = oracles.l2_project_vector(msh, degree, grad)
        star = postprocess(psi_h, v_h, ops)
        err = l2_error(star, lambda x, y, t: psi(x, y))
        assert err <= 1e-11

    def test_preserves_element_means(self):
        rng = np.random.default_rng(23)
        msh = oracles.perturbed_mesh(2, seed=5)
        topo, lay, ops, cond = build(msh, 1)
        psi = rng.standard_normal(lay.n_scalar)
        v = rng.standard_normal(lay.n_vector)
        star = postprocess(psi, v, ops)
        lo = psi.reshape(lay.n_elements, lay.dim_scalar)[:, 0]
        hi = star.coeffs.reshape(lay.n_elements, -1)[:, 0]
        assert np.max(np.abs(lo - hi)) == 0.0


class TestEnergy:
    def zero_state(self, lay):
        return State(t=0.0, psi=np.zeros(lay.n_scalar),
                     dpsi=np.zeros(lay.n_scalar),
                     ddpsi=np.zeros(lay.n_scalar),
                     lam=np.zeros(lay.n_facet), dlam=np.zeros(lay.n_facet),
                     ddlam=np.zeros(lay.n_facet))

    def test_zero_state_has_zero_energy(self):
        msh = generate_structured_mesh(2)
        topo, lay, ops, cond = build(msh, 1)
        e0, e1 = energy(self.zero_state(lay), ops, 0.5, 1.0)
        assert e0 == 0.0 and e1 == 0.0

    def test_constant_velocity_closed_form(self):
        # dpsi = 1 everywhere, k = 1/2: e0 = (1 + 2k)/2 * |Omega| = 1
        msh = generate_structured_mesh(2)
        topo, lay, ops, cond = build(msh, 1)
        state = self.zero_state(lay)
        state.dpsi = state.dpsi.reshape(lay.n_elements, -1)
        state.dpsi[:, 0] = 1.0 / np.sqrt(2.0)
        state.dpsi = state.dpsi.reshape(-1)
        e0, e1 = energy(state, ops, 0.5, 1.0)
        assert abs(e0 - 1.0) <= 1e-13
        assert e1 >= 0.0 and np.isfinite(e1)

    def test_degenerate_weight_rejected(self):
        msh = generate_structured_mesh(2)
        topo, lay, ops, cond = build(msh, 1)
        state = self.zero_state(lay)
        state.dpsi = state.dpsi.reshape(lay.n_elements, -1)
        state.dpsi[:, 0] = -2.0 / np.sqrt(2.0)
        state.dpsi = state.dpsi.reshape(-1)
        with pytest.raises(NondegeneracyError, match="nonpositive"):
            energy(state, ops, 0.5, 1.0)

    def test_matches_dense_quadratic_form_linear_case(self):
        rng = np.random.default_rng(3)
        msh = oracles.perturbed_mesh(2, seed=9)
        c = 2.0
        topo, lay, ops, cond = build(msh, 1, c=c)
        state = self.zero_state(lay)
        state.psi = rng.standard_normal(lay.n_scalar)
        state.dpsi = rng.standard_normal(lay.n_scalar)
        state.ddpsi = rng.standard_normal(lay.n_scalar)
        state.lam = rng.standard_normal(lay.n_facet)
        state.dlam = rng.standard_normal(lay.n_facet)
        seven = oracles.dense_seven(msh, topo, 1)
        dc = oracles.dense_condensed(seven, 1.0)

        def store(p, l):
            return (p @ dc["Ks"] @ p + 2.0 * p @ dc["R"] @ l
                    + l @ dc["A"] @ l)

        want0 = 0.5 * state.dpsi @ seven["M"] @ state.dpsi \
            + 0.5 * c * c * store(state.psi, state.lam)
        want1 = 0.5 * state.ddpsi @ seven["M"] @ state.ddpsi \
            + 0.5 * c * c * store(state.dpsi, state.dlam)
        e0, e1 = energy(state, ops, 0.0, c)
        assert abs(e0 - want0) <= 1e-12 * max(abs(want0), 1.0)
        assert abs(e1 - want1) <= 1e-12 * max(abs(want1), 1.0)

    def test_nonlinear_kinetic_correction(self):
        # e0(k) - e0(0) = k * integral of (d psi)^3
        rng = np.random.default_rng(13)
        msh = generate_structured_mesh(2)
        topo, lay, ops, cond = build(msh, 2)
        state = self.zero_state(lay)
        state.dpsi = 0.05 * rng.standard_normal(lay.n_scalar)
        state.ddpsi = 0.05 * rng.standard_normal(lay.n_scalar)
        k = 0.4
        e0k, e1k = energy(state, ops, k, 1.0)
        e00, e10 = energy(state, ops, 0.0, 1.0)
        pts, wts = oracles.oracle_triangle_rule(12)
        phi = oracles.basis_values(2, pts)
        cube = quad_mixed = 0.0
        for t in range(msh.n_triangles):
            _, _, detj, _ = oracles._element_geometry(msh, t)
            dvals = phi @ state.dpsi.reshape(lay.n_elements, -1)[t]
            avals = phi @ state.ddpsi.reshape(lay.n_elements, -1)[t]
            cube += detj * np.sum(wts * dvals ** 3)
            quad_mixed += detj * np.sum(wts * dvals * avals ** 2)
        assert abs((e0k - e00) - k * cube) <= 1e-13
        assert abs((e1k - e10) - k * quad_mixed) <= 1e-13

    def test_energy_conserved_without_damping_or_forcing(self):
        rng = np.random.default_rng(17)
        msh = generate_structured_mesh(2)
        topo, lay, ops, cond = build(msh, 1, c=1.0, delta=0.0, dt=0.01)
        cfg = NewmarkConfig(dt=0.01, gamma=0.5, beta=0.25)
        prob = ProblemDefinition(c=1.0, k=0.0, delta=0.0)
        psi = 0.1 * rng.standard_normal(lay.n_scalar)
        dpsi = 0.1 * rng.standard_normal(lay.n_scalar)
        state = State(t=0.0, psi=psi, dpsi=dpsi,
                      ddpsi=np.zeros(lay.n_scalar),
                      lam=consistent_traces(cond, psi),
                      dlam=consistent_traces(cond, dpsi),
                      ddlam=np.zeros(lay.n_facet))
        compute_initial_acceleration(state, prob, ops, cond)
        e_ref, _ = energy(state, ops, 0.0, 1.0)
        assert e_ref > 0.0
        for step in range(20):
            state, _ = advance_step(state, cfg, prob, ops, cond,
                                    step_index=step)
            e0, _ = energy(state, ops, 0.0, 1.0)
            assert abs(e0 - e_ref) <= 1e-10 * e_ref


class TestConvergenceRates:
    def test_closed_form_orders(self):
        rates = convergence_rates([0.1, 0.025, 0.00625], [0.4, 0.2, 0.1])
        assert np.allclose(rates, [2.0, 2.0], rtol=0.0, atol=1e-13)

    def test_zero_errors_marked_nan(self):
        rates = convergence_rates([0.1, 0.0], [0.2, 0.1])
        assert len(rates) == 1 and np.isnan(rates[0])

    def test_validation(self):
        with pytest.raises(ValueError, match="matching"):
            convergence_rates([1.0, 0.5], [0.2])
        with pytest.raises(ValueError, match="decreasing"):
            convergence_rates([1.0, 0.5], [0.1, 0.2])
        with pytest.raises(ValueError, match="decreasing"):
            convergence_rates([1.0, 0.5], [0.2, -0.1])
