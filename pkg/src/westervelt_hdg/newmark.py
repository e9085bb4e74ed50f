"""Predictor-corrector Newmark integration of the condensed HDG system.

Semidiscrete system in coefficient vectors (scalar Psi, facet Lam, with the
velocity field eliminated element-wise):

    N(dPsi) ddPsi + c^2 Ks tld(Psi) + c^2 R tld(Lam) = load(t)
    Rt tld(Psi) + A tld(Lam) = 0,        tld(X) = X + (delta/c^2) dX

Each step predicts (Psi, dPsi, Lam, dLam), then fixed-point-iterates the
implicit Newmark equations, lagging the nonlinear mass: every pass solves one
condensed linear system whose matrix is frozen in the CondensedOperators.
Convergence is judged by the relative Euclidean change of the new-time
solution iterate.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import Callable, Mapping

import numpy as np

from .condensation import (
    CondensedOperators,
    build_condensed,
    condensed_solve,
)
from .mesh import Mesh, compute_facet_topology
from .operators import (
    AssembledOperators,
    NondegeneracyError,
    apply_blocks,
    assemble_load,
    assemble_nonlinear_mass,
    assemble_operators,
    build_layout,
)


class InitializationError(Exception):
    """Discrete initial data could not be computed."""


class NonconvergenceError(Exception):
    """Corrector failed to reach tolerance within the iteration budget."""

    def __init__(self, message, step=None, iterations=None, last_change=None):
        super().__init__(message)
        self.step = step
        self.iterations = iterations
        self.last_change = last_change


@dataclass(frozen=True)
class NewmarkConfig:
    dt: float
    gamma: float = 0.5
    beta: float = 0.25
    tol: float = 1.0e-10
    max_iterations: int = 100

    def __post_init__(self):
        if self.dt <= 0.0:
            raise ValueError(f"time step must be positive, got {self.dt}")
        if not 0.0 <= self.gamma <= 1.0:
            raise ValueError(f"gamma must lie in [0, 1], got {self.gamma}")
        if not 0.0 <= self.beta <= 0.5:
            raise ValueError(f"beta must lie in [0, 1/2], got {self.beta}")
        if self.tol <= 0.0:
            raise ValueError(f"tolerance must be positive, got {self.tol}")
        if self.max_iterations < 1:
            raise ValueError(
                f"iteration budget must be >= 1, got {self.max_iterations}")


@dataclass(frozen=True)
class ProblemDefinition:
    """Coefficients, initial data and forcing of one wave problem.

    Initial data enter through the fields psi0/psi1 and their Laplacians
    (vectorized callables of (x, y)); None means identically zero. The
    forcing is a vectorized callable of (x, y, t) or None.
    """

    c: float
    k: float = 0.0
    delta: float = 0.0
    final_time: float = 1.0
    psi0: Callable | None = None
    lap_psi0: Callable | None = None
    psi1: Callable | None = None
    lap_psi1: Callable | None = None
    forcing: Callable | None = None
    exact_psi: Callable | None = None
    exact_dpsi: Callable | None = None
    exact_v: Callable | None = None
    delta_max: float = float("inf")

    def __post_init__(self):
        if self.c <= 0.0:
            raise ValueError(f"wave speed must be positive, got {self.c}")
        if not 0.0 <= self.delta < self.delta_max:
            raise ValueError(
                f"damping {self.delta} outside [0, {self.delta_max})")
        if self.final_time <= 0.0:
            raise ValueError(f"final time must be positive, got {self.final_time}")


@dataclass
class State:
    """Coefficient vectors of all time levels at time t."""

    t: float
    psi: np.ndarray
    dpsi: np.ndarray
    ddpsi: np.ndarray
    lam: np.ndarray
    dlam: np.ndarray
    ddlam: np.ndarray

    def copy(self) -> "State":
        return State(self.t, self.psi.copy(), self.dpsi.copy(),
                     self.ddpsi.copy(), self.lam.copy(), self.dlam.copy(),
                     self.ddlam.copy())


@dataclass(frozen=True)
class Prediction:
    psi_hat: np.ndarray
    dpsi_hat: np.ndarray
    lam_hat: np.ndarray
    dlam_hat: np.ndarray
    psi_tilde: np.ndarray
    lam_tilde: np.ndarray


def predictor(state: State, cfg: NewmarkConfig, delta: float,
              c: float) -> Prediction:
    """Newmark predictions of values and velocities at the next time level."""
    dt = cfg.dt
    half = 0.5 * dt * dt * (1.0 - 2.0 * cfg.beta)
    psi_hat = state.psi + dt * state.dpsi + half * state.ddpsi
    lam_hat = state.lam + dt * state.dlam + half * state.ddlam
    dpsi_hat = state.dpsi + (1.0 - cfg.gamma) * dt * state.ddpsi
    dlam_hat = state.dlam + (1.0 - cfg.gamma) * dt * state.ddlam
    w = delta / (c * c)
    return Prediction(
        psi_hat=psi_hat, dpsi_hat=dpsi_hat, lam_hat=lam_hat,
        dlam_hat=dlam_hat,
        psi_tilde=psi_hat + w * dpsi_hat,
        lam_tilde=lam_hat + w * dlam_hat,
    )


def consistent_traces(cond: CondensedOperators, psi: np.ndarray) -> np.ndarray:
    """Facet values satisfying the trace constraint for given scalar data."""
    return cond.gram_solver.solve(-(cond.coupling.T @ psi))


def compute_initial_state(prob: ProblemDefinition, ops: AssembledOperators,
                          cond: CondensedOperators) -> State:
    """Stationary HDG solves projecting the two initial data fields.

    Each field is obtained from the mixed system driven by minus its
    Laplacian, condensed through the dt-independent facet Schur complement.
    Accelerations are left at zero; see compute_initial_acceleration.
    """
    lay = ops.layout
    levels = []
    for f, lap in ((prob.psi0, prob.lap_psi0), (prob.psi1, prob.lap_psi1)):
        if f is None:
            levels.append((np.zeros(lay.n_scalar), np.zeros(lay.n_facet)))
            continue
        if lap is None:
            raise InitializationError(
                "initial datum given without its Laplacian")
        cond.require_static()
        source = assemble_load(lambda x, y, t: -lap(x, y), 0.0, ops.tables)
        lam = cond.static_solver.solve(-(cond.static_sca_elim.T @ source))
        psi = apply_blocks(cond.stiffness_inv,
                           source - cond.coupling @ lam)
        levels.append((psi, lam))
    (psi0, lam0), (psi1, lam1) = levels
    return State(
        t=0.0, psi=psi0, dpsi=psi1, ddpsi=np.zeros(lay.n_scalar),
        lam=lam0, dlam=lam1, ddlam=np.zeros(lay.n_facet),
    )


def compute_initial_acceleration(state: State, prob: ProblemDefinition,
                                 ops: AssembledOperators,
                                 cond: CondensedOperators,
                                 include_forcing: bool = True) -> State:
    """Fill consistent initial accelerations into the state (in place).

    Solves the nonlinear-mass system driven by the stiffness residual of the
    initial data; include_forcing=False drops the t=0 load term (reproducing
    the plain stiffness-only variant of the initialization).
    """
    cond.check_params(prob.c, prob.delta, cond.dt, cond.gamma, cond.beta)
    c2 = prob.c * prob.c
    w = prob.delta / c2
    psi_t = state.psi + w * state.dpsi
    lam_t = state.lam + w * state.dlam
    rhs = -c2 * (apply_blocks(cond.stiffness, psi_t) + cond.coupling @ lam_t)
    if include_forcing and prob.forcing is not None:
        rhs = rhs + assemble_load(prob.forcing, state.t, ops.tables)
    nmass = assemble_nonlinear_mass(state.dpsi, prob.k, ops.tables)
    lay = ops.layout
    state.ddpsi = np.linalg.solve(
        nmass, rhs.reshape(lay.n_elements, lay.dim_scalar, 1)).reshape(-1)
    state.ddlam = consistent_traces(cond, state.ddpsi)
    return state


def stiffness_load(pred: Prediction, load_next: np.ndarray, c: float,
                   cond: CondensedOperators) -> np.ndarray:
    """Corrector load: forcing minus stiffness applied to the predictions."""
    c2 = c * c
    return load_next - c2 * (apply_blocks(cond.stiffness, pred.psi_tilde)
                             + cond.coupling @ pred.lam_tilde)


def corrector_step(pred: Prediction, ddpsi: np.ndarray, ddlam: np.ndarray,
                   dpsi_iter: np.ndarray, ln: np.ndarray,
                   cfg: NewmarkConfig, prob: ProblemDefinition,
                   ops: AssembledOperators, cond: CondensedOperators):
    """One fixed-point pass of the implicit Newmark equations.

    Lags the nonlinear mass at the current velocity iterate and solves the
    condensed linear system; ln is the prediction-adjusted load from
    stiffness_load. Returns the next (ddpsi, ddlam, dpsi) iterates.
    """
    nmass = assemble_nonlinear_mass(dpsi_iter, prob.k, ops.tables)
    rhs = ops.scalar_mass_apply(ddpsi) - apply_blocks(nmass, ddpsi) + ln
    ddpsi_new, ddlam_new = condensed_solve(cond, rhs)
    dpsi_new = pred.dpsi_hat + cfg.gamma * cfg.dt * ddpsi_new
    return ddpsi_new, ddlam_new, dpsi_new


def _change_metric(cfg: NewmarkConfig, pred: Prediction, ddpsi_old,
                   ddpsi_new) -> float:
    """Relative change of the monitored iterate (solution, velocity, or
    acceleration depending on which Newmark weights are active)."""
    dt = cfg.dt
    if cfg.beta > 0.0:
        scale = cfg.beta * dt * dt
        ref = pred.psi_hat + scale * ddpsi_new
    elif cfg.gamma > 0.0:
        scale = cfg.gamma * dt
        ref = pred.dpsi_hat + scale * ddpsi_new
    else:
        scale = 1.0
        ref = ddpsi_new
    num = scale * float(np.linalg.norm(ddpsi_new - ddpsi_old))
    den = float(np.linalg.norm(ref))
    return num / den if den > 0.0 else num


def advance_step(state: State, cfg: NewmarkConfig, prob: ProblemDefinition,
                 ops: AssembledOperators, cond: CondensedOperators,
                 step_index: int = 0) -> tuple[State, int]:
    """Advance one time step; returns the new state and the corrector count."""
    cond.check_params(prob.c, prob.delta, cfg.dt, cfg.gamma, cfg.beta)
    pred = predictor(state, cfg, prob.delta, prob.c)
    t_next = state.t + cfg.dt
    if prob.forcing is not None:
        load_next = assemble_load(prob.forcing, t_next, ops.tables)
    else:
        load_next = np.zeros(ops.layout.n_scalar)
    ln = stiffness_load(pred, load_next, prob.c, cond)
    ddpsi = state.ddpsi
    ddlam = state.ddlam
    dpsi_iter = pred.dpsi_hat + cfg.gamma * cfg.dt * ddpsi
    change = np.inf
    converged = False
    iterations = 0
    for s in range(1, cfg.max_iterations + 1):
        try:
            ddpsi_new, ddlam_new, dpsi_new = corrector_step(
                pred, ddpsi, ddlam, dpsi_iter, ln, cfg, prob, ops, cond)
        except NondegeneracyError as err:
            raise NondegeneracyError(
                f"step {step_index}, corrector iteration {s}: {err}",
                elements=err.elements,
            ) from err
        change = _change_metric(cfg, pred, ddpsi, ddpsi_new)
        ddpsi, ddlam, dpsi_iter = ddpsi_new, ddlam_new, dpsi_new
        iterations = s
        if change < cfg.tol:
            converged = True
            break
    if not converged:
        raise NonconvergenceError(
            f"corrector did not converge within {cfg.max_iterations} "
            f"iterations at step {step_index} (last relative change "
            f"{change:.3e})",
            step=step_index, iterations=iterations, last_change=change,
        )
    dt = cfg.dt
    new = State(
        t=t_next,
        psi=pred.psi_hat + cfg.beta * dt * dt * ddpsi,
        dpsi=pred.dpsi_hat + cfg.gamma * dt * ddpsi,
        ddpsi=ddpsi,
        lam=pred.lam_hat + cfg.beta * dt * dt * ddlam,
        dlam=pred.dlam_hat + cfg.gamma * dt * ddlam,
        ddlam=ddlam,
    )
    return new, iterations


@dataclass
class RunResult:
    state: State
    ops: AssembledOperators
    cond: CondensedOperators
    n_steps: int
    iterations: list[int] = field(default_factory=list)
    observations: dict = field(default_factory=dict)

    @property
    def mean_iterations(self) -> float:
        return float(np.mean(self.iterations)) if self.iterations else 0.0


def number_of_steps(final_time: float, dt: float) -> int:
    """Round final_time/dt to the nearest step count, warning when inexact."""
    ratio = final_time / dt
    n = int(round(ratio))
    if n < 1 or abs(ratio - n) > 1.0e-9 * max(1.0, abs(ratio)):
        n = max(1, n)
        warnings.warn(
            f"final time {final_time} is not an integer multiple of "
            f"dt {dt}; running {n} steps to t = {n * dt:g}",
            stacklevel=2,
        )
    return n


def run(prob: ProblemDefinition, mesh: Mesh, cfg: NewmarkConfig,
        observers: Mapping[str, Callable[[State], object]] | None = None,
        *, degree: int, tau_bar: float = 1.0, tau_mode: str = "single_facet",
        include_forcing_in_initial_acceleration: bool = True) -> RunResult:
    """Assemble, initialize and march the scheme to the final time.

    Observers are read-only callables of the state, sampled at t=0 and after
    every step; their outputs are collected per name in the result.
    """
    topo = compute_facet_topology(mesh)
    layout = build_layout(mesh, topo, degree)
    ops = assemble_operators(mesh, topo, layout, tau_bar=tau_bar,
                             tau_mode=tau_mode)
    cond = build_condensed(ops, prob.c, prob.delta, cfg.dt, cfg.gamma,
                           cfg.beta)
    state = compute_initial_state(prob, ops, cond)
    compute_initial_acceleration(
        state, prob, ops, cond,
        include_forcing=include_forcing_in_initial_acceleration)
    n_steps = number_of_steps(prob.final_time, cfg.dt)
    result = RunResult(state=state, ops=ops, cond=cond, n_steps=n_steps,
                       observations={name: [] for name in (observers or {})})
    for name, fn in (observers or {}).items():
        result.observations[name].append(fn(state))
    for step in range(n_steps):
        state, iters = advance_step(state, cfg, prob, ops, cond,
                                    step_index=step)
        result.iterations.append(iters)
        for name, fn in (observers or {}).items():
            result.observations[name].append(fn(state))
    result.state = state
    return result
