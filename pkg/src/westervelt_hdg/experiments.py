"""Experiment recipes: mesh refinement, damping sweep, wavefront steepening.

All tabular output uses 17 significant digits so that re-parsing the files
reproduces the binary doubles exactly and repeated runs are byte-identical.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .analysis import (
    DiscreteScalarField,
    convergence_rates,
    energy,
    l2_error,
    postprocess,
    scalar_field,
    vector_field,
)
from .condensation import reconstruct_velocity
from .config import RunConfig
from .mesh import Mesh, generate_structured_mesh, mesh_metrics
from .newmark import (
    InitializationError,
    NewmarkConfig,
    NonconvergenceError,
    RunResult,
    run,
)
from .operators import NondegeneracyError, apply_blocks
from .problems import (
    delta_study_problem,
    manufactured_problem,
    wavefront_problem,
)


def _fmt(x: float) -> str:
    return f"{x:.17g}"


def time_step(cfg: RunConfig, h: float, h_coarse: float) -> float:
    """dt proportional to h^((p+2)/2), anchored at coarse_steps on the
    coarsest level; an explicit cfg.dt short-circuits the rule."""
    if cfg.dt is not None:
        return cfg.dt
    exponent = 0.5 * (cfg.degree + 2)
    n = math.ceil(cfg.coarse_steps * (h_coarse / h) ** exponent - 1.0e-9)
    return cfg.final_time / n


# the damping study runs on a single mesh, so its step size is anchored to
# the same four-element-per-side baseline the refinement study starts from
_H_ANCHOR = mesh_metrics(generate_structured_mesh(4)).h


def _newmark_config(cfg: RunConfig, dt: float) -> NewmarkConfig:
    return NewmarkConfig(dt=dt, gamma=cfg.gamma, beta=cfg.beta, tol=cfg.tol,
                         max_iterations=cfg.max_iterations)


@dataclass
class LevelResult:
    n: int
    h: float
    dt: float
    err_psi: float
    err_v: float
    err_star: float
    mean_iterations: float


@dataclass
class ConvergenceReport:
    degree: int
    levels: list[LevelResult] = field(default_factory=list)
    failures: list[str] = field(default_factory=list)

    @property
    def rates_psi(self) -> list[float]:
        return self._rates("err_psi")

    @property
    def rates_v(self) -> list[float]:
        return self._rates("err_v")

    @property
    def rates_star(self) -> list[float]:
        return self._rates("err_star")

    def _rates(self, attr: str) -> list[float]:
        if len(self.levels) < 2:
            return []
        return convergence_rates([getattr(lv, attr) for lv in self.levels],
                                 [lv.h for lv in self.levels])

    def to_csv(self) -> str:
        lines = ["h,dt,err_psi,rate_psi,err_v,rate_v,err_psistar,rate_psistar"]
        rp, rv, rs = self.rates_psi, self.rates_v, self.rates_star
        for i, lv in enumerate(self.levels):
            rates = ("", "", "") if i == 0 else (
                _fmt(rp[i - 1]), _fmt(rv[i - 1]), _fmt(rs[i - 1]))
            lines.append(",".join([
                _fmt(lv.h), _fmt(lv.dt), _fmt(lv.err_psi), rates[0],
                _fmt(lv.err_v), rates[1], _fmt(lv.err_star), rates[2]]))
        for msg in self.failures:
            lines.append(f"# {msg}")
        return "\n".join(lines) + "\n"


def h_convergence_study(cfg: RunConfig) -> ConvergenceReport:
    """Manufactured-solution refinement study at the configured degree."""
    prob = manufactured_problem(c=cfg.c, k=cfg.k, delta=cfg.delta,
                                final_time=cfg.final_time)
    report = ConvergenceReport(degree=cfg.degree)
    h_coarse = mesh_metrics(generate_structured_mesh(cfg.levels[0])).h
    for n in cfg.levels:
        mesh = generate_structured_mesh(n)
        h = mesh_metrics(mesh).h
        dt = time_step(cfg, h, h_coarse)
        try:
            result = run(prob, mesh, _newmark_config(cfg, dt),
                         degree=cfg.degree, tau_bar=cfg.tau,
                         tau_mode=cfg.tau_mode)
        except (NonconvergenceError, NondegeneracyError,
                InitializationError) as err:
            # keep whatever levels did finish; the table notes the rest
            report.failures.append(f"n={n}: {err}")
            continue
        state, ops = result.state, result.ops
        vel = reconstruct_velocity(ops, state.psi, state.lam)
        star = postprocess(state.psi, vel, ops)
        report.levels.append(LevelResult(
            n=n, h=h, dt=dt,
            err_psi=l2_error(scalar_field(ops, state.psi), prob.exact_psi,
                             state.t),
            err_v=l2_error(vector_field(ops, vel), prob.exact_v, state.t),
            err_star=l2_error(star, prob.exact_psi, state.t),
            mean_iterations=result.mean_iterations,
        ))
    return report


@dataclass
class DeltaLevel:
    delta: float
    err_psi: float
    err_v: float


@dataclass
class DeltaReport:
    degree: int
    levels: list[DeltaLevel] = field(default_factory=list)
    fit_range: tuple[float, float] = (1.0e-8, 1.0e-2)

    def _fit(self, attr: str) -> float:
        lo, hi = self.fit_range
        pts = [(lv.delta, getattr(lv, attr)) for lv in self.levels
               if lo <= lv.delta <= hi and getattr(lv, attr) > 0.0]
        if len(pts) < 2:
            return float("nan")
        xs = np.log([p[0] for p in pts])
        ys = np.log([p[1] for p in pts])
        return float(np.polyfit(xs, ys, 1)[0])

    @property
    def slope_psi(self) -> float:
        return self._fit("err_psi")

    @property
    def slope_v(self) -> float:
        return self._fit("err_v")

    def to_csv(self) -> str:
        lines = ["delta,err_psi,rate_psi,err_v,rate_v"]
        for i, lv in enumerate(self.levels):
            if i == 0:
                rp = rv = ""
            else:
                prev = self.levels[i - 1]
                den = math.log(prev.delta / lv.delta)
                rp = _fmt(math.log(prev.err_psi / lv.err_psi) / den
                          ) if prev.err_psi > 0 and lv.err_psi > 0 else "nan"
                rv = _fmt(math.log(prev.err_v / lv.err_v) / den
                          ) if prev.err_v > 0 and lv.err_v > 0 else "nan"
            lines.append(",".join([
                _fmt(lv.delta), _fmt(lv.err_psi), rp, _fmt(lv.err_v), rv]))
        lines.append(f"# slope_psi,{_fmt(self.slope_psi)}")
        lines.append(f"# slope_v,{_fmt(self.slope_v)}")
        return "\n".join(lines) + "\n"


def delta_convergence_study(cfg: RunConfig,
                            deltas=(1.0e-2, 1.0e-4, 1.0e-6, 1.0e-8, 1.0e-10),
                            ) -> DeltaReport:
    """Distance of damped runs from the undamped run at the final time.

    All runs share the mesh (first configured level), degree and time step;
    differences are measured in the scalar and vector mass norms.
    """
    mesh = generate_structured_mesh(cfg.levels[0])
    h = mesh_metrics(mesh).h
    dt = time_step(cfg, h, _H_ANCHOR)
    ncfg = _newmark_config(cfg, dt)

    def final_state(delta: float) -> RunResult:
        prob = delta_study_problem(delta, c=cfg.c, k=cfg.k,
                                   final_time=cfg.final_time)
        return run(prob, mesh, ncfg, degree=cfg.degree, tau_bar=cfg.tau,
                   tau_mode=cfg.tau_mode)

    base = final_state(0.0)
    ops = base.ops
    base_vel = reconstruct_velocity(ops, base.state.psi, base.state.lam)
    report = DeltaReport(degree=cfg.degree)
    for delta in deltas:
        res = final_state(delta)
        dpsi = res.state.psi - base.state.psi
        dvel = reconstruct_velocity(ops, res.state.psi, res.state.lam) - base_vel
        report.levels.append(DeltaLevel(
            delta=delta,
            err_psi=float(np.sqrt(dpsi @ apply_blocks(ops.scalar_mass, dpsi))),
            err_v=float(np.sqrt(dvel @ apply_blocks(ops.vector_mass, dvel))),
        ))
    return report


@dataclass
class WavefrontResult:
    mesh: Mesh
    dt: float
    profile_x: np.ndarray
    profile_nonlinear: np.ndarray
    profile_linear: np.ndarray
    snapshots: dict  # (variant, time) -> DiscreteScalarField of d(psi)/dt
    mean_iterations: dict  # variant -> float


def wavefront_study(cfg: RunConfig) -> WavefrontResult:
    """Self-steepening run against its linear (k = 0) twin.

    Snapshots store the velocity field d(psi)/dt at the configured times; the
    profile samples it along the horizontal midline at the final time.
    """
    mesh = generate_structured_mesh(cfg.levels[0])
    dt = cfg.dt if cfg.dt is not None else cfg.final_time / cfg.coarse_steps
    ncfg = _newmark_config(cfg, dt)
    targets = {int(round(ts / dt)): ts for ts in cfg.snapshot_times}
    snapshots: dict = {}
    mean_iterations: dict = {}
    profiles: dict = {}
    for variant, k in (("nonlinear", cfg.k), ("linear", 0.0)):
        prob = wavefront_problem(k=k, c=cfg.c, delta=cfg.delta,
                                 final_time=cfg.final_time)

        def observer(state, variant=variant):
            step = int(round(state.t / dt))
            if step in targets and abs(state.t - targets[step]) <= 0.5 * dt:
                snapshots[(variant, targets[step])] = DiscreteScalarField(
                    mesh, cfg.degree, state.dpsi.copy())
            return None

        result = run(prob, mesh, ncfg, observers={"snap": observer},
                     degree=cfg.degree, tau_bar=cfg.tau,
                     tau_mode=cfg.tau_mode)
        mean_iterations[variant] = result.mean_iterations
        profiles[variant] = DiscreteScalarField(mesh, cfg.degree,
                                                result.state.dpsi.copy())
    x = np.linspace(0.0, 1.0, cfg.profile_samples)
    pts = np.column_stack([x, np.full_like(x, 0.5)])
    return WavefrontResult(
        mesh=mesh, dt=dt, profile_x=x,
        profile_nonlinear=profiles["nonlinear"].eval_at(pts),
        profile_linear=profiles["linear"].eval_at(pts),
        snapshots=snapshots,
        mean_iterations=mean_iterations,
    )


def profile_csv(result: WavefrontResult) -> str:
    lines = ["x,dpsi_nonlinear,dpsi_linear"]
    for x, a, b in zip(result.profile_x, result.profile_nonlinear,
                       result.profile_linear):
        lines.append(f"{_fmt(x)},{_fmt(a)},{_fmt(b)}")
    return "\n".join(lines) + "\n"


@dataclass
class SingleRunSummary:
    kind: str
    n: int
    dt: float
    times: list[float]
    energies0: list[float]
    energies1: list[float]
    mean_iterations: float
    err_psi: float | None
    err_v: float | None

    def energy_csv(self) -> str:
        lines = ["t,e0,e1"]
        for t, e0, e1 in zip(self.times, self.energies0, self.energies1):
            lines.append(f"{_fmt(t)},{_fmt(e0)},{_fmt(e1)}")
        return "\n".join(lines) + "\n"


def single_run_study(cfg: RunConfig) -> SingleRunSummary:
    """One run of the configured problem family on its first mesh level,
    recording the energy pair over time."""
    if cfg.kind == "h_convergence":
        prob = manufactured_problem(c=cfg.c, k=cfg.k, delta=cfg.delta,
                                    final_time=cfg.final_time)
    elif cfg.kind == "delta_convergence":
        prob = delta_study_problem(cfg.delta, c=cfg.c, k=cfg.k,
                                   final_time=cfg.final_time)
    else:
        prob = wavefront_problem(k=cfg.k, c=cfg.c, delta=cfg.delta,
                                 final_time=cfg.final_time)
    mesh = generate_structured_mesh(cfg.levels[0])
    h = mesh_metrics(mesh).h
    dt = time_step(cfg, h, h)
    result = run(prob, mesh, _newmark_config(cfg, dt),
                 observers={"state": lambda s: s.copy()}, degree=cfg.degree,
                 tau_bar=cfg.tau, tau_mode=cfg.tau_mode)
    ops = result.ops
    series = [(s.t, *energy(s, ops, prob.k, prob.c))
              for s in result.observations["state"]]
    err_psi = err_v = None
    state = result.state
    if prob.exact_psi is not None:
        err_psi = l2_error(scalar_field(ops, state.psi), prob.exact_psi,
                           state.t)
        vel = reconstruct_velocity(ops, state.psi, state.lam)
        err_v = l2_error(vector_field(ops, vel), prob.exact_v, state.t)
    return SingleRunSummary(
        kind=cfg.kind, n=cfg.levels[0], dt=dt,
        times=[s[0] for s in series],
        energies0=[s[1] for s in series],
        energies1=[s[2] for s in series],
        mean_iterations=result.mean_iterations,
        err_psi=err_psi, err_v=err_v,
    )


def export_field(fld: DiscreteScalarField, path, fmt: str = "csv") -> None:
    """Write a scalar field as point samples (csv) or legacy VTK text.

    CSV rows are x,y,value at every element quadrature point, formatted so
    re-parsing reproduces the doubles exactly. VTK output carries
    vertex-averaged values on the triangulation.
    """
    from .basis import triangle_quadrature

    mesh = fld.mesh
    if fmt == "csv":
        rule = triangle_quadrature(2 * fld.degree + 2)
        tri = mesh.vertices[mesh.triangles]
        jac = np.stack([tri[:, 1] - tri[:, 0], tri[:, 2] - tri[:, 0]], axis=2)
        xq = tri[:, 0][:, None, :] + np.einsum("eab,qb->eqa", jac, rule.points)
        vals = fld.eval_reference(rule.points)
        with open(path, "w", encoding="utf-8") as fh:
            fh.write("x,y,value\n")
            for e in range(mesh.n_triangles):
                for q in range(rule.points.shape[0]):
                    fh.write(f"{_fmt(xq[e, q, 0])},{_fmt(xq[e, q, 1])},"
                             f"{_fmt(vals[e, q])}\n")
        return
    if fmt == "vtk":
        ref_corners = np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]])
        corner_vals = fld.eval_reference(ref_corners)  # (ne, 3)
        acc = np.zeros(mesh.n_vertices)
        cnt = np.zeros(mesh.n_vertices)
        for e, tri in enumerate(mesh.triangles):
            for lv, v in enumerate(tri):
                acc[v] += corner_vals[e, lv]
                cnt[v] += 1.0
        vertex_vals = acc / np.maximum(cnt, 1.0)
        with open(path, "w", encoding="utf-8") as fh:
            fh.write("# vtk DataFile Version 2.0\n")
            fh.write("scalar field\nASCII\nDATASET UNSTRUCTURED_GRID\n")
            fh.write(f"POINTS {mesh.n_vertices} double\n")
            for x, y in mesh.vertices:
                fh.write(f"{_fmt(x)} {_fmt(y)} 0\n")
            fh.write(f"CELLS {mesh.n_triangles} {4 * mesh.n_triangles}\n")
            for i, j, k in mesh.triangles:
                fh.write(f"3 {i} {j} {k}\n")
            fh.write(f"CELL_TYPES {mesh.n_triangles}\n")
            fh.write("5\n" * mesh.n_triangles)
            fh.write(f"POINT_DATA {mesh.n_vertices}\n")
            fh.write("SCALARS value double 1\nLOOKUP_TABLE default\n")
            for v in vertex_vals:
                fh.write(f"{_fmt(v)}\n")
        return
    raise ValueError(f"unknown export format {fmt!r}, expected 'csv' or 'vtk'")


def import_field_csv(path) -> tuple[np.ndarray, np.ndarray]:
    """Read back an exported CSV field as (points, values)."""
    pts: list[tuple[float, float]] = []
    vals: list[float] = []
    with open(path, encoding="utf-8") as fh:
        header = fh.readline().strip()
        if header != "x,y,value":
            raise ValueError(f"{path}: unexpected header {header!r}")
        for line in fh:
            x, y, v = line.strip().split(",")
            pts.append((float(x), float(y)))
            vals.append(float(v))
    return np.array(pts), np.array(vals)
