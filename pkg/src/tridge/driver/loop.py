"""The global time loop: AMR cadence, CFL stepping, limiting, outputs."""

from __future__ import annotations

import logging
import os
from dataclasses import dataclass, field

import numpy as np

from .. import limiter
from ..errors import NumericalFailure
from ..mesh import DomainBox, build_mesh
from .config import SimulationConfig
from .output import ProbeWriter, write_vtk
from .scenarios import Scenario, make_scenario
from .state import MeshState

logger = logging.getLogger(__name__)

_TIME_EPS = 1e-12


@dataclass
class RunReport:
    project: str
    steps: int = 0
    end_time: float = 0.0
    dt_history: list[float] = field(default_factory=list)
    variable_names: tuple[str, ...] = ()
    var_min: np.ndarray | None = None
    var_max: np.ndarray | None = None
    initial_integrals: np.ndarray | None = None
    final_integrals: np.ndarray | None = None
    fv_active_per_step: list[int] = field(default_factory=list)
    troubled_per_step: list[int] = field(default_factory=list)
    new_troubled_total: int = 0
    cells_final: int = 0
    warnings: list[str] = field(default_factory=list)

    @property
    def conservation_drift(self) -> np.ndarray:
        scale = np.maximum(np.abs(self.initial_integrals), 1e-30)
        return np.abs(self.final_integrals - self.initial_integrals) / scale

    def summary(self) -> str:
        lines = [
            f"project: {self.project}",
            f"steps: {self.steps}, final time: {self.end_time:.10g}, "
            f"cells: {self.cells_final}",
        ]
        if self.dt_history:
            lines.append(
                f"dt: first {self.dt_history[0]:.6g}, "
                f"min {min(self.dt_history):.6g}, max {max(self.dt_history):.6g}"
            )
        for i, name in enumerate(self.variable_names):
            lines.append(
                f"  {name}: min {self.var_min[i]:.6g}, max {self.var_max[i]:.6g}, "
                f"drift {self.conservation_drift[i]:.3e}"
            )
        if self.fv_active_per_step:
            lines.append(
                f"limiter: max active {max(self.fv_active_per_step)} cells, "
                f"newly troubled events {self.new_troubled_total}"
            )
        for w in self.warnings:
            lines.append(f"warning: {w}")
        return "\n".join(lines)


def _build_state(cfg: SimulationConfig, scenario: Scenario) -> MeshState:
    box = DomainBox(cfg.offset, cfg.width)
    bnd = cfg.boundary if cfg.boundary is not None else scenario.default_boundary
    periodic = tuple(bnd[2 * a] == "periodic" for a in range(cfg.dimension))
    mesh = build_mesh(
        box,
        base_dims=cfg.base_dims,
        max_mesh_size=cfg.maximum_mesh_size,
        max_depth=cfg.max_refinement_depth,
        periodic=periodic,
    )
    return MeshState(cfg, scenario, mesh)


def _initial_amr(state: MeshState) -> None:
    """Refine until the criterion settles, re-imposing exact initial data."""
    for _ in range(state.mesh.max_depth):
        marks = state.refinement_marks()
        marks[marks < 0] = 0
        if not np.any(marks > 0):
            break
        if not state.remesh(marks):
            break
        state.apply_initial_conditions()


def _initial_limiter_setup(state: MeshState) -> None:
    """Flag inadmissible initial cells and seed the FV patches."""
    sub = limiter.project_dg_to_fv(state.dg, state.sub_ops)
    pad = limiter.physical_admissibility(sub, state.prm_sub, state.system)
    cand = np.where(pad, limiter.OK, limiter.TROUBLED).astype(np.int8)
    state.status = limiter.spread_status(cand, state.nbr_table)
    fv_first = np.where(state.status >= limiter.FV_TO_DG)[0]
    if fv_first.size:
        state.init_patches_from_points(fv_first)
        state.dg[fv_first] = limiter.project_fv_to_dg(
            state.patch[fv_first], state.sub_ops, state.system
        )
    ring = np.where(state.status == limiter.DG_TO_FV)[0]
    if ring.size:
        state.patch[ring] = limiter.project_dg_to_fv(state.dg[ring], state.sub_ops)


def hybrid_step(state: MeshState, dt: float, force_troubled: bool = False) -> dict:
    """One limited ADER-DG step: DG candidates everywhere, a-posteriori
    checks, rollback and FV recompute on the troubled region, projections."""
    sysm = state.system
    cfg = state.cfg
    old_dg = state.dg.copy()
    old_status = state.status.copy()

    sub_old = state.subcell_view()
    mn, mx = limiter.subcell_minmax(sub_old)
    nbr_min, nbr_max = limiter.neighborhood_minmax(mn, mx, state.nbr_table)

    cand, pred_trouble = state.dg_step(dt)

    fv_result = np.full_like(state.patch, np.nan)
    act = np.where(old_status >= limiter.FV_TO_DG)[0]
    if act.size:
        fv_result[act] = state.fv_step(dt, act)

    cand_sub = limiter.project_dg_to_fv(cand, state.sub_ops)
    check = limiter.check_candidates(
        cand_sub, state.prm_sub, nbr_min, nbr_max, sysm,
        cfg.dmp_delta0, cfg.dmp_epsilon,
    )
    ok = check.ok & ~pred_trouble
    cand_status = np.where(
        ok, np.maximum(old_status - 1, limiter.OK), limiter.TROUBLED
    ).astype(np.int8)
    if force_troubled:
        cand_status[:] = limiter.TROUBLED
    new_troubled = int(
        np.sum((cand_status == limiter.TROUBLED) & (old_status < limiter.TROUBLED))
    )
    new_status = limiter.spread_status(cand_status, state.nbr_table)

    # Roll newly limited cells back to t^n by projecting the old DG state.
    need_patch = np.where(
        (new_status >= limiter.DG_TO_FV) & (old_status == limiter.OK)
    )[0]
    if need_patch.size:
        state.patch[need_patch] = limiter.project_dg_to_fv(
            old_dg[need_patch], state.sub_ops
        )
    newly_fv = np.where(
        (new_status >= limiter.FV_TO_DG) & (old_status < limiter.FV_TO_DG)
    )[0]
    if newly_fv.size:
        fv_result[newly_fv] = state.fv_step(dt, newly_fv)

    fv_cells = new_status >= limiter.FV_TO_DG
    dg_cells = ~fv_cells
    if np.any(fv_cells):
        res = fv_result[fv_cells]
        admissible = limiter.physical_admissibility(
            res, state.prm_sub[fv_cells], sysm
        ) & np.all(np.isfinite(res), axis=(1, 2))
        if not np.all(admissible):
            bad = np.where(fv_cells)[0][np.where(~admissible)[0][0]]
            raise NumericalFailure(
                f"FV recompute inadmissible in cell {state.leaves[bad].key()} "
                f"at t={state.t:.6g} (robustness floor)"
            )
        state.patch[fv_cells] = res
        state.dg[fv_cells] = limiter.project_fv_to_dg(res, state.sub_ops, sysm)
    state.dg[dg_cells] = cand[dg_cells]
    bad_dg = ~np.all(np.isfinite(state.dg), axis=(1, 2))
    if np.any(bad_dg):
        bad = int(np.where(bad_dg)[0][0])
        raise NumericalFailure(
            f"non-finite state survived limiting in cell "
            f"{state.leaves[bad].key()} at t={state.t:.6g}"
        )
    ring = np.where(new_status == limiter.DG_TO_FV)[0]
    if ring.size:
        state.patch[ring] = limiter.project_dg_to_fv(state.dg[ring], state.sub_ops)
    state.status = new_status
    return {
        "fv_active": int(np.sum(fv_cells)),
        "troubled": int(np.sum(new_status == limiter.TROUBLED)),
        "new_troubled": new_troubled,
    }


def pure_dg_step(state: MeshState, dt: float) -> dict:
    cand, trouble = state.dg_step(dt)
    bad = trouble | ~np.all(np.isfinite(cand), axis=(1, 2))
    if np.any(bad):
        i = int(np.where(bad)[0][0])
        raise NumericalFailure(
            f"non-finite DG update in cell {state.leaves[i].key()} at "
            f"t={state.t:.6g}; use the limited-aderdg solver for this setup"
        )
    state.dg = cand
    return {"fv_active": 0, "troubled": 0, "new_troubled": 0}


def pure_fv_step(state: MeshState, dt: float) -> dict:
    out = state.fv_step(dt, np.arange(state.nc))
    finite = np.all(np.isfinite(out), axis=(1, 2))
    admissible = limiter.physical_admissibility(out, state.prm_sub, state.system)
    if not np.all(finite & admissible):
        i = int(np.where(~(finite & admissible))[0][0])
        raise NumericalFailure(
            f"inadmissible FV update in cell {state.leaves[i].key()} at "
            f"t={state.t:.6g}"
        )
    state.patch = out
    return {"fv_active": state.nc, "troubled": 0, "new_troubled": 0}


def run_with_state(
    cfg: SimulationConfig,
    *,
    force_troubled: bool = False,
    max_steps: int | None = None,
    write_outputs: bool = True,
    on_step=None,
    quiet: bool = True,
) -> tuple[RunReport, MeshState]:
    """Execute one configured simulation; returns the report and final state."""
    scenario = make_scenario(cfg)
    state = _build_state(cfg, scenario)
    state.apply_initial_conditions()

    hybrid = cfg.solver_kind == "limited-aderdg"
    pure_fv = cfg.solver_kind == "fv"

    if cfg.max_refinement_depth > 0:
        _initial_amr(state)
    if pure_fv or (hybrid and force_troubled):
        state.status[:] = limiter.TROUBLED
        state.init_patches_from_points(np.arange(state.nc))
        state.dg = limiter.project_fv_to_dg(state.patch, state.sub_ops, state.system)
    elif hybrid:
        _initial_limiter_setup(state)

    report = RunReport(project=cfg.project, variable_names=state.system.variable_names)
    report.initial_integrals = state.integrals()
    sub0 = state.subcell_view()
    report.var_min = sub0.min(axis=(0, 1))
    report.var_max = sub0.max(axis=(0, 1))

    probes: list[ProbeWriter] = []
    vtk_index = 0
    last_vtk_t = None
    if write_outputs:
        os.makedirs(cfg.output_dir, exist_ok=True)
        probes = [ProbeWriter(cfg.output_dir, p, state) for p in cfg.probes]
        for p in probes:
            p.record(state)
        if cfg.vtk_every > 0:
            write_vtk(
                state,
                os.path.join(cfg.output_dir, f"{cfg.project}_{vtk_index:04d}.vtk"),
            )
            vtk_index += 1
            last_vtk_t = 0.0

    end = cfg.end_time
    steps = 0
    t_next_vtk = cfg.vtk_every if (write_outputs and cfg.vtk_every > 0) else np.inf
    while state.t < end - _TIME_EPS * max(1.0, end):
        if max_steps is not None and steps >= max_steps:
            break
        if (
            cfg.max_refinement_depth > 0
            and steps > 0
            and steps % cfg.remesh_interval == 0
        ):
            if pure_fv:
                state.dg = limiter.project_fv_to_dg(
                    state.patch, state.sub_ops, state.system
                )
            if state.remesh(state.refinement_marks()) and pure_fv:
                state.status[:] = limiter.TROUBLED
        dt = state.stable_dt()
        dt = min(dt, end - state.t)
        if state.t + dt > t_next_vtk - _TIME_EPS:
            dt = min(dt, t_next_vtk - state.t)
        if dt <= 0:
            break
        if hybrid:
            info = hybrid_step(state, dt, force_troubled)
        elif pure_fv:
            info = pure_fv_step(state, dt)
        else:
            info = pure_dg_step(state, dt)
        state.t += dt
        steps += 1

        report.dt_history.append(dt)
        report.fv_active_per_step.append(info["fv_active"])
        report.troubled_per_step.append(info["troubled"])
        report.new_troubled_total += info["new_troubled"]
        sub = state.subcell_view()
        report.var_min = np.minimum(report.var_min, sub.min(axis=(0, 1)))
        report.var_max = np.maximum(report.var_max, sub.max(axis=(0, 1)))
        if on_step is not None:
            on_step(state, steps)
        if write_outputs:
            for p in probes:
                p.record(state)
            if state.t >= t_next_vtk - _TIME_EPS:
                write_vtk(
                    state,
                    os.path.join(cfg.output_dir, f"{cfg.project}_{vtk_index:04d}.vtk"),
                )
                vtk_index += 1
                last_vtk_t = state.t
                t_next_vtk += cfg.vtk_every
        if not quiet:
            logger.info(
                "step %d: t=%.6g dt=%.3g fv=%d", steps, state.t, dt, info["fv_active"]
            )

    report.steps = steps
    report.end_time = state.t
    report.final_integrals = state.integrals()
    report.cells_final = state.nc
    report.warnings = list(state.mesh.warnings)
    if write_outputs:
        for p in probes:
            p.close()
        if cfg.vtk_every > 0 and last_vtk_t != state.t:
            write_vtk(
                state,
                os.path.join(cfg.output_dir, f"{cfg.project}_{vtk_index:04d}.vtk"),
            )
    return report, state


def run(cfg: SimulationConfig, **kwargs) -> RunReport:
    """Execute one configured simulation to its end time."""
    report, _ = run_with_state(cfg, **kwargs)
    return report


def sampled_view(state: MeshState) -> np.ndarray:
    """Pointwise values at subcell centres: the DG polynomial where DG is
    authoritative, subcell averages (second-order accurate) elsewhere."""
    vals = np.einsum("sj,cjv->csv", state.sub_ops.sample, state.dg)
    fvprim = state.status >= limiter.FV_TO_DG
    if state.cfg.solver_kind == "fv":
        fvprim = np.ones(state.nc, dtype=bool)
    if np.any(fvprim):
        vals[fvprim] = state.patch[fvprim]
    return vals


def l1_error(state: MeshState) -> np.ndarray:
    """Volume-weighted L1 difference to the scenario's exact solution."""
    exact = state.scenario.exact(state.x_sub, state.t)
    diff = np.abs(sampled_view(state) - exact)
    subvol = state.volume / state.sub_ops.nsub
    return np.einsum("c,csv->v", subvol, diff)


def linf_error(state: MeshState) -> np.ndarray:
    exact = state.scenario.exact(state.x_sub, state.t)
    return np.abs(sampled_view(state) - exact).max(axis=(0, 1))
