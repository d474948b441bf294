"""Outputs: legacy ASCII VTK snapshots, probe CSVs, report text.

VTK files are written with a fixed float format and traversal-ordered cell
emission, so identical runs produce byte-identical files.  DG cells are
sampled on their node lattice (one quad per node-lattice square); cells in
an FV representation emit one quad per subcell carrying the average.
"""

from __future__ import annotations

import os
from io import StringIO

import numpy as np

from .. import limiter
from ..basis import lagrange_eval
from ..errors import ConfigurationError
from .config import ProbeSpec

_F = "%.16g"


def _fmt(v: float) -> str:
    return _F % v


def _cell_is_fv(state, slot: int) -> bool:
    if state.cfg.solver_kind == "fv":
        return True
    return bool(state.status[slot] >= limiter.FV_TO_DG) or state.order == 0


def write_vtk(state, path: str) -> None:
    """One snapshot of the whole mesh state at state.t."""
    dim = state.dim
    nv = state.nv
    names = state.system.variable_names
    n1 = state.order + 1
    nsub = state.sub_ops.nsub1

    points: list[np.ndarray] = []
    point_vals: list[np.ndarray] = []
    cells: list[np.ndarray] = []
    cell_status: list[np.ndarray] = []
    cell_level: list[np.ndarray] = []
    npts = 0

    if dim == 2:
        quad_template = np.array(
            [
                [i0 + n1 * i1, i0 + 1 + n1 * i1, i0 + 1 + n1 * (i1 + 1), i0 + n1 * (i1 + 1)]
                for i1 in range(n1 - 1)
                for i0 in range(n1 - 1)
            ],
            dtype=np.int64,
        ).reshape(-1, 4)
        corner = np.array([[0, 0], [1, 0], [1, 1], [0, 1]], dtype=float)
        sub_rel = np.array(
            [[i, j] for j in range(nsub) for i in range(nsub)], dtype=float
        )

    for slot in range(state.nc):
        origin = state.origin[slot]
        h = state.h[slot]
        is_fv = _cell_is_fv(state, slot)
        if dim == 1:
            if is_fv:
                edges = origin[0] + h[0] * np.arange(nsub + 1) / nsub
                pts = np.repeat(edges, 2)[1:-1].reshape(nsub, 2)
                points.append(pts.reshape(-1, 1))
                point_vals.append(np.repeat(state.patch[slot], 2, axis=0))
                conn = npts + np.arange(2 * nsub).reshape(nsub, 2)
                npts += 2 * nsub
            else:
                pts = state.x_nodes[slot]
                points.append(pts)
                point_vals.append(state.dg[slot])
                base = np.arange(n1 - 1)
                conn = npts + np.stack([base, base + 1], axis=1)
                npts += n1
        else:
            if is_fv:
                base_xy = origin[None, None, :] + (
                    (sub_rel[:, None, :] + corner[None, :, :]) / nsub
                ) * h[None, None, :]
                pts = base_xy.reshape(-1, 2)
                points.append(pts)
                point_vals.append(np.repeat(state.patch[slot], 4, axis=0))
                conn = npts + np.arange(4 * nsub * nsub).reshape(-1, 4)
                npts += 4 * nsub * nsub
            else:
                pts = state.x_nodes[slot]
                points.append(pts)
                point_vals.append(state.dg[slot])
                conn = npts + quad_template
                npts += n1 * n1
        cells.append(conn)
        cell_status.append(np.full(len(conn), state.status[slot], dtype=np.int64))
        cell_level.append(np.full(len(conn), state.level[slot], dtype=np.int64))

    pts = np.vstack(points)
    vals = np.vstack(point_vals)
    conn = np.vstack(cells)
    status = np.concatenate(cell_status)
    level = np.concatenate(cell_level)
    ncell = len(conn)
    nodes_per_cell = conn.shape[1]
    vtk_type = 9 if dim == 2 else 3  # VTK_QUAD / VTK_LINE

    out = StringIO()
    out.write("# vtk DataFile Version 3.0\n")
    out.write(f"{state.cfg.project} t={_fmt(state.t)}\n")
    out.write("ASCII\nDATASET UNSTRUCTURED_GRID\n")
    out.write(f"POINTS {len(pts)} double\n")
    zeros = "0"
    for p in pts:
        if dim == 1:
            out.write(f"{_fmt(p[0])} 0 0\n")
        else:
            out.write(f"{_fmt(p[0])} {_fmt(p[1])} {zeros}\n")
    out.write(f"CELLS {ncell} {ncell * (1 + nodes_per_cell)}\n")
    for row in conn:
        out.write(f"{nodes_per_cell} " + " ".join(str(i) for i in row) + "\n")
    out.write(f"CELL_TYPES {ncell}\n")
    out.write("\n".join([str(vtk_type)] * ncell) + "\n")
    out.write(f"POINT_DATA {len(pts)}\n")
    for vi, name in enumerate(names):
        out.write(f"SCALARS {name} double 1\nLOOKUP_TABLE default\n")
        out.write("\n".join(_fmt(v) for v in vals[:, vi]) + "\n")
    out.write(f"CELL_DATA {ncell}\n")
    out.write("SCALARS limiter_status int 1\nLOOKUP_TABLE default\n")
    out.write("\n".join(str(int(s)) for s in status) + "\n")
    out.write("SCALARS level int 1\nLOOKUP_TABLE default\n")
    out.write("\n".join(str(int(s)) for s in level) + "\n")
    try:
        with open(path, "w", encoding="ascii") as fh:
            fh.write(out.getvalue())
    except OSError as exc:
        raise OSError(f"cannot write VTK snapshot to {path}: {exc}") from exc


def locate_cell(state, x) -> int:
    """Slot of the leaf containing the point (ties resolved toward lower index)."""
    mesh = state.mesh
    box = mesh.box
    idx = []
    for a in range(state.dim):
        hb = box.width[a] / mesh.base_dims[a]
        i = int((x[a] - box.offset[a]) / hb)
        idx.append(min(max(i, 0), mesh.base_dims[a] - 1))
    level, idx = 0, tuple(idx)
    while (level, idx) not in mesh._leaves:
        cell = mesh.ref(level, idx)
        org = mesh.cell_origin(cell)
        size = mesh.cell_size(cell)
        child = tuple(
            min(max(int(3.0 * (x[a] - org[a]) / size[a]), 0), 2)
            for a in range(state.dim)
        )
        level, idx = level + 1, tuple(3 * i + c for i, c in zip(idx, child))
    return state.slot[(level, idx)]


def evaluate_point(state, x) -> np.ndarray:
    """All variables at an exact position: the DG polynomial where DG is
    authoritative, the conservative FV reconstruction elsewhere."""
    slot = locate_cell(state, x)
    if _cell_is_fv(state, slot):
        dof = limiter.project_fv_to_dg(
            state.patch[slot][None], state.sub_ops, state.system
        )[0]
    else:
        dof = state.dg[slot]
    xi = (np.asarray(x) - state.origin[slot]) / state.h[slot]
    nodes = state.ops.basis.nodes
    n1 = len(nodes)
    lx = np.array([lagrange_eval(nodes, j, xi[0]) for j in range(n1)])
    if state.dim == 1:
        return lx @ dof
    ly = np.array([lagrange_eval(nodes, j, xi[1]) for j in range(n1)])
    weights = np.kron(ly, lx)
    return weights @ dof


class ProbeWriter:
    """Appends one CSV row per accepted step for one probe position."""

    def __init__(self, outdir: str, spec: ProbeSpec, state):
        names = state.system.variable_names
        for v in spec.variables:
            if v not in names:
                raise ConfigurationError(
                    f"probe '{spec.name}': unknown variable '{v}' for system "
                    f"'{state.system.name}' (has {', '.join(names)})"
                )
        self.spec = spec
        self.var_idx = [names.index(v) for v in spec.variables]
        path = os.path.join(outdir, f"probe_{spec.name}.csv")
        try:
            self._fh = open(path, "w", encoding="ascii")
        except OSError as exc:
            raise OSError(f"cannot open probe file {path}: {exc}") from exc
        coords = ",".join(f"x{i}" for i in range(len(spec.position)))
        self._fh.write(f"time,{coords},{','.join(spec.variables)}\n")

    def record(self, state) -> None:
        vals = evaluate_point(state, self.spec.position)
        row = [_fmt(state.t)] + [_fmt(x) for x in self.spec.position]
        row += [_fmt(vals[i]) for i in self.var_idx]
        self._fh.write(",".join(row) + "\n")

    def close(self) -> None:
        self._fh.close()
