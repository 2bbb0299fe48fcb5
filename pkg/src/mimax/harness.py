"""Run drivers: transient solves, convergence sweeps, robustness tables,
timing studies, and deterministic CSV/JSON emission.

A "manufactured" run drives the solver with the closed-form fields of
:mod:`mimax.manufactured`: boundary data is interpolated from the exact
solution at every step, the initial electric field and pressure are
interpolants, and the initial magnetic flux is the discrete curl of the
interpolated electric field, which makes it exactly divergence-free and
happens to be a consistent approximation of the exact flux (the test
fields satisfy B = curl E).

Errors are reported two ways: the L2 norm of the lowest-order element
reconstruction against the exact field (the quantity whose first-order
decay the convergence runs assert) and the lumped discrete norm of the
DoF error against the interpolant (cheap, reported for reference).
Both are maximized over the time steps, including the initial state.
"""

from __future__ import annotations

import json
import time
from dataclasses import asdict, dataclass, field

import numpy as np
import scipy.sparse.linalg as spla

from . import fem as mf
from . import mesh as mm
from . import operators as mo
from . import precond as mp
from .dual import build_dual, check_nondegenerate, partition_identities
from .linalg import KrylovConfig
from .manufactured import ManufacturedSolution

MESH_KINDS = ("cube-pyramids", "bcc")
CSV_HEADER = ("tau,h,iters_mean,iters_raw,errE,errB,divB_max,"
              "energy_drift,seconds_per_step")


@dataclass
class RunConfig:
    mesh: str = "cube-pyramids"
    refine: int = 2
    tau: float = 0.0125
    steps: int = 8
    method: str = "mfd"
    precond: str = "lsu"
    outer_tol: float = 1e-8
    inner_tol: float = 1e-2
    restart: int = 100
    out: str | None = None
    deterministic: bool = True
    seed: int = 0
    source: str = "manufactured"   # or "zero"

    def __post_init__(self):
        if self.mesh not in MESH_KINDS:
            raise ValueError(f"unknown mesh kind {self.mesh!r}")
        if self.method not in ("mfd", "fem"):
            raise ValueError(f"unknown method {self.method!r}")
        if self.precond not in mp.PRECONDITIONER_KINDS:
            raise ValueError(f"unknown preconditioner {self.precond!r}")
        if self.refine < 0:
            raise ValueError("refinement level must be >= 0")
        if self.tau <= 0 or self.steps < 0:
            raise ValueError("need tau > 0 and steps >= 0")
        if self.source not in ("manufactured", "free", "zero"):
            raise ValueError(f"unknown source {self.source!r}")

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "RunConfig":
        return cls(**json.loads(text))


def build_mesh(kind: str, refine: int) -> mm.TetMesh:
    """cube-pyramids: refine the 24-tet base; bcc: 2^refine cells per side."""
    if kind == "cube-pyramids":
        mesh = mm.build_base_cube_pyramids()
        for _ in range(refine):
            mesh = mm.refine_uniform(mesh)
        return mesh
    return mm.build_bcc_mesh(2 ** refine)


@dataclass
class Workspace:
    """Mesh, dual geometry, and operators for one resolution."""

    mesh: mm.TetMesh
    dual: object
    ops: mo.MfdOperators
    nondegenerate: bool
    substituted: bool = False   # true when a degenerate mesh was replaced


_WORKSPACES: dict[tuple[str, int], Workspace] = {}


def get_workspace(kind: str, refine: int) -> Workspace:
    """Build (and cache) the geometry for a mesh family and level.

    If the requested mesh fails the non-degeneracy check, the bcc family
    at the matching resolution is substituted and flagged in the report.
    """
    key = (kind, refine)
    if key in _WORKSPACES:
        return _WORKSPACES[key]
    mesh = build_mesh(kind, refine)
    report = check_nondegenerate(mesh)
    substituted = False
    if not report.passed and kind != "bcc":
        mesh = build_mesh("bcc", refine)
        report = check_nondegenerate(mesh)
        substituted = True
    dual = build_dual(mesh)
    ops = mo.build_operators(mesh, dual)
    ws = Workspace(mesh=mesh, dual=dual, ops=ops,
                   nondegenerate=report.passed, substituted=substituted)
    _WORKSPACES[key] = ws
    return ws


def initial_state(ws: Workspace, source: str) -> mo.StateVector:
    """Manufactured: interpolants with the exact-curl flux (div-free).

    "free": the same fields with zeroed boundary entries, for
    conservation studies with homogeneous data and no current.
    "zero": all zeros.
    """
    state = mo.StateVector.zeros(ws.mesh)
    if source == "zero":
        return state
    ms = ManufacturedSolution()
    state.e = mo.interpolate_e_edges(ws.mesh, ms.e, 0.0)
    state.p = mo.interpolate_p_nodes(ws.mesh, ms.p, 0.0)
    if source == "free":
        state.e[ws.mesh.boundary_edge] = 0.0
        state.p[ws.mesh.boundary_vertex] = 0.0
    state.b = ws.ops.curl_p @ state.e
    return state


def _build_system(ws: Workspace, config: RunConfig):
    if config.method == "mfd":
        system = mo.assemble_system(ws.ops, config.tau)
        fact = mp.build_factorization(ws.ops, config.tau)
    else:
        masses = mf.assemble_consistent_masses(ws.mesh)
        system = mf.assemble_fe_system(ws.ops, masses, config.tau)
        fact = mf.build_fe_factorization(ws.ops, masses, config.tau)
    inner = mp.InnerSolverConfig(tol=config.inner_tol)
    pre = (None if config.precond == "none"
           else mp.make_preconditioner(config.precond, fact, inner))
    return system, pre


def run_solve(config: RunConfig, ws: Workspace | None = None) -> dict:
    """Advance `steps` Crank-Nicolson steps and collect the full report."""
    ws = ws or get_workspace(config.mesh, config.refine)
    ms = ManufacturedSolution() if config.source == "manufactured" else None
    system, pre = _build_system(ws, config)
    cfg = KrylovConfig(tol=config.outer_tol, restart=config.restart)
    mesh, dual, ops = ws.mesh, ws.dual, ws.ops
    maps = ops.maps

    state = initial_state(ws, config.source)
    interp_b_div = 0.0
    if ms is not None:
        b_interp = mo.interpolate_b_faces(mesh, ms.b, 0.0, dual)
        div_scale = max(float(np.abs(ops.div_d).sum(axis=1).max()), 1e-300)
        interp_b_div = float(
            np.abs(ops.div_d @ b_interp).max()
            / (div_scale * max(np.abs(b_interp).max(), 1e-300))
        )

    def errors(st, t):
        if ms is None:
            return None
        w_b, w_e, w_p = mo.lumped_weights(dual)
        return {
            "errE": mf.reconstruction_error_e(mesh, st.e, ms.e, t),
            "errB": mf.reconstruction_error_b(mesh, st.b, ms.b, t),
            "errE_lumped": mo.lumped_norm(
                st.e - mo.interpolate_e_edges(mesh, ms.e, t), w_e
            ),
            "errB_lumped": mo.lumped_norm(
                st.b - mo.interpolate_b_faces(mesh, ms.b, t, dual), w_b
            ),
        }

    e0 = mo.energy(state, dual)
    per_step = []
    err_now = errors(state, 0.0)
    err_max = dict(err_now) if err_now else None
    div_b_max = float(np.abs(ops.div_d @ state.b).max())
    nonconverged = 0
    zero_j = np.zeros(mesh.n_edges)
    wall = 0.0

    for n in range(1, config.steps + 1):
        t_prev, t_next = (n - 1) * config.tau, n * config.tau
        if ms is not None:
            j_prev = mo.project_current(mesh, ms.j, t_prev)
            j_curr = mo.project_current(mesh, ms.j, t_next)
            bc_e = mo.interpolate_e_edges(mesh, ms.e, t_next)[maps.boundary_edges]
            bc_p = mo.interpolate_p_nodes(mesh, ms.p, t_next)[maps.boundary_vertices]
        else:
            j_prev = j_curr = zero_j
            bc_e = np.zeros(len(maps.boundary_edges))
            bc_p = np.zeros(len(maps.boundary_vertices))
        t0 = time.perf_counter()
        res = mo.step_crank_nicolson(
            system, state, j_prev, j_curr, bc_e, bc_p, cfg, preconditioner=pre
        )
        wall += time.perf_counter() - t0
        state = res.state
        if not res.report.converged:
            nonconverged += 1
        div_b_max = max(div_b_max, res.div_b_max)
        err_now = errors(state, t_next)
        if err_now:
            for key, val in err_now.items():
                err_max[key] = max(err_max[key], val)
        per_step.append({
            "step": n,
            "iterations": res.report.iterations,
            "residual": res.report.final_residual,
            "divB_max": res.div_b_max,
            "energy": mo.energy(state, dual),
        })

    iters = [s["iterations"] for s in per_step]
    energy_drift = 0.0
    if per_step and e0 > 0:
        energy_drift = max(abs(s["energy"] - e0) / e0 for s in per_step)
    config_dict = asdict(config)
    config_dict.pop("out")  # not part of the run's identity
    report = {
        "config": config_dict,
        "mesh_info": {
            "vertices": mesh.n_vertices,
            "edges": mesh.n_edges,
            "faces": mesh.n_faces,
            "tets": mesh.n_tets,
            "h": mesh.h,
            "substituted": ws.substituted,
        },
        "steps": per_step,
        "iters_mean": int(round(np.mean(iters))) if iters else 0,
        "iters_raw": float(np.mean(iters)) if iters else 0.0,
        "divB_max": div_b_max,
        "initial_interpolant_divB": interp_b_div,
        "energy_drift": energy_drift,
        "nonconverged_steps": nonconverged,
        "seconds_per_step": 0.0 if config.deterministic else wall / max(len(iters), 1),
        "wall_seconds": 0.0 if config.deterministic else wall,
    }
    if err_max:
        report["errors"] = err_max
    return report


def run_convergence(refines=(2, 3, 4), tau: float = 0.0125, steps: int = 8,
                    methods=("mfd", "fem"), mesh_kind: str = "cube-pyramids",
                    precond: str = "lsu") -> dict:
    """Error decay across a refinement series, per method."""
    rows = []
    for method in methods:
        series = []
        for refine in refines:
            config = RunConfig(mesh=mesh_kind, refine=refine, tau=tau,
                               steps=steps, method=method, precond=precond)
            rep = run_solve(config)
            series.append({
                "refine": refine,
                "h": rep["mesh_info"]["h"],
                "errE": rep["errors"]["errE"],
                "errB": rep["errors"]["errB"],
                "iters_raw": rep["iters_raw"],
                "divB_max": rep["divB_max"],
            })
        for prev, curr in zip(series, series[1:]):
            curr["ratioE"] = prev["errE"] / curr["errE"]
            curr["ratioB"] = prev["errB"] / curr["errB"]
        rows.append({"method": method, "series": series})
    return {"tau": tau, "steps": steps, "results": rows}


def run_sweep(taus=(0.2, 0.1, 0.05, 0.025, 0.0125), refines=(2, 3, 4),
              precond: str = "lsu", method: str = "mfd",
              mesh_kind: str = "cube-pyramids", outer_tol: float = 1e-8,
              inner_tol: float = 1e-2, restart: int = 100,
              final_time: float = 1.0) -> dict:
    """Iteration-count grid over (tau, h), averaged over steps to t=1."""
    cells = []
    for tau in taus:
        for refine in refines:
            steps = max(1, int(round(final_time / tau)))
            config = RunConfig(mesh=mesh_kind, refine=refine, tau=tau,
                               steps=steps, method=method, precond=precond,
                               outer_tol=outer_tol, inner_tol=inner_tol,
                               restart=restart)
            rep = run_solve(config)
            cells.append({
                "tau": tau,
                "refine": refine,
                "h": rep["mesh_info"]["h"],
                "iters_mean": rep["iters_mean"],
                "iters_raw": rep["iters_raw"],
                "divB_max": rep["divB_max"],
                "errE": rep["errors"]["errE"],
                "errB": rep["errors"]["errB"],
                "energy_drift": rep["energy_drift"],
                "nonconverged_steps": rep["nonconverged_steps"],
                "seconds_per_step": rep["seconds_per_step"],
            })
    return {
        "method": method,
        "precond": precond,
        "taus": list(taus),
        "refines": list(refines),
        "cells": cells,
    }


def sweep_table_csv(sweep: dict) -> str:
    """Table layout: one row per tau, one column per h, rounded means."""
    refines = sweep["refines"]
    header = "tau," + ",".join(f"h=1/{2 ** r}" for r in refines)
    lines = [header]
    for tau in sweep["taus"]:
        vals = [c["iters_mean"] for c in sweep["cells"] if c["tau"] == tau]
        lines.append(f"{tau:g}," + ",".join(str(v) for v in vals))
    return "\n".join(lines) + "\n"


def run_timing(refines=(2, 3, 4), tau: float = 0.1, steps: int = 10,
               precond: str = "lsu", method: str = "mfd") -> dict:
    """Per-step solve time versus problem size, with a power-law fit."""
    rows = []
    for refine in refines:
        config = RunConfig(refine=refine, tau=tau, steps=steps, method=method,
                           precond=precond, deterministic=False)
        ws = get_workspace(config.mesh, refine)
        rep = run_solve(config, ws)
        n_dofs = int(sum(ws.ops.dims))
        rows.append({
            "refine": refine,
            "dofs": n_dofs,
            "seconds_per_step": rep["seconds_per_step"],
            "iters_raw": rep["iters_raw"],
        })
    logs_n = np.log([r["dofs"] for r in rows])
    logs_t = np.log([max(r["seconds_per_step"], 1e-9) for r in rows])
    exponent = float(np.polyfit(logs_n, logs_t, 1)[0])
    return {"rows": rows, "scaling_exponent": exponent,
            "tau": tau, "steps": steps, "precond": precond, "method": method}


def flat_csv_rows(cells: list[dict]) -> str:
    lines = [CSV_HEADER]
    for c in cells:
        lines.append(
            f"{c['tau']:.17g},{c['h']:.17g},{c['iters_mean']},"
            f"{c['iters_raw']:.17g},{c['errE']:.17g},{c['errB']:.17g},"
            f"{c['divB_max']:.17g},{c['energy_drift']:.17g},"
            f"{c['seconds_per_step']:.17g}"
        )
    return "\n".join(lines) + "\n"


def emit_csv(path, cells: list[dict]) -> None:
    with open(path, "w") as fh:
        fh.write(flat_csv_rows(cells))


def emit_json(path, obj) -> None:
    with open(path, "w") as fh:
        json.dump(obj, fh, sort_keys=True, indent=2)
        fh.write("\n")
