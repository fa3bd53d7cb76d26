"""Command-line driver for solves and convergence studies.

Subcommands
-----------
solve             sweep over degrees and levels, write logs, VTK and potentials
convergence       same sweep, logs only, prints estimated orders
export-geometry   write a geometry (file or built-in) in the text or VTK format
check-geometry    report topology and matching defects of a geometry
"""

from __future__ import annotations

import argparse
import logging
import sys
import time
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .assembly import assemble_dense, compute_rhs
from .export import export_vtk, log_name, write_log, write_potential_csv
from .geometry import (Geometry, check_matching, load_geometry, save_geometry, shipped_sphere,
                       surface_area, transform)
from .h2 import AdmissibilityParams, assemble_h2
from .operators import dipole_field, evaluate_potential, pde_from_name, point_source
from .solver import cg, gmres
from .spaces import build_discretization

__all__ = ["EvalGrid", "RunConfig", "make_sphere_grid", "run_solve", "estimated_orders", "main"]

log = logging.getLogger("igabem")


@dataclass
class EvalGrid:
    points: np.ndarray
    meta: dict = field(default_factory=dict)

    def __len__(self):
        return len(self.points)


def make_sphere_grid(radius: float, n: int, center=(0.0, 0.0, 0.0)) -> EvalGrid:
    """``n`` latitudes times ``n`` longitudes on a sphere, poles excluded.

    Polar angles are ``pi (k + 1/2) / n`` and longitudes ``2 pi j / n``.
    """
    if not radius > 0 or n < 1:
        raise ValueError("need radius > 0 and n >= 1")
    theta = np.pi * (np.arange(n) + 0.5) / n
    phi = 2.0 * np.pi * np.arange(n) / n
    th, ph = np.meshgrid(theta, phi, indexing="ij")
    unit = np.stack([np.sin(th) * np.cos(ph), np.sin(th) * np.sin(ph), np.cos(th)], axis=-1)
    pts = radius * unit.reshape(-1, 3) + np.asarray(center, dtype=float)
    return EvalGrid(pts, {"kind": "sphere", "radius": radius, "n": n, "center": tuple(center)})


def _warn_if_close(grid: EvalGrid, d):
    surf = d.far_samples(d.default_order("far"))["x"].reshape(-1, 3)
    h = 2.0 ** (-d.level)
    for chunk in np.array_split(grid.points, max(1, len(grid.points) // 64)):
        dist = np.linalg.norm(chunk[:, None, :] - surf[None], axis=-1).min()
        if dist < 0.5 * h * 0.5:
            warnings.warn(f"evaluation point within {dist:.2e} of the surface; accuracy degrades",
                          stacklevel=2)
            return


@dataclass
class RunConfig:
    """Parameters of a sweep over degrees ``P`` and levels ``L``."""

    geometry: str = "sphere"
    pde: str = "laplace"
    wavenumber: complex = 0.0
    degrees: tuple = (1, 1)
    levels: tuple = (0, 2)
    knot_repetition: int = 1
    multipole_degree: int = 8
    eta: float = 1.6
    quad_order: int | None = None
    near_order: int | None = None
    tol: float = 1e-8
    max_iter: int = 1000
    restart: int = 30
    solver: str = "gmres"
    dense: bool = False
    out: str = "out"
    source: tuple | None = None
    moment: tuple = (0.0, 0.0, 0.01)
    grid_radius: float | None = None
    grid_n: int = 10
    translate: tuple = (0.0, 0.0, 0.0)
    scale: float = 1.0
    workers: int = 1
    write_fields: bool = True

    def __post_init__(self):
        kind = self.pde.lower()
        if kind not in ("laplace", "helmholtz", "maxwell"):
            raise ValueError(f"unknown pde {self.pde!r}")
        if kind == "laplace" and complex(self.wavenumber) != 0:
            raise ValueError("the Laplace problem takes no wavenumber")
        if kind == "maxwell" and complex(self.wavenumber) == 0:
            raise ValueError("Maxwell needs a nonzero wavenumber")
        for name in ("degrees", "levels"):
            a, b = getattr(self, name)
            if a > b or a < 0:
                raise ValueError(f"empty or negative {name} range {a}..{b}")

    @property
    def pde_kind(self):
        return pde_from_name(self.pde, self.wavenumber)

    def default_source(self):
        if self.source is not None:
            return np.asarray(self.source, dtype=float)
        return np.array([1.0, 1.0, 0.0]) if self.pde.lower() == "maxwell" else np.array([0.0, 0.0, 2.0])

    def default_radius(self):
        if self.grid_radius is not None:
            return self.grid_radius
        return 6.0 if self.pde.lower() == "maxwell" else 0.5


def load_named_geometry(name: str, scale=1.0, translate=(0.0, 0.0, 0.0)) -> Geometry:
    """Geometry from a file path or the built-in name ``sphere``."""
    geom = shipped_sphere() if name == "sphere" else load_geometry(name)
    if scale != 1.0 or any(translate):
        geom = transform(geom, scale, translate)
    return geom


def reference_field(cfg: RunConfig):
    """Boundary data and exact solution of the benchmark problem.

    Laplace and Helmholtz use the fundamental solution centred at the source
    point, Maxwell the field of a Hertzian dipole.
    """
    src = cfg.default_source()
    kind = cfg.pde.lower()
    if kind == "maxwell":
        return dipole_field(src, cfg.moment, complex(cfg.wavenumber))
    return point_source(src, None if kind == "laplace" else complex(cfg.wavenumber))


def _fine_samples(d_fine, order):
    fs = d_fine.far_samples(order)
    E, nq = fs["x"].shape[:2]
    N = d_fine.n_per_dir
    e = np.repeat(np.arange(E), nq)
    t = np.tile(fs["t"], (E, 1))
    u = (d_fine.element_ix[e] + t[:, 0]) / N
    v = (d_fine.element_iy[e] + t[:, 1]) / N
    return d_fine.element_patch[e], u, v, (fs["sqrtg"] * fs["w"][None, :]).ravel()


def density_difference(d_coarse, rho_coarse, d_fine, rho_fine) -> float:
    """Discrete ``L2`` norm of the difference of two densities on the surface."""
    patch, u, v, w = _fine_samples(d_fine, d_fine.default_order("far"))
    a = d_coarse.evaluate_density(rho_coarse, patch, u, v)
    b = d_fine.evaluate_density(rho_fine, patch, u, v)
    diff = np.abs(a - b) ** 2
    if diff.ndim > 1:
        diff = diff.sum(axis=-1)
    return float(np.sqrt(np.sum(w * diff)))


def solve_cell(cfg: RunConfig, geom: Geometry, P: int, L: int, grid: EvalGrid, fun):
    """One sweep cell: discretize, assemble, solve and evaluate."""
    d = build_discretization(geom, cfg.pde_kind, P, cfg.knot_repetition, L)
    rhs = compute_rhs(d, fun)
    t0 = time.perf_counter()
    if cfg.dense:
        op = assemble_dense(d, cfg.quad_order, cfg.near_order, workers=cfg.workers)
    else:
        params = AdmissibilityParams(eta=cfg.eta, m=cfg.multipole_degree)
        op = assemble_h2(d, params, cfg.quad_order, cfg.near_order, workers=cfg.workers)
    t_mat = time.perf_counter() - t0
    if cfg.solver == "cg":
        rho, stats = cg(op, rhs, cfg.tol, cfg.max_iter)
    else:
        rho, stats = gmres(op, rhs, cfg.tol, cfg.max_iter, cfg.restart)
    pot = evaluate_potential(d, rho, grid.points)
    ref = fun(grid.points)
    err = np.abs(pot - ref)
    if err.ndim > 1:
        err = np.linalg.norm(err, axis=-1)
    return {"disc": d, "rho": rho, "stats": stats, "t_mat": t_mat, "potential": pot,
            "error": float(err.max()), "n_dofs": d.n_dofs}


def estimated_orders(levels, errors):
    """Orders ``log2(e_L / e_{L+1})`` between consecutive levels."""
    e = np.asarray(errors, dtype=float)
    return np.log2(e[:-1] / e[1:]) / np.diff(np.asarray(levels, dtype=float))


def run_solve(cfg: RunConfig) -> dict:
    """Run the sweep and write all artifacts below ``cfg.out``.

    Returns a mapping ``P -> list of per-level results``; failed cells carry
    an ``"failure"`` entry instead of numbers.
    """
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    geom = load_named_geometry(cfg.geometry, cfg.scale, cfg.translate)
    fun = reference_field(cfg)
    grid = make_sphere_grid(cfg.default_radius(), cfg.grid_n)
    kind = cfg.pde_kind
    results = {}
    for P in range(cfg.degrees[0], cfg.degrees[1] + 1):
        cells = []
        for L in range(cfg.levels[0], cfg.levels[1] + 1):
            try:
                res = solve_cell(cfg, geom, P, L, grid, fun)
            except Exception as exc:  # a failing cell must not end the sweep
                log.error("P=%d L=%d failed: %s", P, L, exc)
                cells.append({"L": L, "failure": repr(exc)})
                continue
            res["L"] = L
            if L == cfg.levels[0]:
                _warn_if_close(grid, res["disc"])
            st = res["stats"]
            log.info("%s P=%d L=%d dofs=%d error=%.3e iters=%d converged=%s t_mat=%.2fs",
                     kind.name, P, L, res["n_dofs"], res["error"], st.iterations, st.converged,
                     res["t_mat"])
            if cfg.write_fields:
                export_vtk(res["disc"], res["rho"], out / f"{kind.name}_P{P}_L{L}.vtk")
                write_potential_csv(grid.points, res["potential"], out / f"{kind.name}_P{P}_L{L}.csv")
            cells.append(res)
        rows = []
        ok = [c for c in cells if "failure" not in c]
        for a, b in zip(ok, ok[1:] + [None]):
            if b is not None and b["L"] == a["L"] + 1:
                a["error_rho"] = density_difference(a["disc"], a["rho"], b["disc"], b["rho"])
            else:
                a["error_rho"] = float("nan")
            rows.append((a["L"], a["error"], a["error_rho"], a["t_mat"]))
        write_log(rows, out / log_name(kind, P))
        for c in ok:  # free the heavy objects once logged
            c.pop("disc", None)
        results[P] = cells
    return results


# --------------------------------------------------------------------------
# argparse front end
# --------------------------------------------------------------------------
def _common(p: argparse.ArgumentParser):
    p.add_argument("--geometry", default="sphere", help="geometry file or 'sphere'")
    p.add_argument("--scale", type=float, default=1.0)
    p.add_argument("--translate", type=float, nargs=3, default=(0.0, 0.0, 0.0), metavar=("X", "Y", "Z"))


def _sweep_args(p: argparse.ArgumentParser):
    _common(p)
    p.add_argument("--pde", choices=("laplace", "helmholtz", "maxwell"), default="laplace")
    p.add_argument("--wavenumber", type=float, nargs=2, metavar=("RE", "IM"))
    p.add_argument("--degree-range", type=int, nargs=2, default=(1, 1), metavar=("A", "B"))
    p.add_argument("--level-range", type=int, nargs=2, default=(0, 2), metavar=("A", "B"))
    p.add_argument("--knot-repetition", type=int, default=1)
    p.add_argument("--multipole-degree", type=int, default=8)
    p.add_argument("--eta", type=float, default=1.6)
    p.add_argument("--quad-order", type=int, default=None, help="Gauss order of separated pairs")
    p.add_argument("--near-order", type=int, default=None, help="order of the singular rules")
    p.add_argument("--tol", type=float, default=1e-8)
    p.add_argument("--max-iter", type=int, default=1000)
    p.add_argument("--restart", type=int, default=30)
    p.add_argument("--solver", choices=("gmres", "cg"), default="gmres")
    p.add_argument("--dense-oracle", action="store_true", help="assemble dense instead of H2")
    p.add_argument("--source", type=float, nargs=3, default=None, metavar=("X", "Y", "Z"))
    p.add_argument("--moment", type=float, nargs=3, default=(0.0, 0.0, 0.01), metavar=("X", "Y", "Z"))
    p.add_argument("--grid-radius", type=float, default=None)
    p.add_argument("--grid-n", type=int, default=10)
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--out", default="out")


def config_from_args(args, write_fields=True) -> RunConfig:
    if args.pde != "laplace" and args.wavenumber is None:
        raise SystemExit(f"--wavenumber is required for {args.pde}")
    k = complex(*args.wavenumber) if args.wavenumber is not None else 0.0
    return RunConfig(
        geometry=args.geometry, pde=args.pde, wavenumber=k,
        degrees=tuple(args.degree_range), levels=tuple(args.level_range),
        knot_repetition=args.knot_repetition, multipole_degree=args.multipole_degree,
        eta=args.eta, quad_order=args.quad_order, near_order=args.near_order, tol=args.tol,
        max_iter=args.max_iter, restart=args.restart, solver=args.solver,
        dense=args.dense_oracle, out=args.out,
        source=tuple(args.source) if args.source is not None else None,
        moment=tuple(args.moment), grid_radius=args.grid_radius, grid_n=args.grid_n,
        translate=tuple(args.translate), scale=args.scale, workers=args.workers,
        write_fields=write_fields,
    )


def _all_converged(results) -> bool:
    return all("failure" not in c and c["stats"].converged for cells in results.values() for c in cells)


def _cmd_solve(args):
    results = run_solve(config_from_args(args))
    return 0 if _all_converged(results) else 1


def _cmd_convergence(args):
    cfg = config_from_args(args, write_fields=False)
    results = run_solve(cfg)
    for P, cells in results.items():
        ok = [c for c in cells if "failure" not in c]
        levels = [c["L"] for c in ok]
        errors = [c["error"] for c in ok]
        print(f"{cfg.pde_kind.name} P={P}")
        print("  L   dofs       error      order")
        orders = [float("nan")] + list(estimated_orders(levels, errors)) if len(ok) > 1 else [float("nan")] * len(ok)
        for c, o in zip(ok, orders):
            print(f"  {c['L']:<3d} {c['n_dofs']:<10d} {c['error']:.3e}  {o:6.2f}")
    return 0 if _all_converged(results) else 1


def _cmd_export_geometry(args):
    geom = load_named_geometry(args.geometry, args.scale, args.translate)
    out = Path(args.out)
    if args.format == "vtk":
        from .operators import LaplaceSingle
        from .spaces import Discretization

        d = Discretization(geom, LaplaceSingle(), 0, 1, args.level)
        export_vtk(d, np.zeros(d.n_dofs), out, n_sub=args.subdivisions)
    else:
        save_geometry(geom, out)
    print(out)
    return 0


def _cmd_check_geometry(args):
    geom = load_named_geometry(args.geometry, args.scale, args.translate)
    report = check_matching(geom)
    print(f"patches: {geom.n_patches}")
    print(f"glued edges: {len(geom.edges)} ({'closed' if geom.is_closed else 'open'} surface)")
    print(f"vertex groups: {len(geom.vertices)}")
    print(f"area: {surface_area(geom):.12g}")
    bad = list(report)
    for pa, pb, dev in bad:
        print(f"matching violation between patches {pa} and {pb}: deviation {dev:.3e}")
    print("matching condition: " + ("violated" if bad else "ok"))
    return 1 if bad else 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="igabem", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)
    p = sub.add_parser("solve", help="solve and write logs, VTK and potentials")
    _sweep_args(p)
    p.set_defaults(func=_cmd_solve)
    p = sub.add_parser("convergence", help="sweep and report estimated orders")
    _sweep_args(p)
    p.set_defaults(func=_cmd_convergence)
    p = sub.add_parser("export-geometry", help="write a geometry file or its VTK surface")
    _common(p)
    p.add_argument("--format", choices=("dat", "vtk"), default="dat")
    p.add_argument("--level", type=int, default=0)
    p.add_argument("--subdivisions", type=int, default=None)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_export_geometry)
    p = sub.add_parser("check-geometry", help="verify topology and the matching condition")
    _common(p)
    p.set_defaults(func=_cmd_check_geometry)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
