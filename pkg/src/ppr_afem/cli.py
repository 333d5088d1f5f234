"""Command-line front end.

Subcommands: ``run``, ``recover``, ``rates``, ``mesh-info`` and ``catalog``.
Exit status is 0 on success, 1 on runtime failure and 2 on usage errors.
"""
from __future__ import annotations

import argparse
import contextlib
import io
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np
from scipy.io import mmwrite

from . import __version__
from .adaptivity import VARIANTS, AdaptError, AdaptiveConfig, RunHistory, adapt
from .benchmarks import CATALOG, catalog, sample_grid_csv
from .fespace import FeSpace, read_field_csv, write_field_csv
from .mesh import mesh_size, read_mesh, write_mesh
from .recovery import (RecoveryError, build_diff_matrices, recover_gradient,
                       recover_hessian, recover_simple_average)

log = logging.getLogger("ppr_afem")

RUN_DEFAULTS = {
    "problem": "crack",
    "degree": None,
    "zeta": 0.2,
    "max_dofs": 100_000,
    "max_iterations": 1000,
    "variant": "ppr",
    "out": "afem_out",
    "seed": 0,
    "ratio": 1000.0,
    "threads": None,
    "timings": False,
}


class UsageError(Exception):
    pass


# --------------------------------------------------------------------------
# output helpers

class _Outputs:
    """Write files as ``<name>.partial`` and rename them once the command
    has succeeded."""

    def __init__(self, directory):
        self.dir = Path(directory)
        self.dir.mkdir(parents=True, exist_ok=True)
        self.pending = []

    def write(self, name, text):
        path = self.dir / (name + ".partial")
        path.write_text(text)
        self.pending.append(path)
        return path

    def commit(self):
        for p in self.pending:
            p.replace(p.with_name(p.name[: -len(".partial")]))
        self.pending = []


def _fmt(v):
    return "nan" if v is None else f"{v:.6g}"


@contextlib.contextmanager
def _threads(n):
    if n is None:
        env = os.environ.get("AFEM_THREADS")
        n = int(env) if env else None
    if n is None:
        yield
        return
    if n < 1:
        raise UsageError("--threads must be at least 1")
    from threadpoolctl import threadpool_limits
    with threadpool_limits(limits=n):
        yield


# --------------------------------------------------------------------------
# run

def _run_config(args):
    cfg = dict(RUN_DEFAULTS)
    if args.config:
        try:
            loaded = json.loads(Path(args.config).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise UsageError(f"cannot read config {args.config}: {exc}") from None
        if not isinstance(loaded, dict):
            raise UsageError("config file must hold a JSON object")
        unknown = set(loaded) - set(cfg)
        if unknown:
            raise UsageError(f"unknown config key(s): {', '.join(sorted(unknown))}")
        cfg.update(loaded)
    for key in cfg:
        v = getattr(args, key, None)
        if v is not None:
            cfg[key] = v
    if cfg["problem"] not in CATALOG:
        raise UsageError(f"unknown problem {cfg['problem']!r}; choose from {', '.join(CATALOG)}")
    if cfg["variant"] not in VARIANTS:
        raise UsageError(f"unknown variant {cfg['variant']!r}")
    try:
        AdaptiveConfig(cfg["zeta"], cfg["max_dofs"], cfg["max_iterations"],
                       cfg["degree"], cfg["variant"])
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    return cfg


def cmd_run(args):
    cfg = _run_config(args)
    if args.show_config:
        print(json.dumps(cfg, indent=1, sort_keys=True))
        return 0
    params = {"ratio": cfg["ratio"]} if cfg["problem"] == "kellogg_quadrant" else {}
    problem = catalog(cfg["problem"], **params)
    config = AdaptiveConfig(cfg["zeta"], cfg["max_dofs"], cfg["max_iterations"],
                            cfg["degree"], cfg["variant"])
    out = _Outputs(cfg["out"])
    status = 0
    with _threads(cfg["threads"]):
        try:
            history = adapt(problem, config)
        except AdaptError as exc:
            print(f"error: {exc}", file=sys.stderr)
            history, status = exc.history, 1
        except (RecoveryError, ValueError, RuntimeError) as exc:
            print(f"error: {exc}", file=sys.stderr)
            return 1
    # wall times make the table irreproducible; by default they go to the JSON only
    out.write("history.csv", history.to_csv(timings=bool(cfg["timings"])))
    out.write("history.json", history.to_json())
    out.write("config.json", json.dumps(cfg, indent=1, sort_keys=True) + "\n")
    if history.final_mesh is not None:
        node, ele = write_mesh(history.final_mesh)
        out.write("mesh.node", node)
        out.write("mesh.ele", ele)
        out.write("solution.csv", write_field_csv(history.final_field))
    if status:
        return status
    out.commit()
    last = history.records[-1]
    print(f"final N={last.ndofs} eta={_fmt(last.eta)} err={_fmt(last.energy_error)} "
          f"kappa={_fmt(last.eff_index)}")
    return 0


# --------------------------------------------------------------------------
# recover

def _load_mesh(node, ele):
    try:
        return read_mesh(Path(node).read_text(), Path(ele).read_text())
    except OSError as exc:
        raise RuntimeError(f"cannot read mesh: {exc}") from None


def cmd_recover(args):
    mesh = _load_mesh(args.node, args.ele)
    space = FeSpace(mesh, args.degree)
    try:
        text = Path(args.field).read_text()
    except OSError as exc:
        raise RuntimeError(f"cannot read field: {exc}") from None
    field = read_field_csv(space, text)
    out = _Outputs(args.out)
    with _threads(args.threads):
        if args.variant == "simple_average":
            g = recover_simple_average(space, field)
        else:
            g = recover_gradient(space, field)
        out.write("grad_x.csv", write_field_csv(g.x))
        out.write("grad_y.csv", write_field_csv(g.y))
        if args.hessian:
            H = recover_hessian(space, field, symmetrize=args.symmetrize)
            for name in ("xx", "xy", "yx", "yy"):
                out.write(f"hess_{name}.csv", write_field_csv(getattr(H, name)))
        if args.matrices:
            B = build_diff_matrices(space)
            for name, M in (("bx", B.bx), ("by", B.by)):
                buf = io.BytesIO()
                mmwrite(buf, M.tocoo())
                out.write(f"{name}.mtx", buf.getvalue().decode())
    out.commit()
    print(f"recovered {space.n_dofs} dofs into {out.dir}")
    return 0


# --------------------------------------------------------------------------
# rates

def cmd_rates(args):
    status = 0
    for path in args.history:
        try:
            hist = RunHistory.from_csv(Path(path).read_text())
        except OSError as exc:
            raise RuntimeError(f"cannot read {path}: {exc}") from None
        if len(hist) < 3:
            print(f"{path}: need at least 3 history rows, found {len(hist)}", file=sys.stderr)
            status = 1
            continue
        s = hist.slopes(args.window)
        kappa = [k for k in hist.column("eff_index") if k is not None]
        parts = [f"{name}_slope={_fmt(s[name])}" for name in ("eta", "energy_error", "recovered_error")]
        parts.append(f"kappa_final={_fmt(kappa[-1] if kappa else None)}")
        print(f"{path}: " + " ".join(parts))
    return status


# --------------------------------------------------------------------------
# mesh-info / catalog

def cmd_mesh_info(args):
    if args.problem:
        mesh = catalog(args.problem).initial_mesh()
    elif args.node and args.ele:
        mesh = _load_mesh(args.node, args.ele)
    else:
        raise UsageError("give --problem or both --node and --ele")
    h, hmin, angle = mesh_size(mesh)
    ok = mesh.check_conformity()
    print(f"vertices={mesh.n_vertices} triangles={mesh.n_triangles} "
          f"boundary_edges={len(mesh.boundary_edges)} h={h:.6g} h_min={hmin:.6g} "
          f"min_angle_deg={np.degrees(angle):.4f} conforming={ok}")
    if args.out:
        out = _Outputs(args.out)
        node, ele = write_mesh(mesh)
        out.write("mesh.node", node)
        out.write("mesh.ele", ele)
        out.commit()
    return 0


def cmd_catalog(args):
    if args.grid is None:
        for name in CATALOG:
            p = catalog(name)
            extra = " ".join(f"{k}={v}" for k, v in p.params.items() if k in ("ratio", "mu", "a", "r0"))
            print(f"{name}: domain={p.domain_tag} degree={p.degree} "
                  f"triangles={p.initial_mesh().n_triangles} {extra}".rstrip())
        return 0
    if args.problem is None:
        raise UsageError("--grid needs --problem")
    if args.grid < 1:
        raise UsageError("--grid must be positive")
    text = sample_grid_csv(catalog(args.problem), args.grid)
    if args.out:
        out = _Outputs(Path(args.out).parent or ".")
        out.write(Path(args.out).name, text)
        out.commit()
    else:
        sys.stdout.write(text)
    return 0


# --------------------------------------------------------------------------

def build_parser():
    p = argparse.ArgumentParser(prog="ppr-afem", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=__version__)
    p.add_argument("--log-level", default="WARNING",
                   choices=["DEBUG", "INFO", "WARNING", "ERROR"])
    sub = p.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", help="adaptive solve-estimate-mark-refine study")
    r.add_argument("--problem", choices=CATALOG)
    r.add_argument("--degree", type=int, choices=(1, 2))
    r.add_argument("--zeta", "--theta", dest="zeta", type=float,
                   help="bulk marking parameter in (0, 1] (default 0.2)")
    r.add_argument("--max-dofs", dest="max_dofs", type=int)
    r.add_argument("--max-iterations", dest="max_iterations", type=int)
    r.add_argument("--variant", choices=VARIANTS)
    r.add_argument("--ratio", type=float, help="coefficient jump for kellogg_quadrant")
    r.add_argument("--out")
    r.add_argument("--seed", type=int)
    r.add_argument("--threads", type=int)
    r.add_argument("--config", help="JSON file with defaults (flags win)")
    r.add_argument("--show-config", action="store_true", help="print the merged config and exit")
    r.add_argument("--timings", action="store_true", default=None,
                   help="also write wall times into history.csv")
    r.set_defaults(func=cmd_run)

    c = sub.add_parser("recover", help="recover gradient (and Hessian) of a nodal field")
    c.add_argument("--node", required=True)
    c.add_argument("--ele", required=True)
    c.add_argument("--field", required=True, help="CSV with header dof,x,y,value")
    c.add_argument("--degree", type=int, choices=(1, 2), default=1)
    c.add_argument("--variant", choices=VARIANTS, default="ppr")
    c.add_argument("--hessian", action="store_true")
    c.add_argument("--symmetrize", action="store_true")
    c.add_argument("--matrices", action="store_true", help="also export B_x, B_y (MatrixMarket)")
    c.add_argument("--out", default="recovered")
    c.add_argument("--threads", type=int)
    c.set_defaults(func=cmd_recover)

    t = sub.add_parser("rates", help="fit convergence slopes of history CSV files")
    t.add_argument("history", nargs="+")
    t.add_argument("--window", type=int, default=10)
    t.set_defaults(func=cmd_rates)

    m = sub.add_parser("mesh-info", help="summarize a mesh")
    m.add_argument("--problem", choices=CATALOG)
    m.add_argument("--node")
    m.add_argument("--ele")
    m.add_argument("--out", help="directory to write the mesh files to")
    m.set_defaults(func=cmd_mesh_info)

    g = sub.add_parser("catalog", help="list problems or sample an exact solution")
    g.add_argument("--problem", choices=CATALOG)
    g.add_argument("--grid", type=int, help="sample on an (n+1) x (n+1) grid")
    g.add_argument("--out")
    g.set_defaults(func=cmd_catalog)
    return p


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=getattr(logging, args.log_level), format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"{parser.prog}: error: {exc}", file=sys.stderr)
        return 2
    except (RuntimeError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
