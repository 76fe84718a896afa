"""Command-line front end.

Exit codes: 0 pass, 1 verification failure, 2 usage or input error,
3 numerical failure (non-convergence).
"""

from __future__ import annotations

import argparse
import csv
import io
import sys
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import gunter
from .catalog import CATALOG, SUITE, builtin_surface, builtin_tube
from .eikonal_grid import Grid, format_grid, initialize_band, sdf_grid, solve
from .errors import (
    EpsilonValidationError,
    ExprSyntaxError,
    GridError,
    NoConvergence,
    PropnormalError,
)
from .suite import run_suite
from .tubular import TubularNeighborhood

EXIT_OK, EXIT_FAIL, EXIT_USAGE, EXIT_NUMERIC = 0, 1, 2, 3


class UsageError(Exception):
    pass


@dataclass
class RunConfig:
    command: str
    surface: str | None = None
    epsilon: float | None = None
    tolerances: gunter.Tolerances = gunter.Tolerances()
    samples: int = 500
    box: list | None = None
    h: float = 0.01
    band: float | None = None
    seed: int = 42
    field: str = "proper"
    points: str | None = None
    out: str | None = None


def g17(x):
    return format(float(x) + 0.0, ".17g")  # no "-0"


def _positive(kind):
    def conv(text):
        v = kind(text)
        if not v > 0:
            raise argparse.ArgumentTypeError(f"must be positive, got {text}")
        return v
    return conv


def build_parser():
    p = argparse.ArgumentParser(prog="propnormal", description=(
        "Proper extension of the unit normal of an implicit hypersurface, "
        "signed distance and eikonal solvers, and identity checks."))
    p.add_argument("command", choices=["normal", "counterexample", "verify", "sdf", "eikonal", "suite"])
    p.add_argument("--surface", help=f"surface description file or built-in name ({', '.join(CATALOG)})")
    p.add_argument("--eps", type=_positive(float), help="tube half-width")
    p.add_argument("--h", type=_positive(float), default=0.01, help="grid spacing")
    p.add_argument("--box", type=float, nargs="+", help="grid box lo1 hi1 ... lon hin")
    p.add_argument("--band", type=_positive(float), help="seed band width for eikonal")
    p.add_argument("--samples", type=_positive(int), default=None)
    p.add_argument("--seed", type=int, default=42)
    p.add_argument("--tol-asym", type=_positive(float), default=1e-5)
    p.add_argument("--tol-unit", type=_positive(float), default=1e-10)
    p.add_argument("--tol-autoparallel", type=_positive(float), default=1e-5)
    p.add_argument("--tol-gunter", type=_positive(float), default=1e-5)
    p.add_argument("--field", choices=["naive", "proper"], default="proper")
    p.add_argument("--points", help="CSV file of points")
    p.add_argument("--out", help="output path (default: stdout)")
    return p


def config_from_args(ns) -> RunConfig:
    tol = gunter.Tolerances(ns.tol_unit, ns.tol_asym, ns.tol_autoparallel, ns.tol_gunter)
    samples = ns.samples if ns.samples is not None else (200 if ns.command == "suite" else 500)
    return RunConfig(ns.command, ns.surface, ns.eps, tol, samples, ns.box, ns.h, ns.band,
                     ns.seed, ns.field, ns.points, ns.out)


# --------------------------------------------------------------------------
# helpers
# --------------------------------------------------------------------------

def load_any_surface(name_or_path):
    from .surface import load_surface

    if name_or_path is None:
        raise UsageError("--surface is required")
    if name_or_path in CATALOG:
        return builtin_surface(name_or_path)
    path = Path(name_or_path)
    if not path.exists():
        raise UsageError(f"{name_or_path!r} is neither a built-in surface nor a file")
    return load_surface(path)


def load_tube(cfg):
    if cfg.surface in CATALOG and (cfg.epsilon is None or cfg.epsilon == CATALOG[cfg.surface].epsilon):
        return builtin_tube(cfg.surface)
    s = load_any_surface(cfg.surface)
    if cfg.epsilon is None:
        raise UsageError("--eps is required for surface files")
    return TubularNeighborhood(s, cfg.epsilon, seed=cfg.seed)


def read_points(path, dim):
    rows = []
    with open(path, newline="", encoding="utf-8") as fh:
        for lineno, row in enumerate(csv.reader(fh), 1):
            cells = [c.strip() for c in row if c.strip()]
            if not cells or cells[0].startswith("#"):
                continue
            try:
                vals = [float(c) for c in cells]
            except ValueError:
                if lineno == 1:
                    continue  # header
                raise UsageError(f"{path}:{lineno}: non-numeric point {row}") from None
            if len(vals) != dim:
                raise UsageError(f"{path}:{lineno}: expected {dim} coordinates, got {len(vals)}")
            rows.append(vals)
    return np.array(rows, dtype=float).reshape(-1, dim)


class Output:
    """Collects text and writes it to ``--out`` or stdout."""

    def __init__(self, path):
        self.path = path
        self.buf = io.StringIO()

    def write(self, text=""):
        self.buf.write(text + "\n")

    def flush(self):
        if self.path:
            Path(self.path).write_text(self.buf.getvalue(), encoding="utf-8")
        else:
            sys.stdout.write(self.buf.getvalue())


# --------------------------------------------------------------------------
# commands
# --------------------------------------------------------------------------

def cmd_normal(cfg, out):
    s = load_any_surface(cfg.surface)
    if not cfg.points:
        raise UsageError("normal needs --points FILE.csv")
    P = read_points(cfg.points, s.dim)
    n = s.dim
    out.write(",".join([f"x{i + 1}" for i in range(n)] + [f"nu{i + 1}" for i in range(n)] + ["error"]))
    failed = 0
    for p in P:
        coords = [g17(c) for c in p]
        try:
            nu = s.normal(p)
            out.write(",".join(coords + [g17(c) for c in nu] + [""]))
        except (PropnormalError, ArithmeticError) as err:
            failed += 1
            msg = str(err).replace(",", ";")
            out.write(",".join(coords + [""] * n + [f"{type(err).__name__}: {msg}"]))
    return EXIT_FAIL if failed else EXIT_OK


def cmd_counterexample(cfg, out):
    s = builtin_surface("ellipse")
    pts = [[1.0, 1.0], [1.0, 0.0], [0.0, 1.0]]
    if cfg.points:
        pts = read_points(cfg.points, 2).tolist() + pts
    out.write(f"surface: {s.name}")
    out.write("x1,x2,d1N2,d1N2_closed,d2N1,d2N1_closed,d1N2-d2N1,defect")
    worst = 0.0
    for p in pts:
        smp = s.naive_sample(p)
        x1, x2 = p
        q = (x1 ** 2 + 4 * x2 ** 2) ** 1.5
        c12, c21 = -2 * x2 * x1 / q, -4 * x1 * x2 / q
        j12, j21 = smp.jacobian[0, 1], smp.jacobian[1, 0]
        defect = max(abs(j12 - c12), abs(j21 - c21))
        worst = max(worst, defect)
        out.write(",".join(g17(v) for v in (x1, x2, j12, c12, j21, c21, j12 - j21, defect)))
    agree = worst <= 1e-10
    out.write(f"max_defect={g17(worst)}")
    out.write(f"formulas_agree={'yes' if agree else 'no'}")
    return EXIT_OK if agree else EXIT_FAIL


def cmd_verify(cfg, out):
    tn = load_tube(cfg)
    rep = gunter.verify_properness(tn, cfg.samples, cfg.tolerances, cfg.field, cfg.seed)
    out.write(f"surface: {tn.surface.name}  epsilon: {g17(tn.epsilon)}")
    out.write(rep.render())
    out.write()
    out.write(rep.key_values())
    return EXIT_OK if rep.verdict == "proper" else EXIT_FAIL


def _grid_for(cfg, tn):
    s = tn.surface
    box = cfg.box if cfg.box is not None else [v for pair in zip(s.box_lo, s.box_hi) for v in pair]
    if len(box) != 2 * s.dim:
        raise UsageError(f"--box needs {2 * s.dim} numbers")
    return Grid.from_box(box[0::2], box[1::2], cfg.h)


def cmd_sdf(cfg, out):
    tn = load_tube(cfg)
    g = sdf_grid(_grid_for(cfg, tn), tn)
    if g.unreached == g.values.size:
        raise GridError("no grid node lies inside the tube: the surface misses the grid box")
    out.write(format_grid(g).rstrip("\n"))
    return EXIT_OK


def cmd_eikonal(cfg, out):
    tn = load_tube(cfg)
    g0 = _grid_for(cfg, tn)
    band = cfg.band if cfg.band is not None else min(6 * cfg.h, tn.epsilon / 2)
    g = solve(initialize_band(g0, tn, band))
    exact = sdf_grid(g0, tn)
    both = np.isfinite(exact.values) & np.isfinite(g.values)
    linf = float(np.max(np.abs(g.values[both] - exact.values[both]))) if both.any() else float("nan")
    out.write(format_grid(g).rstrip("\n"))
    report = (f"linf_vs_sdf={g17(linf)} linf_over_h={g17(linf / cfg.h)} nodes_compared={int(both.sum())} "
              f"unreached={g.unreached}")
    # the report goes to stdout when the grid has its own file, else to stderr
    if cfg.out:
        print(report)
    else:
        print(report, file=sys.stderr)
    return EXIT_OK


def cmd_suite(cfg, out):
    names = [cfg.surface] if cfg.surface else list(SUITE)
    for n in names:
        if n not in CATALOG:
            raise UsageError(f"suite runs built-in surfaces only; unknown {n!r}")
    results = run_suite(names, cfg.tolerances, cfg.samples, cfg.seed)
    for r in results:
        out.write(r.line())
    failed = [r for r in results if not r.passed]
    out.write(f"checks={len(results)} failed={len(failed)}")
    out.write("suite: " + ("PASS" if not failed else "FAIL (" + ", ".join(f"{r.scope}/{r.name}" for r in failed) + ")"))
    return EXIT_FAIL if failed else EXIT_OK


COMMANDS = {
    "normal": cmd_normal,
    "counterexample": cmd_counterexample,
    "verify": cmd_verify,
    "sdf": cmd_sdf,
    "eikonal": cmd_eikonal,
    "suite": cmd_suite,
}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        ns = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    cfg = config_from_args(ns)
    out = Output(cfg.out)
    try:
        code = COMMANDS[cfg.command](cfg, out)
    except (UsageError, ExprSyntaxError, GridError, KeyError, OSError) as err:
        print(f"propnormal: error: {err}", file=sys.stderr)
        return EXIT_USAGE
    except NoConvergence as err:
        print(f"propnormal: numerical failure: {err}", file=sys.stderr)
        return EXIT_NUMERIC
    except EpsilonValidationError as err:
        print(f"propnormal: {err}", file=sys.stderr)
        return EXIT_FAIL
    except (PropnormalError, ValueError, ArithmeticError) as err:
        print(f"propnormal: error: {err}", file=sys.stderr)
        return EXIT_USAGE
    out.flush()
    return code


if __name__ == "__main__":
    sys.exit(main())
