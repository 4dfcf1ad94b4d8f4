"""Command-line front end: ``wgbrinkman {convergence,solve,check}``.

Exit status: 0 on success, 1 on a numerical failure, 2 on a usage error.
Options may also come from an INI file (``--config``, section ``[run]``);
flags given on the command line win.
"""

from __future__ import annotations

import argparse
import configparser
import sys
from dataclasses import dataclass

import numpy as np

from . import __version__
from . import _kernels
from .checks import run_checks
from .mesh import FAMILIES, build_mesh, mesh_metrics
from .system import assemble, resolve_gradient_degree, solve
from .verify import StudyError, brinkman_2d_case, compute_errors, convergence_study, max_weak_divergence

EXIT_OK, EXIT_NUMERIC, EXIT_USAGE = 0, 1, 2

MODES = {"stab": True, "stabilized": True, "sf": False, "stabilizer-free": False}
DEFAULTS = {
    "family": "tri",
    "k": "1",
    "mode": "stab",
    "r": "",
    "levels": "4..6",
    "level": "3",
    "kappa": "1",
    "format": "table",
    "out": "",
    "seed": "0",
}


class UsageError(ValueError):
    pass


@dataclass(frozen=True)
class RunConfig:
    family: str
    k: int
    stabilized: bool
    r: int
    levels: tuple[int, ...]
    kappa: np.ndarray
    fmt: str
    out: str
    seed: int

    @property
    def mode(self) -> str:
        return "stab" if self.stabilized else "sf"

    @property
    def kappa_inv(self) -> np.ndarray:
        return np.linalg.inv(self.kappa)

    def header(self) -> dict:
        kap = self.kappa
        kappa = f"{kap[0, 0]:g}" if np.allclose(kap, kap[0, 0] * np.eye(2)) else ",".join(f"{x:g}" for x in kap.ravel())
        return {
            "family": self.family,
            "k": self.k,
            "r": self.r,
            "mode": self.mode,
            "levels": f"{self.levels[0]}..{self.levels[-1]}",
            "kappa": kappa,
            "seed": self.seed,
            "version": __version__,
        }


def parse_levels(text: str) -> tuple[int, ...]:
    text = text.strip()
    try:
        if ".." in text:
            a, b = text.split("..")
            levels = tuple(range(int(a), int(b) + 1))
        else:
            levels = (int(text),)
    except ValueError:
        raise UsageError(f"bad level range {text!r}; expected A..B") from None
    if not levels or levels[0] < 0:
        raise UsageError(f"level range {text!r} is empty or negative")
    return levels


def parse_kappa(text: str) -> np.ndarray:
    try:
        vals = [float(x) for x in text.split(",")]
    except ValueError:
        raise UsageError(f"bad kappa {text!r}") from None
    if len(vals) == 1:
        kap = vals[0] * np.eye(2)
    elif len(vals) == 4:
        kap = np.array(vals).reshape(2, 2)
    else:
        raise UsageError("kappa takes one value or four (a,b,c,d row-major)")
    if not np.allclose(kap, kap.T) or np.linalg.eigvalsh(kap)[0] <= 0:
        raise UsageError("kappa must be symmetric positive definite")
    return kap


def _merged(args: argparse.Namespace) -> dict:
    values = dict(DEFAULTS)
    if args.config:
        cp = configparser.ConfigParser()
        if not cp.read(args.config):
            raise UsageError(f"cannot read config file {args.config}")
        if cp.has_section("run"):
            unknown = set(cp["run"]) - set(DEFAULTS)
            if unknown:
                raise UsageError(f"unknown config keys: {', '.join(sorted(unknown))}")
            values.update(cp["run"])
    for key in DEFAULTS:
        v = getattr(args, key, None)
        if v is not None:
            values[key] = str(v)
    return values


def resolve_config(args: argparse.Namespace) -> tuple[RunConfig, dict]:
    v = _merged(args)
    if v["family"] not in FAMILIES:
        raise UsageError(f"unknown family {v['family']!r}")
    try:
        k = int(v["k"])
        seed = int(v["seed"])
        r = int(v["r"]) if v["r"] else None
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    if not 1 <= k <= 4:
        raise UsageError(f"k must be in 1..4, got {k}")
    if v["mode"] not in MODES:
        raise UsageError(f"unknown mode {v['mode']!r}")
    stabilized = MODES[v["mode"]]
    try:
        r = resolve_gradient_degree(k, stabilized, r)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    if v["format"] not in ("csv", "table"):
        raise UsageError(f"unknown format {v['format']!r}")
    cfg = RunConfig(v["family"], k, stabilized, r, parse_levels(v["levels"]), parse_kappa(v["kappa"]), v["format"], v["out"], seed)
    return cfg, v


# ---------------------------------------------------------------- commands


def cmd_convergence(cfg: RunConfig) -> int:
    case = brinkman_2d_case(cfg.kappa_inv, seed=cfg.seed)
    try:
        report = convergence_study(cfg.family, cfg.k, cfg.levels, cfg.r, cfg.stabilized, cfg.kappa_inv, case)
    except StudyError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    report.metadata.update({k: v for k, v in cfg.header().items() if k not in ("family", "k", "r", "mode")})
    text = report.to_csv() if cfg.fmt == "csv" else report.to_table()
    if cfg.out:
        with open(cfg.out, "w") as fh:
            fh.write(text)
        print(report.to_table(), end="")
    else:
        print(text, end="")
    return EXIT_OK


def cmd_solve(cfg: RunConfig, level: int, zero_rhs: bool, dump: str | None, dump_system: str | None) -> int:
    case = brinkman_2d_case(cfg.kappa_inv, seed=cfg.seed)
    stage = "mesh"
    try:
        mesh = build_mesh(cfg.family, level)
        stage = "assembly"
        f = None if zero_rhs else case.f
        system = assemble(mesh, cfg.k, cfg.r, cfg.kappa_inv, cfg.stabilized, f, load_exactness=cfg.k + case.degree)
        stage = "solve"
        sol = solve(system)
        stage = "errors"
        err = compute_errors(sol, case, cfg.r, cfg.kappa_inv, ops=system.ops)
    except Exception as exc:
        print(f"error: level {level}: {stage} failed: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    dm = system.dofmap
    h = mesh_metrics(mesh)[0]
    for key, val in cfg.header().items():
        if key != "levels":
            print(f"# {key} = {val}")
    print(f"level            {level}")
    print(f"h                {h:.6e}")
    print(f"cells            {mesh.n_cells}")
    print(f"edges            {mesh.n_edges}")
    print(f"velocity dofs    {dm.n_u}")
    print(f"pressure dofs    {dm.n_p}")
    print(f"unknowns         {dm.size}")
    print(f"residual         {sol.residual:.3e}")
    print(f"max div_w u_h    {max_weak_divergence(sol, system):.3e}")
    print(f"l2_velocity      {err.l2_velocity:.6e}")
    print(f"energy           {err.energy:.6e}")
    print(f"l2_pressure      {err.l2_pressure:.6e}")
    if dump:
        sol.dump(dump)
    if dump_system:
        system.dump(dump_system)
    return EXIT_OK


def cmd_check(seed: int) -> int:
    results = run_checks(seed)
    for res in results:
        print(res.line())
    failed = [r for r in results if not r.passed]
    if failed:
        print(f"first failure: {failed[0].name}: {failed[0].detail}", file=sys.stderr)
        return EXIT_NUMERIC
    return EXIT_OK


# ---------------------------------------------------------------- parser


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="INI file with a [run] section; flags override it")
    p.add_argument("--family", choices=sorted(FAMILIES))
    p.add_argument("--k", type=int, choices=range(1, 5), metavar="{1,2,3,4}")
    p.add_argument("--mode", choices=sorted(MODES))
    p.add_argument("--r", type=int, help="weak-gradient degree (default k-1 stabilized, k+3 stabilizer-free)")
    p.add_argument("--kappa", help="permeability: X or a,b,c,d (constant SPD matrix)")
    p.add_argument("--seed", type=int)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="wgbrinkman", description="Weak Galerkin solver for the Brinkman equations")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("--numpy", action="store_true", help="use the pure-numpy kernels")
    sub = parser.add_subparsers(dest="command", required=True)

    conv = sub.add_parser("convergence", help="run a convergence study")
    _common(conv)
    conv.add_argument("--levels", help="refinement levels A..B")
    conv.add_argument("--format", choices=("csv", "table"))
    conv.add_argument("--out", help="write the report here instead of stdout")

    sol = sub.add_parser("solve", help="solve on one mesh level")
    _common(sol)
    sol.add_argument("--level", type=int)
    sol.add_argument("--zero-rhs", action="store_true", help="solve with f = 0")
    sol.add_argument("--dump", help="write per-cell solution coefficients")
    sol.add_argument("--dump-system", help="write the assembled matrix and load vector")

    chk = sub.add_parser("check", help="run the fast invariant suite")
    chk.add_argument("--seed", type=int, default=0)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.numpy:
        _kernels.set_backend(False)
    if args.command == "check":
        return cmd_check(args.seed)
    try:
        cfg, raw = resolve_config(args)
        level = int(raw["level"]) if args.command == "solve" else None
    except (UsageError, ValueError) as exc:
        parser.error(str(exc))
    if args.command == "convergence":
        return cmd_convergence(cfg)
    return cmd_solve(cfg, level, args.zero_rhs, args.dump, args.dump_system)


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
