"""Command-line harness: single solves and parameter sweeps to CSV.

    ddelm solve --config run.cfg --grid 4x4 --workers 4 --out results.csv
    ddelm sweep --config run.cfg --axis grid=1x1,2x2,4x4 --out sweep.csv

Config files are flat ``key = value`` text (``#`` starts a comment); keys
are the long flag names with dashes or underscores. Flags given on the
command line override the file.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import io
import logging
import math
import sys
import time
import warnings
from dataclasses import dataclass, fields
from pathlib import Path

import numpy as np

from .basis import InitSpec
from .case import DdmCase
from .linalg import DEFAULT_RCOND, NumericalBreakdown, RankWarning
from .metrics import DEFAULT_RESOLUTION, error_report
from .problems import CATALOG, FdField, UnsupportedProblem, exact_reference, fd_reference_solve
from .seeding import stream
from .solver import ConvergenceWarning, solve_monolithic_elm, solve_oracle

logger = logging.getLogger("ddelm")

EXIT_OK, EXIT_USAGE, EXIT_NUMERICAL = 0, 2, 3
MODES = ("ddm", "monolithic", "oracle")
SEED_POLICY = (
    "seed policy: basis, forcing and coefficient fields use independent streams of one seed; "
    "repeat r > 0 re-draws the basis from stream (seed, repeat, r); errors are from repeat 0; "
    "timings are means over repeats"
)


class ConfigError(ValueError):
    pass


def parse_grid(text) -> tuple[int, int]:
    if isinstance(text, (tuple, list)):
        return int(text[0]), int(text[1])
    parts = str(text).lower().replace("×", "x").split("x")
    if len(parts) == 1:
        parts = parts * 2
    try:
        nx, ny = (int(p) for p in parts)
    except ValueError:
        raise ConfigError(f"grid must look like NxM, got {text!r}") from None
    return nx, ny


def _parse_bool(text) -> bool:
    if isinstance(text, bool):
        return text
    v = str(text).strip().lower()
    if v in ("1", "true", "yes", "on"):
        return True
    if v in ("0", "false", "no", "off"):
        return False
    raise ConfigError(f"expected a boolean, got {text!r}")


def _parse_r(text):
    if text is None or (isinstance(text, str) and text.strip().lower() in ("auto", "none", "")):
        return None
    return float(text)


@dataclass(frozen=True)
class RunConfig:
    problem: str = "poisson"
    alpha: float = 16.0
    raw_coefficient: bool = False
    grid: tuple[int, int] = (2, 2)
    neurons: int = 4096
    lattice: int = 7
    init: str = "suggested"
    c: float = 0.125
    r: float | None = None
    l: float = 1.0
    activation: str = "tanh"
    cg_tol: float = 1e-9
    max_iter: int | None = None
    rcond: float = DEFAULT_RCOND
    resolution: int = DEFAULT_RESOLUTION
    mode: str = "ddm"
    workers: int = 0
    seed: int = 0
    repeat: int = 1
    fd_size: int = 257
    reference_dir: str | None = None
    out: str | None = None

    def __post_init__(self):
        nx, ny = self.grid
        if self.problem not in CATALOG:
            raise ConfigError(f"unknown problem {self.problem!r}; choose from {sorted(CATALOG)}")
        if self.mode not in MODES:
            raise ConfigError(f"mode must be one of {MODES}, got {self.mode!r}")
        if nx < 1 or ny < 1:
            raise ConfigError("grid dimensions must be positive")
        if self.lattice < 1:
            raise ConfigError("lattice exponent k must be >= 1")
        if (1 << self.lattice) % nx or (1 << self.lattice) % ny:
            raise ConfigError(f"grid {nx}x{ny} does not divide the 2^{self.lattice} lattice")
        if self.neurons < 1 or self.neurons % (nx * ny):
            raise ConfigError(f"neurons={self.neurons} is not divisible by {nx * ny} subdomains")
        if self.mode == "monolithic" and (nx, ny) != (1, 1):
            raise ConfigError("mode=monolithic needs grid 1x1")
        if self.repeat < 1 or self.workers < 0 or self.resolution < 2 or self.fd_size < 3:
            raise ConfigError("repeat >= 1, workers >= 0, resolution >= 2 and fd-size >= 3 are required")
        if not self.cg_tol > 0:
            raise ConfigError("cg-tol must be positive")
        try:
            self.init_spec()
        except ValueError as exc:
            raise ConfigError(str(exc)) from None

    def init_spec(self) -> InitSpec:
        return InitSpec(self.init, self.c, self.r, self.l, self.activation)

    def problem_params(self) -> dict:
        if self.problem == "grf":
            return {"alpha": self.alpha, "seed": self.seed}
        if self.problem == "varcoef":
            return {"alpha": self.alpha, "seed": self.seed, "normalize": not self.raw_coefficient}
        return {}

    def case(self, repeat_index: int = 0) -> DdmCase:
        basis_seed = self.seed
        if repeat_index:
            basis_seed = int(stream(self.seed, "repeat", repeat_index).integers(2**31))
        return DdmCase(self.problem, self.problem_params(), self.grid, self.lattice, self.neurons,
                       self.init_spec(), basis_seed)


_CONVERTERS = {
    "grid": parse_grid,
    "r": _parse_r,
    "raw_coefficient": _parse_bool,
    "max_iter": lambda v: None if str(v).lower() in ("none", "auto", "") else int(v),
    "reference_dir": lambda v: None if str(v).lower() in ("none", "") else str(v),
    "out": lambda v: None if str(v).lower() in ("none", "-", "") else str(v),
}


def _convert(key, value):
    field_types = {f.name: f.type for f in fields(RunConfig)}
    if key not in field_types:
        raise ConfigError(f"unknown config key {key!r}")
    if key in _CONVERTERS:
        return _CONVERTERS[key](value)
    kind = field_types[key]
    try:
        if kind == "int":
            return int(value)
        if kind == "float":
            return float(value)
    except ValueError:
        raise ConfigError(f"{key}: cannot parse {value!r}") from None
    return str(value)


def read_config_file(path) -> dict:
    out = {}
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{lineno}: expected key = value")
        key, value = (s.strip() for s in line.split("=", 1))
        key = key.replace("-", "_")
        out[key] = _convert(key, value)
    return out


def build_config(values: dict) -> RunConfig:
    try:
        return RunConfig(**values)
    except TypeError as exc:
        raise ConfigError(str(exc)) from None


# --- running ------------------------------------------------------------------

COLUMNS = (
    "problem", "alpha", "grid", "neurons", "lattice", "init", "c", "r", "l", "activation",
    "cg_tol", "resolution", "mode", "workers", "seed", "repeat",
    "status", "l2_rel", "h1_rel", "interface_rmse", "cg_iterations", "cg_residual", "n_gamma",
    "t_setup", "t_interface", "t_backsolve", "t_solve", "t_total", "message",
)
FLOAT_FORMAT = "%.8e"


def _reference(cfg: RunConfig, problem):
    ref = exact_reference(problem)
    if ref is not None:
        return ref
    prefix = None
    if cfg.reference_dir:
        tag = "_".join(f"{k}{v}" for k, v in sorted(problem.params.items()))
        prefix = Path(cfg.reference_dir) / f"{problem.name}_{tag}_fd{cfg.fd_size}"
        if prefix.with_suffix(".bin").exists():
            return FdField.load(prefix)
    ref = fd_reference_solve(problem, cfg.fd_size)
    if prefix is not None:
        ref.save(prefix)
    return ref


def _solve_once(cfg: RunConfig, case: DdmCase):
    """Returns ``(problem, solution, diagnostics)``."""
    if cfg.mode == "ddm":
        from .parallel import solve_case

        problem, _, sol, diag = solve_case(case, workers=cfg.workers, cg_tol=cfg.cg_tol,
                                          max_iter=cfg.max_iter, rcond=cfg.rcond)
        return problem, sol, diag
    problem, layout = case.build_problem(), case.build_layout()
    bases = case.build_bases(layout)
    if cfg.mode == "monolithic":
        sol, diag = solve_monolithic_elm(problem, layout, bases[0], rcond=cfg.rcond)
    else:
        sol, diag = solve_oracle(problem, layout, bases)
    return problem, sol, diag


def _echo(cfg: RunConfig) -> dict:
    return {
        "problem": cfg.problem, "alpha": cfg.alpha if cfg.problem in ("grf", "varcoef") else "",
        "grid": f"{cfg.grid[0]}x{cfg.grid[1]}", "neurons": cfg.neurons, "lattice": cfg.lattice,
        "init": cfg.init, "c": cfg.c, "r": "auto" if cfg.r is None else cfg.r, "l": cfg.l,
        "activation": cfg.activation, "cg_tol": cfg.cg_tol, "resolution": cfg.resolution,
        "mode": cfg.mode, "workers": cfg.workers, "seed": cfg.seed, "repeat": cfg.repeat,
    }


def run(cfg: RunConfig) -> tuple[int, dict]:
    """Execute one configuration; returns ``(exit status, CSV row)``."""
    row = _echo(cfg)
    timings = {k: [] for k in ("t_setup", "t_interface", "t_backsolve", "t_solve", "t_total")}
    status = EXIT_OK
    try:
        with warnings.catch_warnings(record=True) as caught:
            warnings.simplefilter("always", ConvergenceWarning)
            warnings.simplefilter("ignore", RankWarning)
            first = None
            for rep in range(cfg.repeat):
                problem, sol, diag = _solve_once(cfg, cfg.case(rep))
                for key in timings:
                    timings[key].append(getattr(diag, key))
                if first is None:
                    first = (problem, sol, diag)
        problem, sol, diag = first
        ref = _reference(cfg, problem)
        exact_fn = problem.exact if problem.exact is not None else ref.value
        rep0 = error_report(sol, ref, cfg.resolution, exact_fn=exact_fn)
        row.update(
            l2_rel=rep0.l2_rel, h1_rel=rep0.h1_rel, interface_rmse=rep0.interface_rmse,
            n_gamma=diag.n_gamma if cfg.mode == "ddm" else "",
            cg_iterations=diag.cg_iterations, cg_residual=diag.cg_residual,
        )
        row.update({k: float(np.mean(v)) for k, v in timings.items()})
        if cfg.mode == "ddm" and not diag.converged:
            status = EXIT_NUMERICAL
            row["status"] = "not_converged"
            row["message"] = "; ".join(str(w.message) for w in caught
                                       if issubclass(w.category, ConvergenceWarning))
        else:
            row["status"] = "ok"
    except (NumericalBreakdown, np.linalg.LinAlgError, FloatingPointError) as exc:
        status = EXIT_NUMERICAL
        row.update(status="numerical_failure", message=str(exc))
    except (MemoryError, UnsupportedProblem, ValueError, RuntimeError) as exc:
        status = EXIT_NUMERICAL
        row.update(status="error", message=f"{type(exc).__name__}: {exc}")
    return status, row


def _fmt(value):
    if value is None:
        return ""
    if isinstance(value, (bool, np.bool_)):
        return str(bool(value))
    if isinstance(value, (float, np.floating)):
        return FLOAT_FORMAT % value if math.isfinite(value) else str(float(value))
    return str(value)


def format_rows(rows, comment=None, header=True) -> str:
    buf = io.StringIO()
    if comment:
        buf.write(f"# {comment}\n")
    w = csv.writer(buf, lineterminator="\n")
    if header:
        w.writerow(COLUMNS)
    for row in rows:
        w.writerow([_fmt(row.get(c)) for c in COLUMNS])
    return buf.getvalue()


def _emit(text_with_header: str, rows_only: str, out, append: bool):
    if out is None:
        sys.stdout.write(text_with_header)
        return
    path = Path(out)
    path.parent.mkdir(parents=True, exist_ok=True)
    if append and path.exists() and path.stat().st_size > 0:
        with path.open("a") as fh:
            fh.write(rows_only)
    else:
        path.write_text(text_with_header)


def sweep(template: RunConfig, axis: str, values: list) -> tuple[int, list]:
    """One row per axis value; failing rows are recorded and the sweep goes on."""
    rows, status = [], EXIT_OK
    for value in values:
        try:
            cfg = dataclasses.replace(template, **{axis: _convert(axis, value)})
        except (ConfigError, ValueError) as exc:
            rows.append({**_echo(template), axis: value, "status": "invalid_config", "message": str(exc)})
            status = EXIT_NUMERICAL
            continue
        st, row = run(cfg)
        rows.append(row)
        status = max(status, st)
    return status, rows


# --- argument parsing -------------------------------------------------------

_FLAGS = (
    ("--problem", {}), ("--alpha", {"type": float}), ("--raw-coefficient", {"action": "store_const", "const": True}),
    ("--grid", {}), ("--neurons", {"type": int}), ("--lattice", {"type": int}), ("--init", {}),
    ("--c", {"type": float}), ("--r", {}), ("--l", {"type": float}), ("--activation", {}),
    ("--cg-tol", {"type": float}), ("--max-iter", {}), ("--rcond", {"type": float}),
    ("--resolution", {"type": int}), ("--mode", {}), ("--workers", {"type": int}),
    ("--seed", {"type": int}), ("--repeat", {"type": int}), ("--fd-size", {"type": int}),
    ("--reference-dir", {}), ("--out", {}),
)


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="ddelm", description="Domain-decomposed ELM solver harness.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)
    for name, help_ in (("solve", "run one configuration"), ("sweep", "vary one parameter")):
        sp = sub.add_parser(name, help=help_)
        sp.add_argument("--config", help="key = value file")
        for flag, kw in _FLAGS:
            sp.add_argument(flag, default=None, **kw)
        if name == "sweep":
            sp.add_argument("--axis", required=True, help="name=v1,v2,... (empty list gives header only)")
    return p


def _values_from_args(args) -> dict:
    values = read_config_file(args.config) if args.config else {}
    for flag, _ in _FLAGS:
        key = flag[2:].replace("-", "_")
        v = getattr(args, key)
        if v is not None:
            values[key] = _convert(key, v)
    return values


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        values = _values_from_args(args)
        if args.command == "sweep":
            if "=" not in args.axis:
                raise ConfigError("--axis must look like name=v1,v2,...")
            axis, raw = args.axis.split("=", 1)
            axis = axis.strip().replace("-", "_")
            if axis in ("axis", "config"):
                raise ConfigError(f"cannot sweep over {axis!r}")
            if axis not in {f.name for f in fields(RunConfig)}:
                raise ConfigError(f"unknown sweep axis {axis!r}")
            axis_values = [v.strip() for v in raw.split(",") if v.strip()]
            template = build_config(values)
        else:
            cfg = build_config(values)
    except ConfigError as exc:
        print(f"ddelm: error: {exc}", file=sys.stderr)
        return EXIT_USAGE

    t0 = time.perf_counter()
    if args.command == "solve":
        status, row = run(cfg)
        _emit(format_rows([row]), format_rows([row], header=False), cfg.out, append=True)
    else:
        status, rows = sweep(template, axis, axis_values)
        comment = f"sweep over {axis}; {SEED_POLICY}"
        text = format_rows(rows, comment=comment)
        _emit(text, text, template.out, append=False)
    logger.info("finished in %.2f s with status %d", time.perf_counter() - t0, status)
    return status


if __name__ == "__main__":
    sys.exit(main())
