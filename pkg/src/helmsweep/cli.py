"""Benchmark harness: run configs, experiment subcommands, CSV reports.

Subcommands: offline (stage timings), solve (per-source reports), sweep
(iteration tables over n and layer-count axes), spectrum (preconditioned
eigenvalues), oracle-check (field accuracy against a direct solve).

Configuration is a flat key=value text file, every key overridable by a
command-line flag of the same name. With a fixed seed all numeric CSV
columns are byte-identical across runs; wall-time columns live separately
so consumers can drop them. Exit codes: 0 success, 1 config error,
2 numerical failure.
"""

from __future__ import annotations

import argparse
import csv
import os
import sys
from dataclasses import dataclass, fields
from pathlib import Path

import numpy as np

from .grid import (
    ComplexGrid2D,
    DEFAULT_PML_C,
    assemble_global,
    default_n_pml,
    default_profile,
)
from .local_solver import factorize
from .media import (
    MEDIA_NAMES,
    UNIT_FIELD,
    build_medium,
    ingest_model,
    read_vm2d,
    write_vm2d,
)
from .partition import make_partition
from .solver import (
    CompressionConfig,
    GmresConfig,
    PreconditionerConfig,
    offline_assemble,
    solve_helmholtz,
    spectrum_dump,
)

OUTPUT_DIR_ENV = "HELMSWEEP_OUTDIR"

OFFLINE_CSV_HEADER = ["stage", "seconds"]
SOLVE_CSV_HEADER = [
    "source", "status", "iterations", "rel_residual", "true_residual",
    "oracle_rel_error", "restrict_s", "newton_s", "rhs_s", "gmres_s",
    "reconstruct_s",
]
SWEEP_CSV_HEADER = [
    "n", "layers", "omega", "status", "iters_min", "iters_max",
    "mean_gmres_s_per_iter",
]
SPECTRUM_CSV_HEADER = ["re", "im"]
ORACLE_CSV_HEADER = ["source", "status", "rel_error"]


class ConfigError(Exception):
    """Anything wrong with the requested run, as opposed to its numerics."""


@dataclass
class RunConfig:
    """Flat run description; zero/empty means 'use the built-in rule'."""

    nx: int = 40
    nz: int = 0                 # 0: same as nx
    layers: int = 4
    omega: float = 0.0          # explicit rule only
    omega_rule: str = "sqrt"    # sqrt | linear | explicit
    omega_scale: float = 1.0
    n_pml: int = 0              # 0: max(10, n/20)
    pml_c: float = 0.0          # 0: built-in damping constant
    plr: bool = False
    plr_epsilon: float = 0.0    # 0: 1e-9 / layers
    plr_r_max: int = 0          # 0: ceil(sqrt(block side))
    gmres_tol: float = 1e-7
    gmres_max_iter: int = 100
    n_it: int = 2
    variant: str = "jump"
    medium: str = "gradient"
    model_file: str = ""
    sources: str = "point:0.5,0.25"
    oracle: bool = False
    oracle_tol: float = 1e-5
    out_dir: str = ""
    seed: int = 0
    factor_method: str = "banded"
    dump_fields: bool = False
    n_list: str = ""            # sweep axis, comma-separated
    l_list: str = ""            # sweep axis, comma-separated

    def validate(self):
        if self.nx < 4:
            raise ConfigError("nx must be at least 4")
        if self.layers < 2:
            raise ConfigError("need at least 2 layers: the interface system is empty for 1")
        nz = self.nz or self.nx
        if nz < 2 * self.layers:
            raise ConfigError(f"nz={nz} cannot host {self.layers} layers of thickness >= 2")
        if self.omega_rule not in ("sqrt", "linear", "explicit"):
            raise ConfigError(f"unknown omega rule {self.omega_rule!r}")
        if self.omega_rule == "explicit" and self.omega <= 0:
            raise ConfigError("explicit omega rule needs omega > 0")
        if self.omega_scale <= 0:
            raise ConfigError("omega_scale must be positive")
        if self.variant not in ("jump", "extrapolation"):
            raise ConfigError(f"unknown preconditioner variant {self.variant!r}")
        if not self.model_file and self.medium not in MEDIA_NAMES:
            raise ConfigError(f"unknown medium {self.medium!r}; choose from {MEDIA_NAMES}")
        if not 0.0 < self.gmres_tol < 1.0:
            raise ConfigError("gmres_tol must lie in (0, 1)")
        if self.gmres_max_iter < 1 or self.n_it < 1:
            raise ConfigError("iteration counts must be positive")
        if self.factor_method not in ("banded", "sparse"):
            raise ConfigError(f"unknown factor method {self.factor_method!r}")
        if self.oracle_tol <= 0:
            raise ConfigError("oracle_tol must be positive")

    def omega_of(self, n: int) -> float:
        if self.omega_rule == "sqrt":
            return self.omega_scale * float(np.sqrt(n))
        if self.omega_rule == "linear":
            return self.omega_scale * float(n)
        return float(self.omega)

    def resolved_out_dir(self) -> Path:
        root = self.out_dir or os.environ.get(OUTPUT_DIR_ENV, "") or "."
        path = Path(root)
        path.mkdir(parents=True, exist_ok=True)
        return path


_BOOL_WORDS = {
    "true": True, "yes": True, "on": True, "1": True,
    "false": False, "no": False, "off": False, "0": False,
}


def _convert(name: str, text: str, target_type):
    text = text.strip()
    try:
        if target_type is bool:
            if text.lower() not in _BOOL_WORDS:
                raise ValueError(f"not a boolean: {text!r}")
            return _BOOL_WORDS[text.lower()]
        return target_type(text)
    except ValueError as exc:
        raise ConfigError(f"bad value for {name}: {exc}") from exc


def parse_config_file(path) -> dict:
    """key = value lines; # starts a comment; unknown keys rejected."""
    known = {f.name: f.type for f in fields(RunConfig)}
    typed = {f.name: type(getattr(RunConfig(), f.name)) for f in fields(RunConfig)}
    out = {}
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config file: {exc}") from exc
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{lineno}: expected key = value, got {raw!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        if key not in known:
            raise ConfigError(f"{path}:{lineno}: unknown key {key!r}")
        out[key] = _convert(key, value, typed[key])
    return out


def build_config(args: argparse.Namespace) -> RunConfig:
    values = {}
    if args.config:
        values.update(parse_config_file(args.config))
    for f in fields(RunConfig):
        flag = getattr(args, f.name, None)
        if flag is not None:
            values[f.name] = _convert(f.name, flag, type(getattr(RunConfig(), f.name)))
    cfg = RunConfig(**values)
    cfg.validate()
    return cfg


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise ConfigError(message)


def _add_run_flags(sub: argparse.ArgumentParser):
    sub.add_argument("--config", help="key = value config file; flags override it")
    for f in fields(RunConfig):
        default = getattr(RunConfig(), f.name)
        sub.add_argument(
            f"--{f.name.replace('_', '-')}",
            dest=f.name,
            help=f"override {f.name} (default {default!r})",
        )


def make_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="helmsweep", description=__doc__)
    subs = parser.add_subparsers(dest="command", required=True)
    for name, blurb in (
        ("offline", "factor layers, extract interface kernels, assemble the system"),
        ("solve", "solve for each configured source and report per-source rows"),
        ("sweep", "iteration table over n_list x l_list"),
        ("spectrum", "eigenvalues of the one-sweep preconditioned system"),
        ("oracle-check", "compare solver fields against a direct factorization"),
    ):
        _add_run_flags(subs.add_parser(name, help=blurb))
    return parser


# problem construction


def build_grid(cfg: RunConfig, n: int | None = None) -> ComplexGrid2D:
    nx = n if n is not None else cfg.nx
    nz = n if n is not None else (cfg.nz or cfg.nx)
    n_pml = cfg.n_pml or default_n_pml(nx)
    return ComplexGrid2D(nx=nx, nz=nz, h=1.0 / (nx + 1), n_pml=n_pml)


def build_model(cfg: RunConfig, grid: ComplexGrid2D):
    if cfg.model_file:
        try:
            model = ingest_model(cfg.model_file)
        except (OSError, ValueError) as exc:
            raise ConfigError(f"model file: {exc}") from exc
        if model.values.shape != (grid.nz_ext, grid.nx_ext):
            raise ConfigError(
                f"model file shape {model.values.shape} does not match the "
                f"extended grid {(grid.nz_ext, grid.nx_ext)}"
            )
        return model
    return build_medium(grid, cfg.medium, seed=cfg.seed)


def build_state(cfg: RunConfig, grid, model, omega):
    part = make_partition(grid.nz, cfg.layers)
    profile = default_profile(grid, omega, C=cfg.pml_c) if cfg.pml_c else None
    compression = None
    if cfg.plr:
        compression = CompressionConfig(
            epsilon=cfg.plr_epsilon or None, r_max=cfg.plr_r_max or None
        )
    state = offline_assemble(
        grid, model, part, omega,
        variant=cfg.variant,
        factor_method=cfg.factor_method,
        compression=compression,
        profile=profile,
    )
    return part, state


def point_source_field(grid: ComplexGrid2D, fx: float, fz: float) -> np.ndarray:
    f = np.zeros((grid.nz_ext, grid.nx_ext), dtype=np.complex128)
    px = min(max(int(round(fx * (grid.nx + 1))), 1), grid.nx)
    qz = min(max(int(round(fz * (grid.nz + 1))), 1), grid.nz)
    f[grid.n_pml + qz - 1, grid.n_pml + px - 1] = 1.0 / grid.h**2
    return f


def parse_sources(cfg: RunConfig, grid: ComplexGrid2D) -> list:
    """[(label, field)] from 'point:fx,fz;...', 'random:K', or 'file:PATH'."""
    kind, _, rest = cfg.sources.partition(":")
    if kind == "point":
        out = []
        for idx, chunk in enumerate(part for part in rest.split(";") if part.strip()):
            try:
                fx, fz = (float(v) for v in chunk.split(","))
            except ValueError as exc:
                raise ConfigError(f"bad point source {chunk!r}: {exc}") from exc
            if not (0 < fx < 1 and 0 < fz < 1):
                raise ConfigError(f"point source {chunk!r} outside the open unit square")
            out.append((f"point{idx}", point_source_field(grid, fx, fz)))
        if not out:
            raise ConfigError("no point sources given")
        return out
    if kind == "random":
        try:
            count = int(rest)
        except ValueError as exc:
            raise ConfigError(f"bad random source count {rest!r}") from exc
        if count < 0:
            raise ConfigError("random source count must be >= 0")
        rng = np.random.default_rng(cfg.seed)
        shape = (grid.nz, grid.nx_ext)
        out = []
        for idx in range(count):
            f = np.zeros((grid.nz_ext, grid.nx_ext), dtype=np.complex128)
            f[grid.n_pml : grid.n_pml + grid.nz, :] = (
                rng.standard_normal(shape) + 1j * rng.standard_normal(shape)
            )
            out.append((f"rand{idx}", f))
        return out
    if kind == "file":
        try:
            vm = read_vm2d(rest)
        except (OSError, ValueError) as exc:
            raise ConfigError(f"source file: {exc}") from exc
        if vm.values.shape != (grid.nz_ext, grid.nx_ext):
            raise ConfigError(
                f"source file shape {vm.values.shape} does not match "
                f"{(grid.nz_ext, grid.nx_ext)}"
            )
        return [("file0", vm.values.astype(np.complex128))]
    raise ConfigError(f"unknown source spec {cfg.sources!r}")


def write_csv(path, header, rows):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        writer.writerows(rows)


def _fmt(value) -> str:
    if value is None:
        return ""
    if isinstance(value, float):
        return f"{value:.17g}"
    return str(value)


def _direct_factorization(grid, model, omega, profile):
    op = assemble_global(grid, model, omega, profile=profile)
    return factorize(op, method="sparse", label="direct")


def _direct_field_rows(fact, grid, f):
    u = fact.solve(f.ravel()).reshape(grid.nz_ext, grid.nx_ext)
    return u[grid.n_pml : grid.n_pml + grid.nz, :]


# subcommands


def cmd_offline(cfg: RunConfig) -> int:
    grid = build_grid(cfg)
    model = build_model(cfg, grid)
    omega = cfg.omega_of(cfg.nx)
    part, state = build_state(cfg, grid, model, omega)
    out = cfg.resolved_out_dir() / "offline_timings.csv"
    rows = [(stage, _fmt(state.stage_seconds.get(stage, 0.0)))
            for stage in ("factor", "greens", "compress", "assemble")]
    write_csv(out, OFFLINE_CSV_HEADER, rows)
    dim = 2 * state.n_traces * state.block_size
    print(f"offline ready: {part.L} layers, trace system dimension {dim}; wrote {out}")
    return 0


def _solve_rows(cfg: RunConfig, dump_dir: Path | None):
    """Shared by solve and oracle-check: one row dict per source."""
    grid = build_grid(cfg)
    model = build_model(cfg, grid)
    omega = cfg.omega_of(cfg.nx)
    part, state = build_state(cfg, grid, model, omega)
    sources = parse_sources(cfg, grid)
    profile = default_profile(grid, omega, C=cfg.pml_c) if cfg.pml_c else None
    precond = PreconditionerConfig(n_it=cfg.n_it, variant=cfg.variant)
    gmres = GmresConfig(rel_tol=cfg.gmres_tol, max_iter=cfg.gmres_max_iter)
    direct = _direct_factorization(grid, model, omega, profile) if cfg.oracle else None

    rows = []
    failed = False
    for label, f in sources:
        oracle_rows = _direct_field_rows(direct, grid, f) if cfg.oracle else None
        try:
            report = solve_helmholtz(
                model, grid, part, f,
                state=state, precond=precond, gmres=gmres, oracle=oracle_rows,
            )
        except RuntimeError as exc:
            print(f"source {label}: {exc}", file=sys.stderr)
            rows.append({"source": label, "status": "failed"})
            failed = True
            continue
        status = "ok" if report.converged else report.flag
        failed = failed or not report.converged
        rows.append({
            "source": label,
            "status": status,
            "iterations": report.iterations,
            "rel_residual": report.residual_history[-1] if report.residual_history else 0.0,
            "true_residual": report.true_residual,
            "oracle_rel_error": report.oracle_rel_error,
            "restrict_s": report.stage_seconds.get("restrict"),
            "newton_s": report.stage_seconds.get("newton"),
            "rhs_s": report.stage_seconds.get("rhs"),
            "gmres_s": report.stage_seconds.get("gmres"),
            "reconstruct_s": report.stage_seconds.get("reconstruct"),
        })
        if dump_dir is not None:
            write_vm2d(dump_dir / f"field_{label}_re.vm2d", report.u.real, grid.h, UNIT_FIELD)
            write_vm2d(dump_dir / f"field_{label}_im.vm2d", report.u.imag, grid.h, UNIT_FIELD)
    return rows, failed


def cmd_solve(cfg: RunConfig) -> int:
    out_dir = cfg.resolved_out_dir()
    rows, failed = _solve_rows(cfg, out_dir if cfg.dump_fields else None)
    out = out_dir / "solve.csv"
    write_csv(
        out,
        SOLVE_CSV_HEADER,
        [[_fmt(row.get(col)) for col in SOLVE_CSV_HEADER] for row in rows],
    )
    print(f"solved {len(rows)} source(s); wrote {out}")
    return 2 if failed else 0


def cmd_sweep(cfg: RunConfig) -> int:
    n_values = _parse_int_list(cfg.n_list) or [cfg.nx]
    l_values = _parse_int_list(cfg.l_list) or [cfg.layers]
    rows = []
    failed = False
    for n in n_values:
        for layers in l_values:
            omega = cfg.omega_of(n)
            if n < 2 * layers:
                rows.append([_fmt(n), _fmt(layers), _fmt(omega), "infeasible", "", "", ""])
                continue
            cell = RunConfig(**{**_as_dict(cfg), "nx": n, "nz": n, "layers": layers,
                                "n_list": "", "l_list": ""})
            try:
                cell.validate()
            except ConfigError:
                rows.append([_fmt(n), _fmt(layers), _fmt(omega), "infeasible", "", "", ""])
                continue
            cell_rows, cell_failed = _solve_rows(cell, None)
            iters = [r["iterations"] for r in cell_rows if r.get("status") == "ok"]
            if cell_failed or not iters:
                rows.append([_fmt(n), _fmt(layers), _fmt(omega), "failed", "", "", ""])
                failed = True
                continue
            total_time = sum(r["gmres_s"] for r in cell_rows if r.get("gmres_s"))
            total_iters = sum(iters)
            mean = total_time / total_iters if total_iters else 0.0
            rows.append([
                _fmt(n), _fmt(layers), _fmt(omega), "ok",
                _fmt(min(iters)), _fmt(max(iters)), _fmt(mean),
            ])
    out = cfg.resolved_out_dir() / "sweep.csv"
    write_csv(out, SWEEP_CSV_HEADER, rows)
    print(f"swept {len(rows)} cell(s); wrote {out}")
    return 2 if failed else 0


def cmd_spectrum(cfg: RunConfig) -> int:
    grid = build_grid(cfg)
    model = build_model(cfg, grid)
    omega = cfg.omega_of(cfg.nx)
    part, state = build_state(cfg, grid, model, omega)
    try:
        evals = spectrum_dump(state.d, state.r, state.perm, state.pol)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    order = np.lexsort((evals.imag, evals.real))
    evals = evals[order]
    out = cfg.resolved_out_dir() / "spectrum.csv"
    write_csv(out, SPECTRUM_CSV_HEADER, [[_fmt(v.real), _fmt(v.imag)] for v in evals])
    near_one = int(np.count_nonzero(np.abs(evals - 1.0) <= 1e-8))
    outside = int(np.count_nonzero(np.abs(evals - 1.0) > 0.2))
    print(
        f"{evals.size} eigenvalues: {near_one} within 1e-8 of 1, "
        f"{outside} outside radius 0.2; wrote {out}"
    )
    return 0


def cmd_oracle_check(cfg: RunConfig) -> int:
    cfg = RunConfig(**{**_as_dict(cfg), "oracle": True})
    cfg.validate()
    rows, failed = _solve_rows(cfg, None)
    out = cfg.resolved_out_dir() / "oracle_check.csv"
    csv_rows = []
    worst = 0.0
    for row in rows:
        err = row.get("oracle_rel_error")
        status = row.get("status", "failed")
        if err is None:
            failed = True
            csv_rows.append([row.get("source", ""), status, ""])
            continue
        if err > cfg.oracle_tol:
            failed = True
            status = "above_tol"
        worst = max(worst, err)
        csv_rows.append([row.get("source", ""), status, _fmt(err)])
    write_csv(out, ORACLE_CSV_HEADER, csv_rows)
    print(f"worst oracle error {worst:.3e} (tol {cfg.oracle_tol:g}); wrote {out}")
    return 2 if failed else 0


def _as_dict(cfg: RunConfig) -> dict:
    return {f.name: getattr(cfg, f.name) for f in fields(RunConfig)}


def _parse_int_list(text: str) -> list:
    if not text.strip():
        return []
    try:
        return [int(v) for v in text.replace(";", ",").split(",") if v.strip()]
    except ValueError as exc:
        raise ConfigError(f"bad integer list {text!r}") from exc


_COMMANDS = {
    "offline": cmd_offline,
    "solve": cmd_solve,
    "sweep": cmd_sweep,
    "spectrum": cmd_spectrum,
    "oracle-check": cmd_oracle_check,
}


def main(argv=None) -> int:
    parser = make_parser()
    try:
        args = parser.parse_args(argv)
        cfg = build_config(args)
        return _COMMANDS[args.command](cfg)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1
    except RuntimeError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
