"""Experiment harness: ``run``, ``convergence``, ``compare`` and ``dump-preset``.

A config is a small INI file (or just a preset name).  Outputs go under
``$LRBUG_OUTPUT_ROOT`` (default ``./results``) unless ``--out`` is given.

    [experiment]
    preset = ex51_parameter
    scheme = midpoint
    preconditioners = bug
    grids = 63, 127, 255
    restart = 3
    maxit = 30
    seed = 0

    [tolerance]
    eps_power = 3
    eps_scale = 1.0
"""
from __future__ import annotations

import argparse
import configparser
import csv
import io
import math
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

from . import fdm
from . import timestep as ts

OUTPUT_ENV = "LRBUG_OUTPUT_ROOT"
CSV_HEADER = ("step", "time", "error", "eta", "solution_rank", "max_krylov_rank", "iterations")
PLOT_COLUMNS = ("error", "eta", "solution_rank", "max_krylov_rank", "iterations")
LOG_COLUMNS = ("error", "eta")
DEFAULT_SCHEME = {2: "midpoint", 4: "bdf4"}


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class ExperimentConfig:
    preset: str
    scheme: str
    preconditioners: Tuple[str, ...]
    grids: Tuple[int, ...]
    restart: int = 3
    maxit: int = 30
    max_total_iterations: int = 90
    seed: int = 0
    guess_policy: str = "previous_stage"
    eps_power: Optional[float] = None
    eps_scale: float = 1.0
    eps2_power: Optional[float] = None
    eps2_scale: float = 1.0
    delta_scale: float = 1.0
    eps: Optional[float] = None
    eps2: Optional[float] = None
    delta: Optional[float] = None
    jobs: int = 1
    source: str = "<preset>"

    def policy(self, h: float, order: int) -> ts.TolerancePolicy:
        base = ts.tolerance_for(h, order, self.eps_scale, self.eps2_scale)
        eps = base.eps if self.eps_power is None else self.eps_scale * h**self.eps_power
        eps2 = base.eps2 if self.eps2_power is None else self.eps2_scale * h**self.eps2_power
        if self.eps is not None:
            eps = self.eps
        if self.eps2 is not None:
            eps2 = self.eps2
        delta = self.delta if self.delta is not None else self.delta_scale * eps
        return ts.TolerancePolicy(eps=eps, eps2=eps2, delta=delta)


# ---------------------------------------------------------------------------
# config parsing

_INT_KEYS = {"restart", "maxit", "max_total_iterations", "seed", "jobs"}
_FLOAT_KEYS = {"eps_power", "eps_scale", "eps2_power", "eps2_scale", "delta_scale", "eps", "eps2", "delta"}
_EXPERIMENT_KEYS = {"preset", "scheme", "preconditioners", "preconditioner", "grids", "guess_policy"} | _INT_KEYS
_TOLERANCE_KEYS = _FLOAT_KEYS


def _key_lines(text: str) -> Dict[Tuple[str, str], int]:
    """Line number of every ``key = value`` pair, keyed by (section, key)."""
    where: Dict[Tuple[str, str], int] = {}
    section = ""
    for i, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line[0] in "#;":
            continue
        if line.startswith("[") and line.endswith("]"):
            section = line[1:-1].strip()
            continue
        for sep in ("=", ":"):
            if sep in line:
                where[(section, line.split(sep, 1)[0].strip().lower())] = i
                break
    return where


def _split(value: str) -> List[str]:
    return [v.strip() for v in value.replace(";", ",").split(",") if v.strip()]


def parse_config(text: str, source: str = "<string>") -> ExperimentConfig:
    cp = configparser.ConfigParser(inline_comment_prefixes=("#", ";"))
    try:
        cp.read_string(text, source=source)
    except configparser.Error as err:
        raise ConfigError(f"{source}: {err}") from err
    lines = _key_lines(text)

    def fail(section, key, msg):
        ln = lines.get((section, key))
        loc = f"{source}:{ln}" if ln else source
        raise ConfigError(f"{loc}: [{section}] {key}: {msg}")

    if not cp.has_section("experiment"):
        raise ConfigError(f"{source}: missing [experiment] section")
    for sec in cp.sections():
        allowed = {"experiment": _EXPERIMENT_KEYS, "tolerance": _TOLERANCE_KEYS}.get(sec)
        if allowed is None and not sec.startswith("preconditioner:"):
            raise ConfigError(f"{source}:{_section_line(text, sec)}: unknown section [{sec}]")
        keys = allowed if allowed is not None else {"grids"}
        for key in cp[sec]:
            if key not in keys:
                fail(sec, key, "unknown key")

    ex = cp["experiment"]
    kw: Dict[str, object] = {"source": source}
    if "preset" not in ex:
        raise ConfigError(f"{source}: [experiment] needs a preset")
    name = ex["preset"].strip()
    if name not in fdm.PRESETS:
        fail("experiment", "preset", f"unknown preset {name!r}; choose from {', '.join(fdm.PRESETS)}")
    kw["preset"] = name
    problem = fdm.preset(name)

    scheme = ex.get("scheme", DEFAULT_SCHEME.get(problem.fd_order, "midpoint")).strip()
    if scheme not in ts.SCHEMES:
        fail("experiment", "scheme", f"unknown scheme {scheme!r}; choose from {', '.join(ts.SCHEMES)}")
    kw["scheme"] = scheme

    pkey = "preconditioners" if "preconditioners" in ex else "preconditioner"
    pcs = tuple(_split(ex.get(pkey, "bug")))
    if not pcs:
        fail("experiment", pkey, "empty preconditioner list")
    for pc in pcs:
        if pc not in ts.PRECONDITIONERS:
            fail("experiment", pkey, f"unknown preconditioner {pc!r}")
    kw["preconditioners"] = pcs

    grids = _parse_grids(ex.get("grids", ", ".join(str(n) for n in problem.grid_family)),
                         lambda msg: fail("experiment", "grids", msg))
    kw["grids"] = grids
    for sec in cp.sections():
        if sec.startswith("preconditioner:") and "grids" in cp[sec]:
            other = _parse_grids(cp[sec]["grids"], lambda msg, s=sec: fail(s, "grids", msg))
            if other != grids:
                fail(sec, "grids", f"grid list {list(other)} differs from [experiment] grids {list(grids)}; "
                                   "all preconditioners must share one grid list")

    for key in _INT_KEYS:
        if key in ex:
            try:
                kw[key] = int(ex[key])
            except ValueError:
                fail("experiment", key, f"expected an integer, got {ex[key]!r}")
    if "guess_policy" in ex:
        gp = ex["guess_policy"].strip()
        if gp not in ("previous_stage", "current_state"):
            fail("experiment", "guess_policy", f"unknown guess policy {gp!r}")
        kw["guess_policy"] = gp
    if cp.has_section("tolerance"):
        for key, val in cp["tolerance"].items():
            try:
                kw[key] = float(val)
            except ValueError:
                fail("tolerance", key, f"expected a number, got {val!r}")
            if kw[key] < 0:
                fail("tolerance", key, "must be nonnegative")

    restart = int(kw.get("restart", 3))
    ceiling = int(kw.get("max_total_iterations", 90))
    if restart < 1:
        fail("experiment", "restart", "must be at least 1")
    if "maxit" not in kw:
        kw["maxit"] = max(1, ceiling // restart)
    if restart * int(kw["maxit"]) > ceiling:
        fail("experiment", "maxit", f"restart*maxit = {restart * int(kw['maxit'])} exceeds the ceiling {ceiling}")
    if int(kw["maxit"]) < 1:
        fail("experiment", "maxit", "must be at least 1")
    return ExperimentConfig(**kw)


def _section_line(text: str, section: str) -> int:
    for i, raw in enumerate(text.splitlines(), start=1):
        if raw.strip() == f"[{section}]":
            return i
    return 0


def _parse_grids(value: str, fail) -> Tuple[int, ...]:
    items = _split(value)
    if not items:
        fail("empty grid list")
    out = []
    for it in items:
        try:
            n = int(it)
        except ValueError:
            fail(f"grid size {it!r} is not an integer")
        if n < 3:
            fail(f"grid size {n} is below the minimum of 3")
        out.append(n)
    return tuple(out)


def load_config(arg: str) -> ExperimentConfig:
    """Read a config file, or build the default config for a preset name."""
    path = Path(arg)
    if path.is_file():
        return parse_config(path.read_text(), str(path))
    if arg in fdm.PRESETS:
        return parse_config(preset_config_text(arg), f"<preset {arg}>")
    raise ConfigError(f"{arg!r} is neither a config file nor a preset ({', '.join(fdm.PRESETS)})")


def preset_config_text(name: str) -> str:
    problem = fdm.preset(name)
    order = problem.fd_order
    scheme = {"ex56_dirk": "dirk4"}.get(name, DEFAULT_SCHEME[order])
    p = 3 if order == 2 else 5
    return (
        f"# {name}: t_end = {problem.t_end:.6g}, finite-difference order {order}\n"
        "[experiment]\n"
        f"preset = {name}\n"
        f"scheme = {scheme}\n"
        "preconditioners = bug\n"
        f"grids = {', '.join(str(n) for n in problem.grid_family)}\n"
        "restart = 3\n"
        "maxit = 30\n"
        "max_total_iterations = 90\n"
        "seed = 0\n"
        "guess_policy = previous_stage\n"
        "jobs = 1\n"
        "\n"
        "[tolerance]\n"
        f"# eps = eps_scale * h^eps_power, eps2 = eps2_scale * h^eps2_power, delta = delta_scale * eps\n"
        f"eps_power = {p}\n"
        "eps_scale = 1.0\n"
        f"eps2_power = {p - 1}\n"
        "eps2_scale = 1.0\n"
        "delta_scale = 1.0\n"
    )


# ---------------------------------------------------------------------------
# running

def _fmt(v) -> str:
    if isinstance(v, (bool,)) or isinstance(v, int):
        return str(int(v))
    if v is None or (isinstance(v, float) and math.isnan(v)):
        return "nan"
    return f"{v:.5e}"


def history_csv(hist: ts.StepHistory) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_HEADER)
    for r in hist.records:
        w.writerow([r.step, _fmt(r.time), _fmt(r.error), _fmt(r.eta), r.solution_rank,
                    r.max_krylov_rank, r.iterations])
    return buf.getvalue()


def run_one(cfg: ExperimentConfig, n: int, precond: str, n_steps: Optional[int] = None) -> ts.StepHistory:
    problem = fdm.preset(cfg.preset).at(n)
    scheme = ts.SCHEMES[cfg.scheme]()
    policy = cfg.policy(problem.h, scheme.order)
    return ts.run_integration(problem, scheme, precond, policy=policy, m=cfg.restart, maxit=cfg.maxit,
                              seed=cfg.seed, guess_policy=cfg.guess_policy, n_steps=n_steps)


def _run_task(args):
    cfg, n, pc, n_steps = args
    return run_one(cfg, n, pc, n_steps)


def run_many(cfg: ExperimentConfig, tasks: Sequence[Tuple[int, str]], n_steps: Optional[int] = None):
    """Run ``(grid, preconditioner)`` tasks, in worker processes when ``cfg.jobs > 1``."""
    payload = [(cfg, n, pc, n_steps) for n, pc in tasks]
    if cfg.jobs > 1 and len(payload) > 1:
        with ProcessPoolExecutor(max_workers=cfg.jobs) as pool:
            return list(pool.map(_run_task, payload))
    return [_run_task(p) for p in payload]


def observed_orders(errors: Sequence[float], hs: Sequence[float]) -> List[float]:
    out = [float("nan")]
    for i in range(1, len(errors)):
        e0, e1 = errors[i - 1], errors[i]
        if e0 > 0 and e1 > 0:
            out.append(math.log(e0 / e1) / math.log(hs[i - 1] / hs[i]))
        else:
            out.append(float("nan"))
    return out


@dataclass
class ConvergenceTable:
    rows: List[Tuple[str, int, float, float, float]] = field(default_factory=list)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(("preconditioner", "n", "h", "error", "order"))
        for pc, n, h, err, order in self.rows:
            w.writerow((pc, n, _fmt(h), _fmt(err), _fmt(order)))
        return buf.getvalue()

    def to_markdown(self) -> str:
        lines = ["| preconditioner | n | h | error | order |", "|---|---|---|---|---|"]
        for pc, n, h, err, order in self.rows:
            o = "--" if math.isnan(order) else f"{order:.2f}"
            lines.append(f"| {pc} | {n} | {h:.2e} | {err:.2e} | {o} |")
        return "\n".join(lines) + "\n"

    def orders(self, precond: str) -> List[float]:
        return [r[4] for r in self.rows if r[0] == precond]

    def errors(self, precond: str) -> List[float]:
        return [r[3] for r in self.rows if r[0] == precond]


def convergence_table(cfg: ExperimentConfig) -> ConvergenceTable:
    if len(cfg.grids) < 2:
        raise ConfigError(f"{cfg.source}: convergence needs at least two grids")
    tasks = [(n, pc) for pc in cfg.preconditioners for n in cfg.grids]
    hists = run_many(cfg, tasks)
    table = ConvergenceTable()
    for pc in cfg.preconditioners:
        hs = [h.h for (n, p), h in zip(tasks, hists) if p == pc]
        errs = [h.final_error for (n, p), h in zip(tasks, hists) if p == pc]
        for n, h, e, o in zip(cfg.grids, hs, errs, observed_orders(errs, hs)):
            table.rows.append((pc, n, h, e, o))
    return table


def write_plots(histories: Dict[str, ts.StepHistory], out: Path, title: str) -> List[Path]:
    """One overlaid SVG line chart per diagnostic column."""
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    written = []
    with matplotlib.rc_context({"svg.hashsalt": "lrbug", "svg.fonttype": "path"}):
        for col in PLOT_COLUMNS:
            fig, ax = plt.subplots(figsize=(6, 4))
            for pc, hist in histories.items():
                ax.plot(hist.column("step"), hist.column(col), label=pc, marker=".", linewidth=1)
            if col in LOG_COLUMNS:
                ax.set_yscale("log")
            ax.set_xlabel("time step")
            ax.set_ylabel(col.replace("_", " "))
            ax.set_title(title)
            ax.legend()
            fig.tight_layout()
            path = out / f"{col}.svg"
            fig.savefig(path, format="svg", metadata={"Date": None})
            plt.close(fig)
            written.append(path)
    return written


def output_dir(cfg: ExperimentConfig, command: str, override: Optional[str]) -> Path:
    if override:
        out = Path(override)
    else:
        out = Path(os.environ.get(OUTPUT_ENV, "results")) / cfg.preset / command
    out.mkdir(parents=True, exist_ok=True)
    return out


# ---------------------------------------------------------------------------
# commands

def cmd_run(cfg: ExperimentConfig, out: Path, grid: Optional[int] = None, precond: Optional[str] = None,
            n_steps: Optional[int] = None) -> Path:
    n = grid if grid is not None else cfg.grids[0]
    pc = precond or cfg.preconditioners[0]
    hist = run_one(cfg, n, pc, n_steps)
    path = out / "history.csv"
    path.write_text(history_csv(hist))
    return path


def cmd_convergence(cfg: ExperimentConfig, out: Path) -> Tuple[Path, Path]:
    table = convergence_table(cfg)
    p_csv, p_md = out / "table.csv", out / "table.md"
    p_csv.write_text(table.to_csv())
    p_md.write_text(table.to_markdown())
    return p_csv, p_md


def cmd_compare(cfg: ExperimentConfig, out: Path, grid: Optional[int] = None, plots: bool = True,
                n_steps: Optional[int] = None) -> List[Path]:
    n = grid if grid is not None else cfg.grids[-1]
    hists = run_many(cfg, [(n, pc) for pc in cfg.preconditioners], n_steps)
    by_pc = dict(zip(cfg.preconditioners, hists))
    written = []
    for pc, hist in by_pc.items():
        p = out / f"history_{pc}.csv"
        p.write_text(history_csv(hist))
        written.append(p)
    if plots:
        written += write_plots(by_pc, out, f"{cfg.preset}, n = {n}")
    return written


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="lrbug", description="Low-rank GMRES time-stepping experiments.")
    sub = ap.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("config", help="config file or preset name")
        p.add_argument("--out", help=f"output directory (default ${OUTPUT_ENV}/<preset>/<command>)")
        p.add_argument("--precond", help="override the preconditioner list (comma separated)")
        p.add_argument("--grids", help="override the grid list (comma separated)")
        p.add_argument("--jobs", type=int, help="worker processes for grid sweeps")

    p = sub.add_parser("run", help="integrate one grid and write history.csv")
    common(p)
    p.add_argument("--grid", type=int, help="grid size (default: first grid of the config)")
    p.add_argument("--steps", type=int, help="stop after this many time steps")

    p = sub.add_parser("convergence", help="final-time errors and observed orders over the grid list")
    common(p)

    p = sub.add_parser("compare", help="run every preconditioner on one grid and plot the histories")
    common(p)
    p.add_argument("--grid", type=int, help="grid size (default: last grid of the config)")
    p.add_argument("--steps", type=int, help="stop after this many time steps")
    p.add_argument("--no-plots", action="store_true")

    p = sub.add_parser("dump-preset", help="print an editable config for a preset")
    p.add_argument("name", choices=fdm.PRESETS)
    p.add_argument("--out", help="write to this file instead of stdout")
    return ap


def _apply_overrides(cfg: ExperimentConfig, args) -> ExperimentConfig:
    changes = {}
    if getattr(args, "precond", None):
        pcs = tuple(_split(args.precond))
        bad = [pc for pc in pcs if pc not in ts.PRECONDITIONERS]
        if bad or not pcs:
            raise ConfigError(f"--precond: unknown preconditioner(s) {bad}")
        changes["preconditioners"] = pcs
    if getattr(args, "grids", None):
        def fail(msg):
            raise ConfigError(f"--grids: {msg}")
        changes["grids"] = _parse_grids(args.grids, fail)
    if getattr(args, "jobs", None):
        changes["jobs"] = args.jobs
    return replace(cfg, **changes) if changes else cfg


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "dump-preset":
            text = preset_config_text(args.name)
            if args.out:
                Path(args.out).write_text(text)
            else:
                sys.stdout.write(text)
            return 0
        cfg = _apply_overrides(load_config(args.config), args)
        out = output_dir(cfg, args.command, args.out)
        if args.command == "run":
            path = cmd_run(cfg, out, args.grid, None, args.steps)
            print(path)
        elif args.command == "convergence":
            for path in cmd_convergence(cfg, out):
                print(path)
            sys.stdout.write((out / "table.md").read_text())
        elif args.command == "compare":
            for path in cmd_compare(cfg, out, args.grid, not args.no_plots, args.steps):
                print(path)
    except ConfigError as err:
        print(f"config error: {err}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
