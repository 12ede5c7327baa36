"""Command-line front end.

    ssmlab COMMAND [--config FILE] [--outdir DIR] [--seed N] [--eval-seed N]
                   [--dt DT] [--horizon T] [--x-grid START:STOP:COUNT]
                   [--system JSON|FILE] [--certificate JSON|FILE] ...

Commands: simulate, certify, sweep-lmi, exp1, exp2, exp3. Every run writes
``<outdir>/<command>/`` containing ``summary.json``, CSV tables, SVG plots and
``manifest.json``. The manifest is itself a valid ``--config`` file, so
``ssmlab --config <dir>/manifest.json --outdir elsewhere`` reproduces the run.

System description (JSON)::

    {"form": "mode_switched", "modes": [{"A": [[..]], "B": [[..]], "C": [[..]]}, ...],
     "schedule": {"breakpoints": [..], "values": [..]},
     "input": {"kind": "white_noise", "amplitude": 1.0, "seed": 0, "cutoff": null},
     "h0": [..]}

or ``"form": "affine_gated"`` with ``A_base``, ``A_sel``, ``B``, ``C``; its
schedule values are selection inputs ``x``. Certificate description::

    {"segments": [{"t0": 0, "t1": 10, "Q": [[..]]}, ...], "beta": 0.0, "rank_tol": 1e-8}

or ``{"Q": [[..]]}`` for a storage held over the whole horizon. An optional
``"iss_delta"`` enables the ISS check.

CSV schemas: trajectories ``t,h_i..,u_i..,y_i..``; ``rank_profile.csv``
``t,rank``; ``dissipation.csv`` ``t0,T,residual``; ``lmi.csv`` ``t,x,violation``;
exp1 ``energy_<kind>.csv`` ``t,V,norm_h``; exp2 ``states.csv`` ``t,h_1,h_2,h_3``;
exp3 ``history_<condition>.csv`` ``iter,task_loss,lmi_penalty,max_state_norm``.

Exit status: 0 success, 1 usage error, 2 runtime failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from dataclasses import asdict, dataclass, fields
from pathlib import Path

import numpy as np

from . import __version__
from .certify import (StorageCertificate, certify_run, dyadic_windows, lmi_violation_sweep)
from .experiments import (ExperimentResult, PlotSpec, TrainConfig, run_experiment1,
                          run_experiment2, run_experiment3)
from .report import write_report
from .ssm import (AffineGatedSystem, DivergenceError, InputSignal, Mode, ModeSwitchedSystem,
                  Schedule, simulate)

log = logging.getLogger("ssmlab")

COMMANDS = ("simulate", "certify", "exp1", "exp2", "exp3", "sweep-lmi")
DEFAULT_HORIZON = {"exp1": 40.0, "exp2": 15.0, "exp3": 20.0}
FALLBACK_HORIZON = 10.0
DEFAULT_X_GRID = "-3:3:61"
EXIT_OK, EXIT_USAGE, EXIT_RUNTIME = 0, 1, 2


class UsageError(Exception):
    pass


@dataclass
class RunConfig:
    command: str = ""
    outdir: str = ""
    seed: int = 7
    eval_seed: int | None = None
    dt: float = 1e-3
    horizon: float | None = None
    x_grid: str | list = DEFAULT_X_GRID
    system: dict | str | None = None
    certificate: dict | str | None = None
    # exp3 training knobs
    gamma: float = 0.01
    lr: float = 1e-2
    iters: int = 500
    train_dt: float = 1e-2
    train_horizon: float = 20.0

    def manifest(self) -> dict:
        """Resolved config minus the output location, plus the tool version."""
        d = asdict(self)
        d.pop("outdir")
        d["version"] = __version__
        return d


_KEYS = {f.name for f in fields(RunConfig)}
_MANIFEST_ONLY = {"version"}


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _parser() -> _Parser:
    p = _Parser(prog="ssmlab", description="Selective SSM simulation and certification.")
    p.add_argument("command", nargs="?", help="one of " + ", ".join(COMMANDS))
    p.add_argument("--config", help="JSON config file (a manifest.json works)")
    p.add_argument("--outdir")
    p.add_argument("--seed", type=int)
    p.add_argument("--eval-seed", type=int, dest="eval_seed")
    p.add_argument("--dt", type=float)
    p.add_argument("--horizon", type=float)
    p.add_argument("--x-grid", dest="x_grid", help="START:STOP:COUNT")
    p.add_argument("--system", help="inline JSON or path to a JSON file")
    p.add_argument("--certificate", help="inline JSON or path to a JSON file")
    p.add_argument("--gamma", type=float)
    p.add_argument("--lr", type=float)
    p.add_argument("--iters", type=int)
    p.add_argument("--train-dt", type=float, dest="train_dt")
    p.add_argument("--train-horizon", type=float, dest="train_horizon")
    p.add_argument("--version", action="version", version=__version__)
    return p


def _read_json_file(path) -> dict:
    try:
        with open(path) as f:
            data = json.load(f)
    except OSError as exc:
        raise UsageError(f"cannot read {path}: {exc.strerror}") from exc
    except json.JSONDecodeError as exc:
        raise UsageError(f"{path}: invalid JSON ({exc})") from exc
    if not isinstance(data, dict):
        raise UsageError(f"{path}: expected a JSON object")
    return data


def _load_description(value):
    """Inline JSON object, path to a JSON file, or an already-parsed dict."""
    if value is None or isinstance(value, dict):
        return value
    text = str(value).strip()
    if text.startswith("{"):
        try:
            return json.loads(text)
        except json.JSONDecodeError as exc:
            raise UsageError(f"invalid inline JSON: {exc}") from exc
    return _read_json_file(text)


def parse_x_grid(spec) -> np.ndarray:
    if isinstance(spec, (list, tuple)):
        grid = np.asarray(spec, dtype=float)
    else:
        try:
            a, b, n = str(spec).split(":")
            grid = np.round(np.linspace(float(a), float(b), int(n)), 12)
        except ValueError as exc:
            raise UsageError(f"bad x-grid {spec!r}; expected START:STOP:COUNT") from exc
    if grid.size == 0 or not np.all(np.isfinite(grid)):
        raise UsageError("x-grid must be a nonempty list of finite values")
    return grid


def parse_config(argv=None, config_file=None, env=None) -> RunConfig:
    """Merge defaults, the config file and flags (flags win) into a resolved RunConfig."""
    env = os.environ if env is None else env
    args = _parser().parse_args(argv)
    values: dict = {}
    path = config_file or args.config
    if path:
        data = _read_json_file(path)
        unknown = set(data) - _KEYS - _MANIFEST_ONLY
        if unknown:
            raise UsageError(f"unknown config keys: {', '.join(sorted(unknown))}")
        values.update({k: v for k, v in data.items() if k in _KEYS})
    for k, v in vars(args).items():
        if k in _KEYS and v is not None:
            values[k] = v

    cfg = RunConfig(**values)
    if cfg.command not in COMMANDS:
        raise UsageError(f"unknown command {cfg.command!r}; expected one of {', '.join(COMMANDS)}")
    if not cfg.outdir:
        cfg.outdir = env.get("SSMLAB_OUTDIR") or "out"
    for name in ("dt", "train_dt", "train_horizon"):
        if not (isinstance(getattr(cfg, name), (int, float)) and getattr(cfg, name) > 0):
            raise UsageError(f"{name} must be positive")
    cfg.dt = float(cfg.dt)
    if cfg.horizon is None:
        cfg.horizon = DEFAULT_HORIZON.get(cfg.command, FALLBACK_HORIZON)
    if not cfg.horizon > 0:
        raise UsageError("horizon must be positive")
    cfg.horizon = float(cfg.horizon)
    if cfg.eval_seed is None:
        cfg.eval_seed = cfg.seed + 1
    if cfg.iters < 1:
        raise UsageError("iters must be at least 1")
    parse_x_grid(cfg.x_grid)
    cfg.system = _load_description(cfg.system)
    cfg.certificate = _load_description(cfg.certificate)
    if cfg.command in ("simulate", "certify", "sweep-lmi") and cfg.system is None:
        raise UsageError(f"{cfg.command} needs --system")
    if cfg.command in ("certify", "sweep-lmi") and cfg.certificate is None:
        raise UsageError(f"{cfg.command} needs --certificate")
    return cfg


# --- description builders ---------------------------------------------------------------------

def _matrix(d: dict, key: str) -> np.ndarray:
    if key not in d:
        raise UsageError(f"system description missing {key!r}")
    return np.atleast_2d(np.asarray(d[key], dtype=float))


def build_system(desc: dict):
    form = desc.get("form", "mode_switched")
    try:
        if form == "mode_switched":
            modes = desc.get("modes")
            if not modes:
                raise UsageError("mode_switched system needs a nonempty 'modes' list")
            return ModeSwitchedSystem([Mode(_matrix(m, "A"), _matrix(m, "B"), _matrix(m, "C")) for m in modes])
        if form == "affine_gated":
            return AffineGatedSystem(_matrix(desc, "A_base"), _matrix(desc, "A_sel"),
                                     _matrix(desc, "B"), _matrix(desc, "C"))
    except ValueError as exc:
        raise UsageError(f"invalid system: {exc}") from exc
    raise UsageError(f"unknown system form {form!r}")


def build_run(cfg: RunConfig):
    """System, schedule, input and initial state for simulate/certify/sweep-lmi."""
    desc = cfg.system
    sys_ = build_system(desc)
    sch = desc.get("schedule") or {}
    try:
        sched = Schedule(np.asarray(sch.get("breakpoints", []), dtype=float),
                         np.asarray(sch.get("values", [0])), 0.0, cfg.horizon)
        inp = InputSignal(**desc.get("input", {}))
    except (ValueError, TypeError) as exc:
        raise UsageError(f"invalid system: {exc}") from exc
    h0 = np.asarray(desc.get("h0", np.ones(sys_.state_dim)), dtype=float)
    if h0.shape != (sys_.state_dim,):
        raise UsageError(f"h0 must have length {sys_.state_dim}")
    return sys_, sched, inp, h0


def build_certificate(cfg: RunConfig) -> tuple[StorageCertificate, float | None]:
    desc = dict(cfg.certificate)
    beta = float(desc.get("beta", 0.0))
    rank_tol = float(desc.get("rank_tol", 1e-8))
    try:
        if "segments" in desc:
            segs = [(s["t0"], s["t1"], np.asarray(s["Q"], dtype=float)) for s in desc["segments"]]
        elif "Q" in desc:
            segs = [(0.0, cfg.horizon, np.asarray(desc["Q"], dtype=float))]
        else:
            raise UsageError("certificate needs 'segments' or 'Q'")
        cert = StorageCertificate(tuple(segs), beta, rank_tol)
    except (KeyError, ValueError) as exc:
        raise UsageError(f"invalid certificate: {exc}") from exc
    delta = desc.get("iss_delta")
    return cert, (None if delta is None else float(delta))


def selection_grid(sys_, cfg: RunConfig) -> np.ndarray:
    """Mode-switched systems are swept over every mode index; gated ones over ``x_grid``."""
    if isinstance(sys_, ModeSwitchedSystem):
        return np.arange(len(sys_.modes), dtype=float)
    return parse_x_grid(cfg.x_grid)


# --- commands ---------------------------------------------------------------------------

def _trajectory_table(traj):
    return traj.header(), list(traj.rows())


def _norm_plot(traj, title):
    norms = traj.norms
    scale = "log10" if np.all(norms > 0) else "linear"
    return PlotSpec([("|h|", traj.t, norms)], scale, title, "t", "|h(t)|")


def cmd_simulate(cfg: RunConfig) -> tuple[ExperimentResult, int]:
    sys_, sched, inp, h0 = build_run(cfg)
    status = EXIT_OK
    try:
        traj = simulate(sys_, sched, inp, h0, cfg.dt)
        diverged = None
    except DivergenceError as exc:
        traj, diverged, status = exc.trajectory, exc.time, EXIT_RUNTIME
        log.error("divergence guard tripped at t=%s", exc.time)
    summary = {"command": "simulate", "final_time": float(traj.t[-1]),
               "final_state": [float(v) for v in np.real(traj.h[-1])],
               "max_state_norm": float(traj.norms.max()), "diverged_at": diverged}
    return ExperimentResult("simulate", summary, {"trajectory": _trajectory_table(traj)},
                            {"state_norm": _norm_plot(traj, "state norm")}), status


def cmd_certify(cfg: RunConfig) -> tuple[ExperimentResult, int]:
    sys_, sched, inp, h0 = build_run(cfg)
    cert, iss_delta = build_certificate(cfg)
    traj = simulate(sys_, sched, inp, h0, cfg.dt)
    rep = certify_run(sys_, traj, cert, selection_grid(sys_, cfg),
                      dyadic_windows(traj.t[0], traj.t[-1]), iss_delta)
    d = rep.to_dict()
    tables = {
        "trajectory": _trajectory_table(traj),
        "rank_profile": (["t", "rank"], [[r["t"], r["rank"]] for r in d["rank_profile"]]),
        "dissipation": (["t0", "T", "residual"], [[w["t0"], w["T"], w["residual"]] for w in d["dissipation"]]),
    }
    return ExperimentResult("certify", d, tables, {"state_norm": _norm_plot(traj, "state norm")}), EXIT_OK


def cmd_sweep_lmi(cfg: RunConfig) -> tuple[ExperimentResult, int]:
    sys_ = build_system(cfg.system)
    cert, _ = build_certificate(cfg)
    grid = selection_grid(sys_, cfg)
    t_grid = [seg[0] for seg in cert.segments]
    rep = lmi_violation_sweep(sys_, cert, grid, t_grid)
    summary = {"max_lmi_violation": rep.max_violation, "violating_fraction": rep.violating_fraction}
    rows = [[t, x, v] for t, x, v in rep.samples]
    series = []
    for t in t_grid:
        sel = [r for r in rows if r[0] == t]
        series.append((f"t={t:g}", [r[1] for r in sel], [r[2] for r in sel]))
    plots = {"lmi": PlotSpec(series, "linear", "LMI violation", "x", "violation")}
    return ExperimentResult("sweep-lmi", summary, {"lmi": (["t", "x", "violation"], rows)}, plots), EXIT_OK


def cmd_exp1(cfg):
    return run_experiment1(cfg.seed, cfg.dt, cfg.horizon), EXIT_OK


def cmd_exp2(cfg):
    return run_experiment2(cfg.seed, cfg.dt, cfg.horizon), EXIT_OK


def cmd_exp3(cfg):
    train = TrainConfig(gamma=cfg.gamma, lr=cfg.lr, iters=cfg.iters, seed=cfg.seed,
                        dt=cfg.train_dt, horizon=cfg.train_horizon)
    res = run_experiment3(cfg.seed, cfg.eval_seed, train, cfg.dt, cfg.horizon, parse_x_grid(cfg.x_grid))
    return res, EXIT_OK


DISPATCH = {"simulate": cmd_simulate, "certify": cmd_certify, "sweep-lmi": cmd_sweep_lmi,
            "exp1": cmd_exp1, "exp2": cmd_exp2, "exp3": cmd_exp3}


def execute(cfg: RunConfig) -> tuple[ExperimentResult, int]:
    """Run the command, write its artifacts and return the in-memory result with the exit status."""
    result, status = DISPATCH[cfg.command](cfg)
    result.name = cfg.command
    paths = write_report(result, cfg.outdir, cfg.manifest())
    log.info("wrote %d files to %s", len(paths), Path(cfg.outdir) / cfg.command)
    return result, status


def run(cfg: RunConfig) -> int:
    return execute(cfg)[1]


def main(argv=None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = parse_config(argv)
    except UsageError as exc:
        print(f"ssmlab: usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    try:
        return run(cfg)
    except UsageError as exc:
        print(f"ssmlab: usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except Exception as exc:  # any failure after a valid config is a runtime failure
        print(f"ssmlab: error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
