"""Command-line front end.

    python3 -m collapse_lab simulate --lambda 1,-1 --tau 1 --dt 1e-3 --state plus --seed 7 --out traj.jsonl

Exit codes: 0 success, 2 configuration error, 3 numeric-invariant violation.
"""

from __future__ import annotations

import argparse
import cmath
import json
import math
import sys
import warnings
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any, Sequence

import numpy as np

from . import io as cio
from ._tolerances import TOL
from .control import MostProbablePathParams, counter_hamiltonian_check, effective_hamiltonian_mpp, freeze_run, most_probable_path
from .errors import CollapseLabError, ConfigError, InvalidValue, UnknownFlag
from .measurement import GaussianMeasurementConfig, PositionGridConfig, WeakRegimeWarning
from .qstate import normalize
from .reconstruction import kernel_dimension_report, kernel_space_basis, position_variance_law
from .trajectory import (
    OscillatorRunConfig,
    dual_axis_trajectory,
    oscillator_trajectory,
    run_ensemble,
    run_trajectory,
    worker_count,
)

MODES = ("simulate", "ensemble", "reconstruct", "oscillator", "mpp", "freeze", "kernel", "dualaxis")
EMITS = ("trajectory", "reconstruction", "stats", "plotdata")
DEFAULT_EMIT = {
    "simulate": ["trajectory"],
    "ensemble": ["stats"],
    "reconstruct": ["trajectory", "reconstruction"],
    "oscillator": ["plotdata"],
    "mpp": ["plotdata"],
    "freeze": ["plotdata"],
    "kernel": ["plotdata"],
    "dualaxis": ["trajectory"],
}
NEEDS_LAMBDA = {"simulate", "ensemble", "reconstruct", "freeze", "dualaxis"}

_R2 = 1 / math.sqrt(2)
PRESETS = {
    "zero": [1, 0],
    "one": [0, 1],
    "plus": [_R2, _R2],
    "minus": [_R2, -_R2],
    "plus-i": [_R2, 1j * _R2],
    "born": [math.sqrt(0.3), math.sqrt(0.7)],
}

# mode-specific options: name -> (type, default)
EXTRA_OPTIONS: dict[str, dict[str, tuple[type, Any]]] = {
    "simulate": {"index": (int, 0)},
    "ensemble": {"runs": (int, 100), "workers": (int, None)},
    "reconstruct": {"input": (str, None), "index": (int, 0)},
    "oscillator": {"points": (int, 512), "x0": (float, 0.0), "half_width": (float, None), "mass": (float, 1.0), "omega": (float, 1.0)},
    "mpp": {
        "xi": (float, 1.0),
        "yi": (float, 0.0),
        "zi": (float, 0.0),
        "zf": (float, 0.8),
        "T": (float, 1.0),
        "epsilon": (float, 0.0),
        "samples": (int, 101),
        "rk4_dt": (float, 1e-4),
    },
    "freeze": {"steps": (int, 10000), "control": (str, "on"), "readout": (float, None)},
    "kernel": {},
    "dualaxis": {"tau_x": (float, None), "index": (int, 0)},
}


@dataclass
class RunConfig:
    mode: str
    seed: int = 0
    tau: float | None = None
    dt: float | None = None
    t_max: float | None = None
    n: int | None = None
    eigenvalues: list | None = None
    state: list | None = None
    state_label: str | None = None
    out: str | None = None
    emit: list = field(default_factory=list)
    options: dict = field(default_factory=dict)

    def measurement(self) -> GaussianMeasurementConfig:
        return GaussianMeasurementConfig(self.tau, self.dt, self.eigenvalues)

    def initial(self):
        return normalize(np.array([complex(*z) for z in self.state]))

    def echo(self) -> dict:
        """Everything needed to rerun; ``out`` is left out on purpose."""
        d = asdict(self)
        d.pop("out")
        return d


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        if "unrecognized arguments" in message:
            flag = message.split(":", 1)[1].strip().split()[0]
            raise UnknownFlag(flag, message)
        if "invalid choice" in message:
            raise InvalidValue("mode", message)
        raise InvalidValue("arguments", message)


def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--config", help="JSON run config, or a trajectory file whose header carries one")
    common.add_argument("--seed", type=str)
    common.add_argument("--out")
    common.add_argument("--dt", type=str)
    common.add_argument("--tau", type=str)
    common.add_argument("--tmax", type=str)
    common.add_argument("--emit", help=f"comma list from {','.join(EMITS)}")
    common.add_argument("--n", type=str, help="Hilbert-space dimension")
    common.add_argument("--lambda", dest="lam", help="comma-separated pointer eigenvalues")
    common.add_argument("--state", help=f"comma-separated amplitudes or a preset ({', '.join(PRESETS)}, uniform)")

    parser = _Parser(prog="collapse-lab", description="Continuous-measurement collapse simulator")
    sub = parser.add_subparsers(dest="mode", required=True, parser_class=_Parser)
    for mode in MODES:
        sp = sub.add_parser(mode, parents=[common])
        for name in EXTRA_OPTIONS[mode]:
            sp.add_argument("--" + name.replace("_", "-"), dest="x_" + name, type=str)
    return parser


def _num(field_name: str, raw, kind=float):
    if raw is None:
        return None
    try:
        if kind is int:
            v = int(raw)
        elif kind is float:
            v = float(raw)
        else:
            return str(raw)
    except (TypeError, ValueError):
        raise InvalidValue(field_name, f"cannot parse {raw!r} as {kind.__name__}") from None
    if kind is float and math.isnan(v):
        raise InvalidValue(field_name, "NaN is not allowed")
    return v


def _parse_list(field_name: str, raw) -> list:
    if isinstance(raw, str):
        raw = [p for p in raw.split(",") if p.strip()]
    try:
        return [complex(str(x).replace(" ", "")) if isinstance(x, str) else x for x in raw]
    except ValueError:
        raise InvalidValue(field_name, f"cannot parse {raw!r}") from None


def _parse_state(raw, n: int | None) -> tuple[list, str | None]:
    """Returns [[re, im], ...] and the preset label (if any)."""
    label = None
    if isinstance(raw, str) and raw.strip().lower() in PRESETS:
        label = raw.strip().lower()
        vals = [complex(x) for x in PRESETS[label]]
    elif isinstance(raw, str) and raw.strip().lower() == "uniform":
        if n is None:
            raise InvalidValue("state", "preset 'uniform' needs --n or --lambda")
        label = "uniform"
        vals = [complex(1 / math.sqrt(n))] * n
    elif raw and isinstance(raw[0], (list, tuple)):
        # already-normalized echo from a previous run: keep the bits as they are
        vals = [complex(*z) for z in raw]
        if not all(cmath.isfinite(z) for z in vals) or abs(np.linalg.norm(vals) - 1) > 1e-12:
            raise InvalidValue("state", "stored amplitudes must be finite and normalized")
        return [[float(z.real), float(z.imag)] for z in vals], None
    else:
        vals = [complex(x) for x in _parse_list("state", raw)]
    if len(vals) < 2:
        raise InvalidValue("state", "need at least two amplitudes")
    if not all(cmath.isfinite(z) for z in vals):
        raise InvalidValue("state", "amplitudes must be finite")
    v = np.array(vals)
    nrm = np.linalg.norm(v)
    if nrm == 0:
        raise InvalidValue("state", "zero vector")
    if abs(nrm - 1) > 1e-3:
        raise InvalidValue("state", f"amplitudes have norm {nrm:.6g}; expected 1")
    v = v / nrm
    return [[float(z.real), float(z.imag)] for z in v], label


def _load_config_file(path: str) -> dict:
    p = Path(path)
    try:
        text = p.read_text(encoding="utf-8")
    except OSError as exc:
        raise InvalidValue("config", f"cannot read {path}: {exc}") from None
    first = text.lstrip().split("\n", 1)[0]
    try:
        obj = json.loads(first) if first.startswith("{") and "schema" in first else json.loads(text)
    except json.JSONDecodeError as exc:
        raise InvalidValue("config", f"{path} is not JSON: {exc}") from None
    if not isinstance(obj, dict):
        raise InvalidValue("config", "top level must be an object")
    if "schema" in obj:
        run = (obj.get("config") or {}).get("run")
        if run is None:
            raise InvalidValue("config", f"{path} header has no run config")
        return run
    return obj


_FILE_KEYS = {f for f in RunConfig.__dataclass_fields__}


def parse_config(argv: Sequence[str] | None = None, config_file: str | None = None) -> RunConfig:
    """Merge defaults, an optional config file and command-line flags.

    Flags win over file values.  Raises :class:`UnknownFlag` or
    :class:`InvalidValue` naming the offending field.
    """
    argv = list(sys.argv[1:] if argv is None else argv)
    ns = build_parser().parse_args(argv)
    mode = ns.mode
    path = ns.config or config_file
    base: dict = _load_config_file(path) if path else {}
    for k in base:
        if k not in _FILE_KEYS:
            raise UnknownFlag(k, f"unknown config key {k!r}")
    if base.get("mode", mode) != mode:
        raise InvalidValue("mode", f"config file is for {base['mode']!r}, command line says {mode!r}")
    opts_base = dict(base.get("options") or {})
    for k in opts_base:
        if k not in EXTRA_OPTIONS[mode]:
            raise UnknownFlag(f"options.{k}", f"unknown option for {mode}")

    def pick(name, raw, kind):
        v = _num(name, raw, kind)
        return v if v is not None else _num(name, base.get(name), kind)

    seed = pick("seed", ns.seed, int)
    seed = 0 if seed is None else seed
    if not 0 <= seed < 2**64:
        raise InvalidValue("seed", "must be in [0, 2^64)")
    tau = pick("tau", ns.tau, float)
    dt = pick("dt", ns.dt, float)
    t_max = pick("t_max", ns.tmax, float)
    n = pick("n", ns.n, int)

    lam_raw = ns.lam if ns.lam is not None else base.get("eigenvalues")
    lam = None
    if lam_raw is not None:
        vals = _parse_list("lambda", lam_raw)
        if any(abs(complex(v).imag) > 0 for v in vals):
            raise InvalidValue("lambda", "pointer values must be real")
        lam = [float(complex(v).real) for v in vals]
    if n is None and lam is not None:
        n = len(lam)
    if lam is not None and len(lam) != n:
        raise InvalidValue("lambda", f"{len(lam)} values given for n={n}")
    if n is not None and n < 2:
        raise InvalidValue("n", "dimension must be at least 2")

    state_raw = ns.state if ns.state is not None else (base.get("state_label") or base.get("state"))
    state, label = (None, None)
    if state_raw is not None:
        state, label = _parse_state(state_raw, n)
        if n is None:
            n = len(state)
        elif len(state) != n:
            raise InvalidValue("state", f"{len(state)} amplitudes for n={n}")

    emit_raw = ns.emit if ns.emit is not None else base.get("emit")
    if isinstance(emit_raw, str):
        emit_raw = [e.strip() for e in emit_raw.split(",") if e.strip()]
    emit = list(emit_raw) if emit_raw else list(DEFAULT_EMIT[mode])
    for e in emit:
        if e not in EMITS:
            raise InvalidValue("emit", f"unknown output kind {e!r}")

    options = {}
    for name, (kind, default) in EXTRA_OPTIONS[mode].items():
        v = _num(name, getattr(ns, "x_" + name), kind)
        if v is None:
            v = _num(f"options.{name}", opts_base.get(name), kind)
        options[name] = default if v is None else v

    cfg = RunConfig(
        mode=mode,
        seed=seed,
        tau=tau,
        dt=dt,
        t_max=t_max,
        n=n,
        eigenvalues=lam,
        state=state,
        state_label=label,
        out=ns.out if ns.out is not None else base.get("out"),
        emit=emit,
        options=options,
    )
    _validate(cfg)
    return cfg


def _validate(cfg: RunConfig) -> None:
    mode = cfg.mode
    needs_tau_dt = mode not in ("mpp", "kernel")
    if mode == "reconstruct" and cfg.options.get("input"):
        needs_tau_dt = False
    if needs_tau_dt:
        for name in ("tau", "dt"):
            v = getattr(cfg, name)
            if v is None:
                raise InvalidValue(name, f"required for {mode}")
            if not (v > 0 and math.isfinite(v)):
                raise InvalidValue(name, f"must be positive and finite, got {v}")
    if cfg.t_max is not None and not cfg.t_max > 0:
        raise InvalidValue("t_max", "must be positive")
    needs_lambda = mode in NEEDS_LAMBDA and not (mode == "reconstruct" and cfg.options.get("input"))
    if needs_lambda:
        if cfg.eigenvalues is None:
            raise InvalidValue("lambda", f"required for {mode}")
        if len(set(cfg.eigenvalues)) < 2:
            raise InvalidValue("lambda", "need at least two distinct pointer values")
        if cfg.state is None:
            raise InvalidValue("state", f"required for {mode}")
    if needs_tau_dt and cfg.dt / cfg.tau > TOL.weak_regime_ratio:
        warnings.warn(
            f"dt/tau = {cfg.dt / cfg.tau:.3g} > {TOL.weak_regime_ratio}: outside the weak-measurement regime",
            WeakRegimeWarning,
        )
    if mode == "kernel" and cfg.state is None:
        raise InvalidValue("state", "required for kernel")
    if mode == "dualaxis" and cfg.n != 2:
        raise InvalidValue("n", "dualaxis needs a qubit")
    if mode == "freeze" and cfg.options["control"] not in ("on", "off"):
        raise InvalidValue("options.control", "must be 'on' or 'off'")
    if mode == "ensemble" and cfg.options["runs"] < 1:
        raise InvalidValue("options.runs", "need at least one run")
    if mode == "oscillator" and cfg.options["points"] < 64:
        raise InvalidValue("options.points", "need at least 64 grid points")


# ---------------------------------------------------------------- runners


def _out_path(cfg: RunConfig, suffix: str) -> Path:
    if cfg.out:
        p = Path(cfg.out)
        return p if len(cfg.emit) == 1 or p.suffix == suffix else p.with_suffix(suffix)
    return Path(f"{cfg.mode}-seed{cfg.seed}{suffix}")


def _write_record(cfg: RunConfig, record, *, reconstruct: bool) -> Path:
    record.config = dict(record.config, run=cfg.echo())
    dH = None
    if reconstruct and len(record.samples) >= 3:
        dH = [r.dH for r in record.reconstruct()]
    return cio.write_trajectory(record, _out_path(cfg, ".jsonl"), dH)


def _run_simulate(cfg: RunConfig) -> dict:
    rec = run_trajectory(cfg.initial(), cfg.measurement(), cfg.seed, cfg.t_max, index=cfg.options["index"])
    path = _write_record(cfg, rec, reconstruct="reconstruction" in cfg.emit)
    return {"out": str(path), "outcome": rec.outcome, "collapse_time": rec.collapse_time, "steps": len(rec.readouts)}


def _run_reconstruct(cfg: RunConfig) -> dict:
    src = cfg.options.get("input")
    if src:
        rec = cio.read_trajectory(src).record
        rec.config = dict(rec.config)
    else:
        rec = run_trajectory(cfg.initial(), cfg.measurement(), cfg.seed, cfg.t_max, index=cfg.options["index"])
    if len(rec.samples) < 3:
        raise InvalidValue("input", "need at least three samples to reconstruct")
    path = _write_record(cfg, rec, reconstruct=True)
    dh = [r.dH for r in rec.reconstruct()]
    return {"out": str(path), "samples": len(rec.samples), "max_dH": float(np.max(dh))}


def _run_ensemble(cfg: RunConfig) -> dict:
    workers = cfg.options["workers"] or worker_count()
    stats = run_ensemble(cfg.initial(), cfg.measurement(), cfg.options["runs"], cfg.seed, cfg.t_max, workers=workers)
    stats.config = dict(stats.config, run=cfg.echo())
    csv_path, side = cio.write_stats(stats, _out_path(cfg, ".csv"))
    return {
        "out": str(csv_path),
        "summary": str(side),
        "frequencies": [float(f) for f in stats.frequencies],
        "n_collapsed": stats.n_collapsed,
    }


def _run_dualaxis(cfg: RunConfig) -> dict:
    mz = cfg.measurement()
    tx = cfg.options["tau_x"]
    mx = None if tx is None else GaussianMeasurementConfig(tx, cfg.dt, cfg.eigenvalues)
    t_max = cfg.t_max if cfg.t_max is not None else 10 * cfg.tau
    rec = dual_axis_trajectory(cfg.initial(), mz, mx, cfg.seed, t_max, index=cfg.options["index"])
    path = _write_record(cfg, rec, reconstruct="reconstruction" in cfg.emit)
    return {"out": str(path), "steps": len(rec.readouts)}


def _run_oscillator(cfg: RunConfig) -> dict:
    o = cfg.options
    var0 = 1 / (2 * o["mass"] * o["omega"])
    hw = o["half_width"] if o["half_width"] is not None else 10 * math.sqrt(var0)
    grid = PositionGridConfig.centered(o["x0"], hw, o["points"], o["mass"], o["omega"])
    t_max = cfg.t_max if cfg.t_max is not None else 2 * cfg.tau
    run = oscillator_trajectory(OscillatorRunConfig(grid, o["x0"], cfg.tau, cfg.dt, t_max, cfg.seed))
    law = position_variance_law(var0, cfg.tau, run.times)
    rows = [
        {"t": float(t), "mean": float(m), "var": float(v), "var_law": float(lw), "excess_kurtosis": float(k)}
        for t, m, v, lw, k in zip(run.times, run.mean, run.variance, law, run.excess_kurtosis)
    ]
    header = {"schema": "collapse_lab.oscillator/1", "seed": cfg.seed, "config": dict(run.record.config, run=cfg.echo())}
    path = _out_path(cfg, ".jsonl")
    cio.write_jsonl(rows, path, header)
    rel = np.abs(run.variance / law - 1)
    return {"out": str(path), "max_rel_var_error": float(rel.max()), "max_abs_kurtosis": float(np.abs(run.excess_kurtosis).max())}


def _run_mpp(cfg: RunConfig) -> dict:
    o = cfg.options
    tau = cfg.tau if cfg.tau is not None else 1.0
    try:
        params = MostProbablePathParams(o["xi"], o["yi"], o["zi"], o["zf"], o["T"], o["epsilon"], tau)
    except ValueError as exc:
        raise InvalidValue("options", str(exc)) from None
    worked = abs(o["xi"] - 1) < 1e-12 and abs(o["yi"]) < 1e-12 and abs(o["zi"]) < 1e-12
    rows = []
    for t in np.linspace(0, params.T, o["samples"]):
        v = most_probable_path(params, float(t))
        row = {"t": float(t), "x": float(v[0]), "y": float(v[1]), "z": float(v[2])}
        if worked:
            row["variance"] = effective_hamiltonian_mpp(params, float(t)).variance
        rows.append(row)
    summary = {"r_bar": params.r_bar}
    if worked:
        rep = counter_hamiltonian_check(params, o["rk4_dt"])
        summary.update(
            stationary_distance=rep.stationary_distance, tracking_error=rep.tracking_error, endpoint_z=rep.endpoint_z
        )
    header = {"schema": "collapse_lab.mpp/1", "seed": cfg.seed, "summary": summary, "config": {"run": cfg.echo()}}
    path = _out_path(cfg, ".jsonl")
    cio.write_jsonl(rows, path, header)
    return dict(out=str(path), **summary)


def _run_freeze(cfg: RunConfig) -> dict:
    o = cfg.options
    steps = o["steps"]
    readouts = None if o["readout"] is None else [o["readout"]] * steps
    run = freeze_run(
        cfg.initial(), cfg.measurement(), steps, seed=cfg.seed, readouts=readouts, control=o["control"] == "on"
    )
    stride = max(1, steps // 1000)
    rows = [{"t": float(run.times[k]), "drift": float(run.drift[k])} for k in range(0, steps + 1, stride)]
    header = {"schema": "collapse_lab.freeze/1", "seed": cfg.seed, "config": {"run": cfg.echo()}}
    path = _out_path(cfg, ".jsonl")
    cio.write_jsonl(rows, path, header)
    return {"out": str(path), "final_drift": run.final_drift, "max_drift": run.max_drift, "collapsed": run.collapsed}


def _run_kernel(cfg: RunConfig) -> dict:
    st = cfg.initial()
    rep = kernel_dimension_report(st)
    basis = kernel_space_basis(st)
    worst = max((float(np.linalg.norm(t @ st.amplitudes)) for t in basis), default=0.0)
    out = dict(rep, max_residual=worst)
    if cfg.out:
        Path(cfg.out).write_text(json.dumps(cio._clean(dict(out, config={"run": cfg.echo()}))) + "\n", encoding="utf-8")
    return out


RUNNERS = {
    "simulate": _run_simulate,
    "ensemble": _run_ensemble,
    "reconstruct": _run_reconstruct,
    "oscillator": _run_oscillator,
    "mpp": _run_mpp,
    "freeze": _run_freeze,
    "kernel": _run_kernel,
    "dualaxis": _run_dualaxis,
}


def run(cfg: RunConfig) -> dict:
    return RUNNERS[cfg.mode](cfg)


def main(argv: Sequence[str] | None = None) -> int:
    with warnings.catch_warnings():
        warnings.simplefilter("always")
        warnings.showwarning = _warn_to_stderr
        try:
            try:
                cfg = parse_config(argv)
            except SystemExit as exc:  # --help
                return int(exc.code or 0)
            # already reported during parsing
            warnings.filterwarnings("ignore", category=WeakRegimeWarning)
            summary = run(cfg)
        except ConfigError as exc:
            print(f"config error: {exc}", file=sys.stderr)
            return 2
        except CollapseLabError as exc:
            print(f"numeric invariant violated: {type(exc).__name__}: {exc}", file=sys.stderr)
            return 3
        except ValueError as exc:
            # raised by config dataclasses (tau, dt, grid, ...) during setup
            print(f"config error: {exc}", file=sys.stderr)
            return 2
    print(json.dumps(cio._clean(summary)))
    return 0


def _warn_to_stderr(message, category, filename, lineno, file=None, line=None):
    print(f"warning: {category.__name__}: {message}", file=sys.stderr)


if __name__ == "__main__":
    sys.exit(main())
