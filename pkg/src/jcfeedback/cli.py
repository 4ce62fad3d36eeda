"""Command-line front end: ``jcfeedback --config job.yaml --mode spectrum --out out/``.

Every run directory receives ``resolved_config.yaml`` (all defaults filled
in), ``manifest.json`` (parameters, truncation diagnostics, wall time,
status, files) and one or more CSV files. Times in CSV files are in units of
``1/g`` and frequencies in units of ``g`` (raw units when ``g = 0``).

Exit codes: 0 success, 2 configuration error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import math
import os
import platform
import sys
import time
import warnings
from concurrent.futures import ProcessPoolExecutor

import numpy as np
import scipy

from . import __version__
from .config import MODES, JobConfig, dump_config, load_config, parse_config, set_key
from .errors import ConfigError, NumericalError, TruncationFailure
from .evolution import RunPlan, run
from .linear import find_poles, linear_spectrum
from .model import system_hamiltonian, system_state
from .mps import save_state
from .observables import g1_output, g2_output, power_spectrum, trace_fourier
from .oracle import closed_evolve, lindblad_evolve

logger = logging.getLogger("jcfeedback")

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC = 0, 2, 3

SIM_COLUMNS = ("tls_population", "inversion", "cavity_photons", "output_flux", "instantaneous_g2", "bond_stats", "discarded_weight")

UNITS = {
    "t": "1/g",
    "tau": "1/g",
    "omega": "g",
    "tls_population": "1",
    "inversion": "1",
    "cavity_photons": "1",
    "output_flux": "g",
    "instantaneous_g2": "1",
    "bond_stats": "1",
    "discarded_weight": "1",
    "g1_re": "1",
    "g1_im": "1",
    "g1_abs": "1",
    "g2": "1",
    "S": "1/g",
    "S_norm": "1",
    "magnitude": "1/g",
    "re_s": "g",
    "im_s": "g",
    "abs_D": "g",
}


# -- output helpers ------------------------------------------------------------


def _fmt(v):
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    v = float(v)
    if math.isnan(v):
        return "nan"
    return repr(v)


def _atomic_write(path, text):
    tmp = f"{path}.tmp{os.getpid()}"
    with open(tmp, "w", encoding="utf-8", newline="") as fh:
        fh.write(text)
    os.replace(tmp, path)


def write_csv(path, columns, emit=None):
    """Write ``{name: array}`` as CSV; header cells are ``name [unit]``."""
    names = [c for c in columns if emit is None or c in emit or c in ("t", "tau", "omega")]
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow([f"{n} [{UNITS.get(n, '1')}]" for n in names])
    n_rows = len(next(iter(columns.values())))
    cols = [np.asarray(columns[n]) for n in names]
    for i in range(n_rows):
        w.writerow([_fmt(c[i]) for c in cols])
    _atomic_write(path, buf.getvalue())
    return os.path.basename(path)


def read_csv(path):
    """Inverse of :func:`write_csv`; returns ``{name: float array}``."""
    with open(path, encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    names = [h.split(" [")[0] for h in rows[0]]
    data = np.array([[float(x) for x in r] for r in rows[1:]]) if len(rows) > 1 else np.zeros((0, len(names)))
    return {n: data[:, i] for i, n in enumerate(names)}


def _scale(cfg: JobConfig):
    return cfg.params.g if cfg.params.g > 0 else 1.0


# -- mode implementations ----------------------------------------------------


def _initial_state(cfg):
    init = cfg.section("init")
    cavity = ("coherent", init["alpha"]) if init["alpha"] is not None else init["fock"]
    return system_state(cfg.params.n_fock, init["tls"], cavity)


def _n_steps(cfg):
    return max(1, int(round(cfg.section("run")["t_final"] / cfg.params.dt)))


def _simulate(cfg, out, files, diag):
    r = cfg.section("run")
    plan = RunPlan(
        cfg.params,
        _n_steps(cfg),
        system_init=_initial_state(cfg),
        stride=r["stride"],
        failure_threshold=r["failure_threshold"],
        keep_bins=r["keep_bins"],
    )
    try:
        state, series = run(plan)
    except TruncationFailure as exc:
        if exc.partial is not None:
            files.append(_write_series(cfg, out, exc.partial, "simulate.partial.csv"))
        diag.update(failed_step=exc.step, bond_profile=list(exc.bond_profile or []))
        raise
    diag.update(
        max_bond=int(state.max_bond_seen),
        discarded_weight=float(state.discarded_weight),
        norm_deviation=float(abs(1.0 - state.norm() ** 2)),
        n_steps=plan.n_steps,
    )
    files.append(_write_series(cfg, out, series, "simulate.csv"))
    if r["snapshot"]:
        save_state(state, os.path.join(out, "state.mps"))
        files.append("state.mps")
    return state, series


def _write_series(cfg, out, series, name):
    sc = _scale(cfg)
    base = series["tls_population"] if "tls_population" in series else next(iter(series.values()))
    t = base.t
    cols = {"t": t * sc}
    for key in SIM_COLUMNS:
        if key not in series:
            continue
        s = series[key]
        if key == "output_flux":
            # flux of bin k is stamped k*dt; align on the system grid
            idx = {round(x / cfg.params.dt): v for x, v in zip(s.t, s.values)}
            vals = np.array([idx.get(round(x / cfg.params.dt), np.nan) for x in t]) / sc
        else:
            vals = s.values
        cols[key] = vals
    return write_csv(os.path.join(out, name), cols, cfg.emit)


def _correlations(cfg, out, files, diag):
    state, _ = _simulate(cfg, out, files, diag)
    c = cfg.section("correlations")
    p_max = min(c["max_lag"], _available_lags(state, c["base"]))
    g1 = g1_output(state, base=c["base"], max_lag=p_max)
    g2 = g2_output(state, base=c["base"], max_lag=p_max)
    diag.update(base_time=g1.base_time * _scale(cfg), max_lag=p_max, flux=g1.normalization["flux"] / _scale(cfg))
    cols = {
        "tau": g1.tau * _scale(cfg),
        "g1_re": g1.values.real,
        "g1_im": g1.values.imag,
        "g1_abs": np.abs(g1.values),
        "g2": g2.values,
    }
    files.append(write_csv(os.path.join(out, "correlations.csv"), cols, cfg.emit))
    return g1


def _available_lags(state, base):
    base = state.meta["released_upto"] if base is None else base
    return max(1, state.bin_position(base))


def _omega_grid(cfg):
    s = cfg.section("spectrum")
    return np.linspace(s["omega_min"], s["omega_max"], s["n_omega"])


def _spectrum(cfg, out, files, diag):
    g1 = _correlations(cfg, out, files, diag)
    s = cfg.section("spectrum")
    sc = _scale(cfg)
    spec = power_spectrum(g1, omega=_omega_grid(cfg) * sc, tail_fraction=s["tail_fraction"], normalize=s["normalize"], background=s["background"])
    col = "S_norm" if s["normalize"] else "S"
    vals = spec.values if s["normalize"] else spec.values * sc
    files.append(write_csv(os.path.join(out, "spectrum.csv"), {"omega": spec.omega / sc, col: vals}, cfg.emit))


def _trace_fft(cfg, out, files, diag):
    _, series = _simulate(cfg, out, files, diag)
    tf = cfg.section("trace_fft")
    ser = series[tf["observable"]]
    spec = trace_fourier(ser, window=tf["window"], g=_scale(cfg), t_min=tf["t_min"])
    files.append(write_csv(os.path.join(out, "trace_fft.csv"), {"omega": spec.omega, "magnitude": spec.values * _scale(cfg)}, cfg.emit))


def _linear_spectrum(cfg, out, files, diag):
    sc = _scale(cfg)
    s = cfg.section("spectrum")
    spec = linear_spectrum(_omega_grid(cfg) * sc, cfg.linear, variant=cfg.section("linear")["variant"], normalize=s["normalize"])
    col = "S_norm" if s["normalize"] else "S"
    vals = spec.values if s["normalize"] else spec.values * sc
    diag["excluded_points"] = int(np.sum(np.isnan(spec.values)))
    files.append(write_csv(os.path.join(out, "linear_spectrum.csv"), {"omega": spec.omega / sc, col: vals}, cfg.emit))


def _poles(cfg, out, files, diag):
    sc = _scale(cfg)
    w = cfg.section("poles")
    ps = find_poles(cfg.linear, re_min=w["re_min"] * sc, im_max=w["im_max"] * sc, density=max(8, int(math.ceil(w["density"] / sc))))
    order = np.lexsort((ps.poles.real, ps.poles.imag))
    diag.update(argument_principle_count=ps.count, n_poles=len(ps), flagged_cells=ps.flagged)
    cols = {"re_s": ps.poles.real[order] / sc, "im_s": ps.poles.imag[order] / sc, "abs_D": ps.residual[order] / sc}
    files.append(write_csv(os.path.join(out, "poles.csv"), cols, cfg.emit))
    if ps.flagged:
        raise NumericalError(f"{len(ps.flagged)} window cells with unmatched root counts")


def _oracle(cfg, out, files, diag):
    p = cfg.params
    solver = cfg.section("oracle")["solver"]
    if solver == "auto":
        solver = "closed" if p.kappa1 + p.kappa2 == 0 else "lindblad"
    r = cfg.section("run")
    t = np.arange(0, _n_steps(cfg) + 1, r["stride"]) * p.dt
    psi0 = _initial_state(cfg)
    if solver == "closed":
        series = closed_evolve(system_hamiltonian(p), psi0, t, p.n_fock)
    else:
        series = lindblad_evolve(p, np.outer(psi0, psi0.conj()), t)
    series.pop("energy", None)
    diag["solver"] = solver
    sc = _scale(cfg)
    cols = {"t": t * sc}
    for key in ("tls_population", "inversion", "cavity_photons", "instantaneous_g2"):
        cols[key] = series[key].values
    cols["output_flux"] = 2 * p.kappa1 * series["cavity_photons"].values / sc
    files.append(write_csv(os.path.join(out, "oracle.csv"), cols, cfg.emit))


RUNNERS = {
    "simulate": _simulate,
    "correlations": _correlations,
    "spectrum": _spectrum,
    "trace-fft": _trace_fft,
    "linear-spectrum": _linear_spectrum,
    "poles": _poles,
    "oracle": _oracle,
}


# -- orchestration -------------------------------------------------------------


def _manifest(cfg, status, files, diag, wall, error=None):
    return {
        "status": status,
        "mode": cfg.mode,
        "params": cfg.params.as_dict(),
        "config": cfg.to_document(),
        "diagnostics": diag,
        "files": files,
        "wall_time_s": wall,
        "error": error,
        "versions": {
            "jcfeedback": __version__,
            "python": platform.python_version(),
            "numpy": np.__version__,
            "scipy": scipy.__version__,
        },
    }


def _json_default(o):
    if isinstance(o, (np.integer,)):
        return int(o)
    if isinstance(o, (np.floating,)):
        return float(o)
    if isinstance(o, complex):
        return [o.real, o.imag]
    if isinstance(o, tuple):
        return list(o)
    return str(o)


def run_single(cfg: JobConfig, out=None):
    """Run one non-sweep job into ``out``; returns ``(exit_code, manifest)``."""
    out = out or cfg.output_dir
    os.makedirs(out, exist_ok=True)
    _atomic_write(os.path.join(out, "resolved_config.yaml"), dump_config(cfg))
    files, diag = ["resolved_config.yaml"], {}
    t0 = time.perf_counter()
    code, status, error = EXIT_OK, "ok", None
    try:
        with warnings.catch_warnings(record=True) as caught:
            warnings.simplefilter("always")
            try:
                RUNNERS[cfg.mode](cfg, out, files, diag)
            finally:
                if caught:
                    diag["warnings"] = [f"{w.category.__name__}: {w.message}" for w in caught]
                    for w in caught:
                        logger.warning("%s", w.message)
    except NumericalError as exc:
        code, status, error = EXIT_NUMERIC, "failed", str(exc)
        _atomic_write(os.path.join(out, "PARTIAL"), f"run aborted: {exc}\n")
        files.append("PARTIAL")
    except ValueError as exc:
        code, status, error = EXIT_NUMERIC, "failed", str(exc)
    man = _manifest(cfg, status, files, diag, time.perf_counter() - t0, error)
    _atomic_write(os.path.join(out, "manifest.json"), json.dumps(man, indent=2, sort_keys=True, default=_json_default))
    return code, man


def _point(args):
    cfg, out = args
    code, man = run_single(cfg, out)
    return code, man["status"], man["error"]


def run_job(cfg: JobConfig, jobs=None):
    """Run a job (single or sweep); returns the exit code."""
    if cfg.mode != "sweep":
        code, man = run_single(cfg)
        if man["error"]:
            logger.error("%s", man["error"])
        return code
    sw = cfg.sweep
    os.makedirs(cfg.output_dir, exist_ok=True)
    _atomic_write(os.path.join(cfg.output_dir, "resolved_config.yaml"), dump_config(cfg))
    points = []
    base_doc = cfg.to_document()
    base_doc["mode"] = sw["mode"]
    del base_doc["sweep"]
    for i, v in enumerate(sw["values"]):
        doc = json.loads(json.dumps(base_doc))
        set_key(doc, sw["param"], v)
        doc["output_dir"] = os.path.join(cfg.output_dir, f"point_{i:03d}")
        points.append((f"point_{i:03d}", sw["param"], v, parse_config(doc)))
    if sw["baseline"]:
        doc = json.loads(json.dumps(base_doc))
        set_key(doc, "params.kappa2", 0.0)
        doc["output_dir"] = os.path.join(cfg.output_dir, "baseline")
        points.append(("baseline", "params.kappa2", 0.0, parse_config(doc)))
    tasks = [(c, c.output_dir) for *_, c in points]
    jobs = jobs or os.cpu_count() or 1
    if jobs > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=min(jobs, len(tasks))) as ex:
            results = list(ex.map(_point, tasks))
    else:
        results = [_point(t) for t in tasks]
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["point", "param", "value", "directory", "status", "error"])
    for (name, key, v, _), (code, status, error) in zip(points, results):
        w.writerow([name, key, _fmt(v), name, status, error or ""])
    _atomic_write(os.path.join(cfg.output_dir, "index.csv"), buf.getvalue())
    codes = [r[0] for r in results]
    return max(codes) if codes else EXIT_OK


def build_parser():
    ap = argparse.ArgumentParser(prog="jcfeedback", description="Jaynes-Cummings feedback simulator")
    ap.add_argument("--config", metavar="PATH", help="YAML job file")
    ap.add_argument("--set", metavar="KEY=VALUE", action="append", default=[], dest="overrides", help="override a config key (repeatable)")
    ap.add_argument("--out", metavar="DIR", help="output directory")
    ap.add_argument("--jobs", metavar="N", type=int, default=None, help="worker processes for sweeps")
    ap.add_argument("--mode", choices=MODES, help="job mode (overrides the config file)")
    ap.add_argument("-v", "--verbose", action="store_true")
    return ap


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    overrides = list(args.overrides)
    if args.mode:
        overrides.append(f"mode={args.mode}")
    if args.out:
        # JSON strings are valid YAML scalars, so paths survive unchanged
        overrides.append(f"output_dir={json.dumps(args.out)}")
    try:
        cfg = load_config(args.config, overrides) if args.config else parse_config(None, overrides)
        if args.jobs is not None and args.jobs < 1:
            raise ConfigError("--jobs must be >= 1")
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    code = run_job(cfg, args.jobs)
    if code == EXIT_NUMERIC:
        print(f"numerical failure; see {cfg.output_dir}/manifest.json", file=sys.stderr)
    return code


if __name__ == "__main__":
    sys.exit(main())
