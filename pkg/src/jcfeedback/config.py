"""Job configuration: YAML documents, ``key=value`` overrides, validation.

Grammar (YAML, every key optional)::

    mode: simulate          # simulate | correlations | spectrum | trace-fft |
                            # linear-spectrum | poles | oracle | sweep
    output_dir: out
    params:                 # physical units (set g = 1 to work in units of g)
      g: 1.0
      drive: 0.0
      kappa1: 0.0
      kappa2: 0.0
      tau: 1.0              # must be an integer multiple of dt
      phi: 0.0
      delta: 0.0
      dt: 0.01
      n_fock: 10
      d_bin: 3
      cutoff: 1.0e-10       # relative singular value cutoff
      max_bond: 64
    init:
      tls: g                # g | e
      fock: 0
      alpha: null           # coherent amplitude (real), overrides fock
    run:
      t_final: 10.0
      stride: 1
      failure_threshold: 1.0e-4
      keep_bins: null
      snapshot: false       # write the final chain to state.mps
    correlations:
      max_lag: 5000         # in bins
      base: null            # bin index, default: last released bin
    spectrum:               # omega_* in units of g
      omega_min: -2.0
      omega_max: 2.0
      n_omega: 801
      tail_fraction: 0.1
      background: tail      # tail (mean of the last lags) | coherent (exact)
      normalize: true
    trace_fft:
      observable: inversion
      window: hann
      t_min: 0.0
    linear:
      variant: envelope     # envelope | printed
    poles:                  # s window in units of g
      re_min: -1.0
      im_max: 2.0
      density: 16
    oracle:
      solver: auto          # auto | closed | lindblad
    sweep:
      mode: spectrum        # any non-sweep mode
      param: params.tau
      values: [1.0, 3.0]
      baseline: false       # extra point with kappa2 = 0
    emit: null              # list of columns to keep, default all

Numbers may be written as multiples of pi: ``pi``, ``-pi/2``, ``1.5*pi``.

``--set key=value`` uses dotted keys (``params.g=0.2``); a bare key that is
a ``params`` field is accepted as shorthand. Values are parsed as YAML.
"""

from __future__ import annotations

import copy
import difflib
import math
import re
from dataclasses import dataclass, field

import yaml

from .errors import ConfigError
from .linear import LinearParams
from .model import ModelParams
from .tensor import SvdPolicy

__all__ = ["MODES", "DEFAULTS", "JobConfig", "parse_config", "load_config", "apply_override", "set_key", "dump_config"]

MODES = ("simulate", "correlations", "spectrum", "trace-fft", "linear-spectrum", "poles", "oracle", "sweep")

DEFAULTS = {
    "mode": "simulate",
    "output_dir": "out",
    "params": {
        "g": 1.0,
        "drive": 0.0,
        "kappa1": 0.0,
        "kappa2": 0.0,
        "tau": 1.0,
        "phi": 0.0,
        "delta": 0.0,
        "dt": 0.01,
        "n_fock": 10,
        "d_bin": 3,
        "cutoff": 1e-10,
        "max_bond": 64,
    },
    "init": {"tls": "g", "fock": 0, "alpha": None},
    "run": {"t_final": 10.0, "stride": 1, "failure_threshold": 1e-4, "keep_bins": None, "snapshot": False},
    "correlations": {"max_lag": 5000, "base": None},
    "spectrum": {"omega_min": -2.0, "omega_max": 2.0, "n_omega": 801, "tail_fraction": 0.1, "background": "tail", "normalize": True},
    "trace_fft": {"observable": "inversion", "window": "hann", "t_min": 0.0},
    "linear": {"variant": "envelope"},
    "poles": {"re_min": -1.0, "im_max": 2.0, "density": 16},
    "oracle": {"solver": "auto"},
    "sweep": {"mode": "spectrum", "param": None, "values": [], "baseline": False},
    "emit": None,
}

_CHOICES = {
    ("init", "tls"): ("g", "e"),
    ("trace_fft", "window"): ("none", "hann"),
    ("trace_fft", "observable"): ("tls_population", "inversion", "cavity_photons", "output_flux", "instantaneous_g2"),
    ("linear", "variant"): ("envelope", "printed"),
    ("spectrum", "background"): ("tail", "coherent"),
    ("oracle", "solver"): ("auto", "closed", "lindblad"),
}


def _all_keys(tree=DEFAULTS, prefix=""):
    out = []
    for k, v in tree.items():
        key = prefix + k
        out.append(key)
        if isinstance(v, dict):
            out.extend(_all_keys(v, key + "."))
    return out


def _unknown(key, valid):
    near = difflib.get_close_matches(key, valid, n=1, cutoff=0.5)
    hint = f"; did you mean {near[0]!r}?" if near else ""
    return ConfigError(f"unknown configuration key {key!r}{hint}")


def _merge(base, doc, prefix=""):
    for k, v in doc.items():
        key = prefix + str(k)
        if k not in base:
            raise _unknown(key, _all_keys())
        if isinstance(base[k], dict):
            if not isinstance(v, dict):
                raise ConfigError(f"{key} must be a mapping, got {v!r}")
            _merge(base[k], v, key + ".")
        else:
            base[k] = v


def set_key(tree, key, value):
    """Set a dotted ``key`` in a nested config dict in place."""
    parts = key.split(".")
    if len(parts) == 1 and parts[0] in DEFAULTS["params"]:
        parts = ["params", parts[0]]
    node, ref = tree, DEFAULTS
    for i, part in enumerate(parts):
        if not isinstance(ref, dict) or part not in ref:
            raise _unknown(key, _all_keys())
        if i == len(parts) - 1:
            if isinstance(ref[part], dict):
                raise ConfigError(f"{key} is a section, set one of its fields instead")
            node[part] = value
        else:
            node, ref = node[part], ref[part]


def apply_override(tree, item):
    """Apply one ``key=value`` override to a nested dict in place."""
    if "=" not in item:
        raise ConfigError(f"override {item!r} is not of the form key=value")
    key, raw = item.split("=", 1)
    try:
        value = yaml.safe_load(raw) if raw.strip() else None
    except yaml.YAMLError as exc:
        raise ConfigError(f"cannot parse value in {item!r}: {exc}") from exc
    set_key(tree, key.strip(), value)


_PI_EXPR = re.compile(r"^\s*([-+]?(?:\d+\.?\d*|\.\d+)(?:[eE][-+]?\d+)?|[-+])?\s*\*?\s*pi\s*(?:/\s*(\d+\.?\d*))?\s*$")


def _parse_number_text(text):
    # YAML 1.1 reads "1e-6" as a string; phases may be written as "pi/2", "1.5*pi"
    try:
        return float(text)
    except ValueError:
        pass
    m = _PI_EXPR.match(text)
    if not m:
        raise ValueError(text)
    factor = m.group(1)
    val = (float(factor) if factor not in (None, "+", "-") else (-1.0 if factor == "-" else 1.0)) * math.pi
    if m.group(2):
        val /= float(m.group(2))
    return val


def _number(key, v, kind=float, allow_none=False):
    if v is None and allow_none:
        return None
    if isinstance(v, str):
        try:
            v = _parse_number_text(v)
        except (ValueError, ZeroDivisionError):
            raise ConfigError(f"{key} must be a number, got {v!r}") from None
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        raise ConfigError(f"{key} must be a number, got {v!r}")
    if not math.isfinite(v):
        raise ConfigError(f"{key} must be finite, got {v!r}")
    if kind is int:
        if int(v) != v:
            raise ConfigError(f"{key} must be an integer, got {v!r}")
        return int(v)
    return float(v)


def _build_params(d):
    pd = dict(d)
    try:
        svd = SvdPolicy(cutoff=_number("params.cutoff", pd.pop("cutoff")), max_bond=_number("params.max_bond", pd.pop("max_bond"), int))
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    for k in ("n_fock", "d_bin"):
        pd[k] = _number(f"params.{k}", pd[k], int)
    for k in ("g", "drive", "kappa1", "kappa2", "tau", "phi", "delta", "dt"):
        pd[k] = _number(f"params.{k}", pd[k])
    return ModelParams(svd=svd, **pd)


@dataclass(frozen=True)
class JobConfig:
    mode: str
    params: ModelParams
    output_dir: str
    sections: dict = field(compare=False, hash=False)
    sweep: dict | None = None
    emit: tuple | None = None

    @property
    def linear(self) -> LinearParams:
        return LinearParams.from_model(self.params)

    def section(self, name):
        return self.sections[name]

    def __eq__(self, other):
        if not isinstance(other, JobConfig):
            return NotImplemented
        return self.to_document() == other.to_document()

    def to_document(self) -> dict:
        doc = copy.deepcopy(self.sections)
        p = self.params
        doc["mode"] = self.mode
        doc["output_dir"] = self.output_dir
        doc["params"] = {k: getattr(p, k) for k in DEFAULTS["params"] if k not in ("cutoff", "max_bond")}
        doc["params"]["cutoff"] = p.svd.cutoff
        doc["params"]["max_bond"] = p.svd.max_bond
        doc["sweep"] = copy.deepcopy(self.sweep) if self.sweep else copy.deepcopy(DEFAULTS["sweep"])
        doc["emit"] = list(self.emit) if self.emit else None
        return doc

    def with_param(self, key, value) -> "JobConfig":
        doc = self.to_document()
        set_key(doc, key, value)
        return parse_config(doc)


def _validate_sections(t):
    if t["mode"] not in MODES:
        raise ConfigError(f"mode must be one of {MODES}, got {t['mode']!r}")
    for (sec, key), choices in _CHOICES.items():
        if t[sec][key] not in choices:
            raise ConfigError(f"{sec}.{key} must be one of {choices}, got {t[sec][key]!r}")
    r = t["run"]
    r["t_final"] = _number("run.t_final", r["t_final"])
    if r["t_final"] <= 0:
        raise ConfigError("run.t_final must be > 0")
    r["stride"] = _number("run.stride", r["stride"], int)
    if r["stride"] < 1:
        raise ConfigError("run.stride must be >= 1")
    r["failure_threshold"] = _number("run.failure_threshold", r["failure_threshold"])
    r["keep_bins"] = _number("run.keep_bins", r["keep_bins"], int, allow_none=True)
    r["snapshot"] = bool(r["snapshot"])
    i = t["init"]
    i["fock"] = _number("init.fock", i["fock"], int)
    i["alpha"] = _number("init.alpha", i["alpha"], allow_none=True)
    c = t["correlations"]
    c["max_lag"] = _number("correlations.max_lag", c["max_lag"], int)
    c["base"] = _number("correlations.base", c["base"], int, allow_none=True)
    s = t["spectrum"]
    for k in ("omega_min", "omega_max", "tail_fraction"):
        s[k] = _number(f"spectrum.{k}", s[k])
    s["n_omega"] = _number("spectrum.n_omega", s["n_omega"], int)
    if s["omega_max"] <= s["omega_min"] or s["n_omega"] < 2:
        raise ConfigError("spectrum grid must have omega_max > omega_min and n_omega >= 2")
    s["normalize"] = bool(s["normalize"])
    t["trace_fft"]["t_min"] = _number("trace_fft.t_min", t["trace_fft"]["t_min"])
    pl = t["poles"]
    pl["re_min"] = _number("poles.re_min", pl["re_min"])
    pl["im_max"] = _number("poles.im_max", pl["im_max"])
    pl["density"] = _number("poles.density", pl["density"], int)
    if t["emit"] is not None:
        if isinstance(t["emit"], str):
            t["emit"] = [t["emit"]]
        t["emit"] = [str(x) for x in t["emit"]]


def _validate_sweep(t, params):
    sw = t["sweep"]
    if t["mode"] != "sweep":
        return None
    if sw["mode"] not in MODES or sw["mode"] == "sweep":
        raise ConfigError(f"sweep.mode must be a non-sweep mode, got {sw['mode']!r}")
    key = sw["param"]
    if not key:
        raise ConfigError("sweep.param is required in sweep mode")
    if "." not in key and key in DEFAULTS["params"]:
        key = "params." + key
    if key not in _all_keys() or key.startswith("sweep") or key in ("mode", "output_dir"):
        raise _unknown(key, [k for k in _all_keys() if not k.startswith("sweep")])
    vals = sw["values"]
    if not isinstance(vals, list) or not vals:
        raise ConfigError("sweep.values must be a non-empty list")
    vals = [_number(f"sweep.values[{i}]", v) for i, v in enumerate(vals)]
    return {"mode": sw["mode"], "param": key, "values": vals, "baseline": bool(sw["baseline"])}


def parse_config(document=None, overrides=()) -> JobConfig:
    """Validate a config mapping or YAML text (plus overrides) into a :class:`JobConfig`."""
    tree = copy.deepcopy(DEFAULTS)
    if document is not None:
        if isinstance(document, str):
            try:
                document = yaml.safe_load(document)
            except yaml.YAMLError as exc:
                raise ConfigError(f"config is not valid YAML: {exc}") from exc
        if document is None:
            document = {}
        if not isinstance(document, dict):
            raise ConfigError("config document must be a mapping")
        _merge(tree, document)
    for item in overrides:
        apply_override(tree, item)
    _validate_sections(tree)
    params = _build_params(tree["params"])
    sweep = _validate_sweep(tree, params)
    if sweep:
        # every point must validate on its own
        for v in sweep["values"]:
            trial = copy.deepcopy(tree)
            trial["mode"] = sweep["mode"]
            set_key(trial, sweep["param"], v)
            try:
                _validate_sections(trial)
                _build_params(trial["params"])
            except ConfigError as exc:
                raise ConfigError(f"sweep point {sweep['param']}={v}: {exc}") from exc
    sections = {k: v for k, v in tree.items() if k not in ("mode", "params", "output_dir", "sweep", "emit")}
    return JobConfig(
        mode=tree["mode"],
        params=params,
        output_dir=str(tree["output_dir"]),
        sections=sections,
        sweep=sweep,
        emit=tuple(tree["emit"]) if tree["emit"] else None,
    )


def load_config(path, overrides=()) -> JobConfig:
    try:
        with open(path, encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    return parse_config(text, overrides)


def dump_config(cfg: JobConfig) -> str:
    return yaml.safe_dump(cfg.to_document(), sort_keys=False, default_flow_style=False)
