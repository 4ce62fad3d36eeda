"""Output-field correlations, power spectra and Fourier transforms of traces.

Correlations are taken between released output bins. With the orthogonality
center on the base bin everything to its left is left-canonical, so a single
leftward sweep of a transfer environment yields every lag at once.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.signal import find_peaks, peak_widths

from .evolution import TimeSeries
from .model import destroy
from .mps import MpsState

__all__ = [
    "CorrelationSeries",
    "Spectrum",
    "g1_output",
    "g2_output",
    "power_spectrum",
    "trace_fourier",
    "peak_fwhm",
    "DEFAULT_MAX_LAG",
]

DEFAULT_MAX_LAG = 5000


@dataclass
class CorrelationSeries:
    tau: np.ndarray
    values: np.ndarray
    kind: str
    base_time: float
    normalization: dict = field(default_factory=dict)

    def __post_init__(self):
        self.tau = np.asarray(self.tau, dtype=float)
        self.values = np.asarray(self.values)
        if self.tau.shape != self.values.shape:
            raise ValueError("tau and values differ in shape")

    @property
    def dt(self):
        return float(self.tau[1] - self.tau[0])

    @property
    def defined(self):
        return not np.all(np.isnan(self.values))

    def __len__(self):
        return len(self.tau)


@dataclass
class Spectrum:
    omega: np.ndarray
    values: np.ndarray
    normalization: str = "raw"
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.omega = np.asarray(self.omega, dtype=float)
        self.values = np.asarray(self.values, dtype=float)
        if self.omega.shape != self.values.shape:
            raise ValueError("omega and values differ in shape")
        if len(self.omega) > 2:
            step = np.diff(self.omega)
            if not np.allclose(step, step[0], rtol=1e-6, atol=1e-12):
                raise ValueError("frequency grid must be uniform")

    @property
    def resolution(self):
        return float(self.omega[1] - self.omega[0])

    def normalized(self):
        return Spectrum(self.omega.copy(), self.values / np.nanmax(self.values), "max", dict(self.meta))

    def peak_frequency(self, lo=-np.inf, hi=np.inf):
        idx = np.flatnonzero((self.omega >= lo) & (self.omega <= hi))
        if not len(idx):
            raise ValueError("no grid points in the requested band")
        return float(self.omega[idx[np.nanargmax(self.values[idx])]])


def _released_positions(state: MpsState, base, p_max):
    released = state.meta.get("released_upto")
    if base is None:
        base = released
    if base is None:
        raise ValueError("no released bins in state")
    if released is not None and base > released:
        raise ValueError(f"bin {base} not released (last released: {released})")
    pos = state.bin_position(base)
    if pos - p_max < 0:
        raise ValueError(f"only {pos} bins precede base bin {base}; max_lag={p_max} too large")
    for p in (1, p_max):
        lab = state.labels[pos - p]
        if lab.is_system or lab.bin_index != base - p:
            raise ValueError(f"bin {base - p} is not stored in time order left of the base")
    return base, pos


def _lag_sweep(state: MpsState, pos, p_max, op_base, op_lag, op_zero):
    """``<op_lag(pos - p) op_base(pos)>`` for ``p = 1..p_max``; ``op_zero`` at ``p = 0``.

    Requires the orthogonality center on ``pos``.
    """
    a = state.tensors[pos]
    out = np.empty(p_max + 1, dtype=complex)
    out[0] = np.einsum("xsr,st,xtr->", a.conj(), op_zero, a, optimize=True)
    # right environment with the base operator, indexed (bra, ket) on the left bond of pos
    env = np.einsum("xsr,st,ytr->xy", a.conj(), op_base, a, optimize=True)
    for p in range(1, p_max + 1):
        b = state.tensors[pos - p]
        tmp = np.tensordot(b.conj(), env, axes=(2, 0))  # (l, s, y)
        out[p] = np.einsum("lsy,st,lty->", tmp, op_lag, b, optimize=True)
        env = np.tensordot(tmp, b, axes=([1, 2], [1, 2]))
    return out


def _prepare(state, base, max_lag):
    if max_lag < 1:
        raise ValueError("max_lag must be >= 1")
    base, pos = _released_positions(state, base, max_lag)
    state.move_center(pos)
    d = state.tensors[pos].shape[1]
    dt = state.meta.get("dt", 1.0)
    return base, pos, destroy(d), dt


def g1_output(state: MpsState, base=None, max_lag=DEFAULT_MAX_LAG, floor=1e-12, reference="base"):
    """Normalized ``<b^+(t - tau_p) b(t)>`` over released bins.

    ``base`` defaults to the most recently released bin. ``reference`` picks
    the denominator, which only matters away from a steady state:

    * ``"base"``: ``<n(t)>`` at the base bin
    * ``"lagged"``: ``<n(t - tau_p)>`` at the earlier bin
    * ``"geometric"``: ``sqrt(<n(t)> <n(t - tau_p)>)``, so ``|g1| <= 1``

    The coherent part ``<b^+(t - tau_p)> <b(t)>`` under the same denominator
    is stored in ``normalization["coherent"]``. Values are NaN where a
    denominator is below ``floor``. The state's center is moved.
    """
    if reference not in ("base", "lagged", "geometric"):
        raise ValueError(f"unknown reference {reference!r}")
    base, pos, b, dt = _prepare(state, base, max_lag)
    n_op = b.conj().T @ b
    raw = _lag_sweep(state, pos, max_lag, b, b.conj().T, n_op)
    n = raw[0].real
    tau = dt * np.arange(max_lag + 1)
    eye = np.eye(b.shape[0])
    mean = _lag_sweep(state, pos, max_lag, eye, b, b)
    meta = {"flux": n / dt, "occupation": n, "base_bin": base, "reference": reference}
    if reference == "base":
        denom = np.full(max_lag + 1, n)
    else:
        n_lag = _lag_sweep(state, pos, max_lag, eye, n_op, n_op).real
        denom = n_lag if reference == "lagged" else np.sqrt(np.clip(n_lag, 0.0, None) * n)
        meta["lagged_occupation"] = n_lag
    with np.errstate(divide="ignore", invalid="ignore"):
        vals = np.where(denom > floor, raw / np.where(denom > floor, denom, 1.0), np.nan + 0j)
        coh = np.where(denom > floor, np.conj(mean) * mean[0] / np.where(denom > floor, denom, 1.0), np.nan + 0j)
    if n <= floor:
        vals[:] = np.nan
        coh[:] = np.nan
    else:
        vals[0] = 1.0
    meta["coherent"] = coh
    return CorrelationSeries(tau, vals, "g1", base * dt, meta)


def g2_output(state: MpsState, base=None, max_lag=DEFAULT_MAX_LAG, floor=1e-12):
    """Normalized ``<b^+(t') b^+(t) b(t) b(t')> / <b^+ b>^2`` with ``t' = t - tau_p``.

    Bins at different times commute, so for ``p > 0`` this is
    ``<n(t - tau_p) n(t)>``; at zero lag it is the normal-ordered
    ``<b^+ b^+ b b>``, which needs ``d_bin >= 3`` to be nonzero.
    """
    base, pos, b, dt = _prepare(state, base, max_lag)
    n_op = b.conj().T @ b
    bb = b @ b
    raw = _lag_sweep(state, pos, max_lag, n_op, n_op, bb.conj().T @ bb)
    n = np.einsum("xsr,st,xtr->", state.tensors[pos].conj(), n_op, state.tensors[pos], optimize=True).real
    tau = dt * np.arange(max_lag + 1)
    if n <= floor:
        vals = np.full(max_lag + 1, np.nan)
    else:
        vals = raw.real / n**2
    return CorrelationSeries(
        tau, vals, "g2", base * dt, {"flux": n / dt, "occupation": n, "base_bin": base, "imag_residue": float(np.max(np.abs(raw.imag)) / n**2) if n > floor else 0.0}
    )


def _default_grid(n_lags, dt):
    # zero-padded to 4x the lag span, clipped to Nyquist
    step = 2 * math.pi / (4 * n_lags * dt)
    m = int(math.floor((math.pi / dt) / step))
    return step * np.arange(-m, m + 1)


def power_spectrum(g1: CorrelationSeries, omega=None, tail_fraction=0.1, normalize=False, chunk=256, background="tail"):
    """``S(w) = 2 dt Re sum_p [g1(tau_p) - g1_inf] e^{i w tau_p}``.

    With ``background="tail"`` ``g1_inf`` is the mean over the last
    ``tail_fraction`` of the lags. With ``"coherent"`` the exact coherent part
    recorded by :func:`g1_output` is subtracted lag by lag instead, which also
    removes a coherent signal that still oscillates (no steady state). The
    Riemann sum over ``tau >= 0`` may go slightly negative near the wings.
    """
    if background not in ("tail", "coherent"):
        raise ValueError(f"unknown background {background!r}")
    vals = np.asarray(g1.values, dtype=complex)
    if len(vals) < 16:
        raise ValueError(f"power spectrum needs >= 16 lags, got {len(vals)}")
    if np.any(np.isnan(vals)):
        raise ValueError("g1 contains undefined values")
    dt = g1.dt
    n_tail = max(1, int(round(tail_fraction * len(vals))))
    g_inf = vals[-n_tail:].mean()
    if background == "coherent":
        coh = g1.normalization.get("coherent")
        if coh is None or len(coh) != len(vals):
            raise ValueError("g1 carries no coherent part; compute it with g1_output")
        c = vals - np.asarray(coh, dtype=complex)
    else:
        c = vals - g_inf
    omega = _default_grid(len(vals), dt) if omega is None else np.asarray(omega, dtype=float)
    out = np.empty(omega.shape)
    for i in range(0, len(omega), chunk):
        w = omega[i:i + chunk]
        out[i:i + chunk] = 2.0 * dt * np.real(np.exp(1j * np.outer(w, g1.tau)) @ c)
    spec = Spectrum(omega, out, "raw", {"g1_inf": complex(g_inf), "tail_fraction": tail_fraction, "dt": dt, "background": background})
    return spec.normalized() if normalize else spec


def trace_fourier(series: TimeSeries, window="none", g=None, t_min=None):
    """Magnitude spectrum ``dt |sum_n w_n (x_n - mean) e^{i w t_n}|`` on the rfft grid.

    The frequency axis is returned in units of ``g`` (taken from the series
    metadata when not given).
    """
    t = np.asarray(series.t, dtype=float)
    x = np.asarray(series.values, dtype=float)
    if t_min is not None:
        keep = t >= t_min
        t, x = t[keep], x[keep]
    if len(t) < 4:
        raise ValueError("trace too short")
    step = np.diff(t)
    if not np.allclose(step, step[0], rtol=1e-9, atol=1e-12 * abs(step[0])):
        raise ValueError("trace_fourier needs uniform sampling")
    if g is None:
        g = series.meta.get("params", {}).get("g", 1.0) or 1.0
    dt = float(step[0])
    x = x - x.mean()
    if window == "hann":
        x = x * np.hanning(len(x))
    elif window != "none":
        raise ValueError(f"unknown window {window!r}")
    mag = dt * np.abs(np.fft.rfft(x))
    omega = 2 * math.pi * np.fft.rfftfreq(len(x), dt) / g
    return Spectrum(omega, mag, "raw", {"window": window, "g": g, "dt": dt, "n": len(x)})


def peak_fwhm(spec: Spectrum, near, search=None):
    """Full width at half maximum of the highest local peak within ``search`` of ``near``."""
    if search is None:
        search = abs(near) / 2 if near else 10 * spec.resolution
    peaks, _ = find_peaks(np.nan_to_num(spec.values))
    sel = [q for q in peaks if abs(spec.omega[q] - near) <= search]
    if not sel:
        raise ValueError(f"no peak within {search} of {near}")
    best = max(sel, key=lambda q: spec.values[q])
    width = peak_widths(np.nan_to_num(spec.values), [best], rel_height=0.5)[0][0]
    return float(spec.omega[best]), float(width * spec.resolution)
