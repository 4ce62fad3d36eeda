"""Reference solvers for the limits where the chain result can be checked.

* closed system: exact Schroedinger evolution by diagonalization
* no feedback: Lindblad master equation with amplitude decay ``kappa1 + kappa2``
* two-time correlations of the no-feedback steady state by quantum regression

Density matrices are stored ``rho[s, t]``; superoperators act on the
row-major vectorization ``rho.reshape(-1)``.
"""

from __future__ import annotations

import logging
import math
import warnings

import numpy as np
import scipy.linalg

from .errors import NumericalError
from .evolution import TimeSeries
from .model import ModelParams, system_hamiltonian, system_operators
from .observables import CorrelationSeries

logger = logging.getLogger(__name__)

__all__ = [
    "closed_evolve",
    "lindblad_rhs",
    "lindblad_evolve",
    "liouvillian",
    "steady_state",
    "regression_correlations",
    "observables_from_rho",
    "LeakageWarning",
]


class LeakageWarning(RuntimeWarning):
    """Population reaches the top of the Fock cutoff."""


def _top_fock_population(pops_fock):
    return float(np.max(np.sum(pops_fock[..., -2:], axis=-1)))


def observables_from_rho(rho, n_fock, g2_floor=1e-8):
    o = system_operators(n_fock)
    pe = float(np.real(np.trace(o["pe"] @ rho)))
    n = float(np.real(np.trace(o["n"] @ rho)))
    a2 = o["a2"]
    num = float(np.real(np.trace(a2.conj().T @ a2 @ rho)))
    return {
        "tls_population": pe,
        "inversion": 2 * pe - 1,
        "cavity_photons": n,
        "instantaneous_g2": num / n**2 if n > g2_floor else float("nan"),
    }


def _series(t, rows, meta):
    keys = rows[0].keys()
    return {k: TimeSeries(t, np.array([r[k] for r in rows]), k, dict(meta)) for k in keys}


def closed_evolve(h, psi0, t, n_fock, leak_tol=1e-6, g2_floor=1e-8, return_states=False):
    """Exact evolution ``psi(t) = V exp(-i E t) V^+ psi0``.

    Returns a dict of :class:`TimeSeries` (inversion, tls_population,
    cavity_photons, instantaneous_g2, energy). Warns with
    :class:`LeakageWarning` when the two highest Fock levels ever hold more
    than ``leak_tol``.
    """
    h = np.asarray(h, dtype=np.complex128)
    if not np.allclose(h, h.conj().T, atol=1e-12):
        raise ValueError("Hamiltonian is not Hermitian")
    psi0 = np.asarray(psi0, dtype=np.complex128)
    if abs(np.linalg.norm(psi0) - 1) > 1e-10:
        raise ValueError("initial state is not normalized")
    t = np.asarray(t, dtype=float)
    e, v = np.linalg.eigh(h)
    c = v.conj().T @ psi0
    psi = (np.exp(-1j * np.outer(t, e)) * c) @ v.T  # (n_t, d)
    nc = n_fock + 1
    amp = psi.reshape(len(t), 2, nc)
    pops = np.abs(amp) ** 2
    pe = pops[:, 1, :].sum(axis=1)
    fock = pops.sum(axis=1)
    n = fock @ np.arange(nc)
    nn1 = fock @ (np.arange(nc) * (np.arange(nc) - 1.0))
    with np.errstate(invalid="ignore", divide="ignore"):
        g2 = np.where(n > g2_floor, nn1 / np.where(n > 0, n, 1.0) ** 2, np.nan)
    energy = np.real(np.einsum("ts,su,tu->t", psi.conj(), h, psi))
    leak = _top_fock_population(fock)
    if leak > leak_tol:
        warnings.warn(f"Fock cutoff {n_fock}: top two levels reach population {leak:.2e}", LeakageWarning, stacklevel=2)
    meta = {"n_fock": n_fock, "top_fock_population": leak}
    out = {
        "tls_population": TimeSeries(t, pe, "tls_population", dict(meta)),
        "inversion": TimeSeries(t, 2 * pe - 1, "inversion", dict(meta)),
        "cavity_photons": TimeSeries(t, n, "cavity_photons", dict(meta)),
        "instantaneous_g2": TimeSeries(t, g2, "instantaneous_g2", dict(meta)),
        "energy": TimeSeries(t, energy, "energy", dict(meta)),
    }
    if return_states:
        return out, psi
    return out


def _kappa_tot(p: ModelParams):
    return p.kappa1 + p.kappa2


def lindblad_rhs(p: ModelParams, h=None):
    """``f(rho) = -i[H, rho] + 2 kappa (a rho a^+ - {a^+ a, rho}/2)``."""
    o = system_operators(p.n_fock)
    h = system_hamiltonian(p) if h is None else h
    a, ad = o["a"], o["adag"]
    kap = _kappa_tot(p)
    heff = h - 1j * kap * (ad @ a)

    def f(rho):
        r = -1j * (heff @ rho - rho @ heff.conj().T)
        if kap:
            r = r + 2 * kap * (a @ rho @ ad)
        return r

    return f


def _rk4(f, rho, h):
    k1 = f(rho)
    k2 = f(rho + 0.5 * h * k1)
    k3 = f(rho + 0.5 * h * k2)
    k4 = f(rho + h * k3)
    return rho + (h / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)


def lindblad_evolve(p: ModelParams, rho0, t, max_step=None, tol=1e-9, g2_floor=1e-8, return_rho=False):
    """Integrate the no-feedback master equation on the grid ``t`` with RK4.

    The internal step is bounded by ``max_step`` (default: a stability bound
    from the generator norm). Each grid interval is repeated with halved
    steps when the trace drifts by more than ``tol``, the Frobenius norm
    exceeds one or a non-finite value appears; after five halvings a :class:`NumericalError` is raised.
    """
    rho = np.array(rho0, dtype=np.complex128)
    if abs(np.trace(rho) - 1) > 1e-10 or not np.allclose(rho, rho.conj().T, atol=1e-12):
        raise ValueError("rho0 must be Hermitian with unit trace")
    t = np.asarray(t, dtype=float)
    if np.any(np.diff(t) <= 0):
        raise ValueError("time grid must be increasing")
    f = lindblad_rhs(p)
    o = system_operators(p.n_fock)
    gen_norm = np.linalg.norm(system_hamiltonian(p), 2) + 2 * _kappa_tot(p) * p.n_fock
    if max_step is None:
        max_step = 0.015 / max(gen_norm, 1e-12)
    rows = [observables_from_rho(rho, p.n_fock, g2_floor)]
    top = 0.0
    fock_proj = np.diag(o["n"]).real
    top_mask = np.isin(np.rint(fock_proj), [p.n_fock, p.n_fock - 1])
    for i in range(1, len(t)):
        span = t[i] - t[i - 1]
        n_sub = max(1, int(math.ceil(span / max_step)))
        for attempt in range(6):
            h = span / n_sub
            trial = rho
            # a diverging trial is rejected below, so its overflow is not news
            with np.errstate(over="ignore", invalid="ignore"):
                for _ in range(n_sub):
                    trial = _rk4(f, trial, h)
            tr = np.trace(trial)
            # RK4 keeps the trace of a trace-free generator, so watch the purity bound too
            if np.all(np.isfinite(trial)) and abs(tr - 1) <= tol and np.linalg.norm(trial) <= 1 + 1e-6:
                break
            n_sub *= 2
        else:
            raise NumericalError(
                f"master equation step failed on [{t[i-1]}, {t[i]}]: trace {tr}, substeps {n_sub}"
            )
        rho = 0.5 * (trial + trial.conj().T)
        top = max(top, float(np.real(np.sum(np.diag(rho)[top_mask]))))
        rows.append(observables_from_rho(rho, p.n_fock, g2_floor))
    if top > 1e-6:
        warnings.warn(f"Fock cutoff {p.n_fock}: top two levels reach population {top:.2e}", LeakageWarning, stacklevel=2)
    out = _series(t, rows, {"n_fock": p.n_fock, "kappa_total": _kappa_tot(p), "top_fock_population": top})
    if return_rho:
        return out, rho
    return out


def liouvillian(p: ModelParams):
    """Superoperator matrix on row-major ``vec(rho)``: ``vec(A rho B) = (A kron B^T) vec(rho)``."""
    o = system_operators(p.n_fock)
    h = system_hamiltonian(p)
    a = o["a"]
    n = o["n"]
    d = h.shape[0]
    eye = np.eye(d)
    kap = _kappa_tot(p)
    lv = -1j * (np.kron(h, eye) - np.kron(eye, h.T))
    lv += 2 * kap * (np.kron(a, a.conj()) - 0.5 * np.kron(n, eye) - 0.5 * np.kron(eye, n.T))
    return lv


def steady_state(p: ModelParams, tol=1e-8):
    """Unique fixed point of the Liouvillian (trace-one, Hermitian)."""
    lv = liouvillian(p)
    d = int(round(math.sqrt(lv.shape[0])))
    tr_row = np.eye(d).reshape(-1)
    a = lv.copy()
    b = np.zeros(d * d, dtype=complex)
    # replace one equation by the trace condition
    a[0, :] = tr_row
    b[0] = 1.0
    try:
        x = np.linalg.solve(a, b)
    except np.linalg.LinAlgError as exc:
        raise NumericalError(f"steady state not unique: {exc}") from exc
    rho = x.reshape(d, d)
    rho = 0.5 * (rho + rho.conj().T)
    res = np.linalg.norm(lv @ rho.reshape(-1))
    if res > tol:
        raise NumericalError(f"steady-state residual {res:.2e} exceeds {tol:.0e}")
    return rho


def regression_correlations(p: ModelParams, which, lags, rho_ss=None):
    """Steady-state ``g1`` or ``g2`` of the intracavity field by quantum regression.

    ``g1(tau) = Tr[a e^{L tau}(rho a^+)] / <n>``,
    ``g2(tau) = Tr[a^+ a e^{L tau}(a rho a^+)] / <n>^2``.
    ``lags`` must be a uniform grid starting at 0.
    """
    lags = np.asarray(lags, dtype=float)
    if lags[0] != 0 or len(lags) < 2 or not np.allclose(np.diff(lags), lags[1] - lags[0]):
        raise ValueError("lags must be uniform and start at 0")
    if rho_ss is None:
        rho_ss = steady_state(p)
    o = system_operators(p.n_fock)
    a, ad, n_op = o["a"], o["adag"], o["n"]
    n = float(np.real(np.trace(n_op @ rho_ss)))
    if n <= 0:
        raise NumericalError("steady state has no photons; correlations undefined")
    prop = scipy.linalg.expm(liouvillian(p) * (lags[1] - lags[0]))
    if which == "g1":
        x = (rho_ss @ ad).reshape(-1)
        obs, norm = a, n
    elif which == "g2":
        x = (a @ rho_ss @ ad).reshape(-1)
        obs, norm = n_op, n * n
    else:
        raise ValueError(f"which must be 'g1' or 'g2', got {which!r}")
    # Tr[O X] = sum_{st} O[t, s] X[s, t]
    w = obs.T.reshape(-1)
    out = np.empty(len(lags), dtype=complex)
    for i in range(len(lags)):
        out[i] = w @ x
        x = prop @ x
    out /= norm
    if which == "g1":
        out[0] = 1.0
        vals = out
    else:
        vals = out.real
    return CorrelationSeries(lags, vals, which, float("inf"), {"occupation": n})
