"""Time stepping of the system + time-bin chain.

Chain layout during a run (system site always last)::

    [released bins ...] [loop bins k-L .. k-1] [system]

At step ``k`` the delayed bin ``k-L`` is swapped rightwards until it touches
the system, the three-site propagator acts on (delayed, system, fresh bin
``k``), and the block is re-split as (delayed, fresh, system). The delayed
bin has now met both mirrors, so it is released and swapped back to its
place in time order. The orthogonality center travels with the moving bin,
which keeps every site behind it canonical at no extra cost.

Without feedback (``kappa2 == 0``) there is no loop: each step couples only
the fresh bin and the system, and the fresh bin is released immediately.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import TruncationFailure
from .model import ModelParams, destroy, step_unitary, system_operators, system_state
from .mps import MpsState, SiteLabel, init_state, product_chain, vacuum

logger = logging.getLogger(__name__)

__all__ = [
    "RECORDERS",
    "RunPlan",
    "TimeSeries",
    "run",
    "output_flux",
    "instantaneous_g2",
    "system_expectations",
]

RECORDERS = (
    "tls_population",
    "inversion",
    "cavity_photons",
    "output_flux",
    "instantaneous_g2",
    "bond_stats",
    "discarded_weight",
)

SYSTEM_RECORDERS = ("tls_population", "inversion", "cavity_photons", "instantaneous_g2")


@dataclass
class RunPlan:
    params: ModelParams
    n_steps: int
    system_init: np.ndarray | None = None
    recorders: tuple = RECORDERS
    stride: int = 1
    failure_threshold: float = 1e-4
    keep_bins: int | None = None
    g2_floor: float = 1e-8
    check_every: int = 0

    def __post_init__(self):
        if self.n_steps < 1:
            raise ValueError("n_steps must be >= 1")
        if not self.recorders:
            raise ValueError("at least one recorder is required")
        unknown = set(self.recorders) - set(RECORDERS)
        if unknown:
            raise ValueError(f"unknown recorders {sorted(unknown)}; valid: {RECORDERS}")
        if self.stride < 1:
            raise ValueError("stride must be >= 1")
        if self.system_init is None:
            self.system_init = system_state(self.params.n_fock)


@dataclass
class TimeSeries:
    t: np.ndarray
    values: np.ndarray
    label: str
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.t = np.asarray(self.t, dtype=float)
        self.values = np.asarray(self.values)
        if len(self.t) != len(self.values):
            raise ValueError("t and values differ in length")
        if len(self.t) > 1 and np.any(np.diff(self.t) <= 0):
            raise ValueError("t must be strictly increasing")

    @property
    def dt(self):
        return float(self.t[1] - self.t[0]) if len(self.t) > 1 else float("nan")

    def __len__(self):
        return len(self.t)


def system_expectations(rho, n_fock, g2_floor=1e-8):
    """TLS/cavity observables from a system density matrix ``rho[s, t] = psi_s psi_t^*``."""
    o = system_operators(n_fock)

    def ev(op):
        return float(np.real(np.sum(rho * op.T)))

    pe = ev(o["pe"])
    n = ev(o["n"])
    a2 = o["a2"]
    num = float(np.real(np.sum(rho * (a2.conj().T @ a2).T)))
    g2 = num / n**2 if n > g2_floor else float("nan")
    return {
        "tls_population": pe,
        "inversion": 2.0 * pe - 1.0,
        "cavity_photons": n,
        "instantaneous_g2": g2,
    }


def instantaneous_g2(state: MpsState, n_fock=None, floor=1e-8):
    """Normal-ordered ``<a^+ a^+ a a> / <a^+ a>^2`` of the cavity; NaN below ``floor``."""
    s = state.system_position
    if n_fock is None:
        n_fock = state.tensors[s].shape[1] // 2 - 1
    rho = state.reduced_density(s)
    return system_expectations(rho, n_fock, floor)["instantaneous_g2"]


def output_flux(state: MpsState, k, dt=None):
    """Photon flux ``<b_k^+ b_k> / dt`` of a released output bin."""
    released = state.meta.get("released_upto")
    if released is None or k > released:
        raise ValueError(f"bin {k} has not been released yet (last released: {released})")
    if dt is None:
        dt = state.meta["dt"]
    pos = state.bin_position(k)
    d = state.tensors[pos].shape[1]
    b = destroy(d)
    val = state.expectation([(pos, b.conj().T @ b)]).real
    return max(val, 0.0) / dt


def _bin_number(rho_bin):
    d = rho_bin.shape[0]
    return float(np.real(np.sum(np.arange(d) * np.diag(rho_bin))))


class _Recorder:
    def __init__(self, plan, n_records):
        self.plan = plan
        self.names = [r for r in plan.recorders]
        self.t = []
        self.flux_t = []
        self.data = {name: [] for name in self.names}

    def record_system(self, t, obs, state, bond_now):
        self.t.append(t)
        for name in self.names:
            if name in SYSTEM_RECORDERS:
                self.data[name].append(obs[name])
            elif name == "bond_stats":
                self.data[name].append(bond_now)
            elif name == "discarded_weight":
                self.data[name].append(state.discarded_weight)

    def record_flux(self, t, value):
        if "output_flux" in self.data:
            self.flux_t.append(t)
            self.data["output_flux"].append(value)

    def series(self, meta):
        out = {}
        for name in self.names:
            t = self.flux_t if name == "output_flux" else self.t
            out[name] = TimeSeries(np.array(t), np.array(self.data[name]), name, dict(meta))
        return out


def _max_bond(state, lo, hi):
    bonds = [state.tensors[j].shape[2] for j in range(max(lo, 0), min(hi, len(state.tensors) - 1))]
    return max(bonds) if bonds else 1


def run(plan: RunPlan):
    """Evolve the chain for ``plan.n_steps`` steps.

    Returns ``(final_state, series)`` where ``series`` maps recorder names to
    :class:`TimeSeries`. System observables are sampled at ``t = 0`` and after
    every ``stride``-th step; the output flux of the bin released during step
    ``k`` is stamped ``t_k = k dt``.
    """
    p = plan.params
    dt = p.dt
    L = p.delay_bins if p.has_feedback else 0
    psi0 = np.asarray(plan.system_init, dtype=np.complex128).reshape(-1)
    if psi0.shape[0] != p.d_sys:
        raise ValueError(f"system_init has dimension {psi0.shape[0]}, model needs {p.d_sys}")
    if L:
        state = init_state(psi0, L, p.d_bin, policy=p.svd)
        u = step_unitary(p).reshape([p.d_bin, p.d_sys, p.d_bin] * 2)
        # (new, sys, delayed) -> (delayed, sys, new) on both sides
        u = u.transpose(2, 1, 0, 5, 4, 3).reshape((p.d_bin**2 * p.d_sys,) * 2)
    else:
        state = product_chain([psi0], [SiteLabel.system()], policy=p.svd, center=0)
        u = step_unitary(p, include_delayed=False).reshape([p.d_bin, p.d_sys] * 2)
        u = u.transpose(1, 0, 3, 2).reshape((p.d_bin * p.d_sys,) * 2)
    state.meta.update(dt=dt, delay_bins=L, released_upto=None)
    vac = vacuum(p.d_bin)
    rec = _Recorder(plan, plan.n_steps)
    meta = {"params": p.as_dict(), "delay_bins": L}
    rho0 = np.outer(psi0, psi0.conj())
    rec.record_system(0.0, system_expectations(rho0, p.n_fock, plan.g2_floor), state, 1)
    released = 0

    for k in range(plan.n_steps):
        s = len(state) - 1
        if L:
            d0 = s - L
            state.move_center(d0)
            for j in range(d0, s - 1):
                state.swap_sites(j, center=1)
            theta = state.block(s - 1, 2)[..., 0]  # (chi, d_delayed, d_sys)
            chi = theta.shape[0]
            theta = np.multiply.outer(theta, vac)  # (chi, dd, ds, dn)
            theta = (theta.reshape(chi, -1) @ u.T).reshape(chi, p.d_bin, p.d_sys, p.d_bin)
            rho_sys = np.einsum("ldsn,ldtn->st", theta, theta.conj())
            rho_out = np.einsum("ldsn,lesn->de", theta, theta.conj())
            delayed_label = state.labels[s - 1]
            block = theta.transpose(0, 1, 3, 2)[..., None]  # (chi, dd, dn, ds, 1)
            state.set_block(s - 1, 2, block, [delayed_label, SiteLabel.bin(k), SiteLabel.system()], 0)
            for j in range(s - 2, d0 - 1, -1):
                state.swap_sites(j, center=0)
            out_index = delayed_label.bin_index
            active_lo = d0
        else:
            theta = state.tensors[s][..., 0]  # (chi, ds)
            chi = theta.shape[0]
            theta = np.multiply.outer(theta, vac)  # (chi, ds, dn)
            theta = (theta.reshape(chi, -1) @ u.T).reshape(chi, p.d_sys, p.d_bin)
            rho_sys = np.einsum("lsn,ltn->st", theta, theta.conj())
            rho_out = np.einsum("lsn,lsm->nm", theta, theta.conj())
            block = theta.transpose(0, 2, 1)[..., None]
            state.set_block(s, 1, block, [SiteLabel.bin(k), SiteLabel.system()], 1)
            out_index = k
            active_lo = s - 1
        released += 1
        state.meta["released_upto"] = out_index
        rec.record_flux(k * dt, _bin_number(rho_out) / dt)

        if state.discarded_weight > plan.failure_threshold:
            meta.update(discarded_weight=state.discarded_weight, max_bond=state.max_bond_seen, n_released=released)
            err = TruncationFailure(
                f"cumulative discarded weight {state.discarded_weight:.3e} exceeds "
                f"{plan.failure_threshold:.1e} at step {k}",
                step=k,
                bond_profile=state.bond_dims,
                entropy_profile=state.entanglement_profile(),
            )
            err.partial = rec.series(dict(meta, partial=True))
            raise err
        if plan.keep_bins is not None:
            n_old = len(state) - 1 - L - plan.keep_bins
            if n_old > 0:
                state.prune_left(min(n_old, state.center))
        if (k + 1) % plan.stride == 0 or k + 1 == plan.n_steps:
            obs = system_expectations(rho_sys, p.n_fock, plan.g2_floor)
            bond_now = _max_bond(state, active_lo - 1, len(state))
            rec.record_system((k + 1) * dt, obs, state, bond_now)

    state.meta["n_steps"] = plan.n_steps
    meta.update(
        discarded_weight=state.discarded_weight,
        max_bond=state.max_bond_seen,
        n_released=released,
    )
    return state, rec.series(meta)
