"""Jaynes-Cummings system with a delayed coherent feedback channel.

System basis: TLS index slow, cavity Fock index fast, so the state
``|tls, n>`` sits at ``tls * (n_fock + 1) + n`` with ``tls = 0`` the ground
state and ``tls = 1`` the excited state. ``sigma_z`` has eigenvalues +-1 and
the TLS population is ``<sigma_+ sigma_->``.

Every time step couples three sites: the fresh bin ``k`` (cavity emission
through mirror 1 at rate ``kappa1``), the system, and the bin ``k - L`` that
left mirror 1 one delay earlier and now meets mirror 2 (rate ``kappa2``,
round-trip phase ``phi``). Bin operators are dimensionless single-mode
annihilators, i.e. the Wiener increment divided by ``sqrt(dt)``.
"""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

from .errors import ConfigError
from .tensor import SvdPolicy, matrix_exponential

__all__ = [
    "ModelParams",
    "destroy",
    "system_operators",
    "system_state",
    "coherent_amplitudes",
    "system_hamiltonian",
    "step_generator",
    "step_unitary",
]

TWO_PI = 2.0 * math.pi


@dataclass(frozen=True)
class ModelParams:
    """Physical and numerical parameters of a feedback run.

    Rates are amplitude rates: without feedback the cavity field decays as
    ``exp(-(kappa1 + kappa2) t)``. ``tau`` must be an integer multiple of
    ``dt``; ``phi`` is folded into ``[0, 2 pi)``.
    """

    g: float = 1.0
    drive: float = 0.0
    kappa1: float = 0.0
    kappa2: float = 0.0
    tau: float = 1.0
    phi: float = 0.0
    delta: float = 0.0
    dt: float = 0.01
    n_fock: int = 10
    d_bin: int = 3
    svd: SvdPolicy = field(default_factory=SvdPolicy)

    def __post_init__(self):
        for name in ("g", "drive", "kappa1", "kappa2", "tau", "phi", "delta", "dt"):
            v = getattr(self, name)
            if not isinstance(v, (int, float)) or not math.isfinite(v):
                raise ConfigError(f"{name} must be a finite number, got {v!r}")
        for name in ("g", "drive", "kappa1", "kappa2"):
            if getattr(self, name) < 0:
                raise ConfigError(f"{name} must be >= 0, got {getattr(self, name)}")
        if self.dt <= 0:
            raise ConfigError(f"dt must be > 0, got {self.dt}")
        if int(self.n_fock) != self.n_fock or self.n_fock < 1:
            raise ConfigError(f"n_fock must be an integer >= 1, got {self.n_fock}")
        if int(self.d_bin) != self.d_bin or self.d_bin < 2:
            raise ConfigError(f"d_bin must be an integer >= 2, got {self.d_bin}")
        ratio = self.tau / self.dt
        steps = round(ratio)
        if steps < 1 or abs(steps * self.dt - self.tau) > 1e-9 * max(self.tau, self.dt):
            raise ConfigError(
                f"tau={self.tau!r} is not a positive integer multiple of dt={self.dt!r} "
                f"(tau/dt = {ratio!r}); choose dt = tau / L for an integer L"
            )
        phi = float(self.phi) % TWO_PI
        # tiny negative angles round up to exactly 2 pi
        object.__setattr__(self, "phi", 0.0 if phi >= TWO_PI else phi)
        object.__setattr__(self, "n_fock", int(self.n_fock))
        object.__setattr__(self, "d_bin", int(self.d_bin))
        if isinstance(self.svd, dict):
            object.__setattr__(self, "svd", SvdPolicy(**self.svd))

    @property
    def delay_bins(self) -> int:
        return int(round(self.tau / self.dt))

    @property
    def d_sys(self) -> int:
        return 2 * (self.n_fock + 1)

    @property
    def has_feedback(self) -> bool:
        return self.kappa2 > 0.0

    def replace(self, **changes) -> "ModelParams":
        return dataclasses.replace(self, **changes)

    def as_dict(self) -> dict:
        out = dataclasses.asdict(self)
        out["svd"] = {"cutoff": self.svd.cutoff, "max_bond": self.svd.max_bond}
        return out


def destroy(d):
    return np.diag(np.sqrt(np.arange(1, d, dtype=float)), 1).astype(np.complex128)


@lru_cache(maxsize=32)
def _system_operators(n_fock):
    nc = n_fock + 1
    a_c = destroy(nc)
    sm_t = np.array([[0, 1], [0, 0]], dtype=np.complex128)
    i_t = np.eye(2, dtype=np.complex128)
    i_c = np.eye(nc, dtype=np.complex128)
    a = np.kron(i_t, a_c)
    sm = np.kron(sm_t, i_c)
    ops = {
        "a": a,
        "adag": a.conj().T,
        "sm": sm,
        "sp": sm.conj().T,
        "n": a.conj().T @ a,
        "pe": sm.conj().T @ sm,
        "sz": np.kron(np.diag([-1.0, 1.0]).astype(np.complex128), i_c),
        "a2": a @ a,
        "identity": np.eye(2 * nc, dtype=np.complex128),
    }
    for v in ops.values():
        v.setflags(write=False)
    return ops


def system_operators(n_fock):
    """Dict of system operators: ``a, adag, sm, sp, n, pe, sz, a2, identity``."""
    return _system_operators(int(n_fock))


def coherent_amplitudes(alpha, n_fock):
    """Fock amplitudes of ``|alpha>`` truncated to ``0..n_fock`` (not renormalized)."""
    n = np.arange(n_fock + 1)
    logfact = np.array([math.lgamma(k + 1) for k in n])
    mag = np.exp(-abs(alpha) ** 2 / 2 + n * np.log(abs(alpha) + 1e-300) - 0.5 * logfact)
    if alpha == 0:
        mag = (n == 0).astype(float)
    phase = np.exp(1j * n * np.angle(alpha))
    return mag * phase


def system_state(n_fock, tls="g", cavity=0):
    """Normalized product vector ``|tls> (x) |cavity>``.

    ``cavity`` is either a Fock number (int) or ``("coherent", alpha)``.
    A truncated coherent state is renormalized.
    """
    t = np.zeros(2, dtype=np.complex128)
    t[{"g": 0, "e": 1}[tls]] = 1.0
    if isinstance(cavity, tuple):
        kind, alpha = cavity
        if kind != "coherent":
            raise ValueError(f"unknown cavity state {kind!r}")
        c = coherent_amplitudes(complex(alpha), n_fock).astype(np.complex128)
        c /= np.linalg.norm(c)
    else:
        if not 0 <= int(cavity) <= n_fock:
            raise ValueError(f"Fock state {cavity} outside cutoff {n_fock}")
        c = np.zeros(n_fock + 1, dtype=np.complex128)
        c[int(cavity)] = 1.0
    return np.kron(t, c)


def system_hamiltonian(p: ModelParams) -> np.ndarray:
    """``g (a^+ s_- + s_+ a) + E (s_+ + s_-) + Delta (a^+ a + s_+ s_-)`` in units of hbar."""
    o = system_operators(p.n_fock)
    h = p.g * (o["adag"] @ o["sm"] + o["sp"] @ o["a"])
    h = h + p.drive * (o["sp"] + o["sm"])
    h = h + p.delta * (o["n"] + o["pe"])
    return h


def step_generator(p: ModelParams, include_delayed=True) -> np.ndarray:
    """Anti-Hermitian exponent of one time step.

    The matrix acts on ``new bin (x) system (x) delayed bin`` (first factor
    slowest). With ``include_delayed=False`` the delayed factor is dropped and
    the matrix acts on ``new bin (x) system``.
    """
    o = system_operators(p.n_fock)
    b = destroy(p.d_bin)
    bd = b.conj().T
    ib = np.eye(p.d_bin, dtype=np.complex128)
    a, ad = o["a"], o["adag"]
    hs = system_hamiltonian(p)
    c1 = math.sqrt(2.0 * p.kappa1 * p.dt)
    if not include_delayed:
        m = np.kron(ib, -1j * p.dt * hs)
        m += c1 * (np.kron(bd, a) - np.kron(b, ad))
        return m
    c2 = math.sqrt(2.0 * p.kappa2 * p.dt)
    ph = np.exp(1j * p.phi)
    m = np.kron(np.kron(ib, -1j * p.dt * hs), ib)
    m += c1 * (np.kron(np.kron(bd, a), ib) - np.kron(np.kron(b, ad), ib))
    m += c2 * (ph * np.kron(np.kron(ib, a), bd) - np.conj(ph) * np.kron(np.kron(ib, ad), b))
    return m


def step_unitary(p: ModelParams, mode="exact", order=4, include_delayed=True) -> np.ndarray:
    """Single-step propagator, exact exponential or a truncated power series."""
    m = step_generator(p, include_delayed=include_delayed)
    if mode == "exact":
        return matrix_exponential(m)
    if mode != "series":
        raise ValueError(f"unknown mode {mode!r}")
    if order < 1:
        raise ValueError(f"series order must be >= 1, got {order}")
    u = np.eye(m.shape[0], dtype=np.complex128)
    term = u.copy()
    for n in range(1, order + 1):
        term = term @ m / n
        u = u + term
    return u
