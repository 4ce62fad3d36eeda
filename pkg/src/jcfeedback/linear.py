"""Linearized delay model: effective decay, characteristic roots, line shapes.

In the weak-excitation limit the TLS behaves as a harmonic oscillator and the
cavity amplitude obeys a linear delay equation. Its Laplace transform has
the denominator

    D(s) = s + kappa + i Delta + k exp(-s tau + i phi) + g^2 / (s + i Delta)

with ``kappa = kappa1 + kappa2`` and ``k = 2 sqrt(kappa1 kappa2)``. Zeros of
``D`` are the complex frequencies of the linear dynamics; a zero at
``s = sigma - i w`` shows up as a spectral line at ``omega = w`` damped at
rate ``-sigma``.
"""

from __future__ import annotations

import cmath
import logging
import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from .errors import NumericalError
from .observables import Spectrum

logger = logging.getLogger(__name__)

__all__ = [
    "LinearParams",
    "PoleSet",
    "Spectrum",
    "effective_decay",
    "transfer_denominator",
    "denominator_derivative",
    "winding_number",
    "find_poles",
    "linear_spectrum",
]


@dataclass(frozen=True)
class LinearParams:
    g: float = 1.0
    kappa1: float = 0.0
    kappa2: float = 0.0
    tau: float = 0.0
    phi: float = 0.0
    delta: float = 0.0
    drive: float = 0.0

    def __post_init__(self):
        for name in ("g", "kappa1", "kappa2", "tau", "drive"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0")

    @property
    def kappa(self):
        return self.kappa1 + self.kappa2

    @property
    def k(self):
        return 2.0 * math.sqrt(self.kappa1 * self.kappa2)

    @classmethod
    def from_model(cls, p):
        return cls(g=p.g, kappa1=p.kappa1, kappa2=p.kappa2, tau=p.tau, phi=p.phi, delta=p.delta, drive=p.drive)


@dataclass
class PoleSet:
    poles: np.ndarray
    residual: np.ndarray
    window: dict
    count: int
    flagged: list = field(default_factory=list)

    def __len__(self):
        return len(self.poles)

    def least_damped(self, n=1):
        order = np.argsort(-self.poles.real)
        return self.poles[order[:n]]


def _unit_phase(phi):
    # exact values on the quadrant angles so that e.g. kappa + kappa - 2 kappa == 0
    q = phi / (math.pi / 2)
    r = round(q)
    if abs(q - r) < 1e-14:
        return (1.0, 1j, -1.0, -1j)[int(r) % 4]
    return cmath.exp(1j * phi)


def effective_decay(kappa1, kappa2, phi):
    """Zero-delay amplitude decay ``kappa1 + kappa2 + 2 sqrt(kappa1 kappa2) e^{i phi}``."""
    if kappa1 < 0 or kappa2 < 0:
        raise ValueError("rates must be >= 0")
    return kappa1 + kappa2 + 2.0 * math.sqrt(kappa1 * kappa2) * _unit_phase(phi)


def transfer_denominator(s, p: LinearParams):
    """``D(s)``; raises ``ZeroDivisionError`` at the TLS pole ``s = -i Delta``."""
    s = np.asarray(s, dtype=complex)
    shifted = s + 1j * p.delta
    if p.g > 0 and np.any(shifted == 0):
        raise ZeroDivisionError(f"D(s) is singular at s = -i*Delta = {-1j * p.delta}")
    fb = p.k * np.exp(-s * p.tau) * _unit_phase(p.phi)
    out = s + p.kappa + 1j * p.delta + fb
    if p.g > 0:
        out = out + p.g**2 / shifted
    return out if out.ndim else complex(out)


def denominator_derivative(s, p: LinearParams):
    s = np.asarray(s, dtype=complex)
    out = 1.0 - p.tau * p.k * np.exp(-s * p.tau) * _unit_phase(p.phi)
    if p.g > 0:
        out = out - p.g**2 / (s + 1j * p.delta) ** 2
    return out if out.ndim else complex(out)


def _entire(s, p):
    """``(s + i Delta) D(s)``: same zeros as ``D`` but no pole."""
    s = np.asarray(s, dtype=complex)
    shifted = s + 1j * p.delta
    inner = s + p.kappa + 1j * p.delta + p.k * np.exp(-s * p.tau) * _unit_phase(p.phi)
    if p.g == 0:
        return inner
    return shifted * inner + p.g**2


def _entire_prime(s, p):
    s = np.asarray(s, dtype=complex)
    e = p.k * np.exp(-s * p.tau) * _unit_phase(p.phi)
    inner = s + p.kappa + 1j * p.delta + e
    d_inner = 1.0 - p.tau * e
    if p.g == 0:
        return d_inner
    return inner + (s + 1j * p.delta) * d_inner


def _rectangle(re_lo, re_hi, im_lo, im_hi, n):
    c = [complex(re_lo, im_lo), complex(re_hi, im_lo), complex(re_hi, im_hi), complex(re_lo, im_hi)]
    edges = []
    for a, b in zip(c, c[1:] + c[:1]):
        edges.append(a + (b - a) * np.linspace(0.0, 1.0, n, endpoint=False))
    return np.concatenate(edges)


def winding_number(f, re_lo, re_hi, im_lo, im_hi, n=256, max_n=1 << 16):
    """Number of zeros of the analytic function ``f`` inside a rectangle.

    The boundary is resampled until no phase step exceeds pi/4.
    """
    while True:
        z = _rectangle(re_lo, re_hi, im_lo, im_hi, n)
        w = f(z)
        if np.any(np.abs(w) == 0) or not np.all(np.isfinite(w)):
            raise NumericalError("function vanishes or blows up on the contour")
        steps = np.angle(np.roll(w, -1) / w)
        if np.max(np.abs(steps)) < math.pi / 4 or n >= max_n:
            return int(round(np.sum(steps) / (2 * math.pi)))
        n *= 2


def _newton(s, p, tol=1e-14, max_iter=60):
    for _ in range(max_iter):
        f = _entire(s, p)
        fp = _entire_prime(s, p)
        if fp == 0 or not cmath.isfinite(f):
            return None
        step = f / fp
        # damp wild steps from far-away seeds
        if abs(step) > 1.0:
            step = step / abs(step)
        s = s - step
        if abs(step) <= tol * (1.0 + abs(s)):
            return s
    return s if abs(_entire(s, p)) < 1e-10 else None


def _residual(s, p):
    try:
        return abs(transfer_denominator(s, p))
    except ZeroDivisionError:
        return math.inf


def _merge(roots, tol=1e-6):
    out = []
    for r in sorted(roots, key=lambda z: (z.imag, z.real)):
        if all(abs(r - q) > tol for q in out):
            out.append(r)
    return out


def _seed_cell(p, re_lo, re_hi, im_lo, im_hi, n_re, n_im):
    found = []
    for x in np.linspace(re_lo, re_hi, n_re):
        for y in np.linspace(im_lo, im_hi, n_im):
            r = _newton(complex(x, y), p)
            if r is not None:
                found.append(r)
    return found


def find_poles(p: LinearParams, re_min=-1.0, im_max=2.0, density=16, re_max=0.0, max_refine=4):
    """All zeros of ``D(s)`` in ``re_min <= Re s <= re_max, |Im s| <= im_max``.

    Newton iterations start from a ``density``-per-unit-length grid (at least
    8 points along each side). The argument principle on the window boundary
    gives the expected count; cells whose count is not matched after
    ``max_refine`` seed refinements are reported in ``PoleSet.flagged``.
    """
    if not (math.isfinite(re_min) and math.isfinite(im_max)) or re_min >= re_max or im_max <= 0:
        raise ValueError("window must be finite and non-empty")
    if density < 8:
        raise ValueError("density must be >= 8 points per unit length")
    im_lo, im_hi = -im_max, im_max
    f = lambda z: _entire(z, p)  # noqa: E731
    # nudge the contour off any zero that sits exactly on it
    pad = 1e-9 * (1.0 + abs(re_min) + im_max)
    box = (re_min - pad, re_max + pad, im_lo - pad, im_hi + pad)

    def inside(r, b):
        return b[0] <= r.real <= b[1] and b[2] <= r.imag <= b[3]

    n_re = max(8, int(math.ceil(density * (re_max - re_min))))
    n_im = max(8, int(math.ceil(density * (im_hi - im_lo))))
    roots = _merge(r for r in _seed_cell(p, re_min, re_max, im_lo, im_hi, n_re, n_im) if inside(r, box))
    count = winding_number(f, *box)
    flagged = []
    if len(roots) != count:
        # split into cells and refine seeds where counts disagree
        nx = max(2, int(math.ceil(re_max - re_min)))
        ny = max(2, int(math.ceil(im_hi - im_lo)))
        xs = np.linspace(box[0], box[1], nx + 1)
        ys = np.linspace(box[2], box[3], ny + 1)
        extra = []
        for i in range(nx):
            for j in range(ny):
                cell = (xs[i], xs[i + 1], ys[j], ys[j + 1])
                try:
                    want = winding_number(f, *cell)
                except NumericalError:
                    want = None
                have = sum(1 for r in roots + extra if inside(r, cell))
                m = 8
                tries = 0
                while want is not None and have < want and tries < max_refine:
                    m *= 2
                    tries += 1
                    new = [r for r in _seed_cell(p, *cell, m, m) if inside(r, cell)]
                    extra = _merge(extra + new)
                    have = sum(1 for r in _merge(roots + extra) if inside(r, cell))
                if want is None or have != want:
                    flagged.append({"cell": cell, "expected": want, "found": have})
        roots = _merge(roots + extra)
    if flagged:
        logger.warning("find_poles: %d cells with unmatched root counts", len(flagged))
    roots = np.array(roots, dtype=complex)
    res = np.array([_residual(r, p) for r in roots])
    return PoleSet(
        poles=roots,
        residual=res,
        window={"re_min": re_min, "re_max": re_max, "im_max": im_max, "density": density},
        count=count,
        flagged=flagged,
    )


def linear_spectrum(omega, p: LinearParams, variant="envelope", normalize=False):
    """Line shape of the linearized model on the grid ``omega``.

    ``variant="envelope"`` returns ``g^2 E^2 / |D(-i omega)|^2``: the drive
    poles at ``s = 0, -i Delta`` belong to the coherent peak and are left
    out. ``variant="printed"`` keeps the conjugate-branch denominator
    ``D_dag(s) = s + kappa - i Delta + k e^{-s tau - i phi} + g^2/(s - i Delta)``
    and the drive factor ``s^2 (s^2 + Delta^2)``, all at ``s = -i omega``,
    and returns the modulus. Singular grid points become NaN with a warning.
    """
    omega = np.asarray(omega, dtype=float)
    s = -1j * omega
    amp = (p.g * p.drive) ** 2
    with np.errstate(divide="ignore", invalid="ignore"):
        ph = _unit_phase(p.phi)
        fb = p.k * np.exp(-s * p.tau)
        sh = s + 1j * p.delta
        d = s + p.kappa + 1j * p.delta + fb * ph + (p.g**2 / sh if p.g > 0 else 0.0)
        if variant == "envelope":
            vals = amp / np.abs(d) ** 2
            # at omega = Delta the TLS pole drives |D| to infinity: limit is 0
            vals = np.where(np.isfinite(d), vals, 0.0)
            bad = np.zeros(omega.shape, dtype=bool)
        elif variant == "printed":
            shc = s - 1j * p.delta
            dc = s + p.kappa - 1j * p.delta + fb * np.conj(ph) + (p.g**2 / shc if p.g > 0 else 0.0)
            drive_poles = s**2 * (s**2 + p.delta**2)
            vals = np.abs(amp / (d * dc * drive_poles))
            bad = ~np.isfinite(vals) | (drive_poles == 0) | ~np.isfinite(d) | ~np.isfinite(dc)
        else:
            raise ValueError(f"unknown variant {variant!r}")
    if np.any(bad):
        warnings.warn(f"linear_spectrum: {int(np.sum(bad))} singular grid points excluded", RuntimeWarning, stacklevel=2)
        vals = np.where(bad, np.nan, vals)
    spec = Spectrum(omega, vals, "raw", {"variant": variant})
    return spec.normalized() if normalize else spec
