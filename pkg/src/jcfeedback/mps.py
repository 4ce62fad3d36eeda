"""Matrix product state for one system site plus a chain of time bins.

Site tensors carry axes ``(left bond, physical, right bond)``. The state is
kept in mixed canonical form: every site left of ``center`` is
left-orthonormal, every site right of it right-orthonormal.

The leftmost bond may exceed one after :meth:`MpsState.prune_left` dropped
old output bins. Those bins were left-orthonormal, so the left environment of
the remaining chain is the identity and all local expectation values stay
exact.
"""

from __future__ import annotations

import io
import json
import struct
from dataclasses import dataclass

import numpy as np

from .errors import DimensionError
from .tensor import SvdPolicy, truncated_svd

__all__ = [
    "SiteLabel",
    "MpsState",
    "init_state",
    "apply_gate",
    "swap_sites",
    "expectation",
    "norm",
    "save_state",
    "load_state",
]

SYSTEM = "system"
BIN = "bin"

SNAPSHOT_MAGIC = b"JCMPS\0"
SNAPSHOT_VERSION = 1


@dataclass(frozen=True)
class SiteLabel:
    kind: str
    bin_index: int | None = None

    def __post_init__(self):
        if self.kind not in (SYSTEM, BIN):
            raise ValueError(f"unknown site kind {self.kind!r}")
        if self.kind == BIN and self.bin_index is None:
            raise ValueError("bin sites need a bin_index")

    @classmethod
    def system(cls):
        return cls(SYSTEM)

    @classmethod
    def bin(cls, k):
        return cls(BIN, int(k))

    @property
    def is_system(self):
        return self.kind == SYSTEM

    def __repr__(self):
        return "S" if self.is_system else f"b{self.bin_index}"


def split_block(theta, center, policy):
    """Split ``(chi_l, d_1, ..., d_n, chi_r)`` into ``n`` site tensors.

    Sites before ``center`` come out left-orthonormal, sites after it
    right-orthonormal. Returns ``(tensors, discarded_weight)``.
    """
    n = theta.ndim - 2
    dims = theta.shape[1:-1]
    tensors = [None] * n
    discarded = 0.0
    rest = theta
    for i in range(center):
        chi = rest.shape[0]
        tail = rest.shape[2:]
        u, s, vh, w = truncated_svd(rest.reshape(chi * dims[i], -1), policy)
        discarded += w
        k = len(s)
        tensors[i] = u.reshape(chi, dims[i], k)
        rest = (s[:, None] * vh).reshape(k, *tail)
    for i in range(n - 1, center, -1):
        chi = rest.shape[-1]
        head = rest.shape[:-2]
        u, s, vh, w = truncated_svd(rest.reshape(-1, dims[i] * chi), policy)
        discarded += w
        k = len(s)
        tensors[i] = vh.reshape(k, dims[i], chi)
        rest = (u * s[None, :]).reshape(*head, k)
    tensors[center] = rest
    return tensors, discarded


class MpsState:
    """Chain of site tensors with a tracked orthogonality center.

    Parameters
    ----------
    tensors : list of ndarray
        Site tensors with axes ``(left, physical, right)``.
    labels : list of SiteLabel
        One label per site; exactly one system site, unique bin indices.
    center : int
        Orthogonality center. The caller guarantees canonical form.
    policy : SvdPolicy
        Truncation applied by every split.

    Attributes
    ----------
    discarded_weight : float
        Sum of squared singular values dropped so far.
    max_bond_seen : int
        Largest bond dimension created so far.
    meta : dict
        Free-form run bookkeeping (time step, last released bin, ...).
    """

    def __init__(self, tensors, labels, center, policy=None):
        if len(tensors) != len(labels) or not tensors:
            raise DimensionError("need one label per site and at least one site")
        self.tensors = [np.asarray(t, dtype=np.complex128) for t in tensors]
        self.labels = list(labels)
        self.policy = policy if policy is not None else SvdPolicy()
        if not 0 <= center < len(self.tensors):
            raise DimensionError(f"center {center} outside chain of length {len(self.tensors)}")
        self.center = int(center)
        self.discarded_weight = 0.0
        self.max_bond_seen = max(self.bond_dims) if len(self.tensors) > 1 else 1
        self.meta = {}
        self._validate()

    def _validate(self):
        n_sys = sum(1 for lab in self.labels if lab.is_system)
        if n_sys != 1:
            raise DimensionError(f"chain must contain exactly one system site, found {n_sys}")
        idx = [lab.bin_index for lab in self.labels if not lab.is_system]
        if len(set(idx)) != len(idx):
            raise DimensionError("bin indices must be unique")
        for i, t in enumerate(self.tensors):
            if t.ndim != 3:
                raise DimensionError(f"site {i} has rank {t.ndim}, expected 3")
        for i in range(len(self.tensors) - 1):
            if self.tensors[i].shape[2] != self.tensors[i + 1].shape[0]:
                raise DimensionError(f"bond mismatch between sites {i} and {i + 1}")
        if self.tensors[-1].shape[2] != 1:
            raise DimensionError("right boundary bond must have extent 1")

    # -- bookkeeping -----------------------------------------------------

    def __len__(self):
        return len(self.tensors)

    @property
    def bond_dims(self):
        return [t.shape[2] for t in self.tensors[:-1]]

    @property
    def physical_dims(self):
        return [t.shape[1] for t in self.tensors]

    @property
    def system_position(self):
        for i in range(len(self.labels) - 1, -1, -1):
            if self.labels[i].is_system:
                return i
        raise DimensionError("no system site")

    def position(self, label):
        for i, lab in enumerate(self.labels):
            if lab == label:
                return i
        raise KeyError(f"site {label!r} not in chain")

    def bin_position(self, k):
        return self.position(SiteLabel.bin(k))

    def copy(self):
        out = MpsState.__new__(MpsState)
        out.tensors = [t.copy() for t in self.tensors]
        out.labels = list(self.labels)
        out.policy = self.policy
        out.center = self.center
        out.discarded_weight = self.discarded_weight
        out.max_bond_seen = self.max_bond_seen
        out.meta = dict(self.meta)
        return out

    # -- gauge -----------------------------------------------------------

    def move_center(self, i):
        """Shift the orthogonality center to site ``i`` with QR sweeps."""
        if not 0 <= i < len(self.tensors):
            raise IndexError(f"site {i} outside chain of length {len(self.tensors)}")
        ts = self.tensors
        while self.center < i:
            c = self.center
            chi_l, d, chi_r = ts[c].shape
            q, r = np.linalg.qr(ts[c].reshape(chi_l * d, chi_r))
            ts[c] = q.reshape(chi_l, d, q.shape[1])
            ts[c + 1] = np.tensordot(r, ts[c + 1], axes=(1, 0))
            self.center = c + 1
        while self.center > i:
            c = self.center
            chi_l, d, chi_r = ts[c].shape
            q, r = np.linalg.qr(ts[c].reshape(chi_l, d * chi_r).T)
            ts[c] = q.T.reshape(q.shape[1], d, chi_r)
            ts[c - 1] = np.tensordot(ts[c - 1], r.T, axes=(2, 0))
            self.center = c - 1
        return self

    def prune_left(self, n):
        """Drop the ``n`` leftmost sites (they must be left of the center)."""
        if n <= 0:
            return self
        if n > self.center:
            raise DimensionError("can only prune sites left of the orthogonality center")
        if any(lab.is_system for lab in self.labels[:n]):
            raise DimensionError("cannot prune the system site")
        del self.tensors[:n]
        del self.labels[:n]
        self.center -= n
        return self

    # -- local updates ---------------------------------------------------

    def block(self, start, n):
        """Contract sites ``start .. start+n-1`` into one tensor."""
        theta = self.tensors[start]
        for j in range(start + 1, start + n):
            theta = np.tensordot(theta, self.tensors[j], axes=(theta.ndim - 1, 0))
        return theta

    def set_block(self, start, n_old, theta, labels, center_offset):
        """Replace ``n_old`` sites by the split of ``theta``.

        ``theta`` has axes ``(left, d_1, ..., d_m, right)`` and may describe a
        different number of sites ``m = len(labels)`` than it replaces.
        """
        tensors, w = split_block(theta, center_offset, self.policy)
        self.tensors[start:start + n_old] = tensors
        self.labels[start:start + n_old] = labels
        self.center = start + center_offset
        self.discarded_weight += w
        for t in tensors[:-1]:
            if t.shape[2] > self.max_bond_seen:
                self.max_bond_seen = t.shape[2]
        return w

    def apply_gate(self, u, start, n, order=None, center=None):
        """Apply a joint operator to ``n`` contiguous sites and re-split.

        Parameters
        ----------
        u : ndarray or None
            Matrix of size ``prod(d_i)`` acting on the physical indices in
            chain order (first site slowest). ``None`` means identity.
        start, n : int
            First site and number of sites (2 or 3 in practice).
        order : sequence of int, optional
            Permutation of the ``n`` sites applied after the gate; used for
            SWAPs. ``order[j]`` is the old offset that ends up at offset ``j``.
        center : int, optional
            Offset within the block where the center ends up. Defaults to the
            offset the center had before.
        """
        if n < 1 or start < 0 or start + n > len(self.tensors):
            raise DimensionError(f"sites {start}..{start + n - 1} are not a contiguous range of the chain")
        if not start <= self.center < start + n:
            self.move_center(min(max(self.center, start), start + n - 1))
        old_offset = self.center - start
        theta = self.block(start, n)
        dims = theta.shape[1:-1]
        if u is not None:
            u = np.asarray(u, dtype=np.complex128)
            big = int(np.prod(dims))
            if u.shape != (big, big):
                if u.shape == tuple(dims) * 2:
                    u = u.reshape(big, big)
                else:
                    raise DimensionError(f"gate shape {u.shape} does not match physical dims {dims}")
            chi_l, chi_r = theta.shape[0], theta.shape[-1]
            mat = theta.reshape(chi_l, big, chi_r)
            theta = np.einsum("ij,ajb->aib", u, mat).reshape(theta.shape)
        labels = self.labels[start:start + n]
        if order is not None:
            order = list(order)
            if sorted(order) != list(range(n)):
                raise DimensionError(f"order {order} is not a permutation of {n} sites")
            theta = np.transpose(theta, [0] + [o + 1 for o in order] + [n + 1])
            labels = [labels[o] for o in order]
        if center is None:
            center = old_offset
        self.set_block(start, n, theta, labels, center)
        return self

    def swap_sites(self, i, center=None):
        """Exchange sites ``i`` and ``i+1``.

        ``center`` is the offset (0 or 1) where the orthogonality center ends;
        by default it follows the site that held it.
        """
        if not 0 <= i < len(self.tensors) - 1:
            raise IndexError(f"cannot swap sites {i} and {i + 1} in a chain of length {len(self.tensors)}")
        if center is None:
            if self.center == i:
                center = 1
            elif self.center == i + 1:
                center = 0
            else:
                center = 0
        return self.apply_gate(None, i, 2, order=(1, 0), center=center)

    # -- measurement -----------------------------------------------------

    def expectation(self, ops):
        """``<Psi| O_1 O_2 ... |Psi>`` for operators on distinct sites.

        ``ops`` is a list of ``(site, matrix)`` pairs or a dict.
        """
        if isinstance(ops, dict):
            ops = list(ops.items())
        sites = [int(s) for s, _ in ops]
        if len(set(sites)) != len(sites):
            raise DimensionError("operators must act on distinct sites")
        opmap = {}
        for s, o in ops:
            o = np.asarray(o, dtype=np.complex128)
            d = self.tensors[s].shape[1]
            if o.shape != (d, d):
                raise DimensionError(f"operator on site {s} has shape {o.shape}, expected {(d, d)}")
            opmap[int(s)] = o
        lo = min(sites + [self.center])
        hi = max(sites + [self.center])
        chi = self.tensors[lo].shape[0]
        env = np.eye(chi, dtype=np.complex128)
        for j in range(lo, hi + 1):
            a = self.tensors[j]
            o = opmap.get(j)
            if o is None:
                env = np.einsum("xy,xsr,ysq->rq", env, a.conj(), a, optimize=True)
            else:
                env = np.einsum("xy,xsr,st,ytq->rq", env, a.conj(), o, a, optimize=True)
        return complex(np.trace(env))

    def norm(self):
        a = self.tensors[self.center]
        return float(np.sqrt(np.vdot(a, a).real))

    def norm_full(self):
        """Norm by explicit contraction of the whole chain (gauge independent)."""
        env = np.eye(self.tensors[0].shape[0], dtype=np.complex128)
        for a in self.tensors:
            env = np.einsum("xy,xsr,ysq->rq", env, a.conj(), a, optimize=True)
        return float(np.sqrt(abs(np.trace(env))))

    def reduced_density(self, site):
        """Single-site reduced density matrix, ``rho[s, t] = sum psi_s conj(psi_t)``."""
        self.move_center(site)
        a = self.tensors[site]
        return np.einsum("asb,atb->st", a, a.conj())

    def check_canonical(self, tol=1e-10):
        """Largest deviation from the canonical-form identities."""
        worst = 0.0
        for j, a in enumerate(self.tensors):
            if j < self.center:
                m = np.einsum("asr,asq->rq", a.conj(), a)
            elif j > self.center:
                m = np.einsum("lsr,qsr->lq", a, a.conj())
            else:
                continue
            worst = max(worst, float(np.max(np.abs(m - np.eye(m.shape[0])))))
        return worst

    def to_dense(self):
        """Full state vector in chain order (first site slowest). Small chains only."""
        if self.tensors[0].shape[0] != 1:
            raise DimensionError("dense conversion needs an unpruned chain")
        theta = self.block(0, len(self.tensors))
        return theta.reshape(-1)

    def entanglement_profile(self):
        """Von Neumann entropy across each bond (moves the center)."""
        out = []
        keep = self.center
        self.move_center(0)
        for j in range(len(self.tensors) - 1):
            self.move_center(j)
            a = self.tensors[j]
            s = np.linalg.svd(a.reshape(-1, a.shape[2]), compute_uv=False)
            p = s**2 / max(np.sum(s**2), 1e-300)
            p = p[p > 1e-16]
            out.append(float(-np.sum(p * np.log(p))))
        self.move_center(keep)
        return out


def product_chain(site_vectors, labels, policy=None, center=None):
    tensors = [np.asarray(v, dtype=np.complex128).reshape(1, -1, 1) for v in site_vectors]
    if center is None:
        center = next((i for i, lab in enumerate(labels) if lab.is_system), 0)
    return MpsState(tensors, labels, center, policy)


def vacuum(d):
    v = np.zeros(d, dtype=np.complex128)
    v[0] = 1.0
    return v


def init_state(system_init, n_bins, d_bin, policy=None, first_bin=None):
    """Product state of ``n_bins`` vacuum bins followed by the system site.

    Bins are labelled ``first_bin, first_bin + 1, ...``; by default they are
    ``-n_bins .. -1``, i.e. the feedback loop contents before ``t = 0``.
    """
    psi = np.asarray(system_init, dtype=np.complex128).reshape(-1)
    nrm = np.linalg.norm(psi)
    if abs(nrm - 1.0) > 1e-12:
        raise ValueError(f"system_init must be normalized, got norm {nrm!r}")
    if n_bins < 1:
        raise ValueError("n_bins must be >= 1")
    if d_bin < 2:
        raise ValueError("d_bin must be >= 2")
    if first_bin is None:
        first_bin = -n_bins
    labels = [SiteLabel.bin(first_bin + j) for j in range(n_bins)] + [SiteLabel.system()]
    vecs = [vacuum(d_bin)] * n_bins + [psi]
    return product_chain(vecs, labels, policy)


def apply_gate(state, u, site_indices, order=None, center=None):
    sites = list(site_indices)
    if sites != list(range(sites[0], sites[0] + len(sites))):
        raise DimensionError(f"sites {sites} are not contiguous")
    return state.apply_gate(u, sites[0], len(sites), order=order, center=center)


def swap_sites(state, i):
    return state.swap_sites(i)


def expectation(state, ops):
    return state.expectation(ops)


def norm(state):
    return state.norm()


# -- snapshots -------------------------------------------------------------
#
# Layout (all little endian):
#   6 bytes  magic  b"JCMPS\0"
#   uint32   format version
#   uint32   length of the UTF-8 JSON header
#   bytes    JSON header: labels, center, policy, discarded weight, meta
#   per site: uint32 rank, uint32[rank] shape, complex128 data (re, im pairs)


def save_state(state, path_or_file):
    header = {
        "labels": [[lab.kind, lab.bin_index] for lab in state.labels],
        "center": state.center,
        "policy": {"cutoff": state.policy.cutoff, "max_bond": state.policy.max_bond},
        "discarded_weight": state.discarded_weight,
        "max_bond_seen": state.max_bond_seen,
        "meta": {k: v for k, v in state.meta.items() if isinstance(v, (int, float, str, bool))},
    }
    blob = json.dumps(header).encode("utf-8")
    buf = io.BytesIO()
    buf.write(SNAPSHOT_MAGIC)
    buf.write(struct.pack("<II", SNAPSHOT_VERSION, len(blob)))
    buf.write(blob)
    for t in state.tensors:
        buf.write(struct.pack("<I", t.ndim))
        buf.write(struct.pack(f"<{t.ndim}I", *t.shape))
        buf.write(np.ascontiguousarray(t, dtype="<c16").tobytes())
    data = buf.getvalue()
    if hasattr(path_or_file, "write"):
        path_or_file.write(data)
    else:
        with open(path_or_file, "wb") as fh:
            fh.write(data)


def load_state(path_or_file):
    if hasattr(path_or_file, "read"):
        data = path_or_file.read()
    else:
        with open(path_or_file, "rb") as fh:
            data = fh.read()
    if not data.startswith(SNAPSHOT_MAGIC):
        raise ValueError("not an MPS snapshot")
    pos = len(SNAPSHOT_MAGIC)
    version, hlen = struct.unpack_from("<II", data, pos)
    if version != SNAPSHOT_VERSION:
        raise ValueError(f"unsupported snapshot version {version}")
    pos += 8
    header = json.loads(data[pos:pos + hlen].decode("utf-8"))
    pos += hlen
    tensors = []
    for _ in header["labels"]:
        (rank,) = struct.unpack_from("<I", data, pos)
        pos += 4
        shape = struct.unpack_from(f"<{rank}I", data, pos)
        pos += 4 * rank
        count = int(np.prod(shape))
        arr = np.frombuffer(data, dtype="<c16", count=count, offset=pos).reshape(shape)
        pos += 16 * count
        tensors.append(arr.astype(np.complex128))
    labels = [SiteLabel(kind, idx) for kind, idx in header["labels"]]
    policy = SvdPolicy(**header["policy"])
    state = MpsState(tensors, labels, header["center"], policy)
    state.discarded_weight = header["discarded_weight"]
    state.max_bond_seen = header["max_bond_seen"]
    state.meta = header["meta"]
    return state
