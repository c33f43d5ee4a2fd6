"""Cached intermediate state that makes every path step cheap.

Three bundles are maintained alongside the KKT quadruple:

  Par1 = {M, eta_tilde, D}      shared across steps; M holds A_SS^{-1} on the
                                support rows/columns and -A_{S^c S} A_SS^{-1}
                                below, with structurally zero columns off S.
  Par2 = {eta, D_g, D_gg, D_gc} specific to one rank-one direction g.
  Par3 = {xi, D_l}              specific to one linear-term drift l.

Everything can be recomputed from scratch by factorization (init_par1 and the
direct_update_* routines); the path modules keep the same objects current with
rank-one corrections, and validate_state measures how far they have drifted.
"""

import struct
from dataclasses import dataclass, field

import numpy as np

from . import counters as cnt
from .errors import SingularSubmatrix
from .kkt import DEFAULT_COND_CAP, Quadruple, Support

DENSE = "dense"
COMPRESSED = "compressed"


class Par1:
    """Inverse-block cache M plus eta_tilde = (M + I_{S^c}) 1 and D = 1' A_SS^{-1} 1.

    Two storage layouts: a dense n x n matrix whose columns off the support are
    kept exactly zero, or just the n x |S| block of live columns.  All update
    routines go through the accessors below so both layouts see bit-identical
    arithmetic.
    """

    __slots__ = ("layout", "M", "eta_tilde", "D")

    def __init__(self, layout, M, eta_tilde, D):
        self.layout = layout
        self.M = M
        self.eta_tilde = eta_tilde
        self.D = float(D)

    def copy(self):
        return Par1(self.layout, self.M.copy(), self.eta_tilde.copy(), self.D)

    # -- accessors used by the path updates ---------------------------------

    def cols(self, support):
        """The n x |S| block of live columns (a C-ordered copy in the dense layout).

        C order matters: it keeps the BLAS summation order identical across
        layouts, so the direct updates are bit-for-bit layout-independent.
        """
        if self.layout == DENSE:
            return np.ascontiguousarray(self.M[:, support.idx])
        return self.M

    def row(self, j, support):
        """Row j of M as a full-length vector (zero off the support)."""
        n = support.n
        if self.layout == DENSE:
            return self.M[j, :].copy()
        out = np.zeros(n)
        out[support.idx] = self.M[j, :]
        return out

    def col(self, j, support):
        """Column j of M (j must be in the support) as a full-length vector."""
        if self.layout == DENSE:
            return self.M[:, j].copy()
        pos = int(np.searchsorted(support.idx, j))
        return self.M[:, pos].copy()

    def mjj(self, j, support):
        if self.layout == DENSE:
            return float(self.M[j, j])
        pos = int(np.searchsorted(support.idx, j))
        return float(self.M[j, pos])

    def matvec(self, support, w_s):
        """M restricted to live columns times w_s; length-n result."""
        return self.cols(support) @ w_s

    def rank1(self, support, u, coef_s):
        """M[:, S] += outer(u, coef_s) in place."""
        if self.layout == DENSE:
            self.M[:, support.idx] += np.outer(u, coef_s)
        else:
            self.M += np.outer(u, coef_s)

    def zero_row(self, j):
        self.M[j, :] = 0.0

    def insert_col(self, j, support_after):
        """Make room for a new zero column j (no-op in the dense layout)."""
        if self.layout == COMPRESSED:
            pos = int(np.searchsorted(support_after.idx, j))
            self.M = np.insert(self.M, pos, 0.0, axis=1)

    def remove_col(self, j, support_before):
        if self.layout == DENSE:
            self.M[:, j] = 0.0
        else:
            pos = int(np.searchsorted(support_before.idx, j))
            self.M = np.delete(self.M, pos, axis=1)

    def check_structure(self, support):
        """Dense layout must keep columns off the support exactly zero."""
        if self.layout == DENSE:
            comp = support.complement()
            if comp.size and np.any(self.M[:, comp] != 0.0):
                raise AssertionError("M has nonzero entries in off-support columns")
        else:
            if self.M.shape != (support.n, support.size):
                raise AssertionError("compressed M shape out of sync with support")

    def refresh_from(self, other):
        """Adopt another Par1's fields in place, preserving object identity."""
        self.layout = other.layout
        self.M = other.M
        self.eta_tilde = other.eta_tilde
        self.D = other.D


@dataclass
class Par2:
    """Direction-specific cache: eta = (M + I_{S^c}) g and three inner products."""

    eta: np.ndarray
    D_g: float
    D_gg: float
    D_gc: float
    g: np.ndarray = field(repr=False)

    def copy(self):
        return Par2(self.eta.copy(), self.D_g, self.D_gg, self.D_gc, self.g)

    def refresh_from(self, other):
        self.eta = other.eta
        self.D_g, self.D_gg, self.D_gc = other.D_g, other.D_gg, other.D_gc
        self.g = other.g


@dataclass
class Par3:
    """Drift-specific cache: xi = -(M + I_{S^c}) l and D_l = 1' xi_S."""

    xi: np.ndarray
    D_l: float
    l: np.ndarray = field(repr=False)

    def copy(self):
        return Par3(self.xi.copy(), self.D_l, self.l)

    def refresh_from(self, other):
        self.xi = other.xi
        self.D_l = other.D_l
        self.l = other.l


def par1_from_matrix(A, support, layout=DENSE, cond_cap=DEFAULT_COND_CAP):
    """Build Par1 by direct factorization of A_SS.

    Accepts the raw matrix so the driver can rebuild from its lazily updated
    copy; only the support columns of A are read.
    """
    idx = support.idx
    n = A.shape[0]
    ass = A[np.ix_(idx, idx)]
    try:
        chol = np.linalg.cholesky(ass)
    except np.linalg.LinAlgError:
        raise SingularSubmatrix(f"A_SS not positive definite for S={list(idx)}") from None
    d = np.diag(chol)
    if (d.max() / d.min()) ** 2 > cond_cap:
        raise SingularSubmatrix(f"condition estimate above cap {cond_cap:g}")
    inv = np.linalg.solve(ass, np.eye(idx.size))
    inv = 0.5 * (inv + inv.T)
    cols = np.empty((n, idx.size))
    cols[idx, :] = inv
    comp = support.complement()
    if comp.size:
        cols[comp, :] = -A[np.ix_(comp, idx)] @ inv
    eta_tilde = cols @ np.ones(idx.size)
    if comp.size:
        eta_tilde[comp] += 1.0
    D = float(np.sum(eta_tilde[idx]))
    if layout == DENSE:
        M = np.zeros((n, n))
        M[:, idx] = cols
        return Par1(DENSE, M, eta_tilde, D)
    return Par1(COMPRESSED, cols, eta_tilde, D)


def init_par1(problem, support, layout=DENSE, cond_cap=DEFAULT_COND_CAP):
    return par1_from_matrix(problem.A, support, layout=layout, cond_cap=cond_cap)


def direct_update_par2(support, par1, c, g, counter=None):
    """Recompute the direction cache for a new g by four direct products."""
    idx = support.idx
    gs = g[idx]
    eta = par1.matvec(support, gs)
    off = ~support.mask
    eta[off] += g[off]
    d_g = float(np.sum(eta[idx]))
    d_gg = float(eta[idx] @ gs)
    d_gc = -float(eta[idx] @ c[idx])
    cnt.add(counter, support.n * idx.size + 2 * idx.size)
    return Par2(eta, d_g, d_gg, d_gc, g)


def direct_update_par3(support, par1, l, counter=None):
    """Recompute the drift cache for a new l."""
    idx = support.idx
    xi = -par1.matvec(support, l[idx])
    off = ~support.mask
    xi[off] -= l[off]
    d_l = float(np.sum(xi[idx]))
    cnt.add(counter, support.n * idx.size)
    return Par3(xi, d_l, l)


def refresh_quadruple(quadruple, par1, c, counter=None):
    """Recompute (v, mu0) for the current support from the cached inverse.

    This is the closed-form fixed-support solution expressed through Par1:
    mu0 = (1 - 1'(Mc)_S) / D and v = mu0 eta_tilde + Mc + c off the support.
    The driver uses it to pin accumulated path-update roundoff back to M's
    accuracy whenever the reported residual crosses its refresh threshold.
    """
    support = quadruple.support
    idx = support.idx
    mc = par1.matvec(support, c[idx])
    mu0 = (1.0 - float(np.sum(mc[idx]))) / par1.D
    v = mu0 * par1.eta_tilde + mc
    off = ~support.mask
    v[off] += c[off]
    quadruple.v = v
    quadruple.mu0 = mu0
    cnt.add(counter, support.n * idx.size + support.n)
    return quadruple


def condition_proxy(A, support, par1):
    """kappa(A_SS) estimate ||M_SS||_inf * ||A_SS||_inf from the stored state."""
    idx = support.idx
    ass = A[np.ix_(idx, idx)]
    mss = par1.cols(support)[idx, :]
    return float(np.abs(mss).sum(axis=1).max() * np.abs(ass).sum(axis=1).max())


def _rel(stored, fresh):
    err = float(np.max(np.abs(np.asarray(stored) - np.asarray(fresh))))
    scale = max(1.0, float(np.max(np.abs(fresh))))
    return err / scale


def validate_state(problem, support, par1, par2=None, par3=None):
    """Max relative deviation between the stored state and a fresh recomputation.

    Rebuilds Par1 by factorization of the given problem matrix and, when Par2
    or Par3 are supplied, re-derives them from their defining products (the g
    and l vectors travel with the caches).  Returns the worst field deviation;
    a freshly initialized state comes back at roundoff level and a corrupted
    field shows up at order one.
    """
    fresh1 = par1_from_matrix(problem.A, support)
    dev = max(
        _rel(par1.cols(support), fresh1.cols(support)),
        _rel(par1.eta_tilde, fresh1.eta_tilde),
        _rel(par1.D, fresh1.D),
    )
    if par2 is not None:
        fresh2 = direct_update_par2(support, fresh1, problem.c, par2.g)
        dev = max(
            dev,
            _rel(par2.eta, fresh2.eta),
            _rel(par2.D_g, fresh2.D_g),
            _rel(par2.D_gg, fresh2.D_gg),
            _rel(par2.D_gc, fresh2.D_gc),
        )
    if par3 is not None:
        fresh3 = direct_update_par3(support, fresh1, par3.l)
        dev = max(dev, _rel(par3.xi, fresh3.xi), _rel(par3.D_l, fresh3.D_l))
    return dev


# -- binary snapshot ---------------------------------------------------------
#
# Layout (all scalars little-endian, all floats IEEE-754 binary64):
#   magic   4 bytes  b"HQS1"
#   version u32      currently 1
#   n       u32
#   s       u32      support size
#   layout  u8       0 dense, 1 compressed
#   flags   u8       bit 0: Par2 present, bit 1: Par3 present
#   pad     2 bytes
#   support s  * i64
#   v       n  * f8, mu0 f8
#   M cols  n*s * f8 (row-major), eta_tilde n * f8, D f8
#   [Par2]  eta n * f8, D_g f8, D_gg f8, D_gc f8, g n * f8
#   [Par3]  xi  n * f8, D_l f8, l n * f8

SNAPSHOT_MAGIC = b"HQS1"
SNAPSHOT_VERSION = 1


def state_to_bytes(support, quadruple, par1, par2=None, par3=None):
    n, s = support.n, support.size
    flags = (1 if par2 is not None else 0) | (2 if par3 is not None else 0)
    layout_code = 0 if par1.layout == DENSE else 1
    parts = [
        SNAPSHOT_MAGIC,
        struct.pack("<IIIBBxx", SNAPSHOT_VERSION, n, s, layout_code, flags),
        support.idx.astype("<i8").tobytes(),
        quadruple.v.astype("<f8").tobytes(),
        struct.pack("<d", quadruple.mu0),
        par1.cols(support).astype("<f8").tobytes(),
        par1.eta_tilde.astype("<f8").tobytes(),
        struct.pack("<d", par1.D),
    ]
    if par2 is not None:
        parts += [
            par2.eta.astype("<f8").tobytes(),
            struct.pack("<ddd", par2.D_g, par2.D_gg, par2.D_gc),
            par2.g.astype("<f8").tobytes(),
        ]
    if par3 is not None:
        parts += [
            par3.xi.astype("<f8").tobytes(),
            struct.pack("<d", par3.D_l),
            par3.l.astype("<f8").tobytes(),
        ]
    return b"".join(parts)


def state_from_bytes(buf, offset=0):
    """Parse one state blob; returns the fields and the offset past the blob."""
    if buf[offset : offset + 4] != SNAPSHOT_MAGIC:
        raise ValueError("not a state snapshot")
    version, n, s, layout_code, flags = struct.unpack_from("<IIIBBxx", buf, offset + 4)
    if version != SNAPSHOT_VERSION:
        raise ValueError(f"unsupported snapshot version {version}")
    off = offset + 4 + struct.calcsize("<IIIBBxx")

    def take(count, dtype="<f8"):
        nonlocal off
        arr = np.frombuffer(buf, dtype=dtype, count=count, offset=off)
        off += count * np.dtype(dtype).itemsize
        return arr.astype(np.float64 if dtype == "<f8" else np.int64)

    idx = take(s, "<i8")
    support = Support(n, idx)
    v = take(n)
    (mu0,) = struct.unpack_from("<d", buf, off)
    off += 8
    cols = take(n * s).reshape(n, s)
    eta_tilde = take(n)
    (D,) = struct.unpack_from("<d", buf, off)
    off += 8
    if layout_code == 0:
        M = np.zeros((n, n))
        M[:, support.idx] = cols
        par1 = Par1(DENSE, M, eta_tilde, D)
    else:
        par1 = Par1(COMPRESSED, cols, eta_tilde, D)
    par2 = par3 = None
    if flags & 1:
        eta = take(n)
        d_g, d_gg, d_gc = struct.unpack_from("<ddd", buf, off)
        off += 24
        g = take(n)
        par2 = Par2(eta, d_g, d_gg, d_gc, g)
    if flags & 2:
        xi = take(n)
        (d_l,) = struct.unpack_from("<d", buf, off)
        off += 8
        l = take(n)
        par3 = Par3(xi, d_l, l)
    return support, Quadruple(support, v, mu0), par1, par2, par3, off


def save_state(path, support, quadruple, par1, par2=None, par3=None):
    with open(path, "wb") as fh:
        fh.write(state_to_bytes(support, quadruple, par1, par2, par3))


def load_state(path):
    with open(path, "rb") as fh:
        buf = fh.read()
    support, quadruple, par1, par2, par3, _ = state_from_bytes(buf)
    return support, quadruple, par1, par2, par3
