"""Almost-banded right preconditioner: build, Givens QR, and solves.

The preconditioner body is the banded operator obtained by truncating each
variable coefficient to its leading p + lam + 1 entries in its own
ultraspherical basis; the N boundary rows sit dense on top.  The QR
factorization runs banded Givens over the body first, then folds each dense
row in against the finished R rows, representing fill beyond an R row's
window as a rank-N tail spanned by the original dense rows.  Factor and
solve both cost O((p + N)^2 n).
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np
from numba import njit

from .fastapply import JacobianApplicator
from .ultraops import OperatorSpec

log = logging.getLogger(__name__)

SINGULARITY_RTOL = 1e-14


class SingularPreconditionerError(Exception):
    """An R diagonal fell below the singularity threshold."""


def bandwidth_rule(n: int) -> int:
    """p = floor(sqrt(log2 n)): band cost matched to the FFT apply cost."""
    if n < 2:
        raise ValueError("system size must be at least 2")
    return int(math.floor(math.sqrt(math.log2(n))))


@dataclass
class AlmostBandedMatrix:
    """n x n matrix with nbc dense top rows over a banded body.

    Body row r (matrix row r + nbc) holds columns [r - p, r + p + 2 nbc];
    storage is aligned as body[r, t] <-> column r - p + t.
    """

    n: int
    nbc: int
    p: int
    dense: np.ndarray  # (nbc, n)
    body: np.ndarray   # (n - nbc, 2p + 2 nbc + 1)

    @property
    def band_width(self) -> int:
        return 2 * self.p + 2 * self.nbc + 1

    def matvec(self, v: np.ndarray) -> np.ndarray:
        v = np.asarray(v)
        out = np.empty(self.n, dtype=np.result_type(v.dtype, np.float64))
        out[: self.nbc] = self.dense @ v
        nb = self.n - self.nbc
        for r in range(nb):
            lo = r - self.p
            c0, c1 = max(0, lo), min(self.n, lo + self.band_width)
            out[self.nbc + r] = self.body[r, c0 - lo : c1 - lo] @ v[c0:c1]
        return out

    def to_dense(self) -> np.ndarray:
        A = np.zeros((self.n, self.n))
        A[: self.nbc] = self.dense
        for r in range(self.n - self.nbc):
            lo = r - self.p
            c0, c1 = max(0, lo), min(self.n, lo + self.band_width)
            A[self.nbc + r, c0:c1] = self.body[r, c0 - lo : c1 - lo]
        return A

    def diagonal(self) -> np.ndarray:
        d = np.empty(self.n)
        idx = np.arange(self.nbc)
        d[: self.nbc] = self.dense[idx, idx]
        r = np.arange(self.n - self.nbc)
        d[self.nbc :] = self.body[r, self.p + self.nbc]
        return d

    def norm_inf(self) -> float:
        a = float(np.abs(self.dense).sum(axis=1).max()) if self.nbc else 0.0
        b = float(np.abs(self.body).sum(axis=1).max()) if len(self.body) else 0.0
        return max(a, b)


def build_preconditioner(spec: OperatorSpec, bc_rows: np.ndarray, n: int,
                         p: int | None = None) -> AlmostBandedMatrix:
    """Banded body from coefficient truncation, recovered by striped probes.

    Each coefficient keeps its leading p + lam + 1 entries in C^(lam); the
    resulting operator is exactly banded (lower p, upper p + 2N), so
    2p + 2N + 1 fast matvecs on striped unit-vector combs reproduce every
    band entry.
    """
    N = spec.order
    if p is None:
        p = bandwidth_rule(n)
    p = max(1, p)
    bc_rows = np.asarray(bc_rows, dtype=float)
    if bc_rows.shape != (N, n):
        raise ValueError("boundary rows must be N x n")
    keep = [p + lam + 1 for lam in range(N + 1)]
    tspec = spec.truncated(keep)
    probe = JacobianApplicator(tspec, np.zeros((N, n)), n)
    width = 2 * p + 2 * N + 1
    body = np.zeros((n - N, width))
    for shift in range(min(width, n)):
        v = np.zeros(n)
        cols = np.arange(shift, n, width)
        v[cols] = 1.0
        interior = probe.apply_interior(v)
        for c in cols:
            r0 = max(0, c - p - 2 * N)
            r1 = min(n - N - 1, c + p)
            body[r0 : r1 + 1, c - np.arange(r0, r1 + 1) + p] = interior[r0 : r1 + 1]
    return AlmostBandedMatrix(n, N, p, bc_rows.copy(), body)


# ---------------------------------------------------------------------------
# numba kernels
# ---------------------------------------------------------------------------

@njit(cache=True)
def _qr_kernel(dense, body, n, nbc, p):
    """Givens QR of the row-permuted [body ; dense] stack.

    Returns R as aligned windows plus rank-nbc tails, the rotation log in
    rhs-index space, the pivot rhs-index per R row, and min |R_jj|.
    """
    ww = 2 * p + 2 * nbc + 1
    www = 3 * p + 2 * nbc + 1
    nb = n - nbc

    bw = np.zeros((nb, www))
    bw[:, :ww] = body
    dw = dense.copy()
    w = np.zeros((nbc, ww))
    wc = np.eye(nbc)

    rwin = np.zeros((n, ww))
    rtail = np.zeros((n, nbc))
    rrow_b = np.empty(n, dtype=np.int64)

    cap = n * (p + nbc + 1) + nbc * nbc + 8
    rot_i = np.empty((cap, 2), dtype=np.int64)
    rot_cs = np.empty((cap, 2))
    nrot = 0

    # phase 0: rotate the dense rows against each other on their leading
    # columns, so degenerate boundary combinations cancel before any band
    # content mixes in (duplicated rows become exact zero rows here)
    for j in range(min(nbc - 1, n)):
        for d in range(j + 1, nbc):
            b = dw[d, j]
            if b == 0.0:
                continue
            a = dw[j, j]
            h = math.hypot(a, b)
            cs = a / h
            sn = b / h
            for t in range(j, n):
                va = dw[j, t]
                vb = dw[d, t]
                dw[j, t] = cs * va + sn * vb
                dw[d, t] = -sn * va + cs * vb
            dw[j, j] = h
            dw[d, j] = 0.0
            rot_i[nrot, 0] = j
            rot_i[nrot, 1] = d
            rot_cs[nrot, 0] = cs
            rot_cs[nrot, 1] = sn
            nrot += 1

    # phase 1: banded QR of the body; pivot of column c is body row c
    for c in range(nb):
        rmax = min(c + p, nb - 1)
        for r in range(c + 1, rmax + 1):
            off = c - r + p
            b = bw[r, off]
            if b == 0.0:
                continue
            a = bw[c, p]
            h = math.hypot(a, b)
            cs = a / h
            sn = b / h
            shift = r - c
            # shared columns x = c .. c + 2p + 2nbc
            for t in range(p, www):
                tr = t - shift
                vr = bw[r, tr] if tr >= 0 else 0.0
                vc = bw[c, t]
                bw[c, t] = cs * vc + sn * vr
                if tr >= 0:
                    bw[r, tr] = -sn * vc + cs * vr
            bw[c, p] = h
            bw[r, off] = 0.0
            rot_i[nrot, 0] = nbc + c
            rot_i[nrot, 1] = nbc + r
            rot_cs[nrot, 0] = cs
            rot_cs[nrot, 1] = sn
            nrot += 1
        rwin[c, :] = bw[c, p : p + ww]
        rrow_b[c] = nbc + c

    # phase 2: fold each dense row into the finished band R rows
    for d in range(nbc):
        for t in range(ww):
            w[d, t] = dw[d, t] if t < n else 0.0
        for m in range(nbc):
            wc[d, m] = 1.0 if m == d else 0.0
        for j in range(nb):
            b = w[d, 0]
            if b != 0.0:
                a = rwin[j, 0]
                h = math.hypot(a, b)
                cs = a / h
                sn = b / h
                for t in range(ww):
                    vr = rwin[j, t]
                    vw = w[d, t]
                    rwin[j, t] = cs * vr + sn * vw
                    w[d, t] = -sn * vr + cs * vw
                for m in range(nbc):
                    vr = rtail[j, m]
                    vw = wc[d, m]
                    rtail[j, m] = cs * vr + sn * vw
                    wc[d, m] = -sn * vr + cs * vw
                rwin[j, 0] = h
                w[d, 0] = 0.0
                rot_i[nrot, 0] = nbc + j
                rot_i[nrot, 1] = d
                rot_cs[nrot, 0] = cs
                rot_cs[nrot, 1] = sn
                nrot += 1
            # advance window from [j, j+ww) to [j+1, j+1+ww)
            for t in range(ww - 1):
                w[d, t] = w[d, t + 1]
            col = j + ww
            if col < n:
                acc = 0.0
                for m in range(nbc):
                    acc += wc[d, m] * dw[m, col]
                w[d, ww - 1] = acc
            else:
                w[d, ww - 1] = 0.0

    # phase 3: QR of the trailing nbc x nbc block of the dense rows
    for cc in range(nbc):
        for dd in range(cc + 1, nbc):
            b = w[dd, cc]
            if b == 0.0:
                continue
            a = w[cc, cc]
            h = math.hypot(a, b)
            cs = a / h
            sn = b / h
            for t in range(cc, min(ww, nbc)):
                vc = w[cc, t]
                vd = w[dd, t]
                w[cc, t] = cs * vc + sn * vd
                w[dd, t] = -sn * vc + cs * vd
            w[cc, cc] = h
            w[dd, cc] = 0.0
            rot_i[nrot, 0] = cc
            rot_i[nrot, 1] = dd
            rot_cs[nrot, 0] = cs
            rot_cs[nrot, 1] = sn
            nrot += 1
        j = nb + cc
        for t in range(ww):
            src = cc + t
            rwin[j, t] = w[cc, src] if src < min(ww, nbc) else 0.0
        rrow_b[j] = cc

    dmin = np.inf
    for j in range(n):
        a = abs(rwin[j, 0])
        if a < dmin:
            dmin = a
    return rwin, rtail, rrow_b, rot_i[:nrot], rot_cs[:nrot], dmin, dw


@njit(cache=True)
def _solve_kernel(rwin, rtail, vrows, rrow_b, rot_i, rot_cs, b):
    n = rwin.shape[0]
    ww = rwin.shape[1]
    nbc = rtail.shape[1]
    y = b.copy()
    for k in range(rot_i.shape[0]):
        i1 = rot_i[k, 0]
        i2 = rot_i[k, 1]
        cs = rot_cs[k, 0]
        sn = rot_cs[k, 1]
        y1 = y[i1]
        y2 = y[i2]
        y[i1] = cs * y1 + sn * y2
        y[i2] = -sn * y1 + cs * y2
    x = np.zeros(n, dtype=b.dtype)
    tacc = np.zeros(nbc, dtype=b.dtype)
    for j in range(n - 1, -1, -1):
        col = j + ww
        if col < n:
            for m in range(nbc):
                tacc[m] += vrows[m, col] * x[col]
        s = 0.0
        tmax = min(ww, n - j)
        for t in range(1, tmax):
            s += rwin[j, t] * x[j + t]
        for m in range(nbc):
            s += rtail[j, m] * tacc[m]
        x[j] = (y[rrow_b[j]] - s) / rwin[j, 0]
    return x


@dataclass
class AlmostBandedQR:
    """Givens factorization of an AlmostBandedMatrix, reusable across solves."""

    n: int
    rwin: np.ndarray
    rtail: np.ndarray
    vrows: np.ndarray
    rrow_b: np.ndarray
    rot_i: np.ndarray
    rot_cs: np.ndarray
    min_diag: float
    _f32: tuple | None = field(default=None, repr=False)

    def solve(self, b: np.ndarray) -> np.ndarray:
        """x with W x = b, in the dtype of b (float32 stays float32)."""
        b = np.asarray(b)
        if b.dtype == np.float32:
            if self._f32 is None:
                self._f32 = (self.rwin.astype(np.float32),
                             self.rtail.astype(np.float32),
                             self.vrows.astype(np.float32),
                             self.rot_cs.astype(np.float32))
            rw, rt, vr, rc = self._f32
            return _solve_kernel(rw, rt, vr, self.rrow_b, self.rot_i, rc, b)
        return _solve_kernel(self.rwin, self.rtail, self.vrows, self.rrow_b,
                             self.rot_i, self.rot_cs,
                             b.astype(np.float64, copy=False))


def qr_factor(W: AlmostBandedMatrix) -> AlmostBandedQR:
    """Structured Givens QR; raises when an R diagonal signals singularity."""
    rwin, rtail, rrow_b, rot_i, rot_cs, dmin, vrows = _qr_kernel(
        np.ascontiguousarray(W.dense), np.ascontiguousarray(W.body),
        W.n, W.nbc, W.p)
    threshold = SINGULARITY_RTOL * W.norm_inf()
    if not dmin > threshold:
        raise SingularPreconditionerError(
            f"R diagonal {dmin:.3e} below {threshold:.3e}")
    return AlmostBandedQR(W.n, rwin, rtail, vrows, rrow_b,
                          rot_i, rot_cs, dmin)


@dataclass
class DiagonalPreconditioner:
    """Fallback Jacobi preconditioner used when the QR signals singularity."""

    diag: np.ndarray

    def solve(self, b: np.ndarray) -> np.ndarray:
        b = np.asarray(b)
        return b / self.diag.astype(b.dtype, copy=False)


def make_preconditioner(spec: OperatorSpec, bc_rows: np.ndarray, n: int,
                        p: int | None = None):
    """Build + factor, falling back to the diagonal on singularity."""
    W = build_preconditioner(spec, bc_rows, n, p)
    try:
        return qr_factor(W)
    except SingularPreconditionerError as exc:
        log.warning("almost-banded factor singular (%s); diagonal fallback", exc)
        d = W.diagonal()
        d = np.where(np.abs(d) > 1e-300, d, 1.0)
        return DiagonalPreconditioner(d)
