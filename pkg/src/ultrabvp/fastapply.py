"""FFT-based application of truncated Frechet operators and their transposes.

Toeplitz and Hankel products are done by circulant embedding, so one apply
of an order-N operator costs 6(N+1) real FFTs plus O(n) band work.  Symbol
transforms are computed once per operator instance and reused across all
GMRES iterations of an inner solve.
"""

from __future__ import annotations

import threading
from dataclasses import dataclass

import numpy as np
import scipy.fft

from .ultraops import (
    OperatorSpec,
    conv_apply,
    conv_transpose_apply,
    diff_apply,
    diff_transpose_apply,
    m0_parts,
    m1_symbols,
)


class FftPlanCache:
    """Per-length transform bookkeeping (embedding sizes), thread safe.

    Real-input transforms of a given length are reused by every operator
    sharing the cache; scipy keeps the twiddle tables internally, so the
    cache's job is to pin the padded circulant length per problem size.
    """

    def __init__(self):
        self._lengths: dict[int, int] = {}
        self._lock = threading.Lock()

    def embed_length(self, n: int) -> int:
        """Smallest 5-smooth length >= 2n - 1 for exact circulant embedding."""
        with self._lock:
            L = self._lengths.get(n)
            if L is None:
                L = scipy.fft.next_fast_len(2 * n - 1, real=True)
                self._lengths[n] = L
            return L


_DEFAULT_CACHE = FftPlanCache()


def _toeplitz_fft_symbol(col: np.ndarray, row: np.ndarray, n: int, L: int):
    emb = np.zeros(L)
    emb[: min(n, len(col))] = col[:n]
    r = np.zeros(n)
    r[: min(n, len(row))] = row[:n]
    emb[L - n + 1 :] = r[1:][::-1]
    return scipy.fft.rfft(emb)


def _hankel_fft_symbol(h: np.ndarray, n: int, L: int):
    emb = np.zeros(L)
    m = min(2 * n - 1, len(h))
    emb[:m] = h[:m]
    return scipy.fft.rfft(emb)


def toeplitz_apply(col, v, row=None, cache: FftPlanCache | None = None):
    """Toeplitz product T v with first column col and first row row.

    row defaults to col (symmetric); exact via circulant embedding of
    length >= 2n - 1.
    """
    v = np.asarray(v, dtype=float)
    n = len(v)
    row = col if row is None else row
    L = (cache or _DEFAULT_CACHE).embed_length(n)
    fsym = _toeplitz_fft_symbol(np.asarray(col, float), np.asarray(row, float), n, L)
    fv = scipy.fft.rfft(v, L)
    return scipy.fft.irfft(fsym * fv, L)[:n]


def hankel_apply(h, v, cache: FftPlanCache | None = None):
    """Hankel product (Hv)_i = sum_j h_{i+j} v_j via one circular convolution."""
    v = np.asarray(v, dtype=float)
    n = len(v)
    L = (cache or _DEFAULT_CACHE).embed_length(n)
    fsym = _hankel_fft_symbol(np.asarray(h, float), n, L)
    fw = scipy.fft.rfft(v[::-1], L)
    return scipy.fft.irfft(fsym * fw, L)[n - 1 : 2 * n - 1]


@dataclass
class _TermSymbols:
    """Cached rfft of the Toeplitz/Hankel generators of one operator term."""

    constant: float | None
    ftoe: np.ndarray | None
    fhan: np.ndarray | None
    rank1: np.ndarray | None  # lambda = 0 only


class JacobianApplicator:
    """O(n log n) matvec with the n-truncation of a linearized operator.

    The product stacks the boundary rows on top of the interior rows
    P_{n-N} J P_n^T.  Interior rows are assembled exactly: every structured
    factor is applied at a padded working length so the result matches the
    dense truncation of the infinite operator to roundoff.
    """

    def __init__(self, spec: OperatorSpec, bc_rows: np.ndarray, n: int,
                 cache: FftPlanCache | None = None):
        N = spec.order
        bc_rows = np.asarray(bc_rows, dtype=float)
        if bc_rows.shape[1] != n:
            raise ValueError("boundary rows must have n columns")
        self.spec = spec
        self.bc_rows = bc_rows
        self.n = n
        self.n_work = n + 2 * N + 2
        self.cache = cache or _DEFAULT_CACHE
        self.L = self.cache.embed_length(self.n_work)
        self._symbols = [self._prepare(lam) for lam in range(N + 1)]
        self._symbols32: list | None = None

    def _prepare(self, lam: int) -> _TermSymbols:
        a = self.spec.coeffs[lam]
        if len(a) == 1:
            return _TermSymbols(float(a[0]), None, None,
                                a.copy() if lam == 0 else None)
        nw, L = self.n_work, self.L
        if lam == 0:
            toe, han, rank1 = m0_parts(a)
            return _TermSymbols(None,
                                _toeplitz_fft_symbol(toe, toe, nw, L),
                                _hankel_fft_symbol(han, nw, L),
                                rank1)
        toe, han = m1_symbols(a)
        return _TermSymbols(None,
                            _toeplitz_fft_symbol(toe, toe, nw, L),
                            _hankel_fft_symbol(han, nw, L),
                            None)

    # -- low level helpers -------------------------------------------------

    def _sym32(self):
        if self._symbols32 is None:
            self._symbols32 = [
                _TermSymbols(s.constant,
                             None if s.ftoe is None else s.ftoe.astype(np.complex64),
                             None if s.fhan is None else s.fhan.astype(np.complex64),
                             None if s.rank1 is None else s.rank1.astype(np.float32))
                for s in self._symbols
            ]
        return self._symbols32

    def _symbols_for(self, dtype):
        return self._sym32() if dtype == np.float32 else self._symbols

    def _toe(self, fsym, v):
        L = self.L
        fv = scipy.fft.rfft(v, L)
        return scipy.fft.irfft(fsym * fv, L)[: self.n_work].astype(v.dtype, copy=False)

    def _han(self, fsym, v):
        L, nw = self.L, self.n_work
        fw = scipy.fft.rfft(v[::-1], L)
        out = scipy.fft.irfft(fsym * fw, L)[nw - 1 : 2 * nw - 1]
        return out.astype(v.dtype, copy=False)

    def _m0(self, sym: _TermSymbols, v):
        # for a constant multiplier (T+H+R)/2 collapses to a0 * I exactly
        if sym.constant is not None:
            return sym.constant * v
        out = self._toe(sym.ftoe, v) + self._han(sym.fhan, v)
        d = min(len(sym.rank1), len(v))
        out[0] -= sym.rank1[:d] @ v[:d]
        return 0.5 * out

    def _m1(self, sym: _TermSymbols, v):
        if sym.constant is not None:
            return sym.constant * v
        return 0.5 * (self._toe(sym.ftoe, v) - self._han(sym.fhan, v))

    def _conv_inv_chain(self, w, lam, transpose=False):
        from .ultraops import conv_inv_apply, conv_inv_transpose_apply
        if transpose:
            for ell in range(1, lam):
                w = conv_inv_transpose_apply(ell, w)
        else:
            for ell in range(lam - 1, 0, -1):
                w = conv_inv_apply(ell, w)
        return w

    # -- public applies ----------------------------------------------------

    def apply_interior(self, v: np.ndarray) -> np.ndarray:
        """Interior rows P_{n-N} J P_n^T v, length n - N."""
        N = self.spec.order
        nw = self.n_work
        dtype = np.float32 if np.asarray(v).dtype == np.float32 else np.float64
        syms = self._symbols_for(dtype)
        vw = np.zeros(nw, dtype=dtype)
        vw[: len(v)] = v
        acc = self._apply_core(vw, syms, N)
        return acc[: self.n - N]

    def _apply_core(self, vw, syms, N):
        acc = conv_apply(0, self._m0(syms[0], vw)) if not self._is_zero(0) \
            else np.zeros_like(vw)
        for lam in range(1, N + 1):
            if self._is_zero(lam):
                continue
            w = diff_apply(lam, vw)
            w = self._conv_inv_chain(w, lam)
            acc = acc + self._m1(syms[lam], w)
        for ell in range(1, N):
            acc = conv_apply(ell, acc)
        return acc

    def _is_zero(self, lam) -> bool:
        c = self.spec.coeffs[lam]
        return len(c) == 1 and c[0] == 0.0

    def apply(self, v: np.ndarray) -> np.ndarray:
        """Full matvec: boundary rows stacked on the interior rows."""
        v = np.asarray(v)
        if len(v) != self.n:
            raise ValueError("vector length must equal the truncation size")
        bc = self.bc_rows.astype(v.dtype, copy=False) @ v
        return np.concatenate([bc, self.apply_interior(v)])

    def apply_transpose(self, w: np.ndarray) -> np.ndarray:
        """Transpose matvec at the same cost; Hankel parts are symmetric."""
        w = np.asarray(w)
        if len(w) != self.n:
            raise ValueError("vector length must equal the truncation size")
        N = self.spec.order
        nw = self.n_work
        dtype = np.float32 if w.dtype == np.float32 else np.float64
        syms = self._symbols_for(dtype)
        out = (self.bc_rows.astype(dtype, copy=False).T @ w[:N]).astype(dtype)

        z = np.zeros(nw, dtype=dtype)
        z[: self.n - N] = w[N:]
        for ell in range(N - 1, 0, -1):
            z = conv_transpose_apply(ell, z)
        acc = np.zeros(nw, dtype=dtype)
        if not self._is_zero(0):
            s = conv_transpose_apply(0, z)
            sym = syms[0]
            if sym.constant is not None:
                acc += sym.constant * s
            else:
                m = self._toe(sym.ftoe, s) + self._han(sym.fhan, s)
                d = min(len(sym.rank1), nw)
                m[:d] -= sym.rank1[:d] * s[0]  # R^T s = -(a) s_0
                acc += 0.5 * m
        for lam in range(1, N + 1):
            if self._is_zero(lam):
                continue
            y = self._m1(syms[lam], z)
            y = self._conv_inv_chain(y, lam, transpose=True)
            acc += diff_transpose_apply(lam, y)
        out += acc[: self.n]
        return out
