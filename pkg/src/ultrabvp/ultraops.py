"""Operator calculus on Chebyshev/ultraspherical coefficient space.

Differentiation sends Chebyshev-T coefficients to the C^(lam) family with a
single nonzero diagonal; conversion operators ladder between families with
two nonzero diagonals; multiplication by a variable coefficient is
Toeplitz-plus-Hankel structured.  Lazy O(n) applies live here together with
dense truncations built by the three-term recurrence, which serve as the
brute-force oracle for the fast FFT path.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache
from math import factorial

import numpy as np

from .chebyshev import chop_coeffs

MAX_DIFF_ORDER = 8

#: exact integer scale 2^(lam-1) * (lam-1)! of the lam-th differentiation
DIFF_SCALE = {lam: 2 ** (lam - 1) * factorial(lam - 1)
              for lam in range(1, MAX_DIFF_ORDER + 1)}


@dataclass(frozen=True)
class BasisVector:
    """Coefficient vector tagged with its basis: 'T' or ('C', lam)."""

    coeffs: np.ndarray
    basis: str | tuple

    def __post_init__(self):
        object.__setattr__(self, "coeffs", np.asarray(self.coeffs, dtype=float))

    @property
    def lam(self) -> int:
        return 0 if self.basis == "T" else self.basis[1]


def basis_tag(lam: int):
    return "T" if lam == 0 else ("C", lam)


# ---------------------------------------------------------------------------
# raw-array kernels (length-preserving, exact truncations of the
# corresponding infinite operators applied to finitely supported input)
# ---------------------------------------------------------------------------

def diff_apply(lam: int, v: np.ndarray, n: int | None = None) -> np.ndarray:
    """(D_lam v)_j = 2^(lam-1)(lam-1)! (j+lam) v_{j+lam};  T -> C^(lam)."""
    if lam < 1:
        raise ValueError("differentiation order must be >= 1")
    v = np.asarray(v)
    n = len(v) if n is None else n
    out = np.zeros(n, dtype=v.dtype)
    m = min(n, len(v) - lam)
    if m > 0:
        j = np.arange(m)
        out[:m] = DIFF_SCALE[lam] * (j + lam) * v[lam : lam + m]
    return out


def diff_transpose_apply(lam: int, v: np.ndarray, n: int | None = None) -> np.ndarray:
    v = np.asarray(v)
    n = len(v) if n is None else n
    out = np.zeros(n, dtype=v.dtype)
    m = min(n - lam, len(v))
    if m > 0:
        j = np.arange(m)
        out[lam : lam + m] = DIFF_SCALE[lam] * (j + lam) * v[:m]
    return out


def _conv_diags(lam: int, n: int, dtype=np.float64):
    """Main and +2 diagonals of S_lam truncated to n rows."""
    i = np.arange(n)
    if lam == 0:
        d = np.full(n, 0.5, dtype=dtype)
        d[0] = 1.0
        u = np.full(n, -0.5, dtype=dtype)
    else:
        d = (lam / (lam + i)).astype(dtype)
        u = (-lam / (lam + i + 2.0)).astype(dtype)
    return d, u


def conv_apply(lam: int, v: np.ndarray, n: int | None = None) -> np.ndarray:
    """S_lam: C^(lam) (or T for lam=0) coefficients to C^(lam+1)."""
    v = np.asarray(v)
    n = len(v) if n is None else n
    d, u = _conv_diags(lam, n, v.dtype)
    out = np.zeros(n, dtype=v.dtype)
    m = min(n, len(v))
    out[:m] = d[:m] * v[:m]
    m2 = min(n, len(v) - 2)
    if m2 > 0:
        out[:m2] += u[:m2] * v[2 : 2 + m2]
    return out


def conv_transpose_apply(lam: int, v: np.ndarray, n: int | None = None) -> np.ndarray:
    v = np.asarray(v)
    n = len(v) if n is None else n
    nv = len(v)
    d, u = _conv_diags(lam, max(n, nv), v.dtype)
    out = np.zeros(n, dtype=v.dtype)
    m = min(n, nv)
    out[:m] = d[:m] * v[:m]
    m2 = min(n, nv + 2)
    if m2 > 2:
        out[2:m2] += u[: m2 - 2] * v[: m2 - 2]
    return out


def conv_inv_apply(lam: int, v: np.ndarray, n: int | None = None) -> np.ndarray:
    """Back substitution with S_lam: u with S_lam u = v on the n-truncation.

    The two parity chains are first-order recurrences u_i = v_i/d_i +
    q_i u_{i+2}; the chain products q decay like 1/i, so the scan form
    (cumsum against cumulated products) is exact and vectorizes.
    """
    v = np.asarray(v)
    n = len(v) if n is None else n
    d, uoff = _conv_diags(lam, n, v.dtype)
    vp = np.zeros(n, dtype=v.dtype)
    m = min(n, len(v))
    vp[:m] = v[:m]
    vp /= d
    q = -uoff / d
    out = np.empty(n, dtype=v.dtype)
    for s in (0, 1):
        idx = np.arange(s, n, 2)
        if len(idx) == 0:
            continue
        g = np.empty(len(idx), dtype=v.dtype)
        g[0] = 1.0
        if len(idx) > 1:
            g[1:] = np.cumprod(q[idx[:-1]])
        h = np.cumsum((g * vp[idx])[::-1])[::-1]
        out[idx] = h / g
    return out


def conv_inv_transpose_apply(lam: int, v: np.ndarray, n: int | None = None) -> np.ndarray:
    """Forward substitution with S_lam^T; the parity chain factors are 1."""
    v = np.asarray(v)
    n = len(v) if n is None else n
    d, _ = _conv_diags(lam, n, v.dtype)
    vp = np.zeros(n, dtype=v.dtype)
    m = min(n, len(v))
    vp[:m] = v[:m]
    vp /= d
    out = np.empty(n, dtype=v.dtype)
    for s in (0, 1):
        idx = np.arange(s, n, 2)
        if len(idx):
            out[idx] = np.cumsum(vp[idx])
    return out


def to_ultraspherical(a_cheb: np.ndarray, lam: int) -> np.ndarray:
    """C^(lam) coefficients of a function given its Chebyshev coefficients."""
    a = np.asarray(a_cheb, dtype=float)
    for ell in range(lam):
        a = conv_apply(ell, a)
    return a


def to_chebyshev(a_ultra: np.ndarray, lam: int) -> np.ndarray:
    """Chebyshev coefficients from C^(lam) ones via square triangular solves.

    Matches the projected product P S_0^{-1} ... S_{lam-1}^{-1} P^T a, i.e.
    each back substitution works on the len(a) truncation.
    """
    a = np.asarray(a_ultra, dtype=float)
    for ell in range(lam - 1, -1, -1):
        a = conv_inv_apply(ell, a)
    return a


# ---------------------------------------------------------------------------
# multiplication operator generators
# ---------------------------------------------------------------------------

def m0_parts(a: np.ndarray):
    """Toeplitz, Hankel and rank-1 generators with M_0 = (T + H + R)/2.

    T is symmetric with first column (2 a_0, a_1, ..., a_d); H has entries
    a_{i+j}; R = -e_1 a^T puts the prolonged -a in the first row.
    """
    a = np.asarray(a, dtype=float)
    toe = a.copy()
    toe[0] = 2.0 * a[0]
    han = a.copy()
    return toe, han, a.copy()


def m1_symbols(ahat: np.ndarray):
    """Toeplitz and Hankel generators with M_1 = Toe/2 - Han/2.

    ahat holds the Chebyshev coefficients of the multiplier; the Hankel part
    has entries ahat_{i+j+2}.
    """
    ahat = np.asarray(ahat, dtype=float)
    toe = ahat.copy()
    toe[0] = 2.0 * ahat[0]
    han = ahat[2:].copy() if len(ahat) > 2 else np.zeros(0)
    return toe, han


def mlambda_chebyshev_coeffs(a_ultra: np.ndarray, lam: int) -> np.ndarray:
    """Chebyshev coefficients a-hat of a multiplier given in C^(lam)."""
    if lam < 1:
        raise ValueError("lam must be >= 1")
    return to_chebyshev(a_ultra, lam)


# ---------------------------------------------------------------------------
# operator specification
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class OperatorSpec:
    """Variable-coefficient linear differential operator of order N.

    coeffs[lam] holds the Chebyshev coefficients of the level-lam
    coefficient function (chopped); the leading coefficient must not vanish
    identically.
    """

    order: int
    coeffs: tuple

    def __post_init__(self):
        if len(self.coeffs) != self.order + 1:
            raise ValueError("need one coefficient series per level 0..N")
        cs = tuple(chop_coeffs(np.asarray(c, dtype=float)) for c in self.coeffs)
        if np.all(cs[self.order] == 0.0):
            raise ValueError("leading coefficient is identically zero")
        object.__setattr__(self, "coeffs", cs)

    @property
    def degrees(self) -> list[int]:
        return [len(c) - 1 for c in self.coeffs]

    def is_constant(self, lam: int) -> bool:
        return len(self.coeffs[lam]) == 1

    def truncated(self, keep: list[int]) -> "OperatorSpec":
        """Spec with each level-lam coefficient cut to its first keep[lam]
        entries, the truncation applied in the C^(lam) basis."""
        new = []
        for lam, c in enumerate(self.coeffs):
            m = keep[lam]
            cu = to_ultraspherical(c, lam)[:m]
            if len(cu) == 0 or np.all(cu == 0.0):
                cu = np.zeros(1)
            new.append(to_chebyshev(cu, lam))
        return OperatorSpec(self.order, tuple(new))


# ---------------------------------------------------------------------------
# dense truncations (oracles and spectra)
# ---------------------------------------------------------------------------

def dense_diff(lam: int, n: int) -> np.ndarray:
    D = np.zeros((n, n))
    j = np.arange(n - lam)
    D[j, j + lam] = DIFF_SCALE[lam] * (j + lam)
    return D


def dense_conv(lam: int, n: int) -> np.ndarray:
    d, u = _conv_diags(lam, n)
    S = np.diag(d)
    i = np.arange(n - 2)
    S[i, i + 2] = u[: n - 2]
    return S


def dense_conv_inv(lam: int, n: int) -> np.ndarray:
    """triu(c^lam r) structure; equals inv(dense_conv) on the truncation."""
    S = np.zeros((n, n))
    for i in range(n):
        if lam == 0:
            val = 1.0 if i == 0 else 2.0
        else:
            val = (lam + i) / lam
        S[i, i::2] = val
    return S


def dense_m0(a: np.ndarray, n: int) -> np.ndarray:
    """(T + H + R)/2 truncation from the displayed generators."""
    toe, han, rank1 = m0_parts(a)
    t = np.zeros(n)
    t[: min(n, len(toe))] = toe[:n]
    T = np.zeros((n, n))
    i, j = np.indices((n, n))
    T = t[np.abs(i - j)]
    h = np.zeros(2 * n)
    h[: min(2 * n, len(han))] = han[: 2 * n]
    H = h[i + j]
    R = np.zeros((n, n))
    R[0, : min(n, len(rank1))] = -rank1[:n]
    return 0.5 * (T + H + R)


def dense_m1(ahat: np.ndarray, n: int) -> np.ndarray:
    """Closed-form Toeplitz-minus-Hankel truncation of M_1."""
    toe, han = m1_symbols(ahat)
    t = np.zeros(n)
    t[: min(n, len(toe))] = toe[:n]
    i, j = np.indices((n, n))
    T = t[np.abs(i - j)]
    h = np.zeros(2 * n)
    h[: min(2 * n, len(han))] = han[: 2 * n]
    H = h[i + j]
    return 0.5 * (T - H)


def dense_mult_recurrence(a: np.ndarray, lam: int, n: int) -> np.ndarray:
    """M_lam[a] by the three-term recurrence; a given in C^(lam) (T if lam=0).

    Test oracle only: cost O(d n^2).
    """
    a = np.asarray(a, dtype=float)
    d = len(a) - 1
    m = n + d + 2
    X = np.zeros((m, m))
    j = np.arange(m)
    if lam == 0:
        X[1, 0] = 1.0
        jj = np.arange(1, m - 1)
        X[jj + 1, jj] = 0.5
        jj = np.arange(1, m)
        X[jj - 1, jj] = 0.5
    else:
        jj = np.arange(m - 1)
        X[jj + 1, jj] = (jj + 1) / (2.0 * (jj + lam))
        jj = np.arange(1, m)
        X[jj - 1, jj] = (jj + 2 * lam - 1) / (2.0 * (jj + lam))
    M_prev = np.eye(m)
    out = a[0] * M_prev
    if d >= 1:
        M_cur = (2 * lam if lam >= 1 else 1.0) * X
        if lam == 0:
            M_cur = X.copy()
        out = out + a[1] * M_cur
        for k in range(1, d):
            if lam == 0:
                M_next = 2.0 * X @ M_cur - M_prev
            else:
                M_next = (2.0 * (k + lam) / (k + 1)) * (X @ M_cur) \
                    - ((k + 2 * lam - 1) / (k + 1)) * M_prev
            M_prev, M_cur = M_cur, M_next
            out = out + a[k + 1] * M_cur
    return out[:n, :n]


def dense_interior(spec: OperatorSpec, n: int) -> np.ndarray:
    """Exact (n-N) x n truncation P_{n-N} J P_n^T, recurrence-built.

    This is the brute-force oracle for the FFT apply path, so the
    multiplication operators are constructed by the recurrence and the
    factors are multiplied out densely with generous padding.
    """
    N = spec.order
    pad = max(spec.degrees) + 2 * N + 8
    m = n + pad
    total = np.zeros((m, m))
    for lam in range(N + 1):
        a_cheb = spec.coeffs[lam]
        a_lam = to_ultraspherical(np.concatenate([a_cheb, np.zeros(2 * lam)]), lam)
        a_lam = chop_coeffs(a_lam)
        M = dense_mult_recurrence(a_lam, lam, m)
        term = M if lam == 0 else M @ dense_diff(lam, m)
        for ell in range(lam, N):
            term = dense_conv(ell, m) @ term
        total += term
    return total[: n - N, :n]


def dense_system(spec: OperatorSpec, bc_rows: np.ndarray, n: int) -> np.ndarray:
    """Square system: boundary rows stacked on the interior truncation."""
    bc = np.asarray(bc_rows, dtype=float)
    if bc.shape != (spec.order, n):
        raise ValueError("boundary rows must be N x n")
    return np.vstack([bc, dense_interior(spec, n)])


# ---------------------------------------------------------------------------
# tagged wrappers
# ---------------------------------------------------------------------------

def diff_op_apply(lam: int, v: BasisVector, n: int | None = None) -> BasisVector:
    if v.basis != "T":
        raise ValueError("differentiation acts on Chebyshev-T coefficients")
    return BasisVector(diff_apply(lam, v.coeffs, n), basis_tag(lam))


def conv_op_apply(lam: int, v: BasisVector, n: int | None = None) -> BasisVector:
    if v.basis != basis_tag(lam):
        raise ValueError(f"conversion S_{lam} expects basis {basis_tag(lam)}")
    return BasisVector(conv_apply(lam, v.coeffs, n), basis_tag(lam + 1))


def conv_inv_op_apply(lam: int, v: BasisVector, n: int | None = None) -> BasisVector:
    if v.basis != basis_tag(lam + 1):
        raise ValueError(f"inverse conversion expects basis {basis_tag(lam + 1)}")
    return BasisVector(conv_inv_apply(lam, v.coeffs, n), basis_tag(lam))
