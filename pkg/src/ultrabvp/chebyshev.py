"""Adaptive Chebyshev series on an interval.

Functions are represented by their Chebyshev-T coefficients on [a, b],
built adaptively from point samples on second-kind grids of size 2^k + 1.
All arithmetic (sums, products, derivatives, compositions) happens in
coefficient space; values are recovered with a type-I DCT when needed.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
import scipy.fft

DEFAULT_TOL = 1e-15
MIN_GRID_LOG2 = 4
MAX_GRID_LOG2 = 17


class ResolutionError(Exception):
    """A function could not be resolved on the largest sampling grid."""


class CompositionDomainError(Exception):
    """Sampling g(u(x)) produced non-finite values (g evaluated off-domain)."""


def chebpts(m: int) -> np.ndarray:
    """Chebyshev points of the second kind, x_j = cos(pi*j/m), j = 0..m."""
    if m == 0:
        return np.array([1.0])
    return np.cos(np.pi * np.arange(m + 1) / m)


def vals2coeffs(vals: np.ndarray) -> np.ndarray:
    """Chebyshev-T coefficients from values on chebpts(len(vals)-1)."""
    n = len(vals)
    if n == 1:
        return np.asarray(vals, dtype=float).copy()
    m = n - 1
    c = scipy.fft.dct(np.asarray(vals, dtype=float), type=1) / m
    c[0] *= 0.5
    c[-1] *= 0.5
    return c


def coeffs2vals(coeffs: np.ndarray) -> np.ndarray:
    """Values on chebpts(len(coeffs)-1) from Chebyshev-T coefficients."""
    n = len(coeffs)
    if n == 1:
        return np.asarray(coeffs, dtype=float).copy()
    c = np.asarray(coeffs, dtype=float).copy()
    c[1:-1] *= 0.5
    return scipy.fft.dct(c, type=1)


def chop_coeffs(coeffs: np.ndarray, tol: float = DEFAULT_TOL) -> np.ndarray:
    """Drop the trailing run of coefficients below tol * max|coeffs|.

    Keeps at least one coefficient so the zero function stays representable.
    """
    c = np.asarray(coeffs, dtype=float)
    cmax = np.max(np.abs(c)) if len(c) else 0.0
    if cmax == 0.0:
        return np.zeros(1)
    keep = np.nonzero(np.abs(c) >= tol * cmax)[0]
    return c[: keep[-1] + 1].copy()


def standard_chop(coeffs: np.ndarray, tol: float = DEFAULT_TOL) -> np.ndarray:
    """Plateau-aware chop: cut where the coefficient envelope stops decaying.

    Follows the envelope/plateau-point construction used by chebfun-style
    constructors: a series is cut either where its envelope falls below tol
    or at the start of a flat noise plateau, whichever the tilted-envelope
    minimum prefers.  Falls back to the plain threshold rule for very short
    series.
    """
    c = np.asarray(coeffs, dtype=float)
    n = len(c)
    if n < 17:
        return chop_coeffs(c, tol)
    b = np.abs(c)
    m = np.maximum.accumulate(b[::-1])[::-1]
    if m[0] == 0.0:
        return np.zeros(1)
    env = m / m[0]
    # locate a plateau: envelope decay from j to ~1.25j+5 weaker than the
    # decay still required to reach tol
    plateau_point = None
    j2 = 0
    for j in range(1, n):
        j2 = int(round(1.25 * j + 5))
        if j2 >= n:
            break
        e1 = env[j]
        e2 = env[j2]
        if e1 == 0.0:
            plateau_point = j
            break
        r = 3.0 * (1.0 - math.log(e1) / math.log(tol))
        if e2 / e1 > r:
            plateau_point = j
            break
    if plateau_point is None:
        return chop_coeffs(c, tol)
    if env[plateau_point] == 0.0:
        cutoff = plateau_point
    else:
        # tilted envelope: prefer the deepest point, slightly favouring
        # earlier cuts
        cc = np.log10(np.maximum(env[: j2 + 1], 1e-300))
        cc += np.linspace(0.0, (-1.0 / 3.0) * math.log10(tol), j2 + 1)
        d = int(np.argmin(cc))
        cutoff = max(d, 1)
    out = c[:cutoff].copy()
    return out if len(out) else np.zeros(1)


@dataclass(frozen=True)
class ChebSeries:
    """Finite Chebyshev-T expansion of a function on [a, b].

    Immutable; every operation returns a new series.  The coefficients are
    those of the function pulled back to [-1, 1] by the affine map, so the
    arrays plug directly into the coefficient-space operator machinery.
    """

    coeffs: np.ndarray
    domain: tuple[float, float] = (-1.0, 1.0)

    def __post_init__(self):
        c = np.atleast_1d(np.asarray(self.coeffs, dtype=float))
        if c.ndim != 1 or len(c) == 0:
            raise ValueError("coeffs must be a nonempty 1-d array")
        object.__setattr__(self, "coeffs", c)
        a, b = self.domain
        if not b > a:
            raise ValueError("domain must satisfy a < b")
        object.__setattr__(self, "domain", (float(a), float(b)))

    # ------------------------------------------------------------------
    # construction
    # ------------------------------------------------------------------

    @classmethod
    def from_function(
        cls,
        f: Callable[[np.ndarray], np.ndarray],
        domain: tuple[float, float] = (-1.0, 1.0),
        tol: float = DEFAULT_TOL,
    ) -> "ChebSeries":
        """Adaptively sample f on grids 2^k + 1 until the tail resolves.

        Resolution is declared when the upper half of the coefficient
        spectrum sits below tol relative on two consecutive grids.
        """
        if not 0.0 < tol < 1.0:
            raise ValueError("tol must lie in (0, 1)")
        a, b = domain
        prev_ok = False
        for k in range(MIN_GRID_LOG2, MAX_GRID_LOG2 + 1):
            m = 2**k
            x = 0.5 * (b - a) * (chebpts(m) + 1.0) + a
            vals = np.asarray(f(x), dtype=float)
            if vals.shape != x.shape:
                vals = np.broadcast_to(vals, x.shape).astype(float)
            if not np.all(np.isfinite(vals)):
                raise CompositionDomainError(
                    "sampled values are not finite on the grid"
                )
            c = vals2coeffs(vals)
            cmax = np.max(np.abs(c))
            ok = cmax == 0.0 or np.max(np.abs(c[m // 2 :])) <= tol * cmax
            if ok and prev_ok:
                return cls(chop_coeffs(c, tol), domain)
            prev_ok = ok
        raise ResolutionError(
            f"function not resolved on grid of size 2^{MAX_GRID_LOG2}+1"
        )

    @classmethod
    def from_values(cls, vals, domain=(-1.0, 1.0)) -> "ChebSeries":
        return cls(vals2coeffs(np.asarray(vals, dtype=float)), domain)

    @classmethod
    def constant(cls, c: float, domain=(-1.0, 1.0)) -> "ChebSeries":
        return cls(np.array([float(c)]), domain)

    @classmethod
    def identity(cls, domain=(-1.0, 1.0)) -> "ChebSeries":
        a, b = domain
        return cls(np.array([(b + a) / 2.0, (b - a) / 2.0]), domain)

    # ------------------------------------------------------------------
    # evaluation
    # ------------------------------------------------------------------

    def __call__(self, x):
        """Evaluate by Clenshaw recurrence at points of [a, b]."""
        a, b = self.domain
        t = (2.0 * np.asarray(x, dtype=float) - a - b) / (b - a)
        return np.polynomial.chebyshev.chebval(t, self.coeffs)

    def values(self, npts: int | None = None) -> np.ndarray:
        """Values on the second-kind grid with npts points (default len)."""
        n = len(self.coeffs) if npts is None else npts
        c = np.zeros(n)
        c[: min(n, len(self.coeffs))] = self.coeffs[:n]
        return coeffs2vals(c)

    def points(self, npts: int | None = None) -> np.ndarray:
        n = len(self.coeffs) if npts is None else npts
        a, b = self.domain
        return 0.5 * (b - a) * (chebpts(n - 1) + 1.0) + a

    # ------------------------------------------------------------------
    # algebra
    # ------------------------------------------------------------------

    def _check_domain(self, other: "ChebSeries"):
        if self.domain != other.domain:
            raise ValueError("series live on different domains")

    def __add__(self, other):
        if np.isscalar(other):
            c = self.coeffs.copy()
            c[0] += other
            return ChebSeries(c, self.domain)
        self._check_domain(other)
        return linear_combination([(1.0, self), (1.0, other)], chop=False)

    __radd__ = __add__

    def __sub__(self, other):
        if np.isscalar(other):
            return self + (-other)
        self._check_domain(other)
        return linear_combination([(1.0, self), (-1.0, other)], chop=False)

    def __rsub__(self, other):
        return (-self) + other

    def __neg__(self):
        return ChebSeries(-self.coeffs, self.domain)

    def __mul__(self, other):
        if np.isscalar(other):
            return ChebSeries(self.coeffs * other, self.domain)
        self._check_domain(other)
        n1, n2 = len(self.coeffs), len(other.coeffs)
        n = n1 + n2 - 1
        vals = self.values(n) * other.values(n)
        return ChebSeries(vals2coeffs(vals), self.domain)

    __rmul__ = __mul__

    def __pow__(self, k: int):
        if not isinstance(k, int) or k < 0:
            raise ValueError("only nonnegative integer powers")
        out = ChebSeries.constant(1.0, self.domain)
        for _ in range(k):
            out = out * self
        return out

    def deriv(self, order: int = 1) -> "ChebSeries":
        """Derivative in coefficient space; carries the (2/(b-a))^order map factor."""
        a, b = self.domain
        c = self.coeffs
        for _ in range(order):
            n = len(c)
            if n == 1:
                c = np.zeros(1)
                continue
            d = np.zeros(n - 1)
            # backward recurrence: d_{k-1} = d_{k+1} + 2k c_k, d_0 halved
            w = np.zeros(n + 1)
            for k in range(n - 1, 0, -1):
                w[k - 1] = w[k + 1] + 2 * k * c[k]
            w[0] *= 0.5
            d[:] = w[: n - 1]
            c = d * (2.0 / (b - a))
        return ChebSeries(c, self.domain)

    def compose(self, g: Callable[[np.ndarray], np.ndarray],
                tol: float = DEFAULT_TOL) -> "ChebSeries":
        """Series of g(u(x)), resolved by resampling on doubling grids.

        Grid values of u come from zero-padded coefficients (exact), so each
        refinement costs one DCT pair regardless of the length of u.
        """
        k0 = max(MIN_GRID_LOG2, int(np.ceil(np.log2(max(len(self.coeffs) - 1, 1)))))
        prev_ok = False
        for k in range(k0, MAX_GRID_LOG2 + 1):
            m = 2**k
            uvals = self.values(m + 1)
            gvals = np.asarray(g(uvals), dtype=float)
            if not np.all(np.isfinite(gvals)):
                raise CompositionDomainError("composition left the domain of g")
            c = vals2coeffs(gvals)
            cmax = np.max(np.abs(c))
            ok = cmax == 0.0 or np.max(np.abs(c[m // 2 :])) <= tol * cmax
            if ok and prev_ok:
                return ChebSeries(chop_coeffs(c, tol), self.domain)
            prev_ok = ok
        raise ResolutionError("composition not resolved at the maximum grid size")

    def chop(self, tol: float = DEFAULT_TOL) -> "ChebSeries":
        return ChebSeries(chop_coeffs(self.coeffs, tol), self.domain)

    def pad(self, n: int) -> np.ndarray:
        """Coefficients zero-padded or truncated to length n."""
        c = np.zeros(n)
        c[: min(n, len(self.coeffs))] = self.coeffs[:n]
        return c

    @property
    def length(self) -> int:
        return len(self.coeffs)

    def norm2(self) -> float:
        return float(np.linalg.norm(self.coeffs))

    def dump_csv(self, path):
        """Write `k,coeff` rows; 17 significant digits round-trip binary64."""
        with open(path, "w") as fh:
            fh.write("k,coeff\n")
            for k, c in enumerate(self.coeffs):
                fh.write(f"{k},{c:.17g}\n")

    @classmethod
    def load_csv(cls, path, domain=(-1.0, 1.0)) -> "ChebSeries":
        rows = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
        return cls(rows[:, 1], domain)


def linear_combination(terms: Sequence[tuple[float, ChebSeries]],
                       chop: bool = True,
                       tol: float = DEFAULT_TOL) -> ChebSeries:
    """Coefficient-wise sum of scalar multiples after zero padding."""
    if not terms:
        raise ValueError("need at least one term")
    domain = terms[0][1].domain
    n = max(len(s.coeffs) for _, s in terms)
    out = np.zeros(n)
    for alpha, s in terms:
        if s.domain != domain:
            raise ValueError("series live on different domains")
        out[: len(s.coeffs)] += alpha * s.coeffs
    if chop:
        out = chop_coeffs(out, tol)
    return ChebSeries(out, domain)


def build_from_function(f, domain=(-1.0, 1.0), tol=DEFAULT_TOL) -> ChebSeries:
    """Functional alias for ChebSeries.from_function."""
    return ChebSeries.from_function(f, domain, tol)
