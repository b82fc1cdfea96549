"""Bank of 17 nonlinear ODE boundary value problems.

Each problem carries its residual operator, the coefficient functions of
its linearization, boundary functionals with linearized rows, default
parameters, and a closed-form solution where one exists.  Closed forms are
validated by substitution before anything trusts them.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy.optimize import brentq

from .chebyshev import ChebSeries, linear_combination
from .ultraops import OperatorSpec, conv_apply


class ClosedFormValidationError(Exception):
    """A candidate closed-form solution failed the substitution check."""


def g_vector(problem: "ProblemSpec", u: ChebSeries) -> np.ndarray:
    """Residual stacked as [boundary residuals; converted F coefficients].

    F's Chebyshev coefficients are mapped to C^(N) by the conversion chain,
    matching the right-hand side of the truncated linear systems; all
    residual norms are 2-norms of this vector.
    """
    F = problem.residual(u)
    c = F.coeffs
    for ell in range(problem.order):
        c = conv_apply(ell, c)
    return np.concatenate([problem.bc_residuals(u), c])


def g_norm(problem: "ProblemSpec", u: ChebSeries) -> float:
    return float(np.linalg.norm(g_vector(problem, u)))


@dataclass(frozen=True)
class BoundaryFunctional:
    """Evaluation of the c-th derivative at an endpoint, minus a value."""

    left: bool
    order: int
    value: float

    def row(self, n: int, domain) -> np.ndarray:
        """Coefficients of the functional over Chebyshev modes T_0..T_{n-1}.

        T_k^{(c)}(1) = prod_{j<c} (k^2 - j^2)/(2j + 1); the sign alternates
        at -1 and the chain rule brings (2/(b-a))^c.
        """
        a, b = domain
        k = np.arange(n, dtype=float)
        vals = np.ones(n)
        for j in range(self.order):
            vals *= (k**2 - j**2) / (2 * j + 1)
        if self.left:
            vals *= (-1.0) ** (k + self.order)
        return vals * (2.0 / (b - a)) ** self.order

    def residual(self, u: ChebSeries) -> float:
        x = u.domain[0] if self.left else u.domain[1]
        return float(u.deriv(self.order)(x)) - self.value


@dataclass
class ProblemSpec:
    """One registered boundary value problem on its own interval."""

    name: str
    order: int
    domain: tuple[float, float]
    params: dict
    residual_fn: Callable
    frechet_fn: Callable
    bcs: list[BoundaryFunctional]
    note: str = ""
    closed_form_fn: Callable | None = None
    eps_name: str | None = None
    deps_fn: Callable | None = None
    initial_fn: Callable | None = None
    _closed_form: ChebSeries | None = field(default=None, repr=False)

    @property
    def sigma(self) -> float:
        a, b = self.domain
        return 2.0 / (b - a)

    def residual(self, u: ChebSeries) -> ChebSeries:
        return self.residual_fn(u, self.params).chop()

    def bc_residuals(self, u: ChebSeries) -> np.ndarray:
        return np.array([bc.residual(u) for bc in self.bcs])

    def bc_rows(self, n: int) -> np.ndarray:
        return np.vstack([bc.row(n, self.domain) for bc in self.bcs])

    def frechet(self, u: ChebSeries) -> OperatorSpec:
        """OperatorSpec of the linearization at u, in mapped coordinates.

        The builder returns the coefficient functions of the x-space
        operator; level lam picks up sigma^lam from the change of variable.
        """
        coeffs = self.frechet_fn(u, self.params)
        out = []
        for lam, c in enumerate(coeffs):
            if np.isscalar(c):
                arr = np.array([float(c)])
            else:
                arr = c.coeffs
            out.append(arr * self.sigma**lam)
        return OperatorSpec(self.order, tuple(out))

    def deps_residual(self, u: ChebSeries) -> ChebSeries:
        if self.deps_fn is None:
            raise ValueError(f"{self.name} has no perturbation parameter")
        return self.deps_fn(u, self.params).chop()

    def with_params(self, **overrides) -> "ProblemSpec":
        params = dict(self.params)
        for key, val in overrides.items():
            if val is None:
                continue
            if key not in params:
                raise KeyError(f"{self.name} has no parameter {key!r}")
            params[key] = val
        return ProblemSpec(self.name, self.order, self.domain, params,
                           self.residual_fn, self.frechet_fn, self.bcs,
                           self.note, self.closed_form_fn, self.eps_name,
                           self.deps_fn, self.initial_fn)

    def closed_form(self) -> ChebSeries | None:
        """Validated analytic solution, or None.

        Substitution must leave residual and boundary mismatches below
        1e-10 or registration of the closed form is refused.
        """
        if self.closed_form_fn is None:
            return None
        if self._closed_form is None:
            cf = ChebSeries.from_function(
                lambda x: self.closed_form_fn(x, self.params), self.domain)
            rnorm = g_norm(self, cf)
            if rnorm > 1e-10:
                raise ClosedFormValidationError(
                    f"{self.name}: substitution residual {rnorm:.2e}")
            self._closed_form = cf
        return self._closed_form


# ---------------------------------------------------------------------------
# the bank
# ---------------------------------------------------------------------------

def _bratu_theta(beta: float) -> float:
    # smaller root of 2 t^2 = beta cosh^2 t (the stable Bratu branch);
    # near beta ~ 0.878 the two roots almost merge, so bracket each side
    # of the maximum of f
    f = lambda t: 2 * t * t - beta * math.cosh(t) ** 2
    fp = lambda t: 4 * t - beta * math.sinh(2 * t)
    tmax = brentq(fp, 1e-3, 4.0)
    if f(tmax) < 0:
        raise ClosedFormValidationError(f"no Bratu solution for beta={beta}")
    return brentq(f, 1e-8, tmax)


def _series_x(domain) -> ChebSeries:
    return ChebSeries.identity(domain)


def register_bank() -> dict[str, ProblemSpec]:
    """All 17 problems with their default parameters."""
    bank: dict[str, ProblemSpec] = {}

    def add(p: ProblemSpec):
        bank[p.name] = p

    # -- Blasius ------------------------------------------------------------
    L = 10.0
    add(ProblemSpec(
        "blasius", 3, (0.0, L), {"L": L},
        residual_fn=lambda u, p: u.deriv(3) + u * u.deriv(2) * 0.5,
        frechet_fn=lambda u, p: [u.deriv(2) * 0.5, 0.0, u * 0.5, 1.0],
        bcs=[BoundaryFunctional(True, 0, 0.0),
             BoundaryFunctional(True, 1, 0.0),
             BoundaryFunctional(False, 1, 1.0)],
        note="boundary layer"))

    # -- Falkner-Skan ---------------------------------------------------------
    add(ProblemSpec(
        "falkner-skan", 3, (0.0, L), {"L": L},
        residual_fn=lambda u, p: (u.deriv(3) + u * u.deriv(2) * 0.5
                                  + (1.0 - u.deriv(1) * u.deriv(1)) * (2.0 / 3.0)),
        frechet_fn=lambda u, p: [u.deriv(2) * 0.5, u.deriv(1) * (-4.0 / 3.0),
                                 u * 0.5, 1.0],
        bcs=[BoundaryFunctional(True, 0, 0.0),
             BoundaryFunctional(True, 1, 0.0),
             BoundaryFunctional(False, 1, 1.0)],
        note="an extension of the Blasius equation"))

    # -- Fisher-KPP -----------------------------------------------------------
    add(ProblemSpec(
        "fisher-kpp", 2, (-4.0, 4.0), {},
        residual_fn=lambda u, p: u.deriv(2) + u - u * u,
        frechet_fn=lambda u, p: [1.0 - 2.0 * u, 0.0, 1.0],
        bcs=[BoundaryFunctional(True, 0, 1.0),
             BoundaryFunctional(False, 0, 0.0)],
        note="a perturbed reaction-diffusion equation"))

    # -- fourth order ---------------------------------------------------------
    add(ProblemSpec(
        "fourth-order", 4, (0.0, 1.0), {},
        residual_fn=lambda u, p: (u.deriv(4) - u.deriv(1) * u.deriv(2)
                                  + u * u.deriv(3)),
        frechet_fn=lambda u, p: [u.deriv(3), -u.deriv(2), -u.deriv(1), u, 1.0],
        bcs=[BoundaryFunctional(True, 0, 0.0),
             BoundaryFunctional(True, 1, 0.0),
             BoundaryFunctional(False, 0, 1.0),
             BoundaryFunctional(False, 1, -5.0)],
        note="the equation of highest order in this collection"))

    # -- Bratu ----------------------------------------------------------------
    def bratu_closed(x, p):
        th = _bratu_theta(p["beta"])
        return -2.0 * np.log(np.cosh(th * x) / math.cosh(th))

    add(ProblemSpec(
        "bratu", 2, (-1.0, 1.0), {"beta": 0.875},
        residual_fn=lambda u, p: u.deriv(2) + u.compose(np.exp) * p["beta"],
        frechet_fn=lambda u, p: [u.compose(np.exp) * p["beta"], 0.0, 1.0],
        bcs=[BoundaryFunctional(True, 0, 0.0),
             BoundaryFunctional(False, 0, 0.0)],
        note="no solution when beta > 0.878; closed-form solution exists",
        closed_form_fn=bratu_closed))

    # -- Lane-Emden -----------------------------------------------------------
    Lle = 10.0
    add(ProblemSpec(
        "lane-emden", 2, (0.0, Lle), {"L": Lle},
        residual_fn=lambda u, p: (_series_x(u.domain) * u.deriv(2)
                                  + u.deriv(1) * 2.0
                                  + _series_x(u.domain) * u**5),
        frechet_fn=lambda u, p: [_series_x(u.domain) * (u**4) * 5.0, 2.0,
                                 _series_x(u.domain)],
        bcs=[BoundaryFunctional(True, 0, 1.0),
             BoundaryFunctional(True, 1, 0.0)],
        note="an IVP solved as a BVP; closed-form solution exists",
        closed_form_fn=lambda x, p: 1.0 / np.sqrt(1.0 + x * x / 3.0)))

    # -- gulf stream ----------------------------------------------------------
    # no-slip at the western wall: u(0) = 0; the constrained flow relaxes to
    # u = 1 offshore (a flat left value of 1 would make the constant state an
    # exact solution and the problem trivial)
    Lgs = 35.0
    add(ProblemSpec(
        "gulf-stream", 3, (0.0, Lgs), {"beta": -0.1, "L": Lgs},
        residual_fn=lambda u, p: (u.deriv(3)
                                  - (u.deriv(1) * u.deriv(1)
                                     - u * u.deriv(2)) * p["beta"]
                                  - u + 1.0),
        frechet_fn=lambda u, p: [u.deriv(2) * p["beta"] - 1.0,
                                 u.deriv(1) * (-2.0 * p["beta"]),
                                 u * p["beta"], 1.0],
        bcs=[BoundaryFunctional(True, 0, 0.0),
             BoundaryFunctional(True, 1, 0.0),
             BoundaryFunctional(False, 0, 1.0)],
        note="a conservation law holds for u"))

    # -- interior layer ---------------------------------------------------------
    add(ProblemSpec(
        "interior-layer", 2, (0.0, 1.0), {"eps": 0.01},
        residual_fn=lambda u, p: u.deriv(2) * p["eps"] + u * u.deriv(1) + u,
        frechet_fn=lambda u, p: [u.deriv(1) + 1.0, u, p["eps"]],
        bcs=[BoundaryFunctional(True, 0, -7.0 / 6.0),
             BoundaryFunctional(False, 0, 1.5)],
        note="singularly perturbed by the leading coefficient",
        eps_name="eps",
        deps_fn=lambda u, p: u.deriv(2)))

    # -- boundary layer ----------------------------------------------------------
    add(ProblemSpec(
        "boundary-layer", 2, (0.0, 1.0), {"eps": 0.01},
        residual_fn=lambda u, p: (u.deriv(2) * p["eps"] + u * u.deriv(1)
                                  - _series_x(u.domain) * u),
        frechet_fn=lambda u, p: [u.deriv(1) - _series_x(u.domain), u, p["eps"]],
        bcs=[BoundaryFunctional(True, 0, -7.0 / 6.0),
             BoundaryFunctional(False, 1, 1.5)],
        note="singularly perturbed by the leading coefficient",
        eps_name="eps",
        deps_fn=lambda u, p: u.deriv(2)))

    # -- sawtooth ---------------------------------------------------------------
    add(ProblemSpec(
        "sawtooth", 2, (-1.0, 1.0), {"eps": 0.05},
        residual_fn=lambda u, p: (u.deriv(2) * p["eps"]
                                  + u.deriv(1) * u.deriv(1) - 1.0),
        frechet_fn=lambda u, p: [0.0, u.deriv(1) * 2.0, p["eps"]],
        bcs=[BoundaryFunctional(True, 0, 0.8),
             BoundaryFunctional(False, 0, 1.2)],
        note="singularly perturbed by the leading coefficient",
        eps_name="eps",
        deps_fn=lambda u, p: u.deriv(2)))

    # -- Allen-Cahn ----------------------------------------------------------------
    def allen_cahn_res(u, p):
        x = _series_x(u.domain)
        sinx = x.compose(np.sin)
        return u.deriv(2) * p["eps"] + u - u**3 - sinx

    add(ProblemSpec(
        "allen-cahn", 2, (0.0, 10.0), {"eps": 2.0},
        residual_fn=allen_cahn_res,
        frechet_fn=lambda u, p: [1.0 - (u * u) * 3.0, 0.0, p["eps"]],
        bcs=[BoundaryFunctional(True, 0, 1.0),
             BoundaryFunctional(False, 0, -1.0)],
        note="singularly perturbed steady state equation",
        eps_name="eps",
        deps_fn=lambda u, p: u.deriv(2)))

    # -- pendulum ---------------------------------------------------------------
    add(ProblemSpec(
        "pendulum", 2, (0.0, 10.0), {},
        residual_fn=lambda u, p: u.deriv(2) + u.compose(np.sin),
        frechet_fn=lambda u, p: [u.compose(np.cos), 0.0, 1.0],
        bcs=[BoundaryFunctional(True, 0, 2.0),
             BoundaryFunctional(False, 0, 2.0)],
        note="multiple solutions"))

    # -- Carrier ---------------------------------------------------------------
    def carrier_res(u, p):
        x = _series_x(u.domain)
        w = 1.0 - x * x
        return u.deriv(2) * p["eps"] + w * u * 2.0 + u * u - 1.0

    add(ProblemSpec(
        "carrier", 2, (-1.0, 1.0), {"eps": 0.01},
        residual_fn=carrier_res,
        frechet_fn=lambda u, p: [(1.0 - _series_x(u.domain)
                                  * _series_x(u.domain)) * 2.0 + u * 2.0,
                                 0.0, p["eps"]],
        bcs=[BoundaryFunctional(True, 0, 0.0),
             BoundaryFunctional(False, 0, 0.0)],
        note="multiple solutions",
        eps_name="eps",
        deps_fn=lambda u, p: u.deriv(2)))

    # -- Painleve ---------------------------------------------------------------
    Lp = 10.0
    add(ProblemSpec(
        "painleve", 2, (0.0, Lp), {"L": Lp},
        residual_fn=lambda u, p: u.deriv(2) - u * u + _series_x(u.domain),
        frechet_fn=lambda u, p: [u * (-2.0), 0.0, 1.0],
        bcs=[BoundaryFunctional(True, 0, 0.0),
             BoundaryFunctional(False, 0, math.sqrt(Lp))],
        note="multiple solutions"))

    # -- Birkisson I -------------------------------------------------------------
    def birkisson1_res(u, p):
        x = _series_x(u.domain)
        return (u.deriv(2) - x.compose(np.cos) * u.deriv(1)
                + u * u.compose(np.log))

    add(ProblemSpec(
        "birkisson1", 2, (0.0, math.pi / 2.0), {},
        residual_fn=birkisson1_res,
        frechet_fn=lambda u, p: [u.compose(np.log) + 1.0,
                                 -_series_x(u.domain).compose(np.cos), 1.0],
        bcs=[BoundaryFunctional(True, 0, 1.0),
             BoundaryFunctional(False, 0, math.e)],
        note="closed-form solution exists",
        closed_form_fn=lambda x, p: np.exp(np.sin(x))))

    # -- Birkisson II --------------------------------------------------------------
    def birkisson2_res(u, p):
        x = _series_x(u.domain)
        e2x = x.compose(lambda t: np.exp(2.0 * t))
        rhs = x.compose(lambda t: np.sin(np.exp(t)) ** 2)
        return u.deriv(2) - u.deriv(1) + e2x * u + u * u - rhs

    add(ProblemSpec(
        "birkisson2", 2, (0.0, 2.5), {},
        residual_fn=birkisson2_res,
        frechet_fn=lambda u, p: [_series_x(u.domain).compose(
            lambda t: np.exp(2.0 * t)) + u * 2.0, -1.0, 1.0],
        bcs=[BoundaryFunctional(True, 0, math.sin(1.0)),
             BoundaryFunctional(False, 0, math.sin(math.exp(2.5)))],
        note="closed-form solution exists",
        closed_form_fn=lambda x, p: np.sin(np.exp(x))))

    # -- Birkisson III --------------------------------------------------------------
    add(ProblemSpec(
        "birkisson3", 2, (-1.0, 1.0), {},
        residual_fn=lambda u, p: u.deriv(2) + (u - u**3) * 18.0,
        frechet_fn=lambda u, p: [(1.0 - (u * u) * 3.0) * 18.0, 0.0, 1.0],
        bcs=[BoundaryFunctional(True, 0, -math.tanh(3.0)),
             BoundaryFunctional(False, 0, math.tanh(3.0))],
        note="closed-form solution exists",
        closed_form_fn=lambda x, p: np.tanh(3.0 * x)))

    return bank


BANK_ORDER = [
    "blasius", "falkner-skan", "fisher-kpp", "fourth-order", "bratu",
    "lane-emden", "gulf-stream", "interior-layer", "boundary-layer",
    "sawtooth", "allen-cahn", "pendulum", "carrier", "painleve",
    "birkisson1", "birkisson2", "birkisson3",
]

#: final solution lengths reported for the residual-oriented trust region run
REFERENCE_LENGTHS = {
    "blasius": 54, "falkner-skan": 40, "fisher-kpp": 56, "fourth-order": 28,
    "bratu": 39, "lane-emden": 69, "gulf-stream": 71, "interior-layer": 1084,
    "boundary-layer": 275, "sawtooth": 432, "allen-cahn": 79, "pendulum": 51,
    "carrier": 211, "painleve": 51, "birkisson1": 23, "birkisson2": 49,
    "birkisson3": 84,
}


def get_problem(name: str, **overrides) -> ProblemSpec:
    bank = register_bank()
    if name not in bank:
        raise KeyError(f"unknown problem {name!r}")
    return bank[name].with_params(**overrides)
