"""Outer Newton driver with adaptive truncation and global step control.

Three nested iterations: the outer Newton loop updates the iterate, the
intermediate loop doubles the system size until the update's coefficients
plateau, and the inner loop is a preconditioned GMRES solve meeting the
inexact Newton condition.  Step control after each outer iteration follows
one of three variants: a dogleg trust region, Armijo backtracking, or the
residual-oriented trust region with its contraction/Kantorovich model.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .almostbanded import bandwidth_rule, make_preconditioner
from .chebyshev import (ChebSeries, CompositionDomainError, ResolutionError,
                        chop_coeffs, standard_chop)
from .fastapply import JacobianApplicator
from .krylov import GmresConfig, gmres_solve, restart_rule
from .problems import ProblemSpec, g_vector
from .ultraops import OperatorSpec, conv_apply

log = logging.getLogger(__name__)

METHOD_OMEGA0 = {"trd": 0.1, "lsb": 0.01, "trc": 1e-3}


class InitialIterateError(Exception):
    """The boundary-condition system for the initial polynomial is singular."""


@dataclass
class NewtonConfig:
    method: str = "trc"              # trd | lsb | trc
    eta_r: float = 1e-14
    omega0: float | None = None      # default per method
    max_outer: int = 100
    max_doublings: int = 12
    precision: str = "full"          # full | mixed
    restart_override: int | None = None
    bandwidth_override: int | None = None
    chop_tol: float = 1e-15
    # plateau detector (artifact constants, isolated for sensitivity tests)
    plateau_floor: float = 1e-10
    plateau_flat_level: float = 1e-8
    plateau_slope: float = -0.05
    # dogleg constants (step-control defaults)
    delta0: float = 0.1
    delta_max: float = 100.0
    rho_accept: float = 0.25
    rho_expand: float = 0.75
    omega_max: float = 0.1
    # stop when the residual stalls at the evaluation noise floor
    floor_patience: int = 3

    def __post_init__(self):
        if self.method not in METHOD_OMEGA0:
            raise ValueError(f"unknown method {self.method!r}")
        if not 0.0 < self.eta_r < 1.0:
            raise ValueError("eta_r must lie in (0, 1)")
        if self.omega0 is None:
            self.omega0 = METHOD_OMEGA0[self.method]


@dataclass
class NewtonTrace:
    """Append-only per-intermediate-iteration record."""

    rows: list = field(default_factory=list)

    def append(self, k, intermediate_index, n, residual, omega, phase):
        self.rows.append({"k": k, "intermediate_index": intermediate_index,
                          "n": n, "residual": residual, "omega": omega,
                          "step_scale": None, "phase": phase})

    def mark_step_scale(self, scale: float):
        if self.rows:
            self.rows[-1]["step_scale"] = scale

    def to_json(self) -> list:
        return self.rows


@dataclass
class NewtonResult:
    solution: ChebSeries
    trace: NewtonTrace
    converged: bool
    flag: str
    residual: float
    outer_iterations: int
    intermediate_iterations: int


# ---------------------------------------------------------------------------
# pieces of the driver
# ---------------------------------------------------------------------------

def initial_iterate(problem: ProblemSpec) -> ChebSeries:
    """Lowest-degree polynomial interpolating the boundary values."""
    if problem.initial_fn is not None:
        return problem.initial_fn(problem)
    N = problem.order
    values = np.array([bc.value for bc in problem.bcs])
    vnorm = 1.0 + float(np.linalg.norm(values))
    for d in range(2 * N + 5):
        rows = problem.bc_rows(d + 1)
        coef, *_ = np.linalg.lstsq(rows, values, rcond=None)
        if np.linalg.norm(rows @ coef - values) <= 1e-12 * vnorm:
            u = ChebSeries(chop_coeffs(coef) if np.any(coef) else np.zeros(1),
                           problem.domain)
            return u
    raise InitialIterateError(
        f"{problem.name}: boundary-condition system admits no low-degree "
        "polynomial interpolant")


def initial_size(spec: OperatorSpec, res: ChebSeries) -> int:
    """n = max(N + max_lam(d_lam - lam), deg F + 1), floored at N + 2."""
    N = spec.order
    dmax = max(d - lam for lam, d in enumerate(spec.degrees))
    n = max(N + dmax, res.length)
    return max(n, N + 2)


def plateau_detected(delta: np.ndarray, cfg: NewtonConfig) -> bool:
    """True when the trailing quarter of the update has hit a flat floor."""
    m = len(delta)
    if m < 8:
        return False
    mx = float(np.max(np.abs(delta)))
    if mx == 0.0:
        return True
    tail = np.abs(delta[-(m // 4):]) / mx
    tmax = float(np.max(tail))
    if tmax <= cfg.plateau_floor:
        return True
    if tmax <= cfg.plateau_flat_level:
        logs = np.log10(np.maximum(tail, 1e-300))
        idx = np.arange(len(tail), dtype=float)
        slope = np.polyfit(idx, logs, 1)[0]
        if slope >= cfg.plateau_slope:
            return True
    return False


def rhs_vector(problem, Fres: ChebSeries, bc_res: np.ndarray, n: int) -> np.ndarray:
    """G at truncation n: [bc residuals ; first n - N converted F coeffs]."""
    N = problem.order
    c = Fres.pad(n)
    for ell in range(N):
        c = conv_apply(ell, c)
    return np.concatenate([bc_res, c[: n - N]])


def _series_of(problem, coeffs, cfg) -> ChebSeries:
    return ChebSeries(standard_chop(coeffs, cfg.chop_tol), problem.domain)


def _step(problem, u, coeffs, cfg) -> ChebSeries:
    """u plus an update vector, re-chopped at the noise plateau."""
    trial = u + _series_of(problem, coeffs, cfg)
    return ChebSeries(standard_chop(trial.coeffs, cfg.chop_tol), problem.domain)


def _gnorm_of(problem, u) -> float:
    """||G(u)||; +inf when a composition leaves its domain."""
    try:
        return float(np.linalg.norm(g_vector(problem, u)))
    except (CompositionDomainError, ResolutionError):
        return math.inf


def _gvec_of(problem, u):
    try:
        return g_vector(problem, u)
    except (CompositionDomainError, ResolutionError):
        return None


def _padded(a: np.ndarray, n: int) -> np.ndarray:
    out = np.zeros(n)
    out[: len(a)] = a[:n] if len(a) > n else a
    return out


def _combine_norm(*vecs) -> float:
    n = max(len(v) for v in vecs)
    acc = np.zeros(n)
    for v in vecs:
        acc[: len(v)] += v
    return float(np.linalg.norm(acc))


class _Linearization:
    """One outer iteration's operator, preconditioner, and right-hand side."""

    def __init__(self, problem, u, cfg):
        self.problem = problem
        self.spec = problem.frechet(u)
        self.Fres = problem.residual(u)
        self.bc_res = problem.bc_residuals(u)

    def system(self, n, cfg):
        bc = self.problem.bc_rows(n)
        J = JacobianApplicator(self.spec, bc, n)
        p = cfg.bandwidth_override or bandwidth_rule(n)
        W = make_preconditioner(self.spec, bc, n, p)
        f = -rhs_vector(self.problem, self.Fres, self.bc_res, n)
        return J, W, f


def intermediate_loop(problem, u, omega, cfg, trace, k, gnorm, counter):
    """Solve the linearization, doubling n until the update plateaus.

    Returns (delta, J, fvec, gmres_result, n); fvec is G at size n (so the
    GMRES right-hand side was -fvec).
    """
    lin = _Linearization(problem, u, cfg)
    n = initial_size(lin.spec, lin.Fres)
    x0 = None
    first = True
    for _ in range(cfg.max_doublings + 1):
        J, W, rhs = lin.system(n, cfg)
        gcfg = GmresConfig(
            forcing=omega,
            restart=cfg.restart_override or restart_rule(n),
            precision=cfg.precision)
        res = gmres_solve(J.apply, W, rhs, gcfg, x0=x0)
        counter[0] += 1
        trace.append(k, counter[0], n, gnorm, omega, 1 if first else 0)
        first = False
        if plateau_detected(res.delta, cfg):
            return res.delta, J, -rhs, res, n
        x0 = _padded(res.delta, 2 * n)
        n *= 2
    raise ResolutionError(
        f"update not resolved after {cfg.max_doublings} doublings (n={n})")


# ---------------------------------------------------------------------------
# postprocess variants
# ---------------------------------------------------------------------------

def postprocess_tr_dogleg(problem, u, fvec, J, delta, Delta, omega, eta, cfg):
    """Dogleg trust region; returns (u1, Delta1, omega1, accepted, scale)."""
    dnorm = float(np.linalg.norm(delta))
    if dnorm <= Delta:
        dtil = delta
    else:
        g = J.apply_transpose(fvec)
        Jg = J.apply(g)
        gn2 = float(g @ g)
        Jgn2 = float(Jg @ Jg)
        deltaC = -(gn2 / Jgn2) * g
        cnorm = float(np.linalg.norm(deltaC))
        if cnorm >= Delta:
            dtil = -(Delta / math.sqrt(gn2)) * g
        else:
            # positive root of ||deltaC + nu (delta - deltaC)|| = Delta
            dd = delta - deltaC
            a = float(dd @ dd)
            b = 2.0 * float(deltaC @ dd)
            c = cnorm**2 - Delta**2
            nu = (-b + math.sqrt(b * b - 4 * a * c)) / (2 * a)
            dtil = deltaC + nu * dd
    dtn = float(np.linalg.norm(dtil))
    utrial = _step(problem, u, dtil, cfg)
    gtrial = _gnorm_of(problem, utrial)
    fnorm = float(np.linalg.norm(fvec))
    pred = fnorm**2 - float(np.linalg.norm(fvec + J.apply(dtil))) ** 2
    if pred <= 0.0 or not math.isfinite(gtrial):
        rho = -math.inf
    else:
        rho = (fnorm**2 - gtrial**2) / pred
    if rho < cfg.rho_accept:
        Delta1 = dtn / 4.0
    elif rho > cfg.rho_expand and dtn >= Delta * (1.0 - 1e-12):
        Delta1 = min(cfg.delta_max, 2.0 * Delta)
    else:
        Delta1 = Delta
    if rho > cfg.rho_accept:
        omega1 = 0.9 * gtrial**2 / fnorm**2
        omega1 = max(omega1, eta / (2.0 * gtrial)) if gtrial > 0 else omega1
        omega1 = min(omega1, cfg.omega_max)
        return utrial, Delta1, omega1, True, dtn / max(dnorm, 1e-300)
    return u, Delta1, omega, False, 0.0


def postprocess_ls_backtracking(problem, u, fvec, J, delta, omega, eta, cfg):
    """Armijo backtracking with quadratic interpolation.

    Returns (u1, omega1, accepted, scale); accepted False means the
    backtracking budget was exhausted.
    """
    t = 1e-4
    tau = 1.0
    om = omega
    kappa = 10
    gmin, gmax = 0.1, 0.5
    fnorm = float(np.linalg.norm(fvec))
    omega_s = 0.9 * omega**2
    for _ in range(kappa):
        utrial = _step(problem, u, tau * delta, cfg)
        gtrial = _gnorm_of(problem, utrial)
        if gtrial <= (1.0 - t * (1.0 - om)) * fnorm:
            omega1 = 0.9 * gtrial**2 / fnorm**2
            if omega_s > 0.1:
                omega1 = max(omega1, omega_s)
            omega1 = max(omega1, eta / (2.0 * gtrial)) if gtrial > 0 else omega1
            omega1 = min(omega1, cfg.omega_max)
            return utrial, omega1, True, tau
        # quadratic model p with p(0)=g(0), p'(0)=g'(0), p(1)=g(tau step)
        g0 = fnorm
        gp0 = float(fvec @ J.apply(tau * delta)) / max(fnorm, 1e-300)
        g1 = gtrial if math.isfinite(gtrial) else 1e6 * max(g0, 1.0)
        curv = g1 - g0 - gp0
        if curv > 0:
            ghat = -gp0 / (2.0 * curv)
        else:
            ghat = gmax if g1 < g0 else gmin
        ghat = min(gmax, max(gmin, ghat))
        tau *= ghat
        om = 1.0 - ghat * (1.0 - om)
    return u, omega, False, 0.0


def postprocess_tr_contravariant(problem, u, fvec, delta, omega, rvec,
                                 theta_prev, h_prev, k, cfg):
    """Residual-oriented trust region (contraction factor + Kantorovich).

    Returns (u1, omega1, theta, h, accepted, scale); accepted False means
    the regularity test failed.
    """
    mu_min = 1e-6
    omega_min = 1e-5
    rho = 0.9
    fnorm = float(np.linalg.norm(fvec))
    if k >= 1 and theta_prev is not None and theta_prev * h_prev > 0:
        mu = min(1.0, 1.0 / ((1.0 + omega) * theta_prev * h_prev))
    else:
        mu = 0.1
    accept = False
    reducted = False
    theta = math.inf
    h = math.inf
    utrial = u
    fhat = None
    while not accept:
        if mu < mu_min:
            return u, omega, theta_prev, h_prev, False, 0.0
        utrial = _step(problem, u, mu * delta, cfg)
        fhat = _gvec_of(problem, utrial)
        if fhat is None:
            theta = math.inf
            h = math.inf
        else:
            theta = float(np.linalg.norm(fhat)) / fnorm
            num = _combine_norm(fhat, -(1.0 - mu) * fvec, -mu * rvec)
            h = 2.0 * num / (mu**2 * (1.0 - omega**2) * fnorm)
        if theta >= 1.0 - mu / 4.0:
            mu_new = mu / 2.0 if h == 0 else min(1.0 / ((1.0 + omega) * h),
                                                 mu / 2.0)
            mu = mu_new
            reducted = True
        else:
            muhat = 1.0 if h == 0 else min(1.0, 1.0 / ((1.0 + omega) * h))
            if muhat >= 4.0 * mu and not reducted:
                mu = muhat
            else:
                accept = True
    hhat = 2.0 * rho * theta**2 / ((1.0 + rho) * (1.0 - omega**2))
    if hhat > 0:
        omega1 = min((math.sqrt(1.0 + hhat**2) - 1.0) / hhat, cfg.omega_max)
    else:
        omega1 = 0.0
    omega1 = max(omega1, omega_min)
    return utrial, omega1, theta, h, True, mu


# ---------------------------------------------------------------------------
# the outer loop
# ---------------------------------------------------------------------------

def outer_loop(problem: ProblemSpec, cfg: NewtonConfig,
               u0: ChebSeries | None = None) -> NewtonResult:
    """Run the full solver; terminates on ||G|| <= eta_r ||G(u0)|| + eta_r."""
    u = u0 if u0 is not None else initial_iterate(problem)
    trace = NewtonTrace()
    counter = [0]
    gnorm = _gnorm_of(problem, u)
    if not math.isfinite(gnorm):
        raise CompositionDomainError(
            f"{problem.name}: initial iterate leaves the residual domain")
    eta = cfg.eta_r * gnorm + cfg.eta_r
    omega = cfg.omega0
    Delta = cfg.delta0
    theta_prev = None
    h_prev = None
    flag = ""
    converged = False
    cached = None  # reused linear solve after a dogleg rejection
    stall = 0
    k = 0
    while k < cfg.max_outer:
        if gnorm <= eta:
            converged = True
            break
        if cached is None:
            try:
                delta, J, fvec, gres, n = intermediate_loop(
                    problem, u, omega, cfg, trace, k, gnorm, counter)
            except ResolutionError as exc:
                flag = f"resolution-failure: {exc}"
                break
        else:
            delta, J, fvec, gres, n = cached
            cached = None
            counter[0] += 1
            trace.append(k, counter[0], n, gnorm, omega, 1)

        if cfg.method == "trd":
            u1, Delta, omega1, accepted, scale = postprocess_tr_dogleg(
                problem, u, fvec, J, delta, Delta, omega, eta, cfg)
            if not accepted:
                cached = (delta, J, fvec, gres, n)
        elif cfg.method == "lsb":
            u1, omega1, accepted, scale = postprocess_ls_backtracking(
                problem, u, fvec, J, delta, omega, eta, cfg)
            if not accepted:
                flag = "failure of backtracking"
                trace.mark_step_scale(0.0)
                break
        else:
            rvec = -gres.residual_vector  # f^k + J delta^k
            u1, omega1, theta_prev, h_prev, accepted, scale = \
                postprocess_tr_contravariant(problem, u, fvec, delta, omega,
                                             rvec, theta_prev, h_prev, k, cfg)
            if not accepted:
                flag = "regularity test fails"
                trace.mark_step_scale(0.0)
                break
        trace.mark_step_scale(scale)
        if accepted:
            gnew = _gnorm_of(problem, u1)
            if gnew >= gnorm * (1.0 - 1e-2):
                stall += 1
            else:
                stall = 0
            u, gnorm, omega = u1, gnew, omega1
            if stall >= cfg.floor_patience and gnorm <= math.sqrt(cfg.eta_r):
                flag = "stalled at evaluation floor"
                break
        k += 1
    else:
        flag = "max outer iterations exceeded"
    if gnorm <= eta:
        converged = True
    return NewtonResult(solution=u, trace=trace, converged=converged,
                        flag=flag, residual=gnorm, outer_iterations=k,
                        intermediate_iterations=counter[0])


def solve_problem(name_or_problem, method="trc", eta_r=1e-14,
                  precision="full", u0=None, **kwargs) -> NewtonResult:
    """Convenience wrapper: solve a bank problem by name."""
    from .problems import get_problem
    problem = (get_problem(name_or_problem)
               if isinstance(name_or_problem, str) else name_or_problem)
    cfg = NewtonConfig(method=method, eta_r=eta_r, precision=precision,
                       **kwargs)
    return outer_loop(problem, cfg, u0=u0)
