"""Restarted right-preconditioned GMRES with the inexact Newton stopping rule.

The inner solve accepts as soon as ||J d - f|| <= omega ||f||; with right
preconditioning the Arnoldi least-squares estimate tracks exactly that
residual, and the true residual is re-measured in binary64 at exit.  In
reduced-precision mode all Arnoldi vectors, matvecs and preconditioner
applies run in binary32; bookkeeping outside the solve stays binary64.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

log = logging.getLogger(__name__)

BREAKDOWN_RTOL = 1e-14
STAGNATION_RTOL = 1e-3
REDUCED_FORCING_FLOOR = 1e-6


def restart_rule(n: int) -> int:
    """r = n/100 clamped to [20, 150]."""
    return int(min(150, max(20, round(n / 100))))


@dataclass
class GmresConfig:
    forcing: float
    restart: int = 20
    max_cycles: int = 40
    precision: str = "full"  # "full" | "mixed"

    def __post_init__(self):
        if not 0.0 <= self.forcing < 1.0:
            raise ValueError("forcing term must lie in [0, 1)")
        if self.restart < 1:
            raise ValueError("restart must be >= 1")


@dataclass
class GmresResult:
    delta: np.ndarray
    theta: np.ndarray
    residual_norm: float
    residual_vector: np.ndarray
    iterations: int
    cycles: int
    converged: bool
    breakdown: bool = False
    stagnated: bool = False
    history: list = field(default_factory=list)


class _Identity:
    @staticmethod
    def solve(v):
        return v


def mixed_precision_contract(precision: str, forcing: float):
    """Execution rule for one inner solve.

    Returns (dtype, certify_retry): reduced mode runs in binary32 unless the
    forcing term is below what binary32 can certify, in which case the solve
    is promoted to full precision up front.
    """
    if precision == "mixed":
        if forcing < REDUCED_FORCING_FLOOR:
            return np.float64, False
        return np.float32, True
    return np.float64, False


def gmres_solve(apply, precond, b, cfg: GmresConfig, x0=None) -> GmresResult:
    """Solve J d = b inexactly; apply must preserve the dtype it is given.

    precond exposes solve(v) acting as W^{-1}; the Krylov iteration runs on
    the right-preconditioned operator and the update is mapped back through
    one extra W-solve per cycle.
    """
    precond = precond if precond is not None else _Identity()
    dtype, certify_retry = mixed_precision_contract(cfg.precision, cfg.forcing)
    result = _gmres_run(apply, precond, b, cfg, x0, dtype)
    if certify_retry and not result.breakdown:
        target = cfg.forcing * float(np.linalg.norm(b))
        if result.residual_norm > target * (1.0 + 1e-6):
            log.info("reduced-precision solve missed certification; "
                     "retrying in full precision")
            result = _gmres_run(apply, precond, b, cfg, x0, np.float64)
    return result


def _gmres_run(apply, precond, b, cfg, x0, dtype) -> GmresResult:
    b64 = np.asarray(b, dtype=np.float64)
    n = len(b64)
    bnorm = float(np.linalg.norm(b64))
    target = cfg.forcing * bnorm
    bw = b64.astype(dtype)

    x = np.zeros(n, dtype=dtype) if x0 is None else np.asarray(x0).astype(dtype)
    theta_acc = np.zeros(n, dtype=np.float64)
    r = bw - apply(x) if x0 is not None else bw.copy()

    history: list[float] = []
    iterations = 0
    converged = False
    breakdown = False
    stagnated = False
    stagnant_cycles = 0
    cycles = 0

    if bnorm == 0.0:
        converged = True

    m = cfg.restart
    V = np.empty((m + 1, n), dtype=dtype)
    H = np.zeros((m + 1, m), dtype=dtype)

    while not converged and cycles < cfg.max_cycles:
        beta = float(np.linalg.norm(r))
        if beta <= target:
            converged = True
            break
        V[0] = r / beta
        g = np.zeros(m + 1, dtype=dtype)
        g[0] = beta
        cs = np.zeros(m, dtype=dtype)
        sn = np.zeros(m, dtype=dtype)
        j_used = 0
        for j in range(m):
            w = np.array(apply(precond.solve(V[j].copy())), dtype=dtype)
            for i in range(j + 1):
                H[i, j] = V[i] @ w
                w -= H[i, j] * V[i]
            hsub = float(np.linalg.norm(w))
            H[j + 1, j] = hsub
            j_used = j + 1
            iterations += 1
            if hsub < BREAKDOWN_RTOL * bnorm:
                breakdown = True
            else:
                V[j + 1] = w / hsub
            # Givens update of the Hessenberg column and the residual estimate
            for i in range(j):
                t = cs[i] * H[i, j] + sn[i] * H[i + 1, j]
                H[i + 1, j] = -sn[i] * H[i, j] + cs[i] * H[i + 1, j]
                H[i, j] = t
            denom = np.hypot(H[j, j], H[j + 1, j])
            if denom == 0.0:
                cs[j], sn[j] = 1.0, 0.0
            else:
                cs[j] = H[j, j] / denom
                sn[j] = H[j + 1, j] / denom
            H[j, j] = denom
            H[j + 1, j] = 0.0
            g[j + 1] = -sn[j] * g[j]
            g[j] = cs[j] * g[j]
            est = abs(float(g[j + 1]))
            history.append(est)
            if est <= target or breakdown:
                break
        # least-squares solution of the cycle
        k = j_used
        y = np.zeros(k, dtype=dtype)
        for i in range(k - 1, -1, -1):
            y[i] = (g[i] - H[i, i + 1 : k] @ y[i + 1 : k]) / H[i, i]
        theta = V[:k].T @ y
        x = x + precond.solve(theta).astype(dtype)
        theta_acc += theta.astype(np.float64)
        r = bw - apply(x)
        cycles += 1
        rnorm = float(np.linalg.norm(r))
        if rnorm <= target:
            converged = True
        elif breakdown:
            break
        else:
            if (beta - rnorm) < STAGNATION_RTOL * beta:
                stagnant_cycles += 1
                if stagnant_cycles >= 2:
                    stagnated = True
                    break
            else:
                stagnant_cycles = 0

    delta = x.astype(np.float64)
    res64 = b64 - np.asarray(apply(delta), dtype=np.float64)
    rnorm64 = float(np.linalg.norm(res64))
    # the inexact condition is certified on the true system in binary64
    converged = rnorm64 <= max(target, target * (1.0 + 1e-12)) or bnorm == 0.0
    return GmresResult(delta=delta, theta=theta_acc, residual_norm=rnorm64,
                       residual_vector=res64, iterations=iterations,
                       cycles=cycles, converged=converged, breakdown=breakdown,
                       stagnated=stagnated, history=history)
