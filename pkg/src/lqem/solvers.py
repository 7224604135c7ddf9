"""ML-EM, MAP-EM and ECM coordinate-descent estimators.

Every step takes the moments ``(B, a)`` of the E-step at the current iterate
and maximises (part of) the quadratic auxiliary function

    Q_ML(theta) = a^T theta - 1/2 theta^T B theta + const.

MAP-EM adds the mixture surrogate ``-1/2 theta^T K theta`` and solves
``(B + K) theta = a`` on the unlocked coordinates; ECM replaces the joint
maximisation by one cycle of scalar lq-prox updates.
"""
from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field
from typing import List, Optional

import numpy as np

from .model import ParameterEstimate, ProblemSpec
from .penalty import PenaltySpec, kappa_weight, log_prior, lq_scalar_prox
from .smoother import GridSpec, MomentSet, e_step

logger = logging.getLogger(__name__)

METHODS = ("ml_em", "map_em", "ecm_cd")


class SolverError(RuntimeError):
    """Raised when a step cannot proceed; ``trace`` holds the iterations done so far."""

    def __init__(self, message, trace=None):
        super().__init__(message)
        self.trace = trace


class ConditioningError(SolverError):
    def __init__(self, message, min_eigenvalue, trace=None):
        super().__init__(message, trace)
        self.min_eigenvalue = min_eigenvalue


class DegenerateCoordinateError(SolverError):
    pass


@dataclass(frozen=True)
class SolverOptions:
    method: str = "ml_em"
    penalty: PenaltySpec = field(default_factory=PenaltySpec)
    grid: Optional[GridSpec] = None
    max_iters: int = 300
    tol_theta: float = 1e-8
    tol_obj: float = 1e-10
    seed: int = 0

    def __post_init__(self):
        if self.method not in METHODS:
            raise ValueError(f"unknown method {self.method!r}")
        if self.max_iters < 1:
            raise ValueError("max_iters must be >= 1")
        if not (self.tol_theta > 0.0 and self.tol_obj > 0.0):
            raise ValueError("tolerances must be > 0")


@dataclass
class EmTrace:
    """Per-iteration record. Index ``i`` holds the iterate produced by step ``i + 1``."""

    method: str
    initial: ParameterEstimate
    initial_objective: float
    initial_loglik: float
    iterates: List[ParameterEstimate] = field(default_factory=list)
    objectives: List[float] = field(default_factory=list)
    logliks: List[float] = field(default_factory=list)
    moments_time: List[float] = field(default_factory=list)
    solve_time: List[float] = field(default_factory=list)
    converged_at: Optional[int] = None

    @property
    def final(self) -> ParameterEstimate:
        return self.iterates[-1] if self.iterates else self.initial

    def theta_matrix(self) -> np.ndarray:
        return np.array([it.theta for it in self.iterates])


def _solve_spd(mat, rhs, what):
    try:
        chol = np.linalg.cholesky(mat)
    except np.linalg.LinAlgError:
        min_eig = float(np.linalg.eigvalsh(mat).min()) if mat.size else 0.0
        raise ConditioningError(
            f"{what} is not positive definite (smallest eigenvalue {min_eig:.3e})", min_eig
        ) from None
    w = np.linalg.solve(chol, rhs)
    return np.linalg.solve(chol.T, w)


def _moments(spec, theta_hat, opts, moments):
    if moments is None:
        moments, _ = e_step(spec, theta_hat.theta, opts.grid)
    return moments


def em_ml_step(spec: ProblemSpec, theta_hat: ParameterEstimate, opts: SolverOptions,
               moments: MomentSet = None) -> ParameterEstimate:
    """Unpenalised M-step: solve ``B theta = a`` on all coordinates."""
    m = _moments(spec, theta_hat, opts, moments)
    return ParameterEstimate(_solve_spd(m.b, m.a, "B"))


def zero_lock(theta: ParameterEstimate, eps: float) -> ParameterEstimate:
    """Pin every coordinate with ``|theta_j| <= eps`` at exactly 0 (existing locks persist)."""
    if not eps > 0.0:
        raise ValueError("eps must be > 0")
    new = {j for j in range(theta.p) if abs(theta.theta[j]) <= eps}
    return ParameterEstimate(theta.theta, theta.locked_zeros | new)


def map_em_step(spec: ProblemSpec, theta_hat: ParameterEstimate, opts: SolverOptions,
                moments: MomentSet = None) -> ParameterEstimate:
    """MAP M-step: solve ``(B + K) theta = a`` on the unlocked coordinates, then lock."""
    pen = opts.penalty
    m = _moments(spec, theta_hat, opts, moments)
    theta = np.zeros(theta_hat.p)
    active = np.flatnonzero(theta_hat.active_mask())
    if active.size:
        k_diag = np.array([kappa_weight(theta_hat.theta[j], pen) for j in active]) \
            if pen.active else np.zeros(active.size)
        lhs = m.b[np.ix_(active, active)] + np.diag(k_diag)
        theta[active] = _solve_spd(lhs, m.a[active], "B + K")
    out = ParameterEstimate(theta, theta_hat.locked_zeros)
    if pen.family == "lq":
        out = zero_lock(out, pen.zero_lock_eps)
    return out


def ecm_cd_step(spec: ProblemSpec, theta_hat: ParameterEstimate, opts: SolverOptions,
                moments: MomentSet = None) -> ParameterEstimate:
    """One Gauss-Seidel cycle of scalar lq-prox updates on the E-step quadratic.

    No coordinate is locked: a zero may become nonzero again in a later cycle.
    """
    pen = opts.penalty
    m = _moments(spec, theta_hat, opts, moments)
    b, a = m.b, m.a
    theta = np.array(theta_hat.theta)
    q = pen.q if pen.family == "lq" else 1.0
    for j in range(theta.size):
        bjj = b[j, j]
        if not bjj > 0.0:
            raise DegenerateCoordinateError(f"[B]_{j},{j} = {bjj:g}; coordinate {j} is unidentifiable")
        theta[j] = 0.0
        target = (a[j] - b[j] @ theta) / bjj
        if pen.family == "ridge":
            theta[j] = target * bjj / (bjj + 2.0 * pen.weight)
        elif pen.weight > 0.0:
            theta[j] = lq_scalar_prox(target, pen.weight / bjj, q)
        else:
            theta[j] = target
    return ParameterEstimate(theta)


def _surrogate_parts(theta_hat: ParameterEstimate, pen: PenaltySpec):
    active = theta_hat.active_mask()
    k_diag = np.zeros(theta_hat.p)
    if pen.active:
        k_diag[active] = [kappa_weight(theta_hat.theta[j], pen) for j in np.flatnonzero(active)]
    return active, k_diag


def map_surrogate(theta, theta_hat: ParameterEstimate, moments: MomentSet,
                  pen: PenaltySpec) -> float:
    """``a^T t - 1/2 t^T (B + K) t`` over the unlocked coordinates (locked ones held at 0)."""
    active, k_diag = _surrogate_parts(theta_hat, pen)
    t = np.where(active, np.asarray(theta, dtype=float), 0.0)
    return float(moments.a @ t - 0.5 * t @ moments.b @ t - 0.5 * np.sum(k_diag * t * t))


def map_surrogate_grad(theta, theta_hat: ParameterEstimate, moments: MomentSet,
                       pen: PenaltySpec) -> np.ndarray:
    """Gradient ``a - B t - K t``; zero on locked coordinates."""
    active, k_diag = _surrogate_parts(theta_hat, pen)
    t = np.where(active, np.asarray(theta, dtype=float), 0.0)
    g = moments.a - moments.b @ t - k_diag * t
    return np.where(active, g, 0.0)


_STEPS = {"ml_em": em_ml_step, "map_em": map_em_step, "ecm_cd": ecm_cd_step}


def objective(loglik: float, est: ParameterEstimate, method: str, pen: PenaltySpec) -> float:
    """Log-likelihood, plus the log prior over unlocked coordinates for penalised methods."""
    if method == "ml_em" or not pen.active:
        return loglik
    return loglik + log_prior(est.theta[est.active_mask()], pen)


def default_init(spec: ProblemSpec, grid: GridSpec = None) -> np.ndarray:
    """Ridge (tau = 1) solution from the E-step moments at ``theta = 0``."""
    m, _ = e_step(spec, np.zeros(spec.p), grid)
    return _solve_spd(m.b + 2.0 * np.eye(spec.p), m.a, "B + 2I")


def run_estimator(spec: ProblemSpec, theta_init, opts: SolverOptions) -> EmTrace:
    """Iterate the selected step until the iterate or the objective stops moving.

    The E-step at each new iterate is reused both for its objective and for
    the next step, so every iteration costs one smoothing pass.
    """
    if not spec.fully_observed and opts.grid is None:
        raise ValueError("a grid is required for latent-state problems")
    step = _STEPS[opts.method]
    pen = opts.penalty
    est = ParameterEstimate(spec.check_theta(theta_init))
    if opts.method == "map_em" and pen.family == "lq":
        est = zero_lock(est, pen.zero_lock_eps)

    t0 = time.perf_counter()
    moments, loglik = e_step(spec, est.theta, opts.grid)
    trace = EmTrace(opts.method, est, objective(loglik, est, opts.method, pen), loglik)
    moments_time = time.perf_counter() - t0
    prev_obj = trace.initial_objective

    for it in range(opts.max_iters):
        t1 = time.perf_counter()
        try:
            new = step(spec, est, opts, moments)
        except SolverError as exc:
            exc.trace = trace
            raise
        t2 = time.perf_counter()
        moments, loglik = e_step(spec, new.theta, opts.grid)
        t3 = time.perf_counter()

        obj = objective(loglik, new, opts.method, pen)
        trace.iterates.append(new)
        trace.objectives.append(obj)
        trace.logliks.append(loglik)
        trace.solve_time.append(t2 - t1)
        trace.moments_time.append(moments_time)
        moments_time = t3 - t2

        dtheta = float(np.max(np.abs(new.theta - est.theta)))
        est = new
        if dtheta <= opts.tol_theta or abs(obj - prev_obj) <= opts.tol_obj:
            trace.converged_at = it
            break
        prev_obj = obj
    logger.debug("%s finished after %d iterations", opts.method, len(trace.iterates))
    return trace
