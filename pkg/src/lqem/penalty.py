"""Penalty kernels, the reweighting matrix of the mixture surrogate, and the scalar lq prox.

The lq prior is the exponential power density
``p(t) = exp(-|t|^q / tau^q) / (2 Gamma(1 + 1/q) tau)``.  Its Gaussian
scale-mixture representation makes the prior term of the EM auxiliary
function a quadratic ``-1/2 theta^T K theta`` with diagonal

    K_jj = q * weight * |theta_hat_j|^(q - 2),     weight = tau^-q,

which touches the log-prior gradient at ``theta_hat`` and minorises it.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy.special import gammaln

FAMILIES = ("none", "ridge", "lq")


@dataclass(frozen=True)
class PenaltySpec:
    """Prior family with its exponent ``q``, scale ``tau`` and resolved weight.

    ``weight`` defaults to ``tau**-q`` for ``lq`` and ``tau**-2`` for
    ``ridge``; pass it explicitly to use another scaling (for instance
    ``1/tau``).  ``family='none'`` carries weight 0.
    """

    family: str = "none"
    q: float = 1.0
    tau: float = 1.0
    weight: Optional[float] = None
    zero_lock_eps: float = 1e-3

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ValueError(f"unknown penalty family {self.family!r}")
        if self.family == "lq" and not 0.0 < self.q <= 1.0:
            raise ValueError(f"lq exponent must lie in (0, 1], got {self.q}")
        if not self.tau > 0.0:
            raise ValueError("tau must be > 0")
        if not self.zero_lock_eps > 0.0:
            raise ValueError("zero_lock_eps must be > 0")
        if self.weight is None:
            w = {"none": 0.0, "ridge": self.tau**-2.0, "lq": self.tau**-self.q}[self.family]
            object.__setattr__(self, "weight", float(w))
        elif self.family != "none" and not self.weight > 0.0:
            raise ValueError("weight must be > 0")

    @property
    def active(self) -> bool:
        return self.family != "none"


def lq_log_prior(theta, pen: PenaltySpec) -> float:
    """Sum of per-coordinate log exponential-power densities."""
    if pen.family != "lq":
        raise ValueError("lq_log_prior requires family='lq'")
    t = np.abs(np.asarray(theta, dtype=float))
    log_norm = math.log(2.0) + float(gammaln(1.0 + 1.0 / pen.q)) + math.log(pen.tau)
    return float(np.sum(-pen.weight * t**pen.q - log_norm))


def ridge_log_prior(theta, pen: PenaltySpec) -> float:
    """Gaussian prior ``exp(-weight t^2)``, normalised."""
    t = np.asarray(theta, dtype=float)
    return float(np.sum(-pen.weight * t**2 + 0.5 * math.log(pen.weight / math.pi)))


def log_prior(theta, pen: PenaltySpec) -> float:
    """Log prior of ``theta`` (pass only the coordinates that should count)."""
    if pen.family == "lq":
        return lq_log_prior(theta, pen)
    if pen.family == "ridge":
        return ridge_log_prior(theta, pen)
    return 0.0


def log_prior_grad(theta, pen: PenaltySpec) -> np.ndarray:
    """Derivative of the log prior, valid away from zero for ``lq``."""
    t = np.asarray(theta, dtype=float)
    if pen.family == "lq":
        return -pen.q * pen.weight * np.abs(t) ** (pen.q - 1.0) * np.sign(t)
    if pen.family == "ridge":
        return -2.0 * pen.weight * t
    return np.zeros_like(t)


def kappa_weight(theta_j_hat: float, pen: PenaltySpec) -> float:
    """Diagonal entry ``K_jj`` with ``d Q_prior / d theta_j = -K_jj theta_j``."""
    if pen.family == "ridge":
        return 2.0 * pen.weight
    if pen.family != "lq":
        raise ValueError("kappa_weight requires family 'ridge' or 'lq'")
    t = abs(float(theta_j_hat))
    if t <= pen.zero_lock_eps:
        raise ValueError(f"|theta_j_hat| = {t:g} is inside the zero-lock neighbourhood; lock it first")
    return pen.q * pen.weight * t ** (pen.q - 2.0)


def implied_lambda_inv_expectation(theta_j_hat: float, pen: PenaltySpec) -> float:
    """``E[1/lambda_j | theta_hat_j]`` of the mixing variable, equal to ``tau^2 K_jj``."""
    if pen.family != "lq":
        raise ValueError("implied_lambda_inv_expectation requires family='lq'")
    return pen.tau**2 * kappa_weight(theta_j_hat, pen)


def build_K(theta_hat, pen: PenaltySpec) -> np.ndarray:
    """Diagonal K for a ``ParameterEstimate``; locked coordinates hold NaN.

    The solvers drop locked rows and columns before solving, so the NaN
    sentinel never enters an arithmetic path.
    """
    theta = np.asarray(theta_hat.theta, dtype=float)
    diag = np.full(theta.size, np.nan)
    for j in range(theta.size):
        if j not in theta_hat.locked_zeros:
            diag[j] = kappa_weight(theta[j], pen)
    return np.diag(diag)


def prox_threshold(lam: float, q: float):
    """``(b, h)``: smallest nonzero output magnitude and the input threshold of the lq prox."""
    if q == 1.0:
        return 0.0, lam
    b = (2.0 * lam * (1.0 - q)) ** (1.0 / (2.0 - q))
    h = b + lam * q * b ** (q - 1.0)
    return b, h


def lq_scalar_prox(z: float, lam: float, q: float) -> float:
    """Global minimiser of ``1/2 (t - z)^2 + lam |t|^q``.

    For ``q < 1`` the output is 0 up to the threshold ``h`` (ties go to 0)
    and jumps to the larger root of ``t + lam q t^(q-1) = |z|`` beyond it.
    """
    if not lam > 0.0:
        raise ValueError(f"lam must be > 0, got {lam}")
    if not 0.0 < q <= 1.0:
        raise ValueError(f"q must lie in (0, 1], got {q}")
    z = float(z)
    az = abs(z)
    if q == 1.0:
        return math.copysign(max(az - lam, 0.0), z) if az > lam else 0.0
    b, h = prox_threshold(lam, q)
    if az <= h:
        return 0.0
    c = lam * q

    def g(t):
        return t + c * t ** (q - 1.0) - az

    # g is increasing and convex on [b, az]: Newton from the right stays in the bracket
    lo, hi = b, az
    t = az
    for _ in range(200):
        gt = g(t)
        if abs(gt) <= 1e-12:
            break
        if gt > 0.0:
            hi = t
        else:
            lo = t
        dg = 1.0 + c * (q - 1.0) * t ** (q - 2.0)
        step = t - gt / dg if dg > 0.0 else lo - 1.0
        t = step if lo < step < hi else 0.5 * (lo + hi)
        if hi - lo <= 4.0 * np.finfo(float).eps * hi:
            break
    return math.copysign(t, z)


def lq_prox(z, lam, q: float) -> np.ndarray:
    """Elementwise ``lq_scalar_prox`` over arrays (``lam`` broadcasts)."""
    z = np.asarray(z, dtype=float)
    lam = np.broadcast_to(np.asarray(lam, dtype=float), z.shape)
    out = np.empty(z.shape)
    for idx in np.ndindex(z.shape):
        out[idx] = lq_scalar_prox(z[idx], lam[idx], q)
    return out
