"""Observation model and domain types.

The regression is ``y = X(z) theta + eta`` where row ``k`` of the regressor
matrix is ``sin(omega (k-1)/n + z_k) * u_k`` and ``z`` follows a scalar
stationary AR(1) chain.  A problem with ``latent=None`` is fully observed:
``inputs`` is then the regressor matrix itself.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import FrozenSet, Optional

import numpy as np

LOG_2PI = math.log(2.0 * math.pi)


@dataclass(frozen=True)
class LatentDynamics:
    """AR(1) chain ``z_{k+1} = ar_coeff * z_k + xi_k``, ``xi_k ~ N(0, noise_var_state)``.

    ``init_mean``/``init_var`` default to the stationary law.
    """

    ar_coeff: float
    noise_var_state: float
    init_mean: float = 0.0
    init_var: Optional[float] = None

    def __post_init__(self):
        if not abs(self.ar_coeff) < 1.0:
            raise ValueError(f"|ar_coeff| must be < 1, got {self.ar_coeff}")
        if not self.noise_var_state > 0.0:
            raise ValueError("noise_var_state must be > 0")
        if self.init_var is None:
            object.__setattr__(self, "init_var", self.stationary_var)
        if not self.init_var > 0.0:
            raise ValueError("init_var must be > 0")

    @property
    def stationary_var(self) -> float:
        return self.noise_var_state / (1.0 - self.ar_coeff**2)


@dataclass(frozen=True)
class ProblemSpec:
    """Inputs, noise level and latent dynamics of one estimation problem.

    ``inputs`` holds one length-``p`` input window per measurement (shape
    ``(n, p)``).  ``responses`` may be left unset until data is attached.
    """

    inputs: np.ndarray
    noise_var_obs: float
    latent: Optional[LatentDynamics]
    omega: float = 0.0
    responses: Optional[np.ndarray] = None

    def __post_init__(self):
        inputs = np.array(self.inputs, dtype=float)
        if inputs.ndim != 2 or inputs.shape[0] < 1 or inputs.shape[1] < 1:
            raise ValueError(f"inputs must be a non-empty (n, p) array, got shape {inputs.shape}")
        inputs.setflags(write=False)
        object.__setattr__(self, "inputs", inputs)
        if not self.noise_var_obs > 0.0:
            raise ValueError("noise_var_obs must be > 0")
        if self.responses is not None:
            y = np.array(self.responses, dtype=float)
            if y.shape != (inputs.shape[0],):
                raise ValueError(f"responses must have shape ({inputs.shape[0]},), got {y.shape}")
            y.setflags(write=False)
            object.__setattr__(self, "responses", y)

    @property
    def n(self) -> int:
        return self.inputs.shape[0]

    @property
    def p(self) -> int:
        return self.inputs.shape[1]

    @property
    def fully_observed(self) -> bool:
        return self.latent is None

    def phases(self) -> np.ndarray:
        """Deterministic phase ``omega (k-1)/n`` for k = 1..n."""
        return self.omega * np.arange(self.n) / self.n

    def with_responses(self, y) -> "ProblemSpec":
        return replace(self, responses=y)

    def require_responses(self) -> np.ndarray:
        if self.responses is None:
            raise ValueError("problem has no responses attached")
        return self.responses

    def check_theta(self, theta) -> np.ndarray:
        theta = np.asarray(theta, dtype=float)
        if theta.shape != (self.p,):
            raise ValueError(f"theta must have shape ({self.p},), got {theta.shape}")
        return theta


@dataclass(frozen=True)
class ParameterEstimate:
    """A parameter vector plus the coordinates pinned at exactly zero."""

    theta: np.ndarray
    locked_zeros: FrozenSet[int] = field(default_factory=frozenset)

    def __post_init__(self):
        theta = np.array(self.theta, dtype=float)
        if theta.ndim != 1:
            raise ValueError("theta must be a vector")
        locked = frozenset(int(j) for j in self.locked_zeros)
        if any(j < 0 or j >= theta.size for j in locked):
            raise ValueError("locked index out of range")
        theta[list(locked)] = 0.0
        theta.setflags(write=False)
        object.__setattr__(self, "theta", theta)
        object.__setattr__(self, "locked_zeros", locked)

    @property
    def p(self) -> int:
        return self.theta.size

    def active_mask(self) -> np.ndarray:
        mask = np.ones(self.p, dtype=bool)
        mask[list(self.locked_zeros)] = False
        return mask

    def locked_mask_string(self) -> str:
        return "".join("1" if j in self.locked_zeros else "0" for j in range(self.p))


def design_row(u_window, z_k: float, k: int, omega: float, n: int) -> np.ndarray:
    """Row ``k`` (1-based) of the regressor matrix given the hidden state ``z_k``."""
    if not 1 <= k <= n:
        raise ValueError(f"k must lie in [1, {n}], got {k}")
    return math.sin(omega * (k - 1) / n + z_k) * np.asarray(u_window, dtype=float)


def design_matrix(spec: ProblemSpec, z_path=None) -> np.ndarray:
    """Full regressor matrix for a latent path (or ``inputs`` if fully observed)."""
    if spec.fully_observed:
        return np.array(spec.inputs)
    z = np.asarray(z_path, dtype=float)
    if z.shape != (spec.n,):
        raise ValueError(f"z_path must have shape ({spec.n},)")
    return np.sin(spec.phases() + z)[:, None] * spec.inputs


def _normal_logpdf(x, mean, var):
    return -0.5 * (LOG_2PI + np.log(var) + (x - mean) ** 2 / var)


def complete_loglik(theta, z_path, spec: ProblemSpec) -> float:
    """``log p(z, y | theta)`` with every constant kept."""
    theta = spec.check_theta(theta)
    y = spec.require_responses()
    X = design_matrix(spec, z_path)
    total = float(np.sum(_normal_logpdf(y, X @ theta, spec.noise_var_obs)))
    if spec.fully_observed:
        return total
    lat = spec.latent
    z = np.asarray(z_path, dtype=float)
    total += float(_normal_logpdf(z[0], lat.init_mean, lat.init_var))
    total += float(np.sum(_normal_logpdf(z[1:], lat.ar_coeff * z[:-1], lat.noise_var_state)))
    return total


def estimate_mse(theta_hat, theta_true) -> float:
    theta_hat = np.asarray(theta_hat, dtype=float)
    theta_true = np.asarray(theta_true, dtype=float)
    if theta_hat.shape != theta_true.shape:
        raise ValueError(f"length mismatch: {theta_hat.shape} vs {theta_true.shape}")
    return float(np.mean((theta_hat - theta_true) ** 2))
