"""Grid-discretised forward-backward smoothing and E-step moments.

The scalar latent chain is restricted to an equally spaced grid spanning
``+-L`` stationary standard deviations.  Transition rows and the initial law
use trapezoidal weights and are normalised, which turns the model into an
exact discrete HMM; the forward pass is scaled per step and its scalers
accumulate the marginal log-likelihood.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Tuple

import numpy as np

from .model import LOG_2PI, LatentDynamics, ProblemSpec

DEFAULT_NUM_POINTS = 201
DEFAULT_HALF_WIDTH = 5.0

PROFILES = {
    "standard": (201, 5.0),
    "high": (401, 6.0),
}


@dataclass(frozen=True)
class GridSpec:
    num_points: int
    half_width_sigmas: float
    nodes: np.ndarray
    weights: np.ndarray


@dataclass(frozen=True)
class LatentPosterior:
    """Smoothed marginals ``p(z_k = node_m | y, theta)`` (shape ``(n, M)``) and ``log p(y | theta)``."""

    marginals: np.ndarray
    loglik: float


@dataclass(frozen=True)
class MomentSet:
    """E-step statistics.

    e1 : (n, p) array, ``E[X | y]``
    b  : (p, p) array, ``E[X^T X | y] / sigma^2``
    a  : (p,) array, ``E[X^T | y] y / sigma^2``
    """

    e1: np.ndarray
    b: np.ndarray
    a: np.ndarray


def build_grid(latent: LatentDynamics, num_points: int = DEFAULT_NUM_POINTS,
               half_width_sigmas: float = DEFAULT_HALF_WIDTH) -> GridSpec:
    if num_points < 3 or num_points % 2 == 0:
        raise ValueError(f"num_points must be odd and >= 3, got {num_points}")
    if not half_width_sigmas > 0.0:
        raise ValueError("half_width_sigmas must be > 0")
    half = half_width_sigmas * np.sqrt(latent.stationary_var)
    nodes = np.linspace(-half, half, num_points)
    # force exact symmetry (and an exact 0 at the centre)
    nodes = 0.5 * (nodes - nodes[::-1])
    h = nodes[1] - nodes[0]
    weights = np.full(num_points, h)
    weights[0] = weights[-1] = 0.5 * h
    return GridSpec(num_points, float(half_width_sigmas), nodes, weights)


def grid_for_profile(latent: LatentDynamics, profile: str = "standard") -> GridSpec:
    try:
        m, width = PROFILES[profile]
    except KeyError:
        raise ValueError(f"unknown grid profile {profile!r}") from None
    return build_grid(latent, m, width)


def _normalise_rows(logw):
    logw = logw - logw.max(axis=-1, keepdims=True)
    w = np.exp(logw)
    return w / w.sum(axis=-1, keepdims=True)


def initial_law(grid: GridSpec, latent: LatentDynamics) -> np.ndarray:
    logw = np.log(grid.weights) - 0.5 * (grid.nodes - latent.init_mean) ** 2 / latent.init_var
    return _normalise_rows(logw)


def transition_matrix(grid: GridSpec, latent: LatentDynamics) -> np.ndarray:
    """Row-stochastic ``T[m, m'] ~ w_m' N(node_m'; a node_m, sigma_xi^2)``."""
    diff = grid.nodes[None, :] - latent.ar_coeff * grid.nodes[:, None]
    logw = np.log(grid.weights)[None, :] - 0.5 * diff**2 / latent.noise_var_state
    return _normalise_rows(logw)


def emission_loglik(spec: ProblemSpec, theta, grid: GridSpec) -> np.ndarray:
    """``log N(y_k; sin(phase_k + node_m) u_k^T theta, sigma^2)`` as an ``(n, M)`` array."""
    theta = spec.check_theta(theta)
    y = spec.require_responses()
    gain = spec.inputs @ theta
    s = np.sin(spec.phases()[:, None] + grid.nodes[None, :])
    resid = y[:, None] - s * gain[:, None]
    var = spec.noise_var_obs
    return -0.5 * (LOG_2PI + np.log(var) + resid**2 / var)


def forward_backward(log_emission: np.ndarray, grid: GridSpec,
                     latent: LatentDynamics) -> LatentPosterior:
    """Scaled forward-backward over the grid chain for arbitrary emission log-densities."""
    log_emission = np.asarray(log_emission, dtype=float)
    n, m = log_emission.shape
    if m != grid.num_points:
        raise ValueError("emission array does not match the grid")
    trans = transition_matrix(grid, latent)
    shift = log_emission.max(axis=1)
    emis = np.exp(log_emission - shift[:, None])

    alpha = np.empty((n, m))
    scale = np.empty(n)
    pred = initial_law(grid, latent)
    for k in range(n):
        f = pred * emis[k]
        scale[k] = f.sum()
        alpha[k] = f / scale[k]
        if k + 1 < n:
            pred = alpha[k] @ trans

    beta = np.empty((n, m))
    beta[-1] = 1.0
    for k in range(n - 2, -1, -1):
        beta[k] = trans @ (emis[k + 1] * beta[k + 1]) / scale[k + 1]

    post = alpha * beta
    post /= post.sum(axis=1, keepdims=True)
    loglik = float(np.sum(np.log(scale)) + np.sum(shift))
    return LatentPosterior(post, loglik)


def smooth(spec: ProblemSpec, theta, grid: GridSpec) -> LatentPosterior:
    if spec.fully_observed:
        raise ValueError("fully observed problems have no latent chain to smooth")
    return forward_backward(emission_loglik(spec, theta, grid), grid, spec.latent)


def compute_moments(spec: ProblemSpec, posterior: LatentPosterior, grid: GridSpec) -> MomentSet:
    """Regressor moments under the per-step smoothed marginals.

    Row ``k`` of X depends on ``z_k`` only, so per-step marginals suffice.
    """
    y = spec.require_responses()
    gamma = posterior.marginals
    if gamma.shape != (spec.n, grid.num_points):
        raise ValueError("posterior does not match problem/grid dimensions")
    s = np.sin(spec.phases()[:, None] + grid.nodes[None, :])
    es = np.sum(gamma * s, axis=1)
    es2 = np.sum(gamma * s * s, axis=1)
    U = spec.inputs
    var = spec.noise_var_obs
    e1 = es[:, None] * U
    b = (U * es2[:, None]).T @ U / var
    b = 0.5 * (b + b.T)
    a = U.T @ (es * y) / var
    return MomentSet(e1, b, a)


def sine_moments(spec: ProblemSpec, posterior: LatentPosterior,
                 grid: GridSpec) -> Tuple[np.ndarray, np.ndarray]:
    """Per-step ``E[s_k]`` and ``E[s_k^2]`` with ``s_k = sin(phase_k + z_k)``."""
    s = np.sin(spec.phases()[:, None] + grid.nodes[None, :])
    g = posterior.marginals
    return np.sum(g * s, axis=1), np.sum(g * s * s, axis=1)


def observed_moments(spec: ProblemSpec) -> MomentSet:
    """Exact statistics for a fully observed problem (point-mass posterior)."""
    X = spec.inputs
    y = spec.require_responses()
    var = spec.noise_var_obs
    return MomentSet(np.array(X), X.T @ X / var, X.T @ y / var)


def observed_loglik(spec: ProblemSpec, theta) -> float:
    theta = spec.check_theta(theta)
    y = spec.require_responses()
    r = y - spec.inputs @ theta
    var = spec.noise_var_obs
    return float(-0.5 * (spec.n * (LOG_2PI + np.log(var)) + r @ r / var))


def e_step(spec: ProblemSpec, theta, grid: GridSpec = None) -> Tuple[MomentSet, float]:
    """Moments at ``theta`` together with ``log p(y | theta)``."""
    if spec.fully_observed:
        return observed_moments(spec), observed_loglik(spec, theta)
    post = smooth(spec, theta, grid)
    return compute_moments(spec, post, grid), post.loglik
