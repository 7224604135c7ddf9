"""Synthetic data for the sinusoidally modulated regression with an AR(1) hidden phase.

Randomness comes from one ``SeedSequence`` per dataset, spawned into three
independent PCG64 streams: inputs, state noise (including the initial
state) and observation noise.  Changing one noise level therefore leaves the
draws of the other two sources untouched.
"""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional, Tuple

import numpy as np

from .model import LatentDynamics, ProblemSpec

DEFAULT_THETA = (-0.77, -1.55, 0.0, 0.0, 0.0, 0.0, 0.46)

STREAM_INPUT, STREAM_STATE, STREAM_OBS = range(3)


@dataclass(frozen=True)
class SimConfig:
    n: int = 256
    p: int = 7
    theta_true: Tuple[float, ...] = DEFAULT_THETA
    omega: float = 5.0
    ar_coeff: float = 0.9
    noise_var_state: float = 0.1
    noise_var_obs: float = 0.1
    seed: int = 0
    init_mean: float = 0.0
    init_var: Optional[float] = None  # None: stationary variance

    def __post_init__(self):
        object.__setattr__(self, "theta_true", tuple(float(t) for t in self.theta_true))
        if self.n < 1 or self.p < 1:
            raise ValueError("n and p must be >= 1")
        if len(self.theta_true) != self.p:
            raise ValueError(f"theta_true has length {len(self.theta_true)}, expected p={self.p}")
        if not abs(self.ar_coeff) < 1.0:
            raise ValueError("|ar_coeff| must be < 1")
        if self.noise_var_state < 0 or self.noise_var_obs < 0:
            raise ValueError("noise variances must be >= 0")
        if self.init_var is not None and self.init_var < 0:
            raise ValueError("init_var must be >= 0")

    @property
    def start_var(self) -> float:
        if self.init_var is not None:
            return self.init_var
        return self.noise_var_state / (1.0 - self.ar_coeff**2)

    def latent(self) -> LatentDynamics:
        return LatentDynamics(self.ar_coeff, self.noise_var_state, self.init_mean, self.init_var)


@dataclass(frozen=True)
class Dataset:
    spec: ProblemSpec
    z_path: Optional[np.ndarray]
    theta_true: np.ndarray
    input_sequence: Optional[np.ndarray] = None
    config: dict = field(default_factory=dict)


def _streams(seed: int):
    return [np.random.default_rng(s) for s in np.random.SeedSequence(seed).spawn(3)]


def input_windows(u_seq: np.ndarray, n: int, p: int) -> np.ndarray:
    """Rows ``u_{k:k+p-1}`` for k = 1..n, materialised as an ``(n, p)`` array."""
    return np.lib.stride_tricks.sliding_window_view(u_seq, p)[:n].copy()


def draw_series(config: SimConfig):
    """Raw draws ``(u_seq, windows, z, y)``; zero noise variances are allowed here."""
    rng = _streams(config.seed)
    n, p = config.n, config.p
    u_seq = rng[STREAM_INPUT].standard_normal(n + p - 1)
    windows = input_windows(u_seq, n, p)

    state = rng[STREAM_STATE]
    z = np.empty(n)
    z[0] = config.init_mean + np.sqrt(config.start_var) * state.standard_normal()
    xi = np.sqrt(config.noise_var_state) * state.standard_normal(n - 1)
    for k in range(1, n):
        z[k] = config.ar_coeff * z[k - 1] + xi[k - 1]

    phase = config.omega * np.arange(n) / n
    eta = np.sqrt(config.noise_var_obs) * rng[STREAM_OBS].standard_normal(n)
    y = np.sin(phase + z) * (windows @ np.asarray(config.theta_true)) + eta
    return u_seq, windows, z, y


def simulate(config: SimConfig) -> Dataset:
    u_seq, windows, z, y = draw_series(config)
    spec = ProblemSpec(windows, config.noise_var_obs, config.latent(), config.omega, y)
    return Dataset(spec, z, np.array(config.theta_true), u_seq, asdict(config))


def simulate_fully_observed(n: int, p: int, theta_true, noise_var: float, seed: int) -> Dataset:
    """Known-regressor instance ``y = X theta + eps`` with ``X`` i.i.d. N(0, 1).

    ``noise_var = 0`` gives exact responses; the returned spec then carries
    unit noise variance so it stays a valid estimation problem.
    """
    theta_true = np.asarray(theta_true, dtype=float)
    if theta_true.shape != (p,):
        raise ValueError("theta_true must have length p")
    if noise_var < 0:
        raise ValueError("noise_var must be >= 0")
    rng = _streams(seed)
    X = rng[STREAM_INPUT].standard_normal((n, p))
    y = X @ theta_true + np.sqrt(noise_var) * rng[STREAM_OBS].standard_normal(n)
    spec = ProblemSpec(X, noise_var if noise_var > 0 else 1.0, None, 0.0, y)
    cfg = {"kind": "fully_observed", "n": n, "p": p, "theta_true": theta_true.tolist(),
           "noise_var": noise_var, "seed": seed}
    return Dataset(spec, None, theta_true, None, cfg)


def dataset_to_dict(ds: Dataset) -> dict:
    if ds.spec.fully_observed:
        return {"config": ds.config, "u": ds.spec.inputs.tolist(), "z": None,
                "y": ds.spec.responses.tolist()}
    return {"config": {"kind": "state_space", **ds.config}, "u": ds.input_sequence.tolist(),
            "z": ds.z_path.tolist(), "y": ds.spec.responses.tolist()}


def dataset_from_dict(doc: dict) -> Dataset:
    cfg = dict(doc["config"])
    kind = cfg.pop("kind", "state_space")
    y = np.asarray(doc["y"], dtype=float)
    if kind == "fully_observed":
        X = np.asarray(doc["u"], dtype=float)
        nv = cfg["noise_var"]
        spec = ProblemSpec(X, nv if nv > 0 else 1.0, None, 0.0, y)
        return Dataset(spec, None, np.asarray(cfg["theta_true"], dtype=float), None, doc["config"])
    config = SimConfig(**{**cfg, "theta_true": tuple(cfg["theta_true"])})
    u_seq = np.asarray(doc["u"], dtype=float)
    spec = ProblemSpec(input_windows(u_seq, config.n, config.p), config.noise_var_obs,
                       config.latent(), config.omega, y)
    return Dataset(spec, np.asarray(doc["z"], dtype=float), np.array(config.theta_true),
                   u_seq, asdict(config))


def save_dataset(ds: Dataset, path) -> None:
    Path(path).write_text(json.dumps(dataset_to_dict(ds), indent=1) + "\n")


def load_dataset(path) -> Dataset:
    return dataset_from_dict(json.loads(Path(path).read_text()))
