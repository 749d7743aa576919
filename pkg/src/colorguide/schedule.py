"""Noise schedule, forward noising and the deterministic DDIM step."""

from __future__ import annotations

import io
from dataclasses import dataclass

import numpy as np

COSINE_OFFSET = 0.008
DEFAULT_STEPS = 50


@dataclass(frozen=True)
class NoiseSchedule:
    """Cumulative signal scalings ``alphas[t]`` for ``t = 0..num_steps``.

    ``alphas[0]`` is 1 (clean signal) and the sequence decreases strictly.
    """

    num_steps: int
    alphas: np.ndarray

    def __post_init__(self):
        alphas = np.asarray(self.alphas, dtype=np.float64)
        if alphas.shape != (self.num_steps + 1,):
            raise ValueError(
                f"expected {self.num_steps + 1} alphas, got shape {alphas.shape}"
            )
        if abs(alphas[0] - 1.0) > 1e-12:
            raise ValueError("alphas[0] must be 1")
        if np.any(np.diff(alphas) >= 0):
            raise ValueError("alphas must be strictly decreasing")
        if alphas[-1] <= 0:
            raise ValueError("alphas must stay positive")
        alphas.setflags(write=False)
        object.__setattr__(self, "alphas", alphas)

    @property
    def T(self) -> int:
        return self.num_steps

    def alpha(self, t: int) -> float:
        self._check_t(t)
        return float(self.alphas[t])

    def _check_t(self, t):
        if not 0 <= t <= self.num_steps:
            raise ValueError(f"timestep {t} outside [0, {self.num_steps}]")

    def to_table(self) -> str:
        """Plain-text ``t,alpha`` table, one row per timestep."""
        buf = io.StringIO()
        buf.write("t,alpha\n")
        for t, a in enumerate(self.alphas):
            buf.write(f"{t},{a:.17g}\n")
        return buf.getvalue()


def make_linear_schedule(T: int = DEFAULT_STEPS, alpha_min: float = 1e-4) -> NoiseSchedule:
    """Cosine-shaped schedule rescaled so that ``alphas[T] == alpha_min``.

    The curve is ``f(t) = cos^2(((t/T + s)/(1 + s)) * pi/2)`` with ``s = 0.008``,
    mapped affinely onto ``[alpha_min, 1]``.  The name is historical: the grid
    of timesteps is linear, the curve is not.
    """
    if int(T) != T or T < 2:
        raise ValueError(f"T must be an integer >= 2, got {T}")
    if not 0.0 < alpha_min < 1.0:
        raise ValueError(f"alpha_min must lie in (0, 1), got {alpha_min}")
    T = int(T)
    s = COSINE_OFFSET
    t = np.arange(T + 1, dtype=np.float64)
    f = np.cos((t / T + s) / (1 + s) * np.pi / 2) ** 2
    f = (f - f[-1]) / (f[0] - f[-1])
    alphas = alpha_min + (1.0 - alpha_min) * f
    alphas[0] = 1.0
    alphas[-1] = alpha_min
    return NoiseSchedule(T, alphas)


def _same_shape(a, b, what):
    if np.shape(a) != np.shape(b):
        raise ValueError(f"{what}: shape mismatch {np.shape(a)} vs {np.shape(b)}")


def forward_noise(schedule: NoiseSchedule, z0, t: int, eps):
    """``sqrt(alpha_t) * z0 + sqrt(1 - alpha_t) * eps``."""
    _same_shape(z0, eps, "forward_noise")
    a = schedule.alpha(t)
    return np.sqrt(a) * np.asarray(z0) + np.sqrt(1.0 - a) * np.asarray(eps)


def predict_z0(schedule: NoiseSchedule, z_t, t: int, eps_hat):
    """Clean-signal estimate implied by a noise prediction."""
    if t < 1:
        raise ValueError("predict_z0 needs t >= 1")
    _same_shape(z_t, eps_hat, "predict_z0")
    a = schedule.alpha(t)
    return (np.asarray(z_t) - np.sqrt(1.0 - a) * np.asarray(eps_hat)) / np.sqrt(a)


def ddim_step(schedule: NoiseSchedule, z_t, t: int, eps_hat, z0_hat=None):
    """Deterministic (eta = 0) DDIM update from ``t`` to ``t - 1``.

    ``z0_hat`` overrides the predicted clean signal; used by samplers that edit
    the prediction before re-noising.
    """
    if t < 1:
        raise ValueError("ddim_step needs t >= 1")
    if z0_hat is None:
        z0_hat = predict_z0(schedule, z_t, t, eps_hat)
    a_prev = schedule.alpha(t - 1)
    return np.sqrt(a_prev) * z0_hat + np.sqrt(1.0 - a_prev) * np.asarray(eps_hat)
