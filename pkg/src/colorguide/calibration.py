"""Measured guidance constants: denoiser error scale and decoder noise response."""

from __future__ import annotations

import io
import math
import warnings
from dataclasses import dataclass

import numpy as np

from .schedule import NoiseSchedule, forward_noise

GUIDANCE_MODES = ("fine_pixel", "fine_latent", "universal")
FINE_VARIANTS = ("boxed", "consistent")


@dataclass(frozen=True)
class CalibrationProfile:
    """``lambda_bar[t]`` for ``t = 0..T`` (entry 0 unused) plus decoder response."""

    lambda_bar: np.ndarray
    a_bar: float = 0.0
    b_bar: float = 1.0
    sample_count: int = 0
    seed: int | None = None

    def __post_init__(self):
        lam = np.asarray(self.lambda_bar, dtype=np.float64)
        if np.any(lam < 0) or not np.all(np.isfinite(lam)):
            raise ValueError("lambda_bar must be finite and non-negative")
        if not self.b_bar > 0:
            raise ValueError("b_bar must be positive")
        lam.setflags(write=False)
        object.__setattr__(self, "lambda_bar", lam)

    @property
    def num_steps(self) -> int:
        return len(self.lambda_bar) - 1

    def with_decoder(self, a_bar: float, b_bar: float) -> "CalibrationProfile":
        return CalibrationProfile(self.lambda_bar, a_bar, b_bar, self.sample_count, self.seed)

    def to_csv(self) -> str:
        buf = io.StringIO()
        buf.write(f"# a_bar={float(self.a_bar)!r}\n")
        buf.write(f"# b_bar={float(self.b_bar)!r}\n")
        buf.write(f"# seed={self.seed}\n")
        buf.write(f"# n={self.sample_count}\n")
        buf.write("t,lambda_bar\n")
        for t in range(1, len(self.lambda_bar)):
            buf.write(f"{t},{float(self.lambda_bar[t])!r}\n")
        return buf.getvalue()

    def save(self, path) -> None:
        with open(path, "w", newline="\n") as fh:
            fh.write(self.to_csv())

    @classmethod
    def from_csv(cls, text: str) -> "CalibrationProfile":
        meta = {}
        rows = []
        for line in text.splitlines():
            line = line.strip()
            if not line:
                continue
            if line.startswith("#"):
                key, _, value = line[1:].strip().partition("=")
                meta[key.strip()] = value.strip()
            elif line.startswith("t,"):
                continue
            else:
                t, lam = line.split(",")
                rows.append((int(t), float(lam)))
        if not rows:
            raise ValueError("calibration file has no rows")
        rows.sort()
        if [t for t, _ in rows] != list(range(1, len(rows) + 1)):
            raise ValueError("calibration rows must cover t = 1..T")
        lam = np.array([0.0] + [v for _, v in rows])
        seed = meta.get("seed")
        return cls(
            lam,
            float(meta.get("a_bar", 0.0)),
            float(meta.get("b_bar", 1.0)),
            int(meta.get("n", 0)),
            None if seed in (None, "None") else int(seed),
        )

    @classmethod
    def load(cls, path) -> "CalibrationProfile":
        with open(path) as fh:
            return cls.from_csv(fh.read())


def estimate_lambda(
    denoiser,
    model,
    schedule: NoiseSchedule,
    n_samples: int,
    seed: int = 0,
    encode=None,
    batch_size: int = 1000,
) -> np.ndarray:
    """RMS noise-prediction error at every timestep, over samples and coordinates.

    ``encode`` maps clean images to the denoiser's space (latent diffusion).
    Returns an array indexed by ``t`` with entry 0 set to zero.
    """
    if n_samples < 100:
        raise ValueError("n_samples must be at least 100")
    lam = np.zeros(schedule.T + 1)
    for t in range(1, schedule.T + 1):
        rng = np.random.default_rng([seed, t])
        sq = 0.0
        count = 0
        for start in range(0, n_samples, batch_size):
            n = min(batch_size, n_samples - start)
            z0 = model.sample(n, rng)
            if encode is not None:
                z0 = encode(z0)
            eps = rng.standard_normal(z0.shape)
            z_t = forward_noise(schedule, z0, t, eps)
            err = denoiser.predict(z_t, t, np.arange(start, start + n)) - eps
            sq += float(np.sum(err * err))
            count += err.size
        lam[t] = math.sqrt(sq / count)
    return lam


def estimate_decoder_response(
    decoder, latent_samples, lambda_grid, n_noise: int = 64, seed: int = 0
) -> tuple[float, float]:
    """Fit ``D(z + lam*eps) ~ N(D(z) + a*lam, (b*lam)^2 I)`` through the origin.

    ``a`` is the mean per-pixel shift (the component along the all-ones
    image), ``b`` the RMS output standard deviation, both per unit ``lam``.
    """
    grid = np.asarray(lambda_grid, dtype=np.float64)
    if grid.ndim != 1 or len(grid) < 3 or np.any(grid <= 0) or len(np.unique(grid)) < 2:
        raise ValueError("lambda_grid needs at least 3 positive, distinct values")
    if n_noise < 2:
        raise ValueError("n_noise must be at least 2")
    latents = np.atleast_2d(np.asarray(latent_samples, dtype=np.float64))
    rng = np.random.default_rng(seed)
    shifts = np.zeros(len(grid))
    spreads = np.zeros(len(grid))
    for i, lam in enumerate(grid):
        shift_acc = 0.0
        var_acc = 0.0
        for z in latents:
            clean = decoder(z)
            noisy = decoder(z + lam * rng.standard_normal((n_noise, z.size)))
            shift_acc += float(np.mean(noisy.mean(axis=0) - clean))
            var_acc += float(np.mean(noisy.var(axis=0, ddof=1)))
        shifts[i] = shift_acc / len(latents)
        spreads[i] = math.sqrt(var_acc / len(latents))
    denom = float(grid @ grid)
    return float(grid @ shifts / denom), float(grid @ spreads / denom)


def guidance_scale_curve(
    profile: CalibrationProfile, schedule: NoiseSchedule, mode: str, variant: str = "boxed"
) -> np.ndarray:
    """Per-timestep coefficient in front of the squared-norm gradient.

    Entry ``t`` for ``t = 0..T``.  Fine curves are ``sqrt(a_t) / (2 b lam_t)``
    (``b = 1`` in pixel space).  ``variant="consistent"`` instead uses
    ``a_t / (2 b^2 lam_t^2 sqrt(1 - a_t))``, the coefficient implied by a
    Gaussian predicted color map with variance ``b^2 lam_t^2 (1 - a_t) / a_t``.
    Fine curves are undefined at ``t = 0`` (NaN) and ``+inf`` wherever
    ``lambda_bar`` vanishes.
    """
    alphas = schedule.alphas
    if mode == "universal":
        return np.sqrt(1.0 - alphas)
    if mode not in GUIDANCE_MODES:
        raise ValueError(f"unknown mode {mode!r}")
    if variant not in FINE_VARIANTS:
        raise ValueError(f"unknown variant {variant!r}")
    if profile is None or profile.num_steps != schedule.T:
        raise ValueError("fine modes need a profile covering every timestep")
    lam = profile.lambda_bar[1:]
    a = alphas[1:]
    b = profile.b_bar if mode == "fine_latent" else 1.0
    out = np.full(schedule.T + 1, np.nan)
    with np.errstate(divide="ignore"):
        if variant == "boxed":
            out[1:] = np.sqrt(a) / (2 * b * lam)
        else:
            out[1:] = a / (2 * b * b * lam * lam * np.sqrt(1.0 - a))
    if np.any(np.isinf(out[1:])):
        bad = [int(t) for t in np.nonzero(np.isinf(out))[0]]
        warnings.warn(f"lambda_bar is zero at t={bad}; scale reported as +inf")
    return out


def matched_universal_scale(profile: CalibrationProfile, schedule: NoiseSchedule) -> float:
    """Universal ``s`` whose mean coefficient over ``t = 1..T`` equals the fine one's."""
    fine = guidance_scale_curve(profile, schedule, "fine_pixel")[1:]
    univ = guidance_scale_curve(profile, schedule, "universal")[1:]
    return float(np.mean(fine) / np.mean(univ))
