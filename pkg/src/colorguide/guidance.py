"""Color-control strategies and the guided DDIM sampler.

Guidance terms are added to the noise prediction before the DDIM step.  All
term functions take a batch ``z_t`` of shape ``(n, d)`` (or a single
``(d,)`` vector) and color targets given as flattened DCT blocks of shape
``(n, map_dim)`` or ``(map_dim,)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .calibration import CalibrationProfile, guidance_scale_curve, matched_universal_scale
from .colormap import ColorMap, ColorMapOperator
from .latentspace import IdentityCodec, LatentCodec
from .schedule import NoiseSchedule, ddim_step, predict_z0

MODES = ("none", "enforced", "initialized", "universal", "fine_pixel", "fine_latent")
DEFAULT_INIT_FRACTION = 0.55


def _target_vector(c):
    if isinstance(c, ColorMap):
        return c.coeffs.ravel()
    return np.asarray(c, dtype=np.float64)


def operator_for(c: ColorMap) -> ColorMapOperator:
    h, w = c.image_shape
    return ColorMapOperator(h, w, c.m, c.channels)


class _Prediction:
    """Noise prediction at ``(z_t, t)`` and the pullback through ``z0_hat``."""

    def __init__(self, z_t, t, denoiser, schedule, eps=None, ids=None, frozen=False):
        self.z_t = np.asarray(z_t, dtype=np.float64)
        self.t = t
        self.alpha = schedule.alpha(t)
        self.denoiser = denoiser
        self.frozen = frozen
        self.eps = denoiser.predict(self.z_t, t, ids) if eps is None else eps
        self.z0_hat = predict_z0(schedule, self.z_t, t, self.eps)

    def z0_vjp(self, r):
        """``(d z0_hat / d z_t)^T r``; the noise Jacobian is symmetric."""
        if self.frozen:
            return r / math.sqrt(self.alpha)
        jr = self.denoiser.jvp(self.z_t, self.t, r)
        return (r - math.sqrt(1.0 - self.alpha) * jr) / math.sqrt(self.alpha)


def _norm_gradient(pred, c, op, codec, offset=None):
    """``grad_{z_t} ||c - A D(z0_hat) - offset||^2`` and the residual."""
    x0 = codec.decode(pred.z0_hat)
    resid = c - op.apply_flat(x0)
    if offset is not None:
        resid = resid - offset
    back = op.lift_flat(resid)
    if not codec.is_identity:
        back = codec.decode_vjp(pred.z0_hat, back)
    return -2.0 * pred.z0_vjp(back), resid


def _lambda_at(profile, t):
    if profile is None:
        raise ValueError("fine guidance needs a calibration profile")
    lam = float(profile.lambda_bar[t])
    if lam == 0:
        raise ValueError(f"lambda_bar is zero at t={t}")
    return lam


def fine_pixel_coefficient(profile, schedule, t):
    return math.sqrt(schedule.alpha(t)) / (2 * _lambda_at(profile, t))


def fine_latent_coefficient(profile, schedule, t):
    if profile is None or profile.b_bar == 0:
        raise ValueError("latent guidance needs a profile with b_bar > 0")
    return math.sqrt(schedule.alpha(t)) / (2 * profile.b_bar * _lambda_at(profile, t))


def latent_mean_shift(profile, schedule, t, op):
    """Decoder-induced color-map offset ``a * lam_t * sqrt(1-a_t)/sqrt(a_t) * A 1``."""
    a = schedule.alpha(t)
    lam = _lambda_at(profile, t)
    return profile.a_bar * lam * math.sqrt(1.0 - a) / math.sqrt(a) * op.ones_response()


def guidance_term_fine_pixel(
    z_t, t, c, denoiser, op, profile, schedule, *, eps=None, ids=None, frozen=False
):
    """Calibrated pixel-space correction ``sqrt(a_t)/(2 lam_t) * grad ||c - A z0_hat||^2``."""
    pred = _Prediction(z_t, t, denoiser, schedule, eps, ids, frozen)
    grad, _ = _norm_gradient(pred, _target_vector(c), op, _IDENTITY)
    return fine_pixel_coefficient(profile, schedule, t) * grad


def guidance_term_fine_latent(
    z_t, t, c, denoiser, op, codec, profile, schedule, *, eps=None, ids=None, frozen=False
):
    """Latent-space correction, accounting for the decoder's mean shift and gain."""
    pred = _Prediction(z_t, t, denoiser, schedule, eps, ids, frozen)
    coef = fine_latent_coefficient(profile, schedule, t)
    offset = None
    if profile.a_bar != 0:
        offset = latent_mean_shift(profile, schedule, t, op)
    grad, _ = _norm_gradient(pred, _target_vector(c), op, codec, offset)
    return coef * grad


def guidance_term_universal(
    z_t, t, c, denoiser, op, codec, s, schedule, *, eps=None, ids=None, frozen=False
):
    """``s * sqrt(1 - a_t) * grad ||c - c_hat_t||^2``."""
    pred = _Prediction(z_t, t, denoiser, schedule, eps, ids, frozen)
    grad, _ = _norm_gradient(pred, _target_vector(c), op, codec)
    return s * math.sqrt(1.0 - schedule.alpha(t)) * grad


def apply_enforced(z0_hat, c, op: ColorMapOperator):
    """Replace the low-frequency band of ``z0_hat`` by the target's."""
    z0_hat = np.asarray(z0_hat, dtype=np.float64)
    c = _target_vector(c)
    return op.lift_flat(c) + (z0_hat - op.project_flat(z0_hat))


def init_from_color(c, op, codec, schedule, tau: int, seed=None, eps=None):
    """``z_tau = sqrt(a_tau) E(lift(c)) + sqrt(1 - a_tau) eps``; returns ``(z_tau, tau)``."""
    if int(tau) != tau or not 1 <= tau <= schedule.T:
        raise ValueError(f"tau={tau} outside [1, {schedule.T}]")
    tau = int(tau)
    start = codec.encode(op.lift_flat(_target_vector(c)))
    if eps is None:
        eps = np.random.default_rng(seed).standard_normal(start.shape)
    a = schedule.alpha(tau)
    return math.sqrt(a) * start + math.sqrt(1.0 - a) * eps, tau


def init_step(schedule: NoiseSchedule, fraction: float) -> int:
    if not 0 < fraction <= 1:
        raise ValueError("init_fraction must lie in (0, 1]")
    return max(1, int(round(fraction * schedule.T)))


@dataclass
class GuidanceConfig:
    mode: str
    color_target: ColorMap | None = None
    scale: float = 1.0
    init_fraction: float = DEFAULT_INIT_FRACTION
    profile: CalibrationProfile | None = None
    universal_scale: float | None = None
    frozen_denoiser: bool = False
    fine_variant: str = "boxed"

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"unknown mode {self.mode!r}; expected one of {MODES}")
        if self.mode != "none" and self.color_target is None:
            raise ValueError(f"mode {self.mode!r} needs a color target")
        if self.mode in ("fine_pixel", "fine_latent") and self.profile is None:
            raise ValueError(f"mode {self.mode!r} needs a calibration profile")
        if self.mode == "universal" and self.universal_scale is None and self.profile is None:
            raise ValueError("universal mode needs universal_scale or a profile to match")
        if self.mode == "initialized" and not 0 < self.init_fraction <= 1:
            raise ValueError("init_fraction must lie in (0, 1]")
        if self.scale < 0:
            raise ValueError("scale must be non-negative")

    def resolved_universal_scale(self, schedule) -> float:
        if self.universal_scale is not None:
            return float(self.universal_scale)
        return self.scale * matched_universal_scale(self.profile, schedule)


@dataclass
class GuidedSampleResult:
    image: np.ndarray
    color_mse: float
    realism_loglik: float
    per_step_guidance_norm: np.ndarray
    latent_trajectory: list | None = None


@dataclass
class BatchResult:
    """Outputs of :func:`sample_batch`; row ``i`` belongs to ``seeds[i]``."""

    seeds: np.ndarray
    images: np.ndarray
    latents: np.ndarray
    color_mse: np.ndarray
    realism_loglik: np.ndarray
    per_step_guidance_norm: np.ndarray
    per_step_scale: np.ndarray
    start_step: int
    trajectory: list = field(default_factory=list)

    def result(self, i: int) -> GuidedSampleResult:
        traj = [(t, z[i]) for t, z in self.trajectory] or None
        return GuidedSampleResult(
            self.images[i],
            float(self.color_mse[i]),
            float(self.realism_loglik[i]),
            self.per_step_guidance_norm[i],
            traj,
        )


def color_mse(op: ColorMapOperator, images, targets) -> np.ndarray:
    """Mean squared error between ``A x`` and the target, per image."""
    diff = op.apply_flat(images) - targets
    return np.mean(diff * diff, axis=-1)


def sample_batch(
    denoiser,
    schedule: NoiseSchedule,
    codec: LatentCodec,
    mode: str,
    seeds,
    targets=None,
    op: ColorMapOperator | None = None,
    *,
    profile: CalibrationProfile | None = None,
    scale: float = 1.0,
    universal_scale: float | None = None,
    init_fraction: float = DEFAULT_INIT_FRACTION,
    frozen_denoiser: bool = False,
    fine_variant: str = "boxed",
    model=None,
    keep_trajectory: bool = False,
) -> BatchResult:
    """Run the reverse process for several seeds at once.

    ``denoiser`` predicts noise in the codec's latent space.  ``targets`` is
    ``(n, map_dim)`` or one shared ``(map_dim,)`` target.  Each row depends
    only on its own seed and target.
    """
    if mode not in MODES:
        raise ValueError(f"unknown mode {mode!r}")
    if mode == "enforced" and not codec.is_identity:
        raise ValueError("enforced conditioning needs pixel-space diffusion (identity codec)")
    if mode == "fine_pixel" and not codec.is_identity:
        raise ValueError("fine_pixel needs the identity codec; use fine_latent")
    seeds = np.atleast_1d(np.asarray(seeds, dtype=np.int64))
    n = len(seeds)
    d = codec.latent_dim
    if mode != "none":
        if targets is None or op is None:
            raise ValueError(f"mode {mode!r} needs targets and an operator")
        targets = np.broadcast_to(np.asarray(targets, dtype=np.float64), (n, op.map_dim))
    if mode in ("fine_pixel", "fine_latent") and profile is None:
        raise ValueError(f"mode {mode!r} needs a calibration profile")

    rngs = [np.random.default_rng(int(s)) for s in seeds]
    z = np.stack([r.standard_normal(d) for r in rngs])
    start = schedule.T
    if mode == "initialized":
        start = init_step(schedule, init_fraction)
        z, start = init_from_color(targets, op, codec, schedule, start, eps=z)

    coefs = np.zeros(schedule.T + 1)
    if mode in ("fine_pixel", "fine_latent"):
        coefs[1:] = scale * guidance_scale_curve(profile, schedule, mode, fine_variant)[1:]
    elif mode == "universal":
        if universal_scale is None:
            if profile is None:
                raise ValueError("universal mode needs universal_scale or a profile")
            universal_scale = scale * matched_universal_scale(profile, schedule)
        coefs[:] = universal_scale * guidance_scale_curve(profile, schedule, "universal")
        coefs[0] = 0.0

    norms = np.zeros((n, schedule.T + 1))
    trajectory = [(start, z.copy())] if keep_trajectory else []
    for t in range(start, 0, -1):
        pred = _Prediction(z, t, denoiser, schedule, ids=seeds, frozen=frozen_denoiser)
        if mode == "enforced":
            z0 = apply_enforced(pred.z0_hat, targets, op)
            z = ddim_step(schedule, z, t, pred.eps, z0_hat=z0)
        elif mode in ("universal", "fine_pixel", "fine_latent"):
            offset = None
            if mode == "fine_latent" and profile.a_bar != 0:
                offset = latent_mean_shift(profile, schedule, t, op)
            grad, _ = _norm_gradient(pred, targets, op, codec, offset)
            g = coefs[t] * grad
            norms[:, t] = np.linalg.norm(g, axis=-1)
            z = ddim_step(schedule, z, t, pred.eps + g)
        else:
            z = ddim_step(schedule, z, t, pred.eps)
        if keep_trajectory:
            trajectory.append((t - 1, z.copy()))

    images = codec.decode(z)
    mse = color_mse(op, images, targets) if targets is not None else np.full(n, np.nan)
    loglik = model.log_density(images) if model is not None else np.full(n, np.nan)
    return BatchResult(seeds, images, z, mse, loglik, norms, coefs, start, trajectory)


def sample(
    denoiser,
    schedule: NoiseSchedule,
    codec: LatentCodec,
    config: GuidanceConfig,
    seed: int,
    *,
    model=None,
    keep_trajectory: bool = False,
) -> GuidedSampleResult:
    """Draw one guided sample; a pure function of its arguments."""
    op = operator_for(config.color_target) if config.color_target is not None else None
    universal_scale = None
    if config.mode == "universal":
        universal_scale = config.resolved_universal_scale(schedule)
    batch = sample_batch(
        denoiser,
        schedule,
        codec,
        config.mode,
        [seed],
        None if config.color_target is None else config.color_target.coeffs.ravel(),
        op,
        profile=config.profile,
        scale=config.scale,
        universal_scale=universal_scale,
        init_fraction=config.init_fraction,
        frozen_denoiser=config.frozen_denoiser,
        fine_variant=config.fine_variant,
        model=model,
        keep_trajectory=keep_trajectory,
    )
    return batch.result(0)


_IDENTITY = IdentityCodec((1,))
