"""Calibrating the guidance: prediction error per timestep and decoder response."""

# %%
import numpy as np

from colorguide.calibration import (
    CalibrationProfile,
    estimate_decoder_response,
    estimate_lambda,
    guidance_scale_curve,
)
from colorguide.latentspace import saturating_codec
from colorguide.mixtures import demo_mixture
from colorguide.oracle import exact_denoiser, perturbed_denoiser
from colorguide.schedule import make_linear_schedule

sched = make_linear_schedule()
model = demo_mixture()
den = exact_denoiser(model, sched)

lam = estimate_lambda(den, model, sched, 500, seed=0)
print("lambda_bar at t = 1, 10, 25, 50:", np.round(lam[[1, 10, 25, 50]], 3))

# %% A deliberately imperfect network adds its error in quadrature
noisy = perturbed_denoiser(den, np.full(51, 0.2), seed=1)
lam_noisy = estimate_lambda(noisy, model, sched, 500, seed=0)
print("recovered injected error:", np.round(np.sqrt(lam_noisy[1:] ** 2 - lam[1:] ** 2)[[0, 24, 49]], 3))

# %% The decoder of a latent model attenuates latent noise
codec = saturating_codec((16, 16, 3), gain=0.7, seed=0)
latents = codec.encode(model.sample(8, np.random.default_rng(2)))
a_bar, b_bar = estimate_decoder_response(codec.decode, latents, [0.05, 0.1, 0.2, 0.3])
print(f"saturating decoder: a_bar={a_bar:.4f} b_bar={b_bar:.3f}")

# %% Guidance scale per step: the fine curve stays large at the last steps
profile = CalibrationProfile(lam)
fine = guidance_scale_curve(profile, sched, "fine_pixel")
univ = guidance_scale_curve(profile, sched, "universal")
for t in (1, 5, 25, 50):
    print(f"t={t:2d}  fine {fine[t]:.3f}  universal {univ[t]:.3f}")
