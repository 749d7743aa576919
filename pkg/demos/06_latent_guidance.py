"""Guidance through a nonlinear decoder.

Diffusion runs in the latent space of a rotation-plus-soft-clip codec.  The
latent term accounts for the decoder's mean shift and noise gain.
"""

# %%
import numpy as np

from colorguide.calibration import CalibrationProfile, estimate_decoder_response, estimate_lambda
from colorguide.colormap import ColorMapOperator
from colorguide.guidance import sample_batch
from colorguide.latentspace import saturating_codec
from colorguide.mixtures import demo_mixture
from colorguide.oracle import exact_denoiser
from colorguide.schedule import make_linear_schedule

sched = make_linear_schedule()
model = demo_mixture()
codec = saturating_codec((16, 16, 3), gain=1.0, seed=0)
den = codec.wrap_denoiser(exact_denoiser(model, sched))

lam = estimate_lambda(den, model, sched, 300, seed=0, encode=codec.encode)
latents = codec.encode(model.sample(8, np.random.default_rng(1)))
a_bar, b_bar = estimate_decoder_response(codec.decode, latents, [0.05, 0.1, 0.2, 0.3])
profile = CalibrationProfile(lam, a_bar, b_bar)
print(f"decoder response: a_bar={a_bar:.4f} b_bar={b_bar:.3f}")

# %%
op = ColorMapOperator(16, 16, 4, 3)
targets = op.apply_flat(model.sample(30, np.random.default_rng(2)))
for mode in ("none", "fine_latent", "universal"):
    r = sample_batch(den, sched, codec, mode, np.arange(30), targets, op, profile=profile, model=model)
    print(f"{mode:12s} color MSE {r.color_mse.mean():.4f}")
