"""The Gaussian-mixture oracle: exact noise prediction and exact color posterior."""

# %%
import numpy as np

from colorguide.colormap import ColorMapOperator
from colorguide.mixtures import demo_mixture
from colorguide.oracle import exact_color_posterior, exact_denoiser
from colorguide.schedule import forward_noise, make_linear_schedule, predict_z0

sched = make_linear_schedule()
model = demo_mixture()
den = exact_denoiser(model, sched)
rng = np.random.default_rng(1)

# %% Denoising a noisy sample: the predicted z0 is the posterior mean
x = model.sample(1, rng)[0]
for t in (5, 20, 40):
    z_t = forward_noise(sched, x, t, rng.standard_normal(x.size))
    z0_hat = predict_z0(sched, z_t, t, den.predict(z_t, t))
    print(f"t={t}: |z0_hat - x| = {np.linalg.norm(z0_hat - x):.3f}, loglik of z0_hat {model.log_density(z0_hat):.1f}")

# %% Conditioning on a color map selects the matching components
op = ColorMapOperator(16, 16, 2, 3)
c = op.apply(x.reshape(16, 16, 3))
post = exact_color_posterior(model, op, c, obs_noise=0.05)
print("prior weights    ", np.round(model.weights, 3))
print("posterior weights", np.round(post.weights, 3))
print("responsibilities of x", np.round(model.responsibilities(x), 3))
