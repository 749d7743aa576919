"""Extreme low-rate compression: a semantic vector plus a color map.

The decoder regenerates the image with the semantically conditioned model
and pulls its colors toward the transmitted map.
"""

# %%
from pathlib import Path

import numpy as np

from colorguide.calibration import CalibrationProfile, estimate_lambda
from colorguide.codec import (
    CodecConfig,
    ConditionalDenoiser,
    RandomProjectionEmbedder,
    decode,
    encode,
    evaluate,
    read_stream,
    rows_to_csv,
    write_stream,
)
from colorguide.imageio import save_image
from colorguide.latentspace import identity_codec
from colorguide.mixtures import demo_mixture
from colorguide.oracle import exact_denoiser
from colorguide.schedule import make_linear_schedule

out = Path(__file__).with_name("out")
out.mkdir(exist_ok=True)

sched = make_linear_schedule()
model = demo_mixture()
embedder = RandomProjectionEmbedder(model.dim, 768, seed=0)
clamp = embedder.clamp_scale(model.sample(2000, np.random.default_rng(0)))
profile = CalibrationProfile(estimate_lambda(exact_denoiser(model, sched), model, sched, 300, seed=0))

image = model.sample(1, np.random.default_rng(4))[0].reshape(16, 16, 3)

# %% Encode: 768 one-bit semantic codes and a 16x16 5-bit YUV 4:2:0 color map
stream = write_stream(encode(image, CodecConfig(16, 5, 1), embedder, clamp))
print(f"{len(stream)} bytes, payload {read_stream(stream).payload_bits} bits")

# %% Decode with the conditioned model and fine color guidance
cond = ConditionalDenoiser(model, sched, embedder)
small = write_stream(encode(image, CodecConfig(4, 5, 1), embedder, clamp))
decoded, metrics = decode(small, cond, sched, identity_codec((16, 16, 3)), profile, seed=0)
print(metrics)
save_image(out / "codec_input.png", image)
save_image(out / "codec_output.png", decoded)
print(rows_to_csv(evaluate([image], [decoded], model, embedder, 4, rate=(metrics["rate_bits"], 5, 1), mode="fine_pixel")))
