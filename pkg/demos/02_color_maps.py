"""Color maps: the low-frequency DCT block of an image and its wire form."""

# %%
from pathlib import Path

import numpy as np

from colorguide.colormap import ColorMapOperator, from_wire, rate_bits, to_wire
from colorguide.imageio import save_image
from colorguide.mixtures import demo_mixture

out = Path(__file__).with_name("out")
out.mkdir(exist_ok=True)

model = demo_mixture()
image = model.sample(1, np.random.default_rng(3))[0].reshape(16, 16, 3)

# %% Apply the operator and lift back: the lifted image keeps only the colors
for m in (2, 4, 8):
    op = ColorMapOperator(16, 16, m, 3)
    cmap = op.apply(image)
    lifted = op.lift(cmap)
    kept = np.sum(cmap.coeffs**2) / np.sum(image**2)
    print(f"m={m}: energy kept {kept:.3f}, residual {np.linalg.norm(image - lifted):.3f}")
    save_image(out / f"lifted_m{m}.png", lifted)
save_image(out / "source.png", image)

# %% Quantized YUV 4:2:0 wire form and its exact bit cost
op = ColorMapOperator(16, 16, 16, 3)
q = to_wire(op.apply(image), 5)
print("m=16, 5 bits:", rate_bits(q), "bits")
back = from_wire(q)
print("thumbnail error after the wire:", np.abs(back.thumbnail() - op.apply(image).thumbnail()).max())
