"""Ready-made mixtures and their declarative config files."""

from __future__ import annotations

import numpy as np
from scipy import fft

from .oracle import MixtureModel

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

DEMO_SHAPE = (16, 16, 3)


def _frequency_radius(h, w, c):
    u = np.arange(h)[:, None, None]
    v = np.arange(w)[None, :, None]
    return np.broadcast_to(np.sqrt(u * u + v * v), (h, w, c))


def dct_variance_profile(image_shape, low_std, high_std, cutoff, law="power", exponent=1.0):
    """Per-coefficient variances falling from ``low_std^2`` to ``high_std^2``.

    ``law="power"`` gives ``low_std^2 / (1 + (f/cutoff)^2)^exponent``; the
    default exponent is the natural-image ``1/f`` amplitude spectrum.
    ``law="gauss"`` is a Gaussian roll-off.
    """
    f = _frequency_radius(*image_shape)
    lo, hi = low_std**2, high_std**2
    if law == "power":
        shape = (1.0 + (f / cutoff) ** 2) ** -exponent
    elif law == "gauss":
        shape = np.exp(-((f / cutoff) ** 2))
    else:
        raise ValueError(f"unknown law {law!r}")
    return (hi + (lo - hi) * shape).ravel()


def demo_mixture(
    image_shape=DEMO_SHAPE,
    n_components: int = 6,
    seed: int = 0,
    low_std: float = 0.8,
    high_std: float = 0.04,
    cutoff: float = 0.7,
    texture: float = 0.25,
    law: str = "power",
    exponent: float = 1.0,
) -> MixtureModel:
    """Mixture of smooth color layouts with component-specific fine texture.

    Each mean is a base color plus a low-pass random pattern (the dominant
    color regions) and a high-frequency texture.  Covariances are diagonal in
    the DCT basis: large at low frequencies, so color maps vary within a
    component, and small at high frequencies, so blurred images are unlikely.
    """
    h, w, c = image_shape
    rng = np.random.default_rng(seed)
    f = _frequency_radius(h, w, c)
    means = []
    for _ in range(n_components):
        base = rng.uniform(0.25, 0.75, size=c)
        low = rng.standard_normal((h, w, c)) * np.exp(-((f / 1.5) ** 2))
        low[0, 0, :] = 0.0
        layout = fft.idctn(low, type=2, norm="ortho", axes=(0, 1))
        layout *= 0.2 / max(np.abs(layout).max(), 1e-12)
        high = rng.standard_normal((h, w, c)) * (f > 4)
        tex = fft.idctn(high, type=2, norm="ortho", axes=(0, 1))
        tex *= texture / max(np.sqrt(np.mean(tex * tex)), 1e-12)
        means.append((base + layout + tex).ravel())
    variances = dct_variance_profile(image_shape, low_std, high_std, cutoff, law, exponent)
    weights = np.full(n_components, 1.0 / n_components)
    return MixtureModel(weights, np.array(means), np.tile(variances, (n_components, 1)), image_shape, "dct")


def single_gaussian(image_shape, mean=0.5, std=0.3, basis="dct", variances=None) -> MixtureModel:
    d = int(np.prod(image_shape))
    means = np.broadcast_to(np.asarray(mean, dtype=np.float64), (d,))[None, :]
    var = std**2 if variances is None else np.asarray(variances)[None, :]
    return MixtureModel([1.0], means, var, image_shape, basis)


# -- config files ------------------------------------------------------------


def _fmt_array(values):
    return "[" + ", ".join(repr(float(v)) for v in np.ravel(values)) + "]"


def mixture_to_toml(model: MixtureModel) -> str:
    """Inline-array form that :func:`mixture_from_config` reads back exactly."""
    lines = [
        "[model]",
        "kind = \"inline\"",
        f"image_shape = {list(model.image_shape)}",
        f"basis = \"{model.basis}\"",
        "",
    ]
    for w, m, v in zip(model.weights, model.means, model.variances):
        lines.append("[[component]]")
        lines.append(f"weight = {float(w)!r}")
        lines.append(f"mean = {_fmt_array(m)}")
        if np.all(v == v[0]):
            lines.append(f"variance = {float(v[0])!r}")
        else:
            lines.append(f"variance = {_fmt_array(v)}")
        lines.append("")
    return "\n".join(lines)


def mixture_from_config(cfg: dict) -> MixtureModel:
    """Build a model from a parsed config.

    ``kind = "demo"`` regenerates :func:`demo_mixture` from its parameters;
    ``kind = "inline"`` reads ``[[component]]`` tables with explicit arrays.
    """
    model_cfg = dict(cfg.get("model", {}))
    kind = model_cfg.pop("kind", "demo")
    if kind == "demo":
        if "image_shape" in model_cfg:
            model_cfg["image_shape"] = tuple(model_cfg["image_shape"])
        return demo_mixture(**model_cfg)
    if kind == "inline":
        shape = tuple(model_cfg["image_shape"])
        comps = cfg.get("component", [])
        if not comps:
            raise ValueError("inline model needs [[component]] tables")
        weights = np.array([float(c["weight"]) for c in comps])
        means = np.array([np.asarray(c["mean"], dtype=np.float64) for c in comps])
        d = int(np.prod(shape))
        var = np.array(
            [np.broadcast_to(np.asarray(c["variance"], dtype=np.float64), (d,)) for c in comps]
        )
        return MixtureModel(weights, means, var, shape, model_cfg.get("basis", "pixel"))
    raise ValueError(f"unknown model kind {kind!r}")


def load_mixture(path) -> MixtureModel:
    with open(path, "rb") as fh:
        return mixture_from_config(tomllib.load(fh))
