"""Toy encoder/decoder pairs for latent-space diffusion.

All codecs share the image and latent dimension.  ``encode`` is linear in
every instance, so the latent data distribution of a Gaussian mixture is
again a Gaussian mixture and the exact denoiser carries over by conjugation.
"""

from __future__ import annotations

import numpy as np
from scipy.stats import ortho_group

from .oracle import ConjugatedDenoiser


class LatentCodec:
    """Base interface.  Arrays are flattened, with optional leading batch axes."""

    name = "codec"
    roundtrip_tol = 0.0

    def __init__(self, dims):
        self.image_dims = tuple(int(s) for s in dims)
        self.latent_dim = int(np.prod(self.image_dims))

    def encode(self, x):
        raise NotImplementedError

    def decode(self, z):
        raise NotImplementedError

    def decode_vjp(self, z, v):
        """``(dD/dz)^T v``; central differences unless a subclass knows better."""
        z = np.asarray(z, dtype=np.float64)
        v = np.asarray(v, dtype=np.float64)
        h = 1e-6
        out = np.zeros_like(z)
        for j in range(z.shape[-1]):
            step = np.zeros(z.shape[-1])
            step[j] = h
            col = (self.decode(z + step) - self.decode(z - step)) / (2 * h)
            out[..., j] = np.sum(col * v, axis=-1)
        return out

    def wrap_denoiser(self, denoiser):
        """Latent-space denoiser given the pixel-space one."""
        return denoiser

    @property
    def is_identity(self) -> bool:
        return False


class IdentityCodec(LatentCodec):
    name = "identity"

    def encode(self, x):
        return np.asarray(x, dtype=np.float64)

    def decode(self, z):
        return np.asarray(z, dtype=np.float64)

    def decode_vjp(self, z, v):
        return np.asarray(v, dtype=np.float64)

    @property
    def is_identity(self) -> bool:
        return True


class OrthogonalCodec(LatentCodec):
    """``encode(x) = Q x``, ``decode(z) = Q^T z`` with a seeded random rotation."""

    name = "orthogonal"
    roundtrip_tol = 1e-10

    def __init__(self, dims, seed: int = 0):
        super().__init__(dims)
        self.seed = int(seed)
        self.q = ortho_group.rvs(self.latent_dim, random_state=self.seed)

    def encode(self, x):
        return np.asarray(x, dtype=np.float64) @ self.q.T

    def decode(self, z):
        return np.asarray(z, dtype=np.float64) @ self.q

    def decode_vjp(self, z, v):
        return np.asarray(v, dtype=np.float64) @ self.q.T

    def wrap_denoiser(self, denoiser):
        return ConjugatedDenoiser(denoiser, self.q)


class SaturatingCodec(OrthogonalCodec):
    """Rotation followed by a soft clip: ``decode(z) = c + g tanh((Q^T z - c) / g)``.

    ``g`` is the gain and ``c`` the centre of the data range.  The decoder
    contracts latent noise, so it has a noise gain below one.
    """

    name = "saturating"

    def __init__(self, dims, gain: float, seed: int = 0, center: float = 0.5):
        if not gain > 0:
            raise ValueError("gain must be positive")
        super().__init__(dims, seed)
        self.gain = float(gain)
        self.center = float(center)

    @property
    def roundtrip_tol(self) -> float:
        # |x - g tanh(x/g)| <= |x|^3 / (3 g^2) for a half-range of 0.5
        return 0.5**3 / (3 * self.gain**2)

    def decode(self, z):
        u = np.asarray(z, dtype=np.float64) @ self.q - self.center
        return self.center + self.gain * np.tanh(u / self.gain)

    def decode_vjp(self, z, v):
        u = np.asarray(z, dtype=np.float64) @ self.q - self.center
        sech2 = 1.0 - np.tanh(u / self.gain) ** 2
        return (sech2 * np.asarray(v, dtype=np.float64)) @ self.q.T


def identity_codec(dims) -> IdentityCodec:
    return IdentityCodec(dims)


def orthogonal_codec(dims, seed: int = 0) -> OrthogonalCodec:
    return OrthogonalCodec(dims, seed)


def saturating_codec(dims, gain: float, seed: int = 0) -> SaturatingCodec:
    return SaturatingCodec(dims, gain, seed)


def make_codec(name: str, dims, gain: float = 4.0, seed: int = 0) -> LatentCodec:
    if name == "identity":
        return IdentityCodec(dims)
    if name == "orthogonal":
        return OrthogonalCodec(dims, seed)
    if name == "saturating":
        return SaturatingCodec(dims, gain, seed)
    raise ValueError(f"unknown codec {name!r}")
