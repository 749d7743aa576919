"""Low-frequency DCT color maps and their quantized YUV 4:2:0 wire form.

A color map keeps the ``m x m`` lowest 2-D DCT-II frequencies of every
channel.  With the orthonormal DCT the map ``apply`` is a partial isometry,
so its adjoint ``lift`` (zero-pad then inverse DCT) is also its
pseudo-inverse and returns the minimum-energy image with a given color map.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import fft

from .bitstream import BitReader, BitWriter, CorruptStreamError

LUMA_RANGE = (0.0, 1.0)
CHROMA_RANGE = (-0.5, 0.5)

# BT.601 full range
_RGB2YUV = np.array(
    [
        [0.299, 0.587, 0.114],
        [-0.168736, -0.331264, 0.5],
        [0.5, -0.418688, -0.081312],
    ]
)
_YUV2RGB = np.linalg.inv(_RGB2YUV)


@dataclass(frozen=True)
class ColorMap:
    """DCT-domain color map: ``coeffs`` has shape ``(m, m, channels)``.

    ``image_shape`` is the ``(height, width)`` of the images it describes;
    it fixes the scaling between coefficients and the spatial thumbnail.
    """

    coeffs: np.ndarray
    image_shape: tuple[int, int]

    def __post_init__(self):
        coeffs = np.asarray(self.coeffs, dtype=np.float64)
        if coeffs.ndim != 3 or coeffs.shape[0] != coeffs.shape[1]:
            raise ValueError(f"color map must be (m, m, C), got {coeffs.shape}")
        if not np.all(np.isfinite(coeffs)):
            raise ValueError("color map contains non-finite values")
        object.__setattr__(self, "coeffs", coeffs)
        object.__setattr__(self, "image_shape", tuple(int(s) for s in self.image_shape))

    @property
    def m(self) -> int:
        return self.coeffs.shape[0]

    @property
    def channels(self) -> int:
        return self.coeffs.shape[2]

    def thumbnail(self) -> np.ndarray:
        """``m x m`` spatial image in pixel units (a constant image maps to itself)."""
        h, w = self.image_shape
        return fft.idctn(self.coeffs, type=2, norm="ortho", axes=(0, 1)) * (
            self.m / math.sqrt(h * w)
        )

    @classmethod
    def from_thumbnail(cls, thumb, image_shape) -> "ColorMap":
        thumb = np.asarray(thumb, dtype=np.float64)
        if thumb.ndim == 2:
            thumb = thumb[..., None]
        h, w = image_shape
        m = thumb.shape[0]
        coeffs = fft.dctn(thumb, type=2, norm="ortho", axes=(0, 1)) * (math.sqrt(h * w) / m)
        return cls(coeffs, (h, w))


class ColorMapOperator:
    """The truncation operator ``A`` for images of shape ``(H, W, C)``.

    Images may carry leading batch axes.  The ``*_flat`` variants work on
    row-major flattened vectors of length ``H * W * C``.
    """

    def __init__(self, height: int, width: int, m: int, channels: int = 3):
        if channels not in (1, 3):
            raise ValueError("channels must be 1 or 3")
        if not 1 <= m <= min(height, width):
            raise ValueError(f"m={m} must lie in [1, min(H, W)={min(height, width)}]")
        self.height = int(height)
        self.width = int(width)
        self.m = int(m)
        self.channels = int(channels)

    def __repr__(self):
        return (
            f"ColorMapOperator(height={self.height}, width={self.width}, "
            f"m={self.m}, channels={self.channels})"
        )

    @property
    def image_shape(self) -> tuple[int, int, int]:
        return (self.height, self.width, self.channels)

    @property
    def dim(self) -> int:
        return self.height * self.width * self.channels

    @property
    def map_dim(self) -> int:
        return self.m * self.m * self.channels

    def _check_image(self, image):
        if image.shape[-3:] != self.image_shape:
            raise ValueError(f"image shape {image.shape} does not end with {self.image_shape}")

    def apply_array(self, image) -> np.ndarray:
        image = np.asarray(image, dtype=np.float64)
        self._check_image(image)
        full = fft.dctn(image, type=2, norm="ortho", axes=(-3, -2))
        return full[..., : self.m, : self.m, :]

    def lift_array(self, coeffs) -> np.ndarray:
        coeffs = np.asarray(coeffs, dtype=np.float64)
        if coeffs.shape[-3:] != (self.m, self.m, self.channels):
            raise ValueError(
                f"color map shape {coeffs.shape} does not match m={self.m}, C={self.channels}"
            )
        padded = np.zeros(coeffs.shape[:-3] + self.image_shape)
        padded[..., : self.m, : self.m, :] = coeffs
        return fft.idctn(padded, type=2, norm="ortho", axes=(-3, -2))

    def apply(self, image) -> ColorMap:
        image = np.asarray(image, dtype=np.float64)
        if image.ndim != 3:
            raise ValueError("apply takes a single (H, W, C) image; use apply_array for batches")
        return ColorMap(self.apply_array(image), (self.height, self.width))

    def lift(self, c: ColorMap) -> np.ndarray:
        if c.m != self.m or c.channels != self.channels:
            raise ValueError(f"color map resolution {c.m} does not match operator m={self.m}")
        return self.lift_array(c.coeffs)

    def apply_flat(self, z) -> np.ndarray:
        z = np.asarray(z, dtype=np.float64)
        img = z.reshape(z.shape[:-1] + self.image_shape)
        return self.apply_array(img).reshape(z.shape[:-1] + (self.map_dim,))

    def lift_flat(self, c) -> np.ndarray:
        c = np.asarray(c, dtype=np.float64)
        blk = c.reshape(c.shape[:-1] + (self.m, self.m, self.channels))
        return self.lift_array(blk).reshape(c.shape[:-1] + (self.dim,))

    def project_flat(self, z) -> np.ndarray:
        """``lift(apply(z))``: orthogonal projection onto the retained band."""
        return self.lift_flat(self.apply_flat(z))

    def ones_response(self) -> np.ndarray:
        """``A`` applied to the all-ones image, flattened."""
        return self.apply_flat(np.ones(self.dim))

    def dense_matrix(self) -> np.ndarray:
        """``A`` as a ``(map_dim, dim)`` matrix; for small problems and tests."""
        return self.apply_flat(np.eye(self.dim)).T


# -- wire form ---------------------------------------------------------------


def _quantize(values, lo, hi, bits):
    levels = 1 << bits
    idx = np.floor((values - lo) / (hi - lo) * levels)
    return np.clip(idx, 0, levels - 1).astype(np.int64)


def _dequantize(codes, lo, hi, bits):
    levels = 1 << bits
    return lo + (codes + 0.5) * (hi - lo) / levels


def _subsample(plane):
    """2x2 average pooling; odd sizes are edge-replicated first."""
    m = plane.shape[0]
    k = (m + 1) // 2
    padded = np.pad(plane, ((0, 2 * k - m), (0, 2 * k - m)), mode="edge")
    return padded.reshape(k, 2, k, 2).mean(axis=(1, 3))


def _upsample(plane, m):
    return np.repeat(np.repeat(plane, 2, axis=0), 2, axis=1)[:m, :m]


def chroma_size(m: int) -> int:
    return (m + 1) // 2


@dataclass(frozen=True)
class QuantizedColorMap:
    """Integer Y, U, V planes of an ``m x m`` thumbnail at ``bits`` bits per sample."""

    m: int
    bits: int
    luma: np.ndarray
    chroma_u: np.ndarray
    chroma_v: np.ndarray
    image_shape: tuple[int, int] = field(default=None)

    def __post_init__(self):
        if not 1 <= self.m <= 255:
            raise ValueError(f"m={self.m} out of range")
        if not 1 <= self.bits <= 8:
            raise ValueError(f"bits={self.bits} out of range [1, 8]")
        k = chroma_size(self.m)
        top = (1 << self.bits) - 1
        for name, plane, n in (
            ("luma", self.luma, self.m),
            ("chroma_u", self.chroma_u, k),
            ("chroma_v", self.chroma_v, k),
        ):
            plane = np.asarray(plane, dtype=np.int64)
            if plane.shape != (n, n):
                raise ValueError(f"{name} must be {n}x{n}, got {plane.shape}")
            if plane.min() < 0 or plane.max() > top:
                raise ValueError(f"{name} codes outside [0, {top}]")
            object.__setattr__(self, name, plane)
        if self.image_shape is None:
            object.__setattr__(self, "image_shape", (self.m, self.m))
        else:
            object.__setattr__(self, "image_shape", tuple(int(s) for s in self.image_shape))

    def bit_cost(self) -> int:
        return rate_bits(self)

    def write(self, writer: BitWriter) -> None:
        writer.write(self.m, 8)
        writer.write(self.bits, 8)
        for plane in (self.luma, self.chroma_u, self.chroma_v):
            writer.write_many(plane.ravel(), self.bits)

    @classmethod
    def read(cls, reader: BitReader, image_shape=None) -> "QuantizedColorMap":
        m = reader.read(8)
        bits = reader.read(8)
        if m == 0:
            raise CorruptStreamError("color map size 0")
        if not 1 <= bits <= 8:
            raise CorruptStreamError(f"color bit depth {bits} outside [1, 8]")
        k = chroma_size(m)
        planes = [
            np.array(reader.read_many(n * n, bits), dtype=np.int64).reshape(n, n)
            for n in (m, k, k)
        ]
        return cls(m, bits, *planes, image_shape=image_shape)

    def to_bytes(self) -> bytes:
        w = BitWriter()
        self.write(w)
        return w.getvalue()

    @classmethod
    def from_bytes(cls, data: bytes, image_shape=None) -> "QuantizedColorMap":
        r = BitReader(data)
        q = cls.read(r, image_shape)
        r.check_padding()
        return q


def to_wire(c: ColorMap, bits: int) -> QuantizedColorMap:
    """Quantize a 3-channel color map as a YUV 4:2:0 thumbnail."""
    if c.channels != 3:
        raise ValueError("wire form needs a 3-channel color map")
    if not 1 <= bits <= 8:
        raise ValueError(f"bits={bits} outside [1, 8]")
    yuv = c.thumbnail() @ _RGB2YUV.T
    luma = _quantize(yuv[..., 0], *LUMA_RANGE, bits)
    u = _quantize(_subsample(yuv[..., 1]), *CHROMA_RANGE, bits)
    v = _quantize(_subsample(yuv[..., 2]), *CHROMA_RANGE, bits)
    return QuantizedColorMap(c.m, bits, luma, u, v, image_shape=c.image_shape)


def from_wire(q: QuantizedColorMap) -> ColorMap:
    y = _dequantize(q.luma, *LUMA_RANGE, q.bits)
    u = _upsample(_dequantize(q.chroma_u, *CHROMA_RANGE, q.bits), q.m)
    v = _upsample(_dequantize(q.chroma_v, *CHROMA_RANGE, q.bits), q.m)
    rgb = np.stack([y, u, v], axis=-1) @ _YUV2RGB.T
    return ColorMap.from_thumbnail(rgb, q.image_shape)


def rate_bits(q: QuantizedColorMap) -> int:
    """Payload bits of the three planes (the two size bytes are header)."""
    k = chroma_size(q.m)
    return q.bits * (q.m * q.m + 2 * k * k)
