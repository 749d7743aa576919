"""Semantic + color-map image codec with guided generative decoding.

Stream layout (big-endian, MSB-first bit packing)::

    "CGC1" | u8 version | u16 H | u16 W | u8 m | u8 b_c | u8 b_s | u16 d_s
    | f32 clamp_scale | d_s semantic codes of b_s bits | color-map wire form

The color-map wire form is ``u8 m | u8 b_c | Y | U | V`` (see
:mod:`colorguide.colormap`).  The stream is zero-padded to a whole byte.
Reported rates count payload bits only: semantic codes and color planes.
"""

from __future__ import annotations

import csv
import io
import math
import struct
from dataclasses import dataclass, field

import numpy as np
from scipy.special import softmax

from . import bitstream as bs
from .bitstream import BitReader, BitWriter
from .colormap import ColorMapOperator, QuantizedColorMap, from_wire, rate_bits, to_wire
from .guidance import color_mse, sample_batch
from .oracle import ExactDenoiser, MixtureModel

MAGIC = b"CGC1"
VERSION = 1
HEADER_BITS = 8 * (4 + 1 + 2 + 2 + 1 + 1 + 1 + 2 + 4)
COLOR_HEADER_BITS = 16
CSV_COLUMNS = [
    "id", "mode", "m", "b_c", "b_s", "rate_bits", "color_mse", "semantic_dist", "loglik", "seed",
]


class RandomProjectionEmbedder:
    """Seeded random projection to a unit vector; a stand-in semantic encoder."""

    def __init__(self, image_dim: int, dim: int = 768, seed: int = 0, center: float = 0.5):
        self.image_dim = int(image_dim)
        self.dim = int(dim)
        self.seed = int(seed)
        self.center = center
        rng = np.random.default_rng([seed, 0x5E])
        self.projection = rng.standard_normal((self.dim, self.image_dim)) / math.sqrt(self.image_dim)

    def embed(self, x):
        """Unit-norm embedding of flattened images ``(..., d)`` or ``(..., H, W, C)``."""
        x = np.asarray(x, dtype=np.float64)
        if x.shape[-1] != self.image_dim:
            x = x.reshape(x.shape[:-3] + (-1,))
        y = (x - self.center) @ self.projection.T
        return y / np.linalg.norm(y, axis=-1, keepdims=True)

    def clamp_scale(self, images) -> float:
        """Three times the per-dimension standard deviation over ``images``."""
        return 3.0 * float(np.std(self.embed(images)))


def semantic_distance(a, b):
    """``1 - cos(a, b)`` along the last axis."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    cos = np.sum(a * b, axis=-1) / (np.linalg.norm(a, axis=-1) * np.linalg.norm(b, axis=-1))
    return 1.0 - cos


def quantize_semantic(v, clamp: float, bits: int) -> np.ndarray:
    """Clamp to ``[-clamp, clamp]`` and quantize uniformly to ``2**bits`` cells."""
    levels = 1 << bits
    idx = np.floor((np.clip(v, -clamp, clamp) + clamp) / (2 * clamp) * levels)
    return np.clip(idx, 0, levels - 1).astype(np.int64)


def dequantize_semantic(codes, clamp: float, bits: int) -> np.ndarray:
    """Cell midpoints of :func:`quantize_semantic`."""
    levels = 1 << bits
    return -clamp + (np.asarray(codes) + 0.5) * (2 * clamp / levels)


@dataclass(frozen=True)
class CodecConfig:
    m: int = 16
    color_bits: int = 5
    semantic_bits: int = 1

    def __post_init__(self):
        if not 1 <= self.m <= 255:
            raise ValueError(f"m={self.m} out of range")
        if not 1 <= self.color_bits <= 8:
            raise ValueError("color_bits must lie in [1, 8]")
        if not 1 <= self.semantic_bits <= 16:
            raise ValueError("semantic_bits must lie in [1, 16]")


@dataclass(frozen=True, eq=False)
class EncodedImage:
    height: int
    width: int
    semantic_bits: int
    clamp_scale: float
    semantic_codes: np.ndarray
    color: QuantizedColorMap
    version: int = VERSION

    @property
    def m(self) -> int:
        return self.color.m

    @property
    def color_bits(self) -> int:
        return self.color.bits

    @property
    def semantic_dim(self) -> int:
        return len(self.semantic_codes)

    @property
    def payload_bits(self) -> int:
        return self.semantic_bits * self.semantic_dim + rate_bits(self.color)

    @property
    def header_bits(self) -> int:
        return HEADER_BITS + COLOR_HEADER_BITS

    def semantic_vector(self) -> np.ndarray:
        return dequantize_semantic(self.semantic_codes, self.clamp_scale, self.semantic_bits)

    def color_map(self):
        return from_wire(self.color)

    def __eq__(self, other):
        if not isinstance(other, EncodedImage):
            return NotImplemented
        return (
            (self.version, self.height, self.width, self.semantic_bits)
            == (other.version, other.height, other.width, other.semantic_bits)
            and np.float32(self.clamp_scale) == np.float32(other.clamp_scale)
            and np.array_equal(self.semantic_codes, other.semantic_codes)
            and self.color.m == other.color.m
            and self.color.bits == other.color.bits
            and all(
                np.array_equal(getattr(self.color, p), getattr(other.color, p))
                for p in ("luma", "chroma_u", "chroma_v")
            )
        )


def encode(image, config: CodecConfig, embedder: RandomProjectionEmbedder, clamp_scale: float):
    """Encode one ``(H, W, 3)`` image into its semantic and color halves."""
    image = np.asarray(image, dtype=np.float64)
    if image.ndim != 3 or image.shape[2] != 3:
        raise ValueError("encode takes a single (H, W, 3) image")
    h, w, _ = image.shape
    if image.size != embedder.image_dim:
        raise ValueError("image size does not match the embedder")
    if not clamp_scale > 0:
        raise ValueError("clamp_scale must be positive")
    clamp = float(np.float32(clamp_scale))
    op = ColorMapOperator(h, w, config.m, 3)
    q = to_wire(op.apply(image), config.color_bits)
    codes = quantize_semantic(embedder.embed(image.ravel()), clamp, config.semantic_bits)
    return EncodedImage(h, w, config.semantic_bits, clamp, codes, q)


def write_stream(e: EncodedImage) -> bytes:
    w = BitWriter()
    w.write_bytes(MAGIC)
    w.write(e.version, 8)
    w.write(e.height, 16)
    w.write(e.width, 16)
    w.write(e.m, 8)
    w.write(e.color_bits, 8)
    w.write(e.semantic_bits, 8)
    w.write(e.semantic_dim, 16)
    w.write_bytes(struct.pack(">f", e.clamp_scale))
    w.write_many(e.semantic_codes, e.semantic_bits)
    e.color.write(w)
    return w.getvalue()


def stream_payload_bits(data: bytes) -> int:
    """Payload bits counted while parsing: bits consumed minus the header fields."""
    _, consumed = _parse(data)
    return consumed - HEADER_BITS - COLOR_HEADER_BITS


def read_stream(data: bytes) -> EncodedImage:
    """Parse a stream; every malformed input raises a :class:`StreamError` subclass."""
    return _parse(data)[0]


def _parse(data: bytes):
    r = BitReader(data)
    if r.remaining < 32:
        raise bs.TruncatedStreamError("stream shorter than the magic number")
    if r.read_bytes(4) != MAGIC:
        raise bs.BadMagicError("not a CGC1 stream")
    version = r.read(8)
    if version != VERSION:
        raise bs.VersionError(f"unsupported version {version}")
    height = r.read(16)
    width = r.read(16)
    m = r.read(8)
    color_bits = r.read(8)
    sem_bits = r.read(8)
    sem_dim = r.read(16)
    (clamp,) = struct.unpack(">f", r.read_bytes(4))
    if height == 0 or width == 0:
        raise bs.CorruptStreamError("zero image size")
    if not 1 <= m <= min(height, width):
        raise bs.CorruptStreamError(f"color map size {m} invalid for {height}x{width}")
    if not 1 <= color_bits <= 8:
        raise bs.CorruptStreamError(f"color bit depth {color_bits}")
    if not 1 <= sem_bits <= 16:
        raise bs.CorruptStreamError(f"semantic bit depth {sem_bits}")
    if sem_dim == 0:
        raise bs.CorruptStreamError("empty semantic vector")
    if not (math.isfinite(clamp) and clamp > 0):
        raise bs.CorruptStreamError(f"bad clamp scale {clamp}")
    codes = np.array(r.read_many(sem_dim, sem_bits), dtype=np.int64)
    color = QuantizedColorMap.read(r, image_shape=(height, width))
    if (color.m, color.bits) != (m, color_bits):
        raise bs.CorruptStreamError("color map header disagrees with stream header")
    consumed = 8 * len(data) - r.remaining
    r.check_padding()
    return EncodedImage(height, width, sem_bits, clamp, codes, color, version), consumed


class ConditionalDenoiser:
    """Mixture oracle conditioned on a semantic vector.

    Component weights are multiplied by ``exp(cos(sigma_s, e_k) / temperature)``
    where ``e_k`` embeds the component mean.  Equal similarities leave the
    unconditional model unchanged.
    """

    def __init__(self, model: MixtureModel, schedule, embedder, temperature: float = 0.05):
        if not temperature > 0:
            raise ValueError("temperature must be positive")
        self.model = model
        self.schedule = schedule
        self.embedder = embedder
        self.temperature = float(temperature)
        self.component_embeddings = embedder.embed(model.means)

    def log_weights(self, semantic):
        semantic = np.atleast_2d(semantic)
        sim = 1.0 - semantic_distance(semantic[:, None, :], self.component_embeddings[None])
        logits = np.log(self.model.weights) + sim / self.temperature
        return np.log(softmax(logits, axis=-1))

    def conditioned_model(self, semantic) -> MixtureModel:
        w = np.exp(self.log_weights(semantic)[0])
        return self.model.reweighted(w / w.sum())

    def denoiser(self, semantic) -> ExactDenoiser:
        """Exact denoiser; one row of weights per semantic vector."""
        return ExactDenoiser(self.model, self.schedule, self.log_weights(semantic))

    def unconditional(self) -> ExactDenoiser:
        return ExactDenoiser(self.model, self.schedule)


@dataclass
class DecodeResult:
    images: np.ndarray
    color_mse: np.ndarray
    loglik: np.ndarray
    seeds: np.ndarray
    mode: str
    rate_bits: list = field(default_factory=list)


def decode_batch(
    streams,
    cond: ConditionalDenoiser,
    schedule,
    latent_codec,
    profile,
    seeds,
    mode: str = "fine_pixel",
    semantic: bool = True,
    **sample_kwargs,
) -> DecodeResult:
    """Decode several streams at once by guided conditional generation.

    ``mode`` is any sampler mode; ``semantic=False`` ignores the semantic half.
    All streams must share image size and color-map resolution.
    """
    encoded = [read_stream(s) if isinstance(s, (bytes, bytearray)) else s for s in streams]
    h, w, m = encoded[0].height, encoded[0].width, encoded[0].m
    if any((e.height, e.width, e.m) != (h, w, m) for e in encoded):
        raise ValueError("streams in a batch must share image size and color-map size")
    op = ColorMapOperator(h, w, m, 3)
    targets = np.stack([e.color_map().coeffs.ravel() for e in encoded])
    if semantic:
        den = cond.denoiser(np.stack([e.semantic_vector() for e in encoded]))
    else:
        den = cond.unconditional()
    den = latent_codec.wrap_denoiser(den)
    out = sample_batch(
        den, schedule, latent_codec, mode, seeds, targets, op,
        profile=profile, model=cond.model, **sample_kwargs,
    )
    return DecodeResult(
        out.images, out.color_mse, out.realism_loglik, out.seeds, mode,
        [e.payload_bits for e in encoded],
    )


def decode(stream, cond, schedule, latent_codec, profile, seed, mode="fine_pixel", **kwargs):
    """Decode one stream; returns ``(image, metrics)``."""
    res = decode_batch([stream], cond, schedule, latent_codec, profile, [seed], mode, **kwargs)
    e = read_stream(stream) if isinstance(stream, (bytes, bytearray)) else stream
    image = res.images[0].reshape(e.height, e.width, 3)
    metrics = {
        "color_mse": float(res.color_mse[0]),
        "loglik": float(res.loglik[0]),
        "rate_bits": e.payload_bits,
        "seed": int(seed),
        "mode": mode,
    }
    return image, metrics


def evaluate(inputs, outputs, model, embedder, m: int, rate=None, mode="", seeds=None):
    """Per-pair metric rows: color MSE at resolution ``m``, semantic distance,
    realism log-likelihood of the output and the rate."""
    inputs = np.atleast_2d(np.asarray(inputs, dtype=np.float64).reshape(len(inputs), -1))
    outputs = np.atleast_2d(np.asarray(outputs, dtype=np.float64).reshape(len(outputs), -1))
    h, w, c = model.image_shape
    op = ColorMapOperator(h, w, m, c)
    cm = color_mse(op, outputs, op.apply_flat(inputs))
    sd = semantic_distance(embedder.embed(inputs), embedder.embed(outputs))
    ll = model.log_density(outputs)
    rows = []
    for i in range(len(inputs)):
        rows.append(
            {
                "id": i,
                "mode": mode,
                "m": m,
                "b_c": "" if rate is None else rate[1],
                "b_s": "" if rate is None else rate[2],
                "rate_bits": "" if rate is None else rate[0],
                "color_mse": float(cm[i]),
                "semantic_dist": float(max(sd[i], 0.0)),
                "loglik": float(ll[i]),
                "seed": "" if seeds is None else int(seeds[i]),
            }
        )
    return rows


def rows_to_csv(rows) -> str:
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=CSV_COLUMNS, lineterminator="\n")
    writer.writeheader()
    writer.writerows(rows)
    return buf.getvalue()
