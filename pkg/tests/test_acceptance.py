"""End-to-end acceptance checks, one test per criterion.

Each test prints a single PASS/FAIL line; the lines are collected again in
the terminal summary under "acceptance criteria".
"""

import math
import time

import numpy as np
import pytest

from colorguide.bitstream import StreamError
from colorguide.calibration import (
    CalibrationProfile,
    estimate_decoder_response,
    estimate_lambda,
    guidance_scale_curve,
)
from colorguide.codec import CodecConfig, EncodedImage, RandomProjectionEmbedder, encode, read_stream, stream_payload_bits, write_stream
from colorguide.colormap import ColorMapOperator, QuantizedColorMap
from colorguide.guidance import (
    guidance_term_fine_latent,
    guidance_term_fine_pixel,
    guidance_term_universal,
    sample_batch,
)
from colorguide.latentspace import identity_codec, make_codec
from colorguide.mixtures import dct_variance_profile, single_gaussian
from colorguide.oracle import MixtureModel, exact_color_posterior, exact_denoiser, perturbed_denoiser
from colorguide.schedule import predict_z0

N_RUNS = 200
SHAPE = (16, 16, 3)


def se(x):
    return float(np.std(x, ddof=1) / math.sqrt(len(x)))


@pytest.fixture(scope="module")
def calibrated(demo_model, schedule, demo_denoiser):
    lam = estimate_lambda(demo_denoiser, demo_model, schedule, 1000, seed=11)
    return CalibrationProfile(lam, sample_count=1000, seed=11)


@pytest.fixture(scope="module")
def table1(demo_model, schedule, demo_denoiser, calibrated):
    """Guided runs on the demo mixture: 200 seeds, targets from held-out samples."""
    sources = demo_model.sample(N_RUNS, np.random.default_rng(2024))
    seeds = np.arange(1000, 1000 + N_RUNS)
    codec = identity_codec(SHAPE)
    runs, elapsed = {}, {}
    for m in (4, 8):
        op = ColorMapOperator(16, 16, m, 3)
        modes = ("none", "enforced", "fine_pixel", "universal", "initialized") if m == 4 else ("fine_pixel", "universal")
        for mode in modes:
            t0 = time.perf_counter()
            runs[m, mode] = sample_batch(
                demo_denoiser, schedule, codec, mode, seeds, op.apply_flat(sources), op,
                profile=calibrated, model=demo_model,
            )
            elapsed[m, mode] = time.perf_counter() - t0
    return runs, elapsed, sources


def test_criterion_01_rate_exactness(demo_model, verdict):
    t0 = time.perf_counter()
    emb = RandomProjectionEmbedder(768, 768, seed=0)
    clamp = emb.clamp_scale(demo_model.sample(500, np.random.default_rng(0)))
    x = demo_model.sample(1, np.random.default_rng(1))[0].reshape(SHAPE)
    data = write_stream(encode(x, CodecConfig(16, 5, 1), emb, clamp))
    bits = stream_payload_bits(data)
    dt = time.perf_counter() - t0
    verdict(1, bits == 2688 and dt < 1.0, f"payload {bits} bits counted on a {len(data)}-byte stream (expected 2688), {dt:.2f}s")


def test_criterion_02_table1_ordering(table1, verdict):
    runs, elapsed, _ = table1
    order = ("enforced", "fine_pixel", "universal", "initialized")
    mse = {k: runs[4, k].color_mse for k in order}
    gaps = []
    for lo, hi in zip(order, order[1:]):
        gap = mse[hi].mean() - mse[lo].mean()
        gaps.append(gap / math.sqrt(se(mse[lo]) ** 2 + se(mse[hi]) ** 2))
    total = sum(elapsed[4, k] for k in order)
    ok = min(gaps) >= 3 and total < 600
    means = " < ".join(f"{k} {mse[k].mean():.4f}" for k in order)
    verdict(2, ok, f"{means}; adjacent gaps {', '.join(f'{g:.1f}' for g in gaps)} SE; {total:.0f}s")


def test_criterion_03_realism(table1, verdict):
    runs, _, _ = table1
    none = runs[4, "none"].realism_loglik
    fine = runs[4, "fine_pixel"].realism_loglik
    init = runs[4, "initialized"].realism_loglik
    within = abs(fine.mean() - none.mean()) <= none.std(ddof=1)
    drop = (none.mean() - init.mean()) / math.sqrt(se(none) ** 2 + se(init) ** 2)
    verdict(
        3,
        within and drop >= 3,
        f"loglik none {none.mean():.1f} (sd {none.std(ddof=1):.1f}), fine {fine.mean():.1f}, "
        f"initialized {init.mean():.1f} ({drop:.1f} SE below none)",
    )


def test_criterion_04_scale_curve_shape(calibrated, schedule, verdict):
    fine = guidance_scale_curve(calibrated, schedule, "fine_pixel")[1:]
    univ = guidance_scale_curve(calibrated, schedule, "universal")
    ratio = fine.min() / fine.max()
    ok = ratio >= 0.1 and fine[0] > 0 and univ[0] == 0 and np.all(np.diff(univ) > 0)
    verdict(4, ok, f"fine min/max {ratio:.3f}, fine at t=1 {fine[0]:.3f}, universal t=0 {univ[0]:.1f} t=1 {univ[1]:.4f}")


def test_criterion_05_reduction_identity(demo_denoiser, calibrated, schedule, verdict):
    rng = np.random.default_rng(5)
    codec = identity_codec(SHAPE)
    op = ColorMapOperator(16, 16, 4, 3)
    prof = calibrated.with_decoder(0.0, 1.0)
    same = 0
    for _ in range(100):
        t = int(rng.integers(1, 51))
        z = rng.standard_normal(768)
        c = rng.uniform(0, 8, op.map_dim)
        a = guidance_term_fine_pixel(z, t, c, demo_denoiser, op, prof, schedule)
        b = guidance_term_fine_latent(z, t, c, demo_denoiser, op, codec, prof, schedule)
        same += bool(np.array_equal(a, b))
    verdict(5, same == 100, f"{same}/100 probes bit-identical")


def _fd_instances(codec_name, schedule, n=50):
    rng = np.random.default_rng(60 + ["identity", "orthogonal", "saturating"].index(codec_name))
    shape = (2, 2, 3)
    model = MixtureModel(
        [0.3, 0.3, 0.4], rng.uniform(0.2, 0.8, (3, 12)), rng.uniform(0.01, 0.1, (3, 12)), shape, "dct"
    )
    lam = np.concatenate([[0.0], rng.uniform(0.1, 1.0, 50)])
    prof = CalibrationProfile(lam, a_bar=0.05 if codec_name == "saturating" else 0.0,
                              b_bar=0.8 if codec_name == "saturating" else 1.0)
    codec = make_codec(codec_name, shape, gain=0.8, seed=3)
    den = codec.wrap_denoiser(exact_denoiser(model, schedule))
    op = ColorMapOperator(2, 2, 2, 3)
    h = 1e-5
    worst = 0.0
    kinds = ["fine_latent", "universal"] + (["fine_pixel"] if codec_name == "identity" else [])

    def objective(kind, z, t, c):
        a = schedule.alpha(t)
        r = c - op.apply_flat(codec.decode(predict_z0(schedule, z, t, den.predict(z, t))))
        if kind == "universal":
            return 0.9 * math.sqrt(1 - a) * r @ r
        if kind == "fine_latent":
            r = r - prof.a_bar * lam[t] * math.sqrt((1 - a) / a) * op.ones_response()
            return math.sqrt(a) / (2 * prof.b_bar * lam[t]) * r @ r
        return math.sqrt(a) / (2 * lam[t]) * r @ r

    for _ in range(n):
        t = int(rng.integers(1, 51))
        z = rng.standard_normal(12)
        c = rng.uniform(0, 2, 12)
        for kind in kinds:
            if kind == "universal":
                g = guidance_term_universal(z, t, c, den, op, codec, 0.9, schedule)
            elif kind == "fine_latent":
                g = guidance_term_fine_latent(z, t, c, den, op, codec, prof, schedule)
            else:
                g = guidance_term_fine_pixel(z, t, c, den, op, prof, schedule)
            fd = np.array([(objective(kind, z + h * e, t, c) - objective(kind, z - h * e, t, c)) / (2 * h) for e in np.eye(12)])
            worst = max(worst, float(np.linalg.norm(g - fd) / np.linalg.norm(fd)))
    return worst


def test_criterion_06_gradient_correctness(schedule, verdict):
    worst = {name: _fd_instances(name, schedule) for name in ("identity", "orthogonal", "saturating")}
    ok = max(worst.values()) <= 1e-4
    verdict(6, ok, "worst relative FD error " + ", ".join(f"{k} {v:.1e}" for k, v in worst.items()) + " (50 instances each)")


def test_criterion_07_calibration_recovery(schedule, verdict):
    model = single_gaussian((8, 8, 1), 0.5, variances=dct_variance_profile((8, 8, 1), 0.8, 0.04, 0.7))
    base = exact_denoiser(model, schedule)
    injected = 0.1 + 0.3 * np.arange(51) / 50
    pert = perturbed_denoiser(base, injected, seed=17)
    lam_base = estimate_lambda(base, model, schedule, 10_000, seed=3)
    lam_pert = estimate_lambda(pert, model, schedule, 10_000, seed=3)
    recovered = np.sqrt(np.maximum(lam_pert[1:] ** 2 - lam_base[1:] ** 2, 0))
    rel = np.max(np.abs(recovered / injected[1:] - 1))
    lat = model.sample(16, np.random.default_rng(4))
    a, b = estimate_decoder_response(identity_codec((8, 8, 1)).decode, lat, [0.05, 0.1, 0.2, 0.3], n_noise=128)
    ok = rel <= 0.05 and abs(a) <= 0.02 and abs(b - 1) <= 0.02
    verdict(7, ok, f"injected lambda recovered to {100 * rel:.2f}% (max over t); identity (a, b) = ({a:.4f}, {b:.4f})")


def test_criterion_08_conditional_posterior(schedule, verdict):
    shape = (8, 8, 1)
    model = single_gaussian(shape, 0.5, variances=dct_variance_profile(shape, 0.8, 0.04, 0.7))
    den = exact_denoiser(model, schedule)
    prof = CalibrationProfile(estimate_lambda(den, model, schedule, 2000, seed=1))
    m = 2
    op = ColorMapOperator(8, 8, m, 1)
    target = op.apply(model.sample(1, np.random.default_rng(0))[0].reshape(shape))
    # observation noise: half a 5-bit quantizer step, in coefficient units
    sigma = 0.5 / 32 * 8 / m
    exact = op.apply_flat(exact_color_posterior(model, op, target, sigma).mean())
    runs = sample_batch(den, schedule, identity_codec(shape), "fine_pixel", np.arange(500), target.coeffs.ravel(), op, profile=prof)
    guided = op.apply_flat(runs.images).mean(0)
    rel = float(np.linalg.norm(guided - exact) / np.linalg.norm(exact))
    verdict(8, rel <= 0.02, f"mean guided color map vs exact conditional mean: {100 * rel:.2f}% relative error (500 runs)")


def test_criterion_09_resolution_sensitivity(table1, verdict):
    runs, _, sources = table1
    ref = ColorMapOperator(16, 16, 8, 3)
    ref_maps = ref.apply_flat(sources)

    def ref_mse(m, mode):
        return np.mean((ref.apply_flat(runs[m, mode].images) - ref_maps) ** 2, axis=1)

    fine_drop = ref_mse(4, "fine_pixel") - ref_mse(8, "fine_pixel")
    univ_change = ref_mse(4, "universal") - ref_mse(8, "universal")
    z = fine_drop.mean() / se(fine_drop)
    ratio = abs(univ_change.mean()) / fine_drop.mean()
    ok = z >= 3 and ratio < 0.5
    verdict(
        9, ok,
        f"m 4->8: fine MSE drop {fine_drop.mean():.4f} ({z:.1f} SE), universal change {univ_change.mean():.4f} "
        f"({100 * ratio:.0f}% of fine's drop)",
    )


def _random_encoded(r):
    h, w = int(r.integers(1, 40)), int(r.integers(1, 40))
    m = int(r.integers(1, min(h, w) + 1))
    bc, bs_ = int(r.integers(1, 9)), int(r.integers(1, 17))
    k = (m + 1) // 2
    top = 1 << bc
    q = QuantizedColorMap(m, bc, r.integers(0, top, (m, m)), r.integers(0, top, (k, k)), r.integers(0, top, (k, k)), (h, w))
    return EncodedImage(h, w, bs_, float(np.float32(r.uniform(0.01, 5))), r.integers(0, 1 << bs_, int(r.integers(1, 300))), q)


def test_criterion_10_bitstream_robustness(verdict):
    r = np.random.default_rng(10)
    equal = 0
    typed = 0
    crashes = []
    for i in range(1000):
        e = _random_encoded(r)
        data = write_stream(e)
        equal += read_stream(data) == e
        blob = bytearray(data)
        kind = i % 4
        if kind == 0:
            blob[int(r.integers(len(blob)))] ^= int(r.integers(1, 256))
        elif kind == 1:
            blob = blob[: int(r.integers(len(blob)))]
        elif kind == 2:
            blob += bytes(r.integers(0, 256, int(r.integers(1, 6))).tolist())
        else:
            blob = bytearray(r.integers(0, 256, int(r.integers(0, 64))).tolist())
        try:
            read_stream(bytes(blob))
            typed += 1  # a flip inside payload bits can still be a valid stream
        except StreamError:
            typed += 1
        except Exception as exc:  # noqa: BLE001
            crashes.append(type(exc).__name__)
    ok = equal == 1000 and not crashes
    verdict(10, ok, f"{equal}/1000 round trips equal; {typed}/1000 corrupted inputs handled, crashes: {crashes[:3] or 'none'}")
