"""Command-line front end: sampling, calibration, comparisons, codec round trips.

Exit codes: 0 success, 2 configuration error, 3 I/O error, 4 corrupt stream.
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import subprocess
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from . import __version__
from .bitstream import StreamError
from .calibration import (
    CalibrationProfile,
    estimate_decoder_response,
    estimate_lambda,
    guidance_scale_curve,
)
from .codec import (
    CodecConfig,
    ConditionalDenoiser,
    RandomProjectionEmbedder,
    decode,
    encode,
    read_stream,
    write_stream,
)
from .colormap import ColorMapOperator
from .guidance import MODES, sample_batch
from .imageio import load_image, save_image
from .latentspace import make_codec
from .mixtures import demo_mixture, mixture_from_config, tomllib
from .oracle import exact_denoiser, perturbed_denoiser
from .schedule import make_linear_schedule

EXIT_OK, EXIT_CONFIG, EXIT_IO, EXIT_CORRUPT = 0, 2, 3, 4
OUT_ENV = "COLORGUIDE_OUT"
COMPARE_MODES = ("initialized", "universal", "fine_pixel", "enforced")


class ConfigError(Exception):
    pass


def _version_string() -> str:
    try:
        desc = subprocess.run(
            ["git", "describe", "--always", "--dirty"],
            capture_output=True,
            text=True,
            cwd=Path(__file__).parent,
            timeout=5,
        ).stdout.strip()
    except (OSError, subprocess.SubprocessError):
        desc = ""
    return f"{__version__}+{desc}" if desc else __version__


def _write_manifest(path, command, args, seeds, inputs, outputs, started):
    manifest = {
        "command": command,
        "config": {k: v for k, v in vars(args).items() if k != "func"},
        "seeds": [int(s) for s in np.atleast_1d(seeds)],
        "inputs": [str(p) for p in inputs if p],
        "outputs": [str(p) for p in outputs],
        "version": _version_string(),
        "wall_time_s": round(time.time() - started, 3),
    }
    with open(path, "w") as fh:
        json.dump(manifest, fh, indent=2, default=str)
        fh.write("\n")


def _resolve_seed(args) -> int:
    if args.seed is None:
        args.seed = int(np.random.SeedSequence().entropy % (2**31))
    return args.seed


def _load_setup(args):
    """Mixture model and schedule from ``--model`` plus schedule flags."""
    cfg = {}
    if args.model in (None, "demo"):
        model = demo_mixture()
    else:
        try:
            with open(args.model, "rb") as fh:
                cfg = tomllib.load(fh)
        except OSError as exc:
            raise OSError(f"cannot read model config {args.model}: {exc}") from exc
        except tomllib.TOMLDecodeError as exc:
            raise ConfigError(f"bad model config {args.model}: {exc}") from exc
        try:
            model = mixture_from_config(cfg)
        except (TypeError, ValueError, KeyError) as exc:
            raise ConfigError(f"bad model config {args.model}: {exc}") from exc
    sched_cfg = cfg.get("schedule", {})
    steps = args.steps or sched_cfg.get("steps", 50)
    alpha_min = args.alpha_min or sched_cfg.get("alpha_min", 1e-4)
    try:
        schedule = make_linear_schedule(int(steps), float(alpha_min))
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    return model, schedule


def _codec(args, model):
    try:
        return make_codec(args.codec, model.image_shape, gain=args.gain, seed=args.codec_seed)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc


def _load_profile(path, schedule):
    if path is None:
        return None
    try:
        profile = CalibrationProfile.load(path)
    except OSError:
        raise
    except ValueError as exc:
        raise ConfigError(f"bad profile {path}: {exc}") from exc
    if profile.num_steps != schedule.T:
        raise ConfigError(f"profile covers {profile.num_steps} steps, schedule has {schedule.T}")
    return profile


def _out_dir(args) -> Path:
    out = Path(args.out or os.environ.get(OUT_ENV, "out"))
    out.mkdir(parents=True, exist_ok=True)
    return out


def _target_from_image(path, model, m):
    h, w, c = model.image_shape
    img = load_image(path, c)
    if img.shape != model.image_shape:
        raise ConfigError(f"--color image is {img.shape}, model images are {model.image_shape}")
    op = ColorMapOperator(h, w, m, c)
    return op, op.apply_flat(img.ravel())


def _run_chunk(payload):
    den, schedule, codec, mode, seeds, targets, op, kwargs = payload
    return sample_batch(den, schedule, codec, mode, seeds, targets, op, **kwargs)


def _sample_parallel(jobs, den, schedule, codec, mode, seeds, targets, op, **kwargs):
    """Split seeds across ``jobs`` worker processes; rows stay in seed order."""
    seeds = np.asarray(seeds)
    if targets is not None:
        targets = np.broadcast_to(targets, (len(seeds), op.map_dim))
    if jobs <= 1 or len(seeds) < 2:
        return [sample_batch(den, schedule, codec, mode, seeds, targets, op, **kwargs)]
    parts = np.array_split(np.arange(len(seeds)), min(jobs, len(seeds)))
    payloads = [
        (den, schedule, codec, mode, seeds[p], None if targets is None else targets[p], op, kwargs)
        for p in parts
    ]
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(_run_chunk, payloads))


def _stack(results, name):
    return np.concatenate([getattr(r, name) for r in results])


def _metrics_rows(mode, results, T):
    rows = []
    for r in results:
        for i, seed in enumerate(r.seeds):
            row = {
                "seed": int(seed),
                "mode": mode,
                "color_mse": "" if np.isnan(r.color_mse[i]) else repr(float(r.color_mse[i])),
                "loglik": repr(float(r.realism_loglik[i])),
            }
            for t in range(1, T + 1):
                row[f"norm_t{t}"] = repr(float(r.per_step_guidance_norm[i, t]))
            rows.append(row)
    return rows


def _write_csv(path, rows):
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=list(rows[0]), lineterminator="\n")
        writer.writeheader()
        writer.writerows(rows)


def cmd_sample(args) -> int:
    started = time.time()
    seed = _resolve_seed(args)
    model, schedule = _load_setup(args)
    codec = _codec(args, model)
    if args.mode not in MODES:
        raise ConfigError(f"unknown --mode {args.mode!r}")
    profile = _load_profile(args.profile, schedule)
    if args.mode in ("fine_pixel", "fine_latent") and profile is None:
        raise ConfigError(f"--mode {args.mode} needs --profile (a calibration file)")
    if args.mode == "universal" and profile is None and args.scale_universal is None:
        raise ConfigError("--mode universal needs --profile or --universal-scale")
    op = targets = None
    if args.color:
        op, targets = _target_from_image(args.color, model, args.m)
    elif args.mode != "none":
        raise ConfigError(f"--mode {args.mode} needs --color")
    den = codec.wrap_denoiser(exact_denoiser(model, schedule))
    seeds = seed + np.arange(args.n)
    kwargs = dict(
        profile=profile,
        scale=args.scale,
        universal_scale=args.scale_universal,
        init_fraction=args.tau,
        model=model,
    )
    try:
        results = _sample_parallel(args.jobs, den, schedule, codec, args.mode, seeds, targets, op, **kwargs)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    out = _out_dir(args)
    images = _stack(results, "images")
    written = []
    for s, img in zip(seeds, images):
        path = out / f"sample_{args.mode}_{int(s)}.{args.format}"
        save_image(path, img.reshape(model.image_shape))
        written.append(path)
    metrics = out / f"metrics_{args.mode}.csv"
    _write_csv(metrics, _metrics_rows(args.mode, results, schedule.T))
    written.append(metrics)
    _write_manifest(
        out / f"manifest_sample_{args.mode}.json", "sample", args, seeds,
        [args.model, args.profile, args.color], written, started,
    )
    print(f"wrote {len(images)} samples and {metrics}")
    return EXIT_OK


def cmd_calibrate(args) -> int:
    started = time.time()
    seed = _resolve_seed(args)
    model, schedule = _load_setup(args)
    codec = _codec(args, model)
    den = codec.wrap_denoiser(exact_denoiser(model, schedule))
    if args.inject_lambda:
        den = perturbed_denoiser(den, np.full(schedule.T + 1, args.inject_lambda), seed=seed + 1)
    try:
        lam = estimate_lambda(den, model, schedule, args.n, seed=seed, encode=codec.encode)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    rng = np.random.default_rng([seed, 2])
    latents = codec.encode(model.sample(args.response_images, rng))
    a_bar, b_bar = estimate_decoder_response(
        codec.decode, latents, args.lambda_grid, n_noise=args.response_noise, seed=seed
    )
    profile = CalibrationProfile(lam, a_bar, b_bar, args.n, seed)
    out = Path(args.out)
    if out.parent != Path(""):
        out.parent.mkdir(parents=True, exist_ok=True)
    profile.save(out)
    _write_manifest(
        out.with_suffix(out.suffix + ".manifest.json"), "calibrate", args, [seed],
        [args.model], [out], started,
    )
    print(f"a_bar={a_bar:.4f} b_bar={b_bar:.4f} -> {out}")
    return EXIT_OK


def cmd_compare(args) -> int:
    started = time.time()
    seed = _resolve_seed(args)
    modes = [m.strip() for m in args.modes.split(",") if m.strip()]
    unknown = [m for m in modes if m not in MODES]
    if unknown:
        raise ConfigError(f"unknown mode(s) {unknown}; choose from {MODES}")
    model, schedule = _load_setup(args)
    codec = _codec(args, model)
    profile = _load_profile(args.profile, schedule)
    den = codec.wrap_denoiser(exact_denoiser(model, schedule))
    if profile is None:
        lam = estimate_lambda(den, model, schedule, args.calib_n, seed=seed, encode=codec.encode)
        profile = CalibrationProfile(lam, sample_count=args.calib_n, seed=seed)
    seeds = seed + np.arange(args.n)
    sources = np.concatenate(
        [model.sample(1, np.random.default_rng([int(s), 1])) for s in seeds]
    )
    h, w, c = model.image_shape
    op = ColorMapOperator(h, w, args.m, c)
    targets = op.apply_flat(sources)
    out = _out_dir(args)
    summary = []
    written = []
    for mode in modes:
        try:
            results = _sample_parallel(
                args.jobs, den, schedule, codec, mode, seeds, targets, op,
                profile=profile, scale=args.scale, init_fraction=args.tau, model=model,
            )
        except ValueError as exc:
            raise ConfigError(f"{mode}: {exc}") from exc
        path = out / f"compare_{mode}.csv"
        _write_csv(path, _metrics_rows(mode, results, schedule.T))
        written.append(path)
        mse = _stack(results, "color_mse")
        ll = _stack(results, "realism_loglik")
        summary.append(
            {
                "mode": mode,
                "n": len(mse),
                "color_mse_mean": float(mse.mean()),
                "color_mse_std": float(mse.std(ddof=1)) if len(mse) > 1 else 0.0,
                "loglik_mean": float(ll.mean()),
                "loglik_std": float(ll.std(ddof=1)) if len(ll) > 1 else 0.0,
            }
        )
    _write_csv(out / "summary.csv", summary)
    with open(out / "summary.jsonl", "w") as fh:
        for row in summary:
            fh.write(json.dumps(row) + "\n")
    written += [out / "summary.csv", out / "summary.jsonl"]
    _write_manifest(
        out / "manifest_compare.json", "compare", args, seeds, [args.model, args.profile],
        written, started,
    )
    for row in summary:
        print(
            f"{row['mode']:12s} color_mse {row['color_mse_mean']:.5f} ± {row['color_mse_std']:.5f}"
            f"  loglik {row['loglik_mean']:.1f} ± {row['loglik_std']:.1f}"
        )
    return EXIT_OK


def cmd_schedule_plot(args) -> int:
    started = time.time()
    model, schedule = _load_setup(args)
    profile = _load_profile(args.profile, schedule)
    if profile is None:
        raise ConfigError("schedule-plot needs --profile")
    curves = {
        "universal": guidance_scale_curve(profile, schedule, "universal"),
        "fine_pixel": guidance_scale_curve(profile, schedule, "fine_pixel"),
        "fine_latent": guidance_scale_curve(profile, schedule, "fine_latent"),
    }
    rows = [
        {
            "t": t,
            "alpha": repr(float(schedule.alphas[t])),
            **{k: repr(float(v[t])) for k, v in curves.items()},
        }
        for t in range(1, schedule.T + 1)
    ]
    out = Path(args.out)
    if out.parent != Path(""):
        out.parent.mkdir(parents=True, exist_ok=True)
    _write_csv(out, rows)
    _write_manifest(
        out.with_suffix(out.suffix + ".manifest.json"), "schedule-plot", args, [],
        [args.profile], [out], started,
    )
    print(f"wrote {len(rows)} rows to {out}")
    return EXIT_OK


def _embedder_and_clamp(args, model):
    embedder = RandomProjectionEmbedder(model.dim, args.ds, seed=args.embed_seed)
    rng = np.random.default_rng([args.embed_seed, 3])
    return embedder, embedder.clamp_scale(model.sample(2000, rng))


def cmd_encode(args) -> int:
    started = time.time()
    model, _ = _load_setup(args)
    image = load_image(args.input, model.image_shape[2])
    if image.shape != model.image_shape:
        raise ConfigError(f"input image is {image.shape}, model images are {model.image_shape}")
    try:
        config = CodecConfig(args.m, args.bc, args.bs)
        embedder, clamp = _embedder_and_clamp(args, model)
        enc = encode(image, config, embedder, clamp)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    data = write_stream(enc)
    out = Path(args.out)
    out.write_bytes(data)
    _write_manifest(
        out.with_suffix(out.suffix + ".manifest.json"), "encode", args, [],
        [args.input, args.model], [out], started,
    )
    print(f"rate_bits={enc.payload_bits} stream_bytes={len(data)} -> {out}")
    return EXIT_OK


def cmd_decode(args) -> int:
    started = time.time()
    seed = _resolve_seed(args)
    model, schedule = _load_setup(args)
    data = Path(args.input).read_bytes()
    enc = read_stream(data)
    if (enc.height, enc.width, 3) != model.image_shape:
        raise ConfigError("stream image size does not match the model")
    if enc.semantic_dim != args.ds:
        raise ConfigError(f"stream has d_s={enc.semantic_dim}, --ds is {args.ds}")
    codec = _codec(args, model)
    profile = _load_profile(args.profile, schedule)
    if args.mode in ("fine_pixel", "fine_latent") and profile is None:
        raise ConfigError(f"--mode {args.mode} needs --profile")
    embedder = RandomProjectionEmbedder(model.dim, args.ds, seed=args.embed_seed)
    cond = ConditionalDenoiser(model, schedule, embedder, args.temperature)
    try:
        image, metrics = decode(enc, cond, schedule, codec, profile, seed, args.mode)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    out = Path(args.out)
    save_image(out, image)
    _write_manifest(
        out.with_suffix(out.suffix + ".manifest.json"), "decode", args, [seed],
        [args.input, args.model, args.profile], [out], started,
    )
    print(json.dumps(metrics))
    return EXIT_OK


def _add_common(p, seed=True):
    p.add_argument("--model", default="demo", help="model config (TOML) or 'demo'")
    p.add_argument("--steps", type=int, default=None, help="number of diffusion steps T")
    p.add_argument("--alpha-min", type=float, default=None)
    if seed:
        p.add_argument("--seed", type=int, default=None)


def _add_codec(p):
    p.add_argument("--codec", default="identity", help="identity | orthogonal | saturating")
    p.add_argument("--gain", type=float, default=4.0, help="saturating codec gain")
    p.add_argument("--codec-seed", type=int, default=0)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="colorguide", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("sample", help="draw (guided) samples")
    _add_common(p)
    _add_codec(p)
    p.add_argument("--mode", default="none")
    p.add_argument("--color", help="image whose color map is the target")
    p.add_argument("--m", type=int, default=4, help="color-map resolution")
    p.add_argument("--scale", type=float, default=1.0)
    p.add_argument("--universal-scale", dest="scale_universal", type=float, default=None)
    p.add_argument("--tau", type=float, default=0.55, help="initialized start as a fraction of T")
    p.add_argument("--profile")
    p.add_argument("-n", type=int, default=4)
    p.add_argument("-j", "--jobs", type=int, default=1)
    p.add_argument("--format", choices=("png", "ppm"), default="png")
    p.add_argument("--out")
    p.set_defaults(func=cmd_sample)

    p = sub.add_parser("calibrate", help="estimate lambda_bar and decoder response")
    _add_common(p)
    _add_codec(p)
    p.add_argument("-n", type=int, default=2000)
    p.add_argument("--inject-lambda", type=float, default=0.0)
    p.add_argument("--lambda-grid", type=float, nargs="+", default=[0.05, 0.1, 0.2, 0.3])
    p.add_argument("--response-images", type=int, default=16)
    p.add_argument("--response-noise", type=int, default=64)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_calibrate)

    p = sub.add_parser("compare", help="compare color-control methods")
    _add_common(p)
    _add_codec(p)
    p.add_argument("--modes", default=",".join(COMPARE_MODES))
    p.add_argument("--m", type=int, default=4)
    p.add_argument("--scale", type=float, default=1.0)
    p.add_argument("--tau", type=float, default=0.55)
    p.add_argument("--profile")
    p.add_argument("--calib-n", type=int, default=1000)
    p.add_argument("-n", type=int, default=200)
    p.add_argument("-j", "--jobs", type=int, default=1)
    p.add_argument("--out")
    p.set_defaults(func=cmd_compare)

    p = sub.add_parser("schedule-plot", help="guidance scale curves as CSV")
    _add_common(p, seed=False)
    p.add_argument("--profile", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_schedule_plot)

    for name, func in (("encode", cmd_encode), ("decode", cmd_decode)):
        p = sub.add_parser(name, help=f"{name} an image stream")
        _add_common(p)
        p.add_argument("input")
        p.add_argument("--out", required=True)
        p.add_argument("--ds", type=int, default=768, help="semantic dimension")
        p.add_argument("--embed-seed", type=int, default=0)
        if name == "encode":
            p.add_argument("--m", type=int, default=16)
            p.add_argument("--bc", type=int, default=5)
            p.add_argument("--bs", type=int, default=1)
        else:
            _add_codec(p)
            p.add_argument("--mode", default="fine_pixel")
            p.add_argument("--profile")
            p.add_argument("--temperature", type=float, default=0.05)
        p.set_defaults(func=func)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except StreamError as exc:
        print(f"corrupt stream: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_CORRUPT
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
