"""Command-line front end.

Commands: bars, train, denoise, inpaint, eval, sample. Every run writes a
manifest (config echo, build id, seed) sufficient to reproduce it exactly.
"""

from __future__ import annotations

import argparse
import math
import os
import subprocess
import sys
from pathlib import Path

import numpy as np

from .checkpoint import CheckpointState, load_checkpoint, save_checkpoint
from .config import PRESET_NOTES, PRESETS, RunConfig, load_preset, parse_config_file
from .datasets import DataSet
from .errors import ConfigError, EvoEmError
from .estimator import predict_all
from .imaging import (
    CorruptionSpec,
    Image,
    ImageError,
    PatchGrid,
    corrupt,
    extract_patches,
    merge_patches,
    psnr,
    read_image,
    write_image,
)
from .learning import EemConfig, FreeEnergyTrace, derive_rng, eem_fit
from .models import get_model, normalize_kind
from .synthetic import BarsSpec, generate_bars_dataset, score_recovery

_RNG_DATA = 100
_RNG_NOISE = 200
_RNG_MASK = 201


def build_id() -> str:
    try:
        from importlib.metadata import version

        base = f"evoem-{version('evoem')}"
    except Exception:
        base = "evoem-unknown"
    try:
        rev = subprocess.run(
            ["git", "describe", "--always", "--dirty"],
            cwd=Path(__file__).resolve().parent,
            capture_output=True, text=True, timeout=5,
        )
        if rev.returncode == 0 and rev.stdout.strip():
            return f"{base}+{rev.stdout.strip()}"
    except Exception:
        pass
    return base


def _fmt(value: float) -> str:
    if math.isinf(value):
        return "+inf" if value > 0 else "-inf"
    return repr(float(value))


def fig5_measure_iterations(total: int) -> list[int]:
    """Measurement strides 1, 2, 5, 10, 20, 50, ... plus the final iteration."""
    out, base = [], 1
    while base <= total:
        for mult in (1, 2, 5):
            it = base * mult
            if it <= total:
                out.append(it)
        base *= 10
    if total not in out:
        out.append(total)
    return sorted(set(out))


def write_csv(path, header: str, rows):
    lines = [header]
    for row in rows:
        lines.append(",".join(_fmt(v) if isinstance(v, float) else str(v) for v in row))
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def write_manifest(out_dir: Path, command: str, cfg: RunConfig):
    lines = [f"command={command}", f"build_id={build_id()}"]
    lines += cfg.manifest_lines()
    (out_dir / "manifest.txt").write_text("\n".join(lines) + "\n", encoding="utf-8")


def _resolve_threads(cfg: RunConfig) -> int:
    if cfg.get("threads") is not None:
        return cfg.get("threads")
    env = os.environ.get("EVOEM_THREADS")
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            raise ConfigError(f"cannot parse EVOEM_THREADS value {env!r}") from None
    return 1


def _eem_config(cfg: RunConfig) -> EemConfig:
    return EemConfig(
        s=cfg.require("s"),
        iterations=cfg.require("iterations"),
        seed=cfg.get("seed", 0),
        parallel_degree=_resolve_threads(cfg),
        log_every=cfg.get("log_every", 1),
    )


def _m_step_options(cfg: RunConfig, kind: str, h: int, inpainting: bool) -> dict:
    opts: dict = {}
    if kind == "nor":
        floor = cfg.pi_floor(h)
        if floor is not None:
            opts["pi_floor"] = floor
    if kind == "sssc":
        opts["sigma2_update"] = cfg.get("sssc_sigma2_update", "printed")
        default_frozen = inpainting
        opts["frozen_mu_psi"] = bool(cfg.get("mu_psi_frozen", default_frozen))
    return opts


def _write_trace(out_dir: Path, trace: FreeEnergyTrace):
    write_csv(
        out_dir / "free_energy.csv",
        "iteration,free_energy_per_datapoint",
        [(it, float(v)) for it, v in trace.as_rows()],
    )


def _save_run_checkpoint(out_dir: Path, result, seed: int, iteration: int):
    state = CheckpointState(
        params=result.params,
        states=result.sets.states,
        iteration=iteration,
        seed=seed,
        trace=result.trace,
    )
    save_checkpoint(out_dir / "checkpoint.eem", state)


def cmd_bars(cfg: RunConfig, out_dir: Path) -> int:
    kind = normalize_kind(cfg.require("model"))
    spec = BarsSpec(r=cfg.get("bars_r", 5), kind=kind)
    n = cfg.get("n", 5000)
    seed = cfg.get("seed", 0)
    data, truth = generate_bars_dataset(spec, n, derive_rng(seed, _RNG_DATA))
    h = cfg.get("h", spec.h_gen)
    eem = _eem_config(cfg)
    result = eem_fit(
        data, kind, h, eem, cfg.ea_config(),
        m_step_options=_m_step_options(cfg, kind, h, inpainting=False),
    )
    report = score_recovery(result.params, truth)
    (out_dir / "recovery.csv").write_text(report.to_csv(), encoding="utf-8")
    _write_trace(out_dir, result.trace)
    _save_run_checkpoint(out_dir, result, seed, eem.iterations)
    write_manifest(out_dir, "bars", cfg)
    print(f"min_correlation={_fmt(report.min_correlation)}")
    print(f"final_free_energy_per_datapoint={_fmt(result.trace.values[-1])}")
    return 0


def _load_input_image(cfg: RunConfig, out_dir: Path, kind_of_run: str):
    """Resolve (clean or None, corrupted, observation mask or None)."""
    seed = cfg.get("seed", 0)
    clean_path = cfg.get("clean_image")
    noisy_path = cfg.get("image")
    if kind_of_run == "denoise":
        if noisy_path:
            return None, read_image(noisy_path), None
        if not clean_path:
            raise ConfigError("denoise needs image= (noisy) or clean_image= plus sigma=")
        clean = read_image(clean_path)
        sigma = cfg.get("sigma")
        if sigma is None:
            raise ConfigError("corrupting a clean image needs sigma=")
        spec = CorruptionSpec(kind="awg", sigma=sigma, seed=seed)
        noisy, _ = corrupt(clean, spec, derive_rng(seed, _RNG_NOISE))
        write_image(out_dir / "noisy.eemf", noisy)
        return clean, noisy, None
    # Inpainting: a mask is mandatory ("which pixels are missing" is input).
    mask_path = cfg.get("mask_file")
    ratio = cfg.get("missing_ratio")
    if noisy_path and mask_path:
        corrupted = read_image(noisy_path)
        spec = CorruptionSpec(kind="mask_file", path=mask_path, seed=seed)
        corrupted, mask = corrupt(corrupted, spec, derive_rng(seed, _RNG_MASK))
        clean = read_image(clean_path) if clean_path else None
        return clean, corrupted, mask
    if not clean_path:
        raise ConfigError("inpaint needs image= plus mask_file=, or clean_image= with missing_ratio=/mask_file=")
    clean = read_image(clean_path)
    if mask_path:
        spec = CorruptionSpec(kind="mask_file", path=mask_path, seed=seed)
    elif ratio is not None:
        spec = CorruptionSpec(kind="random_missing", ratio=ratio, seed=seed)
    else:
        raise ConfigError("inpaint needs missing_ratio= or mask_file=")
    corrupted, mask = corrupt(clean, spec, derive_rng(seed, _RNG_MASK))
    write_image(out_dir / "corrupted.eemf", corrupted)
    return clean, corrupted, mask


def _restoration_run(cfg: RunConfig, out_dir: Path, mode: str) -> int:
    kind = normalize_kind(cfg.require("model"))
    if mode == "inpaint" and kind == "nor":
        raise ConfigError("binary-observable models have no pixel estimator")
    clean, corrupted, mask = _load_input_image(cfg, out_dir, mode)
    pw = cfg.require("patch_width")
    ph = cfg.require("patch_height")
    grid = PatchGrid(
        image_h=corrupted.height, image_w=corrupted.width,
        channels=corrupted.channels, patch_h=ph, patch_w=pw,
    )
    data, _ = extract_patches(corrupted, grid, mask)
    h = cfg.require("h")
    eem = _eem_config(cfg)
    seed = cfg.get("seed", 0)
    measure = fig5_measure_iterations(eem.iterations) if cfg.get("psnr_trace", False) else []
    psnr_rows: list[tuple[int, float]] = []

    def restore(params, sets) -> Image:
        values = predict_all(sets, params, data)
        return merge_patches(values, grid, corrupted, mode, mask=mask)

    def on_iteration(iteration, params, sets, f_per_n):
        if clean is not None and iteration in measure:
            psnr_rows.append((iteration, psnr(clean, restore(params, sets))))

    result = eem_fit(
        data, kind, h, eem, cfg.ea_config(),
        m_step_options=_m_step_options(cfg, kind, h, inpainting=(mode == "inpaint")),
        callback=on_iteration,
    )
    restored = restore(result.params, result.sets)
    write_image(out_dir / "restored.eemf", restored)
    preview = out_dir / ("restored.pgm" if restored.channels == 1 else "restored.ppm")
    write_image(preview, restored)
    _write_trace(out_dir, result.trace)
    _save_run_checkpoint(out_dir, result, seed, eem.iterations)
    write_manifest(out_dir, mode, cfg)

    if clean is not None:
        restored_db = psnr(clean, restored)
        rows = [("input", psnr(clean, corrupted)), ("restored", restored_db)]
        if mode == "inpaint":
            fill = corrupted.pixels.copy()
            fill[~mask] = corrupted.pixels[mask].mean()
            rows.append(("mean_fill_baseline", psnr(clean, Image(fill))))
        write_csv(out_dir / "psnr.csv", "which,psnr_db", rows)
        for which, val in rows:
            print(f"psnr_{which}={_fmt(val)}")
        if psnr_rows:
            write_csv(out_dir / "psnr_trace.csv", "iteration,psnr_db", psnr_rows)
    else:
        print("no clean reference given; psnr report omitted")
    return 0


def cmd_train(cfg: RunConfig, out_dir: Path) -> int:
    kind = normalize_kind(cfg.require("model"))
    image = read_image(cfg.require("image"))
    grid = PatchGrid(
        image_h=image.height, image_w=image.width, channels=image.channels,
        patch_h=cfg.require("patch_height"), patch_w=cfg.require("patch_width"),
    )
    data, _ = extract_patches(image, grid)
    h = cfg.require("h")
    eem = _eem_config(cfg)
    result = eem_fit(
        data, kind, h, eem, cfg.ea_config(),
        m_step_options=_m_step_options(cfg, kind, h, inpainting=False),
    )
    _write_trace(out_dir, result.trace)
    _save_run_checkpoint(out_dir, result, cfg.get("seed", 0), eem.iterations)
    write_manifest(out_dir, "train", cfg)
    print(f"final_free_energy_per_datapoint={_fmt(result.trace.values[-1])}")
    return 0


def cmd_sample(cfg: RunConfig, out_dir: Path, checkpoint_path: str) -> int:
    state = load_checkpoint(checkpoint_path)
    n = cfg.get("n", 100)
    model = get_model(state.kind)
    rng = derive_rng(cfg.get("seed", 0), _RNG_DATA)
    data, _ = model.sample(state.params, n, rng)
    write_image(out_dir / "samples.eemf", Image(data.Y[:, :, None]))
    write_manifest(out_dir, "sample", cfg)
    print(f"wrote {n} samples of dimension {data.d}")
    return 0


def cmd_eval(cfg: RunConfig, out_dir: Path, clean_path: str, candidate_path: str,
             mask_path: str | None) -> int:
    clean = read_image(clean_path)
    candidate = read_image(candidate_path)
    include = None
    if mask_path:
        mask_img = read_image(mask_path)
        if (mask_img.height, mask_img.width) != (clean.height, clean.width):
            raise ImageError("mask size does not match the images")
        include = np.all(mask_img.pixels == 0, axis=2)  # evaluate missing positions
    value = psnr(clean, candidate, include=include)
    write_csv(out_dir / "eval.csv", "psnr_db", [(value,)])
    print(f"psnr_db={_fmt(value)}")
    return 0


def _build_config(args) -> RunConfig:
    cfg = load_preset(args.preset) if args.preset else RunConfig()
    if args.config:
        file_cfg = parse_config_file(args.config)
        cfg.values.update(file_cfg.values)
    for item in args.set or []:
        if "=" not in item:
            raise ConfigError(f"--set expects key=value, got {item!r}")
        key, _, raw = item.partition("=")
        cfg.set(key.strip(), raw)
    if args.seed is not None:
        cfg.set("seed", args.seed)
    if args.threads is not None:
        cfg.set("threads", args.threads)
    if args.out is not None:
        cfg.set("out", args.out)
    return cfg


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="evoem",
        description="Evolutionary EM for noisy-OR, binary and spike-and-slab "
                    "sparse coding, with denoising and inpainting pipelines.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="key=value configuration file")
        p.add_argument("--preset", help="named preset; run 'evoem presets' for the list")
        p.add_argument("--seed", type=int, default=None)
        p.add_argument("--threads", type=int, default=None,
                       help="worker count (EVOEM_THREADS as fallback)")
        p.add_argument("--out", default=None, help="output directory")
        p.add_argument("--set", action="append", metavar="KEY=VALUE",
                       help="override a single configuration key")

    common(sub.add_parser("bars", help="bars verification run with recovery scoring"))
    common(sub.add_parser("train", help="fit a model on image patches"))
    common(sub.add_parser("denoise", help="zero-shot denoising of one image"))
    common(sub.add_parser("inpaint", help="zero-shot inpainting of one image"))
    p_eval = sub.add_parser("eval", help="PSNR between two images")
    common(p_eval)
    p_eval.add_argument("clean")
    p_eval.add_argument("candidate")
    p_eval.add_argument("--mask", default=None,
                        help="mask image; evaluation restricted to its zero pixels")
    p_sample = sub.add_parser("sample", help="draw data from a checkpoint")
    common(p_sample)
    p_sample.add_argument("checkpoint")
    sub.add_parser("presets", help="list available presets")

    args = parser.parse_args(argv)
    if args.command == "presets":
        for name in sorted(PRESETS):
            print(f"{name}: {PRESET_NOTES.get(name, '')}")
        return 0

    try:
        cfg = _build_config(args)
        out_dir = Path(cfg.get("out", "."))
        out_dir.mkdir(parents=True, exist_ok=True)
        if args.command == "bars":
            return cmd_bars(cfg, out_dir)
        if args.command == "train":
            return cmd_train(cfg, out_dir)
        if args.command == "denoise":
            return _restoration_run(cfg, out_dir, "denoise")
        if args.command == "inpaint":
            return _restoration_run(cfg, out_dir, "inpaint")
        if args.command == "sample":
            return cmd_sample(cfg, out_dir, args.checkpoint)
        if args.command == "eval":
            return cmd_eval(cfg, out_dir, args.clean, args.candidate, args.mask)
        parser.error(f"unknown command {args.command}")
    except (EvoEmError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
