"""Run configuration: flat key=value files, presets, and the EA tag grammar.

Presets come in two families: verbatim rows of the published experiment
settings (hours to days of compute on many cores) and clearly labeled desk
presets sized for a single workstation.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from .errors import ConfigError
from .evolution import EaConfig

_BOOL_TRUE = {"1", "true", "yes", "on"}
_BOOL_FALSE = {"0", "false", "no", "off"}

_SCHEMA: dict[str, type] = {
    "model": str,
    "ea": str,
    "s": int,
    "iterations": int,
    "seed": int,
    "threads": int,
    "log_every": int,
    "h": int,
    "n_parents": int,
    "n_mutations": int,
    "n_generations": int,
    "p_bf": float,
    "crossover_mutation": str,
    "patch_width": int,
    "patch_height": int,
    "sigma": float,
    "missing_ratio": float,
    "mask_file": str,
    "image": str,
    "clean_image": str,
    "out": str,
    "bars_r": int,
    "n": int,
    "pi_floor": str,  # "none", "1/h" or a number
    "sssc_sigma2_update": str,
    "mu_psi_frozen": bool,
    "psnr_trace": bool,
}


@dataclass
class RunConfig:
    values: dict = field(default_factory=dict)

    def set(self, key: str, raw, line: int | None = None):
        where = f" (line {line})" if line is not None else ""
        if key not in _SCHEMA:
            raise ConfigError(f"unknown configuration key {key!r}{where}")
        kind = _SCHEMA[key]
        if isinstance(raw, str):
            raw = raw.strip()
            try:
                if kind is bool:
                    low = raw.lower()
                    if low in _BOOL_TRUE:
                        value = True
                    elif low in _BOOL_FALSE:
                        value = False
                    else:
                        raise ValueError(raw)
                else:
                    value = kind(raw)
            except ValueError:
                raise ConfigError(
                    f"cannot parse value {raw!r} for key {key!r}{where}"
                ) from None
        else:
            value = kind(raw)
        self.values[key] = value

    def update(self, other: dict):
        for key, val in other.items():
            self.set(key, val)

    def get(self, key: str, default=None):
        if key not in _SCHEMA:
            raise ConfigError(f"unknown configuration key {key!r}")
        return self.values.get(key, default)

    def require(self, key: str):
        if key not in self.values:
            raise ConfigError(f"missing required configuration key {key!r}")
        return self.values[key]

    def ea_config(self) -> EaConfig:
        kwargs = {}
        for src, dst in (
            ("n_parents", "n_parents"),
            ("n_mutations", "n_mutations"),
            ("n_generations", "n_generations"),
            ("p_bf", "p_bf"),
            ("crossover_mutation", "crossover_mutation"),
        ):
            if src in self.values:
                kwargs[dst] = self.values[src]
        return EaConfig.from_tag(self.get("ea", "fitparents-randflips"), **kwargs)

    def pi_floor(self, h: int) -> float | None:
        raw = self.get("pi_floor", "none")
        if raw is None or raw.lower() == "none":
            return None
        if raw.replace(" ", "") == "1/h":
            return 1.0 / h
        try:
            return float(raw)
        except ValueError:
            raise ConfigError(f"cannot parse pi_floor value {raw!r}") from None

    def manifest_lines(self) -> list[str]:
        return [f"{k}={self.values[k]}" for k in sorted(self.values)]


def parse_config_file(path) -> RunConfig:
    cfg = RunConfig()
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            stripped = line.strip()
            if not stripped or stripped.startswith("#"):
                continue
            if "=" not in stripped:
                raise ConfigError(f"expected key=value on line {lineno} of {path}")
            key, _, raw = stripped.partition("=")
            cfg.set(key.strip(), raw, line=lineno)
    return cfg


# ---------------------------------------------------------------------------
# Presets. The first family restates the published verification, denoising
# and inpainting rows verbatim (S, N_p, N_m, N_g, D, H, iterations); the
# desk family is sized for a single workstation.
# ---------------------------------------------------------------------------

_BARS_COMMON = {"bars_r": 5, "n": 5000, "h": 10, "s": 20, "n_parents": 5,
                "n_mutations": 4, "n_generations": 2, "iterations": 300}

PRESETS: dict[str, dict] = {
    # Bars verification (one per model, the best operator combination).
    "bars-nor": {**_BARS_COMMON, "model": "nor", "ea": "randparents-cross-sparseflips"},
    "bars-bsc": {**_BARS_COMMON, "model": "bsc", "ea": "fitparents-cross-sparseflips"},
    "bars-sssc": {**_BARS_COMMON, "model": "sssc", "ea": "fitparents-randflips"},
    # Natural-image dictionary runs.
    "hateren-nor": {"model": "nor", "patch_width": 10, "patch_height": 10, "h": 100,
                    "ea": "fitparents-cross-sparseflips", "s": 120, "n_parents": 8,
                    "n_generations": 2, "iterations": 200, "pi_floor": "1/h"},
    "hateren-bsc": {"model": "bsc", "patch_width": 16, "patch_height": 16, "h": 300,
                    "ea": "fitparents-cross-sparseflips", "s": 200, "n_parents": 10,
                    "n_generations": 4, "iterations": 4000},
    "hateren-sssc": {"model": "sssc", "patch_width": 12, "patch_height": 12, "h": 512,
                     "ea": "fitparents-cross-sparseflips", "s": 60, "n_parents": 6,
                     "n_generations": 2, "iterations": 2000},
    # Denoising benchmark rows.
    "denoise-house-bound-es3c": {"model": "es3c", "sigma": 50.0, "patch_width": 8,
                                 "patch_height": 8, "h": 256, "ea": "fitparents-randflips",
                                 "s": 60, "n_parents": 6, "n_mutations": 5,
                                 "n_generations": 2, "iterations": 2000, "psnr_trace": True},
    "denoise-house-ebsc": {"model": "ebsc", "sigma": 50.0, "patch_width": 8,
                           "patch_height": 8, "h": 256, "ea": "fitparents-randflips",
                           "s": 200, "n_parents": 10, "n_mutations": 9,
                           "n_generations": 4, "iterations": 4000},
    "denoise-house-es3c": {"model": "es3c", "sigma": 50.0, "patch_width": 12,
                           "patch_height": 12, "h": 512, "ea": "fitparents-randflips",
                           "s": 60, "n_parents": 60, "n_mutations": 1,
                           "n_generations": 1, "iterations": 4000},
    "denoise-peppers-es3c": {"model": "es3c", "sigma": 25.0, "patch_width": 10,
                             "patch_height": 10, "h": 800, "ea": "fitparents-randflips",
                             "s": 40, "n_parents": 30, "n_mutations": 1,
                             "n_generations": 1, "iterations": 6000},
    # Inpainting benchmark rows.
    "inpaint-house-50": {"model": "es3c", "missing_ratio": 0.5, "patch_width": 12,
                         "patch_height": 12, "h": 512, "ea": "fitparents-randflips",
                         "s": 30, "n_parents": 20, "n_mutations": 1,
                         "n_generations": 1, "iterations": 4000, "mu_psi_frozen": True},
    "inpaint-house-80": {"model": "es3c", "missing_ratio": 0.8, "patch_width": 15,
                         "patch_height": 15, "h": 512, "ea": "fitparents-randflips",
                         "s": 30, "n_parents": 20, "n_mutations": 1,
                         "n_generations": 1, "iterations": 500, "mu_psi_frozen": True},
    "inpaint-castle-50": {"model": "es3c", "missing_ratio": 0.5, "patch_width": 7,
                          "patch_height": 7, "h": 900, "ea": "fitparents-randflips",
                          "s": 30, "n_parents": 20, "n_mutations": 1,
                          "n_generations": 1, "iterations": 2000, "mu_psi_frozen": True},
    "inpaint-castle-80": {"model": "es3c", "missing_ratio": 0.8, "patch_width": 7,
                          "patch_height": 7, "h": 900, "ea": "fitparents-randflips",
                          "s": 60, "n_parents": 60, "n_mutations": 1,
                          "n_generations": 1, "iterations": 200, "mu_psi_frozen": True},
    "inpaint-text": {"model": "es3c", "patch_width": 14, "patch_height": 14, "h": 900,
                     "ea": "fitparents-randflips", "s": 60, "n_parents": 60,
                     "n_mutations": 1, "n_generations": 1, "iterations": 3000,
                     "mu_psi_frozen": True},
    # Desk-scale presets (reduced H, S and iterations; minutes, not core-days).
    "denoise-ebsc-desk": {"model": "ebsc", "patch_width": 8, "patch_height": 8,
                          "h": 64, "ea": "fitparents-randflips", "s": 40,
                          "n_parents": 8, "n_mutations": 5, "n_generations": 1,
                          "iterations": 100, "psnr_trace": True},
    "house-s50-es3c-small": {"model": "es3c", "sigma": 50.0, "patch_width": 8,
                             "patch_height": 8, "h": 64, "ea": "fitparents-randflips",
                             "s": 40, "n_parents": 8, "n_mutations": 5,
                             "n_generations": 1, "iterations": 100, "psnr_trace": True},
    "inpaint-es3c-desk": {"model": "es3c", "missing_ratio": 0.5, "patch_width": 8,
                          "patch_height": 8, "h": 64, "ea": "fitparents-randflips",
                          "s": 40, "n_parents": 8, "n_mutations": 5,
                          "n_generations": 1, "iterations": 100, "mu_psi_frozen": True},
}

PRESET_NOTES = {
    "bars-nor": "bars verification, noisy-OR, best operator combination",
    "bars-bsc": "bars verification, BSC",
    "bars-sssc": "bars verification, SSSC",
    "hateren-nor": "full-scale natural-image run (large compute)",
    "hateren-bsc": "full-scale natural-image run (large compute)",
    "hateren-sssc": "full-scale natural-image run (large compute)",
    "denoise-house-bound-es3c": "full-scale bound-vs-PSNR run (large compute)",
    "denoise-house-ebsc": "full-scale benchmark row (large compute)",
    "denoise-house-es3c": "full-scale benchmark row (large compute)",
    "denoise-peppers-es3c": "full-scale benchmark row (large compute)",
    "inpaint-house-50": "full-scale benchmark row (large compute)",
    "inpaint-house-80": "full-scale benchmark row (large compute)",
    "inpaint-castle-50": "full-scale benchmark row (large compute)",
    "inpaint-castle-80": "full-scale benchmark row (large compute)",
    "inpaint-text": "full-scale text-mask benchmark row (large compute)",
    "denoise-ebsc-desk": "desk-scale denoising, single workstation",
    "house-s50-es3c-small": "desk-scale denoising, single workstation",
    "inpaint-es3c-desk": "desk-scale inpainting, single workstation",
}


def load_preset(name: str) -> RunConfig:
    try:
        values = PRESETS[name]
    except KeyError:
        known = ", ".join(sorted(PRESETS))
        raise ConfigError(f"unknown preset {name!r}; known presets: {known}") from None
    cfg = RunConfig()
    cfg.update(values)
    return cfg
