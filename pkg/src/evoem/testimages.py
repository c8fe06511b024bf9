"""Deterministic synthetic benchmark images.

The classic 8-bit test photographs are not bundled, so the workstation
benchmarks render a structured stand-in scene (flat regions, strong edges,
smooth gradients and mild texture) plus block-letter masks for text
inpainting. Everything is a pure function of its arguments.
"""

from __future__ import annotations

import numpy as np

from .imaging import Image

_FONT_5X7 = {
    "E": ["#####", "#....", "#....", "####.", "#....", "#....", "#####"],
    "V": ["#...#", "#...#", "#...#", "#...#", "#...#", ".#.#.", "..#.."],
    "O": [".###.", "#...#", "#...#", "#...#", "#...#", "#...#", ".###."],
    "M": ["#...#", "##.##", "#.#.#", "#.#.#", "#...#", "#...#", "#...#"],
    "X": ["#...#", "#...#", ".#.#.", "..#..", ".#.#.", "#...#", "#...#"],
    "T": ["#####", "..#..", "..#..", "..#..", "..#..", "..#..", "..#.."],
    "+": [".....", "..#..", "..#..", "#####", "..#..", "..#..", "....."],
}


def house_scene(size: int = 256) -> Image:
    """Grayscale house-like scene on the 0..255 scale, (size, size, 1)."""
    n = size
    yy, xx = np.mgrid[0:n, 0:n].astype(np.float64) / (n - 1)
    # Sky gradient.
    img = 200.0 - 60.0 * yy
    # Sun.
    sun = (xx - 0.8) ** 2 + (yy - 0.15) ** 2 < 0.006
    img[sun] = 245.0
    # Ground with gentle texture.
    ground = yy > 0.78
    img[ground] = 95.0 + 12.0 * np.sin(14.0 * np.pi * xx[ground]) * np.sin(
        23.0 * np.pi * yy[ground]
    )
    # House body.
    body = (xx > 0.22) & (xx < 0.62) & (yy > 0.45) & (yy < 0.80)
    img[body] = 150.0
    # Roof triangle.
    roof = (yy > 0.28) & (yy < 0.45) & (np.abs(xx - 0.42) < (yy - 0.26) * 1.3)
    img[roof] = 70.0
    # Door and windows.
    door = (xx > 0.38) & (xx < 0.47) & (yy > 0.62) & (yy < 0.80)
    img[door] = 55.0
    for wx in (0.27, 0.52):
        win = (xx > wx) & (xx < wx + 0.08) & (yy > 0.50) & (yy < 0.58)
        img[win] = 230.0
    # Fence posts: thin vertical structures on the ground.
    fence = (yy > 0.82) & (yy < 0.90) & (np.mod(np.floor(xx * 40), 4) == 0) & (xx > 0.66)
    img[fence] = 180.0
    return Image(img[:, :, None])


def text_mask(height: int, width: int, text: str = "EVOEM", scale: int = 3,
              spacing: int = 12) -> np.ndarray:
    """(h, w) bool mask, False where block letters cover pixels.

    Lines of text are repeated down the image, mimicking overlaid-text
    corruption with contiguous missing regions.
    """
    mask = np.ones((height, width), dtype=bool)
    glyph_h, glyph_w = 7 * scale, 5 * scale
    step_y = glyph_h + spacing
    y = spacing // 2
    while y + glyph_h < height:
        x = spacing // 2
        for ch in text:
            glyph = _FONT_5X7.get(ch.upper())
            if glyph is None:
                glyph = ["#####"] * 7
            for gy, row in enumerate(glyph):
                for gx, c in enumerate(row):
                    if c == "#":
                        mask[
                            y + gy * scale: y + (gy + 1) * scale,
                            x + gx * scale: x + (gx + 1) * scale,
                        ] = False
            x += glyph_w + scale
            if x + glyph_w >= width:
                break
        y += step_y
    return mask
