"""Image restoration plumbing: corruption, sliding-window patching, overlap
merging, PSNR and image I/O.

Images are real-valued internally (h, w, c) float64 arrays on the 0..255
scale; quantization to 8 bit happens only at PGM/PPM export. The EEMF
sidecar container stores the raw float buffer losslessly.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass

import numpy as np

from .datasets import DataSet
from .errors import EvoEmError

EEMF_MAGIC = b"EEMF"


class ImageError(EvoEmError):
    pass


@dataclass
class Image:
    pixels: np.ndarray  # (h, w, c) float64

    def __post_init__(self):
        self.pixels = np.asarray(self.pixels, dtype=np.float64)
        if self.pixels.ndim == 2:
            self.pixels = self.pixels[:, :, None]
        if self.pixels.ndim != 3 or self.pixels.shape[2] not in (1, 3):
            raise ImageError("images are (h, w) or (h, w, c) with 1 or 3 channels")

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    @property
    def channels(self) -> int:
        return self.pixels.shape[2]


@dataclass
class PatchGrid:
    """All sliding-window positions of a patch over an image."""

    image_h: int
    image_w: int
    channels: int
    patch_h: int
    patch_w: int

    def __post_init__(self):
        if self.patch_h > self.image_h or self.patch_w > self.image_w:
            raise ImageError("patch larger than image")

    @property
    def ny(self) -> int:
        return self.image_h - self.patch_h + 1

    @property
    def nx(self) -> int:
        return self.image_w - self.patch_w + 1

    @property
    def count(self) -> int:
        return self.nx * self.ny

    @property
    def patch_dim(self) -> int:
        return self.patch_h * self.patch_w * self.channels

    def origins(self) -> list[tuple[int, int]]:
        """(x, y) origins, x varying fastest."""
        return [(x, y) for y in range(self.ny) for x in range(self.nx)]


@dataclass
class CorruptionSpec:
    kind: str  # awg | random_missing | mask_file
    sigma: float | None = None
    ratio: float | None = None
    path: str | None = None
    seed: int = 0

    def __post_init__(self):
        if self.kind == "awg":
            if self.sigma is None or self.sigma <= 0:
                raise ImageError("awg corruption needs sigma > 0")
        elif self.kind == "random_missing":
            if self.ratio is None or not 0.0 < self.ratio < 1.0:
                raise ImageError("random_missing needs a ratio in (0, 1)")
        elif self.kind == "mask_file":
            if not self.path:
                raise ImageError("mask_file corruption needs a path")
        else:
            raise ImageError(f"unknown corruption kind {self.kind!r}")


def extract_patches(image: Image, grid: PatchGrid, mask: np.ndarray | None = None):
    """Cut all sliding-window patches into a DataSet, one flattened patch per
    row (row-major within the patch, channels interleaved). A (h, w) pixel
    mask is carried through per entry."""
    if (grid.image_h, grid.image_w, grid.channels) != (
        image.height, image.width, image.channels
    ):
        raise ImageError("grid does not describe this image")
    win = np.lib.stride_tricks.sliding_window_view(
        image.pixels, (grid.patch_h, grid.patch_w), axis=(0, 1)
    )  # (ny, nx, c, ph, pw)
    rows = np.ascontiguousarray(win.transpose(0, 1, 3, 4, 2)).reshape(
        grid.count, grid.patch_dim
    )
    patch_mask = None
    if mask is not None:
        mask = np.asarray(mask, dtype=bool)
        if mask.shape != (image.height, image.width):
            raise ImageError("mask shape does not match the image")
        mask3 = np.repeat(mask[:, :, None], image.channels, axis=2)
        mwin = np.lib.stride_tricks.sliding_window_view(
            mask3, (grid.patch_h, grid.patch_w), axis=(0, 1)
        )
        patch_mask = np.ascontiguousarray(mwin.transpose(0, 1, 3, 4, 2)).reshape(
            grid.count, grid.patch_dim
        )
    return DataSet(rows, patch_mask), grid


def merge_patches(values: np.ndarray, grid: PatchGrid, original: Image, mode: str,
                  mask: np.ndarray | None = None) -> Image:
    """Recombine per-patch estimates into an image.

    mode "denoise" averages all covering estimates at every pixel; mode
    "inpaint" replaces only missing pixels (mask False) with the average and
    copies observed pixels verbatim from the original.
    """
    if mode not in ("denoise", "inpaint"):
        raise ImageError(f"unknown merge mode {mode!r}")
    values = np.asarray(values, dtype=np.float64)
    if values.shape != (grid.count, grid.patch_dim):
        raise ImageError("need one reconstruction row per patch")
    vals = values.reshape(grid.ny, grid.nx, grid.patch_h, grid.patch_w, grid.channels)
    acc = np.zeros((grid.image_h, grid.image_w, grid.channels))
    cnt = np.zeros((grid.image_h, grid.image_w))
    for py in range(grid.patch_h):
        for px in range(grid.patch_w):
            acc[py:py + grid.ny, px:px + grid.nx] += vals[:, :, py, px, :]
            cnt[py:py + grid.ny, px:px + grid.nx] += 1.0
    if mode == "denoise":
        return Image(acc / cnt[:, :, None])
    if mask is None:
        raise ImageError("inpaint merging needs the observation mask")
    mask = np.asarray(mask, dtype=bool)
    missing = ~mask
    if not (cnt[missing] > 0).all():
        raise ImageError("a missing pixel is covered by no patch")
    avg = acc / np.maximum(cnt, 1.0)[:, :, None]
    return Image(np.where(missing[:, :, None], avg, original.pixels))


def corrupt(image: Image, spec: CorruptionSpec, rng: np.random.Generator):
    """Apply a corruption; returns (corrupted image, observation mask).

    The mask is (h, w) with True at observed positions; a missing position
    loses all channels. AWG noise keeps everything observed and unclamped.
    """
    h, w = image.height, image.width
    if spec.kind == "awg":
        noisy = image.pixels + rng.normal(0.0, spec.sigma, size=image.pixels.shape)
        return Image(noisy), np.ones((h, w), dtype=bool)
    if spec.kind == "random_missing":
        n_missing = math.ceil(spec.ratio * h * w)
        flat = rng.choice(h * w, size=n_missing, replace=False)
        mask = np.ones(h * w, dtype=bool)
        mask[flat] = False
        mask = mask.reshape(h, w)
    else:
        mask_img = read_image(spec.path)
        if (mask_img.height, mask_img.width) != (h, w):
            raise ImageError(
                f"mask size {mask_img.width}x{mask_img.height} does not match "
                f"image size {w}x{h}"
            )
        mask = ~np.all(mask_img.pixels == 0, axis=2)
    corrupted = np.where(mask[:, :, None], image.pixels, 0.0)
    return Image(corrupted), mask


def psnr(reference: Image, candidate: Image, include: np.ndarray | None = None) -> float:
    """Peak signal-to-noise ratio in dB against an 8-bit peak of 255.

    include optionally selects the (h, w) positions entering the MSE; zero
    MSE maps to +inf.
    """
    if reference.pixels.shape != candidate.pixels.shape:
        raise ImageError("image dimensions differ")
    diff = reference.pixels - candidate.pixels
    if include is not None:
        include = np.asarray(include, dtype=bool)
        if include.shape != (reference.height, reference.width):
            raise ImageError("selection shape does not match the images")
        if not include.any():
            raise ImageError("empty selection")
        diff = diff[include]
    mse = float(np.mean(diff * diff))
    if mse == 0.0:
        return float("inf")
    return 10.0 * math.log10(255.0 ** 2 / mse)


# ---------------------------------------------------------------------------
# File formats: 8-bit PGM (P5) / PPM (P6) and the lossless EEMF sidecar
# (magic "EEMF", u32-LE width/height/channels, f64-LE pixels, row-major,
# channel-interleaved).
# ---------------------------------------------------------------------------


def _read_pnm_tokens(buf: bytes, count: int):
    tokens, pos = [], 2  # skip magic
    while len(tokens) < count:
        if pos >= len(buf):
            raise ImageError("malformed header")
        ch = buf[pos:pos + 1]
        if ch == b"#":
            pos = buf.find(b"\n", pos)
            if pos < 0:
                raise ImageError("malformed header")
            continue
        if ch.isspace():
            pos += 1
            continue
        end = pos
        while end < len(buf) and not buf[end:end + 1].isspace():
            end += 1
        tokens.append(buf[pos:end])
        pos = end
    return tokens, pos + 1  # single whitespace after maxval


def read_image(path) -> Image:
    with open(path, "rb") as fh:
        buf = fh.read()
    if buf[:4] == EEMF_MAGIC:
        if len(buf) < 16:
            raise ImageError("truncated EEMF header")
        w, h, c = struct.unpack("<III", buf[4:16])
        need = 16 + 8 * w * h * c
        if len(buf) < need:
            raise ImageError("truncated EEMF payload")
        pix = np.frombuffer(buf[16:need], dtype="<f8").reshape(h, w, c)
        return Image(pix.copy())
    if buf[:2] in (b"P5", b"P6"):
        channels = 1 if buf[:2] == b"P5" else 3
        tokens, start = _read_pnm_tokens(buf, 3)
        try:
            w, h, maxval = (int(t) for t in tokens)
        except ValueError as exc:
            raise ImageError("malformed header") from exc
        if maxval != 255:
            raise ImageError(f"only 8-bit images supported, maxval={maxval}")
        need = w * h * channels
        payload = buf[start:start + need]
        if len(payload) < need:
            raise ImageError("truncated payload")
        pix = np.frombuffer(payload, dtype=np.uint8).astype(np.float64)
        return Image(pix.reshape(h, w, channels))
    raise ImageError(f"unrecognized image format in {path}")


def write_image(path, image: Image):
    path = str(path)
    if path.endswith(".eemf"):
        with open(path, "wb") as fh:
            fh.write(EEMF_MAGIC)
            fh.write(struct.pack("<III", image.width, image.height, image.channels))
            fh.write(np.ascontiguousarray(image.pixels, dtype="<f8").tobytes())
        return
    if path.endswith(".pgm") and image.channels != 1:
        raise ImageError("PGM holds grayscale images only")
    if path.endswith(".ppm") and image.channels != 3:
        raise ImageError("PPM holds RGB images only")
    if not (path.endswith(".pgm") or path.endswith(".ppm")):
        raise ImageError("supported output formats: .pgm, .ppm, .eemf")
    magic = b"P5" if image.channels == 1 else b"P6"
    # Half-to-even rounding, then clamp into the 8-bit range.
    quant = np.clip(np.rint(image.pixels), 0, 255).astype(np.uint8)
    with open(path, "wb") as fh:
        fh.write(magic + b"\n%d %d\n255\n" % (image.width, image.height))
        fh.write(quant.tobytes())
