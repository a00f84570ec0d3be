"""Images, bicubic degradation, Y-channel PSNR/SSIM and training patches.

Images are numpy arrays of shape (H, W, C), C in {1, 3}, float32 in [0, 1].
"""

from __future__ import annotations

import math
import warnings
from fractions import Fraction
from functools import lru_cache
from pathlib import Path
from typing import Iterator

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from PIL import Image

IMAGE_SUFFIXES = (".png",)


def as_image(img) -> np.ndarray:
    arr = np.asarray(img, dtype=np.float32)
    if arr.ndim == 2:
        arr = arr[:, :, None]
    if arr.ndim != 3 or arr.shape[2] not in (1, 3):
        raise ValueError(f"expected an H x W x {{1,3}} image, got shape {arr.shape}")
    if arr.shape[0] < 1 or arr.shape[1] < 1:
        raise ValueError(f"image dims must be >= 1, got {arr.shape}")
    return arr


# -- PNG I/O ---------------------------------------------------------------------

def load_png(path) -> np.ndarray:
    path = Path(path)
    try:
        with Image.open(path) as im:
            im.load()
            mode = "L" if im.mode in ("L", "I", "I;16", "1") else "RGB"
            arr = np.asarray(im.convert(mode), dtype=np.float32) / 255.0
    except (OSError, ValueError) as e:
        raise OSError(f"cannot read image {path}: {e}") from e
    return as_image(np.clip(arr, 0.0, 1.0))


def save_png(path, img) -> None:
    img = np.clip(as_image(img), 0.0, 1.0)
    q = np.round(img * 255.0).astype(np.uint8)
    if q.shape[2] == 1:
        Image.fromarray(q[:, :, 0], mode="L").save(path)
    else:
        Image.fromarray(q, mode="RGB").save(path)


def list_images(directory) -> list[Path]:
    directory = Path(directory)
    if not directory.is_dir():
        raise OSError(f"not a directory: {directory}")
    return sorted(p for p in directory.iterdir() if p.suffix.lower() in IMAGE_SUFFIXES)


def load_dir(directory) -> list[np.ndarray]:
    return [load_png(p) for p in list_images(directory)]


# -- bicubic resize ------------------------------------------------------------------

def cubic(x: np.ndarray, a: float = -0.5) -> np.ndarray:
    """Keys cubic convolution kernel; a = -0.5 is Catmull-Rom."""
    x = np.abs(x)
    x2, x3 = x * x, x * x * x
    near = (a + 2) * x3 - (a + 3) * x2 + 1
    far = a * x3 - 5 * a * x2 + 8 * a * x - 4 * a
    return np.where(x <= 1, near, np.where(x < 2, far, 0.0))


def _as_fraction(factor) -> Fraction:
    f = Fraction(factor).limit_denominator(1 << 20) if not isinstance(factor, Fraction) else factor
    if f <= 0:
        raise ValueError(f"resize factor must be > 0, got {factor}")
    return f


def resized_length(n: int, factor) -> int:
    return math.ceil(n * _as_fraction(factor))


@lru_cache(maxsize=256)
def resize_matrix(in_len: int, out_len: int, factor: Fraction) -> np.ndarray:
    """Dense (out_len, in_len) bicubic interpolation matrix.

    Pixel centres are aligned: output pixel i sits at input coordinate
    (i + 0.5) / factor - 0.5. When shrinking, the kernel is stretched by
    1/factor (antialiasing). Borders are mirrored; rows sum to 1.
    """
    s = float(factor)
    stretch = min(s, 1.0)
    support = 2.0 / stretch
    m = np.zeros((out_len, in_len))
    for i in range(out_len):
        centre = (i + 0.5) / s - 0.5
        taps = np.arange(math.floor(centre - support), math.ceil(centre + support) + 1)
        w = cubic((centre - taps) * stretch)
        keep = w != 0
        taps, w = taps[keep], w[keep]
        idx = np.where(taps < 0, -taps - 1, taps)
        idx = np.where(idx >= in_len, 2 * in_len - 1 - idx, idx)
        idx = np.clip(idx, 0, in_len - 1)
        np.add.at(m[i], idx, w)
    return m / m.sum(axis=1, keepdims=True)


def bicubic_resize(img, factor) -> np.ndarray:
    img = as_image(img)
    f = _as_fraction(factor)
    h, w = img.shape[:2]
    oh, ow = resized_length(h, f), resized_length(w, f)
    if oh < 1 or ow < 1:
        raise ValueError(f"resize of {h}x{w} by {factor} gives empty output")
    if f == 1:
        return img.copy()
    mh, mw = resize_matrix(h, oh, f), resize_matrix(w, ow, f)
    out = np.einsum("ih,hwc->iwc", mh, img.astype(np.float64))
    out = np.einsum("jw,iwc->ijc", mw, out)
    return out.astype(np.float32)


# -- colour & metrics ----------------------------------------------------------------

def rgb_to_y(img, full_range: bool = False) -> np.ndarray:
    """BT.601 luma of an RGB image in [0, 1], returned as H x W x 1.

    Limited range (default) maps to [16/255, 235/255].
    """
    img = np.asarray(img)
    if img.ndim != 3 or img.shape[2] != 3:
        raise ValueError(f"rgb_to_y needs an H x W x 3 image, got shape {img.shape}")
    x = img.astype(np.float64)
    r, g, b = x[..., 0], x[..., 1], x[..., 2]
    if full_range:
        y = 0.299 * r + 0.587 * g + 0.114 * b
    else:
        y = (65.481 * r + 128.553 * g + 24.966 * b + 16.0) / 255.0
    return y[..., None]


def _luma(img) -> np.ndarray:
    img = np.asarray(img)
    if img.ndim == 2:
        return img.astype(np.float64)
    if img.ndim == 3 and img.shape[2] == 1:
        return img[..., 0].astype(np.float64)
    return rgb_to_y(img)[..., 0]


def _crop(y: np.ndarray, border: int) -> np.ndarray:
    if border < 0:
        raise ValueError("border must be >= 0")
    out = y[border:y.shape[0] - border, border:y.shape[1] - border] if border else y
    if out.size == 0:
        raise ValueError(f"border crop of {border} leaves no pixels in a {y.shape[0]}x{y.shape[1]} image")
    return out


def psnr(a, b, border: int = 0) -> float:
    """Y-channel PSNR in dB for images in [0, 1]; +inf when identical.

    Single-channel inputs are taken to already be luma.
    """
    ya, yb = _luma(a), _luma(b)
    if ya.shape != yb.shape:
        raise ValueError(f"psnr: shape mismatch {ya.shape} vs {yb.shape}")
    d = _crop(ya, border) - _crop(yb, border)
    mse = float(np.mean(d * d))
    if mse == 0.0:
        return math.inf
    return 10.0 * math.log10(1.0 / mse)


def gaussian_window(size: int = 11, sigma: float = 1.5) -> np.ndarray:
    x = np.arange(size) - (size - 1) / 2.0
    g = np.exp(-(x * x) / (2 * sigma * sigma))
    return g / g.sum()


def _filter_valid(x: np.ndarray, g: np.ndarray) -> np.ndarray:
    k = len(g)
    x = sliding_window_view(x, k, axis=0) @ g
    return sliding_window_view(x, k, axis=1) @ g


def ssim(a, b, border: int = 0, window: int = 11, sigma: float = 1.5,
         k1: float = 0.01, k2: float = 0.03) -> float:
    """Mean local SSIM on Y with a Gaussian window, dynamic range 1."""
    ya, yb = _crop(_luma(a), border), _crop(_luma(b), border)
    if ya.shape != yb.shape:
        raise ValueError(f"ssim: shape mismatch {ya.shape} vs {yb.shape}")
    if min(ya.shape) < window:
        raise ValueError(f"ssim: image {ya.shape[0]}x{ya.shape[1]} smaller than the {window}x{window} window")
    g = gaussian_window(window, sigma)
    c1, c2 = k1 ** 2, k2 ** 2
    mu_a, mu_b = _filter_valid(ya, g), _filter_valid(yb, g)
    var_a = _filter_valid(ya * ya, g) - mu_a * mu_a
    var_b = _filter_valid(yb * yb, g) - mu_b * mu_b
    cov = _filter_valid(ya * yb, g) - mu_a * mu_b
    num = (2 * mu_a * mu_b + c1) * (2 * cov + c2)
    den = (mu_a * mu_a + mu_b * mu_b + c1) * (var_a + var_b + c2)
    return float(np.mean(num / den))


# -- training patches ----------------------------------------------------------------

def crop_pair(hr, top: int, left: int, patch: int, scale: int) -> tuple[np.ndarray, np.ndarray]:
    """HR crop at (top, left) and its bicubic-downscaled LR counterpart."""
    hr_patch = as_image(hr)[top:top + patch, left:left + patch]
    return bicubic_resize(hr_patch, Fraction(1, scale)), hr_patch


def _augment(img: np.ndarray, code: int) -> np.ndarray:
    if code & 1:
        img = img[:, ::-1]
    if code & 2:
        img = img[::-1, :]
    if code & 4:
        img = img.transpose(1, 0, 2)
    return np.ascontiguousarray(img)


class PatchSampler:
    """Seeded stream of (LR, HR) training patches drawn from a set of images.

    Patches are HWC float32; ``batch`` stacks them into NCHW arrays.
    """

    def __init__(self, images, patch: int = 48, scale: int = 2, seed: int = 0, augment: bool = True):
        if patch % scale:
            raise ValueError(f"patch {patch} not divisible by scale {scale}")
        usable = []
        for i, img in enumerate(images):
            img = as_image(img)
            if img.shape[0] < patch or img.shape[1] < patch:
                warnings.warn(f"image {i} ({img.shape[0]}x{img.shape[1]}) smaller than patch {patch}; skipped")
                continue
            usable.append(img)
        if not usable:
            raise ValueError("no images large enough for the requested patch size")
        self.images = usable
        self.patch, self.scale, self.augment = patch, scale, augment
        self.rng = np.random.default_rng(seed)

    @classmethod
    def from_dir(cls, hr_dir, **kw) -> PatchSampler:
        return cls(load_dir(hr_dir), **kw)

    def __len__(self) -> int:
        return len(self.images)

    def sample(self) -> tuple[np.ndarray, np.ndarray]:
        img = self.images[self.rng.integers(len(self.images))]
        top = int(self.rng.integers(img.shape[0] - self.patch + 1))
        left = int(self.rng.integers(img.shape[1] - self.patch + 1))
        hr = img[top:top + self.patch, left:left + self.patch]
        if self.augment:
            hr = _augment(hr, int(self.rng.integers(8)))
        return bicubic_resize(hr, Fraction(1, self.scale)), hr

    def __iter__(self) -> Iterator[tuple[np.ndarray, np.ndarray]]:
        while True:
            yield self.sample()

    def batch(self, n: int) -> tuple[np.ndarray, np.ndarray]:
        pairs = [self.sample() for _ in range(n)]
        lr = np.stack([p[0] for p in pairs]).transpose(0, 3, 1, 2)
        hr = np.stack([p[1] for p in pairs]).transpose(0, 3, 1, 2)
        return np.ascontiguousarray(lr), np.ascontiguousarray(hr)


def sample_patches(hr_dir, patch: int, scale: int, seed: int, augment: bool = True):
    """Endless seeded (LR, HR) patch stream from the PNGs in ``hr_dir``."""
    return iter(PatchSampler.from_dir(hr_dir, patch=patch, scale=scale, seed=seed, augment=augment))


def to_nchw(img) -> np.ndarray:
    return np.ascontiguousarray(as_image(img).transpose(2, 0, 1)[None])


def from_nchw(x) -> np.ndarray:
    return np.ascontiguousarray(np.asarray(x)[0].transpose(1, 2, 0))


def mod_crop(img, scale: int) -> np.ndarray:
    img = as_image(img)
    h, w = img.shape[0] - img.shape[0] % scale, img.shape[1] - img.shape[1] % scale
    return img[:h, :w]


# -- synthetic toy images -------------------------------------------------------------

def synthetic_image(size: int, rng: np.random.Generator) -> np.ndarray:
    """Smooth colour field plus hard-edged discs, bars and a stripe patch."""
    yy, xx = np.mgrid[0:size, 0:size] / size
    img = np.zeros((size, size, 3))
    for c in range(3):
        fx, fy, ph = rng.uniform(0.5, 2.5), rng.uniform(0.5, 2.5), rng.uniform(0, 2 * np.pi)
        img[..., c] = 0.5 + 0.25 * np.sin(2 * np.pi * (fx * xx + fy * yy) + ph)
    for _ in range(rng.integers(3, 7)):
        cy, cx, rad = rng.uniform(0, 1), rng.uniform(0, 1), rng.uniform(0.05, 0.25)
        mask = (yy - cy) ** 2 + (xx - cx) ** 2 < rad ** 2
        img[mask] = rng.uniform(0, 1, 3)
    for _ in range(rng.integers(1, 4)):
        y0, x0 = rng.uniform(0, 0.8, 2)
        h, w = rng.uniform(0.05, 0.3, 2)
        mask = (yy >= y0) & (yy < y0 + h) & (xx >= x0) & (xx < x0 + w)
        img[mask] = rng.uniform(0, 1, 3)
    period = int(rng.integers(3, 7))
    y0, x0 = rng.integers(0, size // 2, 2)
    ext = size // 3
    stripes = ((np.arange(ext) // (period // 2 + 1)) % 2).astype(float)
    if rng.integers(2):
        block = np.broadcast_to(stripes[None, :, None], (ext, ext, 1))
    else:
        block = np.broadcast_to(stripes[:, None, None], (ext, ext, 1))
    region = img[y0:y0 + ext, x0:x0 + ext]
    region[:] = 0.2 + 0.6 * block[:region.shape[0], :region.shape[1]]
    return np.clip(img, 0, 1).astype(np.float32)


def synthetic_images(n: int, size: int = 64, seed: int = 0) -> list[np.ndarray]:
    rng = np.random.default_rng(seed)
    return [synthetic_image(size, rng) for _ in range(n)]


def write_synthetic_dataset(directory, n: int, size: int = 64, seed: int = 0) -> list[Path]:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    paths = []
    for i, img in enumerate(synthetic_images(n, size, seed)):
        p = directory / f"{i:04d}.png"
        save_png(p, img)
        paths.append(p)
    return paths
