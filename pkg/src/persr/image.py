"""Image I/O, colorimetry, bicubic resampling, crops, and synthetic data.

Images are H x W x 3 float arrays in [0, 1]. Resampling builds one dense
row-normalized matrix per axis from the cubic convolution kernel (a = -0.5,
widened by 1/scale when shrinking); the same matrices feed the differentiable
resample op, so both code paths produce identical numbers.
"""
from __future__ import annotations

import functools
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image as _PILImage
from scipy import ndimage

from .autodiff import Tensor
from .losses import ScoreDistribution, gaussian_to_bins

__all__ = [
    "ImageError", "ImageRGB", "PatchPair", "ScoredImage",
    "load_image", "save_image", "rgb_to_y601",
    "resize_matrix", "bicubic_resize", "random_crop_pair",
    "synth_sr_dataset", "synth_scored_dataset", "score_mean_for_strength",
    "read_manifest", "list_pngs", "images_to_tensor", "tensor_to_images",
]

# ITU-R BT.601 studio-swing luma coefficients for [0,1] RGB
_Y601 = np.array([65.481, 128.553, 24.966])
_Y601_OFFSET = 16.0


class ImageError(ValueError):
    """Bad image data or an unreadable file."""


@dataclass
class ImageRGB:
    """An RGB image with float64 channel values clamped to [0, 1]."""

    data: np.ndarray

    def __post_init__(self):
        arr = np.asarray(self.data, dtype=np.float64)
        if arr.ndim != 3 or arr.shape[2] != 3:
            raise ImageError(f"ImageRGB needs an HxWx3 array, got shape {arr.shape}")
        if arr.shape[0] < 1 or arr.shape[1] < 1:
            raise ImageError(f"ImageRGB needs positive dimensions, got {arr.shape}")
        self.data = np.clip(arr, 0.0, 1.0)

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]


@dataclass
class PatchPair:
    """A low-res patch and the high-res patch it came from."""

    lr: ImageRGB
    hr: ImageRGB
    scale: int

    def __post_init__(self):
        if self.hr.height != self.lr.height * self.scale or self.hr.width != self.lr.width * self.scale:
            raise ImageError(
                f"patch pair mismatch: lr {self.lr.height}x{self.lr.width} * {self.scale} "
                f"!= hr {self.hr.height}x{self.hr.width}")


@dataclass
class ScoredImage:
    """An image with a ground-truth quality score distribution over bins 1..10."""

    image: ImageRGB
    score_dist: ScoreDistribution


def load_image(path) -> ImageRGB:
    path = Path(path)
    try:
        with _PILImage.open(path) as im:
            arr = np.asarray(im.convert("RGB"), dtype=np.float64)
    except Exception as err:
        raise ImageError(f"cannot read image {path}: {err}") from err
    return ImageRGB(arr / 255.0)


def save_image(image: ImageRGB, path) -> None:
    """Write an 8-bit RGB PNG; values are rounded, so a round trip moves any
    channel by at most 1/510."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    arr = np.round(image.data * 255.0).astype(np.uint8)
    _PILImage.fromarray(arr, mode="RGB").save(path, format="PNG")


def rgb_to_y601(image: ImageRGB) -> np.ndarray:
    """Luma plane on the studio-swing 16..235 scale, as float64."""
    return _Y601_OFFSET + image.data @ _Y601


# ---------------------------------------------------------------- resampling

def _cubic(t: np.ndarray) -> np.ndarray:
    # cubic convolution kernel with a = -0.5
    at = np.abs(t)
    at2, at3 = at * at, at * at * at
    out = np.where(at <= 1.0, 1.5 * at3 - 2.5 * at2 + 1.0,
                   np.where(at < 2.0, -0.5 * at3 + 2.5 * at2 - 4.0 * at + 2.0, 0.0))
    return out


@functools.lru_cache(maxsize=256)
def resize_matrix(n_in: int, n_out: int) -> np.ndarray:
    """Dense (n_out, n_in) matrix resampling a length-n_in axis to n_out.

    Centers align ((i + 0.5)/scale - 0.5); when shrinking, the kernel is
    widened by 1/scale for antialiasing. Out-of-range taps clamp to the edge
    and each row is normalized to sum to exactly 1.
    """
    if n_in < 1 or n_out < 1:
        raise ImageError(f"resize_matrix: sizes must be >= 1, got {n_in} -> {n_out}")
    scale = n_out / n_in
    kscale = min(scale, 1.0)
    width = 4.0 / kscale
    mat = np.zeros((n_out, n_in))
    for i in range(n_out):
        center = (i + 0.5) / scale - 0.5
        left = int(np.floor(center - width / 2.0)) + 1
        taps = np.arange(left, left + int(np.ceil(width)) + 1)
        weights = _cubic((center - taps) * kscale) * kscale
        np.add.at(mat[i], np.clip(taps, 0, n_in - 1), weights)
        mat[i] /= mat[i].sum()
    mat.setflags(write=False)
    return mat


def bicubic_resize(image: ImageRGB, scale: float) -> ImageRGB:
    """Separable bicubic rescale by a rational factor; unit scale is identity."""
    if scale <= 0:
        raise ImageError(f"bicubic_resize: scale must be positive, got {scale}")
    if scale == 1:
        return ImageRGB(image.data.copy())
    out_h = int(round(image.height * scale))
    out_w = int(round(image.width * scale))
    if out_h < 1 or out_w < 1:
        raise ImageError(
            f"bicubic_resize: scale {scale} collapses {image.height}x{image.width} below one pixel")
    m_h = resize_matrix(image.height, out_h)
    m_w = resize_matrix(image.width, out_w)
    out = np.tensordot(m_h, image.data, axes=([1], [0]))
    out = np.tensordot(m_w, out, axes=([1], [1])).transpose(1, 0, 2)
    return ImageRGB(out)


def resize_plane(plane: np.ndarray, scale: float) -> np.ndarray:
    """Bicubic rescale of a single 2-D plane (same kernel as bicubic_resize)."""
    if scale == 1:
        return plane.copy()
    out_h = int(round(plane.shape[0] * scale))
    out_w = int(round(plane.shape[1] * scale))
    m_h = resize_matrix(plane.shape[0], out_h)
    m_w = resize_matrix(plane.shape[1], out_w)
    return m_h @ plane @ m_w.T


# ---------------------------------------------------------------- crops

def random_crop_pair(hr: ImageRGB, scale: int, lr_size: int, rng: np.random.Generator) -> PatchPair:
    """Crop an aligned patch pair; the LR side is the bicubicly shrunk crop.

    The crop origin snaps to the scale grid. Draw order (top, then left) is
    part of the determinism contract.
    """
    if scale not in (2, 4, 8):
        raise ImageError(f"random_crop_pair: scale must be one of 2, 4, 8, got {scale}")
    hr_size = lr_size * scale
    if hr.height < hr_size or hr.width < hr_size:
        raise ImageError(
            f"random_crop_pair: image {hr.height}x{hr.width} too small for a {hr_size}px crop")
    top = int(rng.integers(0, (hr.height - hr_size) // scale + 1)) * scale
    left = int(rng.integers(0, (hr.width - hr_size) // scale + 1)) * scale
    crop = ImageRGB(hr.data[top:top + hr_size, left:left + hr_size])
    lr = bicubic_resize(crop, 1.0 / scale)
    return PatchPair(lr=lr, hr=crop, scale=scale)


# ---------------------------------------------------------------- synthesis

def _synth_base(rng: np.random.Generator, size: int) -> np.ndarray:
    """One procedural RGB image mixing gradients, gratings, checkers, noise."""
    yy, xx = np.mgrid[0:size, 0:size] / size
    z = rng.uniform(-0.6, 0.6) * xx + rng.uniform(-0.6, 0.6) * yy

    for _ in range(int(rng.integers(2, 5))):
        freq = rng.uniform(2.0, 0.4 * size)
        theta = rng.uniform(0, np.pi)
        phase = rng.uniform(0, 2 * np.pi)
        amp = rng.uniform(0.15, 0.5)
        z = z + amp * np.sin(2 * np.pi * freq * (np.cos(theta) * xx + np.sin(theta) * yy) + phase)

    cell = int(rng.integers(2, 7))
    ii, jj = np.mgrid[0:size, 0:size]
    checker = ((ii // cell + jj // cell) % 2).astype(np.float64) * 2.0 - 1.0
    z = z + rng.uniform(0.1, 0.45) * checker

    grain = ndimage.gaussian_filter(rng.normal(size=(size, size)), rng.uniform(0.6, 1.6))
    z = z + rng.uniform(0.1, 0.35) * grain / max(grain.std(), 1e-9)

    img = np.empty((size, size, 3))
    for c in range(3):
        img[:, :, c] = 0.5 + 0.42 * np.tanh(z + rng.uniform(-0.3, 0.3))
    return np.clip(img, 0.0, 1.0)


def synth_sr_dataset(seed: int, count: int, size: int = 96) -> list[ImageRGB]:
    """Deterministic procedural images with genuine high-frequency content."""
    if count < 1 or size < 16:
        raise ImageError(f"synth_sr_dataset: need count >= 1 and size >= 16, got {count}, {size}")
    rng = np.random.default_rng(np.random.SeedSequence([101, seed]))
    return [ImageRGB(_synth_base(rng, size)) for _ in range(count)]


def score_mean_for_strength(strength: float) -> float:
    """Monotone map from degradation strength in [0,1] to a mean score.

    Zero degradation scores 10, full degradation scores 1.
    """
    if not 0.0 <= strength <= 1.0:
        raise ValueError(f"strength must be in [0, 1], got {strength}")
    return 10.0 - 9.0 * strength


def degrade(image: ImageRGB, strength: float, rng: np.random.Generator) -> ImageRGB:
    """Blur plus noise, both growing with strength in [0, 1]."""
    arr = image.data
    sigma = 2.5 * strength
    if sigma > 0:
        arr = np.stack([ndimage.gaussian_filter(arr[:, :, c], sigma) for c in range(3)], axis=-1)
    if strength > 0:
        arr = arr + rng.normal(size=arr.shape) * (0.12 * strength)
    return ImageRGB(arr)


def synth_scored_dataset(seed: int, count: int, size: int = 48) -> list[ScoredImage]:
    """Degraded procedural images labeled with score distributions.

    The mean label is a fixed monotone function of the degradation strength,
    so stronger degradation never scores higher.
    """
    if count < 1 or size < 16:
        raise ImageError(f"synth_scored_dataset: need count >= 1 and size >= 16, got {count}, {size}")
    rng = np.random.default_rng(np.random.SeedSequence([202, seed]))
    out = []
    for _ in range(count):
        base = ImageRGB(_synth_base(rng, size))
        strength = float(rng.uniform(0.0, 1.0))
        image = degrade(base, strength, rng)
        dist = gaussian_to_bins(score_mean_for_strength(strength),
                                0.7 + 0.4 * float(rng.uniform()), mean_range=(1.0, 10.0))
        out.append(ScoredImage(image=image, score_dist=dist))
    return out


# ---------------------------------------------------------------- plumbing

def read_manifest(path) -> list[Path]:
    """Plain-text list of image paths relative to the manifest; '#' comments."""
    path = Path(path)
    entries = []
    for line in path.read_text().splitlines():
        line = line.split("#", 1)[0].strip()
        if line:
            entries.append(path.parent / line)
    return entries


def list_pngs(directory) -> list[Path]:
    return sorted(Path(directory).glob("*.png"))


def images_to_tensor(images, dtype=np.float32) -> Tensor:
    """Stack images of one size into an (N, 3, H, W) constant tensor."""
    arrs = [im.data for im in images]
    shapes = {a.shape for a in arrs}
    if len(shapes) != 1:
        raise ImageError(f"images_to_tensor: mixed shapes {sorted(shapes)}")
    return Tensor(np.stack(arrs).transpose(0, 3, 1, 2).astype(dtype))


def tensor_to_images(t: Tensor) -> list[ImageRGB]:
    """(N, 3, H, W) tensor back to clamped images."""
    arr = np.asarray(t.data, dtype=np.float64)
    if arr.ndim != 4 or arr.shape[1] != 3:
        raise ImageError(f"tensor_to_images: expected (N, 3, H, W), got {arr.shape}")
    return [ImageRGB(np.clip(a.transpose(1, 2, 0), 0.0, 1.0)) for a in arr]
