"""Synthetic sensor noise, depth inpainting, and training augmentation.

All operations are pure functions of (input, seed) and clamp their outputs
to the declared value ranges. Geometric transforms move every plane of a
sample together; photometric transforms never touch the label plane.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .data import Sample
from .errors import InvalidParamError, NoValidDepthError

BLUR_KERNEL = (9, 9)  # fixed smoothing kernel size
BLUR_SIGMA = 2.0
INPAINT_TOL_M = 1e-4
INPAINT_MAX_ITERS = 500


@dataclass(frozen=True)
class NoisePolicy:
    p_gaussian: float = 0.25
    p_salt_pepper: float = 0.25
    p_blur: float = 0.25
    p_bilateral: float = 0.25
    gaussian_sigma: float = 0.03
    salt_pepper_rate: float = 0.02
    bilateral_sigma_spatial: float = 3.0
    bilateral_sigma_range: float = 0.1
    apply_to_depth: bool = True
    depth_max_range: float = 10.0

    def __post_init__(self):
        for p in (self.p_gaussian, self.p_salt_pepper, self.p_blur, self.p_bilateral):
            if not 0.0 <= p <= 1.0:
                raise InvalidParamError("noise application probabilities must be in [0,1]")
        if not 0.0 <= self.salt_pepper_rate <= 1.0:
            raise InvalidParamError("salt_pepper_rate must be in [0,1]")
        for s in (self.gaussian_sigma, self.bilateral_sigma_spatial, self.bilateral_sigma_range):
            if not math.isfinite(s) or s <= 0:
                raise InvalidParamError("sigmas must be positive and finite")

    @classmethod
    def disabled(cls) -> "NoisePolicy":
        return cls(p_gaussian=0.0, p_salt_pepper=0.0, p_blur=0.0, p_bilateral=0.0)


@dataclass(frozen=True)
class AugmentPolicy:
    crop_height: int = 240
    crop_width: int = 240
    gamma_min: float = 0.7
    gamma_max: float = 1.5
    flip_prob: float = 0.5

    def __post_init__(self):
        if self.gamma_min <= 0 or self.gamma_max < self.gamma_min:
            raise InvalidParamError("gamma range must be positive and ordered")
        if not 0.0 <= self.flip_prob <= 1.0:
            raise InvalidParamError("flip_prob must be in [0,1]")


def add_gaussian_noise(img: np.ndarray, sigma: float, seed: int) -> np.ndarray:
    """Add i.i.d. normal(0, sigma) per pixel; result clamped to [0,1]."""
    if not math.isfinite(sigma) or sigma < 0:
        raise InvalidParamError(f"sigma must be finite and >= 0, got {sigma}")
    if sigma == 0:
        return img.copy()
    rng = np.random.default_rng(seed)
    out = img + rng.normal(0.0, sigma, img.shape)
    return np.clip(out, 0.0, 1.0).astype(img.dtype)


def add_salt_pepper(img: np.ndarray, p: float, seed: int) -> np.ndarray:
    """Replace each pixel by 0 or 1 (equal odds) with probability p."""
    if not 0.0 <= p <= 1.0:
        raise InvalidParamError(f"p must be in [0,1], got {p}")
    rng = np.random.default_rng(seed)
    hit = rng.random(img.shape) < p
    salt = rng.random(img.shape) < 0.5
    out = img.copy()
    out[hit] = salt[hit].astype(img.dtype)
    return out


def _gaussian_kernel_1d(size: int, sigma: float) -> np.ndarray:
    half = (size - 1) / 2.0
    x = np.arange(size) - half
    k = np.exp(-(x**2) / (2.0 * sigma**2))
    return k / k.sum()


def _correlate_1d_reflect(img: np.ndarray, kernel: np.ndarray, axis: int) -> np.ndarray:
    r = (len(kernel) - 1) // 2
    pad = [(0, 0)] * img.ndim
    pad[axis] = (r, r)
    padded = np.pad(img, pad, mode="reflect")
    out = np.zeros(img.shape, dtype=np.float64)
    for i, kv in enumerate(kernel):
        sl = [slice(None)] * img.ndim
        sl[axis] = slice(i, i + img.shape[axis])
        out += kv * padded[tuple(sl)]
    return out


def gaussian_blur(img: np.ndarray) -> np.ndarray:
    """Separable 9×9 Gaussian smoothing with reflect borders."""
    if img.shape[0] < BLUR_KERNEL[0] or img.shape[1] < BLUR_KERNEL[1]:
        raise InvalidParamError(f"image smaller than {BLUR_KERNEL} kernel")
    k = _gaussian_kernel_1d(BLUR_KERNEL[0], BLUR_SIGMA)
    out = _correlate_1d_reflect(img, k, axis=0)
    out = _correlate_1d_reflect(out, k, axis=1)
    return out.astype(img.dtype)


def bilateral_filter(
    img: np.ndarray, sigma_spatial: float = 3.0, sigma_range: float = 0.1
) -> np.ndarray:
    """9×9 bilateral smoothing with reflect borders, per channel."""
    if img.shape[0] < BLUR_KERNEL[0] or img.shape[1] < BLUR_KERNEL[1]:
        raise InvalidParamError(f"image smaller than {BLUR_KERNEL} kernel")
    if sigma_spatial <= 0 or sigma_range <= 0:
        raise InvalidParamError("bilateral sigmas must be positive")
    r = (BLUR_KERNEL[0] - 1) // 2
    pad = [(r, r), (r, r)] + [(0, 0)] * (img.ndim - 2)
    padded = np.pad(img.astype(np.float64), pad, mode="reflect")
    h, w = img.shape[:2]
    num = np.zeros(img.shape, dtype=np.float64)
    den = np.zeros(img.shape, dtype=np.float64)
    center = img.astype(np.float64)
    for dy in range(-r, r + 1):
        for dx in range(-r, r + 1):
            shifted = padded[r + dy : r + dy + h, r + dx : r + dx + w]
            w_s = math.exp(-(dy * dy + dx * dx) / (2.0 * sigma_spatial**2))
            w_r = np.exp(-((shifted - center) ** 2) / (2.0 * sigma_range**2))
            weight = w_s * w_r
            num += weight * shifted
            den += weight
    return (num / den).astype(img.dtype)


def inpaint_depth(depth: np.ndarray, hole_mask: np.ndarray) -> np.ndarray:
    """Diffusion fill: iterative neighbor averaging over hole pixels.

    Non-hole pixels are untouched; filled values stay within the range of
    the valid depths. Iterates until the max per-pixel change is below
    INPAINT_TOL_M or INPAINT_MAX_ITERS is reached.
    """
    valid = ~hole_mask
    if not valid.any():
        raise NoValidDepthError("all pixels are holes")
    if not hole_mask.any():
        return depth.copy()
    work = depth.astype(np.float64)
    work[hole_mask] = depth[valid].mean()
    for _ in range(INPAINT_MAX_ITERS):
        padded = np.pad(work, 1, mode="edge")
        neighbors = (
            padded[:-2, 1:-1] + padded[2:, 1:-1] + padded[1:-1, :-2] + padded[1:-1, 2:]
        ) / 4.0
        delta = np.abs(neighbors[hole_mask] - work[hole_mask]).max()
        work[hole_mask] = neighbors[hole_mask]
        if delta < INPAINT_TOL_M:
            break
    out = depth.copy()
    out[hole_mask] = work[hole_mask].astype(depth.dtype)
    return out


def inpaint_sample(sample: Sample) -> Sample:
    if not sample.hole_mask.any():
        return sample
    return sample.with_planes(depth=inpaint_depth(sample.depth, sample.hole_mask))


def _noise_plane(plane: np.ndarray, noise: NoisePolicy, rng: np.random.Generator, scale: float):
    """Apply each enabled noise independently; plane values live in [0, scale]."""
    out = plane
    if noise.p_gaussian > 0 and rng.random() < noise.p_gaussian:
        out = scale * add_gaussian_noise(
            out / scale, noise.gaussian_sigma, int(rng.integers(2**63))
        )
    if noise.p_salt_pepper > 0 and rng.random() < noise.p_salt_pepper:
        out = scale * add_salt_pepper(out / scale, noise.salt_pepper_rate, int(rng.integers(2**63)))
    if noise.p_blur > 0 and rng.random() < noise.p_blur:
        out = gaussian_blur(out)
    if noise.p_bilateral > 0 and rng.random() < noise.p_bilateral:
        out = bilateral_filter(
            out / scale, noise.bilateral_sigma_spatial, noise.bilateral_sigma_range
        ) * scale
    return out.astype(plane.dtype)


def random_augment(sample: Sample, noise: NoisePolicy, aug: AugmentPolicy, seed: int) -> Sample:
    """Crop, flip, gamma, then per-plane noise; deterministic in seed.

    The crop window and flip apply to every plane together; gamma applies
    to rgb only; the label plane is never noised. Salt-and-pepper on depth
    maps to {0, depth_max_range}, so it can introduce holes — callers that
    need depth must inpaint afterwards.
    """
    h, w = sample.depth.shape
    ch, cw = aug.crop_height, aug.crop_width
    if ch > h or cw > w:
        raise InvalidParamError(f"crop {ch}x{cw} does not fit source {h}x{w}")
    rng = np.random.default_rng(seed)

    top = int(rng.integers(0, h - ch + 1))
    left = int(rng.integers(0, w - cw + 1))
    rgb = sample.rgb[top : top + ch, left : left + cw].copy()
    depth = sample.depth[top : top + ch, left : left + cw].copy()
    label = sample.label[top : top + ch, left : left + cw].copy()

    if rng.random() < aug.flip_prob:
        rgb = rgb[:, ::-1].copy()
        depth = depth[:, ::-1].copy()
        label = label[:, ::-1].copy()

    gamma = rng.uniform(aug.gamma_min, aug.gamma_max)
    rgb = np.power(rgb, gamma).astype(np.float32)

    rgb = _noise_plane(rgb, noise, rng, scale=1.0)
    if noise.apply_to_depth:
        depth = _noise_plane(depth, noise, rng, scale=noise.depth_max_range)
        depth = np.clip(depth, 0.0, None).astype(np.float32)

    return Sample(
        rgb=rgb,
        depth=depth,
        label=label,
        hole_mask=depth == 0.0,
        domain=sample.domain,
        id=sample.id,
    )
