"""Stochastic view generation.

Every transform takes a batch ``B x C x H x W`` (a single ``C x H x W`` image
is accepted too), draws its per-image parameters from an :class:`Rng`, and
returns a tensor of the same shape with values clamped to ``[0, 1]``.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from typing import Optional, Sequence

import numpy as np
import torch
import torch.nn.functional as F

from .ndiff import Rng

_LUMA = (0.299, 0.587, 0.114)


@dataclass
class AugmentPolicy:
    crop_scale: tuple[float, float] = (0.2, 1.0)
    flip_prob: float = 0.5
    # brightness, contrast, saturation, hue, apply_prob
    color_jitter: tuple[float, float, float, float, float] = (0.4, 0.4, 0.4, 0.1, 0.8)
    grayscale_prob: float = 0.2
    blur_prob: float = 0.0
    solarize_prob: float = 0.0
    strength_tag: str = "strong"

    def __post_init__(self):
        self.crop_scale = tuple(float(v) for v in self.crop_scale)
        self.color_jitter = tuple(float(v) for v in self.color_jitter)
        lo, hi = self.crop_scale
        if not (0 < lo <= hi <= 1):
            raise ValueError(f"crop_scale must satisfy 0 < min <= max <= 1, got {self.crop_scale}")
        if len(self.color_jitter) != 5:
            raise ValueError("color_jitter needs (brightness, contrast, saturation, hue, apply_prob)")
        for name in ("flip_prob", "grayscale_prob", "blur_prob", "solarize_prob"):
            p = getattr(self, name)
            if not 0 <= p <= 1:
                raise ValueError(f"{name} must be in [0, 1], got {p}")
        if not 0 <= self.color_jitter[4] <= 1:
            raise ValueError(f"color_jitter apply_prob must be in [0, 1], got {self.color_jitter[4]}")
        if min(self.color_jitter[:4]) < 0 or self.color_jitter[3] > 0.5:
            raise ValueError("jitter strengths must be >= 0 and hue <= 0.5")
        if self.strength_tag not in ("strong", "weak"):
            raise ValueError(f"strength_tag must be 'strong' or 'weak', got {self.strength_tag!r}")

    def to_dict(self) -> dict:
        return asdict(self)


def strong_pair() -> list[AugmentPolicy]:
    """The default asymmetric pair: blur-heavy first view, solarized second."""
    return [
        AugmentPolicy(blur_prob=0.5, solarize_prob=0.0),
        AugmentPolicy(blur_prob=0.1, solarize_prob=0.2),
    ]


def weak_policy() -> AugmentPolicy:
    return AugmentPolicy(
        crop_scale=(0.2, 1.0),
        flip_prob=0.5,
        color_jitter=(0.0, 0.0, 0.0, 0.0, 0.0),
        grayscale_prob=0.0,
        strength_tag="weak",
    )


def identity_policy() -> AugmentPolicy:
    return AugmentPolicy(
        crop_scale=(1.0, 1.0),
        flip_prob=0.0,
        color_jitter=(0.0, 0.0, 0.0, 0.0, 0.0),
        grayscale_prob=0.0,
    )


@dataclass
class ViewBatch:
    views: list[torch.Tensor]
    indices: torch.Tensor
    labels: Optional[torch.Tensor] = None

    def __post_init__(self):
        if len({tuple(v.shape) for v in self.views}) > 1:
            raise ValueError("all views must share one shape")

    @property
    def batch_size(self) -> int:
        return self.views[0].shape[0]


def _as_batch(img: torch.Tensor) -> tuple[torch.Tensor, bool]:
    if img.dim() == 3:
        return img.unsqueeze(0), True
    if img.dim() != 4:
        raise ValueError(f"expected C x H x W or B x C x H x W, got shape {tuple(img.shape)}")
    return img, False


def _mask(x: torch.Tensor, mask: np.ndarray) -> torch.Tensor:
    return torch.from_numpy(mask).to(x.dtype).view(-1, 1, 1, 1)


def random_resized_crop(
    img: torch.Tensor,
    scale: tuple[float, float],
    rng: Rng,
    ratio: tuple[float, float] = (3 / 4, 4 / 3),
) -> torch.Tensor:
    x, single = _as_batch(img)
    b, _, h, w = x.shape
    area = h * w
    boxes = np.zeros((b, 4), dtype=np.int64)  # top, left, height, width
    log_ratio = (math.log(ratio[0]), math.log(ratio[1]))
    for n in range(b):
        for _ in range(10):
            target = area * rng.uniform(scale[0], scale[1])
            aspect = math.exp(rng.uniform(*log_ratio))
            cw = int(round(math.sqrt(target * aspect)))
            ch = int(round(math.sqrt(target / aspect)))
            if 0 < cw <= w and 0 < ch <= h:
                top = int(rng.integers(0, h - ch + 1))
                left = int(rng.integers(0, w - cw + 1))
                boxes[n] = (top, left, ch, cw)
                break
        else:
            boxes[n] = (0, 0, h, w)

    full = (boxes[:, 2] == h) & (boxes[:, 3] == w)
    if full.all():
        return img.clone()
    # affine grid mapping output pixel centers onto the crop box
    top, left, ch, cw = (torch.from_numpy(boxes[:, i]).to(x.dtype) for i in range(4))
    theta = torch.zeros(b, 2, 3, dtype=x.dtype)
    theta[:, 0, 0] = cw / w
    theta[:, 0, 2] = (2 * left + cw) / w - 1
    theta[:, 1, 1] = ch / h
    theta[:, 1, 2] = (2 * top + ch) / h - 1
    grid = F.affine_grid(theta, list(x.shape), align_corners=False)
    out = F.grid_sample(x, grid, mode="bilinear", padding_mode="border", align_corners=False)
    keep = _mask(x, full.astype(np.float32))
    out = (keep * x + (1 - keep) * out).clamp(0, 1)
    return out[0] if single else out


def horizontal_flip(img: torch.Tensor, prob: float, rng: Rng) -> torch.Tensor:
    x, single = _as_batch(img)
    flip = rng.uniform(size=x.shape[0]) < prob
    if not flip.any():
        return img.clone()
    out = x.clone()
    idx = torch.from_numpy(np.nonzero(flip)[0])
    out[idx] = x[idx].flip(-1)
    return out[0] if single else out


def grayscale(img: torch.Tensor) -> torch.Tensor:
    x, single = _as_batch(img)
    if x.shape[1] != 3:
        return img.clone()
    luma = _LUMA[0] * x[:, 0] + _LUMA[1] * x[:, 1] + _LUMA[2] * x[:, 2]
    out = luma.unsqueeze(1).expand_as(x).clamp(0, 1).contiguous()
    return out[0] if single else out


def _rgb_to_hsv(x: torch.Tensor) -> torch.Tensor:
    r, g, b = x[:, 0], x[:, 1], x[:, 2]
    maxc = x.max(dim=1).values
    minc = x.min(dim=1).values
    delta = maxc - minc
    safe = torch.where(delta > 0, delta, torch.ones_like(delta))
    hue = torch.where(
        maxc == r,
        ((g - b) / safe) % 6,
        torch.where(maxc == g, (b - r) / safe + 2, (r - g) / safe + 4),
    )
    hue = torch.where(delta > 0, hue / 6, torch.zeros_like(hue))
    sat = torch.where(maxc > 0, delta / torch.where(maxc > 0, maxc, torch.ones_like(maxc)), torch.zeros_like(maxc))
    return torch.stack([hue, sat, maxc], dim=1)


def _hsv_to_rgb(x: torch.Tensor) -> torch.Tensor:
    h, s, v = x[:, 0], x[:, 1], x[:, 2]
    i = torch.floor(h * 6)
    f = h * 6 - i
    p = v * (1 - s)
    q = v * (1 - s * f)
    t = v * (1 - s * (1 - f))
    i = i.long() % 6
    choices = [
        (v, t, p), (q, v, p), (p, v, t), (p, q, v), (t, p, v), (v, p, q),
    ]
    out = torch.zeros_like(x)
    for k, (r, g, b) in enumerate(choices):
        m = i == k
        out[:, 0] = torch.where(m, r, out[:, 0])
        out[:, 1] = torch.where(m, g, out[:, 1])
        out[:, 2] = torch.where(m, b, out[:, 2])
    return out


def color_jitter(img: torch.Tensor, strengths: Sequence[float], rng: Rng) -> torch.Tensor:
    """Brightness, contrast, saturation and hue jitter applied in that order.

    ``strengths`` is ``(brightness, contrast, saturation, hue[, apply_prob])``;
    apply_prob defaults to 1.
    """
    x, single = _as_batch(img)
    bri, con, sat, hue = strengths[:4]
    prob = strengths[4] if len(strengths) > 4 else 1.0
    n = x.shape[0]
    apply = rng.uniform(size=n) < prob

    def factors(strength):
        f = rng.uniform(max(0.0, 1 - strength), 1 + strength, size=n)
        return np.where(apply & (strength > 0), f, 1.0).astype(np.float32)

    fb, fc, fs = factors(bri), factors(con), factors(sat)
    fh = np.where(apply & (hue > 0), rng.uniform(-hue, hue, size=n), 0.0).astype(np.float32)
    if not apply.any() or max(bri, con, sat, hue) == 0:
        return img.clone()

    out = (x * _mask(x, fb)).clamp(0, 1)
    if x.shape[1] == 3:
        gray_mean = grayscale(out).mean(dim=(1, 2, 3), keepdim=True)
        c = _mask(x, fc)
        out = (c * out + (1 - c) * gray_mean).clamp(0, 1)
        s = _mask(x, fs)
        out = (s * out + (1 - s) * grayscale(out)).clamp(0, 1)
        if np.any(fh != 0):
            hsv = _rgb_to_hsv(out)
            hsv[:, 0] = (hsv[:, 0] + torch.from_numpy(fh).to(x.dtype).view(-1, 1, 1)) % 1.0
            out = _hsv_to_rgb(hsv).clamp(0, 1)
    else:
        c = _mask(x, fc)
        out = (c * out + (1 - c) * out.mean(dim=(1, 2, 3), keepdim=True)).clamp(0, 1)
    return out[0] if single else out


def gaussian_blur(
    img: torch.Tensor,
    rng: Rng,
    sigma: tuple[float, float] = (0.1, 2.0),
    radius: int = 2,
) -> torch.Tensor:
    """Separable Gaussian blur, sigma drawn uniformly per image; reflect padding."""
    if sigma[0] <= 0 or sigma[1] < sigma[0]:
        raise ValueError(f"gaussian_blur: sigma range must be positive and ordered, got {sigma}")
    x, single = _as_batch(img)
    b, c, h, w = x.shape
    s = torch.from_numpy(rng.uniform(sigma[0], sigma[1], size=b)).to(x.dtype)
    taps = torch.arange(-radius, radius + 1, dtype=x.dtype)
    k = torch.exp(-(taps[None, :] ** 2) / (2 * s[:, None] ** 2))
    k = k / k.sum(dim=1, keepdim=True)  # b x (2r+1)
    k = k.repeat_interleave(c, dim=0)  # (b*c) x (2r+1)
    flat = x.reshape(1, b * c, h, w)
    pad = min(radius, h - 1, w - 1)
    if pad < radius:
        raise ValueError("gaussian_blur: image too small for kernel radius")
    flat = F.pad(flat, (radius, radius, 0, 0), mode="reflect")
    flat = F.conv2d(flat, k.view(b * c, 1, 1, -1), groups=b * c)
    flat = F.pad(flat, (0, 0, radius, radius), mode="reflect")
    flat = F.conv2d(flat, k.view(b * c, 1, -1, 1), groups=b * c)
    out = flat.view(b, c, h, w).clamp(0, 1)
    return out[0] if single else out


def solarize(img: torch.Tensor, threshold: float = 0.5) -> torch.Tensor:
    """Invert pixels strictly above ``threshold``."""
    return torch.where(img > threshold, 1 - img, img).clamp(0, 1)


def _where_images(mask: np.ndarray, a: torch.Tensor, b: torch.Tensor) -> torch.Tensor:
    m = torch.from_numpy(mask).view(-1, 1, 1, 1)
    return torch.where(m, a, b)


def apply_policy(images: torch.Tensor, policy: AugmentPolicy, rng: Rng) -> torch.Tensor:
    x, single = _as_batch(images)
    n = x.shape[0]
    out = random_resized_crop(x, policy.crop_scale, rng)
    out = horizontal_flip(out, policy.flip_prob, rng)
    if policy.strength_tag == "strong":
        if policy.color_jitter[4] > 0:
            out = color_jitter(out, policy.color_jitter, rng)
        if policy.grayscale_prob > 0:
            gray = rng.uniform(size=n) < policy.grayscale_prob
            if gray.any():
                out = _where_images(gray, grayscale(out), out)
        if policy.blur_prob > 0:
            blur = rng.uniform(size=n) < policy.blur_prob
            if blur.any():
                out = _where_images(blur, gaussian_blur(out, rng), out)
        if policy.solarize_prob > 0:
            sol = rng.uniform(size=n) < policy.solarize_prob
            if sol.any():
                out = _where_images(sol, solarize(out), out)
    return out[0] if single else out


def generate_views(
    images: torch.Tensor,
    policies: Sequence[AugmentPolicy],
    rng: Rng,
    indices: Optional[torch.Tensor] = None,
    labels: Optional[torch.Tensor] = None,
) -> ViewBatch:
    if len(policies) < 2:
        raise ValueError(f"need at least 2 view policies, got {len(policies)}")
    if images.dim() != 4 or images.shape[0] == 0:
        raise ValueError("generate_views: empty batch")
    if indices is None:
        indices = torch.arange(images.shape[0])
    views = [apply_policy(images, p, rng) for p in policies]
    return ViewBatch(views=views, indices=indices, labels=labels)
