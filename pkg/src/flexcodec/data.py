"""Seeded synthetic images, patch extraction, and PNG I/O.

The test corpus is generated, not downloaded: piecewise-constant blocks give
sharp edges, oriented sinusoids give texture, and band-limited noise fills in
photographic-looking detail.  Everything is deterministic in the seed.
"""

import math

import numpy as np
import torch
import torch.nn.functional as F
from PIL import Image

from .quantization import round_half_away


def synthetic_image(height, width, seed=0, channels=3):
    """One [1, C, H, W] image in [0, 255], deterministic in seed."""
    g = torch.Generator().manual_seed(seed)
    yy = torch.linspace(0, 1, height).view(height, 1).expand(height, width)
    xx = torch.linspace(0, 1, width).view(1, width).expand(height, width)

    img = torch.zeros(channels, height, width)
    for c in range(channels):
        a, b = torch.rand(2, generator=g) * 120
        img[c] = 60 + a * xx + b * yy

    # oriented sinusoidal texture per channel
    for c in range(channels):
        freq = 2 + torch.rand(1, generator=g).item() * 10
        theta = torch.rand(1, generator=g).item() * math.pi
        phase = torch.rand(1, generator=g).item() * 2 * math.pi
        wave = torch.sin(2 * math.pi * freq * (xx * math.cos(theta) + yy * math.sin(theta))
                         + phase)
        img[c] += 25 * wave

    # flat rectangles: sharp edges and occluders
    for _ in range(6):
        r = torch.rand(4, generator=g)
        y0, x0 = int(r[0] * height * 0.8), int(r[1] * width * 0.8)
        hh = int(height * (0.1 + 0.3 * r[2])) + 1
        ww = int(width * (0.1 + 0.3 * r[3])) + 1
        color = torch.rand(channels, 1, 1, generator=g) * 255
        img[:, y0:y0 + hh, x0:x0 + ww] = color

    # band-limited noise: low-res draw upsampled bilinearly
    low = torch.randn(1, channels, max(2, height // 8), max(2, width // 8), generator=g)
    img += 18 * F.interpolate(low, size=(height, width), mode="bilinear",
                              align_corners=False)[0]
    img += 4 * torch.randn(channels, height, width, generator=g)

    return img.clamp(0, 255).unsqueeze(0)


def synthetic_corpus(count, height, width, seed=0):
    """List of independent synthetic images."""
    return [synthetic_image(height, width, seed=seed * 1000 + i) for i in range(count)]


def extract_patches(images, patch_size, count, seed=0):
    """[count, C, p, p] random crops drawn across the image list."""
    g = torch.Generator().manual_seed(seed)
    patches = []
    for i in range(count):
        img = images[int(torch.randint(len(images), (1,), generator=g))]
        _, _, h, w = img.shape
        if h < patch_size or w < patch_size:
            raise ValueError(f"image {tuple(img.shape)} smaller than patch {patch_size}")
        top = int(torch.randint(h - patch_size + 1, (1,), generator=g))
        left = int(torch.randint(w - patch_size + 1, (1,), generator=g))
        patches.append(img[0, :, top:top + patch_size, left:left + patch_size])
    return torch.stack(patches)


def load_image(path):
    """PNG/PPM/JPEG file -> [1, 3, H, W] float tensor in [0, 255]."""
    with Image.open(path) as im:
        arr = np.asarray(im.convert("RGB"), dtype=np.float32)
    return torch.from_numpy(arr).permute(2, 0, 1).unsqueeze(0)


def save_image(x, path):
    """[1, C, H, W] or [C, H, W] tensor in [0, 255] -> 8-bit image file."""
    if x.dim() == 4:
        x = x[0]
    x = round_half_away(x.detach().float().clamp(0, 255)).to(torch.uint8)
    arr = x.permute(1, 2, 0).cpu().numpy()
    if arr.shape[2] == 1:
        arr = arr[:, :, 0]
    Image.fromarray(arr).save(path)


def pad_to_multiple(x, multiple=64):
    """Replicate-pad bottom/right so H, W divide multiple; returns (padded, H, W)."""
    h, w = x.shape[-2], x.shape[-1]
    ph = (multiple - h % multiple) % multiple
    pw = (multiple - w % multiple) % multiple
    if ph == 0 and pw == 0:
        return x, h, w
    return F.pad(x, (0, pw, 0, ph), mode="replicate"), h, w
