"""Synthetic weather degradations and deterministic dataset iteration.

Dataset layout: ``<dir>/clean/*.ppm`` plus an optional ``<dir>/degraded/``
holding files with the same names.  Without ``degraded/`` the degradation is
synthesised on the fly from the run seed.
"""
from __future__ import annotations

from dataclasses import dataclass, replace
from pathlib import Path
from typing import Iterator

import numpy as np

from .imageio import list_images, load_image, save_image

KINDS = ("rain-streak", "snow", "fog", "mixed")
# the three restoration tasks map one-to-one onto degradation kinds
TASKS = {"desnow": "snow", "derain": "rain-streak", "rain-fog": "mixed"}


@dataclass(frozen=True)
class DegradationSpec:
    kind: str = "rain-streak"
    intensity: float = 0.5
    streak_angle: float = 15.0       # degrees from vertical
    streak_length: float = 8.0       # pixels
    flake_radius: float = 1.5        # pixels
    fog_alpha: float = 0.5
    seed: int = 0

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"degradation kind must be one of {KINDS}, got {self.kind!r}")
        if not 0.0 <= self.intensity <= 1.0:
            raise ValueError(f"intensity must be in [0, 1], got {self.intensity}")
        if not 0.0 <= self.fog_alpha <= 1.0:
            raise ValueError(f"fog_alpha must be in [0, 1], got {self.fog_alpha}")
        if self.streak_length <= 0 or self.flake_radius <= 0:
            raise ValueError("streak_length and flake_radius must be positive")

    def with_seed(self, seed: int) -> "DegradationSpec":
        return replace(self, seed=int(seed))


@dataclass
class SamplePair:
    degraded: np.ndarray
    clean: np.ndarray
    spec: DegradationSpec

    def __post_init__(self):
        if self.degraded.shape != self.clean.shape:
            raise ValueError("degraded and clean shapes differ")


# ------------------------------------------------------------- generators

def synth_scene(H: int, W: int, seed: int) -> np.ndarray:
    """Smooth colourful test scene in (1, 3, H, W): gradients plus soft blobs."""
    rng = np.random.default_rng([seed, 0x5CE9E])
    yy, xx = np.meshgrid(np.linspace(0, 1, H), np.linspace(0, 1, W), indexing="ij")
    img = np.empty((3, H, W))
    for c in range(3):
        a, b, base = rng.uniform(-0.25, 0.25, 2).tolist() + [rng.uniform(0.25, 0.55)]
        img[c] = base + a * xx + b * yy
    for _ in range(3):
        cy, cx = rng.uniform(0, 1, 2)
        r = rng.uniform(0.15, 0.4)
        blob = np.exp(-((yy - cy) ** 2 + (xx - cx) ** 2) / (2 * r * r))
        img += blob[None] * rng.uniform(-0.15, 0.15, (3, 1, 1))
    return np.clip(img, 0.0, 1.0)[None]


def _streak_layer(H, W, spec: DegradationSpec, rng) -> np.ndarray:
    """Additive thin streaks; higher intensity only adds streaks and brightness."""
    max_count = max(1, int(round(H * W / 40)))
    starts = rng.uniform((-spec.streak_length, 0), (H, W), size=(max_count, 2))
    bright = rng.uniform(0.6, 1.0, size=max_count)
    count = int(round(spec.intensity * max_count))
    layer = np.zeros((H, W))
    if count == 0:
        return layer
    theta = np.deg2rad(spec.streak_angle)
    d = np.array([np.cos(theta), np.sin(theta)])
    t = np.arange(0.0, spec.streak_length, 0.5)
    pts = starts[:count, None, :] + t[None, :, None] * d
    ys = np.rint(pts[..., 0]).astype(int)
    xs = np.rint(pts[..., 1]).astype(int)
    val = np.broadcast_to(bright[:count, None], ys.shape)
    ok = (ys >= 0) & (ys < H) & (xs >= 0) & (xs < W)
    np.maximum.at(layer, (ys[ok], xs[ok]), val[ok])
    return layer * (0.4 + 0.6 * spec.intensity)


def _snow_layer(H, W, spec: DegradationSpec, rng) -> np.ndarray:
    max_count = max(1, int(round(H * W / 80)))
    centers = rng.uniform((0, 0), (H, W), size=(max_count, 2))
    radii = spec.flake_radius * rng.uniform(0.6, 1.4, size=max_count)
    count = int(round(spec.intensity * max_count))
    layer = np.zeros((H, W))
    yy, xx = np.mgrid[0:H, 0:W]
    for (cy, cx), r in zip(centers[:count], radii[:count]):
        layer = np.maximum(layer, np.exp(-((yy - cy) ** 2 + (xx - cx) ** 2) / (2 * r * r)))
    return layer * (0.5 + 0.5 * spec.intensity)


def synth_degrade(clean: np.ndarray, spec: DegradationSpec) -> SamplePair:
    """Apply a seeded synthetic degradation to a (1, 3, H, W) clean image."""
    clean = np.asarray(clean, dtype=np.float64)
    if clean.ndim != 4 or clean.shape[:2] != (1, 3):
        raise ValueError(f"expected a (1, 3, H, W) image, got {clean.shape}")
    H, W = clean.shape[2:]
    rng = np.random.default_rng([spec.seed, KINDS.index(spec.kind)])
    out = clean.copy()
    if spec.kind in ("fog", "mixed"):
        alpha = spec.fog_alpha * spec.intensity
        out = out * (1.0 - alpha) + alpha
    if spec.kind in ("rain-streak", "mixed"):
        out = out + _streak_layer(H, W, spec, rng)[None, None]
    if spec.kind == "snow":
        out = out + _snow_layer(H, W, spec, rng)[None, None]
    return SamplePair(np.clip(out, 0.0, 1.0), clean.copy(), spec)


def make_synthetic_dataset(directory, count: int, size: int, seed: int,
                           spec: DegradationSpec | None = None, with_degraded: bool = True) -> Path:
    """Write ``count`` synthetic scenes (and optionally their degraded twins)."""
    d = Path(directory)
    (d / "clean").mkdir(parents=True, exist_ok=True)
    if with_degraded:
        (d / "degraded").mkdir(exist_ok=True)
    spec = spec or DegradationSpec()
    for i in range(count):
        clean = synth_scene(size, size, seed * 100003 + i)
        name = f"{i:05d}.ppm"
        save_image(clean, d / "clean" / name)
        if with_degraded:
            pair = synth_degrade(load_image(d / "clean" / name), spec.with_seed(seed * 100003 + i))
            save_image(pair.degraded, d / "degraded" / name)
    return d


# --------------------------------------------------------------- iteration

class PairedDataset:
    """In-memory clean images with optional precomputed degraded twins."""

    def __init__(self, directory, spec: DegradationSpec | None = None):
        d = Path(directory)
        self.clean_paths = list_images(d / "clean")
        if not self.clean_paths:
            raise ValueError(f"no images found under {d / 'clean'}")
        self.clean = [load_image(p) for p in self.clean_paths]
        deg_dir = d / "degraded"
        self.degraded = None
        if deg_dir.is_dir():
            self.degraded = []
            for p in self.clean_paths:
                q = deg_dir / p.name
                if not q.exists():
                    raise ValueError(f"degraded/ is missing {p.name}")
                img = load_image(q)
                if img.shape != self.clean[len(self.degraded)].shape:
                    raise ValueError(f"degraded {p.name} does not match its clean image")
                self.degraded.append(img)
        self.spec = spec or DegradationSpec()

    def __len__(self) -> int:
        return len(self.clean)

    def crop_pair(self, index: int, crop: int | None, rng: np.random.Generator, synth_seed: int):
        clean = self.clean[index]
        H, W = clean.shape[2:]
        if crop is None:
            y = x = 0
            ch, cw = H, W
        else:
            if crop > H or crop > W:
                raise ValueError(f"crop {crop} exceeds image {self.clean_paths[index].name} ({H}x{W})")
            y = int(rng.integers(0, H - crop + 1))
            x = int(rng.integers(0, W - crop + 1))
            ch = cw = crop
        c = clean[:, :, y:y + ch, x:x + cw]
        if self.degraded is not None:
            g = self.degraded[index][:, :, y:y + ch, x:x + cw]
        else:
            g = synth_degrade(c, self.spec.with_seed(synth_seed)).degraded
        return g, c


def _check_crop(crop: int | None) -> None:
    if crop is not None and (crop <= 0 or crop % 8):
        raise ValueError(f"crop must be a positive multiple of 8, got {crop}")


def dataset_iter(directory, batch: int, crop: int | None, seed: int,
                 spec: DegradationSpec | None = None, epochs: int = 1) -> Iterator[tuple[np.ndarray, np.ndarray]]:
    """Seeded shuffled (degraded, clean) batches; the last batch may be partial."""
    _check_crop(crop)
    if batch <= 0:
        raise ValueError("batch must be positive")
    ds = directory if isinstance(directory, PairedDataset) else PairedDataset(directory, spec)
    for epoch in range(epochs):
        rng = np.random.default_rng([seed, epoch])
        order = rng.permutation(len(ds))
        for start in range(0, len(order), batch):
            idx = order[start:start + batch]
            pairs = [ds.crop_pair(int(i), crop, rng, int(rng.integers(2 ** 63))) for i in idx]
            yield np.concatenate([p[0] for p in pairs]), np.concatenate([p[1] for p in pairs])


class BatchSampler:
    """Random-access training batches: batch ``k`` depends only on (seed, k).

    This is what makes resuming at iteration k reproduce the uninterrupted run.
    """

    def __init__(self, dataset: PairedDataset, batch: int, crop: int | None, seed: int):
        _check_crop(crop)
        if batch <= 0:
            raise ValueError("batch must be positive")
        self.dataset, self.batch, self.crop, self.seed = dataset, batch, crop, seed

    def __call__(self, iteration: int, batch: int | None = None, crop: int | None = None):
        batch = batch or self.batch
        crop = crop or self.crop
        rng = np.random.default_rng([self.seed, iteration, 0xBA7C])
        n = len(self.dataset)
        idx = rng.choice(n, size=batch, replace=batch > n)
        pairs = [self.dataset.crop_pair(int(i), crop, rng, int(rng.integers(2 ** 63))) for i in idx]
        return np.concatenate([p[0] for p in pairs]), np.concatenate([p[1] for p in pairs])
