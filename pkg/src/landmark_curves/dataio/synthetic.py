"""Procedural liver-like scenes with three curvilinear landmark categories.

Each scene is a shaded blob on a dark textured background. The ridge is a
smooth crease across the blob interior, the silhouette a contiguous arc of the
blob outline, and the ligament a short curve entering from the top of the
blob. The depth channel is the blob's height field (with a groove along the
ridge). Occluder bars sometimes cut a landmark into two polylines. Images are
quantized to 8 bits (depth to 16) so a save/load round trip is lossless.
"""
from __future__ import annotations

import numpy as np
from scipy import ndimage

from .. import geometry
from ..config import CATEGORIES, ConfigError
from .annotations import LandmarkAnnotation, Sample

OCCLUSION_PROB = 0.2
_POLY_POINTS = 40


def _cubic(p: np.ndarray, n: int) -> np.ndarray:
    t = np.linspace(0.0, 1.0, n)[:, None]
    return ((1 - t) ** 3 * p[0] + 3 * (1 - t) ** 2 * t * p[1]
            + 3 * (1 - t) * t ** 2 * p[2] + t ** 3 * p[3])


class _Blob:
    def __init__(self, rng: np.random.Generator):
        self.center = rng.uniform(0.42, 0.58, size=2)
        self.radii = np.array([rng.uniform(0.28, 0.36), rng.uniform(0.22, 0.30)])
        self.angle = rng.uniform(-0.5, 0.5)
        self.wobble = rng.uniform(-0.06, 0.06, size=2)
        self.phase = rng.uniform(0, 2 * np.pi, size=2)

    def radius(self, theta):
        return 1.0 + self.wobble[0] * np.cos(2 * theta + self.phase[0]) \
            + self.wobble[1] * np.cos(3 * theta + self.phase[1])

    def boundary(self, theta) -> np.ndarray:
        r = self.radius(theta)
        local = np.stack([r * np.cos(theta) * self.radii[0], r * np.sin(theta) * self.radii[1]], axis=-1)
        return self.to_world(local)

    def to_world(self, local: np.ndarray) -> np.ndarray:
        c, s = np.cos(self.angle), np.sin(self.angle)
        rot = np.array([[c, -s], [s, c]])
        return local @ rot.T + self.center

    def rho(self, pts: np.ndarray) -> np.ndarray:
        """Normalized radial coordinate: < 1 inside the blob."""
        c, s = np.cos(self.angle), np.sin(self.angle)
        rel = pts - self.center
        lx = (rel[..., 0] * c + rel[..., 1] * s) / self.radii[0]
        ly = (-rel[..., 0] * s + rel[..., 1] * c) / self.radii[1]
        theta = np.arctan2(ly, lx)
        return np.hypot(lx, ly) / self.radius(theta)


def _distance_to_polyline(px: np.ndarray, poly: np.ndarray) -> np.ndarray:
    """Distance from points ``px[...,2]`` to a polyline, in the units of the inputs."""
    a, b = poly[:-1], poly[1:]
    ab = b - a
    denom = np.maximum((ab * ab).sum(-1), 1e-18)
    rel = px[..., None, :] - a
    t = np.clip((rel * ab).sum(-1) / denom, 0.0, 1.0)
    d = rel - t[..., None] * ab
    return np.sqrt((d * d).sum(-1)).min(-1)


def _ridge(rng, blob: _Blob) -> np.ndarray:
    a0 = rng.uniform(0, 2 * np.pi)
    a1 = a0 + np.pi + rng.uniform(-0.5, 0.5)
    ends = [blob.to_world(0.62 * np.array([np.cos(a) * blob.radii[0], np.sin(a) * blob.radii[1]]))
            for a in (a0, a1)]
    inner = [blob.to_world(rng.uniform(-0.35, 0.35, size=2) * blob.radii) for _ in range(2)]
    ctrl = np.array([ends[0], inner[0], inner[1], ends[1]])
    # ridges run left to right so the curve orientation is visible in the image
    if ctrl[0, 0] > ctrl[3, 0]:
        ctrl = ctrl[::-1]
    return _cubic(ctrl, _POLY_POINTS)


def _silhouette(rng, blob: _Blob) -> np.ndarray:
    start = rng.uniform(0, 2 * np.pi)
    span = rng.uniform(0.6 * np.pi, 1.0 * np.pi)
    theta = np.linspace(start, start + span, _POLY_POINTS)
    return blob.boundary(theta)


def _ligament(rng, blob: _Blob) -> np.ndarray:
    # the local frame's -y direction points to the top of the image for small rotations
    theta0 = -np.pi / 2 + rng.uniform(-0.4, 0.4)
    top = blob.boundary(np.array([theta0]))[0]
    inward = blob.center - top
    inward /= np.linalg.norm(inward)
    side = np.array([-inward[1], inward[0]])
    length = rng.uniform(0.16, 0.24)
    bend = rng.uniform(-0.06, 0.06)
    p = np.array([top,
                  top + inward * length / 3 + side * bend,
                  top + inward * 2 * length / 3 + side * bend,
                  top + inward * length + side * bend * 0.5])
    return _cubic(p, _POLY_POINTS)


def _occlude(rng, poly: np.ndarray, size: int):
    """Cut the middle of ``poly`` with a bar; returns (pieces, bar rectangle or None)."""
    n = len(poly)
    lo = rng.integers(n // 3, n // 2)
    hi = lo + rng.integers(4, 8)
    pieces = [poly[:lo], poly[hi:]]
    if min(len(p) for p in pieces) < 2:
        return [poly], None
    covered = poly[lo - 1:hi + 1]
    margin = 1.5 / size
    rect = (covered[:, 0].min() - margin, covered[:, 1].min() - margin,
            covered[:, 0].max() + margin, covered[:, 1].max() + margin)
    return pieces, rect


def generate_sample(rng: np.random.Generator, h: int, w: int) -> Sample:
    blob = _Blob(rng)
    ys, xs = (np.arange(h) + 0.5) / h, (np.arange(w) + 0.5) / w
    grid = np.stack(np.meshgrid(xs, ys), axis=-1)  # [H,W,2] (x, y)
    rho = blob.rho(grid)
    inside = rho < 1.0
    height = np.where(inside, np.sqrt(np.clip(1.0 - rho ** 2, 0.0, 1.0)), 0.0)

    noise = ndimage.gaussian_filter(rng.normal(size=(3, h, w)), sigma=(0, 2.0, 2.0))
    noise /= noise.std() + 1e-12
    base_bg = np.array([0.22, 0.08, 0.07])
    base_liver = np.array([0.62, 0.26, 0.2]) * rng.uniform(0.9, 1.1)
    shade = 0.45 + 0.55 * height
    rgb = np.where(inside[None], base_liver[:, None, None] * shade[None],
                   base_bg[:, None, None]) + 0.03 * noise
    depth = 0.15 + 0.6 * height

    polys = {"ridge": _ridge(rng, blob), "ligament": _ligament(rng, blob),
             "silhouette": _silhouette(rng, blob)}
    pix = grid * np.array([w, h])
    strokes = {"ridge": (np.array([0.25, 0.07, 0.06]), 1.6),
               "ligament": (np.array([0.93, 0.88, 0.80]), 1.2),
               "silhouette": (np.array([0.95, 0.55, 0.35]), 1.2)}
    for cat in CATEGORIES:
        d = _distance_to_polyline(pix, polys[cat] * np.array([w, h]))
        color, width = strokes[cat]
        alpha = np.clip(width + 0.5 - d, 0.0, 1.0)
        rgb = rgb * (1 - alpha) + color[:, None, None] * alpha
        if cat == "ridge":
            depth = depth - 0.08 * np.exp(-(d / 2.0) ** 2) * inside

    landmarks = {}
    for cat in CATEGORIES:
        poly = np.clip(polys[cat], 0.0, 1.0)
        pieces = [poly]
        if rng.uniform() < OCCLUSION_PROB:
            pieces, rect = _occlude(rng, poly, max(h, w))
            if rect is not None:
                x0, y0, x1, y1 = rect
                bar = (grid[..., 0] >= x0) & (grid[..., 0] <= x1) & (grid[..., 1] >= y0) & (grid[..., 1] <= y1)
                rgb[:, bar] = np.array([0.55, 0.57, 0.6])[:, None] + 0.02 * noise[:, bar]
                depth[bar] = 0.05
        landmarks[cat] = [np.asarray(p) for p in pieces]

    rgb = np.round(np.clip(rgb, 0.0, 1.0) * 255.0) / 255.0
    depth = np.round(np.clip(depth, 0.0, 1.0) * 65535.0) / 65535.0
    image = np.concatenate([rgb, depth[None]], axis=0)
    return Sample(image, LandmarkAnnotation(h, w, landmarks))


def generate_synthetic(seed: int, count: int, h: int = 128, w: int = 128) -> list[Sample]:
    """``count`` samples fully determined by ``seed``."""
    if h % 32 or w % 32:
        raise ConfigError(f"image size {h}x{w} must be divisible by 32")
    rng = np.random.default_rng(seed)
    samples = []
    for i in range(count):
        s = generate_sample(rng, h, w)
        s.annotation.file = f"img_{i:03d}.png"
        samples.append(s)
    return samples


def polyline_in_unit_square(poly) -> bool:
    arr, _ = geometry.check_polyline(poly)
    return bool(np.all((arr >= 0) & (arr <= 1)))
