"""Landmark annotations, samples, and the JSON + PNG on-disk layout.

Schema (one document per dataset)::

    {"images": [{"file": "img_000.png", "height": 128, "width": 128,
                 "landmarks": {"ridge": [[[x, y], ...], ...],
                               "ligament": [...], "silhouette": [...]}}]}

Coordinates are normalized floats. A depth map may sit next to each image as
``<stem>_depth.png`` (16-bit); without it the depth channel is zero-filled.
"""
from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image

from ..config import CATEGORIES

log = logging.getLogger(__name__)


class AnnotationError(ValueError):
    pass


@dataclass
class LandmarkAnnotation:
    height: int
    width: int
    landmarks: dict[str, list[np.ndarray]]
    file: str = ""

    def per_category(self, categories=CATEGORIES) -> list[list[np.ndarray]]:
        return [self.landmarks.get(c, []) for c in categories]

    def to_json(self) -> dict:
        return {
            "file": self.file,
            "height": self.height,
            "width": self.width,
            "landmarks": {c: [np.asarray(p).tolist() for p in polys] for c, polys in self.landmarks.items()},
        }


@dataclass
class Sample:
    image: np.ndarray  # [4,H,W], RGB + depth in [0,1]
    annotation: LandmarkAnnotation
    _targets: dict = field(default_factory=dict, repr=False, compare=False)


def _parse_polyline(raw, where: str) -> np.ndarray:
    try:
        arr = np.asarray(raw, dtype=np.float64)
    except (TypeError, ValueError):
        raise AnnotationError(f"{where}: polyline is not a list of [x, y] pairs") from None
    if arr.ndim != 2 or arr.shape[1] != 2:
        raise AnnotationError(f"{where}: polyline is not a list of [x, y] pairs")
    if arr.shape[0] < 2:
        raise AnnotationError(f"{where}: polyline has {arr.shape[0]} point(s), need at least 2")
    if not np.all(np.isfinite(arr)):
        raise AnnotationError(f"{where}: non-finite coordinate")
    return arr


def parse_annotation(entry: dict, index: int, categories=CATEGORIES) -> LandmarkAnnotation:
    where = f"images[{index}]"
    for key in ("file", "height", "width", "landmarks"):
        if key not in entry:
            raise AnnotationError(f"{where}: missing field '{key}'")
    landmarks = {}
    for cat, polys in entry["landmarks"].items():
        if cat not in categories:
            raise AnnotationError(f"{where}.landmarks: unknown category '{cat}'")
        if not isinstance(polys, list):
            raise AnnotationError(f"{where}.landmarks.{cat}: expected a list of polylines")
        landmarks[cat] = [_parse_polyline(p, f"{where}.landmarks.{cat}[{i}]") for i, p in enumerate(polys)]
    for cat in categories:
        landmarks.setdefault(cat, [])
    return LandmarkAnnotation(int(entry["height"]), int(entry["width"]),
                              {c: landmarks[c] for c in categories}, str(entry["file"]))


def _read_image(path: Path) -> np.ndarray:
    if not path.exists():
        raise FileNotFoundError(f"image not found: {path}")
    with Image.open(path) as im:
        rgb = np.asarray(im.convert("RGB"), dtype=np.float64) / 255.0
    return np.transpose(rgb, (2, 0, 1))


def _read_depth(path: Path, shape) -> np.ndarray:
    if not path.exists():
        log.warning("no depth map at %s; depth channel zero-filled", path)
        return np.zeros(shape)
    with Image.open(path) as im:
        return np.asarray(im, dtype=np.float64) / 65535.0


def depth_path(image_path: Path) -> Path:
    return image_path.with_name(image_path.stem + "_depth.png")


def load_image(path: str | Path) -> np.ndarray:
    """``[4,H,W]`` RGB-D array from a PNG and its optional ``<stem>_depth.png`` sibling."""
    path = Path(path)
    rgb = _read_image(path)
    return np.concatenate([rgb, _read_depth(depth_path(path), rgb.shape[1:])[None]], axis=0)


def load_annotations(path: str | Path, categories=CATEGORIES) -> list[Sample]:
    path = Path(path)
    try:
        doc = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise AnnotationError(f"{path}: line {exc.lineno}: {exc.msg}") from None
    if not isinstance(doc, dict) or not isinstance(doc.get("images"), list):
        raise AnnotationError(f"{path}: top level must be an object with an 'images' list")
    samples = []
    for i, entry in enumerate(doc["images"]):
        ann = parse_annotation(entry, i, categories)
        img_path = path.parent / ann.file
        rgb = _read_image(img_path)
        if rgb.shape[1:] != (ann.height, ann.width):
            raise AnnotationError(f"images[{i}]: image is {rgb.shape[1:]}, annotation says "
                                  f"{(ann.height, ann.width)}")
        depth = _read_depth(depth_path(img_path), rgb.shape[1:])
        samples.append(Sample(np.concatenate([rgb, depth[None]], axis=0), ann))
    return samples


def save_annotations(samples: list[Sample], out_dir: str | Path, name: str = "annotations.json") -> Path:
    """Write PNG images (plus 16-bit depth) and the annotation document."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    entries = []
    for i, s in enumerate(samples):
        ann = s.annotation
        if not ann.file:
            ann.file = f"img_{i:03d}.png"
        rgb = np.round(np.transpose(s.image[:3], (1, 2, 0)) * 255.0).clip(0, 255).astype(np.uint8)
        Image.fromarray(rgb, mode="RGB").save(out_dir / ann.file, optimize=False)
        depth = np.round(s.image[3] * 65535.0).clip(0, 65535).astype(np.uint16)
        Image.fromarray(depth).save(depth_path(out_dir / ann.file))
        entries.append(ann.to_json())
    out = out_dir / name
    out.write_text(json.dumps({"images": entries}, indent=1) + "\n")
    return out
