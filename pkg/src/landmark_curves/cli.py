"""Command-line entry point: synth, train, eval, infer, render.

Exit codes: 0 success, 1 runtime failure, 2 usage or configuration error.
"""
from __future__ import annotations

import argparse
import base64
import io
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import geometry
from .config import Config, ConfigError, desk_config, parse_pairs
from .dataio import (
    AnnotationError,
    CheckpointError,
    Sample,
    generate_synthetic,
    load_annotations,
    load_image,
    save_annotations,
)

log = logging.getLogger("landmark_curves")

STROKES = {
    "gt": ("#ffffff", 1.6, "none"),
    "stage0": ("#ff9f1c", 1.0, "4 2"),
    "stage3": ("#e71d36", 1.4, "none"),
}
CATEGORY_FILL = {"ridge": "#2ec4b6", "ligament": "#ffbf00", "silhouette": "#3a86ff"}


class UsageError(Exception):
    pass


def _parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="landmark-curves", description=__doc__.splitlines()[0])
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    def common(p, data=True, ckpt=False):
        p.add_argument("--config", type=Path, help="key=value config file")
        p.add_argument("--seed", type=int)
        p.add_argument("--out", type=Path, required=True)
        if data:
            p.add_argument("--data", type=Path, help="annotations.json or the directory holding it")
        if ckpt:
            p.add_argument("--checkpoint", type=Path, required=True)
            p.add_argument("--threshold", type=float)
        p.add_argument("overrides", nargs="*", metavar="key=value")

    p = sub.add_parser("synth", help="write a synthetic dataset")
    common(p, data=False)
    p.add_argument("--count", type=int, default=8)
    p.add_argument("--size", type=int, default=128)

    p = sub.add_parser("train", help="train a model")
    common(p)
    p.add_argument("--preset", choices=("desk", "full"), default="desk")
    p.add_argument("--resume", type=Path, help="checkpoint to continue from")

    p = sub.add_parser("eval", help="evaluate a checkpoint on a dataset")
    common(p, ckpt=True)

    p = sub.add_parser("infer", help="predict curves for images")
    common(p, ckpt=True)
    p.add_argument("--image", type=Path, action="append", default=[])

    p = sub.add_parser("render", help="vector overlays of predictions and GT")
    common(p, ckpt=True)
    p.add_argument("--image", type=Path, action="append", default=[])
    return ap


def _overrides(items) -> dict[str, str]:
    bad = [s for s in items if "=" not in s]
    if bad:
        raise ConfigError(f"expected key=value, got {bad[0]!r}")
    return parse_pairs(items)


def _effective_config(args, base: Config) -> Config:
    cfg = Config.load(args.config, base) if args.config else base
    cfg = cfg.with_overrides(_overrides(args.overrides))
    if args.seed is not None:
        cfg = cfg.replace(seed=args.seed)
    return cfg.validate()


def _data_path(path: Path | None) -> Path:
    if path is None:
        raise UsageError("--data is required")
    if path.is_dir():
        path = path / "annotations.json"
    if not path.exists():
        raise UsageError(f"dataset not found: {path}")
    return path


def _load_samples(path: Path | None, cfg: Config) -> list[Sample]:
    samples = load_annotations(_data_path(path), cfg.categories)
    if not samples:
        raise UsageError("dataset is empty")
    return samples


def _load_model(args):
    from .training import model_from_checkpoint

    if not args.checkpoint.exists():
        raise UsageError(f"checkpoint not found: {args.checkpoint}")
    model, cfg = model_from_checkpoint(args.checkpoint)
    cfg = _effective_config(args, cfg)
    model.config = cfg
    return model, cfg


def _write_config(out: Path, cfg: Config) -> None:
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.txt").write_text(cfg.to_text())


def cmd_synth(args) -> int:
    if args.count < 1:
        raise UsageError("--count must be at least 1")
    if args.size % 32:
        raise UsageError("--size must be a multiple of 32")
    seed = 7 if args.seed is None else args.seed
    if args.overrides:
        raise UsageError("synth takes no key=value overrides")
    samples = generate_synthetic(seed, args.count, args.size, args.size)
    path = save_annotations(samples, args.out)
    print(f"wrote {len(samples)} samples to {path}")
    return 0


def cmd_train(args) -> int:
    from .evaluation import evaluate, write_report
    from .plotting import plot_metric_report, plot_training_log
    from .training import train
    from .training.loop import LOG_COLUMNS

    base = desk_config() if args.preset == "desk" else Config()
    cfg = _effective_config(args, base)
    samples = _load_samples(args.data, cfg)
    _write_config(args.out, cfg)
    result = train(cfg, samples, args.out, resume=args.resume)
    print("\t".join(LOG_COLUMNS))
    for line in result.log_lines:
        print(line)
    if result.log_lines:
        plot_training_log(result.epoch_rows(), args.out / "loss.png", result.step_losses)
    report = evaluate(result.model, samples, cfg)
    write_report(report, args.out, "train_report")
    plot_metric_report(report, args.out / "train_report.png")
    print(report.to_table(), end="")
    return 0


def cmd_eval(args) -> int:
    from .evaluation import evaluate, write_report
    from .plotting import plot_metric_report

    model, cfg = _load_model(args)
    samples = _load_samples(args.data, cfg)
    _write_config(args.out, cfg)
    report = evaluate(model, samples, cfg, args.threshold)
    write_report(report, args.out)
    plot_metric_report(report, args.out / "report.png")
    print(report.to_table(), end="")
    print("---")
    print(report.to_keyvalue(), end="")
    return 0


def _inputs(args, cfg: Config) -> list[tuple[str, np.ndarray, Sample | None]]:
    items = []
    for p in args.image:
        if not p.exists():
            raise UsageError(f"image not found: {p}")
        items.append((p.stem, load_image(p), None))
    if args.data is not None:
        for s in _load_samples(args.data, cfg):
            items.append((Path(s.annotation.file).stem, s.image, s))
    if not items:
        raise UsageError("give --image or --data")
    return items


def _curve_records(curves, scores, threshold, categories) -> dict:
    out = {}
    for m, name in enumerate(categories):
        keep = np.flatnonzero(scores[m] >= threshold)
        out[name] = [{"score": float(scores[m, k]), "control_points": curves[m, k].tolist()} for k in keep]
    return out


def cmd_infer(args) -> int:
    from .model import predict

    model, cfg = _load_model(args)
    thr = cfg.score_threshold if args.threshold is None else args.threshold
    _write_config(args.out, cfg)
    doc = {"threshold": thr, "images": []}
    for name, image, _ in _inputs(args, cfg):
        pred = predict(model, image)
        doc["images"].append({"name": name,
                              "stage3": _curve_records(pred.curves[-1], pred.scores[-1], thr, cfg.categories),
                              "stage0": _curve_records(pred.curves[0], pred.scores[0], thr, cfg.categories)})
        kept = sum(len(v) for v in doc["images"][-1]["stage3"].values())
        print(f"{name}\t{kept} curves")
    (args.out / "curves.json").write_text(json.dumps(doc, indent=1) + "\n")
    return 0


def _svg_path(points: np.ndarray, w: int, h: int) -> str:
    xy = points * np.array([w, h])
    return "M " + " L ".join(f"{x:.2f},{y:.2f}" for x, y in xy)


def _png_data_uri(image: np.ndarray) -> str:
    from PIL import Image

    rgb = np.round(np.transpose(image[:3], (1, 2, 0)) * 255).clip(0, 255).astype(np.uint8)
    buf = io.BytesIO()
    Image.fromarray(rgb, mode="RGB").save(buf, format="PNG")
    return "data:image/png;base64," + base64.b64encode(buf.getvalue()).decode("ascii")


def render_svg(image: np.ndarray, stage0, stage3, categories, gt=None, dilation_px: int = 0) -> str:
    """SVG overlay: dilated GT bands as translucent fills, GT, stage-0 and stage-3 curves as paths.

    ``stage0``/``stage3`` are per-category lists of ``[6,2]`` curves; ``gt`` is per-category
    lists of polylines (normalized coordinates).
    """
    _, h, w = image.shape
    parts = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}">',
             f'<image href="{_png_data_uri(image)}" width="{w}" height="{h}"/>']
    for m, name in enumerate(categories):
        fill = CATEGORY_FILL.get(name, "#cccccc")
        g = [f'<g id="{name}">']
        if gt is not None:
            for poly in gt[m]:
                d = _svg_path(np.asarray(poly), w, h)
                g.append(f'<path class="mask" d="{d}" fill="none" stroke="{fill}" stroke-opacity="0.3" '
                         f'stroke-width="{2 * dilation_px + 1}" stroke-linecap="round" stroke-linejoin="round"/>')
                color, width, dash = STROKES["gt"]
                g.append(f'<path class="gt" d="{d}" fill="none" stroke="{color}" stroke-width="{width}"/>')
        for key, curves in (("stage0", stage0[m]), ("stage3", stage3[m])):
            color, width, dash = STROKES[key]
            for c in curves:
                d = _svg_path(geometry.curve_polyline(c, 48), w, h)
                g.append(f'<path class="{key}" d="{d}" fill="none" stroke="{color}" stroke-width="{width}" '
                         f'stroke-dasharray="{dash}"/>')
        g.append("</g>")
        parts.extend(g)
    parts.append("</svg>")
    return "\n".join(parts) + "\n"


def cmd_render(args) -> int:
    from .evaluation import finalize_predictions
    from .model import predict

    model, cfg = _load_model(args)
    thr = cfg.score_threshold if args.threshold is None else args.threshold
    _write_config(args.out, cfg)
    for name, image, sample in _inputs(args, cfg):
        pred = predict(model, image)
        s0 = finalize_predictions(pred.curves[0], pred.scores[0], thr)
        s3 = finalize_predictions(pred.curves[-1], pred.scores[-1], thr)
        gt = sample.annotation.per_category(cfg.categories) if sample is not None else None
        svg = render_svg(image, s0, s3, cfg.categories, gt, cfg.dilation_px)
        path = args.out / f"{name}.svg"
        path.write_text(svg)
        print(path)
    return 0


COMMANDS = {"synth": cmd_synth, "train": cmd_train, "eval": cmd_eval, "infer": cmd_infer, "render": cmd_render}


def main(argv=None) -> int:
    parser = _parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except (UsageError, ConfigError, AnnotationError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (CheckpointError, FileNotFoundError, OSError, RuntimeError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
