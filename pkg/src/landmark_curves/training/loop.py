"""Seeded, resumable training loop."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from ..autograd import AdamW, NumericError, Tensor, backward
from ..config import Config
from ..dataio import Checkpoint, Sample, load_checkpoint, sample_targets, save_checkpoint
from ..model import LandmarkCurveModel
from .losses import LossBreakdown, total_loss

log = logging.getLogger(__name__)

LOG_COLUMNS = (["epoch", "lambda_d", "l_s", "l_ind"] + [f"l_cs{h}" for h in range(4)]
               + [f"l_crv{h}" for h in range(4)] + ["total"])
CHECKPOINT_NAME = "checkpoint.bin"


class TrainingError(RuntimeError):
    pass


@dataclass
class TrainResult:
    model: LandmarkCurveModel
    optimizer: AdamW
    epochs_done: int
    steps: int
    log_lines: list[str] = field(default_factory=list)
    step_losses: list[float] = field(default_factory=list)

    def epoch_rows(self) -> list[list[float]]:
        return [[float(v) for v in line.split("\t")] for line in self.log_lines]


def feature_size(cfg: Config) -> int:
    return cfg.image_size // 32


def image_loss(model: LandmarkCurveModel, sample: Sample, epoch: int, cfg: Config) -> LossBreakdown:
    s4 = feature_size(cfg)
    targets = sample_targets(sample, s4, s4, cfg.dilation_px, cfg.categories)
    out = model(Tensor(sample.image))
    return total_loss(out, targets, epoch, cfg)


def _first_nonfinite(lb: LossBreakdown) -> str | None:
    names = ["l_s", "l_ind"] + [f"l_cs[{h}]" for h in range(4)] + [f"l_crv[{h}]" for h in range(4)]
    vals = [lb.l_s, lb.l_ind, *lb.l_cs, *lb.l_crv]
    for n, v in zip(names, vals):
        if not np.isfinite(v):
            return n
    return None if np.isfinite(lb.total) else "total"


def format_log_line(epoch: int, rows: list[LossBreakdown]) -> str:
    vals = np.mean([r.values() for r in rows], axis=0)
    return "\t".join([str(epoch)] + [repr(float(v)) for v in vals])


def make_optimizer(model: LandmarkCurveModel, cfg: Config) -> AdamW:
    return AdamW(list(model.named_parameters()), lr=cfg.learning_rate, weight_decay=cfg.weight_decay)


def train(cfg: Config, samples: list[Sample], out_dir: str | Path | None = None,
          resume: str | Path | None = None, progress: Callable[[int, LossBreakdown], None] | None = None
          ) -> TrainResult:
    """Adam(W) over mini-batches of images; one checkpoint and log line per epoch.

    Gradients of a batch are accumulated image by image (each image gets its own
    tape) and averaged. ``cfg.max_steps`` > 0 caps the number of optimizer steps.
    """
    if not samples:
        raise TrainingError("dataset is empty")
    cfg.validate()
    model = LandmarkCurveModel(cfg)
    opt = make_optimizer(model, cfg)
    data_rng = np.random.default_rng([cfg.seed, 1])
    start_epoch, steps, lines = 0, 0, []
    if resume is not None:
        ck = load_checkpoint(resume)
        model.load_state_dict(ck.params)
        opt.load_state_dict(ck.optimizer)
        data_rng.bit_generator.state = ck.rng_state
        start_epoch, steps, lines = ck.epoch, ck.step, list(ck.log or [])
    out_dir = Path(out_dir) if out_dir is not None else None
    if out_dir is not None:
        out_dir.mkdir(parents=True, exist_ok=True)
        (out_dir / "config.txt").write_text(cfg.to_text())

    result = TrainResult(model, opt, start_epoch, steps, lines)
    n = len(samples)
    for epoch in range(start_epoch, cfg.epochs):
        if cfg.max_steps and steps >= cfg.max_steps:
            break
        order = data_rng.permutation(n)
        rows = []
        for b0 in range(0, n, cfg.batch_size):
            if cfg.max_steps and steps >= cfg.max_steps:
                break
            batch = order[b0:b0 + cfg.batch_size]
            opt.zero_grad()
            batch_total = 0.0
            for idx in batch:
                lb = image_loss(model, samples[idx], epoch, cfg)
                bad = _first_nonfinite(lb)
                if bad is not None:
                    raise TrainingError(f"non-finite loss term {bad} at epoch {epoch}, step {steps}")
                try:
                    backward(lb.total_tensor * (1.0 / len(batch)))
                except NumericError as exc:
                    raise TrainingError(f"non-finite gradient at epoch {epoch}: {exc}") from exc
                lb.total_tensor = None
                rows.append(lb)
                batch_total += lb.total / len(batch)
            opt.step()
            steps += 1
            result.step_losses.append(batch_total)
            if progress is not None:
                progress(steps, rows[-1])
        if not rows:
            break
        line = format_log_line(epoch, rows)
        lines.append(line)
        log.info("epoch %d total %.5f", epoch, float(line.split("\t")[-1]))
        result.epochs_done = epoch + 1
        result.steps = steps
        if out_dir is not None:
            write_checkpoint(out_dir / CHECKPOINT_NAME, model, opt, cfg, epoch + 1, steps, data_rng, lines)
            (out_dir / "metrics.tsv").write_text("\t".join(LOG_COLUMNS) + "\n" + "\n".join(lines) + "\n")
    result.log_lines = lines
    return result


def write_checkpoint(path, model, opt: AdamW, cfg: Config, epoch: int, steps: int,
                     rng: np.random.Generator, lines: list[str]) -> Checkpoint:
    ck = Checkpoint(cfg.to_text(), epoch, model.state_dict(), opt.state_dict(),
                    rng.bit_generator.state, steps, list(lines))
    save_checkpoint(path, ck)
    return ck


def model_from_checkpoint(path: str | Path, base: Config | None = None) -> tuple[LandmarkCurveModel, Config]:
    ck = load_checkpoint(path)
    cfg = Config.from_text(ck.config_text, base)
    model = LandmarkCurveModel(cfg)
    model.load_state_dict(ck.params)
    return model, cfg
