"""Run configuration: a flat dataclass read from / written to key=value text."""
from __future__ import annotations

import dataclasses
import hashlib
from dataclasses import dataclass, fields
from pathlib import Path

CATEGORIES = ("ridge", "ligament", "silhouette")


class ConfigError(ValueError):
    pass


@dataclass
class Config:
    # data
    image_size: int = 128
    categories: tuple[str, ...] = CATEGORIES
    # model
    channels: int = 32
    encoder_widths: tuple[int, ...] = (16, 32, 32, 32)
    hidden_dim: int = 64
    heads: int = 8
    sampling_points: int = 4
    num_proposals: int = 10
    num_ref_points: int = 26
    pool_size: int = 256
    share_semantic_queries: bool = False
    detach_stage_inputs: bool = True
    # loss
    lambda_s: float = 10.0
    lambda_ind: float = 1.0
    lambda_cs: float = 1.0
    lambda_crv: float = 1.0
    match_cost_cs: float = 1.0
    match_cost_crv: float = 1.0
    focal_alpha: float = 0.25
    focal_gamma: float = 2.0
    n_interp: int = 26
    # optimisation
    epochs: int = 60
    batch_size: int = 4
    learning_rate: float = 1e-5
    weight_decay: float = 1e-4
    max_steps: int = 0
    seed: int = 0
    # evaluation
    score_threshold: float = 0.3
    dilation_full_scale: float = 30.0
    assd_surface: str = "centerline"

    @property
    def num_categories(self) -> int:
        return len(self.categories)

    @property
    def dilation_px(self) -> int:
        """Evaluation dilation, scaled from the full-scale 30 px to the image size."""
        return int(round(self.dilation_full_scale * self.image_size / 1024))

    def validate(self) -> "Config":
        if self.image_size % 32:
            raise ConfigError(f"image_size must be divisible by 32, got {self.image_size}")
        if self.hidden_dim % self.heads:
            raise ConfigError("hidden_dim must be divisible by heads")
        if self.hidden_dim % 4:
            raise ConfigError("hidden_dim must be divisible by 4 for the positional encoding")
        if self.num_ref_points < 7:
            raise ConfigError("num_ref_points must be >= 7 so six control points can be refit")
        if self.num_proposals < 1 or self.pool_size < self.num_proposals:
            raise ConfigError("need pool_size >= num_proposals >= 1")
        if len(self.encoder_widths) != 4:
            raise ConfigError("encoder_widths needs 4 entries")
        if self.assd_surface not in ("centerline", "dilated"):
            raise ConfigError("assd_surface must be 'centerline' or 'dilated'")
        for name in ("epochs", "batch_size", "channels"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be positive")
        return self

    def replace(self, **changes) -> "Config":
        return dataclasses.replace(self, **changes).validate()

    # -- text form --------------------------------------------------------------
    def to_text(self) -> str:
        lines = []
        for f in fields(self):
            value = getattr(self, f.name)
            if isinstance(value, tuple):
                value = ",".join(str(v) for v in value)
            lines.append(f"{f.name}={value}")
        return "\n".join(lines) + "\n"

    def digest(self) -> str:
        return hashlib.sha256(self.to_text().encode()).hexdigest()[:16]

    def with_overrides(self, pairs: dict[str, str]) -> "Config":
        known = {f.name: f for f in fields(self)}
        changes = {}
        for key, raw in pairs.items():
            if key not in known:
                raise ConfigError(f"unknown config key: {key}")
            changes[key] = _coerce(getattr(self, key), raw, key)
        return self.replace(**changes)

    @classmethod
    def from_text(cls, text: str, base: "Config | None" = None) -> "Config":
        return (base or cls()).with_overrides(parse_pairs(text.splitlines()))

    @classmethod
    def load(cls, path: str | Path, base: "Config | None" = None) -> "Config":
        return cls.from_text(Path(path).read_text(), base)


def parse_pairs(lines) -> dict[str, str]:
    pairs = {}
    for n, line in enumerate(lines, 1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ConfigError(f"line {n}: expected key=value, got {line!r}")
        key, value = line.split("=", 1)
        pairs[key.strip()] = value.strip()
    return pairs


def _coerce(current, raw: str, key: str):
    try:
        if isinstance(current, bool):
            if raw.lower() in ("1", "true", "yes"):
                return True
            if raw.lower() in ("0", "false", "no"):
                return False
            raise ValueError(raw)
        if isinstance(current, int):
            return int(raw)
        if isinstance(current, float):
            return float(raw)
        if isinstance(current, tuple):
            items = [s.strip() for s in raw.split(",") if s.strip()]
            if current and isinstance(current[0], int):
                return tuple(int(s) for s in items)
            return tuple(items)
        return raw
    except ValueError:
        raise ConfigError(f"bad value for {key}: {raw!r}") from None


def desk_config(**overrides) -> Config:
    """Settings for the small overfit run on 8 synthetic 128 px images."""
    base = Config(learning_rate=1e-3, epochs=250, batch_size=1, seed=7)
    return base.replace(**overrides) if overrides else base.validate()

