"""Architecture hyperparameters and the flat ``key=value`` config format."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass
from pathlib import Path


class ConfigError(ValueError):
    pass


def default_heads(rstb_count: int, channels: int) -> tuple[int, ...]:
    """Head counts doubling per block (1, 2, 4, ...), capped so they divide ``channels``."""
    cap = channels & -channels  # largest power of two dividing channels
    return tuple(min(2 ** i, cap) for i in range(rstb_count))


@dataclass(frozen=True)
class ModelConfig:
    channels: int = 96
    rstb_count: int = 3
    stl_count: int = 6
    window_size: int = 7
    heads: tuple[int, ...] = (1, 2, 4)
    mlp_ratio: float = 4.0
    tile: int = 224
    residual: bool = True
    eps: float = 1e-5

    def __post_init__(self):
        object.__setattr__(self, "heads", tuple(int(h) for h in self.heads))
        self.validate()

    def validate(self) -> None:
        for name in ("channels", "rstb_count", "stl_count", "window_size", "tile"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be positive, got {getattr(self, name)}")
        if len(self.heads) != self.rstb_count:
            raise ConfigError(f"heads {self.heads} must have one entry per RSTB "
                              f"({self.rstb_count})")
        for h in self.heads:
            if h < 1 or self.channels % h:
                raise ConfigError(f"channels {self.channels} not divisible by heads {h}")
        if self.tile % self.window_size:
            raise ConfigError(f"tile {self.tile} not divisible by window {self.window_size}")
        if self.mlp_ratio <= 0 or int(round(self.channels * self.mlp_ratio)) < 1:
            raise ConfigError(f"bad mlp_ratio {self.mlp_ratio}")

    @property
    def hidden(self) -> int:
        return int(round(self.channels * self.mlp_ratio))

    @property
    def shift(self) -> int:
        return self.window_size // 2

    @classmethod
    def tiny(cls, **overrides) -> ModelConfig:
        """The small test configuration (C=8, m=1, n=2, N=4, 8x8 tiles)."""
        base = dict(channels=8, rstb_count=1, stl_count=2, window_size=4, heads=(1,), tile=8)
        base.update(overrides)
        if "rstb_count" in overrides and "heads" not in overrides:
            base["heads"] = default_heads(base["rstb_count"], base["channels"])
        return cls(**base)

    def replace(self, **changes) -> ModelConfig:
        """Copy with changes; re-derives ``heads`` when m or C change and heads is not given."""
        if ("rstb_count" in changes or "channels" in changes) and "heads" not in changes:
            m = changes.get("rstb_count", self.rstb_count)
            c = changes.get("channels", self.channels)
            changes["heads"] = default_heads(m, c)
        return dataclasses.replace(self, **changes)

    # -- key=value text form ----------------------------------------------

    def to_text(self) -> str:
        lines = [
            f"channels={self.channels}",
            f"rstb={self.rstb_count}",
            f"stl={self.stl_count}",
            f"window={self.window_size}",
            f"heads={','.join(str(h) for h in self.heads)}",
            f"mlp_ratio={self.mlp_ratio:g}",
            f"tile={self.tile}",
            f"residual={'true' if self.residual else 'false'}",
        ]
        return "\n".join(lines) + "\n"

    def save(self, path) -> None:
        Path(path).write_text(self.to_text())

    @classmethod
    def from_text(cls, text: str, base: ModelConfig | None = None) -> ModelConfig:
        base = base or cls()
        changes: dict = {}
        for lineno, raw in enumerate(text.splitlines(), 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"line {lineno}: expected key=value, got {raw!r}")
            key, value = (s.strip() for s in line.split("=", 1))
            if key not in _KEYS:
                raise ConfigError(f"line {lineno}: unknown key {key!r}")
            attr, parse = _KEYS[key]
            try:
                changes[attr] = parse(value)
            except ValueError as exc:
                raise ConfigError(f"line {lineno}: bad value for {key}: {value!r}") from exc
        return base.replace(**changes)

    @classmethod
    def load(cls, path, base: ModelConfig | None = None) -> ModelConfig:
        return cls.from_text(Path(path).read_text(), base)


def _parse_bool(s: str) -> bool:
    low = s.lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ValueError(s)


_KEYS = {
    "channels": ("channels", int),
    "rstb": ("rstb_count", int),
    "stl": ("stl_count", int),
    "window": ("window_size", int),
    "heads": ("heads", lambda s: tuple(int(v) for v in s.split(","))),
    "mlp_ratio": ("mlp_ratio", float),
    "tile": ("tile", int),
    "residual": ("residual", _parse_bool),
}


@dataclass
class TrainConfig:
    lr: float = 1e-5
    batch_size: int = 4
    epochs: int = 50
    lam: float = 1e3
    seed: int = 0
    ssim_window: int = 11
    max_iterations: int | None = None

    def __post_init__(self):
        if self.lam <= 0:
            raise ConfigError(f"lambda must be positive, got {self.lam}")
        if self.batch_size < 1 or self.epochs < 1:
            raise ConfigError("batch_size and epochs must be positive")
