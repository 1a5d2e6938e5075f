"""Run configuration, the key=value config-file format, and config hashing."""
from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

from .errors import DataError
from .network import MODEL_KINDS


@dataclass
class CmsConfig:
    """Margin-based episode construction settings.

    ``pool_multiplier`` 0 disables the pre-screen; 2 or 3 draw a pool of
    C x multiplier candidate classes. ``margin_steps`` is the number of
    probe samples per candidate class.
    """

    pool_multiplier: int = 0
    margin_steps: int = 4

    @property
    def enabled(self) -> bool:
        return self.pool_multiplier > 0

    def validate(self) -> None:
        if self.pool_multiplier < 0:
            raise ValueError("pool_multiplier must be >= 0")
        if self.enabled and self.margin_steps < 2:
            raise ValueError("margin_steps must be > 1 when the pre-screen is enabled")


@dataclass
class TrainConfig:
    model_kind: str = "lrua"
    num_classes: int = 3
    items_per_class: int = 10
    episodes_per_batch: int = 50
    total_batches: int = 1000
    discount: float = 0.5
    epsilon: float = 0.05
    epsilon_start: float | None = None
    epsilon_anneal_batches: int = 0
    eval_batches: int = 25
    eval_epsilon: float = 0.0
    seed: int = 0
    hidden_size: int = 200
    memory_slots: int = 128
    memory_width: int = 40
    usage_decay: float = 0.95
    learning_rate: float = 1e-3
    train_classes: int | None = None
    split_seed: int = 0
    log_every: int = 50
    cms: CmsConfig = field(default_factory=CmsConfig)

    def validate(self) -> None:
        if self.model_kind not in MODEL_KINDS:
            raise ValueError(f"model_kind must be one of {MODEL_KINDS}")
        if not 0.0 <= self.discount < 1.0:
            raise ValueError("discount must be in [0, 1)")
        if not 0.0 <= self.epsilon <= 1.0 or not 0.0 <= self.eval_epsilon <= 1.0:
            raise ValueError("epsilon must be in [0, 1]")
        if self.epsilon_start is not None and not 0.0 <= self.epsilon_start <= 1.0:
            raise ValueError("epsilon_start must be in [0, 1]")
        if self.epsilon_anneal_batches < 0:
            raise ValueError("epsilon_anneal_batches must be >= 0")
        for name in ("num_classes", "items_per_class", "episodes_per_batch", "hidden_size",
                     "memory_slots", "memory_width", "log_every"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive")
        if self.total_batches < 0 or self.eval_batches < 0:
            raise ValueError("batch counts must be >= 0")
        self.cms.validate()

    def epsilon_at(self, batch_index: int) -> float:
        """Exploration rate for a batch: linear decay from ``epsilon_start``
        to ``epsilon`` over the anneal window, then constant."""
        if self.epsilon_start is None or self.epsilon_anneal_batches <= 0:
            return self.epsilon
        if batch_index >= self.epsilon_anneal_batches:
            return self.epsilon
        frac = batch_index / self.epsilon_anneal_batches
        return self.epsilon_start + (self.epsilon - self.epsilon_start) * frac

    def to_dict(self) -> dict:
        out = dataclasses.asdict(self)
        return out

    @classmethod
    def from_dict(cls, raw: dict) -> "TrainConfig":
        raw = dict(raw)
        cms_raw = raw.pop("cms", {})
        cfg = cls(**raw, cms=CmsConfig(**cms_raw))
        cfg.validate()
        return cfg

    def config_hash(self) -> str:
        encoded = json.dumps(self.to_dict(), sort_keys=True).encode()
        return hashlib.sha256(encoded).hexdigest()


def load_config_file(path: str | Path) -> dict[str, str]:
    """Parse a key=value text file; '#' starts a comment, blanks ignored."""
    path = Path(path)
    if not path.is_file():
        raise DataError(f"config file {path} not found")
    out: dict[str, str] = {}
    for lineno, line in enumerate(path.read_text().splitlines(), start=1):
        stripped = line.split("#", 1)[0].strip()
        if not stripped:
            continue
        if "=" not in stripped:
            raise DataError(f"{path}:{lineno}: expected key=value, got {line!r}")
        key, value = stripped.split("=", 1)
        out[key.strip()] = value.strip()
    return out
