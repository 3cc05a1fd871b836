"""Run configuration and the plain "key = value" config file format."""

from __future__ import annotations

from dataclasses import dataclass, field, fields

from .distill import DistillConfig
from .errors import ConfigError
from .model import ModelConfig
from .pruning import ScheduleParams, validate_pool_densities

MODES = ("grain", "grain-no-ef", "heads-ffn", "random-score")


@dataclass
class RunConfig:
    model: ModelConfig = field(default_factory=ModelConfig)
    schedule: ScheduleParams = field(default_factory=ScheduleParams)
    distill: DistillConfig = field(default_factory=DistillConfig)
    alpha: float = 0.3            # structure regularization strength
    beta: float = 0.998           # importance smoothing factor
    batch_size: int = 32
    lr: float = 3e-3              # peak learning rate
    epochs: int = 20
    teacher_epochs: int = 5
    seed: int = 0
    mode: str = "grain"
    embed_rank: int = 16
    ffn_density: float = None     # heads-ffn mode only
    heads_density: float = None
    weight_decay: float = 0.01

    def validate(self):
        try:
            self.model.validate()
            self.schedule.validate()
            self.distill.validate()
        except Exception as exc:
            raise ConfigError(str(exc)) from None
        if self.mode not in MODES:
            raise ConfigError(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.alpha < 0:
            raise ConfigError(f"alpha must be >= 0, got {self.alpha}")
        if not 0.0 <= self.beta <= 1.0:
            raise ConfigError(f"beta must be in [0, 1], got {self.beta}")
        if self.batch_size < 1 or self.epochs < 0 or self.teacher_epochs < 0:
            raise ConfigError("batch_size must be >= 1 and epoch counts >= 0")
        if self.lr <= 0 or self.weight_decay < 0:
            raise ConfigError("lr must be > 0 and weight_decay >= 0")
        max_rank = min(self.model.vocab, self.model.d)
        if not 1 <= self.embed_rank <= max_rank:
            raise ConfigError(f"embed_rank must be in [1, {max_rank}], got {self.embed_rank}")
        if self.mode == "heads-ffn":
            if self.ffn_density is None or self.heads_density is None:
                raise ConfigError("heads-ffn mode needs ffn_density and heads_density")
            try:
                validate_pool_densities(self.ffn_density, self.heads_density,
                                        self.schedule.s_f, self.model, tol=1e-4)
            except Exception as exc:
                raise ConfigError(str(exc)) from None
        return self


_MODEL_KEYS = {f.name for f in fields(ModelConfig)}
_INT_KEYS = {"d", "d_h", "n_heads", "d_f", "n_layers", "vocab", "seq_len",
             "n_classes", "batch_size", "epochs", "teacher_epochs", "seed",
             "embed_rank"}
_FLOAT_KEYS = {"dropout", "p_s", "p_e", "density", "tau", "hidden_weight",
               "alpha", "beta", "lr", "ffn_density", "heads_density",
               "weight_decay"}
_STR_KEYS = {"mode", "layer_map"}
ALL_KEYS = _INT_KEYS | _FLOAT_KEYS | _STR_KEYS


def _assign(cfg: RunConfig, key: str, value: str, where: str):
    if key not in ALL_KEYS:
        raise ConfigError(f"{where}: unknown key {key!r}")
    try:
        if key in _INT_KEYS:
            parsed = int(value)
        elif key in _FLOAT_KEYS:
            parsed = float(value)
        else:
            parsed = value
    except ValueError:
        raise ConfigError(f"{where}: bad value {value!r} for {key}") from None
    if key in _MODEL_KEYS:
        setattr(cfg.model, key, parsed)
    elif key in ("p_s", "p_e"):
        setattr(cfg.schedule, key, parsed)
    elif key == "density":
        cfg.schedule.s_f = parsed
    elif key in ("tau", "hidden_weight", "layer_map"):
        setattr(cfg.distill, key, parsed)
    else:
        setattr(cfg, key, parsed)


def apply_overrides(cfg: RunConfig, overrides: dict) -> RunConfig:
    """Assign non-None override values using config-file key names."""
    for key, value in (overrides or {}).items():
        if value is not None:
            _assign(cfg, key, str(value), "override")
    return cfg


def parse_config(path: str, overrides: dict = None) -> RunConfig:
    """Read "key = value" lines ('#' starts a comment) and validate.

    Unknown keys are errors. `overrides` are applied after the file, using
    the same key names.
    """
    cfg = RunConfig()
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"{path}:{lineno}: expected 'key = value', got {raw.rstrip()!r}")
            key, value = (part.strip() for part in line.split("=", 1))
            _assign(cfg, key, value, f"{path}:{lineno}")
    apply_overrides(cfg, overrides)
    return cfg.validate()


def write_config(path: str, cfg: RunConfig):
    """Emit a config file holding every key explicitly."""
    from .checkpoint import write_text_atomic

    lines = []
    for key in sorted(ALL_KEYS):
        if key in _MODEL_KEYS:
            value = getattr(cfg.model, key)
        elif key in ("p_s", "p_e"):
            value = getattr(cfg.schedule, key)
        elif key == "density":
            value = cfg.schedule.s_f
        elif key in ("tau", "hidden_weight", "layer_map"):
            value = getattr(cfg.distill, key)
        else:
            value = getattr(cfg, key)
        if value is None:
            continue
        lines.append(f"{key} = {value}")
    write_text_atomic(path, "\n".join(lines) + "\n")
