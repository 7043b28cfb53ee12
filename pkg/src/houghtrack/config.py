"""Flat ``key = value`` configuration.

Defaults follow the published tracker where it states a value (input sizes
127/303, groups N=8, regions R=9, momentum, weight decay, warmup start);
the rest are desk-scale choices.  Unknown keys are rejected.
"""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass, fields

from .errors import ConfigError, DataError


def _ints(text):
    return tuple(int(v) for v in text.replace(",", " ").split())


def _floats(text):
    return tuple(float(v) for v in text.replace(",", " ").split())


def _bool(text):
    low = text.strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


@dataclass
class Config:
    # network
    arch: str = "toy8"                  # toy8 | toy4
    channels: int = 64                  # backbone output channels C
    template_size: int = 127
    search_size: int = 303
    template_feat: int = 6              # template feature extent h after centre crop
    groups: int = 8                     # N
    regions: int = 9                    # R
    vote_extent: int = 17               # H0 = W0
    ring_radii: tuple = (1.0, 4.0, 8.0)
    angle_bins: int = 4
    gen_widths: tuple = (128, 64, 64, 32)
    attention_hidden: int = 0           # 0 -> same as channels
    init: str = "he"                    # he | gauss
    init_std: float = 0.01
    head_bias: float = -4.6            # logit of a 0.01 corner prior
    dtype: str = "float32"
    # ablation switches
    corr_mode: str = "pyramid"          # pyramid | depthwise
    use_pyramid: bool = True
    use_attention: bool = True
    use_grid: bool = True
    refine_upsample: bool = True
    # supervision
    iou_threshold: float = 0.5
    focal_alpha: float = 2.0
    focal_beta: float = 4.0
    # tracker
    gamma: float = 0.3
    context: float = 0.5                # p = context * (w + h)
    # training
    steps: int = 2000
    batch: int = 8
    lr_start: float = 1e-6
    lr_peak: float = 1e-3
    warmup_frac: float = 0.125
    momentum: float = 0.9
    weight_decay: float = 1e-4
    pair_interval: int = 100
    search_jitter: float = 0.25         # centre jitter, fraction of target size
    scale_jitter: float = 0.05
    grad_clip: float = 10.0             # 0 disables
    seed: int = 0
    # synthetic data
    frame_size: int = 160
    n_frames: int = 40
    difficulty: int = 0

    def validate(self):
        if self.arch not in ("toy8", "toy4"):
            raise ConfigError(f"arch must be toy8 or toy4, got {self.arch!r}")
        if self.corr_mode not in ("pyramid", "depthwise"):
            raise ConfigError(f"corr_mode must be pyramid or depthwise, got {self.corr_mode!r}")
        if self.init not in ("he", "gauss"):
            raise ConfigError(f"init must be he or gauss, got {self.init!r}")
        if self.dtype not in ("float32", "float64"):
            raise ConfigError(f"dtype must be float32 or float64, got {self.dtype!r}")
        if self.channels % self.groups:
            raise ConfigError(f"channels {self.channels} not divisible by groups {self.groups}")
        if self.template_feat < 2:
            raise ConfigError("template_feat must be >= 2")
        if len(self.gen_widths) != 4:
            raise ConfigError("gen_widths needs four entries")
        expected = 1 + (len(self.ring_radii) - 1) * self.angle_bins
        if self.regions != expected:
            raise ConfigError(
                f"regions={self.regions} but ring_radii/angle_bins give {expected}")
        if not 0.0 <= self.gamma <= 1.0:
            raise ConfigError("gamma must lie in [0, 1]")
        if not 0.0 < self.iou_threshold < 1.0:
            raise ConfigError("iou_threshold must lie in (0, 1)")
        if self.steps < 1 or self.batch < 1:
            raise ConfigError("steps and batch must be positive")
        return self

    def replace(self, **changes):
        return dataclasses.replace(self, **changes).validate()

    def to_text(self):
        lines = []
        for f in fields(self):
            value = getattr(self, f.name)
            if isinstance(value, tuple):
                value = ",".join(_fmt(v) for v in value)
            elif isinstance(value, bool):
                value = "true" if value else "false"
            lines.append(f"{f.name} = {value}")
        return "\n".join(lines) + "\n"


def _fmt(v):
    return repr(v) if isinstance(v, float) else str(v)


_PARSERS = {int: int, float: float, str: str, bool: _bool}


def _parser_for(f):
    default = f.default
    if isinstance(default, tuple):
        return _floats if isinstance(default[0], float) else _ints
    return _PARSERS[type(default)]


def parse_config(text, base=None):
    cfg = dataclasses.replace(base) if base is not None else Config()
    known = {f.name: f for f in fields(Config)}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected key = value")
        key, value = (part.strip() for part in line.split("=", 1))
        if key not in known:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        try:
            setattr(cfg, key, _parser_for(known[key])(value))
        except ValueError as exc:
            raise ConfigError(f"line {lineno}: bad value for {key}: {exc}") from None
    return cfg.validate()


def load_config(path=None, overrides=()):
    cfg = Config()
    if path is not None:
        try:
            with open(path) as fh:
                cfg = parse_config(fh.read())
        except OSError as exc:
            raise DataError(str(exc)) from None
    if overrides:
        cfg = parse_config("\n".join(overrides), base=cfg)
    return cfg.validate()


def toy_config(**changes):
    """Small stride-4 setup used by the desk-scale tests and benchmarks."""
    base = Config(
        arch="toy4", channels=16, template_size=48, search_size=96, groups=4,
        gen_widths=(32, 16, 16, 8), frame_size=128,
    )
    return base.replace(**changes)


def config_help():
    return "\n".join(f"  {f.name} (default {_fmt_default(f)})" for f in fields(Config))


def _fmt_default(f):
    v = f.default
    if isinstance(v, tuple):
        return ",".join(_fmt(x) for x in v)
    return str(v)
