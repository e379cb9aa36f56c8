"""Model and training configuration, with INI-style file loading.

Config files use [model] and [train] sections of key = value lines; every
key has a built-in default, so a file only needs the keys it overrides.
Resolution order for any setting: command-line flag, then PMF_SEED (seed
only), then the config file, then the built-in default.
"""

from __future__ import annotations

import configparser
from dataclasses import asdict, dataclass, field, fields


@dataclass
class ModelConfig:
    """Architecture dimensions and the five ablation switches.

    Desk-scale defaults; the full-scale settings these stand in for are
    noted where they differ (d = 256 feature channels).
    """

    m: int = 64           # spatial configuration map side
    r_h: int = 7          # holistic pooling resolution
    r_p: int = 5          # part pooling resolution
    gamma: float = 0.1    # part box side as a fraction of human box height
    d: int = 32           # backbone channels (full scale: 256)
    d_hol: int = 64       # holistic branch embedding width
    d_loc: int = 128      # local (part-level) embedding width
    k: int = 17           # keypoints per pose
    a: int = 4            # action classes
    c: int = 3            # object classes
    pen_width: float = 3.0  # skeleton raster pen width, map pixels
    samples: int = 2      # RoI-Align samples per bin axis
    dtype: str = "float32"  # training dtype; verification suites build float64 models
    # ablation switches
    scm: bool = True      # spatial branch of the holistic module
    pc: bool = True       # part-crop (whole zoom-in path)
    spalign: bool = True  # spatial-offset channels on part crops
    seatten: bool = True  # learned per-part attention
    ia: bool = True       # interaction-affinity gate
    # optional keypoint-confidence gating (off: confidences are ignored)
    gate_joints: bool = False
    gate_threshold: float = 0.3


@dataclass
class TrainConfig:
    """Optimizer schedule, sampling, and loss weighting."""

    model: ModelConfig = field(default_factory=ModelConfig)
    mu: float = 1.0                 # affinity loss weight
    lr: float = 1e-2                # desk scale (full scale: 4e-2)
    momentum: float = 0.9
    weight_decay: float = 1e-4
    iterations: int = 2000          # desk scale (full scale: 48000)
    lr_drop_iteration: int = 1500   # lr multiplied by 0.1 here (full scale: 24000)
    pos_neg_ratio: tuple[int, int] = (1, 3)
    batch_size: int = 16
    seed: int = 0
    log_every: int = 10
    checkpoint_every: int = 200     # 0 disables periodic checkpoints
    score_threshold: float = 0.0    # minimum final score for emitted detections


_BOOL_KEYS = {"scm", "pc", "spalign", "seatten", "ia", "gate_joints"}


def _parse_value(name: str, text: str, current):
    if name == "pos_neg_ratio":
        pos, neg = text.split(":")
        return (int(pos), int(neg))
    if isinstance(current, bool):
        lowered = text.strip().lower()
        if lowered in ("1", "true", "yes", "on"):
            return True
        if lowered in ("0", "false", "no", "off"):
            return False
        raise ValueError(f"cannot parse boolean {name!r} from {text!r}")
    if isinstance(current, int):
        return int(text)
    if isinstance(current, float):
        return float(text)
    if isinstance(current, str):
        return text.strip()
    raise ValueError(f"unsupported config key {name!r}")


def load_config(path) -> TrainConfig:
    """Parse an INI config file into a TrainConfig; unknown keys are errors."""
    parser = configparser.ConfigParser(inline_comment_prefixes=("#", ";"))
    with open(path) as f:
        parser.read_file(f)
    model = ModelConfig()
    train = TrainConfig(model=model)
    model_fields = {f.name: f for f in fields(ModelConfig)}
    train_fields = {f.name: f for f in fields(TrainConfig) if f.name != "model"}
    for section in parser.sections():
        if section == "model":
            for key, text in parser.items(section):
                if key not in model_fields:
                    raise ValueError(f"unknown [model] key {key!r}")
                setattr(model, key, _parse_value(key, text, getattr(model, key)))
        elif section == "train":
            for key, text in parser.items(section):
                if key not in train_fields:
                    raise ValueError(f"unknown [train] key {key!r}")
                setattr(train, key, _parse_value(key, text, getattr(train, key)))
        else:
            raise ValueError(f"unknown config section [{section}]")
    return train


def save_config(cfg: TrainConfig, path) -> None:
    """Write a TrainConfig as an INI file with every key explicit."""
    lines = ["[model]"]
    for f in fields(ModelConfig):
        value = getattr(cfg.model, f.name)
        lines.append(f"{f.name} = {value}")
    lines.append("")
    lines.append("[train]")
    for f in fields(TrainConfig):
        if f.name == "model":
            continue
        value = getattr(cfg, f.name)
        if f.name == "pos_neg_ratio":
            value = f"{value[0]}:{value[1]}"
        lines.append(f"{f.name} = {value}")
    lines.append("")
    with open(path, "w") as out:
        out.write("\n".join(lines))


def model_config_to_dict(cfg: ModelConfig) -> dict:
    return asdict(cfg)


def model_config_from_dict(d: dict) -> ModelConfig:
    known = {f.name for f in fields(ModelConfig)}
    unknown = set(d) - known
    if unknown:
        raise ValueError(f"unknown model config keys: {sorted(unknown)}")
    return ModelConfig(**d)
