"""Experiment configuration: key=value files, validation, digests, seeding.

Every tunable of the pipeline is a named key with a pinned default. Files
are line-oriented ``key=value`` with ``#`` comments; unknown keys and
out-of-range values are rejected by name. A single global seed fans out to
per-stage seeds derived by hashing the stage name, so adding a stage never
perturbs the randomness of earlier ones.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, fields
from pathlib import Path

from .errors import ConfigError

UNCERTAINTY_ORDERS = ("least_margin", "literal_max_U")
EMBED_BACKENDS = ("hashed", "lm")
PROBABILITY_MODES = ("ratio", "boltzmann")


def _positive_int(v: int) -> bool:
    return v >= 1


def _non_negative_int(v: int) -> bool:
    return v >= 0


def _positive(v: float) -> bool:
    return v > 0


def _non_negative(v: float) -> bool:
    return v >= 0


def _fraction_closed(v: float) -> bool:
    return 0 < v <= 1


def _fraction_open(v: float) -> bool:
    return 0 < v < 1


@dataclass
class ExperimentConfig:
    # training configuration
    epochs: int = 60
    batch_size: int = 512
    learning_rate: float = 1e-3
    # encoder
    encoder_layers: int = 2
    encoder_hidden: int = 512
    # anomaly detection model
    classifier_input: int = 512
    classifier_hidden: int = 64
    classifier_layer: int = 64
    # active domain adaptation
    energy_align_weight: float = 0.01
    first_sample_ratio: float = 0.1
    active_ratio: float = 0.01
    # artifact keys
    window_size: int = 20
    stride: int = 20
    embed_backend: str = "hashed"
    d_w: int = 512
    seed: int = 0
    rounds: int = 2
    gap_seconds: float = 60.0
    uncertainty_order: str = "least_margin"
    # additional artifact keys (documented in README)
    split_ratio: float = 0.7
    encoder_refresh_epochs: int = 10
    finetune_epochs: int = 30
    probability_mode: str = "ratio"
    lm_model: str = "facebook/bart-base"
    parser_depth: int = 4
    parser_similarity: float = 0.4
    parser_max_children: int = 100


# config-file key -> (attribute, parser, validator, description of the valid range)
_KEY_SPEC: dict[str, tuple[str, type, object, str]] = {
    "epochs": ("epochs", int, _non_negative_int, ">= 0"),
    "batch_size": ("batch_size", int, _positive_int, ">= 1"),
    "learning_rate": ("learning_rate", float, _positive, "> 0"),
    "encoder_layers": ("encoder_layers", int, _positive_int, ">= 1"),
    "encoder_hidden": ("encoder_hidden", int, _positive_int, ">= 1"),
    "classifier_input": ("classifier_input", int, _positive_int, ">= 1"),
    "classifier_hidden": ("classifier_hidden", int, _positive_int, ">= 1"),
    "classifier_layer": ("classifier_layer", int, _positive_int, ">= 1"),
    "energy_align_weight": ("energy_align_weight", float, _non_negative, ">= 0"),
    "first_sample_ratio": ("first_sample_ratio", float, _fraction_closed, "in (0,1]"),
    "active_ratio": ("active_ratio", float, _fraction_closed, "in (0,1]"),
    "window_size": ("window_size", int, _positive_int, ">= 1"),
    "stride": ("stride", int, _positive_int, ">= 1"),
    "embed_backend": ("embed_backend", str, lambda v: v in EMBED_BACKENDS, f"one of {EMBED_BACKENDS}"),
    "d_w": ("d_w", int, _positive_int, ">= 1"),
    "seed": ("seed", int, lambda v: True, "any integer"),
    "rounds": ("rounds", int, _non_negative_int, ">= 0"),
    "gap_seconds": ("gap_seconds", float, _non_negative, ">= 0"),
    "selection.uncertainty_order": (
        "uncertainty_order",
        str,
        lambda v: v in UNCERTAINTY_ORDERS,
        f"one of {UNCERTAINTY_ORDERS}",
    ),
    "split_ratio": ("split_ratio", float, _fraction_open, "in (0,1)"),
    "encoder_refresh_epochs": ("encoder_refresh_epochs", int, _non_negative_int, ">= 0"),
    "finetune_epochs": ("finetune_epochs", int, _non_negative_int, ">= 0"),
    "probability_mode": (
        "probability_mode",
        str,
        lambda v: v in PROBABILITY_MODES,
        f"one of {PROBABILITY_MODES}",
    ),
    "lm_model": ("lm_model", str, lambda v: bool(v), "non-empty"),
    "parser_depth": ("parser_depth", int, lambda v: v >= 3, ">= 3"),
    "parser_similarity": ("parser_similarity", float, _fraction_closed, "in (0,1]"),
    "parser_max_children": ("parser_max_children", int, lambda v: v >= 2, ">= 2"),
}

_ATTR_TO_KEY = {attr: key for key, (attr, _, _, _) in _KEY_SPEC.items()}


def _parse_value(key: str, raw: str):
    attr, typ, validator, valid_range = _KEY_SPEC[key]
    try:
        if typ is int:
            value = int(raw)
        elif typ is float:
            value = float(raw)
        else:
            value = raw
    except ValueError as exc:
        raise ConfigError(f"key {key}: cannot parse {raw!r} as {typ.__name__}") from exc
    if not validator(value):
        raise ConfigError(f"key {key}: value {value!r} out of range (must be {valid_range})")
    return attr, value


def load_config(path: str | Path) -> ExperimentConfig:
    """Read a key=value file; absent keys keep their defaults."""
    cfg = ExperimentConfig()
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    for line_no, line in enumerate(text.splitlines(), start=1):
        stripped = line.strip()
        if not stripped or stripped.startswith("#"):
            continue
        if "=" not in stripped:
            raise ConfigError(f"{path}:{line_no}: expected key=value, got {stripped!r}")
        key, _, raw = stripped.partition("=")
        key = key.strip()
        if key not in _KEY_SPEC:
            raise ConfigError(f"{path}:{line_no}: unknown key {key!r}")
        attr, value = _parse_value(key, raw.strip())
        setattr(cfg, attr, value)
    return cfg


def config_lines(cfg: ExperimentConfig) -> list[str]:
    lines = []
    for f in fields(cfg):
        key = _ATTR_TO_KEY[f.name]
        value = getattr(cfg, f.name)
        lines.append(f"{key}={value!r}" if isinstance(value, float) else f"{key}={value}")
    return sorted(lines)


def save_config(cfg: ExperimentConfig, path: str | Path) -> None:
    Path(path).write_text("\n".join(config_lines(cfg)) + "\n", encoding="utf-8")


def config_digest(cfg: ExperimentConfig) -> str:
    payload = "\n".join(config_lines(cfg)).encode("utf-8")
    return hashlib.sha256(payload).hexdigest()[:16]


def derive_seed(global_seed: int, stage: str) -> int:
    """Per-stage seed: hash of the stage name keyed by the global seed."""
    digest = hashlib.blake2b(f"{global_seed}:{stage}".encode("utf-8"), digest_size=8).digest()
    return int.from_bytes(digest, "little") & 0x7FFF_FFFF_FFFF_FFFF
