"""Flat key=value experiment configuration.

The config format is deliberately parser-free: one `key = value` per
line, `#` comments, every key has a default. Environment variables with
the RETRODIFF_ prefix override file values (RETRODIFF_N_TRAIN=200 sets
n_train). A canonical rendering of the config is hashed into every
output row so runs are traceable.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, fields

from .dataset import ConfigError

ENV_PREFIX = "RETRODIFF_"


@dataclass
class ExperimentConfig:
    # dataset
    seed: int = 0
    V: int = 64
    zipf_s: float = 1.1
    n_train: int = 5000
    n_test: int = 500
    heldout_fraction: float = 0.1
    # model
    width: int = 128
    blocks: int = 2
    n_steps: int = 200
    beta_start: float = 1e-4
    beta_end: float = 0.02
    # training
    epochs: int = 6
    batch: int = 16
    lr: float = 1e-3
    cond_dropout: float = 0.1      # fraction of samples trained condition-free
    guidance_scale: float = 3.0    # conditional guidance weight at sampling
    # retrieval
    k: int = 3
    retrieval_type: str = "audio_text"
    # evaluation / plumbing
    encoder_seed: int = 7
    eval_prompts: int = 0          # 0 = every test prompt
    kl_temperature: float = 0.1
    k_list: str = "0,1,3,5,10"
    data_dir: str = "data"

    def __post_init__(self):
        if self.width not in (128, 196):
            raise ConfigError("width must be 128 (S) or 196 (L)")
        if self.retrieval_type not in ("none", "audio", "audio_text"):
            raise ConfigError(
                f"retrieval_type {self.retrieval_type!r} invalid")
        if self.k < 0:
            raise ConfigError("k must be >= 0")
        if not (0.0 <= self.cond_dropout < 1.0):
            raise ConfigError("cond_dropout must be in [0, 1)")
        if self.guidance_scale <= 0.0:
            raise ConfigError("guidance_scale must be > 0")

    @property
    def model_size(self) -> str:
        return "S" if self.width == 128 else "L"

    def k_values(self):
        return [int(x) for x in self.k_list.split(",") if x.strip() != ""]

    def canonical_text(self) -> str:
        """Deterministic rendering used for hashing and round-trips."""
        lines = []
        for f in fields(self):
            v = getattr(self, f.name)
            lines.append(f"{f.name} = {v}")
        return "\n".join(lines) + "\n"


_FIELD_TYPES = {f.name: f.type for f in fields(ExperimentConfig)}


def _coerce(name: str, raw: str):
    t = _FIELD_TYPES[name]
    if t in ("int", int):
        return int(raw)
    if t in ("float", float):
        return float(raw)
    return raw


def parse_config_text(text: str) -> dict:
    out = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected key = value")
        key, _, val = line.partition("=")
        key = key.strip()
        if key not in _FIELD_TYPES:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        try:
            out[key] = _coerce(key, val.strip())
        except ValueError as exc:
            raise ConfigError(f"line {lineno}: {exc}") from None
    return out


def load_config(path: str | None = None,
                environ: dict | None = None) -> ExperimentConfig:
    """File values, then environment overrides, on top of defaults."""
    values = {}
    if path is not None:
        with open(path) as fh:
            values.update(parse_config_text(fh.read()))
    env = os.environ if environ is None else environ
    for name in _FIELD_TYPES:
        env_key = ENV_PREFIX + name.upper()
        if env_key in env:
            try:
                values[name] = _coerce(name, env[env_key])
            except ValueError as exc:
                raise ConfigError(f"{env_key}: {exc}") from None
    return ExperimentConfig(**values)
