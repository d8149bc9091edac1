"""Flat key=value pipeline configuration.

One `key = value` assignment per line, `#` comments, and an
`include <path>` directive (relative to the including file, processed before
the including file's own assignments so local keys win).  Every key has a
default; unknown keys are rejected.  The canonical dump is diff-able and its
sha256 identifies an experiment.
"""

import hashlib
import os
from dataclasses import dataclass, fields

from .errors import ConfigurationError

CACHE_ENV_VAR = "SHAPEDIFF_CACHE_ROOT"


@dataclass
class PipelineConfig:
    # paths
    template: str = ""
    shapes_dir: str = ""
    cache_dir: str = ""
    shards_dir: str = ""
    out_dir: str = "out"
    sign_checkpoint: str = ""
    ddpm_checkpoint: str = ""
    # spectral
    n: int = 32
    zoomout_target: int = 200
    zoomout_step: int = 1
    descriptor_count: int = 128
    # selection
    candidates: int = 128
    medoid_k: int = 16
    # synthetic family
    dataset_size: int = 2000
    deform_modes: int = 8
    amplitude: float = 0.05
    decimate_min: float = 0.0
    decimate_max: float = 0.6
    aniso_probability: float = 0.35
    shard_size: int = 64
    # sign-corrector training
    sign_iterations: int = 50000
    sign_shapes: int = 200
    sign_lr: float = 1e-3
    sign_momentum: float = 0.9
    # diffusion
    ddpm_T: int = 1000
    beta_start: float = 1e-4
    beta_end: float = 0.02
    ddpm_epochs: int = 20
    ddpm_batch: int = 16
    ddpm_lr: float = 1e-3
    # execution
    seed: int = 0
    workers: int = 1

    def validate(self):
        if self.n not in (32, 64, 96):
            raise ConfigurationError(f"n must be one of 32, 64, 96 (got {self.n})")
        if not (self.n <= self.zoomout_target):
            raise ConfigurationError("zoomout_target must be >= n")
        if self.zoomout_step < 1:
            raise ConfigurationError("zoomout_step must be >= 1")
        if not (1 <= self.medoid_k <= self.candidates):
            raise ConfigurationError("medoid_k must be in [1, candidates]")
        if self.workers < 1:
            raise ConfigurationError("workers must be >= 1")
        if self.ddpm_T < 1:
            raise ConfigurationError("ddpm_T must be >= 1")
        if not (0 < self.beta_start <= self.beta_end < 1):
            raise ConfigurationError("need 0 < beta_start <= beta_end < 1")
        return self

    def dump(self):
        lines = []
        for f in fields(self):
            lines.append(f"{f.name} = {getattr(self, f.name)}")
        return "\n".join(lines) + "\n"

    def sha256(self):
        return hashlib.sha256(self.dump().encode()).hexdigest()


def _coerce(name, raw, kind):
    try:
        if kind is int:
            return int(raw)
        if kind is float:
            return float(raw)
        return raw
    except ValueError:
        raise ConfigurationError(f"bad value for {name!r}: {raw!r}") from None


def _read_assignments(path, seen):
    real = os.path.realpath(path)
    if real in seen:
        raise ConfigurationError(f"circular include of {path}")
    seen = seen | {real}
    out = {}
    try:
        with open(path) as fh:
            lines = fh.readlines()
    except OSError as exc:
        raise ConfigurationError(f"cannot read config {path}: {exc}") from None
    for lineno, line in enumerate(lines, 1):
        text = line.split("#", 1)[0].strip()
        if not text:
            continue
        if text.startswith("include "):
            target = text[len("include "):].strip()
            target = os.path.join(os.path.dirname(path), target)
            out.update(_read_assignments(target, seen))
            continue
        if "=" not in text:
            raise ConfigurationError(f"{path}:{lineno}: expected key = value")
        key, _, value = text.partition("=")
        out[key.strip()] = value.strip()
    return out


def load_config(path=None, overrides=None):
    """Config from defaults, then file, then explicit overrides; validated."""
    cfg = PipelineConfig()
    types = {f.name: f.type for f in fields(cfg)}
    kinds = {f.name: type(getattr(cfg, f.name)) for f in fields(cfg)}
    assignments = _read_assignments(path, frozenset()) if path else {}
    for key, raw in assignments.items():
        if key not in types:
            raise ConfigurationError(f"unknown config key {key!r}")
        setattr(cfg, key, _coerce(key, raw, kinds[key]))
    if not cfg.cache_dir:
        cfg.cache_dir = os.environ.get(CACHE_ENV_VAR, "cache")
    for key, value in (overrides or {}).items():
        if value is not None:
            setattr(cfg, key, value)
    return cfg.validate()
