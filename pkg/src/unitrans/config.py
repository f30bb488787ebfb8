"""Flat ``section.key = value`` configuration files.

Blank lines and ``#`` comments are ignored. Later assignments win, and
command-line overrides are applied last.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field, fields, replace
from pathlib import Path

from .distill import DistillConfig
from .errors import ConfigError, ParseError
from .pipeline import VARIANTS, AlignConfig, PipelineConfig
from .tagger import EncoderConfig, TrainConfig

OUTPUT_ENV = "UNITRANS_OUTPUT_DIR"

PATH_KEYS = ("source", "source_vectors", "target_vectors", "unlabeled", "evaluation", "output")


def parse_config(text: str) -> dict:
    values = {}
    for line_no, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ParseError("expected 'section.key = value'", line_no)
        key, value = (part.strip() for part in line.split("=", 1))
        if "." not in key or not key.replace(".", "").replace("_", "").isalnum():
            raise ParseError(f"bad key {key!r}; keys look like 'section.name'", line_no)
        values[key] = value
    return values


def parse_overrides(items) -> dict:
    out = {}
    for item in items or ():
        if "=" not in item:
            raise ConfigError(f"override {item!r} must look like key=value")
        key, value = item.split("=", 1)
        out[key.strip()] = value.strip()
    return out


def parse_seeds(text: str) -> tuple:
    """``"1,2,3"`` or ``"1..5"`` (inclusive) or a mix of both."""
    seeds = []
    for part in str(text).split(","):
        part = part.strip()
        if not part:
            continue
        try:
            if ".." in part:
                lo, hi = (int(x) for x in part.split(".."))
                seeds.extend(range(lo, hi + 1))
            else:
                seeds.append(int(part))
        except ValueError:
            raise ConfigError(f"cannot parse seeds {text!r}") from None
    if not seeds:
        raise ConfigError("seed list is empty")
    return tuple(seeds)


def _coerce(value: str, default, name: str):
    if isinstance(default, bool):
        low = value.lower()
        if low in ("1", "true", "yes", "on"):
            return True
        if low in ("0", "false", "no", "off"):
            return False
        raise ConfigError(f"{name}: not a boolean: {value!r}")
    if value.lower() in ("none", "") and default is None:
        return None
    try:
        if isinstance(default, int) or (default is None and value.lstrip("-").isdigit()):
            return int(value)
        if isinstance(default, float):
            return float(value)
    except ValueError:
        raise ConfigError(f"{name}: cannot parse {value!r}") from None
    return value


def _apply(obj, section: str, values: dict):
    updates = {}
    known = {f.name for f in fields(obj)}
    for key, value in values.items():
        sect, _, name = key.partition(".")
        if sect != section:
            continue
        if name not in known:
            raise ConfigError(f"unknown option {key!r}")
        updates[name] = _coerce(value, getattr(obj, name), key)
    return replace(obj, **updates) if updates else obj


SECTIONS = ("paths", "synth", "align", "encoder", "teacher", "student", "distill", "pipeline")


@dataclass(frozen=True)
class RunConfig:
    pipeline: PipelineConfig
    variants: tuple
    paths: dict
    synth: dict = field(default_factory=dict)
    synth_seed: int = 0
    entity_types: tuple | None = None


def build_run_config(values: dict, base_dir: Path | None = None) -> RunConfig:
    """Turn parsed key/values into pipeline settings.

    Relative paths are resolved against ``base_dir`` (the config file's
    directory). The output directory honours ``$UNITRANS_OUTPUT_DIR``
    unless ``paths.output`` was given as an explicit override.
    """
    for key in values:
        if key.partition(".")[0] not in SECTIONS:
            raise ConfigError(f"unknown section in {key!r}")
    align = _apply(AlignConfig(), "align", values)
    encoder = _apply(EncoderConfig(), "encoder", values)
    teacher = _apply(TrainConfig(), "teacher", values)
    student = _apply(TrainConfig(learning_rate=DistillConfig().train.learning_rate), "student", values)
    distill = _apply(DistillConfig(train=student), "distill", values)

    pipe = {k.partition(".")[2]: v for k, v in values.items() if k.startswith("pipeline.")}
    unknown = set(pipe) - {"seeds", "variants", "ensemble", "entity_types"}
    if unknown:
        raise ConfigError(f"unknown pipeline options: {sorted(unknown)}")
    seeds = parse_seeds(pipe.get("seeds", "1..5"))
    variants = tuple(v.strip() for v in pipe.get("variants", "full").split(",") if v.strip())
    for v in variants:
        if v not in VARIANTS:
            raise ConfigError(f"unknown variant {v!r}")
    try:
        ensemble = int(pipe.get("ensemble", 1))
    except ValueError:
        raise ConfigError("pipeline.ensemble must be an integer") from None
    entity_types = None
    if "entity_types" in pipe:
        entity_types = tuple(t.strip() for t in pipe["entity_types"].split(",") if t.strip())

    paths = {}
    for key, value in values.items():
        sect, _, name = key.partition(".")
        if sect != "paths":
            continue
        if name not in PATH_KEYS:
            raise ConfigError(f"unknown path {key!r}")
        p = Path(value)
        if base_dir is not None and not p.is_absolute():
            p = base_dir / p
        paths[name] = p
    synth = {k.partition(".")[2]: v for k, v in values.items() if k.startswith("synth.")}
    synth_seed = int(synth.pop("seed", 0))
    config = PipelineConfig(align=align, encoder=encoder, teacher=teacher, distill=distill,
                            seeds=seeds, ensemble=ensemble)
    return RunConfig(config, variants, paths, synth, synth_seed, entity_types)


def load_run_config(path, overrides: dict | None = None) -> RunConfig:
    path = Path(path)
    try:
        values = parse_config(path.read_text(encoding="utf-8"))
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    env_out = os.environ.get(OUTPUT_ENV)
    if env_out:
        values["paths.output"] = str(Path(env_out).resolve())
    values.update(overrides or {})
    return build_run_config(values, path.parent)
