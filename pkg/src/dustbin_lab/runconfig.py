"""Experiment configuration: flat INI-style sections of key=value pairs.

A saved config file plus a master seed is a complete provenance record;
every pipeline stage derives its own seed from the master by a fixed offset
so stages can be rerun independently without disturbing each other.
"""

from __future__ import annotations

import configparser
import hashlib
import os
from dataclasses import dataclass

from .attacks import AttackConfig
from .datasets import (
    InterpolationConfig,
    LabeledSet,
    MixSpec,
    load_idx,
    synthetic_outdist,
    two_moons,
)
from .models import ConfigError, ModelConfig, TrainConfig

SEED_OFFSETS = {
    "data": 101,
    "data-test": 151,
    "outdist": 202,
    "outdist-test": 252,
    "interp": 303,
    "adversarial": 404,
    "mix": 505,
    "train-naive": 606,
    "train-augmented": 707,
    "train-source": 808,
    "attack": 909,
    "plot": 1010,
}

DATA_ENV_VAR = "DUSTBIN_LAB_DATA"


def stage_seed(master_seed: int, stage: str) -> int:
    return master_seed + SEED_OFFSETS[stage]


@dataclass
class RunConfig:
    name: str
    master_seed: int
    sections: dict  # section name -> {key: value} of raw strings
    source_path: str
    sha256: str

    def get(self, section: str, key: str, default=None, cast=str):
        raw = self.sections.get(section, {}).get(key)
        if raw is None:
            if default is None:
                raise ConfigError(f"missing [{section}] {key}")
            return default
        try:
            if cast is bool:
                return raw.strip().lower() in ("1", "true", "yes", "on")
            return cast(raw)
        except ValueError:
            raise ConfigError(f"[{section}] {key} = {raw!r} is not a valid {cast.__name__}")

    def has(self, section: str) -> bool:
        return section in self.sections


def load_runconfig(path, seed_override=None) -> RunConfig:
    if not os.path.exists(path):
        raise ConfigError(f"config file not found: {path}")
    parser = configparser.ConfigParser()
    try:
        with open(path, encoding="utf-8") as f:
            raw = f.read()
        parser.read_string(raw, source=str(path))
    except configparser.Error as exc:
        raise ConfigError(f"cannot parse {path}: {exc}")
    sections = {name: dict(parser[name]) for name in parser.sections()}
    cfg = RunConfig(
        name="",
        master_seed=0,
        sections=sections,
        source_path=str(path),
        sha256=hashlib.sha256(raw.encode("utf-8")).hexdigest(),
    )
    cfg.name = cfg.get("experiment", "name", default="experiment")
    cfg.master_seed = (
        int(seed_override)
        if seed_override is not None
        else cfg.get("experiment", "seed", default=0, cast=int)
    )
    return cfg


def _data_path(path: str) -> str:
    if os.path.isabs(path) or os.path.exists(path):
        return path
    root = os.environ.get(DATA_ENV_VAR)
    if root:
        candidate = os.path.join(root, path)
        if os.path.exists(candidate):
            return candidate
    return path


def build_in_dist(cfg: RunConfig, split: str = "train") -> LabeledSet:
    """The in-distribution set named by [data]; split is 'train' or 'test'."""
    source = cfg.get("data", "source", default="two-moons")
    if source == "two-moons":
        stage = "data" if split == "train" else "data-test"
        n_key = "n_per_class" if split == "train" else "test_n_per_class"
        n = cfg.get("data", n_key, default=200, cast=int)
        sigma = cfg.get("data", "noise_sigma", default=0.1, cast=float)
        return two_moons(n, sigma, stage_seed(cfg.master_seed, stage))
    if source == "idx":
        prefix = "" if split == "train" else "test_"
        images = _data_path(cfg.get("data", f"{prefix}images"))
        labels = _data_path(cfg.get("data", f"{prefix}labels"))
        k = cfg.get("data", "k_classes", default=10, cast=int)
        lset = load_idx(images, labels, k)
        limit = cfg.get("data", f"{prefix}limit", default=0, cast=int)
        if limit and limit < len(lset):
            lset = lset.subset(range(limit), name=lset.name)
        if cfg.get("data", "flatten", default=False, cast=bool):
            lset = LabeledSet(
                [s.ravel() for s in lset.samples],
                lset.labels,
                lset.k_classes,
                lset.domain,
                lset.name,
            )
        return lset
    raise ConfigError(f"unknown data source {source!r}")


def build_outdist(cfg: RunConfig, in_dist: LabeledSet, section: str = "outdist", split: str = "train") -> LabeledSet:
    kind = cfg.get(section, "kind", default="uniform-box")
    n = cfg.get(section, "count", default=len(in_dist), cast=int)
    stage = "outdist" if split == "train" else "outdist-test"
    seed = stage_seed(cfg.master_seed, stage)
    sample_shape = in_dist.samples[0].shape
    kwargs = dict(
        domain=in_dist.domain,
        k_classes=in_dist.k_classes,
        radius=cfg.get(section, "radius", default=3.0, cast=float),
        sigma=cfg.get(section, "sigma", default=0.1, cast=float),
    )
    if len(sample_shape) == 1:
        kwargs["dim"] = sample_shape[0]
    else:
        kwargs["shape"] = sample_shape
    return synthetic_outdist(kind, n, seed, **kwargs)


def build_model_config(cfg: RunConfig, in_dist: LabeledSet, augmented: bool) -> ModelConfig:
    return ModelConfig(
        architecture=cfg.get("model", "architecture", default="mlp3"),
        input_shape=in_dist.samples[0].shape,
        k_classes=in_dist.k_classes,
        augmented=augmented,
        hidden=cfg.get("model", "hidden", default=32, cast=int),
        filters=tuple(
            int(v)
            for v in cfg.get("model", "filters", default="32,32,64").split(",")
        ),
        kernel_size=cfg.get("model", "kernel_size", default=5, cast=int),
        dropout_p=cfg.get("model", "dropout_p", default=0.0, cast=float),
    )


def build_train_config(cfg: RunConfig, seed: int) -> TrainConfig:
    return TrainConfig(
        learning_rate=cfg.get("train", "learning_rate", default=0.1, cast=float),
        batch_size=cfg.get("train", "batch_size", default=32, cast=int),
        epochs=cfg.get("train", "epochs", default=100, cast=int),
        seed=seed,
        optimizer=cfg.get("train", "optimizer", default="sgd"),
    )


def build_interp_config(cfg: RunConfig) -> InterpolationConfig:
    return InterpolationConfig(
        alpha=cfg.get("interp", "alpha", default=0.5, cast=float),
        count=cfg.get("interp", "count", default=100, cast=int),
        seed=stage_seed(cfg.master_seed, "interp"),
    )


def build_mix_spec(cfg: RunConfig) -> MixSpec:
    return MixSpec(
        in_dist_count=cfg.get("mix", "in_dist", cast=int),
        out_dist_count=cfg.get("mix", "out_dist", default=0, cast=int),
        interpolated_count=cfg.get("mix", "interpolated", default=0, cast=int),
        adversarial_count=cfg.get("mix", "adversarial", default=0, cast=int),
    )


def build_attack_config(cfg: RunConfig, attack: str, overrides: dict | None = None) -> AttackConfig:
    section = f"attack.{attack}"
    fields = {}
    spec = {
        "epsilon": float,
        "clip_radius": float,
        "iterations": int,
        "kappa": float,
        "overshoot": float,
        "max_iterations": int,
        "cw_c": float,
        "cw_lr": float,
        "cw_steps": int,
        "repeats": int,
    }
    for key, cast in spec.items():
        if cfg.has(section) and key in cfg.sections[section]:
            fields[key] = cfg.get(section, key, cast=cast)
    for key, value in (overrides or {}).items():
        if value is not None:
            fields[key] = spec[key](value)
    try:
        return AttackConfig(**fields)
    except ValueError as exc:
        raise ConfigError(str(exc))


def attack_names(cfg: RunConfig) -> list:
    raw = cfg.get("eval", "attacks", default="fgs")
    return [name.strip() for name in raw.split(",") if name.strip()]
