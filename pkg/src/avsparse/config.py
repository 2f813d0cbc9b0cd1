"""Declarative run configuration loaded from JSON, with CLI overrides.

Every section is a flat object; unknown keys anywhere are rejected so a typo
cannot silently fall back to a default.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

from .errors import InvalidInput
from .masking import MaskSchedule
from .selection import InfoBatchConfig, SelectionConfig
from .simulator import PipelineConfig, SyntheticDatasetSpec, TrainConfig


@dataclass(frozen=True)
class MaskSection:
    ratio: float = 0.5
    active_epochs: int = 3

    def __post_init__(self):
        if not 0.0 <= self.ratio <= 1.0:
            raise InvalidInput(f"ratio out of range: {self.ratio}")
        MaskSchedule(self.active_epochs)


@dataclass(frozen=True)
class InfoBatchSection:
    prune_ratio: float = 0.5
    delta: float = 0.875

    def __post_init__(self):
        InfoBatchConfig(self.prune_ratio, self.delta, 1)


@dataclass(frozen=True)
class SelectionSection:
    epochs: int = 15
    group_size: int = 3
    decay: float = 0.618
    subset_size: int | None = None  # None selects a quarter of the samples

    def resolve(self, n_samples: int) -> SelectionConfig:
        size = self.subset_size if self.subset_size is not None else max(1, round(0.25 * n_samples))
        return SelectionConfig(self.epochs, self.group_size, self.decay, size)

    def __post_init__(self):
        SelectionConfig(self.epochs, self.group_size, self.decay, 1 if self.subset_size is None else self.subset_size)


@dataclass(frozen=True)
class Config:
    seed: int = 0
    dataset: SyntheticDatasetSpec = field(default_factory=SyntheticDatasetSpec)
    mask: MaskSection = field(default_factory=MaskSection)
    merge: bool = True
    infobatch: InfoBatchSection = field(default_factory=InfoBatchSection)
    selection: SelectionSection = field(default_factory=SelectionSection)
    train: TrainConfig = field(default_factory=TrainConfig)

    def sparse_pipeline(self) -> PipelineConfig:
        ib = None
        if self.infobatch.prune_ratio > 0:
            ib = InfoBatchConfig(self.infobatch.prune_ratio, self.infobatch.delta, self.train.epochs)
        return PipelineConfig(self.mask.ratio, MaskSchedule(self.mask.active_epochs), self.merge, ib)

    def selection_config(self) -> SelectionConfig:
        return self.selection.resolve(self.dataset.n_samples)

    def to_json(self) -> dict:
        doc = asdict(self)
        doc["selection"]["subset_size"] = self.selection_config().subset_size
        return doc


_SECTIONS = {
    "dataset": SyntheticDatasetSpec,
    "mask": MaskSection,
    "infobatch": InfoBatchSection,
    "selection": SelectionSection,
    "train": TrainConfig,
}


def _check_type(where: str, value, default):
    if isinstance(default, bool):
        ok = isinstance(value, bool)
    elif isinstance(default, int):
        ok = isinstance(value, int) and not isinstance(value, bool)
    elif isinstance(default, float):
        ok = isinstance(value, (int, float)) and not isinstance(value, bool) and math.isfinite(value)
    else:
        ok = value is None or (isinstance(value, (int, float)) and not isinstance(value, bool))
    if not ok:
        raise InvalidInput(f"{where}: unexpected value {value!r}")


def _build_section(cls, doc, where: str):
    if not isinstance(doc, dict):
        raise InvalidInput(f"{where} must be an object")
    known = {f.name: f for f in fields(cls)}
    unknown = sorted(set(doc) - set(known))
    if unknown:
        raise InvalidInput(f"{where}: unknown keys {unknown}")
    defaults = cls()
    for key, value in doc.items():
        _check_type(f"{where}.{key}", value, getattr(defaults, key))
    return replace(defaults, **doc)


def config_from_dict(doc: dict) -> Config:
    if not isinstance(doc, dict):
        raise InvalidInput("config must be a JSON object")
    unknown = sorted(set(doc) - {f.name for f in fields(Config)})
    if unknown:
        raise InvalidInput(f"unknown config keys {unknown}")
    kwargs = {}
    for key, value in doc.items():
        if key in _SECTIONS:
            kwargs[key] = _build_section(_SECTIONS[key], value, key)
        elif key == "seed":
            _check_type("seed", value, 0)
            kwargs[key] = value
        elif key == "merge":
            _check_type("merge", value, True)
            kwargs[key] = value
    seed = kwargs.get("seed", 0)
    if "dataset" not in kwargs:
        kwargs["dataset"] = SyntheticDatasetSpec(seed=seed)
    elif "seed" not in doc["dataset"]:
        kwargs["dataset"] = replace(kwargs["dataset"], seed=seed)
    return Config(**kwargs)


def load_config(path: str | Path | None) -> Config:
    """Read a JSON config; ``None`` gives the defaults."""
    if path is None:
        return Config()
    with open(path, encoding="utf-8") as fh:
        doc = json.load(fh)
    return config_from_dict(doc)


def apply_overrides(cfg: Config, *, seed=None, ratio=None, epochs=None, subset_size=None) -> Config:
    """Apply CLI flags on top of a loaded config. ``--seed`` reseeds the dataset too."""
    if seed is not None:
        cfg = replace(cfg, seed=seed, dataset=replace(cfg.dataset, seed=seed))
    if ratio is not None:
        cfg = replace(cfg, mask=MaskSection(ratio, cfg.mask.active_epochs))
    if epochs is not None:
        cfg = replace(cfg, train=replace(cfg.train, epochs=epochs), selection=replace(cfg.selection, epochs=epochs))
    if subset_size is not None:
        cfg = replace(cfg, selection=replace(cfg.selection, subset_size=subset_size))
    if cfg.selection_config().subset_size > cfg.dataset.n_samples:
        raise InvalidInput(f"subset_size exceeds the {cfg.dataset.n_samples} samples in the dataset")
    return cfg
