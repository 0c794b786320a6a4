"""Experiment configuration: one JSON document drives every CLI verb.

Schema (all top-level keys optional unless a verb needs them)::

    {
      "partition": {"universe": [...], "source_groups": [[...], ...],
                    "segments": [{"labels": [...], "width": n}, ...]},
      "hyperparams": {"profile": "mnist_toy", "lambda": 1, ...},
      "train": {"learning_rate": 0.01, "epochs": 100, "batch_size": 32, "seed": 0, ...},
      "model": {"act_enc": "sigmoid", "act_dec": "linear"},
      "data": {"format": "idx", "images": PATH, "labels": PATH}
            | {"format": "patches", "path": PATH}
            | {"format": "mnist012"}
            | {"format": "synthetic", "n_per_class": 800, "seed": 0},
      "data_options": {"max_per_label": n, "subset_seed": 0, "group_seed": 0},
      "classifier": {"hidden": [32], "train": {...}},
      "crossval": {"folds": 10, "seed": 0, "stratified": true, "positive_class": LABEL},
      "grad_check": {"instances": 20, "seed": 0, "step": 1e-5, "tolerance": 1e-4, ...},
      "detect": {"image": PATH, "stride": 1, "positive_class": LABEL},
      "output_dir": "out"
    }

Label names in the partition are resolved against the dataset's label table.
Seeds that are not given explicitly (classifier, grouping, folds) fall back
to ``train.seed``, so ``--seed`` moves the whole experiment.
Relative paths resolve against the config file's directory.
"""

from __future__ import annotations

import copy
import hashlib
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Any

from . import data as data_mod
from .cost import CostError, Hyperparams
from .labels import PartitionError, PartitionSpec, require_valid
from .trainer import TrainConfig, TrainingError, default_hyperparams

TOP_KEYS = {"partition", "hyperparams", "train", "model", "data", "data_options", "classifier",
            "crossval", "output_dir", "grad_check", "detect"}
SECTION_KEYS = {
    "partition": {"universe", "source_groups", "segments"},
    "model": {"act_enc", "act_dec", "geometry"},
    "data": {"format", "images", "labels", "path", "n_per_class", "seed"},
    "data_options": {"max_per_label", "subset_seed", "group_seed"},
    "classifier": {"hidden", "train"},
    "crossval": {"folds", "seed", "stratified", "positive_class"},
    "grad_check": {"max_input", "max_width", "max_batch", "seed", "step", "tolerance", "instances"},
    "detect": {"image", "stride", "positive_class"},
}


DATA_FORMATS = ("idx", "patches", "mnist012", "synthetic")


class ConfigError(ValueError):
    pass


@dataclass
class ExperimentConfig:
    raw: dict
    base_dir: Path

    # -- construction ---------------------------------------------------------
    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        path = Path(path)
        if not path.exists():
            raise ConfigError(f"config file not found: {path}")
        try:
            raw = json.loads(path.read_text())
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: invalid JSON ({exc})") from None
        return cls.from_dict(raw, path.parent)

    @classmethod
    def from_dict(cls, raw: dict, base_dir=".") -> "ExperimentConfig":
        if not isinstance(raw, dict):
            raise ConfigError("config must be a JSON object")
        cfg = cls(copy.deepcopy(raw), Path(base_dir))
        cfg.validate()
        return cfg

    def validate(self) -> None:
        unknown = set(self.raw) - TOP_KEYS
        if unknown:
            raise ConfigError(f"unknown config key(s): {sorted(unknown)}")
        for section, keys in SECTION_KEYS.items():
            val = self.raw.get(section)
            if val is None:
                continue
            if not isinstance(val, dict):
                raise ConfigError(f"{section}: expected an object")
            bad = set(val) - keys
            if bad:
                raise ConfigError(f"unknown key(s) in {section}: {sorted(f'{section}.{b}' for b in bad)}")
        self.hyperparams()
        self.train_config()
        if "classifier" in self.raw:
            self.classifier_train_config()
            hidden = self.raw["classifier"].get("hidden", [])
            if not isinstance(hidden, list) or not all(isinstance(h, int) and h > 0 for h in hidden):
                raise ConfigError("classifier.hidden: expected a list of positive integers")
        if "partition" in self.raw:
            self.partition()
        fmt = self.raw.get("data", {}).get("format")
        if fmt is not None and fmt not in DATA_FORMATS:
            raise ConfigError(f"data.format: unknown format {fmt!r}")

    def set(self, dotted: str, value: Any) -> None:
        """Override one key, e.g. ``train.seed``; the result is re-validated."""
        node = self.raw
        parts = dotted.split(".")
        for p in parts[:-1]:
            node = node.setdefault(p, {})
        node[parts[-1]] = value
        self.validate()

    # -- typed views -------------------------------------------------------------
    def hyperparams(self) -> Hyperparams:
        d = dict(self.raw.get("hyperparams") or {})
        profile = d.pop("profile", "mnist_toy")
        try:
            base = default_hyperparams(profile).to_dict()
            base.update(d)
            return Hyperparams.from_dict(base)
        except (CostError, TrainingError) as exc:
            raise ConfigError(f"hyperparams: {exc}") from None
        except TypeError as exc:
            raise ConfigError(f"hyperparams: {exc}") from None

    def train_config(self, section: dict | None = None, where="train") -> TrainConfig:
        d = self.raw.get("train") if section is None else section
        try:
            return TrainConfig.from_dict(d or {})
        except (TrainingError, TypeError) as exc:
            raise ConfigError(f"{where}: {exc}") from None

    def classifier_train_config(self) -> TrainConfig:
        section = (self.raw.get("classifier") or {}).get("train")
        defaults = {"learning_rate": 0.5, "epochs": 100, "batch_size": 32, "seed": self.seed}
        return self.train_config({**defaults, **(section or {})}, "classifier.train")

    def classifier_hidden(self) -> tuple[int, ...]:
        return tuple((self.raw.get("classifier") or {}).get("hidden", []))

    @property
    def seed(self) -> int:
        return int((self.raw.get("train") or {}).get("seed", 0))

    def partition(self, name_to_id=None) -> PartitionSpec:
        p = self.raw.get("partition")
        if p is None:
            raise ConfigError("partition: missing")
        for key in ("universe", "source_groups", "segments"):
            if key not in p:
                raise ConfigError(f"partition.{key}: missing")
        try:
            spec = PartitionSpec.from_names(p["universe"], p["source_groups"], p["segments"], name_to_id)
            require_valid(spec)
        except (PartitionError, KeyError, TypeError) as exc:
            raise ConfigError(f"partition: {exc}") from None
        return spec

    def seed_for(self, section: str) -> int:
        return int(self.section(section).get("seed", self.seed))

    def dataset(self) -> data_mod.PatchDataset:
        """Load the configured dataset; file problems raise DataError/OSError."""
        d = self.section("data")
        fmt = d.get("format")
        if fmt is None:
            raise ConfigError("data.format: missing")
        if fmt == "mnist012":
            ds = data_mod.bundled_mnist012()
        elif fmt == "synthetic":
            ds = data_mod.synthetic_patches(int(d.get("n_per_class", 800)), int(d.get("seed", self.seed)))
        elif fmt == "idx":
            for key in ("images", "labels"):
                if key not in d:
                    raise ConfigError(f"data.{key}: missing")
            ds = data_mod.load_idx(self._existing(d["images"]), self._existing(d["labels"]))
        else:
            if "path" not in d:
                raise ConfigError("data.path: missing")
            ds = data_mod.load_patches(self._existing(d["path"]))
        opts = self.section("data_options")
        if "max_per_label" in opts:
            ds = ds.limit_per_label(int(opts["max_per_label"]), int(opts.get("subset_seed", 0)))
        universe = (self.raw.get("partition") or {}).get("universe")
        if universe is not None:
            name_to_id = ds.name_to_id()
            missing = [u for u in map(str, universe) if u not in name_to_id]
            if missing:
                raise ConfigError(f"partition.universe: labels {missing} not in the dataset")
            ds = ds.filter_labels([name_to_id[str(u)] for u in universe])
        return ds

    def _existing(self, value) -> Path:
        p = self.path(value)
        if not p.exists():
            raise FileNotFoundError(f"data file not found: {p}")
        return p

    def label_id(self, value, ds: data_mod.PatchDataset, where: str) -> int:
        """Resolve a label given by name (or numeric id) against the dataset."""
        names = ds.name_to_id()
        if str(value) in names:
            return names[str(value)]
        if isinstance(value, int) and value in ds.label_names:
            return value
        raise ConfigError(f"{where}: unknown label {value!r}")

    def model_options(self) -> dict:
        m = self.raw.get("model") or {}
        return {"act_enc": m.get("act_enc", "sigmoid"), "act_dec": m.get("act_dec", "linear")}

    def path(self, value: str) -> Path:
        p = Path(value)
        return p if p.is_absolute() else self.base_dir / p

    def output_dir(self, override=None) -> Path:
        out = Path(override) if override else self.path(self.raw.get("output_dir", "out"))
        out.mkdir(parents=True, exist_ok=True)
        return out

    def section(self, name: str) -> dict:
        return dict(self.raw.get(name) or {})

    def digest(self) -> str:
        """Stable hash of the whole configuration."""
        text = json.dumps(self.raw, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(text.encode()).hexdigest()[:16]
