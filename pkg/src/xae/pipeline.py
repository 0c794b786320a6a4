"""XAE (or conventional sparse AE) feature learning followed by an FCN head."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import classifier as clf_mod
from .cost import Hyperparams
from .data import PatchDataset, assemble_groups
from .labels import PartitionSpec
from .model import XaeModel, init
from .trainer import TrainConfig, TrainReport, train, train_ae_emulation

MODES = ("xae", "ae")


@dataclass
class PipelineConfig:
    spec: PartitionSpec
    hp: Hyperparams
    xae_train: TrainConfig
    clf_hidden: tuple[int, ...] = ()
    clf_train: TrainConfig = field(default_factory=lambda: TrainConfig(learning_rate=0.5, epochs=100, batch_size=32))
    act_enc: str = "sigmoid"
    act_dec: str = "linear"
    mode: str = "xae"
    group_seed: int = 0
    geometry: tuple[int, int, int] | None = None

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}")


def fit_features(cfg: PipelineConfig, ds: PatchDataset, snapshot=None) -> tuple[XaeModel, TrainReport]:
    """Train the feature extractor on ``ds`` (grouped by the partition).

    In "ae" mode the same records are merged into one set and the model is
    trained as a conventional sparse AE with identical widths and seeds.
    """
    grouped = assemble_groups(ds, cfg.spec, cfg.group_seed)
    model = init(cfg.spec, ds.dim, cfg.xae_train.seed, cfg.act_enc, cfg.act_dec, cfg.geometry or ds.geometry)
    model.hyperparams = {"mode": cfg.mode, **cfg.hp.to_dict()}
    if cfg.mode == "xae":
        report = train(model, grouped.arrays(), cfg.hp, cfg.xae_train, snapshot=snapshot)
    else:
        report = train_ae_emulation(model, grouped.merged(), cfg.hp, cfg.xae_train, snapshot=snapshot)
    return model, report


@dataclass
class FittedPipeline:
    xae: XaeModel
    clf: clf_mod.FcnModel
    report: TrainReport

    def predict_proba(self, x) -> np.ndarray:
        return clf_mod.predict_proba(self.clf, clf_mod.extract_features(self.xae, x))


def fit(cfg: PipelineConfig, ds: PatchDataset, classes=None) -> FittedPipeline:
    xae, report = fit_features(cfg, ds)
    feats = clf_mod.extract_features(xae, ds.vectors)
    clf = clf_mod.train_classifier(feats, ds.labels, cfg.clf_hidden, cfg.clf_train, classes, ds.label_names)
    return FittedPipeline(xae, clf, report)


def crossval(cfg: PipelineConfig, ds: PatchDataset, k: int = 10, seed: int = 0,
             positive_class=None, stratified: bool = True) -> clf_mod.CrossValResult:
    classes = sorted(set(ds.labels.tolist()))

    def fit_fold(x, y, fold):
        sub = PatchDataset(ds.geometry, y, x, dict(ds.label_names))
        return fit(cfg, sub, classes).predict_proba

    return clf_mod.kfold_crossval(ds.vectors, ds.labels, k, seed, fit_fold, classes=classes,
                                  positive_class=positive_class, stratified=stratified,
                                  label_names=ds.label_names)
