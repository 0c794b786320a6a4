"""Plain minibatch gradient descent over several source groups."""

from __future__ import annotations

import csv
import math
import time
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Callable, Mapping

import numpy as np

from .cost import TERMS, CostBreakdown, Hyperparams, cost, cost_and_gradient
from .labels import PartitionSpec, require_valid
from .model import XaeModel

SCHEDULES = ("round_robin", "proportional")
CSV_COLUMNS = ("epoch", "recon", "decay", "sparsity", "gaussianity", "decorrelation", "total", "seconds")


class TrainingError(RuntimeError):
    pass


class TrainingDiverged(TrainingError):
    def __init__(self, epoch: int, term: str, value: float):
        super().__init__(f"non-finite cost at epoch {epoch}: term {term!r} = {value}")
        self.epoch, self.term, self.value = epoch, term, value


@dataclass(frozen=True)
class EarlyStop:
    patience: int = 10
    min_rel_improvement: float = 1e-4


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 0.01
    epochs: int = 100
    batch_size: int = 32
    seed: int = 0
    group_schedule: str = "round_robin"
    early_stop: EarlyStop | None = None
    snapshot_every: int | None = None

    def __post_init__(self):
        if self.learning_rate < 0:
            raise TrainingError("learning_rate must be >= 0")
        if self.epochs < 1 or self.batch_size < 1:
            raise TrainingError("epochs and batch_size must be >= 1")
        if self.group_schedule not in SCHEDULES:
            raise TrainingError(f"group_schedule must be one of {SCHEDULES}")
        if isinstance(self.early_stop, Mapping):
            object.__setattr__(self, "early_stop", EarlyStop(**self.early_stop))

    def replace(self, **changes) -> "TrainConfig":
        return TrainConfig(**{**{f.name: getattr(self, f.name) for f in fields(self)}, **changes})

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: Mapping) -> "TrainConfig":
        unknown = set(d) - {f.name for f in fields(cls)}
        if unknown:
            raise TrainingError(f"unknown train option(s): {sorted(unknown)}")
        d = dict(d)
        if isinstance(d.get("early_stop"), Mapping):
            d["early_stop"] = EarlyStop(**d["early_stop"])
        return cls(**d)


@dataclass
class TrainReport:
    history: list[CostBreakdown] = field(default_factory=list)
    seconds: list[float] = field(default_factory=list)
    model: XaeModel | None = None
    stop_reason: str = ""

    def write_csv(self, path, with_time: bool = True) -> None:
        """Per-epoch log; ``with_time=False`` zeroes the clock column for reproducible files."""
        with open(path, "w", newline="") as f:
            w = csv.writer(f, lineterminator="\n")
            w.writerow(CSV_COLUMNS)
            for epoch, (bd, sec) in enumerate(zip(self.history, self.seconds), start=1):
                row = [epoch] + [repr(getattr(bd, t)) for t in TERMS] + [repr(bd.total)]
                row.append(f"{sec:.6f}" if with_time else "0")
                w.writerow(row)


def default_hyperparams(profile: str = "mnist_toy") -> Hyperparams:
    """Hyperparameter profiles.

    lambda=beta=gamma=1 follow the published MNIST toy setting. rho and alpha
    were tuned on the bundled digits so segment exclusivity holds at seed 0
    with a wide margin; a, b, sigma and the contrast variant barely matter.
    """
    if profile == "mnist_toy":
        return Hyperparams(lam=1.0, alpha=3.0, beta=1.0, gamma=1.0, rho=0.3, a=1.0, b=0.0,
                           sigma=0.1, g_variant="exp")
    if profile == "patch_generic":
        return default_hyperparams("mnist_toy").replace(rho=0.02)
    raise TrainingError(f"unknown hyperparameter profile {profile!r}")


def default_train_config(profile: str = "mnist_toy") -> TrainConfig:
    if profile in ("mnist_toy", "patch_generic"):
        return TrainConfig(learning_rate=0.01, epochs=100, batch_size=32, seed=0)
    raise TrainingError(f"unknown train profile {profile!r}")


def _as_arrays(data: Mapping[int, object]) -> dict[int, np.ndarray]:
    out = {}
    for i, d in data.items():
        x = d.matrix() if hasattr(d, "matrix") else np.asarray(d, dtype=np.float64)
        if x.ndim != 2 or x.shape[0] == 0:
            raise TrainingError(f"source group {i} has no training data")
        out[int(i)] = x
    return dict(sorted(out.items()))


def epoch_plan(sizes: Mapping[int, int], cfg: TrainConfig, rng: np.random.Generator
               ) -> list[dict[int, np.ndarray]]:
    """Minibatch steps for one epoch; each step maps group -> record indices.

    Each group is shuffled with one ``rng.permutation`` call, in group order.
    Every step holds data from all groups, so one step is an unbiased sample
    of the full objective (the decay term is applied once per step).

    round_robin: step r takes the r-th ``batch_size`` slice of every group
    that still has one, in declaration order.
    proportional: the number of steps is ceil(total / batch_size) and every
    group is cut into that many near-equal chunks, so each step mixes groups
    in proportion to their sizes. A group smaller than the step count
    fills the leading steps only; steps left empty are dropped.
    """
    perms = {i: rng.permutation(n) for i, n in sizes.items()}
    steps = []
    if cfg.group_schedule == "round_robin":
        rounds = max(-(-n // cfg.batch_size) for n in sizes.values())
        for r in range(rounds):
            lo, hi = r * cfg.batch_size, (r + 1) * cfg.batch_size
            step = {i: p[lo:hi] for i, p in perms.items() if lo < len(p)}
            steps.append(step)
    else:
        total = sum(sizes.values())
        n_steps = max(1, -(-total // cfg.batch_size))
        chunks = {i: np.array_split(p, min(n_steps, len(p))) for i, p in perms.items()}
        for r in range(n_steps):
            step = {i: c[r] for i, c in chunks.items() if r < len(c)}
            if step:
                steps.append(step)
    return steps


def _check_finite(bd: CostBreakdown, epoch: int):
    for t in TERMS + ("total",):
        val = getattr(bd, t)
        if not math.isfinite(val):
            raise TrainingDiverged(epoch, t, val)


def train(model: XaeModel, data: Mapping[int, object], hp: Hyperparams, cfg: TrainConfig,
          force_active: bool = False, snapshot: Callable[[int, XaeModel], None] | None = None) -> TrainReport:
    """Train ``model`` in place on ``data`` (source-group index -> samples).

    The model's parameters are updated with theta -= eta * grad after every
    minibatch. Cost history is the full-data objective at each epoch end.
    """
    require_valid(model.spec)
    arrays = _as_arrays(data)
    for i, x in arrays.items():
        if x.shape[1] != model.input_dim:
            raise TrainingError(f"group {i} inputs have length {x.shape[1]}, model expects {model.input_dim}")
        if not 0 <= i < len(model.spec.source_groups):
            raise TrainingError(f"unknown source group {i}")
    rng = np.random.default_rng(cfg.seed)
    sizes = {i: len(x) for i, x in arrays.items()}
    report = TrainReport(model=model, stop_reason="max_epochs")
    best, stale = math.inf, 0
    eta = cfg.learning_rate
    for epoch in range(1, cfg.epochs + 1):
        start = time.perf_counter()
        for step in epoch_plan(sizes, cfg, rng):
            batch = {i: arrays[i][idx] for i, idx in step.items()}
            bd, g = cost_and_gradient(model, batch, hp, force_active=force_active)
            if not math.isfinite(bd.total):
                _check_finite(bd, epoch)
            if eta:
                model.weights -= eta * g.d_weights
                model.b_enc -= eta * g.d_b_enc
                model.b_dec -= eta * g.d_b_dec
        bd = cost(model, arrays, hp, force_active=force_active)
        _check_finite(bd, epoch)
        report.history.append(bd)
        report.seconds.append(time.perf_counter() - start)
        if snapshot is not None and cfg.snapshot_every and epoch % cfg.snapshot_every == 0:
            snapshot(epoch, model)
        if cfg.early_stop is not None:
            if bd.total < best * (1.0 - cfg.early_stop.min_rel_improvement) or best == math.inf:
                best, stale = bd.total, 0
            else:
                stale += 1
                if stale >= cfg.early_stop.patience:
                    report.stop_reason = "early_stop"
                    break
    return report


def emulation_spec(spec: PartitionSpec) -> PartitionSpec:
    """Same segments, one source group covering the whole universe."""
    return PartitionSpec(spec.universe, [spec.universe], spec.segments, dict(spec.label_names))


def train_ae_emulation(model: XaeModel, merged_data, hp: Hyperparams, cfg: TrainConfig,
                       snapshot=None) -> TrainReport:
    """Conventional sparse AE: all semaphores 1, no gaussianity/decorrelation, merged data.

    ``merged_data`` is either one (n, M) array or a mapping of groups that is
    concatenated in group order. The model is trained as a single group.
    """
    if isinstance(merged_data, Mapping):
        merged = np.concatenate(list(_as_arrays(merged_data).values()), axis=0)
    else:
        merged = merged_data.matrix() if hasattr(merged_data, "matrix") else np.asarray(merged_data, float)
    if len(model.spec.source_groups) != 1:
        model.spec = emulation_spec(model.spec)
    return train(model, {0: merged}, hp.replace(beta=0.0, gamma=0.0), cfg, force_active=True,
                 snapshot=snapshot)


def write_log(report: TrainReport, path: Path | str, with_time=True):
    report.write_csv(path, with_time=with_time)
