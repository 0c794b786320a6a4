"""Randomized analytic-vs-numeric gradient checks over small XAE instances."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .cost import TERMS, GradientSet, Hyperparams, finite_diff_gradient, gradient, max_relative_error
from .labels import PartitionSpec
from .model import XaeModel, init

CHECKS = TERMS + ("combined",)


@dataclass
class Instance:
    model: XaeModel
    batches: dict[int, np.ndarray]
    hp: Hyperparams


def random_instance(rng: np.random.Generator, max_input: int = 10, max_width: int = 3,
                    max_batch: int = 5, g_variant: str | None = None) -> Instance:
    """Two source groups {0,1} and {1,2}; segments {0}, {1}, {2} of random width."""
    m = int(rng.integers(2, max_input + 1))
    widths = [int(w) for w in rng.integers(1, max_width + 1, size=3)]
    spec = PartitionSpec([0, 1, 2], [[0, 1], [1, 2]], [([j], widths[j]) for j in range(3)])
    act_dec = "linear" if rng.random() < 0.5 else "sigmoid"
    model = init(spec, m, int(rng.integers(2**31)), "sigmoid", act_dec)
    # push the weights off their tiny init scale so every term is exercised
    model.weights *= rng.uniform(1.0, 4.0)
    model.b_enc[:] = rng.normal(0.0, 0.5, size=model.b_enc.shape)
    model.b_dec[:] = rng.normal(0.0, 0.5, size=model.b_dec.shape)
    batches = {i: rng.uniform(0.0, 1.0, size=(int(rng.integers(1, max_batch + 1)), m)) for i in range(2)}
    hp = Hyperparams(
        lam=float(rng.uniform(0.1, 2.0)), alpha=float(rng.uniform(0.1, 2.0)),
        beta=float(rng.uniform(0.5, 5.0)), gamma=float(rng.uniform(0.5, 5.0)),
        rho=float(rng.uniform(0.05, 0.5)), a=float(rng.uniform(0.5, 2.0)),
        b=float(rng.uniform(0.0, 0.5)), sigma=float(rng.uniform(0.05, 0.5)),
        g_variant=g_variant or ("logcosh" if rng.random() < 0.5 else "exp"),
    )
    return Instance(model, batches, hp)


def check_instance(inst: Instance, step: float = 1e-5, inject_sign_error: str | None = None
                   ) -> dict[str, float]:
    """Max relative error per cost term in isolation and for the full cost.

    ``inject_sign_error`` names a check whose analytic gradient is negated
    before comparison. It exists only so tests can confirm a broken gradient
    is caught.
    """
    out = {}
    for name in CHECKS:
        terms = None if name == "combined" else (name,)
        g = gradient(inst.model, inst.batches, inst.hp, terms)
        if name == inject_sign_error or (inject_sign_error and name == "combined"):
            g = GradientSet(-g.d_weights, -g.d_b_enc, -g.d_b_dec)
        n = finite_diff_gradient(inst.model, inst.batches, inst.hp, step, terms)
        out[name] = max_relative_error(g, n)
    return out


def run(instances: int = 20, seed: int = 0, step: float = 1e-5, inject_sign_error: str | None = None,
        **shape) -> list[dict[str, float]]:
    rng = np.random.default_rng(seed)
    return [check_instance(random_instance(rng, **shape), step, inject_sign_error) for _ in range(instances)]
