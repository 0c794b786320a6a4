"""The four-part XAE objective and its analytic gradient.

Per source group i with batch X_i (B_i samples) and segment j:

* reconstruction: (1 / 2B_i) sum_k ||x_k - y_k||^2, plus (lambda/2) ||W||_F^2 once
* sparsity (segments that meet S_i): alpha/n_j sum_m KL(rho || mean_k z_km)
* gaussianity (other segments): beta/2 [ mean_{k,m} (G_a(z_km) - E G_a(tau)) ]^2
* decorrelation (other segments): gamma/2 || Z^T Z / B_i - b I ||_F^2
"""

from __future__ import annotations

import functools
from dataclasses import asdict, dataclass, fields
from typing import Iterable, Mapping

import numpy as np

from .labels import semaphore
from .model import XaeModel, activate, activation_grad

TERMS = ("recon", "decay", "sparsity", "gaussianity", "decorrelation")
G_VARIANTS = ("logcosh", "exp")
KL_EPS = 1e-7
_QUAD_POINTS = 201


class CostError(ValueError):
    pass


@dataclass(frozen=True)
class Hyperparams:
    lam: float = 1.0
    alpha: float = 1.0
    beta: float = 1.0
    gamma: float = 1.0
    rho: float = 0.05
    a: float = 1.0
    b: float = 0.0
    sigma: float = 0.1
    g_variant: str = "exp"

    def __post_init__(self):
        for name in ("lam", "alpha", "beta", "gamma", "b"):
            if getattr(self, name) < 0:
                raise CostError(f"{name} must be >= 0")
        if not 0.0 < self.rho < 1.0:
            raise CostError("rho must lie strictly inside (0, 1)")
        if self.a <= 0 or self.sigma <= 0:
            raise CostError("a and sigma must be > 0")
        if self.g_variant not in G_VARIANTS:
            raise CostError(f"g_variant must be one of {G_VARIANTS}")

    def replace(self, **changes) -> "Hyperparams":
        return Hyperparams(**{**asdict(self), **changes})

    def to_dict(self) -> dict:
        d = asdict(self)
        d["lambda"] = d.pop("lam")
        return d

    @classmethod
    def from_dict(cls, d: Mapping) -> "Hyperparams":
        d = dict(d)
        if "lambda" in d:
            d["lam"] = d.pop("lambda")
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise CostError(f"unknown hyperparameter(s): {sorted(unknown)}")
        return cls(**d)


@dataclass(frozen=True)
class CostBreakdown:
    total: float
    recon: float
    decay: float
    sparsity: float
    gaussianity: float
    decorrelation: float

    def as_dict(self) -> dict:
        return asdict(self)


@dataclass
class GradientSet:
    d_weights: np.ndarray
    d_b_enc: np.ndarray
    d_b_dec: np.ndarray

    def flat(self) -> np.ndarray:
        return np.concatenate([self.d_weights.ravel(), self.d_b_enc, self.d_b_dec])


# -- scalar helpers ---------------------------------------------------------

def g_a(u, a: float, variant: str = "logcosh"):
    u = np.asarray(u, dtype=np.float64)
    if variant == "logcosh":
        au = np.abs(a * u)
        # log cosh(t) = |t| + log1p(exp(-2|t|)) - log 2, stable for large |t|
        return (au + np.log1p(np.exp(-2.0 * au)) - np.log(2.0)) / a
    if variant == "exp":
        return -np.exp(-0.5 * a * u * u) / a
    raise CostError(f"unknown G variant {variant!r}")


def g_a_prime(u, a: float, variant: str = "logcosh"):
    u = np.asarray(u, dtype=np.float64)
    if variant == "logcosh":
        return np.tanh(a * u)
    if variant == "exp":
        return u * np.exp(-0.5 * a * u * u)
    raise CostError(f"unknown G variant {variant!r}")


@functools.lru_cache(maxsize=1)
def _legendre_nodes():
    return np.polynomial.legendre.leggauss(_QUAD_POINTS // 2 + 1), np.polynomial.legendre.leggauss(_QUAD_POINTS // 2)


def _gauss_legendre(f, lo, hi, rule):
    x, w = rule
    half = 0.5 * (hi - lo)
    return half * float(np.dot(w, f(lo + half * (x + 1.0))))


def gaussian_baseline(a: float, sigma: float, variant: str = "logcosh") -> float:
    """E[G_a(tau)] for tau ~ N(0, sigma^2).

    exp: closed form. logcosh: G is even, so integrate 2 G(t) phi(t) over
    [0, 12 sigma] with a fixed 201-node Gauss-Legendre rule split at the
    point where log cosh turns linear (about 8/a); a single Gauss-Hermite
    rule loses accuracy once a*sigma is large.
    """
    if variant == "exp":
        return -1.0 / (a * np.sqrt(1.0 + a * sigma * sigma))
    g_a(0.0, a, variant)  # rejects unknown variants
    top = 12.0 * sigma
    split = min(8.0 / a, 0.5 * top)
    norm = 2.0 / (sigma * np.sqrt(2.0 * np.pi))

    def f(t):
        return g_a(t, a, variant) * np.exp(-0.5 * (t / sigma) ** 2) * norm

    near, far = _legendre_nodes()
    return _gauss_legendre(f, 0.0, split, near) + _gauss_legendre(f, split, top, far)


def kl_sparsity(rho: float, rho_hat):
    rho_hat = np.clip(np.asarray(rho_hat, dtype=np.float64), KL_EPS, 1.0 - KL_EPS)
    return rho * np.log(rho / rho_hat) + (1.0 - rho) * np.log((1.0 - rho) / (1.0 - rho_hat))


def kl_sparsity_grad(rho: float, rho_hat):
    """d KL / d rho_hat, zero where the clamp is active."""
    rho_hat = np.asarray(rho_hat, dtype=np.float64)
    inside = (rho_hat > KL_EPS) & (rho_hat < 1.0 - KL_EPS)
    r = np.clip(rho_hat, KL_EPS, 1.0 - KL_EPS)
    return np.where(inside, -rho / r + (1.0 - rho) / (1.0 - r), 0.0)


def mean_activation(batch_z, j: int | None = None) -> np.ndarray:
    """Per-unit mean over a batch; restricted to segment ``j`` when given."""
    if hasattr(batch_z, "values"):
        vals = batch_z.segment(j) if j is not None else batch_z.values
    else:
        vals = [z.segment(j) if j is not None else z.values for z in batch_z]
        vals = np.asarray(vals, dtype=np.float64)
    vals = np.atleast_2d(vals)
    if vals.shape[0] == 0:
        raise CostError("mean activation of an empty batch")
    return vals.mean(axis=0)


# -- objective ---------------------------------------------------------------

def _prepare(model: XaeModel, batches: Mapping[int, np.ndarray]):
    if not batches:
        raise CostError("no batches given")
    out = {}
    for i, x in batches.items():
        if not isinstance(i, (int, np.integer)) or not 0 <= i < len(model.spec.source_groups):
            raise CostError(f"unknown source group {i!r}")
        x = np.atleast_2d(np.asarray(x, dtype=np.float64))
        if x.shape[0] == 0:
            raise CostError(f"empty batch for source group {i}")
        if x.ndim != 2 or x.shape[1] != model.input_dim:
            raise CostError(f"batch for group {i} has shape {x.shape}, expected (*, {model.input_dim})")
        out[int(i)] = x
    return dict(sorted(out.items()))


def _semaphores(model: XaeModel, i: int, force_active: bool) -> list[int]:
    if force_active:
        return [1] * len(model.spec.segments)
    s = model.spec.source_groups[i]
    return [semaphore(s, seg.labels) for seg in model.spec.segments]


def _evaluate(model, batches, hp: Hyperparams, terms, force_active, want_grad):
    terms = set(TERMS if terms is None else terms)
    bad = terms - set(TERMS)
    if bad:
        raise CostError(f"unknown cost term(s): {sorted(bad)}")
    batches = _prepare(model, batches)
    spec = model.spec
    W = model.weights
    baseline = gaussian_baseline(hp.a, hp.sigma, hp.g_variant)
    parts = dict.fromkeys(TERMS, 0.0)
    if want_grad:
        dW = np.zeros_like(W)
        db_enc = np.zeros_like(model.b_enc)
        db_dec = np.zeros_like(model.b_dec)

    for i, x in batches.items():
        B = x.shape[0]
        v = _semaphores(model, i, force_active)
        z = activate(model.act_enc, x @ W + model.b_enc)
        mask = np.zeros(spec.total_width)
        for j, vij in enumerate(v):
            if vij:
                mask[spec.segment_slice(j)] = 1.0
        zm = z * mask
        y = activate(model.act_dec, zm @ W.T + model.b_dec)
        diff = y - x
        if "recon" in terms:
            parts["recon"] += float(np.sum(diff * diff)) / (2.0 * B)
        if want_grad:
            dz = np.zeros_like(z)
            if "recon" in terms:
                d_out = (diff / B) * activation_grad(model.act_dec, y)
                db_dec += d_out.sum(axis=0)
                dW += d_out.T @ zm
                dz += (d_out @ W) * mask

        for j, seg in enumerate(spec.segments):
            sl = spec.segment_slice(j)
            zj = z[:, sl]
            n = seg.width
            if v[j]:
                if "sparsity" in terms and hp.alpha:
                    rho_hat = zj.mean(axis=0)
                    parts["sparsity"] += hp.alpha * float(np.sum(kl_sparsity(hp.rho, rho_hat))) / n
                    if want_grad:
                        dz[:, sl] += hp.alpha / (n * B) * kl_sparsity_grad(hp.rho, rho_hat)
                continue
            if "gaussianity" in terms and hp.beta:
                h = float(np.sum(g_a(zj, hp.a, hp.g_variant) - baseline)) / (n * B)
                parts["gaussianity"] += 0.5 * hp.beta * h * h
                if want_grad:
                    dz[:, sl] += hp.beta * h / (n * B) * g_a_prime(zj, hp.a, hp.g_variant)
            if "decorrelation" in terms and hp.gamma:
                c = zj.T @ zj / B - hp.b * np.eye(n)
                parts["decorrelation"] += 0.5 * hp.gamma * float(np.sum(c * c))
                if want_grad:
                    dz[:, sl] += (2.0 * hp.gamma / B) * (zj @ c)

        if want_grad:
            d_pre = dz * activation_grad(model.act_enc, z)
            dW += x.T @ d_pre
            db_enc += d_pre.sum(axis=0)

    if "decay" in terms:
        parts["decay"] = 0.5 * hp.lam * float(np.sum(W * W))
        if want_grad:
            dW += hp.lam * W

    total = parts["recon"] + parts["decay"]
    total = total + parts["sparsity"]
    total = total + parts["gaussianity"]
    total = total + parts["decorrelation"]
    breakdown = CostBreakdown(total=total, **parts)
    if want_grad:
        return breakdown, GradientSet(dW, db_enc, db_dec)
    return breakdown


def cost(model: XaeModel, batches: Mapping[int, np.ndarray], hp: Hyperparams,
         terms: Iterable[str] | None = None, force_active: bool = False) -> CostBreakdown:
    """Evaluate the objective over ``batches`` (source-group index -> (B, M) inputs).

    ``terms`` restricts evaluation to a subset of TERMS; ``force_active`` sets
    every semaphore to 1, which turns off partial connectivity and the
    gaussianity/decorrelation terms.
    """
    return _evaluate(model, batches, hp, terms, force_active, want_grad=False)


def cost_and_gradient(model, batches, hp, terms=None, force_active=False):
    return _evaluate(model, batches, hp, terms, force_active, want_grad=True)


def gradient(model, batches, hp, terms=None, force_active=False) -> GradientSet:
    return _evaluate(model, batches, hp, terms, force_active, want_grad=True)[1]


def finite_diff_gradient(model, batches, hp, step: float = 1e-5, terms=None,
                         force_active=False) -> GradientSet:
    """Central differences of ``cost`` with respect to every parameter."""
    if step <= 0:
        raise CostError("step must be > 0")
    probe = model.copy()
    out = []
    for param in probe.parameters():
        g = np.zeros_like(param)
        flat, gflat = param.reshape(-1), g.reshape(-1)
        for idx in range(flat.size):
            orig = flat[idx]
            flat[idx] = orig + step
            up = cost(probe, batches, hp, terms, force_active).total
            flat[idx] = orig - step
            down = cost(probe, batches, hp, terms, force_active).total
            flat[idx] = orig
            gflat[idx] = (up - down) / (2.0 * step)
        out.append(g)
    return GradientSet(*out)


def max_relative_error(analytic: GradientSet, numeric: GradientSet, floor: float = 1e-6) -> float:
    """max |a - n| / max(|a|, |n|, floor) over all coordinates."""
    a, n = analytic.flat(), numeric.flat()
    denom = np.maximum(np.maximum(np.abs(a), np.abs(n)), floor)
    return float(np.max(np.abs(a - n) / denom)) if a.size else 0.0
