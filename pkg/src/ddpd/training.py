"""Cross-entropy objectives for the planner and denoiser, and a small SGD driver."""

from __future__ import annotations

import csv
import logging
import math
import time
from dataclasses import dataclass, field

import numpy as np

from .core import DDPDError, InvariantViolation, LinearSchedule, NoiseKind, make_rng, make_schedule
from .forward import mask_view, sample_corrupted
from .models import (
    MASK_FLAVOR,
    LogisticDenoiser,
    LogisticPlanner,
    Planner,
    TabularDenoiser,
    TabularPlanner,
    one_hot_features,
)

log = logging.getLogger(__name__)


class TrainingDiverged(DDPDError):
    pass


@dataclass
class TrainConfig:
    batch_size: int = 256
    lr: float = 0.5
    iterations: int = 1000
    lam: float = 0.1
    momentum: float = 0.0
    weight_by_prefactor: bool = False
    seed: int = 0

    def __post_init__(self):
        if self.batch_size < 1 or self.iterations < 1:
            raise InvariantViolation("batch_size and iterations must be positive")
        if self.lr <= 0 or self.lam <= 0:
            raise InvariantViolation("lr and lam must be positive")
        if not 0.0 <= self.momentum < 1.0:
            raise InvariantViolation("momentum must lie in [0, 1)")


def _weights(t, weight_by_prefactor, sched, n):
    if not weight_by_prefactor:
        return np.ones(n)
    if t is None:
        raise InvariantViolation("prefactor weighting needs the corruption times")
    return (sched or make_schedule()).prefactor(np.asarray(t, dtype=np.float64))


def _softplus(x):
    return np.maximum(x, 0.0) + np.log1p(np.exp(-np.abs(x)))


def planner_loss(model: Planner, xt, is_noise, t=None, weight_by_prefactor: bool = False,
                 sched: LinearSchedule | None = None):
    """Mean binary cross-entropy of p(z^d = N | x_t) over all B*D entries.

    Returns ``(loss, grads)``; ``grads`` maps parameter names to arrays for
    logistic models and is None for other families.
    """
    xt = np.atleast_2d(np.asarray(xt, dtype=np.int64))
    y = np.atleast_2d(np.asarray(is_noise)).astype(np.float64)
    B, D = y.shape
    w = _weights(t, weight_by_prefactor, sched, B)[:, None]
    lg = np.atleast_2d(model.logits(xt))
    per = w * (_softplus(lg) - y * lg)
    loss = math.fsum(per.ravel()) / (B * D)
    if not isinstance(model, LogisticPlanner):
        return loss, None
    p = 1.0 / (1.0 + np.exp(-lg))
    g = w * (p - y) / (B * D)
    phi = one_hot_features(xt, model.vocab)
    return loss, {"W": g.T @ phi, "b": g.sum(axis=0)}


def denoiser_loss(model, xt, is_noise, x1, t=None, weight_by_prefactor: bool = False,
                  sched: LinearSchedule | None = None):
    """Mean categorical cross-entropy over the corrupted entries (z^d = N).

    Mask-flavor models see the masked view of ``xt``. A batch without corrupted
    entries has zero loss and zero gradient; it is logged as a warning.
    """
    xt = np.atleast_2d(np.asarray(xt, dtype=np.int64))
    z = np.atleast_2d(np.asarray(is_noise, dtype=bool))
    x1 = np.atleast_2d(np.asarray(x1, dtype=np.int64))
    B = len(xt)
    S = model.vocab.size_s
    inp = mask_view(xt, z, model.vocab) if model.flavor == MASK_FLAVOR else xt
    w = _weights(t, weight_by_prefactor, sched, B)[:, None]
    n_terms = int(z.sum())
    is_logistic = isinstance(model, LogisticDenoiser)
    if n_terms == 0:
        log.warning("denoiser batch has no corrupted entries; loss and gradient are zero")
        if not is_logistic:
            return 0.0, None
        return 0.0, {"V": np.zeros_like(model.V), "c": np.zeros_like(model.c)}
    if is_logistic:
        lg = model.data_logits(inp)
        m = lg.max(-1, keepdims=True)
        lse = m[..., 0] + np.log(np.exp(lg - m).sum(-1))
        picked = np.take_along_axis(lg, x1[..., None], axis=-1)[..., 0]
        ce = lse - picked
    else:
        p = model.probs(inp, None)
        with np.errstate(divide="ignore"):
            ce = -np.log(np.take_along_axis(p, x1[..., None], axis=-1)[..., 0])
    per = np.where(z, w * ce, 0.0)
    loss = math.fsum(per.ravel()) / n_terms
    if not is_logistic:
        return loss, None
    soft = np.exp(lg - lse[..., None])
    soft[np.arange(B)[:, None], np.arange(z.shape[1])[None, :], x1] -= 1.0
    g = np.where(z[..., None], w[..., None] * soft, 0.0) / n_terms
    phi = one_hot_features(inp, model.vocab)
    return loss, {"V": np.einsum("bds,bf->dsf", g, phi), "c": g.sum(axis=0)}


def finite_difference_check(loss_fn, model, h: float = 1e-5, floor: float = 1e-8) -> float:
    """Max relative error between analytic and central-difference gradients.

    ``loss_fn(model) -> (loss, grads)``. Relative error is
    |a - n| / max(|a|, |n|, floor) over every parameter entry.
    """
    _, grads = loss_fn(model)
    worst = 0.0
    for name, g in grads.items():
        theta = getattr(model, name)
        flat = theta.reshape(-1)
        gflat = g.reshape(-1)
        for i in range(flat.size):
            old = flat[i]
            flat[i] = old + h
            lp, _ = loss_fn(model)
            flat[i] = old - h
            lm, _ = loss_fn(model)
            flat[i] = old
            num = (lp - lm) / (2 * h)
            err = abs(gflat[i] - num) / max(abs(gflat[i]), abs(num), floor)
            worst = max(worst, err)
    return worst


def draw_training_batch(source, n: int, kind, rng: np.random.Generator,
                        sched: LinearSchedule | None = None):
    """x1 from ``source``, a fresh t ~ U(0, 1) per example, then (x_t, z_t)."""
    x1 = source.sample(rng, n)
    t = rng.random(n)
    xt, z = sample_corrupted(x1, t, kind, source.vocab, rng, sched)
    return x1, t, xt, z


@dataclass
class FitResult:
    model: object
    losses: list = field(default_factory=list)
    wall_times: list = field(default_factory=list)

    def write_csv(self, path, timings: bool = False) -> None:
        """Loss curve as CSV; the wall-time column is opt-in so reruns stay byte-identical."""
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["iteration", "loss"] + (["wall_time"] if timings else []))
            for i, loss in enumerate(self.losses):
                row = [i, repr(float(loss))]
                if timings:
                    row.append(f"{self.wall_times[i]:.6f}")
                w.writerow(row)


def fit(model, source, config: TrainConfig, sched: LinearSchedule | None = None) -> FitResult:
    """Train ``model`` on corrupted draws from ``source`` (anything with ``.sample``).

    Tabular models accumulate counts (the closed-form minimizer); logistic
    models take SGD steps. Planners train on uniform noise; denoisers on the
    noise matching their flavor.
    """
    rng = make_rng(config.seed, stream=1)
    is_planner = isinstance(model, Planner)
    flavor = getattr(model, "flavor", None)
    kind = NoiseKind.MASK if (not is_planner and flavor == MASK_FLAVOR) else NoiseKind.UNIFORM
    if model.vocab != source.vocab:
        raise InvariantViolation("model and data vocabularies differ")
    velocity = {}
    result = FitResult(model)
    start = time.perf_counter()
    for it in range(config.iterations):
        x1, t, xt, z = draw_training_batch(source, config.batch_size, kind, rng, sched)
        if is_planner:
            loss, grads = planner_loss(model, xt, z, t, config.weight_by_prefactor, sched)
        else:
            loss, grads = denoiser_loss(model, xt, z, x1, t, config.weight_by_prefactor, sched)
        if not math.isfinite(loss):
            raise TrainingDiverged(
                f"loss became {loss} at iteration {it}; last finite losses "
                f"{result.losses[-5:]}, lr={config.lr}, momentum={config.momentum}")
        result.losses.append(loss)
        result.wall_times.append(time.perf_counter() - start)
        if isinstance(model, TabularPlanner):
            model.update(xt, z)
        elif isinstance(model, TabularDenoiser):
            inp = mask_view(xt, z, model.vocab) if flavor == MASK_FLAVOR else xt
            model.update(inp, z, x1)
        else:
            for name, g in grads.items():
                v = velocity.get(name, 0.0)
                v = config.momentum * v - config.lr * g
                velocity[name] = v
                setattr(model, name, getattr(model, name) + v)
    return result


def moving_average(values, window: int = 100) -> np.ndarray:
    v = np.asarray(values, dtype=np.float64)
    if len(v) < window:
        return np.array([v.mean()]) if len(v) else v
    c = np.cumsum(np.concatenate([[0.0], v]))
    return (c[window:] - c[:-window]) / window
