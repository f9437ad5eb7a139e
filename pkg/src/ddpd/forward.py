"""Forward corruption: closed-form conditional marginals and joint (x_t, z_t) draws."""

from __future__ import annotations

import numpy as np

from .core import InvariantViolation, LinearSchedule, NoiseKind, VocabSpec, make_schedule


def conditional_marginal(x1_d: int, t: float, kind, vocab: VocabSpec,
                         sched: LinearSchedule | None = None) -> np.ndarray:
    """p_{t|1}(x_t^d | x_1^d) as a pmf over S tokens (uniform) or S+1 (mask)."""
    kind = NoiseKind(kind)
    sched = sched or make_schedule()
    if not 0 <= x1_d < vocab.size_s:
        raise InvariantViolation(f"clean token {x1_d} outside [0, {vocab.size_s})")
    if not 0.0 <= t <= 1.0:
        raise InvariantViolation(f"time {t} outside [0, 1]")
    a = float(sched.alpha(t))
    if kind is NoiseKind.UNIFORM:
        p = np.full(vocab.size_s, (1.0 - a) / vocab.size_s)
        p[x1_d] += a
    else:
        p = np.zeros(vocab.size_s + 1)
        p[x1_d] = a
        p[vocab.mask_id] = 1.0 - a
    return p


def sample_corrupted(x1, t, kind, vocab: VocabSpec, rng: np.random.Generator,
                     sched: LinearSchedule | None = None):
    """Draw (x_t, z_t) given clean x1.

    ``x1`` has shape (..., D); ``t`` is a scalar or broadcasts against the
    leading batch shape. Returns ``(xt, is_noise)`` where ``is_noise`` is True
    for z=N. Under uniform noise a corrupted position can still show its clean
    token.
    """
    kind = NoiseKind(kind)
    sched = sched or make_schedule()
    x1 = vocab.check_clean(x1)
    a = np.asarray(sched.alpha(t), dtype=np.float64)
    if a.ndim:
        a = a.reshape(a.shape + (1,) * (x1.ndim - a.ndim))
    is_noise = rng.random(x1.shape) >= a
    noise_tokens = rng.integers(0, vocab.size_s, size=x1.shape)
    if kind is NoiseKind.UNIFORM:
        xt = np.where(is_noise, noise_tokens, x1)
    else:
        xt = np.where(is_noise, vocab.mask_id, x1)
    return xt.astype(np.int64), is_noise


def mask_view(xt, is_noise, vocab: VocabSpec) -> np.ndarray:
    """Replace positions flagged as noise with the mask id."""
    return np.where(is_noise, vocab.mask_id, np.asarray(xt)).astype(np.int64)
