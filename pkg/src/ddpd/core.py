"""Foundational types: vocabularies, noise schedules, pmf validation, RNG streams."""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

# Largest time fed to the removal-rate prefactor alpha_dot / (1 - alpha).
T_MAX = 1.0 - 1e-9

# Logit used for "impossible" tokens and saturated planner outputs.
LOGIT_CAP = 1e4


class DDPDError(Exception):
    """Base class for library errors."""


class InvariantViolation(DDPDError, ValueError):
    """An input or intermediate value violates a documented invariant."""


class UnsupportedKind(InvariantViolation):
    pass


class NegativeMass(InvariantViolation):
    pass


class DegeneratePmf(InvariantViolation):
    pass


class SupportTooLarge(InvariantViolation):
    pass


class CapacityExceeded(InvariantViolation):
    pass


class ZeroCorruptionProbability(InvariantViolation):
    pass


class NoiseKind(str, enum.Enum):
    UNIFORM = "uniform"
    MASK = "mask"


@dataclass(frozen=True)
class VocabSpec:
    """Data vocabulary of ``size_s`` tokens over ``dims_d`` positions.

    Token ``size_s`` is reserved as the mask id and never occurs in clean data.
    """

    size_s: int
    dims_d: int

    def __post_init__(self):
        if int(self.size_s) < 2:
            raise InvariantViolation(f"size_s must be >= 2, got {self.size_s}")
        if int(self.dims_d) < 1:
            raise InvariantViolation(f"dims_d must be >= 1, got {self.dims_d}")

    @property
    def mask_id(self) -> int:
        return self.size_s

    def check_clean(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=np.int64)
        if x.shape[-1] != self.dims_d:
            raise InvariantViolation(f"expected {self.dims_d} dims, got shape {x.shape}")
        if x.size and (x.min() < 0 or x.max() >= self.size_s):
            raise InvariantViolation("clean sequence contains tokens outside [0, S)")
        return x

    def check_tokens(self, x: np.ndarray) -> np.ndarray:
        """Like :meth:`check_clean` but also admits the mask id."""
        x = np.asarray(x, dtype=np.int64)
        if x.shape[-1] != self.dims_d:
            raise InvariantViolation(f"expected {self.dims_d} dims, got shape {x.shape}")
        if x.size and (x.min() < 0 or x.max() > self.size_s):
            raise InvariantViolation("sequence contains tokens outside [0, S]")
        return x


class LinearSchedule:
    """alpha_t = t."""

    kind = "linear"

    def alpha(self, t):
        return np.asarray(t, dtype=np.float64) * 1.0

    def alpha_dot(self, t):
        return np.ones_like(np.asarray(t, dtype=np.float64))

    def alpha_inv(self, a):
        return np.asarray(a, dtype=np.float64) * 1.0

    def prefactor(self, t):
        """Noise removal rate alpha_dot / (1 - alpha), with t clamped below 1."""
        t = np.minimum(np.asarray(t, dtype=np.float64), T_MAX)
        return self.alpha_dot(t) / (1.0 - self.alpha(t))

    def integrated_prefactor(self, t0, t1):
        """Integral of the prefactor over [t0, t1] (both clamped below 1)."""
        t0 = np.minimum(np.asarray(t0, dtype=np.float64), T_MAX)
        t1 = np.minimum(np.asarray(t1, dtype=np.float64), T_MAX)
        return np.log1p(-self.alpha(t0)) - np.log1p(-self.alpha(t1))

    def advance_by_hazard(self, t0, hazard):
        """Time t1 >= t0 at which the integrated prefactor reaches ``hazard``."""
        t0 = np.asarray(t0, dtype=np.float64)
        remaining = 1.0 - self.alpha(t0)
        t1 = self.alpha_inv(1.0 - remaining * np.exp(-np.asarray(hazard, dtype=np.float64)))
        return np.maximum(t1, t0)  # rounding must not move the clock backwards

    def __repr__(self):
        return "LinearSchedule()"


NoiseSchedule = LinearSchedule

_SCHEDULES = {"linear": LinearSchedule}


def make_schedule(kind: str = "linear") -> LinearSchedule:
    try:
        return _SCHEDULES[kind]()
    except KeyError:
        raise UnsupportedKind(f"unsupported schedule kind {kind!r}") from None


def validate_pmf(raw, *, neg_tol: float = 1e-12) -> np.ndarray:
    """Return a normalized float64 copy of ``raw`` along the last axis.

    Entries in ``[-neg_tol, 0)`` are clamped to zero; a non-positive row sum
    is an error.
    """
    p = np.array(raw, dtype=np.float64)
    if not np.all(np.isfinite(p)):
        raise InvariantViolation("pmf has non-finite entries")
    if np.any(p < -neg_tol):
        raise NegativeMass(f"pmf has entry {p.min()} < -{neg_tol}")
    p = np.maximum(p, 0.0)
    total = p.sum(axis=-1, keepdims=True)
    if np.any(total <= 0):
        raise DegeneratePmf("pmf has non-positive total mass")
    return p / total


def make_rng(seed: int, stream: int = 0) -> np.random.Generator:
    """Independent, reproducible generator for (seed, stream)."""
    seq = np.random.SeedSequence(int(seed) & (2**64 - 1), spawn_key=(int(stream),))
    return np.random.Generator(np.random.PCG64(seq))


def sigmoid(x):
    x = np.asarray(x, dtype=np.float64)
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def logit(p, cap: float = LOGIT_CAP):
    p = np.asarray(p, dtype=np.float64)
    with np.errstate(divide="ignore"):
        out = np.log(p) - np.log1p(-p)
    return np.clip(out, -cap, cap)


def softmax(logits, axis=-1):
    z = np.asarray(logits, dtype=np.float64)
    z = z - z.max(axis=axis, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=axis, keepdims=True)


def encode_states(x: np.ndarray, base: int) -> np.ndarray:
    """Map token rows of shape (..., D) to integers in base ``base``."""
    x = np.asarray(x, dtype=np.int64)
    weights = base ** np.arange(x.shape[-1] - 1, -1, -1, dtype=np.int64)
    return x @ weights


def decode_states(codes: np.ndarray, base: int, dims: int) -> np.ndarray:
    codes = np.asarray(codes, dtype=np.int64)
    out = np.empty(codes.shape + (dims,), dtype=np.int64)
    rem = codes.copy()
    for d in range(dims - 1, -1, -1):
        out[..., d] = rem % base
        rem //= base
    return out


def sample_categorical(rng: np.random.Generator, probs: np.ndarray) -> np.ndarray:
    """One draw per row of ``probs`` (shape (B, K)) by inverse CDF."""
    probs = np.asarray(probs, dtype=np.float64)
    cdf = np.cumsum(probs, axis=-1)
    u = rng.random(probs.shape[:-1]) * cdf[..., -1]
    idx = (cdf <= u[..., None]).sum(axis=-1)
    return np.minimum(idx, probs.shape[-1] - 1)
