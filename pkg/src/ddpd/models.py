"""Planner and denoiser contracts, concrete model families, and adapters.

Everything is batch-first: ``xt`` has shape (..., D). A planner returns
per-dimension noise probabilities p(z^d = N | x_t); a denoiser returns
per-dimension distributions over the S data tokens.

Trained planners are time-free. ``probs`` still accepts a time hint so that
exact oracle planners (whose answer depends on the process clock) and planners
derived from a time-conditioned posterior model fit the same call shape.
"""

from __future__ import annotations

import json
import threading
from pathlib import Path

import numpy as np

from .core import (
    LOGIT_CAP,
    T_MAX,
    CapacityExceeded,
    DegeneratePmf,
    InvariantViolation,
    LinearSchedule,
    NoiseKind,
    VocabSpec,
    ZeroCorruptionProbability,
    decode_states,
    encode_states,
    logit,
    make_schedule,
    sigmoid,
    softmax,
)
from .oracle import BayesOracle, EnumerableDist, TimeMarginalOracle

UNIFORM_FLAVOR = "uniform"
MASK_FLAVOR = "mask"
MAX_TABLE_ELEMS = 10**7
FORMAT_NAME = "ddpd-model"
FORMAT_VERSION = 1


def temper(probs: np.ndarray, temperature: float) -> np.ndarray:
    """Equivalent of dividing logits by ``temperature`` before the softmax."""
    if temperature == 1.0:
        return probs
    with np.errstate(divide="ignore"):
        lp = np.log(probs) / temperature
    lp = lp - lp.max(axis=-1, keepdims=True)
    p = np.exp(lp)
    return p / p.sum(axis=-1, keepdims=True)


# ---------------------------------------------------------------------------
# contracts
# ---------------------------------------------------------------------------


class Planner:
    """p(z^d = N | x_t) for every dimension.

    Subclasses implement ``probs`` or ``logits``; each default is derived from
    the other.
    """

    vocab: VocabSpec
    # "none": ignores time; "clock": reads the sampler's scheduled time;
    # "tilde": reads the planner-estimated time from the previous step.
    time_source = "none"
    # Fixed planners (e.g. the mask indicator) cost no model evaluation.
    is_free = False

    def probs(self, xt, t=None) -> np.ndarray:
        return sigmoid(self.logits(xt, t))

    def logits(self, xt, t=None) -> np.ndarray:
        return logit(self.probs(xt, t))

    def jump_time(self, xt, t, hazard, sched: LinearSchedule, probs=None) -> np.ndarray:
        """Time at which the integrated self-loop jump rate from ``t`` reaches ``hazard``.

        Exact for planners that do not depend on time: the total rate is
        prefactor(s) * sum_d p(N), and the prefactor integrates in closed form.
        Returns ``inf`` where the total rate is zero.
        """
        if probs is None:
            probs = self.probs(xt, t)
        lam = np.asarray(probs).sum(axis=-1)
        out = np.full(lam.shape, np.inf)
        ok = lam > 0
        out[ok] = sched.advance_by_hazard(np.asarray(t)[ok], np.asarray(hazard)[ok] / lam[ok])
        return out


class Denoiser:
    """p(x_1^d | x_t [, z^d = N]) for every dimension.

    ``flavor`` is ``"uniform"`` (conditioned on the dimension being corrupted
    under uniform noise) or ``"mask"`` (input carries mask tokens; the logit of
    the mask id is pinned to -1e4).
    """

    vocab: VocabSpec
    flavor = UNIFORM_FLAVOR
    stochastic = False

    def logits(self, xt, t) -> np.ndarray:
        p = self.probs(xt, t)
        with np.errstate(divide="ignore"):
            lg = np.maximum(np.log(p), -LOGIT_CAP)
        if self.flavor == MASK_FLAVOR:
            pad = np.full(lg.shape[:-1] + (1,), -LOGIT_CAP)
            lg = np.concatenate([lg, pad], axis=-1)
        return lg

    def probs(self, xt, t, temperature: float = 1.0) -> np.ndarray:
        lg = self.logits(xt, t)
        return softmax(lg / temperature)[..., : self.vocab.size_s]

    def select_rows(self, xt, t, dims, temperature: float = 1.0, **context) -> np.ndarray:
        """Rows at one chosen dimension per batch element, shape (B, S)."""
        xt = np.atleast_2d(xt)
        rows = self.probs(xt, t)[np.arange(len(xt)), dims]
        return temper(rows, temperature)


# ---------------------------------------------------------------------------
# oracle-backed models
# ---------------------------------------------------------------------------


class MaskIndicatorPlanner(Planner):
    """The fixed planner of mask diffusion: a position is noise iff it is masked."""

    is_free = True

    def __init__(self, vocab: VocabSpec):
        self.vocab = vocab

    def probs(self, xt, t=None):
        return (np.asarray(xt) == self.vocab.mask_id).astype(np.float64)

    def logits(self, xt, t=None):
        return np.where(np.asarray(xt) == self.vocab.mask_id, LOGIT_CAP, -LOGIT_CAP)


class _StateCache:
    """Memoizes a per-state function over token rows."""

    def __init__(self, vocab: VocabSpec, fn):
        self.base = vocab.size_s + 1
        self.dims = vocab.dims_d
        self.fn = fn
        self.table: dict[int, np.ndarray] = {}

    def __call__(self, xt):
        xt = np.asarray(xt, dtype=np.int64)
        single = xt.ndim == 1
        xt2 = np.atleast_2d(xt)
        codes = encode_states(xt2, self.base)
        uniq, inv = np.unique(codes, return_inverse=True)
        missing = [c for c in uniq if c not in self.table]
        if missing:
            vals = self.fn(decode_states(np.array(missing), self.base, self.dims))
            for c, v in zip(missing, vals):
                self.table[int(c)] = v
        stacked = np.stack([self.table[int(c)] for c in uniq])
        out = stacked[inv.reshape(-1)]
        return out[0] if single else out


class OraclePlanner(Planner):
    """Exact corruption posterior of an enumerable distribution (uniform noise).

    ``time`` selects which posterior is reported:

    * ``"clock"``: p(z^d = N | x_t) at the sampler's scheduled time;
    * ``"marginal"``: the posterior with t ~ U(0, 1) integrated out, which is
      what a time-free planner trained on uniformly drawn t converges to;
    * a float: the posterior at that fixed time.
    """

    def __init__(self, dist: EnumerableDist, time="clock", sched: LinearSchedule | None = None,
                 hazard_grid: float = 2e-3):
        self.vocab = dist.vocab
        self.dist = dist
        self.sched = sched or make_schedule()
        self.time = time
        self.oracle = BayesOracle(dist, NoiseKind.UNIFORM, self.sched)
        self._hazard_grid = hazard_grid
        self._hazard = None
        self._hazard_lock = threading.Lock()
        if time == "clock":
            self.time_source = "clock"
        elif time == "marginal":
            marginal = TimeMarginalOracle(dist, self.sched)
            self._marginal = _StateCache(self.vocab, marginal.planner_probs)
        else:
            self.time = float(time)
            if not 0.0 <= self.time <= 1.0:
                raise InvariantViolation("fixed planner time outside [0, 1]")

    def probs(self, xt, t=None):
        if self.time == "marginal":
            return self._marginal(xt)
        if self.time == "clock":
            if t is None:
                raise InvariantViolation("clock-mode oracle planner needs the sampler time")
            tt = np.minimum(np.asarray(t, dtype=np.float64), T_MAX)
        else:
            tt = self.time
        return self.oracle.posterior_corruption(xt, tt)

    def _build_hazard(self):
        # Cumulative hazard per state in u = -log(1 - alpha), where the
        # prefactor becomes unit: H_x(u) = int_0^u sum_d p(N | x, t(u')) du'.
        u_max = -np.log1p(-T_MAX)
        grid = np.arange(0.0, u_max + self._hazard_grid, self._hazard_grid)
        times = np.minimum(self.sched.alpha_inv(-np.expm1(-grid)), T_MAX)
        S, D = self.vocab.size_s, self.vocab.dims_d
        states = decode_states(np.arange(S**D), S, D)
        rates = np.empty((len(states), len(grid)))
        step = max(1, 400_000 // (len(states) * max(1, len(self.dist.probs))))
        for lo in range(0, len(grid), step):
            sl = slice(lo, min(len(grid), lo + step))
            n_t = sl.stop - sl.start
            xx = np.repeat(states, n_t, axis=0)
            tt = np.tile(times[sl], len(states))
            rates[:, sl] = self.oracle.posterior_corruption(xx, tt).sum(-1).reshape(len(states), n_t)
        cum = np.concatenate([np.zeros((len(states), 1)),
                              np.cumsum(0.5 * (rates[:, 1:] + rates[:, :-1]) * np.diff(grid), axis=1)],
                             axis=1)
        self._hazard = (grid, cum)

    def jump_time(self, xt, t, hazard, sched, probs=None):
        if self.time != "clock":
            return super().jump_time(xt, t, hazard, sched, probs)
        with self._hazard_lock:
            if self._hazard is None:
                self._build_hazard()
        grid, cum = self._hazard
        xt2 = np.atleast_2d(xt)
        t = np.broadcast_to(np.asarray(t, dtype=np.float64), (len(xt2),))
        hazard = np.broadcast_to(np.asarray(hazard, dtype=np.float64), (len(xt2),))
        codes = encode_states(xt2, self.vocab.size_s)
        u0 = -np.log1p(-np.minimum(self.sched.alpha(t), T_MAX))
        out = np.full(len(xt2), np.inf)
        for c in np.unique(codes):
            m = codes == c
            target = np.interp(u0[m], grid, cum[c]) + hazard[m]
            u1 = np.interp(target, cum[c], grid)
            res = self.sched.alpha_inv(-np.expm1(-u1))
            res[target > cum[c, -1]] = np.inf
            out[m] = res
        return out


class OracleDenoiser(Denoiser):
    """Exact denoiser of an enumerable distribution.

    Uniform flavor: p(x_1^d | x_t, z^d = N) at time t (``time="clock"``) or
    with t integrated out (``time="marginal"``). Mask flavor: the data
    conditional given the unmasked positions, which does not depend on t.
    """

    def __init__(self, dist: EnumerableDist, flavor: str = UNIFORM_FLAVOR, time="clock",
                 sched: LinearSchedule | None = None):
        if flavor not in (UNIFORM_FLAVOR, MASK_FLAVOR):
            raise InvariantViolation(f"unknown flavor {flavor!r}")
        self.vocab = dist.vocab
        self.dist = dist
        self.flavor = flavor
        self.time = time
        self.sched = sched or make_schedule()
        if flavor == MASK_FLAVOR:
            self.oracle = BayesOracle(dist, NoiseKind.MASK, self.sched)
            self._cache = _StateCache(self.vocab, lambda x: self.oracle.posterior_x1_marginal(x, 0.5))
        else:
            self.oracle = BayesOracle(dist, NoiseKind.UNIFORM, self.sched)
            if time == "marginal":
                self._cache = _StateCache(self.vocab, TimeMarginalOracle(dist, self.sched).denoiser_probs)

    def _exact(self, xt, t, strict):
        if self.flavor == MASK_FLAVOR or self.time == "marginal":
            return self._cache(xt)
        tt = np.minimum(np.asarray(t, dtype=np.float64), T_MAX)
        return self.oracle.conditional_denoiser(xt, tt, strict=strict)

    def probs(self, xt, t, temperature: float = 1.0):
        return temper(self._exact(xt, t, strict=False), temperature)

    def select_rows(self, xt, t, dims, temperature: float = 1.0, **context):
        xt = np.atleast_2d(xt)
        rows = self._exact(xt, t, strict=False)[np.arange(len(xt)), dims]
        if np.any(~np.isfinite(rows)):
            raise ZeroCorruptionProbability("selected dimension has zero corruption probability")
        return temper(rows, temperature)


class CorruptedDenoiser(Denoiser):
    """Mixes a denoiser with the uniform distribution at weight ``eps``."""

    def __init__(self, base: Denoiser, eps: float):
        if not 0.0 <= eps <= 1.0:
            raise InvariantViolation("corruption weight outside [0, 1]")
        self.base = base
        self.eps = float(eps)
        self.vocab = base.vocab
        self.flavor = base.flavor
        self.stochastic = base.stochastic

    def _mix(self, p):
        return (1.0 - self.eps) * p + self.eps / self.vocab.size_s

    def probs(self, xt, t, temperature: float = 1.0):
        return temper(self._mix(self.base.probs(xt, t)), temperature)

    def select_rows(self, xt, t, dims, temperature: float = 1.0, **context):
        return temper(self._mix(self.base.select_rows(xt, t, dims, **context)), temperature)


def oracle_planner(dist: EnumerableDist, kind=NoiseKind.UNIFORM, time="clock") -> Planner:
    if NoiseKind(kind) is NoiseKind.MASK:
        return MaskIndicatorPlanner(dist.vocab)
    return OraclePlanner(dist, time=time)


# ---------------------------------------------------------------------------
# single-model decomposition
# ---------------------------------------------------------------------------


class OraclePosterior:
    """Full posterior p_{1|t}(x_1^d | x_t) of an enumerable distribution."""

    def __init__(self, dist: EnumerableDist, sched: LinearSchedule | None = None):
        self.vocab = dist.vocab
        self.oracle = BayesOracle(dist, NoiseKind.UNIFORM, sched or make_schedule())

    def posterior(self, xt, t):
        return self.oracle.posterior_x1_marginal(xt, np.minimum(np.asarray(t, dtype=np.float64), T_MAX))


class _Decomposition:
    """Shared arithmetic for the planner/denoiser pair read off one posterior model."""

    def __init__(self, model, sched: LinearSchedule, time):
        self.model = model
        self.vocab = model.vocab
        self.sched = sched
        self.time = time

    def resolve_time(self, t):
        if self.time not in ("tilde", "clock"):
            return float(self.time)
        return 0.0 if t is None else t

    def parts(self, xt, t):
        xt2 = np.atleast_2d(np.asarray(xt, dtype=np.int64))
        t = np.broadcast_to(np.asarray(self.resolve_time(t), dtype=np.float64), (len(xt2),))
        t = np.minimum(t, T_MAX)
        post = self.model.posterior(xt2, t)
        a = self.sched.alpha(t)[:, None]
        keep = a / (a + (1 - a) / self.vocab.size_s)
        at_xt = np.take_along_axis(post, xt2[..., None], axis=-1)[..., 0]
        p_noise = np.clip(1.0 - at_xt * keep, 0.0, 1.0)
        return xt2, post, at_xt, keep, p_noise


class DecomposedPlanner(Planner):
    def __init__(self, parts: _Decomposition):
        self._parts = parts
        self.vocab = parts.vocab
        self.time_source = parts.time if parts.time in ("tilde", "clock") else "none"

    def probs(self, xt, t=None):
        out = self._parts.parts(xt, t)[-1]
        return out[0] if np.asarray(xt).ndim == 1 else out


class DecomposedDenoiser(Denoiser):
    min_corruption = 1e-12

    def __init__(self, parts: _Decomposition):
        self._parts = parts
        self.vocab = parts.vocab

    def _rows(self, xt, t):
        xt2, post, at_xt, keep, p_noise = self._parts.parts(xt, t)
        rows = post.copy()
        np.put_along_axis(rows, xt2[..., None], (at_xt * (1.0 - keep))[..., None], axis=-1)
        with np.errstate(divide="ignore", invalid="ignore"):
            rows = rows / p_noise[..., None]
        bad = p_noise <= self.min_corruption
        return xt2, rows, bad

    def probs(self, xt, t, temperature: float = 1.0):
        xt2, rows, bad = self._rows(xt, t)
        # Undefined rows (no corruption mass) are reported as a point mass on x_t.
        onehot = np.eye(self.vocab.size_s)[xt2]
        rows = np.where(bad[..., None], onehot, rows)
        rows = temper(rows, temperature)
        return rows[0] if np.asarray(xt).ndim == 1 else rows

    def select_rows(self, xt, t, dims, temperature: float = 1.0, **context):
        xt2, rows, bad = self._rows(xt, t)
        idx = np.arange(len(xt2))
        if np.any(bad[idx, dims]):
            raise ZeroCorruptionProbability(
                "corruption probability <= 1e-12 at a requested dimension")
        return temper(rows[idx, dims], temperature)


def decompose_uniform_denoiser(model, sched: LinearSchedule | None = None, time="tilde"):
    """Split a full uniform-noise posterior model into (planner, denoiser).

    ``time`` is the time plugged into alpha_t when forming the corruption
    probability: ``"tilde"`` uses the planner-estimated time handed over by the
    sampler, ``"clock"`` the scheduled time, or a fixed float.
    """
    parts = _Decomposition(model, sched or make_schedule(), time)
    return DecomposedPlanner(parts), DecomposedDenoiser(parts)


# ---------------------------------------------------------------------------
# mask-denoiser composition
# ---------------------------------------------------------------------------


class MaskComposedDenoiser(Denoiser):
    """Uniform-flavor denoiser built from a planner and a mask denoiser.

    For the chosen dimension d: draw z^{d'} ~ Bernoulli(planner) for d' != d,
    force z^d = N, mask the N positions and read the mask denoiser's row at d,
    evaluated at time alpha^{-1}(1 - m / D) for m masked positions. Each call
    consumes randomness from ``rng``.
    """

    stochastic = True

    def __init__(self, planner: Planner, mask_denoiser: Denoiser, rng: np.random.Generator | None = None,
                 sched: LinearSchedule | None = None):
        if mask_denoiser.flavor != MASK_FLAVOR:
            raise InvariantViolation("composition needs a mask-flavor denoiser")
        if planner.vocab != mask_denoiser.vocab:
            raise InvariantViolation("planner and mask denoiser vocabularies differ")
        self.planner = planner
        self.mask_denoiser = mask_denoiser
        self.rng = rng if rng is not None else np.random.default_rng(0)
        self.vocab = planner.vocab
        self.sched = sched or make_schedule()

    def select_rows(self, xt, t, dims, temperature: float = 1.0, planner_probs=None,
                    rng: np.random.Generator | None = None, **context):
        """``planner_probs`` reuses a planner output already computed by the
        caller; ``rng`` overrides the instance stream (one per worker)."""
        xt2 = np.atleast_2d(np.asarray(xt, dtype=np.int64))
        idx = np.arange(len(xt2))
        if planner_probs is None:
            planner_probs = np.atleast_2d(self.planner.probs(xt2, t))
        z = (rng or self.rng).random(xt2.shape) < planner_probs
        z[idx, dims] = True
        masked = np.where(z, self.vocab.mask_id, xt2)
        m = z.sum(axis=-1)
        t_mask = self.sched.alpha_inv(1.0 - m / self.vocab.dims_d)
        rows = self.mask_denoiser.probs(masked, t_mask)[idx, dims]
        return temper(rows, temperature)

    def probs(self, xt, t, temperature: float = 1.0):
        xt2 = np.atleast_2d(np.asarray(xt, dtype=np.int64))
        out = np.stack([self.select_rows(xt2, t, np.full(len(xt2), d), temperature)
                        for d in range(self.vocab.dims_d)], axis=1)
        return out[0] if np.asarray(xt).ndim == 1 else out


def compose_over_masks(mask_denoiser: Denoiser, xt, d: int, masks, weights,
                       sched: LinearSchedule | None = None) -> np.ndarray:
    """Exact mixture sum_z w(z) * mask_denoiser(mask(x_t, z))[d] over enumerated masks."""
    sched = sched or make_schedule()
    xt = np.asarray(xt, dtype=np.int64)
    masks = np.asarray(masks, dtype=bool)
    weights = np.asarray(weights, dtype=np.float64)
    keep = weights > 0
    masks, weights = masks[keep], weights[keep]
    if not np.all(masks[:, d]):
        raise InvariantViolation("every mask in the mixture must corrupt the queried dimension")
    masked = np.where(masks, mask_denoiser.vocab.mask_id, xt[None, :])
    t_mask = sched.alpha_inv(1.0 - masks.sum(-1) / len(xt))
    rows = mask_denoiser.probs(masked, t_mask)[:, d]
    return weights @ rows


def independent_mask_weights(planner_probs, d: int):
    """prod_{d' != d} Bernoulli(planner) over all masks with z^d forced to N."""
    p = np.asarray(planner_probs, dtype=np.float64)
    D = len(p)
    masks = np.array(np.meshgrid(*[[False, True]] * D, indexing="ij")).reshape(D, -1).T
    masks = masks[masks[:, d]]
    factors = np.where(masks, p[None, :], 1.0 - p[None, :])
    factors[:, d] = 1.0
    return masks, factors.prod(axis=1)


# ---------------------------------------------------------------------------
# tabular family
# ---------------------------------------------------------------------------


def _check_capacity(vocab: VocabSpec, per_state: int):
    n = (vocab.size_s + 1) ** vocab.dims_d * per_state
    if n > MAX_TABLE_ELEMS:
        raise CapacityExceeded(f"table would need {n} cells (limit {MAX_TABLE_ELEMS})")


class TabularPlanner(Planner):
    """Smoothed frequency of z^d = N for each full context x_t."""

    kind_name = "tabular"

    def __init__(self, vocab: VocabSpec, lam: float = 0.1):
        if lam < 0:
            raise InvariantViolation("smoothing must be non-negative")
        _check_capacity(vocab, 2 * vocab.dims_d)
        self.vocab = vocab
        self.lam = float(lam)
        n_states = (vocab.size_s + 1) ** vocab.dims_d
        self.counts = np.zeros((n_states, vocab.dims_d, 2), dtype=np.int64)  # [..., 0]=D, [..., 1]=N

    def update(self, xt, is_noise):
        xt = np.atleast_2d(xt)
        codes = encode_states(xt, self.vocab.size_s + 1)
        D = self.vocab.dims_d
        np.add.at(self.counts, (np.repeat(codes, D), np.tile(np.arange(D), len(codes)),
                                np.asarray(is_noise, dtype=np.int64).reshape(-1)), 1)
        return self

    def probs(self, xt, t=None):
        xt = np.asarray(xt)
        c = self.counts[encode_states(xt, self.vocab.size_s + 1)]
        num = c[..., 1] + self.lam
        den = c.sum(-1) + 2 * self.lam
        with np.errstate(invalid="ignore", divide="ignore"):
            return np.where(den > 0, num / np.where(den > 0, den, 1), 0.5)

    def params(self):
        return {"counts": self.counts}


class TabularDenoiser(Denoiser):
    """Smoothed frequency of x_1^d = j among corrupted records with context x_t."""

    kind_name = "tabular"

    def __init__(self, vocab: VocabSpec, flavor: str = UNIFORM_FLAVOR, lam: float = 0.1):
        if lam < 0:
            raise InvariantViolation("smoothing must be non-negative")
        _check_capacity(vocab, vocab.dims_d * vocab.size_s)
        self.vocab = vocab
        self.flavor = flavor
        self.lam = float(lam)
        n_states = (vocab.size_s + 1) ** vocab.dims_d
        self.counts = np.zeros((n_states, vocab.dims_d, vocab.size_s), dtype=np.int64)

    def update(self, xt, is_noise, x1):
        """Add corrupted records; ``xt`` is the model input (already masked for mask flavor)."""
        xt = np.atleast_2d(xt)
        is_noise = np.atleast_2d(is_noise)
        x1 = np.atleast_2d(x1)
        codes = encode_states(xt, self.vocab.size_s + 1)
        b, d = np.nonzero(is_noise)
        np.add.at(self.counts, (codes[b], d, x1[b, d]), 1)
        return self

    def probs(self, xt, t=None, temperature: float = 1.0):
        c = self.counts[encode_states(np.asarray(xt), self.vocab.size_s + 1)].astype(np.float64)
        num = c + self.lam
        den = num.sum(-1, keepdims=True)
        p = np.where(den > 0, num / np.where(den > 0, den, 1), 1.0 / self.vocab.size_s)
        return temper(p, temperature)

    def params(self):
        return {"counts": self.counts}


def tabular_fit(xt, is_noise, x1, role: str, vocab: VocabSpec, flavor: str = UNIFORM_FLAVOR,
                lam: float = 0.1):
    """Closed-form minimizer of the planner or denoiser cross-entropy over a table.

    ``xt`` is the model input: the corrupted sequence for the planner and the
    uniform-flavor denoiser, the masked view for a mask-flavor denoiser.
    """
    if role == "planner":
        return TabularPlanner(vocab, lam).update(xt, is_noise)
    if role == "denoiser":
        return TabularDenoiser(vocab, flavor, lam).update(xt, is_noise, x1)
    raise InvariantViolation(f"unknown role {role!r}")


# ---------------------------------------------------------------------------
# logistic family
# ---------------------------------------------------------------------------


def one_hot_features(xt, vocab: VocabSpec) -> np.ndarray:
    """Position-tagged one-hot of every token (mask id included), shape (B, D*(S+1))."""
    xt = np.atleast_2d(np.asarray(xt, dtype=np.int64))
    width = vocab.size_s + 1
    feats = np.zeros((len(xt), vocab.dims_d * width))
    cols = np.arange(vocab.dims_d) * width + xt
    np.put_along_axis(feats, cols, 1.0, axis=1)
    return feats


class LogisticPlanner(Planner):
    """logit_d = W[d] . phi(x_t) + b[d]."""

    kind_name = "logistic"

    def __init__(self, vocab: VocabSpec, rng: np.random.Generator | None = None, init_scale=0.0):
        self.vocab = vocab
        n_feat = vocab.dims_d * (vocab.size_s + 1)
        self.W = np.zeros((vocab.dims_d, n_feat))
        self.b = np.zeros(vocab.dims_d)
        if rng is not None and init_scale:
            self.W += init_scale * rng.standard_normal(self.W.shape)

    def logits(self, xt, t=None):
        single = np.asarray(xt).ndim == 1
        out = one_hot_features(xt, self.vocab) @ self.W.T + self.b
        return out[0] if single else out

    def params(self):
        return {"W": self.W, "b": self.b}


class LogisticDenoiser(Denoiser):
    """logits[d, j] = V[d, j] . phi(x_t) + c[d, j]; time is not an input."""

    kind_name = "logistic"

    def __init__(self, vocab: VocabSpec, flavor: str = UNIFORM_FLAVOR,
                 rng: np.random.Generator | None = None, init_scale=0.0):
        self.vocab = vocab
        self.flavor = flavor
        n_feat = vocab.dims_d * (vocab.size_s + 1)
        self.V = np.zeros((vocab.dims_d, vocab.size_s, n_feat))
        self.c = np.zeros((vocab.dims_d, vocab.size_s))
        if rng is not None and init_scale:
            self.V += init_scale * rng.standard_normal(self.V.shape)

    def data_logits(self, xt):
        """Logits over the S data tokens, shape (B, D, S)."""
        return np.einsum("bf,dsf->bds", one_hot_features(xt, self.vocab), self.V) + self.c

    def logits(self, xt, t=None):
        single = np.asarray(xt).ndim == 1
        lg = self.data_logits(xt)
        if self.flavor == MASK_FLAVOR:
            lg = np.concatenate([lg, np.full(lg.shape[:-1] + (1,), -LOGIT_CAP)], axis=-1)
        return lg[0] if single else lg

    def params(self):
        return {"V": self.V, "c": self.c}


# ---------------------------------------------------------------------------
# persistence
# ---------------------------------------------------------------------------

_CLASSES = {
    ("tabular", "planner"): TabularPlanner,
    ("tabular", "denoiser"): TabularDenoiser,
    ("logistic", "planner"): LogisticPlanner,
    ("logistic", "denoiser"): LogisticDenoiser,
}


def model_to_json(model) -> dict:
    role = "planner" if isinstance(model, Planner) else "denoiser"
    kind = getattr(model, "kind_name", None)
    if (kind, role) not in _CLASSES:
        raise InvariantViolation(f"cannot serialize {type(model).__name__}")
    params = {}
    for name, arr in model.params().items():
        arr = np.asarray(arr)
        params[name] = {"shape": list(arr.shape), "dtype": str(arr.dtype),
                        "data": [float(v) if arr.dtype.kind == "f" else int(v) for v in arr.reshape(-1)]}
    return {
        "format": FORMAT_NAME,
        "version": FORMAT_VERSION,
        "model": kind,
        "role": role,
        "flavor": getattr(model, "flavor", None) if role == "denoiser" else None,
        "size_s": model.vocab.size_s,
        "dims_d": model.vocab.dims_d,
        "lam": getattr(model, "lam", None),
        "params": params,
    }


def model_from_json(obj: dict):
    if obj.get("format") != FORMAT_NAME or obj.get("version") != FORMAT_VERSION:
        raise InvariantViolation("not a ddpd model container (or unsupported version)")
    vocab = VocabSpec(int(obj["size_s"]), int(obj["dims_d"]))
    key = (obj["model"], obj["role"])
    if key not in _CLASSES:
        raise InvariantViolation(f"unknown model type {key}")
    cls = _CLASSES[key]
    kwargs = {}
    if obj["role"] == "denoiser":
        kwargs["flavor"] = obj["flavor"]
    if obj["model"] == "tabular":
        kwargs["lam"] = obj["lam"]
    model = cls(vocab, **kwargs)
    for name, entry in obj["params"].items():
        arr = np.asarray(entry["data"], dtype=entry["dtype"]).reshape(entry["shape"])
        setattr(model, name, arr)
    return model


def save_model(model, path) -> None:
    Path(path).write_text(json.dumps(model_to_json(model)) + "\n")


def load_model(path):
    return model_from_json(json.loads(Path(path).read_text()))


def check_denoiser_rows(rows: np.ndarray) -> np.ndarray:
    """Raise on rows that are not usable categorical distributions."""
    s = rows.sum(axis=-1)
    if np.any(~np.isfinite(rows)) or np.any(s <= 0):
        raise DegeneratePmf("denoiser row is degenerate after temperature")
    return rows / s[..., None]
