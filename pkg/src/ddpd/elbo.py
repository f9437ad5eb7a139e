"""Monte-Carlo ELBO estimates split into prior, rate-matching and transitioning terms.

The time integral is estimated with t stratified over equal-width strata and
capped at ``t_cap`` (the removal-rate prefactor diverges at t = 1). Values are
log-likelihood lower bounds in nats per sequence; per-dimension and bits
conversions are derived properties.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass

import numpy as np

from .core import InvariantViolation, LinearSchedule, NoiseKind, make_schedule
from .forward import sample_corrupted
from .models import MASK_FLAVOR, UNIFORM_FLAVOR, Denoiser, Planner

LOG_FLOOR = math.log(1e-30)
N_STRATA = 64
T_CAP = 1.0 - 1e-4
_CHUNK = 8192


@dataclass
class ElboReport:
    kind: str
    dims_d: int
    n_mc: int
    prior: float
    rate_matching: float
    rate_matching_se: float
    transitioning: float
    transitioning_se: float
    combined: float
    combined_se: float
    t_cap: float
    n_capped: int
    zero_prob_failures: int

    @property
    def nats_per_dim(self) -> float:
        return self.combined / self.dims_d

    @property
    def se_per_dim(self) -> float:
        return self.combined_se / self.dims_d

    @property
    def bits_per_dim(self) -> float:
        return self.nats_per_dim / math.log(2)

    def to_json(self) -> dict:
        out = asdict(self)
        out.update(nats_per_dim=self.nats_per_dim, bits_per_dim=self.bits_per_dim,
                   se_per_dim=self.se_per_dim)
        return out

    def dumps(self) -> str:
        return json.dumps(self.to_json(), indent=1, sort_keys=True)


class _ArraySource:
    def __init__(self, data, vocab):
        self.data = np.atleast_2d(np.asarray(data, dtype=np.int64))
        self.vocab = vocab

    def sample(self, rng, n):
        return self.data[rng.integers(0, len(self.data), size=n)]


def _as_source(data, vocab):
    return data if hasattr(data, "sample") else _ArraySource(data, vocab)


def stratified_times(n: int, rng: np.random.Generator, n_strata: int = N_STRATA):
    """Stratum index and t for each of ``n`` draws, strata assigned round-robin."""
    h = np.arange(n) % n_strata
    return h, (h + rng.random(n)) / n_strata


def stratified_mean(values, strata, n_strata: int = N_STRATA):
    """Mean and standard error of a stratified estimator with equal-width strata."""
    values = np.asarray(values, dtype=np.float64)
    mean = 0.0
    var = 0.0
    for h in range(n_strata):
        v = values[strata == h]
        if len(v) == 0:
            raise InvariantViolation("every stratum needs at least one draw")
        mean += math.fsum(v) / len(v)
        if len(v) > 1:
            var += v.var(ddof=1) / len(v)
    return mean / n_strata, math.sqrt(var) / n_strata


def _safe_log(p):
    p = np.asarray(p, dtype=np.float64)
    bad = ~(p > 0)
    with np.errstate(divide="ignore", invalid="ignore"):
        out = np.where(bad, LOG_FLOOR, np.log(np.where(bad, 1.0, p)))
    return np.maximum(out, LOG_FLOOR), bad


def _draws(source, n_mc, kind, rng, sched, t_cap):
    if n_mc < 2 * N_STRATA:
        raise InvariantViolation(f"n_mc must be at least {2 * N_STRATA}")
    strata, t = stratified_times(n_mc, rng)
    capped = t > t_cap
    tc = np.minimum(t, t_cap)
    x1 = source.sample(rng, n_mc)
    xt, z = sample_corrupted(x1, tc, kind, source.vocab, rng, sched)
    return strata, tc, int(capped.sum()), x1, xt, z


def elbo_mask(denoiser: Denoiser, data, n_mc: int, rng: np.random.Generator,
              sched: LinearSchedule | None = None, t_cap: float = T_CAP) -> ElboReport:
    """Mask-noise ELBO: prior and rate matching vanish, leaving
    E_t E_{x_1, x_t}[prefactor(t) * sum_{masked d} log p(x_1^d | x_t)]."""
    if denoiser.flavor != MASK_FLAVOR:
        raise InvariantViolation("mask ELBO needs a mask-flavor denoiser")
    sched = sched or make_schedule()
    source = _as_source(data, denoiser.vocab)
    strata, t, n_capped, x1, xt, z = _draws(source, n_mc, NoiseKind.MASK, rng, sched, t_cap)
    trans = np.zeros(n_mc)
    failures = 0
    pref = sched.prefactor(t)
    for lo in range(0, n_mc, _CHUNK):
        sl = slice(lo, lo + _CHUNK)
        zs = z[sl]
        if not zs.any():
            continue
        p = denoiser.probs(xt[sl], t[sl])
        lp, bad = _safe_log(np.take_along_axis(p, x1[sl][..., None], axis=-1)[..., 0])
        failures += int((bad & zs).sum())
        trans[sl] = pref[sl] * np.where(zs, lp, 0.0).sum(-1)
    tr, tr_se = stratified_mean(trans, strata)
    return ElboReport(NoiseKind.MASK.value, denoiser.vocab.dims_d, n_mc, 0.0, 0.0, 0.0,
                      tr, tr_se, tr, tr_se, t_cap, n_capped, failures)


def elbo_uniform_ddpd(planner: Planner, denoiser: Denoiser, data, n_mc: int,
                      rng: np.random.Generator, sched: LinearSchedule | None = None,
                      t_cap: float = T_CAP) -> ElboReport:
    """Uniform-noise ELBO of the planner/denoiser pair.

    Per draw (x_1, t, x_t, z_t):
    rate matching = prefactor * (sum_d [z^d = N] - sum_d p(N | x_t)),
    transitioning = prefactor * sum_{d: z^d = N} log(p(N | x_t)_d * den_d(x_1^d)).
    Zero probabilities at corrupted entries are floored at log(1e-30) and counted.
    """
    if denoiser.flavor != UNIFORM_FLAVOR:
        raise InvariantViolation("uniform ELBO needs a uniform-flavor denoiser")
    if planner.vocab != denoiser.vocab:
        raise InvariantViolation("planner and denoiser vocabularies differ")
    sched = sched or make_schedule()
    source = _as_source(data, denoiser.vocab)
    strata, t, n_capped, x1, xt, z = _draws(source, n_mc, NoiseKind.UNIFORM, rng, sched, t_cap)
    pref = sched.prefactor(t)
    rm = np.zeros(n_mc)
    trans = np.zeros(n_mc)
    failures = 0
    for lo in range(0, n_mc, _CHUNK):
        sl = slice(lo, lo + _CHUNK)
        zs = z[sl]
        pn = np.atleast_2d(planner.probs(xt[sl], t[sl]))
        rm[sl] = pref[sl] * (zs.sum(-1) - pn.sum(-1))
        den = np.asarray(denoiser.probs(xt[sl], t[sl]))
        with np.errstate(invalid="ignore"):
            pd = np.take_along_axis(den, x1[sl][..., None], axis=-1)[..., 0]
        lp, bad = _safe_log(pn * pd)
        failures += int((bad & zs).sum())
        trans[sl] = pref[sl] * np.where(zs, lp, 0.0).sum(-1)
    rm_m, rm_se = stratified_mean(rm, strata)
    tr_m, tr_se = stratified_mean(trans, strata)
    c_m, c_se = stratified_mean(rm + trans, strata)
    return ElboReport(NoiseKind.UNIFORM.value, denoiser.vocab.dims_d, n_mc, 0.0, rm_m, rm_se,
                      tr_m, tr_se, c_m, c_se, t_cap, n_capped, failures)
