"""Fidelity metrics, accuracy harnesses, and the error-correction benchmark."""

from __future__ import annotations

import csv
import itertools
import json
import math

import numpy as np

from .core import InvariantViolation, LinearSchedule, NoiseKind, encode_states, logit, make_rng, make_schedule
from .forward import sample_corrupted
from .models import (
    MASK_FLAVOR,
    CorruptedDenoiser,
    MaskComposedDenoiser,
    MaskIndicatorPlanner,
    OracleDenoiser,
    OraclePlanner,
)
from .oracle import EnumerableDist
from .samplers import SamplerConfig, confidence_baseline, ddpd_sample, tau_leaping

NEAR_DETERMINISTIC_LOGIT = 3.0


def empirical_pmf(samples, vocab) -> np.ndarray:
    samples = vocab.check_clean(np.atleast_2d(samples))
    if len(samples) == 0:
        raise InvariantViolation("empty sample set")
    codes = encode_states(samples, vocab.size_s)
    return np.bincount(codes, minlength=vocab.size_s ** vocab.dims_d) / len(samples)


def tv_to_truth(samples, dist: EnumerableDist) -> float:
    """Total variation between the empirical sequence distribution and p_data."""
    samples = np.asarray(samples)
    if samples.size == 0:
        raise InvariantViolation("empty sample set")
    return float(0.5 * np.abs(empirical_pmf(samples, dist.vocab) - dist.dense()).sum())


def tv_standard_error(samples, dist: EnumerableDist) -> float:
    """Delta-method standard error of :func:`tv_to_truth` (signs held fixed)."""
    q = empirical_pmf(samples, dist.vocab)
    s = np.sign(q - dist.dense())
    n = len(np.atleast_2d(samples))
    var = (np.sum(s**2 * q) - np.sum(s * q) ** 2) / (4 * n)
    return float(math.sqrt(max(var, 0.0)))


def _kind_for(denoiser):
    return NoiseKind.MASK if denoiser.flavor == MASK_FLAVOR else NoiseKind.UNIFORM


def denoise_accuracy(denoiser, dist: EnumerableDist, t: float, n: int, rng: np.random.Generator,
                     sched: LinearSchedule | None = None) -> float:
    """Fraction of corrupted entries whose argmax prediction equals x_1^d (Monte Carlo)."""
    x1 = dist.sample(rng, n)
    xt, z = sample_corrupted(x1, np.full(n, t), _kind_for(denoiser), dist.vocab, rng, sched)
    if not z.any():
        raise InvariantViolation("no corrupted entries at this t")
    pred = np.argmax(denoiser.probs(xt, np.full(n, t)), axis=-1)
    return float((pred == x1)[z].mean())


def _enumerate_corruptions(dist: EnumerableDist, t: float, kind, sched):
    """Yield (weight, x1, z, xt) over the full joint of data, noise mask and noise tokens."""
    vocab = dist.vocab
    a = float((sched or make_schedule()).alpha(t))
    S, D = vocab.size_s, vocab.dims_d
    for x1, p1 in zip(dist.support, dist.probs):
        for zi in itertools.product([False, True], repeat=D):
            z = np.array(zi)
            pz = float(np.prod(np.where(z, 1 - a, a)))
            if p1 * pz == 0:
                continue
            if kind is NoiseKind.MASK:
                yield p1 * pz, x1, z, np.where(z, vocab.mask_id, x1)
                continue
            noisy = np.nonzero(z)[0]
            w = p1 * pz / S ** len(noisy)
            for tok in itertools.product(range(S), repeat=len(noisy)):
                xt = x1.copy()
                xt[noisy] = tok
                yield w, x1, z, xt


def denoise_accuracy_exact(denoiser, dist: EnumerableDist, t: float,
                           sched: LinearSchedule | None = None) -> float:
    """:func:`denoise_accuracy` in expectation, by enumeration (ratio of expectations)."""
    num = den = 0.0
    rows = list(_enumerate_corruptions(dist, t, _kind_for(denoiser), sched))
    xts = np.array([r[3] for r in rows])
    pred = np.argmax(denoiser.probs(xts, np.full(len(xts), t)), axis=-1)
    for (w, x1, z, _), pr in zip(rows, pred):
        num += w * float(np.sum(z & (pr == x1)))
        den += w * float(z.sum())
    if den == 0:
        raise InvariantViolation("no corrupted entries at this t")
    return num / den


def mask_prediction_accuracy(planner, dist: EnumerableDist, t: float, n: int,
                             rng: np.random.Generator, sched: LinearSchedule | None = None):
    """(accuracy of independently sampled z against the true z, fraction with |logit| > 3)."""
    kind = NoiseKind.MASK if isinstance(planner, MaskIndicatorPlanner) else NoiseKind.UNIFORM
    x1 = dist.sample(rng, n)
    xt, z = sample_corrupted(x1, np.full(n, t), kind, dist.vocab, rng, sched)
    p = np.atleast_2d(planner.probs(xt, np.full(n, t)))
    z_hat = rng.random(p.shape) < p
    near = np.abs(logit(p)) > NEAR_DETERMINISTIC_LOGIT
    return float((z_hat == z).mean()), float(near.mean())


def mask_prediction_accuracy_exact(planner, dist: EnumerableDist, t: float,
                                   sched: LinearSchedule | None = None):
    """Expected values of :func:`mask_prediction_accuracy`, by enumeration."""
    kind = NoiseKind.MASK if isinstance(planner, MaskIndicatorPlanner) else NoiseKind.UNIFORM
    rows = list(_enumerate_corruptions(dist, t, kind, sched))
    xts = np.array([r[3] for r in rows])
    p = np.atleast_2d(planner.probs(xts, np.full(len(xts), t)))
    near = (np.abs(logit(p)) > NEAR_DETERMINISTIC_LOGIT).mean(-1)
    acc = near_frac = 0.0
    for (w, _, z, _), pi, ni in zip(rows, p, near):
        acc += w * float(np.mean(np.where(z, pi, 1.0 - pi)))
        near_frac += w * float(ni)
    return acc, near_frac


# ---------------------------------------------------------------------------
# error-correction benchmark
# ---------------------------------------------------------------------------

BENCH_ARMS = ("mask_tau", "ddpd", "confidence")
CSV_FIELDS = ["arm", "seed", "budget", "eps_d", "steps", "tv", "se", "nfe", "nfe_mean"]


def run_arm(arm: str, dist: EnumerableDist, eps_d: float, budget: int, n: int, seed: int,
            continue_to_budget: bool = False, planner: OraclePlanner | None = None):
    """One benchmark arm; returns (samples, per-chain NFE, steps).

    The planned-denoising arm gets ``budget // 2`` steps (planner + denoiser per
    step). By default a chain ends when its clock reaches t = 1, so the budget
    is a cap; ``continue_to_budget`` spends all of it. Pass ``planner`` to reuse
    an oracle planner (and its hazard tables) across calls.
    """
    if arm not in BENCH_ARMS:
        raise InvariantViolation(f"unknown arm {arm!r}; expected one of {BENCH_ARMS}")
    vocab = dist.vocab
    rng = make_rng(seed, stream=1 + BENCH_ARMS.index(arm))
    mask_den = CorruptedDenoiser(OracleDenoiser(dist, flavor=MASK_FLAVOR), eps_d)
    if arm == "mask_tau":
        cfg = SamplerConfig(kind=NoiseKind.MASK)
        run = tau_leaping(None, mask_den, cfg, rng, n_steps=budget, n=n)
        steps = budget
    elif arm == "ddpd":
        steps = budget // 2
        planner = planner or OraclePlanner(dist)
        den = MaskComposedDenoiser(planner, mask_den)
        cfg = SamplerConfig(max_steps=steps, continue_to_budget=continue_to_budget)
        run = ddpd_sample(planner, den, cfg, rng, n=n)
    else:
        run = confidence_baseline(mask_den, SamplerConfig(kind=NoiseKind.MASK), rng, n=n,
                                  sample_tokens=True)
        steps = vocab.dims_d
    return run.samples, run.nfe, steps


def error_correction_benchmark(dist: EnumerableDist, eps_list, budgets, seeds, n: int,
                               arms=("mask_tau", "ddpd"), continue_to_budget: bool = False) -> list[dict]:
    """TV per (arm, seed, budget, eps_d).

    Each planner call and each denoiser call costs 1 NFE. ``nfe`` is the
    largest per-chain count (never above the budget), ``nfe_mean`` the average.
    """
    out = []
    planner = OraclePlanner(dist) if "ddpd" in arms else None
    for eps_d in eps_list:
        for budget in budgets:
            for seed in seeds:
                for arm in arms:
                    samples, nfe, steps = run_arm(arm, dist, eps_d, int(budget), n, int(seed),
                                                  continue_to_budget, planner)
                    out.append({
                        "arm": arm, "seed": int(seed), "budget": int(budget), "eps_d": float(eps_d),
                        "steps": int(steps), "tv": tv_to_truth(samples, dist),
                        "se": tv_standard_error(samples, dist), "nfe": int(nfe.max()),
                        "nfe_mean": float(nfe.mean()),
                    })
    return out


def write_rows_csv(rows: list[dict], path, fields=None) -> None:
    fields = fields or list(rows[0])
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=fields, lineterminator="\n")
        w.writeheader()
        for r in rows:
            w.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in r.items()})


def write_rows_json(rows: list[dict], path) -> None:
    with open(path, "w") as fh:
        json.dump(rows, fh, indent=1, sort_keys=True)
        fh.write("\n")
