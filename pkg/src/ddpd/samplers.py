"""Generation procedures: tau-leaping, self-loop Gillespie, and adaptive planned denoising.

All samplers run a batch of independent chains in lockstep. Each step draws
its randomness in a fixed order from one generator, so a (seed, n_chains)
pair always reproduces the same run.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field

import numpy as np

from .core import (
    T_MAX,
    DegeneratePmf,
    InvariantViolation,
    LinearSchedule,
    NoiseKind,
    VocabSpec,
    make_schedule,
    sample_categorical,
    softmax,
)
from .models import Denoiser, MaskIndicatorPlanner, Planner, check_denoiser_rows

SELECTIONS = ("proportional", "softmax")


@dataclass
class SamplerConfig:
    max_steps: int = 24
    stop_eps: float = 1e-3
    selection: str = "proportional"
    time_correction: bool = True
    continue_to_budget: bool = False
    logit_temperature: float = 1.0
    kind: NoiseKind = NoiseKind.UNIFORM

    def __post_init__(self):
        self.kind = NoiseKind(self.kind)
        if int(self.max_steps) < 1:
            raise InvariantViolation("max_steps must be >= 1")
        if not 0.0 < self.stop_eps < 1.0:
            raise InvariantViolation("stop_eps must lie in (0, 1)")
        if self.selection not in SELECTIONS:
            raise InvariantViolation(f"selection must be one of {SELECTIONS}")
        if not 0.0 < self.logit_temperature <= 10.0:
            raise InvariantViolation("logit_temperature must lie in (0, 10]")


@dataclass
class TrajectoryEvent:
    chain: int
    step: int
    scheduled_time: float
    time: float  # time handed to the denoiser
    dim: int
    old: int
    new: int
    planner_mass: float  # sum_d p(N) at selection

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True)


@dataclass
class SampleRun:
    """Final sequences plus per-chain accounting and (optionally) the event log."""

    samples: np.ndarray
    nfe: np.ndarray  # model evaluations per chain
    steps: np.ndarray  # executed steps per chain
    flags: dict = field(default_factory=dict)
    _events: list = field(default_factory=list, repr=False)

    def events(self):
        """TrajectoryEvents ordered by (chain, step)."""
        if not self._events:
            return []
        cols = {k: np.concatenate([e[k] for e in self._events]) for k in self._events[0]}
        order = np.lexsort((cols["step"], cols["chain"]))
        out = []
        for i in order:
            out.append(TrajectoryEvent(
                int(cols["chain"][i]), int(cols["step"][i]), float(cols["scheduled_time"][i]),
                float(cols["time"][i]), int(cols["dim"][i]), int(cols["old"][i]),
                int(cols["new"][i]), float(cols["planner_mass"][i])))
        return out

    def write_events(self, path) -> None:
        with open(path, "w") as fh:
            for ev in self.events():
                fh.write(ev.to_json() + "\n")


def read_events(path) -> list[TrajectoryEvent]:
    with open(path) as fh:
        return [TrajectoryEvent(**json.loads(line)) for line in fh if line.strip()]


def _log_step(run_events, record, alive, step, t_sched, t_used, dims, old, new, mass):
    if not record:
        return
    idx = np.nonzero(alive)[0]
    run_events.append({
        "chain": idx, "step": np.full(len(idx), step), "scheduled_time": np.minimum(t_sched[idx], 1.0),
        "time": np.broadcast_to(t_used, alive.shape)[idx], "dim": dims[idx], "old": old[idx],
        "new": new[idx], "planner_mass": mass[idx],
    })


def initial_state(vocab: VocabSpec, kind, n: int, rng: np.random.Generator) -> np.ndarray:
    """x_0: iid uniform tokens (uniform noise) or all masks (mask noise)."""
    if NoiseKind(kind) is NoiseKind.MASK:
        return np.full((n, vocab.dims_d), vocab.mask_id, dtype=np.int64)
    return rng.integers(0, vocab.size_s, size=(n, vocab.dims_d))


def planner_time_hint(planner: Planner, t_clock, t_tilde):
    if planner.time_source == "clock":
        return np.minimum(t_clock, T_MAX)
    if planner.time_source == "tilde":
        return t_tilde
    return None


def corrected_time(probs, vocab: VocabSpec, sched: LinearSchedule) -> np.ndarray:
    """t~ = alpha^{-1}(1 - sum_d p(N) / D), clamped to [0, 1 - 1e-9]."""
    a = 1.0 - np.asarray(probs).sum(axis=-1) / vocab.dims_d
    return np.clip(sched.alpha_inv(np.clip(a, 0.0, 1.0)), 0.0, T_MAX)


def _select_dims(probs, logits_fn, selection, rng):
    """Sample one dimension per chain; returns (dims, fell_back)."""
    mass = probs.sum(axis=-1)
    dead = mass <= 0
    if selection == "softmax":
        weights = softmax(logits_fn())
    else:
        weights = np.where(dead[:, None], 1.0, probs)
    weights = np.where(dead[:, None], 1.0, weights)
    return sample_categorical(rng, weights), dead


def _engine(planner: Planner, denoiser: Denoiser, config: SamplerConfig, rng, n: int,
            x0=None, sched=None, eps_stop=True, allow_time_correction=True,
            record_events=False, t_end: float = 1.0) -> SampleRun:
    sched = sched or make_schedule()
    vocab = planner.vocab
    if denoiser.vocab != vocab:
        raise InvariantViolation("planner and denoiser vocabularies differ")
    x = initial_state(vocab, config.kind, n, rng) if x0 is None else np.array(x0, dtype=np.int64)
    n = len(x)
    t = np.zeros(n)
    t_tilde = np.zeros(n)
    alive = np.ones(n, dtype=bool)
    nfe = np.zeros(n, dtype=np.int64)
    steps = np.zeros(n, dtype=np.int64)
    flags = {"uniform_fallback": 0, "absorbed": 0, "early_stop": 0, "reached_end": 0}
    events: list = []
    planner_cost = 0 if planner.is_free else 1
    for step in range(config.max_steps):
        if not alive.any():
            break
        ai = np.nonzero(alive)[0]
        xa = x[ai]
        hint = planner_time_hint(planner, t[ai], t_tilde[ai])
        # Holding time: exact Gillespie draw from the integrated self-loop rate.
        hazard = rng.exponential(size=len(ai))
        if planner.time_source == "clock":
            t_new = planner.jump_time(xa, t[ai], hazard, sched)
            probs = None
        else:
            probs = np.atleast_2d(planner.probs(xa, hint))
            t_new = planner.jump_time(xa, t[ai], hazard, sched, probs=probs)
        no_jump = ~np.isfinite(t_new) | (t_new >= t_end)
        if config.continue_to_budget:
            t_new = np.where(no_jump, np.maximum(t[ai], min(t_end, T_MAX)), t_new)
            stop = np.zeros(len(ai), dtype=bool)
        else:
            stop = no_jump
        if probs is None:
            probs = np.atleast_2d(planner.probs(xa, np.minimum(t_new, T_MAX)))
        nfe[ai] += planner_cost
        absorbed = probs.sum(-1) <= 0
        flags["absorbed"] += int(np.sum(absorbed & stop))
        flags["reached_end"] += int(np.sum(stop & ~absorbed))
        if eps_stop and not config.continue_to_budget:
            small = np.all(probs < config.stop_eps, axis=-1) & ~stop
            flags["early_stop"] += int(small.sum())
            stop |= small
        alive[ai[stop]] = False
        keep = ~stop
        if not keep.any():
            break
        ai, xa, probs, t_new = ai[keep], xa[keep], probs[keep], t_new[keep]
        if planner.time_source == "clock":
            hint_k = np.minimum(t_new, T_MAX)
        else:
            hint_k = None if hint is None else np.asarray(hint)[keep]
        dims, fell_back = _select_dims(
            probs, lambda: np.atleast_2d(planner.logits(xa, hint_k)), config.selection, rng)
        flags["uniform_fallback"] += int(fell_back.sum())
        t_tilde_new = corrected_time(probs, vocab, sched)
        t_den = t_tilde_new if (config.time_correction and allow_time_correction) else np.minimum(t_new, T_MAX)
        rows = denoiser.select_rows(xa, t_den, dims, config.logit_temperature,
                                    planner_probs=probs, rng=rng)
        rows = check_denoiser_rows(rows)
        nfe[ai] += 1
        new = sample_categorical(rng, rows)
        old = xa[np.arange(len(ai)), dims]
        full_alive = np.zeros(n, dtype=bool)
        full_alive[ai] = True
        _log_step(events, record_events, full_alive, step,
                  _scatter(n, ai, t_new), _scatter(n, ai, t_den), _scatter(n, ai, dims),
                  _scatter(n, ai, old), _scatter(n, ai, new), _scatter(n, ai, probs.sum(-1)))
        x[ai, dims] = new
        t[ai] = t_new
        t_tilde[ai] = t_tilde_new
        steps[ai] += 1
    return SampleRun(x, nfe, steps, flags, events)


def _scatter(n, idx, vals):
    out = np.zeros(n, dtype=np.asarray(vals).dtype)
    out[idx] = vals
    return out


def ddpd_sample(planner: Planner, denoiser: Denoiser, config: SamplerConfig,
                rng: np.random.Generator, n: int = 1, x0=None, sched=None,
                record_events: bool = False) -> SampleRun:
    """Adaptive planned denoising.

    Each step: draw the Gillespie holding time on the self-loop chain, evaluate
    the planner, stop the chain early if every p(N) < eps (unless running to
    budget), pick a dimension (proportional to p(N) or by softmax over planner
    logits), then resample that dimension from the denoiser evaluated at t~ (or
    at the scheduled time without time correction). A chain also finishes when
    its next jump would land past t = 1, unless ``continue_to_budget``.
    """
    return _engine(planner, denoiser, config, rng, n, x0=x0, sched=sched,
                   record_events=record_events)


def gillespie_selfloop(planner: Planner, denoiser: Denoiser, config: SamplerConfig,
                       rng: np.random.Generator, n: int = 1, x0=None, sched=None,
                       t_end: float = 1.0, record_events: bool = False) -> SampleRun:
    """Exact simulation of the self-loop chain: total rate prefactor * sum_d p(N).

    Runs until the clock passes ``t_end`` or the state is absorbing
    (all planner probabilities zero), capped at ``config.max_steps`` jumps.
    """
    cfg = SamplerConfig(max_steps=config.max_steps, stop_eps=config.stop_eps,
                        selection="proportional", time_correction=False,
                        continue_to_budget=False, logit_temperature=config.logit_temperature,
                        kind=config.kind)
    return _engine(planner, denoiser, cfg, rng, n, x0=x0, sched=sched, eps_stop=False,
                   allow_time_correction=False, record_events=record_events, t_end=t_end)


def ancestral_gillespie(planner: Planner, denoiser: Denoiser, rng: np.random.Generator,
                        n: int = 1, x0=None, kind=NoiseKind.UNIFORM, sched=None,
                        t_end: float = 1.0, max_jumps: int = 10_000) -> SampleRun:
    """Gillespie on the plain chain (no self-loops), for time-free rates.

    Dimension d jumps at rate prefactor * p(N)_d * (1 - den_d(x^d)), then the
    new value is drawn over j != x^d in proportion to the denoiser row.
    """
    if planner.time_source != "none":
        raise InvariantViolation("ancestral Gillespie needs a time-free planner")
    sched = sched or make_schedule()
    vocab = planner.vocab
    x = initial_state(vocab, kind, n, rng) if x0 is None else np.array(x0, dtype=np.int64)
    n = len(x)
    t = np.zeros(n)
    alive = np.ones(n, dtype=bool)
    nfe = np.zeros(n, dtype=np.int64)
    steps = np.zeros(n, dtype=np.int64)
    flags = {"absorbed": 0, "reached_end": 0}
    for _ in range(max_jumps):
        if not alive.any():
            break
        ai = np.nonzero(alive)[0]
        xa = x[ai]
        p = np.atleast_2d(planner.probs(xa))
        den = np.atleast_2d(denoiser.probs(xa, t[ai]))
        if den.ndim == 2:
            den = den[None]
        nfe[ai] += (0 if planner.is_free else 1) + 1
        stay = np.take_along_axis(den, xa[..., None], axis=-1)[..., 0]
        off = p * np.clip(1.0 - stay, 0.0, None)
        lam = off.sum(-1)
        hazard = rng.exponential(size=len(ai))
        t_new = np.full(len(ai), np.inf)
        pos = lam > 0
        t_new[pos] = sched.advance_by_hazard(t[ai][pos], hazard[pos] / lam[pos])
        stop = ~np.isfinite(t_new) | (t_new >= t_end)
        flags["absorbed"] += int(np.sum(~pos))
        flags["reached_end"] += int(np.sum(stop & pos))
        alive[ai[stop]] = False
        keep = ~stop
        if not keep.any():
            break
        ai, xa, off, den, t_new = ai[keep], xa[keep], off[keep], den[keep], t_new[keep]
        dims = sample_categorical(rng, off)
        r = np.arange(len(ai))
        rows = den[r, dims].copy()
        rows[r, xa[r, dims]] = 0.0
        new = sample_categorical(rng, rows)
        x[ai, dims] = new
        t[ai] = t_new
        steps[ai] += 1
    return SampleRun(x, nfe, steps, flags)


def tau_leaping(planner: Planner | None, denoiser: Denoiser, config: SamplerConfig,
                rng: np.random.Generator, n_steps: int, n: int = 1, x0=None, sched=None,
                record_events: bool = False) -> SampleRun:
    """Fixed-step simulation: every dimension may jump in each step of length 1/n_steps.

    Jump probabilities R * dt (evaluated at the step's left endpoint) are
    clipped so that the stay probability is non-negative; the number of
    clipped (chain, dimension) pairs is reported in ``flags["clipped"]``.
    """
    if int(n_steps) < 1:
        raise InvariantViolation("n_steps must be >= 1")
    sched = sched or make_schedule()
    vocab = denoiser.vocab
    if planner is None:
        if config.kind is not NoiseKind.MASK:
            raise InvariantViolation("uniform tau-leaping needs a planner")
        planner = MaskIndicatorPlanner(vocab)
    x = initial_state(vocab, config.kind, n, rng) if x0 is None else np.array(x0, dtype=np.int64)
    n = len(x)
    dt = 1.0 / n_steps
    nfe = np.zeros(n, dtype=np.int64)
    flags = {"clipped": 0}
    events: list = []
    r = np.arange(n)[:, None]
    c = np.arange(vocab.dims_d)[None, :]
    for k in range(n_steps):
        t = k * dt
        p = np.atleast_2d(planner.probs(x, np.full(n, t)))
        den = denoiser.probs(x, np.full(n, t), config.logit_temperature)
        den = den.reshape(n, vocab.dims_d, vocab.size_s)
        nfe += (0 if planner.is_free else 1) + 1
        jump = sched.prefactor(t) * dt * p[..., None] * den
        if config.kind is NoiseKind.UNIFORM:
            jump[r, c, x] = 0.0
        total = jump.sum(-1)
        over = total > 1.0
        # A total of exactly one (the last step) is not clipping; ignore rounding.
        flags["clipped"] += int((total > 1.0 + 1e-12).sum())
        jump = np.where(over[..., None], jump / np.where(over, total, 1.0)[..., None], jump)
        stay = np.clip(1.0 - jump.sum(-1), 0.0, 1.0)
        probs = np.concatenate([jump, stay[..., None]], axis=-1)
        choice = sample_categorical(rng, probs.reshape(-1, vocab.size_s + 1)).reshape(n, vocab.dims_d)
        moved = choice < vocab.size_s
        if record_events:
            b, d = np.nonzero(moved)
            events.append({"chain": b, "step": np.full(len(b), k),
                           "scheduled_time": np.full(len(b), t + dt), "time": np.full(len(b), t),
                           "dim": d, "old": x[b, d], "new": choice[b, d],
                           "planner_mass": p.sum(-1)[b]})
        x = np.where(moved, choice, x)
    return SampleRun(x, nfe, np.full(n, n_steps), flags, events)


def confidence_baseline(denoiser: Denoiser, config: SamplerConfig, rng: np.random.Generator,
                        n: int = 1, sched=None, sample_tokens: bool = False) -> SampleRun:
    """Unmask one position per step, choosing the masked position whose denoiser
    row has the largest maximum probability.

    Tokens are the row argmax by default; ``sample_tokens`` draws them from the
    row instead. Runs D steps from the all-mask state.
    """
    if denoiser.flavor != "mask":
        raise InvariantViolation("confidence baseline needs a mask-flavor denoiser")
    sched = sched or make_schedule()
    vocab = denoiser.vocab
    x = initial_state(vocab, NoiseKind.MASK, n, rng)
    nfe = np.zeros(n, dtype=np.int64)
    r = np.arange(n)
    for _ in range(vocab.dims_d):
        masked = x == vocab.mask_id
        m = masked.sum(-1)
        t = sched.alpha_inv(1.0 - m / vocab.dims_d)
        den = denoiser.probs(x, t, config.logit_temperature).reshape(n, vocab.dims_d, vocab.size_s)
        nfe += 1
        conf = np.where(masked, den.max(-1), -np.inf)
        dims = np.argmax(conf, axis=-1)
        rows = den[r, dims]
        if sample_tokens:
            new = sample_categorical(rng, rows)
        else:
            new = np.argmax(rows, axis=-1)
        x[r, dims] = new
    if np.any(x == vocab.mask_id):
        raise DegeneratePmf("confidence baseline left masked positions")
    return SampleRun(x, nfe, np.full(n, vocab.dims_d), {})
