"""Reverse-time rates: data-conditional, posterior-expected, and factored self-loop form."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import T_MAX, InvariantViolation, LinearSchedule, NoiseKind, make_schedule, validate_pmf


def _prefactor(t, sched):
    t = np.asarray(t, dtype=np.float64)
    if np.any(t < 0) or np.any(t >= 1):
        raise InvariantViolation("rates are defined for t in [0, 1)")
    return (sched or make_schedule()).prefactor(t)


def conditional_rate(xt_d, j, x1_d, t, kind, mask_id: int | None = None,
                     sched: LinearSchedule | None = None):
    """R_t(x_t, j | x_1) for a single-dimension change at one dimension.

    Uniform: prefactor * [x1 = j] * [x1 != x_t]; mask: prefactor * [x1 = j] * [x_t = mask].
    """
    kind = NoiseKind(kind)
    xt_d, j, x1_d = (np.asarray(v) for v in (xt_d, j, x1_d))
    if np.any(j == xt_d):
        raise InvariantViolation("conditional rate is defined for j != x_t^d")
    pref = _prefactor(t, sched)
    if kind is NoiseKind.UNIFORM:
        gate = x1_d != xt_d
    else:
        if mask_id is None:
            raise InvariantViolation("mask kind needs the mask id")
        gate = xt_d == mask_id
    return pref * ((x1_d == j) & gate)


def expected_rate(posterior, xt_d: int, t, kind, sched: LinearSchedule | None = None) -> np.ndarray:
    """Rate row E_{p_{1|t}}[R_t(x_t, j | x_1)] over the S data tokens.

    ``posterior`` is p_{1|t}(x_1^d | x_t) over S tokens. Entry ``xt_d`` is zero
    (no jump); under mask noise the whole row is zero unless x_t^d is the mask.
    """
    kind = NoiseKind(kind)
    post = validate_pmf(posterior)
    S = post.shape[-1]
    pref = _prefactor(t, sched)
    row = pref * post
    if kind is NoiseKind.UNIFORM:
        row[xt_d] = 0.0
    elif xt_d != S:
        row = np.zeros_like(row)
    return row


@dataclass(frozen=True)
class FactoredRate:
    """prefactor * planner[d] * denoiser[d, j], self-loops included.

    Never materialized as a full rate matrix; this is the form the self-loop
    Gillespie sampler consumes.
    """

    prefactor: float
    planner_probs: np.ndarray  # (D,)
    denoiser_rows: np.ndarray  # (D, S)
    xt: np.ndarray | None = None  # (D,) current tokens, for off-diagonal extraction

    def entries(self) -> np.ndarray:
        """All jump rates including self-loops, shape (D, S)."""
        return self.prefactor * self.planner_probs[:, None] * self.denoiser_rows

    def off_diagonal(self) -> np.ndarray:
        if self.xt is None:
            raise InvariantViolation("off-diagonal rates need the current sequence")
        out = self.entries()
        out[np.arange(len(self.xt)), self.xt] = 0.0
        return out

    def total_rate(self) -> float:
        """Total self-loop jump rate, prefactor * sum_d planner[d]."""
        return float(self.prefactor * self.planner_probs.sum())

    def row_sum(self) -> float:
        return float(self.entries().sum())


def selfloop_rate_matrix(planner_probs, denoiser_rows, t, xt=None,
                         sched: LinearSchedule | None = None) -> FactoredRate:
    if float(t) >= T_MAX:
        raise InvariantViolation("prefactor is singular at t >= 1 - 1e-9")
    p = np.asarray(planner_probs, dtype=np.float64)
    if np.any(p < 0) or np.any(p > 1) or not np.all(np.isfinite(p)):
        raise InvariantViolation("planner probabilities must lie in [0, 1]")
    rows = validate_pmf(denoiser_rows)
    if rows.shape[0] != p.shape[0]:
        raise InvariantViolation("planner and denoiser disagree on D")
    return FactoredRate(float(_prefactor(t, sched)), p, rows,
                        None if xt is None else np.asarray(xt, dtype=np.int64))
