"""Exact Bayes quantities over enumerable data distributions.

Everything here is computed by brute-force enumeration of the data support
(and of noise masks where needed). These are the reference values the rest of
the library is checked against.
"""

from __future__ import annotations

import itertools
import threading
from dataclasses import dataclass, field

import numpy as np

from .core import (
    DegeneratePmf,
    InvariantViolation,
    LinearSchedule,
    NoiseKind,
    SupportTooLarge,
    VocabSpec,
    ZeroCorruptionProbability,
    make_schedule,
    validate_pmf,
)

MAX_SUPPORT = 10**7
MAX_MASK_DIMS = 16
_CHUNK_ELEMS = 2_000_000


@dataclass(frozen=True)
class EnumerableDist:
    """A data distribution given by an explicit support table."""

    vocab: VocabSpec
    support: np.ndarray  # (N, D) clean tokens
    probs: np.ndarray  # (N,)
    name: str = ""

    def __post_init__(self):
        if self.vocab.size_s ** self.vocab.dims_d > MAX_SUPPORT:
            raise SupportTooLarge(
                f"S^D = {self.vocab.size_s}^{self.vocab.dims_d} exceeds {MAX_SUPPORT}")
        support = self.vocab.check_clean(np.atleast_2d(self.support))
        probs = validate_pmf(self.probs)
        if probs.shape != (support.shape[0],):
            raise InvariantViolation("probs and support lengths differ")
        object.__setattr__(self, "support", support)
        object.__setattr__(self, "probs", probs)

    @classmethod
    def full(cls, vocab: VocabSpec, probs, name: str = "") -> "EnumerableDist":
        """Distribution over all S^D sequences in lexicographic order."""
        if vocab.size_s ** vocab.dims_d > MAX_SUPPORT:
            raise SupportTooLarge(f"S^D exceeds {MAX_SUPPORT}")
        support = np.array(list(itertools.product(range(vocab.size_s), repeat=vocab.dims_d)),
                           dtype=np.int64).reshape(-1, vocab.dims_d)
        return cls(vocab, support, np.asarray(probs, dtype=np.float64), name)

    def dense(self) -> np.ndarray:
        """Probabilities over all S^D sequences in lexicographic order."""
        from .core import encode_states

        out = np.zeros(self.vocab.size_s ** self.vocab.dims_d)
        np.add.at(out, encode_states(self.support, self.vocab.size_s), self.probs)
        return out

    def sample(self, rng: np.random.Generator, n: int) -> np.ndarray:
        idx = rng.choice(len(self.probs), size=n, p=self.probs)
        return self.support[idx]

    def entropy(self) -> float:
        p = self.probs[self.probs > 0]
        return float(-(p * np.log(p)).sum())

    def marginal(self, d: int) -> np.ndarray:
        out = np.zeros(self.vocab.size_s)
        np.add.at(out, self.support[:, d], self.probs)
        return out

    def to_json(self) -> dict:
        return {
            "name": self.name,
            "size_s": self.vocab.size_s,
            "dims_d": self.vocab.dims_d,
            "support": self.support.tolist(),
            "probs": [float(p) for p in self.probs],
        }

    @classmethod
    def from_json(cls, obj: dict) -> "EnumerableDist":
        vocab = VocabSpec(int(obj["size_s"]), int(obj["dims_d"]))
        return cls(vocab, np.asarray(obj["support"], dtype=np.int64),
                   np.asarray(obj["probs"], dtype=np.float64), obj.get("name", ""))


def _row_chunks(n_rows: int, n_support: int):
    step = max(1, _CHUNK_ELEMS // max(1, n_support))
    for lo in range(0, n_rows, step):
        yield slice(lo, min(n_rows, lo + step))


@dataclass
class BayesOracle:
    """Exact posteriors for ``dist`` under the given forward noise kind.

    Batched methods take ``xt`` of shape (B, D) or (D,) and a time that is a
    scalar or of shape (B,); outputs drop the batch axis for 1-D input.
    """

    dist: EnumerableDist
    kind: NoiseKind = NoiseKind.UNIFORM
    sched: LinearSchedule = field(default_factory=make_schedule)
    _cache: dict = field(default_factory=dict, repr=False)
    _lock: threading.Lock = field(default_factory=threading.Lock, repr=False)

    def __post_init__(self):
        self.kind = NoiseKind(self.kind)
        self.vocab = self.dist.vocab
        S, D = self.vocab.size_s, self.vocab.dims_d
        self._onehot = np.zeros((len(self.dist.probs), D, S))
        idx = np.arange(len(self.dist.probs))
        for d in range(D):
            self._onehot[idx, d, self.dist.support[:, d]] = 1.0
        with np.errstate(divide="ignore"):
            self._logp = np.log(self.dist.probs)

    # -- likelihoods ---------------------------------------------------------

    def _prep(self, xt, t):
        xt = self.vocab.check_tokens(xt)
        single = xt.ndim == 1
        xt2 = np.atleast_2d(xt)
        t = np.broadcast_to(np.asarray(t, dtype=np.float64), (xt2.shape[0],))
        if np.any((t < 0) | (t > 1)):
            raise InvariantViolation("time outside [0, 1]")
        if self.kind is NoiseKind.UNIFORM and np.any(xt2 == self.vocab.mask_id):
            raise InvariantViolation("mask token under uniform noise")
        return xt2, t, single

    def _log_weights(self, xt2, t):
        """log p_data(x1) + log p_{t|1}(xt | x1), shape (B, N)."""
        S = self.vocab.size_s
        match = (xt2[:, None, :] == self.dist.support[None, :, :])
        if self.kind is NoiseKind.UNIFORM:
            a = self.sched.alpha(t)[:, None]
            n_match = match.sum(-1)
            D = xt2.shape[1]
            with np.errstate(divide="ignore", invalid="ignore"):
                # Guard 0 * log(0) at alpha = 1, where only exact matches survive.
                ll = n_match * np.log(a + (1 - a) / S) + np.where(
                    n_match < D, (D - n_match) * np.log((1 - a) / S), 0.0)
        else:
            # For 0 < alpha < 1 the masked posterior does not depend on t: the
            # alpha / (1 - alpha) factors are shared by every compatible x1.
            unmasked = xt2 != self.vocab.mask_id
            ok = np.all(match | ~unmasked[:, None, :], axis=-1)
            ll = np.where(ok, 0.0, -np.inf)
        return self._logp[None, :] + ll

    def posterior(self, xt, t) -> np.ndarray:
        """p(x1 | xt) over the support, shape (B, N) or (N,)."""
        xt2, t, single = self._prep(xt, t)
        out = np.empty((xt2.shape[0], len(self.dist.probs)))
        for sl in _row_chunks(xt2.shape[0], out.shape[1]):
            lw = self._log_weights(xt2[sl], t[sl])
            m = lw.max(axis=1, keepdims=True)
            if np.any(~np.isfinite(m)):
                raise DegeneratePmf("observed x_t has zero probability under the data")
            w = np.exp(lw - m)
            out[sl] = w / w.sum(axis=1, keepdims=True)
        return out[0] if single else out

    # -- per-dimension posteriors --------------------------------------------

    def posterior_x1_marginal(self, xt, t) -> np.ndarray:
        """p_{1|t}(x1^d = j | xt), shape (B, D, S) or (D, S)."""
        xt_arr = np.asarray(xt)
        if xt_arr.ndim == 1 and np.ndim(t) == 0:
            key = (xt_arr.astype(np.int64).tobytes(), round(float(t) * 1e9))
            with self._lock:
                hit = self._cache.get(key)
            if hit is not None:
                return hit.copy()
            val = np.einsum("n,nds->ds", self.posterior(xt_arr, t), self._onehot)
            with self._lock:
                self._cache.setdefault(key, val)
            return val.copy()
        post = self.posterior(xt, t)
        return np.einsum("...n,nds->...ds", post, self._onehot)

    def _keep_factor(self, t):
        """alpha / (alpha + (1 - alpha)/S): chance a clean-looking token is data."""
        a = self.sched.alpha(t)
        S = self.vocab.size_s
        return a / (a + (1 - a) / S)

    def posterior_corruption(self, xt, t) -> np.ndarray:
        """p(z^d = N | xt) for every d (uniform noise)."""
        self._require_uniform()
        xt2, tt, single = self._prep(xt, t)
        post = self.posterior_x1_marginal(xt2, tt)
        at_xt = np.take_along_axis(post, xt2[..., None], axis=-1)[..., 0]
        pn = 1.0 - at_xt * self._keep_factor(tt)[:, None]
        pn = np.clip(pn, 0.0, 1.0)
        return pn[0] if single else pn

    def conditional_denoiser(self, xt, t, strict: bool = True) -> np.ndarray:
        """p(x1^d = j | xt, z^d = N), shape (B, D, S) or (D, S) (uniform noise).

        Rows whose conditioning event has zero probability raise when
        ``strict``; otherwise they come back as NaN.
        """
        self._require_uniform()
        xt2, tt, single = self._prep(xt, t)
        post = self.posterior_x1_marginal(xt2, tt)
        at_xt = np.take_along_axis(post, xt2[..., None], axis=-1)[..., 0]
        keep = self._keep_factor(tt)[:, None]
        pn = 1.0 - at_xt * keep
        bad = pn <= 1e-300
        if strict and np.any(bad):
            raise ZeroCorruptionProbability("p(z^d = N | x_t) is zero")
        rows = post.copy()
        np.put_along_axis(rows, xt2[..., None], (at_xt * (1.0 - keep))[..., None], axis=-1)
        with np.errstate(divide="ignore", invalid="ignore"):
            rows /= np.where(bad, np.nan, pn)[..., None]
        return rows[0] if single else rows

    def mask_posterior(self, x_masked) -> np.ndarray:
        """p_data(x1^d = j | unmasked positions of ``x_masked``), shape (B, D, S)."""
        masked = BayesOracle(self.dist, NoiseKind.MASK, self.sched)
        return masked.posterior_x1_marginal(x_masked, 0.5)

    # -- joint noise masks ---------------------------------------------------

    def _mask_factors(self, xt, t):
        """Per-dimension factors p(z^d, xt^d | x1^d) for z=D and z=N, shape (N, D)."""
        S, M = self.vocab.size_s, self.vocab.mask_id
        a = float(self.sched.alpha(t))
        match = (self.dist.support == xt[None, :]).astype(np.float64)
        f_data = a * match
        if self.kind is NoiseKind.UNIFORM:
            f_noise = np.full_like(match, (1 - a) / S)
        else:
            f_noise = np.broadcast_to((xt == M) * (1 - a), match.shape).astype(np.float64)
        return f_data, f_noise

    def joint_z_posterior(self, xt, t, condition_dim: int | None = None):
        """Enumerated p(z | xt [, z^d = N]).

        Returns ``(masks, probs)`` with ``masks`` a (2^D, D) bool array (True = N).
        """
        xt = self.vocab.check_tokens(np.asarray(xt))
        D = self.vocab.dims_d
        if D > MAX_MASK_DIMS:
            raise SupportTooLarge(f"2^{D} noise masks exceed the enumeration guard")
        f_data, f_noise = self._mask_factors(xt, t)
        masks = np.array(list(itertools.product([False, True], repeat=D)), dtype=bool)
        # (M, N): prod_d f(z^d)
        fac = np.where(masks[:, None, :], f_noise[None], f_data[None]).prod(axis=-1)
        w = fac @ self.dist.probs
        if condition_dim is not None:
            w = np.where(masks[:, condition_dim], w, 0.0)
        total = w.sum()
        if total <= 0:
            raise DegeneratePmf("conditioning event has zero probability")
        return masks, w / total

    def corruption_enumerated(self, xt, t) -> np.ndarray:
        """p(z^d = N | xt) from the joint mask enumeration (a cross-check on the closed form)."""
        masks, probs = self.joint_z_posterior(xt, t)
        return probs @ masks.astype(np.float64)

    def _require_uniform(self):
        if self.kind is not NoiseKind.UNIFORM:
            raise InvariantViolation("operation defined for uniform noise only")


class TimeMarginalOracle:
    """Posteriors with the corruption time integrated out under t ~ U(0, 1).

    A model that never sees t and is trained on (x_t, z_t, x_1) with t drawn
    uniformly converges to these quantities. For the linear schedule every
    integrand is a polynomial in t of degree <= D, so Gauss-Legendre quadrature
    with ``n_nodes > D/2`` is exact.
    """

    def __init__(self, dist: EnumerableDist, sched: LinearSchedule | None = None,
                 n_nodes: int | None = None):
        self.dist = dist
        self.vocab = dist.vocab
        self.sched = sched or make_schedule()
        D = self.vocab.dims_d
        n = n_nodes or max(8, D + 2)
        x, w = np.polynomial.legendre.leggauss(n)
        self.nodes = 0.5 * (x + 1.0)
        self.log_node_w = np.log(0.5 * w)
        self._oracle = BayesOracle(dist, NoiseKind.UNIFORM, self.sched)

    def _stats(self, xt2):
        """Accumulate p(z^d=N, x1^d=j | xt) and p(z^d=N | xt) over quadrature nodes."""
        S = self.vocab.size_s
        B, D = xt2.shape
        log_terms = []
        for k, tk in enumerate(self.nodes):
            lw = self._oracle._log_weights(xt2, np.full(B, tk)) + self.log_node_w[k]
            a = float(self.sched.alpha(tk))
            noise = (1 - a) / S
            match = (xt2[:, None, :] == self.dist.support[None, :, :])
            r = noise / np.where(match, a + noise, noise)  # p(z^d=N | xt^d, x1^d)
            log_terms.append((lw, r))
        m = np.max([lt[0].max(axis=1) for lt in log_terms], axis=0)
        if np.any(~np.isfinite(m)):
            raise DegeneratePmf("observed x_t has zero probability under the data")
        total = np.zeros(B)
        joint_n = np.zeros((B, D, S))
        for lw, r in log_terms:
            w = np.exp(lw - m[:, None])  # (B, N)
            total += w.sum(axis=1)
            joint_n += np.einsum("bn,bnd,nds->bds", w, r, self._oracle._onehot)
        return joint_n, total

    def planner_probs(self, xt) -> np.ndarray:
        xt = self.vocab.check_clean(xt)
        single = xt.ndim == 1
        xt2 = np.atleast_2d(xt)
        out = np.empty(xt2.shape, dtype=np.float64)
        for sl in _row_chunks(xt2.shape[0], len(self.dist.probs) * self.vocab.dims_d):
            joint_n, total = self._stats(xt2[sl])
            out[sl] = joint_n.sum(-1) / total[:, None]
        out = np.clip(out, 0.0, 1.0)
        return out[0] if single else out

    def denoiser_probs(self, xt) -> np.ndarray:
        xt = self.vocab.check_clean(xt)
        single = xt.ndim == 1
        xt2 = np.atleast_2d(xt)
        out = np.empty(xt2.shape + (self.vocab.size_s,), dtype=np.float64)
        for sl in _row_chunks(xt2.shape[0], len(self.dist.probs) * self.vocab.dims_d):
            joint_n, _ = self._stats(xt2[sl])
            out[sl] = joint_n / joint_n.sum(-1, keepdims=True)
        return out[0] if single else out


def log_likelihood_expectation(dist: EnumerableDist) -> float:
    """E_{p_data}[log p_data(x1)] (negative entropy), in nats."""
    return -dist.entropy()
