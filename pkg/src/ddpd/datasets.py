"""Synthetic enumerable data distributions and fixed-length corpus chunking."""

from __future__ import annotations

import itertools
import json
from pathlib import Path

import numpy as np

from .core import InvariantViolation, VocabSpec, make_rng
from .oracle import EnumerableDist


def make_markov(order: int, dims_d: int, size_s: int, seed: int,
                concentration: float = 1.0) -> EnumerableDist:
    """Random order-k Markov chain over tokens, enumerated exactly.

    Position i draws its token from a Dirichlet(concentration) row indexed by
    the previous min(i, k) tokens. Order 0 uses one shared marginal.
    """
    if order < 0:
        raise InvariantViolation("order must be >= 0")
    vocab = VocabSpec(size_s, dims_d)
    rng = make_rng(seed)
    tables = [rng.dirichlet(np.full(size_s, concentration), size=size_s**c)
              for c in range(order + 1)]
    support = np.array(list(itertools.product(range(size_s), repeat=dims_d)), dtype=np.int64)
    logp = np.zeros(len(support))
    for i in range(dims_d):
        c = min(i, order)
        ctx = np.zeros(len(support), dtype=np.int64)
        for k in range(i - c, i):
            ctx = ctx * size_s + support[:, k]
        logp += np.log(tables[c][ctx, support[:, i]])
    p = np.exp(logp - logp.max())
    name = f"D{dims_d}S{size_s}-markov{order}-seed{seed}"
    return EnumerableDist(vocab, support, p / p.sum(), name)


def make_parity(dims_d: int, size_s: int = 2) -> EnumerableDist:
    """Uniform over even-parity bit strings."""
    if size_s != 2:
        raise InvariantViolation("parity data is defined for S = 2")
    vocab = VocabSpec(2, dims_d)
    support = np.array([x for x in itertools.product(range(2), repeat=dims_d)
                        if sum(x) % 2 == 0], dtype=np.int64)
    probs = np.full(len(support), 1.0 / len(support))
    return EnumerableDist(vocab, support, probs, f"D{dims_d}-parity")


def save_dist(dist: EnumerableDist, path) -> None:
    Path(path).write_text(json.dumps(dist.to_json(), indent=1) + "\n")


def load_dist(path) -> EnumerableDist:
    return EnumerableDist.from_json(json.loads(Path(path).read_text()))


def load_vocab_map(path) -> dict[int, int]:
    """Read a vocab JSON ``{"symbols": {"a": 0, ...}}`` (or a bare mapping).

    Keys are single characters, interpreted as latin-1 bytes.
    """
    obj = json.loads(Path(path).read_text())
    mapping = obj.get("symbols", obj) if isinstance(obj, dict) else None
    if not isinstance(mapping, dict):
        raise InvariantViolation("vocab file must hold a symbol -> id mapping")
    out = {}
    for sym, idx in mapping.items():
        b = sym.encode("latin-1")
        if len(b) != 1:
            raise InvariantViolation(f"vocab symbol {sym!r} is not a single byte")
        out[b[0]] = int(idx)
    return out


class CorpusSampler:
    """Fixed-length chunks of a byte corpus mapped through an explicit vocabulary."""

    def __init__(self, data: bytes, chunk_d: int, vocab_map: dict[int, int], size_s: int):
        self.vocab = VocabSpec(size_s, chunk_d)
        for byte, idx in vocab_map.items():
            if not 0 <= idx < size_s:
                raise InvariantViolation(
                    f"symbol {chr(byte)!r} maps to {idx}, outside vocabulary of size {size_s}")
        lut = np.full(256, -1, dtype=np.int64)
        for byte, idx in vocab_map.items():
            lut[byte] = idx
        raw = np.frombuffer(data, dtype=np.uint8)
        tokens = lut[raw]
        if np.any(tokens < 0):
            bad = raw[np.argmax(tokens < 0)]
            raise InvariantViolation(f"unknown symbol {bytes([bad])!r} in corpus")
        n_chunks = len(tokens) // chunk_d
        if n_chunks == 0:
            raise InvariantViolation("corpus shorter than one chunk")
        self.chunks = tokens[: n_chunks * chunk_d].reshape(n_chunks, chunk_d)

    def __len__(self):
        return len(self.chunks)

    def sample(self, rng: np.random.Generator, n: int) -> np.ndarray:
        return self.chunks[rng.integers(0, len(self.chunks), size=n)]

    def iter_epoch(self, seed: int):
        """Chunks in a seed-determined order."""
        order = make_rng(seed).permutation(len(self.chunks))
        for i in order:
            yield self.chunks[i]


def ingest_corpus(path, chunk_d: int, vocab_path, size_s: int | None = None) -> CorpusSampler:
    try:
        data = Path(path).read_bytes()
    except OSError as exc:
        raise InvariantViolation(f"cannot read corpus {path}: {exc}") from exc
    vocab_map = load_vocab_map(vocab_path)
    if size_s is None:
        size_s = max(vocab_map.values()) + 1
    return CorpusSampler(data, chunk_d, vocab_map, size_s)
