import json

import numpy as np
import pytest

from conftest import FIXTURES
from ddpd.core import InvariantViolation, make_rng
from ddpd.datasets import (
    CorpusSampler,
    ingest_corpus,
    load_dist,
    load_vocab_map,
    make_markov,
    make_parity,
    save_dist,
)


@pytest.mark.parametrize("name,args", [
    ("D3S4-markov1-seed7", (1, 3, 4, 7)),
    ("D2S3-markov1-seed3", (1, 2, 3, 3)),
])
def test_pinned_fixtures_regenerate(name, args):
    pinned = load_dist(FIXTURES / f"{name}.json")
    fresh = make_markov(*args)
    assert fresh.name == pinned.name == name
    assert np.array_equal(fresh.support, pinned.support)
    assert np.allclose(fresh.probs, pinned.probs, rtol=0, atol=1e-15)


def test_order_zero_factorizes():
    d = make_markov(0, 3, 3, 5)
    p = d.dense().reshape(3, 3, 3)
    m = p.sum((1, 2))
    # one shared marginal for every position
    assert np.allclose(p, np.einsum("i,j,k->ijk", m, m, m))


def test_order_one_is_markov():
    p = make_markov(1, 3, 4, 7).dense().reshape(4, 4, 4)
    # p(x2 | x0, x1) does not depend on x0
    cond = p / p.sum(-1, keepdims=True)
    assert np.allclose(cond, cond[:1])


def test_markov_is_seeded():
    assert np.array_equal(make_markov(2, 3, 3, 1).probs, make_markov(2, 3, 3, 1).probs)
    assert not np.array_equal(make_markov(2, 3, 3, 1).probs, make_markov(2, 3, 3, 2).probs)
    with pytest.raises(InvariantViolation):
        make_markov(-1, 2, 2, 0)


def test_parity():
    d = make_parity(3)
    assert len(d.support) == 4
    assert np.all(d.support.sum(1) % 2 == 0)
    assert np.allclose(d.probs, 0.25)
    with pytest.raises(InvariantViolation):
        make_parity(3, 3)


def test_save_load_roundtrip(tmp_path, d3s4):
    save_dist(d3s4, tmp_path / "d.json")
    again = load_dist(tmp_path / "d.json")
    assert again.name == d3s4.name
    assert np.array_equal(again.probs, d3s4.probs)


@pytest.fixture
def corpus(tmp_path):
    (tmp_path / "c.txt").write_bytes(b"abcabcab")
    (tmp_path / "v.json").write_text(json.dumps({"symbols": {"a": 0, "b": 1, "c": 2}}))
    return tmp_path


def test_corpus_chunks(corpus):
    s = ingest_corpus(corpus / "c.txt", 3, corpus / "v.json")
    assert s.vocab.size_s == 3 and s.vocab.dims_d == 3
    # the trailing partial chunk is dropped
    assert s.chunks.tolist() == [[0, 1, 2], [0, 1, 2]]
    assert len(s) == 2
    assert s.sample(make_rng(0), 5).shape == (5, 3)
    assert sorted(map(tuple, s.iter_epoch(1))) == [(0, 1, 2), (0, 1, 2)]


def test_corpus_epoch_order_is_seeded():
    s = CorpusSampler(bytes(range(4)) * 5, 2, {i: i for i in range(4)}, 4)
    a = [c.tolist() for c in s.iter_epoch(3)]
    assert a == [c.tolist() for c in s.iter_epoch(3)]
    assert sorted(a) == sorted(s.chunks.tolist())


def test_corpus_errors(corpus):
    with pytest.raises(InvariantViolation, match="unknown symbol"):
        CorpusSampler(b"abd", 1, {97: 0, 98: 1}, 2)
    with pytest.raises(InvariantViolation, match="outside vocabulary"):
        CorpusSampler(b"ab", 1, {97: 0, 98: 5}, 2)
    with pytest.raises(InvariantViolation, match="shorter than one chunk"):
        CorpusSampler(b"ab", 3, {97: 0, 98: 1}, 2)
    with pytest.raises(InvariantViolation):
        ingest_corpus(corpus / "missing.txt", 3, corpus / "v.json")


def test_vocab_map_formats(tmp_path):
    (tmp_path / "bare.json").write_text('{"x": 0, "y": 1}')
    assert load_vocab_map(tmp_path / "bare.json") == {ord("x"): 0, ord("y"): 1}
    (tmp_path / "bad.json").write_text('{"xy": 0}')
    with pytest.raises(InvariantViolation):
        load_vocab_map(tmp_path / "bad.json")
