import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from ddpd.core import InvariantViolation, NoiseKind, VocabSpec, make_rng
from ddpd.forward import conditional_marginal, mask_view, sample_corrupted

V = VocabSpec(4, 3)


def test_conditional_marginal_hand_values():
    # uniform: (1 - t)/S everywhere plus t on the clean token
    assert np.allclose(conditional_marginal(2, 0.25, "uniform", V), [0.1875, 0.1875, 0.4375, 0.1875])
    # mask: t on the clean token, 1 - t on the mask id
    assert np.allclose(conditional_marginal(2, 0.25, "mask", V), [0, 0, 0.25, 0, 0.75])


@given(x=st.integers(0, 3), t=st.floats(0.0, 1.0), kind=st.sampled_from(["uniform", "mask"]))
def test_conditional_marginal_is_a_pmf(x, t, kind):
    p = conditional_marginal(x, t, kind, V)
    assert p.sum() == pytest.approx(1.0)
    assert np.all(p >= 0)


def test_conditional_marginal_rejects_bad_inputs():
    with pytest.raises(InvariantViolation):
        conditional_marginal(4, 0.5, "uniform", V)
    with pytest.raises(InvariantViolation):
        conditional_marginal(0, 1.5, "uniform", V)


@pytest.mark.parametrize("kind", ["uniform", "mask"])
def test_sample_corrupted_matches_marginal(kind):
    n, t = 200_000, 0.3
    x1 = np.tile([1, 3, 0], (n, 1))
    xt, z = sample_corrupted(x1, t, kind, V, make_rng(0))
    assert abs(z.mean() - (1 - t)) < 5e-3
    width = 4 if kind == "uniform" else 5
    for d in range(3):
        freq = np.bincount(xt[:, d], minlength=width) / n
        assert np.abs(freq - conditional_marginal(int(x1[0, d]), t, kind, V)).max() < 5e-3


def test_sample_corrupted_clean_entries_are_untouched():
    x1 = make_rng(1).integers(0, 4, size=(1000, 3))
    for kind in ("uniform", "mask"):
        xt, z = sample_corrupted(x1, 0.6, kind, V, make_rng(2))
        assert np.array_equal(xt[~z], x1[~z])
    xt, z = sample_corrupted(x1, 0.6, "mask", V, make_rng(2))
    assert np.all(xt[z] == V.mask_id)


def test_sample_corrupted_per_row_times():
    x1 = np.zeros((2000, 3), dtype=int)
    t = np.r_[np.zeros(1000), np.ones(1000)]
    _, z = sample_corrupted(x1, t, NoiseKind.MASK, V, make_rng(3))
    assert z[:1000].all() and not z[1000:].any()


def test_mask_view():
    xt = np.array([[0, 1, 2]])
    z = np.array([[False, True, False]])
    assert mask_view(xt, z, V).tolist() == [[0, 4, 2]]
