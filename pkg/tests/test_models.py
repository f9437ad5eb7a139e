import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import all_states
from ddpd.core import CapacityExceeded, InvariantViolation, VocabSpec, ZeroCorruptionProbability, make_rng, make_schedule
from ddpd.models import (
    MASK_FLAVOR,
    CorruptedDenoiser,
    LogisticDenoiser,
    LogisticPlanner,
    MaskComposedDenoiser,
    MaskIndicatorPlanner,
    OracleDenoiser,
    OraclePlanner,
    OraclePosterior,
    TabularDenoiser,
    TabularPlanner,
    compose_over_masks,
    decompose_uniform_denoiser,
    independent_mask_weights,
    load_model,
    one_hot_features,
    oracle_planner,
    save_model,
    tabular_fit,
    temper,
)
from ddpd.oracle import BayesOracle


class StubPosterior:
    """Full-posterior model returning one fixed row per dimension."""

    def __init__(self, vocab, row):
        self.vocab = vocab
        self.row = np.asarray(row, dtype=float)

    def posterior(self, xt, t):
        xt = np.atleast_2d(xt)
        return np.broadcast_to(self.row, xt.shape + (self.vocab.size_s,)).copy()


def test_temper_hand_values():
    p = np.array([0.2, 0.8])
    assert temper(p, 1.0) is p
    # logits / 0.5 squares the odds: 0.04 : 0.64
    assert np.allclose(temper(p, 0.5), [0.04 / 0.68, 0.64 / 0.68])


@given(st.lists(st.floats(0.01, 1.0), min_size=2, max_size=6), st.floats(0.1, 10.0))
def test_temper_returns_pmf(w, tau):
    p = np.array(w) / sum(w)
    assert temper(p, tau).sum() == pytest.approx(1.0)


def test_decomposition_hand_example():
    # posterior (0.6, 0.4) at x_t = 0, t = 1/2, S = 2: keep = 0.5 / 0.75 = 2/3,
    # p(N) = 1 - 0.6 * 2/3 = 0.6; denoiser (0.6 * 1/3, 0.4) / 0.6 = (1/3, 2/3).
    vocab = VocabSpec(2, 1)
    planner, denoiser = decompose_uniform_denoiser(StubPosterior(vocab, [0.6, 0.4]), time="clock")
    x = np.array([[0]])
    assert planner.probs(x, np.array([0.5]))[0, 0] == pytest.approx(0.6)
    assert np.allclose(denoiser.probs(x, np.array([0.5]))[0, 0], [1 / 3, 2 / 3])
    fixed_p, _ = decompose_uniform_denoiser(StubPosterior(vocab, [0.6, 0.4]), time=0.5)
    assert fixed_p.time_source == "none"
    assert fixed_p.probs(x)[0, 0] == pytest.approx(0.6)


def test_decomposed_denoiser_guards_zero_corruption():
    vocab = VocabSpec(2, 1)
    # posterior certain of x_t at t = 1 (clamped to 1 - 1e-9) leaves p(N) = 5e-10
    _, den = decompose_uniform_denoiser(StubPosterior(vocab, [1.0, 0.0]), time="clock")
    den.min_corruption = 1e-6
    x = np.array([[0]])
    with pytest.raises(ZeroCorruptionProbability):
        den.select_rows(x, np.array([1.0]), np.array([0]))
    assert np.allclose(den.probs(x, np.array([1.0]))[0, 0], [1.0, 0.0])


def test_decomposition_matches_oracle(d2s3):
    planner, den = decompose_uniform_denoiser(OraclePosterior(d2s3), time="clock")
    bo = BayesOracle(d2s3)
    xs = all_states(3, 2)
    t = np.full(9, 0.4)
    assert np.allclose(planner.probs(xs, t), bo.posterior_corruption(xs, t), atol=1e-12)
    assert np.allclose(den.probs(xs, t), bo.conditional_denoiser(xs, t), atol=1e-12)


def test_mask_indicator_planner():
    p = MaskIndicatorPlanner(VocabSpec(3, 2))
    assert p.is_free
    assert p.probs(np.array([[3, 1]])).tolist() == [[1.0, 0.0]]
    assert p.logits(np.array([[3, 1]])).tolist() == [[1e4, -1e4]]


def test_oracle_planner_modes(d2s3):
    x = np.array([[0, 1]])
    bo = BayesOracle(d2s3)
    clock = OraclePlanner(d2s3)
    assert clock.time_source == "clock"
    assert np.allclose(clock.probs(x, np.array([0.3])), bo.posterior_corruption(x, 0.3))
    with pytest.raises(InvariantViolation):
        clock.probs(x)
    fixed = OraclePlanner(d2s3, time=0.3)
    assert fixed.time_source == "none"
    assert np.allclose(fixed.probs(x), bo.posterior_corruption(x, 0.3))
    with pytest.raises(InvariantViolation):
        OraclePlanner(d2s3, time=1.5)
    assert isinstance(oracle_planner(d2s3, "mask"), MaskIndicatorPlanner)


def test_closed_form_jump_time():
    # total rate prefactor * 2 from t = 1/2 with hazard 2 log 2: integral of
    # 1/(1-s) must reach log 2, i.e. t = 3/4.
    p = LogisticPlanner(VocabSpec(2, 2))
    out = p.jump_time(np.zeros((1, 2), int), np.array([0.5]), np.array([2 * np.log(2)]),
                      make_schedule(), probs=np.array([[1.0, 1.0]]))
    assert out[0] == pytest.approx(0.75)
    out = p.jump_time(np.zeros((1, 2), int), np.array([0.5]), np.array([1.0]),
                      make_schedule(), probs=np.array([[0.0, 0.0]]))
    assert np.isinf(out[0])


def test_clock_planner_jump_time_integrates_hazard(d2s3):
    planner = OraclePlanner(d2s3)
    bo = BayesOracle(d2s3)
    x = np.array([[2, 0], [1, 1]])
    t0 = np.array([0.1, 0.4])
    h = np.array([0.7, 0.2])
    t1 = planner.jump_time(x, t0, h, make_schedule())
    for i in range(2):
        # integrate in u = -log(1 - t), where the prefactor is 1
        u = np.linspace(-np.log1p(-t0[i]), -np.log1p(-t1[i]), 4001)
        rate = bo.posterior_corruption(np.repeat(x[i:i + 1], len(u), 0), -np.expm1(-u)).sum(-1)
        assert np.trapezoid(rate, u) == pytest.approx(h[i], rel=1e-4)


def test_oracle_denoiser_flavors(d2s3):
    x = np.array([[0, 1]])
    den = OracleDenoiser(d2s3)
    assert np.allclose(den.probs(x, np.array([0.3])), BayesOracle(d2s3).conditional_denoiser(x, 0.3))
    m = OracleDenoiser(d2s3, flavor=MASK_FLAVOR)
    lg = m.logits(np.array([[3, 1]]), None)
    assert lg.shape == (1, 2, 4) and np.all(lg[..., 3] == -1e4)
    assert np.allclose(m.probs(np.array([[3, 1]]), None).sum(-1), 1.0)
    with pytest.raises(InvariantViolation):
        OracleDenoiser(d2s3, flavor="gaussian")


def test_corrupted_denoiser_mixes_with_uniform(d2s3):
    base = OracleDenoiser(d2s3, flavor=MASK_FLAVOR)
    x = np.array([[3, 3]])
    p = base.probs(x, None)
    assert np.allclose(CorruptedDenoiser(base, 0.0).probs(x, None), p)
    assert np.allclose(CorruptedDenoiser(base, 1.0).probs(x, None), 1 / 3)
    assert np.allclose(CorruptedDenoiser(base, 0.3).probs(x, None), 0.7 * p + 0.1)
    with pytest.raises(InvariantViolation):
        CorruptedDenoiser(base, 1.5)


def test_independent_mask_weights_hand():
    masks, w = independent_mask_weights(np.array([0.2, 0.9, 0.5]), d=1)
    assert np.all(masks[:, 1])
    table = {tuple(m): v for m, v in zip(masks.tolist(), w)}
    assert table[(False, True, False)] == pytest.approx(0.8 * 0.5)
    assert table[(True, True, True)] == pytest.approx(0.2 * 0.5)
    assert w.sum() == pytest.approx(1.0)


def test_exact_composition_recovers_oracle(d2s3):
    bo = BayesOracle(d2s3)
    mask_den = OracleDenoiser(d2s3, flavor=MASK_FLAVOR)
    x = np.array([2, 0])
    for t in (0.2, 0.7):
        target = bo.conditional_denoiser(x, t)
        for d in range(2):
            masks, w = bo.joint_z_posterior(x, t, condition_dim=d)
            assert np.allclose(compose_over_masks(mask_den, x, d, masks, w), target[d], atol=1e-12)


def test_composition_requires_queried_dim_masked(d2s3):
    with pytest.raises(InvariantViolation):
        compose_over_masks(OracleDenoiser(d2s3, flavor=MASK_FLAVOR), np.array([0, 0]), 0,
                           np.array([[False, True]]), np.array([1.0]))


def test_mask_composed_denoiser_on_factorized_data(d2s3_factorized):
    # Independent positions: the composed row is the data marginal whatever z is.
    dist = d2s3_factorized
    comp = MaskComposedDenoiser(OraclePlanner(dist), OracleDenoiser(dist, flavor=MASK_FLAVOR),
                                rng=make_rng(0))
    x = np.array([[0, 2], [1, 1]])
    rows = comp.probs(x, np.array([0.5, 0.5]))
    for d in range(2):
        assert np.allclose(rows[:, d], dist.marginal(d), atol=1e-12)
    with pytest.raises(InvariantViolation):
        MaskComposedDenoiser(OraclePlanner(dist), OracleDenoiser(dist))


def test_tabular_planner_smoothing():
    vocab = VocabSpec(2, 1)
    p = TabularPlanner(vocab, lam=1.0)
    p.update(np.array([[0], [0], [0]]), np.array([[True], [True], [False]]))
    # (2 + 1) / (3 + 2)
    assert p.probs(np.array([[0]]))[0, 0] == pytest.approx(0.6)
    # unseen context with smoothing: 1/2
    assert p.probs(np.array([[1]]))[0, 0] == pytest.approx(0.5)
    assert TabularPlanner(vocab, lam=0.0).probs(np.array([[1]]))[0, 0] == 0.5


def test_tabular_denoiser_counts_only_corrupted():
    vocab = VocabSpec(3, 1)
    d = TabularDenoiser(vocab, lam=0.5)
    d.update(np.array([[0], [0], [0]]), np.array([[True], [True], [False]]), np.array([[1], [1], [2]]))
    # counts (0, 2, 0) + 0.5 each over total 3.5
    assert np.allclose(d.probs(np.array([[0]]))[0, 0], [0.5 / 3.5, 2.5 / 3.5, 0.5 / 3.5])


def test_tabular_fit_rejects_unknown_role():
    with pytest.raises(InvariantViolation):
        tabular_fit(np.zeros((1, 1), int), np.ones((1, 1), bool), np.zeros((1, 1), int), "critic",
                    VocabSpec(2, 1))


def test_capacity_guard():
    with pytest.raises(CapacityExceeded):
        TabularDenoiser(VocabSpec(30, 6))


def test_one_hot_features_layout():
    f = one_hot_features(np.array([[1, 3]]), VocabSpec(3, 2))
    # width S + 1 = 4 per position
    assert f.shape == (1, 8)
    assert np.nonzero(f[0])[0].tolist() == [1, 7]


def test_logistic_models_start_uniform():
    vocab = VocabSpec(3, 2)
    x = np.array([[0, 1]])
    assert np.allclose(LogisticPlanner(vocab).probs(x), 0.5)
    assert np.allclose(LogisticDenoiser(vocab).probs(x, None), 1 / 3)
    m = LogisticDenoiser(vocab, MASK_FLAVOR)
    assert m.logits(x).shape == (1, 2, 4)
    assert np.allclose(m.probs(x, None), 1 / 3)


@pytest.mark.parametrize("make", [
    lambda v: TabularPlanner(v, 0.3).update(np.array([[0, 1]]), np.array([[True, False]])),
    lambda v: TabularDenoiser(v, MASK_FLAVOR, 0.2).update(np.array([[3, 1]]), np.array([[True, False]]),
                                                          np.array([[2, 1]])),
    lambda v: LogisticPlanner(v, make_rng(0), 0.5),
    lambda v: LogisticDenoiser(v, "uniform", make_rng(1), 0.5),
])
def test_model_roundtrip(tmp_path, make):
    vocab = VocabSpec(3, 2)
    model = make(vocab)
    save_model(model, tmp_path / "m.json")
    again = load_model(tmp_path / "m.json")
    assert type(again) is type(model)
    x = all_states(3, 2)
    if hasattr(model, "flavor") and not isinstance(model, (TabularPlanner, LogisticPlanner)):
        assert again.flavor == model.flavor
        assert np.array_equal(again.probs(x, None), model.probs(x, None))
    else:
        assert np.array_equal(again.probs(x), model.probs(x))


def test_load_rejects_foreign_json(tmp_path):
    (tmp_path / "m.json").write_text('{"format": "other"}')
    with pytest.raises(InvariantViolation):
        load_model(tmp_path / "m.json")


@settings(max_examples=20, deadline=None)
@given(st.floats(0.05, 0.95), st.integers(0, 8))
def test_oracle_rows_are_pmfs(t, code):
    from ddpd.datasets import make_markov
    dist = make_markov(1, 2, 3, 3)
    x = all_states(3, 2)[code]
    rows = OracleDenoiser(dist).probs(x[None], np.array([t]))
    assert np.allclose(rows.sum(-1), 1.0)
    assert np.all(rows >= 0)
