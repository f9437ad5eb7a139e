import numpy as np
import pytest

from ddpd.core import InvariantViolation, VocabSpec, logit, make_rng, make_schedule
from ddpd.evaluation import tv_to_truth
from ddpd.models import MASK_FLAVOR, LogisticPlanner, MaskIndicatorPlanner, OracleDenoiser, OraclePlanner
from ddpd.oracle import EnumerableDist
from ddpd.samplers import (
    SamplerConfig,
    ancestral_gillespie,
    confidence_baseline,
    corrected_time,
    ddpd_sample,
    gillespie_selfloop,
    initial_state,
    read_events,
    tau_leaping,
)


@pytest.mark.parametrize("kwargs", [
    {"max_steps": 0}, {"stop_eps": 0.0}, {"stop_eps": 1.0}, {"selection": "greedy"},
    {"logit_temperature": 0.0}, {"logit_temperature": 11.0}, {"kind": "gaussian"},
])
def test_config_validation(kwargs):
    with pytest.raises((InvariantViolation, ValueError)):
        SamplerConfig(**kwargs)


def test_corrected_time_hand_value():
    # 1 - (0.2 + 0.2) / 2 = 0.8
    assert corrected_time(np.array([[0.2, 0.2]]), VocabSpec(3, 2), make_schedule())[0] == pytest.approx(0.8)
    assert corrected_time(np.array([[1.0, 1.0]]), VocabSpec(3, 2), make_schedule())[0] == 0.0


def test_initial_state(rng):
    v = VocabSpec(4, 3)
    assert np.all(initial_state(v, "mask", 5, rng) == 4)
    x = initial_state(v, "uniform", 1000, rng)
    assert x.min() == 0 and x.max() == 3


def test_mask_ddpd_unmasks_one_position_per_step(d3s4, tmp_path):
    cfg = SamplerConfig(kind="mask", max_steps=10)
    run = ddpd_sample(MaskIndicatorPlanner(d3s4.vocab), OracleDenoiser(d3s4, flavor=MASK_FLAVOR), cfg,
                      make_rng(0), n=200, record_events=True)
    assert np.all(run.samples < 4)
    assert np.all(run.steps == 3)
    # the mask planner is free, so only denoiser calls count
    assert np.all(run.nfe == 3)
    events = run.events()
    assert len(events) == 600
    assert all(e.old == 4 and e.new < 4 for e in events)
    times = {}
    for e in events:
        assert e.scheduled_time >= times.get(e.chain, 0.0)
        times[e.chain] = e.scheduled_time
    run.write_events(tmp_path / "ev.jsonl")
    assert read_events(tmp_path / "ev.jsonl") == events


def test_mask_ddpd_is_exact(d3s4):
    cfg = SamplerConfig(kind="mask", max_steps=10)
    run = ddpd_sample(MaskIndicatorPlanner(d3s4.vocab), OracleDenoiser(d3s4, flavor=MASK_FLAVOR), cfg,
                      make_rng(1), n=40_000)
    assert tv_to_truth(run.samples, d3s4) < 0.03


def test_sampler_is_deterministic(d2s3):
    cfg = SamplerConfig(max_steps=12)
    a = ddpd_sample(OraclePlanner(d2s3), OracleDenoiser(d2s3), cfg, make_rng(5), n=500)
    b = ddpd_sample(OraclePlanner(d2s3), OracleDenoiser(d2s3), cfg, make_rng(5), n=500)
    assert np.array_equal(a.samples, b.samples)
    assert np.array_equal(a.nfe, b.nfe)


def test_nfe_accounting(d2s3):
    cfg = SamplerConfig(max_steps=6)
    run = ddpd_sample(OraclePlanner(d2s3), OracleDenoiser(d2s3), cfg, make_rng(2), n=2000)
    # one planner and one denoiser call per executed step, plus the planner call
    # of the step on which a chain stopped
    assert np.array_equal(run.nfe, 2 * run.steps + (run.steps < 6))
    assert run.nfe.max() <= 2 * 6


def test_continue_to_budget_runs_every_step(d2s3):
    cfg = SamplerConfig(max_steps=7, continue_to_budget=True)
    run = ddpd_sample(OraclePlanner(d2s3), OracleDenoiser(d2s3), cfg, make_rng(3), n=300)
    assert np.all(run.steps == 7)
    assert run.flags["early_stop"] == 0


def test_uniform_fallback_after_absorption(d2s3):
    cfg = SamplerConfig(kind="mask", max_steps=4, continue_to_budget=True)
    run = ddpd_sample(MaskIndicatorPlanner(d2s3.vocab), OracleDenoiser(d2s3, flavor=MASK_FLAVOR), cfg,
                      make_rng(4), n=100)
    # two unmasking steps, then two steps with no planner mass
    assert run.flags["uniform_fallback"] == 200
    assert np.all(run.samples < 3)


def test_early_stop_when_planner_is_confident():
    vocab = VocabSpec(3, 2)
    planner = LogisticPlanner(vocab)
    planner.b[:] = logit(np.array([0.01, 0.01]))
    dist = EnumerableDist.full(vocab, np.ones(9))
    run = ddpd_sample(planner, OracleDenoiser(dist), SamplerConfig(stop_eps=0.05), make_rng(0), n=50)
    if run.flags["early_stop"]:
        assert np.all(run.steps[run.nfe == 1] == 0)
    assert run.flags["early_stop"] + run.flags["reached_end"] == 50


def test_one_dimension_ddpd_matches_data():
    p = np.array([0.5, 0.3, 0.2])
    dist = EnumerableDist(VocabSpec(3, 1), np.arange(3)[:, None], p)
    run = ddpd_sample(OraclePlanner(dist), OracleDenoiser(dist), SamplerConfig(max_steps=50),
                      make_rng(0), n=50_000)
    assert tv_to_truth(run.samples, dist) < 0.015


def test_selfloop_gillespie_respects_t_end(d2s3):
    cfg = SamplerConfig(max_steps=1000)
    run = gillespie_selfloop(OraclePlanner(d2s3, time="marginal"), OracleDenoiser(d2s3, time="marginal"),
                             cfg, make_rng(0), n=200, t_end=0.5, record_events=True)
    assert all(e.scheduled_time < 0.5 for e in run.events())
    assert run.flags["reached_end"] + run.flags["absorbed"] == 200


def test_ancestral_needs_time_free_planner(d2s3):
    with pytest.raises(InvariantViolation):
        ancestral_gillespie(OraclePlanner(d2s3), OracleDenoiser(d2s3), make_rng(0), n=5)


def test_ancestral_never_self_jumps(d2s3):
    run = ancestral_gillespie(OraclePlanner(d2s3, time="marginal"), OracleDenoiser(d2s3, time="marginal"),
                              make_rng(0), n=500, t_end=0.9)
    assert run.steps.min() >= 0
    assert np.all(run.samples < 3)


def test_tau_leaping_mask(d3s4):
    den = OracleDenoiser(d3s4, flavor=MASK_FLAVOR)
    run = tau_leaping(None, den, SamplerConfig(kind="mask"), make_rng(0), n_steps=64, n=20_000)
    # the last step has prefactor * dt = 1, so nothing stays masked
    assert np.all(run.samples < 4)
    assert run.flags["clipped"] == 0
    assert np.all(run.nfe == 64)
    assert tv_to_truth(run.samples, d3s4) < 0.04


def test_tau_leaping_needs_planner_for_uniform(d2s3):
    with pytest.raises(InvariantViolation):
        tau_leaping(None, OracleDenoiser(d2s3), SamplerConfig(), make_rng(0), n_steps=4)
    with pytest.raises(InvariantViolation):
        tau_leaping(None, OracleDenoiser(d2s3, flavor=MASK_FLAVOR), SamplerConfig(kind="mask"),
                    make_rng(0), n_steps=0)


def test_tau_leaping_uniform_counts_planner_calls(d2s3):
    run = tau_leaping(OraclePlanner(d2s3), OracleDenoiser(d2s3), SamplerConfig(), make_rng(0),
                      n_steps=8, n=100)
    assert np.all(run.nfe == 16)


def test_confidence_baseline(d3s4):
    den = OracleDenoiser(d3s4, flavor=MASK_FLAVOR)
    run = confidence_baseline(den, SamplerConfig(kind="mask"), make_rng(0), n=20)
    assert np.all(run.nfe == 3)
    # argmax decoding is deterministic: every chain decodes the same sequence
    assert len(np.unique(run.samples, axis=0)) == 1
    sampled = confidence_baseline(den, SamplerConfig(kind="mask"), make_rng(0), n=2000, sample_tokens=True)
    assert len(np.unique(sampled.samples, axis=0)) > 1
    with pytest.raises(InvariantViolation):
        confidence_baseline(OracleDenoiser(d3s4), SamplerConfig(), make_rng(0))
