import numpy as np

from ddpd.verification import (
    CheckResult,
    check_decomposition,
    check_joint_z_marginals,
    check_mask_composition,
    check_product_identity,
    check_rates,
    composition_gaps,
    run_verification,
    standard_fixtures,
)


def test_check_result_line():
    ok = CheckResult("x", "fx", 1e-15, 1e-12)
    assert ok.passed and ok.line().startswith("PASS x [fx]")
    bad = CheckResult("x", "fx", 1e-3, 1e-12)
    assert not bad.passed and bad.line().startswith("FAIL")
    assert bad.to_json()["passed"] is False


def test_standard_fixtures():
    names = set(standard_fixtures())
    assert {"D3S4-markov1-seed7", "D2S3-markov1-seed3", "D2S3-markov0-seed5", "D2-parity"} <= names


def test_all_checks_pass():
    results = run_verification()
    failed = [r.line() for r in results if not r.passed]
    assert not failed
    assert len(results) == 36


def test_individual_checks(d2s3, parity2):
    for r in check_product_identity(d2s3, times=np.linspace(0, 1, 5)):
        assert r.passed
    assert check_joint_z_marginals(parity2).passed
    assert all(r.passed for r in check_rates(d2s3))
    assert check_decomposition(parity2).passed


def test_independent_z_gap(parity2, d2s3_factorized):
    # Parity couples the positions, so independent z sampling is biased ...
    _, gap = composition_gaps(parity2, 0.5)
    assert gap > 0.05
    # ... but it is exact on factorized data.
    exact, gap = composition_gaps(d2s3_factorized, 0.5)
    assert exact < 1e-12 and gap < 1e-12
    res = check_mask_composition(d2s3_factorized, factorized=True)
    assert all(r.passed for r in res)
