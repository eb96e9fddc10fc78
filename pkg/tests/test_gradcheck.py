"""The gradient checker must pass on correct gradients and fail on broken ones."""

import numpy as np

from gridfpd import gradcheck, nn


def test_battery_passes_first_seeds():
    # full 25-seed sweep runs in the acceptance suite; spot-check here
    ok, results = gradcheck.run_suite(seeds=3)
    assert ok
    assert all(r.passed for r in results)


def test_corrupted_gradient_detected():
    ok, results = gradcheck.run_suite(seeds=1, corrupt="w")
    assert not ok
    failed = [r for r in results if not r.passed]
    assert failed and all(".w" in r.name for r in failed)


def test_kink_skips_are_rare_and_counted():
    _, results = gradcheck.run_suite(seeds=5)
    total = sum(r.total for r in results)
    skipped = sum(r.skipped for r in results)
    assert skipped < 0.01 * total


def test_check_layer_reports_input_and_params():
    rng = np.random.default_rng(0)
    lin = nn.Linear(3, 2, rng=rng)
    results = gradcheck.check_layer(lin, rng.standard_normal((2, 3)), rng)
    names = [r.name for r in results]
    assert names == ["Linear.input", "Linear.w", "Linear.b"]


def test_relative_error_floor():
    # near-zero gradients compare absolutely, not relatively
    err = gradcheck._rel_err(np.array([1e-9]), np.array([2e-9]))
    assert err[0] < 1e-8


def test_loss_checks():
    rng = np.random.default_rng(1)
    assert all(r.passed for r in gradcheck.check_loss("cross_entropy", rng))
    assert all(r.passed for r in gradcheck.check_loss("mse", rng))
