"""Cascade reconciliation: correctness, leakage, failure handling."""

import numpy as np
import pytest

from qkdnet.bits import binary_entropy
from qkdnet.errors import ReconciliationFailure, UnsupportedRegimeError
from qkdnet.qkdproto import reconcile_cascade


def _keys(n, n_errors, seed):
    rng = np.random.default_rng(seed)
    alice = rng.integers(0, 2, n, dtype=np.uint8)
    bob = alice.copy()
    if n_errors:
        bob[rng.choice(n, n_errors, replace=False)] ^= 1
    return alice, bob


def test_identical_inputs_leak_top_level_parities_only():
    alice, bob = _keys(10_000, 0, 0)
    corrected, leaked = reconcile_cascade(alice, bob, 0.01, rng_seed=1)
    assert np.array_equal(corrected, alice)
    # Block sizes 73/146/292/584 over 10^4 bits -> 137+69+35+18 parities.
    assert leaked == 259


def test_corrects_one_percent_errors():
    failures = 0
    for trial in range(200):
        alice, bob = _keys(10_000, 100, trial)
        try:
            corrected, _ = reconcile_cascade(alice, bob, 0.01, rng_seed=trial)
        except ReconciliationFailure:
            failures += 1
            continue
        if not np.array_equal(corrected, alice):
            failures += 1
    assert failures == 0


def test_leakage_within_entropy_budget_at_three_percent():
    n = 10_000
    budget = 1.25 * n * binary_entropy(0.03)
    for trial in range(20):
        alice, bob = _keys(n, 300, 100 + trial)
        _, leaked = reconcile_cascade(alice, bob, 0.03, rng_seed=trial)
        assert leaked <= budget


def test_rejects_out_of_range_hint():
    alice, bob = _keys(1000, 10, 1)
    with pytest.raises(UnsupportedRegimeError):
        reconcile_cascade(alice, bob, 0.2)
    with pytest.raises(UnsupportedRegimeError):
        reconcile_cascade(alice, bob, 0.0)


def test_rejects_short_keys():
    alice, bob = _keys(32, 1, 2)
    with pytest.raises(ValueError):
        reconcile_cascade(alice, bob, 0.05)


def test_residual_mismatch_detected_by_hash():
    # Error rate far beyond the hint leaves residual errors; the final
    # whole-string comparison must catch them rather than return bad key.
    rng = np.random.default_rng(12)
    alice = rng.integers(0, 2, 64, dtype=np.uint8)
    bob = alice.copy()
    bob[rng.choice(64, 20, replace=False)] ^= 1
    with pytest.raises(ReconciliationFailure):
        reconcile_cascade(alice, bob, 0.15, rng_seed=12)


def test_both_sides_identical_after_reconciliation():
    for trial in range(50):
        alice, bob = _keys(4096, 120, 300 + trial)  # ~3%
        corrected, leaked = reconcile_cascade(alice, bob, 0.03, rng_seed=trial)
        assert np.array_equal(corrected, alice)
        assert leaked > 0
