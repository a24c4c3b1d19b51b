import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from deltaboot import netcore, trainer
from deltaboot.bootstrap import boot_mean, boot_sigma, make_resamples, train_ensemble
from deltaboot.data import gen_synthetic
from deltaboot.errors import InsufficientReplicatesError

unit = st.floats(0.0, 1.0, allow_nan=False)


def test_single_example_resamples_are_zero():
    assert np.all(make_resamples(1, 5, 3) == 0)


def test_resamples_deterministic_and_in_range():
    a = make_resamples(50, 4, 9)
    assert np.array_equal(a, make_resamples(50, 4, 9))
    assert a.shape == (4, 50) and a.min() >= 0 and a.max() < 50
    assert np.issubdtype(a.dtype, np.integer)
    assert not np.array_equal(a, make_resamples(50, 4, 10))


def test_rows_are_independent_of_table_size():
    assert np.array_equal(make_resamples(30, 2, 1), make_resamples(30, 6, 1)[:2])


def test_coverage_of_one_resample():
    row = make_resamples(10_000, 1, 0)[0]
    assert abs(np.unique(row).size / 10_000 - (1 - 1 / math.e)) <= 0.02


def test_hand_computed_two_replicates():
    preds = np.array([[0.2, 0.8], [0.4, 0.6]])
    np.testing.assert_allclose(boot_mean(preds), [0.3, 0.7], atol=1e-12)
    np.testing.assert_allclose(boot_sigma(preds), [math.sqrt(0.02)] * 2, atol=1e-12)


def test_symmetric_deviation_pair():
    d = 0.05
    preds = np.array([[0.3 + d, 0.7 - d], [0.3 - d, 0.7 + d]])
    np.testing.assert_allclose(boot_sigma(preds), [d * math.sqrt(2)] * 2, atol=1e-12)


def test_hand_computed_three_replicates():
    preds = np.array([[0.1, 0.9], [0.2, 0.8], [0.6, 0.4]])
    np.testing.assert_allclose(boot_mean(preds), [0.3, 0.7], atol=1e-12)
    np.testing.assert_allclose(boot_sigma(preds), [math.sqrt(0.07)] * 2, atol=1e-12)


def test_identical_replicates():
    row = np.array([[0.123, 0.456, 0.421], [0.7, 0.2, 0.1]])
    preds = np.stack([row] * 5)
    assert np.array_equal(boot_mean(preds), row)
    assert np.all(boot_sigma(preds) == 0.0)


def test_sigma_needs_two_replicates():
    with pytest.raises(InsufficientReplicatesError, match="insufficient replicates"):
        boot_sigma(np.ones((1, 3)))


@settings(max_examples=60, deadline=None)
@given(arrays(np.float64, st.tuples(st.integers(2, 8), st.integers(1, 4)), elements=unit), st.randoms())
def test_statistics_ignore_replicate_order(preds, rnd):
    perm = list(range(preds.shape[0]))
    rnd.shuffle(perm)
    np.testing.assert_allclose(boot_mean(preds[perm]), boot_mean(preds), atol=1e-15)
    np.testing.assert_allclose(boot_sigma(preds[perm]), boot_sigma(preds), atol=1e-14)


@settings(max_examples=60, deadline=None)
@given(arrays(np.float64, st.tuples(st.integers(2, 8), st.integers(1, 4)), elements=unit))
def test_sigma_bounds(preds):
    b = preds.shape[0]
    s = boot_sigma(preds)
    assert np.all(s >= 0)
    assert np.all(s <= 0.5 * math.sqrt(b / (b - 1)) + 1e-12)
    np.testing.assert_allclose(s, preds.std(axis=0, ddof=1), atol=1e-12)


@settings(max_examples=40, deadline=None)
@given(arrays(np.float64, st.tuples(st.integers(1, 6), st.integers(2, 5)), elements=st.floats(0.01, 1.0)))
def test_mean_of_distributions_is_a_distribution(raw):
    preds = raw / raw.sum(axis=1, keepdims=True)
    m = boot_mean(preds[:, None, :])[0]
    assert np.all(m >= 0)
    assert abs(m.sum() - 1) <= 1e-12


def _ensemble(policy_mode):
    data = gen_synthetic(2, 10, 3, 3.0, 0)
    spec = netcore.dense_spec(3, [4], 2)
    cfg = trainer.TrainConfig(batch_size=10, schedule=((0, 1e-2),), total_steps=20)
    row = make_resamples(len(data), 1, 0)[0]
    idx = np.stack([row, row])
    return train_ensemble(spec, data, None, idx, cfg, trainer.SeedPolicy(policy_mode, 5))


def test_srwi_identical_rows_give_identical_models():
    (a, _), (b, _) = _ensemble(trainer.SRWI)
    assert np.array_equal(a.values, b.values)


def test_drwi_identical_rows_give_distinct_models():
    (a, _), (b, _) = _ensemble(trainer.DRWI)
    assert np.any(a.values != b.values)


def test_parallel_workers_match_serial():
    data = gen_synthetic(2, 10, 3, 3.0, 0)
    spec = netcore.dense_spec(3, [4], 2)
    cfg = trainer.TrainConfig(batch_size=10, schedule=((0, 1e-2),), total_steps=15)
    idx = make_resamples(len(data), 3, 2)
    policy = trainer.SeedPolicy(trainer.DRWI, 0)
    serial = train_ensemble(spec, data, None, idx, cfg, policy)
    parallel = train_ensemble(spec, data, None, idx, cfg, policy, workers=2)
    for (a, _), (b, _) in zip(serial, parallel):
        assert np.array_equal(a.values, b.values)


def test_ensemble_rejects_bad_table():
    data = gen_synthetic(2, 5, 3, 3.0, 0)
    spec = netcore.dense_spec(3, [4], 2)
    with pytest.raises(ValueError):
        train_ensemble(spec, data, None, np.zeros((2, 4), int), trainer.TrainConfig(total_steps=1),
                       trainer.SeedPolicy(trainer.DRWI, 0))
