import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from numpy.testing import assert_allclose, assert_array_equal

from chad.data import EncodedRecord
from chad.negsampler import (SamplerConfig, category_probs, cont_group_sizes, inject_latent_noise,
                             n_cat_perturbed_max, perturb_batch, perturb_record, sampler_stats)

from conftest import make_schema


def test_probs_symmetric():
    assert_allclose(category_probs([5, 5]).probs, [0.5, 0.5])


def test_probs_proportional():
    assert_allclose(category_probs([3, 1], 1.0).probs, [0.75, 0.25])


def test_probs_dampened():
    assert_allclose(category_probs([100, 10, 1]).probs, [0.827, 0.147, 0.026], atol=1e-3)


def test_probs_errors():
    with pytest.raises(ValueError):
        category_probs([])
    with pytest.raises(ValueError):
        category_probs([0, 3])


@settings(max_examples=50, deadline=None)
@given(st.lists(st.integers(1, 500), min_size=1, max_size=8), st.integers(2, 50))
def test_probs_scale_invariant(arities, c):
    p = category_probs(arities).probs
    assert_allclose(category_probs([a * c for a in arities]).probs, p, rtol=1e-12)
    assert abs(p.sum() - 1) < 1e-9


def test_count_range_k6():
    s = make_schema((4,) * 6, 0)
    _, _, info = perturb_batch(np.zeros((1, 6), np.int64), np.zeros((1, 0)), s, SamplerConfig(),
                               np.random.default_rng(0), m=20_000, details=True)
    counts = info["chosen"].sum(axis=1)
    assert n_cat_perturbed_max(6) == 3
    assert set(np.unique(counts)) == {1, 2, 3}
    # uniform over {1,2,3}
    for c in (1, 2, 3):
        assert abs((counts == c).mean() - 1 / 3) < 3 * np.sqrt(2 / 9 / 20_000)


def test_group_sizes():
    assert cont_group_sizes(35) == (8, 8)
    assert cont_group_sizes(4) == (1, 1)
    assert cont_group_sizes(3) == (1, 0)
    assert cont_group_sizes(2) == (1, 0)
    assert cont_group_sizes(1) == (1, 0)
    assert cont_group_sizes(0) == (0, 0)


def test_r35_perturbs_sixteen():
    s = make_schema((3,), 35)
    cont = np.full((1, 35), 0.5)
    _, nv, info = perturb_batch(np.zeros((1, 1), np.int64), cont, s, SamplerConfig(),
                                np.random.default_rng(1), m=500, details=True)
    assert_array_equal(info["up"].sum(axis=1), 8)
    assert_array_equal(info["down"].sum(axis=1), 8)
    assert not np.any(info["up"] & info["down"])
    assert_array_equal((nv != 0.5).sum(axis=1), 16)


def test_noise_ranges_and_means():
    s = make_schema((3,), 4)
    n = 100_000
    _, nv, info = perturb_batch(np.zeros((1, 1), np.int64), np.zeros((1, 4)), s,
                                SamplerConfig(delta=0.5), np.random.default_rng(2), m=n, details=True)
    up, down = nv[info["up"]], nv[info["down"]]
    assert up.min() >= 0.5 and up.max() < 1.5
    assert down.min() >= -0.5 and down.max() < 0.5
    tol = 3 * np.sqrt(1 / 12 / n)
    assert abs(up.mean() - 1.0) < tol
    assert abs(down.mean() - 0.0) < tol


def test_no_clamping():
    s = make_schema((3,), 8)
    _, nv = perturb_batch(np.zeros((1, 1), np.int64), np.ones((1, 8)), s, SamplerConfig(),
                          np.random.default_rng(0), m=200)
    assert nv.max() > 1.0


def test_every_negative_changes_a_field():
    s = make_schema((3, 12, 2, 5), 6)
    rng = np.random.default_rng(3)
    cat = np.column_stack([rng.integers(0, a, 50) for a in s.arities])
    cont = rng.random((50, 6))
    nc, nv = perturb_batch(cat, cont, s, SamplerConfig(), rng)
    src = np.repeat(cat, 10, axis=0)
    assert np.all((nc != src).sum(axis=1) >= 1)
    assert_array_equal((nv != np.repeat(cont, 10, axis=0)).sum(axis=1), 2)
    assert np.all((nc >= 0) & (nc < np.asarray(s.arities)))


def test_replacement_uniform_over_others():
    s = make_schema((4,), 0)
    nc, _ = perturb_batch(np.array([[2]]), np.zeros((1, 0)), s, SamplerConfig(),
                          np.random.default_rng(5), m=30_000)
    vals, counts = np.unique(nc, return_counts=True)
    assert_array_equal(vals, [0, 1, 3])
    assert np.all(np.abs(counts / 30_000 - 1 / 3) < 3 * np.sqrt(2 / 9 / 30_000))


def test_selection_frequencies_match_probs():
    # k=2: exactly one field chosen per negative, so frequencies are the probabilities
    s = make_schema((20, 4), 0)
    n = 100_000
    _, _, info = perturb_batch(np.zeros((1, 2), np.int64), np.zeros((1, 0)), s, SamplerConfig(),
                               np.random.default_rng(6), m=n, details=True)
    freq = info["chosen"].mean(axis=0)
    p = category_probs([20, 4]).probs
    assert np.all(np.abs(freq - p) < 3 * np.sqrt(p * (1 - p) / n))


def test_delta_zero_groups_identical():
    s = make_schema((3,), 8)
    n = 50_000
    _, nv, info = perturb_batch(np.zeros((1, 1), np.int64), np.zeros((1, 8)), s,
                                SamplerConfig(delta=0.0), np.random.default_rng(7), m=n, details=True)
    up, down = nv[info["up"]], nv[info["down"]]
    assert abs(up.mean() - down.mean()) < 4 * np.sqrt(2 / 12 / up.size)
    assert abs(up.var() - down.var()) < 0.005


def test_continuous_only_and_single_field():
    s = make_schema((), 4)
    nc, nv = perturb_batch(np.zeros((2, 0), np.int64), np.zeros((2, 4)), s, SamplerConfig(),
                           np.random.default_rng(0))
    assert nc.shape == (20, 0) and nv.shape == (20, 4)
    s1 = make_schema((5,), 0)
    nc, _ = perturb_batch(np.array([[1]]), np.zeros((1, 0)), s1, SamplerConfig(),
                          np.random.default_rng(0))
    assert np.all(nc != 1)


def test_deterministic():
    s = make_schema()
    rec = EncodedRecord(np.array([0, 5, 1]), np.full(5, 0.3))
    a = perturb_record(rec, s, SamplerConfig(), np.random.default_rng(11))
    b = perturb_record(rec, s, SamplerConfig(), np.random.default_rng(11))
    assert len(a) == 10
    for x, y in zip(a, b):
        assert_array_equal(x.cat, y.cat)
        assert_array_equal(x.cont, y.cont)


def test_config_invariants():
    with pytest.raises(ValueError):
        SamplerConfig(negatives=0)
    with pytest.raises(ValueError):
        SamplerConfig(delta=-0.1)


# -- latent noise -----------------------------------------------------------

def test_latent_noise_disabled():
    z = np.ones((3, 4))
    assert inject_latent_noise(z, np.random.default_rng(0), enabled=False) is z


def test_latent_noise_variance():
    n = 100_000
    out = inject_latent_noise(np.zeros((n, 3)), np.random.default_rng(1))
    # var of sample variance for N(0,1) is 2/(n-1)
    assert np.all(np.abs(out.var(axis=0, ddof=1) - 1) < 3 * np.sqrt(2 / (n - 1)))


def test_latent_noise_covariance_additivity():
    rng = np.random.default_rng(2)
    A = rng.normal(size=(4, 4))
    errs = []
    for n in (1_000, 100_000):
        z = rng.normal(size=(n, 4)) @ A
        noisy = inject_latent_noise(z, rng)
        errs.append(np.linalg.norm(np.cov(noisy, rowvar=False) - np.cov(z, rowvar=False) - np.eye(4)))
    assert errs[1] < errs[0]
    assert errs[1] < 0.05


def test_latent_noise_needs_columns():
    with pytest.raises(ValueError):
        inject_latent_noise(np.zeros((3, 0)), np.random.default_rng(0))


def test_stats_report():
    s = make_schema((3, 12, 2), 8)
    st_ = sampler_stats(s, SamplerConfig(), 20_000, np.random.default_rng(0))
    assert st_["cont_perturbed_per_sample"] == 4.0
    assert abs(st_["up_noise_mean"] - 1.0) < 0.02
    assert abs(st_["down_noise_mean"]) < 0.02
    assert st_["mean_fields_selected"] == 1.0  # k=3 -> exactly one field
