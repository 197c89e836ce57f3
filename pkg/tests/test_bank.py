import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from sklearn.metrics import adjusted_rand_score

from agra.bank import (
    ClassDistributionBank,
    align_clusters,
    assign_cluster,
    assign_clusters,
    assignment_records,
    distortion,
    initialize_bank,
    kmeans,
    maybe_recluster,
    update_moving_average,
    _lloyd,
    _kmeanspp,
)
from agra.errors import ConfigError, NumericError, StateError


def planted_blobs(seed, n_per=50, k=4, dim=8, sep=10.0, std=1.0):
    rng = np.random.default_rng(seed)
    # centers on scaled orthogonal axes: every pair sits sep*std*sqrt(2) >= 10 std apart
    centers = sep * std * np.eye(max(k, dim))[:k, :dim]
    labels = np.repeat(np.arange(k), n_per)
    return centers[labels] + std * rng.standard_normal((len(labels), dim)), labels


def random_bank(seed=0, C=4, d=3):
    return ClassDistributionBank(np.random.default_rng(seed).standard_normal((2, C, 6, d)))


# ---------------------------------------------------------------- kmeans

def test_kmeans_two_blobs_exact_recovery():
    X, y = planted_blobs(0, k=2)
    a, _ = kmeans(X, 2, seed=0)
    assert adjusted_rand_score(y, a) == 1.0


def test_kmeans_planted_recovery_over_20_seeds():
    aris = []
    for seed in range(20):
        X, y = planted_blobs(seed, k=5)
        a, _ = kmeans(X, 5, seed=seed)
        aris.append(adjusted_rand_score(y, a))
    assert min(aris) >= 0.99


def test_kmeans_identical_points():
    X = np.tile([1.5, -2.0, 0.25], (10, 1))
    a, c = kmeans(X, 1)
    assert np.array_equal(c[0], X[0]) and np.all(a == 0)


def test_kmeans_one_cluster_per_point():
    X = np.random.default_rng(1).standard_normal((6, 3))
    a, c = kmeans(X, 6, seed=3)
    assert distortion(X, a, c) == 0.0
    assert sorted(a) == list(range(6))


def test_kmeans_errors():
    with pytest.raises(ValueError):
        kmeans(np.zeros((3, 2)), 4)
    with pytest.raises(ValueError):
        kmeans(np.zeros((0, 2)), 1)
    with pytest.raises(ValueError):
        kmeans(np.zeros((3, 2)), 0)


def test_kmeans_deterministic():
    X, _ = planted_blobs(4, k=3)
    a1, c1 = kmeans(X, 3, seed=11)
    a2, c2 = kmeans(X, 3, seed=11)
    assert np.array_equal(a1, a2) and np.array_equal(c1, c2)


def test_kmeans_distortion_non_increasing():
    X = np.random.default_rng(5).standard_normal((80, 4))
    centroids = _kmeanspp(X, 5, np.random.default_rng(0))
    costs = []
    for _ in range(15):
        a, centroids = _lloyd(X, centroids, max_iter=1, tol=0.0)
        costs.append(distortion(X, a, centroids))
    assert all(b <= a + 1e-9 for a, b in zip(costs, costs[1:]))


def test_kmeans_reseeds_empty_cluster():
    X = np.array([[0.0], [0.1], [10.0], [10.1]])
    a, c = kmeans(X, 3, init=np.array([[0.0], [10.0], [100.0]]))
    assert len(set(a.tolist())) == 3


# ---------------------------------------------------------------- alignment

def test_align_clusters_matches_brute_force():
    rng = np.random.default_rng(6)
    for _ in range(10):
        ref, means = rng.standard_normal((5, 6, 2)), rng.standard_normal((5, 6, 2))

        def cost(p):
            return sum(((ref[i] - means[p[i]]) ** 2).sum() for i in range(5))

        best = min(itertools.permutations(range(5)), key=cost)
        assert np.isclose(cost(best), sum(((ref - align_clusters(ref, means)) ** 2).sum(axis=(1, 2))))


# ---------------------------------------------------------------- initialisation

def test_initialize_one_sample_per_class():
    rng = np.random.default_rng(7)
    Fs = rng.standard_normal((4, 6, 3))
    bank = initialize_bank(Fs, np.arange(4), rng.standard_normal((10, 6, 3)), 4)
    assert np.array_equal(bank.domain_means("s"), Fs)


def test_initialize_identical_domains():
    X, y = planted_blobs(8, n_per=30, k=3, dim=18)
    F = X.reshape(len(X), 6, 3)
    bank = initialize_bank(F, y, F[::-1].copy(), 3)
    assert np.max(np.abs(bank.domain_means("t") - bank.domain_means("s"))) <= 1e-9


def test_initialize_single_cluster_is_global_mean():
    rng = np.random.default_rng(9)
    Fs, Ft = rng.standard_normal((20, 6, 3)), rng.standard_normal((15, 6, 3))
    bank = initialize_bank(Fs, rng.integers(0, 5, 20), Ft, 1)
    assert bank.means.shape == (2, 1, 6, 3)
    assert np.allclose(bank.means[0, 0], Fs.sum(axis=0) / 20, rtol=0, atol=1e-12)
    assert np.allclose(bank.means[1, 0], Ft.sum(axis=0) / 15, rtol=0, atol=1e-12)


def test_initialize_kmeans_source_mode():
    X, y = planted_blobs(10, n_per=20, k=3, dim=18)
    F = X.reshape(len(X), 6, 3)
    bank = initialize_bank(F, None, F, 3, mode="kmeans")
    assert bank.source_mode == "kmeans" and bank.means.shape == (2, 3, 6, 3)


def test_initialize_errors():
    rng = np.random.default_rng(11)
    F = rng.standard_normal((6, 6, 2))
    with pytest.raises(StateError):
        initialize_bank(F, np.array([0, 0, 1, 1, 3, 3]), F, 4)
    with pytest.raises(ConfigError):
        initialize_bank(F, np.array([0, 1, 2, 3, 4, 5]), F, 3)
    with pytest.raises(ConfigError):
        initialize_bank(F, np.zeros(6, dtype=int), F, 1, mode="median")


def test_bank_invariants():
    with pytest.raises(ConfigError):
        ClassDistributionBank(np.zeros((2, 3, 5, 4)))
    with pytest.raises(ConfigError):
        ClassDistributionBank(np.zeros((2, 3, 6, 4)), alpha=1.5)
    bad = np.zeros((2, 3, 6, 4))
    bad[0, 0, 0, 0] = np.nan
    with pytest.raises(NumericError):
        ClassDistributionBank(bad)


# ---------------------------------------------------------------- assignment

def test_assign_exact_match():
    bank = random_bank(C=5)
    assert assign_cluster(bank.domain_means("t")[3], bank, "t") == 3


def test_assign_tie_goes_to_lowest_index():
    means = np.random.default_rng(12).standard_normal((2, 5, 6, 3))
    means[0, 4] = means[0, 1]
    bank = ClassDistributionBank(means)
    probe = means[0, 1] + 0.0
    assert assign_cluster(probe, bank, "s") == 1


def test_assign_matches_brute_force():
    rng = np.random.default_rng(13)
    bank = random_bank(13, C=6, d=4)
    F = rng.standard_normal((50, 6, 4))
    got = assign_clusters(F, bank, "s")
    for i in range(50):
        dists = [sum(np.sum((F[i, k] - bank.means[0, c, k]) ** 2) for k in range(6)) for c in range(6)]
        assert got[i] == int(np.argmin(dists))
    rec = assignment_records(F[:3], bank, "s")
    assert [r.cluster for r in rec] == got[:3].tolist() and all(r.distance >= 0 for r in rec)


def test_assign_non_finite():
    bank = random_bank()
    with pytest.raises(NumericError):
        assign_cluster(np.full((6, 3), np.nan), bank, "s")


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**31 - 1), st.floats(0.01, 100.0))
def test_assign_scale_consistent(seed, scale):
    rng = np.random.default_rng(seed)
    bank = random_bank(seed)
    F = rng.standard_normal((10, 6, 3))
    scaled = ClassDistributionBank(bank.means * scale)
    assert np.array_equal(assign_clusters(F, bank, "t"), assign_clusters(F * scale, scaled, "t"))


# ---------------------------------------------------------------- moving average

def test_ema_single_step_value():
    bank = ClassDistributionBank(np.zeros((2, 2, 6, 3)), alpha=0.1)
    out = update_moving_average(bank, np.ones((1, 6, 3)), [0], "s")
    assert np.allclose(out.means[0, 0], 0.1, rtol=0, atol=1e-15)
    assert np.array_equal(out.means[0, 1], bank.means[0, 1])


def test_ema_alpha_zero_is_noop():
    bank = ClassDistributionBank(random_bank(1).means, alpha=0.0)
    out = update_moving_average(bank, np.random.default_rng(1).standard_normal((8, 6, 3)), [0, 1, 2, 3] * 2, "t")
    assert np.array_equal(out.means, bank.means)


def test_ema_empty_cluster_bitwise_unchanged():
    bank = random_bank(2, C=4)
    out = update_moving_average(bank, np.random.default_rng(2).standard_normal((5, 6, 3)), [0, 0, 2, 2, 0], "s")
    for c in (1, 3):
        assert out.means[0, c].tobytes() == bank.means[0, c].tobytes()
    assert out.means[1].tobytes() == bank.means[1].tobytes()


def test_ema_does_not_mutate_input():
    bank = random_bank(3)
    before = bank.means.copy()
    update_moving_average(bank, np.ones((2, 6, 3)), [0, 1], "s")
    assert np.array_equal(bank.means, before)


def test_ema_fixed_point_residual():
    rng = np.random.default_rng(4)
    target = rng.uniform(-1, 1, (6, 3))
    means = np.zeros((2, 1, 6, 3))
    means[0, 0] = target + rng.uniform(-1, 1, (6, 3))  # unit-scale initial gap
    bank = ClassDistributionBank(means, alpha=0.1)
    gap0 = np.max(np.abs(bank.means[0, 0] - target))
    for _ in range(200):
        bank = update_moving_average(bank, target[None], [0], "s")
    residual = np.max(np.abs(bank.means[0, 0] - target))
    assert residual <= 0.9 ** 200 * gap0 + 1e-13  # allowance for rounding over 200 steps
    assert residual <= 1e-6


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**31 - 1), st.floats(0.0, 1.0))
def test_ema_convex_combination(seed, alpha):
    rng = np.random.default_rng(seed)
    bank = ClassDistributionBank(rng.standard_normal((2, 1, 6, 3)), alpha=alpha)
    F = rng.standard_normal((4, 6, 3))
    out = update_moving_average(bank, F, [0] * 4, "t")
    old, new, batch = bank.means[1, 0], out.means[1, 0], F.mean(axis=0)
    lo, hi = np.minimum(old, batch), np.maximum(old, batch)
    assert np.all(new >= lo - 1e-12) and np.all(new <= hi + 1e-12)


def test_ema_errors():
    bank = random_bank()
    with pytest.raises(ConfigError):
        update_moving_average(bank, np.zeros((0, 6, 3)), [], "s")
    with pytest.raises(NumericError):
        update_moving_average(bank, np.full((1, 6, 3), np.inf), [0], "s")


# ---------------------------------------------------------------- reclustering

def recluster_inputs(seed=14):
    rng = np.random.default_rng(seed)
    Fs, Ft = rng.standard_normal((30, 6, 3)), rng.standard_normal((30, 6, 3))
    ys = np.arange(30) % 3
    bank = initialize_bank(Fs, ys, Ft, 3, recluster_period=10)
    return bank, Fs + 1.0, Ft - 1.0, ys


def test_recluster_off_period():
    bank, Fs, Ft, ys = recluster_inputs()
    assert maybe_recluster(bank, 7, Fs, Ft, ys) is bank
    assert maybe_recluster(bank, 0, Fs, Ft, ys) is bank


def test_recluster_on_period():
    bank, Fs, Ft, ys = recluster_inputs()
    fresh = initialize_bank(Fs, ys, Ft, 3, recluster_period=10)
    assert np.array_equal(maybe_recluster(bank, 10, Fs, Ft, ys).means, fresh.means)


def test_recluster_disabled():
    bank, Fs, Ft, ys = recluster_inputs()
    assert maybe_recluster(bank, 10, Fs, Ft, ys, enabled=False) is bank


def test_mean_mode_shape():
    rng = np.random.default_rng(15)
    bank = initialize_bank(rng.standard_normal((10, 6, 64)), np.arange(10) % 7, rng.standard_normal((10, 6, 64)), 1)
    assert bank.means.shape == (2, 1, 6, 64)
