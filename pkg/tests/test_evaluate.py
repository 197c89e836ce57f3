import numpy as np
import pytest

from agra.errors import ConfigError
from agra.evaluate import cluster_stats, embedding_rows, evaluate, pca_2d, per_class_accuracy
from agra.training import TrainConfig, train_stage1
from conftest import tiny_model_config


def test_pca_matches_independent_eigendecomposition():
    rng = np.random.default_rng(0)
    X = rng.standard_normal((200, 5)) @ rng.standard_normal((5, 5))
    proj, comps, var = pca_2d(X)
    Xc = X - X.mean(0)
    # independent route: singular vectors of the centred data
    _, s, Vt = np.linalg.svd(Xc, full_matrices=False)
    assert np.allclose(var, s[:2] ** 2 / (len(X) - 1), rtol=1e-10)
    for i in range(2):
        ref = Xc @ Vt[i]
        assert min(np.max(np.abs(proj[:, i] - ref)), np.max(np.abs(proj[:, i] + ref))) <= 1e-6
    assert var[0] >= var[1]
    assert np.var(proj[:, 0], ddof=1) >= np.var(proj[:, 1], ddof=1)


def test_pca_sign_convention():
    X = np.random.default_rng(1).standard_normal((50, 4))
    _, comps, _ = pca_2d(X)
    for row in comps:
        assert row[np.argmax(np.abs(row))] > 0
    _, flipped, _ = pca_2d(-X)
    assert np.allclose(comps, flipped)


def test_pca_needs_two_rows():
    with pytest.raises(ConfigError):
        pca_2d(np.ones((1, 3)))


def test_per_class_accuracy():
    out = per_class_accuracy(np.array([0, 1, 1, 2]), np.array([0, 1, 2, 2]), 4)
    assert out[:3] == [1.0, 1.0, 0.5] and np.isnan(out[3])


@pytest.fixture
def trained(tiny_pair):
    source, target = tiny_pair
    cfg = tiny_model_config(node_dim=8, hidden_dim=8)
    r = train_stage1(source, target, cfg, TrainConfig(lr_fg=3e-3, stage1_epochs=2, seed=1))
    return r.params, cfg, r.bank, source, target


def test_evaluate_report(trained):
    params, cfg, bank, source, target = trained
    rep = evaluate(params, cfg, bank, source, target)
    assert 0 <= rep["src_acc"] <= 1 and 0 <= rep["tgt_acc"] <= 1 and 0 <= rep["d_acc"] <= 1
    assert 0 <= rep["proxy_a_distance"] <= 2
    assert len(rep["per_class_tgt_acc"]) == 3
    only_source = evaluate(params, cfg, bank, source)
    assert only_source["src_acc"] == rep["src_acc"] and np.isnan(only_source["d_acc"])
    with pytest.raises(ConfigError):
        evaluate(params, cfg, bank, target, None)


def test_embedding_rows(trained):
    params, cfg, bank, source, target = trained
    rows = embedding_rows(params, cfg, bank, [source, target])
    assert len(rows) == len(source) + len(target)
    assert rows[0]["domain"] == "s" and rows[-1]["domain"] == "t"
    assert rows[-1]["label"] == int(target.eval_labels[-1])


def test_cluster_stats(trained):
    params, cfg, bank, source, target = trained
    rows = cluster_stats(bank, params, cfg, [source, target])
    assert len(rows) == 2 * bank.n_clusters
    assert sum(r["count"] for r in rows if r["domain"] == "s") == len(source)
    r0 = rows[0]
    assert r0["mean_norm"] == pytest.approx(np.linalg.norm(bank.means[0, 0]))
    assert r0["norm_h"] == pytest.approx(np.linalg.norm(bank.means[0, 0, 0]))
    bare = cluster_stats(bank)
    assert all(r["count"] == "" for r in bare)
