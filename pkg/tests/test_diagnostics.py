import csv
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from modbias import diagnostics, losses, models
from modbias.errors import EmptyErrorSet, NotADistribution, TooFewSamples

RNG = np.random.default_rng(0)


def _rand_dist(k, rng):
    p = rng.random(k) + 1e-9
    return p / p.sum()


# --------------------------------------------------------------------- jsd

def test_jsd_identical_is_zero():
    p = _rand_dist(10, RNG)
    assert diagnostics.jsd(p, p) == 0.0


def test_jsd_disjoint_is_one_bit():
    p = np.array([1.0, 0.0, 0.0])
    q = np.array([0.0, 0.5, 0.5])
    assert abs(diagnostics.jsd(p, q) - 1.0) < 1e-12


def test_jsd_half_half_vs_point_mass():
    p = np.array([0.5, 0.5])
    q = np.array([1.0, 0.0])
    assert abs(diagnostics.jsd(p, q) - 0.311278124459133) < 1e-9


def test_jsd_onehot_vs_uniform_ten_classes():
    one = np.zeros(10)
    one[4] = 1.0
    uni = np.full(10, 0.1)
    # closed form: (log2(1/0.55) + 0.1*log2(0.1/0.55) + 0.9) / 2
    expected = (math.log2(1 / 0.55) + 0.1 * math.log2(0.1 / 0.55) + 0.9) / 2
    assert abs(diagnostics.jsd(one, uni) - expected) < 1e-12
    assert abs(expected - 0.758277) < 5e-7


def test_jsd_matches_scipy():
    from scipy.spatial.distance import jensenshannon
    for seed in range(5):
        rng = np.random.default_rng(seed)
        p, q = _rand_dist(8, rng), _rand_dist(8, rng)
        expected = jensenshannon(p, q, base=2) ** 2
        assert abs(diagnostics.jsd(p, q) - expected) < 1e-12


def test_jsd_rejects_negative_entries():
    with pytest.raises(NotADistribution):
        diagnostics.jsd(np.array([1.1, -0.1]), np.array([0.5, 0.5]))


def test_jsd_rejects_bad_sum():
    with pytest.raises(NotADistribution):
        diagnostics.jsd(np.array([0.6, 0.6]), np.array([0.5, 0.5]))


def test_jsd_rejects_shape_mismatch():
    with pytest.raises(NotADistribution):
        diagnostics.jsd(np.array([0.5, 0.5]), np.array([1 / 3, 1 / 3, 1 / 3]))


@given(st.integers(2, 12), st.integers(0, 10_000))
@settings(max_examples=50, deadline=None)
def test_jsd_symmetry_and_bounds(k, seed):
    rng = np.random.default_rng(seed)
    p, q = _rand_dist(k, rng), _rand_dist(k, rng)
    a = diagnostics.jsd(p, q)
    b = diagnostics.jsd(q, p)
    assert abs(a - b) < 1e-12
    assert -1e-12 <= a <= 1.0 + 1e-12


# ------------------------------------------------------------- bias report

def _toy_setup():
    # factor 0: two wrong predictions; factor 1: all correct
    probs = np.array([
        [0.7, 0.2, 0.1],
        [0.6, 0.3, 0.1],
        [0.1, 0.8, 0.1],
        [0.2, 0.1, 0.7],
    ])
    preds = np.array([0, 0, 1, 2])
    labels = np.array([1, 2, 1, 2])     # first two wrong
    bias = np.array([0, 0, 1, 1])
    counts = np.array([[4.0, 4.0, 2.0], [1.0, 8.0, 1.0], [0.0, 0.0, 0.0]])
    return probs, preds, labels, bias, counts


def test_bias_jsd_report_mean_softmax():
    probs, preds, labels, bias, counts = _toy_setup()
    rows = diagnostics.bias_jsd_report(probs, preds, labels, bias, counts,
                                       mode="mean-softmax", n_factors=3)
    assert [r["factor"] for r in rows] == [0]
    assert rows[0]["n_wrong"] == 2
    mean_prob = probs[:2].mean(axis=0)
    train_cond = counts[0] / counts[0].sum()
    assert abs(rows[0]["jsd_bits"]
               - diagnostics.jsd(mean_prob, train_cond)) < 1e-12


def test_bias_jsd_report_argmax_hist():
    probs, preds, labels, bias, counts = _toy_setup()
    rows = diagnostics.bias_jsd_report(probs, preds, labels, bias, counts,
                                       mode="argmax-hist", n_factors=3)
    hist = np.array([2.0, 0.0, 0.0]) / 2.0
    train_cond = counts[0] / counts[0].sum()
    assert abs(rows[0]["jsd_bits"] - diagnostics.jsd(hist, train_cond)) < 1e-12


def test_bias_jsd_report_all_correct_raises():
    probs, _, labels, bias, counts = _toy_setup()
    with pytest.raises(EmptyErrorSet):
        diagnostics.bias_jsd_report(probs, labels, labels, bias, counts,
                                    n_factors=3)


def test_bias_jsd_report_ignores_correct_rows():
    probs, preds, labels, bias, counts = _toy_setup()
    base = diagnostics.bias_jsd_report(probs, preds, labels, bias, counts,
                                       mode="mean-softmax", n_factors=3)
    # perturb a correct row's probabilities; report must not move
    probs2 = probs.copy()
    probs2[2] = [0.05, 0.9, 0.05]
    rows = diagnostics.bias_jsd_report(probs2, preds, labels, bias, counts,
                                       mode="mean-softmax", n_factors=3)
    assert rows == base


def test_write_jsd_csv(tmp_path):
    probs, preds, labels, bias, counts = _toy_setup()
    rows = diagnostics.bias_jsd_report(probs, preds, labels, bias, counts,
                                       n_factors=3)
    path = tmp_path / "jsd.csv"
    diagnostics.write_jsd_csv(rows, str(path))
    with open(path, newline="") as fh:
        parsed = list(csv.DictReader(fh))
    assert parsed[0]["factor"] == "0"
    assert parsed[0]["n_wrong"] == "2"
    assert abs(float(parsed[0]["jsd_bits"]) - rows[0]["jsd_bits"]) < 1e-9


# -------------------------------------------------------------- sharpness

def test_sharpness_profiles_normalized_and_sorted():
    logits = RNG.normal(size=(64, 10)) * 8
    rows = RNG.uniform(0.05, 0.95, size=(64, 10))
    out = diagnostics.sharpness_compare(logits, rows, scale=16.0)
    assert set(out["profiles"]) == {"kd-T0.1", "kd-T1", "kd-T10", "adaptive"}
    for name, profile in out["profiles"].items():
        assert abs(profile.sum() - 1.0) < 1e-9, name
        assert np.all(np.diff(profile) >= -1e-12), name  # ascending


def test_sharpness_entropy_orderings():
    rng = np.random.default_rng(99)
    logits = rng.normal(size=(128, 10)) * 4
    # margin rows with spread >= 0.5 sharpen the adaptive profile
    rows = np.tile(np.linspace(0.1, 0.9, 10), (128, 1))
    out = diagnostics.sharpness_compare(logits, rows, scale=16.0)
    ent = out["entropy"]
    assert ent["kd-T10"] > ent["kd-T1"] > ent["kd-T0.1"]
    assert ent["adaptive"] < ent["kd-T1"]


def test_write_sharpness_csv(tmp_path):
    logits = RNG.normal(size=(16, 5))
    rows = RNG.uniform(0, 0.9, size=(16, 5))
    out = diagnostics.sharpness_compare(logits, rows)
    path = tmp_path / "sharp.csv"
    diagnostics.write_sharpness_csv(out, str(path))
    with open(path, newline="") as fh:
        parsed = list(csv.DictReader(fh))
    assert len(parsed) == 4 * 5  # methods x positions
    assert set(parsed[0]) == {"method", "position", "mean_prob",
                              "mean_entropy_bits"}


# ------------------------------------------------------------- embeddings

def test_export_embeddings_linear2d(tiny_iid):
    _, test = tiny_iid
    params = models.init_params("mlp", 0)
    pts, labels, bias = diagnostics.export_embeddings(params, test)
    assert pts.shape == (len(test), 2)
    assert np.abs(pts.mean(axis=0)).max() < 1e-9  # centered projection
    assert labels.shape == bias.shape == (len(test),)


def test_export_embeddings_cosine_angle(tiny_iid):
    _, test = tiny_iid
    params = models.init_params("mlp", 1)
    pts, *_ = diagnostics.export_embeddings(params, test,
                                            projection="cosine-angle",
                                            classes=(3, 7))
    assert pts.min() >= -1.0 - 1e-12 and pts.max() <= 1.0 + 1e-12


def test_export_embeddings_too_few(tiny_iid):
    _, test = tiny_iid
    params = models.init_params("mlp", 0)
    with pytest.raises(TooFewSamples):
        diagnostics.export_embeddings(params, test, max_samples=2)


def test_class_separation_ratio_orders_structure():
    rng = np.random.default_rng(3)
    labels = np.repeat([0, 1], 50)
    blob = rng.normal(size=(100, 2))
    separated = blob + np.where(labels[:, None] == 0, -8.0, 8.0)
    assert (diagnostics.class_separation_ratio(separated, labels)
            > diagnostics.class_separation_ratio(blob, labels) * 10)


def test_write_embedding_csv_and_svg(tmp_path):
    rng = np.random.default_rng(4)
    pts = rng.normal(size=(20, 2))
    labels = rng.integers(0, 10, 20)
    bias = rng.integers(0, 10, 20)
    cpath = tmp_path / "emb.csv"
    diagnostics.write_embedding_csv(pts, labels, bias, str(cpath))
    with open(cpath, newline="") as fh:
        parsed = list(csv.DictReader(fh))
    assert len(parsed) == 20
    assert set(parsed[0]) == {"x", "y", "label", "bias_factor"}

    spath = tmp_path / "emb.svg"
    diagnostics.svg_scatter(pts, labels, str(spath))
    text = spath.read_text()
    assert text.startswith("<svg") and "circle" in text


# ------------------------------------------------------------ model probs

def test_model_probs_rows_normalized(tiny_iid):
    _, test = tiny_iid
    params = models.init_params("mlp", 2)
    probs, preds = diagnostics.model_probs(params, test)
    assert probs.shape == (len(test), 10)
    assert np.abs(probs.sum(axis=1) - 1.0).max() < 1e-9
    assert preds.shape == (len(test),)


def test_model_probs_mmdb_uses_margin_rows(tiny_iid):
    train, test = tiny_iid
    from modbias import margins
    counts = margins.count_bias(train.labels, train.bias)
    table = margins.margins_from_counts(counts)
    params = models.init_params("mlp", 2)
    probs, _ = diagnostics.model_probs(params, test, loss_kind="mmdb",
                                       margin_table=table)
    feats = models.forward(params, test.float_pixels(slice(0, 4)))[0]
    cos = losses.cosine_logits(params["W"], feats)
    expected = losses.stable_softmax(16.0 * (cos - table[test.bias[:4]]))
    assert np.abs(probs[:4] - expected).max() < 1e-12
