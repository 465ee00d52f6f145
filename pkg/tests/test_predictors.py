import numpy as np
import pytest
from numpy.testing import assert_allclose, assert_array_equal

from labeltrick import Graph, LabelMatrix, closed_form_operator, explicit_operator, sample_split
from labeltrick.predictors import (Affine, ModelWeights, OneHidden, composite_predict, cs_components,
                                   cs_trainable_predict, cs_vanilla_predict, feat_label_predict, lp_predict,
                                   nonlinear_toy_predict, scale_correction, self_excluded_labels,
                                   self_excluded_predict, stochastic_predict)
from labeltrick.splits import full_input_split

from conftest import random_problem


def test_lp_on_two_node_graph():
    op = closed_form_operator(Graph(2, [(0, 1)]).normalized_adjacency, 0.5)
    labels = LabelMatrix.from_classes([0, 1], [0], 2)
    # P = 0.5 (I - 0.5 S)^{-1} with S = [[0,1],[1,0]]
    p = 0.5 * np.linalg.inv(np.array([[1, -0.5], [-0.5, 1]]))
    assert_allclose(lp_predict(op, labels), p @ np.array([[1, 0], [0, 0]]))


def test_self_excluded_zero_on_diagonal_only_operator():
    op = explicit_operator(np.diag([0.3, 0.5, 0.9]))
    labels = LabelMatrix.from_classes([0, 1, 0], [0, 1, 2])
    assert_array_equal(self_excluded_labels(op, labels), 0)


def test_self_excluded_hides_own_label(small_problem):
    op, _, labels, _ = small_problem
    p = op.dense()
    se = self_excluded_labels(op, labels)
    assert_allclose(se, (p - np.diag(np.diag(p))) @ labels.y_tr, atol=1e-15)
    # changing a training node's own label leaves its own prediction unchanged
    i = labels.train_idx[0]
    y2 = labels.Y.copy()
    y2[i] = np.roll(y2[i], 1)
    other = LabelMatrix(y2, labels.train_idx)
    assert_allclose(self_excluded_labels(op, other)[i], se[i], atol=1e-15)


def test_self_excluded_exact_on_test_rows(small_problem):
    op, _, labels, _ = small_problem
    test = ~labels.train_mask
    assert_array_equal(self_excluded_labels(op, labels)[test], lp_predict(op, labels)[test])


def test_weight_checks():
    with pytest.raises(ValueError):
        ModelWeights("lp_w", {})
    with pytest.raises(ValueError):
        ModelWeights("nope", {})
    with pytest.raises(ValueError):
        ModelWeights("lp_w", {"W": [[np.nan]]})
    w = ModelWeights.lp(3)
    with pytest.raises(ValueError):
        w.replace(W=np.eye(2))
    with pytest.raises(ValueError):
        self_excluded_predict(closed_form_operator(Graph(3, [(0, 1)]).normalized_adjacency),
                              LabelMatrix.from_classes([0, 1, 2], [0]), ModelWeights.feat_label(1, 3))


def test_feat_label_reduces_to_lp_and_features(small_problem):
    op, x, labels, rng = small_problem
    c, d = labels.c, x.shape[1]
    w = ModelWeights("feat_label", {"W_x": np.zeros((d, c)), "W_y": np.eye(c)})
    assert_allclose(feat_label_predict(op, x, labels, w), self_excluded_labels(op, labels))
    wx = rng.standard_normal((d, c))
    w = ModelWeights("feat_label", {"W_x": wx, "W_y": np.zeros((c, c))})
    assert_allclose(feat_label_predict(op, x, labels, w), op.dense() @ x @ wx)


def test_stochastic_predict_uses_scaled_inputs(small_problem):
    op, x, labels, rng = small_problem
    c, d = labels.c, x.shape[1]
    w = ModelWeights("feat_label", {"W_x": rng.standard_normal((d, c)), "W_y": rng.standard_normal((c, c))})
    mask = sample_split(labels, 0.4, seed=2)
    y_in = np.where(mask.in_mask[:, None], labels.Y, 0) / 0.4
    expected = op.dense() @ (x @ w["W_x"] + y_in @ w["W_y"])
    assert_allclose(stochastic_predict(op, x, labels, mask, w), expected)


def test_composite_linear_matches_self_excluded(small_problem):
    op, x, labels, rng = small_problem
    c, d = labels.c, x.shape[1]
    wx, wy = rng.standard_normal((d, c)), rng.standard_normal((c, c))
    h1 = Affine(np.vstack([wx, wy]))
    out = composite_predict([op], x, labels, h1=h1)
    w = ModelWeights("feat_label", {"W_x": wx, "W_y": wy})
    assert_allclose(out, feat_label_predict(op, x, labels, w), atol=1e-13)


def test_composite_width_check(small_problem):
    op, x, labels, rng = small_problem
    k = x.shape[1] + labels.c
    h1 = OneHidden(rng.standard_normal((k, 4)), np.zeros(4), rng.standard_normal((4, 2)), np.zeros(2))
    assert composite_predict([op], x, labels, h1=h1).shape == (labels.n, 2)
    with pytest.raises(ValueError, match="width"):
        composite_predict([op, op], x, labels, h1=h1)


def test_composite_blocks_own_label_with_nonlinear_h0(small_problem):
    op, x, labels, rng = small_problem
    w0 = rng.standard_normal((x.shape[1] + labels.c, 5))
    h0 = lambda z: np.tanh(z @ w0)
    base = composite_predict([op], x, labels, h0=h0)
    i = labels.train_idx[1]
    y2 = labels.Y.copy()
    y2[i] = np.roll(y2[i], 1)
    moved = composite_predict([op], x, LabelMatrix(y2, labels.train_idx), h0=h0)
    assert_allclose(moved[i], base[i], atol=1e-13)


def test_nonlinear_toy_identity_is_linear(small_problem):
    op, x, labels, _ = small_problem
    w = ModelWeights.toy(x.shape[1], labels.c, 16, seed=1)
    y = labels.y_tr
    lin = nonlinear_toy_predict(op, x, y, w, "identity")
    assert_allclose(lin, op.dense() @ np.hstack([x, y]) @ w["W1"] @ w["W2"])
    with pytest.raises(ValueError):
        nonlinear_toy_predict(op, x, y, w, "relu")


def test_scale_correction_autoscale():
    err = np.array([[1.0, -1.0], [0.0, 0.0], [0.5, 0.5]])
    prop = np.array([[0.2, 0.2], [0.0, 0.0], [1.0, -3.0]])
    mask = np.array([True, False, True])
    out = scale_correction(prop, err, mask)
    sigma = (2.0 + 1.0) / 2
    assert_allclose(np.abs(out).sum(axis=1), [sigma, 0, sigma])
    assert_allclose(scale_correction(prop, err, mask, "identity"), prop)
    assert_array_equal(scale_correction(prop, err, np.zeros(3, bool)), 0)


def test_cs_initial_weights_give_smooth_only(small_problem):
    op, _, labels, rng = small_problem
    base = rng.dirichlet(np.ones(labels.c), size=labels.n)
    mask = sample_split(labels, 0.5, seed=0)
    y_s, y_c = cs_components(op, op, base, labels, mask)
    w = ModelWeights.cs(labels.c)
    assert_allclose(cs_trainable_predict(op, op, base, labels, mask, w), y_s)
    # D_in rows carry true labels, everything else the base prediction
    blended = np.where(mask.in_mask[:, None], labels.Y, base)
    assert_allclose(y_s, op.dense() @ blended)


def test_cs_vanilla_identity_gamma_formula(small_problem):
    op, _, labels, rng = small_problem
    base = rng.dirichlet(np.ones(labels.c), size=labels.n)
    tr = labels.train_mask[:, None]
    err = np.where(tr, labels.Y - base, 0)
    corrected = base + op.dense() @ err
    expected = op.dense() @ np.where(tr, labels.Y, corrected)
    assert_allclose(cs_vanilla_predict(op, op, base, labels, "identity"), expected, atol=1e-14)


def test_cs_requires_matching_base(small_problem):
    op, _, labels, _ = small_problem
    with pytest.raises(ValueError):
        cs_components(op, op, np.ones((2, 2)), labels, full_input_split(labels))


@pytest.mark.parametrize("seed", range(3))
def test_cs_matches_unreparameterized_dense_form(seed):
    op_c, _, labels, rng = random_problem(30 + seed, n=10, m=6, lam=0.8)
    op_s = closed_form_operator(Graph(10, [(i, (i + 1) % 10) for i in range(10)]).normalized_adjacency, 0.5)
    c = labels.c
    base = rng.dirichlet(np.ones(c), size=10)
    mask = sample_split(labels, 0.5, seed=seed)
    w_s, w_c = rng.standard_normal((c, c)), rng.standard_normal((c, c))
    # step-by-step dense evaluation: P_s (Y_in + R (Y~ + E~_in W_c)) W_s with R masking non-input rows
    r = np.diag((~mask.in_mask).astype(float))
    y_in = np.diag(mask.in_mask.astype(float)) @ labels.Y
    e_in = op_c.dense() @ (y_in - np.diag(mask.in_mask.astype(float)) @ base)
    dense = op_s.dense() @ (y_in + r @ (base + e_in @ w_c)) @ w_s
    w = ModelWeights("cs_trainable", {"W_s": w_s, "W_c_hat": w_c @ w_s})
    got = cs_trainable_predict(op_c, op_s, base, labels, mask, w, "identity")
    assert_allclose(got, dense, rtol=1e-12, atol=1e-12)


def test_cs_exact_base_has_no_correction(small_problem):
    op, _, labels, _ = small_problem
    mask = sample_split(labels, 0.5, seed=4)
    _, y_c = cs_components(op, op, labels.Y, labels, mask)
    assert_array_equal(y_c, 0)


@pytest.mark.parametrize("seed", range(3))
def test_composite_equals_leave_one_out_sum_for_affine_h0(seed):
    op1, x, labels, rng = random_problem(40 + seed, n=15, m=9)
    op2 = closed_form_operator(Graph(15, [(i, i + 1) for i in range(14)]).normalized_adjacency, 0.3)
    k = x.shape[1] + labels.c
    a0, b0 = rng.standard_normal((k, 4)), rng.standard_normal(4)
    h0 = lambda z: z @ a0 + b0
    got = composite_predict([op1, op2], x, labels, h0=h0)
    brute = np.zeros_like(got)
    for i in range(labels.n):
        y_minus = labels.y_tr.copy()
        y_minus[i] = 0
        h = h0(np.hstack([x, y_minus]))
        brute[i] = np.concatenate([(op.dense() @ h)[i] for op in (op1, op2)])
    assert_allclose(got, brute, atol=1e-12)
