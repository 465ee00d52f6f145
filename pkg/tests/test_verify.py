import numpy as np
import pytest
from numpy.testing import assert_allclose

from labeltrick import explicit_operator
from labeltrick.verify import (appendix_closed_forms, appendix_expectations, mask_moments, random_instance,
                               heldout_row_gap, run_suite, thm3_fixture, verify_appendix_identities,
                               verify_corollary1, verify_theorem1, verify_theorem2, verify_theorem3)
from labeltrick.objectives import mse_deterministic_rhs
from labeltrick.propagation import gamma_matrix
from labeltrick.predictors import ModelWeights


def test_special_instances():
    edgeless = random_instance(0, 1, 0)
    assert np.count_nonzero(edgeless.op.dense() - np.diag(np.diag(edgeless.op.dense()))) == 0
    assert np.all(gamma_matrix(edgeless.op, edgeless.labels) == 0)
    complete = random_instance(0, 1, 1)
    assert np.any(gamma_matrix(complete.op, complete.labels) != 0)


def test_instances_are_counter_seeded():
    a, b = random_instance(5, 1, 7), random_instance(5, 1, 7)
    assert_allclose(a.op.dense(), b.op.dense())
    assert np.array_equal(a.labels.train_idx, b.labels.train_idx)


@pytest.mark.parametrize("suite", [verify_theorem1, verify_corollary1, verify_theorem2, verify_appendix_identities])
def test_suites_pass_small(suite):
    rep = suite(25, seed=4)
    assert rep.passed and rep.instances == 25
    assert rep.failures == []


def test_empty_suite_passes():
    rep = verify_theorem1(0, 0)
    assert rep.passed and rep.instances == 0
    assert "status=PASS" in rep.to_text()
    assert all(r.passed for r in run_suite("all", 0))


def test_report_text_layout():
    rep = verify_theorem1(3, 1)
    lines = rep.to_text().splitlines()
    assert lines[0].startswith("# suite=thm1 instances=3")
    assert lines[1].split("\t") == ["seed", "n", "m", "alpha", "gap", "status"]
    assert [int(l.split("\t")[0]) for l in lines[2:5]] == [0, 1, 2]
    assert lines[-1].endswith("status=PASS")


def test_failure_is_recorded(monkeypatch):
    import labeltrick.verify as v
    monkeypatch.setattr(v, "IDENTITY_TOL", -1.0)
    rep = v.verify_theorem1(2, 0)
    assert not rep.passed and len(rep.failures) == 2
    assert "FAIL" in rep.to_text()


def test_theorem3_report():
    rep = verify_theorem3()
    assert rep.passed
    gaps = [r.gap for r in rep.records]
    assert gaps[0] > gaps[1] > gaps[2] and gaps[2] <= 0.02


def test_theorem3_linear_case_matches_self_excluded_loss():
    op, x, labels, w = thm3_fixture(3)
    from labeltrick.objectives import thm3_limit_target
    d = x.shape[1]
    lin = ModelWeights("feat_label", {"W_x": w["W1"][:d] @ w["W2"], "W_y": w["W1"][d:] @ w["W2"]})
    assert thm3_limit_target(op, x, labels, w, "identity") == pytest.approx(
        mse_deterministic_rhs(op, x, labels, lin, 1.0), abs=1e-8)


def test_mask_moments():
    z1, z2, z3 = mask_moments(3, 0.3)
    assert_allclose(z1, 0.3)
    assert_allclose(z2, 0.09 + 0.21 * np.eye(3))
    assert_allclose(z3[0, 1, 2], 0.027)
    assert_allclose(z3[1, 1, 1], 0.3)
    assert_allclose(z3[0, 0, 2], 0.09)


def test_appendix_diagonal_p_has_no_cross_term():
    p = np.diag([0.2, 0.4, 0.6, 0.8])
    y = np.eye(4)[:, :2]
    forms = appendix_closed_forms(p, [0, 2, 3], y, 0.5)
    assert np.all(forms["cross"] == 0)
    exact = appendix_expectations(p, [0, 2, 3], y, 0.5)
    for k in forms:
        assert_allclose(forms[k], exact[k], atol=1e-15)


def test_appendix_general_forms_differ_from_symmetric_print_for_asymmetric_p():
    rng = np.random.default_rng(0)
    p = rng.random((5, 5))
    t = [0, 1, 3, 4]
    exact = appendix_expectations(p, t, np.eye(5)[:, :2], 0.4)
    forms = appendix_closed_forms(p, t, np.eye(5)[:, :2], 0.4)
    assert_allclose(forms["d"], exact["d"], atol=1e-13)
    mtr = np.diag(np.isin(np.arange(5), t).astype(float))
    ptr = mtr @ p @ mtr
    printed = forms["d"] - 0.4 ** 3 * (ptr.T @ ptr) + 0.4 ** 3 * ptr @ ptr
    assert np.max(np.abs(printed - exact["d"])) > 1e-3


def test_row_gap_on_explicit_operator():
    inst = random_instance(2, 5, 9)
    op = explicit_operator(np.random.default_rng(1).random((inst.labels.n,) * 2))
    assert heldout_row_gap(op, inst.labels) == 0.0


@pytest.mark.parametrize("seed", range(3))
def test_appendix_monte_carlo_within_four_se(seed):
    rng = np.random.default_rng(seed)
    m, alpha = 6, float(rng.uniform(0.2, 0.8))
    p = rng.random((m, m))
    y = np.eye(m)[:, :3]
    forms = appendix_closed_forms(p, np.arange(m), y, alpha)
    z = (rng.random((100_000, m)) < alpha).astype(float)
    samples = {
        "a": np.einsum("ki,ij->kij", 1 - z, np.eye(m)),
        "b": np.einsum("ki,ij,kj->kij", z, p, z),
        "c": np.einsum("ki,ij,kj->kij", z, p.T @ p, z),
        "d": np.einsum("ki,li,kl,lj,kj->kij", z, p, z, p, z),
        "cross": np.einsum("ki,ij,kj,jc->kic", 1 - z, p, z, y),
    }
    for name, s in samples.items():
        se = s.std(axis=0, ddof=1) / np.sqrt(len(s))
        assert np.all(np.abs(s.mean(axis=0) - forms[name]) <= 4 * se + 1e-12), name
