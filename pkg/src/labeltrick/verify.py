"""Randomized batteries checking the label-trick identities and bounds.

Every suite draws instance ``i`` from ``make_rng(master_seed, suite_tag, i)``
so reports depend only on the master seed. Reports are plain text: a
header line, one tab-separated record per instance, and a summary line.
Wall time is kept on the report object but left out of the text so that
reruns are byte-identical.
"""
from __future__ import annotations

import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from ._rng import make_rng
from .data_io import make_erdos_renyi
from .errors import NumericalIntegrityError
from .graph import Graph
from .objectives import (ce_jensen_gap, mse_deterministic_rhs, mse_identity_report, thm3_limit_target,
                         thm3_scaled_loss)
from .predictors import ModelWeights, lp_predict, self_excluded_labels
from .propagation import PropagationOperator, closed_form_operator, explicit_operator
from .splits import LabelMatrix, split_table

IDENTITY_TOL = 1e-10
BOUND_SLACK = 1e-9
THM3_ALPHAS = (0.9, 0.99, 0.999)
THM3_REL_TOL = 0.02
ALPHA_GRID = (0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9)
SUITE_TAGS = {"thm1": 1, "cor1": 2, "thm2": 3, "thm3": 4, "appendix": 5}


@dataclass(frozen=True)
class InstanceRecord:
    seed: int
    n: int
    m: int
    alpha: float
    gap: float
    passed: bool

    def line(self) -> str:
        return (f"{self.seed}\t{self.n}\t{self.m}\t{self.alpha:.6g}\t{self.gap:.6e}\t"
                f"{'pass' if self.passed else 'FAIL'}")


@dataclass
class VerificationSuiteReport:
    suite: str
    tolerance: float
    gap_kind: str = "relative"
    records: list = field(default_factory=list)
    notes: list = field(default_factory=list)
    wall_time: float = 0.0

    @property
    def instances(self) -> int:
        return len(self.records)

    @property
    def max_rel_gap(self) -> float:
        return max((r.gap for r in self.records), default=0.0)

    @property
    def failures(self) -> list:
        return [(r.seed, r.gap) for r in self.records if not r.passed]

    @property
    def passed(self) -> bool:
        return not self.failures

    def to_text(self) -> str:
        self.records.sort(key=lambda r: r.seed)
        lines = [f"# suite={self.suite} instances={self.instances} tolerance={self.tolerance:g} "
                 f"gap={self.gap_kind}",
                 "seed\tn\tm\talpha\tgap\tstatus"]
        lines += [r.line() for r in self.records]
        lines += [f"# {note}" for note in self.notes]
        lines.append(f"# max_gap={self.max_rel_gap:.6e} failures={len(self.failures)} "
                     f"status={'PASS' if self.passed else 'FAIL'}")
        return "\n".join(lines) + "\n"


def write_report(path, reports) -> Path:
    path = Path(path)
    path.write_bytes("".join(r.to_text() for r in reports).encode("utf-8"))
    return path


# instances ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class Instance:
    op: PropagationOperator
    labels: LabelMatrix
    alpha: float
    rng: np.random.Generator


def random_instance(seed: int, tag: int, i: int, max_n: int = 16, max_m: int = 10) -> Instance:
    """Erdos-Renyi graph with random size, density, training set, labels and alpha.

    Instance 0 is edgeless and instance 1 a complete graph, so both
    extremes of the penalty are always covered.
    """
    rng = make_rng(seed, tag, i)
    n = int(rng.integers(4, max_n + 1))
    p = 0.0 if i == 0 else 1.0 if i == 1 else float(rng.uniform(0.1, 0.9))
    g = make_erdos_renyi(n, p, int(rng.integers(2 ** 31)))
    lam = float(rng.uniform(0.3, 0.9))
    op = closed_form_operator(g.normalized_adjacency, lam)
    m = int(rng.integers(2, min(n, max_m) + 1))
    c = int(rng.integers(2, 5))
    train = rng.choice(n, size=m, replace=False)
    labels = LabelMatrix.from_classes(rng.integers(0, c, size=n), train, c)
    alpha = float(rng.choice(ALPHA_GRID))
    return Instance(op, labels, alpha, rng)


def heldout_row_gap(op: PropagationOperator, labels: LabelMatrix) -> float:
    """Largest difference between self-excluded and plain LP on non-training rows (should be exactly 0)."""
    test = ~labels.train_mask
    if not test.any():
        return 0.0
    return float(np.max(np.abs(self_excluded_labels(op, labels)[test] - lp_predict(op, labels)[test])))


def _timed(fn):
    def wrapper(*args, **kwargs):
        start = time.perf_counter()
        report = fn(*args, **kwargs)
        report.wall_time = time.perf_counter() - start
        report.records.sort(key=lambda r: r.seed)
        return report
    wrapper.__name__ = fn.__name__
    wrapper.__doc__ = fn.__doc__
    return wrapper


def _mse_suite(name, n_instances, seed, with_features):
    report = VerificationSuiteReport(name, IDENTITY_TOL)
    tr_fail = 0
    for i in range(n_instances):
        inst = random_instance(seed, SUITE_TAGS[name], i)
        rng, labels = inst.rng, inst.labels
        c = labels.c
        if with_features:
            d = int(rng.integers(1, 6))
            x = rng.standard_normal((labels.n, d))
            w_x = rng.standard_normal((d, c))
            if i == 2:
                x = np.zeros_like(x)  # reduces to the label-only identity
        else:
            x, w_x = None, np.zeros((0, c))
        w = ModelWeights("feat_label", {"W_x": w_x, "W_y": rng.standard_normal((c, c))})
        rep = mse_identity_report(inst.op, x, labels, w, inst.alpha, mode="exact")
        tr_gap = heldout_row_gap(inst.op, labels)
        tr_fail += tr_gap != 0.0
        ok = rep.rel_gap <= IDENTITY_TOL and tr_gap == 0.0
        report.records.append(InstanceRecord(i, labels.n, labels.m, inst.alpha, rep.rel_gap, ok))
    report.notes.append(f"test_rows_exact_zero={'yes' if tr_fail == 0 else 'no'} "
                        f"test_row_failures={tr_fail}")
    return report


@_timed
def verify_theorem1(n_instances: int = 500, seed: int = 0) -> VerificationSuiteReport:
    """Exact split average of the label-only MSE trick against its closed form."""
    return _mse_suite("thm1", n_instances, seed, with_features=False)


@_timed
def verify_corollary1(n_instances: int = 500, seed: int = 0) -> VerificationSuiteReport:
    """As :func:`verify_theorem1` with random node features and feature weights."""
    return _mse_suite("cor1", n_instances, seed, with_features=True)


@_timed
def verify_theorem2(n_instances: int = 500, seed: int = 0) -> VerificationSuiteReport:
    """Scaled stochastic cross-entropy never below the self-excluded cross-entropy.

    The recorded gap is the relative slack ``(lhs - rhs) / max(1, |rhs|)``; an
    instance fails if the slack is below ``-1e-9`` or if the two sides differ
    by more than ``1e-9`` at zero weights.
    """
    report = VerificationSuiteReport("thm2", BOUND_SLACK, gap_kind="relative_slack")
    for i in range(n_instances):
        inst = random_instance(seed, SUITE_TAGS["thm2"], i)
        rng, labels = inst.rng, inst.labels
        c, d = labels.c, int(rng.integers(1, 4))
        x = rng.standard_normal((labels.n, d))
        scale = float(rng.choice([0.5, 2.0, 5.0]))
        w = ModelWeights("feat_label", {"W_x": scale * rng.standard_normal((d, c)),
                                        "W_y": scale * rng.standard_normal((c, c))})
        alpha = 0.9 if i == 2 else inst.alpha
        try:
            rep = ce_jensen_gap(inst.op, x, labels, w, alpha)
            slack = (rep.lhs_value - rep.rhs_value) / max(1.0, abs(rep.rhs_value))
            ok = slack >= -BOUND_SLACK
        except NumericalIntegrityError:
            slack, ok = -np.inf, False
        zero = ce_jensen_gap(inst.op, x, labels, ModelWeights.feat_label(d, c), alpha)
        ok = ok and zero.abs_gap <= BOUND_SLACK and heldout_row_gap(inst.op, labels) == 0.0
        report.records.append(InstanceRecord(i, labels.n, labels.m, alpha, slack, ok))
    return report


# nonlinear limit ------------------------------------------------------------------------

def thm3_fixture(seed: int = 0):
    """Fixed 8-node toy problem: a ring with two chords, 2 features, 2 classes, all nodes labelled."""
    edges = [(i, (i + 1) % 8) for i in range(8)] + [(0, 4), (2, 6)]
    g = Graph(8, edges)
    op = closed_form_operator(g.normalized_adjacency, 0.6)
    rng = make_rng(seed, SUITE_TAGS["thm3"])
    x = rng.standard_normal((8, 2))
    labels = LabelMatrix.from_classes([0, 0, 0, 1, 1, 1, 0, 1], np.arange(8), 2)
    w = ModelWeights.toy(2, 2, 16, seed)
    return op, x, labels, w


@_timed
def verify_theorem3(alphas=THM3_ALPHAS, seed: int = 0) -> VerificationSuiteReport:
    """Scaled nonlinear loss approaching the leave-one-out loss as alpha grows.

    Passes when the gap to the leave-one-out target shrinks along the
    sorted ``alphas`` and the gap at the largest alpha is at most 2% of the
    target. Also checks the linear special case against the self-excluded
    loss and that a zero model has zero gap.
    """
    op, x, labels, w = thm3_fixture(seed)
    report = VerificationSuiteReport("thm3", THM3_REL_TOL, gap_kind="relative_to_target")
    alphas = sorted(float(a) for a in alphas)
    target = thm3_limit_target(op, x, labels, w)
    gaps = []
    for a in alphas:
        value = thm3_scaled_loss(op, x, labels, w, a)
        gaps.append(abs(value - target))
        report.notes.append(f"alpha={a:.6g} scaled_loss={value:.10e} target={target:.10e} "
                            f"gap={gaps[-1]:.6e}")
    monotone = all(b < a for a, b in zip(gaps, gaps[1:]))
    for k, (a, gap) in enumerate(zip(alphas, gaps)):
        rel = gap / abs(target)
        ok = monotone and (k < len(alphas) - 1 or rel <= THM3_REL_TOL)
        report.records.append(InstanceRecord(k, labels.n, labels.m, a, rel, ok))
    d = x.shape[1]
    w1, w2 = w["W1"], w["W2"]
    lin = ModelWeights("feat_label", {"W_x": w1[:d] @ w2, "W_y": w1[d:] @ w2})
    lin_gap = abs(thm3_limit_target(op, x, labels, w, "identity")
                  - mse_deterministic_rhs(op, x, labels, lin, 1.0))
    zero = w.replace(W2=np.zeros_like(w2))
    zero_gap = max(abs(thm3_scaled_loss(op, x, labels, zero, a) - thm3_limit_target(op, x, labels, zero))
                   for a in alphas)
    report.notes.append(f"monotone={'yes' if monotone else 'no'}")
    report.notes.append(f"linear_case_gap={lin_gap:.6e} zero_model_gap={zero_gap:.6e}")
    if lin_gap > 1e-8 or zero_gap > 1e-12:
        report.records.append(InstanceRecord(len(alphas), labels.n, labels.m, 1.0,
                                             max(lin_gap, zero_gap), False))
    return report


# mask expectations ---------------------------------------------------------------------

def mask_moments(m: int, alpha: float):
    """First three moments of the input indicators, by enumerating all ``2^m`` patterns."""
    bits, weights = split_table(m, alpha)
    z = bits.astype(np.float64)
    z1 = weights @ z
    z2 = np.einsum("k,ki,kj->ij", weights, z, z)
    z3 = np.einsum("k,ki,kj,kl->ijl", weights, z, z, z)
    return z1, z2, z3


def appendix_closed_forms(p: np.ndarray, train_idx, y: np.ndarray, alpha: float) -> dict:
    """Closed forms for the mask expectations, written for a general (not necessarily symmetric) ``P``.

    Every matrix is ``n x n`` (or ``n x c``) and vanishes outside the training block.
    """
    n = p.shape[0]
    mtr = np.zeros((n, n))
    mtr[train_idx, train_idx] = 1.0
    ptr = mtr @ p @ mtr
    ctr = np.diag(np.diag(ptr))
    ptp = ptr.T @ ptr
    qtr2 = np.diag(np.diag(ptp))
    a, a2, a3 = alpha, alpha ** 2, alpha ** 3
    return {
        "a": (1 - a) * mtr,
        "b": a2 * ptr + (a - a2) * ctr,
        "c": a2 * ptp + (a - a2) * qtr2,
        "d": a3 * ptp + (a2 - a3) * qtr2 + (a - 3 * a2 + 2 * a3) * ctr @ ctr
             + (a2 - a3) * (ctr @ ptr + ptr.T @ ctr),
        "cross": (a - a2) * (ptr - ctr) @ (mtr @ y),
    }


def appendix_expectations(p: np.ndarray, train_idx, y: np.ndarray, alpha: float) -> dict:
    """The same expectations computed from the enumerated mask moments."""
    n = p.shape[0]
    t = np.asarray(train_idx)
    z1, z2, z3 = mask_moments(len(t), alpha)
    ptt = p[np.ix_(t, t)]
    out = {k: np.zeros((n, n)) for k in "abcd"}
    blk = np.ix_(t, t)
    out["a"][blk] = np.diag(1.0 - z1)
    out["b"][blk] = z2 * ptt
    out["c"][blk] = z2 * (ptt.T @ ptt)
    out["d"][blk] = np.einsum("ki,kj,ikj->ij", ptt, ptt, z3)
    cross = np.zeros((n, y.shape[1]))
    # E[(1 - z_i) z_j] = z1_j - z2_ij
    cross[t] = ((z1[None, :] - z2) * ptt) @ y[t]
    out["cross"] = cross
    return out


@_timed
def verify_appendix_identities(n_instances: int = 200, seed: int = 0) -> VerificationSuiteReport:
    """Mask-expectation identities (a)-(d) and the cross term; the gap is the worst absolute error.

    Every fourth instance uses a random non-symmetric explicit ``P`` and
    instance 3 a diagonal one, where the cross term vanishes.
    """
    report = VerificationSuiteReport("appendix", IDENTITY_TOL, gap_kind="absolute")
    for i in range(n_instances):
        inst = random_instance(seed, SUITE_TAGS["appendix"], i)
        rng, labels = inst.rng, inst.labels
        op = inst.op
        if i == 3:
            op = explicit_operator(np.diag(rng.uniform(0.1, 1.0, labels.n)))
        elif i % 4 == 0 and i > 0:
            op = explicit_operator(rng.uniform(0.0, 1.0, (labels.n, labels.n)) / labels.n)
        p = op.dense()
        closed = appendix_closed_forms(p, labels.train_idx, labels.Y, inst.alpha)
        exact = appendix_expectations(p, labels.train_idx, labels.Y, inst.alpha)
        gap = max(float(np.max(np.abs(closed[k] - exact[k]))) for k in closed)
        ok = gap <= IDENTITY_TOL and heldout_row_gap(op, labels) == 0.0
        report.records.append(InstanceRecord(i, labels.n, labels.m, inst.alpha, gap, ok))
    return report


SUITES = {
    "thm1": verify_theorem1,
    "cor1": verify_corollary1,
    "thm2": verify_theorem2,
    "thm3": None,
    "appendix": verify_appendix_identities,
}
DEFAULT_COUNTS = {"thm1": 500, "cor1": 500, "thm2": 500, "appendix": 200}


def run_suite(name: str, n_instances: Optional[int] = None, seed: int = 0) -> list:
    """Run one suite (or ``all``) and return its reports in a fixed order."""
    names = list(SUITES) if name == "all" else [name]
    reports = []
    for s in names:
        if s not in SUITES:
            raise ValueError(f"unknown suite {s!r}; choose from {sorted(SUITES)} or all")
        if s == "thm3":
            reports.append(verify_theorem3(THM3_ALPHAS, seed) if n_instances != 0
                           else VerificationSuiteReport("thm3", THM3_REL_TOL, "relative_to_target"))
        else:
            reports.append(SUITES[s](DEFAULT_COUNTS[s] if n_instances is None else n_instances, seed))
    return reports
