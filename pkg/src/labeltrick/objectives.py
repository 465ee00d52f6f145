"""Label-trick objectives: the stochastic split average and its deterministic equivalents.

Losses are sums over rows (never means). Split averages are computed
either exactly, as a probability-weighted sum over all ``2^m`` input
patterns, or by Monte Carlo with a standard error.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from ._rng import make_rng
from .errors import EnumerationTooLarge, NumericalIntegrityError
from .predictors import (ModelWeights, _features, feat_label_predict, nonlinear_toy_predict,
                         self_excluded_labels)
from .propagation import PropagationOperator, gamma_matrix
from .splits import LabelMatrix, MAX_ENUMERATION, sample_inputs, split_table

LOG_FLOOR = -745.0
JENSEN_SLACK = 1e-9
_CHUNK = 1 << 16


@dataclass(frozen=True)
class ObjectiveReport:
    lhs_value: float
    rhs_value: float
    abs_gap: float
    rel_gap: float
    n_splits_used: int
    mode: str
    standard_error: Optional[float] = None

    @classmethod
    def build(cls, lhs, rhs, n_splits, mode, se=None) -> "ObjectiveReport":
        gap = abs(lhs - rhs)
        return cls(float(lhs), float(rhs), float(gap), float(gap / max(1.0, abs(rhs))),
                   int(n_splits), mode, None if se is None else float(se))


# split patterns ---------------------------------------------------------------

def _patterns(m, alpha, mode, n_samples, seed):
    """Input patterns over training positions with their weights (summing to 1)."""
    if mode == "exact":
        if m > MAX_ENUMERATION:
            raise EnumerationTooLarge(
                f"exact mode needs m <= {MAX_ENUMERATION}, got {m}; use mode='monte_carlo'")
        return split_table(m, alpha)
    if mode == "monte_carlo":
        if not 0.0 < alpha < 1.0:
            raise ValueError(f"alpha must lie in (0, 1), got {alpha}")
        bits = sample_inputs(m, alpha, make_rng(seed), size=int(n_samples))
        return bits, np.full(len(bits), 1.0 / len(bits))
    raise ValueError(f"unknown mode {mode!r}")


def _reduce(values, weights, mode):
    """Weighted mean and (Monte Carlo only) its standard error."""
    mean = float(np.dot(weights, values))
    if mode == "monte_carlo":
        return mean, float(np.std(values, ddof=1) / np.sqrt(len(values))) if len(values) > 1 else 0.0
    return mean, None


def _linear_parts(op, x, labels, w):
    """Training-row blocks shared by the linear predictors: (P_tt, features term, Y rows, Y W_y)."""
    idx = labels.train_idx
    x = _features(x, op.n)
    p_tt = op.block(idx, idx)
    feat = (op.apply(x) @ w["W_x"])[idx] if x.shape[1] else np.zeros((len(idx), labels.c))
    y_rows = labels.Y[idx]
    return p_tt, feat, y_rows, y_rows @ w["W_y"]


def _split_predictions(p_tt, feat, yw, bits, alpha):
    """Training-row predictions ``[P X W_x + P (Y_in/alpha) W_y]_tr`` for a batch of patterns."""
    return feat[None] + np.einsum("ij,kj,jc->kic", p_tt, bits.astype(np.float64), yw) / alpha


def _split_losses(loss_fn, p_tt, feat, y_rows, yw, bits, alpha):
    out = np.empty(len(bits))
    step = max(1, _CHUNK // max(1, p_tt.shape[0] * yw.shape[1]))
    for s in range(0, len(bits), step):
        b = bits[s:s + step]
        pred = _split_predictions(p_tt, feat, yw, b, alpha)
        out[s:s + step] = loss_fn(y_rows, pred, ~b)
    return out


def _mse_rows(y_rows, pred, out_rows):
    return np.einsum("ki,kic->k", out_rows.astype(np.float64), (y_rows[None] - pred) ** 2)


def _ce_rows(y_rows, pred, out_rows):
    return np.einsum("ki,ki->k", out_rows.astype(np.float64), _row_ce(y_rows[None], pred))


# MSE: stochastic vs closed form -------------------------------------------------

def mse_stochastic_lhs(op: PropagationOperator, x, labels: LabelMatrix, w: ModelWeights, alpha: float,
                       mode: str = "exact", n_samples: int = 100_000, seed: int = 0,
                       return_se: bool = False):
    """``E_splits ||Y_out - M_out P X W_x - M_out P (Y_in/alpha) W_y||_F^2``.

    Not divided by ``1 - alpha``. With ``return_se`` a ``(value, standard_error)``
    pair is returned (the error is ``None`` in exact mode).
    """
    bits, weights = _patterns(labels.m, alpha, mode, n_samples, seed)
    parts = _linear_parts(op, x, labels, w)
    vals = _split_losses(_mse_rows, *parts, bits, alpha)
    mean, se = _reduce(vals, weights, mode)
    return (mean, se) if return_se else mean


def mse_deterministic_rhs(op: PropagationOperator, x, labels: LabelMatrix, w: ModelWeights,
                          alpha: float) -> float:
    """Self-excluded data fit plus ``((1 - alpha)/alpha) ||Gamma W_y||_F^2``."""
    return mse_deterministic_rhs_grad(op, x, labels, w, alpha)[0]


def mse_deterministic_rhs_grad(op: PropagationOperator, x, labels: LabelMatrix, w: ModelWeights,
                               alpha: float, gamma: Optional[np.ndarray] = None):
    """Value and gradient ``{"W_x": ..., "W_y": ...}`` of the deterministic MSE objective."""
    if not 0.0 < alpha <= 1.0:
        raise ValueError(f"alpha must lie in (0, 1], got {alpha}")
    idx = labels.train_idx
    x = _features(x, op.n)
    px = op.apply(x)[idx]
    se = self_excluded_labels(op, labels)[idx]
    resid = labels.Y[idx] - px @ w["W_x"] - se @ w["W_y"]
    g = gamma_matrix(op, labels) if gamma is None else gamma
    coef = (1.0 - alpha) / alpha
    gw = g @ w["W_y"]
    value = float(np.sum(resid ** 2) + coef * np.sum(gw ** 2))
    grads = {"W_x": -2.0 * px.T @ resid,
             "W_y": -2.0 * se.T @ resid + 2.0 * coef * g.T @ gw}
    return value, grads


def mse_identity_report(op, x, labels, w, alpha, mode="exact", n_samples=100_000, seed=0) -> ObjectiveReport:
    """Compare ``lhs / (1 - alpha)`` against the deterministic right-hand side."""
    lhs, se = mse_stochastic_lhs(op, x, labels, w, alpha, mode, n_samples, seed, return_se=True)
    rhs = mse_deterministic_rhs(op, x, labels, w, alpha)
    n_used = 2 ** labels.m if mode == "exact" else int(n_samples)
    return ObjectiveReport.build(lhs / (1.0 - alpha), rhs, n_used, mode,
                                 None if se is None else se / (1.0 - alpha))


# cross-entropy -------------------------------------------------------------------

def log_softmax(z: np.ndarray) -> np.ndarray:
    zmax = np.max(z, axis=-1, keepdims=True)
    shifted = z - zmax
    out = shifted - np.log(np.sum(np.exp(shifted), axis=-1, keepdims=True))
    return np.maximum(out, LOG_FLOOR)


def softmax(z: np.ndarray) -> np.ndarray:
    e = np.exp(z - np.max(z, axis=-1, keepdims=True))
    return e / e.sum(axis=-1, keepdims=True)


def _row_ce(y, logits):
    return -np.sum(y * log_softmax(logits), axis=-1)


def cross_entropy(labels: LabelMatrix, logits, rows=None) -> float:
    """Sum over ``rows`` of ``-log softmax(logits_i)[class_i]``; ``rows`` defaults to the training set."""
    if labels.kind != "one_hot":
        raise ValueError("cross-entropy needs one-hot labels")
    rows = labels.train_idx if rows is None else np.asarray(rows, dtype=np.int64)
    y = labels.Y[rows]
    if not (np.all((y == 0) | (y == 1)) and np.all(y.sum(axis=1) == 1)):
        raise ValueError("cross-entropy rows must carry one-hot labels")
    logits = np.asarray(logits, dtype=np.float64)
    return float(np.sum(_row_ce(y, logits[rows])))


def ce_stochastic_lhs(op, x, labels, w, alpha, mode="exact", n_samples=100_000, seed=0,
                      return_se: bool = False):
    """``E_splits CE_{D_out}(Y_out, P X W_x + P (Y_in/alpha) W_y)`` (not divided by ``1 - alpha``)."""
    if labels.kind != "one_hot":
        raise ValueError("cross-entropy needs one-hot labels")
    bits, weights = _patterns(labels.m, alpha, mode, n_samples, seed)
    vals = _split_losses(_ce_rows, *_linear_parts(op, x, labels, w), bits, alpha)
    mean, se = _reduce(vals, weights, mode)
    return (mean, se) if return_se else mean


def ce_deterministic(op, x, labels, w) -> float:
    """``CE_{D_tr}(Y_tr, P X W_x + (P - C) Y_tr W_y)``."""
    return cross_entropy(labels, feat_label_predict(op, x, labels, w))


def ce_jensen_gap(op, x, labels, w, alpha, mode="exact", n_samples=100_000, seed=0) -> ObjectiveReport:
    """Scaled stochastic cross-entropy against the self-excluded cross-entropy.

    The first must not fall below the second; a violation beyond
    ``JENSEN_SLACK`` raises ``NumericalIntegrityError``.
    """
    lhs, se = ce_stochastic_lhs(op, x, labels, w, alpha, mode, n_samples, seed, return_se=True)
    lhs /= 1.0 - alpha
    rhs = ce_deterministic(op, x, labels, w)
    n_used = 2 ** labels.m if mode == "exact" else int(n_samples)
    report = ObjectiveReport.build(lhs, rhs, n_used, mode, None if se is None else se / (1.0 - alpha))
    if mode == "exact" and lhs < rhs - JENSEN_SLACK:
        raise NumericalIntegrityError(f"cross-entropy bound violated: {lhs!r} < {rhs!r}")
    return report


# nonlinear model, alpha -> 1 ---------------------------------------------------------

def _toy_split_loss(op, x, labels, w, in_train, activation):
    idx = labels.train_idx
    y_in = np.zeros_like(labels.Y)
    y_in[idx[in_train]] = labels.Y[idx[in_train]]
    pred = nonlinear_toy_predict(op, x, y_in, w, activation)
    out = idx[~in_train]
    return float(np.sum((labels.Y[out] - pred[out]) ** 2))


def thm3_scaled_loss(op, x, labels, w, alpha, mode="exact", n_samples=10_000, seed=0,
                     activation: str = "tanh") -> float:
    """``(1/(1-alpha)) E_splits sum_{i in D_out} ||y_i - f([X, Y_in])_i||^2`` (labels not rescaled)."""
    bits, weights = _patterns(labels.m, alpha, mode, n_samples, seed)
    vals = np.array([_toy_split_loss(op, x, labels, w, b, activation) for b in bits])
    return _reduce(vals, weights, mode)[0] / (1.0 - alpha)


def thm3_limit_target(op, x, labels, w, activation: str = "tanh") -> float:
    """Leave-one-out loss ``sum_i ||y_i - f([X, Y_tr - Y_i])_i||^2``."""
    total = 0.0
    for pos in range(labels.m):
        in_train = np.ones(labels.m, dtype=bool)
        in_train[pos] = False
        total += _toy_split_loss(op, x, labels, w, in_train, activation)
    return total
