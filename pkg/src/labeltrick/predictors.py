"""Predictors that feed labels (and optionally features) through a propagation operator.

All of them are pure functions of (operator, data, weights). The
self-excluded forms subtract ``C_i * y_i`` row-wise rather than forming
``P - diag(C)``, so rows outside the training set are bit-for-bit the
label-propagation rows.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from ._rng import make_rng
from .propagation import PropagationOperator
from .splits import LabelMatrix, SplitMask, full_input_split, masked_labels

WEIGHT_NAMES = {
    "lp_w": ("W",),
    "feat_label": ("W_x", "W_y"),
    "cs_trainable": ("W_s", "W_c_hat"),
    "nonlinear_toy": ("W1", "W2"),
    "composite": (),
}


@dataclass(frozen=True, eq=False)
class ModelWeights:
    """Named weight matrices for one predictor kind."""

    kind: str
    mats: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in WEIGHT_NAMES:
            raise ValueError(f"unknown weight kind {self.kind!r}")
        mats = {}
        for name, value in self.mats.items():
            a = np.array(value, dtype=np.float64)
            if a.ndim != 2:
                raise ValueError(f"{name} must be a matrix")
            if not np.all(np.isfinite(a)):
                raise ValueError(f"{name} has non-finite entries")
            mats[name] = a
        missing = set(WEIGHT_NAMES[self.kind]) - set(mats)
        if missing:
            raise ValueError(f"{self.kind} weights missing {sorted(missing)}")
        object.__setattr__(self, "mats", mats)

    def __getitem__(self, name: str) -> np.ndarray:
        return self.mats[name]

    def replace(self, **mats) -> "ModelWeights":
        new = dict(self.mats)
        for k, v in mats.items():
            if k in new and np.shape(v) != new[k].shape:
                raise ValueError(f"shape of {k} is fixed at {new[k].shape}")
            new[k] = v
        return ModelWeights(self.kind, new)

    @property
    def shapes(self) -> dict:
        return {k: v.shape for k, v in self.mats.items()}

    @classmethod
    def lp(cls, c: int, init: str = "identity") -> "ModelWeights":
        w = np.eye(c) if init == "identity" else np.zeros((c, c))
        return cls("lp_w", {"W": w})

    @classmethod
    def feat_label(cls, d: int, c: int) -> "ModelWeights":
        return cls("feat_label", {"W_x": np.zeros((d, c)), "W_y": np.zeros((c, c))})

    @classmethod
    def cs(cls, c: int) -> "ModelWeights":
        return cls("cs_trainable", {"W_s": np.eye(c), "W_c_hat": np.zeros((c, c))})

    @classmethod
    def toy(cls, d: int, c: int, h: int = 16, seed: int = 0) -> "ModelWeights":
        rng = make_rng(seed)
        b1 = 1.0 / np.sqrt(d + c)
        b2 = 1.0 / np.sqrt(h)
        return cls("nonlinear_toy", {"W1": rng.uniform(-b1, b1, (d + c, h)),
                                     "W2": rng.uniform(-b2, b2, (h, c))})


def _features(x, n: int) -> np.ndarray:
    if x is None:
        return np.zeros((n, 0))
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2 or x.shape[0] != n:
        raise ValueError(f"features must be {n} x d, got {x.shape}")
    return x


def lp_predict(op: PropagationOperator, labels: LabelMatrix) -> np.ndarray:
    """Plain label propagation ``P Y_tr``."""
    return op.apply(labels.y_tr)


def self_excluded_labels(op: PropagationOperator, labels: LabelMatrix) -> np.ndarray:
    """``(P - C) Y_tr``: each node sees only the other nodes' labels."""
    y_tr = labels.y_tr
    return op.apply(y_tr) - op.diag[:, None] * y_tr


def self_excluded_predict(op: PropagationOperator, labels: LabelMatrix, w: ModelWeights) -> np.ndarray:
    if w.kind != "lp_w":
        raise ValueError("self-excluded prediction takes lp_w weights")
    return self_excluded_labels(op, labels) @ w["W"]


def feat_label_predict(op: PropagationOperator, x, labels: LabelMatrix, w: ModelWeights) -> np.ndarray:
    """``P X W_x + (P - C) Y_tr W_y``."""
    if w.kind != "feat_label":
        raise ValueError("expected feat_label weights")
    x = _features(x, op.n)
    if x.shape[1] != w["W_x"].shape[0] or labels.c != w["W_y"].shape[0]:
        raise ValueError("weight shapes do not match the inputs")
    return op.apply(x) @ w["W_x"] + self_excluded_labels(op, labels) @ w["W_y"]


def stochastic_predict(op: PropagationOperator, x, labels: LabelMatrix, mask: SplitMask,
                       w: ModelWeights) -> np.ndarray:
    """``P X W_x + P (Y_in / alpha) W_y`` for one split; callers score only ``D_out`` rows."""
    if w.kind != "feat_label":
        raise ValueError("expected feat_label weights")
    x = _features(x, op.n)
    return op.apply(x) @ w["W_x"] + op.apply(masked_labels(labels, mask, rescale=True)) @ w["W_y"]


# node-wise maps for the composite predictor -------------------------------

class Identity:
    in_dim = None

    def __call__(self, z):
        return z


class Affine:
    def __init__(self, weight, bias=None):
        self.weight = np.asarray(weight, dtype=np.float64)
        self.bias = np.zeros(self.weight.shape[1]) if bias is None else np.asarray(bias, dtype=np.float64)
        self.in_dim = self.weight.shape[0]

    def __call__(self, z):
        return z @ self.weight + self.bias


class OneHidden:
    """``act(z W1 + b1) W2 + b2``."""

    def __init__(self, w1, b1, w2, b2, act: Callable = np.tanh):
        self.w1, self.b1 = np.asarray(w1, float), np.asarray(b1, float)
        self.w2, self.b2 = np.asarray(w2, float), np.asarray(b2, float)
        self.act = act
        self.in_dim = self.w1.shape[0]

    def __call__(self, z):
        return self.act(z @ self.w1 + self.b1) @ self.w2 + self.b2


def composite_predict(ops: Sequence[PropagationOperator], x, labels: LabelMatrix,
                      h0: Callable = None, h1: Callable = None) -> np.ndarray:
    """Self-excluded prediction for a model whose only graph mixing is linear.

    Computes ``h1([P_j H - C_j H + C_j H0]_j)`` with ``H = h0([X, Y_tr])`` and
    ``H0 = h0([X, 0])``; the propagated blocks for each operator are
    concatenated column-wise before ``h1``.
    """
    h0 = h0 or Identity()
    h1 = h1 or Identity()
    n = labels.n
    x = _features(x, n)
    h = h0(np.hstack([x, labels.y_tr]))
    h_zero = h0(np.hstack([x, np.zeros((n, labels.c))]))
    blocks = []
    for op in ops:
        c = op.diag[:, None]
        blocks.append(op.apply(h) - c * h + c * h_zero)
    z = np.hstack(blocks)
    in_dim = getattr(h1, "in_dim", None)
    if in_dim is not None and in_dim != z.shape[1]:
        raise ValueError(f"h1 expects width {in_dim} but {len(ops)} operators give {z.shape[1]}")
    return h1(z)


def nonlinear_toy_predict(op: PropagationOperator, x, y_input, w: ModelWeights,
                          activation: str = "tanh") -> np.ndarray:
    """``act(P [X, y_input] W1) W2``, a minimal nonlinear graph model."""
    if w.kind != "nonlinear_toy":
        raise ValueError("expected nonlinear_toy weights")
    x = _features(x, op.n)
    z = op.apply(np.hstack([x, np.asarray(y_input, dtype=np.float64)])) @ w["W1"]
    if activation == "tanh":
        z = np.tanh(z)
    elif activation != "identity":
        raise ValueError(f"unknown activation {activation!r}")
    return z @ w["W2"]


# correct & smooth ----------------------------------------------------------

def scale_correction(prop_err: np.ndarray, err: np.ndarray, in_mask: np.ndarray,
                     mode: str = "autoscale") -> np.ndarray:
    """Row-independent scaling of the propagated residuals.

    ``autoscale`` rescales every nonzero row to L1 norm equal to the mean L1
    norm of the residual rows on ``D_in``.
    """
    if mode == "identity":
        return prop_err
    if mode != "autoscale":
        raise ValueError(f"unknown gamma mode {mode!r}")
    k = int(in_mask.sum())
    if k == 0:
        return np.zeros_like(prop_err)
    sigma = np.abs(err[in_mask]).sum() / k
    norms = np.abs(prop_err).sum(axis=1, keepdims=True)
    out = np.zeros_like(prop_err)
    nz = norms[:, 0] > 0
    out[nz] = prop_err[nz] * (sigma / norms[nz])
    return out


def cs_components(p_c: PropagationOperator, p_s: PropagationOperator, y_base, labels: LabelMatrix,
                  mask: SplitMask, gamma_mode: str = "autoscale") -> tuple[np.ndarray, np.ndarray]:
    """The weight-free parts ``(Y_hat_s, Y_hat_c)`` of the trainable C&S predictor for one split."""
    y_base = np.asarray(y_base, dtype=np.float64)
    if y_base.shape != labels.Y.shape:
        raise ValueError("base predictions must match the label matrix shape")
    inn = mask.in_mask[:, None]
    y_in = np.where(inn, labels.Y, 0.0)
    err = y_in - np.where(inn, y_base, 0.0)
    e_tilde = scale_correction(p_c.apply(err), err, mask.in_mask, gamma_mode)
    rest = ~inn  # test nodes plus D_out
    y_s = p_s.apply(y_in + np.where(rest, y_base, 0.0))
    y_c = p_s.apply(np.where(rest, e_tilde, 0.0))
    return y_s, y_c


def cs_trainable_predict(p_c: PropagationOperator, p_s: PropagationOperator, y_base,
                         labels: LabelMatrix, mask: SplitMask, w: ModelWeights,
                         gamma_mode: str = "autoscale") -> np.ndarray:
    """``P_s (Y_in + (M_te + M_out) Y~) W_s + P_s (M_te + M_out) E~_in W_c_hat``."""
    if w.kind != "cs_trainable":
        raise ValueError("expected cs_trainable weights")
    y_s, y_c = cs_components(p_c, p_s, y_base, labels, mask, gamma_mode)
    return y_s @ w["W_s"] + y_c @ w["W_c_hat"]


def cs_vanilla_predict(p_c: PropagationOperator, p_s: PropagationOperator, y_base,
                       labels: LabelMatrix, gamma_mode: str = "autoscale") -> np.ndarray:
    """Untrained correct-then-smooth: ``P_s (Y_tr + M_te (Y~ + E~))``."""
    c = labels.c
    w = ModelWeights("cs_trainable", {"W_s": np.eye(c), "W_c_hat": np.eye(c)})
    return cs_trainable_predict(p_c, p_s, y_base, labels, full_input_split(labels), w, gamma_mode)
