"""Full-batch trainers for the label-trick models and the ridge oracle.

Every trainable objective is a closure ``params -> (loss, grads)`` over a
dict of weight matrices, so the same gradient-descent loop (and the same
finite-difference checks) serve all of them.
"""
from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Optional

import numpy as np
from scipy import linalg

from ._rng import make_rng
from .objectives import log_softmax, softmax
from .predictors import (ModelWeights, _features, cs_components, feat_label_predict,
                         self_excluded_labels)
from .propagation import PropagationOperator, gamma_matrix
from .splits import LabelMatrix, full_input_split, sample_inputs, split_from_inputs

TRICKS = ("none", "stochastic", "deterministic")
LOSSES = ("mse", "cross_entropy")
RIDGE_JITTER = 1e-10


@dataclass(frozen=True)
class TrainConfig:
    lr: float = 0.1
    epochs: int = 200
    weight_decay: float = 0.0
    alpha: float = 0.5
    trick: str = "deterministic"
    seed: int = 0
    loss: str = "cross_entropy"
    early_stop_patience: int = 0
    backtracking: bool = True
    resample_every: int = 1

    def __post_init__(self):
        if not self.lr > 0:
            raise ValueError("lr must be positive")
        if self.epochs < 1:
            raise ValueError("epochs must be at least 1")
        if self.trick not in TRICKS:
            raise ValueError(f"trick must be one of {TRICKS}")
        if self.loss not in LOSSES:
            raise ValueError(f"loss must be one of {LOSSES}")
        if self.trick == "stochastic" and not 0.0 < self.alpha < 1.0:
            raise ValueError("stochastic trick needs alpha in (0, 1)")
        if self.trick == "deterministic" and not 0.0 < self.alpha <= 1.0:
            raise ValueError("deterministic trick needs alpha in (0, 1]")
        if self.resample_every < 1:
            raise ValueError("resample_every must be at least 1")

    def digest(self) -> str:
        blob = json.dumps(asdict(self), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]


@dataclass
class FitResult:
    weights: ModelWeights
    train_curve: list = field(default_factory=list)
    val_accuracy: float = float("nan")
    test_accuracy: float = float("nan")

    @property
    def epochs_run(self) -> int:
        return len(self.train_curve)


def accuracy(pred: np.ndarray, labels: LabelMatrix, idx) -> float:
    """Share of rows in ``idx`` whose argmax (lowest index on ties) is the true class."""
    idx = np.asarray(idx, dtype=np.int64)
    if len(idx) == 0:
        return float("nan")
    return float(np.mean(np.argmax(pred[idx], axis=1) == np.argmax(labels.Y[idx], axis=1)))


# losses on a block of rows ---------------------------------------------------

def _row_loss(y, z, rows, loss):
    """Summed loss over the selected rows and its gradient w.r.t. ``z``."""
    r = rows.astype(np.float64)[:, None]
    if loss == "mse":
        diff = z - y
        return float(np.sum(r * diff ** 2)), 2.0 * r * diff
    return float(-np.sum(r * y * log_softmax(z))), r * (softmax(z) - y)


# objective builders ----------------------------------------------------------

def linear_objective(op: PropagationOperator, x, labels: LabelMatrix, cfg: TrainConfig,
                     scaled: bool = True):
    """Objective factory for ``P X W_x + (label term) W_y`` under the configured trick.

    Returns ``make(epoch) -> fn`` where ``fn(params) -> (loss, grads)``. For
    the deterministic trick with MSE the loss carries the
    ``((1-alpha)/alpha) ||Gamma W_y||^2`` penalty, so it equals the exact
    split average divided by ``1 - alpha``.
    """
    idx = labels.train_idx
    x = _features(x, op.n)
    px = op.apply(x)[idx] if x.shape[1] else np.zeros((len(idx), 0))
    y = labels.Y[idx]
    everyone = np.ones(len(idx), dtype=bool)
    wd = cfg.weight_decay

    def finish(loss, grads, params):
        if wd:
            for k in grads:
                loss += wd * float(np.sum(params[k] ** 2))
                grads[k] = grads[k] + 2.0 * wd * params[k]
        return loss, grads

    if cfg.trick == "none":
        def fn(params):
            loss, dz = _row_loss(y, px @ params["W_x"], everyone, cfg.loss)
            return finish(loss, {"W_x": px.T @ dz}, params)
        return lambda epoch: fn

    if cfg.trick == "deterministic":
        se = self_excluded_labels(op, labels)[idx]
        gam = gamma_matrix(op, labels)[idx] if cfg.loss == "mse" else None
        coef = (1.0 - cfg.alpha) / cfg.alpha

        def fn(params):
            z = px @ params["W_x"] + se @ params["W_y"]
            loss, dz = _row_loss(y, z, everyone, cfg.loss)
            g_y = se.T @ dz
            if gam is not None and coef:
                gw = gam @ params["W_y"]
                loss += coef * float(np.sum(gw ** 2))
                g_y = g_y + 2.0 * coef * gam.T @ gw
            return finish(loss, {"W_x": px.T @ dz, "W_y": g_y}, params)
        return lambda epoch: fn

    p_tt = op.block(idx, idx)
    alpha = cfg.alpha
    # train on the 1/(1-alpha) scaled split loss so its mean matches the
    # deterministic objective and the step size does not shrink with alpha
    scale = 1.0 / (1.0 - alpha) if scaled else 1.0

    def for_split(bits):
        lin = p_tt @ (bits[:, None] * y) / alpha
        out = ~bits

        def fn(params):
            z = px @ params["W_x"] + lin @ params["W_y"]
            loss, dz = _row_loss(y, z, out, cfg.loss)
            loss, dz = loss * scale, dz * scale
            return finish(loss, {"W_x": px.T @ dz, "W_y": lin.T @ dz}, params)
        return fn

    def make(epoch):
        draw = epoch // cfg.resample_every
        return for_split(sample_inputs(len(idx), alpha, make_rng(cfg.seed, 1, draw)))
    return make


def stochastic_loss_at(op, x, labels, w: ModelWeights, alpha: float, seed: int, loss: str = "mse") -> float:
    """Loss of one freshly drawn split at fixed weights (the quantity a stochastic epoch sees)."""
    cfg = TrainConfig(alpha=alpha, trick="stochastic", seed=seed, loss=loss)
    return linear_objective(op, x, labels, cfg, scaled=False)(0)(dict(w.mats))[0]


def cs_objective(pool, y_rows_full: np.ndarray, loss: str, weight_decay: float = 0.0):
    """Per-split objectives for trainable C&S from precomputed ``(Y_hat_s, Y_hat_c, out_mask)``."""
    fns = []
    for y_s, y_c, out in pool:
        def fn(params, y_s=y_s, y_c=y_c, out=out):
            z = y_s @ params["W_s"] + y_c @ params["W_c_hat"]
            val, dz = _row_loss(y_rows_full, z, out, loss)
            grads = {"W_s": y_s.T @ dz, "W_c_hat": y_c.T @ dz}
            if weight_decay:
                for k in grads:
                    val += weight_decay * float(np.sum(params[k] ** 2))
                    grads[k] = grads[k] + 2.0 * weight_decay * params[k]
            return val, grads
        fns.append(fn)
    return fns


# optimizer ---------------------------------------------------------------------

def _step(params, grads, lr):
    return {k: params[k] - lr * grads[k] if k in grads else params[k] for k in params}


def gradient_descent(make_fn: Callable, params: dict, cfg: TrainConfig, fixed: bool,
                     evaluate: Optional[Callable] = None, steps_per_epoch: Optional[Callable] = None):
    """Full-batch gradient descent.

    With ``fixed`` and ``cfg.backtracking`` the step is halved until the
    loss does not increase, so the recorded curve is non-increasing. When
    early stopping is on, the weights with the best validation score are
    returned.
    """
    lr = cfg.lr
    curve = []
    best = (-np.inf, params)
    stale = 0
    cached = None
    for epoch in range(cfg.epochs):
        fns = steps_per_epoch(epoch) if steps_per_epoch else [make_fn(epoch)]
        epoch_losses = []
        for fn in fns:
            loss, grads = cached if (fixed and cached is not None) else fn(params)
            cached = None
            epoch_losses.append(loss)
            cand = _step(params, grads, lr)
            if fixed and cfg.backtracking:
                new = fn(cand)
                while new[0] > loss and lr > 1e-30:
                    lr *= 0.5
                    cand = _step(params, grads, lr)
                    new = fn(cand)
                if new[0] > loss:
                    break
                cached = new
            params = cand
        curve.append(float(np.mean(epoch_losses)))
        if evaluate is not None and cfg.early_stop_patience > 0:
            score = evaluate(params)
            if score > best[0]:
                best, stale = (score, params), 0
            else:
                stale += 1
                if stale >= cfg.early_stop_patience:
                    break
    if evaluate is not None and cfg.early_stop_patience > 0:
        params = best[1]
    return params, curve


# trainers ------------------------------------------------------------------------

def lp_objective(op: PropagationOperator, labels: LabelMatrix, cfg: TrainConfig):
    """Objective factory for the ``c x c`` matrix ``W`` of trainable label propagation.

    Same as :func:`linear_objective` without features, with ``W`` in the role of ``W_y``.
    """
    make = linear_objective(op, None, labels, cfg)
    no_x = np.zeros((0, labels.c))

    def wrap(fn):
        def inner(params):
            loss, g = fn({"W_x": no_x, "W_y": params["W"]})
            return loss, {"W": g["W_y"]}
        return inner
    return lambda epoch: wrap(make(epoch))


def fit_trainable_lp(op: PropagationOperator, labels: LabelMatrix, cfg: TrainConfig,
                     val_idx=(), test_idx=(), init: str = "identity") -> FitResult:
    """Learn a ``c x c`` matrix on top of label propagation."""
    if cfg.trick == "none":
        raise ValueError("plain label propagation has no parameters; pick a label trick")
    se = self_excluded_labels(op, labels)
    params = {"W": ModelWeights.lp(labels.c, init)["W"]}
    evaluate = lambda p: accuracy(se @ p["W"], labels, val_idx)
    params, curve = gradient_descent(lp_objective(op, labels, cfg), params, cfg,
                                     fixed=cfg.trick == "deterministic", evaluate=evaluate)
    w = ModelWeights("lp_w", {"W": params["W"]})
    pred = se @ w["W"]
    return FitResult(w, curve, accuracy(pred, labels, val_idx), accuracy(pred, labels, test_idx))


def fit_linear_model(op: PropagationOperator, x, labels: LabelMatrix, cfg: TrainConfig,
                     val_idx=(), test_idx=()) -> FitResult:
    """Train ``(W_x, W_y)`` of ``P X W_x + (P - C) Y_tr W_y`` under the configured trick."""
    x = _features(x, op.n)
    if x.shape[1] == 0:
        raise ValueError("the linear model needs node features")
    w = ModelWeights.feat_label(x.shape[1], labels.c)
    params = dict(w.mats)
    make = linear_objective(op, x, labels, cfg)
    px = op.apply(x)
    se = self_excluded_labels(op, labels)

    def predict(p):
        return px @ p["W_x"] + se @ p["W_y"]

    evaluate = lambda p: accuracy(predict(p), labels, val_idx)
    params, curve = gradient_descent(make, params, cfg, fixed=cfg.trick != "stochastic",
                                     evaluate=evaluate)
    w = ModelWeights("feat_label", params)
    pred = feat_label_predict(op, x, labels, w)
    return FitResult(w, curve, accuracy(pred, labels, val_idx), accuracy(pred, labels, test_idx))


def solve_ridge(op: PropagationOperator, x, labels: LabelMatrix, alpha: float,
                weight_decay: float = 0.0) -> ModelWeights:
    """Exact minimizer of the deterministic MSE objective over ``(W_x, W_y)``.

    Solves the normal equations of the design ``[M_tr P X, M_tr (P - C) Y_tr]``
    with the block penalty ``((1-alpha)/alpha) Gamma^T Gamma`` on ``W_y``.
    """
    if not 0.0 < alpha <= 1.0:
        raise ValueError(f"alpha must lie in (0, 1], got {alpha}")
    idx = labels.train_idx
    x = _features(x, op.n)
    d, c = x.shape[1], labels.c
    px = op.apply(x)[idx] if d else np.zeros((len(idx), 0))
    se = self_excluded_labels(op, labels)[idx]
    gam = gamma_matrix(op, labels)[idx]
    design = np.hstack([px, se])
    gram = design.T @ design
    gram[d:, d:] += (1.0 - alpha) / alpha * gam.T @ gam
    gram += (weight_decay + RIDGE_JITTER) * np.eye(d + c)
    rhs = design.T @ labels.Y[idx]
    try:
        factor = linalg.cho_factor(gram)
    except linalg.LinAlgError:
        rank = np.linalg.matrix_rank(gram)
        raise np.linalg.LinAlgError(
            f"normal equations are singular beyond jitter: rank {rank} of {d + c}") from None
    sol = linalg.cho_solve(factor, rhs)
    return ModelWeights("feat_label", {"W_x": sol[:d], "W_y": sol[d:]})


def fit_feature_baseline(x, labels: LabelMatrix, epochs: int = 300, lr: float = 0.5,
                         weight_decay: float = 1e-3) -> np.ndarray:
    """Softmax regression on raw features (no graph); returns class probabilities for all nodes.

    Serves as the first-stage base predictor for correct & smooth.
    """
    x = np.asarray(x, dtype=np.float64)
    xb = np.hstack([x, np.ones((len(x), 1))])
    idx = labels.train_idx
    y = labels.Y[idx]
    w = np.zeros((xb.shape[1], labels.c))
    for _ in range(epochs):
        z = xb[idx] @ w
        grad = xb[idx].T @ (softmax(z) - y) / len(idx) + 2 * weight_decay * w
        w -= lr * grad
    return softmax(xb @ w)


def fit_trainable_cs(p_c: PropagationOperator, p_s: PropagationOperator, y_base, labels: LabelMatrix,
                     cfg: TrainConfig, val_idx=(), test_idx=(), n_splits: int = 10,
                     gamma_mode: str = "autoscale") -> FitResult:
    """Two-stage trainable correct & smooth.

    A pool of ``n_splits`` Bernoulli(alpha) splits is drawn once and the
    weight-free tensors are precomputed per split; each epoch takes one
    gradient step per pooled split, scoring ``D_out`` rows.
    """
    if y_base is None:
        raise ValueError("trainable C&S needs base predictions")
    y_base = np.asarray(y_base, dtype=np.float64)
    rng = make_rng(cfg.seed, 2)
    pool = []
    for _ in range(n_splits):
        mask = split_from_inputs(labels, sample_inputs(labels.m, cfg.alpha, rng), cfg.alpha)
        y_s, y_c = cs_components(p_c, p_s, y_base, labels, mask, gamma_mode)
        pool.append((y_s, y_c, mask.out_mask))
    fns = cs_objective(pool, labels.Y, cfg.loss, cfg.weight_decay)
    y_s_full, y_c_full = cs_components(p_c, p_s, y_base, labels, full_input_split(labels), gamma_mode)

    def predict(p):
        return y_s_full @ p["W_s"] + y_c_full @ p["W_c_hat"]

    params = dict(ModelWeights.cs(labels.c).mats)
    evaluate = lambda p: accuracy(predict(p), labels, val_idx)
    params, curve = gradient_descent(None, params, cfg, fixed=False, evaluate=evaluate,
                                     steps_per_epoch=lambda epoch: fns)
    w = ModelWeights("cs_trainable", params)
    pred = predict(params)
    return FitResult(w, curve, accuracy(pred, labels, val_idx), accuracy(pred, labels, test_idx))


# checkpoints ----------------------------------------------------------------------

def save_checkpoint(path, weights: ModelWeights, cfg: Optional[TrainConfig] = None, seed: Optional[int] = None):
    """JSON dump: a header (kind, shapes, seed, config hash) and the matrices as nested lists."""
    header = {"kind": weights.kind,
              "shapes": {k: list(v.shape) for k, v in weights.mats.items()},
              "seed": seed if seed is not None else (cfg.seed if cfg else None),
              "config_hash": cfg.digest() if cfg else None}
    body = {"header": header, "matrices": {k: v.tolist() for k, v in weights.mats.items()}}
    Path(path).write_text(json.dumps(body, sort_keys=True) + "\n", encoding="utf-8")


def load_checkpoint(path) -> tuple[ModelWeights, dict]:
    body = json.loads(Path(path).read_text(encoding="utf-8"))
    header = body["header"]
    mats = {}
    for k, v in body["matrices"].items():
        shape = tuple(header["shapes"][k])
        mats[k] = np.array(v, dtype=np.float64).reshape(shape)
    return ModelWeights(header["kind"], mats), header
