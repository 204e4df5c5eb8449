"""Semi-supervised classification: objective, optimizer, fit loop, metrics."""

from __future__ import annotations

import time
from dataclasses import dataclass
from typing import Mapping

import numpy as np

from . import rng as rng_mod
from .autodiff import (
    GradCheckReport,
    GradMatrix,
    Tape,
    add,
    constant,
    cross_entropy_rows,
    gradcheck,
    mul,
    row_select,
)
from .graph import HinGraph, validate_graph
from .model import ModelParams, clone_with, forward, init_params, normalized_adjacency


@dataclass
class TrainConfig:
    """Hyperparameters; defaults follow the reference setup.

    ``layer_widths`` are the widths of layers 2..N. For labeled types the
    final layer width is forced to the class count so the last layer's
    rows act as classification logits; unlabeled types keep the configured
    final width.
    """

    learning_rate: float = 0.01
    l2_weight: float = 5e-4
    dropout_rate: float = 0.5
    max_epochs: int = 300
    patience: int = 30
    seed: int = 0
    layer_widths: tuple[int, ...] = (64, 32, 16, 8)
    d_a: int = 64
    mean_variant: bool = False
    loss_weights: dict[str, float] | None = None

    def __post_init__(self):
        self.layer_widths = tuple(int(w) for w in self.layer_widths)
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ValueError("dropout_rate must be in [0, 1)")
        if self.l2_weight < 0:
            raise ValueError("l2_weight must be nonnegative")
        if self.max_epochs < 0 or self.patience < 0:
            raise ValueError("max_epochs and patience must be nonnegative")
        if self.patience > self.max_epochs:
            raise ValueError("patience must not exceed max_epochs")
        if not self.layer_widths or min(self.layer_widths) < 1:
            raise ValueError("layer_widths must be positive")


@dataclass
class AdamState:
    """First/second moment estimates per named parameter."""

    m: dict[str, np.ndarray]
    v: dict[str, np.ndarray]
    step: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @staticmethod
    def for_params(named: Mapping[str, GradMatrix]) -> "AdamState":
        return AdamState(
            m={k: np.zeros_like(p.value) for k, p in named.items()},
            v={k: np.zeros_like(p.value) for k, p in named.items()},
        )


def adam_step(
    named: Mapping[str, GradMatrix],
    state: AdamState,
    lr: float,
    l2_weight: float = 0.0,
) -> None:
    """Bias-corrected Adam update in place.

    The l2 penalty enters as an extra gradient term ``l2_weight * theta``
    before the moment updates (coupled weight decay).
    """
    state.step += 1
    t = state.step
    for name, p in named.items():
        g = p.grad if p.grad is not None else np.zeros_like(p.value)
        if l2_weight:
            g = g + l2_weight * p.value
        state.m[name] = state.beta1 * state.m[name] + (1 - state.beta1) * g
        state.v[name] = state.beta2 * state.v[name] + (1 - state.beta2) * g * g
        m_hat = state.m[name] / (1 - state.beta1**t)
        v_hat = state.v[name] / (1 - state.beta2**t)
        p.value = p.value - lr * m_hat / (np.sqrt(v_hat) + state.eps)


def cross_entropy_loss(
    final: Mapping[str, GradMatrix],
    labels: Mapping[str, np.ndarray],
    labeled_idx: Mapping[str, np.ndarray],
    weights: Mapping[str, float] | None = None,
) -> GradMatrix:
    """Softmax cross-entropy summed over the labeled objects of each type.

    Per-type weights are optional; the default is the plain (unweighted)
    sum over types.
    """
    total: GradMatrix | None = None
    for t in labeled_idx:
        idx = np.asarray(labeled_idx[t], dtype=np.int64)
        if len(idx) == 0:
            continue
        term = cross_entropy_rows(row_select(final[t], idx), labels[t][idx])
        if weights and t in weights:
            term = mul(term, constant(np.array([[float(weights[t])]])))
        total = term if total is None else add(total, term)
    if total is None:
        raise ValueError("no labeled objects to compute a loss over")
    return total


def classification_metrics(
    y_true: np.ndarray, y_pred: np.ndarray, n_classes: int
) -> dict:
    """Accuracy, micro/macro F1, per-class F1 over ``range(n_classes)``.

    Micro counts are pooled over classes; in single-label classification
    that makes micro F1 equal accuracy. Classes absent from both the truth
    and the predictions contribute an F1 of 0 to the macro average.
    """
    y_true = np.asarray(y_true)
    y_pred = np.asarray(y_pred)
    if len(y_true) == 0:
        raise ValueError("cannot score an empty index set")
    tp = np.zeros(n_classes)
    fp = np.zeros(n_classes)
    fn = np.zeros(n_classes)
    for c in range(n_classes):
        tp[c] = np.sum((y_pred == c) & (y_true == c))
        fp[c] = np.sum((y_pred == c) & (y_true != c))
        fn[c] = np.sum((y_pred != c) & (y_true == c))
    denom = 2 * tp + fp + fn
    per_class = np.divide(2 * tp, denom, out=np.zeros(n_classes), where=denom > 0)
    micro_denom = 2 * tp.sum() + fp.sum() + fn.sum()
    return {
        "accuracy": float(np.mean(y_true == y_pred)),
        "micro_f1": float(2 * tp.sum() / micro_denom) if micro_denom else 0.0,
        "macro_f1": float(per_class.mean()),
        "per_class_f1": [float(x) for x in per_class],
    }


def evaluate(
    params: ModelParams,
    g: HinGraph,
    split: str | Mapping[str, np.ndarray],
    norm_adj=None,
) -> dict[str, dict]:
    """Metrics per labeled type on the given split (name or index map)."""
    if isinstance(split, str):
        parts = {
            t: g.splits[t][split] for t in g.splits if split in g.splits[t]
        }
    else:
        parts = dict(split)
    parts = {t: np.asarray(v, dtype=np.int64) for t, v in parts.items() if len(v)}
    if not parts:
        raise ValueError("empty split: nothing to evaluate")
    h, _ = forward(params, g, mode="eval", norm_adj=norm_adj)
    out = {}
    for t, idx in parts.items():
        truth = g.labels[t][idx]
        if truth.min() < 0:
            raise ValueError(f"split for type {t} contains unlabeled objects")
        pred = h[t].value[idx].argmax(axis=1)
        out[t] = classification_metrics(truth, pred, g.class_counts[t])
    return out


def _val_score(metrics: Mapping[str, dict]) -> float:
    return float(np.mean([m["micro_f1"] for m in metrics.values()]))


def build_params(g: HinGraph, cfg: TrainConfig) -> ModelParams:
    """Initialize model parameters sized for the graph and config."""
    widths: list[int | dict[str, int]] = list(cfg.layer_widths[:-1])
    final = {
        t: g.class_counts[t] if t in g.class_counts and t in g.labels else cfg.layer_widths[-1]
        for t in g.schema.object_types
    }
    widths.append(final)
    in_dims = {t: g.features[t].shape[1] for t in g.schema.object_types}
    return init_params(
        g.schema, in_dims, widths, cfg.d_a, cfg.seed, cfg.mean_variant
    )


def model_loss_gradcheck(
    g: HinGraph,
    cfg: TrainConfig,
    h: float = 1e-5,
    tol: float = 1e-4,
    params: ModelParams | None = None,
) -> GradCheckReport:
    """End-to-end gradient check of forward + loss over every parameter.

    Runs in eval mode (no dropout) so the objective is deterministic; the
    loss covers all labeled objects.
    """
    params = params if params is not None else build_params(g, cfg)
    labeled_idx = {
        t: np.nonzero(lab >= 0)[0] for t, lab in g.labels.items() if (lab >= 0).any()
    }
    if not labeled_idx:
        raise ValueError("gradcheck needs at least one labeled object")
    values = {k: p.value for k, p in params.named().items()}

    def f(leaves):
        model = clone_with(params, leaves)
        final, _ = forward(model, g, mode="eval")
        return cross_entropy_loss(final, g.labels, labeled_idx)

    return gradcheck(f, values, h=h, tol=tol)


def fit(g: HinGraph, cfg: TrainConfig) -> tuple[ModelParams, list[dict]]:
    """Train with Adam and early stopping on validation micro F1.

    Per epoch: one train-mode forward on the whole graph, the loss over
    the train split, one backward pass, one optimizer step, then an
    eval-mode pass for the validation metrics. Keeps the parameters of
    the best validation epoch. The log holds one record per epoch.
    """
    problems = validate_graph(g)
    if problems:
        raise ValueError("invalid graph: " + "; ".join(problems))
    labeled = [
        t
        for t in g.schema.object_types
        if t in g.labels and t in g.splits and "train" in g.splits[t]
    ]
    if not labeled or all(len(g.splits[t]["train"]) == 0 for t in labeled):
        raise ValueError("training needs at least one labeled object with splits")
    train_idx = {t: g.splits[t]["train"] for t in labeled}
    val_idx = {t: g.splits[t]["val"] for t in labeled if "val" in g.splits[t]}
    params = build_params(g, cfg)
    named = params.named()
    adam = AdamState.for_params(named)
    norm_adj = normalized_adjacency(g)
    log: list[dict] = []
    best_score = -np.inf
    best_values: dict[str, np.ndarray] = {k: p.value.copy() for k, p in named.items()}
    stale = 0
    for epoch in range(1, cfg.max_epochs + 1):
        t0 = time.perf_counter()
        tape = Tape()
        params.attach(tape)
        h, _ = forward(
            params,
            g,
            mode="train",
            rng=rng_mod.stream(cfg.seed, "dropout", epoch),
            dropout_rate=cfg.dropout_rate,
            norm_adj=norm_adj,
        )
        loss = cross_entropy_loss(h, g.labels, train_idx, cfg.loss_weights)
        tape.backward(loss)
        adam_step(named, adam, cfg.learning_rate, cfg.l2_weight)
        params.attach(None)
        val_metrics = evaluate(params, g, val_idx, norm_adj=norm_adj) if val_idx else {}
        score = _val_score(val_metrics) if val_metrics else -float(loss.value[0, 0])
        record = {
            "epoch": epoch,
            "train_loss": float(loss.value[0, 0]),
            "val_micro_f1": _val_score(val_metrics) if val_metrics else None,
            "val_macro_f1": float(
                np.mean([m["macro_f1"] for m in val_metrics.values()])
            )
            if val_metrics
            else None,
            "epoch_seconds": time.perf_counter() - t0,
        }
        log.append(record)
        if score > best_score:
            best_score = score
            best_values = {k: p.value.copy() for k, p in named.items()}
            stale = 0
        else:
            stale += 1
            if stale >= cfg.patience > 0:
                break
    for k, p in named.items():
        p.value = best_values[k]
    return params, log
