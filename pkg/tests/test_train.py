import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hetconv.autodiff import GradMatrix, constant
from hetconv.train import (
    AdamState,
    TrainConfig,
    adam_step,
    classification_metrics,
    cross_entropy_loss,
    evaluate,
    fit,
    model_loss_gradcheck,
)


class TestTrainConfig:
    def test_defaults_follow_reference_setup(self):
        cfg = TrainConfig()
        assert cfg.learning_rate == 0.01
        assert cfg.l2_weight == 5e-4
        assert cfg.dropout_rate == 0.5
        assert cfg.layer_widths == (64, 32, 16, 8)
        assert cfg.d_a == 64

    def test_patience_cannot_exceed_epochs(self):
        with pytest.raises(ValueError, match="patience"):
            TrainConfig(max_epochs=10, patience=20)

    def test_rate_ranges(self):
        with pytest.raises(ValueError):
            TrainConfig(dropout_rate=1.0)
        with pytest.raises(ValueError):
            TrainConfig(learning_rate=0.0)


class TestCrossEntropyLoss:
    def test_confident_correct_near_zero(self):
        final = {"B": constant(np.array([[50.0, -50.0]]))}
        loss = cross_entropy_loss(final, {"B": np.array([0])}, {"B": np.array([0])})
        assert loss.value[0, 0] == pytest.approx(0.0, abs=1e-12)

    def test_uniform_prediction_ln4(self):
        final = {"B": constant(np.zeros((1, 4)))}
        loss = cross_entropy_loss(final, {"B": np.array([1])}, {"B": np.array([0])})
        assert loss.value[0, 0] == pytest.approx(np.log(4.0))

    def test_two_types_add(self):
        rng = np.random.default_rng(0)
        fa, fb = rng.normal(size=(3, 2)), rng.normal(size=(4, 3))
        la, lb = np.array([0, 1, 0]), np.array([2, 0, 1, 1])
        ia, ib = np.array([0, 2]), np.array([1, 3])
        both = cross_entropy_loss(
            {"A": constant(fa), "B": constant(fb)},
            {"A": la, "B": lb},
            {"A": ia, "B": ib},
        ).value[0, 0]
        only_a = cross_entropy_loss({"A": constant(fa)}, {"A": la}, {"A": ia}).value[0, 0]
        only_b = cross_entropy_loss({"B": constant(fb)}, {"B": lb}, {"B": ib}).value[0, 0]
        assert both == pytest.approx(only_a + only_b)

    def test_loss_nonnegative(self):
        rng = np.random.default_rng(1)
        for seed in range(5):
            f = {"B": constant(rng.normal(size=(6, 3)) * 10)}
            loss = cross_entropy_loss(
                f, {"B": rng.integers(0, 3, 6)}, {"B": np.arange(6)}
            )
            assert loss.value[0, 0] >= 0.0

    def test_per_type_weights(self):
        f = {"B": constant(np.zeros((1, 2)))}
        plain = cross_entropy_loss(f, {"B": np.array([0])}, {"B": np.array([0])})
        scaled = cross_entropy_loss(
            f, {"B": np.array([0])}, {"B": np.array([0])}, weights={"B": 2.0}
        )
        assert scaled.value[0, 0] == pytest.approx(2 * plain.value[0, 0])

    def test_no_labeled_objects_error(self):
        with pytest.raises(ValueError, match="labeled"):
            cross_entropy_loss({}, {}, {})


def _param(value):
    return {"w": GradMatrix(np.array(value, dtype=float))}


class TestAdamStep:
    def test_first_step_magnitude_is_lr(self):
        named = _param([[0.0, 0.0]])
        named["w"].grad = np.array([[3.0, -7.0]])
        state = AdamState.for_params(named)
        adam_step(named, state, lr=0.01)
        # bias correction makes the first update lr * g / (|g| + eps)
        assert np.allclose(np.abs(named["w"].value), 0.01, atol=1e-6)
        assert named["w"].value[0, 0] < 0 < named["w"].value[0, 1]

    def test_update_opposes_gradient(self):
        named = _param([[1.0, 1.0]])
        named["w"].grad = np.array([[5.0, -5.0]])
        adam_step(named, AdamState.for_params(named), lr=0.1)
        assert named["w"].value[0, 0] < 1.0 < named["w"].value[0, 1]

    def test_zero_grad_zero_moments_no_change(self):
        named = _param([[2.0, -3.0]])
        named["w"].grad = np.zeros((1, 2))
        adam_step(named, AdamState.for_params(named), lr=0.1, l2_weight=0.0)
        assert np.array_equal(named["w"].value, [[2.0, -3.0]])

    def test_l2_added_as_gradient(self):
        named = _param([[2.0]])
        named["w"].grad = np.zeros((1, 1))
        adam_step(named, AdamState.for_params(named), lr=0.1, l2_weight=5e-4)
        assert named["w"].value[0, 0] < 2.0

    def test_identical_runs_identical_trajectories(self):
        runs = []
        for _ in range(2):
            named = _param([[1.0, -2.0], [0.5, 0.25]])
            state = AdamState.for_params(named)
            rng = np.random.default_rng(0)
            for _ in range(20):
                named["w"].grad = rng.normal(size=(2, 2))
                adam_step(named, state, lr=0.01, l2_weight=5e-4)
            runs.append(named["w"].value.copy())
        assert np.array_equal(runs[0], runs[1])


class TestMetrics:
    def test_all_correct(self):
        y = np.array([0, 1, 2, 1])
        m = classification_metrics(y, y, 3)
        assert m["micro_f1"] == 1.0
        assert m["macro_f1"] == 1.0
        assert m["accuracy"] == 1.0

    def test_degenerate_binary_predictions(self):
        # all predicted class 0, truth balanced: micro 0.5, macro 1/3
        y_true = np.array([0, 0, 1, 1])
        y_pred = np.zeros(4, dtype=int)
        m = classification_metrics(y_true, y_pred, 2)
        assert m["micro_f1"] == pytest.approx(0.5)
        assert m["macro_f1"] == pytest.approx(1 / 3)
        assert m["per_class_f1"] == [pytest.approx(2 / 3), 0.0]

    def test_absent_class_contributes_zero_to_macro(self):
        y = np.array([0, 0])
        m = classification_metrics(y, y, 3)
        assert m["per_class_f1"][2] == 0.0
        assert m["macro_f1"] == pytest.approx(1 / 3)

    @given(st.integers(0, 2**32 - 1))
    @settings(max_examples=40, deadline=None)
    def test_micro_equals_accuracy(self, seed):
        rng = np.random.default_rng(seed)
        n_classes = int(rng.integers(2, 6))
        y_true = rng.integers(0, n_classes, 30)
        y_pred = rng.integers(0, n_classes, 30)
        m = classification_metrics(y_true, y_pred, n_classes)
        assert m["micro_f1"] == pytest.approx(m["accuracy"])

    def test_empty_split_rejected(self):
        with pytest.raises(ValueError, match="empty"):
            classification_metrics(np.array([]), np.array([]), 2)


class TestEvaluate:
    def test_argmax_invariant_to_row_shifts(self, toy_graph):
        from hetconv.model import forward
        from hetconv.train import build_params

        params = build_params(toy_graph, TrainConfig(layer_widths=(3, 2), d_a=2, seed=0))
        base = evaluate(params, toy_graph, "test")
        h, _ = forward(params, toy_graph)
        shifted = h["B"].value + np.random.default_rng(0).normal(size=(3, 1))
        pred_base = h["B"].value.argmax(axis=1)
        assert np.array_equal(shifted.argmax(axis=1), pred_base)
        assert set(base) == {"B"}

    def test_empty_split_error(self, toy_graph):
        params = _fit_quick(toy_graph, 0)[0]
        with pytest.raises(ValueError, match="empty"):
            evaluate(params, toy_graph, {"B": np.array([], dtype=int)})


def _fit_quick(g, epochs, **kw):
    cfg = TrainConfig(
        layer_widths=(3, 2), d_a=2, seed=0, max_epochs=epochs,
        patience=min(epochs, 30), **kw,
    )
    return fit(g, cfg)


class TestFit:
    def test_zero_epochs_returns_initialized(self, toy_graph):
        params, log = _fit_quick(toy_graph, 0)
        assert log == []
        assert params.n_layers == 3

    def test_loss_decreases_over_ten_epochs(self, toy_graph):
        _, log = _fit_quick(toy_graph, 10, dropout_rate=0.0)
        assert log[9]["train_loss"] < log[0]["train_loss"]

    def test_log_schema(self, toy_graph):
        _, log = _fit_quick(toy_graph, 3)
        assert {"epoch", "train_loss", "val_micro_f1", "val_macro_f1", "epoch_seconds"} <= set(log[0])
        assert [r["epoch"] for r in log] == [1, 2, 3]

    def test_bit_deterministic_given_seed(self, toy_graph):
        p1, log1 = _fit_quick(toy_graph, 5)
        p2, log2 = _fit_quick(toy_graph, 5)
        for name, p in p1.named().items():
            assert np.array_equal(p.value, p2.named()[name].value)
        assert [r["train_loss"] for r in log1] == [r["train_loss"] for r in log2]

    def test_no_labels_error(self, toy_graph):
        from dataclasses import replace

        bare = replace(toy_graph, labels={}, class_counts={}, splits={})
        with pytest.raises(ValueError, match="labeled"):
            _fit_quick(bare, 3)

    def test_final_width_is_class_count(self, toy_graph):
        params, _ = _fit_quick(toy_graph, 1)
        assert params.dims[-1]["B"] == toy_graph.class_counts["B"]

    def test_mean_variant_trains_with_uniform_attention(self, toy_graph):
        from hetconv.model import forward

        cfg = TrainConfig(
            layer_widths=(3, 2), d_a=2, seed=0, max_epochs=3, patience=3,
            mean_variant=True,
        )
        params, log = fit(toy_graph, cfg)
        assert len(log) == 3
        _, records = forward(params, toy_graph)
        for layer in records:
            for att in layer.values():
                assert np.allclose(att, 1.0 / att.shape[1])

    def test_planted_signal_reaches_high_f1(self):
        from hetconv.datagen import GenSpec, DegreeSpec, EdgeSpec, generate, with_splits

        edges = (
            EdgeSpec("P", "C", DegreeSpec(dist="const", value=1)),
            EdgeSpec("A", "P", DegreeSpec(exponent=2.0, min_degree=4, max_degree=30)),
            EdgeSpec("P", "T", DegreeSpec(exponent=2.5, min_degree=1, max_degree=30)),
        )
        spec = GenSpec(
            counts={"A": 250, "P": 900, "C": 12, "T": 500},
            n_classes=4, noise=0.0, seed=3, edges=edges,
        )
        g = with_splits(generate(spec), 60.0, seed=3)
        cfg = TrainConfig(layer_widths=(64, 4), seed=3, max_epochs=60, patience=20)
        params, log = fit(g, cfg)
        best_val = max(r["val_micro_f1"] for r in log)
        assert best_val >= 0.9


class TestModelLossGradcheck:
    def test_toy_two_layer(self, toy_graph):
        cfg = TrainConfig(layer_widths=(3, 2), d_a=2, seed=0)
        report = model_loss_gradcheck(toy_graph, cfg, h=1e-5, tol=1e-4)
        assert report.passed, f"max rel err {report.max_rel_err:.2e}"
