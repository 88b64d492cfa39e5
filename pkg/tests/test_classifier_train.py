import math

import numpy as np
import pytest
from sklearn.metrics import accuracy_score, f1_score, precision_recall_fscore_support

from mglra.classifier import CrossEntropy, EmotionClassifier, cross_entropy, predict_labels
from mglra.metrics import compute_metrics, confusion_matrix, metrics_from_confusion, write_confusion_csv
from mglra.model import MGLRAModel, make_batch
from mglra.numerics import RngStream, Tensor, grad_check
from mglra.optim import Adam, adam_step
from mglra.train import TrainConfig, TrainingError, train

from conftest import tiny_config


# ---------------------------------------------------------------- classifier


def test_zero_classifier_is_uniform_and_picks_class_zero():
    clf = EmotionClassifier(4, 3, 6, RngStream(0))
    for p in clf.parameters():
        p.data[...] = 0.0
    probs = clf(Tensor(np.random.default_rng(0).normal(size=(2, 4))))
    np.testing.assert_allclose(probs.data, 1 / 6, atol=1e-15)
    assert list(predict_labels(probs)) == [0, 0]


def test_argmax_example():
    assert predict_labels(np.array([0.1, 0.7, 0.2])) == 1
    assert predict_labels(np.array([0.4, 0.4, 0.2])) == 0


def test_classifier_matches_layer_oracle():
    clf = EmotionClassifier(4, 3, 5, RngStream(1))
    rng = np.random.default_rng(1)
    clf.b_l.data[...] = rng.normal(size=3)
    clf.b_smax.data[...] = rng.normal(size=5)
    x = rng.normal(size=(3, 4))
    hidden = np.maximum(x @ clf.w_l.data + clf.b_l.data, 0.0)
    logits = hidden @ clf.w_smax.data + clf.b_smax.data
    expected = np.exp(logits - logits.max(1, keepdims=True))
    expected /= expected.sum(1, keepdims=True)
    np.testing.assert_allclose(clf(Tensor(x)).data, expected, rtol=0, atol=1e-12)


# ---------------------------------------------------------------- loss


def test_loss_values():
    onehot = Tensor(np.eye(6)[[2]])
    uniform = Tensor(np.full((1, 6), 1 / 6))
    assert cross_entropy(onehot, [2]).item() == 0.0
    assert cross_entropy(uniform, [4]).item() == pytest.approx(math.log(6), abs=1e-12)
    mixed = Tensor(np.concatenate([onehot.data, uniform.data]))
    assert cross_entropy(mixed, [2, 4]).item() == pytest.approx(math.log(6) / 2, abs=1e-12)


def test_loss_clamps_tiny_probabilities():
    ce = CrossEntropy()
    loss = ce(Tensor(np.array([[1.0, 0.0]])), [1])
    assert ce.clamp_count == 1
    assert loss.item() == pytest.approx(-math.log(1e-12))


def test_loss_gradient():
    rng = np.random.default_rng(2)
    clf = EmotionClassifier(3, 4, 3, RngStream(2))
    x = Tensor(rng.normal(size=(5, 3)))
    labels = np.array([0, 1, 2, 2, 1])
    for r in grad_check(lambda: cross_entropy(clf(x), labels), dict(clf.named_parameters())):
        assert r.passed, r


# ---------------------------------------------------------------- Adam


def test_adam_zero_gradient_no_decay_is_noop():
    p = Tensor(np.array([1.5, -2.0]), requires_grad=True)
    opt = Adam([p], lr=0.1, weight_decay=0.0)
    p.grad = np.zeros(2)
    opt.step()
    assert np.array_equal(p.data, [1.5, -2.0])


def test_adam_first_step_is_lr_times_sign():
    p = Tensor(np.array([1.0, 1.0, 1.0]), requires_grad=True)
    opt = Adam([p], lr=0.01, weight_decay=0.0)
    p.grad = np.array([3.0, -0.2, 1e-3])
    opt.step()
    np.testing.assert_allclose(p.data - 1.0, -0.01 * np.sign([3.0, -0.2, 1e-3]), rtol=1e-4)


def test_adam_matches_hand_stepped_oracle():
    lr, wd, b1, b2, eps = 0.05, 0.01, 0.9, 0.999, 1e-8
    p = Tensor(np.array([0.0]), requires_grad=True)
    opt = Adam([p], lr=lr, weight_decay=wd, betas=(b1, b2), eps=eps)
    x, m, v = 0.0, 0.0, 0.0
    for t in range(1, 11):
        g = 2.0 * (x - 3.0)  # d/dx (x - 3)^2
        m = b1 * m + (1 - b1) * g
        v = b2 * v + (1 - b2) * g * g
        m_hat = m / (1 - b1 ** t)
        v_hat = v / (1 - b2 ** t)
        x = x - lr * (m_hat / (math.sqrt(v_hat) + eps) + wd * x)

        p.grad = 2.0 * (p.data - 3.0)
        adam_step([p], opt)
        assert abs(p.data[0] - x) <= 1e-12
    assert opt.state.step == 10


def test_adam_step_rejects_foreign_params():
    a, b = Tensor(np.zeros(1), requires_grad=True), Tensor(np.zeros(1), requires_grad=True)
    with pytest.raises(ValueError):
        adam_step([b], Adam([a]))


# ---------------------------------------------------------------- metrics


def test_metrics_perfect():
    m = compute_metrics([0, 1, 2, 1], [0, 1, 2, 1], 3)
    assert m.weighted_accuracy == 1.0 and m.weighted_f1 == 1.0


def test_metrics_diagonal_confusion():
    assert metrics_from_confusion([[5, 0], [0, 5]]).weighted_accuracy == 1.0


def test_metrics_formula_and_sklearn_oracle():
    cm = np.array([[4, 1], [2, 3]])
    m = metrics_from_confusion(cm)
    # direct formula
    p0, r0 = 4 / 6, 4 / 5
    p1, r1 = 3 / 4, 3 / 5
    f0, f1 = 2 * p0 * r0 / (p0 + r0), 2 * p1 * r1 / (p1 + r1)
    assert m.weighted_f1 == pytest.approx(0.5 * f0 + 0.5 * f1, abs=1e-15)
    assert m.weighted_accuracy == 0.7
    # sklearn on the expanded label lists
    y_true = [0] * 5 + [1] * 5
    y_pred = [0, 0, 0, 0, 1, 0, 0, 1, 1, 1]
    assert np.array_equal(confusion_matrix(y_true, y_pred, 2), cm)
    assert m.weighted_f1 == pytest.approx(f1_score(y_true, y_pred, average="weighted"), abs=1e-15)
    prec, rec, f, sup = precision_recall_fscore_support(y_true, y_pred)
    np.testing.assert_allclose(m.precision, prec, atol=1e-15)
    np.testing.assert_allclose(m.recall, rec, atol=1e-15)
    np.testing.assert_allclose(m.f1, f, atol=1e-15)
    assert m.support == list(sup)


def test_metrics_random_against_sklearn():
    rng = np.random.default_rng(3)
    for _ in range(20):
        y_true, y_pred = rng.integers(0, 6, 200), rng.integers(0, 6, 200)
        m = compute_metrics(y_true, y_pred, 6)
        assert m.weighted_accuracy == pytest.approx(accuracy_score(y_true, y_pred), abs=1e-15)
        assert m.weighted_f1 == pytest.approx(f1_score(y_true, y_pred, average="weighted"), abs=1e-12)
        assert sum(map(sum, m.confusion_matrix)) == 200


def test_metrics_absent_class_reports_zero():
    m = compute_metrics([0, 0, 1], [0, 0, 0], 3)
    assert m.precision[2] == 0.0 and m.recall[2] == 0.0 and m.f1[2] == 0.0
    assert m.f1[1] == 0.0


def test_confusion_csv(tmp_path):
    m = compute_metrics([0, 1, 1], [0, 1, 0], 2)
    path = tmp_path / "cm.csv"
    write_confusion_csv(path, m, ["a", "b"])
    lines = path.read_text().splitlines()
    assert len(lines) == 3 and lines[0].startswith("true")


# ---------------------------------------------------------------- training loop


def test_zero_epochs_returns_initial_params(tiny_data):
    header, splits = tiny_data
    model = MGLRAModel(tiny_config(), header, seed=0)
    before = model.state_dict()
    result = train(model, splits["train"], splits["val"], TrainConfig(epochs=0))
    assert result.log == [] and result.steps == 0
    after = model.state_dict()
    assert all(np.array_equal(before[k], after[k]) for k in before)


def test_loss_decreases_on_fixed_batch(tiny_data):
    header, splits = tiny_data
    model = MGLRAModel(tiny_config(mask_rate=0.0), header, seed=0)
    batch = make_batch(splits["train"][:4])
    opt = Adam(model.parameters(), lr=1e-2, weight_decay=5e-5)
    losses = []
    for _ in range(6):
        out = model.forward(batch, training=True)
        loss = cross_entropy(out.probs, out.labels)
        losses.append(loss.item())
        opt.zero_grad()
        loss.backward()
        opt.step()
    assert all(b < a for a, b in zip(losses, losses[1:])), losses


def test_training_is_deterministic(tiny_data):
    header, splits = tiny_data
    logs = []
    for _ in range(2):
        model = MGLRAModel(tiny_config(), header, seed=4)
        res = train(model, splits["train"], splits["val"], TrainConfig(epochs=2, batch_size=3, seed=4))
        logs.append([(e.epoch, e.steps, e.train_loss, e.val_weighted_accuracy, e.val_weighted_f1) for e in res.log])
    assert logs[0] == logs[1]
    assert len(logs[0]) == 2


def test_max_steps_caps_training(tiny_data):
    header, splits = tiny_data
    model = MGLRAModel(tiny_config(), header, seed=0)
    res = train(model, splits["train"], splits["val"], TrainConfig(epochs=5, batch_size=2, max_steps=4))
    assert res.steps == 4 and len(res.log) == 2


def test_training_keeps_best_validation_state(tiny_data):
    header, splits = tiny_data
    model = MGLRAModel(tiny_config(), header, seed=1)
    res = train(model, splits["train"], splits["val"], TrainConfig(epochs=3, batch_size=3, learning_rate=1e-2))
    best = max(e.val_weighted_f1 for e in res.log)
    assert res.best_val_f1 == best
    assert res.best_epoch == next(e.epoch for e in res.log if e.val_weighted_f1 == best)


def test_training_error_has_context(tiny_data):
    header, splits = tiny_data
    model = MGLRAModel(tiny_config(), header, seed=0)
    bad = splits["train"][0]
    bad.utterances[0].label = 7  # outside n_classes
    with pytest.raises(TrainingError, match="epoch 1, batch 0"):
        train(model, [bad], [], TrainConfig(epochs=1))


def test_train_config_validation():
    with pytest.raises(ValueError):
        TrainConfig(learning_rate=0.0)
    with pytest.raises(ValueError):
        TrainConfig(batch_size=0)
    with pytest.raises(ValueError):
        TrainConfig(max_steps=-1)
