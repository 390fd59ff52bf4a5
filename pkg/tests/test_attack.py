import warnings

import numpy as np
import pytest

from daup.attack import (AttackDataset, ConstantModel, DegenerateDatasetWarning, LogisticModel,
                         MlpConfig, evaluate, init_mlp, load_model, lr_loss_grad, mlp_loss_grad,
                         save_model, train_lr, train_mlp, train_mlp_many, _bce, _forward)
from daup.puf import ContractViolation, new_puf, parity_features
from daup.scrambler import respond

from conftest import random_challenges


def puf_data(seed, n, scrambled=False, rng=None):
    rng = rng or np.random.default_rng(seed)
    p = new_puf(64, 0.0, seed)
    c = random_challenges(rng, n)
    y = respond(p, c, 0xC0FFEE) if scrambled else p.eval(c)
    return AttackDataset(c, y)


def split(ds, n_train):
    return ds.take(slice(0, n_train)), ds.take(slice(n_train, None))


def rel_err(a, b):
    return np.max(np.abs(a - b) / np.maximum(np.abs(a) + np.abs(b), 1e-8))


# -- gradients against central finite differences -------------------------------

def test_lr_gradient_matches_finite_differences(rng):
    ds = puf_data(1, 10)
    X, y = ds.features, ds.labels.astype(float)
    w = rng.normal(0, 0.5, X.shape[1])
    _, g = lr_loss_grad(w, X, y)
    h = 1e-6
    fd = np.array([(lr_loss_grad(w + h * e, X, y)[0] - lr_loss_grad(w - h * e, X, y)[0]) / (2 * h)
                   for e in np.eye(len(w))])
    assert rel_err(g, fd) < 1e-4


def test_mlp_gradient_matches_finite_differences(rng):
    ds = puf_data(2, 10)
    X, y = ds.features[:, :64], ds.labels.astype(float)
    W, B = init_mlp(MlpConfig(), rng)
    B = [b + rng.normal(0, 0.1, b.shape) for b in B]
    _, gW, gB = mlp_loss_grad(W, B, X, y)

    def loss():
        return _bce(_forward(W, B, X)[-1][:, 0], y)

    h = 1e-6
    for params, grads in ((W, gW), (B, gB)):
        for p, g in zip(params, grads):
            fd = np.zeros_like(p)
            for idx in np.ndindex(p.shape):
                old = p[idx]
                p[idx] = old + h
                up = loss()
                p[idx] = old - h
                down = loss()
                p[idx] = old
                fd[idx] = (up - down) / (2 * h)
            mask = np.abs(fd) + np.abs(g) > 1e-7   # skip exact zeros from dead ReLUs
            assert rel_err(g[mask], fd[mask]) < 1e-4


# -- logistic regression ------------------------------------------------------------

def test_lr_models_an_unprotected_puf():
    train, test = split(puf_data(3, 5000), 3000)
    assert evaluate(train_lr(train), test).accuracy >= 0.95


def test_lr_constant_labels_give_constant_model():
    ds = puf_data(4, 200)
    ds = AttackDataset(ds.challenges, np.ones(200, dtype=np.uint8))
    with pytest.warns(DegenerateDatasetWarning):
        m = train_lr(ds)
    assert isinstance(m, ConstantModel)
    holdout = puf_data(5, 1000)
    assert evaluate(m, holdout).accuracy == pytest.approx(holdout.labels.mean())


def test_lr_label_flip_symmetry():
    train, test = split(puf_data(6, 1500), 500)
    a = train_lr(train)
    b = train_lr(AttackDataset(train.challenges, 1 - train.labels))
    assert np.allclose(a.weights, -b.weights, atol=1e-9)
    assert np.all(a.predict(test.challenges) != b.predict(test.challenges))


def test_lr_is_deterministic():
    train, _ = split(puf_data(7, 400), 300)
    assert np.array_equal(train_lr(train).weights, train_lr(train).weights)


def test_chance_floor_on_unrelated_labels(rng):
    train = AttackDataset(random_challenges(rng, 2000), rng.integers(0, 2, 2000))
    test = AttackDataset(random_challenges(rng, 4000), rng.integers(0, 2, 4000))
    acc = evaluate(train_lr(train), test).accuracy
    assert abs(acc - 0.5) <= 3 / np.sqrt(len(test))


def test_lr_accuracy_grows_with_data():
    sizes = (100, 500, 1000, 3000)
    means = []
    for n in sizes:
        accs = []
        for seed in range(5):
            train, test = split(puf_data(100 + seed, n + 2000), n)
            accs.append(evaluate(train_lr(train), test).accuracy)
        means.append(np.mean(accs))
    assert all(b >= a - 0.01 for a, b in zip(means, means[1:]))


@pytest.mark.xfail(strict=True, reason=(
    "scrambling is a permutation fixing C[0], so the first two parity features of SC equal "
    "those of C; LR learns their weights and lands around 0.52-0.58 at 20K on this model"))
def test_lr_on_protected_data_stays_at_chance():
    accs = []
    for seed in range(3):
        train, test = split(puf_data(200 + seed, 22000, scrambled=True), 20000)
        accs.append(evaluate(train_lr(train), test).accuracy)
    assert all(abs(a - 0.5) <= 0.05 for a in accs)


# -- MLP ---------------------------------------------------------------------------

def test_mlp_config_defaults():
    cfg = MlpConfig()
    assert cfg.hidden == (5, 10, 15)
    assert (cfg.learning_rate, cfg.momentum, cfg.epochs, cfg.input_width) == (0.01, 0.99, 2000, 64)
    with pytest.raises(ValueError):
        MlpConfig(epochs=0)


def test_stacked_training_equals_single_training():
    a, b = puf_data(8, 300), puf_data(9, 300)
    cfg = MlpConfig(epochs=5)
    many = train_mlp_many([a, b], cfg, [1, 2])
    single = train_mlp(b, cfg, seed=2)
    for w1, w2 in zip(many[1].weights, single.weights):
        assert np.allclose(w1, w2)


def test_mlp_groups_datasets_by_size():
    dss = [puf_data(10, 200), puf_data(11, 300), puf_data(12, 200)]
    models = train_mlp_many(dss, MlpConfig(epochs=3))
    assert len(models) == 3
    assert np.allclose(train_mlp(dss[2], MlpConfig(epochs=3), seed=2).weights[0], models[2].weights[0])


def test_mlp_learns_unprotected_puf_quickly():
    train, test = split(puf_data(13, 3000), 1000)
    assert evaluate(train_mlp(train, MlpConfig(epochs=100)), test).accuracy > 0.85


def test_mlp_on_protected_scenario_one_is_near_chance():
    train, test = split(puf_data(14, 3000, scrambled=True), 1000)
    acc = evaluate(train_mlp(train, seed=1), test).accuracy
    assert abs(acc - 0.5) <= 0.08


def test_mlp_rejects_empty_and_wrong_width(rng):
    with pytest.raises(ContractViolation):
        train_mlp(AttackDataset(np.zeros((0, 64), np.uint8), np.zeros(0)))
    with pytest.raises(ContractViolation):
        train_mlp(AttackDataset(random_challenges(rng, 50, n=32), rng.integers(0, 2, 50)),
                  MlpConfig(epochs=1))


# -- evaluation and persistence ------------------------------------------------------

def test_perfect_model_scores_one():
    p = new_puf(64, 0.0, 15)
    ds = puf_data(15, 500)
    oracle = LogisticModel(p.weights.copy())
    assert evaluate(oracle, ds).accuracy == 1.0


def test_constant_model_on_balanced_holdout(rng):
    ds = AttackDataset(random_challenges(rng, 2000), np.tile([0, 1], 1000))
    ev = evaluate(ConstantModel(1), ds)
    assert ev.accuracy == 0.5 and ev.correct == 1000 and ev.total == 2000


def test_evaluate_rejects_empty_or_overlapping_holdout():
    ds = puf_data(16, 100)
    with pytest.raises(ContractViolation):
        evaluate(ConstantModel(0), ds.take(slice(0, 0)))
    with pytest.raises(ContractViolation):
        evaluate(ConstantModel(0), ds.take(slice(50, 100)), training=ds.take(slice(0, 60)))


def test_without_removes_shared_challenges():
    ds = puf_data(17, 100)
    assert len(ds.without(ds.take(slice(0, 30)))) == 70


@pytest.mark.parametrize("kind", ["lr", "mlp", "const"])
def test_model_roundtrip(tmp_path, kind):
    train, test = split(puf_data(18, 400), 300)
    model = {"lr": lambda: train_lr(train), "mlp": lambda: train_mlp(train, MlpConfig(epochs=2)),
             "const": lambda: ConstantModel(1)}[kind]()
    save_model(model, tmp_path / "m.json")
    back = load_model(tmp_path / "m.json")
    assert np.array_equal(back.predict(test.challenges), model.predict(test.challenges))
