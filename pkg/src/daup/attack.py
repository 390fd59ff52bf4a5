"""Modeling-attack learners written directly on numpy.

``train_lr`` fits logistic regression on the N+1 parity features. ``train_mlp``
fits the 64-5-10-15-1 ReLU network on the N parity features (the constant
feature is absorbed by the first-layer bias). Several MLPs with equal
training-set size can be fitted in one vectorized pass by ``train_mlp_many``.
"""
from __future__ import annotations

import json
import warnings
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .puf import ContractViolation, as_bits, parity_features


class DegenerateDatasetWarning(UserWarning):
    pass


@dataclass
class AttackDataset:
    challenges: np.ndarray
    labels: np.ndarray
    split: str = "train"

    def __post_init__(self):
        self.challenges = as_bits(self.challenges)
        if self.challenges.ndim != 2:
            raise ContractViolation("challenges must be a 2-D batch")
        self.labels = np.asarray(self.labels, dtype=np.uint8).reshape(-1)
        if len(self.labels) != len(self.challenges):
            raise ContractViolation("one label per challenge")

    def __len__(self):
        return len(self.labels)

    @property
    def features(self) -> np.ndarray:
        return parity_features(self.challenges)

    @classmethod
    def from_log(cls, log, bit: int = 0, split: str = "train") -> "AttackDataset":
        """Challenges and response bit ``bit`` of every entry in a CaptureLog."""
        if len(log) == 0:
            return cls(np.zeros((0, 0), dtype=np.uint8), np.zeros(0, dtype=np.uint8), split)
        chal = np.stack([e.challenge for e in log.entries])
        lab = np.array([e.response[bit] for e in log.entries], dtype=np.uint8)
        return cls(chal, lab, split)

    def without(self, other: "AttackDataset") -> "AttackDataset":
        """Drop rows whose challenge also occurs in ``other``."""
        seen = {row.tobytes() for row in np.packbits(other.challenges, axis=1)}
        packed = np.packbits(self.challenges, axis=1)
        keep = np.array([row.tobytes() not in seen for row in packed], dtype=bool)
        return AttackDataset(self.challenges[keep], self.labels[keep], self.split)

    def take(self, idx) -> "AttackDataset":
        return AttackDataset(self.challenges[idx], self.labels[idx], self.split)


def _check_trainable(ds: AttackDataset) -> bool:
    if len(ds) == 0:
        raise ContractViolation("cannot train on an empty dataset")
    if len(ds) < 2 or ds.labels.min() == ds.labels.max():
        warnings.warn("training labels hold a single class; fitting a constant predictor",
                      DegenerateDatasetWarning, stacklevel=3)
        return False
    return True


def _sigmoid(z):
    return np.exp(-np.logaddexp(0.0, -z))


def _bce(logits, y):
    # mean of log(1 + e^z) - y z
    return float(np.mean(np.logaddexp(0.0, logits) - y * logits))


@dataclass
class ConstantModel:
    value: int

    def predict(self, challenges) -> np.ndarray:
        return np.full(len(challenges), self.value, dtype=np.uint8)

    def to_dict(self):
        return {"kind": "constant", "value": self.value}


@dataclass
class LogisticModel:
    weights: np.ndarray

    def logits(self, challenges) -> np.ndarray:
        return parity_features(challenges) @ self.weights

    def predict(self, challenges) -> np.ndarray:
        return (self.logits(challenges) > 0).astype(np.uint8)

    def to_dict(self):
        return {"kind": "logistic", "weights": self.weights.tolist()}


def lr_loss_grad(w, X, y):
    """Mean cross-entropy of a logistic model and its gradient."""
    z = X @ w
    return _bce(z, y), X.T @ (_sigmoid(z) - y) / len(y)


def train_lr(ds: AttackDataset, *, lr: float = 1.0, momentum: float = 0.9, iters: int = 1000):
    """Full-batch gradient descent with momentum on the parity features, from zero weights."""
    if not _check_trainable(ds):
        return ConstantModel(int(ds.labels[0]))
    X = ds.features
    y = ds.labels.astype(np.float64)
    w = np.zeros(X.shape[1])
    v = np.zeros_like(w)
    for _ in range(iters):
        _, g = lr_loss_grad(w, X, y)
        v = momentum * v - lr * g
        w = w + v
    return LogisticModel(w)


@dataclass
class MlpConfig:
    hidden: tuple[int, ...] = (5, 10, 15)
    learning_rate: float = 0.01
    momentum: float = 0.99
    epochs: int = 2000
    batch_size: int = 64
    input_width: int = 64

    def __post_init__(self):
        self.hidden = tuple(int(h) for h in self.hidden)
        vals = [*self.hidden, self.learning_rate, self.momentum, self.epochs,
                self.batch_size, self.input_width]
        if any(v <= 0 for v in vals):
            raise ValueError(f"MlpConfig values must be positive: {self}")

    @property
    def dims(self) -> list[int]:
        return [self.input_width, *self.hidden, 1]


@dataclass
class MlpModel:
    weights: list[np.ndarray]
    biases: list[np.ndarray]
    config: MlpConfig = field(default_factory=MlpConfig)

    def logits(self, challenges) -> np.ndarray:
        a = mlp_inputs(challenges, self.config.input_width)
        return _forward(self.weights, self.biases, a)[-1][..., 0]

    def predict(self, challenges) -> np.ndarray:
        return (self.logits(challenges) > 0).astype(np.uint8)

    def to_dict(self):
        return {"kind": "mlp", "config": asdict(self.config),
                "weights": [w.tolist() for w in self.weights],
                "biases": [b.tolist() for b in self.biases]}


def mlp_inputs(challenges, width: int) -> np.ndarray:
    feats = parity_features(challenges)
    if feats.shape[-1] - 1 != width:
        raise ContractViolation(f"MLP expects {width}-bit challenges, got {feats.shape[-1] - 1}")
    return feats[..., :width]


def _forward(W, B, x):
    """Activations of every layer; the last entry holds output logits."""
    acts = [x]
    for l, (w, b) in enumerate(zip(W, B)):
        z = acts[-1] @ w + b[..., None, :] if w.ndim == 3 else acts[-1] @ w + b
        acts.append(np.maximum(z, 0.0) if l < len(W) - 1 else z)
    return acts


def _backward(W, acts, y):
    """Gradients of the mean cross-entropy, layer by layer, for stacked or single nets."""
    n = acts[0].shape[-2]
    d = (_sigmoid(acts[-1]) - y[..., None]) / n
    gW, gB = [None] * len(W), [None] * len(W)
    for l in range(len(W) - 1, -1, -1):
        gW[l] = np.swapaxes(acts[l], -1, -2) @ d
        gB[l] = d.sum(axis=-2)
        if l > 0:
            d = (d @ np.swapaxes(W[l], -1, -2)) * (acts[l] > 0)
    return gW, gB


def mlp_loss_grad(W, B, X, y):
    """Loss and parameter gradients of one network on a batch."""
    acts = _forward(W, B, X)
    gW, gB = _backward(W, acts, y)
    return _bce(acts[-1][..., 0], y), gW, gB


def init_mlp(cfg: MlpConfig, rng: np.random.Generator):
    W, B = [], []
    for fan_in, fan_out in zip(cfg.dims[:-1], cfg.dims[1:]):
        bound = 1.0 / np.sqrt(fan_in)
        W.append(rng.uniform(-bound, bound, (fan_in, fan_out)))
        B.append(np.zeros(fan_out))
    return W, B


def train_mlp_many(datasets: list[AttackDataset], cfg: MlpConfig | None = None,
                   seeds: list[int] | None = None) -> list:
    """Fit one MLP per dataset; datasets of equal size share a vectorized pass."""
    cfg = cfg or MlpConfig()
    seeds = list(range(len(datasets))) if seeds is None else list(seeds)
    if len(seeds) != len(datasets):
        raise ValueError("one seed per dataset")
    models: list = [None] * len(datasets)
    groups: dict[int, list[int]] = {}
    for i, ds in enumerate(datasets):
        if _check_trainable(ds):
            groups.setdefault(len(ds), []).append(i)
        else:
            models[i] = ConstantModel(int(ds.labels[0]))
    for idx in groups.values():
        fitted = _train_stack([datasets[i] for i in idx], cfg, [seeds[i] for i in idx])
        for i, m in zip(idx, fitted):
            models[i] = m
    return models


def train_mlp(ds: AttackDataset, cfg: MlpConfig | None = None, seed: int = 0):
    return train_mlp_many([ds], cfg, [seed])[0]


def _train_stack(datasets, cfg: MlpConfig, seeds) -> list[MlpModel]:
    m = len(datasets)
    n = len(datasets[0])
    X = np.stack([mlp_inputs(ds.challenges, cfg.input_width) for ds in datasets])
    Y = np.stack([ds.labels.astype(np.float64) for ds in datasets])
    rngs = [np.random.default_rng(s) for s in seeds]
    inits = [init_mlp(cfg, r) for r in rngs]
    W = [np.stack([w[l] for w, _ in inits]) for l in range(len(cfg.dims) - 1)]
    B = [np.stack([b[l] for _, b in inits]) for l in range(len(cfg.dims) - 1)]
    VW = [np.zeros_like(w) for w in W]
    VB = [np.zeros_like(b) for b in B]
    rows = np.arange(m)[:, None]
    bs = cfg.batch_size
    for _ in range(cfg.epochs):
        perm = np.stack([r.permutation(n) for r in rngs])
        Xs, Ys = X[rows, perm], Y[rows, perm]
        for start in range(0, n, bs):
            xb, yb = Xs[:, start:start + bs], Ys[:, start:start + bs]
            acts = _forward(W, B, xb)
            gW, gB = _backward(W, acts, yb)
            for l in range(len(W)):
                VW[l] *= cfg.momentum
                VW[l] -= cfg.learning_rate * gW[l]
                W[l] += VW[l]
                VB[l] *= cfg.momentum
                VB[l] -= cfg.learning_rate * gB[l]
                B[l] += VB[l]
    return [MlpModel([w[i].copy() for w in W], [b[i].copy() for b in B], cfg) for i in range(m)]


@dataclass(frozen=True)
class Evaluation:
    accuracy: float
    correct: int
    total: int


def evaluate(model, holdout: AttackDataset, training: AttackDataset | None = None) -> Evaluation:
    """Fraction of holdout bits the model predicts correctly."""
    if len(holdout) == 0:
        raise ContractViolation("holdout set is empty")
    if training is not None and len(holdout.without(training)) != len(holdout):
        raise ContractViolation("holdout overlaps the training set")
    pred = model.predict(holdout.challenges)
    correct = int(np.count_nonzero(pred == holdout.labels))
    return Evaluation(correct / len(holdout), correct, len(holdout))


def save_model(model, path) -> None:
    Path(path).write_text(json.dumps(model.to_dict()) + "\n")


def load_model(path):
    d = json.loads(Path(path).read_text())
    kind = d["kind"]
    if kind == "constant":
        return ConstantModel(int(d["value"]))
    if kind == "logistic":
        return LogisticModel(np.array(d["weights"], dtype=np.float64))
    if kind == "mlp":
        cfg = MlpConfig(**d["config"])
        return MlpModel([np.array(w) for w in d["weights"]], [np.array(b) for b in d["biases"]], cfg)
    raise ValueError(f"unknown model kind {kind!r}")
