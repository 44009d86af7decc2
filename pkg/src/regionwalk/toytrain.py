"""Small dense ReLU classifiers on synthetic 2-d data.

Everything here exists to produce controlled networks for the region
and deviation measurements: two-moons style spirals or gaussian blobs,
label noise by uniform resampling, minibatch SGD with momentum on the
softmax cross-entropy, and a width sweep that retrains at several
capacities. The backward pass is written out by hand against the same
forward used everywhere else; a finite-difference check lives in the
test suite.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import InputError, NumericError
from .net import LayerSpec, Network, forward_batch

DATASET_KINDS = ("spirals", "gaussians")


@dataclass
class ToyDataset:
    """Labeled 2-d points. noise_indices lists the resampled label slots."""

    points: np.ndarray           # (N, 2)
    labels: np.ndarray           # (N,) int
    classes: int
    noise_fraction: float
    seed: int
    clean_labels: np.ndarray     # labels before noise
    noise_indices: np.ndarray    # which entries were resampled


@dataclass
class TrainConfig:
    widths: tuple[int, ...] = (16, 16)
    lr: float = 0.1
    momentum: float = 0.9
    epochs: int = 200
    batch_size: int = 32
    seed: int = 0
    stop_at_interpolation: bool = True
    loss_threshold: float | None = None


@dataclass
class EpochStats:
    epoch: int
    loss: float
    accuracy: float


@dataclass
class TrainResult:
    network: Network
    history: list[EpochStats]

    @property
    def final_accuracy(self) -> float:
        return self.history[-1].accuracy if self.history else float("nan")


@dataclass
class SweepPoint:
    width: int
    network: Network
    train_error: float
    test_error: float


def make_dataset(kind: str, n: int, classes: int = 3, noise_fraction: float = 0.0,
                 seed: int = 0) -> ToyDataset:
    """Synthetic 2-d dataset, class sizes balanced to within one point.

    noise_fraction of the labels (exactly round(noise_fraction * n) slots,
    chosen by seeded shuffle) are resampled uniformly over all classes, so
    at fraction 1.0 the labels carry no signal beyond chance.
    """
    if kind not in DATASET_KINDS:
        raise InputError(f"unknown dataset kind {kind!r}")
    if n < classes or classes < 2:
        raise InputError(f"need n >= classes >= 2, got n={n}, classes={classes}")
    if not 0.0 <= noise_fraction <= 1.0:
        raise InputError(f"noise_fraction must lie in [0, 1], got {noise_fraction}")
    rng = np.random.default_rng(seed)
    counts = [n // classes + (1 if c < n % classes else 0) for c in range(classes)]
    pts = []
    labels = []
    for c, m in enumerate(counts):
        if kind == "spirals":
            t = (np.arange(m) + 0.5) / m
            radius = 0.15 + 0.85 * t
            angle = 2.0 * np.pi * (c / classes + 0.8 * t)
            angle = angle + rng.normal(0.0, 0.05, size=m)
            pts.append(np.column_stack([radius * np.cos(angle), radius * np.sin(angle)]))
        else:
            angle = 2.0 * np.pi * c / classes
            center = np.array([np.cos(angle), np.sin(angle)])
            pts.append(center + 0.15 * rng.normal(size=(m, 2)))
        labels.append(np.full(m, c, dtype=np.int64))
    points = np.concatenate(pts)
    labels = np.concatenate(labels)
    perm = rng.permutation(n)
    points, labels = points[perm], labels[perm]

    clean = labels.copy()
    k = int(round(noise_fraction * n))
    idx = rng.permutation(n)[:k]
    if k:
        labels = labels.copy()
        labels[idx] = rng.integers(0, classes, size=k)
    return ToyDataset(points=points, labels=labels, classes=classes,
                      noise_fraction=noise_fraction, seed=seed,
                      clean_labels=clean, noise_indices=np.sort(idx))


def _init_params(widths, classes: int, rng) -> list[tuple[np.ndarray, np.ndarray]]:
    params = []
    fan_in = 2
    for w in widths:
        params.append((rng.normal(0.0, np.sqrt(2.0 / fan_in), size=(w, fan_in)), np.zeros(w)))
        fan_in = w
    params.append((rng.normal(0.0, np.sqrt(2.0 / fan_in), size=(classes, fan_in)), np.zeros(classes)))
    return params


def _mlp_forward(params, x):
    acts = [x]
    for w, b in params[:-1]:
        x = np.maximum(x @ w.T + b, 0.0)
        acts.append(x)
    w, b = params[-1]
    return x @ w.T + b, acts


def loss_and_grads(params, x, y):
    """Mean softmax cross-entropy and its gradients for one batch."""
    logits, acts = _mlp_forward(params, x)
    n = x.shape[0]
    shifted = logits - logits.max(axis=1, keepdims=True)
    logp = shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    loss = float(-logp[np.arange(n), y].mean())

    dlogits = np.exp(logp)
    dlogits[np.arange(n), y] -= 1.0
    dlogits /= n

    grads = [None] * len(params)
    delta = dlogits
    for i in range(len(params) - 1, -1, -1):
        w, _ = params[i]
        grads[i] = (delta.T @ acts[i], delta.sum(axis=0))
        if i > 0:
            delta = (delta @ w) * (acts[i] > 0)
    return loss, grads


def to_network(params) -> Network:
    """Wrap raw MLP parameters as a dense/relu layer chain."""
    layers = []
    for w, b in params[:-1]:
        layers.append(LayerSpec("dense", weight=w.copy(), bias=b.copy()))
        layers.append(LayerSpec("relu"))
    w, b = params[-1]
    layers.append(LayerSpec("dense", weight=w.copy(), bias=b.copy()))
    return Network(layers, (params[0][0].shape[1],))


def zero_one_error(net_or_params, points, labels) -> float:
    """Misclassification rate under argmax decoding."""
    if isinstance(net_or_params, Network):
        logits, _ = forward_batch(net_or_params, points)
    else:
        logits, _ = _mlp_forward(net_or_params, points)
    return float((logits.argmax(axis=1) != labels).mean())


def train(dataset: ToyDataset, config: TrainConfig) -> TrainResult:
    """Minibatch SGD with momentum; deterministic in config.seed.

    Stops early once training accuracy hits 1.0 (when
    stop_at_interpolation) or the epoch loss drops below loss_threshold.
    A non-finite loss aborts with a NumericError naming the epoch.
    """
    if config.lr <= 0 or config.epochs < 0 or config.batch_size < 1:
        raise InputError("bad training configuration")
    if any(w < 1 for w in config.widths):
        raise InputError(f"widths must be positive, got {config.widths}")
    rng = np.random.default_rng(config.seed)
    params = _init_params(config.widths, dataset.classes, rng)
    velocity = [(np.zeros_like(w), np.zeros_like(b)) for w, b in params]
    x, y = dataset.points, dataset.labels
    n = x.shape[0]
    history: list[EpochStats] = []

    for epoch in range(config.epochs):
        order = rng.permutation(n)
        for start in range(0, n, config.batch_size):
            sel = order[start:start + config.batch_size]
            loss, grads = loss_and_grads(params, x[sel], y[sel])
            if not np.isfinite(loss):
                raise NumericError(f"training diverged at epoch {epoch}")
            for i, ((w, b), (gw, gb), (vw, vb)) in enumerate(zip(params, grads, velocity)):
                vw = config.momentum * vw - config.lr * gw
                vb = config.momentum * vb - config.lr * gb
                params[i] = (w + vw, b + vb)
                velocity[i] = (vw, vb)
        logits, _ = _mlp_forward(params, x)
        shifted = logits - logits.max(axis=1, keepdims=True)
        logp = shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))
        ep_loss = float(-logp[np.arange(n), y].mean())
        if not np.isfinite(ep_loss):
            raise NumericError(f"training diverged at epoch {epoch}")
        acc = float((logits.argmax(axis=1) == y).mean())
        history.append(EpochStats(epoch=epoch, loss=ep_loss, accuracy=acc))
        if config.stop_at_interpolation and acc == 1.0:
            break
        if config.loss_threshold is not None and ep_loss < config.loss_threshold:
            break

    return TrainResult(network=to_network(params), history=history)


def width_sweep(train_set: ToyDataset, test_set: ToyDataset, widths,
                config: TrainConfig) -> list[SweepPoint]:
    """Retrain at each width (all hidden layers set to it) and score both splits."""
    widths = [int(w) for w in widths]
    if not widths:
        raise InputError("width_sweep needs at least one width")
    out = []
    for w in widths:
        cfg = TrainConfig(widths=tuple(w for _ in config.widths), lr=config.lr,
                          momentum=config.momentum, epochs=config.epochs,
                          batch_size=config.batch_size, seed=config.seed,
                          stop_at_interpolation=config.stop_at_interpolation,
                          loss_threshold=config.loss_threshold)
        result = train(train_set, cfg)
        out.append(SweepPoint(
            width=w,
            network=result.network,
            train_error=zero_one_error(result.network, train_set.points, train_set.labels),
            test_error=zero_one_error(result.network, test_set.points, test_set.labels),
        ))
    return out
