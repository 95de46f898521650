"""Tied-weight denoising autoencoder stacks with a softmax read-out.

Every layer encodes with ``sigmoid(W x + b)`` and decodes with the
transposed weights, ``sigmoid(W^T h + b_rec)``.  Training is plain
minibatch SGD.  Inputs live in [0, 1]; both losses are summed
cross-entropies with probabilities clamped away from 0 and 1 so the log
terms stay finite.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

PROB_EPS = 1e-7


def sigmoid(v: np.ndarray) -> np.ndarray:
    """Numerically stable logistic function, elementwise."""
    v = np.asarray(v, dtype=np.float64)
    out = np.empty_like(v)
    pos = v >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-v[pos]))
    ev = np.exp(v[~pos])
    out[~pos] = ev / (1.0 + ev)
    return out


def corrupt(x: np.ndarray, p: float, rng: np.random.Generator) -> np.ndarray:
    """Zero each coordinate independently with probability ``p``.

    Surviving coordinates are returned bit-for-bit unchanged.
    """
    x = np.asarray(x, dtype=np.float64)
    keep = rng.random(x.shape) >= p
    return x * keep


def softmax(z: np.ndarray) -> np.ndarray:
    z = np.asarray(z, dtype=np.float64)
    z = z - np.max(z, axis=-1, keepdims=True)
    e = np.exp(z)
    return e / np.sum(e, axis=-1, keepdims=True)


def _clamp_prob(q: np.ndarray) -> np.ndarray:
    return np.clip(q, PROB_EPS, 1.0 - PROB_EPS)


def cross_entropy(target: np.ndarray, predicted: np.ndarray) -> np.ndarray:
    """Summed binary cross-entropy over the last axis, always >= 0."""
    q = _clamp_prob(np.asarray(predicted, dtype=np.float64))
    t = np.asarray(target, dtype=np.float64)
    return -np.sum(t * np.log(q) + (1.0 - t) * np.log1p(-q), axis=-1)


def generative_loss(x: np.ndarray, x_hat: np.ndarray) -> float:
    """Reconstruction error of a single example."""
    x = np.asarray(x)
    x_hat = np.asarray(x_hat)
    if x.shape != x_hat.shape:
        raise ValueError(f"shape mismatch: {x.shape} vs {x_hat.shape}")
    return float(cross_entropy(x, x_hat))


def discriminative_loss(y: np.ndarray, y_hat: np.ndarray) -> float:
    """Label error of a single example against predicted class probabilities."""
    y = np.asarray(y)
    y_hat = np.asarray(y_hat)
    if y.shape != y_hat.shape:
        raise ValueError(f"shape mismatch: {y.shape} vs {y_hat.shape}")
    return float(cross_entropy(y, y_hat))


@dataclass
class Layer:
    """One tied-weight autoencoder layer.

    ``W`` has shape (hidden, input); ``b`` biases the hidden code and
    ``b_rec`` biases the reconstruction, so ``len(b) == W.shape[0]`` and
    ``len(b_rec) == W.shape[1]``.
    """

    W: np.ndarray
    b: np.ndarray
    b_rec: np.ndarray

    @property
    def n_hidden(self) -> int:
        return self.W.shape[0]

    @property
    def n_input(self) -> int:
        return self.W.shape[1]

    def check(self) -> None:
        if self.W.shape != (self.b.shape[0], self.b_rec.shape[0]):
            raise ValueError(
                f"layer shapes inconsistent: W {self.W.shape}, "
                f"b {self.b.shape}, b_rec {self.b_rec.shape}"
            )
        for arr in (self.W, self.b, self.b_rec):
            if not np.all(np.isfinite(arr)):
                raise ValueError("layer contains non-finite parameters")


@dataclass
class Network:
    """An ordered stack of tied-weight layers plus a softmax output layer."""

    layers: list[Layer]
    out_W: np.ndarray
    out_b: np.ndarray
    learning_rate: float = 0.2
    corruption_p: float = 0.2

    @property
    def n_input(self) -> int:
        return self.layers[0].n_input

    @property
    def n_classes(self) -> int:
        return self.out_W.shape[0]

    def widths(self) -> tuple[int, ...]:
        return tuple(layer.n_hidden for layer in self.layers)

    def check(self) -> None:
        """Verify dimension chaining and parameter finiteness."""
        if not self.layers:
            raise ValueError("network has no layers")
        for i, layer in enumerate(self.layers):
            layer.check()
            if i > 0 and layer.n_input != self.layers[i - 1].n_hidden:
                raise ValueError(
                    f"layer {i} expects {layer.n_input} inputs but layer "
                    f"{i - 1} emits {self.layers[i - 1].n_hidden}"
                )
        if self.out_W.shape[1] != self.layers[-1].n_hidden:
            raise ValueError("output layer width does not match top layer")
        if self.out_W.shape[0] != self.out_b.shape[0]:
            raise ValueError("output bias length does not match class count")
        if not (np.all(np.isfinite(self.out_W)) and np.all(np.isfinite(self.out_b))):
            raise ValueError("output layer contains non-finite parameters")


@dataclass(frozen=True)
class DataBatch:
    """A labelled minibatch: inputs in [0, 1], one-hot label rows."""

    seq_id: int
    inputs: np.ndarray
    labels: np.ndarray

    @property
    def size(self) -> int:
        return self.inputs.shape[0]

    def class_histogram(self) -> np.ndarray:
        return self.labels.mean(axis=0)

    def label_indices(self) -> np.ndarray:
        return np.argmax(self.labels, axis=1)

    def validate(self) -> None:
        if self.seq_id < 0:
            raise ValueError("seq_id must be non-negative")
        if self.inputs.ndim != 2 or self.labels.ndim != 2:
            raise ValueError("inputs and labels must be 2-D")
        if self.inputs.shape[0] != self.labels.shape[0]:
            raise ValueError("inputs and labels disagree on example count")
        if self.inputs.size and (self.inputs.min() < 0 or self.inputs.max() > 1):
            raise ValueError("inputs must lie in [0, 1]")
        row_sums = self.labels.sum(axis=1)
        if not np.all(row_sums == 1):
            raise ValueError("label rows must be one-hot")


def glorot_limit(n_in: int, n_out: int) -> float:
    # 4x the usual Glorot bound, the standard range for sigmoid layers
    return 4.0 * np.sqrt(6.0 / (n_in + n_out))


def init_layer(n_hidden: int, n_input: int, rng: np.random.Generator) -> Layer:
    limit = glorot_limit(n_input, n_hidden)
    W = rng.uniform(-limit, limit, size=(n_hidden, n_input))
    return Layer(W=W, b=np.zeros(n_hidden), b_rec=np.zeros(n_input))


def init_network(
    n_input: int,
    widths: list[int] | tuple[int, ...],
    n_classes: int,
    rng: np.random.Generator,
    learning_rate: float = 0.2,
    corruption_p: float = 0.2,
) -> Network:
    """Build a freshly initialised network with the given hidden widths."""
    if not widths:
        raise ValueError("need at least one hidden layer")
    layers = []
    fan_in = n_input
    for w in widths:
        layers.append(init_layer(w, fan_in, rng))
        fan_in = w
    limit = glorot_limit(fan_in, n_classes)
    out_W = rng.uniform(-limit, limit, size=(n_classes, fan_in))
    net = Network(
        layers=layers,
        out_W=out_W,
        out_b=np.zeros(n_classes),
        learning_rate=learning_rate,
        corruption_p=corruption_p,
    )
    net.check()
    return net


def encode(layer: Layer, x: np.ndarray) -> np.ndarray:
    x = np.asarray(x)
    if x.shape[-1] != layer.n_input:
        raise ValueError(f"expected {layer.n_input} inputs, got {x.shape[-1]}")
    return sigmoid(x @ layer.W.T + layer.b)


def decode(layer: Layer, h: np.ndarray) -> np.ndarray:
    h = np.asarray(h)
    if h.shape[-1] != layer.n_hidden:
        raise ValueError(f"expected {layer.n_hidden} codes, got {h.shape[-1]}")
    return sigmoid(h @ layer.W + layer.b_rec)


def _encode_stack(net: Network, X: np.ndarray) -> list[np.ndarray]:
    acts = [np.asarray(X, dtype=np.float64)]
    for layer in net.layers:
        acts.append(encode(layer, acts[-1]))
    return acts


def _decode_stack(net: Network, top: np.ndarray) -> list[np.ndarray]:
    # recs[i] approximates the encoder activation at level i; recs[0] is x_hat
    recs = [top]
    for layer in reversed(net.layers):
        recs.append(decode(layer, recs[-1]))
    recs.reverse()
    return recs


def predict(net: Network, x: np.ndarray) -> np.ndarray:
    """Class probabilities for one example or a batch."""
    h = np.asarray(x)
    for layer in net.layers:
        h = encode(layer, h)
    return softmax(h @ net.out_W.T + net.out_b)


def per_example_reconstruction_loss(net: Network, X: np.ndarray) -> np.ndarray:
    """Full-stack reconstruction error of every row of ``X``."""
    acts = _encode_stack(net, X)
    recs = _decode_stack(net, acts[-1])
    return cross_entropy(acts[0], recs[0])


def mean_discriminative_loss(net: Network, batch: DataBatch) -> float:
    y_hat = predict(net, batch.inputs)
    return float(cross_entropy(batch.labels, y_hat).mean())


def batch_errors(net: Network, batch: DataBatch) -> tuple[float, float]:
    """Mean reconstruction loss and misclassification fraction on a batch.

    Ties in the predicted class are broken toward the lowest index, so the
    result is deterministic.
    """
    if batch.size == 0:
        raise ValueError("cannot evaluate an empty batch")
    acts = _encode_stack(net, batch.inputs)
    recs = _decode_stack(net, acts[-1])
    l_gen = float(cross_entropy(acts[0], recs[0]).mean())
    y_hat = softmax(acts[-1] @ net.out_W.T + net.out_b)
    hits = np.argmax(y_hat, axis=1) == np.argmax(batch.labels, axis=1)
    return l_gen, float(1.0 - hits.mean())


@dataclass
class LayerGrads:
    dW: np.ndarray
    db: np.ndarray
    db_rec: np.ndarray


@dataclass
class NetworkGrads:
    layers: list[LayerGrads]
    out_W: np.ndarray
    out_b: np.ndarray


def _zero_grads(net: Network) -> NetworkGrads:
    return NetworkGrads(
        layers=[
            LayerGrads(np.zeros_like(l.W), np.zeros_like(l.b), np.zeros_like(l.b_rec))
            for l in net.layers
        ],
        out_W=np.zeros_like(net.out_W),
        out_b=np.zeros_like(net.out_b),
    )


def _encoder_backward(net: Network, acts: list[np.ndarray], d_top: np.ndarray, grads: NetworkGrads) -> None:
    da = d_top
    for i in range(len(net.layers) - 1, -1, -1):
        a = acts[i + 1]
        dz = da * a * (1.0 - a)
        grads.layers[i].dW += dz.T @ acts[i]
        grads.layers[i].db += dz.sum(axis=0)
        da = dz @ net.layers[i].W


def _discriminative_backward(net: Network, acts: list[np.ndarray], labels: np.ndarray) -> tuple[NetworkGrads, float]:
    p = labels.shape[0]
    logits = acts[-1] @ net.out_W.T + net.out_b
    y_hat = softmax(logits)
    loss = float(cross_entropy(labels, y_hat).mean())
    q = _clamp_prob(y_hat)
    # cross-entropy derivative w.r.t. the probabilities, then through softmax
    g = (-(labels / q) + (1.0 - labels) / (1.0 - q)) / p
    dz = y_hat * (g - np.sum(g * y_hat, axis=1, keepdims=True))
    grads = _zero_grads(net)
    grads.out_W += dz.T @ acts[-1]
    grads.out_b += dz.sum(axis=0)
    _encoder_backward(net, acts, dz @ net.out_W, grads)
    return grads, loss


def _generative_backward(net: Network, acts: list[np.ndarray]) -> tuple[NetworkGrads, float]:
    p = acts[0].shape[0]
    recs = _decode_stack(net, acts[-1])
    loss = float(cross_entropy(acts[0], recs[0]).mean())
    grads = _zero_grads(net)
    # walk the decode chain back up; du is the pre-sigmoid gradient at level i
    du = (recs[0] - acts[0]) / p
    d_top = None
    for i, layer in enumerate(net.layers):
        grads.layers[i].dW += recs[i + 1].T @ du
        grads.layers[i].db_rec += du.sum(axis=0)
        d_rec = du @ layer.W.T
        if i + 1 < len(net.layers):
            du = d_rec * recs[i + 1] * (1.0 - recs[i + 1])
        else:
            d_top = d_rec
    _encoder_backward(net, acts, d_top, grads)
    return grads, loss


def network_loss(net: Network, batch: DataBatch, hybrid_weight: float) -> tuple[float, float, float]:
    """Mean hybrid objective over a batch: label loss + weight * reconstruction."""
    acts = _encode_stack(net, batch.inputs)
    y_hat = softmax(acts[-1] @ net.out_W.T + net.out_b)
    disc = float(cross_entropy(batch.labels, y_hat).mean())
    gen = 0.0
    if hybrid_weight != 0.0:
        recs = _decode_stack(net, acts[-1])
        gen = float(cross_entropy(acts[0], recs[0]).mean())
    return disc + hybrid_weight * gen, disc, gen


def network_gradients(net: Network, batch: DataBatch, hybrid_weight: float) -> tuple[NetworkGrads, float, float]:
    """Analytic gradients of the mean hybrid objective, without updating."""
    acts = _encode_stack(net, batch.inputs)
    grads, disc = _discriminative_backward(net, acts, batch.labels)
    gen = 0.0
    if hybrid_weight != 0.0:
        gen_grads, gen = _generative_backward(net, acts)
        for g, gg in zip(grads.layers, gen_grads.layers):
            g.dW += hybrid_weight * gg.dW
            g.db += hybrid_weight * gg.db
            g.db_rec += hybrid_weight * gg.db_rec
    return grads, disc, gen


def finetune(net: Network, batch: DataBatch, hybrid_weight: float = 0.2) -> Network:
    """One SGD step on the mean hybrid objective over the batch."""
    if batch.inputs.shape[1] != net.n_input:
        raise ValueError("batch dimensionality does not match the network")
    grads, _, _ = network_gradients(net, batch, hybrid_weight)
    lr = net.learning_rate
    for layer, g in zip(net.layers, grads.layers):
        layer.W -= lr * g.dW
        layer.b -= lr * g.db
        layer.b_rec -= lr * g.db_rec
    net.out_W -= lr * grads.out_W
    net.out_b -= lr * grads.out_b
    return net


def dae_loss(layer: Layer, target: np.ndarray, noisy: np.ndarray) -> float:
    """Mean reconstruction loss of one layer given its (corrupted) input."""
    h = encode(layer, noisy)
    return float(cross_entropy(target, decode(layer, h)).mean())


def dae_gradients(layer: Layer, target: np.ndarray, noisy: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Gradients of the mean single-layer reconstruction loss.

    Tied weights collect both the encoder and decoder contributions.
    """
    p = target.shape[0]
    h = encode(layer, noisy)
    x_hat = decode(layer, h)
    du = (x_hat - target) / p
    dW = h.T @ du  # decoder contribution
    db_rec = du.sum(axis=0)
    dh = du @ layer.W.T
    dz = dh * h * (1.0 - h)
    dW += dz.T @ noisy  # encoder contribution
    db = dz.sum(axis=0)
    return dW, db, db_rec


def pretrain_layer(
    net: Network,
    layer_index: int,
    batches: list[DataBatch],
    epochs: int = 1,
    rng: np.random.Generator | None = None,
) -> Network:
    """Greedy reconstruction training of one layer over a pool of batches.

    Lower layers are treated as a fixed feature extractor; only the target
    layer sees corrupted input.
    """
    if not batches:
        raise ValueError("no batches to pre-train on")
    if rng is None:
        rng = np.random.default_rng()
    layer = net.layers[layer_index]
    lr = net.learning_rate
    for _ in range(epochs):
        for batch in batches:
            a = np.asarray(batch.inputs, dtype=np.float64)
            for lower in net.layers[:layer_index]:
                a = encode(lower, a)
            noisy = corrupt(a, net.corruption_p, rng)
            dW, db, db_rec = dae_gradients(layer, a, noisy)
            layer.W -= lr * dW
            layer.b -= lr * db
            layer.b_rec -= lr * db_rec
    return net
