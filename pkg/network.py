"""
Baseline networks: construction, forward pass, SGD training and evaluation
"""
import logging
import math
from typing import NamedTuple

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from activation import activate, activation_derivative
from models import LayerSpec, Network
from validators import ValidationError

logger = logging.getLogger(__name__)

EVAL_CHUNK = 1024


class ShapeError(ValidationError):
    """Batch or layer dimensions do not line up"""
    pass


class TrainingDivergedError(RuntimeError):
    """Loss became NaN or infinite during training"""

    def __init__(self, epoch, batch, loss):
        super().__init__(f"Training diverged at epoch {epoch}, batch {batch}: loss={loss}")
        self.epoch = epoch
        self.batch = batch
        self.loss = loss


class ForwardResult(NamedTuple):
    preactivations: list
    activations: list
    scores: np.ndarray


class TrainResult(NamedTuple):
    network: Network
    losses: list


def build_network(input_dims, layer_defs, seed=0):
    """Seeded network from parsed layer definitions (see config.parse_layer_defs)"""
    if not layer_defs:
        raise ValidationError("A network needs at least one layer besides the input")

    rng = np.random.default_rng(seed)
    dims = tuple(int(d) for d in input_dims)
    layers = [LayerSpec('input', dims, dims)]
    weights = [None]
    biases = [None]

    for position, layer_def in enumerate(layer_defs):
        kind = layer_def['kind']
        is_last = position == len(layer_defs) - 1
        activation = layer_def.get('activation', 'none')

        if activation == 'softmax' and not is_last:
            raise ValidationError("softmax is only supported on the final layer")

        if kind == 'fully_connected':
            spec = LayerSpec(kind, dims, (layer_def['units'],), activation=activation)
        elif kind == 'convolution':
            if len(dims) != 3:
                raise ShapeError(f"Convolution needs CxHxW input, got {dims}")
            k = layer_def['kernel']
            if k > dims[1] or k > dims[2]:
                raise ShapeError(f"Kernel {k}x{k} does not fit input {dims}")
            out = (layer_def['channels'], dims[1] - k + 1, dims[2] - k + 1)
            spec = LayerSpec(kind, dims, out, kernel=k, activation=activation)
        elif kind == 'pooling':
            if len(dims) != 3:
                raise ShapeError(f"Pooling needs CxHxW input, got {dims}")
            window = layer_def['window']
            if dims[1] % window or dims[2] % window:
                raise ShapeError(f"Pooling window {window} does not tile input {dims}")
            out = (dims[0], dims[1] // window, dims[2] // window)
            spec = LayerSpec(kind, dims, out, pool_mode=layer_def['mode'])
        else:
            raise ValidationError(f"Unknown layer kind '{kind}'")

        layers.append(spec)
        if spec.has_weights:
            limit = math.sqrt(6.0 / spec.fan_in)
            weights.append(rng.uniform(-limit, limit, size=spec.weight_shape))
            biases.append(np.zeros(spec.out_dims[0]))
        else:
            weights.append(None)
            biases.append(None)
        dims = spec.out_dims

    net = Network(layers=layers, weights=weights, biases=biases)
    check_network(net)
    logger.debug(f"🔧 Built network {[layer.kind for layer in layers]} with input {input_dims}")
    return net


def check_network(net):
    """Reject networks whose dims, weights or layer order are inconsistent"""
    if not net.layers or net.layers[0].kind != 'input':
        raise ShapeError("A network starts with exactly one input layer")
    if len(net.layers) < 2:
        raise ShapeError("A network needs at least one layer besides the input")
    if len(net.weights) != len(net.layers) or len(net.biases) != len(net.layers):
        raise ShapeError("Weights and biases must be listed per layer")
    if net.layers[-1].kind != 'fully_connected':
        raise ShapeError("The final layer must be fully connected")

    for i, layer in enumerate(net.layers[1:], start=1):
        if layer.kind == 'input':
            raise ShapeError(f"Layer {i}: only the first layer may be an input layer")
        if layer.in_dims != net.layers[i - 1].out_dims:
            raise ShapeError(f"Layer {i}: input dims {layer.in_dims} do not follow {net.layers[i - 1].out_dims}")
        if layer.activation == 'softmax' and i != len(net.layers) - 1:
            raise ShapeError(f"Layer {i}: softmax is only supported on the final layer")
        if layer.kind == 'pooling':
            if layer.in_dims[0] != layer.out_dims[0]:
                raise ShapeError(f"Layer {i}: pooling cannot change the channel count")
            if net.weights[i] is not None or net.biases[i] is not None:
                raise ShapeError(f"Layer {i}: pooling layers carry no weights")
        if layer.has_weights:
            weight = net.weights[i]
            if weight is None or tuple(weight.shape) != layer.weight_shape:
                got = None if weight is None else tuple(weight.shape)
                raise ShapeError(f"Layer {i}: weight shape {got} does not match {layer.weight_shape}")
            if net.biases[i] is None or net.biases[i].shape != (layer.out_dims[0],):
                raise ShapeError(f"Layer {i}: bias must have {layer.out_dims[0]} entries")
    return net


def _as_batch(net, batch):
    x = np.asarray(batch, dtype=np.float64)
    dims = net.input_dims
    size = int(np.prod(dims))

    if x.shape == dims or (x.ndim == 1 and x.size == size):
        x = x.reshape((1,) + dims)
    elif x.shape[1:] != dims:
        if x.ndim >= 2 and int(np.prod(x.shape[1:])) == size:
            x = x.reshape((len(x),) + dims)
        else:
            raise ShapeError(f"Batch shape {x.shape} does not match input dims {dims}")
    return x


def conv2d(x, weight, bias):
    """Stride-1 'valid' convolution of (B, C, H, W) by (M, C, h, h)"""
    k = weight.shape[-1]
    windows = sliding_window_view(x, (k, k), axis=(2, 3))
    y = np.tensordot(windows, weight, axes=([1, 4, 5], [1, 2, 3]))
    return y.transpose(0, 3, 1, 2) + bias[None, :, None, None]


def pool2d(x, window, mode):
    """Non-overlapping pooling of (B, C, H, W)"""
    b, c, h, w = x.shape
    blocks = x.reshape(b, c, h // window, window, w // window, window)
    if mode == 'max':
        return blocks.max(axis=(3, 5))
    if mode == 'min':
        return blocks.min(axis=(3, 5))
    return blocks.mean(axis=(3, 5))


def layer_preactivation(layer, weight, bias, x):
    """Y for one layer given its (batched) input"""
    if layer.kind == 'fully_connected':
        return x.reshape(len(x), -1) @ weight.T + bias
    if layer.kind == 'convolution':
        return conv2d(x, weight, bias)
    if layer.kind == 'pooling':
        return pool2d(x, layer.window, layer.pool_mode)
    raise ValidationError(f"Layer kind '{layer.kind}' computes nothing")


def _run(net, x, dropout_rate=0.0, rng=None):
    preacts = [None]
    acts = [x]
    masks = [None]
    last = len(net.layers) - 1

    for i, layer in enumerate(net.layers[1:], start=1):
        y = layer_preactivation(layer, net.weights[i], net.biases[i], acts[-1])
        z = activate(layer.activation, y)
        mask = None
        if dropout_rate > 0 and layer.kind == 'fully_connected' and i != last:
            mask = (rng.random(z.shape) >= dropout_rate) / (1.0 - dropout_rate)
            z = z * mask
        preacts.append(y)
        acts.append(z)
        masks.append(mask)

    return preacts, acts, masks


def forward(net, batch):
    """Every layer's Y and Z for a batch; scores are the final layer's Z"""
    x = _as_batch(net, batch)
    preacts, acts, _ = _run(net, x)
    return ForwardResult(preactivations=preacts, activations=acts, scores=acts[-1])


def predict(net, batch):
    scores = forward(net, batch).scores
    return predictions_from_scores(scores)


def predictions_from_scores(scores):
    scores = np.asarray(scores)
    if scores.shape[1] == 1:
        return (scores[:, 0] >= 0.5).astype(np.int64)
    return np.argmax(scores, axis=1)


def evaluate(net, data):
    """Fraction of misclassified samples"""
    if len(data) == 0:
        raise ValidationError(f"Cannot evaluate on an empty {data.split} split")

    wrong = 0
    for start in range(0, len(data), EVAL_CHUNK):
        stop = start + EVAL_CHUNK
        predicted = predict(net, data.samples[start:stop])
        wrong += int(np.count_nonzero(predicted != data.labels[start:stop]))

    return wrong / len(data)


def _loss_and_delta(layer, y, z, labels):
    """Loss value and dL/dY of the final layer"""
    count = len(labels)
    outputs = z.shape[1]

    if layer.activation == 'softmax':
        loss = -np.mean(np.log(np.clip(z[np.arange(count), labels], 1e-300, None)))
        delta = z.copy()
        delta[np.arange(count), labels] -= 1.0
        return loss, delta / count

    if layer.activation == 'sigmoid' and outputs == 1:
        target = labels.reshape(-1, 1).astype(np.float64)
        p = np.clip(z, 1e-15, 1 - 1e-15)
        loss = -np.mean(target * np.log(p) + (1 - target) * np.log(1 - p))
        return loss, (z - target) / count

    target = np.zeros_like(z)
    target[np.arange(count), labels] = 1.0
    diff = z - target
    loss = 0.5 * np.mean(np.sum(diff ** 2, axis=1))
    return loss, diff * activation_derivative(layer.activation, y, z) / count


def _pool_backward(layer, x_in, z_out, grad):
    window = layer.window
    b, c, h, w = x_in.shape
    blocks = x_in.reshape(b, c, h // window, window, w // window, window)
    spread = grad[:, :, :, None, :, None]

    if layer.pool_mode == 'avg':
        dx = np.broadcast_to(spread / (window * window), blocks.shape)
    else:
        hits = blocks == z_out[:, :, :, None, :, None]
        dx = hits * spread / hits.sum(axis=(3, 5), keepdims=True)

    return np.ascontiguousarray(dx).reshape(x_in.shape)


def _backward(net, preacts, acts, masks, labels):
    grads_w = [None] * len(net.layers)
    grads_b = [None] * len(net.layers)
    last = len(net.layers) - 1

    loss, delta = _loss_and_delta(net.layers[last], preacts[last], acts[last], labels)

    for i in range(last, 0, -1):
        layer = net.layers[i]
        x_in = acts[i - 1]

        if layer.kind == 'fully_connected':
            flat = x_in.reshape(len(x_in), -1)
            grads_w[i] = delta.T @ flat
            grads_b[i] = delta.sum(axis=0)
            dx = (delta @ net.weights[i]).reshape(x_in.shape) if i > 1 else None
        elif layer.kind == 'convolution':
            k = layer.kernel
            windows = sliding_window_view(x_in, (k, k), axis=(2, 3))
            grads_w[i] = np.tensordot(delta, windows, axes=([0, 2, 3], [0, 2, 3]))
            grads_b[i] = delta.sum(axis=(0, 2, 3))
            dx = None
            if i > 1:
                dx = np.zeros_like(x_in)
                oh, ow = delta.shape[2], delta.shape[3]
                for r in range(k):
                    for s in range(k):
                        dx[:, :, r:r + oh, s:s + ow] += np.einsum(
                            'bmhw,mc->bchw', delta, net.weights[i][:, :, r, s])
        else:
            dx = _pool_backward(layer, x_in, acts[i], delta) if i > 1 else None

        if dx is None:
            break

        below = i - 1
        if masks[below] is not None:
            dx = dx * masks[below]
        delta = dx * activation_derivative(net.layers[below].activation, preacts[below], acts[below])

    return loss, grads_w, grads_b


def train(net, data, cfg):
    """SGD with momentum; returns a trained copy and the per-epoch mean loss"""
    trained = net.copy()
    if cfg.epochs == 0:
        logger.info("⚠️  Zero epochs requested, returning the network unchanged")
        return TrainResult(network=trained, losses=[])
    if len(data) == 0:
        raise ValidationError("Cannot train on an empty dataset")

    outputs = net.num_outputs
    max_label = int(data.labels.max())
    if (outputs == 1 and max_label > 1) or (outputs > 1 and max_label >= outputs):
        raise ShapeError(f"Labels up to {max_label} do not fit {outputs} output neuron(s)")

    x_all = _as_batch(trained, data.samples)
    rng = np.random.default_rng(cfg.seed)
    velocity_w = [None if w is None else np.zeros_like(w) for w in trained.weights]
    velocity_b = [None if b is None else np.zeros_like(b) for b in trained.biases]
    losses = []

    logger.info(f"🚀 Training {len(data)} samples for {cfg.epochs} epochs "
                f"(lr={cfg.learning_rate}, momentum={cfg.momentum}, dropout={cfg.dropout_rate})")

    for epoch in range(cfg.epochs):
        order = rng.permutation(len(data))
        epoch_loss = 0.0

        for batch_index, start in enumerate(range(0, len(order), cfg.batch_size)):
            idx = order[start:start + cfg.batch_size]
            preacts, acts, masks = _run(trained, x_all[idx], cfg.dropout_rate, rng)
            loss, grads_w, grads_b = _backward(trained, preacts, acts, masks, data.labels[idx])

            if not np.isfinite(loss):
                logger.error(f"❌ Non-finite loss at epoch {epoch}, batch {batch_index}")
                raise TrainingDivergedError(epoch, batch_index, loss)

            for i in trained.compute_layers():
                velocity_w[i] = cfg.momentum * velocity_w[i] - cfg.learning_rate * grads_w[i]
                velocity_b[i] = cfg.momentum * velocity_b[i] - cfg.learning_rate * grads_b[i]
                trained.weights[i] += velocity_w[i]
                trained.biases[i] += velocity_b[i]

            epoch_loss += loss * len(idx)

        losses.append(epoch_loss / len(data))
        logger.debug(f"📊 Epoch {epoch + 1}/{cfg.epochs}: loss={losses[-1]:.6f}")

    logger.info(f"✅ Training finished, final loss {losses[-1]:.6f}")
    return TrainResult(network=trained, losses=losses)
