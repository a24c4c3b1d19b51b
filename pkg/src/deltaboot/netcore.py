"""Small feed-forward classifiers with hand-written reverse-mode gradients.

The layer vocabulary is closed: ``Input``, ``Conv3x3`` (valid padding),
``MaxPool2x2`` (stride 2, floor), ``ReLU``, ``Dense`` and a final
``Softmax``.  Parameters live in one flat fp64 vector; each parametric layer
owns a contiguous block laid out as weights followed by biases.

Image tensors are channels-first, ``(C, H, W)``.  ``Dense`` flattens
whatever it receives.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from math import prod

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import ShapeError

#: Probabilities are clamped at this floor before taking the log.
CE_FLOOR = 1e-12


@dataclass(frozen=True)
class Input:
    shape: tuple


@dataclass(frozen=True)
class Conv3x3:
    in_ch: int
    out_ch: int


@dataclass(frozen=True)
class MaxPool2x2:
    pass


@dataclass(frozen=True)
class ReLU:
    pass


@dataclass(frozen=True)
class Dense:
    n_in: int
    n_out: int


@dataclass(frozen=True)
class Softmax:
    pass


LAYER_KINDS = (Input, Conv3x3, MaxPool2x2, ReLU, Dense, Softmax)


def _weight_shape(layer):
    if isinstance(layer, Conv3x3):
        return (layer.out_ch, layer.in_ch, 3, 3), (layer.out_ch,)
    if isinstance(layer, Dense):
        return (layer.n_in, layer.n_out), (layer.n_out,)
    return None


@dataclass
class NetworkSpec:
    """Architecture description plus the L2 regularization rate.

    Shapes are checked on construction; ``shapes[i]`` is the output shape of
    layer ``i`` and ``blocks`` lists ``(layer_index, start, n_weights,
    n_biases)`` for every parametric layer.
    """

    layers: tuple
    num_classes: int
    reg_rate: float = 0.01
    shapes: tuple = field(init=False, repr=False)
    blocks: tuple = field(init=False, repr=False)
    num_params: int = field(init=False)

    def __post_init__(self):
        self.layers = tuple(self.layers)
        if self.reg_rate < 0:
            raise ValueError("reg_rate must be non-negative")
        if not self.layers or not isinstance(self.layers[0], Input):
            raise ShapeError("first layer must be Input", layer=0)
        if not isinstance(self.layers[-1], Softmax):
            raise ShapeError("last layer must be Softmax", layer=len(self.layers) - 1)
        shape = tuple(int(s) for s in self.layers[0].shape)
        if not shape or min(shape) < 1:
            raise ShapeError(f"invalid input shape {shape}", layer=0)
        shapes = [shape]
        blocks = []
        start = 0
        for i, layer in enumerate(self.layers[1:], 1):
            if not isinstance(layer, LAYER_KINDS) or isinstance(layer, Input):
                raise ShapeError(f"unsupported layer {layer!r}", layer=i)
            shape = _out_shape(layer, shape, i)
            if isinstance(layer, Softmax) and i != len(self.layers) - 1:
                raise ShapeError("Softmax is only allowed as the final layer", layer=i)
            shapes.append(shape)
            ws = _weight_shape(layer)
            if ws is not None:
                nw, nb = prod(ws[0]), prod(ws[1])
                blocks.append((i, start, nw, nb))
                start += nw + nb
        if shapes[-1] != (self.num_classes,):
            raise ShapeError(
                f"output width {shapes[-1]} does not match num_classes={self.num_classes}",
                layer=len(self.layers) - 1,
            )
        self.shapes = tuple(shapes)
        self.blocks = tuple(blocks)
        self.num_params = start

    @property
    def input_shape(self):
        return self.shapes[0]

    @property
    def offsets(self):
        """``{layer_index: (start, length)}`` for every parametric layer."""
        return {i: (s, nw + nb) for i, s, nw, nb in self.blocks}

    def bias_mask(self):
        mask = np.zeros(self.num_params, dtype=bool)
        for _, s, nw, nb in self.blocks:
            mask[s + nw : s + nw + nb] = True
        return mask

    def unpack(self, values):
        """Return ``{layer_index: (W, b)}`` views into ``values``."""
        out = {}
        for i, s, nw, nb in self.blocks:
            wshape, bshape = _weight_shape(self.layers[i])
            out[i] = (values[s : s + nw].reshape(wshape), values[s + nw : s + nw + nb])
        return out

    def params(self, values):
        return ParamVector(values, self.offsets)


def _out_shape(layer, shape, i):
    if isinstance(layer, Conv3x3):
        if len(shape) != 3 or shape[0] != layer.in_ch:
            raise ShapeError(f"Conv3x3 expects ({layer.in_ch}, H, W), got {shape}", layer=i)
        c, h, w = shape
        if h < 3 or w < 3:
            raise ShapeError(f"spatial size {h}x{w} too small for a 3x3 kernel", layer=i)
        return (layer.out_ch, h - 2, w - 2)
    if isinstance(layer, MaxPool2x2):
        if len(shape) != 3 or shape[1] < 2 or shape[2] < 2:
            raise ShapeError(f"MaxPool2x2 expects (C, H>=2, W>=2), got {shape}", layer=i)
        c, h, w = shape
        return (c, h // 2, w // 2)
    if isinstance(layer, Dense):
        if prod(shape) != layer.n_in:
            raise ShapeError(f"Dense expects {layer.n_in} inputs, got shape {shape}", layer=i)
        return (layer.n_out,)
    if isinstance(layer, Softmax):
        if len(shape) != 1:
            raise ShapeError(f"Softmax expects a vector, got shape {shape}", layer=i)
    return shape


@dataclass
class ParamVector:
    values: np.ndarray
    offsets: dict

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.ndim != 1:
            raise ShapeError("parameter vector must be one-dimensional")
        spans = sorted(self.offsets.values())
        pos = 0
        for s, n in spans:
            if s != pos:
                raise ShapeError(f"parameter offsets leave a gap or overlap at {pos}")
            pos = s + n
        if pos != self.values.size:
            raise ShapeError(f"offsets cover {pos} values, vector has {self.values.size}")

    def __len__(self):
        return self.values.size


@dataclass
class Dataset:
    """Inputs of shape ``(N, *input_shape)`` and one-hot labels ``(N, T)``."""

    inputs: np.ndarray
    labels: np.ndarray

    def __post_init__(self):
        self.inputs = np.asarray(self.inputs, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.float64)
        if self.inputs.shape[0] < 1:
            raise ValueError("dataset must contain at least one example")
        if self.labels.ndim != 2 or self.labels.shape[0] != self.inputs.shape[0]:
            raise ValueError("labels must be an (N, T) array matching the inputs")
        if not (np.all((self.labels == 0) | (self.labels == 1)) and np.all(self.labels.sum(1) == 1)):
            raise ValueError("labels must be one-hot")

    def __len__(self):
        return self.inputs.shape[0]

    @property
    def num_classes(self):
        return self.labels.shape[1]

    def subset(self, indices):
        indices = np.asarray(indices)
        return Dataset(self.inputs[indices], self.labels[indices])


def one_hot(classes, num_classes):
    classes = np.asarray(classes, dtype=np.int64)
    out = np.zeros((classes.size, num_classes))
    out[np.arange(classes.size), classes] = 1.0
    return out


# -- layer kernels ------------------------------------------------------------


def _im2col(x):
    b, c, h, w = x.shape
    win = sliding_window_view(x, (3, 3), axis=(2, 3))  # (b, c, ho, wo, 3, 3)
    return win.transpose(0, 2, 3, 1, 4, 5).reshape(b, (h - 2) * (w - 2), c * 9)


def _conv_forward(x, W, bias):
    b, c, h, w = x.shape
    cols = _im2col(x)
    out = cols @ W.reshape(W.shape[0], -1).T + bias
    return out.transpose(0, 2, 1).reshape(b, W.shape[0], h - 2, w - 2), cols


def _conv_backward(dout, cols, W, in_shape, per_example, need_dx):
    b, o, ho, wo = dout.shape
    d2 = dout.reshape(b, o, ho * wo).transpose(0, 2, 1)
    if per_example:
        dW = np.einsum("bpo,bpk->bok", d2, cols).reshape(b, -1)
        db = d2.sum(axis=1)
    else:
        dW = np.tensordot(d2, cols, axes=([0, 1], [0, 1])).ravel()
        db = d2.sum(axis=(0, 1))
    dx = None
    if need_dx:
        c, h, w = in_shape
        dcols = (d2 @ W.reshape(o, -1)).reshape(b, ho, wo, c, 3, 3)
        dx = np.zeros((b, c, h, w))
        for ki in range(3):
            for kj in range(3):
                dx[:, :, ki : ki + ho, kj : kj + wo] += dcols[..., ki, kj].transpose(0, 3, 1, 2)
    return dW, db, dx


def _pool_forward(x):
    b, c, h, w = x.shape
    h2, w2 = h // 2, w // 2
    xr = x[:, :, : 2 * h2, : 2 * w2].reshape(b, c, h2, 2, w2, 2)
    xr = xr.transpose(0, 1, 2, 4, 3, 5).reshape(b, c, h2, w2, 4)
    arg = xr.argmax(axis=-1)[..., None]
    return np.take_along_axis(xr, arg, axis=-1)[..., 0], arg


def _pool_backward(dout, arg, in_shape):
    b = dout.shape[0]
    c, h, w = in_shape
    h2, w2 = h // 2, w // 2
    dxr = np.zeros((b, c, h2, w2, 4))
    np.put_along_axis(dxr, arg, dout[..., None], axis=-1)
    dxr = dxr.reshape(b, c, h2, w2, 2, 2).transpose(0, 1, 2, 4, 3, 5).reshape(b, c, 2 * h2, 2 * w2)
    if 2 * h2 == h and 2 * w2 == w:
        return dxr
    dx = np.zeros((b, c, h, w))
    dx[:, :, : 2 * h2, : 2 * w2] = dxr
    return dx


def _softmax(z):
    z = z - z.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


# -- forward / backward -------------------------------------------------------


def _values(spec, params):
    values = params.values if isinstance(params, ParamVector) else np.asarray(params, dtype=np.float64)
    if values.shape != (spec.num_params,):
        raise ShapeError(f"expected {spec.num_params} parameters, got shape {values.shape}")
    return values


def _check_batch(spec, x):
    x = np.asarray(x, dtype=np.float64)
    if x.shape[1:] != spec.input_shape:
        raise ShapeError(f"input shape {x.shape[1:]} does not match {spec.input_shape}", layer=0)
    return x


def _forward_batch(spec, values, x):
    """Run the network on a batch; return ``(probs, caches)``."""
    weights = spec.unpack(values)
    caches = []
    a = x
    for i, layer in enumerate(spec.layers[1:], 1):
        if isinstance(layer, Conv3x3):
            a, cols = _conv_forward(a, *weights[i])
            caches.append(cols)
        elif isinstance(layer, MaxPool2x2):
            a, arg = _pool_forward(a)
            caches.append(arg)
        elif isinstance(layer, ReLU):
            caches.append(a > 0)
            a = np.where(a > 0, a, 0.0)
        elif isinstance(layer, Dense):
            flat = a.reshape(a.shape[0], -1)
            caches.append(flat)
            W, bias = weights[i]
            a = flat @ W + bias
        else:
            caches.append(None)
            a = _softmax(a)
    return a, caches


def _backward_batch(spec, values, caches, dlogits, per_example):
    """Propagate ``dlogits`` (gradient w.r.t. pre-softmax inputs) to the parameters.

    Returns a ``(B, P)`` matrix if ``per_example`` else the summed ``(P,)``
    gradient.
    """
    weights = spec.unpack(values)
    b = dlogits.shape[0]
    grad = np.zeros((b, spec.num_params)) if per_example else np.zeros(spec.num_params)
    starts = {i: (s, nw, nb) for i, s, nw, nb in spec.blocks}
    first_param = spec.blocks[0][0] if spec.blocks else len(spec.layers)
    d = dlogits
    for i in range(len(spec.layers) - 2, 0, -1):
        layer = spec.layers[i]
        cache = caches[i - 1]
        in_shape = spec.shapes[i - 1]
        need_dx = i > first_param
        if isinstance(layer, Dense):
            W, _ = weights[i]
            s, nw, nb = starts[i]
            if per_example:
                grad[:, s : s + nw] = (cache[:, :, None] * d[:, None, :]).reshape(b, -1)
                grad[:, s + nw : s + nw + nb] = d
            else:
                grad[s : s + nw] = (cache.T @ d).ravel()
                grad[s + nw : s + nw + nb] = d.sum(axis=0)
            if need_dx:
                d = (d @ W.T).reshape((b,) + in_shape)
        elif isinstance(layer, Conv3x3):
            W, _ = weights[i]
            s, nw, nb = starts[i]
            dW, db, d = _conv_backward(d, cache, W, in_shape, per_example, need_dx)
            if per_example:
                grad[:, s : s + nw] = dW
                grad[:, s + nw : s + nw + nb] = db
            else:
                grad[s : s + nw] = dW
                grad[s + nw : s + nw + nb] = db
        elif not need_dx:
            break
        elif isinstance(layer, ReLU):
            d = d * cache
        elif isinstance(layer, MaxPool2x2):
            d = _pool_backward(d, cache, in_shape)
    return grad


def _batches(n, batch_size):
    if batch_size is None or batch_size >= n:
        yield slice(0, n)
        return
    for s in range(0, n, batch_size):
        yield slice(s, min(s + batch_size, n))


def _ce_terms(probs, labels):
    """Per-example cross-entropy, dlogits for it, and the clamp mask."""
    p_true = np.sum(probs * labels, axis=1)
    clamped = p_true < CE_FLOOR
    ce = -np.log(np.maximum(p_true, CE_FLOOR))
    dlogits = probs - labels
    dlogits[clamped] = 0.0
    return ce, dlogits, clamped


# -- public operations --------------------------------------------------------


def predict(spec, params, inputs, batch_size=1000):
    """Class probabilities for a batch of inputs, shape ``(N, T)``."""
    values = _values(spec, params)
    x = _check_batch(spec, inputs)
    out = np.empty((x.shape[0], spec.num_classes))
    for sl in _batches(x.shape[0], batch_size):
        out[sl] = _forward_batch(spec, values, x[sl])[0]
    return out


def forward(spec, params, x):
    """Probability vector of length ``num_classes`` for a single input."""
    x = np.asarray(x, dtype=np.float64)
    if x.shape != spec.input_shape:
        raise ShapeError(f"input shape {x.shape} does not match {spec.input_shape}", layer=0)
    return predict(spec, params, x[None])[0]


def cost_details(spec, params, data, batch_size=1000):
    """Return ``(cost, n_clamped)`` where ``n_clamped`` counts examples whose
    true-class probability fell below :data:`CE_FLOOR`."""
    values = _values(spec, params)
    x = _check_batch(spec, data.inputs)
    total = 0.0
    n_clamped = 0
    for sl in _batches(x.shape[0], batch_size):
        probs = _forward_batch(spec, values, x[sl])[0]
        ce, _, clamped = _ce_terms(probs, data.labels[sl])
        total += ce.sum()
        n_clamped += int(clamped.sum())
    return total / x.shape[0] + 0.5 * spec.reg_rate * float(values @ values), n_clamped


def cost(spec, params, data, batch_size=1000):
    """Mean cross-entropy plus ``(reg_rate / 2) * ||w||^2``."""
    return cost_details(spec, params, data, batch_size)[0]


def grad_cost(spec, params, data, batch_size=1000):
    values = _values(spec, params)
    x = _check_batch(spec, data.inputs)
    n = x.shape[0]
    grad = np.zeros(spec.num_params)
    for sl in _batches(n, batch_size):
        probs, caches = _forward_batch(spec, values, x[sl])
        _, dlogits, _ = _ce_terms(probs, data.labels[sl])
        grad += _backward_batch(spec, values, caches, dlogits, per_example=False)
    return grad / n + spec.reg_rate * values


def cost_and_grad(spec, params, inputs, labels):
    """Regularized cost and its gradient on one minibatch, in a single pass."""
    values = _values(spec, params)
    x = _check_batch(spec, inputs)
    probs, caches = _forward_batch(spec, values, x)
    ce, dlogits, _ = _ce_terms(probs, np.asarray(labels, dtype=np.float64))
    n = x.shape[0]
    grad = _backward_batch(spec, values, caches, dlogits, per_example=False) / n
    grad += spec.reg_rate * values
    return ce.sum() / n + 0.5 * spec.reg_rate * float(values @ values), grad


def per_example_grads(spec, params, inputs, labels, batch_size=500):
    """Gradients of the per-example regularized cost, shape ``(N, P)``.

    Row ``n`` is the gradient of ``ce_n + (reg_rate / 2) ||w||^2`` so the rows
    average to :func:`grad_cost`.
    """
    values = _values(spec, params)
    x = _check_batch(spec, inputs)
    labels = np.asarray(labels, dtype=np.float64)
    out = np.empty((x.shape[0], spec.num_params))
    reg = spec.reg_rate * values
    for sl in _batches(x.shape[0], batch_size):
        probs, caches = _forward_batch(spec, values, x[sl])
        _, dlogits, _ = _ce_terms(probs, labels[sl])
        out[sl] = _backward_batch(spec, values, caches, dlogits, per_example=True)
        out[sl] += reg
    return out


def per_example_grad(spec, params, x, y):
    x = np.asarray(x, dtype=np.float64)
    if x.shape != spec.input_shape:
        raise ShapeError(f"input shape {x.shape} does not match {spec.input_shape}", layer=0)
    return per_example_grads(spec, params, x[None], np.asarray(y, dtype=np.float64)[None])[0]


def sensitivities(spec, params, inputs, batch_size=200):
    """Output Jacobians for a batch of inputs, shape ``(N, T, P)``.

    Entry ``[n, i, j]`` is the derivative of softmax output ``i`` at input
    ``n`` with respect to parameter ``j``.
    """
    values = _values(spec, params)
    x = _check_batch(spec, inputs)
    t = spec.num_classes
    out = np.empty((x.shape[0], t, spec.num_params))
    eye = np.eye(t)
    for sl in _batches(x.shape[0], batch_size):
        probs, caches = _forward_batch(spec, values, x[sl])
        for i in range(t):
            # d p_i / d z = p_i (e_i - p)
            dlogits = probs[:, i : i + 1] * (eye[i] - probs)
            out[sl, i] = _backward_batch(spec, values, caches, dlogits, per_example=True)
    return out


def sensitivity(spec, params, x0):
    """Sensitivity matrix ``F`` (``T x P``) at a single input ``x0``."""
    x0 = np.asarray(x0, dtype=np.float64)
    if x0.shape != spec.input_shape:
        raise ShapeError(f"input shape {x0.shape} does not match {spec.input_shape}", layer=0)
    return sensitivities(spec, params, x0[None])[0]


def accuracy(spec, params, data, batch_size=1000):
    probs = predict(spec, params, data.inputs, batch_size)
    return float(np.mean(probs.argmax(1) == data.labels.argmax(1)))


# -- reference architectures --------------------------------------------------


def dense_spec(n_in, hidden, num_classes, reg_rate=0.01):
    """Fully connected ReLU network on flat inputs."""
    layers = [Input((n_in,))]
    width = n_in
    for h in hidden:
        layers += [Dense(width, h), ReLU()]
        width = h
    layers += [Dense(width, num_classes), Softmax()]
    return NetworkSpec(tuple(layers), num_classes, reg_rate)


def lenet_spec(input_shape, num_classes=10, channels=(32, 64, 64), dense_width=64, reg_rate=0.01):
    """Three 3x3 conv layers (first two pooled), one hidden dense layer."""
    c, h, w = input_shape
    c1, c2, c3 = channels
    # valid conv -> floor pool, twice, then a final valid conv
    h_out = ((h - 2) // 2 - 2) // 2 - 2
    w_out = ((w - 2) // 2 - 2) // 2 - 2
    flat = c3 * h_out * w_out
    layers = (
        Input((c, h, w)),
        Conv3x3(c, c1), MaxPool2x2(), ReLU(),
        Conv3x3(c1, c2), MaxPool2x2(), ReLU(),
        Conv3x3(c2, c3), ReLU(),
        Dense(flat, dense_width), ReLU(),
        Dense(dense_width, num_classes), Softmax(),
    )
    return NetworkSpec(layers, num_classes, reg_rate)


def mnist_reference_spec(reg_rate=0.01):
    return lenet_spec((1, 28, 28), 10, reg_rate=reg_rate)


def cifar_reference_spec(reg_rate=0.01):
    return lenet_spec((3, 32, 32), 10, reg_rate=reg_rate)
