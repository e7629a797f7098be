"""Minimal dense-tensor engine for the patch classifier.

Implements forward and backward passes for the four layer kinds the
detector network needs (valid convolution, factor-2 max pooling, dense,
ReLU), a softmax cross-entropy loss, momentum SGD, and a finite-difference
gradient checker.

Tensors are plain numpy arrays (row-major). Single-sample functions follow
the documented shapes (conv input is [C, H, W]); the layer classes used by
the training loop run the same kernels batched over a leading N axis.
All ops are pure: outputs are new arrays, inputs are never mutated.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import IndexOutOfRangeError, ShapeMismatchError

__all__ = [
    "LayerSpec",
    "GradCheckReport",
    "PoolIndices",
    "conv2d_forward",
    "conv2d_backward",
    "maxpool_forward",
    "maxpool_backward",
    "dense_forward",
    "dense_backward",
    "relu_forward",
    "relu_backward",
    "softmax_cross_entropy",
    "softmax_probs",
    "sgd_step",
    "gradient_check",
    "Network",
    "ConvLayer",
    "MaxPoolLayer",
    "ReluLayer",
    "FlattenLayer",
    "DenseLayer",
    "build_layers",
]


VALID_LAYER_KINDS = ("conv", "maxpool", "dense", "relu", "softmax-output")


@dataclass(frozen=True)
class LayerSpec:
    """Declarative description of one layer in a stack.

    Parameters are kind-specific: conv uses (filters, filter_size),
    maxpool uses factor, dense and softmax-output use units.
    """

    kind: str
    filters: int = 0
    filter_size: int = 0
    factor: int = 0
    units: int = 0

    def __post_init__(self):
        if self.kind not in VALID_LAYER_KINDS:
            raise ValueError(f"unknown layer kind {self.kind!r}")
        if self.kind == "conv" and (self.filters < 1 or self.filter_size < 1):
            raise ValueError("conv layer needs filters >= 1 and filter_size >= 1")
        if self.kind == "maxpool" and self.factor < 2:
            raise ValueError("pool factor must be >= 2")
        if self.kind in ("dense", "softmax-output") and self.units < 1:
            raise ValueError("unit count must be >= 1")

    def to_dict(self) -> dict:
        d = {"kind": self.kind}
        if self.kind == "conv":
            d["filters"] = self.filters
            d["filter_size"] = self.filter_size
        elif self.kind == "maxpool":
            d["factor"] = self.factor
        else:
            d["units"] = self.units
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "LayerSpec":
        return cls(
            kind=d["kind"],
            filters=d.get("filters", 0),
            filter_size=d.get("filter_size", 0),
            factor=d.get("factor", 0),
            units=d.get("units", 0),
        )


# ---------------------------------------------------------------------------
# batched kernels (leading N axis); the public single-sample ops wrap these
# ---------------------------------------------------------------------------

def _im2col(x: np.ndarray, k: int):
    """Unfold (N, C, H, W) into columns (N, C*k*k, H'*W') for a k x k window."""
    view = sliding_window_view(x, (k, k), axis=(2, 3))  # (N, C, H', W', k, k)
    n, c, ho, wo = view.shape[:4]
    cols = view.transpose(0, 1, 4, 5, 2, 3).reshape(n, c * k * k, ho * wo)
    return np.ascontiguousarray(cols), ho, wo


def _conv_forward_batch(x, filters, bias):
    n, c, h, w = x.shape
    f, cf, kh, kw = filters.shape
    if cf != c:
        raise ShapeMismatchError(f"input has {c} channels, filters expect {cf}")
    if kh != kw:
        raise ShapeMismatchError("only square filters are supported")
    if h < kh or w < kw:
        raise ShapeMismatchError(f"input {h}x{w} smaller than filter {kh}x{kw}")
    if bias.shape != (f,):
        raise ShapeMismatchError(f"bias shape {bias.shape} != ({f},)")
    cols, ho, wo = _im2col(x, kh)
    w2 = filters.reshape(f, c * kh * kw)
    out = np.matmul(w2[None], cols) + bias[None, :, None]
    return out.reshape(n, f, ho, wo), cols


def _conv_backward_batch(x, filters, upstream, cols=None):
    n, c, h, w = x.shape
    f, _, k, _ = filters.shape
    ho, wo = h - k + 1, w - k + 1
    if upstream.shape != (n, f, ho, wo):
        raise ShapeMismatchError(
            f"upstream shape {upstream.shape} != {(n, f, ho, wo)}"
        )
    if cols is None:
        cols, _, _ = _im2col(x, k)
    length = ho * wo
    g = upstream.reshape(n, f, length)

    grad_bias = g.sum(axis=(0, 2))

    g_flat = g.transpose(1, 0, 2).reshape(f, n * length)
    cols_flat = cols.transpose(1, 0, 2).reshape(c * k * k, n * length)
    grad_filters = (g_flat @ cols_flat.T).reshape(filters.shape)

    w2 = filters.reshape(f, c * k * k)
    grad_cols = np.matmul(w2.T[None], g)  # (N, C*k*k, L)
    gc = grad_cols.reshape(n, c, k, k, ho, wo)
    grad_input = np.zeros_like(x)
    for a in range(k):
        for b in range(k):
            grad_input[:, :, a:a + ho, b:b + wo] += gc[:, :, a, b]
    return grad_input, grad_filters, grad_bias


def _pool_forward_batch(x, factor):
    n, c, h, w = x.shape
    if h < factor or w < factor:
        raise ShapeMismatchError(f"input {h}x{w} smaller than pool factor {factor}")
    ho, wo = h // factor, w // factor
    cropped = x[:, :, : ho * factor, : wo * factor]
    blocks = cropped.reshape(n, c, ho, factor, wo, factor)
    flat = blocks.transpose(0, 1, 2, 4, 3, 5).reshape(n, c, ho, wo, factor * factor)
    # np.argmax takes the first maximum: row-major in-block tie-break
    idx = flat.argmax(axis=-1)
    out = np.take_along_axis(flat, idx[..., None], axis=-1)[..., 0]
    return out, idx


def _pool_backward_batch(idx, upstream, input_shape, factor):
    n, c, h, w = input_shape
    ho, wo = h // factor, w // factor
    if upstream.shape != (n, c, ho, wo):
        raise ShapeMismatchError(
            f"upstream shape {upstream.shape} != {(n, c, ho, wo)}"
        )
    if idx.min() < 0 or idx.max() >= factor * factor:
        raise IndexOutOfRangeError("pool argmax index outside its block")
    scatter = np.zeros((n, c, ho, wo, factor * factor), dtype=upstream.dtype)
    np.put_along_axis(scatter, idx[..., None], upstream[..., None], axis=-1)
    blocks = scatter.reshape(n, c, ho, wo, factor, factor).transpose(0, 1, 2, 4, 3, 5)
    grad = np.zeros(input_shape, dtype=upstream.dtype)
    grad[:, :, : ho * factor, : wo * factor] = blocks.reshape(
        n, c, ho * factor, wo * factor
    )
    return grad


# ---------------------------------------------------------------------------
# single-sample operations (the documented contracts)
# ---------------------------------------------------------------------------

def conv2d_forward(x: np.ndarray, filters: np.ndarray, bias: np.ndarray) -> np.ndarray:
    """Valid (unpadded) convolution: [C,H,W] x [F,C,k,k] -> [F,H-k+1,W-k+1].

    out[f,i,j] = bias[f] + sum_{c,a,b} x[c,i+a,j+b] * filters[f,c,a,b]
    """
    if x.ndim != 3 or filters.ndim != 4:
        raise ShapeMismatchError("conv2d_forward expects x[C,H,W], filters[F,C,k,k]")
    out, _ = _conv_forward_batch(x[None], filters, bias)
    return out[0]


def conv2d_backward(x, filters, upstream):
    """Gradients of conv2d_forward: returns (grad_input, grad_filters, grad_bias)."""
    if x.ndim != 3 or filters.ndim != 4 or upstream.ndim != 3:
        raise ShapeMismatchError("conv2d_backward expects unbatched tensors")
    gx, gw, gb = _conv_backward_batch(x[None], filters, upstream[None])
    return gx[0], gw, gb


@dataclass
class PoolIndices:
    """Argmax bookkeeping from a pooling forward pass, consumed by backward."""

    block_argmax: np.ndarray  # int array, flat row-major index within each block
    input_shape: tuple
    factor: int


def maxpool_forward(x: np.ndarray, factor: int = 2):
    """Disjoint-block max pooling on [C,H,W]; trailing odd rows/cols dropped.

    Returns (pooled, PoolIndices); ties go to the first in-block index in
    row-major order.
    """
    if x.ndim != 3:
        raise ShapeMismatchError("maxpool_forward expects x[C,H,W]")
    out, idx = _pool_forward_batch(x[None], factor)
    return out[0], PoolIndices(idx[0], x.shape, factor)


def maxpool_backward(indices: PoolIndices, upstream: np.ndarray) -> np.ndarray:
    """Route upstream gradient to the recorded argmax positions, zero elsewhere."""
    if upstream.ndim != 3:
        raise ShapeMismatchError("maxpool_backward expects upstream[C,H,W]")
    grad = _pool_backward_batch(
        indices.block_argmax[None],
        upstream[None],
        (1,) + tuple(indices.input_shape),
        indices.factor,
    )
    return grad[0]


def dense_forward(x: np.ndarray, weights: np.ndarray, bias: np.ndarray) -> np.ndarray:
    """Affine map: out = weights @ x + bias with weights[m,n], x[n]."""
    if x.ndim != 1 or weights.ndim != 2:
        raise ShapeMismatchError("dense_forward expects x[n], weights[m,n]")
    m, n = weights.shape
    if x.shape[0] != n or bias.shape != (m,):
        raise ShapeMismatchError(
            f"dense shapes disagree: x{x.shape}, W{weights.shape}, b{bias.shape}"
        )
    return weights @ x + bias


def dense_backward(x, weights, upstream):
    """Gradients of dense_forward: (grad_input, grad_weights, grad_bias)."""
    m, n = weights.shape
    if x.shape != (n,) or upstream.shape != (m,):
        raise ShapeMismatchError("dense_backward shapes disagree")
    grad_input = weights.T @ upstream
    grad_weights = np.outer(upstream, x)
    grad_bias = upstream.copy()
    return grad_input, grad_weights, grad_bias


def relu_forward(x: np.ndarray) -> np.ndarray:
    """Elementwise max(x, 0)."""
    return np.maximum(x, 0)


def relu_backward(x: np.ndarray, upstream: np.ndarray) -> np.ndarray:
    """Pass upstream where x > 0; the subgradient at exactly 0 is 0."""
    if x.shape != upstream.shape:
        raise ShapeMismatchError("relu_backward shapes disagree")
    return upstream * (x > 0)


def softmax_probs(logits: np.ndarray) -> np.ndarray:
    """Stable softmax over the last axis."""
    shifted = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


def softmax_cross_entropy(logits: np.ndarray, true_class: int):
    """Loss and logit gradient for a single two-class example.

    loss = -log softmax(logits)[true_class], computed with max subtraction;
    grad = softmax(logits) - one_hot(true_class).
    """
    if logits.ndim != 1:
        raise ShapeMismatchError("softmax_cross_entropy expects a logit vector")
    shifted = logits - logits.max()
    log_norm = np.log(np.exp(shifted).sum())
    loss = float(log_norm - shifted[true_class])
    grad = np.exp(shifted - log_norm)
    grad[true_class] -= 1.0
    return loss, grad


def _batched_softmax_cross_entropy(logits: np.ndarray, labels: np.ndarray):
    """Mean loss over a batch and the matching logit gradient."""
    n = logits.shape[0]
    shifted = logits - logits.max(axis=1, keepdims=True)
    log_norm = np.log(np.exp(shifted).sum(axis=1))
    losses = log_norm - shifted[np.arange(n), labels]
    probs = np.exp(shifted - log_norm[:, None])
    grad = probs.copy()
    grad[np.arange(n), labels] -= 1.0
    grad /= n
    return float(losses.mean()), grad


def sgd_step(params, grads, learning_rate, momentum, velocity_state):
    """One momentum-SGD update over parallel lists of arrays.

    v <- momentum * v - lr * g;  p <- p + v.  Returns (new_params, new_velocity);
    inputs are not mutated.
    """
    if len(params) != len(grads) or len(params) != len(velocity_state):
        raise ShapeMismatchError("params, grads, velocity lengths differ")
    new_params, new_velocity = [], []
    for p, g, v in zip(params, grads, velocity_state):
        if p.shape != g.shape or p.shape != v.shape:
            raise ShapeMismatchError(
                f"sgd_step shapes disagree: {p.shape}, {g.shape}, {v.shape}"
            )
        nv = momentum * v - learning_rate * g
        new_params.append(p + nv)
        new_velocity.append(nv)
    return new_params, new_velocity


# ---------------------------------------------------------------------------
# layer classes (batched) and the network container
# ---------------------------------------------------------------------------

class ConvLayer:
    def __init__(self, weights, bias, name="conv"):
        self.weights = weights
        self.bias = bias
        self.name = name
        self._cache = None
        self.grads = {}

    def forward(self, x):
        out, cols = _conv_forward_batch(x, self.weights, self.bias)
        self._cache = (x, cols)
        return out

    def backward(self, upstream):
        x, cols = self._cache
        gx, gw, gb = _conv_backward_batch(x, self.weights, upstream, cols)
        self.grads = {"weights": gw, "bias": gb}
        return gx

    def param_names(self):
        return ["weights", "bias"]


class MaxPoolLayer:
    def __init__(self, factor=2, name="maxpool"):
        self.factor = factor
        self.name = name
        self._cache = None
        self.grads = {}

    def forward(self, x):
        out, idx = _pool_forward_batch(x, self.factor)
        self._cache = (idx, x.shape)
        return out

    def backward(self, upstream):
        idx, shape = self._cache
        return _pool_backward_batch(idx, upstream, shape, self.factor)

    def routing_state(self):
        return self._cache[0]

    def param_names(self):
        return []


class ReluLayer:
    def __init__(self, name="relu"):
        self.name = name
        self._cache = None
        self.grads = {}

    def forward(self, x):
        self._cache = x
        return np.maximum(x, 0)

    def backward(self, upstream):
        return upstream * (self._cache > 0)

    def routing_state(self):
        return self._cache > 0

    def param_names(self):
        return []


class FlattenLayer:
    def __init__(self, name="flatten"):
        self.name = name
        self._cache = None
        self.grads = {}

    def forward(self, x):
        self._cache = x.shape
        return x.reshape(x.shape[0], -1)

    def backward(self, upstream):
        return upstream.reshape(self._cache)

    def param_names(self):
        return []


class DenseLayer:
    def __init__(self, weights, bias, name="dense"):
        self.weights = weights  # (out, in)
        self.bias = bias
        self.name = name
        self._cache = None
        self.grads = {}

    def forward(self, x):
        if x.shape[1] != self.weights.shape[1]:
            raise ShapeMismatchError(
                f"dense input {x.shape[1]} != expected {self.weights.shape[1]}"
            )
        self._cache = x
        return x @ self.weights.T + self.bias

    def backward(self, upstream):
        x = self._cache
        self.grads = {
            "weights": upstream.T @ x,
            "bias": upstream.sum(axis=0),
        }
        return upstream @ self.weights

    def param_names(self):
        return ["weights", "bias"]


class Network:
    """A fixed sequence of layers with a softmax cross-entropy head."""

    def __init__(self, layers):
        self.layers = layers

    def forward(self, x: np.ndarray) -> np.ndarray:
        """Batched forward pass: x[N,C,H,W] -> logits[N,classes]."""
        for layer in self.layers:
            x = layer.forward(x)
        return x

    def loss_and_gradients(self, x: np.ndarray, labels: np.ndarray):
        """Mean cross-entropy over the batch plus gradients for every parameter.

        Returns (loss, grads) where grads is a list parallel to parameters().
        """
        logits = self.forward(x)
        loss, g = _batched_softmax_cross_entropy(logits, labels)
        for layer in reversed(self.layers):
            g = layer.backward(g)
        grads = [layer.grads[name] for layer, name, _ in self.parameters()]
        return loss, grads

    def parameters(self):
        """All learnable parameters in layer order as (layer, name, array)."""
        out = []
        for layer in self.layers:
            for name in layer.param_names():
                out.append((layer, name, getattr(layer, name)))
        return out

    def parameter_count(self) -> int:
        return sum(arr.size for _, _, arr in self.parameters())

    def set_parameters(self, arrays):
        params = self.parameters()
        if len(arrays) != len(params):
            raise ShapeMismatchError("parameter list length mismatch")
        for (layer, name, old), new in zip(params, arrays):
            if new.shape != old.shape:
                raise ShapeMismatchError(f"{layer.name}.{name} shape mismatch")
            setattr(layer, name, new)

    def astype(self, dtype) -> "Network":
        """A fresh network with parameters cast to dtype (caches not shared)."""
        layers = []
        for layer in self.layers:
            cls = type(layer)
            if isinstance(layer, (ConvLayer, DenseLayer)):
                layers.append(
                    cls(layer.weights.astype(dtype), layer.bias.astype(dtype),
                        layer.name)
                )
            elif isinstance(layer, MaxPoolLayer):
                layers.append(cls(layer.factor, layer.name))
            elif isinstance(layer, (ReluLayer, FlattenLayer)):
                layers.append(cls(layer.name))
            else:
                raise TypeError(f"unknown layer type {cls!r}")
        return Network(layers)


def build_layers(specs, input_size, seed, dtype=np.float32):
    """Instantiate a layer stack from LayerSpecs with seeded Glorot init.

    input_size is (channels, height, width). ReLU follows each conv and each
    hidden dense layer; a flatten is inserted before the first dense layer.
    Weights are U(-sqrt(6/(fan_in+fan_out)), +sqrt(...)), biases zero.
    """
    rng = np.random.default_rng(seed)
    c, h, w = input_size
    layers = []
    spatial = True
    counter = {}

    def glorot(shape, fan_in, fan_out):
        bound = np.sqrt(6.0 / (fan_in + fan_out))
        return rng.uniform(-bound, bound, size=shape).astype(dtype)

    def tag(kind):
        counter[kind] = counter.get(kind, 0) + 1
        return f"{kind}{counter[kind]}"

    for spec in specs:
        if spec.kind == "conv":
            k, f = spec.filter_size, spec.filters
            if h < k or w < k:
                raise ShapeMismatchError(
                    f"feature map {h}x{w} smaller than {k}x{k} filter"
                )
            weights = glorot((f, c, k, k), c * k * k, f * k * k)
            bias = np.zeros(f, dtype=dtype)
            layers.append(ConvLayer(weights, bias, tag("conv")))
            layers.append(ReluLayer(tag("relu")))
            c, h, w = f, h - k + 1, w - k + 1
        elif spec.kind == "maxpool":
            layers.append(MaxPoolLayer(spec.factor, tag("maxpool")))
            h, w = h // spec.factor, w // spec.factor
            if h < 1 or w < 1:
                raise ShapeMismatchError("pooling collapsed the feature map")
        elif spec.kind in ("dense", "softmax-output"):
            if spatial:
                layers.append(FlattenLayer(tag("flatten")))
                n_in = c * h * w
                spatial = False
            else:
                n_in = prev_units
            weights = glorot((spec.units, n_in), n_in, spec.units)
            bias = np.zeros(spec.units, dtype=dtype)
            name = "output" if spec.kind == "softmax-output" else tag("dense")
            layers.append(DenseLayer(weights, bias, name))
            if spec.kind == "dense":
                layers.append(ReluLayer(tag("relu")))
            prev_units = spec.units
        elif spec.kind == "relu":
            layers.append(ReluLayer(tag("relu")))
        else:
            raise ValueError(f"cannot assemble layer kind {spec.kind!r}")
        if spatial and (h < 1 or w < 1):
            raise ShapeMismatchError("layer stack consumed the spatial extent")
    return layers


# ---------------------------------------------------------------------------
# gradient verification
# ---------------------------------------------------------------------------

@dataclass
class GradCheckReport:
    """Outcome of comparing analytic gradients to central differences."""

    max_relative_error: float
    worst_parameter_index: int
    per_layer_errors: list = field(default_factory=list)
    checked_coordinates: int = 0
    skipped_coordinates: int = 0


def _routing_signature(net: Network):
    states = []
    for layer in net.layers:
        state = getattr(layer, "routing_state", lambda: None)()
        if state is not None:
            states.append(state.copy())
    return states


def gradient_check(network: Network, batch, epsilon: float = 1e-5,
                   max_checks_per_param: int | None = None,
                   seed: int = 0) -> GradCheckReport:
    """Compare analytic gradients against central finite differences.

    The network is recast to double precision before checking. Relative
    error is |a - n| / max(|a|, |n|, 1e-8). When a parameter array holds
    more than max_checks_per_param entries, a seeded random subset of
    coordinates is checked; pass None to check every coordinate.

    The loss is piecewise smooth: if nudging a coordinate by +/-epsilon
    flips a ReLU activation or a pool argmax, the difference quotient does
    not estimate the derivative there. Such coordinates are excluded and
    counted in skipped_coordinates.
    """
    x, labels = batch
    x = np.asarray(x, dtype=np.float64)
    labels = np.asarray(labels)
    if x.size == 0:
        raise ValueError("gradient_check needs a non-empty batch")

    net = network.astype(np.float64)
    _, grads = net.loss_and_gradients(x, labels)
    params = net.parameters()
    rng = np.random.default_rng(seed)

    def loss_and_routing():
        loss, _ = _batched_softmax_cross_entropy(net.forward(x), labels)
        return loss, _routing_signature(net)

    max_err = 0.0
    worst_index = -1
    per_layer = {}
    checked = 0
    skipped = 0
    offset = 0
    for (layer, name, arr), analytic in zip(params, grads):
        size = arr.size
        if max_checks_per_param is not None and size > max_checks_per_param:
            coords = rng.choice(size, size=max_checks_per_param, replace=False)
        else:
            coords = np.arange(size)
        flat = arr.reshape(-1)
        analytic_flat = analytic.reshape(-1)
        layer_err = per_layer.get(layer.name, 0.0)
        for coord in coords:
            orig = flat[coord]
            flat[coord] = orig + epsilon
            loss_plus, state_plus = loss_and_routing()
            flat[coord] = orig - epsilon
            loss_minus, state_minus = loss_and_routing()
            flat[coord] = orig
            if any(not np.array_equal(a, b)
                   for a, b in zip(state_plus, state_minus)):
                skipped += 1
                continue
            numeric = (loss_plus - loss_minus) / (2 * epsilon)
            a = analytic_flat[coord]
            err = abs(a - numeric) / max(abs(a), abs(numeric), 1e-8)
            checked += 1
            if err > layer_err:
                layer_err = err
            if err > max_err:
                max_err = err
                worst_index = offset + int(coord)
        per_layer[layer.name] = layer_err
        offset += size

    return GradCheckReport(
        max_relative_error=float(max_err),
        worst_parameter_index=worst_index,
        per_layer_errors=list(per_layer.values()),
        checked_coordinates=checked,
        skipped_coordinates=skipped,
    )
