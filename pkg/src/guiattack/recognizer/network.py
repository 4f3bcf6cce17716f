"""Small convolutional classifier with hand-written reverse-mode gradients.

Tensors are NHWC inside the network.  Public entry points take ``(H, W, 3)``
images of any size: they are resampled to ``spec.input_side`` with the same
separable linear map as :func:`guiattack.imagecore.resize`, so input
gradients are pulled back through that map to the caller's resolution.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np

from ..errors import NumericError
from ..imagecore import SeededStream, resize_matrix
from ..sprites import CLASS_NAMES

N_CLASSES = len(CLASS_NAMES) + 1
LOG_PROB_FLOOR = 1e-12


@dataclass(frozen=True)
class Conv:
    out_channels: int
    kernel: int = 3
    stride: int = 1
    padding: int = 1


@dataclass(frozen=True)
class ReLU:
    pass


@dataclass(frozen=True)
class MaxPool:
    size: int = 2


@dataclass(frozen=True)
class Dense:
    out_features: int


_LAYER_KINDS = {"conv": Conv, "relu": ReLU, "maxpool": MaxPool, "dense": Dense}
_KIND_OF = {v: k for k, v in _LAYER_KINDS.items()}


def _default_layers():
    return (
        Conv(8, 4, 2, 1), ReLU(), MaxPool(2),
        Conv(16, 3, 1, 1), ReLU(), MaxPool(2),
        Conv(32, 3, 1, 1), ReLU(), MaxPool(2),
        Dense(N_CLASSES),
    )  # fmt: skip


@dataclass(frozen=True)
class NetworkSpec:
    input_side: int = 64
    in_channels: int = 3
    n_classes: int = N_CLASSES
    layers: tuple = field(default_factory=_default_layers)

    def __post_init__(self):
        shape = self.shapes()[-1]
        if shape != (self.n_classes,):
            raise ValueError(f"network output shape {shape} != ({self.n_classes},)")

    def shapes(self) -> list[tuple]:
        """Activation shape after each layer, starting with the input."""
        shape: tuple = (self.in_channels, self.input_side, self.input_side)
        out = [shape]
        for layer in self.layers:
            if isinstance(layer, Conv):
                if len(shape) != 3:
                    raise ValueError("conv after dense layer")
                c, h, w = shape
                ho = (h + 2 * layer.padding - layer.kernel) // layer.stride + 1
                wo = (w + 2 * layer.padding - layer.kernel) // layer.stride + 1
                if ho < 1 or wo < 1:
                    raise ValueError(f"conv {layer} does not fit input {shape}")
                shape = (layer.out_channels, ho, wo)
            elif isinstance(layer, MaxPool):
                c, h, w = shape
                if h % layer.size or w % layer.size:
                    raise ValueError(f"maxpool {layer.size} does not tile {shape}")
                shape = (c, h // layer.size, w // layer.size)
            elif isinstance(layer, Dense):
                shape = (layer.out_features,)
            elif not isinstance(layer, ReLU):
                raise TypeError(f"unknown layer {layer!r}")
            out.append(shape)
        return out

    def param_shapes(self) -> list[tuple]:
        shapes = []
        prev = None
        for layer, in_shape in zip(self.layers, self.shapes()):
            if isinstance(layer, Conv):
                shapes += [(layer.out_channels, in_shape[0], layer.kernel, layer.kernel), (layer.out_channels,)]
            elif isinstance(layer, Dense):
                prev = int(np.prod(in_shape))
                shapes += [(layer.out_features, prev), (layer.out_features,)]
        return shapes

    def n_params(self) -> int:
        return int(sum(np.prod(s) for s in self.param_shapes()))

    def to_dict(self) -> dict:
        return {
            "input_side": self.input_side,
            "in_channels": self.in_channels,
            "n_classes": self.n_classes,
            "layers": [{"kind": _KIND_OF[type(l)], **asdict(l)} for l in self.layers],
        }

    @classmethod
    def from_dict(cls, d: dict) -> NetworkSpec:
        layers = []
        for item in d["layers"]:
            item = dict(item)
            layers.append(_LAYER_KINDS[item.pop("kind")](**item))
        return cls(d["input_side"], d.get("in_channels", 3), d.get("n_classes", N_CLASSES), tuple(layers))


def small_spec(input_side: int = 16, n_classes: int = N_CLASSES) -> NetworkSpec:
    """A few-hundred-parameter network for gradient checking."""
    return NetworkSpec(
        input_side,
        3,
        n_classes,
        (Conv(4, 3, 1, 1), ReLU(), MaxPool(2), Conv(6, 3, 2, 1), ReLU(), MaxPool(2), Dense(n_classes)),
    )


@dataclass
class NetworkParams:
    spec: NetworkSpec
    tensors: list[np.ndarray]

    def __post_init__(self):
        expected = self.spec.param_shapes()
        got = [t.shape for t in self.tensors]
        if got != expected:
            raise ValueError(f"parameter shapes {got} do not match spec {expected}")

    @property
    def dtype(self):
        return self.tensors[0].dtype

    def copy(self) -> NetworkParams:
        return NetworkParams(self.spec, [t.copy() for t in self.tensors])

    def astype(self, dtype) -> NetworkParams:
        return NetworkParams(self.spec, [t.astype(dtype) for t in self.tensors])

    def is_finite(self) -> bool:
        return all(np.isfinite(t).all() for t in self.tensors)

    def equals(self, other: NetworkParams) -> bool:
        return self.spec == other.spec and all(
            a.dtype == b.dtype and np.array_equal(a, b) for a, b in zip(self.tensors, other.tensors)
        )


@dataclass
class Gradient:
    param_grads: list[np.ndarray]
    input_grad: np.ndarray


def init_params(spec: NetworkSpec, stream: SeededStream, dtype=np.float32) -> NetworkParams:
    """He-normal weights, zero biases."""
    tensors = []
    for shape in spec.param_shapes():
        if len(shape) == 1:
            tensors.append(np.zeros(shape, dtype=dtype))
        else:
            fan_in = int(np.prod(shape[1:]))
            tensors.append(stream.normal(0.0, np.sqrt(2.0 / fan_in), shape).astype(dtype))
    return NetworkParams(spec, tensors)


def zero_params(spec: NetworkSpec, dtype=np.float32) -> NetworkParams:
    return NetworkParams(spec, [np.zeros(s, dtype=dtype) for s in spec.param_shapes()])


# ----------------------------------------------------------------- layers


def _conv_forward(x, w, b, layer: Conv):
    p, k, s = layer.padding, layer.kernel, layer.stride
    xp = np.pad(x, ((0, 0), (p, p), (p, p), (0, 0))) if p else x
    cols = np.lib.stride_tricks.sliding_window_view(xp, (k, k), axis=(1, 2))[:, ::s, ::s]  # N, Ho, Wo, C, k, k
    n, ho, wo = cols.shape[:3]
    cols2d = cols.reshape(n * ho * wo, -1)
    wm = w.transpose(1, 2, 3, 0).reshape(-1, w.shape[0])
    out = (cols2d @ wm + b).reshape(n, ho, wo, w.shape[0])
    return out, (xp.shape, cols2d, wm)


def _conv_backward(dout, w, cache, layer: Conv):
    xp_shape, cols2d, wm = cache
    p, k, s = layer.padding, layer.kernel, layer.stride
    n, ho, wo, f = dout.shape
    d2 = dout.reshape(-1, f)
    dw = (cols2d.T @ d2).reshape(w.shape[1], k, k, f).transpose(3, 0, 1, 2)
    db = d2.sum(axis=0)
    dcols = (d2 @ wm.T).reshape(n, ho, wo, w.shape[1], k, k)
    dxp = np.zeros(xp_shape, dtype=dout.dtype)
    for i in range(k):
        for j in range(k):
            dxp[:, i : i + s * ho : s, j : j + s * wo : s, :] += dcols[..., i, j]
    dx = dxp[:, p : xp_shape[1] - p, p : xp_shape[2] - p, :] if p else dxp
    return dx, dw, db


def _pool_slices(x, size):
    return [x[:, i::size, j::size, :] for i in range(size) for j in range(size)]


def _pool_forward(x, size):
    parts = _pool_slices(x, size)
    out = parts[0]
    for part in parts[1:]:
        out = np.maximum(out, part)
    # first slice attaining the max wins, so ties route gradient deterministically
    arg = np.full(out.shape, len(parts) - 1, dtype=np.int8)
    for idx in range(len(parts) - 2, -1, -1):
        arg[parts[idx] == out] = idx
    return out, (x.shape, arg)


def _pool_backward(dout, cache, size):
    shape, arg = cache
    dx = np.zeros(shape, dtype=dout.dtype)
    for idx in range(size * size):
        i, j = divmod(idx, size)
        dx[:, i::size, j::size, :] = np.where(arg == idx, dout, 0)
    return dx


def forward_batch(params: NetworkParams, x: np.ndarray):
    """Logits for an ``(N, S, S, C)`` batch plus the cache for :func:`backward_batch`."""
    caches = []
    it = iter(params.tensors)
    for layer in params.spec.layers:
        if isinstance(layer, Conv):
            w, b = next(it), next(it)
            x, cache = _conv_forward(x, w, b, layer)
            caches.append((w, cache))
        elif isinstance(layer, ReLU):
            caches.append(x > 0)
            x = np.maximum(x, 0)
        elif isinstance(layer, MaxPool):
            x, cache = _pool_forward(x, layer.size)
            caches.append(cache)
        else:
            w, b = next(it), next(it)
            flat = x.reshape(x.shape[0], -1)
            caches.append((w, flat, x.shape))
            x = flat @ w.T + b
    return x, caches


def backward_batch(params: NetworkParams, caches, dlogits: np.ndarray):
    """Gradients of ``sum(dlogits * logits)`` w.r.t. parameters and the input batch."""
    grads: list[np.ndarray] = []
    d = dlogits
    for layer, cache in zip(reversed(params.spec.layers), reversed(caches)):
        if isinstance(layer, Conv):
            w, conv_cache = cache
            d, dw, db = _conv_backward(d, w, conv_cache, layer)
            grads += [db, dw]
        elif isinstance(layer, ReLU):
            d = d * cache
        elif isinstance(layer, MaxPool):
            d = _pool_backward(d, cache, layer.size)
        else:
            w, flat, in_shape = cache
            grads += [d.sum(axis=0), d.T @ flat]
            d = (d @ w).reshape(in_shape)
    grads.reverse()
    return grads, d


def softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


# ------------------------------------------------------------- image level


def to_input(image: np.ndarray, side: int, dtype=np.float32) -> np.ndarray:
    """``(H, W, 3)`` image -> centred ``(side, side, 3)`` network input."""
    if image.ndim != 3 or image.shape[2] != 3:
        raise ValueError(f"expected an RGB image, got shape {image.shape}")
    h, w = image.shape[:2]
    rh, rw = resize_matrix(h, side), resize_matrix(w, side)
    x = np.einsum("ij,jkc,lk->ilc", rh, image, rw, optimize=True)
    return (x - 0.5).astype(dtype)


def input_grad_to_image(dx: np.ndarray, height: int, width: int) -> np.ndarray:
    """Pull an ``(S, S, 3)`` input gradient back to an ``(H, W, 3)`` image gradient."""
    side = dx.shape[0]
    rh, rw = resize_matrix(height, side), resize_matrix(width, side)
    return np.einsum("ij,ilc,lk->jkc", rh, dx, rw, optimize=True)


def _check_finite(params: NetworkParams) -> None:
    if not params.is_finite():
        raise NumericError("network parameters contain non-finite values")


def predict_batch(params: NetworkParams, x: np.ndarray) -> np.ndarray:
    _check_finite(params)
    logits, _ = forward_batch(params, x.astype(params.dtype, copy=False))
    return softmax(logits)


def forward(params: NetworkParams, image: np.ndarray) -> np.ndarray:
    """Class probabilities (length ``n_classes``) for one RGB image."""
    x = to_input(image, params.spec.input_side, params.dtype)
    return predict_batch(params, x[None])[0]


def loss(probs: np.ndarray, true_class: int) -> float:
    """Cross-entropy ``-log p[true]`` with a 1e-12 probability floor."""
    if not 0 <= true_class < len(probs):
        raise ValueError(f"class id {true_class} out of range")
    return float(-np.log(max(float(probs[true_class]), LOG_PROB_FLOOR)))


def batch_loss_and_grads(params: NetworkParams, x: np.ndarray, labels: np.ndarray, label_smoothing: float = 0.0):
    """Mean cross-entropy over a batch, its parameter gradients and input gradients.

    With ``label_smoothing`` the gradients are those of cross-entropy against
    ``(1 - a) * onehot + a / n_classes``; the returned loss is always the
    plain hard-label cross-entropy.
    """
    _check_finite(params)
    logits, caches = forward_batch(params, x)
    probs = softmax(logits)
    n = x.shape[0]
    picked = np.maximum(probs[np.arange(n), labels], LOG_PROB_FLOOR)
    mean_loss = float(-np.log(picked.astype(np.float64)).mean())
    dlogits = probs - label_smoothing / probs.shape[1]
    dlogits[np.arange(n), labels] -= 1.0 - label_smoothing
    dlogits /= n
    grads, dx = backward_batch(params, caches, dlogits.astype(params.dtype))
    return mean_loss, grads, dx


def backward(params: NetworkParams, image: np.ndarray, true_class: int) -> Gradient:
    """Exact gradients of the cross-entropy loss for one image."""
    if not 0 <= true_class < params.spec.n_classes:
        raise ValueError(f"class id {true_class} out of range")
    h, w = image.shape[:2]
    x = to_input(image, params.spec.input_side, params.dtype)
    _, grads, dx = batch_loss_and_grads(params, x[None], np.array([true_class]))
    input_grad = input_grad_to_image(dx[0].astype(np.float64), h, w)
    if not (np.isfinite(input_grad).all() and all(np.isfinite(g).all() for g in grads)):
        raise NumericError("non-finite gradient")
    return Gradient(grads, input_grad)


def _loss_and_pattern(params: NetworkParams, image: np.ndarray, true_class: int):
    """Loss plus a fingerprint of every ReLU mask and max-pool selection."""
    x = to_input(image, params.spec.input_side, params.dtype)
    logits, caches = forward_batch(params, x[None])
    parts = []
    for layer, cache in zip(params.spec.layers, caches):
        if isinstance(layer, ReLU):
            parts.append(np.packbits(cache).tobytes())
        elif isinstance(layer, MaxPool):
            parts.append(cache[1].astype(np.int8).tobytes())
    return loss(softmax(logits)[0], true_class), b"".join(parts)


def image_loss(params: NetworkParams, image: np.ndarray, true_class: int) -> float:
    return loss(forward(params, image), true_class)


def grad_check(
    params: NetworkParams,
    image: np.ndarray,
    true_class: int,
    h: float = 1e-3,
    n_coords: int = 200,
    stream: SeededStream | None = None,
    grad: Gradient | None = None,
    dtype=np.float64,
) -> float:
    """Max relative error between ``backward`` and central finite differences.

    Checks ``n_coords`` random coordinates, half input pixels and half
    parameters.  A coordinate whose +-h stencil flips any ReLU mask or
    max-pool selection sits on a kink where the loss is not differentiable;
    it is replaced by a fresh draw.  ``grad`` may be supplied to check a
    gradient from elsewhere (e.g. a deliberately corrupted one).
    """
    stream = stream or SeededStream(0)
    p = params.astype(dtype)
    image = np.array(image, dtype=np.float64)
    if grad is None:
        grad = backward(p, image, true_class)
    _, base_pattern = _loss_and_pattern(p, image, true_class)

    targets = [(t.reshape(-1), g.reshape(-1)) for t, g in zip(p.tensors, grad.param_grads)]
    flat_img = image.reshape(-1)
    n_param_total = sum(t.size for t, _ in targets)
    offsets = np.cumsum([0] + [t.size for t, _ in targets])

    def pick(from_input: bool):
        if from_input:
            i = int(stream.integers(0, flat_img.size))
            return flat_img, i, float(grad.input_grad.reshape(-1)[i])
        k = int(stream.integers(0, n_param_total))
        ti = int(np.searchsorted(offsets, k, side="right") - 1)
        vec, g = targets[ti]
        return vec, k - int(offsets[ti]), float(g[k - int(offsets[ti])])

    worst, checked, attempts = 0.0, 0, 0
    while checked < n_coords:
        attempts += 1
        if attempts > 50 * n_coords:
            raise RuntimeError("could not find enough differentiable coordinates")
        vec, i, analytic = pick(from_input=checked % 2 == 0)
        orig = vec[i]
        vec[i] = orig + h
        up, pat_up = _loss_and_pattern(p, image, true_class)
        vec[i] = orig - h
        down, pat_down = _loss_and_pattern(p, image, true_class)
        vec[i] = orig
        if pat_up != base_pattern or pat_down != base_pattern:
            continue
        worst = max(worst, _rel_err(analytic, (up - down) / (2 * h)))
        checked += 1
    return worst


def _rel_err(a: float, b: float, floor: float = 1e-8) -> float:
    return abs(a - b) / max(abs(a), abs(b), floor)
