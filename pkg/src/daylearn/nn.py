"""Minimal deterministic CNN engine.

Layers with explicit forward/backward, softmax cross-entropy and
BCE-with-logits losses, SGD and Adam optimizers, finite-difference
gradient verification, and an exact binary checkpoint format.

Runs use float32; the gradient checker exercises the same code paths
in float64.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from .errors import CheckpointError, ConfigError, DataError, NumericError, UsageError
from .rng import substream

# ---------------------------------------------------------------------------
# Layer specs
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Conv2dSpec:
    in_channels: int
    out_channels: int
    kernel: int
    stride: int = 1
    padding: int = 0


@dataclass(frozen=True)
class DenseSpec:
    in_features: int
    out_features: int


@dataclass(frozen=True)
class ReLUSpec:
    pass


@dataclass(frozen=True)
class MaxPool2dSpec:
    kernel: int


@dataclass(frozen=True)
class FlattenSpec:
    pass


LayerSpec = object  # any of the dataclasses above


def _validate_spec(i, spec):
    if isinstance(spec, Conv2dSpec):
        if spec.kernel < 1 or spec.stride < 1 or spec.padding < 0:
            raise ConfigError(f"layer {i}: conv kernel/stride must be >=1, padding >=0")
        if spec.in_channels < 1 or spec.out_channels < 1:
            raise ConfigError(f"layer {i}: conv channel counts must be >=1")
    elif isinstance(spec, DenseSpec):
        if spec.in_features < 1 or spec.out_features < 1:
            raise ConfigError(f"layer {i}: dense feature counts must be >=1")
    elif isinstance(spec, MaxPool2dSpec):
        if spec.kernel < 1:
            raise ConfigError(f"layer {i}: pool kernel must be >=1")
    elif not isinstance(spec, (ReLUSpec, FlattenSpec)):
        raise ConfigError(f"layer {i}: unknown layer spec {spec!r}")


# ---------------------------------------------------------------------------
# Layers
# ---------------------------------------------------------------------------


class _Layer:
    spec: LayerSpec
    params: list  # np.ndarray refs, possibly empty
    param_names: list

    def forward(self, x):
        raise NotImplementedError

    def backward(self, gy):
        raise NotImplementedError


class Conv2d(_Layer):
    def __init__(self, spec: Conv2dSpec, rng, dtype):
        self.spec = spec
        k, ci, co = spec.kernel, spec.in_channels, spec.out_channels
        fan_in = ci * k * k
        w = rng.standard_normal((co, ci, k, k)) * np.sqrt(2.0 / fan_in)
        self.w = w.astype(dtype)
        self.b = np.zeros(co, dtype=dtype)
        self.params = [self.w, self.b]
        self.param_names = ["w", "b"]
        self.grads = [None, None]
        self._cache = None

    def forward(self, x):
        s = self.spec
        n, c, h, w = x.shape
        p, st, k = s.padding, s.stride, s.kernel
        ho = (h + 2 * p - k) // st + 1
        wo = (w + 2 * p - k) // st + 1
        if ho < 1 or wo < 1:
            raise ConfigError(f"conv output would be empty for input {x.shape}")
        xp = np.pad(x, ((0, 0), (0, 0), (p, p), (p, p))) if p else x
        out = np.zeros((n, s.out_channels, ho, wo), dtype=x.dtype)
        for ki in range(k):
            for kj in range(k):
                patch = xp[:, :, ki : ki + st * ho : st, kj : kj + st * wo : st]
                out += np.einsum("ncij,oc->noij", patch, self.w[:, :, ki, kj])
        out += self.b[None, :, None, None]
        self._cache = (xp, x.shape, ho, wo)
        return out

    def backward(self, gy):
        s = self.spec
        xp, xshape, ho, wo = self._cache
        p, st, k = s.padding, s.stride, s.kernel
        gw = np.zeros_like(self.w)
        gxp = np.zeros_like(xp)
        for ki in range(k):
            for kj in range(k):
                patch = xp[:, :, ki : ki + st * ho : st, kj : kj + st * wo : st]
                gw[:, :, ki, kj] = np.einsum("noij,ncij->oc", gy, patch)
                gxp[:, :, ki : ki + st * ho : st, kj : kj + st * wo : st] += np.einsum(
                    "noij,oc->ncij", gy, self.w[:, :, ki, kj]
                )
        gb = gy.sum(axis=(0, 2, 3))
        _, _, h, w = xshape
        gx = gxp[:, :, p : p + h, p : p + w] if p else gxp
        self.grads = [gw, gb]
        return gx


class Dense(_Layer):
    def __init__(self, spec: DenseSpec, rng, dtype):
        self.spec = spec
        w = rng.standard_normal((spec.out_features, spec.in_features)) * np.sqrt(
            2.0 / spec.in_features
        )
        self.w = w.astype(dtype)
        self.b = np.zeros(spec.out_features, dtype=dtype)
        self.params = [self.w, self.b]
        self.param_names = ["w", "b"]
        self.grads = [None, None]
        self._x = None

    def forward(self, x):
        self._x = x
        return x @ self.w.T + self.b

    def backward(self, gy):
        self.grads = [gy.T @ self._x, gy.sum(axis=0)]
        return gy @ self.w


class ReLU(_Layer):
    def __init__(self, spec: ReLUSpec, rng, dtype):
        self.spec = spec
        self.params = []
        self.param_names = []
        self.grads = []
        self._mask = None

    def forward(self, x):
        self._mask = x > 0
        return np.where(self._mask, x, x.dtype.type(0))

    def backward(self, gy):
        return np.where(self._mask, gy, gy.dtype.type(0))


class MaxPool2d(_Layer):
    # stride == kernel, floor cropping on ragged edges
    def __init__(self, spec: MaxPool2dSpec, rng, dtype):
        self.spec = spec
        self.params = []
        self.param_names = []
        self.grads = []
        self._cache = None

    def forward(self, x):
        k = self.spec.kernel
        n, c, h, w = x.shape
        ho, wo = h // k, w // k
        if ho < 1 or wo < 1:
            raise ConfigError(f"pool output would be empty for input {x.shape}")
        win = (
            x[:, :, : ho * k, : wo * k]
            .reshape(n, c, ho, k, wo, k)
            .transpose(0, 1, 2, 4, 3, 5)
            .reshape(n, c, ho, wo, k * k)
        )
        idx = np.argmax(win, axis=-1)  # first max wins on ties
        out = np.take_along_axis(win, idx[..., None], axis=-1)[..., 0]
        self._cache = (x.shape, idx)
        return out

    def backward(self, gy):
        k = self.spec.kernel
        xshape, idx = self._cache
        n, c, h, w = xshape
        ho, wo = h // k, w // k
        gwin = np.zeros((n, c, ho, wo, k * k), dtype=gy.dtype)
        np.put_along_axis(gwin, idx[..., None], gy[..., None], axis=-1)
        gx = np.zeros(xshape, dtype=gy.dtype)
        gx[:, :, : ho * k, : wo * k] = (
            gwin.reshape(n, c, ho, wo, k, k)
            .transpose(0, 1, 2, 4, 3, 5)
            .reshape(n, c, ho * k, wo * k)
        )
        return gx


class Flatten(_Layer):
    def __init__(self, spec: FlattenSpec, rng, dtype):
        self.spec = spec
        self.params = []
        self.param_names = []
        self.grads = []
        self._shape = None

    def forward(self, x):
        self._shape = x.shape
        return x.reshape(x.shape[0], -1)

    def backward(self, gy):
        return gy.reshape(self._shape)


_LAYER_CLASSES = {
    Conv2dSpec: Conv2d,
    DenseSpec: Dense,
    ReLUSpec: ReLU,
    MaxPool2dSpec: MaxPool2d,
    FlattenSpec: Flatten,
}


def _propagate_shape(i, spec, shape):
    """Output shape of one layer; raises ConfigError on inconsistency."""
    if isinstance(spec, Conv2dSpec):
        if len(shape) != 3 or shape[0] != spec.in_channels:
            raise ConfigError(
                f"layer {i} (Conv2d): expected input channels {spec.in_channels}, got shape {shape}"
            )
        c, h, w = shape
        ho = (h + 2 * spec.padding - spec.kernel) // spec.stride + 1
        wo = (w + 2 * spec.padding - spec.kernel) // spec.stride + 1
        if ho < 1 or wo < 1:
            raise ConfigError(f"layer {i} (Conv2d): empty output from input shape {shape}")
        return (spec.out_channels, ho, wo)
    if isinstance(spec, MaxPool2dSpec):
        if len(shape) != 3:
            raise ConfigError(f"layer {i} (MaxPool2d): needs [C,H,W] input, got {shape}")
        c, h, w = shape
        ho, wo = h // spec.kernel, w // spec.kernel
        if ho < 1 or wo < 1:
            raise ConfigError(f"layer {i} (MaxPool2d): empty output from input shape {shape}")
        return (c, ho, wo)
    if isinstance(spec, FlattenSpec):
        return (int(np.prod(shape)),)
    if isinstance(spec, DenseSpec):
        if len(shape) != 1 or shape[0] != spec.in_features:
            raise ConfigError(
                f"layer {i} (Dense): expected {spec.in_features} input features, got shape {shape}"
            )
        return (spec.out_features,)
    return shape  # ReLU


class Model:
    """Ordered layer stack; shape-checked at build time.

    input_shape is (channels, height, width). All parameters are
    initialized from substream(seed, 'init', layer_index).
    """

    def __init__(self, specs, input_shape, seed=0, dtype=np.float32):
        if not specs:
            raise ConfigError("model needs at least one layer")
        self.specs = list(specs)
        self.input_shape = tuple(int(d) for d in input_shape)
        self.seed = int(seed)
        self.dtype = np.dtype(dtype)
        shape = self.input_shape
        self.layers = []
        for i, spec in enumerate(self.specs):
            _validate_spec(i, spec)
            shape = _propagate_shape(i, spec, shape)
            cls = _LAYER_CLASSES[type(spec)]
            self.layers.append(cls(spec, substream(self.seed, "init", i), self.dtype))
        if len(shape) != 1:
            raise ConfigError(f"model must end with a flat logit vector, got shape {shape}")
        self.output_shape = shape

    @property
    def num_classes(self):
        return self.output_shape[0]

    def parameters(self):
        out = []
        for i, layer in enumerate(self.layers):
            for name, p in zip(layer.param_names, layer.params):
                out.append((f"layer{i}.{name}", p))
        return out

    def gradients(self):
        out = []
        for layer in self.layers:
            out.extend(layer.grads)
        return out

    def set_parameters(self, arrays):
        flat = [p for _, p in self.parameters()]
        if len(arrays) != len(flat):
            raise ConfigError(f"expected {len(flat)} parameter tensors, got {len(arrays)}")
        idx = 0
        for layer in self.layers:
            for j in range(len(layer.params)):
                a = np.asarray(arrays[idx], dtype=self.dtype)
                if a.shape != layer.params[j].shape:
                    raise CheckpointError(
                        f"parameter shape mismatch: expected {layer.params[j].shape}, got {a.shape}"
                    )
                layer.params[j][...] = a
                idx += 1
        self._rebind()

    def _rebind(self):
        for layer in self.layers:
            if isinstance(layer, (Conv2d, Dense)):
                layer.w, layer.b = layer.params

    def forward(self, x):
        x = np.asarray(x, dtype=self.dtype)
        if x.ndim != 4 or x.shape[1:] != self.input_shape:
            raise ConfigError(
                f"input shape {x.shape} does not match model input [batch, {self.input_shape}]"
            )
        for layer in self.layers:
            x = layer.forward(x)
        return x

    def backward(self, glogits):
        g = np.asarray(glogits, dtype=self.dtype)
        for layer in reversed(self.layers):
            g = layer.backward(g)
        return g


# ---------------------------------------------------------------------------
# Losses
# ---------------------------------------------------------------------------

SOFTMAX_CE = "softmax_ce"
BCE_LOGITS = "bce_logits"
LOSS_KINDS = (SOFTMAX_CE, BCE_LOGITS)


def softmax_cross_entropy(logits, class_idx):
    """Mean cross-entropy over the batch; grad w.r.t. logits."""
    logits = np.asarray(logits)
    n, k = logits.shape
    if n < 1:
        raise UsageError("empty batch")
    idx = np.asarray(class_idx, dtype=np.int64)
    if idx.min() < 0 or idx.max() >= k:
        raise DataError(f"class index out of range [0,{k})")
    m = logits.max(axis=1, keepdims=True)
    z = logits - m
    lse = np.log(np.exp(z).sum(axis=1)) + m[:, 0]
    loss = float(np.mean(lse - logits[np.arange(n), idx]))
    p = np.exp(logits - lse[:, None])
    p[np.arange(n), idx] -= 1.0
    return loss, (p / n).astype(logits.dtype)


def bce_with_logits(logits, onehot):
    """Mean over batch*classes of binary cross-entropy on raw logits."""
    logits = np.asarray(logits)
    n, k = logits.shape
    if n < 1:
        raise UsageError("empty batch")
    t = np.asarray(onehot, dtype=logits.dtype)
    if t.shape != logits.shape:
        raise DataError(f"targets shape {t.shape} does not match logits {logits.shape}")
    per = np.maximum(logits, 0) - logits * t + np.log1p(np.exp(-np.abs(logits)))
    loss = float(per.mean())
    e = np.exp(-np.abs(logits))
    sig = np.where(logits >= 0, 1.0 / (1.0 + e), e / (1.0 + e))
    return loss, ((sig - t) / (n * k)).astype(logits.dtype)


def loss_forward_backward(kind, logits, targets):
    if kind == SOFTMAX_CE:
        return softmax_cross_entropy(logits, targets)
    if kind == BCE_LOGITS:
        return bce_with_logits(logits, targets)
    raise ConfigError(f"unknown loss kind {kind!r}")


def targets_for(kind, class_idx, num_classes, dtype=np.float64):
    """Class indices as-is for softmax CE; one-hot rows for BCE."""
    idx = np.asarray(class_idx, dtype=np.int64)
    if kind == SOFTMAX_CE:
        return idx
    out = np.zeros((idx.shape[0], num_classes), dtype=dtype)
    out[np.arange(idx.shape[0]), idx] = 1.0
    return out


def predict_batch(model, inputs):
    """Logits plus argmax class per row; ties go to the lowest index."""
    logits = model.forward(inputs)
    return logits, np.argmax(logits, axis=1)


# ---------------------------------------------------------------------------
# Optimizers
# ---------------------------------------------------------------------------


class SGD:
    kind = "sgd"

    def __init__(self, lr, momentum=0.0):
        if lr <= 0:
            raise ConfigError("learning_rate must be > 0")
        if momentum < 0:
            raise ConfigError("momentum must be >= 0")
        self.lr = float(lr)
        self.momentum = float(momentum)
        self.t = 0
        self.state = None  # [velocity] per parameter

    def _init_state(self, params):
        self.state = [np.zeros_like(p) for p in params]

    def step(self, params, grads):
        if self.state is None:
            self._init_state(params)
        for g in grads:
            if not np.all(np.isfinite(g)):
                raise NumericError("non-finite gradient; step aborted")
        self.t += 1
        for p, g, v in zip(params, grads, self.state):
            if self.momentum != 0.0:
                v *= self.momentum
                v += g
                p -= self.lr * v
            else:
                p -= self.lr * g


class Adam:
    kind = "adam"

    def __init__(self, lr, beta1=0.9, beta2=0.999, epsilon=1e-8):
        if lr <= 0:
            raise ConfigError("learning_rate must be > 0")
        if not (0 <= beta1 < 1 and 0 <= beta2 < 1):
            raise ConfigError("betas must be in [0,1)")
        if epsilon <= 0:
            raise ConfigError("epsilon must be > 0")
        self.lr = float(lr)
        self.beta1 = float(beta1)
        self.beta2 = float(beta2)
        self.epsilon = float(epsilon)
        self.t = 0
        self.state = None  # [(m, v)] per parameter

    def _init_state(self, params):
        self.state = [(np.zeros_like(p), np.zeros_like(p)) for p in params]

    def step(self, params, grads):
        if self.state is None:
            self._init_state(params)
        for g in grads:
            if not np.all(np.isfinite(g)):
                raise NumericError("non-finite gradient; step aborted")
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        c1 = 1.0 - b1 ** self.t
        c2 = 1.0 - b2 ** self.t
        for p, g, (m, v) in zip(params, grads, self.state):
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * g * g
            p -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.epsilon)


def make_optimizer(kind, lr, beta1=0.9, beta2=0.999, epsilon=1e-8, momentum=0.0):
    if kind == "adam":
        return Adam(lr, beta1, beta2, epsilon)
    if kind == "sgd":
        return SGD(lr, momentum)
    raise ConfigError(f"unknown optimizer kind {kind!r}")


# ---------------------------------------------------------------------------
# Gradient verification
# ---------------------------------------------------------------------------


def grad_check_model(model, inputs, class_idx, loss_kind, h=1e-6, tol=1e-5):
    """Central finite differences vs analytic gradients, per parameter tensor.

    The model should be built with dtype float64; returns a list of
    dicts {name, max_rel_err, passed}.
    """
    x = np.asarray(inputs, dtype=model.dtype)
    targets = targets_for(loss_kind, class_idx, model.num_classes, dtype=model.dtype)

    def loss_value():
        logits = model.forward(x)
        loss, _ = loss_forward_backward(loss_kind, logits, targets)
        return loss

    logits = model.forward(x)
    _, glogits = loss_forward_backward(loss_kind, logits, targets)
    model.backward(glogits)
    analytic = [g.copy() for g in model.gradients()]

    report = []
    for (name, p), ga in zip(model.parameters(), analytic):
        flat = p.reshape(-1)
        gflat = ga.reshape(-1)
        numeric = np.empty_like(gflat)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            lp = loss_value()
            flat[i] = orig - h
            lm = loss_value()
            flat[i] = orig
            numeric[i] = (lp - lm) / (2.0 * h)
        # tensor-level normalization keeps near-zero entries from dominating
        denom = max(np.abs(gflat).max(), np.abs(numeric).max(), 1e-12)
        max_rel = float(np.abs(gflat - numeric).max() / denom)
        report.append({"name": name, "max_rel_err": max_rel, "passed": max_rel < tol})
    return report


def grad_check_input(model, inputs, class_idx, loss_kind, h=1e-6):
    """Max relative error of the input gradient, same scheme as above."""
    x = np.asarray(inputs, dtype=model.dtype).copy()
    targets = targets_for(loss_kind, class_idx, model.num_classes, dtype=model.dtype)
    logits = model.forward(x)
    _, glogits = loss_forward_backward(loss_kind, logits, targets)
    gx = model.backward(glogits)
    flat = x.reshape(-1)
    gflat = gx.reshape(-1)
    numeric = np.empty_like(gflat)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        lp = loss_forward_backward(loss_kind, model.forward(x), targets)[0]
        flat[i] = orig - h
        lm = loss_forward_backward(loss_kind, model.forward(x), targets)[0]
        flat[i] = orig
        numeric[i] = (lp - lm) / (2.0 * h)
    denom = max(np.abs(gflat).max(), np.abs(numeric).max(), 1e-12)
    return float(np.abs(gflat - numeric).max() / denom)


# ---------------------------------------------------------------------------
# Checkpoint serialization
# ---------------------------------------------------------------------------

_MAGIC = b"SQLN"
_VERSION = 1
_KIND_IDS = {Conv2dSpec: 1, DenseSpec: 2, ReLUSpec: 3, MaxPool2dSpec: 4, FlattenSpec: 5}
_ID_KINDS = {v: k for k, v in _KIND_IDS.items()}
_OPT_IDS = {"sgd": 1, "adam": 2}
_DTYPE_CODES = {4: np.dtype("<f4"), 8: np.dtype("<f8")}


def _spec_ints(spec):
    if isinstance(spec, Conv2dSpec):
        return [spec.in_channels, spec.out_channels, spec.kernel, spec.stride, spec.padding]
    if isinstance(spec, DenseSpec):
        return [spec.in_features, spec.out_features]
    if isinstance(spec, MaxPool2dSpec):
        return [spec.kernel]
    return []


def _spec_from_ints(kind_id, vals):
    cls = _ID_KINDS[kind_id]
    return cls(*vals)


def _write_tensor(f, arr):
    a = np.ascontiguousarray(arr)
    code = a.dtype.itemsize
    if code not in _DTYPE_CODES or a.dtype.kind != "f":
        raise CheckpointError(f"unsupported tensor dtype {a.dtype}")
    f.write(struct.pack("<I", a.ndim))
    f.write(struct.pack(f"<{a.ndim}I", *a.shape))
    f.write(struct.pack("<B", code))
    f.write(a.astype(_DTYPE_CODES[code], copy=False).tobytes())


class _Reader:
    def __init__(self, data):
        self.data = data
        self.off = 0

    def take(self, n, what):
        if self.off + n > len(self.data):
            raise CheckpointError(f"truncated checkpoint: need {n} bytes for {what} at offset {self.off}")
        out = self.data[self.off : self.off + n]
        self.off += n
        return out

    def u8(self, what):
        return struct.unpack("<B", self.take(1, what))[0]

    def u32(self, what):
        return struct.unpack("<I", self.take(4, what))[0]

    def u64(self, what):
        return struct.unpack("<Q", self.take(8, what))[0]

    def f64(self, what):
        return struct.unpack("<d", self.take(8, what))[0]


def _read_tensor(r, what):
    ndim = r.u32(f"{what} rank")
    shape = struct.unpack(f"<{ndim}I", r.take(4 * ndim, f"{what} dims"))
    code = r.u8(f"{what} dtype")
    if code not in _DTYPE_CODES:
        raise CheckpointError(f"bad dtype code {code} at offset {r.off - 1}")
    dt = _DTYPE_CODES[code]
    nbytes = int(np.prod(shape)) * dt.itemsize if ndim else dt.itemsize
    count = int(np.prod(shape)) if ndim else 1
    raw = r.take(count * dt.itemsize, f"{what} payload")
    return np.frombuffer(raw, dtype=dt).reshape(shape).copy()


def checkpoint_save(model, optimizer, path):
    """Write model + optimizer state to `path` in the SQLN format."""
    with open(path, "wb") as f:
        f.write(_MAGIC)
        f.write(struct.pack("<I", _VERSION))
        f.write(struct.pack("<3I", *model.input_shape))
        f.write(struct.pack("<I", len(model.specs)))
        for spec in model.specs:
            ints = _spec_ints(spec)
            f.write(struct.pack("<BB", _KIND_IDS[type(spec)], len(ints)))
            f.write(struct.pack(f"<{len(ints)}i", *ints))
        params = [p for _, p in model.parameters()]
        f.write(struct.pack("<I", len(params)))
        for p in params:
            _write_tensor(f, p)
        if optimizer is None:
            f.write(struct.pack("<B", 0))
            f.write(struct.pack("<Q", 0))
            return
        f.write(struct.pack("<B", 1))
        f.write(struct.pack("<B", _OPT_IDS[optimizer.kind]))
        if optimizer.kind == "sgd":
            hp = [optimizer.lr, optimizer.momentum]
        else:
            hp = [optimizer.lr, optimizer.beta1, optimizer.beta2, optimizer.epsilon]
        f.write(struct.pack("<B", len(hp)))
        f.write(struct.pack(f"<{len(hp)}d", *hp))
        tensors = []
        if optimizer.state is not None:
            if optimizer.kind == "sgd":
                tensors = list(optimizer.state)
            else:
                for m, v in optimizer.state:
                    tensors.extend([m, v])
        f.write(struct.pack("<I", len(tensors)))
        for t in tensors:
            _write_tensor(f, t)
        f.write(struct.pack("<Q", optimizer.t))


def checkpoint_load(path, dtype=np.float32):
    """Read a SQLN checkpoint; returns (model, optimizer or None)."""
    with open(path, "rb") as f:
        data = f.read()
    r = _Reader(data)
    if r.take(4, "magic") != _MAGIC:
        raise CheckpointError("bad magic bytes at offset 0")
    version = r.u32("version")
    if version != _VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    input_shape = struct.unpack("<3I", r.take(12, "input shape"))
    n_layers = r.u32("layer count")
    specs = []
    for _ in range(n_layers):
        kind_id = r.u8("layer kind")
        if kind_id not in _ID_KINDS:
            raise CheckpointError(f"unknown layer kind id {kind_id} at offset {r.off - 1}")
        n_ints = r.u8("layer param count")
        vals = struct.unpack(f"<{n_ints}i", r.take(4 * n_ints, "layer params"))
        specs.append(_spec_from_ints(kind_id, list(vals)))
    model = Model(specs, input_shape, seed=0, dtype=dtype)
    n_params = r.u32("parameter count")
    expected = len(model.parameters())
    if n_params != expected:
        raise CheckpointError(f"parameter count {n_params} does not match layer table ({expected})")
    arrays = [_read_tensor(r, f"parameter {i}") for i in range(n_params)]
    model.set_parameters(arrays)
    present = r.u8("optimizer presence flag")
    optimizer = None
    if present:
        opt_id = r.u8("optimizer kind")
        n_hp = r.u8("hyperparameter count")
        hp = struct.unpack(f"<{n_hp}d", r.take(8 * n_hp, "hyperparameters"))
        n_tensors = r.u32("optimizer tensor count")
        tensors = [_read_tensor(r, f"optimizer tensor {i}") for i in range(n_tensors)]
        step = r.u64("step counter")
        if opt_id == _OPT_IDS["sgd"]:
            optimizer = SGD(hp[0], hp[1])
            if tensors:
                optimizer.state = tensors
        elif opt_id == _OPT_IDS["adam"]:
            optimizer = Adam(hp[0], hp[1], hp[2], hp[3])
            if tensors:
                optimizer.state = [(tensors[i], tensors[i + 1]) for i in range(0, len(tensors), 2)]
        else:
            raise CheckpointError(f"unknown optimizer id {opt_id}")
        optimizer.t = step
        params = [p for _, p in model.parameters()]
        per_param = 2 if opt_id == _OPT_IDS["adam"] else 1
        if len(tensors) not in (0, len(params) * per_param):
            raise CheckpointError("optimizer state tensor count mismatch")
        ref = [p for p in params for _ in range(per_param)]
        for t, p in zip(tensors, ref):
            if t.shape != p.shape:
                raise CheckpointError(
                    f"optimizer state shape {t.shape} does not mirror parameter {p.shape}"
                )
    else:
        _ = r.u64("step counter")
    return model, optimizer
