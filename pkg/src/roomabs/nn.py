"""From-scratch neural regressors on NumPy.

Dense / 1-D convolution / max-pool / ELU layers with hand-written reverse-mode
gradients, ADAM optimization, a training loop with dev-set model selection,
and a binary model file format (magic "ABSK").
"""

from __future__ import annotations

import io
import json
import struct
from dataclasses import dataclass, field, asdict
from typing import Optional

import numpy as np
from scipy import signal

from .core import AbsorptionLabel, N_BANDS

INPUT_DIM = 8000
MAGIC = b"ABSK"
FORMAT_VERSION = 1

HEAD_DIMS = {"alpha": 6, "inverse_alpha": 6, "alpha_and_scattering": 12}
HEAD_ACTIVATIONS = {"alpha": "sigmoid", "inverse_alpha": "relu",
                    "alpha_and_scattering": "sigmoid"}


class ShapeError(ValueError):
    pass


class CorruptModelError(ValueError):
    pass


class DivergenceError(RuntimeError):
    pass


@dataclass(frozen=True)
class LayerSpec:
    kind: str  # dense | conv1d | maxpool | elu | relu | sigmoid | flatten
    out_dim: int = 0  # dense
    filters: int = 0  # conv1d
    width: int = 0  # conv1d kernel width (odd) or pool width

    def __post_init__(self):
        if self.kind == "conv1d" and self.width % 2 == 0:
            raise ShapeError("conv1d width must be odd (same padding)")


def dense(out_dim: int) -> LayerSpec:
    return LayerSpec("dense", out_dim=out_dim)


def conv1d(filters: int, width: int) -> LayerSpec:
    return LayerSpec("conv1d", filters=filters, width=width)


def maxpool(width: int) -> LayerSpec:
    return LayerSpec("maxpool", width=width)


@dataclass(frozen=True)
class ModelSpec:
    architecture: tuple[LayerSpec, ...]  # includes the output head layers
    output_head: str
    input_dim: int = INPUT_DIM

    def __post_init__(self):
        if self.output_head not in HEAD_DIMS:
            raise ValueError(f"unknown output head {self.output_head!r}")

    def to_dict(self) -> dict:
        return {"architecture": [asdict(l) for l in self.architecture],
                "output_head": self.output_head, "input_dim": self.input_dim}

    @classmethod
    def from_dict(cls, d: dict) -> "ModelSpec":
        return cls(architecture=tuple(LayerSpec(**l) for l in d["architecture"]),
                   output_head=d["output_head"], input_dim=d["input_dim"])


def _head_layers(output_head: str) -> tuple[LayerSpec, ...]:
    return (dense(HEAD_DIMS[output_head]),
            LayerSpec(HEAD_ACTIVATIONS[output_head]))


def mlp_spec(output_head: str = "alpha", input_dim: int = INPUT_DIM) -> ModelSpec:
    """Preset: dense 128 -> elu -> dense 64 -> elu -> dense 32 -> elu -> head."""
    stack = (dense(128), LayerSpec("elu"), dense(64), LayerSpec("elu"),
             dense(32), LayerSpec("elu")) + _head_layers(output_head)
    return ModelSpec(stack, output_head, input_dim)


def cnn_spec(output_head: str = "alpha", input_dim: int = INPUT_DIM) -> ModelSpec:
    """Preset: three conv/pool/ELU stages, flatten, dense 32, ELU, head."""
    stack = (conv1d(64, 33), maxpool(4), LayerSpec("elu"),
             conv1d(32, 17), maxpool(4), LayerSpec("elu"),
             conv1d(16, 9), maxpool(4), LayerSpec("elu"),
             LayerSpec("flatten"), dense(32), LayerSpec("elu")) + _head_layers(output_head)
    return ModelSpec(stack, output_head, input_dim)


def parameter_shapes(spec: ModelSpec) -> dict[str, tuple[int, ...]]:
    """Named tensors and their shapes, tracing the activation shape through
    the stack.  Also validates the layer algebra (pool divisibility etc.)."""
    shapes: dict[str, tuple[int, ...]] = {}
    conv_mode = any(l.kind == "conv1d" for l in spec.architecture)
    # activation shape: (length, channels) in conv mode until flatten, else (dim,)
    state: tuple = (spec.input_dim, 1) if conv_mode else (spec.input_dim,)
    for i, layer in enumerate(spec.architecture):
        if layer.kind == "dense":
            if len(state) != 1:
                raise ShapeError(f"dense layer {i} needs a flat input, got {state}")
            shapes[f"l{i}.W"] = (state[0], layer.out_dim)
            shapes[f"l{i}.b"] = (layer.out_dim,)
            state = (layer.out_dim,)
        elif layer.kind == "conv1d":
            if len(state) != 2:
                raise ShapeError(f"conv1d layer {i} needs (length, channels) input")
            shapes[f"l{i}.W"] = (layer.width, state[1], layer.filters)
            shapes[f"l{i}.b"] = (layer.filters,)
            state = (state[0], layer.filters)
        elif layer.kind == "maxpool":
            if len(state) != 2 or state[0] % layer.width:
                raise ShapeError(
                    f"maxpool layer {i}: width {layer.width} must divide length {state}")
            state = (state[0] // layer.width, state[1])
        elif layer.kind == "flatten":
            if len(state) != 2:
                raise ShapeError(f"flatten layer {i} needs (length, channels) input")
            state = (state[0] * state[1],)
        elif layer.kind in ("elu", "relu", "sigmoid"):
            pass
        else:
            raise ShapeError(f"unknown layer kind {layer.kind!r}")
    return shapes


def init_params(spec: ModelSpec, seed, dtype=np.float32) -> dict[str, np.ndarray]:
    """Uniform Kaiming-style fan-in initialization; biases start at zero."""
    rng = np.random.default_rng(seed)
    params = {}
    for name, shape in parameter_shapes(spec).items():
        if name.endswith(".b"):
            params[name] = np.zeros(shape, dtype=dtype)
        else:
            fan_in = int(np.prod(shape[:2])) if len(shape) == 3 else shape[0]
            bound = np.sqrt(6.0 / fan_in)
            params[name] = rng.uniform(-bound, bound, size=shape).astype(dtype)
    return params


@dataclass
class Model:
    spec: ModelSpec
    params: dict[str, np.ndarray]
    provenance: dict = field(default_factory=dict)


def build_model(spec: ModelSpec, seed=0, dtype=np.float32) -> Model:
    return Model(spec=spec, params=init_params(spec, seed, dtype))


# ---------------------------------------------------------------------------
# layer math

_COL_BUDGET = 48_000_000  # floats per unfolded chunk (~192 MB float32)


def _unfold(xp: np.ndarray, length: int, k: int) -> np.ndarray:
    """Padded (n, length+k-1, C) -> contiguous (n * length, k * C) tap matrix."""
    n, _, c = xp.shape
    col = np.empty((n, length, k, c), dtype=xp.dtype)
    for j in range(k):
        col[:, :, j, :] = xp[:, j:j + length, :]
    return col.reshape(n * length, k * c)


def _conv1d_forward(x: np.ndarray, w: np.ndarray, b: np.ndarray) -> np.ndarray:
    """x (N, L, C), w (K, C, O) odd K, same padding -> (N, L, O).

    Multi-channel inputs go through chunked im2col + one BLAS matmul per
    chunk; the single-channel case (the network's first layer, where im2col
    blowup is worst) runs as FFT overlap-add convolution per output channel.
    """
    n, length, c = x.shape
    k, _, o = w.shape
    if c == 1:
        # correlation == convolution with the tap-reversed kernel; full mode
        # then centered slice, because "same" would also crop the broadcast
        # output-channel axis back to in1's single channel
        kern = w[::-1].transpose(1, 0, 2)  # (1, K, O)
        full = signal.oaconvolve(x, kern, mode="full", axes=1)
        pad = (k - 1) // 2
        return full[:, pad:pad + length, :] + b
    pad = (k - 1) // 2
    xp = np.pad(x, ((0, 0), (pad, pad), (0, 0)))
    w2 = w.reshape(k * c, o)
    out = np.empty((n, length, o), dtype=x.dtype)
    chunk = max(1, int(_COL_BUDGET // (length * k * c)))
    for lo in range(0, n, chunk):
        hi = min(lo + chunk, n)
        col = _unfold(xp[lo:hi], length, k)
        out[lo:hi] = (col @ w2).reshape(hi - lo, length, o)
    return out + b


def _conv1d_backward(x: np.ndarray, w: np.ndarray, gy: np.ndarray):
    """Gradients of the same-padded conv: returns (gx, gw, gb)."""
    n, length, c = x.shape
    k, _, o = w.shape
    pad = (k - 1) // 2
    gb = gy.sum(axis=(0, 1))

    if c == 1:
        # gx: per-output-channel correlation of gy with the reversed taps,
        # i.e. plain convolution with w, summed over output channels
        kern = w.transpose(1, 0, 2)  # (1, K, O)
        gx = signal.oaconvolve(gy, kern, mode="same", axes=1).sum(
            axis=2, keepdims=True).astype(x.dtype, copy=False)
        # gw via sliding windows of the single input channel
        xp2 = np.pad(x[:, :, 0], ((0, 0), (pad, pad)))
        win = np.lib.stride_tricks.sliding_window_view(xp2, k, axis=1)
        gw = np.tensordot(win, gy, axes=([0, 1], [0, 1]))[:, None, :]
        return gx, gw.astype(w.dtype, copy=False), gb

    xp = np.pad(x, ((0, 0), (pad, pad), (0, 0)))
    gyp = np.pad(gy, ((0, 0), (pad, pad), (0, 0)))
    # correlation weights for the input gradient: (k*o, c), tap-reversed
    wr = np.ascontiguousarray(w[::-1].transpose(0, 2, 1)).reshape(k * o, c)
    gw2 = np.zeros((k * c, o), dtype=w.dtype)
    gx = np.empty_like(x)
    chunk = max(1, int(_COL_BUDGET // (length * k * max(c, o))))
    for lo in range(0, n, chunk):
        hi = min(lo + chunk, n)
        g2 = gy[lo:hi].reshape((hi - lo) * length, o)
        gw2 += _unfold(xp[lo:hi], length, k).T @ g2
        colg = _unfold(gyp[lo:hi], length, k)
        gx[lo:hi] = (colg @ wr).reshape(hi - lo, length, c)
    return gx, gw2.reshape(k, c, o), gb


def forward(model: Model, x: np.ndarray, return_caches: bool = False):
    """Evaluate the network on a batch of input vectors (N, input_dim)."""
    x = np.asarray(x)
    if x.ndim == 1:
        x = x[None, :]
    if x.shape[1] != model.spec.input_dim:
        raise ShapeError(f"expected input dim {model.spec.input_dim}, got {x.shape[1]}")
    conv_mode = any(l.kind == "conv1d" for l in model.spec.architecture)
    a = x[:, :, None] if conv_mode else x
    caches = []
    for i, layer in enumerate(model.spec.architecture):
        if layer.kind == "dense":
            w, b = model.params[f"l{i}.W"], model.params[f"l{i}.b"]
            if a.ndim != 2 or a.shape[1] != w.shape[0]:
                raise ShapeError(f"dense layer {i}: input {a.shape} vs weights {w.shape}")
            caches.append(a)
            a = a @ w + b
        elif layer.kind == "conv1d":
            w, b = model.params[f"l{i}.W"], model.params[f"l{i}.b"]
            if a.ndim != 3 or a.shape[2] != w.shape[1]:
                raise ShapeError(f"conv layer {i}: input {a.shape} vs weights {w.shape}")
            caches.append(a)
            a = _conv1d_forward(a, w, b)
        elif layer.kind == "maxpool":
            n, length, c = a.shape
            if length % layer.width:
                raise ShapeError(f"maxpool layer {i}: {layer.width} does not divide {length}")
            r = a.reshape(n, length // layer.width, layer.width, c)
            idx = r.argmax(axis=2)
            caches.append((idx, a.shape))
            a = np.take_along_axis(r, idx[:, :, None, :], axis=2)[:, :, 0, :]
        elif layer.kind == "elu":
            a = np.where(a > 0, a, np.expm1(np.minimum(a, 0.0)))
            caches.append(a)
        elif layer.kind == "relu":
            caches.append(a)
            a = np.maximum(a, 0.0)
        elif layer.kind == "sigmoid":
            from scipy.special import expit
            a = expit(a)
            caches.append(a)
        elif layer.kind == "flatten":
            caches.append(a.shape)
            a = a.reshape(a.shape[0], -1)
    return (a, caches) if return_caches else a


def backward(model: Model, x: np.ndarray, targets: np.ndarray
             ) -> tuple[float, dict[str, np.ndarray]]:
    """Mean-squared-error loss and its exact gradients w.r.t. every parameter."""
    targets = np.asarray(targets)
    if targets.ndim == 1:
        targets = targets[None, :]
    y, caches = forward(model, x, return_caches=True)
    if y.shape != targets.shape:
        raise ShapeError(f"outputs {y.shape} vs targets {targets.shape}")
    diff = y - targets
    loss = float(np.mean(diff * diff))
    g = (2.0 / diff.size) * diff
    grads: dict[str, np.ndarray] = {}
    for i in range(len(model.spec.architecture) - 1, -1, -1):
        layer = model.spec.architecture[i]
        cache = caches[i]
        if layer.kind == "dense":
            w = model.params[f"l{i}.W"]
            grads[f"l{i}.W"] = cache.T @ g
            grads[f"l{i}.b"] = g.sum(axis=0)
            g = g @ w.T
        elif layer.kind == "conv1d":
            w = model.params[f"l{i}.W"]
            g, gw, gb = _conv1d_backward(cache, w, g)
            grads[f"l{i}.W"] = gw
            grads[f"l{i}.b"] = gb
        elif layer.kind == "maxpool":
            idx, in_shape = cache
            n, length, c = in_shape
            gr = np.zeros((n, length // layer.width, layer.width, c), dtype=g.dtype)
            np.put_along_axis(gr, idx[:, :, None, :], g[:, :, None, :], axis=2)
            g = gr.reshape(in_shape)
        elif layer.kind == "elu":
            # elu'(x) = 1 for x > 0, elu(x) + 1 otherwise; cache holds elu(x)
            g = g * np.where(cache > 0, 1.0, cache + 1.0)
        elif layer.kind == "relu":
            g = g * (cache > 0)
        elif layer.kind == "sigmoid":
            g = g * cache * (1.0 - cache)
        elif layer.kind == "flatten":
            g = g.reshape(cache)
    return loss, grads


# ---------------------------------------------------------------------------
# optimization

@dataclass
class AdamState:
    m: dict[str, np.ndarray]
    v: dict[str, np.ndarray]

    @classmethod
    def zeros_like(cls, params: dict[str, np.ndarray]) -> "AdamState":
        return cls(m={k: np.zeros_like(p) for k, p in params.items()},
                   v={k: np.zeros_like(p) for k, p in params.items()})


def adam_step(state: AdamState, params: dict[str, np.ndarray],
              grads: dict[str, np.ndarray], t: int, learning_rate: float = 0.001,
              beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8) -> None:
    """Standard bias-corrected ADAM update, in place.  ``t`` starts at 1."""
    if t < 1:
        raise ValueError("step index starts at 1")
    c1 = 1.0 - beta1 ** t
    c2 = 1.0 - beta2 ** t
    for k, p in params.items():
        g = grads[k]
        state.m[k] = beta1 * state.m[k] + (1.0 - beta1) * g
        state.v[k] = beta2 * state.v[k] + (1.0 - beta2) * (g * g)
        p -= learning_rate * (state.m[k] / c1) / (np.sqrt(state.v[k] / c2) + eps)


@dataclass(frozen=True)
class TrainConfig:
    batch_size: int = 1000
    learning_rate: float = 0.001
    epochs: int = 400
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    seed: int = 0

    def to_dict(self) -> dict:
        return asdict(self)


def evaluate_loss(model: Model, x: np.ndarray, y: np.ndarray,
                  chunk: int = 250) -> float:
    """Full-set MSE, evaluated in fixed chunks."""
    total = 0.0
    for lo in range(0, x.shape[0], chunk):
        out = forward(model, x[lo:lo + chunk])
        d = out - y[lo:lo + chunk]
        total += float(np.sum(d * d))
    return total / (x.shape[0] * y.shape[1])


def train(model_spec: ModelSpec, train_x: np.ndarray, train_y: np.ndarray,
          dev_x: np.ndarray, dev_y: np.ndarray, config: TrainConfig,
          dataset_fingerprint: str = "", verbose: bool = False) -> Model:
    """Seeded epoch loop with per-epoch dev loss and best-parameter snapshot.

    Returns the parameters of the epoch with the lowest dev-set loss; the full
    train/dev loss curve is recorded in the model provenance.
    """
    from .dataset import batch_permutation

    if train_x.shape[0] == 0 or dev_x.shape[0] == 0:
        raise ValueError("empty dataset")
    train_x = np.ascontiguousarray(train_x, dtype=np.float32)
    train_y = np.ascontiguousarray(train_y, dtype=np.float32)
    dev_x = np.ascontiguousarray(dev_x, dtype=np.float32)
    dev_y = np.ascontiguousarray(dev_y, dtype=np.float32)

    model = build_model(model_spec, seed=config.seed)
    state = AdamState.zeros_like(model.params)
    best = {k: p.copy() for k, p in model.params.items()}
    best_dev = np.inf
    best_epoch = -1
    history = []
    t = 0
    for epoch in range(config.epochs):
        perm = batch_permutation(train_x.shape[0], config.seed, epoch)
        epoch_losses = []
        for lo in range(0, perm.size, config.batch_size):
            idx = perm[lo:lo + config.batch_size]  # last partial batch is kept
            loss, grads = backward(model, train_x[idx], train_y[idx])
            if not np.isfinite(loss):
                raise DivergenceError(f"non-finite training loss at epoch {epoch}")
            t += 1
            adam_step(state, model.params, grads, t, config.learning_rate,
                      config.beta1, config.beta2, config.eps)
            epoch_losses.append(loss)
        dev_loss = evaluate_loss(model, dev_x, dev_y)
        if not np.isfinite(dev_loss):
            raise DivergenceError(f"non-finite dev loss at epoch {epoch}")
        history.append((float(np.mean(epoch_losses)), dev_loss))
        if dev_loss < best_dev:
            best_dev = dev_loss
            best_epoch = epoch
            best = {k: p.copy() for k, p in model.params.items()}
        if verbose:
            print(f"epoch {epoch + 1}/{config.epochs} "
                  f"train {history[-1][0]:.6f} dev {dev_loss:.6f}", flush=True)
    model.params = best
    model.provenance = {
        "train_config": config.to_dict(),
        "dataset_fingerprint": dataset_fingerprint,
        "best_epoch": best_epoch,
        "dev_loss": best_dev,
        "history": history,
    }
    return model


def predict(model: Model, rir_vector: np.ndarray) -> AbsorptionLabel:
    """Absorption estimate for one preprocessed input vector.

    The inverse head stores raw reciprocal targets; for comparability the
    prediction is reported as 1/output clamped to [0, 1].
    """
    out = forward(model, np.asarray(rir_vector, dtype=np.float32))[0]
    alpha = comparable_alpha(model, out[None, :])[0]
    s_bar = tuple(out[N_BANDS:]) if model.spec.output_head == "alpha_and_scattering" else None
    return AbsorptionLabel(alpha_bar=tuple(alpha), s_bar=s_bar)


def comparable_alpha(model: Model, outputs: np.ndarray) -> np.ndarray:
    """Map raw head outputs (N, head_dim) to absorption estimates (N, 6)."""
    if model.spec.output_head == "inverse_alpha":
        with np.errstate(divide="ignore"):
            return np.clip(1.0 / np.maximum(outputs, 1e-12), 0.0, 1.0)
    return outputs[:, :N_BANDS]


# ---------------------------------------------------------------------------
# serialization

def save_model(model: Model, path) -> None:
    header = json.dumps({"spec": model.spec.to_dict(),
                         "provenance": model.provenance}).encode()
    buf = io.BytesIO()
    buf.write(MAGIC)
    buf.write(struct.pack("<II", FORMAT_VERSION, len(header)))
    buf.write(header)
    buf.write(struct.pack("<I", len(model.params)))
    for name in sorted(model.params):
        tensor = np.ascontiguousarray(model.params[name], dtype="<f4")
        nb = name.encode()
        buf.write(struct.pack("<I", len(nb)))
        buf.write(nb)
        buf.write(struct.pack("<I", tensor.ndim))
        buf.write(struct.pack(f"<{tensor.ndim}Q", *tensor.shape))
        buf.write(tensor.tobytes())
    with open(path, "wb") as f:
        f.write(buf.getvalue())


def _read(f, n: int) -> bytes:
    data = f.read(n)
    if len(data) != n:
        raise CorruptModelError(f"truncated model file at offset {f.tell()}")
    return data


def load_model(path, expected_input_dim: Optional[int] = None) -> Model:
    with open(path, "rb") as f:
        if _read(f, 4) != MAGIC:
            raise CorruptModelError("bad magic bytes (offset 0)")
        version, header_len = struct.unpack("<II", _read(f, 8))
        if version != FORMAT_VERSION:
            raise CorruptModelError(f"unsupported format version {version}")
        try:
            header = json.loads(_read(f, header_len).decode())
            spec = ModelSpec.from_dict(header["spec"])
        except (ValueError, KeyError) as exc:
            raise CorruptModelError(f"bad header: {exc}") from exc
        (n_tensors,) = struct.unpack("<I", _read(f, 4))
        params: dict[str, np.ndarray] = {}
        for _ in range(n_tensors):
            (name_len,) = struct.unpack("<I", _read(f, 4))
            name = _read(f, name_len).decode()
            (ndim,) = struct.unpack("<I", _read(f, 4))
            shape = struct.unpack(f"<{ndim}Q", _read(f, 8 * ndim))
            count = int(np.prod(shape)) if ndim else 1
            data = _read(f, 4 * count)
            params[name] = np.frombuffer(data, dtype="<f4").reshape(shape).copy()
    expected = parameter_shapes(spec)
    if set(expected) != set(params) or any(params[k].shape != expected[k] for k in expected):
        raise ShapeError("model tensors do not match the stored architecture")
    if expected_input_dim is not None and spec.input_dim != expected_input_dim:
        raise ShapeError(f"model input dim {spec.input_dim} != expected {expected_input_dim}")
    return Model(spec=spec, params=params, provenance=header.get("provenance", {}))
