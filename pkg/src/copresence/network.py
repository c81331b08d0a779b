"""Dense neural network with explicit backpropagation.

Everything is plain numpy: forward pass with inverted dropout, softmax
cross-entropy, exact parameter gradients, gradients of the summed
log-output with respect to the inputs, and a second reverse sweep that
differentiates an input-gradient penalty with respect to the parameters
(needed when training has to discourage reliance on chosen features).

The architecture is a fixed stack of affine layers: leaky-ReLU hidden
layers with dropout after each activation and a softmax output layer.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

ACT_LEAKY_RELU = "leaky_relu"
ACT_IDENTITY = "identity"
ACT_SOFTMAX = "softmax"

_LOG_FLOOR = 1e-12
MODEL_FORMAT_VERSION = 1


class NumericError(ArithmeticError):
    """Raised when training produces a non-finite loss."""


class ModelFormatError(ValueError):
    """Raised for unreadable or corrupt serialized models."""


@dataclass
class Layer:
    weights: np.ndarray        # (fan_in, fan_out)
    bias: np.ndarray           # (fan_out,)
    activation: str = ACT_LEAKY_RELU
    leaky_slope: float = 0.01
    dropout: float = 0.0
    trainable: bool = True

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=float)
        self.bias = np.asarray(self.bias, dtype=float)
        if self.weights.ndim != 2 or self.bias.shape != (self.weights.shape[1],):
            raise ValueError("inconsistent layer shapes")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError("dropout must be in [0, 1)")

    @property
    def fan_in(self) -> int:
        return self.weights.shape[0]

    @property
    def fan_out(self) -> int:
        return self.weights.shape[1]


@dataclass
class MlpModel:
    layers: list[Layer]

    def __post_init__(self):
        if not self.layers:
            raise ValueError("model needs at least one layer")
        for prev, nxt in zip(self.layers, self.layers[1:]):
            if prev.fan_out != nxt.fan_in:
                raise ValueError("layer dimension chain is inconsistent")
        for layer in self.layers[:-1]:
            if layer.activation == ACT_SOFTMAX:
                raise ValueError("softmax is only allowed on the output layer")
        if self.layers[-1].activation != ACT_SOFTMAX:
            raise ValueError("output layer must be softmax")
        if self.layers[-1].dropout != 0.0:
            raise ValueError("no dropout on the output layer")

    @property
    def input_dim(self) -> int:
        return self.layers[0].fan_in

    @property
    def n_classes(self) -> int:
        return self.layers[-1].fan_out

    def copy(self) -> "MlpModel":
        return MlpModel(layers=[
            Layer(
                weights=l.weights.copy(), bias=l.bias.copy(),
                activation=l.activation, leaky_slope=l.leaky_slope,
                dropout=l.dropout, trainable=l.trainable,
            )
            for l in self.layers
        ])


@dataclass
class TrainConfig:
    learning_rate: float = 0.001
    batch_size: int = 32
    epochs: int = 35
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    rng_seed: int = 0
    leaky_slope: float = 0.01

    def __post_init__(self):
        if self.learning_rate <= 0 or self.batch_size < 1 or self.epochs < 1:
            raise ValueError("learning_rate, batch_size and epochs must be positive")


@dataclass
class AnnotationPenalty:
    """Input-gradient penalty: lam * sum_{n,d} (mask[n,d] * g[n,d])^2.

    ``mask`` rows align with the training rows; g is the gradient of the
    summed log class-outputs with respect to the inputs.
    """

    mask: np.ndarray
    lam: float = 1000.0

    def __post_init__(self):
        self.mask = np.asarray(self.mask, dtype=float)
        if self.mask.ndim != 2:
            raise ValueError("annotation mask must be 2-D")


def build_model(
    input_dim: int,
    hidden_dims: tuple[int, ...] = (500, 300, 100, 20),
    n_classes: int = 2,
    dropout: float = 0.2,
    leaky_slope: float = 0.01,
    seed: int = 0,
) -> MlpModel:
    """Fresh model with He-uniform fan-in initialization and zero biases."""
    rng = np.random.default_rng(np.random.SeedSequence([seed, 7]))
    dims = [input_dim, *hidden_dims, n_classes]
    layers = []
    for i, (fan_in, fan_out) in enumerate(zip(dims, dims[1:])):
        limit = math.sqrt(6.0 / fan_in)
        w = rng.uniform(-limit, limit, size=(fan_in, fan_out))
        is_output = i == len(dims) - 2
        layers.append(Layer(
            weights=w, bias=np.zeros(fan_out),
            activation=ACT_SOFTMAX if is_output else ACT_LEAKY_RELU,
            leaky_slope=leaky_slope,
            dropout=0.0 if is_output else dropout,
        ))
    return MlpModel(layers=layers)


def _softmax(z: np.ndarray) -> np.ndarray:
    shifted = z - z.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=1, keepdims=True)


def _act(layer: Layer, z: np.ndarray) -> np.ndarray:
    if layer.activation == ACT_LEAKY_RELU:
        return np.where(z > 0, z, layer.leaky_slope * z)
    if layer.activation == ACT_IDENTITY:
        return z
    raise ValueError(f"unexpected hidden activation {layer.activation!r}")


def _act_grad(layer: Layer, z: np.ndarray) -> np.ndarray:
    if layer.activation == ACT_LEAKY_RELU:
        return np.where(z > 0, 1.0, layer.leaky_slope)
    if layer.activation == ACT_IDENTITY:
        return np.ones_like(z)
    raise ValueError(f"unexpected hidden activation {layer.activation!r}")


@dataclass
class ForwardCache:
    inputs: list[np.ndarray]          # input to each layer (first entry is X)
    pre_acts: list[np.ndarray]        # z per hidden layer
    masks: list[np.ndarray]           # dropout mask per hidden layer (ones at inference)
    probs: np.ndarray
    batch_rows: int = field(init=False)

    def __post_init__(self):
        self.batch_rows = self.probs.shape[0]


def forward(
    model: MlpModel,
    x: np.ndarray,
    training: bool = False,
    dropout_rng: int | np.random.Generator | None = None,
) -> tuple[np.ndarray, ForwardCache]:
    """Class probabilities for a batch, plus the cache backward needs.

    Dropout masks are drawn only when ``training`` and use the inverted
    convention (scaled by 1/keep), so inference applies no rescaling.
    """
    x = np.atleast_2d(np.asarray(x, dtype=float))
    if x.shape[1] != model.input_dim:
        raise ValueError(f"batch dim {x.shape[1]} != model input dim {model.input_dim}")
    if isinstance(dropout_rng, (int, np.integer)):
        dropout_rng = np.random.default_rng(dropout_rng)

    inputs, pre_acts, masks = [x], [], []
    a = x
    for layer in model.layers[:-1]:
        z = a @ layer.weights + layer.bias
        h = _act(layer, z)
        if training and layer.dropout > 0.0:
            if dropout_rng is None:
                raise ValueError("training forward with dropout needs dropout_rng")
            keep = 1.0 - layer.dropout
            mask = (dropout_rng.random(h.shape) < keep) / keep
        else:
            mask = np.ones_like(h)
        a = h * mask
        pre_acts.append(z)
        masks.append(mask)
        inputs.append(a)
    out = model.layers[-1]
    probs = _softmax(a @ out.weights + out.bias)
    return probs, ForwardCache(inputs=inputs, pre_acts=pre_acts, masks=masks, probs=probs)


def loss(probs: np.ndarray, labels: np.ndarray) -> float:
    """Mean cross-entropy of the true class, with a probability floor."""
    labels = np.asarray(labels, dtype=int)
    p_true = probs[np.arange(len(labels)), labels]
    return float(-np.mean(np.log(np.maximum(p_true, _LOG_FLOOR))))


def _zero_frozen(model: MlpModel, grads: list[tuple[np.ndarray, np.ndarray]]):
    for layer, (gw, gb) in zip(model.layers, grads):
        if not layer.trainable:
            gw[...] = 0.0
            gb[...] = 0.0
    return grads


def backward(
    model: MlpModel,
    cache: ForwardCache,
    labels: np.ndarray,
) -> tuple[list[tuple[np.ndarray, np.ndarray]], np.ndarray]:
    """Exact gradients from a matching forward call.

    Returns (parameter gradients of the mean cross-entropy, input
    gradients of sum_z log p_z per row). Frozen layers report exact-zero
    gradient blocks.
    """
    labels = np.asarray(labels, dtype=int)
    if len(labels) != cache.batch_rows:
        raise ValueError("labels do not match cached batch")
    b = cache.batch_rows
    probs = cache.probs

    onehot = np.zeros_like(probs)
    onehot[np.arange(b), labels] = 1.0
    dz = (probs - onehot) / b

    grads: list[tuple[np.ndarray, np.ndarray]] = [None] * len(model.layers)
    for l in range(len(model.layers) - 1, -1, -1):
        layer = model.layers[l]
        grads[l] = (cache.inputs[l].T @ dz, dz.sum(axis=0))
        if l == 0:
            break
        da = dz @ layer.weights.T
        prev = model.layers[l - 1]
        dz = da * cache.masks[l - 1] * _act_grad(prev, cache.pre_acts[l - 1])

    input_grads, _ = _logsum_input_grads(model, cache)
    return _zero_frozen(model, grads), input_grads


def _logsum_input_grads(model: MlpModel, cache: ForwardCache):
    """Gradient of s = sum_n sum_z log p_{n,z} w.r.t. the inputs.

    Also returns the per-layer pre-activation gradients of s, which the
    penalty's second reverse sweep reuses.
    """
    z_count = model.n_classes
    u = 1.0 - z_count * cache.probs                   # ds/dz at the output layer
    u_list = [None] * len(model.layers)
    u_list[-1] = u
    for l in range(len(model.layers) - 1, 0, -1):
        t = u @ model.layers[l].weights.T
        prev = model.layers[l - 1]
        u = t * cache.masks[l - 1] * _act_grad(prev, cache.pre_acts[l - 1])
        u_list[l - 1] = u
    g = u @ model.layers[0].weights.T
    return g, u_list


def input_gradients(model: MlpModel, x: np.ndarray) -> np.ndarray:
    """Clean-pass (no dropout) input gradients of sum_z log p_z."""
    _, cache = forward(model, x, training=False)
    g, _ = _logsum_input_grads(model, cache)
    return g


def penalty_value_and_grads(
    model: MlpModel,
    cache: ForwardCache,
    mask: np.ndarray,
) -> tuple[float, list[tuple[np.ndarray, np.ndarray]]]:
    """P = sum (mask*g)^2 and dP/dtheta via a second reverse sweep.

    The first sweep that produced g is itself differentiated: weight
    matrices appear both in the forward pass and in the gradient sweep,
    and the leaky-ReLU second derivative vanishes, so the only forward
    re-entry point is the softmax Jacobian at the output.
    """
    mask = np.asarray(mask, dtype=float)
    g, u_list = _logsum_input_grads(model, cache)
    if mask.shape != g.shape:
        raise ValueError(f"annotation mask shape {mask.shape} != gradients {g.shape}")
    masked = mask * g
    value = float(np.sum(masked * masked))

    n_layers = len(model.layers)
    w_bar = [np.zeros_like(l.weights) for l in model.layers]
    b_bar = [np.zeros_like(l.bias) for l in model.layers]

    g_bar = 2.0 * mask * masked
    # Through g = u_0 W_0^T.
    u_bar = g_bar @ model.layers[0].weights
    w_bar[0] += g_bar.T @ u_list[0]
    # Through u_l = t_l * mask_l * act'(z_l) and t_l = u_{l+1} W_{l+1}^T.
    for l in range(n_layers - 1):
        t_bar = u_bar * cache.masks[l] * _act_grad(model.layers[l], cache.pre_acts[l])
        u_bar = t_bar @ model.layers[l + 1].weights
        w_bar[l + 1] += t_bar.T @ u_list[l + 1]
    # Through u_out = 1 - Z p and the softmax.
    p_bar = -model.n_classes * u_bar
    probs = cache.probs
    z_bar = probs * (p_bar - np.sum(p_bar * probs, axis=1, keepdims=True))
    # Ordinary backprop of z_bar through the forward graph.
    for l in range(n_layers - 1, -1, -1):
        w_bar[l] += cache.inputs[l].T @ z_bar
        b_bar[l] += z_bar.sum(axis=0)
        if l == 0:
            break
        a_bar = z_bar @ model.layers[l].weights.T
        z_bar = a_bar * cache.masks[l - 1] * _act_grad(model.layers[l - 1], cache.pre_acts[l - 1])

    grads = _zero_frozen(model, list(zip(w_bar, b_bar)))
    return value, grads


def train(
    model: MlpModel,
    x: np.ndarray,
    y: np.ndarray,
    cfg: TrainConfig,
    penalty: AnnotationPenalty | None = None,
) -> tuple[MlpModel, list[float]]:
    """Mini-batch Adam over seeded shuffles; returns (model, loss history).

    The recorded loss per epoch is the batch-mean total objective
    (cross-entropy plus the weighted penalty when one is given).
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=int)
    if x.ndim != 2 or len(x) == 0:
        raise ValueError("training data must be a nonempty 2-D array")
    if len(y) != len(x):
        raise ValueError("labels do not match data")
    if penalty is not None and penalty.mask.shape != x.shape:
        raise ValueError("penalty mask must have the same shape as the data")
    use_penalty = penalty is not None and penalty.lam != 0.0

    rng = np.random.default_rng(np.random.SeedSequence([cfg.rng_seed, 13]))
    n = len(x)
    adam_m = [(np.zeros_like(l.weights), np.zeros_like(l.bias)) for l in model.layers]
    adam_v = [(np.zeros_like(l.weights), np.zeros_like(l.bias)) for l in model.layers]
    step = 0
    history: list[float] = []

    for epoch in range(cfg.epochs):
        perm = rng.permutation(n)
        epoch_sum, n_batches = 0.0, 0
        for start in range(0, n, cfg.batch_size):
            idx = perm[start:start + cfg.batch_size]
            probs, cache = forward(model, x[idx], training=True, dropout_rng=rng)
            batch_loss = loss(probs, y[idx])
            grads, _ = backward(model, cache, y[idx])
            if use_penalty:
                p_val, p_grads = penalty_value_and_grads(model, cache, penalty.mask[idx])
                batch_loss = batch_loss + penalty.lam * p_val
                grads = [
                    (gw + penalty.lam * pw, gb + penalty.lam * pb)
                    for (gw, gb), (pw, pb) in zip(grads, p_grads)
                ]
            if not math.isfinite(batch_loss):
                raise NumericError(f"non-finite loss at epoch {epoch}")
            step += 1
            bc1 = 1.0 - cfg.beta1 ** step
            bc2 = 1.0 - cfg.beta2 ** step
            for l, layer in enumerate(model.layers):
                if not layer.trainable:
                    continue
                for param, grad, m, v in (
                    (layer.weights, grads[l][0], adam_m[l][0], adam_v[l][0]),
                    (layer.bias, grads[l][1], adam_m[l][1], adam_v[l][1]),
                ):
                    m *= cfg.beta1
                    m += (1.0 - cfg.beta1) * grad
                    v *= cfg.beta2
                    v += (1.0 - cfg.beta2) * grad * grad
                    param -= cfg.learning_rate * (m / bc1) / (np.sqrt(v / bc2) + cfg.eps)
            epoch_sum += batch_loss
            n_batches += 1
        history.append(epoch_sum / n_batches)
    return model, history


def predict_proba(model: MlpModel, x: np.ndarray) -> np.ndarray:
    probs, _ = forward(model, x, training=False)
    return probs


def freeze_prefix(model: MlpModel, n_layers: int) -> MlpModel:
    """Mark the first ``n_layers`` weight layers non-trainable (in place)."""
    if not 0 <= n_layers <= len(model.layers):
        raise ValueError(f"cannot freeze {n_layers} of {len(model.layers)} layers")
    for layer in model.layers[:n_layers]:
        layer.trainable = False
    return model


def flops_forward(model: MlpModel, only_trainable: bool = False) -> int:
    """Forward multiply-add count, 2 FLOPs per weight."""
    return sum(
        2 * layer.fan_in * layer.fan_out
        for layer in model.layers
        if layer.trainable or not only_trainable
    )


# -- serialization -----------------------------------------------------------

def _fmt_array(a: np.ndarray) -> str:
    return ",".join(repr(float(v)) for v in np.asarray(a).ravel())


def serialize(model: MlpModel) -> str:
    lines = [f"#mlp v{MODEL_FORMAT_VERSION}", f"layers {len(model.layers)}"]
    for layer in model.layers:
        lines.append(
            f"layer in={layer.fan_in} out={layer.fan_out} act={layer.activation} "
            f"alpha={layer.leaky_slope!r} dropout={layer.dropout!r} "
            f"trainable={int(layer.trainable)}"
        )
        lines.append("W " + _fmt_array(layer.weights))
        lines.append("b " + _fmt_array(layer.bias))
    lines.append("end")
    return "\n".join(lines) + "\n"


def _parse_array(line: str, prefix: str, shape) -> np.ndarray:
    if not line.startswith(prefix + " "):
        raise ModelFormatError(f"expected {prefix!r} line, got {line[:30]!r}")
    vals = np.array([float(v) for v in line[len(prefix) + 1:].split(",")])
    if vals.size != int(np.prod(shape)):
        raise ModelFormatError("corrupt payload: wrong array length")
    return vals.reshape(shape)


def deserialize(data: str | bytes) -> MlpModel:
    if isinstance(data, bytes):
        data = data.decode("utf-8")
    lines = data.splitlines()
    if not lines or not lines[0].startswith("#mlp v"):
        raise ModelFormatError("not a model payload")
    if lines[0] != f"#mlp v{MODEL_FORMAT_VERSION}":
        raise ModelFormatError(f"unsupported model format version: {lines[0]!r}")
    try:
        if not lines[1].startswith("layers "):
            raise ModelFormatError("corrupt payload: missing layer count")
        n_layers = int(lines[1].split()[1])
        pos = 2
        layers = []
        for _ in range(n_layers):
            header = lines[pos]
            if not header.startswith("layer "):
                raise ModelFormatError("corrupt payload: missing layer header")
            meta = dict(kv.split("=", 1) for kv in header[len("layer "):].split())
            fan_in, fan_out = int(meta["in"]), int(meta["out"])
            w = _parse_array(lines[pos + 1], "W", (fan_in, fan_out))
            bias = _parse_array(lines[pos + 2], "b", (fan_out,))
            layers.append(Layer(
                weights=w, bias=bias, activation=meta["act"],
                leaky_slope=float(meta["alpha"]), dropout=float(meta["dropout"]),
                trainable=bool(int(meta["trainable"])),
            ))
            pos += 3
        if pos >= len(lines) or lines[pos] != "end":
            raise ModelFormatError("corrupt payload: missing end marker")
    except (IndexError, KeyError, ValueError) as exc:
        if isinstance(exc, ModelFormatError):
            raise
        raise ModelFormatError(f"corrupt payload: {exc}") from None
    return MlpModel(layers=layers)


def save_model(model: MlpModel, path: str | Path, pipeline_meta: dict | None = None) -> None:
    """Write the model file; optional pipeline metadata travels with it.

    Recognized metadata: preset, columns, sanitized (bool), norm_mu,
    norm_sigma (float arrays). Needed so a saved classifier can rebuild
    the exact preprocessing it was trained with.
    """
    text = serialize(model)
    if pipeline_meta:
        extra = []
        scalars = {
            k: pipeline_meta[k] for k in ("preset", "columns", "sanitized")
            if k in pipeline_meta
        }
        if scalars:
            kv = " ".join(
                f"{k}={int(v) if isinstance(v, bool) else v}" for k, v in scalars.items()
            )
            extra.append("pipeline " + kv)
        for key in ("norm_mu", "norm_sigma"):
            if pipeline_meta.get(key) is not None:
                extra.append(f"{key} " + _fmt_array(np.asarray(pipeline_meta[key])))
        text += "\n".join(extra) + ("\n" if extra else "")
    Path(path).write_text(text)


def load_model(path: str | Path) -> tuple[MlpModel, dict]:
    text = Path(path).read_text()
    model = deserialize(text)
    meta: dict = {}
    after_end = text.split("\nend\n", 1)
    if len(after_end) == 2:
        for line in after_end[1].splitlines():
            if line.startswith("pipeline "):
                kv = dict(p.split("=", 1) for p in line[len("pipeline "):].split())
                meta.update(kv)
                if "sanitized" in meta:
                    meta["sanitized"] = bool(int(meta["sanitized"]))
            elif line.startswith("norm_mu "):
                meta["norm_mu"] = np.array([float(v) for v in line[len("norm_mu "):].split(",")])
            elif line.startswith("norm_sigma "):
                meta["norm_sigma"] = np.array([float(v) for v in line[len("norm_sigma "):].split(",")])
    return model, meta
