"""Trainable per-point vector field with optimizer and checkpointing.

A small dense network maps [position, sinusoidal time embedding, scan
condition features] to a 3-D velocity per point, independently per point.
Parameters live in one flat float64 vector; gradients are hand-derived
and exercised against finite differences in the tests, so the package
needs no autodiff framework. Includes Adam, an EMA shadow of the weights
for inference, and a deterministic binary checkpoint format.
"""
from __future__ import annotations

import dataclasses
import json
import struct
from dataclasses import dataclass

import numpy as np

from .coupling import FlowSample
from .geometry import as_cloud, nearest_neighbor_map
from .objective import LossReport, LossWeights, total_loss_grad

# Positions and offsets are in meters; squash them to O(1) features so the
# saturating activations keep useful slope over desk-scale coordinates.
COORD_SCALE = 0.2

# Geometric frequency sweep of the time embedding.
TIME_FREQ_MIN = 1.0
TIME_FREQ_MAX = 100.0

CHECKPOINT_MAGIC = b"FLOWCKPT"
CHECKPOINT_VERSION = 1

_ACTIVATIONS = ("tanh", "relu")
_COND_MODES = ("nearest-offset", "none")


@dataclass(frozen=True)
class FieldConfig:
    """Architecture and initialization of the field network."""
    hidden_widths: tuple = (64, 64)
    time_embed_dim: int = 8
    cond_feature_mode: str = "nearest-offset"
    activation: str = "tanh"
    seed: int = 0
    # Zero output weights make the untrained field identically zero, so
    # inference from a fresh model is the identity flow. Gradient-check
    # fixtures disable this to get signal into the hidden layers.
    zero_init_output: bool = True

    def __post_init__(self):
        object.__setattr__(self, "hidden_widths", tuple(int(w) for w in self.hidden_widths))
        if not self.hidden_widths or any(w < 1 for w in self.hidden_widths):
            raise ValueError("hidden widths must be positive")
        if self.time_embed_dim % 2 != 0 or self.time_embed_dim < 2:
            raise ValueError("time embedding dimension must be even and >= 2")
        if self.cond_feature_mode not in _COND_MODES:
            raise ValueError(f"unknown condition feature mode {self.cond_feature_mode!r}")
        if self.activation not in _ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}")

    @property
    def input_dim(self) -> int:
        cond = 5 if self.cond_feature_mode == "nearest-offset" else 0
        return 3 + self.time_embed_dim + cond

    @property
    def layer_dims(self) -> tuple:
        return (self.input_dim, *self.hidden_widths, 3)


@dataclass
class ModelState:
    """Flat trainable weights, their EMA shadow, and the step counter."""
    config: FieldConfig
    weights: np.ndarray
    ema_weights: np.ndarray
    step_count: int = 0


@dataclass
class OptimizerState:
    """Adam moment accumulators and hyperparameters."""
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    m: np.ndarray = None
    v: np.ndarray = None


def _layer_shapes(config: FieldConfig):
    dims = config.layer_dims
    return [(dims[i], dims[i + 1]) for i in range(len(dims) - 1)]


def parameter_count(config: FieldConfig) -> int:
    return sum(d_in * d_out + d_out for d_in, d_out in _layer_shapes(config))


def _unpack(flat: np.ndarray, config: FieldConfig):
    """Views of the flat vector as per-layer (W, b) pairs; no copies."""
    layers = []
    offset = 0
    for d_in, d_out in _layer_shapes(config):
        w = flat[offset:offset + d_in * d_out].reshape(d_in, d_out)
        offset += d_in * d_out
        b = flat[offset:offset + d_out]
        offset += d_out
        layers.append((w, b))
    return layers


def init_model(config: FieldConfig) -> ModelState:
    """Seeded initialization; hidden layers ~ N(0, 1/fan_in), zero biases."""
    rng = np.random.default_rng(config.seed)
    flat = np.zeros(parameter_count(config), dtype=np.float64)
    layers = _unpack(flat, config)
    for i, (w, b) in enumerate(layers):
        last = i == len(layers) - 1
        if last and config.zero_init_output:
            continue
        w[...] = rng.normal(scale=1.0 / np.sqrt(w.shape[0]), size=w.shape)
    return ModelState(config=config, weights=flat, ema_weights=flat.copy(), step_count=0)


def init_optimizer(state: ModelState, learning_rate: float = 1e-3,
                   beta1: float = 0.9, beta2: float = 0.999,
                   eps: float = 1e-8) -> OptimizerState:
    zeros = np.zeros_like(state.weights)
    return OptimizerState(learning_rate, beta1, beta2, eps, zeros, zeros.copy())


def time_embedding(t: float, dim: int) -> np.ndarray:
    """Sinusoidal features [sin(w_j t), cos(w_j t)] over dim/2 frequencies.

    Frequencies sweep geometrically from TIME_FREQ_MIN to TIME_FREQ_MAX.
    """
    if dim % 2 != 0 or dim < 2:
        raise ValueError("time embedding dimension must be even and >= 2")
    t = float(t)
    if not 0.0 <= t <= 1.0:
        raise ValueError(f"time must be in [0, 1], got {t}")
    half = dim // 2
    if half == 1:
        freqs = np.array([TIME_FREQ_MIN])
    else:
        ratio = TIME_FREQ_MAX / TIME_FREQ_MIN
        freqs = TIME_FREQ_MIN * ratio ** (np.arange(half) / (half - 1))
    angles = freqs * t
    return np.concatenate([np.sin(angles), np.cos(angles)])


def condition_features(x, condition) -> np.ndarray:
    """Features for a single query point: (offset to NN in scan, range, flag).

    With a scan present: the vector to the point's nearest scan neighbor,
    its length, and flag 1. Null condition: all zeros with flag 0.
    """
    return condition_feature_matrix(np.asarray(x, dtype=np.float64).reshape(1, 3),
                                    condition)[0]


def condition_feature_matrix(points: np.ndarray, condition) -> np.ndarray:
    """Per-point condition features (n, 5); see condition_features."""
    n = len(points)
    if condition is None:
        return np.zeros((n, 5))
    scan = as_cloud(condition)
    nearest = scan[nearest_neighbor_map(points, scan)]
    offset = nearest - points
    dist = np.linalg.norm(offset, axis=1, keepdims=True)
    return np.concatenate([offset, dist, np.ones((n, 1))], axis=1)


def _input_features(config: FieldConfig, t: float, x_t, condition) -> np.ndarray:
    pts = as_cloud(x_t)
    emb = time_embedding(t, config.time_embed_dim)
    cols = [pts * COORD_SCALE, np.broadcast_to(emb, (len(pts), emb.size))]
    if config.cond_feature_mode == "nearest-offset":
        feats = condition_feature_matrix(pts, condition)
        # metric columns share the coordinate squashing; the flag does not
        feats = np.concatenate([feats[:, :4] * COORD_SCALE, feats[:, 4:]], axis=1)
        cols.append(feats)
    return np.concatenate(cols, axis=1)


def _activate(name: str, z: np.ndarray) -> np.ndarray:
    if name == "tanh":
        return np.tanh(z)
    return np.maximum(z, 0.0)


def _activation_slope(name: str, z: np.ndarray, a: np.ndarray) -> np.ndarray:
    if name == "tanh":
        return 1.0 - a ** 2
    return (z > 0.0).astype(np.float64)


def _forward_cached(flat: np.ndarray, config: FieldConfig, feats: np.ndarray):
    layers = _unpack(flat, config)
    pre, post = [], [feats]
    h = feats
    # finiteness is checked on the output; silence numpy's own warnings
    with np.errstate(over="ignore", invalid="ignore"):
        for w, b in layers[:-1]:
            z = h @ w + b
            h = _activate(config.activation, z)
            pre.append(z)
            post.append(h)
        w_out, b_out = layers[-1]
        out = h @ w_out + b_out
    if not np.all(np.isfinite(out)):
        raise FloatingPointError("numeric overflow in field")
    return out, (pre, post)


def forward(state: ModelState, t: float, x_t, condition, use_ema: bool = False) -> np.ndarray:
    """Per-point velocity prediction u(t, x_t, condition), shape (n, 3)."""
    feats = _input_features(state.config, t, x_t, condition)
    flat = state.ema_weights if use_ema else state.weights
    out, _ = _forward_cached(flat, state.config, feats)
    return out


def _backward(flat: np.ndarray, config: FieldConfig, caches, d_out: np.ndarray) -> np.ndarray:
    """Gradient of sum(output * d_out) wrt the flat parameters."""
    pre, post = caches
    layers = _unpack(flat, config)
    grad = np.zeros_like(flat)
    grad_layers = _unpack(grad, config)
    delta = d_out
    for i in range(len(layers) - 1, -1, -1):
        gw, gb = grad_layers[i]
        gw[...] = post[i].T @ delta
        gb[...] = delta.sum(axis=0)
        if i > 0:
            w, _ = layers[i]
            delta = (delta @ w.T) * _activation_slope(
                config.activation, pre[i - 1], post[i]
            )
    return grad


def loss_and_grad(state: ModelState, sample: FlowSample, weights: LossWeights,
                  reduction: str = "mean"):
    """Blended loss on one sample plus its gradient wrt all parameters."""
    feats = _input_features(state.config, sample.t, sample.x_t, sample.condition)
    u_pred, caches = _forward_cached(state.weights, state.config, feats)
    report, d_u = total_loss_grad(sample, u_pred, weights, reduction)
    grad = _backward(state.weights, state.config, caches, d_u)
    return report, grad


def apply_gradient(state: ModelState, opt: OptimizerState, grad: np.ndarray):
    """One Adam step. Returns updated model and optimizer states.

    Raises on a non-finite gradient, leaving both states untouched.
    """
    if not np.all(np.isfinite(grad)):
        raise FloatingPointError("non-finite gradient")
    step = state.step_count + 1
    m = opt.beta1 * opt.m + (1.0 - opt.beta1) * grad
    v = opt.beta2 * opt.v + (1.0 - opt.beta2) * grad ** 2
    m_hat = m / (1.0 - opt.beta1 ** step)
    v_hat = v / (1.0 - opt.beta2 ** step)
    new_weights = state.weights - opt.learning_rate * m_hat / (np.sqrt(v_hat) + opt.eps)
    new_state = dataclasses.replace(state, weights=new_weights, step_count=step)
    new_opt = dataclasses.replace(opt, m=m, v=v)
    return new_state, new_opt


def train_step(state: ModelState, opt: OptimizerState, sample: FlowSample,
               weights: LossWeights, reduction: str = "mean"):
    """loss_and_grad followed by apply_gradient; returns states + report."""
    report, grad = loss_and_grad(state, sample, weights, reduction)
    new_state, new_opt = apply_gradient(state, opt, grad)
    return new_state, new_opt, report


def train_batch(state: ModelState, opt: OptimizerState, samples,
                weights: LossWeights, reduction: str = "mean"):
    """Averaged loss and gradient over a list of samples, one Adam step."""
    if not samples:
        raise ValueError("empty batch")
    total_grad = np.zeros_like(state.weights)
    reports = []
    for sample in samples:
        report, grad = loss_and_grad(state, sample, weights, reduction)
        total_grad += grad
        reports.append(report)
    total_grad /= len(samples)
    new_state, new_opt = apply_gradient(state, opt, total_grad)
    mean = LossReport(
        flow=float(np.mean([r.flow for r in reports])),
        chamfer=float(np.mean([r.chamfer for r in reports])),
        total=float(np.mean([r.total for r in reports])),
    )
    return new_state, new_opt, mean


def ema_update(state: ModelState, decay: float = 0.9999) -> ModelState:
    """Shadow update ema <- decay * ema + (1 - decay) * weights."""
    if not 0.0 <= decay <= 1.0:
        raise ValueError("decay must be in [0, 1]")
    ema = decay * state.ema_weights + (1.0 - decay) * state.weights
    return dataclasses.replace(state, ema_weights=ema)


def _config_to_dict(config: FieldConfig) -> dict:
    out = dataclasses.asdict(config)
    out["hidden_widths"] = list(config.hidden_widths)
    return out


def save_checkpoint(path, state: ModelState, opt: OptimizerState) -> None:
    """Write a deterministic binary checkpoint (same inputs, same bytes).

    Layout: magic, version, length-prefixed JSON header, then the raw
    little-endian float64 arrays named in the header, in order.
    """
    arrays = [
        ("weights", state.weights),
        ("ema_weights", state.ema_weights),
        ("adam_m", opt.m),
        ("adam_v", opt.v),
    ]
    header = {
        "version": CHECKPOINT_VERSION,
        "config": _config_to_dict(state.config),
        "step_count": state.step_count,
        "optimizer": {
            "learning_rate": opt.learning_rate,
            "beta1": opt.beta1,
            "beta2": opt.beta2,
            "eps": opt.eps,
        },
        "arrays": [[name, int(arr.size)] for name, arr in arrays],
    }
    blob = json.dumps(header, sort_keys=True, separators=(",", ":")).encode()
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<IQ", CHECKPOINT_VERSION, len(blob)))
        fh.write(blob)
        for _, arr in arrays:
            fh.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())


def load_checkpoint(path):
    """Read a checkpoint; returns (ModelState, OptimizerState).

    Weight and moment arrays round-trip bit-exactly.
    """
    with open(path, "rb") as fh:
        magic = fh.read(len(CHECKPOINT_MAGIC))
        if magic != CHECKPOINT_MAGIC:
            raise ValueError(f"not a checkpoint file: bad magic {magic!r}")
        version, header_len = struct.unpack("<IQ", fh.read(12))
        if version != CHECKPOINT_VERSION:
            raise ValueError(f"unsupported checkpoint version {version}")
        header = json.loads(fh.read(header_len).decode())
        data = {}
        for name, size in header["arrays"]:
            raw = fh.read(size * 8)
            if len(raw) != size * 8:
                raise ValueError(f"truncated checkpoint: array {name!r}")
            data[name] = np.frombuffer(raw, dtype="<f8").astype(np.float64)
    cfg_dict = dict(header["config"])
    cfg_dict["hidden_widths"] = tuple(cfg_dict["hidden_widths"])
    config = FieldConfig(**cfg_dict)
    state = ModelState(
        config=config,
        weights=data["weights"],
        ema_weights=data["ema_weights"],
        step_count=int(header["step_count"]),
    )
    opt = OptimizerState(
        learning_rate=float(header["optimizer"]["learning_rate"]),
        beta1=float(header["optimizer"]["beta1"]),
        beta2=float(header["optimizer"]["beta2"]),
        eps=float(header["optimizer"]["eps"]),
        m=data["adam_m"],
        v=data["adam_v"],
    )
    return state, opt
