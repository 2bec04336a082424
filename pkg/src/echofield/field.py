"""Coordinate MLP mapping encoded footprints to acoustic parameters.

Plain numpy implementation with explicit reverse-mode gradients and an
adaptive-moment optimizer.  The output head is (attenuation per mm,
backscatter): softplus keeps attenuation nonnegative, a logistic keeps
backscatter in [0, 1].
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass

import numpy as np

from .encoding import feature_length

__all__ = [
    "FieldConfig",
    "FieldParams",
    "ForwardCache",
    "init",
    "forward",
    "forward_raw",
    "backward",
    "optimizer_step",
    "save_checkpoint",
    "load_checkpoint",
]

N_OUTPUTS = 2  # attenuation logit, backscatter logit

ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8


class TrainingError(RuntimeError):
    """Non-finite gradients or other unrecoverable optimizer state."""


@dataclass(frozen=True)
class FieldConfig:
    num_layers: int = 4
    hidden_width: int = 64
    num_bands: int = 8
    seed: int = 0

    def __post_init__(self):
        if self.num_layers < 2:
            raise ValueError("num_layers must be >= 2")
        if self.hidden_width < 4:
            raise ValueError("hidden_width must be >= 4")
        if self.num_bands < 1:
            raise ValueError("num_bands must be >= 1")

    @property
    def input_dim(self) -> int:
        return feature_length(self.num_bands)

    def layer_shapes(self) -> list[tuple[int, int]]:
        # num_layers counts hidden layers; the linear output head is extra.
        dims = [self.input_dim] + [self.hidden_width] * self.num_layers + [N_OUTPUTS]
        return list(zip(dims[:-1], dims[1:]))

    def to_dict(self) -> dict:
        return {
            "num_layers": self.num_layers,
            "hidden_width": self.hidden_width,
            "num_bands": self.num_bands,
            "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "FieldConfig":
        return cls(**{k: d[k] for k in cls.__dataclass_fields__ if k in d})


# Full-scale preset retained alongside the CPU-friendly default.
FULL_SCALE = FieldConfig(num_layers=8, hidden_width=256, num_bands=10)


@dataclass
class FieldParams:
    """Weights/biases per layer plus Adam moment buffers and step counter."""

    config: FieldConfig
    weights: list[np.ndarray]
    biases: list[np.ndarray]
    m_w: list[np.ndarray]
    v_w: list[np.ndarray]
    m_b: list[np.ndarray]
    v_b: list[np.ndarray]
    step: int = 0

    def n_parameters(self) -> int:
        return sum(w.size for w in self.weights) + sum(b.size for b in self.biases)

    def astype(self, dtype) -> "FieldParams":
        """Cast all state to ``dtype`` (training runs float32, tests float64)."""
        cast = lambda arrs: [a.astype(dtype) for a in arrs]
        return FieldParams(
            config=self.config,
            weights=cast(self.weights),
            biases=cast(self.biases),
            m_w=cast(self.m_w),
            v_w=cast(self.v_w),
            m_b=cast(self.m_b),
            v_b=cast(self.v_b),
            step=self.step,
        )

    def copy(self) -> "FieldParams":
        return FieldParams(
            config=self.config,
            weights=[w.copy() for w in self.weights],
            biases=[b.copy() for b in self.biases],
            m_w=[m.copy() for m in self.m_w],
            v_w=[v.copy() for v in self.v_w],
            m_b=[m.copy() for m in self.m_b],
            v_b=[v.copy() for v in self.v_b],
            step=self.step,
        )


def init(config: FieldConfig) -> FieldParams:
    """Seeded initialization: uniform +-sqrt(6/(fan_in+fan_out)), zero biases."""
    rng = np.random.default_rng(config.seed)
    weights, biases = [], []
    for fan_in, fan_out in config.layer_shapes():
        bound = np.sqrt(6.0 / (fan_in + fan_out))
        weights.append(rng.uniform(-bound, bound, size=(fan_in, fan_out)))
        biases.append(np.zeros(fan_out))
    zeros = lambda arrs: [np.zeros_like(a) for a in arrs]
    return FieldParams(
        config=config,
        weights=weights,
        biases=biases,
        m_w=zeros(weights),
        v_w=zeros(weights),
        m_b=zeros(biases),
        v_b=zeros(biases),
        step=0,
    )


@dataclass
class ForwardCache:
    """Layer activations retained for the backward pass."""

    inputs: np.ndarray
    hidden: list[np.ndarray]      # post-ReLU activations per hidden layer
    logits: np.ndarray            # pre-head outputs, (n, 2)


def _softplus(x):
    # Stable: log(1 + e^x) = max(x, 0) + log1p(e^{-|x|})
    return np.maximum(x, 0.0) + np.log1p(np.exp(-np.abs(x)))


def _sigmoid(x):
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def forward_raw(params: FieldParams, features: np.ndarray, want_cache: bool = False):
    """Run the MLP to head logits; optionally keep activations for backward."""
    x = np.asarray(features)
    if not np.issubdtype(x.dtype, np.floating):
        x = x.astype(np.float64)
    squeeze = x.ndim == 1
    x = np.atleast_2d(x)
    if x.shape[1] != params.config.input_dim:
        raise ValueError(
            f"feature length {x.shape[1]} != expected {params.config.input_dim}"
        )
    hidden = []
    h = x
    n_layers = len(params.weights)
    for i in range(n_layers - 1):
        h = np.maximum(h @ params.weights[i] + params.biases[i], 0.0)
        hidden.append(h)
    logits = h @ params.weights[-1] + params.biases[-1]
    cache = ForwardCache(inputs=x, hidden=hidden, logits=logits) if want_cache else None
    if squeeze:
        logits = logits[0]
    return logits, cache


def heads(logits: np.ndarray):
    """Map head logits to (attenuation_per_mm, backscatter)."""
    alpha = _softplus(logits[..., 0])
    b = _sigmoid(logits[..., 1])
    return alpha, b


def heads_backward(logits: np.ndarray, d_alpha: np.ndarray, d_b: np.ndarray) -> np.ndarray:
    """Gradients w.r.t. head logits from gradients w.r.t. (alpha, b)."""
    sig0 = _sigmoid(logits[..., 0])        # d softplus
    b = _sigmoid(logits[..., 1])
    d_logits = np.empty_like(logits)
    d_logits[..., 0] = d_alpha * sig0
    d_logits[..., 1] = d_b * b * (1.0 - b)
    return d_logits


def forward(params: FieldParams, features: np.ndarray):
    """Evaluate acoustic parameters: (attenuation_per_mm, backscatter)."""
    logits, _ = forward_raw(params, features)
    return heads(logits)


def backward(params: FieldParams, cache: ForwardCache, d_logits: np.ndarray):
    """Reverse-mode gradients of sum(d_logits * logits) w.r.t. parameters.

    Returns (d_weights, d_biases) lists matching the parameter layout,
    accumulated over the batch.
    """
    if cache is None:
        raise ValueError("backward requires the forward cache for this batch")
    d_logits = np.atleast_2d(d_logits)
    if d_logits.shape != cache.logits.shape:
        raise ValueError("output gradient shape mismatch with cached forward")

    n_layers = len(params.weights)
    d_w = [None] * n_layers
    d_b = [None] * n_layers

    grad = d_logits
    prev = cache.hidden[-1] if cache.hidden else cache.inputs
    d_w[-1] = prev.T @ grad
    d_b[-1] = grad.sum(axis=0)
    grad = grad @ params.weights[-1].T

    for i in range(n_layers - 2, -1, -1):
        grad = grad * (cache.hidden[i] > 0)
        prev = cache.hidden[i - 1] if i > 0 else cache.inputs
        d_w[i] = prev.T @ grad
        d_b[i] = grad.sum(axis=0)
        if i > 0:
            grad = grad @ params.weights[i].T
    return d_w, d_b


def optimizer_step(params: FieldParams, gradients, lr: float) -> FieldParams:
    """One bias-corrected adaptive-moment update, in place; returns params."""
    d_w, d_b = gradients
    for i, g in enumerate(d_w):
        if not np.all(np.isfinite(g)):
            raise TrainingError(f"non-finite weight gradient in layer {i}")
    for i, g in enumerate(d_b):
        if not np.all(np.isfinite(g)):
            raise TrainingError(f"non-finite bias gradient in layer {i}")

    params.step += 1
    t = params.step
    bc1 = 1.0 - ADAM_BETA1**t
    bc2 = 1.0 - ADAM_BETA2**t
    for p, g, m, v in zip(params.weights, d_w, params.m_w, params.v_w):
        m *= ADAM_BETA1
        m += (1.0 - ADAM_BETA1) * g
        v *= ADAM_BETA2
        v += (1.0 - ADAM_BETA2) * g * g
        p -= lr * (m / bc1) / (np.sqrt(v / bc2) + ADAM_EPS)
    for p, g, m, v in zip(params.biases, d_b, params.m_b, params.v_b):
        m *= ADAM_BETA1
        m += (1.0 - ADAM_BETA1) * g
        v *= ADAM_BETA2
        v += (1.0 - ADAM_BETA2) * g * g
        p -= lr * (m / bc1) / (np.sqrt(v / bc2) + ADAM_EPS)
    return params


# ---------------------------------------------------------------------------
# Checkpoint format: JSON manifest + flat little-endian float32 blob holding
# weights then biases in layer order, then the Adam moments in the same order.


def _flatten_state(params: FieldParams) -> np.ndarray:
    parts = []
    for group in (params.weights, params.biases, params.m_w, params.m_b,
                  params.v_w, params.v_b):
        parts.extend(a.reshape(-1) for a in group)
    return np.concatenate(parts).astype("<f4")


def save_checkpoint(params: FieldParams, manifest_path, extra: dict | None = None):
    """Write manifest JSON next to a .bin blob with the same stem."""
    manifest_path = str(manifest_path)
    blob_path = os.path.splitext(manifest_path)[0] + ".bin"
    blob = _flatten_state(params)
    manifest = {
        "version": 1,
        "config": params.config.to_dict(),
        "step": params.step,
        "n_values": int(blob.size),
        "blob": os.path.basename(blob_path),
    }
    if extra:
        manifest.update(extra)
    with open(manifest_path, "w", encoding="utf-8") as f:
        json.dump(manifest, f)
    blob.tofile(blob_path)


def load_checkpoint(manifest_path) -> tuple[FieldParams, dict]:
    """Read a checkpoint; returns (params, manifest dict)."""
    manifest_path = str(manifest_path)
    with open(manifest_path, "r", encoding="utf-8") as f:
        manifest = json.load(f)
    if manifest.get("version") != 1:
        raise ValueError(f"unsupported checkpoint version {manifest.get('version')}")
    config = FieldConfig.from_dict(manifest["config"])
    blob_path = os.path.join(os.path.dirname(manifest_path), manifest["blob"])
    flat = np.fromfile(blob_path, dtype="<f4").astype(np.float64)
    if flat.size != manifest["n_values"]:
        raise ValueError(
            f"checkpoint payload size {flat.size} != manifest n_values {manifest['n_values']}"
        )
    params = init(config)
    params.step = manifest["step"]
    offset = 0
    for group in (params.weights, params.biases, params.m_w, params.m_b,
                  params.v_w, params.v_b):
        for a in group:
            a[...] = flat[offset:offset + a.size].reshape(a.shape)
            offset += a.size
    if offset != flat.size:
        raise ValueError("checkpoint payload has trailing bytes")
    return params, manifest
