"""Small fully connected classifier with hand-written backpropagation.

Architecture::

    x (H*W) -> W1, b1 -> ReLU -> W2, b2 = feature h (D) -> W3, b3 = logits (2)

The feature layer ``h`` is what clustering and concept probing look at;
``W3`` is the parameter block used for per-environment gradient matrices.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from .numerics import InvalidInputError, child_seed, make_rng

BLOCKS = ("W1", "b1", "W2", "b2", "W3", "b3")
N_CLASSES = 2


class TrainingDivergedError(FloatingPointError):
    pass


@dataclass
class MlpParams:
    W1: np.ndarray
    b1: np.ndarray
    W2: np.ndarray
    b2: np.ndarray
    W3: np.ndarray
    b3: np.ndarray

    def blocks(self):
        return [getattr(self, name) for name in BLOCKS]

    def copy(self) -> "MlpParams":
        return MlpParams(*(b.copy() for b in self.blocks()))

    def zeros_like(self) -> "MlpParams":
        return MlpParams(*(np.zeros_like(b) for b in self.blocks()))

    @property
    def input_dim(self) -> int:
        return self.W1.shape[1]

    @property
    def hidden(self) -> int:
        return self.W1.shape[0]

    @property
    def feature_dim(self) -> int:
        return self.W2.shape[0]

    def is_finite(self) -> bool:
        return all(np.all(np.isfinite(b)) for b in self.blocks())


def init_params(input_dim: int, hidden: int = 64, feature_dim: int = 32, seed: int = 0) -> MlpParams:
    """Uniform(-s, s) weights with s = 1/sqrt(fan_in); biases likewise."""
    rng = make_rng(seed)

    def layer(fan_out, fan_in):
        s = 1.0 / np.sqrt(fan_in)
        return rng.uniform(-s, s, size=(fan_out, fan_in)), rng.uniform(-s, s, size=fan_out)

    W1, b1 = layer(hidden, input_dim)
    W2, b2 = layer(feature_dim, hidden)
    W3, b3 = layer(N_CLASSES, feature_dim)
    return MlpParams(W1, b1, W2, b2, W3, b3)


@dataclass
class ForwardTrace:
    x: np.ndarray  # (N, H*W)
    a1: np.ndarray  # pre-activation of the hidden layer
    r1: np.ndarray  # ReLU output
    h: np.ndarray  # feature layer
    logits: np.ndarray


def _flatten(p: MlpParams, frames) -> np.ndarray:
    x = np.asarray(frames, dtype=np.float64)
    if x.ndim == 3:
        x = x.reshape(x.shape[0], -1)
    elif x.ndim == 2 and x.shape[1] != p.input_dim:
        x = x.reshape(1, -1)  # a single (H, W) frame
    elif x.ndim == 1:
        x = x[None, :]
    if x.shape[1] != p.input_dim:
        raise InvalidInputError(f"input has {x.shape[1]} pixels, model expects {p.input_dim}")
    return x


def forward(p: MlpParams, frames) -> ForwardTrace:
    """Forward pass for one frame ``(H, W)`` or a stack ``(N, H, W)``."""
    x = _flatten(p, frames)
    a1 = x @ p.W1.T + p.b1
    r1 = np.maximum(a1, 0.0)
    h = r1 @ p.W2.T + p.b2
    logits = h @ p.W3.T + p.b3
    return ForwardTrace(x, a1, r1, h, logits)


def features(p: MlpParams, frames) -> np.ndarray:
    return forward(p, frames).h


def softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def fake_probability(p: MlpParams, frames, chunk: int = 4096) -> np.ndarray:
    frames = np.asarray(frames)
    out = [softmax(forward(p, frames[i : i + chunk]).logits)[:, 1] for i in range(0, len(frames), chunk)]
    return np.concatenate(out) if out else np.zeros(0)


def cross_entropy(logits: np.ndarray, labels: np.ndarray) -> float:
    z = logits - logits.max(axis=1, keepdims=True)
    logz = np.log(np.exp(z).sum(axis=1))
    return float(np.mean(logz - z[np.arange(len(labels)), labels]))


def loss_and_grads(p: MlpParams, frames, labels) -> tuple[float, MlpParams]:
    """Mean softmax cross-entropy over the batch and its exact gradient."""
    labels = np.asarray(labels, dtype=int)
    tr = forward(p, frames)
    n = tr.x.shape[0]
    if n == 0 or len(labels) != n:
        raise InvalidInputError("batch must be nonempty and match the label count")
    loss = cross_entropy(tr.logits, labels)
    if not np.isfinite(loss):
        raise TrainingDivergedError(f"non-finite loss {loss}")

    d_logits = softmax(tr.logits)
    d_logits[np.arange(n), labels] -= 1.0
    d_logits /= n
    gW3 = d_logits.T @ tr.h
    gb3 = d_logits.sum(axis=0)
    d_h = d_logits @ p.W3
    gW2 = d_h.T @ tr.r1
    gb2 = d_h.sum(axis=0)
    d_a1 = (d_h @ p.W2) * (tr.a1 > 0)
    gW1 = d_a1.T @ tr.x
    gb1 = d_a1.sum(axis=0)
    return loss, MlpParams(gW1, gb1, gW2, gb2, gW3, gb3)


def head_gradient(p: MlpParams, frames, labels) -> np.ndarray:
    """Gradient of the mean cross-entropy w.r.t. ``W3`` only, shape (C, D)."""
    labels = np.asarray(labels, dtype=int)
    tr = forward(p, frames)
    d_logits = softmax(tr.logits)
    d_logits[np.arange(len(labels)), labels] -= 1.0
    return d_logits.T @ tr.h / len(labels)


def input_gradient(p: MlpParams, frame) -> np.ndarray:
    """d(logit_fake - logit_real)/d(pixel), shaped like ``frame``."""
    frame = np.asarray(frame, dtype=np.float64)
    tr = forward(p, frame)
    d_h = (p.W3[1] - p.W3[0])[None, :]
    d_a1 = (d_h @ p.W2) * (tr.a1 > 0)
    return (d_a1 @ p.W1).reshape(frame.shape)


def saliency_map(p: MlpParams, frame) -> np.ndarray:
    """|input gradient| min-max scaled to [0, 1]; a flat map becomes zeros."""
    g = np.abs(input_gradient(p, frame))
    span = g.max() - g.min()
    if span <= 0:
        return np.zeros_like(g)
    return (g - g.min()) / span


@dataclass
class AdamState:
    m: MlpParams
    v: MlpParams
    step: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def for_params(cls, p: MlpParams) -> "AdamState":
        return cls(p.zeros_like(), p.zeros_like())


def adam_step(p: MlpParams, grads: MlpParams, state: AdamState, lr: float) -> tuple[MlpParams, AdamState]:
    """One bias-corrected Adam update. Inputs are not modified."""
    t = state.step + 1
    b1, b2 = state.beta1, state.beta2
    new_p, new_m, new_v = [], [], []
    for w, g, m, v in zip(p.blocks(), grads.blocks(), state.m.blocks(), state.v.blocks()):
        m = b1 * m + (1 - b1) * g
        v = b2 * v + (1 - b2) * g * g
        m_hat = m / (1 - b1**t)
        v_hat = v / (1 - b2**t)
        new_p.append(w - lr * m_hat / (np.sqrt(v_hat) + state.eps))
        new_m.append(m)
        new_v.append(v)
    return MlpParams(*new_p), AdamState(MlpParams(*new_m), MlpParams(*new_v), t, b1, b2, state.eps)


@dataclass
class TrainConfig:
    batch_size: int = 64
    epochs: int = 10
    lr: float = 2e-4
    hidden: int = 64
    feature_dim: int = 32
    seed: int = 0
    patience: int | None = None

    def validate(self):
        for name in ("batch_size", "lr", "hidden", "feature_dim"):
            if getattr(self, name) <= 0:
                raise InvalidInputError(f"{name} must be positive")
        if self.epochs < 0:
            raise InvalidInputError("epochs must be non-negative")


# (batch indices, frames, labels, params, rng) -> augmented frames
AugmentHook = Callable[[np.ndarray, np.ndarray, np.ndarray, MlpParams, np.random.Generator], np.ndarray]


@dataclass
class TrainResult:
    params: MlpParams
    history: list[float] = field(default_factory=list)
    val_history: list[float] = field(default_factory=list)
    steps: int = 0


def train(
    frames,
    labels,
    cfg: TrainConfig,
    augment: AugmentHook | None = None,
    params: MlpParams | None = None,
    val: tuple[np.ndarray, np.ndarray] | None = None,
    stream: int = 0,
) -> TrainResult:
    """Mini-batch Adam on frame-level cross-entropy.

    Batches are reshuffled every epoch from a generator seeded by
    ``cfg.seed`` and ``stream``. ``augment`` rewrites each batch before the
    update; ``None`` is plain training. With ``cfg.patience`` and ``val``
    set, training stops once validation loss has not improved for that
    many epochs.
    """
    cfg.validate()
    X = np.asarray(frames, dtype=np.float64)
    y = np.asarray(labels, dtype=int)
    if len(X) == 0:
        raise InvalidInputError("empty training set")
    if params is None:
        params = init_params(X[0].size, cfg.hidden, cfg.feature_dim, child_seed(cfg.seed, 0))
    params = params.copy()
    state = AdamState.for_params(params)
    shuffle_rng = make_rng(child_seed(cfg.seed, stream, 1))
    aug_rng = make_rng(child_seed(cfg.seed, stream, 2))
    result = TrainResult(params)
    best, stale = np.inf, 0
    for _ in range(cfg.epochs):
        order = shuffle_rng.permutation(len(X))
        total = 0.0
        for start in range(0, len(X), cfg.batch_size):
            idx = order[start : start + cfg.batch_size]
            xb = X[idx]
            if augment is not None:
                xb = augment(idx, xb, y[idx], params, aug_rng)
            loss, grads = loss_and_grads(params, xb, y[idx])
            params, state = adam_step(params, grads, state, cfg.lr)
            total += loss * len(idx)
        if not params.is_finite():
            raise TrainingDivergedError("parameters became non-finite")
        result.history.append(total / len(X))
        if val is not None:
            vl = cross_entropy(forward(params, val[0]).logits, np.asarray(val[1], dtype=int))
            result.val_history.append(vl)
            if cfg.patience:
                if vl < best - 1e-9:
                    best, stale = vl, 0
                else:
                    stale += 1
                    if stale >= cfg.patience:
                        break
    result.params = params
    result.steps = state.step
    return result


def save_checkpoint(path, p: MlpParams, meta: dict | None = None) -> Path:
    """JSON header line followed by float64 little-endian parameter blocks."""
    header = {
        "format": "fairscope-mlp",
        "blocks": [[name, list(getattr(p, name).shape)] for name in BLOCKS],
        **(meta or {}),
    }
    body = b"".join(np.ascontiguousarray(b, dtype="<f8").tobytes() for b in p.blocks())
    path = Path(path)
    path.write_bytes(json.dumps(header, sort_keys=True).encode("utf-8") + b"\n" + body)
    return path


def load_checkpoint(path) -> tuple[MlpParams, dict]:
    raw = Path(path).read_bytes()
    nl = raw.index(b"\n")
    header = json.loads(raw[:nl].decode("utf-8"))
    offset = nl + 1
    arrays = {}
    for name, shape in header["blocks"]:
        count = int(np.prod(shape))
        arrays[name] = np.frombuffer(raw, dtype="<f8", count=count, offset=offset).reshape(shape).astype(np.float64)
        offset += 8 * count
    if offset != len(raw):
        raise ValueError(f"{path}: trailing or missing bytes in checkpoint")
    return MlpParams(**arrays), header
