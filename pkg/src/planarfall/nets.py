"""Dense-network kernel: MLP forward/backward with elu hiddens, a diagonal
Gaussian policy head, Adam, and the versioned binary checkpoint format.

Everything is plain numpy. Parameters default to float32 (that is also the
on-disk checkpoint precision); pass dtype=np.float64 where test tolerances
demand exact math. Forward/backward are bit-deterministic for fixed inputs.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

LOG_STD_MIN = -4.0
LOG_STD_MAX = 1.0
_LOG_2PI = float(np.log(2.0 * np.pi))

CHECKPOINT_MAGIC = b"PFCK"
CHECKPOINT_VERSION = 1


class CheckpointError(ValueError):
    """Raised for unreadable or version-incompatible checkpoint files."""


def elu(z: np.ndarray) -> np.ndarray:
    return np.where(z > 0, z, np.expm1(np.minimum(z, 0.0)))


def elu_grad(z: np.ndarray) -> np.ndarray:
    return np.where(z > 0, 1.0, np.exp(np.minimum(z, 0.0)))


@dataclass
class MlpParams:
    """Weights and biases of a dense elu network; actors also carry the
    state-independent per-action log-std vector."""

    sizes: tuple[int, ...]
    weights: list[np.ndarray]
    biases: list[np.ndarray]
    log_std: np.ndarray | None = None

    @staticmethod
    def create(rng: np.random.Generator, sizes, with_log_std: bool = False,
               init_log_std: float = 0.0, out_scale: float = 0.01,
               dtype=np.float32) -> "MlpParams":
        sizes = tuple(int(s) for s in sizes)
        weights, biases = [], []
        for i in range(len(sizes) - 1):
            fan_in = sizes[i]
            w = rng.normal(0.0, np.sqrt(2.0 / fan_in), (sizes[i], sizes[i + 1]))
            if i == len(sizes) - 2:
                w *= out_scale
            weights.append(w.astype(dtype))
            biases.append(np.zeros(sizes[i + 1], dtype=dtype))
        log_std = np.full(sizes[-1], init_log_std, dtype=dtype) if with_log_std else None
        return MlpParams(sizes=sizes, weights=weights, biases=biases, log_std=log_std)

    def parameter_list(self) -> list[np.ndarray]:
        out = list(self.weights) + list(self.biases)
        if self.log_std is not None:
            out.append(self.log_std)
        return out

    def copy(self) -> "MlpParams":
        return MlpParams(self.sizes, [w.copy() for w in self.weights],
                         [b.copy() for b in self.biases],
                         None if self.log_std is None else self.log_std.copy())

    def clamp_log_std(self) -> None:
        if self.log_std is not None:
            np.clip(self.log_std, LOG_STD_MIN, LOG_STD_MAX, out=self.log_std)

    @property
    def dtype(self):
        return self.weights[0].dtype


def forward(params: MlpParams, x: np.ndarray) -> tuple[np.ndarray, list]:
    """Batch forward pass; the cache holds layer inputs and pre-activations
    for the backward pass."""
    x = np.asarray(x, dtype=params.dtype)
    if x.ndim != 2 or x.shape[1] != params.sizes[0]:
        raise ValueError(f"expected input (batch, {params.sizes[0]}), got {x.shape}")
    cache = []
    h = x
    last = len(params.weights) - 1
    for i, (w, b) in enumerate(zip(params.weights, params.biases)):
        z = h @ w + b
        cache.append((h, z))
        h = z if i == last else elu(z)
    return h, cache


def backward(params: MlpParams, cache: list, dout: np.ndarray) -> list[np.ndarray]:
    """Exact reverse-mode gradients for the cached forward pass.

    Returns gradients ordered like `parameter_list()` minus the log-std
    entry (the Gaussian head owns that gradient).
    """
    dout = np.asarray(dout, dtype=params.dtype)
    if dout.shape != (cache[-1][1].shape[0], params.sizes[-1]):
        raise ValueError("output gradient shape mismatch")
    n_layers = len(params.weights)
    d_w = [None] * n_layers
    d_b = [None] * n_layers
    grad = dout
    for i in range(n_layers - 1, -1, -1):
        h_in, z = cache[i]
        if i != n_layers - 1:
            grad = grad * elu_grad(z)
        d_w[i] = h_in.T @ grad
        d_b[i] = grad.sum(axis=0)
        if i > 0:
            grad = grad @ params.weights[i].T
    return d_w + d_b


# --- diagonal Gaussian head --------------------------------------------------


def gaussian_sample(mean: np.ndarray, log_std: np.ndarray,
                    noise: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Action and summed log-probability given standard-normal noise."""
    std = np.exp(log_std)
    action = mean + std * noise
    return action, gaussian_log_prob(mean, log_std, action)


def gaussian_log_prob(mean: np.ndarray, log_std: np.ndarray, action: np.ndarray) -> np.ndarray:
    z = (action - mean) / np.exp(log_std)
    return np.sum(-0.5 * z * z - log_std - 0.5 * _LOG_2PI, axis=-1)


def gaussian_entropy(log_std: np.ndarray) -> float:
    return float(np.sum(log_std + 0.5 * (1.0 + _LOG_2PI)))


def gaussian_log_prob_grads(mean: np.ndarray, log_std: np.ndarray, action: np.ndarray,
                            dlogp: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Backprop d(logp)/d(mean) and d(logp)/d(log_std) for per-sample
    upstream gradients dlogp (B,)."""
    inv_var = np.exp(-2.0 * log_std)
    diff = action - mean
    d_mean = dlogp[:, None] * diff * inv_var
    d_log_std = dlogp[:, None] * (diff * diff * inv_var - 1.0)
    return d_mean, d_log_std.sum(axis=0)


# --- Adam ---------------------------------------------------------------------


@dataclass
class AdamState:
    m: list[np.ndarray]
    v: list[np.ndarray]
    step: int = 0
    lr: float = 3e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @staticmethod
    def for_params(arrays: list[np.ndarray], lr: float = 3e-4, beta1: float = 0.9,
                   beta2: float = 0.999, eps: float = 1e-8) -> "AdamState":
        return AdamState(m=[np.zeros_like(a) for a in arrays],
                         v=[np.zeros_like(a) for a in arrays],
                         step=0, lr=lr, beta1=beta1, beta2=beta2, eps=eps)


def adam_step(arrays: list[np.ndarray], grads: list[np.ndarray], state: AdamState) -> None:
    """Standard bias-corrected Adam update, in place."""
    if len(arrays) != len(grads) or len(arrays) != len(state.m):
        raise ValueError("parameter/gradient/moment counts differ")
    state.step += 1
    b1, b2 = state.beta1, state.beta2
    bc1 = 1.0 - b1 ** state.step
    bc2 = 1.0 - b2 ** state.step
    for theta, g, m, v in zip(arrays, grads, state.m, state.v):
        if theta.shape != g.shape:
            raise ValueError("gradient shape mismatch")
        m += (1.0 - b1) * (g - m)
        v += (1.0 - b2) * (g * g - v)
        theta -= state.lr * (m / bc1) / (np.sqrt(v / bc2) + state.eps)


def clip_grad_norm(grads: list[np.ndarray], max_norm: float) -> float:
    """Scale gradients to a global norm cap; returns the pre-clip norm."""
    total = float(np.sqrt(sum(float(np.sum(g.astype(np.float64) ** 2)) for g in grads)))
    if max_norm > 0 and total > max_norm:
        scale = max_norm / (total + 1e-12)
        for g in grads:
            g *= scale
    return total


# --- checkpoints ----------------------------------------------------------------


def _flatten_entries(tag: str, params: MlpParams) -> list[tuple[str, np.ndarray]]:
    out = []
    for i, w in enumerate(params.weights):
        out.append((f"{tag}.w{i}", w))
    for i, b in enumerate(params.biases):
        out.append((f"{tag}.b{i}", b))
    if params.log_std is not None:
        out.append((f"{tag}.log_std", params.log_std))
    return out


def save_checkpoint(path: str | Path, actor: MlpParams, critic: MlpParams,
                    actor_opt: AdamState | None, critic_opt: AdamState | None,
                    iteration: int, rng_state: dict | None, meta: dict | None = None) -> None:
    """Versioned binary checkpoint: header JSON plus raw little-endian
    float32 arrays (parameters and optimizer moments)."""
    entries = _flatten_entries("actor", actor) + _flatten_entries("critic", critic)
    for tag, opt in (("actor_opt", actor_opt), ("critic_opt", critic_opt)):
        if opt is not None:
            for i, arr in enumerate(opt.m):
                entries.append((f"{tag}.m{i}", arr))
            for i, arr in enumerate(opt.v):
                entries.append((f"{tag}.v{i}", arr))
    header = {
        "actor_sizes": list(actor.sizes),
        "critic_sizes": list(critic.sizes),
        "actor_has_log_std": actor.log_std is not None,
        "iteration": int(iteration),
        "rng_state": rng_state,
        "opt": {
            tag: None if opt is None else {
                "step": opt.step, "lr": opt.lr, "beta1": opt.beta1,
                "beta2": opt.beta2, "eps": opt.eps, "count": len(opt.m),
            }
            for tag, opt in (("actor_opt", actor_opt), ("critic_opt", critic_opt))
        },
        "arrays": [{"name": name, "shape": list(a.shape)} for name, a in entries],
        "meta": meta or {},
    }
    blob = json.dumps(header).encode()
    with open(path, "wb") as f:
        f.write(CHECKPOINT_MAGIC)
        f.write(np.uint32(CHECKPOINT_VERSION).tobytes())
        f.write(np.uint32(len(blob)).tobytes())
        f.write(blob)
        for _, a in entries:
            f.write(np.ascontiguousarray(a, dtype="<f4").tobytes())


def load_checkpoint(path: str | Path, dtype=np.float32):
    """Returns (actor, critic, actor_opt, critic_opt, iteration, rng_state, meta)."""
    raw = Path(path).read_bytes()
    if raw[:4] != CHECKPOINT_MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint file (bad magic)")
    version = int(np.frombuffer(raw[4:8], dtype="<u4")[0])
    if version != CHECKPOINT_VERSION:
        raise CheckpointError(
            f"{path}: checkpoint version {version} is not supported (expected {CHECKPOINT_VERSION})")
    hlen = int(np.frombuffer(raw[8:12], dtype="<u4")[0])
    header = json.loads(raw[12:12 + hlen].decode())
    offset = 12 + hlen
    arrays = {}
    for spec in header["arrays"]:
        n = int(np.prod(spec["shape"])) if spec["shape"] else 1
        arr = np.frombuffer(raw[offset:offset + 4 * n], dtype="<f4").reshape(spec["shape"])
        arrays[spec["name"]] = arr.astype(dtype)
        offset += 4 * n

    def build(tag, sizes, with_log_std):
        n_layers = len(sizes) - 1
        return MlpParams(
            sizes=tuple(sizes),
            weights=[arrays[f"{tag}.w{i}"] for i in range(n_layers)],
            biases=[arrays[f"{tag}.b{i}"] for i in range(n_layers)],
            log_std=arrays.get(f"{tag}.log_std") if with_log_std else None,
        )

    actor = build("actor", header["actor_sizes"], header["actor_has_log_std"])
    critic = build("critic", header["critic_sizes"], False)

    def build_opt(tag):
        spec = header["opt"][tag]
        if spec is None:
            return None
        st = AdamState(
            m=[arrays[f"{tag}.m{i}"] for i in range(spec["count"])],
            v=[arrays[f"{tag}.v{i}"] for i in range(spec["count"])],
            step=spec["step"], lr=spec["lr"], beta1=spec["beta1"],
            beta2=spec["beta2"], eps=spec["eps"])
        return st

    return (actor, critic, build_opt("actor_opt"), build_opt("critic_opt"),
            header["iteration"], header.get("rng_state"), header.get("meta", {}))
