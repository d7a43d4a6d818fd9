"""Minimal differentiable-function layer built on numpy.

Dense networks with hand-written reverse-mode gradients, categorical
autoregressive sequence distributions, Adagrad, flat binary parameter
snapshots, and central-finite-difference gradient verification. Double
precision throughout; forward and backward passes are deterministic given
identical inputs.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

RELU = "relu"
IDENTITY = "identity"

SNAPSHOT_MAGIC = b"EPWD"
SNAPSHOT_VERSION = 1


# ---------------------------------------------------------------------------
# Dense networks
# ---------------------------------------------------------------------------


class DenseNet:
    """Stack of affine layers with per-layer rectifier or identity activation.

    Weight matrices have shape ``(out_dim, in_dim)``. Inputs may be single
    vectors ``(in,)`` or batches ``(batch, in)``.
    """

    def __init__(
        self,
        weights: Sequence[np.ndarray],
        biases: Sequence[np.ndarray],
        activations: Sequence[str],
    ):
        if not (len(weights) == len(biases) == len(activations)):
            raise ValueError("layer lists must have equal length")
        for act in activations:
            if act not in (RELU, IDENTITY):
                raise ValueError(f"unknown activation {act!r}")
        for i in range(1, len(weights)):
            if weights[i].shape[1] != weights[i - 1].shape[0]:
                raise ValueError("consecutive layer dimensions must chain")
        for w, b in zip(weights, biases):
            if b.shape != (w.shape[0],):
                raise ValueError("bias shape must match layer output")
            if not (np.all(np.isfinite(w)) and np.all(np.isfinite(b))):
                raise ValueError("parameters must be finite")
        self.weights = [np.asarray(w, dtype=np.float64) for w in weights]
        self.biases = [np.asarray(b, dtype=np.float64) for b in biases]
        self.activations = list(activations)

    @property
    def input_dim(self) -> int:
        return self.weights[0].shape[1]

    @property
    def output_dim(self) -> int:
        return self.weights[-1].shape[0]

    def params(self) -> list[np.ndarray]:
        """Live parameter arrays in canonical (W1, b1, W2, b2, ...) order."""
        out: list[np.ndarray] = []
        for w, b in zip(self.weights, self.biases):
            out.append(w)
            out.append(b)
        return out


def init_dense(
    dims: Sequence[int], activations: Sequence[str], rng: np.random.Generator
) -> DenseNet:
    """Uniform(-r, r) weights with r = sqrt(6 / (fan_in + fan_out)), zero biases."""
    if len(dims) < 2 or len(activations) != len(dims) - 1:
        raise ValueError("need one activation per layer")
    weights = []
    biases = []
    for fan_in, fan_out in zip(dims[:-1], dims[1:]):
        r = np.sqrt(6.0 / (fan_in + fan_out))
        weights.append(rng.uniform(-r, r, size=(fan_out, fan_in)))
        biases.append(np.zeros(fan_out))
    return DenseNet(weights, biases, activations)


def _as_batch(x: np.ndarray, dim: int) -> tuple[np.ndarray, bool]:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 1:
        if x.shape != (dim,):
            raise ValueError(f"input has shape {x.shape}, expected ({dim},)")
        return x[None, :], True
    if x.ndim == 2 and x.shape[1] == dim:
        return x, False
    raise ValueError(f"input has shape {x.shape}, expected (*, {dim})")


def forward_cached(net: DenseNet, x: np.ndarray) -> tuple[np.ndarray, list[np.ndarray]]:
    """Forward pass keeping per-layer inputs and pre-activations for backward."""
    h, squeeze = _as_batch(x, net.input_dim)
    cache = [h]
    for w, b, act in zip(net.weights, net.biases, net.activations):
        z = h @ w.T + b
        cache.append(z)
        h = np.maximum(z, 0.0) if act == RELU else z
        cache.append(h)
    return (h[0] if squeeze else h), cache


def forward(net: DenseNet, x: np.ndarray) -> np.ndarray:
    """Affine/activation composition; see :func:`backward` for gradients."""
    out, _ = forward_cached(net, x)
    return out


def backward(
    net: DenseNet, x: np.ndarray, upstream: np.ndarray
) -> tuple[list[np.ndarray], np.ndarray]:
    """Exact reverse-mode gradients of :func:`forward`.

    ``upstream`` is dLoss/dOutput with the same leading shape as the
    input. Returns gradients in :meth:`DenseNet.params` order plus the
    gradient with respect to the input.
    """
    _, cache = forward_cached(net, x)
    return backward_from_cache(net, cache, upstream)


def backward_from_cache(
    net: DenseNet, cache: list[np.ndarray], upstream: np.ndarray
) -> tuple[list[np.ndarray], np.ndarray]:
    upstream = np.asarray(upstream, dtype=np.float64)
    squeeze = upstream.ndim == 1
    g = upstream[None, :] if squeeze else upstream
    if g.shape[1] != net.output_dim:
        raise ValueError("upstream gradient width must match the output dimension")
    grads: list[np.ndarray] = [np.empty(0)] * (2 * len(net.weights))
    for layer in range(len(net.weights) - 1, -1, -1):
        h_in = cache[2 * layer]
        z = cache[2 * layer + 1]
        if net.activations[layer] == RELU:
            g = g * (z > 0)
        grads[2 * layer] = g.T @ h_in
        grads[2 * layer + 1] = g.sum(axis=0)
        g = g @ net.weights[layer]
    return grads, (g[0] if squeeze else g)


# ---------------------------------------------------------------------------
# Autoregressive categorical sequence distributions
# ---------------------------------------------------------------------------


@dataclass
class ARPolicy:
    """Distribution over fixed-length action sequences.

    One shared network maps ``concat(one-hot previous action, conditioning
    vector)`` to the logits of the next action's categorical; the first
    step sees an all-zero "start" action. Log-probabilities of any
    length-``horizon`` sequence are finite and nonpositive.
    """

    n_actions: int
    horizon: int
    cond_dim: int
    net: DenseNet

    def __post_init__(self) -> None:
        if self.net.input_dim != self.n_actions + self.cond_dim:
            raise ValueError("policy network input must be n_actions + cond_dim")
        if self.net.output_dim != self.n_actions:
            raise ValueError("policy network must emit one logit per action")


def init_ar_policy(
    n_actions: int,
    horizon: int,
    cond_dim: int,
    hidden: int,
    rng: np.random.Generator,
) -> ARPolicy:
    net = init_dense(
        [n_actions + cond_dim, hidden, n_actions], [RELU, IDENTITY], rng
    )
    return ARPolicy(n_actions=n_actions, horizon=horizon, cond_dim=cond_dim, net=net)


def _log_softmax(logits: np.ndarray) -> np.ndarray:
    m = logits.max(axis=-1, keepdims=True)
    shifted = logits - m
    return shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))


def _one_hot(idx: np.ndarray, n: int) -> np.ndarray:
    out = np.zeros((idx.shape[0], n), dtype=np.float64)
    out[np.arange(idx.shape[0]), idx] = 1.0
    return out


def _check_seqs(pol: ARPolicy, seqs: np.ndarray) -> np.ndarray:
    seqs = np.asarray(seqs, dtype=np.int64)
    if seqs.ndim != 2 or seqs.shape[1] != pol.horizon:
        raise ValueError(f"sequences must have length {pol.horizon}")
    if np.any(seqs < 0) or np.any(seqs >= pol.n_actions):
        raise ValueError("action index out of range")
    return seqs


def ar_logprob_batch(pol: ARPolicy, conds: np.ndarray, seqs: np.ndarray) -> np.ndarray:
    """Log-probability of each sequence under its conditioning vector."""
    conds, _ = _as_batch(conds, pol.cond_dim)
    seqs = _check_seqs(pol, seqs)
    if conds.shape[0] != seqs.shape[0]:
        raise ValueError("batch sizes of conditioning vectors and sequences differ")
    b = conds.shape[0]
    prev = np.zeros((b, pol.n_actions), dtype=np.float64)
    total = np.zeros(b, dtype=np.float64)
    for k in range(pol.horizon):
        x = np.concatenate([prev, conds], axis=1)
        logits = forward(pol.net, x)
        logp = _log_softmax(logits)
        total += logp[np.arange(b), seqs[:, k]]
        prev = _one_hot(seqs[:, k], pol.n_actions)
    return total


def ar_logprob(pol: ARPolicy, cond: np.ndarray, seq: Sequence[int]) -> float:
    """Single-sequence convenience wrapper around :func:`ar_logprob_batch`."""
    out = ar_logprob_batch(pol, np.asarray(cond)[None, :], np.asarray(seq)[None, :])
    return float(out[0])


def ar_logprob_backward(
    pol: ARPolicy, conds: np.ndarray, seqs: np.ndarray, upstream: np.ndarray
) -> tuple[list[np.ndarray], np.ndarray]:
    """Gradients of ``sum_b upstream[b] * logprob_b``.

    Returns network parameter gradients plus the gradient with respect to
    each conditioning vector (needed to train a shared representation).
    """
    conds, _ = _as_batch(conds, pol.cond_dim)
    seqs = _check_seqs(pol, seqs)
    upstream = np.asarray(upstream, dtype=np.float64)
    b = conds.shape[0]
    if upstream.shape != (b,):
        raise ValueError("upstream must hold one weight per batch element")

    prev = np.zeros((b, pol.n_actions), dtype=np.float64)
    step_inputs = []
    step_caches = []
    step_logits = []
    for k in range(pol.horizon):
        x = np.concatenate([prev, conds], axis=1)
        logits, cache = forward_cached(pol.net, x)
        step_inputs.append(x)
        step_caches.append(cache)
        step_logits.append(logits)
        prev = _one_hot(seqs[:, k], pol.n_actions)

    param_grads = [np.zeros_like(p) for p in pol.net.params()]
    dcond = np.zeros_like(conds)
    for k in range(pol.horizon):
        logits = step_logits[k]
        soft = np.exp(_log_softmax(logits))
        dlogits = (_one_hot(seqs[:, k], pol.n_actions) - soft) * upstream[:, None]
        grads, dx = backward_from_cache(pol.net, step_caches[k], dlogits)
        for acc, g in zip(param_grads, grads):
            acc += g
        dcond += dx[:, pol.n_actions :]
    return param_grads, dcond


def ar_sample(
    pol: ARPolicy, cond: np.ndarray, rng: np.random.Generator
) -> tuple[int, ...]:
    """Ancestral sampling: one categorical draw per step."""
    cond = np.asarray(cond, dtype=np.float64)
    prev = np.zeros(pol.n_actions, dtype=np.float64)
    seq = []
    for _ in range(pol.horizon):
        x = np.concatenate([prev, cond])
        probs = np.exp(_log_softmax(forward(pol.net, x)))
        probs = probs / probs.sum()
        a = int(rng.choice(pol.n_actions, p=probs))
        seq.append(a)
        prev = np.zeros(pol.n_actions, dtype=np.float64)
        prev[a] = 1.0
    return tuple(seq)


def ar_enumerate_logprobs(pol: ARPolicy, cond: np.ndarray) -> np.ndarray:
    """Log-probability of every possible sequence, in lexicographic order.

    Exhaustive (``n_actions ** horizon`` entries); intended for small
    horizons and for normalization checks.
    """
    import itertools

    cond = np.asarray(cond, dtype=np.float64)
    seqs = np.array(
        list(itertools.product(range(pol.n_actions), repeat=pol.horizon)),
        dtype=np.int64,
    )
    conds = np.repeat(cond[None, :], seqs.shape[0], axis=0)
    return ar_logprob_batch(pol, conds, seqs)


# ---------------------------------------------------------------------------
# Adagrad
# ---------------------------------------------------------------------------


class Adagrad:
    """Per-parameter preconditioned descent with accumulated squared gradients.

    Update: ``G += g*g; p -= lr * g / sqrt(G + damping)``. Accumulators
    are nonnegative and never decrease.
    """

    def __init__(self, params: Sequence[np.ndarray], lr: float, damping: float = 1e-8):
        if lr <= 0 or damping <= 0:
            raise ValueError("learning rate and damping must be positive")
        self.lr = lr
        self.damping = damping
        self.accum = [np.zeros_like(p) for p in params]

    def update(self, params: Sequence[np.ndarray], grads: Sequence[np.ndarray]) -> None:
        """In-place Adagrad step on ``params``."""
        if len(params) != len(self.accum) or len(grads) != len(self.accum):
            raise ValueError("parameter/gradient structure does not match optimizer state")
        for p, g, acc in zip(params, grads, self.accum):
            if p.shape != g.shape or p.shape != acc.shape:
                raise ValueError("parameter and gradient shapes must agree")
            acc += g * g
            p -= self.lr * g / np.sqrt(acc + self.damping)


def adagrad_update(
    state: Adagrad, params: Sequence[np.ndarray], grads: Sequence[np.ndarray]
) -> Sequence[np.ndarray]:
    state.update(params, grads)
    return params


# ---------------------------------------------------------------------------
# Parameter snapshots
# ---------------------------------------------------------------------------


def save_arrays(path: str, arrays: Sequence[np.ndarray]) -> None:
    """Flat binary record: magic, version, shape table, then all values as
    little-endian float64 in array order."""
    with open(path, "wb") as fh:
        fh.write(SNAPSHOT_MAGIC)
        fh.write(struct.pack("<II", SNAPSHOT_VERSION, len(arrays)))
        for arr in arrays:
            fh.write(struct.pack("<I", arr.ndim))
            fh.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
        for arr in arrays:
            fh.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())


def load_arrays(path: str) -> list[np.ndarray]:
    with open(path, "rb") as fh:
        data = fh.read()
    if data[:4] != SNAPSHOT_MAGIC:
        raise ValueError("not a parameter snapshot (bad magic)")
    version, count = struct.unpack_from("<II", data, 4)
    if version != SNAPSHOT_VERSION:
        raise ValueError(f"unsupported snapshot version {version}")
    offset = 12
    shapes = []
    for _ in range(count):
        (ndim,) = struct.unpack_from("<I", data, offset)
        offset += 4
        shape = struct.unpack_from(f"<{ndim}I", data, offset)
        offset += 4 * ndim
        shapes.append(shape)
    arrays = []
    for shape in shapes:
        n = int(np.prod(shape)) if shape else 1
        arr = np.frombuffer(data, dtype="<f8", count=n, offset=offset).reshape(shape)
        offset += 8 * n
        arrays.append(arr.astype(np.float64))
    return arrays


# ---------------------------------------------------------------------------
# Finite-difference verification
# ---------------------------------------------------------------------------


def central_difference(
    f: Callable[[], float], arr: np.ndarray, index: tuple[int, ...], step: float = 1e-5
) -> float:
    """d f / d arr[index] by central differences, restoring the entry."""
    original = arr[index]
    arr[index] = original + step
    plus = f()
    arr[index] = original - step
    minus = f()
    arr[index] = original
    return (plus - minus) / (2.0 * step)


def gradient_check(
    f: Callable[[], float],
    params: Sequence[np.ndarray],
    analytic: Sequence[np.ndarray],
    rng: np.random.Generator,
    n_coords: int = 10,
    step: float = 1e-5,
) -> float:
    """Max relative error between ``analytic`` and central differences of
    ``f`` over randomly probed parameter coordinates.

    Relative error uses ``|a - d| / max(|a|, |d|, 1e-4)`` so near-zero
    gradients are compared on an absolute scale commensurate with the
    finite-difference noise floor.
    """
    worst = 0.0
    for _ in range(n_coords):
        which = int(rng.integers(len(params)))
        arr = params[which]
        if arr.size == 0:
            continue
        flat_idx = int(rng.integers(arr.size))
        index = np.unravel_index(flat_idx, arr.shape)
        numeric = central_difference(f, arr, index, step=step)
        exact = float(analytic[which][index])
        scale = max(abs(exact), abs(numeric), 1e-4)
        worst = max(worst, abs(exact - numeric) / scale)
    return worst
