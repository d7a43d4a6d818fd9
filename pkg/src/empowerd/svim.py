"""Stochastic variational information maximisation.

Alternates maximum-likelihood training of a sequence decoder with
energy-matching training of a normalized source model plus a scalar
state-value head. The decoder ``q(a | s, s')`` learns to recover the
action sequence connecting two observations; the source ``h(a | s)`` and
scalar ``psi(s)`` jointly fit ``beta * log q`` by squared error, so that
``psi(s) / beta`` becomes a cheap per-state empowerment estimate.

All models share one state-representation network that maps flattened
pixel observations to a feature vector and receives gradients from both
losses.
"""

from __future__ import annotations

import time
from collections import deque
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import approx
from .approx import (
    Adagrad,
    ARPolicy,
    DenseNet,
    IDENTITY,
    RELU,
    ar_logprob_backward,
    ar_logprob_batch,
    ar_sample,
    backward_from_cache,
    forward,
    forward_cached,
    init_ar_policy,
    init_dense,
)
from .channel import DiscreteChannel, posterior, variational_bound, _check_source
from .gridworld import (
    Action,
    EnvState,
    GridSpec,
    N_ACTIONS,
    render,
    rollout,
    valid_start_states,
)


@dataclass
class SVIMConfig:
    """Training hyperparameters. ``beta`` is the inverse temperature of the
    optimal-source softmax; ``exploration_mix`` is the probability of
    replacing the model-drawn action sequence with a uniform one."""

    beta: float = 1.0
    horizon: int = 3
    batch_size: int = 64
    decoder_lr: float = 0.05
    source_lr: float = 0.02
    buffer_capacity: int = 10_000
    exploration_mix: float = 0.2
    total_steps: int = 20_000
    seed: int = 0
    repr_dim: int = 100
    hidden_dim: int = 100
    render_size: int = 20

    def __post_init__(self) -> None:
        if self.beta <= 0:
            raise ValueError("beta must be positive")
        if not 0.0 <= self.exploration_mix <= 1.0:
            raise ValueError("exploration_mix must lie in [0, 1]")
        for name in (
            "horizon",
            "batch_size",
            "decoder_lr",
            "source_lr",
            "buffer_capacity",
            "repr_dim",
            "hidden_dim",
            "render_size",
        ):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if self.total_steps < 0:
            raise ValueError("total_steps must be nonnegative")


@dataclass
class SVIMModels:
    """The three learned components plus their shared representation.

    ``repr_net`` maps flattened pixels to features; ``decoder`` is the
    sequence model over actions given (features(s), features(s')),
    ``source`` the sequence model given features(s) alone, and ``psi``
    the scalar head whose output divided by beta estimates empowerment.
    """

    repr_net: DenseNet
    decoder: ARPolicy
    source: ARPolicy
    psi: DenseNet

    def parameter_arrays(self) -> list[np.ndarray]:
        """Canonical flat parameter order used by snapshots."""
        return (
            self.repr_net.params()
            + self.decoder.net.params()
            + self.source.net.params()
            + self.psi.params()
        )


@dataclass
class ExperienceBatch:
    """Mini-batch of (observation, action sequence, next observation)."""

    obs: np.ndarray       # (B, H, W)
    seqs: np.ndarray      # (B, K) action indices
    next_obs: np.ndarray  # (B, H, W)

    def __post_init__(self) -> None:
        if self.obs.shape[0] == 0:
            raise ValueError("batch must be nonempty")
        if not (self.obs.shape[0] == self.seqs.shape[0] == self.next_obs.shape[0]):
            raise ValueError("batch fields disagree on batch size")


@dataclass
class LogRecord:
    step: int
    decoder_loss: float
    source_loss: float
    mean_psi: float
    wall_clock: float


def init_models(
    config: SVIMConfig, rng: np.random.Generator, n_actions: int = N_ACTIONS
) -> SVIMModels:
    # The representation is a linear projection: observations of one grid
    # differ in only a handful of pixels, and a rectifier here can lose
    # those differences permanently when units die early in training. The
    # downstream networks keep their rectifier hidden layers.
    obs_dim = config.render_size * config.render_size
    repr_net = init_dense([obs_dim, config.repr_dim], [IDENTITY], rng)
    decoder = init_ar_policy(
        n_actions, config.horizon, 2 * config.repr_dim, config.hidden_dim, rng
    )
    source = init_ar_policy(
        n_actions, config.horizon, config.repr_dim, config.hidden_dim, rng
    )
    psi = init_dense([config.repr_dim, config.hidden_dim, 1], [RELU, IDENTITY], rng)
    return SVIMModels(repr_net=repr_net, decoder=decoder, source=source, psi=psi)


def _flatten_obs(obs: np.ndarray) -> np.ndarray:
    obs = np.asarray(obs, dtype=np.float64)
    if obs.ndim == 2:
        return obs.reshape(-1)
    return obs.reshape(obs.shape[0], -1)


def features(models: SVIMModels, obs: np.ndarray) -> np.ndarray:
    """Shared state representation of one observation or a batch."""
    return forward(models.repr_net, _flatten_obs(obs))


def decoder_loss(
    models: SVIMModels, batch: ExperienceBatch
) -> tuple[float, dict[str, list[np.ndarray]]]:
    """Mean negative log-likelihood of the batch sequences under the decoder.

    Gradients flow into the decoder network and, through both feature
    inputs, into the shared representation.
    """
    b = batch.obs.shape[0]
    obs_flat = _flatten_obs(batch.obs)
    next_flat = _flatten_obs(batch.next_obs)
    f_s, cache_s = forward_cached(models.repr_net, obs_flat)
    f_s2, cache_s2 = forward_cached(models.repr_net, next_flat)
    conds = np.concatenate([f_s, f_s2], axis=1)

    logprobs = ar_logprob_batch(models.decoder, conds, batch.seqs)
    loss = float(-logprobs.mean())

    upstream = np.full(b, -1.0 / b)
    decoder_grads, dconds = ar_logprob_backward(
        models.decoder, conds, batch.seqs, upstream
    )
    f_dim = f_s.shape[1]
    repr_grads_s, _ = backward_from_cache(models.repr_net, cache_s, dconds[:, :f_dim])
    repr_grads_s2, _ = backward_from_cache(models.repr_net, cache_s2, dconds[:, f_dim:])
    repr_grads = [a + c for a, c in zip(repr_grads_s, repr_grads_s2)]
    return loss, {"decoder": decoder_grads, "repr": repr_grads}


def source_loss(
    models: SVIMModels, batch: ExperienceBatch, beta: float
) -> tuple[float, dict[str, list[np.ndarray]]]:
    """Squared-error fit of ``beta*log q`` by ``log h + psi``.

    The decoder term is a fixed regression target: no gradient flows back
    into the decoder. Returned gradients cover the source network, the
    scalar head, and the shared representation through those two live
    paths.
    """
    if beta <= 0:
        raise ValueError("beta must be positive")
    b = batch.obs.shape[0]
    obs_flat = _flatten_obs(batch.obs)
    next_flat = _flatten_obs(batch.next_obs)
    f_s, cache_s = forward_cached(models.repr_net, obs_flat)
    f_s2 = forward(models.repr_net, next_flat)

    target = beta * ar_logprob_batch(
        models.decoder, np.concatenate([f_s, f_s2], axis=1), batch.seqs
    )
    log_h = ar_logprob_batch(models.source, f_s, batch.seqs)
    psi_out, cache_psi = forward_cached(models.psi, f_s)
    psi_vals = psi_out[:, 0]

    resid = target - log_h - psi_vals
    loss = float(np.mean(resid**2))

    dresid = -2.0 * resid / b
    source_grads, dcond_h = ar_logprob_backward(models.source, f_s, batch.seqs, dresid)
    psi_grads, dfeat_psi = backward_from_cache(
        models.psi, cache_psi, dresid[:, None]
    )
    repr_grads, _ = backward_from_cache(
        models.repr_net, cache_s, dcond_h + dfeat_psi
    )
    return loss, {"source": source_grads, "psi": psi_grads, "repr": repr_grads}


def energy(models: SVIMModels, spec: GridSpec, s: EnvState, seq: Sequence[int]) -> float:
    """Decoder log-likelihood ``log q(a | s, s')`` at the rollout outcome.

    The environment is deterministic, so the expectation over outcomes
    collapses to the single terminal state.
    """
    size = models.repr_net.input_dim
    side = int(np.sqrt(size))
    obs = render(spec, s, size=side)
    terminal = rollout(spec, s, [Action(a) for a in seq])
    obs2 = render(spec, terminal, size=side)
    cond = np.concatenate([features(models, obs), features(models, obs2)])
    return approx.ar_logprob(models.decoder, cond, list(seq))


def empowerment_estimate(models: SVIMModels, obs: np.ndarray, beta: float) -> float:
    """Per-state empowerment in nats: ``psi(features(obs)) / beta``."""
    if beta <= 0:
        raise ValueError("beta must be positive")
    out = forward(models.psi, features(models, obs))
    return float(out[0]) / beta


def _assemble_batch(
    buffer: deque, rng: np.random.Generator, batch_size: int
) -> ExperienceBatch:
    idx = rng.integers(0, len(buffer), size=batch_size)
    items = [buffer[i] for i in idx]
    return ExperienceBatch(
        obs=np.stack([it[0] for it in items]),
        seqs=np.array([it[1] for it in items], dtype=np.int64),
        next_obs=np.stack([it[2] for it in items]),
    )


def svim_train(
    spec: GridSpec, config: SVIMConfig
) -> tuple[SVIMModels, list[LogRecord]]:
    """Interleaved data collection and training.

    Each step starts one episode from a uniformly drawn free cell, draws a
    sequence from the source model (mixed with uniform sequences at
    ``exploration_mix``), acts for ``horizon`` steps, pushes the triple
    into a FIFO buffer, then performs one Adagrad step on the decoder loss
    and one on the source loss over a sampled mini-batch. The shared
    representation receives one update from the summed gradients of both
    losses. Fully deterministic given the config seed.
    """
    rng = np.random.default_rng(config.seed)
    models = init_models(config, rng)
    starts = valid_start_states(spec)
    buffer: deque = deque(maxlen=config.buffer_capacity)
    log: list[LogRecord] = []

    opt_decoder = Adagrad(models.decoder.net.params(), lr=config.decoder_lr)
    opt_source = Adagrad(
        models.source.net.params() + models.psi.params(), lr=config.source_lr
    )
    opt_repr = Adagrad(models.repr_net.params(), lr=config.decoder_lr)

    t0 = time.perf_counter()
    for step_idx in range(config.total_steps):
        s0 = starts[int(rng.integers(len(starts)))]
        obs = render(spec, s0, size=config.render_size)
        if rng.random() < config.exploration_mix:
            seq = tuple(int(a) for a in rng.integers(0, N_ACTIONS, size=config.horizon))
        else:
            seq = ar_sample(models.source, features(models, obs), rng)
        terminal = rollout(spec, s0, [Action(a) for a in seq])
        next_obs = render(spec, terminal, size=config.render_size)
        buffer.append((obs, np.array(seq, dtype=np.int64), next_obs))

        batch = _assemble_batch(buffer, rng, config.batch_size)
        dec_loss, dec_grads = decoder_loss(models, batch)
        opt_decoder.update(models.decoder.net.params(), dec_grads["decoder"])
        src_loss, src_grads = source_loss(models, batch, config.beta)
        opt_source.update(
            models.source.net.params() + models.psi.params(),
            src_grads["source"] + src_grads["psi"],
        )
        opt_repr.update(
            models.repr_net.params(),
            [a + b for a, b in zip(dec_grads["repr"], src_grads["repr"])],
        )

        if not (np.isfinite(dec_loss) and np.isfinite(src_loss)):
            raise FloatingPointError(
                f"non-finite loss at step {step_idx}: decoder={dec_loss} source={src_loss}"
            )
        mean_psi = float(forward(models.psi, features(models, batch.obs)).mean())
        log.append(
            LogRecord(
                step=step_idx,
                decoder_loss=dec_loss,
                source_loss=src_loss,
                mean_psi=mean_psi,
                wall_clock=time.perf_counter() - t0,
            )
        )
    return models, log


# ---------------------------------------------------------------------------
# Tabular diagnostic reference
# ---------------------------------------------------------------------------


@dataclass
class VariationalReference:
    """Non-neural alternation on an enumerated channel: decoder set to the
    exact posterior, source set to the softmax of the scaled energies."""

    bound: float
    decoder: np.ndarray
    source: np.ndarray
    bound_history: np.ndarray


def exact_variational_reference(
    ch: DiscreteChannel,
    beta: float,
    iters: int,
    init: np.ndarray | None = None,
) -> VariationalReference:
    """Alternating tabular optimisation of the variational bound.

    Per iteration: ``q <- posterior(w)`` then ``w <- softmax(beta * u)``
    with ``u(a) = sum_s' p(s'|a) log q(a|s')``; the recorded bound is the
    variational lower bound at the updated pair. At ``beta = 1`` the
    source iterates coincide with classic Blahut-Arimoto.

    The uniform start lies on a symmetric manifold that the update never
    leaves; for ``beta > 1`` the true optimum breaks that symmetry, so
    callers probing the large-beta regime should pass a slightly
    perturbed ``init``.
    """
    if beta <= 0:
        raise ValueError("beta must be positive")
    if iters < 1:
        raise ValueError("need at least one iteration")
    n = ch.n_sequences
    if init is None:
        w = np.full(n, 1.0 / n)
    else:
        w = _check_source(init, n)
    history = []
    for _ in range(iters):
        q = posterior(ch, w)
        energies = np.full(n, -np.inf)
        for i in range(n):
            row = ch.probs[i]
            mask = row > 0
            if w[i] > 0 and np.all(q[i, mask] > 0):
                energies[i] = float(row[mask] @ np.log(q[i, mask]))
        scaled = beta * energies
        scaled -= scaled.max()
        w = np.exp(scaled)
        w /= w.sum()
        history.append(variational_bound(ch, w, q))
    return VariationalReference(
        bound=history[-1],
        decoder=q,
        source=w,
        bound_history=np.asarray(history),
    )


# ---------------------------------------------------------------------------
# Snapshots
# ---------------------------------------------------------------------------


def save_models(path: str, models: SVIMModels) -> None:
    approx.save_arrays(path, models.parameter_arrays())


def load_models(path: str, config: SVIMConfig, n_actions: int = N_ACTIONS) -> SVIMModels:
    """Rebuild the model skeleton from ``config`` and fill in saved values."""
    models = init_models(config, np.random.default_rng(0), n_actions=n_actions)
    arrays = approx.load_arrays(path)
    targets = models.parameter_arrays()
    if len(arrays) != len(targets):
        raise ValueError("snapshot does not match the configured architecture")
    for dst, src in zip(targets, arrays):
        if dst.shape != src.shape:
            raise ValueError(
                f"snapshot array shape {src.shape} does not match model shape {dst.shape}"
            )
        dst[...] = src
    return models
