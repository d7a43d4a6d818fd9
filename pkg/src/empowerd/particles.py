"""Importance-sampling estimator of channel capacity.

A fixed set of action-sequence particles carries adaptive log-space
importance weights. Each iteration computes a per-particle distortion
(the Monte-Carlo log-ratio of the particle's transition row against the
weighted mixture over particles) and tilts the weights by it, mirroring
one Blahut-Arimoto update. With one particle per sequence and analytic
expectations instead of sampled futures, the iteration reproduces BA
exactly; in sampled mode it is a Monte-Carlo cross-check.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, replace

import numpy as np

from .channel import DiscreteChannel


@dataclass(frozen=True)
class ISConfig:
    """``n_particles`` sequences, ``n_futures`` sampled terminals each.

    ``exhaustive`` uses every channel row once (requires ``n_particles``
    equal to the number of sequences); ``analytic_futures`` replaces
    sampled terminals with exact expectations over the row.
    """

    n_particles: int
    n_futures: int
    iterations: int
    seed: int = 0
    exhaustive: bool = False
    analytic_futures: bool = False

    def __post_init__(self) -> None:
        for name in ("n_particles", "n_futures", "iterations"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")


@dataclass(frozen=True)
class ParticleSet:
    """Sequence indices into the channel rows, log weights, and per-particle
    future-state samples (column indices), or None in analytic mode."""

    seq_indices: np.ndarray
    log_weights: np.ndarray
    futures: np.ndarray | None

    def __post_init__(self) -> None:
        if abs(np.exp(self.log_weights).sum() - 1.0) > 1e-10:
            raise ValueError("particle weights must sum to 1")
        if self.futures is not None and self.futures.shape[0] != self.seq_indices.shape[0]:
            raise ValueError("futures must align with particles")

    @property
    def weights(self) -> np.ndarray:
        return np.exp(self.log_weights)


def init_particles(
    ch: DiscreteChannel, cfg: ISConfig, rng: np.random.Generator
) -> ParticleSet:
    """Uniformly drawn particles with equal weights and sampled futures.

    Sequences are drawn without replacement (the initial source is
    uniform), so more particles than sequences is rejected.
    """
    n_rows = ch.n_sequences
    if cfg.n_particles > n_rows:
        raise ValueError(
            f"{cfg.n_particles} particles exceed the {n_rows} available sequences"
        )
    if cfg.exhaustive:
        if cfg.n_particles != n_rows:
            raise ValueError("exhaustive mode needs one particle per sequence")
        seq_indices = np.arange(n_rows, dtype=np.int64)
    else:
        seq_indices = np.sort(
            rng.choice(n_rows, size=cfg.n_particles, replace=False)
        ).astype(np.int64)
    log_weights = np.full(cfg.n_particles, -np.log(cfg.n_particles))
    if cfg.analytic_futures:
        futures = None
    else:
        futures = np.empty((cfg.n_particles, cfg.n_futures), dtype=np.int64)
        for i, row_idx in enumerate(seq_indices):
            futures[i] = rng.choice(ch.n_states, size=cfg.n_futures, p=ch.probs[row_idx])
    return ParticleSet(seq_indices=seq_indices, log_weights=log_weights, futures=futures)


def distortion(ps: ParticleSet, ch: DiscreteChannel) -> np.ndarray:
    """Per-particle distortion ``D_i``.

    Sampled mode: ``(1/J) sum_k log[p(s'_k|a_i) / p_mix(s'_k)]`` over the
    particle's futures, where ``p_mix`` is the weight-mixed transition
    over particles. Analytic mode replaces the sample mean with the exact
    expectation over the particle's row.
    """
    rows = ch.probs[ps.seq_indices]
    mix = ps.weights @ rows
    if ps.futures is None:
        log_m = np.full_like(mix, -np.inf)
        pos = mix > 0
        log_m[pos] = np.log(mix[pos])
        with np.errstate(invalid="ignore"):
            safe = np.where(rows > 0, rows, 1.0)
            terms = np.where(rows > 0, rows * (np.log(safe) - log_m[None, :]), 0.0)
        return terms.sum(axis=1)
    out = np.empty(ps.seq_indices.shape[0])
    for i in range(out.shape[0]):
        obs = ps.futures[i]
        p_row = ch.probs[ps.seq_indices[i], obs]
        p_mix = mix[obs]
        if np.any(p_mix <= 0):
            raise AssertionError(
                "mixture probability vanished at an observed future state"
            )
        out[i] = float(np.mean(np.log(p_row) - np.log(p_mix)))
    return out


def weight_update(ps: ParticleSet, d: np.ndarray) -> ParticleSet:
    """Tilt the log weights by the distortion and renormalize in log space."""
    d = np.asarray(d, dtype=np.float64)
    if d.shape != ps.log_weights.shape:
        raise ValueError("distortion must hold one value per particle")
    tilted = ps.log_weights + d
    m = tilted.max()
    log_norm = m + np.log(np.exp(tilted - m).sum())
    return replace(ps, log_weights=tilted - log_norm)


def is_capacity(
    ch: DiscreteChannel, cfg: ISConfig
) -> tuple[float, np.ndarray]:
    """Iterated distortion/tilt updates; the estimate is the weighted mean
    distortion at the final iteration. Returns (estimate, history)."""
    rng = np.random.default_rng(cfg.seed)
    ps = init_particles(ch, cfg, rng)
    history = np.empty(cfg.iterations)
    for t in range(cfg.iterations):
        d = distortion(ps, ch)
        history[t] = float(ps.weights @ d)
        ps = weight_update(ps, d)
    return float(history[-1]), history


def history_to_csv(history: np.ndarray, path: str) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["iteration", "estimate"])
        for i, value in enumerate(history):
            writer.writerow([i, repr(float(value))])
