"""Exact information-theoretic machinery on enumerated channels.

A channel here is the row-stochastic matrix ``p(s' | a, s)`` over all
``N^K`` action sequences for one fixed start state. This module builds
such channels by exhaustive rollout, evaluates mutual information and the
variational lower bound on it, computes capacity with Blahut-Arimoto, and
provides the closed-form path-counting solution that serves as the
ground-truth oracle for deterministic environments.

All information quantities are in nats.
"""

from __future__ import annotations

import csv
import itertools
import json
from dataclasses import dataclass
from typing import Hashable, Sequence

import numpy as np

from .gridworld import (
    Action,
    ActionSequence,
    EnumerationError,
    EnvState,
    GridSpec,
    N_ACTIONS,
    rollout,
    step,
    validate_state,
)

DEFAULT_SEQUENCE_CAP = 5**6
DEFAULT_TOL = 1e-9
DEFAULT_MAX_ITER = 10_000

_ROW_SUM_TOL = 1e-12


@dataclass(frozen=True, eq=False)
class DiscreteChannel:
    """``p(s'|a, s)`` for a fixed start state.

    ``probs[i, j]`` is the probability that sequence ``sequences[i]``
    terminates in ``states[j]``. Rows of deterministic channels are exact
    point masses. Duplicate rows are kept so row indices always align with
    the enumerated action sequences.
    """

    probs: np.ndarray
    sequences: tuple[Hashable, ...]
    states: tuple[Hashable, ...]

    def __post_init__(self) -> None:
        probs = np.asarray(self.probs, dtype=np.float64)
        object.__setattr__(self, "probs", probs)
        if probs.ndim != 2:
            raise ValueError("channel matrix must be 2-D")
        if probs.shape != (len(self.sequences), len(self.states)):
            raise ValueError("channel matrix shape does not match its labels")
        if np.any(probs < 0):
            raise ValueError("channel probabilities must be nonnegative")
        if np.any(np.abs(probs.sum(axis=1) - 1.0) > _ROW_SUM_TOL):
            raise ValueError("channel rows must sum to 1")

    @property
    def n_sequences(self) -> int:
        return self.probs.shape[0]

    @property
    def n_states(self) -> int:
        return self.probs.shape[1]

    def is_deterministic(self) -> bool:
        return bool(np.all(np.max(self.probs, axis=1) == 1.0))

    @classmethod
    def from_matrix(cls, probs: np.ndarray) -> "DiscreteChannel":
        probs = np.asarray(probs, dtype=np.float64)
        return cls(
            probs=probs,
            sequences=tuple(range(probs.shape[0])),
            states=tuple(range(probs.shape[1])),
        )


@dataclass(frozen=True)
class CapacityResult:
    """Capacity in nats plus the achieving source and convergence trace."""

    capacity: float
    source: np.ndarray
    iterations: int
    converged: bool
    capacity_history: np.ndarray


def _check_source(w: np.ndarray, n: int) -> np.ndarray:
    w = np.asarray(w, dtype=np.float64)
    if w.shape != (n,):
        raise ValueError(f"source has shape {w.shape}, channel has {n} sequences")
    if np.any(w < 0) or abs(w.sum() - 1.0) > _ROW_SUM_TOL:
        raise ValueError("source must be a probability vector")
    return w


def _xlogx(p: np.ndarray) -> np.ndarray:
    """Elementwise ``p * log(p)`` with the 0*log(0) = 0 convention."""
    out = np.zeros_like(p)
    mask = p > 0
    out[mask] = p[mask] * np.log(p[mask])
    return out


def entropy(p: np.ndarray) -> float:
    return float(-_xlogx(np.asarray(p, dtype=np.float64)).sum())


def _logsumexp(x: np.ndarray) -> float:
    m = np.max(x)
    if not np.isfinite(m):
        return float(m)
    return float(m + np.log(np.exp(x - m).sum()))


def all_action_sequences(horizon: int) -> list[ActionSequence]:
    """Every length-``horizon`` sequence in lexicographic action order."""
    return [tuple(seq) for seq in itertools.product(list(Action), repeat=horizon)]


def build_channel(
    spec: GridSpec,
    start: EnvState,
    horizon: int,
    cap: int = DEFAULT_SEQUENCE_CAP,
) -> DiscreteChannel:
    """Materialize ``p(s'|a, s)`` by rolling out every action sequence.

    The environment is deterministic, so each row is an exact point mass
    on the rollout terminal. Columns enumerate the distinct terminal
    states in sorted order.
    """
    validate_state(spec, start)
    n_rows = N_ACTIONS**horizon
    if n_rows > cap:
        raise EnumerationError(
            f"{N_ACTIONS}^{horizon} = {n_rows} sequences exceeds cap of {cap}"
        )
    sequences = all_action_sequences(horizon)
    terminals = [rollout(spec, start, seq) for seq in sequences]
    states = sorted(set(terminals))
    index = {s: j for j, s in enumerate(states)}
    probs = np.zeros((n_rows, len(states)), dtype=np.float64)
    for i, terminal in enumerate(terminals):
        probs[i, index[terminal]] = 1.0
    return DiscreteChannel(probs=probs, sequences=tuple(sequences), states=tuple(states))


def terminal_marginal(ch: DiscreteChannel, w: np.ndarray) -> np.ndarray:
    """State marginal ``p(s'|s) = sum_a p(s'|a, s) w(a)``."""
    w = _check_source(w, ch.n_sequences)
    return w @ ch.probs


def mutual_information(ch: DiscreteChannel, w: np.ndarray) -> float:
    """Exact ``I(a, s') = H(s') - H(s'|a)`` under source ``w``, in nats."""
    w = _check_source(w, ch.n_sequences)
    marginal = w @ ch.probs
    h_marginal = entropy(marginal)
    h_rows = -_xlogx(ch.probs).sum(axis=1)
    value = h_marginal - float(w @ h_rows)
    return max(value, 0.0)


def _row_divergences(probs: np.ndarray, marginal: np.ndarray) -> np.ndarray:
    """``D(a) = KL(p(.|a) || marginal)`` per row; rows with support outside
    the marginal get +inf."""
    log_m = np.full_like(marginal, -np.inf)
    pos = marginal > 0
    log_m[pos] = np.log(marginal[pos])
    with np.errstate(invalid="ignore"):
        safe = np.where(probs > 0, probs, 1.0)
        terms = np.where(probs > 0, probs * (np.log(safe) - log_m[None, :]), 0.0)
    return terms.sum(axis=1)


def blahut_arimoto(
    ch: DiscreteChannel,
    tol: float = DEFAULT_TOL,
    max_iter: int = DEFAULT_MAX_ITER,
) -> CapacityResult:
    """Channel capacity by the classic alternating fixed-point iteration.

    Starts from the uniform source and stops once successive capacity
    lower bounds differ by less than ``tol``. The recorded history is the
    per-iteration lower bound, which is nondecreasing.
    """
    if tol <= 0:
        raise ValueError("tol must be positive")
    n = ch.n_sequences
    log_w = np.full(n, -np.log(n), dtype=np.float64)
    history: list[float] = []
    converged = False
    for _ in range(max_iter):
        w = np.exp(log_w)
        marginal = w @ ch.probs
        div = _row_divergences(ch.probs, marginal)
        bound = _logsumexp(log_w + div)
        history.append(bound)
        log_w = log_w + div
        log_w -= _logsumexp(log_w)
        if len(history) > 1 and abs(history[-1] - history[-2]) < tol:
            converged = True
            break
    source = np.exp(log_w)
    source /= source.sum()
    return CapacityResult(
        capacity=history[-1],
        source=source,
        iterations=len(history),
        converged=converged,
        capacity_history=np.asarray(history),
    )


def posterior(ch: DiscreteChannel, w: np.ndarray) -> np.ndarray:
    """Exact action posterior ``p(a|s') = p(s'|a) w(a) / p(s')``.

    Columns with zero marginal stay all-zero (those states are never
    reached under ``w``); all other columns are normalized.
    """
    w = _check_source(w, ch.n_sequences)
    joint = ch.probs * w[:, None]
    marginal = joint.sum(axis=0)
    q = np.zeros_like(joint)
    reached = marginal > 0
    q[:, reached] = joint[:, reached] / marginal[reached]
    return q


def variational_bound(ch: DiscreteChannel, w: np.ndarray, q: np.ndarray) -> float:
    """Lower bound ``H(a) + sum_a w(a) sum_s' p(s'|a) log q(a|s')``.

    ``q`` is a decoder table with one distribution over sequences per
    state column. Equals the capacity when ``w`` is capacity-achieving and
    ``q`` is the exact posterior; can be ``-inf`` for decoders assigning
    zero mass to an observed pair.
    """
    w = _check_source(w, ch.n_sequences)
    q = np.asarray(q, dtype=np.float64)
    if q.shape != ch.probs.shape:
        raise ValueError("decoder table shape must match the channel matrix")
    if np.any(q < 0) or np.any(np.abs(q.sum(axis=0) - 1.0) > 1e-9):
        raise ValueError("decoder columns must each be a normalized distribution")
    value = entropy(w)
    for i in range(ch.n_sequences):
        if w[i] == 0:
            continue
        row = ch.probs[i]
        mask = row > 0
        if np.any(q[i, mask] <= 0):
            return float("-inf")
        value += w[i] * float(row[mask] @ np.log(q[i, mask]))
    return value


def ba_step_from_variational(
    ch: DiscreteChannel, w: np.ndarray, beta: float
) -> np.ndarray:
    """One source update through the variational route.

    Sets the decoder to the exact posterior under ``w`` and returns
    ``w' ∝ exp(beta * E_{p(s'|a)}[log q(a|s')])``. At ``beta = 1`` this is
    exactly one classic Blahut-Arimoto update.
    """
    if beta <= 0:
        raise ValueError("beta must be positive")
    w = _check_source(w, ch.n_sequences)
    q = posterior(ch, w)
    energies = np.full(ch.n_sequences, -np.inf, dtype=np.float64)
    for i in range(ch.n_sequences):
        row = ch.probs[i]
        mask = row > 0
        if w[i] == 0 or np.any(q[i, mask] <= 0):
            continue
        energies[i] = float(row[mask] @ np.log(q[i, mask]))
    scaled = beta * energies
    log_z = _logsumexp(scaled)
    out = np.exp(scaled - log_z)
    return out / out.sum()


# ---------------------------------------------------------------------------
# Path counting: the deterministic-environment closed form
# ---------------------------------------------------------------------------


def reachable_state_counts(
    spec: GridSpec, start: EnvState, horizon: int
) -> dict[EnvState, int]:
    """For each state reachable in exactly ``horizon`` steps, the number of
    action sequences terminating there. Dynamic programming over the
    transition graph, so cost grows with reachable states rather than
    ``N^K``."""
    validate_state(spec, start)
    counts: dict[EnvState, int] = {start: 1}
    transition: dict[tuple[EnvState, Action], EnvState] = {}
    for _ in range(horizon):
        nxt: dict[EnvState, int] = {}
        for s, c in counts.items():
            for a in Action:
                key = (s, a)
                if key not in transition:
                    transition[key] = step(spec, s, a)
                t = transition[key]
                nxt[t] = nxt.get(t, 0) + c
        counts = nxt
    return counts


def path_count_empowerment(
    spec: GridSpec,
    start: EnvState,
    horizon: int,
    cap: int = DEFAULT_SEQUENCE_CAP,
) -> tuple[float, np.ndarray]:
    """Closed-form empowerment of a deterministic environment.

    Returns ``log n(s)`` where ``n(s)`` is the number of distinct states
    reachable at the horizon, together with the optimal source, which
    weights each sequence inversely to how many sequences share its
    terminal state.
    """
    n_rows = N_ACTIONS**horizon
    if n_rows > cap:
        raise EnumerationError(
            f"{N_ACTIONS}^{horizon} = {n_rows} sequences exceeds cap of {cap}"
        )
    validate_state(spec, start)
    terminals = [rollout(spec, start, seq) for seq in all_action_sequences(horizon)]
    counts: dict[EnvState, int] = {}
    for t in terminals:
        counts[t] = counts.get(t, 0) + 1
    n_states = len(counts)
    source = np.array(
        [1.0 / (counts[t] * n_states) for t in terminals], dtype=np.float64
    )
    return float(np.log(n_states)), source


def path_count_from_channel(ch: DiscreteChannel) -> tuple[float, np.ndarray]:
    """Path-counting capacity straight off a deterministic channel matrix."""
    if not ch.is_deterministic():
        raise ValueError("path counting requires a deterministic channel")
    cols = np.argmax(ch.probs, axis=1)
    col_counts = np.bincount(cols, minlength=ch.n_states)
    reachable = int(np.count_nonzero(col_counts))
    source = 1.0 / (col_counts[cols] * reachable)
    return float(np.log(reachable)), source


# ---------------------------------------------------------------------------
# Exports
# ---------------------------------------------------------------------------


def channel_to_csv(ch: DiscreteChannel, path: str) -> None:
    """Matrix dump: one row per action sequence, one column per state."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["sequence"] + [_label(s) for s in ch.states])
        for i, seq in enumerate(ch.sequences):
            writer.writerow([_label(seq)] + [repr(float(v)) for v in ch.probs[i]])


def channel_from_csv(path: str) -> DiscreteChannel:
    """Read a channel written by :func:`channel_to_csv`. Labels come back
    as strings."""
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows or rows[0][:1] != ["sequence"]:
        raise ValueError("not a channel CSV (missing 'sequence' header)")
    states = tuple(rows[0][1:])
    sequences = tuple(r[0] for r in rows[1:])
    probs = np.array([[float(v) for v in r[1:]] for r in rows[1:]], dtype=np.float64)
    return DiscreteChannel(probs=probs, sequences=sequences, states=states)


def source_to_csv(w: np.ndarray, sequences: Sequence[Hashable], path: str) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["sequence", "probability"])
        for seq, p in zip(sequences, w):
            writer.writerow([_label(seq), repr(float(p))])


def capacity_result_to_json(result: CapacityResult, bits: bool = False) -> str:
    scale = 1.0 / np.log(2.0) if bits else 1.0
    payload = {
        "capacity": result.capacity * scale,
        "units": "bits" if bits else "nats",
        "iterations": result.iterations,
        "converged": result.converged,
        "source": [float(p) for p in result.source],
        "capacity_history": [float(v * scale) for v in result.capacity_history],
    }
    return json.dumps(payload, indent=2, sort_keys=True)


def _label(obj: Hashable) -> str:
    if isinstance(obj, tuple) and obj and all(isinstance(a, Action) for a in obj):
        return "".join(a.name[0] for a in obj)  # e.g. UDLRS
    return str(obj)
