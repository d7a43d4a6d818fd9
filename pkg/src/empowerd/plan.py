"""Empowerment maps and the greedy behaviour policy.

Wraps any per-state empowerment estimator (exact path counting,
Blahut-Arimoto on an enumerated channel, or a trained variational model)
into full-environment value maps, heatmap exports (CSV and binary PGM
with a normalization sidecar), and a one-step greedy agent that moves to
whichever successor state the estimator values most.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .channel import blahut_arimoto, build_channel, path_count_empowerment
from .gridworld import (
    Action,
    EnvState,
    GridSpec,
    enumerate_states,
    render,
    step,
)
from .svim import SVIMModels, empowerment_estimate

EstimatorFn = Callable[[GridSpec, EnvState], float]

TIE_BREAK_ORDER: tuple[Action, ...] = (
    Action.UP,
    Action.DOWN,
    Action.LEFT,
    Action.RIGHT,
    Action.STAY,
)


@dataclass
class Estimator:
    """A per-state empowerment function with a provenance tag."""

    fn: EstimatorFn
    tag: str

    def __call__(self, spec: GridSpec, s: EnvState) -> float:
        return self.fn(spec, s)


def path_count_estimator(horizon: int) -> Estimator:
    """Exact closed-form estimator for deterministic environments, memoized
    per start state."""
    cache: dict[tuple[GridSpec, EnvState], float] = {}

    def fn(spec: GridSpec, s: EnvState) -> float:
        key = (spec, s)
        if key not in cache:
            cache[key] = path_count_empowerment(spec, s, horizon)[0]
        return cache[key]

    return Estimator(fn=fn, tag="path_count")


def ba_estimator(
    horizon: int, tol: float = 1e-9, max_iter: int = 10_000
) -> Estimator:
    """Blahut-Arimoto on the exhaustively built channel, one channel per
    start state (cached)."""
    cache: dict[tuple[GridSpec, EnvState], float] = {}

    def fn(spec: GridSpec, s: EnvState) -> float:
        key = (spec, s)
        if key not in cache:
            ch = build_channel(spec, s, horizon)
            cache[key] = blahut_arimoto(ch, tol=tol, max_iter=max_iter).capacity
        return cache[key]

    return Estimator(fn=fn, tag="blahut_arimoto")


def variational_estimator(
    models: SVIMModels, beta: float, render_size: int = 20
) -> Estimator:
    cache: dict[tuple[GridSpec, EnvState], float] = {}

    def fn(spec: GridSpec, s: EnvState) -> float:
        key = (spec, s)
        if key not in cache:
            cache[key] = empowerment_estimate(
                models, render(spec, s, size=render_size), beta
            )
        return cache[key]

    return Estimator(fn=fn, tag="variational")


@dataclass
class EmpowermentMap:
    """Per-state empowerment values over the enumerated reachable set."""

    spec: GridSpec
    horizon: int
    estimator: str
    values: dict[EnvState, float]

    def argmax(self) -> EnvState:
        return max(sorted(self.values), key=lambda s: self.values[s])

    def slice_tags(self) -> list[str]:
        return sorted({inventory_tag(self.spec, s) for s in self.values})


def inventory_tag(spec: GridSpec, s: EnvState) -> str:
    """Canonical label for the non-positional part of a state."""
    parts = []
    if spec.key_cell is not None:
        parts.append(f"key{int(s.has_key)}")
    if spec.door_cell is not None:
        parts.append(f"door{int(s.door_open)}")
    if s.boxes:
        parts.append("boxes" + "+".join(f"{x}.{y}" for x, y in s.boxes))
    return "_".join(parts) if parts else "none"


def compute_map(
    spec: GridSpec, estimator: Estimator, horizon: int
) -> EmpowermentMap:
    """Evaluate the estimator at every enumerated reachable state."""
    values = {s: estimator(spec, s) for s in enumerate_states(spec)}
    return EmpowermentMap(
        spec=spec, horizon=horizon, estimator=estimator.tag, values=values
    )


@dataclass
class GreedyPolicy:
    """One-step greedy empowerment maximisation with fixed-order tie-breaks."""

    estimator: Estimator
    tie_break: tuple[Action, ...] = TIE_BREAK_ORDER


def greedy_action(spec: GridSpec, s: EnvState, policy: GreedyPolicy) -> Action:
    """Action whose (deterministic) successor the estimator values most;
    the first action in tie-break order wins ties."""
    best_action = policy.tie_break[0]
    best_value = -np.inf
    for a in policy.tie_break:
        value = policy.estimator(spec, step(spec, s, a))
        if value > best_value:
            best_value = value
            best_action = a
    return best_action


@dataclass
class Trajectory:
    states: list[EnvState]
    actions: list[Action]
    values: list[float]


def run_agent(
    spec: GridSpec, start: EnvState, policy: GreedyPolicy, steps: int
) -> Trajectory:
    """Iterate :func:`greedy_action`; records the value of each chosen
    successor."""
    if steps < 0:
        raise ValueError("steps must be nonnegative")
    states = [start]
    actions: list[Action] = []
    values: list[float] = []
    s = start
    for _ in range(steps):
        a = greedy_action(spec, s, policy)
        s = step(spec, s, a)
        states.append(s)
        actions.append(a)
        values.append(policy.estimator(spec, s))
    return Trajectory(states=states, actions=actions, values=values)


# ---------------------------------------------------------------------------
# Exports
# ---------------------------------------------------------------------------


def map_to_csv(empmap: EmpowermentMap, path: str) -> None:
    """Rows of (x, y, inventory, value), sorted canonically."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["x", "y", "inventory", "value"])
        for s in sorted(empmap.values):
            writer.writerow(
                [
                    s.agent[0],
                    s.agent[1],
                    inventory_tag(empmap.spec, s),
                    repr(float(empmap.values[s])),
                ]
            )


def write_pgm(path: str, image: np.ndarray) -> None:
    """Binary (P5) PGM with maxval 255 from an array of values in [0, 1]."""
    image = np.asarray(image, dtype=np.float64)
    if image.ndim != 2 or np.any(image < 0) or np.any(image > 1):
        raise ValueError("PGM export expects a 2-D array of values in [0, 1]")
    data = np.round(image * 255.0).astype(np.uint8)
    with open(path, "wb") as fh:
        fh.write(f"P5\n{image.shape[1]} {image.shape[0]}\n255\n".encode("ascii"))
        fh.write(data.tobytes())


def map_to_pgms(empmap: EmpowermentMap, basename: str) -> list[str]:
    """One min-max-normalized PGM per inventory slice plus a JSON sidecar
    recording the normalization bounds. Cells without a value (walls,
    unreachable cells) render as 0."""
    spec = empmap.spec
    written = []
    sidecar: dict[str, dict] = {}
    for tag in empmap.slice_tags():
        cells = {
            s.agent: v
            for s, v in empmap.values.items()
            if inventory_tag(spec, s) == tag
        }
        lo = min(cells.values())
        hi = max(cells.values())
        span = hi - lo
        img = np.zeros((spec.height, spec.width))
        for (x, y), v in cells.items():
            img[y, x] = (v - lo) / span if span > 0 else 1.0
        path = f"{basename}_{tag}.pgm"
        write_pgm(path, img)
        written.append(path)
        sidecar[path] = {"slice": tag, "min": lo, "max": hi}
    sidecar_path = f"{basename}_norm.json"
    with open(sidecar_path, "w") as fh:
        json.dump({"normalization": "minmax", "images": sidecar}, fh, indent=2, sort_keys=True)
    written.append(sidecar_path)
    return written
