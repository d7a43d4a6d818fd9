"""Deterministic grid-world environments with exact state enumeration.

Small discrete rooms navigated by an agent with five primitive actions
(up, down, left, right, stay). Layout presets cover an empty room, a
cross-shaped room, two rooms joined by doorways, rooms with fixed or
movable boxes, and a two-room key/door scenario.

Grids and states are immutable values and every operation is a pure
function, so the full reachable state set can be enumerated, hashed and
rendered deterministically. Coordinates are ``(x, y)`` with ``x`` growing
rightward and ``y`` growing downward; the border of every grid is wall.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field
from enum import IntEnum
from typing import Iterable, Mapping, Sequence

import numpy as np

Cell = tuple[int, int]

DEFAULT_STATE_CAP = 50_000
DEFAULT_RENDER_SIZE = 20

# Pixel intensity codes. Distinct values per entity keep rendering
# injective over the reachable state set.
PIXEL_BACKGROUND = 0.0
PIXEL_WALL = 1.0
PIXEL_AGENT = 0.5
PIXEL_BOX = 0.75
PIXEL_KEY = 0.25
PIXEL_DOOR_CLOSED = 0.6
PIXEL_DOOR_OPEN = 0.1


class InvalidStateError(ValueError):
    """State is inconsistent with the grid it is evaluated against."""


class EnumerationError(RuntimeError):
    """Exhaustive enumeration infeasible under the configured cap."""


class Action(IntEnum):
    """Primitive moves. Enumeration order is the fixed tie-break order."""

    UP = 0
    DOWN = 1
    LEFT = 2
    RIGHT = 3
    STAY = 4


N_ACTIONS = len(Action)

_DELTAS: dict[int, Cell] = {
    Action.UP: (0, -1),
    Action.DOWN: (0, 1),
    Action.LEFT: (-1, 0),
    Action.RIGHT: (1, 0),
    Action.STAY: (0, 0),
}

ActionSequence = tuple[Action, ...]


@dataclass(frozen=True)
class GridSpec:
    """Static layout of one environment.

    ``walls`` always contains the full border. ``door_cell`` and
    ``key_cell`` are only set for the key/door variant; ``box_cells``
    holds the initial box positions for the box-room variants.
    """

    width: int
    height: int
    walls: frozenset[Cell]
    variant: str = "custom"
    door_cell: Cell | None = None
    key_cell: Cell | None = None
    box_cells: tuple[Cell, ...] = ()
    movable_boxes: bool = False
    start_cell: Cell | None = None

    def __post_init__(self) -> None:
        if self.width < 3 or self.height < 3:
            raise ValueError("grid needs at least a 1-cell interior inside the border")
        occupied: list[Cell] = list(self.walls) + list(self.box_cells)
        if self.door_cell is not None:
            occupied.append(self.door_cell)
        if self.key_cell is not None:
            occupied.append(self.key_cell)
        for cell in occupied:
            if not self.in_bounds(cell):
                raise ValueError(f"cell {cell} outside {self.width}x{self.height} grid")
        special = [c for c in (self.door_cell, self.key_cell) if c is not None]
        special.extend(self.box_cells)
        if len(set(special)) != len(special) or any(c in self.walls for c in special):
            raise ValueError("walls, door, key and box cells must be pairwise disjoint")
        if len(set(self.box_cells)) != len(self.box_cells):
            raise ValueError("duplicate box cells")
        for x in range(self.width):
            if (x, 0) not in self.walls or (x, self.height - 1) not in self.walls:
                raise ValueError("border cells must be walls")
        for y in range(self.height):
            if (0, y) not in self.walls or (self.width - 1, y) not in self.walls:
                raise ValueError("border cells must be walls")
        if self.start_cell is None:
            object.__setattr__(self, "start_cell", self._default_start())
        if self.start_cell not in self.floor_cells():
            raise ValueError(f"start cell {self.start_cell} is not free floor")

    def _default_start(self) -> Cell:
        for cell in sorted(self.floor_cells()):
            return cell
        raise ValueError("grid has no free floor cell")

    def in_bounds(self, cell: Cell) -> bool:
        x, y = cell
        return 0 <= x < self.width and 0 <= y < self.height

    def floor_cells(self) -> set[Cell]:
        """Plain floor: not wall, door, key or initial box."""
        blocked = set(self.walls) | set(self.box_cells)
        if self.door_cell is not None:
            blocked.add(self.door_cell)
        if self.key_cell is not None:
            blocked.add(self.key_cell)
        return {
            (x, y)
            for x in range(self.width)
            for y in range(self.height)
            if (x, y) not in blocked
        }


@dataclass(frozen=True, order=True)
class EnvState:
    """Dynamic part of the world: agent position plus inventory flags.

    Orderable and hashable so enumerated state sets have one canonical
    ordering.
    """

    agent: Cell
    has_key: bool = False
    door_open: bool = False
    boxes: tuple[Cell, ...] = ()


def initial_state(spec: GridSpec, agent: Cell | None = None) -> EnvState:
    cell = spec.start_cell if agent is None else agent
    assert cell is not None
    return EnvState(agent=cell, has_key=False, door_open=False, boxes=spec.box_cells)


def validate_state(spec: GridSpec, s: EnvState) -> None:
    """Raise :class:`InvalidStateError` unless ``s`` is consistent with ``spec``."""
    if not spec.in_bounds(s.agent) or s.agent in spec.walls:
        raise InvalidStateError(f"agent at {s.agent} is out of bounds or inside a wall")
    if s.agent in s.boxes:
        raise InvalidStateError(f"agent at {s.agent} overlaps a box")
    if s.agent == spec.door_cell and not s.door_open:
        raise InvalidStateError("agent cannot stand on a closed door")
    if s.agent == spec.key_cell and not s.has_key:
        raise InvalidStateError("agent on the key cell implies the key was picked up")
    if s.door_open and not s.has_key:
        raise InvalidStateError("door cannot be open without the key")
    if s.has_key and spec.key_cell is None:
        raise InvalidStateError("state holds a key but the grid has none")
    if s.door_open and spec.door_cell is None:
        raise InvalidStateError("state opened a door but the grid has none")
    if len(s.boxes) != len(spec.box_cells):
        raise InvalidStateError("box count differs from the grid layout")
    if len(set(s.boxes)) != len(s.boxes):
        raise InvalidStateError("boxes overlap")
    for box in s.boxes:
        if not spec.in_bounds(box) or box in spec.walls:
            raise InvalidStateError(f"box at {box} is out of bounds or inside a wall")
        if box == spec.door_cell or box == spec.key_cell:
            raise InvalidStateError(f"box at {box} sits on a door or key cell")


def _shift(cell: Cell, action: Action) -> Cell:
    dx, dy = _DELTAS[action]
    return (cell[0] + dx, cell[1] + dy)


def step(spec: GridSpec, s: EnvState, a: Action) -> EnvState:
    """One deterministic transition.

    Moves into walls, closed doors or immovable boxes leave the position
    unchanged. A movable box is pushed one cell when the cell behind it is
    plain free floor. Entering the key cell picks the key up; entering the
    door cell while holding the key opens the door permanently.
    """
    validate_state(spec, s)
    a = Action(a)
    target = _shift(s.agent, a)
    agent = s.agent
    has_key = s.has_key
    door_open = s.door_open
    boxes = s.boxes

    blocked = target in spec.walls or not spec.in_bounds(target)
    if not blocked and target == spec.door_cell and not door_open:
        if has_key:
            door_open = True
        else:
            blocked = True
    if not blocked and target in boxes:
        if not spec.movable_boxes:
            blocked = True
        else:
            behind = _shift(target, a)
            free = (
                spec.in_bounds(behind)
                and behind not in spec.walls
                and behind not in boxes
                and behind != spec.door_cell
                and behind != spec.key_cell
                and a is not Action.STAY
            )
            if free:
                boxes = tuple(behind if b == target else b for b in boxes)
            else:
                blocked = True
    if not blocked:
        agent = target
    if agent == spec.key_cell and not has_key:
        has_key = True
    return EnvState(agent=agent, has_key=has_key, door_open=door_open, boxes=boxes)


def rollout(spec: GridSpec, s: EnvState, seq: Sequence[Action]) -> EnvState:
    """Compose :func:`step` over an action sequence."""
    out = s
    for a in seq:
        out = step(spec, out, a)
    return out


def enumerate_states(
    spec: GridSpec,
    start: EnvState | None = None,
    cap: int = DEFAULT_STATE_CAP,
) -> list[EnvState]:
    """All states reachable from ``start`` (default: the designated start).

    Returned in canonical sorted order; the set is closed under
    :func:`step`. Raises :class:`EnumerationError` when more than ``cap``
    states are discovered.
    """
    root = initial_state(spec) if start is None else start
    validate_state(spec, root)
    seen = {root}
    frontier = deque([root])
    while frontier:
        s = frontier.popleft()
        for a in Action:
            nxt = step(spec, s, a)
            if nxt not in seen:
                seen.add(nxt)
                if len(seen) > cap:
                    raise EnumerationError(
                        f"state enumeration exceeds cap of {cap} states"
                    )
                frontier.append(nxt)
    return sorted(seen)


def valid_start_states(spec: GridSpec) -> list[EnvState]:
    """Default-inventory states with the agent on each free floor cell."""
    return sorted(initial_state(spec, agent=c) for c in spec.floor_cells())


def render(spec: GridSpec, s: EnvState, size: int = DEFAULT_RENDER_SIZE) -> np.ndarray:
    """Draw the state as a ``size``x``size`` grayscale image in [0, 1].

    One grid cell maps to one pixel, anchored top-left; grids larger than
    the render resolution are rejected. The agent is drawn last so it
    covers the cell it stands on.
    """
    if spec.width > size or spec.height > size:
        raise ValueError(
            f"grid {spec.width}x{spec.height} exceeds render resolution {size}x{size}"
        )
    validate_state(spec, s)
    img = np.full((size, size), PIXEL_BACKGROUND, dtype=np.float64)
    for (x, y) in spec.walls:
        img[y, x] = PIXEL_WALL
    if spec.door_cell is not None:
        dx, dy = spec.door_cell
        img[dy, dx] = PIXEL_DOOR_OPEN if s.door_open else PIXEL_DOOR_CLOSED
    if spec.key_cell is not None and not s.has_key:
        kx, ky = spec.key_cell
        img[ky, kx] = PIXEL_KEY
    for (bx, by) in s.boxes:
        img[by, bx] = PIXEL_BOX
    ax, ay = s.agent
    img[ay, ax] = PIXEL_AGENT
    return img


def ascii_map(spec: GridSpec, s: EnvState) -> str:
    """Debug dump: ``#`` wall, ``.`` floor, ``A`` agent, ``K`` key, ``D``/``d``
    closed/open door, ``B`` box."""
    validate_state(spec, s)
    rows = []
    for y in range(spec.height):
        row = []
        for x in range(spec.width):
            cell = (x, y)
            if cell == s.agent:
                row.append("A")
            elif cell in spec.walls:
                row.append("#")
            elif cell in s.boxes:
                row.append("B")
            elif cell == spec.door_cell:
                row.append("d" if s.door_open else "D")
            elif cell == spec.key_cell and not s.has_key:
                row.append("K")
            else:
                row.append(".")
        rows.append("".join(row))
    return "\n".join(rows)


# ---------------------------------------------------------------------------
# Layout presets
# ---------------------------------------------------------------------------


def _border(width: int, height: int) -> set[Cell]:
    cells: set[Cell] = set()
    for x in range(width):
        cells.add((x, 0))
        cells.add((x, height - 1))
    for y in range(height):
        cells.add((0, y))
        cells.add((width - 1, y))
    return cells


def empty_room(width: int = 10, height: int = 10) -> GridSpec:
    return GridSpec(width, height, frozenset(_border(width, height)), variant="empty_room")


def cross_room(width: int = 11, height: int = 11, arm: int = 3) -> GridSpec:
    """Plus-shaped room: a horizontal and a vertical corridor of width ``arm``
    crossing at the grid center."""
    if arm % 2 == 0 or arm < 1:
        raise ValueError("corridor width must be odd and positive")
    cx, cy = width // 2, height // 2
    half = arm // 2
    walls = set(_border(width, height))
    for x in range(1, width - 1):
        for y in range(1, height - 1):
            in_horizontal = abs(y - cy) <= half
            in_vertical = abs(x - cx) <= half
            if not (in_horizontal or in_vertical):
                walls.add((x, y))
    return GridSpec(width, height, frozenset(walls), variant="cross_room")


def two_rooms(
    width: int = 9, height: int = 7, gap_rows: tuple[int, ...] = (2, 4)
) -> GridSpec:
    """Two rooms separated by a vertical wall with open doorway gaps."""
    divider = width // 2
    walls = set(_border(width, height))
    for y in range(1, height - 1):
        if y not in gap_rows:
            walls.add((divider, y))
    return GridSpec(width, height, frozenset(walls), variant="two_rooms")


def box_room(
    width: int = 9, height: int = 9, movable: bool = True, row: bool = False
) -> GridSpec:
    """Empty room with one box, or a centered row of four movable boxes."""
    cx, cy = width // 2, height // 2
    if row:
        boxes = tuple((cx - 2 + i, cy) for i in range(4))
        variant = "box_room_row"
        movable = True
    else:
        boxes = ((cx, cy),)
        variant = "box_room_movable" if movable else "box_room_fixed"
    return GridSpec(
        width,
        height,
        frozenset(_border(width, height)),
        variant=variant,
        box_cells=boxes,
        movable_boxes=movable,
    )


def key_door(width: int = 11, height: int = 5, divider: int | None = None) -> GridSpec:
    """An ante-room and a larger room split by a wall with a locked door;
    the key lies on the ante-room side of the door.

    The dividing wall sits at roughly one third of the width by default,
    which keeps the ante-room small relative to the room behind the door.
    """
    if divider is None:
        divider = max(2, (width - 2) // 3 + 1)
    if not 1 < divider < width - 2:
        raise ValueError("divider must leave room on both sides")
    door = (divider, height // 2)
    key = (divider - 1, height // 2)
    walls = set(_border(width, height))
    for y in range(1, height - 1):
        if (divider, y) != door:
            walls.add((divider, y))
    return GridSpec(
        width,
        height,
        frozenset(walls),
        variant="key_door",
        door_cell=door,
        key_cell=key,
    )


_PRESETS = {
    "empty_room": lambda w, h: empty_room(w, h),
    "cross_room": lambda w, h: cross_room(w, h),
    "two_rooms": lambda w, h: two_rooms(w, h),
    "box_room_fixed": lambda w, h: box_room(w, h, movable=False),
    "box_room_movable": lambda w, h: box_room(w, h, movable=True),
    "box_room_row": lambda w, h: box_room(w, h, row=True),
    "key_door": lambda w, h: key_door(w, h),
}

_DEFAULT_DIMS = {
    "empty_room": (10, 10),
    "cross_room": (11, 11),
    "two_rooms": (9, 7),
    "box_room_fixed": (9, 9),
    "box_room_movable": (9, 9),
    "box_room_row": (9, 9),
    "key_door": (11, 5),
}


def parse_cell(text: str) -> Cell:
    parts = text.split(",")
    if len(parts) != 2:
        raise ValueError(f"expected 'x,y', got {text!r}")
    return (int(parts[0].strip()), int(parts[1].strip()))


def parse_cells(text: str) -> tuple[Cell, ...]:
    text = text.strip()
    if not text:
        return ()
    return tuple(parse_cell(part) for part in text.split(";") if part.strip())


def format_cell(cell: Cell) -> str:
    return f"{cell[0]},{cell[1]}"


def format_cells(cells: Iterable[Cell]) -> str:
    return "; ".join(format_cell(c) for c in cells)


def spec_from_mapping(values: Mapping[str, str]) -> GridSpec:
    """Build a grid from plain-text key/value settings.

    ``variant`` selects a preset (with ``width``/``height``); explicit
    ``walls``/``door_cell``/``key_cell``/``box_cells``/``start_cell`` keys
    override the preset, and ``variant = custom`` requires an explicit wall
    list.
    """
    variant = values.get("variant", "custom").strip()
    default_w, default_h = _DEFAULT_DIMS.get(variant, (9, 7))
    width = int(values.get("width", default_w))
    height = int(values.get("height", default_h))
    if variant in _PRESETS:
        base = _PRESETS[variant](width, height)
    elif variant == "custom":
        if "walls" not in values:
            raise ValueError("custom environments need an explicit 'walls' list")
        base = None
    else:
        raise ValueError(f"unknown environment variant {variant!r}")

    def cell_or(default: Cell | None, key: str) -> Cell | None:
        return parse_cell(values[key]) if key in values else default

    walls = (
        frozenset(parse_cells(values["walls"])) | frozenset(_border(width, height))
        if "walls" in values
        else base.walls  # type: ignore[union-attr]
    )
    return GridSpec(
        width=width,
        height=height,
        walls=walls,
        variant=variant,
        door_cell=cell_or(base.door_cell if base else None, "door_cell"),
        key_cell=cell_or(base.key_cell if base else None, "key_cell"),
        box_cells=(
            parse_cells(values["box_cells"])
            if "box_cells" in values
            else (base.box_cells if base else ())
        ),
        movable_boxes=(
            values.get("movable_boxes", "").strip().lower() in ("1", "true", "yes")
            if "movable_boxes" in values
            else (base.movable_boxes if base else False)
        ),
        start_cell=cell_or(base.start_cell if base else None, "start_cell"),
    )


def spec_to_mapping(spec: GridSpec) -> dict[str, str]:
    """Inverse of :func:`spec_from_mapping` up to preset-implied defaults."""
    out = {
        "variant": spec.variant,
        "width": str(spec.width),
        "height": str(spec.height),
    }
    if spec.variant == "custom" or spec.variant not in _PRESETS:
        out["walls"] = format_cells(sorted(spec.walls))
    if spec.door_cell is not None:
        out["door_cell"] = format_cell(spec.door_cell)
    if spec.key_cell is not None:
        out["key_cell"] = format_cell(spec.key_cell)
    if spec.box_cells:
        out["box_cells"] = format_cells(spec.box_cells)
        out["movable_boxes"] = "true" if spec.movable_boxes else "false"
    if spec.start_cell is not None:
        out["start_cell"] = format_cell(spec.start_cell)
    return out
