"""Bounded voxel grid simulation with per-color block inventories."""
from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Iterable, Literal, Sequence

from .dsl import COLORS, PICK, PLACE, Action

Cell = tuple[int, int, int]

OUT_OF_BOUNDS = "out_of_bounds"
CELL_OCCUPIED = "cell_occupied"
CELL_EMPTY = "cell_empty"
COLOR_MISMATCH = "color_mismatch"
INVENTORY_EXHAUSTED = "inventory_exhausted"
UNSUPPORTED = "unsupported"  # only raised when GridSpec.require_adjacency is on

VIOLATION_REASONS = (
    OUT_OF_BOUNDS,
    CELL_OCCUPIED,
    CELL_EMPTY,
    COLOR_MISMATCH,
    INVENTORY_EXHAUSTED,
    UNSUPPORTED,
)

_NEIGHBOR_OFFSETS = (
    (1, 0, 0),
    (-1, 0, 0),
    (0, 1, 0),
    (0, -1, 0),
    (0, 0, 1),
    (0, 0, -1),
)


@dataclass(frozen=True)
class GridSpec:
    """Grid bounds, color set and per-color stock.

    The default keeps the wider vertical range (ground at y=0) used for
    replaying recorded games; prompt_strict() matches the y 1..9 range the
    prompt describes and is meant for conformance checks on predictions.
    """

    x_range: tuple[int, int] = (-5, 5)
    y_range: tuple[int, int] = (0, 9)
    z_range: tuple[int, int] = (-5, 5)
    colors: tuple[str, ...] = COLORS
    per_color_stock: int = 20
    require_adjacency: bool = False

    def __post_init__(self) -> None:
        for name in ("x_range", "y_range", "z_range"):
            lo, hi = getattr(self, name)
            if lo > hi:
                raise ValueError(f"{name} is empty: {lo}..{hi}")
        if self.per_color_stock <= 0:
            raise ValueError("per_color_stock must be positive")
        if not self.colors:
            raise ValueError("colors must be non-empty")

    @classmethod
    def corpus_default(cls) -> "GridSpec":
        return cls()

    @classmethod
    def prompt_strict(cls) -> "GridSpec":
        return cls(y_range=(1, 9))

    def contains(self, x: int, y: int, z: int) -> bool:
        return (
            self.x_range[0] <= x <= self.x_range[1]
            and self.y_range[0] <= y <= self.y_range[1]
            and self.z_range[0] <= z <= self.z_range[1]
        )

    @property
    def volume(self) -> int:
        return (
            (self.x_range[1] - self.x_range[0] + 1)
            * (self.y_range[1] - self.y_range[0] + 1)
            * (self.z_range[1] - self.z_range[0] + 1)
        )


@dataclass(frozen=True)
class Violation:
    """A rejected action together with the precondition it failed."""

    action: Action
    reason: str
    turn_context: tuple[str, int, int] | None = None  # (game_id, turn_index, action_index)


@dataclass(frozen=True)
class WorldState:
    """Immutable snapshot: occupied cells plus remaining per-color stock.

    apply() returns a new state; the dicts are never mutated in place.
    """

    spec: GridSpec
    occupancy: dict[Cell, str] = field(default_factory=dict)
    inventory: dict[str, int] = field(default_factory=dict)

    def color_at(self, cell: Cell) -> str | None:
        return self.occupancy.get(cell)

    def occupied_count(self, color: str | None = None) -> int:
        if color is None:
            return len(self.occupancy)
        return sum(1 for c in self.occupancy.values() if c == color)


def new_world(spec: GridSpec | None = None) -> WorldState:
    """An empty grid with full inventories."""
    spec = spec if spec is not None else GridSpec()
    return WorldState(
        spec=spec,
        occupancy={},
        inventory={color: spec.per_color_stock for color in spec.colors},
    )


def _has_support(world: WorldState, cell: Cell) -> bool:
    x, y, z = cell
    if y == world.spec.y_range[0]:
        return True
    return any((x + dx, y + dy, z + dz) in world.occupancy for dx, dy, dz in _NEIGHBOR_OFFSETS)


def apply(world: WorldState, action: Action) -> WorldState | Violation:
    """Apply one action, returning the new state or the Violation it trips.

    place: the cell must be in bounds, unoccupied, and stock of that color
    available (plus adjacency when the spec requires it). pick: the cell must
    hold a block of exactly that color. A failed apply leaves the input world
    untouched.
    """
    cell = action.cell
    if not world.spec.contains(*cell):
        return Violation(action, OUT_OF_BOUNDS)
    if action.kind == PLACE:
        if cell in world.occupancy:
            return Violation(action, CELL_OCCUPIED)
        if world.inventory.get(action.color, 0) <= 0:
            return Violation(action, INVENTORY_EXHAUSTED)
        if world.spec.require_adjacency and not _has_support(world, cell):
            return Violation(action, UNSUPPORTED)
        occupancy = dict(world.occupancy)
        occupancy[cell] = action.color
        inventory = dict(world.inventory)
        inventory[action.color] -= 1
        return WorldState(world.spec, occupancy, inventory)
    current = world.occupancy.get(cell)
    if current is None:
        return Violation(action, CELL_EMPTY)
    if current != action.color:
        return Violation(action, COLOR_MISMATCH)
    occupancy = dict(world.occupancy)
    del occupancy[cell]
    inventory = dict(world.inventory)
    inventory[action.color] += 1
    return WorldState(world.spec, occupancy, inventory)


def apply_sequence(
    world: WorldState,
    actions: Sequence[Action],
    mode: Literal["strict", "lenient"] = "lenient",
    turn_context: tuple[str, int] | None = None,
) -> tuple[WorldState, list[Violation]]:
    """Apply actions in order.

    strict stops at the first violation and returns the state before it;
    lenient skips violating actions and keeps going, collecting them all.
    Lenient is the mode for replaying recorded games, where anomalies must
    not abort ingestion.
    """
    if mode not in ("strict", "lenient"):
        raise ValueError(f"mode must be 'strict' or 'lenient', got {mode!r}")
    current = world
    violations: list[Violation] = []
    for index, action in enumerate(actions):
        result = apply(current, action)
        if isinstance(result, Violation):
            if turn_context is not None:
                result = replace(result, turn_context=(*turn_context, index))
            violations.append(result)
            if mode == "strict":
                break
        else:
            current = result
    return current, violations


def net_actions(actions: Sequence[Action]) -> list[Action]:
    """Drop place/pick pairs that cancel out.

    A place cancels with a later pick of the same color at the same cell when
    no surviving action touches that cell in between; cancellation repeats
    until no such pair remains. Remaining actions keep their relative order.
    Idempotent, and replaying the result reaches the same final occupancy as
    the original (for sequences that replay without violations).
    """
    keep = [True] * len(actions)
    pending: dict[Cell, list[int]] = {}
    for index, action in enumerate(actions):
        history = pending.setdefault(action.cell, [])
        if action.kind == PICK and history:
            prev_index = history[-1]
            prev = actions[prev_index]
            if prev.kind == PLACE and prev.color == action.color:
                keep[prev_index] = False
                keep[index] = False
                history.pop()
                continue
        history.append(index)
    return [action for index, action in enumerate(actions) if keep[index]]


@dataclass(frozen=True)
class MistakeReport:
    """Turns whose gold actions contain cancelling place/pick pairs."""

    turn_count: int
    flagged: tuple[tuple[str, int], ...]

    @property
    def flagged_fraction(self) -> float:
        if self.turn_count == 0:
            return 0.0
        return len(self.flagged) / self.turn_count

    def to_dict(self) -> dict:
        return {
            "turn_count": self.turn_count,
            "flagged": [list(t) for t in self.flagged],
            "flagged_fraction": self.flagged_fraction,
        }


def detect_builder_mistakes(pairs: Iterable) -> MistakeReport:
    """Flag every turn where cancelling the place/pick pairs changes the gold."""
    flagged: list[tuple[str, int]] = []
    total = 0
    for pair in pairs:
        total += 1
        gold = list(pair.gold_actions)
        if net_actions(gold) != gold:
            flagged.append((pair.game_id, pair.turn_index))
    return MistakeReport(turn_count=total, flagged=tuple(flagged))


def dump_occupancy(world: WorldState) -> str:
    """Plain-text dump: one "x y z color" line per occupied cell, sorted."""
    lines = [
        f"{x} {y} {z} {color}"
        for (x, y, z), color in sorted(world.occupancy.items())
    ]
    return "\n".join(lines)
