"""Best-effort importer for raw dialogue game logs.

The raw logs this handles are per-game JSON observation files holding a
"WorldStates" list, where each state carries the cumulative chat history
("<Architect> msg" strings) and the full set of blocks currently in the
grid. Diffing consecutive states recovers the event stream: freshly
appended chat lines become utterances, blocks that appear become place
actions and blocks that vanish become pick actions.

Everything downstream consumes only the normalized JSONL schema, so this
module is intentionally permissive: unrecognizable games are skipped with
a diagnostic instead of aborting the conversion.
"""
from __future__ import annotations

import json
import re
from pathlib import Path
from typing import Iterator

from .corpus import (
    SPLITS,
    BuilderAction,
    DialogueGame,
    Event,
    RecordDiagnostic,
    Utterance,
)
from .dsl import COLORS, PICK, PLACE, Action

__all__ = ["import_raw_corpus", "load_split_assignments", "find_observation_files"]

_SPEAKER_RE = re.compile(r"^\s*<([^>]+)>\s*(.*)$", re.DOTALL)

# "val" is a common alias for the development split in raw release files.
_SPLIT_ALIASES = {"val": "dev", "valid": "dev", "validation": "dev", "development": "dev"}


def _normalize_split(name: str) -> str | None:
    name = name.strip().lower()
    name = _SPLIT_ALIASES.get(name, name)
    return name if name in SPLITS else None


def load_split_assignments(path: str | Path) -> dict[str, str]:
    """Read {"train": [game_id, ...], "val": [...], "test": [...]}."""
    with open(path, encoding="utf-8") as handle:
        data = json.load(handle)
    if not isinstance(data, dict):
        raise ValueError(f"{path}: splits file must be a JSON object")
    assignments: dict[str, str] = {}
    for raw_split, game_ids in data.items():
        split = _normalize_split(str(raw_split))
        if split is None or not isinstance(game_ids, list):
            continue
        for game_id in game_ids:
            assignments[str(game_id)] = split
    return assignments


def find_observation_files(raw_root: str | Path) -> list[Path]:
    """Locate one observation JSON per game directory.

    Prefers the postprocessed variant when a directory holds several
    candidates. Files without a WorldStates key are not candidates.
    """
    raw_root = Path(raw_root)
    by_dir: dict[Path, Path] = {}
    for path in sorted(raw_root.rglob("*.json")):
        if "observation" not in path.name.lower():
            continue
        current = by_dir.get(path.parent)
        if current is None or ("postprocessed" in path.name.lower()
                               and "postprocessed" not in current.name.lower()):
            by_dir[path.parent] = path
    return [by_dir[d] for d in sorted(by_dir)]


def _parse_utterance(line: str) -> Utterance | None:
    match = _SPEAKER_RE.match(line)
    if not match:
        return None
    raw_speaker, text = match.group(1).lower(), match.group(2).strip()
    if "architect" in raw_speaker:
        speaker = "architect"
    elif "builder" in raw_speaker:
        speaker = "builder"
    else:
        return None
    return Utterance(speaker=speaker, text=text)


def _block_color(type_value: object) -> str | None:
    text = str(type_value).lower()
    for color in COLORS:
        if color in text:
            return color
    return None


_Block = tuple[int, int, int, str]


def _grid_blocks(state: dict) -> set[_Block] | None:
    blocks: set[_Block] = set()
    for entry in state.get("BlocksInGrid", []):
        coords = entry.get("AbsCoordinates") or entry
        color = _block_color(entry.get("Type"))
        try:
            block = (int(coords["X"]), int(coords["Y"]), int(coords["Z"]), color)
        except (KeyError, TypeError, ValueError):
            return None
        if color is None:
            return None
        blocks.add(block)  # type: ignore[arg-type]
    return blocks


def _diff_events(prev_chat: list[str], prev_blocks: set[_Block], state: dict) -> Iterator[Event]:
    chat = state.get("ChatHistory", prev_chat)
    for line in chat[len(prev_chat):]:
        utterance = _parse_utterance(line)
        if utterance is not None:
            yield utterance

    blocks = _grid_blocks(state)
    if blocks is None:
        return
    # Picks first: a moved block must leave its old cell before the place.
    for x, y, z, color in sorted(prev_blocks - blocks):
        yield BuilderAction(Action(kind=PICK, color=color, x=x, y=y, z=z))
    for x, y, z, color in sorted(blocks - prev_blocks):
        yield BuilderAction(Action(kind=PLACE, color=color, x=x, y=y, z=z))


def _import_game(path: Path, game_id: str, split: str) -> DialogueGame:
    with open(path, encoding="utf-8") as handle:
        data = json.load(handle)
    states = data.get("WorldStates")
    if not isinstance(states, list):
        raise ValueError("no WorldStates list")

    events: list[Event] = []
    prev_chat: list[str] = []
    prev_blocks: set[_Block] = set()
    for state in states:
        if not isinstance(state, dict):
            raise ValueError("world state is not an object")
        events.extend(_diff_events(prev_chat, prev_blocks, state))
        prev_chat = list(state.get("ChatHistory", prev_chat))
        blocks = _grid_blocks(state)
        if blocks is not None:
            prev_blocks = blocks
    return DialogueGame(game_id=game_id, split=split, events=tuple(events))


def import_raw_corpus(
    raw_root: str | Path,
    splits_path: str | Path | None = None,
    *,
    default_split: str = "train",
) -> tuple[list[DialogueGame], list[RecordDiagnostic]]:
    """Convert every game under raw_root to the normalized form.

    splits_path assigns games to train/dev/test; unassigned games land in
    default_split with a diagnostic so the output is still loadable.
    """
    raw_root = Path(raw_root)
    assignments = load_split_assignments(splits_path) if splits_path else {}
    games: list[DialogueGame] = []
    diagnostics: list[RecordDiagnostic] = []

    for index, path in enumerate(find_observation_files(raw_root)):
        game_id = path.parent.name
        split = assignments.get(game_id)
        if split is None:
            if assignments:
                diagnostics.append(
                    RecordDiagnostic(
                        record_index=index,
                        field="split",
                        message=f"{game_id}: not in splits file, defaulting to {default_split}",
                    )
                )
            split = default_split
        try:
            games.append(_import_game(path, game_id, split))
        except (ValueError, KeyError, json.JSONDecodeError, OSError) as exc:
            diagnostics.append(
                RecordDiagnostic(record_index=index, field="game", message=f"{game_id}: {exc}")
            )
    return games, diagnostics
