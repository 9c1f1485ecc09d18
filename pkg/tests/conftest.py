"""Shared fixture builders: small deterministic corpora and games."""
from __future__ import annotations

import random
from pathlib import Path

import pytest

from voxeval.corpus import BuilderAction, DialogueGame, TurnPair, Utterance, write_corpus
from voxeval.dsl import COLORS, Action


def game_from_turns(game_id: str, split: str, turns) -> DialogueGame:
    """turns: list of (utterance_texts, actions); speakers alternate A/B."""
    events = []
    for utterances, actions in turns:
        for i, text in enumerate(utterances):
            speaker = "architect" if i % 2 == 0 else "builder"
            events.append(Utterance(speaker=speaker, text=text))
        for action in actions:
            events.append(BuilderAction(action=action))
    return DialogueGame(game_id=game_id, split=split, events=tuple(events))


def synthetic_games(split: str, game_count: int, *, seed: int, turns_per_game: int = 3):
    """Valid games with unique cells per game and varied instruction text."""
    rng = random.Random(seed)
    phrases = [
        "put a {c} block on the left",
        "now place two {c} ones behind that",
        "build a {c} tower in the middle",
        "remove it and add a {c} block on top",
        "make a {c} row along the back edge",
    ]
    games = []
    for g in range(game_count):
        used: set[tuple[int, int, int]] = set()
        turns = []
        for t in range(turns_per_game):
            color = rng.choice(COLORS)
            text = phrases[(g + t) % len(phrases)].format(c=color) + f" ({split} {g}-{t})"
            actions = []
            for _ in range(rng.randint(1, 3)):
                while True:
                    cell = (rng.randint(-5, 5), rng.randint(1, 9), rng.randint(-5, 5))
                    if cell not in used:
                        used.add(cell)
                        break
                actions.append(Action("place", color, *cell))
            turns.append(([text], actions))
        games.append(game_from_turns(f"{split}-game-{g}", split, turns))
    return games


def write_split_corpus(root: Path, games_by_split: dict[str, list[DialogueGame]]) -> Path:
    root.mkdir(parents=True, exist_ok=True)
    for split in ("train", "dev", "test"):
        write_corpus(games_by_split.get(split, []), root / f"{split}.jsonl")
    return root


@pytest.fixture
def corpus_dir(tmp_path: Path) -> Path:
    """A small but fully valid corpus: 6 train, 2 dev, 3 test games."""
    return write_split_corpus(
        tmp_path / "corpus",
        {
            "train": synthetic_games("train", 6, seed=11),
            "dev": synthetic_games("dev", 2, seed=22),
            "test": synthetic_games("test", 3, seed=33),
        },
    )


def make_pair(game_id: str, turn_index: int, instruction: str, actions) -> TurnPair:
    return TurnPair(
        game_id=game_id,
        turn_index=turn_index,
        instruction=instruction,
        gold_actions=tuple(actions),
    )
