"""Error breakdown by instruction phenomenon.

Turns are bucketed by whether their instruction mentions terms from
editable lexicons (spatial relations, shape analogies, anaphoric
references), then each bucket reports how often the model got the whole
turn exactly right. This localizes failures: a model can score a decent
overall F1 while collapsing on, say, shape-analogy instructions.
"""
from __future__ import annotations

import csv
import re
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Mapping, Sequence

from .corpus import TurnPair
from .scoring import TurnMatch

__all__ = [
    "DEFAULT_CATEGORIES",
    "Lexicon",
    "CategoryStats",
    "load_lexicon",
    "load_lexicon_dir",
    "bundled_lexicons",
    "matches_lexicon",
    "categorize_instruction",
    "category_stats",
    "load_annotations_csv",
]

DEFAULT_CATEGORIES = ("spatial", "shape", "anaphora")

_WORD_RE = re.compile(r"[a-z0-9']+")


def _tokenize(text: str) -> list[str]:
    return _WORD_RE.findall(text.lower())


@dataclass(frozen=True)
class Lexicon:
    """A named category and the phrases that trigger it."""

    name: str
    terms: tuple[str, ...]

    def __post_init__(self) -> None:
        if not self.name:
            raise ValueError("lexicon name must be non-empty")
        for term in self.terms:
            if not _tokenize(term):
                raise ValueError(f"lexicon {self.name!r}: unusable term {term!r}")


def load_lexicon(path: str | Path, name: str | None = None) -> Lexicon:
    """Read one term per line; blank lines and '#' comments are skipped."""
    path = Path(path)
    terms: list[str] = []
    seen: set[str] = set()
    with open(path, encoding="utf-8") as handle:
        for raw in handle:
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            key = " ".join(_tokenize(line))
            if key and key not in seen:
                seen.add(key)
                terms.append(line.lower())
    return Lexicon(name=name or path.stem, terms=tuple(terms))


def load_lexicon_dir(directory: str | Path) -> dict[str, Lexicon]:
    directory = Path(directory)
    lexicons = {}
    for path in sorted(directory.glob("*.txt")):
        lexicons[path.stem] = load_lexicon(path)
    if not lexicons:
        raise FileNotFoundError(f"no *.txt lexicons under {directory}")
    return lexicons


def bundled_lexicons() -> dict[str, Lexicon]:
    """The lexicons shipped inside the package."""
    from importlib import resources

    root = resources.files(__package__) / "lexicons"
    with resources.as_file(root) as directory:
        return load_lexicon_dir(directory)


def matches_lexicon(text: str, lexicon: Lexicon) -> bool:
    """Whole-word match: 'it' must not fire on 'white' or 'with'."""
    tokens = _tokenize(text)
    token_set = set(tokens)
    joined = " " + " ".join(tokens) + " "
    for term in lexicon.terms:
        term_tokens = _tokenize(term)
        if len(term_tokens) == 1:
            if term_tokens[0] in token_set:
                return True
        elif " " + " ".join(term_tokens) + " " in joined:
            return True
    return False


def categorize_instruction(text: str, lexicons: Mapping[str, Lexicon]) -> set[str]:
    """All category names whose lexicon fires on the text; may be empty."""
    return {name for name, lexicon in lexicons.items() if matches_lexicon(text, lexicon)}


@dataclass(frozen=True)
class CategoryStats:
    """Prevalence of a category and exact-match accuracy inside it.

    correct_fraction is None when the bucket is empty: an accuracy over
    zero turns is not 0%, it is undefined, and reports must show N/A.
    """

    category: str
    turn_count: int
    total_turns: int
    correct_count: int

    @property
    def fraction_of_turns(self) -> float:
        return self.turn_count / self.total_turns if self.total_turns else 0.0

    @property
    def correct_fraction(self) -> float | None:
        if self.turn_count == 0:
            return None
        return self.correct_count / self.turn_count

    def to_dict(self) -> dict:
        return {
            "category": self.category,
            "turn_count": self.turn_count,
            "total_turns": self.total_turns,
            "correct_count": self.correct_count,
            "fraction_of_turns": self.fraction_of_turns,
            "correct_fraction": self.correct_fraction,
        }


def category_stats(
    pairs: Sequence[TurnPair],
    turns: Iterable[TurnMatch],
    lexicons: Mapping[str, Lexicon] | None = None,
) -> dict[str, CategoryStats]:
    """Bucket scored turns by instruction category.

    A turn counts as correct only when predicted and gold action multisets
    coincide exactly (TurnMatch.exact). Turns may fall into several
    categories at once; fractions therefore need not sum to one.
    """
    if lexicons is None:
        lexicons = bundled_lexicons()
    by_key = {(p.game_id, p.turn_index): p for p in pairs}
    counts = {name: 0 for name in lexicons}
    correct = {name: 0 for name in lexicons}
    total = 0
    for turn in turns:
        pair = by_key.get((turn.game_id, turn.turn_index))
        if pair is None:
            raise KeyError(f"scored turn {(turn.game_id, turn.turn_index)} not in pairs")
        total += 1
        for name in categorize_instruction(pair.instruction, lexicons):
            counts[name] += 1
            if turn.exact:
                correct[name] += 1
    return {
        name: CategoryStats(
            category=name,
            turn_count=counts[name],
            total_turns=total,
            correct_count=correct[name],
        )
        for name in lexicons
    }


def load_annotations_csv(path: str | Path) -> dict[tuple[str, int], set[str]]:
    """Hand-labeled categories overriding lexicon matching.

    Expected columns: game_id, turn_index, categories (semicolon- or
    comma-separated names; empty means the turn belongs to no category).
    """
    annotations: dict[tuple[str, int], set[str]] = {}
    with open(path, encoding="utf-8", newline="") as handle:
        reader = csv.DictReader(handle)
        required = {"game_id", "turn_index", "categories"}
        if reader.fieldnames is None or not required.issubset(reader.fieldnames):
            raise ValueError(f"annotation CSV must have columns {sorted(required)}")
        for row in reader:
            key = (row["game_id"], int(row["turn_index"]))
            raw = row["categories"].replace(";", ",")
            annotations[key] = {c.strip() for c in raw.split(",") if c.strip()}
    return annotations
