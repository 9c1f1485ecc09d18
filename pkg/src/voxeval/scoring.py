"""Turn-level matching and micro-averaged precision/recall/F1.

A predicted action counts as correct when the identical (kind, color, x,
y, z) tuple appears in the turn's gold multiset; ordering within the turn
does not matter unless the stricter ordered mode is requested. Micro
averaging pools tp/pred/gold counts across turns before dividing, so long
turns weigh more than short ones.
"""
from __future__ import annotations

from collections import Counter
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

from .corpus import TurnPair
from .dsl import Action, ParseDiagnostics, extract_actions, serialize_action
from .world import net_actions

__all__ = [
    "TurnMatch",
    "Metrics",
    "EvalReport",
    "match_turn",
    "micro_f1",
    "evaluate_run",
]


@dataclass(frozen=True)
class Metrics:
    """Pooled counts plus the derived ratios.

    Conventions for empty pools: precision is 0 when nothing was
    predicted, recall is 0 when there was nothing to find, and F1 is 0
    whenever either is 0 (including the doubly-empty case).
    """

    tp: int
    pred_count: int
    gold_count: int

    @property
    def precision(self) -> float:
        return self.tp / self.pred_count if self.pred_count else 0.0

    @property
    def recall(self) -> float:
        return self.tp / self.gold_count if self.gold_count else 0.0

    @property
    def f1(self) -> float:
        p, r = self.precision, self.recall
        return 2 * p * r / (p + r) if p + r else 0.0

    def to_dict(self) -> dict:
        return {
            "tp": self.tp,
            "pred_count": self.pred_count,
            "gold_count": self.gold_count,
            "precision": self.precision,
            "recall": self.recall,
            "f1": self.f1,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "Metrics":
        return cls(tp=data["tp"], pred_count=data["pred_count"], gold_count=data["gold_count"])


@dataclass(frozen=True)
class TurnMatch:
    game_id: str
    turn_index: int
    tp: int
    pred_count: int
    gold_count: int
    pred_actions: tuple[Action, ...]
    diagnostics: ParseDiagnostics | None = field(default=None, compare=False)

    @property
    def exact(self) -> bool:
        return self.tp == self.pred_count == self.gold_count

    def to_dict(self) -> dict:
        data = {
            "game_id": self.game_id,
            "turn_index": self.turn_index,
            "tp": self.tp,
            "pred_count": self.pred_count,
            "gold_count": self.gold_count,
            "pred_actions": [serialize_action(a) for a in self.pred_actions],
        }
        if self.diagnostics is not None:
            data["diagnostics"] = self.diagnostics.to_dict()
        return data


def _multiset_tp(pred: Sequence[Action], gold: Sequence[Action]) -> int:
    overlap = Counter(pred) & Counter(gold)
    return sum(overlap.values())


def _ordered_prefix_tp(pred: Sequence[Action], gold: Sequence[Action]) -> int:
    tp = 0
    for p, g in zip(pred, gold):
        if p != g:
            break
        tp += 1
    return tp


def match_turn(
    pred: Sequence[Action],
    gold: Sequence[Action],
    *,
    ordered: bool = False,
) -> tuple[int, int, int]:
    """Return (tp, pred_count, gold_count) for one turn."""
    tp = _ordered_prefix_tp(pred, gold) if ordered else _multiset_tp(pred, gold)
    return tp, len(pred), len(gold)


def micro_f1(matches: Iterable[TurnMatch | tuple[int, int, int]]) -> Metrics:
    tp = pred = gold = 0
    for m in matches:
        if isinstance(m, TurnMatch):
            tp, pred, gold = tp + m.tp, pred + m.pred_count, gold + m.gold_count
        else:
            tp, pred, gold = tp + m[0], pred + m[1], gold + m[2]
    return Metrics(tp=tp, pred_count=pred, gold_count=gold)


@dataclass(frozen=True)
class EvalReport:
    """Scored run: headline metrics, a net-gold variant, per-turn detail.

    variant_net_gold rescores every turn against net_actions(gold), which
    forgives the model for skipping builder self-corrections. missing
    lists (game_id, turn_index) keys the response map had no text for;
    they score as empty predictions rather than being dropped.
    """

    overall: Metrics
    variant_net_gold: Metrics
    turns: tuple[TurnMatch, ...]
    missing: tuple[tuple[str, int], ...] = ()

    def to_dict(self) -> dict:
        return {
            "overall": self.overall.to_dict(),
            "variant_net_gold": self.variant_net_gold.to_dict(),
            "turns": [t.to_dict() for t in self.turns],
            "missing": [list(key) for key in self.missing],
        }

    @classmethod
    def from_dict(cls, data: dict) -> "EvalReport":
        turns = tuple(
            TurnMatch(
                game_id=t["game_id"],
                turn_index=t["turn_index"],
                tp=t["tp"],
                pred_count=t["pred_count"],
                gold_count=t["gold_count"],
                pred_actions=tuple(),
            )
            for t in data.get("turns", [])
        )
        return cls(
            overall=Metrics.from_dict(data["overall"]),
            variant_net_gold=Metrics.from_dict(data["variant_net_gold"]),
            turns=turns,
            missing=tuple((g, i) for g, i in data.get("missing", [])),
        )


def evaluate_run(
    pairs: Sequence[TurnPair],
    responses: Mapping[tuple[str, int], str | None],
    *,
    ordered: bool = False,
) -> EvalReport:
    """Score raw response text against gold for every turn in pairs.

    responses maps (game_id, turn_index) to the model's raw output; a
    missing key or None means the turn produced no usable response.
    """
    turns: list[TurnMatch] = []
    net_counts: list[tuple[int, int, int]] = []
    missing: list[tuple[str, int]] = []

    for pair in pairs:
        key = (pair.game_id, pair.turn_index)
        text = responses.get(key)
        if text is None:
            missing.append(key)
            pred: list[Action] = []
            diagnostics = None
        else:
            pred, diagnostics = extract_actions(text)

        tp, pred_count, gold_count = match_turn(pred, pair.gold_actions, ordered=ordered)
        turns.append(
            TurnMatch(
                game_id=pair.game_id,
                turn_index=pair.turn_index,
                tp=tp,
                pred_count=pred_count,
                gold_count=gold_count,
                pred_actions=tuple(pred),
                diagnostics=diagnostics,
            )
        )
        net_gold = net_actions(pair.gold_actions)
        net_counts.append(match_turn(pred, net_gold, ordered=ordered))

    return EvalReport(
        overall=micro_f1(turns),
        variant_net_gold=micro_f1(net_counts),
        turns=tuple(turns),
        missing=tuple(missing),
    )
