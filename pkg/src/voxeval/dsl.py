"""The two-function action language: parsing, tolerant extraction, serialization.

Grammar (canonical and accepted forms)::

    call       = name "(" arguments ")"
    name       = "place" | "pick"
    arguments  = keyword-args | positional-args | mixed (positionals first)
    keyword    = ("color" "=" color) | (("x" | "y" | "z") "=" integer)
    positional = color "," integer "," integer "," integer   ; color, x, y, z
    color      = optionally quoted color name from the six-color set
    integer    = optional sign followed by digits

Keyword arguments may appear in any order. Single quotes, double quotes and
the backquote variant (`green') are all accepted, as is arbitrary whitespace
and a trailing ``;``/``,``/``.`` after the closing parenthesis. Serialization
always emits the canonical form ``place(color='green',x=0,y=1,z=4)``.
"""
from __future__ import annotations

import re
from dataclasses import dataclass, field

COLORS: tuple[str, ...] = ("blue", "orange", "red", "green", "yellow", "purple")
_COLOR_SET = frozenset(COLORS)

PLACE = "place"
PICK = "pick"
KINDS: tuple[str, str] = (PLACE, PICK)

_QUOTES = "'\"`"


class ActionParseError(ValueError):
    """A candidate call could not be parsed into an Action."""


class UnknownFunctionError(ActionParseError):
    """The call names a function other than place or pick."""


class UnknownColorError(ActionParseError):
    """The color argument is not one of the six block colors."""


class CoordinateError(ActionParseError):
    """A coordinate argument is not an integer."""


class MissingArgumentError(ActionParseError):
    """One or more of color/x/y/z is absent from the call."""


@dataclass(frozen=True, order=True)
class Action:
    """One grounded builder step: place or pick a colored block at a cell."""

    kind: str
    color: str
    x: int
    y: int
    z: int

    def __post_init__(self) -> None:
        if self.kind not in KINDS:
            raise ValueError(f"kind must be one of {KINDS}, got {self.kind!r}")
        if self.color not in _COLOR_SET:
            raise ValueError(f"color must be one of {sorted(_COLOR_SET)}, got {self.color!r}")
        for axis in ("x", "y", "z"):
            value = getattr(self, axis)
            if not isinstance(value, int) or isinstance(value, bool):
                raise ValueError(f"{axis} must be an integer, got {value!r}")

    @property
    def cell(self) -> tuple[int, int, int]:
        return (self.x, self.y, self.z)


@dataclass
class ParseDiagnostics:
    """What extract_actions skipped or gave up on while scanning a response."""

    ignored_line_count: int = 0
    truncated_at_new_instruction: bool = False
    malformed_call_count: int = 0
    notes: list[tuple[int, str]] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "ignored_line_count": self.ignored_line_count,
            "truncated_at_new_instruction": self.truncated_at_new_instruction,
            "malformed_call_count": self.malformed_call_count,
            "notes": [list(note) for note in self.notes],
        }

    @classmethod
    def from_dict(cls, data: dict) -> "ParseDiagnostics":
        return cls(
            ignored_line_count=data.get("ignored_line_count", 0),
            truncated_at_new_instruction=data.get("truncated_at_new_instruction", False),
            malformed_call_count=data.get("malformed_call_count", 0),
            notes=[(int(n[0]), str(n[1])) for n in data.get("notes", [])],
        )


_CALL_RE = re.compile(r"^\s*([A-Za-z_][A-Za-z_0-9]*)\s*\(\s*(.*?)\s*\)\s*[;,.]*\s*$", re.DOTALL)
_INT_RE = re.compile(r"^[+-]?\d+$")


def _strip_quotes(value: str) -> str:
    if value and value[0] in _QUOTES:
        value = value[1:]
    if value and value[-1] in _QUOTES:
        value = value[:-1]
    return value.strip()


def _parse_color(raw: str) -> str:
    color = _strip_quotes(raw.strip()).lower()
    if color not in _COLOR_SET:
        raise UnknownColorError(f"unknown color {raw.strip()!r}")
    return color


def _parse_coordinate(name: str, raw: str) -> int:
    text = _strip_quotes(raw.strip())
    if not _INT_RE.match(text):
        raise CoordinateError(f"coordinate {name}={raw.strip()!r} is not an integer")
    return int(text)


def parse_action_call(text: str) -> Action:
    """Parse a single candidate call into an Action.

    Raises a subclass of ActionParseError describing the first problem found:
    UnknownFunctionError, UnknownColorError, CoordinateError, or
    MissingArgumentError. Other structural problems (duplicate or unknown
    arguments, too many positionals) raise the base ActionParseError.
    """
    match = _CALL_RE.match(text)
    if match is None:
        raise ActionParseError(f"not a function call: {text.strip()!r}")
    name = match.group(1).lower()
    if name not in KINDS:
        raise UnknownFunctionError(f"unknown function {match.group(1)!r}")

    bound: dict[str, str] = {}
    args_text = match.group(2).strip()
    parts = [p.strip() for p in args_text.split(",")] if args_text else []
    positional_order = ("color", "x", "y", "z")
    seen_keyword = False
    position = 0
    for part in parts:
        if not part:
            raise ActionParseError("empty argument")
        if "=" in part:
            seen_keyword = True
            key, _, value = part.partition("=")
            key = key.strip().lower()
            if key not in positional_order:
                raise ActionParseError(f"unknown argument {key!r}")
            if key in bound:
                raise ActionParseError(f"duplicate argument {key!r}")
            bound[key] = value.strip()
        else:
            if seen_keyword:
                raise ActionParseError("positional argument after keyword argument")
            if position >= len(positional_order):
                raise ActionParseError("too many positional arguments")
            bound[positional_order[position]] = part
            position += 1

    missing = [k for k in positional_order if k not in bound]
    if missing:
        raise MissingArgumentError(f"missing argument(s): {', '.join(missing)}")

    return Action(
        kind=name,
        color=_parse_color(bound["color"]),
        x=_parse_coordinate("x", bound["x"]),
        y=_parse_coordinate("y", bound["y"]),
        z=_parse_coordinate("z", bound["z"]),
    )


def serialize_action(action: Action) -> str:
    """Render the canonical single-line form of an action."""
    return f"{action.kind}(color='{action.color}',x={action.x},y={action.y},z={action.z})"


_CALL_SPAN_RE = re.compile(r"\b(?:place|pick)\s*\([^()]*\)\s*[;,.]*", re.IGNORECASE)
_LABEL_DECORATION = "#>*-=:.) \t0123456789"
_LABEL_PREFIXES = ("instruction", "output", "mission has started")


def _is_label_line(line: str) -> bool:
    core = line.strip().lstrip(_LABEL_DECORATION).lower()
    return core.startswith(_LABEL_PREFIXES)


def extract_actions(response: str | bytes) -> tuple[list[Action], ParseDiagnostics]:
    """Collect action calls from raw model output, tolerating surrounding noise.

    The response is scanned line by line. Every parseable place/pick call is
    collected in order; a call must be complete on one line. Prose, comments
    and code-fence markers are counted as ignored lines. Call-shaped spans
    that fail to parse (bad color, bad coordinate, ...) increment
    malformed_call_count and are excluded. Once at least one action has been
    collected, a line that looks like a generated label ("Instruction",
    "Output", "Mission has started") stops the scan: everything after it is a
    hallucinated new exchange, not part of this turn's answer.

    Never raises; accepts bytes (decoded as UTF-8 with replacement).
    """
    if isinstance(response, bytes):
        response = response.decode("utf-8", errors="replace")

    actions: list[Action] = []
    diag = ParseDiagnostics()
    for lineno, raw_line in enumerate(response.splitlines(), start=1):
        line = raw_line.strip()
        if not line:
            continue
        if line.startswith("```"):
            diag.ignored_line_count += 1
            continue
        if actions and _is_label_line(line):
            diag.truncated_at_new_instruction = True
            diag.notes.append((lineno, "stopped at generated instruction/label line"))
            break
        spans = list(_CALL_SPAN_RE.finditer(line))
        if not spans:
            diag.ignored_line_count += 1
            continue
        for span in spans:
            try:
                actions.append(parse_action_call(span.group(0)))
            except ActionParseError as exc:
                diag.malformed_call_count += 1
                diag.notes.append((lineno, str(exc)))
    return actions, diag
