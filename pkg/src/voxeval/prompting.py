"""Multi-part prompt assembly from template files, plus the ablation grid.

A template set is a directory with a manifest.json ordering the section
files. Section files are plain UTF-8 text; context.txt carries the
$INCONTEXT_SAMPLES placeholder and footer.txt carries $TEST_INSTRUCTION.
The packaged "default" set renders sections in the order System,
Environment, Task, Context, Other, then the closing line and the test
instruction.
"""
from __future__ import annotations

import json
from dataclasses import dataclass
from importlib import resources
from pathlib import Path
from typing import Sequence

from .corpus import TurnPair
from .dsl import serialize_action
from .world import net_actions

SAMPLES_PLACEHOLDER = "$INCONTEXT_SAMPLES"
INSTRUCTION_PLACEHOLDER = "$TEST_INSTRUCTION"

_SECTION_SEPARATOR = "\n\n"


@dataclass(frozen=True)
class PromptConfig:
    """Which prompt sections are enabled and how many in-context examples."""

    include_system: bool = True
    include_env: bool = True
    include_task: bool = True
    include_other: bool = True
    k_examples: int = 3
    template_set: str = "default"
    net_clean_examples: bool = False  # render examples with cancelling pairs removed

    def __post_init__(self) -> None:
        if self.k_examples < 0:
            raise ValueError("k_examples must be non-negative")

    def enabled(self, section: str) -> bool:
        return {
            "system": self.include_system,
            "environment": self.include_env,
            "task": self.include_task,
            "other": self.include_other,
        }.get(section, True)

    def to_dict(self) -> dict:
        return {
            "include_system": self.include_system,
            "include_env": self.include_env,
            "include_task": self.include_task,
            "include_other": self.include_other,
            "k_examples": self.k_examples,
            "template_set": self.template_set,
            "net_clean_examples": self.net_clean_examples,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "PromptConfig":
        return cls(**data)


@dataclass(frozen=True)
class PromptText:
    """A rendered prompt with per-section byte offsets and example provenance."""

    text: str
    section_offsets: dict[str, tuple[int, int]]
    example_provenance: tuple[tuple[str, int], ...]


def _template_dir(template_set: str) -> Path:
    candidate = Path(template_set)
    if candidate.is_dir():
        return candidate
    packaged = resources.files("voxeval") / "templates" / template_set
    path = Path(str(packaged))
    if not path.is_dir():
        raise FileNotFoundError(f"template set {template_set!r} not found")
    return path


def _load_manifest(template_dir: Path) -> list[dict]:
    manifest_path = template_dir / "manifest.json"
    if not manifest_path.exists():
        raise FileNotFoundError(f"missing manifest.json in {template_dir}")
    with open(manifest_path, encoding="utf-8") as handle:
        return json.load(handle)["sections"]


def render_example(pair: TurnPair, net_clean: bool = False) -> str:
    actions = net_actions(list(pair.gold_actions)) if net_clean else list(pair.gold_actions)
    code = "\n".join(serialize_action(a) for a in actions)
    return f"Instruction\n\n{pair.instruction}\n\nOutput\n\n{code}"


def render_prompt(
    config: PromptConfig,
    examples: Sequence[TurnPair],
    test_instruction: str,
) -> PromptText:
    """Assemble the prompt for one turn.

    Disabled sections are wholly absent. Each enabled section occupies a
    contiguous byte range recorded in section_offsets; the ranges partition
    the text, so removing a section's range from a full rendering equals
    rendering without that section.
    """
    if len(examples) > config.k_examples:
        raise ValueError(
            f"got {len(examples)} examples for k_examples={config.k_examples}"
        )
    template_dir = _template_dir(config.template_set)
    samples_text = _SECTION_SEPARATOR.join(
        render_example(pair, config.net_clean_examples) for pair in examples
    )

    chunks: list[tuple[str, str]] = []
    sections = _load_manifest(template_dir)
    for section in sections:
        name = section["name"]
        if section.get("optional", False) and not config.enabled(name):
            continue
        raw = (template_dir / section["file"]).read_text(encoding="utf-8")
        text = raw.replace(SAMPLES_PLACEHOLDER, samples_text)
        text = text.replace(INSTRUCTION_PLACEHOLDER, test_instruction)
        text = text.strip("\n")
        chunks.append((name, text))

    rendered: list[str] = []
    offsets: dict[str, tuple[int, int]] = {}
    position = 0
    for index, (name, text) in enumerate(chunks):
        chunk = text if index == len(chunks) - 1 else text + _SECTION_SEPARATOR
        offsets[name] = (position, position + len(chunk))
        rendered.append(chunk)
        position += len(chunk)

    return PromptText(
        text="".join(rendered),
        section_offsets=offsets,
        example_provenance=tuple((p.game_id, p.turn_index) for p in examples),
    )


def ablation_configs() -> list[PromptConfig]:
    """The ten prompt configurations of the ablation grid.

    Rows 1-6 sweep the in-context example count 0..5 with every section on;
    rows 7-9 drop one of System/Env/Task at k=3; row 10 keeps only
    System+Env+Context at k=3 (no Task, no Other).
    """
    configs = [PromptConfig(k_examples=k) for k in range(6)]
    configs.append(PromptConfig(include_system=False, k_examples=3))
    configs.append(PromptConfig(include_env=False, k_examples=3))
    configs.append(PromptConfig(include_task=False, k_examples=3))
    configs.append(PromptConfig(include_task=False, include_other=False, k_examples=3))
    return configs


_COUNT_WORDS = {0: "Zero", 1: "One", 2: "Two", 3: "Three", 4: "Four", 5: "Five"}


def config_label(config: PromptConfig) -> str:
    """Human-readable row label, e.g. "System Info + ... + Other Info"."""
    parts: list[str] = []
    if config.include_system:
        parts.append("System Info")
    if config.include_env:
        parts.append("Env Info")
    if config.include_task:
        parts.append("Task Info")
    count = _COUNT_WORDS.get(config.k_examples, str(config.k_examples))
    unit = "Sample" if config.k_examples == 1 else "Samples"
    parts.append(f"Context Info ({count} {unit})")
    if config.include_other:
        parts.append("Other Info")
    return " + ".join(parts)
