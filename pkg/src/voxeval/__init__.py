"""Evaluation harness for instruction-to-action-code building dialogues.

Pipeline: normalize dialogue games to JSONL, aggregate them into
(instruction, gold action block) turn pairs, retrieve similar training
turns as in-context examples, prompt a completion provider, extract the
predicted place/pick calls, ground them in a simulated voxel grid, and
score with micro-averaged F1 plus per-category error analysis.
"""
from .analysis import CategoryStats, Lexicon, bundled_lexicons, category_stats
from .corpus import (
    BuilderAction,
    DialogueGame,
    TurnPair,
    Utterance,
    aggregate_split,
    aggregate_turns,
    load_corpus,
    write_corpus,
)
from .dsl import (
    COLORS,
    Action,
    ActionParseError,
    ParseDiagnostics,
    extract_actions,
    parse_action_call,
    serialize_action,
)
from .prompting import PromptConfig, PromptText, ablation_configs, config_label, render_prompt
from .providers import (
    CompletionProvider,
    CompletionRecord,
    CompletionRequest,
    EchoOracle,
    NearestNeighborBaseline,
    RemoteProvider,
    RemoteProviderConfig,
    ResponseCache,
    cached_complete,
)
from .retrieval import (
    EmbeddingProvider,
    ExampleIndex,
    HashedTrigramEmbedding,
    build_index,
    load_index,
    save_index,
    top_k,
)
from .runner import RunManifest, evaluate_run_dir, execute_run, load_responses
from .scoring import EvalReport, Metrics, TurnMatch, evaluate_run, match_turn, micro_f1
from .world import (
    GridSpec,
    MistakeReport,
    Violation,
    WorldState,
    apply,
    apply_sequence,
    detect_builder_mistakes,
    net_actions,
    new_world,
)

__version__ = "0.1.0"
