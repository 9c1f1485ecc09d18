import json
from pathlib import Path

from voxeval.corpus import BuilderAction, Utterance, aggregate_turns
from voxeval.importer import find_observation_files, import_raw_corpus, load_split_assignments


def block(x, y, z, color):
    return {
        "AbsCoordinates": {"X": x, "Y": y, "Z": z},
        "Type": f"CWC_MINECRAFT_{color.upper()}_RN",
    }


def write_game(root: Path, game_id: str, states) -> None:
    game_dir = root / game_id
    game_dir.mkdir(parents=True)
    with open(game_dir / "postprocessed-observations.json", "w", encoding="utf-8") as handle:
        json.dump({"WorldStates": states}, handle)


def typical_states():
    return [
        {"ChatHistory": [], "BlocksInGrid": []},
        {"ChatHistory": ["<Architect> put a red block down"], "BlocksInGrid": []},
        {
            "ChatHistory": ["<Architect> put a red block down"],
            "BlocksInGrid": [block(0, 1, 0, "red")],
        },
        {
            "ChatHistory": [
                "<Architect> put a red block down",
                "<Builder> like this?",
                "<Architect> no, move it left",
            ],
            "BlocksInGrid": [block(0, 1, 0, "red")],
        },
        {
            "ChatHistory": [
                "<Architect> put a red block down",
                "<Builder> like this?",
                "<Architect> no, move it left",
            ],
            "BlocksInGrid": [block(-1, 1, 0, "red")],
        },
    ]


class TestImport:
    def test_event_stream_recovered(self, tmp_path):
        write_game(tmp_path, "game-1", typical_states())
        games, diagnostics = import_raw_corpus(tmp_path)
        assert diagnostics == []
        assert len(games) == 1
        game = games[0]
        kinds = [
            (e.speaker if isinstance(e, Utterance) else e.action.kind) for e in game.events
        ]
        assert kinds == ["architect", "place", "builder", "architect", "pick", "place"]
        move = [e.action for e in game.events if isinstance(e, BuilderAction)]
        assert (move[1].kind, move[1].cell) == ("pick", (0, 1, 0))
        assert (move[2].kind, move[2].cell) == ("place", (-1, 1, 0))

    def test_turn_aggregation_of_import(self, tmp_path):
        write_game(tmp_path, "game-1", typical_states())
        games, _ = import_raw_corpus(tmp_path)
        pairs = aggregate_turns(games[0], with_world=False)
        assert [p.instruction for p in pairs] == [
            "put a red block down",
            "like this?. no, move it left",
        ]
        assert len(pairs[1].gold_actions) == 2

    def test_split_assignment_and_alias(self, tmp_path):
        write_game(tmp_path, "game-1", typical_states())
        write_game(tmp_path, "game-2", typical_states())
        splits = tmp_path / "splits.json"
        splits.write_text(json.dumps({"train": ["game-1"], "val": ["game-2"]}), encoding="utf-8")
        games, diagnostics = import_raw_corpus(tmp_path, splits)
        assert {g.game_id: g.split for g in games} == {"game-1": "train", "game-2": "dev"}
        assert diagnostics == []

    def test_unassigned_game_defaults_with_diagnostic(self, tmp_path):
        write_game(tmp_path, "game-1", typical_states())
        write_game(tmp_path, "game-2", typical_states())
        splits = tmp_path / "splits.json"
        splits.write_text(json.dumps({"test": ["game-1"]}), encoding="utf-8")
        games, diagnostics = import_raw_corpus(tmp_path, splits)
        assert {g.game_id: g.split for g in games} == {"game-1": "test", "game-2": "train"}
        assert len(diagnostics) == 1

    def test_malformed_game_skipped(self, tmp_path):
        write_game(tmp_path, "good", typical_states())
        bad_dir = tmp_path / "bad"
        bad_dir.mkdir()
        (bad_dir / "observations.json").write_text('{"WorldStates": "nope"}', encoding="utf-8")
        games, diagnostics = import_raw_corpus(tmp_path)
        assert [g.game_id for g in games] == ["good"]
        assert len(diagnostics) == 1
        assert "bad" in diagnostics[0].message

    def test_prefers_postprocessed_file(self, tmp_path):
        game_dir = tmp_path / "game-1"
        game_dir.mkdir()
        with open(game_dir / "raw-observations.json", "w", encoding="utf-8") as handle:
            json.dump({"WorldStates": []}, handle)
        with open(game_dir / "postprocessed-observations.json", "w", encoding="utf-8") as handle:
            json.dump({"WorldStates": typical_states()}, handle)
        files = find_observation_files(tmp_path)
        assert len(files) == 1
        assert files[0].name == "postprocessed-observations.json"

    def test_unknown_speaker_lines_skipped(self, tmp_path):
        states = [
            {"ChatHistory": [], "BlocksInGrid": []},
            {
                "ChatHistory": ["<System> mission start", "<Architect> hi"],
                "BlocksInGrid": [],
            },
        ]
        write_game(tmp_path, "game-1", states)
        games, _ = import_raw_corpus(tmp_path)
        assert len(games[0].events) == 1
        assert games[0].events[0].speaker == "architect"


def test_split_alias_table(tmp_path):
    path = tmp_path / "splits.json"
    path.write_text(
        json.dumps({"TRAIN": ["a"], "validation": ["b"], "weird": ["c"]}), encoding="utf-8"
    )
    assignments = load_split_assignments(path)
    assert assignments == {"a": "train", "b": "dev"}
