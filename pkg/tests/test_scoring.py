import pytest

from voxeval.dsl import Action, serialize_action
from voxeval.scoring import EvalReport, Metrics, evaluate_run, match_turn, micro_f1

from conftest import make_pair

P = lambda c, x, y, z: Action("place", c, x, y, z)  # noqa: E731
K = lambda c, x, y, z: Action("pick", c, x, y, z)  # noqa: E731


class TestMatchTurn:
    def test_exact_match(self):
        gold = [P("red", 0, 1, 0), P("blue", 1, 1, 0)]
        assert match_turn(gold, gold) == (2, 2, 2)

    def test_order_ignored_by_default(self):
        gold = [P("red", 0, 1, 0), P("blue", 1, 1, 0)]
        assert match_turn(list(reversed(gold)), gold) == (2, 2, 2)

    def test_duplicates_counted_with_multiplicity(self):
        gold = [P("red", 0, 1, 0), P("red", 0, 1, 0)]
        pred = [P("red", 0, 1, 0)]
        assert match_turn(pred, gold) == (1, 1, 2)
        assert match_turn(gold, pred) == (1, 2, 1)

    def test_kind_and_coordinates_must_match(self):
        gold = [P("red", 0, 1, 0)]
        assert match_turn([K("red", 0, 1, 0)], gold)[0] == 0
        assert match_turn([P("red", 0, 1, 1)], gold)[0] == 0
        assert match_turn([P("blue", 0, 1, 0)], gold)[0] == 0

    def test_ordered_prefix_mode(self):
        gold = [P("red", 0, 1, 0), P("blue", 1, 1, 0), P("green", 2, 1, 0)]
        pred = [P("red", 0, 1, 0), P("green", 2, 1, 0), P("blue", 1, 1, 0)]
        assert match_turn(pred, gold, ordered=True) == (1, 3, 3)
        assert match_turn(pred, gold) == (3, 3, 3)


class TestMetrics:
    def test_hand_derived_case(self):
        metrics = micro_f1([(2, 3, 3), (1, 1, 2)])
        assert metrics.precision == pytest.approx(0.75)
        assert metrics.recall == pytest.approx(0.6)
        assert metrics.f1 == pytest.approx(2 / 3, abs=1e-9)

    def test_empty_prediction_conventions(self):
        assert micro_f1([(0, 0, 3)]).precision == 0.0
        assert micro_f1([(0, 3, 0)]).recall == 0.0
        empty = micro_f1([(0, 0, 0)])
        assert (empty.precision, empty.recall, empty.f1) == (0.0, 0.0, 0.0)

    def test_perfect(self):
        assert micro_f1([(4, 4, 4)]).f1 == 1.0

    def test_round_trip(self):
        metrics = Metrics(tp=3, pred_count=5, gold_count=4)
        assert Metrics.from_dict(metrics.to_dict()) == metrics


class TestEvaluateRun:
    def pairs(self):
        return [
            make_pair("g", 0, "a", [P("red", 0, 1, 0), P("blue", 1, 1, 0)]),
            make_pair("g", 1, "b", [P("green", 2, 1, 0)]),
        ]

    def test_perfect_run(self):
        pairs = self.pairs()
        responses = {
            (p.game_id, p.turn_index): "\n".join(serialize_action(a) for a in p.gold_actions)
            for p in pairs
        }
        report = evaluate_run(pairs, responses)
        assert report.overall.f1 == 1.0
        assert all(t.exact for t in report.turns)
        assert report.missing == ()

    def test_missing_response_scores_empty(self):
        pairs = self.pairs()
        responses = {("g", 0): "place(color='red',x=0,y=1,z=0)"}
        report = evaluate_run(pairs, responses)
        assert report.missing == (("g", 1),)
        assert report.overall.tp == 1
        assert report.overall.gold_count == 3
        assert report.overall.pred_count == 1

    def test_prose_responses_are_extracted(self):
        pairs = [make_pair("g", 0, "a", [P("red", 0, 1, 0)])]
        responses = {("g", 0): "Sure!\n```\nplace(color='red',x=0,y=1,z=0)\n```\nDone."}
        report = evaluate_run(pairs, responses)
        assert report.overall.f1 == 1.0
        assert report.turns[0].diagnostics.ignored_line_count >= 2

    def test_net_gold_variant_forgives_corrections(self):
        gold = [P("red", 0, 1, 0), K("red", 0, 1, 0), P("blue", 1, 1, 0)]
        pairs = [make_pair("g", 0, "a", gold)]
        responses = {("g", 0): "place(color='blue',x=1,y=1,z=0)"}
        report = evaluate_run(pairs, responses)
        assert report.overall.gold_count == 3
        assert report.overall.f1 == pytest.approx(0.5)
        assert report.variant_net_gold.gold_count == 1
        assert report.variant_net_gold.f1 == 1.0

    def test_report_round_trip(self):
        pairs = self.pairs()
        responses = {("g", 0): "place(color='red',x=0,y=1,z=0)", ("g", 1): None}
        report = evaluate_run(pairs, responses)
        loaded = EvalReport.from_dict(report.to_dict())
        assert loaded.overall == report.overall
        assert loaded.variant_net_gold == report.variant_net_gold
        assert loaded.missing == report.missing
        assert [(t.game_id, t.turn_index, t.tp) for t in loaded.turns] == [
            (t.game_id, t.turn_index, t.tp) for t in report.turns
        ]
