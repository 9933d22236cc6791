from __future__ import annotations

from pathlib import Path

import numpy as np
import pytest

from refgame.agreement import aggregate_corpus_gold
from refgame.render import color_hex, render_dialogue, render_judgements, render_view
from refgame.scenario import ScenarioConfig, generate_scenario
from refgame.synth import make_synthetic_corpus

GOLDEN = Path(__file__).parent / "golden"


class TestColorMapping:
    def test_black_endpoint(self):
        assert color_hex(0.0) == "#000000"

    def test_white_endpoint(self):
        assert color_hex(255.0) == "#ffffff"

    def test_midpoint(self):
        assert color_hex(128.0) == "#808080"

    def test_clamped(self):
        assert color_hex(300.0) == "#ffffff"
        assert color_hex(-5.0) == "#000000"


@pytest.fixture(scope="module")
def scenario():
    return generate_scenario(ScenarioConfig(), 4, np.random.default_rng(2024))


@pytest.fixture(scope="module")
def annotated():
    corpus = make_synthetic_corpus(3, seed=77)
    gold = aggregate_corpus_gold(corpus)
    did = sorted(corpus.dialogues)[0]
    dialogue = corpus.dialogues[did]
    marks = [corpus.markables[m] for m in corpus.markables_by_dialogue[did]]
    refs = {
        m.id: gold[m.id].referents
        for m in marks
        if m.id in gold and not gold[m.id].dropped
    }
    return corpus, dialogue, marks, refs


class TestRenderView:
    def test_plain_view_has_all_dots(self, scenario):
        svg = render_view(scenario.view_a, scenario)
        assert svg.count("<circle") == 1 + 7  # outline + 7 dots

    def test_highlight_adds_ring(self, scenario):
        target = scenario.view_a.visible[2]
        svg = render_view(scenario.view_a, scenario, {"m1": [target]})
        assert svg.count("<circle") == 1 + 7 + 1
        assert "#e41a1c" in svg

    def test_missing_entity_raises(self, scenario):
        not_visible = next(
            e.id for e in scenario.entities if e.id not in scenario.view_a.visible
        )
        with pytest.raises(KeyError):
            render_view(scenario.view_a, scenario, {"m1": [not_visible]})

    def test_byte_deterministic(self, scenario):
        kw = dict(highlights={"m1": [scenario.view_a.visible[0]]}, title="A's view")
        a = render_view(scenario.view_a, scenario, **kw)
        b = render_view(scenario.view_a, scenario, **kw)
        assert a.encode() == b.encode()

    def test_golden_view(self, scenario):
        svg = render_view(
            scenario.view_a, scenario, {"m1": [scenario.view_a.visible[2]]}, title="A's view"
        )
        assert svg.encode() == (GOLDEN / "scenario_view.svg").read_bytes()


class TestRenderDialogue:
    def test_text_only_when_no_markables(self, annotated):
        corpus, dialogue, *_ = annotated
        html = render_dialogue(dialogue, corpus.scenarios[dialogue.scenario_id], [], {})
        assert "<span" not in html
        assert "selected entity" in html

    def test_empty_referents_gray_underline(self, annotated):
        corpus, dialogue, marks, _ = annotated
        html = render_dialogue(
            dialogue, corpus.scenarios[dialogue.scenario_id], marks, {}
        )
        # underlined spans present but keyed to the "no prediction" gray
        assert html.count("#999999") == len(marks)

    def test_golden_dialogue(self, annotated):
        corpus, dialogue, marks, refs = annotated
        html = render_dialogue(dialogue, corpus.scenarios[dialogue.scenario_id], marks, refs)
        assert html.encode() == (GOLDEN / "dialogue.html").read_bytes()

    def test_judgement_panels(self, annotated):
        corpus, *_ = annotated
        mid = next(iter(corpus.judgements))
        html = render_judgements(corpus, mid)
        n_judges = len(corpus.judgements[mid])
        assert html.count("<svg") == n_judges
