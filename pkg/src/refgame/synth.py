"""Synthetic corpora: scripted dialogues with markables, flags, links and
noisy multi-annotator judgements over generated scenarios.

This is fixture machinery: it gives every downstream pipeline (stats,
agreement, gold aggregation, model training, tagging, selfplay, rendering)
a valid corpus to run on without any external data.  The scripts are
template-based and deliberately simple; they are not a model of human
dialogue."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .corpus import (
    AnnotatedCorpus,
    Dialogue,
    Markable,
    Message,
    ReferentJudgement,
    Selection,
)
from .scenario import Scenario, ScenarioConfig, generate_scenario


def _size_word(e, config: ScenarioConfig) -> str:
    t = (e.size - config.size_min) / (config.size_max - config.size_min)
    return "small" if t < 1 / 3 else ("medium" if t < 2 / 3 else "large")


def _color_word(e) -> str:
    return "dark" if e.color < 85 else ("gray" if e.color < 170 else "light")


@dataclass
class _UttBuilder:
    """Accumulates tokens and markable spans for one utterance."""

    tokens: list
    spans: list  # (start, end, referents or None, flags dict)

    def words(self, text: str) -> None:
        self.tokens.extend(text.split())

    def markable(self, text: str, referents=None, **flags) -> int:
        start = len(self.tokens)
        self.words(text)
        self.spans.append((start, len(self.tokens), referents, flags))
        return len(self.spans) - 1


def make_synthetic_corpus(
    n_dialogues: int,
    seed: int = 0,
    *,
    n_annotators: int = 3,
    flip_rate: float = 0.02,
    success_rate: float = 0.8,
    config: ScenarioConfig | None = None,
) -> AnnotatedCorpus:
    """Build a valid annotated corpus of scripted referring-game dialogues."""
    config = config or ScenarioConfig()
    master = np.random.SeedSequence(seed)
    streams = master.spawn(n_dialogues)
    scenarios: dict[str, Scenario] = {}
    dialogues: list[Dialogue] = []
    markables: list[Markable] = []
    judgements: list[ReferentJudgement] = []

    for d_idx in range(n_dialogues):
        rng = np.random.default_rng(streams[d_idx])
        k = [4, 5, 6][d_idx % 3]
        scenario = generate_scenario(config, k, rng)
        if scenario.id not in scenarios:
            scenarios[scenario.id] = scenario
        did = f"d{d_idx:05d}"
        shared = sorted(scenario.shared_ids)
        target = int(shared[rng.integers(len(shared))])
        t_ent = scenario.entity(target)
        vis_a = list(scenario.view_a.visible)
        vis_b = list(scenario.view_b.visible)

        utts: list[_UttBuilder] = []
        speakers: list[str] = []
        per_utt_marks: list[list[tuple[int, int, object, dict]]] = []

        def say(speaker: str) -> _UttBuilder:
            b = _UttBuilder(tokens=[], spans=[])
            utts.append(b)
            speakers.append(speaker)
            return b

        size_w = _size_word(t_ent, config)
        color_w = _color_word(t_ent)

        style = int(rng.integers(5))
        u = say("A")
        u.words("i have")
        if style == 0:
            u.markable(f"a {size_w} {color_w} dot", {target})
        elif style == 1:
            buddy = int(vis_a[int(rng.integers(7))])
            while buddy == target:
                buddy = int(vis_a[int(rng.integers(7))])
            b_ent = scenario.entity(buddy)
            if d_idx % 2:
                first = u.markable(f"a {size_w} {color_w} dot", {target})
                u.words("with")
                u.markable(f"a {_color_word(b_ent)} one", {buddy})
                u.words("next to")
                anaphor = u.markable("it", None)
                u.spans[anaphor] = (*u.spans[anaphor][:2], None, {"anaphora_idx": first})
            else:
                cataphor = u.markable("it", None)
                u.words("i mean")
                tgt_idx = u.markable(f"a {size_w} {color_w} dot", {target})
                u.words("with")
                u.markable(f"a {_color_word(b_ent)} one", {buddy})
                u.spans[cataphor] = (*u.spans[cataphor][:2], None, {"cataphora_idx": tgt_idx})
        elif style == 2:
            mates = sorted(
                (e for e in vis_a if e != target),
                key=lambda e: abs(scenario.entity(e).color - t_ent.color),
            )[:1]
            group = {target, int(mates[0])}
            u.markable(f"two {color_w} dots", group)
            u.words("close together")
        elif style == 3:
            u.markable(f"a {size_w} {color_w} dot", {target})
            u.words("does that match ?")
        else:
            u.markable("a lonely cluster", None, generic=True)
            u.words("and")
            u.markable(f"a {size_w} {color_w} dot", {target})

        reply = int(rng.integers(4))
        u = say("B")
        if reply == 0:
            u.words("yes i see")
            u.markable("it", {target})
        elif reply == 1:
            u.words("no")
            u.markable("none of mine", None, no_referent=True)
            u.words(f"look {size_w}")
        elif reply == 2:
            u.markable("all of my dots", None, all_referents=True)
            u.words(f"are {color_w} here")
        else:
            u.words("i might see")
            u.markable(f"that {color_w} dot", {target})

        u = say("A")
        u.words("ok lets pick")
        u.markable(f"the {size_w} {color_w} one", {target})

        events: list = [Message(speaker=s, tokens=tuple(b.tokens)) for s, b in zip(speakers, utts)]
        success = bool(rng.random() < success_rate)
        pick_a = target
        if success:
            pick_b = target
        else:
            others = [e for e in vis_b if e != target]
            pick_b = int(others[int(rng.integers(len(others)))])
        events.append(Selection(speaker="A", entity_id=pick_a))
        events.append(Selection(speaker="B", entity_id=pick_b))
        dialogues.append(
            Dialogue(id=did, scenario_id=scenario.id, events=tuple(events), outcome=pick_a == pick_b)
        )

        # freeze markable records (ids needed before links can resolve)
        utt_mark_ids: list[list[str]] = []
        for u_idx, b in enumerate(utts):
            ids = []
            for s_idx in range(len(b.spans)):
                ids.append(f"{did}_m{u_idx}_{s_idx}")
            utt_mark_ids.append(ids)
        for u_idx, (b, speaker) in enumerate(zip(utts, speakers)):
            visible = frozenset(scenario.view(speaker).visible)
            for s_idx, (start, end, referents, flags) in enumerate(b.spans):
                anaphora_idx = flags.pop("anaphora_idx", None)
                cataphora_idx = flags.pop("cataphora_idx", None)
                mark = Markable(
                    id=utt_mark_ids[u_idx][s_idx],
                    dialogue_id=did,
                    utterance_index=u_idx,
                    start_token=start,
                    end_token=end,
                    speaker=speaker,
                    anaphora_of=utt_mark_ids[u_idx][anaphora_idx] if anaphora_idx is not None else None,
                    cataphora_of=utt_mark_ids[u_idx][cataphora_idx] if cataphora_idx is not None else None,
                    **flags,
                )
                markables.append(mark)
                if not mark.is_manual or referents is None:
                    continue
                truth = frozenset(int(r) for r in referents)
                assert truth <= visible
                for a_idx in range(n_annotators):
                    noisy = set(truth)
                    for e in sorted(visible):
                        if rng.random() < flip_rate:
                            noisy.symmetric_difference_update({e})
                    unident = rng.random() < 0.01
                    judgements.append(
                        ReferentJudgement(
                            markable_id=mark.id,
                            annotator_id=f"ann{a_idx}",
                            referents=frozenset() if unident else frozenset(noisy),
                            ambiguous=noisy != truth and rng.random() < 0.5,
                            unidentifiable=unident,
                        )
                    )

    return AnnotatedCorpus.build(scenarios.values(), dialogues, markables, judgements)


def make_span_annotations(
    corpus: AnnotatedCorpus, n_annotators: int = 3, jitter: float = 0.05, seed: int = 0
) -> dict[str, list[Markable]]:
    """Simulated independent markable-detection passes: each annotator
    reproduces the corpus markables, occasionally shifting a span end by
    one token (for span-agreement statistics)."""
    rng = np.random.default_rng(seed)
    out: dict[str, list[Markable]] = {}
    for a_idx in range(n_annotators):
        name = f"spanner{a_idx}"
        marks = []
        for mid in sorted(corpus.markables):
            m = corpus.markables[mid]
            end = m.end_token
            n_tokens = len(corpus.utterance_tokens(m))
            if a_idx > 0 and rng.random() < jitter and end < n_tokens:
                end += 1
            marks.append(
                Markable(
                    id=f"{name}_{m.id}",
                    dialogue_id=m.dialogue_id,
                    utterance_index=m.utterance_index,
                    start_token=m.start_token,
                    end_token=end,
                    speaker=m.speaker,
                )
            )
        out[name] = marks
    return out
