"""Keyframe selection, fixed-N selection, classification, QA."""

import random

import pytest

from framecap.apps import (
    FrameLabelResult,
    KeyframeResult,
    classify_frames,
    concat_window_captions,
    qa_over_captions,
    select_keyframes,
    select_n_keyframes,
)
from framecap.gateway import MockScript, make_mock_gateway
from framecap.progression import CHANGE

from conftest import (
    make_captions,
    make_seq,
    stage_captioner,
    stage_eval_judge,
    stage_frames,
)


def _keyframe_gateway():
    return make_mock_gateway(
        {
            "cap": (("captioner",), MockScript.responder(stage_captioner)),
            "judge": (("text_judge",), MockScript.responder(stage_eval_judge)),
        }
    )


def _text_gateway(fn_or_text):
    script = (
        MockScript.constant(fn_or_text)
        if isinstance(fn_or_text, str)
        else MockScript.responder(fn_or_text)
    )
    return make_mock_gateway({"judge": (("text_judge",), script)})


def planted_keyframes(planted):
    """Brute-force expected set: {0} plus every frame whose step progressed."""
    return tuple([0] + [t for t, p in enumerate(planted, start=1) if p])


def stages_from_planted(planted):
    stages = [0]
    for p in planted:
        stages.append(stages[-1] + (1 if p else 0))
    return stages


# --- select_keyframes -----------------------------------------------------


def test_keyframes_hand_trace_no_yes_no_yes():
    seq = stage_frames("v1", stages_from_planted([False, True, False, True]))
    result = select_keyframes(_keyframe_gateway(), seq, "cap", "judge")
    assert result.selected == (0, 2, 4)
    assert [s.label for s in result.log] == ["no_change", "change", "no_change", "change"]


def test_keyframes_all_yes_selects_all():
    seq = stage_frames("v1", [0, 1, 2, 3])
    result = select_keyframes(_keyframe_gateway(), seq, "cap", "judge")
    assert result.selected == (0, 1, 2, 3)


def test_keyframes_all_no_keeps_only_first():
    seq = stage_frames("v1", [0, 0, 0, 0])
    result = select_keyframes(_keyframe_gateway(), seq, "cap", "judge")
    assert result.selected == (0,)


def test_keyframes_abstaining_judge_skips_frame():
    def flaky(req):
        return "C"  # always uncertain

    gw = make_mock_gateway(
        {
            "cap": (("captioner",), MockScript.responder(stage_captioner)),
            "judge": (("text_judge",), MockScript.responder(flaky)),
        }
    )
    result = select_keyframes(gw, stage_frames("v1", [0, 1, 2]), "cap", "judge")
    assert result.selected == (0,)
    assert all(s.label == "unsure" for s in result.log)


def test_keyframes_match_planted_oracle_many_streams():
    rng = random.Random(42)
    gw = _keyframe_gateway()
    for i in range(50):
        t = rng.randint(2, 6)
        planted = [rng.random() < 0.5 for _ in range(t - 1)]
        seq = stage_frames(f"v{i}", stages_from_planted(planted))
        result = select_keyframes(gw, seq, "cap", "judge")
        assert result.selected == planted_keyframes(planted)
        assert len(result.selected) == 1 + sum(
            1 for s in result.log if s.label == CHANGE
        )


# --- select_n_keyframes -----------------------------------------------------


def _caps(n, vid="v1"):
    seq = make_seq(vid, n)
    return make_captions(seq, [f"stage {i} of the action" for i in range(n)])


def test_select_n_identity_short_circuits():
    gw = _text_gateway("should never be called")
    assert select_n_keyframes(gw, _caps(4), 4, "judge") == (0, 1, 2, 3)
    assert gw.backend("judge").calls == []


def test_select_n_parses_one_based_reply():
    gw = _text_gateway("1, 4, 7, 10")
    caps = make_captions(make_seq("v1", 10), [f"stage {i}" for i in range(10)])
    assert select_n_keyframes(gw, caps, 4, "judge") == (0, 3, 6, 9)


def test_select_n_rejects_duplicates():
    gw = _text_gateway("2, 2, 5")
    with pytest.raises(ValueError, match="not distinct"):
        select_n_keyframes(gw, _caps(6), 3, "judge")


def test_select_n_rejects_wrong_count_and_range():
    with pytest.raises(ValueError, match="expected 3 frame numbers"):
        select_n_keyframes(_text_gateway("1, 2"), _caps(6), 3, "judge")
    with pytest.raises(ValueError, match="out of range"):
        select_n_keyframes(_text_gateway("1, 2, 9"), _caps(6), 3, "judge")
    with pytest.raises(ValueError, match="n must be"):
        select_n_keyframes(_text_gateway("1"), _caps(4), 5, "judge")


# --- classify_frames ---------------------------------------------------------


def label_matching_judge(req):
    """Pick the option whose label text occurs in the described caption."""
    lines = req.prompt.split("\n")
    caption = lines[2]
    from conftest import parse_options

    for letter, text in parse_options(req.prompt):
        if text in caption:
            return letter
    return "?"


def test_classify_scripted_oracle():
    gw = _text_gateway(label_matching_judge)
    result = classify_frames(
        gw, ["eggs fully mixed and cooked"], ["raw", "cooked"], "judge"
    )
    assert result.choices == (1,)


def test_classify_three_frames_hand_vector():
    gw = _text_gateway(label_matching_judge)
    captions = [
        "eggs are raw in the bowl",
        "eggs partly cooked at the edges",
        "eggs fully cooked and plated",
    ]
    result = classify_frames(gw, captions, ["raw", "cooked"], "judge")
    assert result.choices == (0, 1, 1)
    assert result.abstains == ()


def test_classify_empty_caption_abstains_without_call():
    gw = _text_gateway(label_matching_judge)
    result = classify_frames(gw, ["", "eggs raw"], ["raw", "cooked"], "judge")
    assert result.choices == (None, 0)
    assert result.abstains == (0,)
    assert len(gw.backend("judge").calls) == 1


def test_classify_unparseable_abstains():
    gw = _text_gateway("?")
    result = classify_frames(gw, ["anything"], ["raw", "cooked"], "judge")
    assert result.choices == (None,)


def test_classify_needs_two_labels():
    with pytest.raises(ValueError):
        classify_frames(_text_gateway("A"), ["x"], ["only"], "judge")


def test_concat_window_captions_rule():
    windows = [("w1a", "w1b"), ("w2a", "w2b"), ("w3a", "w3b")]
    assert concat_window_captions(windows) == ["w1a", "w1b w2a", "w2b w3a", "w3b"]


# --- qa_over_captions ---------------------------------------------------------


def evidence_judge(req):
    """Answer from planted evidence: option text mentioned in the captions."""
    from conftest import parse_options

    context = req.prompt.split("Question:")[0]
    for letter, text in parse_options(req.prompt):
        if text in context:
            return letter
    return "no clue"


def test_qa_planted_evidence():
    seq = make_seq("v1", 4)
    caps = make_captions(
        seq, ["person enters", "person sits", "the kettle boils over", "person stands"]
    )
    options = ["a dog barks", "the kettle boils over", "a door closes"]
    answer = qa_over_captions(_text_gateway(evidence_judge), caps, "What happened?", options, "judge")
    assert answer == 1


def test_qa_option_order_invariant_with_content_judge():
    seq = make_seq("v1", 2)
    caps = make_captions(seq, ["person enters", "the kettle boils over"])
    options = ["a dog barks", "the kettle boils over", "a door closes"]
    gw = _text_gateway(evidence_judge)
    base = options[qa_over_captions(gw, caps, "What happened?", options, "judge")]
    rng = random.Random(9)
    for _ in range(5):
        shuffled = options[:]
        rng.shuffle(shuffled)
        idx = qa_over_captions(gw, caps, "What happened?", shuffled, "judge")
        assert shuffled[idx] == base


def test_qa_parse_passthrough_and_abstain():
    seq = make_seq("v1", 2)
    caps = make_captions(seq, ["a", "b"])
    assert qa_over_captions(_text_gateway("C"), caps, "q?", ["w", "x", "y", "z"], "judge") == 2
    assert qa_over_captions(_text_gateway("shrug"), caps, "q?", ["w", "x"], "judge") is None
