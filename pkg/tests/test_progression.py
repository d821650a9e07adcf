"""Progression judging, consensus voting, distinct frames, balanced accuracy."""

import itertools
import random

import pytest

from framecap.gateway import MockScript, make_mock_gateway
from framecap.progression import (
    CHANGE,
    INDETERMINATE,
    NO_CHANGE,
    NO_PROGRESSION,
    PROGRESSION,
    UNSURE,
    ChangeVerdict,
    ConsensusLabel,
    balanced_accuracy,
    classify_pair,
    consensus_change,
    consensus_change_per_judge,
    distinct_frames,
    judge_pair_change,
    progression_prediction,
)

from conftest import frame, make_seq, pseudo_change_oracle


def _gw(reply):
    script = MockScript.constant(reply) if isinstance(reply, str) else MockScript.responder(reply)
    return make_mock_gateway({"j": (("text_judge",), script)})


def _verdicts(labels, judges=None):
    pair = (frame("v", 0), frame("v", 1))
    out = []
    for i, label in enumerate(labels):
        judge = judges[i] if judges else f"judge-{i}"
        out.append(
            ChangeVerdict(pair=pair, candidate_index=0, judge_id=judge, label=label, mode="pseudo")
        )
    return out


def _consensus(label=CHANGE, votes=(1, 0, 0)):
    return ConsensusLabel(
        pair=(frame("v", 0), frame("v", 1)),
        label=label,
        votes_for=votes[0],
        votes_against=votes[1],
        abstentions=votes[2],
    )


# --- judge_pair_change --------------------------------------------------


def test_judge_pseudo_option_b_is_change():
    v = judge_pair_change(_gw("B"), "j", "desc one", "desc two", "pseudo")
    assert v.label == CHANGE


def test_judge_pseudo_option_c_is_unsure():
    v = judge_pair_change(_gw("C"), "j", "d1", "d2", "pseudo")
    assert v.label == UNSURE


def test_identical_captions_with_faithful_judge_give_no_change():
    gw = make_mock_gateway({"j": (("text_judge",), MockScript.responder(pseudo_change_oracle))})
    v = judge_pair_change(gw, "j", "same text", "same text", "pseudo")
    assert v.label == NO_CHANGE


def test_eval_mode_option_a_is_progression_and_needs_action():
    v = judge_pair_change(_gw("A"), "j", "d1", "d2", "eval", action="welding")
    assert v.label == CHANGE
    assert progression_prediction(v.label) == PROGRESSION
    with pytest.raises(ValueError, match="action"):
        judge_pair_change(_gw("A"), "j", "d1", "d2", "eval")


def test_unparseable_reply_becomes_unsure():
    v = judge_pair_change(_gw("no idea, sorry"), "j", "d1", "d2", "pseudo")
    assert v.label == UNSURE


def test_verdict_provenance_recorded():
    pair = (frame("vid", 2), frame("vid", 3))
    v = judge_pair_change(_gw("B"), "j", "a", "b", "pseudo", pair=pair, candidate_index=4)
    assert v.verdict_id == "v:vid:2-3:c4:j:pseudo"


# --- consensus ----------------------------------------------------------


def test_consensus_majority():
    c = consensus_change(_verdicts([CHANGE, CHANGE, NO_CHANGE]))
    assert (c.label, c.votes_for, c.votes_against) == (CHANGE, 2, 1)


def test_consensus_unanimous():
    assert consensus_change(_verdicts([NO_CHANGE] * 6)).label == NO_CHANGE


def test_consensus_tie_is_indeterminate():
    assert consensus_change(_verdicts([CHANGE, NO_CHANGE])).label == INDETERMINATE


def test_consensus_all_abstain_is_indeterminate():
    c = consensus_change(_verdicts([UNSURE, UNSURE]))
    assert (c.label, c.abstentions) == (INDETERMINATE, 2)


def test_consensus_empty_errors():
    with pytest.raises(ValueError):
        consensus_change([])


def test_consensus_counts_conserve():
    for labels in itertools.product([CHANGE, NO_CHANGE, UNSURE], repeat=4):
        c = consensus_change(_verdicts(list(labels)))
        assert c.votes_for + c.votes_against + c.abstentions == 4


def test_consensus_permutation_invariant_and_monotone():
    rng = random.Random(11)
    for _ in range(200):
        labels = [rng.choice([CHANGE, NO_CHANGE, UNSURE]) for _ in range(rng.randint(1, 7))]
        base = consensus_change(_verdicts(labels)).label
        shuffled = labels[:]
        rng.shuffle(shuffled)
        assert consensus_change(_verdicts(shuffled)).label == base
        # monotone: adding one change vote never flips change -> no_change
        grown = consensus_change(_verdicts(labels + [CHANGE])).label
        if base == CHANGE:
            assert grown == CHANGE


def test_per_judge_pooling_differs_when_one_judge_dominates():
    # judge A votes change twice, judge B votes no_change once:
    # joint pooling 2-1 change, per-judge pooling 1-1 indeterminate.
    verdicts = _verdicts([CHANGE, CHANGE, NO_CHANGE], judges=["A", "A", "B"])
    assert consensus_change(verdicts).label == CHANGE
    assert consensus_change_per_judge(verdicts).label == INDETERMINATE


# --- classify_pair ------------------------------------------------------


def test_classify_agreement_passes():
    assert classify_pair(CHANGE, _consensus(CHANGE)) == "pass"


def test_classify_contradiction_fails():
    assert classify_pair(CHANGE, _consensus(NO_CHANGE)) == "fail"


def test_classify_skips():
    assert classify_pair(CHANGE, _consensus(INDETERMINATE, votes=(1, 1, 0))) == "skip"
    assert classify_pair(UNSURE, _consensus(CHANGE)) == "skip"


# --- distinct_frames ----------------------------------------------------


def _consensus_list(seq, labels):
    out = []
    for i, label in enumerate(labels):
        votes = (1, 0, 0) if label == CHANGE else (0, 1, 0) if label == NO_CHANGE else (1, 1, 0)
        out.append(
            ConsensusLabel(
                pair=(seq.frames[i], seq.frames[i + 1]),
                label=label,
                votes_for=votes[0],
                votes_against=votes[1],
                abstentions=votes[2],
            )
        )
    return out


def test_distinct_frames_all_change():
    seq = make_seq("v", 4)
    d = distinct_frames(seq, _consensus_list(seq, [CHANGE, CHANGE, CHANGE]))
    assert d.indices == (0, 1, 2, 3)


def test_distinct_frames_hand_trace():
    seq = make_seq("v", 4)
    d = distinct_frames(seq, _consensus_list(seq, [NO_CHANGE, CHANGE, NO_CHANGE]))
    assert d.indices == (0, 2)


def test_distinct_frames_degenerate_pair():
    seq = make_seq("v", 2)
    d = distinct_frames(seq, _consensus_list(seq, [NO_CHANGE]))
    assert d.indices == (0,) and d.m == 1


def test_distinct_frames_indeterminate_coerced():
    seq = make_seq("v", 3)
    d = distinct_frames(seq, _consensus_list(seq, [INDETERMINATE, CHANGE]))
    assert d.indices == (0, 2)
    assert d.coerced_pairs == (0,)


def test_distinct_frames_properties():
    rng = random.Random(3)
    for _ in range(100):
        t = rng.randint(2, 6)
        seq = make_seq("v", t)
        labels = [rng.choice([CHANGE, NO_CHANGE, INDETERMINATE]) for _ in range(t - 1)]
        d = distinct_frames(seq, _consensus_list(seq, labels))
        assert d.indices[0] == 0
        assert list(d.indices) == sorted(set(d.indices))
        assert d.m <= t


# --- balanced accuracy --------------------------------------------------


def _lab(bits):
    return [PROGRESSION if b else NO_PROGRESSION for b in bits]


def test_balanced_accuracy_perfect():
    assert balanced_accuracy(_lab([1, 0, 1, 0]), _lab([1, 0, 1, 0])) == 1.0


def test_balanced_accuracy_hand_confusion_matrix():
    # gold [1,0,0,0], preds [1,1,0,0]: TPR 1/1, TNR 2/3 -> 5/6
    value = balanced_accuracy(_lab([1, 1, 0, 0]), _lab([1, 0, 0, 0]))
    assert value == pytest.approx(5 / 6, abs=1e-12)


def test_balanced_accuracy_total_inversion():
    assert balanced_accuracy(_lab([0, 1]), _lab([1, 0])) == 0.0


def test_balanced_accuracy_undefined_without_both_classes():
    with pytest.raises(ValueError, match="undefined balanced accuracy"):
        balanced_accuracy(_lab([1, 1]), _lab([1, 1]))


def test_balanced_accuracy_reorder_invariant_and_equals_accuracy_when_balanced():
    rng = random.Random(5)
    for _ in range(50):
        n = rng.randrange(2, 40, 2)
        gold_bits = [1] * (n // 2) + [0] * (n // 2)
        rng.shuffle(gold_bits)
        pred_bits = [rng.randint(0, 1) for _ in range(n)]
        pairs = list(zip(pred_bits, gold_bits))
        value = balanced_accuracy(_lab(pred_bits), _lab(gold_bits))
        rng.shuffle(pairs)
        shuffled = balanced_accuracy(_lab([p for p, _ in pairs]), _lab([g for _, g in pairs]))
        assert value == pytest.approx(shuffled, abs=1e-12)
        plain = sum(1 for p, g in pairs if p == g) / n
        assert value == pytest.approx(plain, abs=1e-12)
