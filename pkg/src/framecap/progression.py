"""Progression detection: pseudo-label consensus and evaluation metrics.

Pseudo mode asks a text judge whether two captions suggest any visible
physical change; evaluation mode asks whether the described action has
progressed, scored against human gold with balanced accuracy. Majority
voting over all candidate x judge verdicts yields one consensus
visual-change label per adjacent frame pair; unsure verdicts never count
toward either side.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Any, Sequence

from .core import SCHEMA_VERSION, FrameRef, FrameSequence, _check_keys, _check_version
from .gateway import Gateway, ModelRequest, DecodeParams
from .protocol import PromptKind, ReplyParseError, parse_choice, render_prompt

CHANGE = "change"
NO_CHANGE = "no_change"
UNSURE = "unsure"
INDETERMINATE = "indeterminate"

PROGRESSION = "progression"
NO_PROGRESSION = "no_progression"

MODES = ("pseudo", "eval")

# Letter -> label, per template. The pseudo template's option A is "the
# images likely look similar"; the eval template's option A is "the action
# has advanced".
_OPTION_LABELS = {
    "pseudo": (NO_CHANGE, CHANGE, UNSURE),
    "eval": (CHANGE, NO_CHANGE, UNSURE),
}


@dataclass(frozen=True)
class ChangeVerdict:
    """One judge's visual-change/progression call on an adjacent pair."""

    pair: tuple[FrameRef, FrameRef]
    candidate_index: int
    judge_id: str
    label: str
    mode: str

    def __post_init__(self) -> None:
        if self.label not in (CHANGE, NO_CHANGE, UNSURE):
            raise ValueError(f"bad verdict label {self.label!r}")
        if self.mode not in MODES:
            raise ValueError(f"bad mode {self.mode!r}")

    @property
    def verdict_id(self) -> str:
        a, b = self.pair
        return f"v:{a.video_id}:{a.index}-{b.index}:c{self.candidate_index}:{self.judge_id}:{self.mode}"

    def to_dict(self) -> dict[str, Any]:
        return {
            "schema_version": SCHEMA_VERSION,
            "verdict_id": self.verdict_id,
            "pair": [self.pair[0].to_dict(), self.pair[1].to_dict()],
            "candidate_index": self.candidate_index,
            "judge_id": self.judge_id,
            "label": self.label,
            "mode": self.mode,
        }

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "ChangeVerdict":
        _check_keys(
            cls.__name__,
            d,
            {"schema_version", "verdict_id", "pair", "candidate_index", "judge_id", "label", "mode"},
            set(),
        )
        _check_version(d)
        return cls(
            pair=(FrameRef.from_dict(d["pair"][0]), FrameRef.from_dict(d["pair"][1])),
            candidate_index=int(d["candidate_index"]),
            judge_id=d["judge_id"],
            label=d["label"],
            mode=d["mode"],
        )


@dataclass(frozen=True)
class ConsensusLabel:
    """Majority-vote visual-change label for one adjacent pair."""

    pair: tuple[FrameRef, FrameRef]
    label: str
    votes_for: int
    votes_against: int
    abstentions: int

    def __post_init__(self) -> None:
        if self.label not in (CHANGE, NO_CHANGE, INDETERMINATE):
            raise ValueError(f"bad consensus label {self.label!r}")

    def to_dict(self) -> dict[str, Any]:
        return {
            "schema_version": SCHEMA_VERSION,
            "pair": [self.pair[0].to_dict(), self.pair[1].to_dict()],
            "label": self.label,
            "votes_for": self.votes_for,
            "votes_against": self.votes_against,
            "abstentions": self.abstentions,
        }

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "ConsensusLabel":
        _check_keys(
            cls.__name__,
            d,
            {"schema_version", "pair", "label", "votes_for", "votes_against", "abstentions"},
            set(),
        )
        _check_version(d)
        return cls(
            pair=(FrameRef.from_dict(d["pair"][0]), FrameRef.from_dict(d["pair"][1])),
            label=d["label"],
            votes_for=int(d["votes_for"]),
            votes_against=int(d["votes_against"]),
            abstentions=int(d["abstentions"]),
        )


@dataclass(frozen=True)
class GoldProgression:
    """Human-annotated action-progression label for an adjacent pair."""

    pair: tuple[FrameRef, FrameRef]
    label: str
    annotator: str

    def __post_init__(self) -> None:
        if self.label not in (PROGRESSION, NO_PROGRESSION):
            raise ValueError(f"bad gold label {self.label!r}")

    def to_dict(self) -> dict[str, Any]:
        return {
            "schema_version": SCHEMA_VERSION,
            "pair": [self.pair[0].to_dict(), self.pair[1].to_dict()],
            "label": self.label,
            "annotator": self.annotator,
        }

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "GoldProgression":
        _check_keys(
            cls.__name__, d, {"schema_version", "pair", "label", "annotator"}, set()
        )
        _check_version(d)
        return cls(
            pair=(FrameRef.from_dict(d["pair"][0]), FrameRef.from_dict(d["pair"][1])),
            label=d["label"],
            annotator=d["annotator"],
        )


def judge_pair_change(
    gateway: Gateway,
    judge_id: str,
    c1: str,
    c2: str,
    mode: str,
    action: str | None = None,
    pair: tuple[FrameRef, FrameRef] | None = None,
    candidate_index: int = 0,
    decode: DecodeParams = DecodeParams(),
) -> ChangeVerdict:
    """Ask one text judge whether a caption pair indicates change.

    Renders the mode's template, parses the A/B/C reply into a label, and
    records provenance. Unparseable replies become unsure; gateway errors
    propagate. Eval mode requires the action label (the template has an
    Action slot).
    """
    if mode not in MODES:
        raise ValueError(f"mode must be one of {MODES}, got {mode!r}")
    if mode == "eval":
        if action is None:
            raise ValueError("eval mode requires an action label")
        prompt = render_prompt(
            PromptKind.PROGRESSION_EVAL, action=action, desc1=c1, desc2=c2
        )
    else:
        prompt = render_prompt(PromptKind.PROGRESSION_PSEUDO, desc1=c1, desc2=c2)

    reply = gateway.complete(
        ModelRequest(backend_id=judge_id, role="text_judge", prompt=prompt, decode=decode)
    )
    try:
        label = _OPTION_LABELS[mode][parse_choice(reply.text, 3)]
    except ReplyParseError:
        label = UNSURE
    if pair is None:
        pair = (
            FrameRef(video_id="", index=0, timestamp_s=0, uri="-"),
            FrameRef(video_id="", index=1, timestamp_s=1, uri="-"),
        )
    return ChangeVerdict(
        pair=pair, candidate_index=candidate_index, judge_id=judge_id, label=label, mode=mode
    )


def _majority(labels: Sequence[str]) -> tuple[str, int, int, int]:
    votes_for = sum(1 for l in labels if l == CHANGE)
    votes_against = sum(1 for l in labels if l == NO_CHANGE)
    abstentions = sum(1 for l in labels if l == UNSURE)
    if votes_for > votes_against:
        label = CHANGE
    elif votes_against > votes_for:
        label = NO_CHANGE
    else:
        label = INDETERMINATE
    return label, votes_for, votes_against, abstentions


def consensus_change(verdicts: Sequence[ChangeVerdict]) -> ConsensusLabel:
    """Strict-majority consensus over all verdicts for one frame pair.

    Unsure verdicts abstain. An exact tie of non-abstaining votes, or an
    all-abstain panel, yields indeterminate. Permutation-invariant and
    monotone: one extra change vote never flips change to no_change.
    """
    if not verdicts:
        raise ValueError("consensus requires at least one verdict")
    label, votes_for, votes_against, abstentions = _majority([v.label for v in verdicts])
    return ConsensusLabel(
        pair=verdicts[0].pair,
        label=label,
        votes_for=votes_for,
        votes_against=votes_against,
        abstentions=abstentions,
    )


def consensus_change_per_judge(verdicts: Sequence[ChangeVerdict]) -> ConsensusLabel:
    """Alternative pooling: majority within each judge first, then across.

    A judge whose own votes tie abstains at the panel level.
    """
    if not verdicts:
        raise ValueError("consensus requires at least one verdict")
    by_judge: dict[str, list[str]] = {}
    for v in verdicts:
        by_judge.setdefault(v.judge_id, []).append(v.label)
    judge_votes = []
    for judge_id in sorted(by_judge):
        label, _, _, _ = _majority(by_judge[judge_id])
        judge_votes.append(UNSURE if label == INDETERMINATE else label)
    label, votes_for, votes_against, abstentions = _majority(judge_votes)
    return ConsensusLabel(
        pair=verdicts[0].pair,
        label=label,
        votes_for=votes_for,
        votes_against=votes_against,
        abstentions=abstentions,
    )


def classify_pair(candidate_label: str, consensus: ConsensusLabel) -> str:
    """Gate one candidate's change label against the consensus.

    pass  -- candidate agrees with a determinate consensus
    fail  -- candidate contradicts it
    skip  -- consensus indeterminate, or the candidate itself is unsure
    """
    if consensus.label == INDETERMINATE or candidate_label == UNSURE:
        return "skip"
    return "pass" if candidate_label == consensus.label else "fail"


@dataclass(frozen=True)
class DistinctFrames:
    """Indices of visually distinct frames plus coercion provenance."""

    indices: tuple[int, ...]
    coerced_pairs: tuple[int, ...]  # adjacent-pair positions treated as no_change

    @property
    def m(self) -> int:
        return len(self.indices)


def distinct_frames(
    seq: FrameSequence, consensus: Sequence[ConsensusLabel]
) -> DistinctFrames:
    """Greedy left-to-right selection of visually distinct frames.

    Frame 0 is always kept; frame i is kept iff the consensus for the
    adjacent pair (i-1, i) is change. Indeterminate consensus is treated
    as no_change (conservative) and recorded in coerced_pairs.
    """
    t = seq.length
    if len(consensus) != t - 1:
        raise ValueError(f"need {t - 1} consensus labels for T={t}, got {len(consensus)}")
    kept = [0]
    coerced = []
    for i in range(1, t):
        label = consensus[i - 1].label
        if label == INDETERMINATE:
            coerced.append(i - 1)
            label = NO_CHANGE
        if label == CHANGE:
            kept.append(i)
    return DistinctFrames(indices=tuple(kept), coerced_pairs=tuple(coerced))


def progression_prediction(label: str) -> str:
    """Map a verdict label to a binary progression prediction.

    Unsure maps to no_progression (conservative: never manufactures
    progression out of judge uncertainty).
    """
    return PROGRESSION if label == CHANGE else NO_PROGRESSION


def balanced_accuracy(
    preds: Sequence[str], gold: Sequence["GoldProgression | str"]
) -> float:
    """Mean of true-positive and true-negative rates (positive = progression).

    Undefined when gold lacks a class; the caller must stratify then.
    """
    gold_labels = [g.label if isinstance(g, GoldProgression) else g for g in gold]
    if len(preds) != len(gold_labels):
        raise ValueError(f"length mismatch: {len(preds)} preds vs {len(gold_labels)} gold")
    for lab in list(preds) + gold_labels:
        if lab not in (PROGRESSION, NO_PROGRESSION):
            raise ValueError(f"bad progression label {lab!r}")
    pos = sum(1 for g in gold_labels if g == PROGRESSION)
    neg = len(gold_labels) - pos
    if pos == 0 or neg == 0:
        missing = PROGRESSION if pos == 0 else NO_PROGRESSION
        raise ValueError(f"undefined balanced accuracy: no {missing} examples in gold")
    tp = sum(1 for p, g in zip(preds, gold_labels) if g == PROGRESSION and p == PROGRESSION)
    tn = sum(1 for p, g in zip(preds, gold_labels) if g == NO_PROGRESSION and p == NO_PROGRESSION)
    return (tp / pos + tn / neg) / 2.0
