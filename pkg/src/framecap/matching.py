"""Caption matching as multiple-choice rounds over frames.

Pair mode gates Stage-I caption pairs; sequence mode gates Stage-II
sequences and backs the benchmark's caption-matching metric. Every round
shows the judge a frame plus the candidate captions (independently
shuffled per round, unsure always last) and records the full audit trail:
permutation, correct index, raw reply.

Abstains (the unsure option, an unparseable reply, or a gateway failure
on that round) count as wrong for the acceptance rule but are tracked
separately so judge flakiness is distinguishable from caption failure.
"""

from __future__ import annotations

import random
from dataclasses import dataclass
from typing import Any, Sequence

from .core import SCHEMA_VERSION, FrameRef, _check_keys, _check_version
from .gateway import DecodeParams, Gateway, GatewayError, ModelRequest
from .protocol import McqOptions, PromptKind, ReplyParseError, parse_choice, render_prompt
from .seeding import derive_seed

ACCEPTED = "accepted"
REJECTED = "rejected"
INDETERMINATE = "indeterminate"


@dataclass(frozen=True)
class MatchRound:
    """One frame's multiple-choice round, with its shuffle recorded.

    permutation[j] is the original caption index shown at position j;
    judge_reply_index is the parsed option position (possibly the unsure
    slot) or None when the reply was unparseable or the call failed.
    """

    frame: FrameRef
    options: McqOptions
    permutation: tuple[int, ...]
    correct_index: int
    judge_reply_index: int | None
    raw_reply: str = ""

    def __post_init__(self) -> None:
        if not 0 <= self.correct_index < len(self.options) - 1:
            raise ValueError("correct_index must point at a caption, never at unsure")

    @property
    def is_correct(self) -> bool:
        return self.judge_reply_index == self.correct_index

    @property
    def is_abstain(self) -> bool:
        return self.judge_reply_index is None or (
            self.options.includes_unsure
            and self.judge_reply_index == len(self.options) - 1
        )

    def to_dict(self) -> dict[str, Any]:
        return {
            "frame": self.frame.to_dict(),
            "options": list(self.options.texts),
            "permutation": list(self.permutation),
            "correct_index": self.correct_index,
            "judge_reply_index": self.judge_reply_index,
            "raw_reply": self.raw_reply,
        }

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "MatchRound":
        _check_keys(
            cls.__name__,
            d,
            {"frame", "options", "permutation", "correct_index", "judge_reply_index", "raw_reply"},
            set(),
        )
        return cls(
            frame=FrameRef.from_dict(d["frame"]),
            options=McqOptions(texts=tuple(d["options"]), includes_unsure=True),
            permutation=tuple(d["permutation"]),
            correct_index=int(d["correct_index"]),
            judge_reply_index=(
                int(d["judge_reply_index"]) if d["judge_reply_index"] is not None else None
            ),
            raw_reply=d["raw_reply"],
        )


@dataclass(frozen=True)
class MatchOutcome:
    """Verdict over all rounds of one pair or sequence evaluation."""

    subject: str
    rounds: tuple[MatchRound, ...]
    verdict: str
    n_correct: int
    n_wrong: int
    n_abstain: int

    @property
    def outcome_id(self) -> str:
        return f"m:{self.subject}"

    def to_dict(self) -> dict[str, Any]:
        return {
            "schema_version": SCHEMA_VERSION,
            "subject": self.subject,
            "verdict": self.verdict,
            "n_correct": self.n_correct,
            "n_wrong": self.n_wrong,
            "n_abstain": self.n_abstain,
            "rounds": [r.to_dict() for r in self.rounds],
        }

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "MatchOutcome":
        _check_keys(
            cls.__name__,
            d,
            {"schema_version", "subject", "verdict", "n_correct", "n_wrong", "n_abstain", "rounds"},
            set(),
        )
        _check_version(d)
        return cls(
            subject=d["subject"],
            rounds=tuple(MatchRound.from_dict(r) for r in d["rounds"]),
            verdict=d["verdict"],
            n_correct=int(d["n_correct"]),
            n_wrong=int(d["n_wrong"]),
            n_abstain=int(d["n_abstain"]),
        )


def pair_verdict(n_wrong: int) -> str:
    """Pair rule: accepted iff both rounds correct; no indeterminate band."""
    return ACCEPTED if n_wrong == 0 else REJECTED


def sequence_verdict(m: int, n_wrong: int) -> str:
    """Sequence rule: accepted iff all correct; rejected iff wrong > M/2.

    The band in between is indeterminate (neither training-positive nor
    training-negative).
    """
    if n_wrong == 0:
        return ACCEPTED
    if n_wrong > m / 2:
        return REJECTED
    return INDETERMINATE


def _run_round(
    gateway: Gateway,
    judge: str,
    frame: FrameRef,
    pool: Sequence[str],
    correct_pool_index: int,
    seed: int,
    round_label: object,
    no_shuffle: bool,
    decode: DecodeParams,
) -> MatchRound:
    order = list(range(len(pool)))
    if not no_shuffle:
        rng = random.Random(derive_seed(seed, "match", frame.video_id, frame.index, round_label))
        rng.shuffle(order)
    options = McqOptions.with_unsure([pool[i] for i in order])
    correct_index = order.index(correct_pool_index)
    prompt = render_prompt(PromptKind.CAPTION_MATCHING, options=options)
    reply_index: int | None = None
    try:
        reply = gateway.complete(
            ModelRequest(
                backend_id=judge,
                role="vision_judge",
                prompt=prompt,
                images=(frame,),
                decode=decode,
            )
        )
        raw = reply.text
        try:
            reply_index = parse_choice(raw, len(options))
        except ReplyParseError:
            reply_index = None
    except GatewayError as exc:
        raw = f"<gateway failure: {exc}>"
    return MatchRound(
        frame=frame,
        options=options,
        permutation=tuple(order),
        correct_index=correct_index,
        judge_reply_index=reply_index,
        raw_reply=raw,
    )


def _tally(subject: str, rounds: list[MatchRound], verdict_rule) -> MatchOutcome:
    n_correct = sum(1 for r in rounds if r.is_correct)
    n_wrong = len(rounds) - n_correct
    n_abstain = sum(1 for r in rounds if r.is_abstain)
    return MatchOutcome(
        subject=subject,
        rounds=tuple(rounds),
        verdict=verdict_rule(n_wrong),
        n_correct=n_correct,
        n_wrong=n_wrong,
        n_abstain=n_abstain,
    )


def evaluate_pair_matching(
    gateway: Gateway,
    frames: Sequence[FrameRef],
    captions: Sequence[str],
    judge: str,
    seed: int,
    subject: str = "",
    no_shuffle: bool = False,
    decode: DecodeParams = DecodeParams(),
) -> MatchOutcome:
    """Two rounds, each offering both captions plus unsure.

    Accepted iff the judge picks each frame's own caption in both rounds;
    anything else is rejected.
    """
    if len(frames) != 2 or len(captions) != 2:
        raise ValueError("pair matching needs exactly 2 frames and 2 captions")
    if captions[0] == captions[1]:
        raise ValueError("pair captions must be textually distinct")
    subject = subject or f"{frames[0].video_id}:pair"
    rounds = [
        _run_round(gateway, judge, frames[i], captions, i, seed, i, no_shuffle, decode)
        for i in range(2)
    ]
    return _tally(subject, rounds, pair_verdict)


def evaluate_sequence_matching(
    gateway: Gateway,
    frames: Sequence[FrameRef],
    captions: Sequence[str],
    judge: str,
    seed: int,
    subject: str = "",
    no_shuffle: bool = False,
    decode: DecodeParams = DecodeParams(),
) -> MatchOutcome:
    """M rounds over a pool of all M captions plus unsure, fresh shuffle each.

    Duplicate caption texts are an error: options must be distinguishable.
    """
    m = len(frames)
    if m < 2:
        raise ValueError("sequence matching needs M >= 2 frames (M=1 has no distractors)")
    if len(captions) != m:
        raise ValueError(f"need {m} captions for {m} frames, got {len(captions)}")
    if len(set(captions)) != m:
        raise ValueError("duplicate caption texts: options must be distinguishable")
    subject = subject or f"{frames[0].video_id}:seq"
    rounds = [
        _run_round(gateway, judge, frames[i], captions, i, seed, i, no_shuffle, decode)
        for i in range(m)
    ]
    return _tally(subject, rounds, lambda n_wrong: sequence_verdict(m, n_wrong))


def sequence_level_accuracy(outcomes: Sequence[MatchOutcome]) -> float:
    """Fraction of outcomes where every round was answered correctly."""
    if not outcomes:
        raise ValueError("sequence_level_accuracy needs at least one outcome")
    return sum(1 for o in outcomes if o.verdict == ACCEPTED) / len(outcomes)
