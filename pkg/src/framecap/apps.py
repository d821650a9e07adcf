"""Caption-driven applications.

Keyframe selection turns per-frame captions into a compact frame set: a
sliding two-frame window is captioned, a judge decides per step whether
the action progressed, and only progressing frames are kept (frame 0
always is). Fixed-N selection, zero-shot frame classification, and QA
over captions all route frame-wise captions through a text judge.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from typing import Sequence

from .core import CaptionSequence, FrameSequence
from .curate import caption_with_window
from .gateway import DecodeParams, Gateway, GatewayError, ModelRequest
from .progression import CHANGE, judge_pair_change
from .protocol import LETTERS, ReplyParseError, parse_choice
from .seeding import derive_seed


@dataclass(frozen=True)
class KeyframeStep:
    """One window judgment: step t compared captions (c_{t-1}, c_t)."""

    t: int
    label: str  # change | no_change | unsure (unsure is logged, treated as skip)
    caption_pair: tuple[str, str]


@dataclass(frozen=True)
class KeyframeResult:
    selected: tuple[int, ...]
    log: tuple[KeyframeStep, ...]
    captions: tuple[str, ...]

    def __post_init__(self) -> None:
        if not self.selected or self.selected[0] != 0:
            raise ValueError("frame 0 must always be selected")
        if any(b <= a for a, b in zip(self.selected, self.selected[1:])):
            raise ValueError("selected indices must be strictly increasing")


def select_keyframes(
    gateway: Gateway,
    frames: FrameSequence,
    captioner: str,
    judge: str,
    seed: int = 0,
    captioner_decode: DecodeParams = DecodeParams(),
    judge_decode: DecodeParams = DecodeParams(),
) -> KeyframeResult:
    """Keep exactly the frames whose window showed action progression.

    Captions come from the sliding pair window; for each t in 1..T-1 the
    judge compares (c_{t-1}, c_t) in eval mode and v_t is selected iff the
    answer is progression. The window advances by one every step whether
    or not v_t was kept. A judge abstain skips the frame (logged).
    """
    if frames.length < 2:
        raise ValueError("keyframe selection needs at least 2 frames")
    captions = caption_with_window(
        gateway, captioner, frames, "pair", captioner_decode,
        seed=derive_seed(seed, "keyframes", frames.video_id),
    )
    selected = [0]
    log: list[KeyframeStep] = []
    for t in range(1, frames.length):
        c_prev, c_cur = captions.captions[t - 1], captions.captions[t]
        verdict = judge_pair_change(
            gateway, judge, c_prev, c_cur, "eval", action=frames.action,
            pair=(frames.frames[t - 1], frames.frames[t]), decode=judge_decode,
        )
        log.append(KeyframeStep(t=t, label=verdict.label, caption_pair=(c_prev, c_cur)))
        if verdict.label == CHANGE:
            selected.append(t)
    return KeyframeResult(
        selected=tuple(selected), log=tuple(log), captions=captions.captions
    )


def _caption_listing(captions: Sequence[str]) -> str:
    return "\n".join(f"Frame {i + 1}: {c}" for i, c in enumerate(captions))


def select_n_keyframes(
    gateway: Gateway,
    captions: CaptionSequence,
    n: int,
    judge: str,
    decode: DecodeParams = DecodeParams(),
) -> tuple[int, ...]:
    """Ask a text judge for the n most representative frames (0-based result).

    The judge replies with 1-based frame numbers. A reply without exactly
    n distinct in-range numbers is an error; there is no silent fallback.
    """
    t = len(captions.captions)
    if not 1 <= n <= t:
        raise ValueError(f"n must be in [1, {t}], got {n}")
    if n == t:
        return tuple(range(t))
    prompt = (
        "These are frame-wise captions from a video sampled at 1 FPS:\n\n"
        f"{_caption_listing(captions.captions)}\n\n"
        f"Select the {n} most representative frames that best capture the "
        "progression of the action. Reply with only the "
        f"{n} frame numbers, separated by commas."
    )
    reply = gateway.complete(
        ModelRequest(backend_id=judge, role="text_judge", prompt=prompt, decode=decode)
    )
    tokens = [int(tok) for tok in re.findall(r"\d+", reply.text)]
    if len(tokens) != n:
        raise ValueError(f"expected {n} frame numbers, found {len(tokens)}: {reply.text!r}")
    if len(set(tokens)) != n:
        raise ValueError(f"indices not distinct: {tokens}")
    if any(not 1 <= tok <= t for tok in tokens):
        raise ValueError(f"frame number out of range 1..{t}: {tokens}")
    return tuple(sorted(tok - 1 for tok in tokens))


@dataclass(frozen=True)
class FrameLabelResult:
    """Per-frame label choices; None marks an abstain."""

    choices: tuple[int | None, ...]

    @property
    def abstains(self) -> tuple[int, ...]:
        return tuple(i for i, c in enumerate(self.choices) if c is None)


def concat_window_captions(windows: Sequence[tuple[str, str]]) -> list[str]:
    """Merge both captions each frame received from its two windows.

    Frame t is described once in window (v_{t-1}, v_t) and once in
    (v_t, v_{t+1}); concatenating the two gives classifiers richer
    context. End frames have only one window.
    """
    if not windows:
        raise ValueError("need at least one window")
    t = len(windows) + 1
    out = [windows[0][0]]
    for i in range(1, t - 1):
        out.append(f"{windows[i - 1][1]} {windows[i][0]}")
    out.append(windows[t - 2][1])
    return out


def classify_frames(
    gateway: Gateway,
    captions: Sequence[str],
    labels: Sequence[str],
    judge: str,
    decode: DecodeParams = DecodeParams(),
) -> FrameLabelResult:
    """Closed-set multi-choice classification of each frame from its caption.

    No unsure option is offered (accuracy downstream is over the closed
    label set); unparseable replies and empty captions abstain.
    """
    if len(labels) < 2:
        raise ValueError("need at least 2 labels")
    option_block = "\n".join(f"{LETTERS[i]}. {lab}" for i, lab in enumerate(labels))
    choices: list[int | None] = []
    for caption in captions:
        if not caption.strip():
            choices.append(None)
            continue
        prompt = (
            "A video frame from an action sequence is described as follows:\n\n"
            f"{caption}\n\n"
            "Which label best matches the description?\n\n"
            f"{option_block}\n\n"
            "Reply with only the corresponding letter (A, B, C, etc.)"
        )
        try:
            reply = gateway.complete(
                ModelRequest(backend_id=judge, role="text_judge", prompt=prompt, decode=decode)
            )
            choices.append(parse_choice(reply.text, len(labels)))
        except (ReplyParseError, GatewayError):
            choices.append(None)
    return FrameLabelResult(choices=tuple(choices))


def qa_over_captions(
    gateway: Gateway,
    captions: CaptionSequence,
    question: str,
    options: Sequence[str],
    judge: str,
    decode: DecodeParams = DecodeParams(),
) -> int | None:
    """Answer one multi-choice question from the frame-wise captions.

    Returns the chosen option index, or None when the judge's reply is
    unparseable (abstain).
    """
    if len(options) < 2:
        raise ValueError("need at least 2 options")
    option_block = "\n".join(f"{LETTERS[i]}. {opt}" for i, opt in enumerate(options))
    prompt = (
        "These are frame-wise captions of a video, in temporal order:\n\n"
        f"{_caption_listing(captions.captions)}\n\n"
        f"Question: {question}\n\n"
        f"{option_block}\n\n"
        "Reply with only the corresponding letter (A, B, C, etc.)"
    )
    try:
        reply = gateway.complete(
            ModelRequest(backend_id=judge, role="text_judge", prompt=prompt, decode=decode)
        )
        return parse_choice(reply.text, len(options))
    except (ReplyParseError, GatewayError):
        return None
