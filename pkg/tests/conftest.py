"""Shared fixtures: synthetic frame sequences and oracle mock backends.

The oracle mocks answer by reading the rendered prompt (and the attached
frame's uri), so they are pure functions of the request: runs using them
are fully deterministic.
"""

from __future__ import annotations

import re

import pytest

from framecap.core import CaptionSequence, FrameRef, FrameSequence
from framecap.gateway import MockScript, make_mock_gateway
from framecap.protocol import UNSURE_OPTION

PSEUDO_D1 = re.compile(r"^Image 1 description: (.*)$", re.MULTILINE)
PSEUDO_D2 = re.compile(r"^Image 2 description: (.*)$", re.MULTILINE)
EVAL_D1 = re.compile(r"^Image 1: (.*)$", re.MULTILINE)
EVAL_D2 = re.compile(r"^Image 2: (.*)$", re.MULTILINE)
OPTION_RE = re.compile(r"^([A-Z])\. (.*)$", re.MULTILINE)


def frame(video_id: str, idx: int, uri: str | None = None) -> FrameRef:
    return FrameRef(
        video_id=video_id,
        index=idx,
        timestamp_s=idx,
        uri=uri or f"mem://{video_id}/{idx}",
    )


def make_seq(
    video_id: str,
    t: int,
    action: str = "mixing eggs",
    split: str = "train",
    source_dataset: str | None = None,
) -> FrameSequence:
    return FrameSequence(
        frames=tuple(frame(video_id, i) for i in range(t)),
        action=action,
        split=split,
        source_dataset=source_dataset,
    )


def make_captions(seq: FrameSequence, texts, source="cap-a", mode="pair_window", seed=0):
    return CaptionSequence(
        video_id=seq.video_id,
        captions=tuple(texts),
        source=source,
        context_mode=mode,
        generation_seed=seed,
    )


def parse_pseudo_descs(prompt: str) -> tuple[str, str]:
    return PSEUDO_D1.search(prompt).group(1), PSEUDO_D2.search(prompt).group(1)


def parse_eval_descs(prompt: str) -> tuple[str, str]:
    return EVAL_D1.search(prompt).group(1), EVAL_D2.search(prompt).group(1)


def parse_options(prompt: str) -> list[tuple[str, str]]:
    return OPTION_RE.findall(prompt)


def pseudo_change_oracle(req) -> str:
    """Visual change iff the two descriptions differ textually."""
    d1, d2 = parse_pseudo_descs(req.prompt)
    return "A" if d1 == d2 else "B"


def eval_progress_oracle(req) -> str:
    """Action progression iff the two descriptions differ textually."""
    d1, d2 = parse_eval_descs(req.prompt)
    return "B" if d1 == d2 else "A"


def frame_marker(f: FrameRef) -> str:
    return f"[f{f.index}]"


def matching_oracle(req) -> str:
    """Pick the option whose text carries the attached frame's marker."""
    marker = frame_marker(req.images[0])
    unsure_letter = "A"
    for letter, text in parse_options(req.prompt):
        if text == UNSURE_OPTION:
            unsure_letter = letter
        elif marker in text:
            return letter
    return unsure_letter


def marked_pair_captioner(backend: str):
    """Captioner emitting distinct, frame-marked captions per window."""

    def reply(req) -> str:
        lines = [
            f"<Frame {i + 1}>: {f.video_id} step {f.index} {frame_marker(f)} by {backend}"
            for i, f in enumerate(req.images)
        ]
        return "\n".join(lines)

    return reply


# --- planted-stage oracles ----------------------------------------------
#
# Frames carry their action stage in the uri (…?s=N); the captioner
# surfaces the stage in text and the eval judge compares stages, so the
# judged progression equals the planted ground truth exactly.

STAGE_RE = re.compile(r"stage (\d+)")


def stage_frames(video_id: str, stages) -> FrameSequence:
    frames = tuple(
        FrameRef(video_id, i, i, f"mem://{video_id}/{i}?s={s}") for i, s in enumerate(stages)
    )
    return FrameSequence(frames=frames, action="kneading dough", split="eval")


def stage_captioner(req) -> str:
    lines = []
    for i, f in enumerate(req.images):
        stage = f.uri.split("?s=")[1]
        lines.append(f"<Frame {i + 1}>: {f.video_id} stage {stage} detail {frame_marker(f)}")
    return "\n".join(lines)


def stage_eval_judge(req) -> str:
    """Action progression iff the described stages (or raw texts) differ."""
    d1, d2 = parse_eval_descs(req.prompt)
    m1, m2 = STAGE_RE.search(d1), STAGE_RE.search(d2)
    if m1 and m2:
        return "A" if m1.group(1) != m2.group(1) else "B"
    return "A" if d1 != d2 else "B"


@pytest.fixture
def oracle_gateway():
    """Gateway with a marked captioner plus faithful oracle judges."""
    return make_mock_gateway(
        {
            "cap-a": (("captioner",), MockScript.responder(marked_pair_captioner("cap-a"))),
            "cap-b": (("captioner",), MockScript.responder(marked_pair_captioner("cap-b"))),
            "judge-1": (("text_judge",), MockScript.responder(pseudo_change_oracle)),
            "judge-eval": (("text_judge",), MockScript.responder(eval_progress_oracle)),
            "vlm-judge": (("vision_judge",), MockScript.responder(matching_oracle)),
        }
    )
