"""Prompt template rendering and reply parsing.

The four templates live as committed assets under ``prompts/`` (normalized
to LF), never inlined in code, so auditing their wording is one diff away.
Rendering is pure string substitution; parsing is forgiving about the
chatty framing judges wrap around their answers but strict about the
answer itself.
"""

from __future__ import annotations

import functools
import re
import string
from dataclasses import dataclass
from enum import Enum
from importlib import resources

LETTERS = string.ascii_uppercase  # option letters A..Z, assigned by position

# Final catch-all option appended to every caption-matching question.
UNSURE_OPTION = (
    "None of the above descriptions match the image, are hard to determine, "
    "or contain incorrect information about the image."
)

# Upper bound accepted by option validation; rendering is further limited
# by the letter range A..Z.
MAX_OPTIONS = 27


class PromptError(ValueError):
    """Template could not be rendered (missing slot, too many options)."""


class ReplyParseError(ValueError):
    """A model reply did not contain the expected structure."""


class PromptKind(str, Enum):
    CAPTION_GENERATION = "caption_generation"
    PROGRESSION_PSEUDO = "progression_pseudo"
    PROGRESSION_EVAL = "progression_eval"
    CAPTION_MATCHING = "caption_matching"


@functools.lru_cache(maxsize=None)
def _load_template(kind: PromptKind) -> string.Template:
    text = (
        resources.files("framecap.prompts")
        .joinpath(f"{kind.value}.txt")
        .read_text(encoding="utf-8")
    )
    return string.Template(text.replace("\r\n", "\n"))


@dataclass(frozen=True)
class McqOptions:
    """Ordered option texts for one multiple-choice round.

    When includes_unsure is set, the unsure text is the final option and is
    never the correct answer.
    """

    texts: tuple[str, ...]
    includes_unsure: bool = False

    def __post_init__(self) -> None:
        object.__setattr__(self, "texts", tuple(self.texts))
        n = len(self.texts)
        if not 2 <= n <= MAX_OPTIONS:
            raise ValueError(f"option count must be in [2, {MAX_OPTIONS}], got {n}")
        if self.includes_unsure and self.texts[-1] != UNSURE_OPTION:
            raise ValueError("unsure must be the final option")

    @classmethod
    def with_unsure(cls, captions: list[str] | tuple[str, ...]) -> "McqOptions":
        return cls(texts=tuple(captions) + (UNSURE_OPTION,), includes_unsure=True)

    def __len__(self) -> int:
        return len(self.texts)

    @property
    def letters(self) -> tuple[str, ...]:
        return tuple(LETTERS[i] for i in range(len(self.texts)))

    def block(self) -> str:
        """The lettered option lines as they appear in the prompt."""
        if len(self.texts) > len(LETTERS):
            raise PromptError(
                f"option count {len(self.texts)} exceeding letter range A-{LETTERS[-1]}"
            )
        return "\n".join(f"{LETTERS[i]}. {t}" for i, t in enumerate(self.texts))


def _format_lines(t: int) -> str:
    lines = [f"<Frame {i}>: Your description" for i in range(1, t)]
    lines.append(f"<Frame {t}>: Your description.")
    return "\n".join(lines)


def render_prompt(kind: PromptKind, **params: object) -> str:
    """Render one of the four templates with its named slots filled.

    Slots per kind:
      caption_generation   T (int >= 1), action (str)
      progression_pseudo   desc1, desc2
      progression_eval     action, desc1, desc2
      caption_matching     options (McqOptions)

    Raises PromptError on a missing slot or an option list that exceeds
    the letter range.
    """
    template = _load_template(kind)
    slots: dict[str, str] = {}
    try:
        if kind is PromptKind.CAPTION_GENERATION:
            t = int(params["T"])  # type: ignore[arg-type]
            if t < 1:
                raise PromptError(f"T must be >= 1, got {t}")
            slots = {
                "T": str(t),
                "action": str(params["action"]),
                "format_lines": _format_lines(t),
            }
        elif kind is PromptKind.PROGRESSION_PSEUDO:
            slots = {"desc1": str(params["desc1"]), "desc2": str(params["desc2"])}
        elif kind is PromptKind.PROGRESSION_EVAL:
            slots = {
                "action": str(params["action"]),
                "desc1": str(params["desc1"]),
                "desc2": str(params["desc2"]),
            }
        elif kind is PromptKind.CAPTION_MATCHING:
            options = params["options"]
            if not isinstance(options, McqOptions):
                options = McqOptions.with_unsure(list(options))  # type: ignore[arg-type]
            slots = {"options": options.block()}
    except KeyError as exc:
        raise PromptError(f"missing slot {exc.args[0]!r} for {kind.value}") from exc
    return template.substitute(slots)


_FENCE_RE = re.compile(r"^\s*```[a-zA-Z]*\s*$")
_FRAME_TAG_RE = re.compile(r"<\s*Frame\s+(\d+)\s*>\s*:?\s*(.*)", re.IGNORECASE)


def _strip_fences(reply: str) -> str:
    lines = [ln for ln in reply.replace("\r\n", "\n").split("\n") if not _FENCE_RE.match(ln)]
    return "\n".join(lines)


def parse_frame_captions(reply: str, t: int) -> list[str]:
    """Extract the T per-frame captions from a tagged captioner reply.

    Expects one ``<Frame i>: ...`` line per frame, 1-based, tolerating
    surrounding whitespace and markdown fences. Missing, duplicated, or
    out-of-range frame tags raise ReplyParseError naming the frame.
    """
    if t < 1:
        raise ValueError(f"T must be >= 1, got {t}")
    found: dict[int, str] = {}
    for line in _strip_fences(reply).split("\n"):
        m = _FRAME_TAG_RE.match(line.strip())
        if not m:
            continue
        idx = int(m.group(1))
        if idx in found:
            raise ReplyParseError(f"frame {idx} duplicated in reply")
        if idx < 1 or idx > t:
            raise ReplyParseError(f"frame {idx} outside expected range 1..{t}")
        found[idx] = m.group(2).strip()
    for i in range(1, t + 1):
        if i not in found:
            raise ReplyParseError(f"frame {i} not found in reply")
    return [found[i] for i in range(1, t + 1)]


_STANDALONE_LETTER_RE = re.compile(r"(?<![A-Za-z])([A-Z])(?![A-Za-z])")


def parse_choice(reply: str, n_options: int) -> int:
    """Return the 0-based index of the chosen option letter.

    Scans for the first standalone capital letter within the option range,
    which tolerates punctuation ("B.", "(B)") and leading phrases ("The
    answer is B"). Raises ReplyParseError when no in-range standalone
    letter exists; callers treat that as an abstain.
    """
    if not 2 <= n_options <= MAX_OPTIONS:
        raise ValueError(f"n_options must be in [2, {MAX_OPTIONS}], got {n_options}")
    top = min(n_options, len(LETTERS))
    for m in _STANDALONE_LETTER_RE.finditer(reply):
        idx = LETTERS.index(m.group(1))
        if idx < top:
            return idx
    raise ReplyParseError(f"no option letter A..{LETTERS[top - 1]} found in reply {reply!r}")
