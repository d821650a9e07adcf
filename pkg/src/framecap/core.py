"""Canonical data model, validation, and JSONL persistence.

Every pipeline stage shares these types. Records are immutable after
construction and serialize to line-delimited JSON with a fixed,
documented key order so that writing the same records twice produces
byte-identical files. Floats are normalized to 6 decimal places at
construction time, which makes serialization a true bijection on valid
records.

Documented field order per record type:

  FrameRef         video_id, index, timestamp_s, uri, embedding?
  FrameSequence    schema_version, frames, action, split, source_dataset?
  CaptionSequence  schema_version, video_id, captions, source, context_mode,
                   generation_seed
  CandidateSet     schema_version, sequence, candidates
  SftRecord        schema_version, stage, frames, target,
                   passed_progression, passed_matching
  PreferenceRecord schema_version, stage, frames, chosen, rejected, provenance

Optional fields (marked ?) are omitted from the file when absent.
Unknown fields are rejected on read (strict schemas catch pipeline drift).
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Iterable, Sequence

SCHEMA_VERSION = 1

SPLITS = ("train", "eval")
CONTEXT_MODES = ("pair_window", "full_sequence", "isolated")
STAGES = ("pair", "sequence")

# Curation-input bounds on sequence length (pairs at the low end, the
# captioner context ceiling at the high end).
MIN_SEQ_FRAMES = 2
MAX_SEQ_FRAMES = 6

FLOAT_DECIMALS = 6


class SchemaError(ValueError):
    """A record dict does not match its type's strict schema."""


class JsonlError(ValueError):
    """A JSONL file could not be parsed; message names the line."""


def _round6(x: float) -> float:
    return round(float(x), FLOAT_DECIMALS)


@dataclass(frozen=True)
class FrameRef:
    """One frame of a video, identified by (video_id, index).

    timestamp_s equals index for frames sampled on the 1 FPS grid;
    derived subsequences keep original timestamps.
    """

    video_id: str
    index: int
    timestamp_s: int
    uri: str
    embedding: tuple[float, ...] | None = None

    def __post_init__(self) -> None:
        if self.embedding is not None:
            object.__setattr__(
                self, "embedding", tuple(_round6(v) for v in self.embedding)
            )

    def to_dict(self) -> dict[str, Any]:
        d: dict[str, Any] = {
            "video_id": self.video_id,
            "index": self.index,
            "timestamp_s": self.timestamp_s,
            "uri": self.uri,
        }
        if self.embedding is not None:
            d["embedding"] = list(self.embedding)
        return d

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "FrameRef":
        _check_keys(cls.__name__, d, {"video_id", "index", "timestamp_s", "uri"}, {"embedding"})
        emb = d.get("embedding")
        return cls(
            video_id=d["video_id"],
            index=int(d["index"]),
            timestamp_s=int(d["timestamp_s"]),
            uri=d["uri"],
            embedding=tuple(emb) if emb is not None else None,
        )


@dataclass(frozen=True)
class FrameSequence:
    """An ordered run of frames with its action label and split.

    Construction is permissive (broken index orders must be representable
    so validate_sequence can report them); curation-input invariants live
    in validate_sequence.
    """

    frames: tuple[FrameRef, ...]
    action: str
    split: str = "train"
    source_dataset: str | None = None

    def __post_init__(self) -> None:
        object.__setattr__(self, "frames", tuple(self.frames))
        if not self.frames:
            raise ValueError("FrameSequence requires at least one frame")
        if self.split not in SPLITS:
            raise ValueError(f"split must be one of {SPLITS}, got {self.split!r}")

    @property
    def length(self) -> int:
        return len(self.frames)

    @property
    def video_id(self) -> str:
        return self.frames[0].video_id

    def subsequence(self, indices: Sequence[int]) -> "FrameSequence":
        """Sub-sequence keeping original frame identities and timestamps."""
        picked = tuple(self.frames[i] for i in indices)
        return FrameSequence(
            frames=picked,
            action=self.action,
            split=self.split,
            source_dataset=self.source_dataset,
        )

    def to_dict(self) -> dict[str, Any]:
        d: dict[str, Any] = {
            "schema_version": SCHEMA_VERSION,
            "frames": [f.to_dict() for f in self.frames],
            "action": self.action,
            "split": self.split,
        }
        if self.source_dataset is not None:
            d["source_dataset"] = self.source_dataset
        return d

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "FrameSequence":
        _check_keys(
            cls.__name__,
            d,
            {"schema_version", "frames", "action", "split"},
            {"source_dataset"},
        )
        _check_version(d)
        return cls(
            frames=tuple(FrameRef.from_dict(f) for f in d["frames"]),
            action=d["action"],
            split=d["split"],
            source_dataset=d.get("source_dataset"),
        )


@dataclass(frozen=True)
class CaptionSequence:
    """Per-frame captions attributed to one backend and one context mode.

    Captions are stored stripped; empty captions are rejected outright.
    """

    video_id: str
    captions: tuple[str, ...]
    source: str
    context_mode: str
    generation_seed: int = 0

    def __post_init__(self) -> None:
        stripped = tuple(c.strip() for c in self.captions)
        if not stripped:
            raise ValueError("CaptionSequence requires at least one caption")
        if any(not c for c in stripped):
            raise ValueError("captions must be non-empty after trimming")
        if self.context_mode not in CONTEXT_MODES:
            raise ValueError(
                f"context_mode must be one of {CONTEXT_MODES}, got {self.context_mode!r}"
            )
        object.__setattr__(self, "captions", stripped)

    def to_dict(self) -> dict[str, Any]:
        return {
            "schema_version": SCHEMA_VERSION,
            "video_id": self.video_id,
            "captions": list(self.captions),
            "source": self.source,
            "context_mode": self.context_mode,
            "generation_seed": self.generation_seed,
        }

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "CaptionSequence":
        _check_keys(
            cls.__name__,
            d,
            {"schema_version", "video_id", "captions", "source", "context_mode", "generation_seed"},
            set(),
        )
        _check_version(d)
        return cls(
            video_id=d["video_id"],
            captions=tuple(d["captions"]),
            source=d["source"],
            context_mode=d["context_mode"],
            generation_seed=int(d["generation_seed"]),
        )


@dataclass(frozen=True)
class CandidateSet:
    """A frame sequence together with the K candidate caption sequences."""

    sequence: FrameSequence
    candidates: tuple[CaptionSequence, ...]

    def __post_init__(self) -> None:
        object.__setattr__(self, "candidates", tuple(self.candidates))
        if not self.candidates:
            raise ValueError("CandidateSet requires at least one candidate")
        for c in self.candidates:
            if c.video_id != self.sequence.video_id:
                raise ValueError(
                    f"candidate from {c.video_id!r} does not reference sequence "
                    f"{self.sequence.video_id!r}"
                )
            if len(c.captions) != self.sequence.length:
                raise ValueError("candidate caption count does not match frame count")

    @property
    def k(self) -> int:
        return len(self.candidates)

    def to_dict(self) -> dict[str, Any]:
        return {
            "schema_version": SCHEMA_VERSION,
            "sequence": self.sequence.to_dict(),
            "candidates": [c.to_dict() for c in self.candidates],
        }

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "CandidateSet":
        _check_keys(cls.__name__, d, {"schema_version", "sequence", "candidates"}, set())
        _check_version(d)
        return cls(
            sequence=FrameSequence.from_dict(d["sequence"]),
            candidates=tuple(CaptionSequence.from_dict(c) for c in d["candidates"]),
        )


@dataclass(frozen=True)
class SftRecord:
    """A frame sequence with a caption sequence that passed both gates."""

    frames: FrameSequence
    target: CaptionSequence
    stage: str
    passed_progression: bool = True
    passed_matching: bool = True

    def __post_init__(self) -> None:
        if self.stage not in STAGES:
            raise ValueError(f"stage must be one of {STAGES}, got {self.stage!r}")
        if len(self.target.captions) != self.frames.length:
            raise ValueError("target caption count does not match frame count")

    def to_dict(self) -> dict[str, Any]:
        return {
            "schema_version": SCHEMA_VERSION,
            "stage": self.stage,
            "frames": self.frames.to_dict(),
            "target": self.target.to_dict(),
            "passed_progression": self.passed_progression,
            "passed_matching": self.passed_matching,
        }

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "SftRecord":
        _check_keys(
            cls.__name__,
            d,
            {"schema_version", "stage", "frames", "target", "passed_progression", "passed_matching"},
            set(),
        )
        _check_version(d)
        return cls(
            frames=FrameSequence.from_dict(d["frames"]),
            target=CaptionSequence.from_dict(d["target"]),
            stage=d["stage"],
            passed_progression=bool(d["passed_progression"]),
            passed_matching=bool(d["passed_matching"]),
        )


@dataclass(frozen=True)
class PreferenceRecord:
    """A chosen/rejected caption contrast over the same frames."""

    frames: FrameSequence
    chosen: CaptionSequence
    rejected: CaptionSequence
    stage: str
    provenance: tuple[str, ...] = ()

    def __post_init__(self) -> None:
        object.__setattr__(self, "provenance", tuple(self.provenance))
        if self.stage not in STAGES:
            raise ValueError(f"stage must be one of {STAGES}, got {self.stage!r}")
        n = self.frames.length
        if len(self.chosen.captions) != n or len(self.rejected.captions) != n:
            raise ValueError("chosen/rejected must cover the same frames")
        if self.chosen.captions == self.rejected.captions:
            raise ValueError("chosen and rejected captions must differ on at least one frame")

    def to_dict(self) -> dict[str, Any]:
        return {
            "schema_version": SCHEMA_VERSION,
            "stage": self.stage,
            "frames": self.frames.to_dict(),
            "chosen": self.chosen.to_dict(),
            "rejected": self.rejected.to_dict(),
            "provenance": list(self.provenance),
        }

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "PreferenceRecord":
        _check_keys(
            cls.__name__,
            d,
            {"schema_version", "stage", "frames", "chosen", "rejected", "provenance"},
            set(),
        )
        _check_version(d)
        return cls(
            frames=FrameSequence.from_dict(d["frames"]),
            chosen=CaptionSequence.from_dict(d["chosen"]),
            rejected=CaptionSequence.from_dict(d["rejected"]),
            stage=d["stage"],
            provenance=tuple(d["provenance"]),
        )


# --- validation -------------------------------------------------------


@dataclass(frozen=True)
class Violation:
    """One broken invariant: the field it concerns and the rule violated."""

    field: str
    rule: str


def validate_sequence(seq: FrameSequence) -> list[Violation]:
    """Report every curation-input invariant the sequence breaks.

    Pure: same input, same report. An empty report means the sequence is a
    well-formed curation input (1 FPS grid, 2..6 frames, contiguous
    indices). Violations are data, not faults.
    """
    out: list[Violation] = []
    frames = seq.frames
    t = len(frames)

    if t < MIN_SEQ_FRAMES:
        out.append(Violation("frames", f"T={t} below min {MIN_SEQ_FRAMES}"))
    if t > MAX_SEQ_FRAMES:
        out.append(Violation("frames", f"T={t} exceeds max {MAX_SEQ_FRAMES}"))

    indices = [f.index for f in frames]
    if any(b <= a for a, b in zip(indices, indices[1:])):
        out.append(Violation("frames.index", "indices not strictly increasing"))
    elif indices != list(range(t)):
        out.append(Violation("frames.index", "indices not contiguous from 0"))

    timestamps = [f.timestamp_s for f in frames]
    if any(b <= a for a, b in zip(timestamps, timestamps[1:])):
        out.append(Violation("frames.timestamp_s", "timestamps not strictly increasing"))
    for f in frames:
        if f.timestamp_s != f.index:
            out.append(
                Violation(
                    f"frames[{f.index}].timestamp_s",
                    f"timestamp {f.timestamp_s} != index {f.index} on the 1 FPS grid",
                )
            )
        if not f.uri:
            out.append(Violation(f"frames[{f.index}].uri", "uri is empty"))

    vids = {f.video_id for f in frames}
    if len(vids) > 1:
        out.append(Violation("frames.video_id", f"mixed video ids {sorted(vids)}"))

    dims = {len(f.embedding) for f in frames if f.embedding is not None}
    if len(dims) > 1:
        out.append(Violation("frames.embedding", f"inconsistent embedding dimensions {sorted(dims)}"))

    return out


# --- JSONL persistence ------------------------------------------------


def _check_keys(type_name: str, d: dict[str, Any], required: set[str], optional: set[str]) -> None:
    keys = set(d)
    missing = required - keys
    if missing:
        raise SchemaError(f"{type_name}: missing fields {sorted(missing)}")
    unknown = keys - required - optional
    if unknown:
        raise SchemaError(f"{type_name}: unknown fields {sorted(unknown)}")


def _check_version(d: dict[str, Any]) -> None:
    v = d.get("schema_version")
    if v != SCHEMA_VERSION:
        raise SchemaError(f"unsupported schema_version {v!r} (expected {SCHEMA_VERSION})")


def _round_floats(obj: Any) -> Any:
    if isinstance(obj, float):
        return _round6(obj)
    if isinstance(obj, dict):
        return {k: _round_floats(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_round_floats(v) for v in obj]
    return obj


def dumps_record(record: Any) -> str:
    """Serialize one record to its canonical single-line JSON form."""
    d = _round_floats(record.to_dict())
    return json.dumps(d, ensure_ascii=False, separators=(", ", ": "))


def write_jsonl(path: str | Path, records: Iterable[Any]) -> int:
    """Write records to a JSONL file (one per line, UTF-8, LF). Returns count."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    n = 0
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for rec in records:
            fh.write(dumps_record(rec) + "\n")
            n += 1
    return n


def read_jsonl(path: str | Path, record_type: type) -> list[Any]:
    """Read a homogeneous JSONL file back into records of record_type.

    A malformed line raises JsonlError naming the 1-based line number;
    unknown fields raise too (strict schema).
    """
    out: list[Any] = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                d = json.loads(line)
            except json.JSONDecodeError as exc:
                raise JsonlError(f"line {lineno}: parse failure ({exc.msg})") from exc
            try:
                out.append(record_type.from_dict(d))
            except (SchemaError, ValueError, KeyError, TypeError) as exc:
                raise JsonlError(f"line {lineno}: {exc}") from exc
    return out
