"""Stage-I (frame pair) and Stage-II (frame sequence) dataset construction.

Candidates from an ensemble of captioner backends run through two gates:
progression consensus (majority vote over all candidate x judge
assessments) and caption matching. Candidates passing both gates become
SFT targets; candidates failing a gate become the rejected side of
preference records. Everything skipped is tallied by reason and written
to an audit file, and with mock backends the whole build is byte-stable
given one seed.
"""

from __future__ import annotations

import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any, Sequence

from .core import (
    SCHEMA_VERSION,
    CaptionSequence,
    FrameSequence,
    PreferenceRecord,
    SftRecord,
    _check_keys,
    _check_version,
    validate_sequence,
    write_jsonl,
)
from .gateway import DecodeParams, Gateway, GatewayError, ModelRequest
from .matching import (
    ACCEPTED,
    REJECTED,
    MatchOutcome,
    evaluate_pair_matching,
    evaluate_sequence_matching,
)
from .progression import (
    CHANGE,
    INDETERMINATE,
    NO_CHANGE,
    UNSURE,
    ChangeVerdict,
    ConsensusLabel,
    _majority,
    classify_pair,
    consensus_change,
    consensus_change_per_judge,
    distinct_frames,
    judge_pair_change,
)
from .protocol import PromptKind, ReplyParseError, parse_frame_captions, render_prompt
from .seeding import derive_seed

SKIP_REASONS = ("tie", "indeterminate", "unsure", "parse_error")


class WindowCaptionError(RuntimeError):
    """Captioning a window failed; carries the window index."""

    def __init__(self, window_index: int, message: str):
        super().__init__(f"window {window_index}: {message}")
        self.window_index = window_index


@dataclass
class CurationConfig:
    """Everything a curation run needs besides the input sequences."""

    captioners: list[str]
    progression_judges: list[str]
    matching_judge: str
    primary_captioner: str | None = None
    seed: int = 0
    dpo_cap: int = 3
    vote_pooling: str = "joint"  # or "per_judge"
    max_workers: int = 1
    captioner_decode: DecodeParams = DecodeParams()
    judge_decode: DecodeParams = DecodeParams()

    def __post_init__(self) -> None:
        if self.vote_pooling not in ("joint", "per_judge"):
            raise ValueError(f"vote_pooling must be joint or per_judge, got {self.vote_pooling!r}")
        if not self.progression_judges:
            raise ValueError("at least one progression judge is required")
        if self.dpo_cap < 1:
            raise ValueError("dpo_cap must be >= 1")

    def validate_stage1(self) -> None:
        if len(self.captioners) < 2:
            raise ValueError("Stage-I needs K >= 2 captioners (preference pairs need contrast)")

    def validate_stage2(self) -> None:
        if not self.primary_captioner:
            raise ValueError("Stage-II needs a designated primary captioner")

    def consensus_fn(self, verdicts: Sequence[ChangeVerdict]) -> ConsensusLabel:
        if self.vote_pooling == "per_judge":
            return consensus_change_per_judge(verdicts)
        return consensus_change(verdicts)


@dataclass(frozen=True)
class SkipRecord:
    """Audit entry for one skipped candidate or sequence."""

    video_id: str
    stage: str
    candidate_index: int | None
    reason: str
    detail: str = ""

    def __post_init__(self) -> None:
        if self.reason not in SKIP_REASONS:
            raise ValueError(f"bad skip reason {self.reason!r}")

    def to_dict(self) -> dict[str, Any]:
        return {
            "schema_version": SCHEMA_VERSION,
            "video_id": self.video_id,
            "stage": self.stage,
            "candidate_index": self.candidate_index,
            "reason": self.reason,
            "detail": self.detail,
        }

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "SkipRecord":
        _check_keys(
            cls.__name__,
            d,
            {"schema_version", "video_id", "stage", "candidate_index", "reason", "detail"},
            set(),
        )
        _check_version(d)
        return cls(
            video_id=d["video_id"],
            stage=d["stage"],
            candidate_index=d["candidate_index"],
            reason=d["reason"],
            detail=d["detail"],
        )


@dataclass
class DatasetBundle:
    """Everything one build produced: records plus the full audit trail."""

    stage: str
    sft: list[SftRecord] = field(default_factory=list)
    dpo: list[PreferenceRecord] = field(default_factory=list)
    skipped: dict[str, int] = field(default_factory=lambda: {r: 0 for r in SKIP_REASONS})
    accepted: int = 0
    rejected: int = 0
    candidates_in: int = 0
    verdicts: list[ChangeVerdict] = field(default_factory=list)
    consensus: list[ConsensusLabel] = field(default_factory=list)
    outcomes: list[MatchOutcome] = field(default_factory=list)
    skips: list[SkipRecord] = field(default_factory=list)

    def merge(self, other: "DatasetBundle") -> None:
        self.sft.extend(other.sft)
        self.dpo.extend(other.dpo)
        for reason, n in other.skipped.items():
            self.skipped[reason] += n
        self.accepted += other.accepted
        self.rejected += other.rejected
        self.candidates_in += other.candidates_in
        self.verdicts.extend(other.verdicts)
        self.consensus.extend(other.consensus)
        self.outcomes.extend(other.outcomes)
        self.skips.extend(other.skips)

    def _skip(self, video_id: str, candidate_index: int | None, reason: str, detail: str = "") -> None:
        self.skipped[reason] += 1
        self.skips.append(
            SkipRecord(
                video_id=video_id,
                stage=self.stage,
                candidate_index=candidate_index,
                reason=reason,
                detail=detail,
            )
        )


def caption_with_window(
    gateway: Gateway,
    captioner: str,
    seq: FrameSequence,
    window: str,
    decode: DecodeParams = DecodeParams(),
    seed: int = 0,
) -> CaptionSequence:
    """Caption a sequence in full-context or sliding-pair-window mode.

    Full mode makes one call over all T frames. Pair mode calls over
    (v_{t-1}, v_t) for t = 1..T-1; frame 0 takes the first window's first
    caption and every later frame t takes the second caption of its own
    window, keeping the caption sequence coherent.
    """
    t = seq.length
    if t < 2:
        raise ValueError("captioning needs at least 2 frames")
    if window == "full":
        prompt = render_prompt(PromptKind.CAPTION_GENERATION, T=t, action=seq.action)
        reply = gateway.complete(
            ModelRequest(
                backend_id=captioner,
                role="captioner",
                prompt=prompt,
                images=seq.frames,
                decode=replace(decode, seed=derive_seed(seed, "full")),
            )
        )
        try:
            captions = parse_frame_captions(reply.text, t)
        except ReplyParseError as exc:
            raise WindowCaptionError(0, str(exc)) from exc
        mode = "full_sequence"
    elif window == "pair":
        prompt = render_prompt(PromptKind.CAPTION_GENERATION, T=2, action=seq.action)
        captions = [""] * t
        for w in range(1, t):
            reply = gateway.complete(
                ModelRequest(
                    backend_id=captioner,
                    role="captioner",
                    prompt=prompt,
                    images=(seq.frames[w - 1], seq.frames[w]),
                    decode=replace(decode, seed=derive_seed(seed, "pair", w)),
                )
            )
            try:
                first, second = parse_frame_captions(reply.text, 2)
            except ReplyParseError as exc:
                raise WindowCaptionError(w, str(exc)) from exc
            if w == 1:
                captions[0] = first
            captions[w] = second
        mode = "pair_window"
    else:
        raise ValueError(f"window must be 'pair' or 'full', got {window!r}")
    return CaptionSequence(
        video_id=seq.video_id,
        captions=tuple(captions),
        source=captioner,
        context_mode=mode,
        generation_seed=seed,
    )


def caption_pair_windows(
    gateway: Gateway,
    captioner: str,
    seq: FrameSequence,
    decode: DecodeParams = DecodeParams(),
    seed: int = 0,
) -> list[tuple[str, str]]:
    """Raw (first, second) caption of every sliding window (v_{t-1}, v_t).

    Used where both captions of a window matter, e.g. the two-window
    concatenation rule for frame classification.
    """
    t = seq.length
    if t < 2:
        raise ValueError("captioning needs at least 2 frames")
    prompt = render_prompt(PromptKind.CAPTION_GENERATION, T=2, action=seq.action)
    out = []
    for w in range(1, t):
        reply = gateway.complete(
            ModelRequest(
                backend_id=captioner,
                role="captioner",
                prompt=prompt,
                images=(seq.frames[w - 1], seq.frames[w]),
                decode=replace(decode, seed=derive_seed(seed, "pair", w)),
            )
        )
        try:
            first, second = parse_frame_captions(reply.text, 2)
        except ReplyParseError as exc:
            raise WindowCaptionError(w, str(exc)) from exc
        out.append((first, second))
    return out


def _candidate_label(verdicts: Sequence[ChangeVerdict]) -> str:
    """A candidate's own change label: majority over its judges' votes."""
    label, _, _, _ = _majority([v.label for v in verdicts])
    return UNSURE if label == INDETERMINATE else label


def _evidence_ids(
    verdicts: Sequence[ChangeVerdict], outcome: MatchOutcome | None
) -> list[str]:
    ids = [v.verdict_id for v in verdicts]
    if outcome is not None:
        ids.append(outcome.outcome_id)
    return ids


def _emit_dpo(
    bundle: DatasetBundle,
    frames: FrameSequence,
    accepted: list[tuple[CaptionSequence, list[str]]],
    rejected: list[tuple[CaptionSequence, list[str]]],
    stage: str,
    cap: int,
) -> None:
    emitted = 0
    for chosen, chosen_ids in accepted:
        for bad, bad_ids in rejected:
            if emitted >= cap:
                return
            if chosen.captions == bad.captions:
                continue
            bundle.dpo.append(
                PreferenceRecord(
                    frames=frames,
                    chosen=chosen,
                    rejected=bad,
                    stage=stage,
                    provenance=tuple(sorted(set(chosen_ids + bad_ids))),
                )
            )
            emitted += 1


def _build_stage1_item(
    gateway: Gateway, seq: FrameSequence, cfg: CurationConfig
) -> DatasetBundle:
    bundle = DatasetBundle(stage="pair")
    vid = seq.video_id
    k_total = len(cfg.captioners)
    bundle.candidates_in = k_total
    item_seed = derive_seed(cfg.seed, "stage1", vid)
    pair = (seq.frames[0], seq.frames[1])

    candidates: list[CaptionSequence | None] = []
    for k, backend in enumerate(cfg.captioners):
        try:
            candidates.append(
                caption_with_window(
                    gateway, backend, seq, "pair", cfg.captioner_decode,
                    seed=derive_seed(item_seed, "cap", k),
                )
            )
        except (WindowCaptionError, GatewayError, ValueError) as exc:
            candidates.append(None)
            bundle._skip(vid, k, "parse_error", str(exc))

    try:
        verdicts_by_candidate: dict[int, list[ChangeVerdict]] = {}
        for k, cand in enumerate(candidates):
            if cand is None:
                continue
            votes = [
                judge_pair_change(
                    gateway, judge, cand.captions[0], cand.captions[1], "pseudo",
                    pair=pair, candidate_index=k, decode=cfg.judge_decode,
                )
                for judge in cfg.progression_judges
            ]
            verdicts_by_candidate[k] = votes
            bundle.verdicts.extend(votes)
    except GatewayError as exc:
        # Per-item fault isolation: the whole item is dropped, every
        # still-alive candidate tallied so conservation holds.
        for k, cand in enumerate(candidates):
            if cand is not None:
                bundle._skip(vid, k, "parse_error", f"judging failed: {exc}")
        return bundle

    if not verdicts_by_candidate:
        return bundle

    consensus = cfg.consensus_fn(bundle.verdicts)
    bundle.consensus.append(consensus)

    accepted: list[tuple[CaptionSequence, list[str]]] = []
    rejected: list[tuple[CaptionSequence, list[str]]] = []
    for k, cand in enumerate(candidates):
        if cand is None:
            continue
        votes = verdicts_by_candidate[k]
        gate = classify_pair(_candidate_label(votes), consensus)
        if gate == "skip":
            reason = "tie" if consensus.label == INDETERMINATE else "unsure"
            bundle._skip(vid, k, reason)
            continue
        if gate == "fail":
            bundle.rejected += 1
            rejected.append((cand, _evidence_ids(votes, None)))
            continue
        if cand.captions[0] == cand.captions[1]:
            bundle._skip(vid, k, "indeterminate", "identical captions, matching has no distractor")
            continue
        outcome = evaluate_pair_matching(
            gateway, pair, cand.captions, cfg.matching_judge,
            seed=derive_seed(item_seed, "match", k),
            subject=f"{vid}:c{k}:pair", decode=cfg.judge_decode,
        )
        bundle.outcomes.append(outcome)
        if outcome.verdict == ACCEPTED:
            bundle.accepted += 1
            accepted.append((cand, _evidence_ids(votes, outcome)))
            bundle.sft.append(SftRecord(frames=seq, target=cand, stage="pair"))
        else:
            bundle.rejected += 1
            rejected.append((cand, _evidence_ids(votes, outcome)))

    _emit_dpo(bundle, seq, accepted, rejected, "pair", cfg.dpo_cap)
    return bundle


def build_stage1(
    gateway: Gateway, pairs: Sequence[FrameSequence], cfg: CurationConfig
) -> DatasetBundle:
    """Gate K candidate caption pairs per 2-frame sequence into SFT/DPO data."""
    cfg.validate_stage1()
    for seq in pairs:
        if seq.length != 2:
            raise ValueError(f"Stage-I input {seq.video_id!r} has T={seq.length}, expected 2")
        bad = validate_sequence(seq)
        if bad:
            raise ValueError(f"invalid input sequence {seq.video_id!r}: {bad[0].rule}")
    return _run_items(gateway, pairs, cfg, _build_stage1_item, stage="pair")


def _stage2_candidates(cfg: CurationConfig) -> list[tuple[str, str]]:
    others = [c for c in cfg.captioners if c != cfg.primary_captioner]
    plan: list[tuple[str, str]] = [(str(cfg.primary_captioner), "pair")]
    for c in others:
        plan.append((c, "pair"))
        plan.append((c, "full"))
    return plan


def _build_stage2_item(
    gateway: Gateway, seq: FrameSequence, cfg: CurationConfig
) -> DatasetBundle:
    bundle = DatasetBundle(stage="sequence")
    vid = seq.video_id
    t = seq.length
    plan = _stage2_candidates(cfg)
    bundle.candidates_in = len(plan)
    item_seed = derive_seed(cfg.seed, "stage2", vid)

    candidates: list[CaptionSequence | None] = []
    for k, (backend, window) in enumerate(plan):
        try:
            candidates.append(
                caption_with_window(
                    gateway, backend, seq, window, cfg.captioner_decode,
                    seed=derive_seed(item_seed, "cap", k),
                )
            )
        except (WindowCaptionError, GatewayError, ValueError) as exc:
            candidates.append(None)
            bundle._skip(vid, k, "parse_error", str(exc))

    try:
        verdicts_by_pair: list[list[ChangeVerdict]] = [[] for _ in range(t - 1)]
        verdicts_by_candidate: dict[int, list[ChangeVerdict]] = {}
        for k, cand in enumerate(candidates):
            if cand is None:
                continue
            verdicts_by_candidate[k] = []
            for i in range(1, t):
                pair = (seq.frames[i - 1], seq.frames[i])
                for judge in cfg.progression_judges:
                    v = judge_pair_change(
                        gateway, judge, cand.captions[i - 1], cand.captions[i], "pseudo",
                        pair=pair, candidate_index=k, decode=cfg.judge_decode,
                    )
                    verdicts_by_pair[i - 1].append(v)
                    verdicts_by_candidate[k].append(v)
                    bundle.verdicts.append(v)
    except GatewayError as exc:
        for k, cand in enumerate(candidates):
            if cand is not None:
                bundle._skip(vid, k, "parse_error", f"judging failed: {exc}")
        return bundle

    if not verdicts_by_candidate:
        return bundle

    consensus_list = [cfg.consensus_fn(vs) for vs in verdicts_by_pair]
    bundle.consensus.extend(consensus_list)

    distinct = distinct_frames(seq, consensus_list)
    if distinct.m < 2:
        for k, cand in enumerate(candidates):
            if cand is not None:
                bundle._skip(vid, k, "indeterminate", f"only M={distinct.m} distinct frame(s)")
        return bundle

    frames_m = seq.subsequence(distinct.indices)
    accepted: list[tuple[CaptionSequence, list[str]]] = []
    rejected: list[tuple[CaptionSequence, list[str]]] = []
    for k, cand in enumerate(candidates):
        if cand is None:
            continue
        caps_m = tuple(cand.captions[i] for i in distinct.indices)
        if len(set(caps_m)) != distinct.m:
            bundle._skip(vid, k, "indeterminate", "duplicate captions over distinct frames")
            continue
        trimmed = CaptionSequence(
            video_id=cand.video_id,
            captions=caps_m,
            source=cand.source,
            context_mode=cand.context_mode,
            generation_seed=cand.generation_seed,
        )
        outcome = evaluate_sequence_matching(
            gateway, frames_m.frames, caps_m, cfg.matching_judge,
            seed=derive_seed(item_seed, "match", k),
            subject=f"{vid}:c{k}:seq", decode=cfg.judge_decode,
        )
        bundle.outcomes.append(outcome)
        evidence = _evidence_ids(verdicts_by_candidate[k], outcome)
        if outcome.verdict == ACCEPTED:
            bundle.accepted += 1
            accepted.append((trimmed, evidence))
            bundle.sft.append(SftRecord(frames=frames_m, target=trimmed, stage="sequence"))
        elif outcome.verdict == REJECTED:
            bundle.rejected += 1
            rejected.append((trimmed, evidence))
        else:
            bundle._skip(vid, k, "indeterminate", "matching verdict in the indeterminate band")

    _emit_dpo(bundle, frames_m, accepted, rejected, "sequence", cfg.dpo_cap)
    return bundle


def build_stage2(
    gateway: Gateway, seqs: Sequence[FrameSequence], cfg: CurationConfig
) -> DatasetBundle:
    """Expand pseudo labeling from 2 to T frames over the distinct-frame subset."""
    cfg.validate_stage2()
    for seq in seqs:
        if not 3 <= seq.length <= 6:
            raise ValueError(
                f"Stage-II input {seq.video_id!r} has T={seq.length}, expected 3..6"
            )
        bad = validate_sequence(seq)
        if bad:
            raise ValueError(f"invalid input sequence {seq.video_id!r}: {bad[0].rule}")
    return _run_items(gateway, seqs, cfg, _build_stage2_item, stage="sequence")


def _run_items(gateway, items, cfg, item_fn, stage: str) -> DatasetBundle:
    total = DatasetBundle(stage=stage)
    if cfg.max_workers > 1:
        with ThreadPoolExecutor(max_workers=cfg.max_workers) as pool:
            parts = list(pool.map(lambda s: item_fn(gateway, s, cfg), items))
    else:
        parts = [item_fn(gateway, seq, cfg) for seq in items]
    for part in parts:  # merged in input order so output files are stable
        total.merge(part)
    return total


# --- statistics and persistence ----------------------------------------

STATS_COLUMNS = ("videos", "frames", "pair_sft", "pair_dpo", "seq_sft", "seq_dpo")


def dataset_stats(
    sft_pair: Sequence[SftRecord] = (),
    dpo_pair: Sequence[PreferenceRecord] = (),
    sft_seq: Sequence[SftRecord] = (),
    dpo_seq: Sequence[PreferenceRecord] = (),
) -> dict[str, dict[str, int]]:
    """Per-source-dataset counts, plus a total row that sums each column.

    Records without a source tag are counted under "untagged".
    """
    rows: dict[str, dict[str, int]] = {}
    videos: dict[str, set[str]] = {}
    frames: dict[str, set[tuple[str, int]]] = {}

    def row(tag: str | None) -> dict[str, int]:
        name = tag or "untagged"
        if name not in rows:
            rows[name] = {c: 0 for c in STATS_COLUMNS}
            videos[name] = set()
            frames[name] = set()
        return rows[name]

    def see_frames(tag: str | None, seq: FrameSequence) -> None:
        name = tag or "untagged"
        videos[name].add(seq.video_id)
        for f in seq.frames:
            frames[name].add((f.video_id, f.index))

    for col, records in (
        ("pair_sft", sft_pair),
        ("pair_dpo", dpo_pair),
        ("seq_sft", sft_seq),
        ("seq_dpo", dpo_seq),
    ):
        for rec in records:
            tag = rec.frames.source_dataset
            row(tag)[col] += 1
            see_frames(tag, rec.frames)

    for name in rows:
        rows[name]["videos"] = len(videos[name])
        rows[name]["frames"] = len(frames[name])

    total = {c: sum(r[c] for r in rows.values()) for c in STATS_COLUMNS}
    out = {name: rows[name] for name in sorted(rows)}
    out["total"] = total
    return out


def render_stats_tsv(stats: dict[str, dict[str, int]]) -> str:
    lines = ["dataset\t" + "\t".join(STATS_COLUMNS)]
    for name, row in stats.items():
        lines.append(name + "\t" + "\t".join(str(row[c]) for c in STATS_COLUMNS))
    return "\n".join(lines) + "\n"


def write_bundle(bundle: DatasetBundle, out_dir: str | Path) -> dict[str, Path]:
    """Write all bundle files into out_dir; returns {name: path}."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    suffix = "pair" if bundle.stage == "pair" else "seq"
    paths = {
        "sft": out / f"sft_{suffix}.jsonl",
        "dpo": out / f"dpo_{suffix}.jsonl",
        "verdicts": out / "verdicts.jsonl",
        "consensus": out / "consensus.jsonl",
        "match_outcomes": out / "match_outcomes.jsonl",
        "skips": out / "skips.jsonl",
        "stats": out / "stats.tsv",
    }
    write_jsonl(paths["sft"], bundle.sft)
    write_jsonl(paths["dpo"], bundle.dpo)
    write_jsonl(paths["verdicts"], bundle.verdicts)
    write_jsonl(paths["consensus"], bundle.consensus)
    write_jsonl(paths["match_outcomes"], bundle.outcomes)
    write_jsonl(paths["skips"], bundle.skips)
    if bundle.stage == "pair":
        stats = dataset_stats(sft_pair=bundle.sft, dpo_pair=bundle.dpo)
    else:
        stats = dataset_stats(sft_seq=bundle.sft, dpo_seq=bundle.dpo)
    paths["stats"].write_text(render_stats_tsv(stats), encoding="utf-8", newline="\n")
    summary = {
        "stage": bundle.stage,
        "candidates_in": bundle.candidates_in,
        "accepted": bundle.accepted,
        "rejected": bundle.rejected,
        "skipped": bundle.skipped,
    }
    (out / "summary.json").write_text(
        json.dumps(summary, indent=2, sort_keys=True) + "\n", encoding="utf-8", newline="\n"
    )
    paths["summary"] = out / "summary.json"
    return paths
