"""Single command-line entry point.

Exit codes are stable: 0 success, 1 validation/usage error, 2 runtime
failure. All randomness flows from one --seed, fanned out through
seeding.derive_seed with per-module labels, so a single flag reproduces a
whole run. Logs go to stderr; data goes to files only.

The backend registry / run configuration comes from --config (YAML; see
gateway module docstring), falling back to the FRAMECAP_CONFIG
environment variable. Curation and bench settings live in the same file::

    curation:
      captioners: [cap-a, cap-b]
      primary_captioner: cap-a
      progression_judges: [judge-1, judge-2]
      matching_judge: vlm-judge
      dpo_cap: 3
      vote_pooling: joint
      max_workers: 1
    bench:
      progression_judge: judge-1
      matching_judge: vlm-judge
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

from . import apps, bench, curate, matching, progression, study
from .core import (
    CaptionSequence,
    FrameSequence,
    JsonlError,
    PreferenceRecord,
    SchemaError,
    SftRecord,
    read_jsonl,
    write_jsonl,
)
from .gateway import Gateway, GatewayError, build_gateway, load_registry
from .seeding import derive_seed

log = logging.getLogger("framecap")

EXIT_OK = 0
EXIT_VALIDATION = 1
EXIT_RUNTIME = 2


class _Parser(argparse.ArgumentParser):
    """argparse exits 2 on usage errors; our contract says 1."""

    def error(self, message: str):
        self.print_usage(sys.stderr)
        self.exit(EXIT_VALIDATION, f"{self.prog}: error: {message}\n")


def _config_path(args) -> Path:
    path = args.config or os.environ.get("FRAMECAP_CONFIG")
    if not path:
        raise ValueError("no config given: pass --config or set FRAMECAP_CONFIG")
    p = Path(path)
    if not p.exists():
        raise ValueError(f"config file not found: {p}")
    return p


def _load_config(args) -> dict:
    return load_registry(_config_path(args))


def _gateway_from(args, registry: dict) -> Gateway:
    return build_gateway(registry, base_dir=_config_path(args).parent)


def _curation_config(registry: dict, seed: int) -> curate.CurationConfig:
    section = registry.get("curation")
    if not section:
        raise ValueError("config has no 'curation' section")
    return curate.CurationConfig(
        captioners=list(section.get("captioners", [])),
        progression_judges=list(section.get("progression_judges", [])),
        matching_judge=section.get("matching_judge", ""),
        primary_captioner=section.get("primary_captioner"),
        seed=seed,
        dpo_cap=int(section.get("dpo_cap", 3)),
        vote_pooling=section.get("vote_pooling", "joint"),
        max_workers=int(section.get("max_workers", 1)),
    )


def plan_curate_calls(
    stage: int, seqs: list[FrameSequence], cfg: curate.CurationConfig
) -> dict[str, int]:
    """Model-call counts a curation run would issue (matching is an upper
    bound because it only runs on candidates that pass progression)."""
    j = len(cfg.progression_judges)
    caption = progression_calls = matching_upper = 0
    if stage == 1:
        k = len(cfg.captioners)
        n = len(seqs)
        caption = n * k
        progression_calls = n * k * j
        matching_upper = n * k * 2
    else:
        n_cand = len(curate._stage2_candidates(cfg))
        others = [c for c in cfg.captioners if c != cfg.primary_captioner]
        for seq in seqs:
            t = seq.length
            caption += (t - 1) + sum((t - 1) + 1 for _ in others)
            progression_calls += (t - 1) * n_cand * j
            matching_upper += n_cand * t
    return {
        "caption": caption,
        "progression": progression_calls,
        "matching_upper_bound": matching_upper,
    }


def _cmd_curate(args) -> int:
    registry = _load_config(args)
    cfg = _curation_config(registry, args.seed)
    seqs = read_jsonl(args.infile, FrameSequence)
    if args.stage == 1:
        cfg.validate_stage1()
    else:
        cfg.validate_stage2()
    if args.dry_run:
        plan = plan_curate_calls(args.stage, seqs, cfg)
        print(f"planned caption calls: {plan['caption']}")
        print(f"planned progression calls: {plan['progression']}")
        print(f"planned matching calls (upper bound): {plan['matching_upper_bound']}")
        return EXIT_OK
    gateway = _gateway_from(args, registry)
    if args.stage == 1:
        bundle = curate.build_stage1(gateway, seqs, cfg)
    else:
        bundle = curate.build_stage2(gateway, seqs, cfg)
    paths = curate.write_bundle(bundle, args.out)
    log.info(
        "stage %d: %d sft, %d dpo, skipped %s",
        args.stage, len(bundle.sft), len(bundle.dpo), bundle.skipped,
    )
    print(str(paths["sft"]))
    return EXIT_OK


def _captions_by_video(path: str) -> dict[str, list[CaptionSequence]]:
    grouped: dict[str, list[CaptionSequence]] = {}
    for cap in read_jsonl(path, CaptionSequence):
        grouped.setdefault(cap.video_id, []).append(cap)
    return grouped


def _cmd_progress(args) -> int:
    registry = _load_config(args)
    gateway = _gateway_from(args, registry)
    judges = (
        args.judges.split(",")
        if args.judges
        else registry.get("curation", {}).get("progression_judges", [])
    )
    if not judges:
        raise ValueError("no judges: pass --judges or configure curation.progression_judges")
    seqs = {s.video_id: s for s in read_jsonl(args.infile, FrameSequence)}
    captions = _captions_by_video(args.captions)
    verdicts: list[progression.ChangeVerdict] = []
    consensus: list[progression.ConsensusLabel] = []
    for vid in sorted(captions):
        if vid not in seqs:
            raise ValueError(f"captions reference unknown video {vid!r}")
        seq = seqs[vid]
        per_pair: list[list[progression.ChangeVerdict]] = [[] for _ in range(seq.length - 1)]
        for c_idx, cap in enumerate(captions[vid]):
            if len(cap.captions) != seq.length:
                raise ValueError(f"caption count mismatch for {vid!r}")
            for i in range(1, seq.length):
                for judge in judges:
                    v = progression.judge_pair_change(
                        gateway, judge, cap.captions[i - 1], cap.captions[i],
                        args.mode, action=seq.action,
                        pair=(seq.frames[i - 1], seq.frames[i]), candidate_index=c_idx,
                    )
                    per_pair[i - 1].append(v)
                    verdicts.append(v)
        consensus.extend(progression.consensus_change(vs) for vs in per_pair if vs)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_jsonl(out / "verdicts.jsonl", verdicts)
    write_jsonl(out / "consensus.jsonl", consensus)
    print(str(out / "verdicts.jsonl"))
    return EXIT_OK


def _cmd_match(args) -> int:
    registry = _load_config(args)
    gateway = _gateway_from(args, registry)
    judge = args.judge or registry.get("curation", {}).get("matching_judge")
    if not judge:
        raise ValueError("no judge: pass --judge or configure curation.matching_judge")
    seqs = {s.video_id: s for s in read_jsonl(args.infile, FrameSequence)}
    captions = _captions_by_video(args.captions)
    outcomes = []
    for vid in sorted(captions):
        if vid not in seqs:
            raise ValueError(f"captions reference unknown video {vid!r}")
        seq = seqs[vid]
        for c_idx, cap in enumerate(captions[vid]):
            subject = f"{vid}:c{c_idx}:{args.mode}"
            seed = derive_seed(args.seed, "match-cli", vid, c_idx)
            if args.mode == "pair":
                outcome = matching.evaluate_pair_matching(
                    gateway, seq.frames, cap.captions, judge, seed,
                    subject=subject, no_shuffle=args.no_shuffle,
                )
            else:
                outcome = matching.evaluate_sequence_matching(
                    gateway, seq.frames, cap.captions, judge, seed,
                    subject=subject, no_shuffle=args.no_shuffle,
                )
            outcomes.append(outcome)
    write_jsonl(args.out, outcomes)
    acc = matching.sequence_level_accuracy(outcomes)
    log.info("matched %d outcomes, sequence-level accuracy %.3f", len(outcomes), acc)
    print(args.out)
    return EXIT_OK


def _cmd_bench(args) -> int:
    registry = _load_config(args)
    gateway = _gateway_from(args, registry)
    section = registry.get("bench", {})
    prog_judge = args.progression_judge or section.get("progression_judge")
    match_judge = args.matching_judge or section.get("matching_judge")
    if not prog_judge or not match_judge:
        raise ValueError("bench needs progression and matching judges (flags or config)")
    dataset = read_jsonl(args.split, bench.BenchSequence)
    report = bench.run_benchmark(
        gateway, args.model, dataset, prog_judge, match_judge, seed=args.seed
    )
    Path(args.out).write_text(report.render_tsv(), encoding="utf-8", newline="\n")
    print(args.out)
    return EXIT_OK


def _cmd_keyframes(args) -> int:
    registry = _load_config(args)
    gateway = _gateway_from(args, registry)
    rows = []
    for seq in read_jsonl(args.infile, FrameSequence):
        result = apps.select_keyframes(
            gateway, seq, args.captioner, args.judge, seed=args.seed
        )
        rows.append(
            {
                "video_id": seq.video_id,
                "selected": list(result.selected),
                "log": [{"t": s.t, "label": s.label} for s in result.log],
            }
        )
    _write_plain_jsonl(args.out, rows)
    print(args.out)
    return EXIT_OK


def _cmd_select_n(args) -> int:
    registry = _load_config(args)
    gateway = _gateway_from(args, registry)
    rows = []
    for cap in read_jsonl(args.captions, CaptionSequence):
        picked = apps.select_n_keyframes(gateway, cap, args.n, args.judge)
        rows.append({"video_id": cap.video_id, "source": cap.source, "selected": list(picked)})
    _write_plain_jsonl(args.out, rows)
    print(args.out)
    return EXIT_OK


def _cmd_classify(args) -> int:
    registry = _load_config(args)
    gateway = _gateway_from(args, registry)
    labels = [
        line.strip()
        for line in Path(args.labels).read_text(encoding="utf-8").splitlines()
        if line.strip()
    ]
    rows = []
    for cap in read_jsonl(args.captions, CaptionSequence):
        result = apps.classify_frames(gateway, list(cap.captions), labels, args.judge)
        rows.append(
            {
                "video_id": cap.video_id,
                "source": cap.source,
                "choices": list(result.choices),
                "abstains": list(result.abstains),
            }
        )
    _write_plain_jsonl(args.out, rows)
    print(args.out)
    return EXIT_OK


def _cmd_qa(args) -> int:
    registry = _load_config(args)
    gateway = _gateway_from(args, registry)
    captions = {c.video_id: c for c in read_jsonl(args.captions, CaptionSequence)}
    rows = []
    with open(args.questions, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            q = json.loads(line)
            vid = q["video_id"]
            if vid not in captions:
                raise ValueError(f"questions line {lineno}: unknown video {vid!r}")
            choice = apps.qa_over_captions(
                gateway, captions[vid], q["question"], q["options"], args.judge
            )
            rows.append({"video_id": vid, "question": q["question"], "choice": choice})
    _write_plain_jsonl(args.out, rows)
    print(args.out)
    return EXIT_OK


def _cmd_serve_study(args) -> int:
    study.serve(args.data, port=args.port, ui_dir=args.ui)
    return EXIT_OK


def _cmd_stats(args) -> int:
    src = Path(args.indir)

    def load(name: str, record_type):
        path = src / name
        return read_jsonl(path, record_type) if path.exists() else []

    stats = curate.dataset_stats(
        sft_pair=load("sft_pair.jsonl", SftRecord),
        dpo_pair=load("dpo_pair.jsonl", PreferenceRecord),
        sft_seq=load("sft_seq.jsonl", SftRecord),
        dpo_seq=load("dpo_seq.jsonl", PreferenceRecord),
    )
    text = curate.render_stats_tsv(stats)
    if args.out:
        Path(args.out).write_text(text, encoding="utf-8", newline="\n")
        print(args.out)
    else:
        sys.stdout.write(text)
    return EXIT_OK


def _write_plain_jsonl(path: str, rows: list[dict]) -> None:
    p = Path(path)
    p.parent.mkdir(parents=True, exist_ok=True)
    with open(p, "w", encoding="utf-8", newline="\n") as fh:
        for row in rows:
            fh.write(json.dumps(row, ensure_ascii=False) + "\n")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="framecap", description=__doc__.split("\n")[0])
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)

    def common(p, config=True, seed=True):
        if config:
            p.add_argument("--config", help="backend registry / run config YAML")
        if seed:
            p.add_argument("--seed", type=int, default=0)

    p = sub.add_parser("curate", help="build Stage-I/II SFT and DPO datasets")
    p.add_argument("--stage", type=int, choices=[1, 2], required=True)
    p.add_argument("--in", dest="infile", required=True, help="frames.jsonl")
    p.add_argument("--out", default="curated")
    p.add_argument("--dry-run", action="store_true", help="print planned model-call counts only")
    common(p)
    p.set_defaults(fn=_cmd_curate)

    p = sub.add_parser("progress", help="judge caption pairs for visual change / progression")
    p.add_argument("--mode", choices=["pseudo", "eval"], required=True)
    p.add_argument("--in", dest="infile", required=True, help="frames.jsonl")
    p.add_argument("--captions", required=True)
    p.add_argument("--judges", help="comma-separated judge backend ids")
    p.add_argument("--out", default="progress")
    common(p)
    p.set_defaults(fn=_cmd_progress)

    p = sub.add_parser("match", help="caption-matching MCQ rounds")
    p.add_argument("--mode", choices=["pair", "sequence"], required=True)
    p.add_argument("--in", dest="infile", required=True, help="frames.jsonl")
    p.add_argument("--captions", required=True)
    p.add_argument("--judge")
    p.add_argument("--no-shuffle", action="store_true")
    p.add_argument("--out", default="match_outcomes.jsonl")
    common(p)
    p.set_defaults(fn=_cmd_match)

    p = sub.add_parser("bench", help="run the Cap/Prog benchmark for one model")
    p.add_argument("--model", required=True)
    p.add_argument("--split", required=True, help="bench sequences JSONL")
    p.add_argument("--progression-judge")
    p.add_argument("--matching-judge")
    p.add_argument("--out", default="report.tsv")
    common(p)
    p.set_defaults(fn=_cmd_bench)

    p = sub.add_parser("keyframes", help="dynamic keyframe selection from captions")
    p.add_argument("--captioner", required=True)
    p.add_argument("--judge", required=True)
    p.add_argument("--in", dest="infile", required=True)
    p.add_argument("--out", default="keyframes.jsonl")
    common(p)
    p.set_defaults(fn=_cmd_keyframes)

    p = sub.add_parser("select-n", help="pick N representative frames via a text judge")
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--judge", required=True)
    p.add_argument("--captions", required=True)
    p.add_argument("--out", default="selected.jsonl")
    common(p)
    p.set_defaults(fn=_cmd_select_n)

    p = sub.add_parser("classify", help="zero-shot frame classification over captions")
    p.add_argument("--labels", required=True, help="text file, one label per line")
    p.add_argument("--judge", required=True)
    p.add_argument("--captions", required=True)
    p.add_argument("--out", default="frame_labels.jsonl")
    common(p, seed=False)
    p.set_defaults(fn=_cmd_classify)

    p = sub.add_parser("qa", help="answer multiple-choice questions from captions")
    p.add_argument("--questions", required=True, help="JSONL: video_id, question, options")
    p.add_argument("--judge", required=True)
    p.add_argument("--captions", required=True)
    p.add_argument("--out", default="answers.jsonl")
    common(p, seed=False)
    p.set_defaults(fn=_cmd_qa)

    p = sub.add_parser("serve-study", help="run the annotation/user-study HTTP service")
    p.add_argument("--port", type=int, default=8600)
    p.add_argument("--data", required=True)
    p.add_argument("--ui", help="static frontend bundle directory")
    p.set_defaults(fn=_cmd_serve_study)

    p = sub.add_parser("stats", help="dataset statistics table from curated files")
    p.add_argument("--in", dest="indir", required=True)
    p.add_argument("--out")
    p.set_defaults(fn=_cmd_stats)

    return parser


def main(argv: list[str] | None = None) -> int:
    logging.basicConfig(stream=sys.stderr, level=logging.INFO, format="%(levelname)s %(message)s")
    parser = build_parser()
    args = parser.parse_args(argv)
    if not getattr(args, "command", None):
        parser.print_usage(sys.stderr)
        return EXIT_VALIDATION
    try:
        return args.fn(args)
    except (ValueError, JsonlError, SchemaError, FileNotFoundError, study.StudyError) as exc:
        log.error("%s", exc)
        return EXIT_VALIDATION
    except (GatewayError, RuntimeError, OSError) as exc:
        log.error("%s", exc)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
