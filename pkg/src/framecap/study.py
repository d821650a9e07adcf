"""Human annotation and caption-preference study service.

Participants see anonymized caption cards (model identities live only in
a server-side map) in a per-participant seeded order and pick best /
second-best / none per frame; annotators label adjacent-pair progression.
Storage is append-only JSONL with supersession: a later submission for
the same (participant, frame) replaces the earlier one, and reports are
always recomputed from the full log.

HTTP surface (JSON bodies documented per endpoint):

  POST /studies                     create a study from items + captions
  GET  /studies/{id}/next?participant=
  GET  /studies/{id}/items          frame listing for the annotation flow
  POST /responses                   best / second-best / none per frame
  POST /annotations                 progression gold per adjacent pair
  GET  /studies/{id}/report         per-model selection rates (de-anonymized)
  GET  /studies/{id}/gold           majority-resolved progression gold
  /media/...                        static frame images
"""

from __future__ import annotations

import json
import random
import threading
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Sequence

from pydantic import BaseModel

from .core import FrameSequence
from .progression import NO_PROGRESSION, PROGRESSION, GoldProgression
from .seeding import derive_seed

NONE_KEY = "none"


class StudyError(ValueError):
    """Validation failure on study creation or submission."""


# --- pure study logic ---------------------------------------------------


def anonymize_models(models: Sequence[str], seed: int) -> dict[str, str]:
    """Assign stable anonymous keys k1..kN to models in seeded order."""
    ordered = sorted(models)
    rng = random.Random(derive_seed(seed, "anonymize"))
    keys = [f"k{i + 1}" for i in range(len(ordered))]
    rng.shuffle(keys)
    return dict(zip(ordered, keys))


def card_order(anon_keys: Sequence[str], seed: int, participant: str, item_index: int) -> list[str]:
    """Deterministic per-(participant, item) presentation order of cards."""
    order = sorted(anon_keys)
    rng = random.Random(derive_seed(seed, "cards", participant, item_index))
    rng.shuffle(order)
    return order


def resolve_responses(rows: Sequence[dict[str, Any]]) -> dict[tuple[str, int, int], dict[str, Any]]:
    """Collapse the append-only log to effective responses (last one wins)."""
    out: dict[tuple[str, int, int], dict[str, Any]] = {}
    for row in rows:
        key = (row["participant"], int(row["item_index"]), int(row["frame_index"]))
        out[key] = row
    return out


def _percent_allocation(counts: Sequence[int], total: int) -> list[float]:
    """Largest-remainder rounding to one decimal; results sum to 100.0.

    Independent rounding of four-plus shares can drift the sum by more
    than one 0.1 unit; allocating the remainder keeps the published
    best-rate/none-rate breakdown exactly consistent.
    """
    units = [1000 * c / total for c in counts]
    floors = [int(u) for u in units]
    remainder = 1000 - sum(floors)
    order = sorted(range(len(units)), key=lambda i: (-(units[i] - floors[i]), i))
    for i in order[:remainder]:
        floors[i] += 1
    return [f / 10 for f in floors]


def selection_rates(
    effective: Sequence[dict[str, Any]], anon_map: dict[str, str]
) -> dict[str, Any]:
    """Best-pick and top-2 rates per model, plus the none rate.

    Every effective response has exactly one best pick (a model or none),
    so the best rates and the none rate sum to 100.0. "none" responses
    stay in every denominator.
    """
    if not effective:
        raise StudyError("no responses recorded yet")
    total = len(effective)
    key_to_model = {v: k for k, v in anon_map.items()}
    best: dict[str, int] = {m: 0 for m in anon_map}
    second: dict[str, int] = {m: 0 for m in anon_map}
    none_count = 0
    for row in effective:
        if row["best"] == NONE_KEY:
            none_count += 1
        else:
            best[key_to_model[row["best"]]] += 1
        if row.get("second"):
            second[key_to_model[row["second"]]] += 1
    names = sorted(anon_map)
    best_rates = _percent_allocation([best[m] for m in names] + [none_count], total)
    models = {}
    for i, m in enumerate(names):
        models[m] = {
            "best": best[m],
            "second": second[m],
            "best_rate": best_rates[i],
            "top2_rate": round(100.0 * (best[m] + second[m]) / total, 1),
        }
    return {
        "total_responses": total,
        "models": models,
        "none": {"count": none_count, "rate": best_rates[-1]},
    }


def resolve_gold(
    rows: Sequence[dict[str, Any]]
) -> tuple[list[dict[str, Any]], list[dict[str, Any]]]:
    """Majority labels per (video, pair) from latest-per-annotator votes.

    Exact ties are returned as unresolved and excluded from gold.
    """
    latest: dict[tuple[str, int, str], str] = {}
    for row in rows:
        key = (row["video_id"], int(row["pair_index"]), row["annotator"])
        latest[key] = row["label"]
    votes: dict[tuple[str, int], dict[str, int]] = {}
    for (video_id, pair_index, _annotator), label in latest.items():
        tally = votes.setdefault((video_id, pair_index), {PROGRESSION: 0, NO_PROGRESSION: 0})
        tally[label] += 1
    gold, unresolved = [], []
    for (video_id, pair_index), tally in sorted(votes.items()):
        entry = {"video_id": video_id, "pair_index": pair_index, "votes": tally}
        if tally[PROGRESSION] > tally[NO_PROGRESSION]:
            gold.append({**entry, "label": PROGRESSION})
        elif tally[NO_PROGRESSION] > tally[PROGRESSION]:
            gold.append({**entry, "label": NO_PROGRESSION})
        else:
            unresolved.append(entry)
    return gold, unresolved


# --- persistent store ----------------------------------------------------


@dataclass
class StudyDefinition:
    study_id: str
    name: str
    seed: int
    items: list[FrameSequence]
    captions: dict[str, list[list[str]]]  # model -> per item -> per frame
    anon_map: dict[str, str]

    @property
    def total_slots(self) -> int:
        return sum(item.length for item in self.items)

    def to_dict(self) -> dict[str, Any]:
        return {
            "study_id": self.study_id,
            "name": self.name,
            "seed": self.seed,
            "items": [i.to_dict() for i in self.items],
            "captions": self.captions,
            "anon_map": self.anon_map,
        }

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "StudyDefinition":
        return cls(
            study_id=d["study_id"],
            name=d["name"],
            seed=int(d["seed"]),
            items=[FrameSequence.from_dict(i) for i in d["items"]],
            captions=d["captions"],
            anon_map=d["anon_map"],
        )


def validate_study_spec(
    items: Sequence[FrameSequence], captions: dict[str, list[list[str]]]
) -> None:
    if len(captions) < 2:
        raise StudyError("need >=2 models to rank")
    if not items:
        raise StudyError("need at least one item")
    for model, per_item in captions.items():
        if len(per_item) != len(items):
            raise StudyError(f"model {model!r} covers {len(per_item)} items, need {len(items)}")
        for i, (item, caps) in enumerate(zip(items, per_item)):
            if len(caps) != item.length:
                raise StudyError(
                    f"coverage gap: model {model!r} item {i} "
                    f"({item.video_id}) has {len(caps)} captions for {item.length} frames"
                )
            for j, c in enumerate(caps):
                if not str(c).strip():
                    raise StudyError(
                        f"coverage gap: model {model!r} has an empty caption for "
                        f"frame {j} of item {i} ({item.video_id})"
                    )


class StudyStore:
    """Append-only, thread-safe study storage under one data directory."""

    def __init__(self, data_dir: str | Path, clock=time.time):
        self.data_dir = Path(data_dir)
        self.data_dir.mkdir(parents=True, exist_ok=True)
        self._clock = clock
        self._lock = threading.Lock()

    def _study_dir(self, study_id: str) -> Path:
        return self.data_dir / "studies" / study_id

    def create_study(
        self,
        items: Sequence[FrameSequence],
        captions: dict[str, list[list[str]]],
        seed: int,
        name: str = "",
    ) -> StudyDefinition:
        validate_study_spec(items, captions)
        with self._lock:
            root = self.data_dir / "studies"
            root.mkdir(parents=True, exist_ok=True)
            study_id = f"study{len(list(root.iterdir())) + 1}"
            definition = StudyDefinition(
                study_id=study_id,
                name=name or study_id,
                seed=seed,
                items=list(items),
                captions={m: [list(c) for c in per] for m, per in captions.items()},
                anon_map=anonymize_models(list(captions), seed),
            )
            sdir = self._study_dir(study_id)
            sdir.mkdir(parents=True)
            (sdir / "study.json").write_text(
                json.dumps(definition.to_dict(), ensure_ascii=False, indent=2),
                encoding="utf-8",
            )
            (sdir / "responses.jsonl").touch()
            (sdir / "annotations.jsonl").touch()
        return definition

    def load_study(self, study_id: str) -> StudyDefinition:
        path = self._study_dir(study_id) / "study.json"
        if not path.exists():
            raise StudyError(f"unknown study {study_id!r}")
        return StudyDefinition.from_dict(json.loads(path.read_text(encoding="utf-8")))

    def study_ids(self) -> list[str]:
        root = self.data_dir / "studies"
        if not root.exists():
            return []
        return sorted(p.name for p in root.iterdir() if p.is_dir())

    def _append(self, study_id: str, filename: str, row: dict[str, Any]) -> None:
        path = self._study_dir(study_id) / filename
        with self._lock:
            with open(path, "a", encoding="utf-8", newline="\n") as fh:
                fh.write(json.dumps(row, ensure_ascii=False) + "\n")

    def _read_rows(self, study_id: str, filename: str) -> list[dict[str, Any]]:
        path = self._study_dir(study_id) / filename
        if not path.exists():
            raise StudyError(f"unknown study {study_id!r}")
        with self._lock:
            text = path.read_text(encoding="utf-8")
        return [json.loads(line) for line in text.splitlines() if line.strip()]

    def record_response(
        self,
        study_id: str,
        participant: str,
        item_index: int,
        frame_index: int,
        best: str,
        second: str | None,
    ) -> dict[str, Any]:
        study = self.load_study(study_id)
        if not participant:
            raise StudyError("participant token required")
        if not 0 <= item_index < len(study.items):
            raise StudyError(f"item_index {item_index} out of range")
        if not 0 <= frame_index < study.items[item_index].length:
            raise StudyError(f"frame_index {frame_index} out of range for item {item_index}")
        valid_keys = set(study.anon_map.values())
        if best != NONE_KEY and best not in valid_keys:
            raise StudyError(f"unknown card key {best!r}")
        if second is not None:
            if best == NONE_KEY:
                raise StudyError('"none" excludes a second pick')
            if second not in valid_keys:
                raise StudyError(f"unknown card key {second!r}")
            if second == best:
                raise StudyError("best and second must differ")
        row = {
            "participant": participant,
            "item_index": item_index,
            "frame_index": frame_index,
            "best": best,
            "second": second,
            "timestamp": self._clock(),
        }
        self._append(study_id, "responses.jsonl", row)
        return row

    def record_annotation(
        self,
        study_id: str,
        video_id: str,
        pair_index: int,
        label: str,
        annotator: str,
    ) -> dict[str, Any]:
        study = self.load_study(study_id)
        if label not in (PROGRESSION, NO_PROGRESSION):
            raise StudyError(f"label must be progression or no_progression, got {label!r}")
        if not annotator:
            raise StudyError("annotator id required")
        by_video = {item.video_id: item for item in study.items}
        if video_id not in by_video:
            raise StudyError(f"video {video_id!r} is not part of study {study_id}")
        if not 0 <= pair_index < by_video[video_id].length - 1:
            raise StudyError(f"pair_index {pair_index} out of range for {video_id!r}")
        row = {
            "video_id": video_id,
            "pair_index": pair_index,
            "label": label,
            "annotator": annotator,
            "timestamp": self._clock(),
        }
        self._append(study_id, "annotations.jsonl", row)
        return row

    def effective_responses(self, study_id: str) -> list[dict[str, Any]]:
        rows = self._read_rows(study_id, "responses.jsonl")
        return list(resolve_responses(rows).values())

    def next_slot(self, study_id: str, participant: str) -> dict[str, Any]:
        study = self.load_study(study_id)
        answered = {
            (r["item_index"], r["frame_index"])
            for r in self.effective_responses(study_id)
            if r["participant"] == participant
        }
        total = study.total_slots
        completed = len(answered)
        for i, item in enumerate(study.items):
            for j in range(item.length):
                if (i, j) in answered:
                    continue
                order = card_order(list(study.anon_map.values()), study.seed, participant, i)
                model_by_key = {v: k for k, v in study.anon_map.items()}
                cards = [
                    {"key": key, "text": study.captions[model_by_key[key]][i][j]}
                    for key in order
                ]
                return {
                    "done": False,
                    "item_index": i,
                    "frame_index": j,
                    "video_id": item.video_id,
                    "action": item.action,
                    "image_uri": item.frames[j].uri,
                    "sequence_uris": [f.uri for f in item.frames],
                    "cards": cards,
                    "progress": {"completed": completed, "total": total},
                }
        return {"done": True, "progress": {"completed": completed, "total": total}}

    def item_listing(self, study_id: str) -> list[dict[str, Any]]:
        """Frame inventory for annotators; never exposes captions or models."""
        study = self.load_study(study_id)
        return [
            {
                "item_index": i,
                "video_id": item.video_id,
                "action": item.action,
                "frame_uris": [f.uri for f in item.frames],
            }
            for i, item in enumerate(study.items)
        ]

    def report(self, study_id: str) -> dict[str, Any]:
        study = self.load_study(study_id)
        return selection_rates(self.effective_responses(study_id), study.anon_map)

    def export_gold(self, study_id: str) -> dict[str, Any]:
        study = self.load_study(study_id)
        rows = self._read_rows(study_id, "annotations.jsonl")
        gold, unresolved = resolve_gold(rows)
        by_video = {item.video_id: item for item in study.items}
        records = []
        for g in gold:
            item = by_video[g["video_id"]]
            t = g["pair_index"]
            rec = GoldProgression(
                pair=(item.frames[t], item.frames[t + 1]),
                label=g["label"],
                annotator="majority",
            )
            records.append(rec.to_dict())
        return {"gold": records, "unresolved": unresolved}


# --- HTTP wiring ---------------------------------------------------------
#
# Request models live at module scope: annotations are postponed strings
# in this file, and FastAPI resolves them against module globals.


class StudyCreate(BaseModel):
    name: str = ""
    seed: int = 0
    items: list[dict]
    captions: dict[str, list[list[str]]]


class ResponseBody(BaseModel):
    study_id: str
    participant: str
    item_index: int
    frame_index: int
    best: str
    second: str | None = None


class AnnotationBody(BaseModel):
    study_id: str
    video_id: str
    pair_index: int
    label: str
    annotator: str


def create_app(store: StudyStore, ui_dir: str | Path | None = None):
    """Build the FastAPI app over a StudyStore."""
    from fastapi import FastAPI, HTTPException
    from fastapi.staticfiles import StaticFiles

    app = FastAPI(title="framecap study service")

    def _bad(exc: Exception):
        raise HTTPException(status_code=400, detail=str(exc))

    @app.post("/studies")
    def post_study(body: StudyCreate):
        try:
            items = [FrameSequence.from_dict(d) for d in body.items]
            study = store.create_study(items, body.captions, body.seed, body.name)
        except (StudyError, ValueError) as exc:
            _bad(exc)
        return {
            "study_id": study.study_id,
            "n_items": len(study.items),
            "total_slots": study.total_slots,
            "n_models": len(study.anon_map),
        }

    @app.get("/studies/{study_id}/next")
    def get_next(study_id: str, participant: str):
        try:
            return store.next_slot(study_id, participant)
        except StudyError as exc:
            _bad(exc)

    @app.get("/studies/{study_id}/items")
    def get_items(study_id: str):
        try:
            return {"items": store.item_listing(study_id)}
        except StudyError as exc:
            _bad(exc)

    @app.post("/responses")
    def post_response(body: ResponseBody):
        try:
            store.record_response(
                body.study_id,
                body.participant,
                body.item_index,
                body.frame_index,
                body.best,
                body.second,
            )
        except StudyError as exc:
            _bad(exc)
        return {"status": "ok"}

    @app.post("/annotations")
    def post_annotation(body: AnnotationBody):
        try:
            store.record_annotation(
                body.study_id, body.video_id, body.pair_index, body.label, body.annotator
            )
        except StudyError as exc:
            _bad(exc)
        return {"status": "ok"}

    @app.get("/studies/{study_id}/report")
    def get_report(study_id: str):
        try:
            return store.report(study_id)
        except StudyError as exc:
            _bad(exc)

    @app.get("/studies/{study_id}/gold")
    def get_gold(study_id: str):
        try:
            return store.export_gold(study_id)
        except StudyError as exc:
            _bad(exc)

    media_dir = store.data_dir / "media"
    if media_dir.exists():
        app.mount("/media", StaticFiles(directory=str(media_dir)), name="media")
    if ui_dir and Path(ui_dir).exists():
        app.mount("/", StaticFiles(directory=str(ui_dir), html=True), name="ui")
    return app


def serve(data_dir: str | Path, port: int = 8600, ui_dir: str | Path | None = None) -> None:
    import uvicorn

    app = create_app(StudyStore(data_dir), ui_dir=ui_dir)
    uvicorn.run(app, host="127.0.0.1", port=port, log_level="warning")
