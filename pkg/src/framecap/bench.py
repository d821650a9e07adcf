"""Benchmark construction and the Cap/Prog benchmark runner.

Construction mirrors the evaluation-set recipe: frames extracted at
1 FPS, grouped by k-means over image embeddings with k chosen by mean
silhouette score, one representative frame per cluster, plus one injected
near-duplicate so every sequence contains both progression and
no-progression material.

The runner captions each sequence with the model under test (full
T-frame context), judges progression per adjacent pair in eval mode
against human gold (balanced accuracy, "Prog"), and runs sequence-level
caption matching on sequences that contain gold progression
(sequence-level accuracy, "Cap").
"""

from __future__ import annotations

import shutil
import subprocess
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Sequence

import numpy as np

from .core import SCHEMA_VERSION, FrameRef, FrameSequence, _check_keys, _check_version
from .curate import WindowCaptionError, caption_with_window
from .gateway import DecodeParams, Gateway, GatewayError
from .matching import MatchOutcome, evaluate_sequence_matching, sequence_level_accuracy
from .progression import (
    PROGRESSION,
    GoldProgression,
    balanced_accuracy,
    judge_pair_change,
    progression_prediction,
)
from .seeding import derive_seed


# --- clustering --------------------------------------------------------


@dataclass(frozen=True)
class KMeansResult:
    labels: np.ndarray
    centers: np.ndarray
    inertia: float
    n_iter: int
    inertia_history: tuple[float, ...]


def _kmeans_pp_init(x: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    n = x.shape[0]
    centers = np.empty((k, x.shape[1]), dtype=float)
    centers[0] = x[rng.integers(n)]
    d2 = ((x - centers[0]) ** 2).sum(axis=1)
    for j in range(1, k):
        total = d2.sum()
        if total <= 0.0:
            idx = int(rng.integers(n))
        else:
            idx = int(rng.choice(n, p=d2 / total))
        centers[j] = x[idx]
        d2 = np.minimum(d2, ((x - centers[j]) ** 2).sum(axis=1))
    return centers


def kmeans(
    x: np.ndarray,
    k: int,
    seed: int,
    n_restarts: int = 10,
    max_iter: int = 300,
    tol: float = 1e-12,
) -> KMeansResult:
    """Lloyd's algorithm with k-means++ seeding and restarts.

    The objective is non-increasing across iterations within a restart
    (empty clusters are reseeded to the worst-fit point, which only
    lowers it); the restart with the best final inertia wins.
    """
    x = np.asarray(x, dtype=float)
    n = x.shape[0]
    if not 1 <= k <= n:
        raise ValueError(f"k must be in [1, {n}], got {k}")
    rng = np.random.default_rng(seed)
    best: KMeansResult | None = None
    idx = np.arange(n)
    for _ in range(n_restarts):
        centers = _kmeans_pp_init(x, k, rng)
        prev = np.inf
        history: list[float] = []
        labels = np.zeros(n, dtype=int)
        n_iter = 0
        for n_iter in range(1, max_iter + 1):
            d2 = ((x[:, None, :] - centers[None, :, :]) ** 2).sum(axis=-1)
            labels = d2.argmin(axis=1)
            point_d2 = d2[idx, labels]
            inertia = float(point_d2.sum())
            history.append(inertia)
            if inertia > prev + 1e-9:
                raise RuntimeError("k-means objective increased; numerical fault")
            if prev - inertia <= tol:
                break
            prev = inertia
            for j in range(k):
                mask = labels == j
                if mask.any():
                    centers[j] = x[mask].mean(axis=0)
                else:
                    centers[j] = x[int(point_d2.argmax())]
        result = KMeansResult(
            labels=labels,
            centers=centers,
            inertia=history[-1],
            n_iter=n_iter,
            inertia_history=tuple(history),
        )
        if best is None or result.inertia < best.inertia:
            best = result
    assert best is not None
    return best


def mean_silhouette(x: np.ndarray, labels: np.ndarray) -> float:
    """Mean silhouette coefficient under Euclidean distance.

    Samples in singleton clusters score 0, as do samples whose a and b
    are both 0 (exact duplicates).
    """
    x = np.asarray(x, dtype=float)
    labels = np.asarray(labels)
    n = x.shape[0]
    uniq = np.unique(labels)
    if len(uniq) < 2:
        raise ValueError("silhouette needs at least 2 clusters")
    dist = np.sqrt(((x[:, None, :] - x[None, :, :]) ** 2).sum(axis=-1))
    scores = np.zeros(n)
    for i in range(n):
        own = labels == labels[i]
        n_own = int(own.sum())
        if n_own <= 1:
            scores[i] = 0.0
            continue
        a = dist[i, own].sum() / (n_own - 1)
        b = min(dist[i, labels == c].mean() for c in uniq if c != labels[i])
        denom = max(a, b)
        scores[i] = 0.0 if denom == 0.0 else (b - a) / denom
    return float(scores.mean())


@dataclass(frozen=True)
class ClusterSelection:
    """Chosen k, its silhouette, and one representative frame per cluster."""

    indices: tuple[int, ...]
    k: int
    silhouette: float
    scores_by_k: dict[int, float]


def cluster_frames(
    embeddings: Sequence[Sequence[float]] | np.ndarray,
    k_min: int = 3,
    k_max: int = 6,
    seed: int = 0,
    n_restarts: int = 10,
    max_iter: int = 300,
) -> ClusterSelection:
    """Pick k in [k_min, min(k_max, n-1)] by silhouette; one frame per cluster.

    The representative of each cluster is the frame nearest its centroid
    (ties to the lower frame index); output is temporally ordered.
    """
    x = np.asarray(embeddings, dtype=float)
    if x.ndim != 2:
        raise ValueError("embeddings must be a 2-D array of equal-length vectors")
    n = x.shape[0]
    if n < k_min + 1:
        raise ValueError(f"need at least {k_min + 1} frames to cluster, got {n}")
    if np.allclose(x, x[0]):
        raise ValueError("no cluster structure: all embeddings identical")

    scores: dict[int, float] = {}
    results: dict[int, KMeansResult] = {}
    for k in range(k_min, min(k_max, n - 1) + 1):
        res = kmeans(x, k, derive_seed(seed, "kmeans", k), n_restarts, max_iter)
        results[k] = res
        scores[k] = mean_silhouette(x, res.labels)

    best_k = max(scores, key=lambda k: (scores[k], -k))
    res = results[best_k]
    reps: list[int] = []
    for j in range(best_k):
        members = np.flatnonzero(res.labels == j)
        if members.size == 0:
            continue
        d = np.sqrt(((x[members] - res.centers[j]) ** 2).sum(axis=1))
        reps.append(int(members[int(d.argmin())]))
    return ClusterSelection(
        indices=tuple(sorted(reps)),
        k=len(reps),
        silhouette=scores[best_k],
        scores_by_k=scores,
    )


def inject_near_duplicate(
    embeddings: Sequence[Sequence[float]] | np.ndarray,
    selected: Sequence[int],
    seed: int = 0,
) -> tuple[int, ...]:
    """Add the unselected frame nearest a randomly chosen selected frame.

    The anchor is drawn uniformly (seeded) from the selected set; distance
    ties break toward the lower frame index. Result is re-sorted.
    """
    import random

    x = np.asarray(embeddings, dtype=float)
    selected = sorted(selected)
    unselected = [i for i in range(x.shape[0]) if i not in set(selected)]
    if not unselected:
        raise ValueError("no unselected frame to inject")
    rng = random.Random(seed)
    anchor = selected[rng.randrange(len(selected))]
    d = np.sqrt(((x[unselected] - x[anchor]) ** 2).sum(axis=1))
    addition = unselected[int(d.argmin())]  # argmin returns first -> lower index wins ties
    return tuple(sorted(selected + [addition]))


# --- benchmark data ----------------------------------------------------


@dataclass(frozen=True)
class BenchSequence:
    """One benchmark sequence with human progression gold per adjacent pair."""

    sequence: FrameSequence
    gold: tuple[GoldProgression, ...]
    source_dataset: str

    def __post_init__(self) -> None:
        object.__setattr__(self, "gold", tuple(self.gold))
        if len(self.gold) != self.sequence.length - 1:
            raise ValueError(
                f"gold must cover exactly T-1={self.sequence.length - 1} pairs, "
                f"got {len(self.gold)}"
            )
        if not any(g.label == PROGRESSION for g in self.gold):
            raise ValueError(
                f"sequence {self.sequence.video_id!r} has no progression pair; "
                "sequences lacking action progression are excluded on ingest"
            )

    def to_dict(self) -> dict[str, Any]:
        return {
            "schema_version": SCHEMA_VERSION,
            "sequence": self.sequence.to_dict(),
            "gold": [g.to_dict() for g in self.gold],
            "source_dataset": self.source_dataset,
        }

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "BenchSequence":
        _check_keys(
            cls.__name__, d, {"schema_version", "sequence", "gold", "source_dataset"}, set()
        )
        _check_version(d)
        return cls(
            sequence=FrameSequence.from_dict(d["sequence"]),
            gold=tuple(GoldProgression.from_dict(g) for g in d["gold"]),
            source_dataset=d["source_dataset"],
        )


# --- benchmark runner --------------------------------------------------


@dataclass(frozen=True)
class BenchRow:
    dataset: str
    cap: float | None  # percent, or None when undefined
    prog: float | None
    n_sequences: int
    n_pairs: int
    n_cap_eligible: int
    n_excluded: int


@dataclass(frozen=True)
class BenchReport:
    model: str
    rows: tuple[BenchRow, ...]

    def render_tsv(self) -> str:
        lines = [
            f"model\t{self.model}",
            "dataset\tcap\tprog\tsequences\tpairs\tcap_eligible\texcluded",
        ]
        for r in self.rows:
            cap = "-" if r.cap is None else f"{r.cap:.1f}"
            prog = "-" if r.prog is None else f"{r.prog:.1f}"
            lines.append(
                f"{r.dataset}\t{cap}\t{prog}\t{r.n_sequences}\t{r.n_pairs}"
                f"\t{r.n_cap_eligible}\t{r.n_excluded}"
            )
        return "\n".join(lines) + "\n"


class _Agg:
    def __init__(self) -> None:
        self.preds: list[str] = []
        self.golds: list[str] = []
        self.outcomes: list[MatchOutcome] = []
        self.n_sequences = 0
        self.n_cap_eligible = 0
        self.n_excluded = 0


def run_benchmark(
    gateway: Gateway,
    model: str,
    dataset: Sequence[BenchSequence],
    progression_judge: str,
    matching_judge: str,
    seed: int = 0,
    captioner_decode: DecodeParams = DecodeParams(),
    judge_decode: DecodeParams = DecodeParams(),
) -> BenchReport:
    """Caption, judge, and score one model over a benchmark split.

    Per-sequence failures (undecodable captions, indistinguishable
    matching options) are excluded from the affected metric and counted.
    """
    if not dataset:
        raise ValueError("benchmark dataset must be non-empty")
    per_ds: dict[str, _Agg] = {}
    for bench in dataset:
        agg = per_ds.setdefault(bench.source_dataset, _Agg())
        seq = bench.sequence
        vid = seq.video_id
        try:
            captions = caption_with_window(
                gateway, model, seq, "full", captioner_decode,
                seed=derive_seed(seed, "bench-cap", vid),
            )
            agg.n_sequences += 1
            for i in range(1, seq.length):
                verdict = judge_pair_change(
                    gateway, progression_judge,
                    captions.captions[i - 1], captions.captions[i], "eval",
                    action=seq.action, pair=(seq.frames[i - 1], seq.frames[i]),
                    decode=judge_decode,
                )
                agg.preds.append(progression_prediction(verdict.label))
                agg.golds.append(bench.gold[i - 1].label)
        except (WindowCaptionError, GatewayError):
            agg.n_excluded += 1
            continue

        if any(g.label == PROGRESSION for g in bench.gold):
            agg.n_cap_eligible += 1
            try:
                outcome = evaluate_sequence_matching(
                    gateway, seq.frames, captions.captions, matching_judge,
                    seed=derive_seed(seed, "bench-match", vid),
                    subject=f"{vid}:bench", decode=judge_decode,
                )
                agg.outcomes.append(outcome)
            except ValueError:
                agg.n_excluded += 1

    rows = []
    for ds in sorted(per_ds):
        agg = per_ds[ds]
        try:
            prog = round(balanced_accuracy(agg.preds, agg.golds) * 100, 1)
        except ValueError:
            prog = None
        cap = (
            round(sequence_level_accuracy(agg.outcomes) * 100, 1) if agg.outcomes else None
        )
        rows.append(
            BenchRow(
                dataset=ds,
                cap=cap,
                prog=prog,
                n_sequences=agg.n_sequences,
                n_pairs=len(agg.golds),
                n_cap_eligible=agg.n_cap_eligible,
                n_excluded=agg.n_excluded,
            )
        )
    return BenchReport(model=model, rows=tuple(rows))


# --- ingestion ---------------------------------------------------------


def ingest_frames(
    video: str | Path,
    out_dir: str | Path,
    fps: int = 1,
    action: str = "",
    split: str = "eval",
    video_id: str | None = None,
) -> FrameSequence:
    """Extract frames with ffmpeg onto the 1 FPS grid and index them.

    A clip of duration d seconds yields floor(d * fps) + 1 frames (ffmpeg
    emits the t=0 frame plus one per period). Requires ffmpeg on PATH.
    """
    tool = shutil.which("ffmpeg")
    if tool is None:
        raise RuntimeError(
            "frame extraction requires the external tool 'ffmpeg' on PATH; "
            "install ffmpeg and retry"
        )
    video = Path(video)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    pattern = out / "frame_%06d.png"
    proc = subprocess.run(
        [
            tool, "-hide_banner", "-loglevel", "error",
            "-i", str(video), "-vf", f"fps={fps}", "-start_number", "0",
            str(pattern),
        ],
        capture_output=True,
        text=True,
    )
    if proc.returncode != 0:
        raise RuntimeError(f"undecodable input {video}: {proc.stderr.strip()[:300]}")
    files = sorted(out.glob("frame_*.png"))
    if not files:
        raise RuntimeError(f"no frames extracted from {video}")
    vid = video_id or video.stem
    frames = tuple(
        FrameRef(video_id=vid, index=i, timestamp_s=i, uri=str(p))
        for i, p in enumerate(files)
    )
    return FrameSequence(frames=frames, action=action, split=split)
