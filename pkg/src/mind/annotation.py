"""Human-evaluation workflows: task sampling, rating collection,
qualification scoring, and inter-annotator agreement statistics.

Every sampled intention is judged by exactly three raters on four binary
aspects; the final outcome per aspect is the majority vote. Agreement is
reported as mean pairwise agreement and Fleiss's kappa, by default pooling
all four aspects as separate items (configurable per aspect).
"""
from __future__ import annotations

import json
import random
import threading
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

from .analytics import likert_score
from .catalog import Catalog
from .errors import (
    AnnotationError,
    DuplicateSubmission,
    InsufficientRecords,
    LengthMismatch,
    RowSumMismatch,
    TaskComplete,
    TaskIncomplete,
    TooFewCategories,
    TooFewItems,
    UnknownTask,
)
from .kb import IntentionKB

ASPECTS = ("plausibility", "typicality", "human_centric", "filter_rationale")

RATERS_PER_TASK = 3
QUALIFICATION_THRESHOLD = 0.87  # pass requires strictly more


@dataclass
class AspectRatings:
    rater_id: str
    task_id: str
    plausibility: int
    typicality: int
    human_centric: int
    filter_rationale: int
    submitted_at: str = ""

    def __post_init__(self) -> None:
        if not self.rater_id:
            raise AnnotationError("rater_id must be nonempty")
        for aspect in ASPECTS:
            value = getattr(self, aspect)
            if value not in (0, 1):
                raise AnnotationError(f"aspect {aspect!r} must be 0 or 1, got {value!r}")

    def vote(self, aspect: str) -> int:
        return getattr(self, aspect)

    def as_dict(self) -> dict:
        return {
            "rater_id": self.rater_id,
            "task_id": self.task_id,
            **{aspect: getattr(self, aspect) for aspect in ASPECTS},
            "submitted_at": self.submitted_at,
        }


@dataclass
class AnnotationTask:
    task_id: str
    record_id: int
    payload: dict
    raters: list[str] = field(default_factory=list)

    @property
    def status(self) -> str:
        return "complete" if len(self.raters) >= RATERS_PER_TASK else "open"

    def as_dict(self) -> dict:
        return {
            "task_id": self.task_id,
            "record_id": self.record_id,
            "status": self.status,
            "raters": list(self.raters),
            "payload": self.payload,
        }


@dataclass
class AgreementReport:
    aspect: str
    pairwise_agreement: float | None
    fleiss_kappa: float | None
    n_items: int
    n_raters: int
    n_categories: int

    def as_dict(self) -> dict:
        return {
            "aspect": self.aspect,
            "pairwise_agreement": self.pairwise_agreement,
            "fleiss_kappa": self.fleiss_kappa,
            "n_items": self.n_items,
            "n_raters": self.n_raters,
            "n_categories": self.n_categories,
        }


@dataclass
class QualificationResult:
    accuracy: float
    passed: bool

    def as_dict(self) -> dict:
        return {"accuracy": self.accuracy, "passed": self.passed}


# --- agreement statistics -----------------------------------------------------


def majority_vote_votes(votes: Sequence[int]) -> int:
    """1 iff at least 2 of the 3 binary votes are 1."""
    if len(votes) != RATERS_PER_TASK:
        raise TaskIncomplete(f"expected {RATERS_PER_TASK} votes, got {len(votes)}")
    return 1 if sum(votes) >= 2 else 0


def pairwise_agreement(vote_rows: Iterable[Sequence[int]]) -> float:
    """Mean, over items, of the fraction of rater pairs that agree."""
    rows = list(vote_rows)
    if not rows:
        raise TooFewItems("pairwise agreement needs at least one complete item")
    per_item = []
    for votes in rows:
        n = len(votes)
        if n < 2:
            raise TooFewItems("pairwise agreement needs at least two raters per item")
        agreeing = sum(
            1 for i in range(n) for j in range(i + 1, n) if votes[i] == votes[j]
        )
        per_item.append(agreeing / (n * (n - 1) / 2))
    return sum(per_item) / len(per_item)


def fleiss_kappa(matrix: Sequence[Sequence[int]], n_raters: int) -> float:
    """Fleiss's kappa over an items x category-counts matrix.

    Perfect agreement returns exactly 1.0 (the chance-corrected
    denominator degenerates there).
    """
    rows = [list(row) for row in matrix]
    if len(rows) < 2:
        raise TooFewItems("kappa needs at least 2 items")
    n_categories = len(rows[0])
    if n_categories < 2:
        raise TooFewCategories("kappa needs at least 2 categories")
    if n_raters < 2:
        raise AnnotationError("kappa needs at least 2 raters")
    for i, row in enumerate(rows):
        if len(row) != n_categories:
            raise RowSumMismatch(f"row {i} has {len(row)} categories, expected {n_categories}")
        if any(c < 0 for c in row):
            raise RowSumMismatch(f"row {i} contains a negative count")
        if sum(row) != n_raters:
            raise RowSumMismatch(f"row {i} sums to {sum(row)}, expected {n_raters}")

    if all(max(row) == n_raters for row in rows):
        return 1.0

    n_items = len(rows)
    p_bar = sum(
        (sum(c * c for c in row) - n_raters) / (n_raters * (n_raters - 1)) for row in rows
    ) / n_items
    col_totals = [sum(row[j] for row in rows) for j in range(n_categories)]
    p_e = sum((total / (n_items * n_raters)) ** 2 for total in col_totals)
    return (p_bar - p_e) / (1.0 - p_e)


def qualification_score(
    rater_answers: Sequence[object], gold_key: Sequence[object]
) -> QualificationResult:
    """Accuracy against a gold key; passing requires strictly over 87%."""
    if len(rater_answers) != len(gold_key) or not gold_key:
        raise LengthMismatch(
            f"answers ({len(rater_answers)}) and key ({len(gold_key)}) must have equal nonzero length"
        )
    matches = sum(1 for a, b in zip(rater_answers, gold_key) if a == b)
    total = len(gold_key)
    # Integer comparison keeps the strict > 87% boundary exact.
    return QualificationResult(accuracy=matches / total, passed=matches * 100 > 87 * total)


# --- task store -----------------------------------------------------------------


class AnnotationStore:
    """Tasks and ratings, optionally persisted as append-only JSONL files.

    Submission is atomic and serialized per store; statistics are computed
    over read-only snapshots of complete tasks.
    """

    def __init__(self, directory: str | Path | None = None):
        self.directory = Path(directory) if directory else None
        self._tasks: dict[str, AnnotationTask] = {}
        self._ratings: dict[str, dict[str, AspectRatings]] = {}
        self._lock = threading.Lock()
        self._next_task = 1
        if self.directory:
            self.directory.mkdir(parents=True, exist_ok=True)
            self._reload()

    # -- persistence -------------------------------------------------------------

    def _reload(self) -> None:
        tasks_path = self.directory / "tasks.jsonl"
        if tasks_path.exists():
            for line in tasks_path.read_text(encoding="utf-8").splitlines():
                if not line.strip():
                    continue
                data = json.loads(line)
                task = AnnotationTask(
                    task_id=data["task_id"], record_id=data["record_id"], payload=data["payload"]
                )
                self._tasks[task.task_id] = task
                self._ratings[task.task_id] = {}
                seq = int(task.task_id.lstrip("t"))
                self._next_task = max(self._next_task, seq + 1)
        ratings_path = self.directory / "ratings.jsonl"
        if ratings_path.exists():
            for line in ratings_path.read_text(encoding="utf-8").splitlines():
                if not line.strip():
                    continue
                rating = AspectRatings(**json.loads(line))
                task = self._tasks.get(rating.task_id)
                if task is not None and rating.rater_id not in task.raters:
                    self._ratings[rating.task_id][rating.rater_id] = rating
                    task.raters.append(rating.rater_id)

    def _append(self, filename: str, record: dict) -> None:
        if not self.directory:
            return
        with open(self.directory / filename, "a", encoding="utf-8") as fh:
            fh.write(json.dumps(record, ensure_ascii=False, sort_keys=True) + "\n")

    # -- task lifecycle -----------------------------------------------------------

    def create_tasks(
        self,
        sample_size: int,
        seed: int,
        kb: IntentionKB,
        source: str = "accepted",
        catalog: Catalog | None = None,
    ) -> list[str]:
        """Seeded uniform sample (without replacement) of KB records into
        open tasks. Image refs come from the catalog when available; the
        KB stores only denormalized titles."""
        records = kb.query(accepted=(source == "accepted"))
        if sample_size > len(records):
            raise InsufficientRecords(
                f"asked for {sample_size} tasks but {source} partition has {len(records)} records"
            )
        sampled = random.Random(seed).sample(records, sample_size)
        task_ids = []
        with self._lock:
            for record in sampled:
                task_id = f"t{self._next_task:05d}"
                self._next_task += 1
                images_a: list[str] = []
                images_b: list[str] = []
                if catalog is not None:
                    images_a = list(catalog.get_product(record.product_a_id).image_refs)
                    images_b = list(catalog.get_product(record.product_b_id).image_refs)
                payload = {
                    "product_a_title": record.product_a_title,
                    "product_b_title": record.product_b_title,
                    "product_a_images": images_a,
                    "product_b_images": images_b,
                    "intention": record.intention,
                    "relation": record.relation,
                    "verdict_accept": record.accept,
                    "verdict_rationale": record.rationale,
                }
                task = AnnotationTask(task_id=task_id, record_id=record.record_id, payload=payload)
                self._tasks[task_id] = task
                self._ratings[task_id] = {}
                self._append("tasks.jsonl", task.as_dict())
                task_ids.append(task_id)
        return task_ids

    def get_task(self, task_id: str) -> AnnotationTask:
        try:
            return self._tasks[task_id]
        except KeyError:
            raise UnknownTask(f"no task {task_id!r}") from None

    def tasks(self) -> list[AnnotationTask]:
        return [self._tasks[tid] for tid in sorted(self._tasks)]

    def next_task(self, rater_id: str) -> AnnotationTask | None:
        """First open task this rater has not yet rated (self-assignment
        up to the three-rater capacity)."""
        for task in self.tasks():
            if task.status == "open" and rater_id not in task.raters:
                return task
        return None

    def submit_rating(self, rating: AspectRatings) -> dict:
        """Store one rater's four aspect votes; the third distinct rater
        completes the task."""
        with self._lock:
            task = self.get_task(rating.task_id)
            if task.status == "complete":
                raise TaskComplete(f"task {task.task_id} already has {RATERS_PER_TASK} ratings")
            if rating.rater_id in task.raters:
                raise DuplicateSubmission(
                    f"rater {rating.rater_id!r} already rated task {task.task_id}"
                )
            self._ratings[task.task_id][rating.rater_id] = rating
            task.raters.append(rating.rater_id)
            self._append("ratings.jsonl", rating.as_dict())
            return {"task_id": task.task_id, "status": task.status, "raters": len(task.raters)}

    # -- statistics ----------------------------------------------------------------

    def complete_tasks(self) -> list[AnnotationTask]:
        return [t for t in self.tasks() if t.status == "complete"]

    def votes(self, task_id: str, aspect: str) -> list[int]:
        task = self.get_task(task_id)
        return [self._ratings[task_id][rater].vote(aspect) for rater in task.raters]

    def majority_vote(self, task_id: str) -> dict[str, int]:
        """Per-aspect majority outcome for one complete task."""
        task = self.get_task(task_id)
        if task.status != "complete":
            raise TaskIncomplete(f"task {task_id} has {len(task.raters)} of {RATERS_PER_TASK} ratings")
        return {aspect: majority_vote_votes(self.votes(task_id, aspect)) for aspect in ASPECTS}

    def _agreement_items(self, aspect: str) -> list[list[int]]:
        aspects = ASPECTS if aspect == "all" else (aspect,)
        if aspect != "all" and aspect not in ASPECTS:
            raise AnnotationError(f"unknown aspect {aspect!r}")
        items = []
        for task in self.complete_tasks():
            for a in aspects:
                items.append(self.votes(task.task_id, a))
        return items

    def agreement_report(self, aspect: str = "all") -> AgreementReport:
        """Pairwise agreement and Fleiss's kappa over complete tasks.

        ``aspect="all"`` pools the four aspects as separate items; kappa
        is None when fewer than two items exist.
        """
        items = self._agreement_items(aspect)
        pairwise = pairwise_agreement(items) if items else None
        kappa = None
        if len(items) >= 2:
            matrix = [[votes.count(0), votes.count(1)] for votes in items]
            kappa = fleiss_kappa(matrix, RATERS_PER_TASK)
        return AgreementReport(
            aspect=aspect,
            pairwise_agreement=pairwise,
            fleiss_kappa=kappa,
            n_items=len(items),
            n_raters=RATERS_PER_TASK,
            n_categories=2,
        )

    def typicality_by_relation(self) -> dict:
        """Mean Likert (1 + positive votes) per relation over complete tasks."""
        rows = [
            (task.payload.get("relation", "unknown"), self.votes(task.task_id, "typicality"))
            for task in self.complete_tasks()
        ]
        per_relation = {}
        sums: dict[str, int] = {}
        counts: dict[str, int] = {}
        for relation, votes in rows:
            sums[relation] = sums.get(relation, 0) + likert_score(votes)
            counts[relation] = counts.get(relation, 0) + 1
        for relation in sorted(sums):
            per_relation[relation] = sums[relation] / counts[relation]
        overall = (
            sum(sums.values()) / sum(counts.values()) if counts else None
        )
        return {"relations": per_relation, "overall": overall}

    def summary(self) -> dict:
        """Dashboard counts and per-aspect majority-positive rates."""
        complete = self.complete_tasks()
        positive_rates: dict[str, float | None] = {}
        for aspect in ASPECTS:
            if complete:
                outcomes = [
                    majority_vote_votes(self.votes(t.task_id, aspect)) for t in complete
                ]
                positive_rates[aspect] = sum(outcomes) / len(outcomes)
            else:
                positive_rates[aspect] = None
        return {
            "tasks_open": sum(1 for t in self.tasks() if t.status == "open"),
            "tasks_complete": len(complete),
            "positive_rates": positive_rates,
        }
