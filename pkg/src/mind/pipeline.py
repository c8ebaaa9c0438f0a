"""Three-stage distillation flow with checkpointing, parsing, validation.

Work items are keyed by (cobuy_id, relation, sample_index). Each stage
records completed keys in an append-only, fsync'd cursor file so an
interrupted run resumes without repeating requests; resuming under a
different config fingerprint is refused. Items whose endpoint calls
exhaust retries land in a dead-letter list instead of aborting the run,
up to a configurable abort threshold.

Knowledge-base materialization happens once, after the filter stage, in
deterministic key order, so identical mock runs produce byte-identical
KB partitions.
"""
from __future__ import annotations

import enum
import hashlib
import json
import os
import re
import threading
from concurrent.futures import ThreadPoolExecutor, as_completed
from dataclasses import dataclass
from datetime import datetime, timezone
from pathlib import Path
from typing import Callable, Iterable

from .catalog import Catalog
from .errors import CheckpointMismatch, BackendError, PipelineAborted
from .gateway import Gateway
from .kb import IntentionKB, IntentionRecord
from .prompts import INTENTION_LEAD_IN, GenParams, PromptForge
from .relations import Relation

MAX_INTENTION_WORDS = 120

# Lead-ins models echo back from the generation instruction; stripped
# before prefix checking.
KNOWN_LEAD_INS = (
    INTENTION_LEAD_IN,
    "the potential co-buy intention would be",
    "the co-buy intention could be",
)

_WS = re.compile(r"\s+")
_VERDICT = re.compile(r"(yes|no)\b[\s,.:;!-]*(.*)", re.IGNORECASE)


def _normalize(text: str) -> str:
    return _WS.sub(" ", text).strip()


def utc_now_iso() -> str:
    return datetime.now(timezone.utc).strftime("%Y-%m-%dT%H:%M:%SZ")


def fixed_clock(timestamp: str = "2020-01-01T00:00:00Z") -> Callable[[], str]:
    """Constant clock used by mock runs so KB bytes are reproducible."""
    return lambda: timestamp


class FailureClass(enum.Enum):
    PREFIX_VIOLATION = "PrefixViolation"
    TOO_LONG = "TooLong"
    EMPTY = "Empty"
    AMBIGUOUS = "Ambiguous"
    EMPTY_RATIONALE = "EmptyRationale"


@dataclass(frozen=True)
class ParseFailure:
    failure_class: FailureClass
    detail: str
    raw: str


@dataclass
class IntentionCandidate:
    cobuy_id: str
    relation: Relation
    text: str
    raw_response: str
    created_at: str = ""
    sample_index: int = 0


@dataclass(frozen=True)
class FilterVerdict:
    accept: bool
    rationale: str
    raw_response: str


def _strip_lead_in(text: str, strict: bool) -> tuple[str, bool]:
    probe = text if strict else text.lower()
    for lead_in in KNOWN_LEAD_INS:
        needle = lead_in if strict else lead_in.lower()
        if probe.startswith(needle):
            rest = text[len(lead_in):]
            return rest.lstrip(" ,:;").strip(), True
    return text, False


def parse_intention(
    raw: str,
    relation: Relation,
    strict: bool = False,
    cobuy_id: str = "",
    sample_index: int = 0,
    created_at: str = "",
) -> IntentionCandidate | ParseFailure:
    """Validate one raw generation into a candidate intention.

    Strips known boilerplate lead-ins, then requires the text to start
    with the relation template (the Open relation instead requires the
    lead-in itself, its only format instruction), and caps length at 120
    words. ``strict`` switches prefix matching to case-sensitive.
    """
    text = _normalize(raw)
    if not text:
        return ParseFailure(FailureClass.EMPTY, "blank response", raw)
    body, had_lead_in = _strip_lead_in(text, strict)
    if not body:
        return ParseFailure(FailureClass.EMPTY, "nothing after the lead-in", raw)
    if relation.is_open:
        if not had_lead_in:
            return ParseFailure(
                FailureClass.PREFIX_VIOLATION,
                f"open-relation output must start with {INTENTION_LEAD_IN!r}",
                raw,
            )
    else:
        matched = (
            body.startswith(relation.template)
            if strict
            else body.lower().startswith(relation.template.lower())
        )
        if not matched:
            return ParseFailure(
                FailureClass.PREFIX_VIOLATION,
                f"expected prefix {relation.template!r}",
                raw,
            )
    if len(body.split()) > MAX_INTENTION_WORDS:
        return ParseFailure(
            FailureClass.TOO_LONG, f"{len(body.split())} words > {MAX_INTENTION_WORDS}", raw
        )
    return IntentionCandidate(
        cobuy_id=cobuy_id,
        relation=relation,
        text=body,
        raw_response=raw,
        created_at=created_at,
        sample_index=sample_index,
    )


def parse_verdict(raw: str) -> FilterVerdict | ParseFailure:
    """Split a filter reply into the Yes/No decision and its rationale.

    Accepts a leading "Yes"/"No" token in any case, followed by optional
    punctuation; everything after is the rationale. Anything else is an
    ambiguous verdict.
    """
    text = _normalize(raw)
    match = _VERDICT.match(text)
    if not match:
        return ParseFailure(FailureClass.AMBIGUOUS, "no leading Yes/No token", raw)
    rationale = match.group(2).strip()
    if not rationale:
        return ParseFailure(FailureClass.EMPTY_RATIONALE, "verdict without a reason", raw)
    return FilterVerdict(accept=match.group(1).lower() == "yes", rationale=rationale, raw_response=raw)


# --- checkpointing -----------------------------------------------------------


def config_fingerprint(
    forge: PromptForge,
    relations: Iterable[Relation],
    samples_per_pair: int,
    strict_prefix: bool,
    gen_params: GenParams,
    scenario: str | None = None,
    seed: int | None = None,
) -> str:
    """Stable hash over everything that shapes a run's outputs."""
    payload = {
        "templates": forge.template_sources(),
        "relations": [[r.name, r.template] for r in relations],
        "samples_per_pair": samples_per_pair,
        "strict_prefix": strict_prefix,
        "gen_params": gen_params.as_dict(),
        "scenario": scenario,
        "seed": seed,
    }
    blob = json.dumps(payload, sort_keys=True, ensure_ascii=True)
    return hashlib.sha256(blob.encode("utf-8")).hexdigest()


WorkKey = tuple[str, str, int]  # (cobuy_id, relation name, sample_index)


class Checkpoint:
    """Append-only per-run record of completed work, fsync'd per item."""

    def __init__(self, directory: Path, run_id: str, fingerprint: str):
        self.directory = directory
        self.run_id = run_id
        self.fingerprint = fingerprint
        self._lock = threading.Lock()

    @classmethod
    def open(cls, root: str | Path, run_id: str, fingerprint: str) -> "Checkpoint":
        directory = Path(root) / run_id
        config_path = directory / "config.json"
        if config_path.exists():
            stored = json.loads(config_path.read_text(encoding="utf-8"))
            if stored.get("fingerprint") != fingerprint:
                raise CheckpointMismatch(
                    f"run {run_id!r} was started with a different configuration; "
                    "refusing to resume"
                )
        else:
            directory.mkdir(parents=True, exist_ok=True)
            config_path.write_text(
                json.dumps({"run_id": run_id, "fingerprint": fingerprint}, indent=2),
                encoding="utf-8",
            )
        return cls(directory, run_id, fingerprint)

    def _append(self, filename: str, record: dict) -> None:
        with self._lock:
            with open(self.directory / filename, "a", encoding="utf-8") as fh:
                fh.write(json.dumps(record, ensure_ascii=False, sort_keys=True) + "\n")
                fh.flush()
                os.fsync(fh.fileno())

    def _read(self, filename: str) -> list[dict]:
        path = self.directory / filename
        if not path.exists():
            return []
        records = []
        for line in path.read_text(encoding="utf-8").splitlines():
            if line.strip():
                records.append(json.loads(line))
        return records

    # stage 1
    def record_feature(self, product_id: str, features: str, raw: str) -> None:
        self._append("features.jsonl", {"product_id": product_id, "features": features, "raw": raw})

    def features(self) -> dict[str, str]:
        return {r["product_id"]: r["features"] for r in self._read("features.jsonl")}

    # stage 2
    def record_candidate(self, key: WorkKey, record: dict) -> None:
        record = dict(record)
        record.update(cobuy_id=key[0], relation=key[1], sample_index=key[2])
        self._append("candidates.jsonl", record)

    def candidates(self) -> dict[WorkKey, dict]:
        return {
            (r["cobuy_id"], r["relation"], r["sample_index"]): r
            for r in self._read("candidates.jsonl")
        }

    # stage 3
    def record_verdict(self, key: WorkKey, record: dict) -> None:
        record = dict(record)
        record.update(cobuy_id=key[0], relation=key[1], sample_index=key[2])
        self._append("verdicts.jsonl", record)

    def verdicts(self) -> dict[WorkKey, dict]:
        return {
            (r["cobuy_id"], r["relation"], r["sample_index"]): r
            for r in self._read("verdicts.jsonl")
        }

    # dead letters
    def record_dead_letter(self, stage: str, key: str, reason: str) -> None:
        self._append("dead_letter.jsonl", {"stage": stage, "key": key, "reason": reason})

    def dead_letters(self, stage: str | None = None) -> list[dict]:
        records = self._read("dead_letter.jsonl")
        return [r for r in records if stage is None or r["stage"] == stage]

    # KB materialization marker
    def mark_kb_written(self) -> None:
        (self.directory / "kb_written").write_text("done", encoding="utf-8")

    @property
    def kb_written(self) -> bool:
        return (self.directory / "kb_written").exists()


# --- stage runner ------------------------------------------------------------


@dataclass
class FilterCounts:
    accepted: int
    rejected: int
    unparseable: int

    def as_tuple(self) -> tuple[int, int, int]:
        return (self.accepted, self.rejected, self.unparseable)


class PipelineRun:
    """Drives the three stages over a catalog through one gateway."""

    def __init__(
        self,
        catalog: Catalog,
        gateway: Gateway,
        forge: PromptForge,
        relations: list[Relation],
        checkpoint: Checkpoint,
        kb: IntentionKB,
        samples_per_pair: int = 1,
        strict_prefix: bool = False,
        abort_threshold: float = 0.2,
        max_workers: int = 4,
        clock: Callable[[], str] = utc_now_iso,
    ):
        self.catalog = catalog
        self.gateway = gateway
        self.forge = forge
        self.relations = list(relations)
        self.checkpoint = checkpoint
        self.kb = kb
        self.samples_per_pair = samples_per_pair
        self.strict_prefix = strict_prefix
        self.abort_threshold = abort_threshold
        self.max_workers = max_workers
        self.clock = clock
        self._relation_order = {r.name: i for i, r in enumerate(self.relations)}
        self._relations_by_name = {r.name: r for r in self.relations}

    # -- shared machinery ------------------------------------------------------

    def _process(self, stage: str, items: list, worker: Callable) -> list[str]:
        """Run ``worker`` over items in a bounded pool; collect dead letters.

        Aborts the whole run once dead-lettered items exceed the threshold
        fraction of this stage's workload.
        """
        dead: list[str] = []
        if not items:
            return dead
        limit = self.abort_threshold * len(items)
        with ThreadPoolExecutor(max_workers=self.max_workers) as pool:
            futures = {pool.submit(worker, item): item for item in items}
            for future in as_completed(futures):
                item = futures[future]
                try:
                    future.result()
                except BackendError as exc:
                    key = item if isinstance(item, str) else "|".join(map(str, item))
                    self.checkpoint.record_dead_letter(stage, key, str(exc))
                    dead.append(key)
                    if len(dead) > limit:
                        for pending in futures:
                            pending.cancel()
                        raise PipelineAborted(
                            f"{stage}: {len(dead)} of {len(items)} items dead-lettered "
                            f"(threshold {self.abort_threshold:.0%})"
                        ) from exc
        return dead

    def _sorted_keys(self, keys: Iterable[WorkKey]) -> list[WorkKey]:
        return sorted(keys, key=lambda k: (k[0], self._relation_order.get(k[1], 99), k[2]))

    # -- stage 1: product feature extraction -----------------------------------

    def run_feature_stage(self) -> int:
        """Annotate every product that appears in a co-buy record.

        Returns the number of products carrying extracted features after
        the stage (checkpointed completions count).
        """
        targets = self.catalog.paired_product_ids()
        target_set = set(targets)
        done = self.checkpoint.features()
        for product_id, features in done.items():
            if product_id in target_set:
                self.catalog.set_extracted_features(product_id, features)
        todo = [pid for pid in targets if pid not in done]

        def work(product_id: str) -> None:
            product = self.catalog.get_product(product_id)
            bundle = self.forge.render_feature_prompt(product)
            response = self.gateway.complete(bundle)
            self.catalog.set_extracted_features(product_id, response.text)
            self.checkpoint.record_feature(product_id, response.text, response.text)

        self._process("feature", todo, work)
        return sum(
            1 for pid in targets if self.catalog.get_product(pid).extracted_features
        )

    # -- stage 2: co-buy intention generation ----------------------------------

    def _generation_keys(self) -> list[WorkKey]:
        keys = []
        for cobuy in self.catalog.cobuys():
            product_a, product_b = self.catalog.get_pair(cobuy.cobuy_id)
            # Pairs with a dead-lettered endpoint are skipped downstream.
            if not (product_a.extracted_features and product_b.extracted_features):
                continue
            for relation in self.relations:
                for sample_index in range(self.samples_per_pair):
                    keys.append((cobuy.cobuy_id, relation.name, sample_index))
        return self._sorted_keys(keys)

    def run_generation_stage(self) -> int:
        """Generate per (pair x relation x sample) candidates.

        Returns the number of successfully parsed candidates recorded for
        this run; parse failures are retained with their failure class.
        """
        done = self.checkpoint.candidates()
        todo = [k for k in self._generation_keys() if k not in done]

        def work(key: WorkKey) -> None:
            cobuy_id, relation_name, sample_index = key
            relation = self._relations_by_name[relation_name]
            pair = self.catalog.get_pair(cobuy_id)
            bundle = self.forge.render_intention_prompt(pair, relation)
            response = self.gateway.complete(bundle)
            parsed = parse_intention(
                response.text,
                relation,
                strict=self.strict_prefix,
                cobuy_id=cobuy_id,
                sample_index=sample_index,
                created_at=self.clock(),
            )
            if isinstance(parsed, ParseFailure):
                record = {
                    "status": "failed",
                    "failure_class": parsed.failure_class.value,
                    "detail": parsed.detail,
                    "raw": response.text,
                }
            else:
                record = {"status": "parsed", "text": parsed.text, "raw": response.text}
            self.checkpoint.record_candidate(key, record)

        self._process("generation", todo, work)
        return sum(1 for r in self.checkpoint.candidates().values() if r["status"] == "parsed")

    def generation_failures(self) -> dict[str, int]:
        """Parse-failure counts by class for the generation stage."""
        counts: dict[str, int] = {}
        for record in self.checkpoint.candidates().values():
            if record["status"] == "failed":
                counts[record["failure_class"]] = counts.get(record["failure_class"], 0) + 1
        return counts

    # -- stage 3: human-centric role-aware filtering ----------------------------

    def run_filter_stage(self) -> FilterCounts:
        """Obtain a verdict for every parsed candidate, then materialize
        the KB partitions in deterministic key order."""
        candidates = {
            k: r for k, r in self.checkpoint.candidates().items() if r["status"] == "parsed"
        }
        done = self.checkpoint.verdicts()
        todo = [k for k in self._sorted_keys(candidates) if k not in done]

        def work(key: WorkKey) -> None:
            cobuy_id, relation_name, _ = key
            relation = self._relations_by_name[relation_name]
            pair = self.catalog.get_pair(cobuy_id)
            bundle = self.forge.render_filter_prompt(pair, relation, candidates[key]["text"])
            response = self.gateway.complete(bundle)
            verdict = parse_verdict(response.text)
            if isinstance(verdict, ParseFailure):
                record = {
                    "status": "unparseable",
                    "failure_class": verdict.failure_class.value,
                    "raw": response.text,
                }
            else:
                record = {
                    "status": "accepted" if verdict.accept else "rejected",
                    "rationale": verdict.rationale,
                    "raw": response.text,
                }
            self.checkpoint.record_verdict(key, record)

        self._process("filter", todo, work)
        self._materialize_kb(candidates)

        counts = {"accepted": 0, "rejected": 0, "unparseable": 0}
        for record in self.checkpoint.verdicts().values():
            counts[record["status"]] += 1
        return FilterCounts(**counts)

    def _materialize_kb(self, candidates: dict[WorkKey, dict]) -> None:
        if self.checkpoint.kb_written:
            return
        verdicts = self.checkpoint.verdicts()
        for key in self._sorted_keys(verdicts):
            record = verdicts[key]
            if record["status"] == "unparseable":
                continue
            cobuy_id, relation_name, _ = key
            product_a, product_b = self.catalog.get_pair(cobuy_id)
            self.kb.insert(
                IntentionRecord(
                    record_id=None,
                    cobuy_id=cobuy_id,
                    product_a_id=product_a.product_id,
                    product_a_title=product_a.title,
                    product_b_id=product_b.product_id,
                    product_b_title=product_b.title,
                    relation=relation_name,
                    intention=candidates[key]["text"],
                    accept=record["status"] == "accepted",
                    rationale=record["rationale"],
                    raw_response=record["raw"],
                    run_id=self.checkpoint.run_id,
                    created_at=self.clock(),
                )
            )
        self.checkpoint.mark_kb_written()
