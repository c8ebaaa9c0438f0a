"""Append-only intention knowledge base with an in-memory query index.

Storage is two line-delimited JSON partitions, ``kb/accepted.jsonl`` and
``kb/rejected.jsonl``; the index is rebuilt from them on open. A single
writer (the pipeline's serialized appender) appends during a run;
concurrent readers see a consistent prefix.

Duplicate identity is (cobuy_id, relation, intention) after lowercasing,
whitespace collapsing, and terminal-punctuation stripping; duplicates are
silently skipped and counted.
"""
from __future__ import annotations

import json
import os
import re
from dataclasses import dataclass
from pathlib import Path

from .errors import EmptyExport
from .relations import RELATION_NAMES

_WS = re.compile(r"\s+")

EXPORT_QUESTION_TEMPLATE = (
    "Q: customer buys {product_a} and {product_b}. "
    "What is the most likely intention for buying them?"
)


def normalize_intention(text: str) -> str:
    return _WS.sub(" ", text).strip().rstrip(".,;:!?").lower()


@dataclass
class IntentionRecord:
    record_id: int | None
    cobuy_id: str
    product_a_id: str
    product_a_title: str
    product_b_id: str
    product_b_title: str
    relation: str
    intention: str
    accept: bool
    rationale: str
    raw_response: str
    run_id: str
    created_at: str

    def dedup_key(self) -> tuple[str, str, str]:
        return (self.cobuy_id, self.relation, normalize_intention(self.intention))

    def to_json_line(self) -> str:
        payload = {
            "record_id": self.record_id,
            "cobuy_id": self.cobuy_id,
            "product_a": {"id": self.product_a_id, "title": self.product_a_title},
            "product_b": {"id": self.product_b_id, "title": self.product_b_title},
            "relation": self.relation,
            "intention": self.intention,
            "verdict": {
                "accept": self.accept,
                "rationale": self.rationale,
                "raw_response": self.raw_response,
            },
            "run_id": self.run_id,
            "created_at": self.created_at,
        }
        return json.dumps(payload, ensure_ascii=False, sort_keys=True)

    @classmethod
    def from_json_line(cls, line: str) -> "IntentionRecord":
        data = json.loads(line)
        return cls(
            record_id=data["record_id"],
            cobuy_id=data["cobuy_id"],
            product_a_id=data["product_a"]["id"],
            product_a_title=data["product_a"]["title"],
            product_b_id=data["product_b"]["id"],
            product_b_title=data["product_b"]["title"],
            relation=data["relation"],
            intention=data["intention"],
            accept=data["verdict"]["accept"],
            rationale=data["verdict"]["rationale"],
            raw_response=data["verdict"]["raw_response"],
            run_id=data["run_id"],
            created_at=data["created_at"],
        )


class IntentionKB:
    """Persist, query, and export the filtered intention records."""

    def __init__(self, directory: str | Path):
        self.directory = Path(directory)
        self.directory.mkdir(parents=True, exist_ok=True)
        self.accepted_path = self.directory / "accepted.jsonl"
        self.rejected_path = self.directory / "rejected.jsonl"
        self._records: dict[int, IntentionRecord] = {}
        self._dedup: dict[tuple[str, str, str], int] = {}
        self._next_id = 1
        self.duplicates_skipped = 0
        self._load()

    def _load(self) -> None:
        for path in (self.accepted_path, self.rejected_path):
            if not path.exists():
                continue
            for line in path.read_text(encoding="utf-8").splitlines():
                if not line.strip():
                    continue
                record = IntentionRecord.from_json_line(line)
                self._records[record.record_id] = record
                self._dedup[record.dedup_key()] = record.record_id
                self._next_id = max(self._next_id, record.record_id + 1)

    def insert(self, record: IntentionRecord) -> int:
        """Append one record durably; duplicates are skipped and counted.

        Returns the stored record's id (the existing one for duplicates).
        """
        key = record.dedup_key()
        if key in self._dedup:
            self.duplicates_skipped += 1
            return self._dedup[key]
        record.record_id = self._next_id
        self._next_id += 1
        path = self.accepted_path if record.accept else self.rejected_path
        with open(path, "a", encoding="utf-8") as fh:
            fh.write(record.to_json_line() + "\n")
            fh.flush()
            os.fsync(fh.fileno())
        self._records[record.record_id] = record
        self._dedup[key] = record.record_id
        return record.record_id

    def __len__(self) -> int:
        return len(self._records)

    def query(
        self,
        relation: str | None = None,
        product_id: str | None = None,
        text_substring: str | None = None,
        accepted: bool | None = None,
    ) -> list[IntentionRecord]:
        """Conjunctive filtering over both partitions, ordered by record_id.

        ``product_id`` matches either endpoint; ``text_substring`` is a
        case-insensitive match against the intention text.
        """
        needle = text_substring.lower() if text_substring else None
        results = []
        for record_id in sorted(self._records):
            record = self._records[record_id]
            if relation is not None and record.relation != relation:
                continue
            if product_id is not None and product_id not in (
                record.product_a_id, record.product_b_id
            ):
                continue
            if needle is not None and needle not in record.intention.lower():
                continue
            if accepted is not None and record.accept != accepted:
                continue
            results.append(record)
        return results

    def stats(self) -> dict:
        """Per-relation accepted counts and filter-preserve rates, plus totals.

        The preserve rate is accepted/(accepted+rejected) and is reported
        as None when the denominator is zero.
        """
        accepted: dict[str, int] = {name: 0 for name in RELATION_NAMES}
        rejected: dict[str, int] = {name: 0 for name in RELATION_NAMES}
        for record in self._records.values():
            bucket = accepted if record.accept else rejected
            bucket[record.relation] = bucket.get(record.relation, 0) + 1
        relations = {}
        for name in RELATION_NAMES:
            seen = accepted[name] + rejected[name]
            relations[name] = {
                "count": accepted[name],
                "rfp_rate": (accepted[name] / seen) if seen else None,
            }
        total_accepted = sum(accepted.values())
        total_rejected = sum(rejected.values())
        total_seen = total_accepted + total_rejected
        return {
            "relations": relations,
            "total_accepted": total_accepted,
            "total_rejected": total_rejected,
            "overall_rfp_rate": (total_accepted / total_seen) if total_seen else None,
            "duplicates_skipped": self.duplicates_skipped,
        }

    def export_instruction_tuning(self, path: str | Path) -> int:
        """Write accepted records as {question, answer} JSON lines.

        The question is the fine-tuning template with both titles
        substituted; the answer is the intention with exactly one terminal
        period. Returns the number of lines written.
        """
        records = self.query(accepted=True)
        if not records:
            raise EmptyExport("knowledge base has no accepted records to export")
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", encoding="utf-8") as fh:
            for record in records:
                question = EXPORT_QUESTION_TEMPLATE.format(
                    product_a=record.product_a_title, product_b=record.product_b_title
                )
                answer = record.intention.rstrip(".") + "."
                fh.write(json.dumps({"question": question, "answer": answer}, ensure_ascii=False))
                fh.write("\n")
        return len(records)
