import json

import pytest

from mind.errors import EmptyExport
from mind.kb import EXPORT_QUESTION_TEMPLATE, IntentionKB, IntentionRecord

from conftest import DATA_DIR


def record(intention, relation="UsedFor", cobuy="C001", accept=True,
           a=("P003", "Crestline Wireless Ergonomic Mouse"),
           b=("P004", "Crestline Slim Mechanical Keyboard")):
    return IntentionRecord(
        record_id=None,
        cobuy_id=cobuy,
        product_a_id=a[0], product_a_title=a[1],
        product_b_id=b[0], product_b_title=b[1],
        relation=relation,
        intention=intention,
        accept=accept,
        rationale="it speaks to a real shopper need",
        raw_response="Yes, it speaks to a real shopper need",
        run_id="run-test",
        created_at="2020-01-01T00:00:00Z",
    )


def test_insert_assigns_sequential_ids(tmp_path):
    kb = IntentionKB(tmp_path)
    first = kb.insert(record("they both are used for travel"))
    second = kb.insert(record("they both are used for hiking"))
    assert (first, second) == (1, 2)


def test_duplicate_intention_skipped_and_counted(tmp_path):
    kb = IntentionKB(tmp_path)
    first = kb.insert(record("they both are used for travel."))
    dup = kb.insert(record("  They both are USED for travel "))
    assert dup == first
    assert kb.duplicates_skipped == 1
    assert len(kb) == 1


def test_rejects_routed_to_sibling_partition(tmp_path):
    kb = IntentionKB(tmp_path)
    kb.insert(record("they both are used for travel", accept=False))
    assert not (tmp_path / "accepted.jsonl").exists()
    lines = (tmp_path / "rejected.jsonl").read_text().splitlines()
    assert len(lines) == 1
    assert json.loads(lines[0])["verdict"]["accept"] is False


def test_stats_counts_sum_to_totals(tmp_path):
    kb = IntentionKB(tmp_path)
    for i in range(3):
        kb.insert(record(f"they both are used for activity {i}"))
    for i in range(2):
        kb.insert(record(f"they both are made of material {i}", relation="MadeOf"))
    kb.insert(record("they both are made of scrap", relation="MadeOf", accept=False))
    stats = kb.stats()
    assert stats["total_accepted"] == 5
    assert sum(e["count"] for e in stats["relations"].values()) == 5
    assert stats["relations"]["UsedFor"]["count"] == 3
    assert stats["relations"]["MadeOf"]["rfp_rate"] == pytest.approx(2 / 3)


def test_rfp_rate_matches_reference_arithmetic(tmp_path):
    kb = IntentionKB(tmp_path)
    for i in range(17):
        kb.insert(record(f"open intention {i}", relation="Open", cobuy=f"C{i:03d}"))
    for i in range(83):
        kb.insert(record(f"open reject {i}", relation="Open", cobuy=f"C{i:03d}", accept=False))
    stats = kb.stats()
    assert stats["relations"]["Open"]["rfp_rate"] == pytest.approx(0.17)


def test_empty_kb_stats(tmp_path):
    stats = IntentionKB(tmp_path).stats()
    assert stats["total_accepted"] == 0
    assert all(e["rfp_rate"] is None for e in stats["relations"].values())
    assert all(e["count"] == 0 for e in stats["relations"].values())


def test_export_matches_golden_file(tmp_path):
    kb = IntentionKB(tmp_path / "kb")
    kb.insert(record("they both are useful to computer users"))
    kb.insert(record(
        "they are designed to work together in a smart home system.",
        relation="Effect", cobuy="C002",
        a=("P001", "Samsung SmartCam HD Pro"),
        b=("P002", "Samsung SmartThings Smart Home Hub"),
    ))
    kb.insert(record(
        "they both are used for outdoor activities",
        cobuy="C003",
        a=("P005", "Banded Arc Welded Waterproof Backpack"),
        b=("P006", "Banded Deluxe UFS Fleece Face Mask"),
    ))
    out = tmp_path / "export.jsonl"
    assert kb.export_instruction_tuning(out) == 3
    assert out.read_bytes() == (DATA_DIR / "golden_export.jsonl").read_bytes()


def test_export_answer_has_exactly_one_terminal_period(tmp_path):
    kb = IntentionKB(tmp_path / "kb")
    kb.insert(record("they both are used for winter trips..."))
    out = tmp_path / "export.jsonl"
    kb.export_instruction_tuning(out)
    answer = json.loads(out.read_text().splitlines()[0])["answer"]
    assert answer == "they both are used for winter trips."


def test_export_excludes_rejects(tmp_path):
    kb = IntentionKB(tmp_path / "kb")
    kb.insert(record("they both are used for travel"))
    kb.insert(record("they both are used for junk", accept=False))
    out = tmp_path / "export.jsonl"
    assert kb.export_instruction_tuning(out) == 1


def test_export_empty_kb_fails(tmp_path):
    with pytest.raises(EmptyExport):
        IntentionKB(tmp_path / "kb").export_instruction_tuning(tmp_path / "out.jsonl")


def test_export_round_trip_recovers_titles_and_intentions(tmp_path):
    kb = IntentionKB(tmp_path / "kb")
    intentions = [f"they both are used for scenario {i}" for i in range(5)]
    for i, intention in enumerate(intentions):
        kb.insert(record(intention, cobuy=f"C{i:03d}"))
    out = tmp_path / "export.jsonl"
    kb.export_instruction_tuning(out)

    exported = set()
    for line in out.read_text(encoding="utf-8").splitlines():
        data = json.loads(line)
        body = data["question"][len("Q: customer buys "):]
        titles, _, _ = body.partition(". What is the most likely intention")
        exported.add((titles, data["answer"].rstrip(".")))
    expected = {
        (
            f"{r.product_a_title} and {r.product_b_title}",
            r.intention.rstrip("."),
        )
        for r in kb.query(accepted=True)
    }
    assert exported == expected


def test_query_filters(tmp_path):
    kb = IntentionKB(tmp_path)
    kb.insert(record("they both are used for travel"))
    kb.insert(record("they both are made of leather", relation="MadeOf", cobuy="C002",
                     a=("P005", "Backpack"), b=("P006", "Mask")))
    kb.insert(record("they both are used for junk", accept=False, cobuy="C003"))
    assert [r.relation for r in kb.query(relation="MadeOf")] == ["MadeOf"]
    assert len(kb.query(product_id="P005")) == 1
    assert len(kb.query(product_id="P004")) == 2
    assert [r.intention for r in kb.query(text_substring="LEATHER")] == [
        "they both are made of leather"
    ]
    assert [r.accept for r in kb.query(accepted=False)] == [False]
    assert len(kb.query(relation="MadeOf", product_id="P003")) == 0


def test_query_ordered_by_record_id(tmp_path):
    kb = IntentionKB(tmp_path)
    for i in range(10):
        kb.insert(record(f"they both are used for thing {i}", cobuy=f"C{i:03d}"))
    ids = [r.record_id for r in kb.query()]
    assert ids == sorted(ids)


def test_reopen_replays_append_log(tmp_path):
    kb = IntentionKB(tmp_path)
    kb.insert(record("they both are used for travel"))
    kb.insert(record("they both are used for junk", accept=False, cobuy="C002"))
    reopened = IntentionKB(tmp_path)
    assert [r.record_id for r in reopened.query()] == [r.record_id for r in kb.query()]
    assert reopened.stats() == {**kb.stats(), "duplicates_skipped": 0}
    # Dedup index survives the reload.
    assert reopened.insert(record("they both are used for travel")) == 1
    assert reopened.duplicates_skipped == 1
