import json

import pytest

from mind.catalog import Catalog, default_image_probe
from mind.errors import DuplicateId, MalformedLine, NotFound

from conftest import DATA_DIR


def write_lines(path, records):
    path.write_text("\n".join(json.dumps(r) for r in records) + "\n", encoding="utf-8")


def product_record(pid, images, title="Widget"):
    return {"id": pid, "title": title, "domain": "Electronics",
            "description": "", "attributes": [], "images": images}


def test_drops_products_without_reachable_images(tmp_path):
    path = tmp_path / "products.jsonl"
    write_lines(path, [
        product_record("P1", ["ok/a.jpg"]),
        product_record("P2", ["dead/b.jpg"]),
        product_record("P3", ["ok/c.jpg"]),
    ])
    catalog = Catalog(image_probe=lambda ref: ref.startswith("ok/"))
    stats = catalog.ingest_products(path, resolve_images=True)
    assert stats.products_total == 2
    assert stats.products_dropped_no_image == 1
    with pytest.raises(NotFound):
        catalog.get_product("P2")


def test_partially_reachable_images_keep_only_resolved_refs(tmp_path):
    path = tmp_path / "products.jsonl"
    write_lines(path, [product_record("P1", ["dead/a.jpg", "ok/b.jpg"])])
    catalog = Catalog(image_probe=lambda ref: ref.startswith("ok/"))
    catalog.ingest_products(path, resolve_images=True)
    assert catalog.get_product("P1").image_refs == ["ok/b.jpg"]


def test_empty_file_yields_zero_stats(tmp_path):
    path = tmp_path / "products.jsonl"
    path.write_text("", encoding="utf-8")
    stats = Catalog().ingest_products(path)
    assert stats.as_dict() == {
        "products_total": 0, "products_dropped_no_image": 0,
        "cobuys_total": 0, "cobuys_dropped": 0,
    }


def test_duplicate_product_id_is_an_error(tmp_path):
    path = tmp_path / "products.jsonl"
    write_lines(path, [product_record("B0001", ["a.jpg"]), product_record("B0001", ["b.jpg"])])
    with pytest.raises(DuplicateId) as exc:
        Catalog().ingest_products(path, resolve_images=False)
    assert exc.value.entity_id == "B0001"


def test_empty_image_list_dropped_even_without_probe(tmp_path):
    path = tmp_path / "products.jsonl"
    write_lines(path, [product_record("P1", [])])
    stats = Catalog().ingest_products(path, resolve_images=False)
    assert stats.products_total == 0
    assert stats.products_dropped_no_image == 1


def test_malformed_line_reports_line_number(tmp_path):
    path = tmp_path / "products.jsonl"
    path.write_text('{"id": "P1", "title": "A", "images": ["x.jpg"]}\nnot json\n', encoding="utf-8")
    with pytest.raises(MalformedLine) as exc:
        Catalog().ingest_products(path, resolve_images=False)
    assert exc.value.line_no == 2


def test_missing_title_is_malformed(tmp_path):
    path = tmp_path / "products.jsonl"
    path.write_text('{"id": "P1", "title": "", "images": ["x.jpg"]}\n', encoding="utf-8")
    with pytest.raises(MalformedLine):
        Catalog().ingest_products(path, resolve_images=False)


def test_unreadable_file(tmp_path):
    with pytest.raises(MalformedLine):
        Catalog().ingest_products(tmp_path / "nope.jsonl")


def test_attributes_accept_pairs_and_objects(tmp_path):
    path = tmp_path / "products.jsonl"
    records = [
        {"id": "P1", "title": "A", "images": ["x.jpg"], "attributes": [["color", "black"]]},
        {"id": "P2", "title": "B", "images": ["y.jpg"], "attributes": {"size": "XL"}},
    ]
    write_lines(path, records)
    catalog = Catalog()
    catalog.ingest_products(path, resolve_images=False)
    assert catalog.get_product("P1").attributes == [("color", "black")]
    assert catalog.get_product("P2").attributes == [("size", "XL")]


def cobuy_fixture(tmp_path, pairs):
    products = tmp_path / "products.jsonl"
    write_lines(products, [product_record(p, [f"{p}.jpg"]) for p in ("A", "B", "C")])
    cobuys = tmp_path / "cobuys.jsonl"
    write_lines(cobuys, [{"id": f"C{i}", "a": a, "b": b} for i, (a, b) in enumerate(pairs)])
    catalog = Catalog()
    catalog.ingest_products(products, resolve_images=False)
    return catalog, cobuys


def test_unordered_duplicate_pairs_dropped(tmp_path):
    catalog, cobuys = cobuy_fixture(tmp_path, [("A", "B"), ("B", "A"), ("A", "C")])
    stats = catalog.ingest_cobuys(cobuys)
    assert stats.cobuys_total == 2
    assert stats.cobuys_dropped == 1


def test_self_pair_dropped(tmp_path):
    catalog, cobuys = cobuy_fixture(tmp_path, [("A", "A")])
    stats = catalog.ingest_cobuys(cobuys)
    assert (stats.cobuys_total, stats.cobuys_dropped) == (0, 1)


def test_dangling_reference_dropped(tmp_path):
    catalog, cobuys = cobuy_fixture(tmp_path, [("A", "X")])
    stats = catalog.ingest_cobuys(cobuys)
    assert (stats.cobuys_total, stats.cobuys_dropped) == (0, 1)


def test_get_pair_returns_stored_order(tmp_path):
    catalog, cobuys = cobuy_fixture(tmp_path, [("B", "A")])
    catalog.ingest_cobuys(cobuys)
    a, b = catalog.get_pair("C0")
    assert (a.product_id, b.product_id) == ("B", "A")


def test_get_pair_unknown_id(fixture_catalog):
    with pytest.raises(NotFound):
        fixture_catalog.get_pair("missing")


def test_every_stored_cobuy_resolves(fixture_catalog):
    for cobuy in fixture_catalog.cobuys():
        a, b = fixture_catalog.get_pair(cobuy.cobuy_id)
        assert a.product_id == cobuy.product_a
        assert b.product_id == cobuy.product_b


def test_ingest_is_idempotent():
    first = Catalog()
    first.ingest_products(DATA_DIR / "products.jsonl", resolve_images=False)
    first.ingest_cobuys(DATA_DIR / "cobuys.jsonl")
    second = Catalog()
    second.ingest_products(DATA_DIR / "products.jsonl", resolve_images=False)
    second.ingest_cobuys(DATA_DIR / "cobuys.jsonl")
    assert first.stats.as_dict() == second.stats.as_dict()
    assert [p.to_record() for p in first.products()] == [p.to_record() for p in second.products()]
    assert [c.to_record() for c in first.cobuys()] == [c.to_record() for c in second.cobuys()]


def test_totals_account_for_every_valid_line(tmp_path):
    path = tmp_path / "products.jsonl"
    write_lines(path, [
        product_record("P1", ["ok/a.jpg"]),
        product_record("P2", ["dead/b.jpg"]),
        product_record("P3", ["dead/c.jpg"]),
        product_record("P4", ["ok/d.jpg"]),
    ])
    catalog = Catalog(image_probe=lambda ref: ref.startswith("ok/"))
    stats = catalog.ingest_products(path, resolve_images=True)
    assert stats.products_total + stats.products_dropped_no_image == 4


def test_save_and_load_round_trip(tmp_path, fixture_catalog):
    fixture_catalog.save(tmp_path / "catalog")
    reloaded = Catalog.load(tmp_path / "catalog")
    assert [p.to_record() for p in reloaded.products()] == [
        p.to_record() for p in fixture_catalog.products()
    ]
    assert [c.to_record() for c in reloaded.cobuys()] == [
        c.to_record() for c in fixture_catalog.cobuys()
    ]


def test_default_probe_checks_local_paths(tmp_path):
    existing = tmp_path / "img.jpg"
    existing.write_bytes(b"\xff\xd8")
    assert default_image_probe(str(existing)) is True
    assert default_image_probe(str(tmp_path / "missing.jpg")) is False
    assert default_image_probe(f"file://{existing}") is True
