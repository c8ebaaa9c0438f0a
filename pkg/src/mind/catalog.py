"""Ingest, validate, and serve products and co-buy records.

Input files are line-delimited UTF-8 JSON records:

* products: ``{"id", "title", "domain", "description", "attributes", "images"}``
  where ``attributes`` is either a list of ``[key, value]`` pairs or a flat
  object, and ``images`` is a list of URL-or-path strings.
* co-buys: ``{"id", "a", "b"}`` referencing product ids.

Products whose every image reference fails resolution are dropped (the
source dumps contain stale image links); surviving products keep only the
refs that resolved. The reachability probe is a header fetch for http(s)
refs and an existence check for local paths, and can be switched off for
offline fixtures.

Single-writer during ingestion; the catalog is read-only and safely
shareable across threads afterwards (``set_extracted_features`` is the one
post-ingest mutation and is serialized by the pipeline's worker contract).
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable

import httpx

from .errors import DuplicateId, MalformedLine, NotFound

ImageProbe = Callable[[str], bool]


@dataclass
class Product:
    product_id: str
    title: str
    domain: str = ""
    description: str = ""
    attributes: list[tuple[str, str]] = field(default_factory=list)
    image_refs: list[str] = field(default_factory=list)
    extracted_features: str | None = None

    def details_text(self) -> str:
        """Description plus flattened attributes, for prompt embedding."""
        parts = []
        if self.description:
            parts.append(self.description)
        for key, value in self.attributes:
            parts.append(f"{key}: {value}")
        return "; ".join(parts)

    def to_record(self) -> dict:
        return {
            "id": self.product_id,
            "title": self.title,
            "domain": self.domain,
            "description": self.description,
            "attributes": [[k, v] for k, v in self.attributes],
            "images": list(self.image_refs),
        }


@dataclass(frozen=True)
class CoBuyRecord:
    cobuy_id: str
    product_a: str
    product_b: str

    def to_record(self) -> dict:
        return {"id": self.cobuy_id, "a": self.product_a, "b": self.product_b}


@dataclass
class CatalogStats:
    products_total: int = 0
    products_dropped_no_image: int = 0
    cobuys_total: int = 0
    cobuys_dropped: int = 0

    def as_dict(self) -> dict:
        return {
            "products_total": self.products_total,
            "products_dropped_no_image": self.products_dropped_no_image,
            "cobuys_total": self.cobuys_total,
            "cobuys_dropped": self.cobuys_dropped,
        }


def default_image_probe(ref: str, timeout: float = 5.0) -> bool:
    """True if the ref points at something reachable right now.

    http(s) refs get a HEAD request (GET on 405); anything else is treated
    as a local filesystem path.
    """
    if ref.startswith(("http://", "https://")):
        try:
            resp = httpx.head(ref, timeout=timeout, follow_redirects=True)
            if resp.status_code == 405:
                resp = httpx.get(ref, timeout=timeout, follow_redirects=True)
            return resp.status_code < 400
        except httpx.HTTPError:
            return False
    if ref.startswith("file://"):
        ref = ref[len("file://"):]
    return Path(ref).exists()


def _parse_attributes(raw: object, path: str, line_no: int) -> list[tuple[str, str]]:
    if raw is None:
        return []
    if isinstance(raw, dict):
        return [(str(k), str(v)) for k, v in raw.items()]
    if isinstance(raw, list):
        pairs = []
        for item in raw:
            if not isinstance(item, (list, tuple)) or len(item) != 2:
                raise MalformedLine(path, line_no, f"attribute entry is not a pair: {item!r}")
            pairs.append((str(item[0]), str(item[1])))
        return pairs
    raise MalformedLine(path, line_no, "attributes must be a list of pairs or an object")


def _iter_json_lines(path: str | Path) -> Iterable[tuple[int, dict]]:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise MalformedLine(str(path), 0, f"unreadable file: {exc}") from exc
    for line_no, line in enumerate(text.splitlines(), 1):
        if not line.strip():
            continue
        try:
            record = json.loads(line)
        except json.JSONDecodeError as exc:
            raise MalformedLine(str(path), line_no, f"invalid JSON: {exc.msg}") from exc
        if not isinstance(record, dict):
            raise MalformedLine(str(path), line_no, "record is not an object")
        yield line_no, record


class Catalog:
    """In-memory product/co-buy store, rebuilt from files on each run."""

    def __init__(self, image_probe: ImageProbe = default_image_probe):
        self._products: dict[str, Product] = {}
        self._cobuys: dict[str, CoBuyRecord] = {}
        self._pair_keys: set[tuple[str, str]] = set()
        self._probe = image_probe
        self.stats = CatalogStats()

    # -- ingestion -----------------------------------------------------------

    def ingest_products(self, path: str | Path, resolve_images: bool = True) -> CatalogStats:
        """Load products, dropping any without at least one usable image.

        Raises on unreadable files, malformed lines (with line number), and
        duplicate product ids. With ``resolve_images=False`` refs are trusted
        as-is, but products with an empty image list are still dropped.
        """
        for line_no, record in _iter_json_lines(path):
            product = self._parse_product(record, str(path), line_no)
            if product.product_id in self._products:
                raise DuplicateId(product.product_id)
            if resolve_images:
                product.image_refs = [r for r in product.image_refs if self._probe(r)]
            if not product.image_refs:
                self.stats.products_dropped_no_image += 1
                continue
            self._products[product.product_id] = product
            self.stats.products_total += 1
        return self.stats

    def _parse_product(self, record: dict, path: str, line_no: int) -> Product:
        for key in ("id", "title"):
            if not isinstance(record.get(key), str) or not record[key].strip():
                raise MalformedLine(path, line_no, f"missing or empty field {key!r}")
        images = record.get("images", [])
        if not isinstance(images, list) or not all(isinstance(r, str) for r in images):
            raise MalformedLine(path, line_no, "images must be a list of strings")
        return Product(
            product_id=record["id"],
            title=record["title"].strip(),
            domain=str(record.get("domain", "")),
            description=str(record.get("description", "")),
            attributes=_parse_attributes(record.get("attributes"), path, line_no),
            image_refs=list(images),
        )

    def ingest_cobuys(self, path: str | Path) -> CatalogStats:
        """Load co-buy pairs, dropping self-pairs, dangling references, and
        unordered duplicates (dedup key is the sorted id pair)."""
        for line_no, record in _iter_json_lines(path):
            for key in ("id", "a", "b"):
                if not isinstance(record.get(key), str) or not record[key]:
                    raise MalformedLine(str(path), line_no, f"missing or empty field {key!r}")
            cobuy = CoBuyRecord(cobuy_id=record["id"], product_a=record["a"], product_b=record["b"])
            pair_key = tuple(sorted((cobuy.product_a, cobuy.product_b)))
            if (
                cobuy.product_a == cobuy.product_b
                or cobuy.product_a not in self._products
                or cobuy.product_b not in self._products
                or pair_key in self._pair_keys
                or cobuy.cobuy_id in self._cobuys
            ):
                self.stats.cobuys_dropped += 1
                continue
            self._cobuys[cobuy.cobuy_id] = cobuy
            self._pair_keys.add(pair_key)
            self.stats.cobuys_total += 1
        return self.stats

    # -- access --------------------------------------------------------------

    def get_product(self, product_id: str) -> Product:
        try:
            return self._products[product_id]
        except KeyError:
            raise NotFound("product", product_id) from None

    def get_pair(self, cobuy_id: str) -> tuple[Product, Product]:
        """Both endpoint products of a co-buy record, in stored order."""
        try:
            cobuy = self._cobuys[cobuy_id]
        except KeyError:
            raise NotFound("cobuy", cobuy_id) from None
        return self._products[cobuy.product_a], self._products[cobuy.product_b]

    def products(self) -> list[Product]:
        return sorted(self._products.values(), key=lambda p: p.product_id)

    def cobuys(self) -> list[CoBuyRecord]:
        return sorted(self._cobuys.values(), key=lambda c: c.cobuy_id)

    def paired_product_ids(self) -> list[str]:
        """Ids of products appearing in at least one co-buy record."""
        ids = {pid for c in self._cobuys.values() for pid in (c.product_a, c.product_b)}
        return sorted(ids)

    def set_extracted_features(self, product_id: str, features: str) -> None:
        self.get_product(product_id).extracted_features = features

    # -- persistence (normalized form for multi-process CLI flows) -----------

    def save(self, directory: str | Path) -> None:
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        with open(directory / "products.jsonl", "w", encoding="utf-8") as fh:
            for product in self.products():
                fh.write(json.dumps(product.to_record(), ensure_ascii=False) + "\n")
        with open(directory / "cobuys.jsonl", "w", encoding="utf-8") as fh:
            for cobuy in self.cobuys():
                fh.write(json.dumps(cobuy.to_record(), ensure_ascii=False) + "\n")

    @classmethod
    def load(cls, directory: str | Path) -> "Catalog":
        """Reload a previously saved catalog; refs were validated at ingest."""
        catalog = cls()
        catalog.ingest_products(Path(directory) / "products.jsonl", resolve_images=False)
        catalog.ingest_cobuys(Path(directory) / "cobuys.jsonl")
        return catalog
