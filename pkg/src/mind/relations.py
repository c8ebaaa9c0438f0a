"""The closed set of 20 commonsense relations that ground intentions.

Each relation carries a text template: the fixed phrase a generated
intention must begin with. The Open relation has an empty template
(unconstrained continuation). Templates ship as a versioned TSV config
(`templates/relations.tsv`) and can be overridden per run; the relation
*names* are a closed set and cannot change.
"""
from __future__ import annotations

from dataclasses import dataclass
from importlib import resources
from pathlib import Path

from .errors import DataError

RELATION_NAMES: tuple[str, ...] = (
    "Effect",
    "MannerOf",
    "isA",
    "Other",
    "MadeOf",
    "SimilarTo",
    "UsedFor",
    "Can",
    "CauseDesire",
    "RelatedTo",
    "PartOf",
    "Open",
    "CreatedBy",
    "DeriveFrom",
    "DefinedAs",
    "PropertyOf",
    "CapableOf",
    "Cause",
    "SymbolOf",
    "DistinctFrom",
)

_NAME_SET = frozenset(RELATION_NAMES)


@dataclass(frozen=True)
class Relation:
    """One commonsense relation with its intention-prefix template."""

    name: str
    template: str

    def __post_init__(self) -> None:
        if self.name not in _NAME_SET:
            raise DataError(f"unknown relation name: {self.name!r}")
        if self.name == "Open":
            if self.template:
                raise DataError("Open relation must have an empty template")
        elif not self.template.strip():
            raise DataError(f"relation {self.name} requires a nonempty template")

    @property
    def is_open(self) -> bool:
        return self.name == "Open"


class RelationSet:
    """All 20 relations, loadable from a `name<TAB>template` config file."""

    def __init__(self, relations: list[Relation]):
        names = [r.name for r in relations]
        if len(set(names)) != len(names):
            raise DataError("duplicate relation names in config")
        missing = _NAME_SET - set(names)
        extra = set(names) - _NAME_SET
        if missing or extra:
            raise DataError(
                f"relation config must cover exactly the closed set; "
                f"missing={sorted(missing)} extra={sorted(extra)}"
            )
        # Preserve canonical ordering regardless of file order.
        by_name = {r.name: r for r in relations}
        self._ordered = [by_name[n] for n in RELATION_NAMES]
        self._by_name = by_name

    def __iter__(self):
        return iter(self._ordered)

    def __len__(self) -> int:
        return len(self._ordered)

    def get(self, name: str) -> Relation:
        try:
            return self._by_name[name]
        except KeyError:
            raise DataError(f"unknown relation name: {name!r}") from None

    def names(self) -> list[str]:
        return [r.name for r in self._ordered]

    def subset(self, names: list[str]) -> list[Relation]:
        return [self.get(n) for n in names]

    def index(self, name: str) -> int:
        """Canonical position, used for deterministic work-item ordering."""
        return RELATION_NAMES.index(name)

    def as_mapping(self) -> dict[str, str]:
        return {r.name: r.template for r in self._ordered}

    @classmethod
    def from_file(cls, path: str | Path) -> "RelationSet":
        relations = []
        for line_no, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
            if not line.strip() or line.startswith("#"):
                continue
            if "\t" not in line:
                raise DataError(f"{path}:{line_no}: expected name<TAB>template")
            name, template = line.split("\t", 1)
            relations.append(Relation(name=name.strip(), template=template.strip()))
        return cls(relations)

    @classmethod
    def default(cls) -> "RelationSet":
        ref = resources.files("mind") / "templates" / "relations.tsv"
        with resources.as_file(ref) as path:
            return cls.from_file(path)


def relation_template(relation: Relation) -> str:
    """The fixed phrase intentions under this relation must start with."""
    return relation.template
