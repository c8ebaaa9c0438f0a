import json
from pathlib import Path

import pytest

from mind.catalog import Catalog
from mind.gateway import MockGateway, MockScenario
from mind.kb import IntentionKB
from mind.pipeline import Checkpoint, PipelineRun, config_fingerprint, fixed_clock
from mind.prompts import GenParams, PromptForge
from mind.relations import RelationSet

DATA_DIR = Path(__file__).parent / "data"


@pytest.fixture(scope="session")
def relation_set() -> RelationSet:
    return RelationSet.default()


@pytest.fixture()
def fixture_catalog() -> Catalog:
    catalog = Catalog()
    catalog.ingest_products(DATA_DIR / "products.jsonl", resolve_images=False)
    catalog.ingest_cobuys(DATA_DIR / "cobuys.jsonl")
    return catalog


def load_fixture_catalog() -> Catalog:
    catalog = Catalog()
    catalog.ingest_products(DATA_DIR / "products.jsonl", resolve_images=False)
    catalog.ingest_cobuys(DATA_DIR / "cobuys.jsonl")
    return catalog


def build_mock_run(
    workdir: Path,
    catalog: Catalog,
    relations,
    scenario: MockScenario = MockScenario.WELL_FORMED,
    seed: int = 1,
    samples_per_pair: int = 1,
    strict_prefix: bool = False,
    gateway=None,
    run_id: str | None = None,
) -> PipelineRun:
    """A pipeline wired exactly the way the CLI wires mock runs."""
    relations = list(relations)
    forge = PromptForge(gen_params=GenParams(seed=seed))
    fingerprint = config_fingerprint(
        forge, relations, samples_per_pair, strict_prefix, forge.gen_params,
        scenario=scenario.value, seed=seed,
    )
    checkpoint = Checkpoint.open(
        workdir / "checkpoints", run_id or f"mock-{fingerprint[:12]}", fingerprint
    )
    return PipelineRun(
        catalog=catalog,
        gateway=gateway or MockGateway(scenario),
        forge=forge,
        relations=relations,
        checkpoint=checkpoint,
        kb=IntentionKB(workdir / "kb"),
        samples_per_pair=samples_per_pair,
        strict_prefix=strict_prefix,
        clock=fixed_clock(),
    )


def read_jsonl(path: Path) -> list[dict]:
    if not path.exists():
        return []
    return [json.loads(line) for line in path.read_text(encoding="utf-8").splitlines() if line.strip()]


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    """One pass/fail line per acceptance criterion at the end of the run."""
    lines = {}
    for outcome in ("passed", "failed", "error"):
        for report in terminalreporter.stats.get(outcome, []):
            nodeid = getattr(report, "nodeid", "")
            if "test_acceptance.py" in nodeid and getattr(report, "when", "call") == "call":
                lines[nodeid.split("::")[-1]] = "PASS" if outcome == "passed" else "FAIL"
    if lines:
        terminalreporter.section("acceptance criteria")
        for name in sorted(lines):
            terminalreporter.write_line(f"{name}: {lines[name]}")
