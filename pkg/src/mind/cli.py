"""Single command-line entry point wiring all modules together.

Exit codes are a stable contract: 0 success, 2 usage error, 3 data error,
4 backend error. Errors go to stderr as one-line JSON objects. Config
precedence is flags > environment variables > config file > built-in
defaults; the effective configuration prints under ``--verbose``.
"""
from __future__ import annotations

import json
import os
import random
import sys
import time
from pathlib import Path

import click

from . import analytics
from .annotation import AnnotationStore, qualification_score
from .catalog import Catalog
from .errors import BackendError, DataError, MindError
from .gateway import (
    MODEL_URL_ENV,
    BackendConfig,
    InferenceClient,
    MockGateway,
    MockScenario,
)
from .kb import IntentionKB
from .pipeline import Checkpoint, PipelineRun, config_fingerprint, fixed_clock, utc_now_iso
from .prompts import GenParams, PromptForge
from .relations import RelationSet

_SCENARIOS = [s.value for s in MockScenario]


def _echo_json(data: object) -> None:
    click.echo(json.dumps(data, indent=2, ensure_ascii=False, sort_keys=True))


def _load_config_file(path: str | None) -> dict:
    if not path:
        return {}
    try:
        return json.loads(Path(path).read_text(encoding="utf-8"))
    except (OSError, ValueError) as exc:
        raise DataError(f"cannot read config file {path}: {exc}") from exc


class AppContext:
    def __init__(self, workspace: str, verbose: bool, dry_run: bool, config_file: str | None):
        self.workspace = Path(workspace)
        self.verbose = verbose
        self.dry_run = dry_run
        self.file_config = _load_config_file(config_file)

    def setting(self, key: str, flag_value, default=None, cast=None):
        """Resolution order: flags > MIND_<KEY> env var > config file > default."""
        value = flag_value
        if value is None:
            value = os.environ.get(f"MIND_{key.upper()}") or None
        if value is None:
            value = self.file_config.get(key)
        if value is None:
            return default
        return cast(value) if cast else value

    @property
    def catalog_dir(self) -> Path:
        return self.workspace / "catalog"

    @property
    def kb_dir(self) -> Path:
        return self.workspace / "kb"

    @property
    def checkpoints_dir(self) -> Path:
        return self.workspace / "checkpoints"

    @property
    def annotation_dir(self) -> Path:
        return self.workspace / "annotation"

    def log(self, message: str) -> None:
        if self.verbose:
            click.echo(message, err=True)


pass_ctx = click.make_pass_decorator(AppContext)


@click.group()
@click.option("--workspace", default="workspace", show_default=True,
              help="Directory holding catalog, checkpoints, KB, and annotation state.")
@click.option("--config", "config_file", default=None, help="JSON config file (lowest precedence).")
@click.option("--verbose", is_flag=True, help="Print the effective configuration and progress.")
@click.option("--dry-run", is_flag=True, help="Validate and report without writing anything.")
@click.pass_context
def cli(ctx: click.Context, workspace: str, config_file: str | None, verbose: bool, dry_run: bool):
    """Purchase-intention distillation pipeline."""
    ctx.obj = AppContext(workspace, verbose, dry_run, config_file)


# --- ingest --------------------------------------------------------------------


@cli.command()
@click.option("--products", "products_path", required=True, type=click.Path(exists=True))
@click.option("--cobuys", "cobuys_path", required=True, type=click.Path(exists=True))
@click.option("--skip-image-check", is_flag=True,
              help="Trust image refs without probing reachability.")
@pass_ctx
def ingest(app: AppContext, products_path: str, cobuys_path: str, skip_image_check: bool):
    """Validate and load the product catalog and co-buy records."""
    catalog = Catalog()
    catalog.ingest_products(products_path, resolve_images=not skip_image_check)
    catalog.ingest_cobuys(cobuys_path)
    if not app.dry_run:
        catalog.save(app.catalog_dir)
        app.log(f"catalog saved to {app.catalog_dir}")
    _echo_json(catalog.stats.as_dict())


# --- run -----------------------------------------------------------------------


def _parse_stages(raw: str) -> list[int]:
    try:
        stages = sorted({int(s) for s in raw.split(",") if s.strip()})
    except ValueError:
        raise click.UsageError(f"--stages must be a comma list of 1,2,3 (got {raw!r})")
    if not stages or any(s not in (1, 2, 3) for s in stages):
        raise click.UsageError(f"--stages must be a comma list of 1,2,3 (got {raw!r})")
    return stages


@cli.command()
@click.option("--stages", default=None, help="Comma list of stages to run [default: 1,2,3].")
@click.option("--relations", "relations_csv", default=None,
              help="'all' or a comma list of relation names [default: all].")
@click.option("--samples-per-pair", default=None, type=int,
              help="Intentions per pair and relation [default: 1].")
@click.option("--resume", "resume_run_id", default=None, help="Existing run id to resume.")
@click.option("--run-id", default=None, help="Explicit run id for a fresh run.")
@click.option("--strict-prefix", is_flag=True, help="Case-sensitive prefix matching, no leniency.")
@click.option("--mock", "mock_scenario", type=click.Choice(_SCENARIOS), default=None,
              help="Use the deterministic mock backend instead of a live endpoint.")
@click.option("--seed", type=int, default=None, help="Seed; required with --mock.")
@click.option("--max-workers", default=None, type=int, help="Worker pool size [default: 4].")
@click.option("--relation-config", default=None, type=click.Path(exists=True),
              help="Override relation-template TSV.")
@click.option("--template-dir", default=None, type=click.Path(exists=True),
              help="Override prompt template directory.")
@pass_ctx
def run(app: AppContext, stages: str | None, relations_csv: str | None,
        samples_per_pair: int | None, resume_run_id: str | None, run_id: str | None,
        strict_prefix: bool, mock_scenario: str | None, seed: int | None,
        max_workers: int | None, relation_config: str | None, template_dir: str | None):
    """Run the three-stage distillation flow over the ingested catalog."""
    if mock_scenario is None and not os.environ.get(MODEL_URL_ENV):
        raise click.UsageError(
            f"no backend: set {MODEL_URL_ENV} for a live endpoint or pass --mock SCENARIO"
        )
    if mock_scenario is not None and seed is None:
        raise click.UsageError("--seed is required with --mock (determinism contract)")

    relations_csv = app.setting("relations", relations_csv, default="all")
    samples_per_pair = app.setting("samples_per_pair", samples_per_pair, default=1, cast=int)
    max_workers = app.setting("max_workers", max_workers, default=4, cast=int)
    stage_list = _parse_stages(app.setting("stages", stages, default="1,2,3", cast=str))
    relation_set = (
        RelationSet.from_file(relation_config) if relation_config else RelationSet.default()
    )
    if relations_csv.strip().lower() == "all":
        relations = list(relation_set)
    else:
        relations = relation_set.subset([r.strip() for r in relations_csv.split(",") if r.strip()])

    if not app.catalog_dir.exists():
        raise DataError(f"no ingested catalog at {app.catalog_dir}; run `mind ingest` first")
    catalog = Catalog.load(app.catalog_dir)

    gen_params = GenParams(seed=seed)
    forge = PromptForge(template_dir=template_dir, gen_params=gen_params)
    fingerprint = config_fingerprint(
        forge, relations, samples_per_pair, strict_prefix, gen_params,
        scenario=mock_scenario, seed=seed,
    )

    if mock_scenario is not None:
        gateway = MockGateway(MockScenario(mock_scenario))
        clock = fixed_clock()
        default_run_id = f"mock-{fingerprint[:12]}"
    else:
        gateway = InferenceClient(BackendConfig.from_env())
        clock = utc_now_iso
        default_run_id = f"run-{time.strftime('%Y%m%d-%H%M%S')}"
    effective_run_id = resume_run_id or run_id or default_run_id

    config_view = {
        "run_id": effective_run_id,
        "stages": stage_list,
        "relations": [r.name for r in relations],
        "samples_per_pair": samples_per_pair,
        "strict_prefix": strict_prefix,
        "mock": mock_scenario,
        "seed": seed,
        "fingerprint": fingerprint,
        "workspace": str(app.workspace),
    }
    app.log(f"effective config: {json.dumps(config_view, sort_keys=True)}")
    if app.dry_run:
        pairs = len(catalog.cobuys())
        config_view["planned_generation_items"] = pairs * len(relations) * samples_per_pair
        _echo_json(config_view)
        return

    checkpoint = Checkpoint.open(app.checkpoints_dir, effective_run_id, fingerprint)
    kb = IntentionKB(app.kb_dir)
    pipeline = PipelineRun(
        catalog=catalog, gateway=gateway, forge=forge, relations=relations,
        checkpoint=checkpoint, kb=kb, samples_per_pair=samples_per_pair,
        strict_prefix=strict_prefix, max_workers=max_workers, clock=clock,
    )
    result: dict = {"run_id": effective_run_id}
    if 1 in stage_list:
        result["products_annotated"] = pipeline.run_feature_stage()
    if 2 in stage_list:
        result["candidates"] = pipeline.run_generation_stage()
        failures = pipeline.generation_failures()
        if failures:
            result["generation_failures"] = failures
    if 3 in stage_list:
        counts = pipeline.run_filter_stage()
        result.update(
            accepted=counts.accepted, rejected=counts.rejected, unparseable=counts.unparseable
        )
    dead = checkpoint.dead_letters()
    if dead:
        result["dead_lettered"] = len(dead)
    _echo_json(result)


# --- kb commands ------------------------------------------------------------------


@cli.command()
@click.option("--format", "export_format", type=click.Choice(["instruct"]), default="instruct",
              show_default=True)
@click.option("--out", "out_path", required=True, type=click.Path())
@pass_ctx
def export(app: AppContext, export_format: str, out_path: str):
    """Write the accepted intentions as instruction-tuning JSONL."""
    kb = IntentionKB(app.kb_dir)
    if app.dry_run:
        _echo_json({"would_write": len(kb.query(accepted=True)), "out": out_path})
        return
    written = kb.export_instruction_tuning(out_path)
    _echo_json({"lines_written": written, "out": out_path})


@cli.command()
@click.option("--json", "as_json", is_flag=True, help="Machine-readable output.")
@pass_ctx
def stats(app: AppContext, as_json: bool):
    """Per-relation counts and filter-preserve rates."""
    data = IntentionKB(app.kb_dir).stats()
    if as_json:
        _echo_json(data)
        return
    click.echo(f"accepted: {data['total_accepted']}  rejected: {data['total_rejected']}")
    for name, entry in data["relations"].items():
        rate = "null" if entry["rfp_rate"] is None else f"{entry['rfp_rate']:.3f}"
        click.echo(f"  {name:<13} count={entry['count']:<6} rfp={rate}")


@cli.command()
@click.option("--relation", default=None)
@click.option("--product", "product_id", default=None)
@click.option("--contains", "text_substring", default=None)
@click.option("--rejected", "rejected_only", is_flag=True, help="Search the reject partition.")
@pass_ctx
def query(app: AppContext, relation: str | None, product_id: str | None,
          text_substring: str | None, rejected_only: bool):
    """List KB records matching all given filters."""
    kb = IntentionKB(app.kb_dir)
    records = kb.query(
        relation=relation, product_id=product_id, text_substring=text_substring,
        accepted=False if rejected_only else True,
    )
    for record in records:
        click.echo(json.dumps({
            "record_id": record.record_id,
            "relation": record.relation,
            "products": [record.product_a_title, record.product_b_title],
            "intention": record.intention,
            "accept": record.accept,
        }, ensure_ascii=False))
    app.log(f"{len(records)} records")


# --- analytics ---------------------------------------------------------------------


@cli.group()
def analyze():
    """Diversity, robustness, typicality, and filter-rate analyses."""


@analyze.command()
@click.option("--taxonomy", "taxonomy_path", required=True, type=click.Path(exists=True))
@click.option("--sample", "sample_size", default=30000, show_default=True, type=int)
@click.option("--seed", default=0, show_default=True, type=int)
@click.option("--top-k", default=25, show_default=True, type=int)
@pass_ctx
def diversity(app: AppContext, taxonomy_path: str, sample_size: int, seed: int, top_k: int):
    """Hypernym distribution over a sample of accepted intentions."""
    kb = IntentionKB(app.kb_dir)
    intentions = [r.intention for r in kb.query(accepted=True)]
    if sample_size < len(intentions):
        intentions = random.Random(seed).sample(intentions, sample_size)
    taxonomy = analytics.Taxonomy.from_file(taxonomy_path)
    ranked = analytics.hypernym_distribution(intentions, taxonomy, top_k=top_k)
    _echo_json({"sampled": len(intentions), "hypernyms": [[h, c] for h, c in ranked]})


@analyze.command()
@click.option("--pairs", "pairs_path", required=True, type=click.Path(exists=True),
              help="JSONL of {original, modified} intention pairs.")
@click.option("--embedder", "embedder_kind", type=click.Choice(["mock", "http"]), default="mock",
              show_default=True)
@click.option("--dim", default=64, show_default=True, type=int,
              help="Dimension for the mock embedder.")
@pass_ctx
def robustness(app: AppContext, pairs_path: str, embedder_kind: str, dim: int):
    """Cosine-similarity stability between original and modified intentions."""
    pairs = []
    for line in Path(pairs_path).read_text(encoding="utf-8").splitlines():
        if line.strip():
            data = json.loads(line)
            pairs.append((data["original"], data["modified"]))
    embedder = (
        analytics.HashedBagOfWordsEmbedder(dim=dim)
        if embedder_kind == "mock"
        else analytics.HttpEmbedder()
    )
    report = analytics.robustness_report(pairs, embedder)
    _echo_json(report.as_dict())


@analyze.command()
@pass_ctx
def typicality(app: AppContext):
    """Per-relation mean Likert typicality from the annotation store."""
    store = AnnotationStore(app.annotation_dir)
    _echo_json(store.typicality_by_relation())


@analyze.command()
@pass_ctx
def rfp(app: AppContext):
    """Relation-wise filter preserve rate over the KB partitions."""
    kb = IntentionKB(app.kb_dir)
    _echo_json(analytics.rfp_by_relation(kb))


# --- annotation --------------------------------------------------------------------


@cli.command("annotate-serve")
@click.option("--addr", default=None, help="host:port (default MIND_ANNOTATE_ADDR or 127.0.0.1:8700).")
@click.option("--sample-size", default=None, type=int,
              help="Create this many tasks from the KB if the store is empty.")
@click.option("--seed", default=0, show_default=True, type=int)
@click.option("--source", type=click.Choice(["accepted", "rejected"]), default="accepted",
              show_default=True)
@click.option("--console-dir", default=None, type=click.Path(),
              help="Static review-console bundle to serve at /.")
@pass_ctx
def annotate_serve(app: AppContext, addr: str | None, sample_size: int | None, seed: int,
                   source: str, console_dir: str | None):
    """Serve the annotation REST API (and optionally the review console)."""
    from .service import serve

    store = AnnotationStore(app.annotation_dir)
    if sample_size and not store.tasks():
        kb = IntentionKB(app.kb_dir)
        catalog = Catalog.load(app.catalog_dir) if app.catalog_dir.exists() else None
        created = store.create_tasks(sample_size, seed, kb, source=source, catalog=catalog)
        app.log(f"created {len(created)} tasks")
    if app.dry_run:
        _echo_json({"tasks_open": store.summary()["tasks_open"]})
        return
    serve(store, addr=addr, static_dir=console_dir)


@cli.command()
@click.option("--answers", "answers_path", required=True, type=click.Path(exists=True))
@click.option("--key", "key_path", required=True, type=click.Path(exists=True))
@pass_ctx
def qualify(app: AppContext, answers_path: str, key_path: str):
    """Score a rater's qualification answers against the gold key."""
    answers = [l.strip() for l in Path(answers_path).read_text(encoding="utf-8").splitlines() if l.strip()]
    key = [l.strip() for l in Path(key_path).read_text(encoding="utf-8").splitlines() if l.strip()]
    result = qualification_score(answers, key)
    _echo_json(result.as_dict())


# --- dispatch ----------------------------------------------------------------------


def _emit_error(kind: str, message: str) -> None:
    sys.stderr.write(json.dumps({"error": kind, "message": message}) + "\n")


def dispatch(argv: list[str]) -> int:
    """Run one CLI invocation; returns the process exit code."""
    try:
        cli.main(args=argv, standalone_mode=False)
        return 0
    except click.exceptions.Exit as exc:
        return exc.exit_code
    except click.UsageError as exc:
        _emit_error("UsageError", exc.format_message())
        return 2
    except click.ClickException as exc:
        _emit_error(type(exc).__name__, exc.format_message())
        return 2
    except BackendError as exc:
        _emit_error(type(exc).__name__, str(exc))
        return 4
    except (DataError, MindError) as exc:
        _emit_error(type(exc).__name__, str(exc))
        return 3


def main() -> None:
    sys.exit(dispatch(sys.argv[1:]))


if __name__ == "__main__":
    main()
