"""Render the three pipeline stage prompts into multimodal request payloads.

Templates are Jinja2 files shipped with the package (``mind/templates/``)
and overridable via the ``MIND_PROMPT_DIR`` environment variable or an
explicit directory argument. Rendering is pure: identical inputs yield
byte-identical text.
"""
from __future__ import annotations

import enum
import os
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import jinja2

from .catalog import Product
from .errors import EmptyIntention, FeaturesMissing, MissingImage, PromptError
from .relations import Relation

PROMPT_DIR_ENV = "MIND_PROMPT_DIR"

# Lead-in phrase the generation prompt instructs the model to start with;
# the intention parser strips it and the mock backend anchors on it.
INTENTION_LEAD_IN = "the potential co-buy intention could be"

_PLACEHOLDER_SIGILS = ("{{", "{%", "}}", "%}")


class Stage(enum.Enum):
    FEATURE_EXTRACTION = "FeatureExtraction"
    INTENTION_GENERATION = "IntentionGeneration"
    ROLE_AWARE_FILTER = "RoleAwareFilter"


_STAGE_IMAGE_ARITY = {
    Stage.FEATURE_EXTRACTION: 1,
    Stage.INTENTION_GENERATION: 2,
    Stage.ROLE_AWARE_FILTER: 2,
}

_STAGE_TEMPLATE_FILES = {
    Stage.FEATURE_EXTRACTION: "feature_extraction.txt",
    Stage.INTENTION_GENERATION: "intention_generation.txt",
    Stage.ROLE_AWARE_FILTER: "role_aware_filter.txt",
}


@dataclass(frozen=True)
class GenParams:
    max_tokens: int = 256
    temperature: float = 0.2
    seed: int | None = None

    def as_dict(self) -> dict:
        return {"max_tokens": self.max_tokens, "temperature": self.temperature, "seed": self.seed}


@dataclass(frozen=True)
class PromptBundle:
    """A rendered instruction plus the image refs it applies to."""

    stage: Stage
    text: str
    images: tuple[str, ...]
    gen_params: GenParams = field(default_factory=GenParams)

    def __post_init__(self) -> None:
        expected = _STAGE_IMAGE_ARITY[self.stage]
        if len(self.images) != expected:
            raise PromptError(
                f"{self.stage.value} requires {expected} image(s), got {len(self.images)}"
            )
        for sigil in _PLACEHOLDER_SIGILS:
            if sigil in self.text:
                raise PromptError(f"unexpanded placeholder marker {sigil!r} in rendered text")


def _first_image(product: Product) -> str:
    # Deterministic selection policy: first stored ref.
    if not product.image_refs:
        raise MissingImage(f"product {product.product_id} has no image refs")
    return product.image_refs[0]


class PromptForge:
    """Loads the stage templates once and renders bundles from entities."""

    def __init__(self, template_dir: str | Path | None = None, gen_params: GenParams | None = None):
        self.gen_params = gen_params or GenParams()
        self._sources: dict[Stage, str] = {}
        override = Path(template_dir) if template_dir else None
        if override is None and os.environ.get(PROMPT_DIR_ENV):
            override = Path(os.environ[PROMPT_DIR_ENV])
        for stage, filename in _STAGE_TEMPLATE_FILES.items():
            if override is not None and (override / filename).exists():
                source = (override / filename).read_text(encoding="utf-8")
            else:
                source = (resources.files("mind") / "templates" / filename).read_text(
                    encoding="utf-8"
                )
            self._sources[stage] = source.rstrip("\n")
        env = jinja2.Environment(undefined=jinja2.StrictUndefined, keep_trailing_newline=False)
        self._templates = {stage: env.from_string(src) for stage, src in self._sources.items()}

    def template_sources(self) -> dict[str, str]:
        """Raw template text per stage, for config fingerprinting."""
        return {stage.value: src for stage, src in self._sources.items()}

    def _render(self, stage: Stage, **context: str) -> str:
        try:
            text = self._templates[stage].render(**context)
        except jinja2.UndefinedError as exc:
            raise PromptError(f"{stage.value}: {exc}") from exc
        return " ".join(text.split())

    def render_feature_prompt(self, product: Product) -> PromptBundle:
        """Stage 1: one image, title plus retailer details."""
        image = _first_image(product)
        text = self._render(
            Stage.FEATURE_EXTRACTION,
            title=product.title,
            details=product.details_text(),
        )
        return PromptBundle(
            stage=Stage.FEATURE_EXTRACTION, text=text, images=(image,), gen_params=self.gen_params
        )

    def render_intention_prompt(
        self, pair: tuple[Product, Product], relation: Relation
    ) -> PromptBundle:
        """Stage 2: both images, both feature texts, the relation prefix,
        and the 120-word limit instruction."""
        product_a, product_b = pair
        for product in pair:
            if not product.extracted_features:
                raise FeaturesMissing(
                    f"product {product.product_id} has no extracted features yet"
                )
        text = self._render(
            Stage.INTENTION_GENERATION,
            title_a=product_a.title,
            title_b=product_b.title,
            features_a=product_a.extracted_features,
            features_b=product_b.extracted_features,
            prefix=relation.template,
        )
        return PromptBundle(
            stage=Stage.INTENTION_GENERATION,
            text=text,
            images=(_first_image(product_a), _first_image(product_b)),
            gen_params=self.gen_params,
        )

    def render_filter_prompt(
        self, pair: tuple[Product, Product], relation: Relation, intention: str
    ) -> PromptBundle:
        """Stage 3: customer-role instruction around the candidate intention,
        demanding a "Yes, ... or No, ..." answer."""
        if not intention.strip():
            raise EmptyIntention("cannot render a filter prompt for an empty intention")
        product_a, product_b = pair
        text = self._render(
            Stage.ROLE_AWARE_FILTER,
            title_a=product_a.title,
            title_b=product_b.title,
            features_a=product_a.extracted_features or product_a.details_text() or product_a.title,
            features_b=product_b.extracted_features or product_b.details_text() or product_b.title,
            prefix=relation.template,
            intention=intention.strip(),
        )
        return PromptBundle(
            stage=Stage.ROLE_AWARE_FILTER,
            text=text,
            images=(_first_image(product_a), _first_image(product_b)),
            gen_params=self.gen_params,
        )
