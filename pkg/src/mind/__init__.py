"""Multimodal purchase-intention distillation pipeline.

Turns a product catalog plus co-buy records into a filtered,
relation-grounded purchase-intention knowledge base by driving a
vision-language inference endpoint through three prompt stages, then
evaluates that knowledge base with annotation and analytics tooling.
"""

__version__ = "0.1.0"
