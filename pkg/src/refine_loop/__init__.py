"""Agentic multi-party dialogue summarization and its evaluation toolkit."""

from .core import (
    Dialogue,
    Dimension,
    Origin,
    RedactionRule,
    RedactionRuleSet,
    RefineLoopError,
    Summary,
    SummarySentence,
    Turn,
    anonymize,
    parse_dialogue,
    parse_summary,
    serialize_dialogue,
    serialize_summary,
    split_sentences,
)
from .pipeline import PipelineConfig, PipelineResult, run_monolithic, run_pipeline

__version__ = "0.1.0"

__all__ = [
    "Dialogue",
    "Dimension",
    "Origin",
    "PipelineConfig",
    "PipelineResult",
    "RedactionRule",
    "RedactionRuleSet",
    "RefineLoopError",
    "Summary",
    "SummarySentence",
    "Turn",
    "anonymize",
    "parse_dialogue",
    "parse_summary",
    "run_monolithic",
    "run_pipeline",
    "serialize_dialogue",
    "serialize_summary",
    "split_sentences",
    "__version__",
]
