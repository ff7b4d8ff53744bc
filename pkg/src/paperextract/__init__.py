"""Schema-driven information extraction from TEI papers with LLM backends.

Pipeline: parse TEI XML into a document model, linearize and optionally
chunk it, assemble prompts against an extraction schema, complete them
through a pluggable backend (live, replay-from-cache, or mock), coerce the
JSON-ish responses into typed records, then align those records against
gold rows and report match/miss/hallucination metrics with error-taxonomy
breakdowns.
"""

from .align import (
    AlignmentOutcome,
    PairScore,
    align_corpus,
    field_agreement,
    gate,
    greedy_align,
    pair_score,
    values_agree,
)
from .backend import (
    BackendConfig,
    CompletionOutcome,
    CompletionRequest,
    LiveBackend,
    MockBackend,
    RawResponse,
    ReplayBackend,
    ResponseCache,
    run_extraction,
)
from .corpus import (
    Chunk,
    DocumentModel,
    GoldRecord,
    Section,
    TableBlock,
    chunk_text,
    linearize,
    load_gold,
    parse_tei,
)
from .evaluate import (
    ClassMetrics,
    ErrorAnnotation,
    MetricsReport,
    breakdowns,
    build_report,
    load_annotations,
    property_metrics,
    row_metrics,
)
from .postprocess import (
    ExtractedRecord,
    Provenance,
    merge_chunk_records,
    parse_lenient_json,
    strip_fences,
    to_records,
)
from .prompting import (
    Exemplar,
    PromptBundle,
    build_chunked_prompts,
    build_prompt,
    load_bundled_exemplar,
    render_exemplar,
)
from .schema import (
    MISSING,
    ExtractionSchema,
    FieldSpec,
    Number,
    Text,
    convert_unit,
    is_missing,
    load_bundled_schema,
    load_schema,
    normalize_value,
    render_schema,
)

__version__ = "0.1.0"

__all__ = [
    "AlignmentOutcome", "PairScore", "align_corpus", "field_agreement", "gate",
    "greedy_align", "pair_score", "values_agree",
    "BackendConfig", "CompletionOutcome", "CompletionRequest", "LiveBackend",
    "MockBackend", "RawResponse", "ReplayBackend", "ResponseCache", "run_extraction",
    "Chunk", "DocumentModel", "GoldRecord", "Section", "TableBlock",
    "chunk_text", "linearize", "load_gold", "parse_tei",
    "ClassMetrics", "ErrorAnnotation", "MetricsReport", "breakdowns",
    "build_report", "load_annotations", "property_metrics", "row_metrics",
    "ExtractedRecord", "Provenance", "merge_chunk_records", "parse_lenient_json",
    "strip_fences", "to_records",
    "Exemplar", "PromptBundle", "build_chunked_prompts", "build_prompt",
    "load_bundled_exemplar", "render_exemplar",
    "MISSING", "ExtractionSchema", "FieldSpec", "Number", "Text", "convert_unit",
    "is_missing", "load_bundled_schema", "load_schema", "normalize_value",
    "render_schema",
    "__version__",
]
