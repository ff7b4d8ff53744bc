"""Prompt assembly: role paragraph, instruction templates, exemplars, chunking.

Templates are plain text with {text} and {schema} slots (a {fields} slot for
the chunked variant). Slots are substituted with str.replace, never
str.format, because document text routinely contains braces.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from importlib.resources import files
from typing import NamedTuple

from .corpus import DocumentModel, chunk_text, document_from_dict, linearize
from .errors import ConfigurationError, ValidationError
from .postprocess import Provenance, to_records
from .schema import MISSING, ExtractionSchema, Number, Text, is_missing, render_schema

ZERO_SHOT = "zero_shot"
ONE_SHOT = "one_shot"
CHUNKED = "chunked"
MODES = (ZERO_SHOT, ONE_SHOT, CHUNKED)

_TEMPLATES = files("paperextract") / "data" / "templates"
_EXEMPLARS = files("paperextract") / "data" / "exemplars"

GENERIC_INSTRUCTION = (
    "Extract all information relating to every {name} entry from the following text: "
    "{text} using the following schema: {schema}. Return a list of schemas in JSON "
    "format for every unique entry.\n\n"
    "Restriction: Do not extract any tokens if an entry does not have a property "
    "mentioned in the schema. If a property is not available then return "
    "'No information'. Do not violate the schema."
)


class Exemplar(NamedTuple):
    input_text: str
    expected_output: str


@dataclass(frozen=True)
class PromptBundle:
    role_text: str
    instruction_text: str
    instruction_template: str
    schema_text: str
    target_text: str
    mode: str
    doc_id: str
    exemplar: Exemplar | None = None
    chunk_index: int | None = None

    def __post_init__(self) -> None:
        if self.mode not in MODES:
            raise ConfigurationError(f"unknown prompt mode {self.mode!r}")
        if (self.exemplar is not None) != (self.mode == ONE_SHOT):
            raise ConfigurationError("an exemplar is supplied iff mode is one_shot")
        if (self.chunk_index is not None) != (self.mode == CHUNKED):
            raise ConfigurationError("chunk_index is set iff mode is chunked")

    def full_text(self) -> str:
        """Assemble the complete prompt. Pure and deterministic."""
        if self.mode == ONE_SHOT:
            assert self.exemplar is not None
            exemplar_instruction = _fill(
                self.instruction_template, self.exemplar.input_text, self.schema_text
            )
            parts = [
                self.role_text,
                exemplar_instruction,
                self.exemplar.expected_output,
                self.instruction_text,
            ]
        else:
            parts = [self.role_text, self.instruction_text]
        return "\n\n".join(parts)


def _read_template(name: str) -> str:
    return (_TEMPLATES / name).read_text(encoding="utf-8").rstrip("\n")


def load_role_text() -> str:
    return _read_template("role.txt")


def load_instruction_template(schema_name: str) -> str:
    """Dataset-specific template when bundled, generic fallback otherwise."""
    resource = _TEMPLATES / f"{schema_name}_instruction.txt"
    try:
        return resource.read_text(encoding="utf-8").rstrip("\n")
    except (FileNotFoundError, OSError):
        return GENERIC_INSTRUCTION.replace("{name}", schema_name)


def load_chunked_template() -> str:
    return _read_template("chunked_instruction.txt")


def _fill(template: str, text: str, schema_text: str) -> str:
    # schema first: document text may contain a literal "{schema}", the
    # rendered schema never contains "{text}"
    return template.replace("{schema}", schema_text).replace("{text}", text)


def build_prompt(
    schema: ExtractionSchema,
    doc: DocumentModel,
    mode: str,
    exemplar: Exemplar | tuple[str, str] | None = None,
    instruction_template: str | None = None,
) -> PromptBundle:
    """Assemble the zero-shot or one-shot prompt for one document.

    One-shot lays out: role, instructions around the exemplar input, the
    exemplar's expected JSON, then the instructions again with the target
    document. Exemplar presence must match the mode.
    """
    if mode not in (ZERO_SHOT, ONE_SHOT):
        raise ConfigurationError(f"build_prompt handles zero_shot/one_shot, not {mode!r}")
    if exemplar is not None and not isinstance(exemplar, Exemplar):
        exemplar = Exemplar(*exemplar)
    template = instruction_template or load_instruction_template(schema.name)
    schema_text = render_schema(schema)
    target_text = linearize(doc)
    return PromptBundle(
        role_text=load_role_text(),
        instruction_text=_fill(template, target_text, schema_text),
        instruction_template=template,
        schema_text=schema_text,
        target_text=target_text,
        mode=mode,
        doc_id=doc.doc_id,
        exemplar=exemplar,
    )


def build_chunked_prompts(
    schema: ExtractionSchema,
    doc: DocumentModel,
    chunk_size: int = 2000,
    overlap_fraction: float = 0.01,
) -> list[PromptBundle]:
    """One bundle per chunk; the schema appears as name/description lines."""
    role = load_role_text()
    template = load_chunked_template()
    fields_block = "\n".join(f"- {f.name}: {f.description}" for f in schema.fields)
    chunks = chunk_text(linearize(doc), chunk_size, overlap_fraction, doc_id=doc.doc_id)
    bundles = []
    for chunk in chunks:
        instruction = template.replace("{fields}", fields_block).replace("{text}", chunk.text)
        bundles.append(
            PromptBundle(
                role_text=role,
                instruction_text=instruction,
                instruction_template=template,
                schema_text=fields_block,
                target_text=chunk.text,
                mode=CHUNKED,
                doc_id=doc.doc_id,
                chunk_index=chunk.index,
            )
        )
    return bundles


def _cell_to_prompt_value(cell, missing_token: str):
    if is_missing(cell):
        return missing_token
    if isinstance(cell, Number):
        return cell.value
    if isinstance(cell, Text):
        return cell.value
    raise TypeError(f"not a cell value: {cell!r}")


def render_exemplar(
    schema: ExtractionSchema,
    exemplar_doc: DocumentModel,
    exemplar_records: list,
) -> Exemplar:
    """Linearize the exemplar document and render its records as the JSON
    array the model is expected to produce. Records (anything with .cells,
    extracted or gold) must not carry fields outside the schema."""
    known = set(schema.field_map)
    for i, rec in enumerate(exemplar_records):
        unknown = sorted(set(rec.cells) - known)
        if unknown:
            raise ValidationError(f"exemplar record {i}: unknown fields {unknown}")
    payload = [
        {
            f.name: _cell_to_prompt_value(rec.cells.get(f.name, MISSING), schema.missing_token)
            for f in schema.fields
        }
        for rec in exemplar_records
    ]
    return Exemplar(
        input_text=linearize(exemplar_doc),
        expected_output=json.dumps(payload, indent=4, ensure_ascii=False),
    )


def load_bundled_exemplar(name: str, schema: ExtractionSchema) -> Exemplar:
    """Load a packaged exemplar ('mpea', 'diffusion') and render it."""
    try:
        doc_text = (_EXEMPLARS / f"{name}_doc.json").read_text(encoding="utf-8")
        records_text = (_EXEMPLARS / f"{name}_records.json").read_text(encoding="utf-8")
    except (FileNotFoundError, OSError) as exc:
        raise ConfigurationError(f"no bundled exemplar named {name!r}") from exc
    doc = document_from_dict(json.loads(doc_text))
    records, warnings = to_records(
        json.loads(records_text), schema, doc.doc_id, Provenance("exemplar", ONE_SHOT)
    )
    if warnings:
        raise ValidationError(f"bundled exemplar {name!r} has problems: {warnings}")
    return render_exemplar(schema, doc, records)
