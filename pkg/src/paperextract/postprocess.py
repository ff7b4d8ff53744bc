"""Turn raw model output into typed extraction records.

Model responses are markdown-fenced JSON more often than not, and the JSON
itself tends to carry comments, trailing commas, and single-quoted strings.
The pipeline here is: strip the fence, clean the payload leniently, parse,
then coerce each object into schema-typed cells.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

from .align import values_agree
from .errors import CoercionError, LenientJsonError, StructureError
from .schema import (
    MISSING,
    CellValue,
    ExtractionSchema,
    Number,
    Text,
    is_missing,
    normalize_value,
)


@dataclass(frozen=True)
class Provenance:
    run_id: str
    mode: str
    chunk_index: int | None = None


@dataclass(frozen=True)
class ExtractedRecord:
    record_id: str
    doc_id: str
    cells: dict[str, CellValue]
    provenance: Provenance


def _fence_line(line: str) -> bool:
    return line.lstrip().startswith("```")


def strip_fences(text: str) -> str:
    """Return the content of the first complete ``` fence, else the input.

    The opening line (with any language tag) and the closing line are
    dropped. Without a complete fence the text passes through unchanged,
    so the function is idempotent.
    """
    lines = text.split("\n")
    open_idx = None
    for i, line in enumerate(lines):
        if _fence_line(line):
            open_idx = i
            break
    if open_idx is None:
        return text
    for j in range(open_idx + 1, len(lines)):
        if _fence_line(lines[j]):
            return "\n".join(lines[open_idx + 1 : j])
    return text


def count_fenced_blocks(text: str) -> int:
    """Number of complete ``` fenced blocks (for multi-block warnings)."""
    fence_lines = sum(1 for line in text.split("\n") if _fence_line(line))
    return fence_lines // 2


def scan_bare_json(text: str) -> str:
    """Extract the first balanced top-level JSON array or object.

    Fallback for prose-wrapped unfenced payloads. String literals and
    escapes are respected while matching brackets. If no balanced
    payload is found the input is returned unchanged.
    """
    openers = {"[": "]", "{": "}"}
    start = None
    for i, ch in enumerate(text):
        if ch in openers:
            start = i
            break
    if start is None:
        return text
    depth = 0
    in_string = False
    escaped = False
    for i in range(start, len(text)):
        ch = text[i]
        if in_string:
            if escaped:
                escaped = False
            elif ch == "\\":
                escaped = True
            elif ch == '"':
                in_string = False
            continue
        if ch == '"':
            in_string = True
        elif ch in "[{":
            depth += 1
        elif ch in "]}":
            depth -= 1
            if depth == 0:
                return text[start : i + 1]
    return text


def _scan_double_quoted(text: str, i: int) -> int:
    """Index one past the closing quote of the string starting at text[i]."""
    j = i + 1
    n = len(text)
    while j < n:
        ch = text[j]
        if ch == "\\":
            j += 2
            continue
        if ch == '"':
            return j + 1
        j += 1
    return n


def _convert_single_quoted(text: str, i: int) -> tuple[str, int] | None:
    """Convert the single-quoted string at text[i] to a double-quoted one.

    Returns (converted, end_index) or None when the quote never closes.
    """
    j = i + 1
    n = len(text)
    buf: list[str] = []
    while j < n:
        ch = text[j]
        if ch == "\\" and j + 1 < n:
            nxt = text[j + 1]
            if nxt == "'":
                buf.append("'")
            else:
                buf.append(ch)
                buf.append(nxt)
            j += 2
            continue
        if ch == "'":
            return '"' + "".join(buf) + '"', j + 1
        if ch == '"':
            buf.append('\\"')
        else:
            buf.append(ch)
        j += 1
    return None


def _clean_lenient(text: str) -> str:
    """Phase 1: blank comments, convert single-quoted strings; keep strings intact.

    Comments become runs of spaces of the same length so parse-error
    offsets still point into the right neighbourhood of the original.
    """
    out: list[str] = []
    i = 0
    n = len(text)
    while i < n:
        ch = text[i]
        if ch == '"':
            end = _scan_double_quoted(text, i)
            out.append(text[i:end])
            i = end
        elif ch == "'":
            converted = _convert_single_quoted(text, i)
            if converted is None:
                out.append(ch)
                i += 1
            else:
                out.append(converted[0])
                i = converted[1]
        elif ch == "/" and i + 1 < n and text[i + 1] == "/":
            start = i
            while i < n and text[i] != "\n":
                i += 1
            out.append(" " * (i - start))
        elif ch == "/" and i + 1 < n and text[i + 1] == "*":
            close = text.find("*/", i + 2)
            end = n if close == -1 else close + 2
            out.append(" " * (end - i))
            i = end
        else:
            out.append(ch)
            i += 1
    return "".join(out)


def _drop_trailing_commas(text: str) -> str:
    """Phase 2: remove commas directly preceding a closing bracket."""
    out: list[str] = []
    i = 0
    n = len(text)
    while i < n:
        ch = text[i]
        if ch == '"':
            end = _scan_double_quoted(text, i)
            out.append(text[i:end])
            i = end
        elif ch == ",":
            j = i + 1
            while j < n and text[j] in " \t\r\n":
                j += 1
            if j < n and text[j] in "]}":
                i += 1  # drop the comma, keep the whitespace run
            else:
                out.append(ch)
                i += 1
        else:
            out.append(ch)
            i += 1
    return "".join(out)


def parse_lenient_json(text: str):
    """Parse JSON that may carry // and /* */ comments, trailing commas,
    and single-quoted strings. Comment markers inside string literals are
    left alone. Raises LenientJsonError (with offset) when the cleaned
    payload still is not JSON."""
    cleaned = _drop_trailing_commas(_clean_lenient(text))
    try:
        return json.loads(cleaned)
    except json.JSONDecodeError as exc:
        raise LenientJsonError(f"not JSON after lenient cleaning: {exc.msg}", exc.pos) from exc


def to_records(
    value: object,
    schema: ExtractionSchema,
    doc_id: str,
    provenance: Provenance,
    *,
    coerce_invalid_to_missing: bool = False,
) -> tuple[list[ExtractedRecord], list[str]]:
    """Coerce parsed JSON into extraction records plus warnings.

    Accepts an array of objects or a single object (treated as a
    one-element array). Unknown keys are dropped with a warning. Every
    schema field is populated, Missing when absent. Coercion failures
    raise unless coerce_invalid_to_missing downgrades them to Missing
    with a warning.
    """
    if isinstance(value, dict):
        objects = [value]
    elif isinstance(value, list):
        bad = [i for i, v in enumerate(value) if not isinstance(v, dict)]
        if bad:
            raise StructureError(f"array elements at {bad} are not objects")
        objects = value
    else:
        raise StructureError(f"top-level JSON must be an object or array, got {type(value).__name__}")

    chunk_part = f"c{provenance.chunk_index}-" if provenance.chunk_index is not None else ""
    records: list[ExtractedRecord] = []
    warnings: list[str] = []
    for index, obj in enumerate(objects):
        cells: dict[str, CellValue] = {f.name: MISSING for f in schema.fields}
        for key, raw in obj.items():
            spec = schema.field_map.get(key)
            if spec is None:
                warnings.append(f"{doc_id}: unknown field {key!r} dropped")
                continue
            try:
                cells[key] = normalize_value(spec, raw, missing_token=schema.missing_token)
            except CoercionError as exc:
                if coerce_invalid_to_missing:
                    cells[key] = MISSING
                    warnings.append(f"{doc_id}: {exc}; treated as missing")
                else:
                    raise
        records.append(
            ExtractedRecord(
                record_id=f"{doc_id}#{chunk_part}r{index}",
                doc_id=doc_id,
                cells=cells,
                provenance=provenance,
            )
        )
    return records, warnings


def merge_chunk_records(
    per_chunk: list[list[ExtractedRecord]],
    schema: ExtractionSchema,
) -> tuple[list[ExtractedRecord], list[str]]:
    """Merge records describing the same entity across overlapping chunks.

    Two records merge when they come from different chunks and agree,
    non-Missing on both sides, on every required match field. Merging
    fills Missing cells from the newer record; a conflicting non-Missing
    value keeps the earlier chunk's value and emits a warning. Records
    within one chunk never merge. Idempotent: merged required cells never
    change, so re-merging finds the same groups.
    """

    class _Entry:
        __slots__ = ("base", "cells", "chunks")

        def __init__(self, rec: ExtractedRecord):
            self.base = rec
            self.cells = dict(rec.cells)
            self.chunks = {rec.provenance.chunk_index}

    def required_agree(entry: _Entry, rec: ExtractedRecord) -> bool:
        for name in schema.required_match_fields:
            a = entry.cells.get(name, MISSING)
            b = rec.cells.get(name, MISSING)
            if is_missing(a) or is_missing(b):
                return False
            if not values_agree(schema.field_map[name], a, b):
                return False
        return True

    entries: list[_Entry] = []
    warnings: list[str] = []
    for chunk_records in per_chunk:
        for rec in chunk_records:
            target = None
            for entry in entries:
                if entry.base.doc_id != rec.doc_id:
                    continue
                if rec.provenance.chunk_index in entry.chunks:
                    continue
                if required_agree(entry, rec):
                    target = entry
                    break
            if target is None:
                entries.append(_Entry(rec))
                continue
            target.chunks.add(rec.provenance.chunk_index)
            for name, incoming in rec.cells.items():
                if is_missing(incoming):
                    continue
                current = target.cells.get(name, MISSING)
                if is_missing(current):
                    target.cells[name] = incoming
                elif not values_agree(schema.field_map[name], current, incoming):
                    warnings.append(
                        f"{rec.doc_id}: chunk {rec.provenance.chunk_index} conflicts on "
                        f"{name!r} ({current!r} vs {incoming!r}); kept the earlier value"
                    )
    merged = [
        ExtractedRecord(
            record_id=e.base.record_id,
            doc_id=e.base.doc_id,
            cells=e.cells,
            provenance=e.base.provenance,
        )
        for e in entries
    ]
    return merged, warnings


def cell_to_json(cell: CellValue):
    if is_missing(cell):
        return None
    if isinstance(cell, Number):
        return {"value": cell.value, "unit": cell.unit}
    if isinstance(cell, Text):
        return cell.value
    raise TypeError(f"not a cell value: {cell!r}")


def cell_from_json(payload) -> CellValue:
    if payload is None:
        return MISSING
    if isinstance(payload, str):
        return Text(payload)
    if isinstance(payload, dict):
        return Number(float(payload["value"]), payload.get("unit"))
    raise TypeError(f"bad serialized cell: {payload!r}")


def record_to_dict(record: ExtractedRecord) -> dict:
    return {
        "record_id": record.record_id,
        "doc_id": record.doc_id,
        "cells": {name: cell_to_json(cell) for name, cell in record.cells.items()},
        "provenance": {
            "run_id": record.provenance.run_id,
            "mode": record.provenance.mode,
            "chunk_index": record.provenance.chunk_index,
        },
    }


def record_from_dict(data: dict) -> ExtractedRecord:
    prov = data["provenance"]
    return ExtractedRecord(
        record_id=data["record_id"],
        doc_id=data["doc_id"],
        cells={name: cell_from_json(v) for name, v in data["cells"].items()},
        provenance=Provenance(prov["run_id"], prov["mode"], prov.get("chunk_index")),
    )


def dump_records_jsonl(records: list[ExtractedRecord]) -> str:
    lines = [json.dumps(record_to_dict(r), ensure_ascii=False, sort_keys=True) for r in records]
    return "".join(line + "\n" for line in lines)


def load_records_jsonl(text: str) -> list[ExtractedRecord]:
    records = []
    for line in text.splitlines():
        if line.strip():
            records.append(record_from_dict(json.loads(line)))
    return records
