"""Document ingestion: TEI XML to a document model, linearization, chunking.

Also loads gold CSV datasets keyed by DOI.
"""

from __future__ import annotations

import csv
import io
import math
import re
import xml.etree.ElementTree as ET
from dataclasses import dataclass

from .errors import DocumentIdentityError, TeiParseError, ValidationError
from .schema import MISSING, CellValue, ExtractionSchema, normalize_value
from .util import collapse_ws


@dataclass(frozen=True)
class Section:
    heading: str
    paragraphs: tuple[str, ...]
    # index into the document's block flow, shared with tables
    position: int


@dataclass(frozen=True)
class TableBlock:
    caption: str
    rows: tuple[tuple[str, ...], ...]
    position: int


@dataclass(frozen=True)
class DocumentModel:
    doc_id: str
    title: str
    abstract: str
    sections: tuple[Section, ...]
    tables: tuple[TableBlock, ...]
    year: int | None = None


@dataclass(frozen=True)
class Chunk:
    doc_id: str
    index: int
    text: str
    token_span: tuple[int, int]


@dataclass(frozen=True)
class GoldRecord:
    row_id: str
    doc_id: str
    cells: dict[str, CellValue]


def _local(tag: str) -> str:
    return tag.rsplit("}", 1)[-1]


def _text_of(elem: ET.Element | None) -> str:
    if elem is None:
        return ""
    return collapse_ws("".join(elem.itertext()))


def _find_local(elem: ET.Element, name: str) -> ET.Element | None:
    for node in elem.iter():
        if _local(node.tag) == name:
            return node
    return None


def _children_local(elem: ET.Element, name: str) -> list[ET.Element]:
    return [c for c in elem if _local(c.tag) == name]


_YEAR_RE = re.compile(r"\b(1[5-9]\d{2}|20\d{2})\b")


def _extract_year(header: ET.Element) -> int | None:
    for node in header.iter():
        if _local(node.tag) != "date":
            continue
        for candidate in (node.get("when", ""), _text_of(node)):
            m = _YEAR_RE.search(candidate)
            if m:
                return int(m.group(1))
    return None


def _parse_table(figure: ET.Element) -> tuple[str, tuple[tuple[str, ...], ...]]:
    caption = ""
    for child in figure:
        if _local(child.tag) == "figDesc":
            caption = _text_of(child)
            break
    if not caption:
        for child in figure:
            if _local(child.tag) == "head":
                caption = _text_of(child)
                break
    rows: list[tuple[str, ...]] = []
    table = _find_local(figure, "table")
    if table is not None:
        for row in table.iter():
            if _local(row.tag) != "row":
                continue
            rows.append(tuple(_text_of(c) for c in _children_local(row, "cell")))
    width = max((len(r) for r in rows), default=0)
    padded = tuple(r + ("",) * (width - len(r)) for r in rows)
    return caption, padded


def _walk_blocks(container: ET.Element, blocks: list[tuple[str, object]]) -> None:
    for child in container:
        tag = _local(child.tag)
        if tag == "div":
            heading = ""
            paragraphs: list[str] = []
            for sub in child:
                sub_tag = _local(sub.tag)
                if sub_tag == "head" and not heading:
                    heading = _text_of(sub)
                elif sub_tag == "p":
                    text = _text_of(sub)
                    if text:
                        paragraphs.append(text)
            if heading or paragraphs:
                blocks.append(("section", (heading, tuple(paragraphs))))
            # nested divs and figures keep document order after their parent
            _walk_blocks(child, blocks)
        elif tag == "figure":
            if (child.get("type") or "").lower() == "table":
                blocks.append(("table", _parse_table(child)))
            # non-table figures carry no linearizable text; dropped
        elif tag in ("head", "p", "note", "listBibl"):
            continue
        else:
            _walk_blocks(child, blocks)


def parse_tei(xml_text: str, include_back_matter: bool = False) -> DocumentModel:
    """Parse a TEI XML document into the document model.

    The DOI (idno type="DOI" in the header) becomes doc_id; a document
    without one raises DocumentIdentityError. Malformed XML raises
    TeiParseError with the parser position. Non-table figures are dropped;
    back matter is excluded unless include_back_matter is set.
    """
    try:
        root = ET.fromstring(xml_text)
    except ET.ParseError as exc:
        line, col = exc.position
        raise TeiParseError(f"malformed XML at line {line}, column {col}: {exc.msg}") from exc

    header = _find_local(root, "teiHeader")
    if header is None:
        raise TeiParseError("document has no teiHeader")

    doc_id = ""
    for node in header.iter():
        if _local(node.tag) == "idno" and (node.get("type") or "").lower() == "doi":
            doc_id = _text_of(node)
            if doc_id:
                break
    if not doc_id:
        raise DocumentIdentityError("document has no DOI idno in its header")

    title = ""
    title_stmt = _find_local(header, "titleStmt")
    if title_stmt is not None:
        title = _text_of(_find_local(title_stmt, "title"))

    abstract = _text_of(_find_local(header, "abstract"))
    year = _extract_year(header)

    blocks: list[tuple[str, object]] = []
    text_elem = _find_local(root, "text")
    if text_elem is not None:
        for part in text_elem:
            part_tag = _local(part.tag)
            if part_tag == "body" or (part_tag == "back" and include_back_matter):
                _walk_blocks(part, blocks)

    sections: list[Section] = []
    tables: list[TableBlock] = []
    for position, (kind, payload) in enumerate(blocks):
        if kind == "section":
            heading, paragraphs = payload  # type: ignore[misc]
            sections.append(Section(heading, paragraphs, position))
        else:
            caption, rows = payload  # type: ignore[misc]
            tables.append(TableBlock(caption, rows, position))

    return DocumentModel(
        doc_id=doc_id,
        title=title,
        abstract=abstract,
        sections=tuple(sections),
        tables=tuple(tables),
        year=year,
    )


def linearize(doc: DocumentModel) -> str:
    """Flatten a document to plain text: title, abstract, then body blocks
    in flow order. Tables render as a caption line plus pipe-delimited rows.
    Empty parts are skipped. Deterministic."""
    lines: list[str] = []
    if doc.title:
        lines.append(doc.title)
    if doc.abstract:
        lines.append(doc.abstract)
    flow: list[tuple[int, str, object]] = [(s.position, "section", s) for s in doc.sections]
    flow += [(t.position, "table", t) for t in doc.tables]
    flow.sort(key=lambda item: item[0])
    for _, kind, block in flow:
        if kind == "section":
            assert isinstance(block, Section)
            if block.heading:
                lines.append(block.heading)
            lines.extend(p for p in block.paragraphs if p)
        else:
            assert isinstance(block, TableBlock)
            if block.caption:
                lines.append(block.caption)
            lines.extend(" | ".join(row) for row in block.rows)
    return "\n".join(lines)


def chunk_text(
    text: str,
    chunk_size: int = 2000,
    overlap_fraction: float = 0.01,
    doc_id: str = "",
) -> list[Chunk]:
    """Split text into whitespace-token windows of chunk_size tokens.

    Consecutive chunks overlap by ceil(overlap_fraction * chunk_size)
    tokens: each chunk after the first starts exactly that many tokens
    before its predecessor's end. The last chunk may be short. Every token
    is covered; empty text yields no chunks.
    """
    if chunk_size < 1:
        raise ValidationError("chunk_size must be >= 1")
    if not 0.0 <= overlap_fraction < 1.0:
        raise ValidationError("overlap_fraction must be in [0, 1)")
    tokens = text.split()
    if not tokens:
        return []
    overlap = math.ceil(overlap_fraction * chunk_size)
    # ceil can reach chunk_size for tiny sizes; keep the window advancing
    overlap = min(overlap, chunk_size - 1)
    chunks: list[Chunk] = []
    start = 0
    index = 0
    total = len(tokens)
    while True:
        end = min(start + chunk_size, total)
        chunks.append(Chunk(doc_id, index, " ".join(tokens[start:end]), (start, end)))
        if end >= total:
            break
        start = end - overlap
        index += 1
    return chunks


def document_to_dict(doc: DocumentModel) -> dict:
    return {
        "doc_id": doc.doc_id,
        "title": doc.title,
        "abstract": doc.abstract,
        "year": doc.year,
        "sections": [
            {"heading": s.heading, "paragraphs": list(s.paragraphs), "position": s.position}
            for s in doc.sections
        ],
        "tables": [
            {"caption": t.caption, "rows": [list(r) for r in t.rows], "position": t.position}
            for t in doc.tables
        ],
    }


def document_from_dict(data: dict) -> DocumentModel:
    try:
        sections = tuple(
            Section(s["heading"], tuple(s["paragraphs"]), int(s["position"]))
            for s in data.get("sections", [])
        )
        tables = tuple(
            TableBlock(
                t["caption"],
                tuple(tuple(str(c) for c in row) for row in t["rows"]),
                int(t["position"]),
            )
            for t in data.get("tables", [])
        )
        year = data.get("year")
        return DocumentModel(
            doc_id=data["doc_id"],
            title=data.get("title", ""),
            abstract=data.get("abstract", ""),
            sections=sections,
            tables=tables,
            year=int(year) if year is not None else None,
        )
    except (KeyError, TypeError) as exc:
        raise ValidationError(f"bad document JSON: {exc}") from exc


def load_gold(csv_text: str, schema: ExtractionSchema) -> list[GoldRecord]:
    """Load a gold CSV into records keyed by DOI.

    The header must contain a doi column; every other column must name a
    schema field. Empty cells become Missing; missing doi on a data row is
    a validation error naming the row. Row ids are doi#r<n> with n counting
    data rows per file from 1.
    """
    reader = csv.reader(io.StringIO(csv_text))
    rows = [row for row in reader]
    if not rows:
        return []
    header = [h.strip() for h in rows[0]]
    doi_indices = [i for i, h in enumerate(header) if h.lower() == "doi"]
    if not doi_indices:
        raise ValidationError("gold CSV has no doi column")
    doi_col = doi_indices[0]
    known = set(schema.field_map)
    unknown = [h for i, h in enumerate(header) if i != doi_col and h not in known]
    if unknown:
        raise ValidationError(f"gold CSV columns not in schema {schema.name!r}: {unknown}")

    records: list[GoldRecord] = []
    for seq, row in enumerate(rows[1:], start=1):
        if not any(cell.strip() for cell in row):
            continue
        padded = list(row) + [""] * (len(header) - len(row))
        doi = padded[doi_col].strip()
        if not doi:
            raise ValidationError(f"gold CSV row {seq + 1}: missing doi")
        cells: dict[str, CellValue] = {f.name: MISSING for f in schema.fields}
        for i, name in enumerate(header):
            if i == doi_col:
                continue
            raw = padded[i].strip()
            if not raw:
                continue
            spec = schema.field_map[name]
            cells[name] = normalize_value(spec, raw, missing_token=schema.missing_token)
        records.append(GoldRecord(row_id=f"{doi}#r{seq}", doc_id=doi, cells=cells))
    return records
