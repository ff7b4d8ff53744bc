"""Greedy alignment of extracted records against gold rows.

A gold/extracted pair is admissible only when every required match field is
non-Missing on both sides and the values agree. Admissible pairs are scored
by the fraction of the gold row's non-Missing fields the extracted row
agrees on, and pairs are selected greedily from the highest score down with
a deterministic tie-break.
"""

from __future__ import annotations

from dataclasses import dataclass

from .corpus import GoldRecord
from .errors import ConversionError
from .schema import (
    MISSING,
    CellValue,
    ExtractionSchema,
    FieldSpec,
    Number,
    Text,
    convert_unit,
    is_missing,
)
from .util import collapse_ws

DEFAULT_NUMERIC_REL_TOL = 1e-6

AGREE = "agree"
DISAGREE = "disagree"
GOLD_MISSING = "gold_missing"
EXTRACTED_MISSING = "extracted_missing"
BOTH_MISSING = "both_missing"

FIELD_STATES = (AGREE, DISAGREE, GOLD_MISSING, EXTRACTED_MISSING, BOTH_MISSING)


def values_agree(
    spec: FieldSpec,
    a: CellValue,
    b: CellValue,
    numeric_rel_tol: float = DEFAULT_NUMERIC_REL_TOL,
) -> bool:
    """Compare two non-Missing cell values for agreement.

    Text compares case-insensitively with collapsed whitespace. Numbers
    compare within a relative tolerance after converting b into a's unit
    when both units are known and the conversion table supports the pair;
    if either unit is unknown the raw values are compared; if both are
    known but not convertible the values disagree.
    """
    if is_missing(a) or is_missing(b):
        return False
    if isinstance(a, Text) and isinstance(b, Text):
        return collapse_ws(a.value).lower() == collapse_ws(b.value).lower()
    if isinstance(a, Number) and isinstance(b, Number):
        b_value = b.value
        if a.unit is not None and b.unit is not None and a.unit != b.unit:
            try:
                b_value = convert_unit(b.value, b.unit, a.unit)
            except ConversionError:
                return False
        if a.value == b_value:
            return True
        denom = max(abs(a.value), abs(b_value))
        if denom == 0.0:
            return False  # unreachable when equal values short-circuit
        return abs(a.value - b_value) <= numeric_rel_tol * denom
    return False


def field_agreement(
    spec: FieldSpec,
    gold_cell: CellValue,
    extracted_cell: CellValue,
    numeric_rel_tol: float = DEFAULT_NUMERIC_REL_TOL,
) -> str:
    gold_absent = is_missing(gold_cell)
    extracted_absent = is_missing(extracted_cell)
    if gold_absent and extracted_absent:
        return BOTH_MISSING
    if gold_absent:
        return GOLD_MISSING
    if extracted_absent:
        return EXTRACTED_MISSING
    return AGREE if values_agree(spec, gold_cell, extracted_cell, numeric_rel_tol) else DISAGREE


def gate(
    gold: GoldRecord,
    extracted: "ExtractedRecordLike",
    schema: ExtractionSchema,
    numeric_rel_tol: float = DEFAULT_NUMERIC_REL_TOL,
) -> bool:
    """True when every required match field is present on both sides and agrees."""
    for name in schema.required_match_fields:
        spec = schema.field_map[name]
        g = gold.cells.get(name, MISSING)
        e = extracted.cells.get(name, MISSING)
        if is_missing(g) or is_missing(e):
            return False
        if not values_agree(spec, g, e, numeric_rel_tol):
            return False
    return True


@dataclass(frozen=True)
class PairScore:
    gold_id: str
    extracted_id: str
    score: float
    field_agreements: dict[str, str]


@dataclass(frozen=True)
class AlignmentOutcome:
    doc_id: str
    pairs: tuple[PairScore, ...]
    missed_gold: tuple[str, ...]
    hallucinated: tuple[str, ...]


def pair_score(
    gold: GoldRecord,
    extracted: "ExtractedRecordLike",
    schema: ExtractionSchema,
    numeric_rel_tol: float = DEFAULT_NUMERIC_REL_TOL,
) -> PairScore:
    """Score a pair: agreeing fields over the gold row's non-Missing fields.

    All schema fields count, required ones included. A gold row with no
    non-Missing fields scores 0.
    """
    agreements: dict[str, str] = {}
    agree_count = 0
    gold_present = 0
    for f in schema.fields:
        state = field_agreement(
            f,
            gold.cells.get(f.name, MISSING),
            extracted.cells.get(f.name, MISSING),
            numeric_rel_tol,
        )
        agreements[f.name] = state
        if state in (AGREE, DISAGREE, EXTRACTED_MISSING):
            gold_present += 1
        if state == AGREE:
            agree_count += 1
    score = agree_count / gold_present if gold_present else 0.0
    return PairScore(
        gold_id=gold.row_id,
        extracted_id=extracted.record_id,
        score=score,
        field_agreements=agreements,
    )


def greedy_align(
    gold_rows: list[GoldRecord],
    extracted_rows: list,
    schema: ExtractionSchema,
    numeric_rel_tol: float = DEFAULT_NUMERIC_REL_TOL,
    doc_id: str | None = None,
) -> AlignmentOutcome:
    """Align one document's rows greedily.

    Admissible pairs are taken from the highest score down; ties break on
    (gold_id, extracted_id) ascending. Unpaired gold rows land in
    missed_gold, unpaired extracted rows in hallucinated, both sorted.
    """
    if doc_id is None:
        if gold_rows:
            doc_id = gold_rows[0].doc_id
        elif extracted_rows:
            doc_id = extracted_rows[0].doc_id
        else:
            doc_id = ""

    candidates = [
        pair_score(g, e, schema, numeric_rel_tol)
        for g in gold_rows
        for e in extracted_rows
        if gate(g, e, schema, numeric_rel_tol)
    ]
    # static order equals iterative re-selection because scores are fixed
    candidates.sort(key=lambda p: (-p.score, p.gold_id, p.extracted_id))

    paired_gold: set[str] = set()
    paired_extracted: set[str] = set()
    pairs: list[PairScore] = []
    for cand in candidates:
        if cand.gold_id in paired_gold or cand.extracted_id in paired_extracted:
            continue
        pairs.append(cand)
        paired_gold.add(cand.gold_id)
        paired_extracted.add(cand.extracted_id)

    missed = sorted(g.row_id for g in gold_rows if g.row_id not in paired_gold)
    hallucinated = sorted(e.record_id for e in extracted_rows if e.record_id not in paired_extracted)
    return AlignmentOutcome(
        doc_id=doc_id,
        pairs=tuple(pairs),
        missed_gold=tuple(missed),
        hallucinated=tuple(hallucinated),
    )


def align_corpus(
    gold_rows: list[GoldRecord],
    extracted_rows: list,
    schema: ExtractionSchema,
    numeric_rel_tol: float = DEFAULT_NUMERIC_REL_TOL,
) -> list[AlignmentOutcome]:
    """Group both sides by doc_id and align each document independently.

    Documents appearing on either side are covered; output is sorted by
    doc_id so runs are reproducible.
    """
    gold_by_doc: dict[str, list[GoldRecord]] = {}
    for g in gold_rows:
        gold_by_doc.setdefault(g.doc_id, []).append(g)
    extracted_by_doc: dict[str, list] = {}
    for e in extracted_rows:
        extracted_by_doc.setdefault(e.doc_id, []).append(e)

    outcomes = []
    for doc_id in sorted(set(gold_by_doc) | set(extracted_by_doc)):
        outcomes.append(
            greedy_align(
                gold_by_doc.get(doc_id, []),
                extracted_by_doc.get(doc_id, []),
                schema,
                numeric_rel_tol,
                doc_id=doc_id,
            )
        )
    return outcomes


def outcome_to_dict(outcome: AlignmentOutcome) -> dict:
    return {
        "doc_id": outcome.doc_id,
        "pairs": [
            {
                "gold_id": p.gold_id,
                "extracted_id": p.extracted_id,
                "score": p.score,
                "field_agreements": dict(sorted(p.field_agreements.items())),
            }
            for p in outcome.pairs
        ],
        "missed_gold": list(outcome.missed_gold),
        "hallucinated": list(outcome.hallucinated),
    }


def outcome_from_dict(data: dict) -> AlignmentOutcome:
    return AlignmentOutcome(
        doc_id=data["doc_id"],
        pairs=tuple(
            PairScore(p["gold_id"], p["extracted_id"], p["score"], dict(p["field_agreements"]))
            for p in data["pairs"]
        ),
        missed_gold=tuple(data["missed_gold"]),
        hallucinated=tuple(data["hallucinated"]),
    )


# typing-only protocol stand-in: anything with record_id, doc_id, cells
ExtractedRecordLike = object
