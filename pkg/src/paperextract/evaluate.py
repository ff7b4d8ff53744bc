"""Metrics over alignment outcomes and error-annotation breakdowns.

Row-level recall is matched/(matched+missed) and precision is
matched/(matched+hallucinated); a zero denominator yields an undefined
marker (None in memory and JSON, the string "no match" in CSV), never 0.
Per-variance-class metrics aggregate field agreement over matched pairs,
excluding the required match fields since the gate forces those to agree.
"""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass

from .align import AGREE, DISAGREE, EXTRACTED_MISSING, GOLD_MISSING, AlignmentOutcome
from .errors import AnnotationError, ValidationError
from .schema import ExtractionSchema

NO_MATCH = "no match"

DATA_FORMATS = ("table", "figure", "narrative", "calculated", "other")
FAILURE_REASONS = (
    "xml_parsing",
    "figure",
    "dataset_error",
    "comprehension",
    "unit_conversion",
    "confusion",
    "secondary_source",
    "alignment",
    "none",
)
ROW_KINDS = ("gold", "extracted")

_ANNOTATION_COLUMNS = ("doc_id", "row_id", "row_kind", "data_format", "failure_reason", "annotator")


@dataclass(frozen=True)
class ClassMetrics:
    recall: float | None
    precision: float | None


@dataclass(frozen=True)
class MetricsReport:
    run_id: str
    matched: int
    missed: int
    hallucinated: int
    recall: float | None
    precision: float | None
    per_class: dict[str, ClassMetrics]
    per_paper: dict[str, dict[str, int]]


@dataclass(frozen=True)
class ErrorAnnotation:
    doc_id: str
    row_id: str
    row_kind: str
    data_format: str
    failure_reason: str
    annotator: str


def _ratio(numerator: int, denominator: int) -> float | None:
    return numerator / denominator if denominator else None


def row_metrics(outcomes: list[AlignmentOutcome], run_id: str = "") -> MetricsReport:
    """Corpus-level row counts and recall/precision, plus per-paper counts."""
    matched = sum(len(o.pairs) for o in outcomes)
    missed = sum(len(o.missed_gold) for o in outcomes)
    hallucinated = sum(len(o.hallucinated) for o in outcomes)
    per_paper: dict[str, dict[str, int]] = {}
    for o in sorted(outcomes, key=lambda x: x.doc_id):
        per_paper[o.doc_id] = {
            "gold": len(o.pairs) + len(o.missed_gold),
            "extracted": len(o.pairs) + len(o.hallucinated),
            "matched": len(o.pairs),
            "missed": len(o.missed_gold),
            "hallucinated": len(o.hallucinated),
        }
    return MetricsReport(
        run_id=run_id,
        matched=matched,
        missed=missed,
        hallucinated=hallucinated,
        recall=_ratio(matched, matched + missed),
        precision=_ratio(matched, matched + hallucinated),
        per_class={},
        per_paper=per_paper,
    )


def property_metrics(
    outcomes: list[AlignmentOutcome], schema: ExtractionSchema
) -> dict[str, ClassMetrics]:
    """Field-level agreement per variance class over matched pairs.

    Required match fields are excluded. Recall divides agreements by gold
    non-Missing cells, precision by extracted non-Missing cells. With no
    matched pairs every class is undefined.
    """
    required = set(schema.required_match_fields)
    class_of = {f.name: f.variance_class for f in schema.fields if f.name not in required}
    agree: dict[str, int] = {}
    gold_present: dict[str, int] = {}
    extracted_present: dict[str, int] = {}
    for name, cls in class_of.items():
        agree.setdefault(cls, 0)
        gold_present.setdefault(cls, 0)
        extracted_present.setdefault(cls, 0)
    for outcome in outcomes:
        for pair in outcome.pairs:
            for name, cls in class_of.items():
                state = pair.field_agreements.get(name)
                if state is None:
                    continue
                if state in (AGREE, DISAGREE, EXTRACTED_MISSING):
                    gold_present[cls] += 1
                if state in (AGREE, DISAGREE, GOLD_MISSING):
                    extracted_present[cls] += 1
                if state == AGREE:
                    agree[cls] += 1
    return {
        cls: ClassMetrics(
            recall=_ratio(agree[cls], gold_present[cls]),
            precision=_ratio(agree[cls], extracted_present[cls]),
        )
        for cls in sorted(agree)
    }


def build_report(
    outcomes: list[AlignmentOutcome], schema: ExtractionSchema, run_id: str = ""
) -> MetricsReport:
    base = row_metrics(outcomes, run_id)
    return MetricsReport(
        run_id=base.run_id,
        matched=base.matched,
        missed=base.missed,
        hallucinated=base.hallucinated,
        recall=base.recall,
        precision=base.precision,
        per_class=property_metrics(outcomes, schema),
        per_paper=base.per_paper,
    )


def load_annotations(csv_text: str) -> list[ErrorAnnotation]:
    """Parse an annotation CSV, validating enums; offender rows are listed."""
    reader = csv.DictReader(io.StringIO(csv_text))
    if reader.fieldnames is None:
        return []
    header = [h.strip() for h in reader.fieldnames]
    missing = [c for c in _ANNOTATION_COLUMNS if c not in header]
    if missing:
        raise ValidationError(f"annotation CSV lacks columns: {missing}")
    annotations: list[ErrorAnnotation] = []
    problems: list[str] = []
    for line_no, row in enumerate(reader, start=2):
        data_format = (row.get("data_format") or "").strip()
        failure_reason = (row.get("failure_reason") or "").strip() or "none"
        row_kind = (row.get("row_kind") or "").strip()
        if data_format not in DATA_FORMATS:
            problems.append(f"row {line_no}: bad data_format {data_format!r}")
        if failure_reason not in FAILURE_REASONS:
            problems.append(f"row {line_no}: bad failure_reason {failure_reason!r}")
        if row_kind not in ROW_KINDS:
            problems.append(f"row {line_no}: bad row_kind {row_kind!r}")
        annotations.append(
            ErrorAnnotation(
                doc_id=(row.get("doc_id") or "").strip(),
                row_id=(row.get("row_id") or "").strip(),
                row_kind=row_kind,
                data_format=data_format,
                failure_reason=failure_reason,
                annotator=(row.get("annotator") or "").strip(),
            )
        )
    if problems:
        raise AnnotationError("; ".join(problems))
    return annotations


def _alignment_index(outcomes: list[AlignmentOutcome]):
    matched_gold: set[tuple[str, str]] = set()
    missed_gold: set[tuple[str, str]] = set()
    matched_extracted: set[tuple[str, str]] = set()
    hallucinated: set[tuple[str, str]] = set()
    for o in outcomes:
        for p in o.pairs:
            matched_gold.add((o.doc_id, p.gold_id))
            matched_extracted.add((o.doc_id, p.extracted_id))
        for g in o.missed_gold:
            missed_gold.add((o.doc_id, g))
        for h in o.hallucinated:
            hallucinated.add((o.doc_id, h))
    return matched_gold, missed_gold, matched_extracted, hallucinated


def breakdowns(
    annotations: list[ErrorAnnotation], outcomes: list[AlignmentOutcome]
) -> tuple[dict, dict]:
    """Aggregate annotations into format and failure-reason distributions.

    Every annotation must reference an aligned row (else it dangles) and
    must carry failure_reason none exactly when the row matched.
    format_distribution covers gold rows; reason_distribution covers
    missed gold rows and hallucinated extracted rows separately.
    Proportions within each distribution sum to 1 when non-empty.
    """
    matched_gold, missed_gold, matched_extracted, hallucinated = _alignment_index(outcomes)
    problems: list[str] = []
    format_counts: dict[str, dict[str, int]] = {}
    missed_reasons: dict[str, int] = {}
    hallucinated_reasons: dict[str, int] = {}
    gold_total = 0
    gold_matched = 0
    gold_missed = 0

    for a in annotations:
        ref = (a.doc_id, a.row_id)
        if a.row_kind == "gold":
            if ref in matched_gold:
                matched = True
            elif ref in missed_gold:
                matched = False
            else:
                problems.append(f"gold annotation {ref} references no aligned row")
                continue
            if matched != (a.failure_reason == "none"):
                problems.append(
                    f"gold annotation {ref}: failure_reason {a.failure_reason!r} "
                    f"inconsistent with matched={matched}"
                )
                continue
            gold_total += 1
            bucket = format_counts.setdefault(a.data_format, {"matched": 0, "missed": 0})
            if matched:
                gold_matched += 1
                bucket["matched"] += 1
            else:
                gold_missed += 1
                bucket["missed"] += 1
                missed_reasons[a.failure_reason] = missed_reasons.get(a.failure_reason, 0) + 1
        else:
            if ref in matched_extracted:
                matched = True
            elif ref in hallucinated:
                matched = False
            else:
                problems.append(f"extracted annotation {ref} references no aligned row")
                continue
            if matched != (a.failure_reason == "none"):
                problems.append(
                    f"extracted annotation {ref}: failure_reason {a.failure_reason!r} "
                    f"inconsistent with matched={matched}"
                )
                continue
            if not matched:
                hallucinated_reasons[a.failure_reason] = (
                    hallucinated_reasons.get(a.failure_reason, 0) + 1
                )

    if problems:
        raise AnnotationError("; ".join(problems))

    format_distribution = {
        "total": gold_total,
        "matched": gold_matched,
        "missed": gold_missed,
        "matched_share": _ratio(gold_matched, gold_total),
        "formats": {
            fmt: {
                "matched": counts["matched"],
                "missed": counts["missed"],
                "count": counts["matched"] + counts["missed"],
                "proportion": (counts["matched"] + counts["missed"]) / gold_total,
            }
            for fmt, counts in sorted(format_counts.items())
        },
    }

    def reason_dist(counts: dict[str, int]) -> dict[str, dict]:
        total = sum(counts.values())
        return {
            reason: {"count": count, "proportion": count / total}
            for reason, count in sorted(counts.items())
        }

    reason_distribution = {
        "missed": reason_dist(missed_reasons),
        "hallucinated": reason_dist(hallucinated_reasons),
    }
    return format_distribution, reason_distribution


def report_to_dict(report: MetricsReport) -> dict:
    # None serializes as JSON null, the undefined-metric marker
    return {
        "run_id": report.run_id,
        "matched": report.matched,
        "missed": report.missed,
        "hallucinated": report.hallucinated,
        "recall": report.recall,
        "precision": report.precision,
        "per_class": {
            cls: {"recall": m.recall, "precision": m.precision}
            for cls, m in sorted(report.per_class.items())
        },
        "per_paper": report.per_paper,
    }


def report_to_json(report: MetricsReport) -> str:
    return json.dumps(report_to_dict(report), ensure_ascii=False, sort_keys=True, indent=2) + "\n"


def _csv_metric(value: float | None) -> str:
    return NO_MATCH if value is None else f"{value:.3f}"


def summary_csv(report: MetricsReport, method: str) -> str:
    """Single-row method summary: matched/recall/hallucinated/precision."""
    out = io.StringIO()
    writer = csv.writer(out, lineterminator="\n")
    writer.writerow(["Method", "Matched", "Recall", "Hallucinated", "Precision"])
    writer.writerow(
        [
            method,
            report.matched,
            _csv_metric(report.recall),
            report.hallucinated,
            _csv_metric(report.precision),
        ]
    )
    return out.getvalue()


def format_breakdown_csv(format_distribution: dict) -> str:
    out = io.StringIO()
    writer = csv.writer(out, lineterminator="\n")
    writer.writerow(["Format", "Matched", "Missed", "Count", "Proportion"])
    for fmt, row in format_distribution["formats"].items():
        writer.writerow(
            [fmt, row["matched"], row["missed"], row["count"], f"{row['proportion']:.4f}"]
        )
    share = format_distribution["matched_share"]
    writer.writerow(
        [
            "all",
            format_distribution["matched"],
            format_distribution["missed"],
            format_distribution["total"],
            NO_MATCH if share is None else f"{share:.4f}",
        ]
    )
    return out.getvalue()


def reason_breakdown_csv(reason_distribution: dict) -> str:
    out = io.StringIO()
    writer = csv.writer(out, lineterminator="\n")
    writer.writerow(["Outcome", "Reason", "Count", "Proportion"])
    for outcome_kind in ("missed", "hallucinated"):
        for reason, row in reason_distribution[outcome_kind].items():
            writer.writerow([outcome_kind, reason, row["count"], f"{row['proportion']:.4f}"])
    return out.getvalue()
