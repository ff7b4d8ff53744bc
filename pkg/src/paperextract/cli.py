"""Command-line interface: ingest TEI files, run extraction, evaluate.

Exit codes: 0 success, 1 validation or configuration problem, 2 I/O or
transport failure, 3 partial failure (some documents failed, some
succeeded). All outputs are plain files written atomically; reruns on
unchanged inputs produce byte-identical output.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import sys
from dataclasses import dataclass
from pathlib import Path

import click

from . import align as align_mod
from . import backend as backend_mod
from . import corpus as corpus_mod
from . import evaluate as evaluate_mod
from . import postprocess as post_mod
from . import prompting as prompting_mod
from .errors import (
    PaperExtractError,
    ReplayMissError,
    TransportError,
    ValidationError,
)
from .schema import ExtractionSchema, load_bundled_schema, load_schema
from .util import encode_doc_id, write_text_atomic

BUNDLED_SCHEMAS = ("mpea", "diffusion")
BUNDLED_EXEMPLARS = ("mpea", "diffusion")


@dataclass(frozen=True)
class RunConfig:
    schema: str
    corpus: str
    mode: str
    backend: str
    gold: str | None = None
    exemplar: str | None = None
    model_id: str = backend_mod.DEFAULT_MODEL_ID
    temperature: float = 0.0
    max_output_tokens: int = backend_mod.DEFAULT_MAX_OUTPUT_TOKENS
    endpoint: str = ""
    cache_dir: str | None = None
    mock_script: str | None = None
    chunk_size: int = 2000
    overlap_fraction: float = 0.01
    tol: float = align_mod.DEFAULT_NUMERIC_REL_TOL
    parallelism: int = 1
    out: str = ""
    no_cache: bool = False
    scan_bare_json: bool = False
    coerce_invalid_to_missing: bool = False

    @property
    def run_id(self) -> str:
        """Short content hash over the fields that determine extraction output.

        Execution details (parallelism, out dir, cache switches) are
        excluded so replays and different worker counts keep one identity.
        """
        content = json.dumps(
            {
                "schema": self.schema,
                "corpus": self.corpus,
                "gold": self.gold,
                "mode": self.mode,
                "exemplar": self.exemplar,
                "backend": self.backend,
                "model_id": self.model_id,
                "temperature": self.temperature,
                "max_output_tokens": self.max_output_tokens,
                "chunk_size": self.chunk_size,
                "overlap_fraction": self.overlap_fraction,
            },
            sort_keys=True,
        )
        return hashlib.sha256(content.encode("utf-8")).hexdigest()[:12]


def _load_schema_arg(value: str) -> ExtractionSchema:
    if value in BUNDLED_SCHEMAS:
        return load_bundled_schema(value)
    return load_schema(Path(value).read_text(encoding="utf-8"))


def _echo_error(message: str) -> None:
    click.echo(f"error: {message}", err=True)


def _exit_for(exc: Exception) -> int:
    if isinstance(exc, (TransportError, ReplayMissError, OSError)):
        return 2
    return 1


@click.group()
def main() -> None:
    """Schema-driven extraction from TEI papers, with gold-set evaluation."""


@main.command()
@click.option("--corpus", required=True, type=click.Path(exists=True, file_okay=False),
              help="Directory of TEI XML files.")
@click.option("--out", required=True, type=click.Path(file_okay=False),
              help="Directory for parsed document JSON files.")
@click.option("--include-back-matter", is_flag=True, default=False,
              help="Keep back-matter sections (references etc.) in the document model.")
def ingest(corpus: str, out: str, include_back_matter: bool) -> None:
    """Parse every TEI XML file in a directory into document JSON."""
    corpus_dir = Path(corpus)
    out_dir = Path(out)
    out_dir.mkdir(parents=True, exist_ok=True)
    xml_files = sorted(corpus_dir.glob("*.xml"))
    parsed = 0
    failed = 0
    for path in xml_files:
        try:
            doc = corpus_mod.parse_tei(
                path.read_text(encoding="utf-8"), include_back_matter=include_back_matter
            )
        except PaperExtractError as exc:
            failed += 1
            _echo_error(f"{path.name}: {exc}")
            continue
        payload = json.dumps(
            corpus_mod.document_to_dict(doc), ensure_ascii=False, sort_keys=True, indent=2
        )
        write_text_atomic(out_dir / f"{encode_doc_id(doc.doc_id)}.json", payload + "\n")
        parsed += 1
    click.echo(f"parsed={parsed} failed={failed}")
    if failed and parsed:
        sys.exit(3)
    if failed:
        sys.exit(2)


def _load_documents(corpus_dir: Path) -> list[corpus_mod.DocumentModel]:
    docs = []
    for path in sorted(corpus_dir.glob("*.json")):
        docs.append(corpus_mod.document_from_dict(json.loads(path.read_text(encoding="utf-8"))))
    if not docs:
        raise ValidationError(f"no document JSON files in {corpus_dir}")
    return docs


def _resolve_exemplar(
    config: RunConfig,
    schema: ExtractionSchema,
    docs: list[corpus_mod.DocumentModel],
) -> prompting_mod.Exemplar:
    name = config.exemplar or ""
    if not name:
        raise ValidationError("one_shot mode needs --exemplar")
    if name in BUNDLED_EXEMPLARS:
        return prompting_mod.load_bundled_exemplar(name, schema)
    by_id = {d.doc_id: d for d in docs}
    doc = by_id.get(name)
    if doc is None:
        raise ValidationError(f"exemplar {name!r} is neither bundled nor a corpus doc id")
    if not config.gold:
        raise ValidationError("a corpus exemplar needs --gold for its expected rows")
    gold_rows = corpus_mod.load_gold(Path(config.gold).read_text(encoding="utf-8"), schema)
    rows = [g for g in gold_rows if g.doc_id == name]
    if not rows:
        raise ValidationError(f"gold data has no rows for exemplar doc {name!r}")
    return prompting_mod.render_exemplar(schema, doc, rows)


def _payload_from_response(text: str, scan: bool) -> tuple[str, list[str]]:
    """Strip fences (or scan for bare JSON) and report payload warnings."""
    warnings = []
    blocks = post_mod.count_fenced_blocks(text)
    if blocks > 1:
        warnings.append(f"{blocks} fenced blocks in response; parsing the first")
    payload = post_mod.strip_fences(text)
    if blocks == 0 and scan:
        payload = post_mod.scan_bare_json(text)
    return payload, warnings


@main.command()
@click.option("--schema", "schema_arg", required=True,
              help=f"Bundled schema name {BUNDLED_SCHEMAS} or a schema config path.")
@click.option("--corpus", required=True, type=click.Path(exists=True, file_okay=False),
              help="Directory of ingested document JSON files.")
@click.option("--gold", type=click.Path(exists=True, dir_okay=False), default=None,
              help="Gold CSV (only needed for a corpus-document exemplar).")
@click.option("--mode", type=click.Choice(list(prompting_mod.MODES)), default="zero_shot")
@click.option("--exemplar", default=None,
              help=f"Bundled exemplar name {BUNDLED_EXEMPLARS} or a corpus doc id.")
@click.option("--backend", "backend_kind", type=click.Choice(["live", "replay", "mock"]),
              required=True)
@click.option("--model-id", default=backend_mod.DEFAULT_MODEL_ID, show_default=True)
@click.option("--temperature", type=float, default=0.0, show_default=True)
@click.option("--max-output-tokens", type=int, default=backend_mod.DEFAULT_MAX_OUTPUT_TOKENS,
              show_default=True)
@click.option("--endpoint", default="", help="Chat-completions URL for the live backend.")
@click.option("--cache-dir", type=click.Path(file_okay=False), default=None,
              help="Response cache directory (live and replay backends).")
@click.option("--mock-script", type=click.Path(exists=True, dir_okay=False), default=None,
              help="JSON script for the mock backend (by_hash/default/fail_hashes).")
@click.option("--chunk-size", type=int, default=2000, show_default=True)
@click.option("--overlap", "overlap_fraction", type=float, default=0.01, show_default=True)
@click.option("--parallelism", type=int, default=1, show_default=True)
@click.option("--out", required=True, type=click.Path(file_okay=False))
@click.option("--no-cache", is_flag=True, default=False,
              help="Live backend: re-issue requests even when cached.")
@click.option("--scan-bare-json", is_flag=True, default=False,
              help="Fall back to bracket scanning when a response has no fence.")
@click.option("--coerce-invalid-to-missing", is_flag=True, default=False,
              help="Downgrade uncoercible field payloads to Missing with a warning.")
def extract(
    schema_arg: str,
    corpus: str,
    gold: str | None,
    mode: str,
    exemplar: str | None,
    backend_kind: str,
    model_id: str,
    temperature: float,
    max_output_tokens: int,
    endpoint: str,
    cache_dir: str | None,
    mock_script: str | None,
    chunk_size: int,
    overlap_fraction: float,
    parallelism: int,
    out: str,
    no_cache: bool,
    scan_bare_json: bool,
    coerce_invalid_to_missing: bool,
) -> None:
    """Run schema extraction over an ingested corpus."""
    config = RunConfig(
        schema=schema_arg,
        corpus=corpus,
        gold=gold,
        mode=mode,
        exemplar=exemplar,
        backend=backend_kind,
        model_id=model_id,
        temperature=temperature,
        max_output_tokens=max_output_tokens,
        endpoint=endpoint,
        cache_dir=cache_dir,
        mock_script=mock_script,
        chunk_size=chunk_size,
        overlap_fraction=overlap_fraction,
        parallelism=parallelism,
        out=out,
        no_cache=no_cache,
        scan_bare_json=scan_bare_json,
        coerce_invalid_to_missing=coerce_invalid_to_missing,
    )
    try:
        counts = _run_extract(config)
    except PaperExtractError as exc:
        _echo_error(str(exc))
        sys.exit(_exit_for(exc))
    except OSError as exc:
        _echo_error(str(exc))
        sys.exit(2)
    click.echo(f"documents={counts[0]} ok={counts[1]} failed={counts[2]}")
    if counts[2] and counts[1]:
        sys.exit(3)
    if counts[2]:
        sys.exit(2)


def _run_extract(config: RunConfig) -> tuple[int, int, int]:
    schema = _load_schema_arg(config.schema)
    docs = _load_documents(Path(config.corpus))

    exemplar_obj = None
    if config.mode == prompting_mod.ONE_SHOT:
        exemplar_obj = _resolve_exemplar(config, schema, docs)
    elif config.exemplar:
        raise ValidationError("--exemplar only applies to one_shot mode")

    bundles: list[prompting_mod.PromptBundle] = []
    doc_bundle_count: list[tuple[str, int]] = []
    for doc in docs:
        if config.mode == prompting_mod.CHUNKED:
            doc_bundles = prompting_mod.build_chunked_prompts(
                schema, doc, config.chunk_size, config.overlap_fraction
            )
        else:
            doc_bundles = [
                prompting_mod.build_prompt(schema, doc, config.mode, exemplar=exemplar_obj)
            ]
        doc_bundle_count.append((doc.doc_id, len(doc_bundles)))
        bundles.extend(doc_bundles)

    backend_config = backend_mod.BackendConfig(
        kind=config.backend,
        model_id=config.model_id,
        temperature=config.temperature,
        max_output_tokens=config.max_output_tokens,
        endpoint=config.endpoint,
        cache_dir=config.cache_dir,
        no_cache=config.no_cache,
        mock_script_path=config.mock_script,
    )
    outcomes = backend_mod.run_extraction(bundles, backend_config, config.parallelism)

    run_id = config.run_id
    all_records: list[post_mod.ExtractedRecord] = []
    warning_entries: list[dict] = []
    ok_docs = 0
    failed_docs = 0
    cursor = 0
    for doc_id, bundle_count in doc_bundle_count:
        doc_outcomes = outcomes[cursor : cursor + bundle_count]
        cursor += bundle_count
        doc_failed = False
        per_chunk: list[list[post_mod.ExtractedRecord]] = []
        for outcome in doc_outcomes:
            chunk_index = outcome.bundle.chunk_index
            provenance = post_mod.Provenance(run_id, config.mode, chunk_index)
            if outcome.error is not None:
                warning_entries.append({"doc_id": doc_id, "message": outcome.error})
                doc_failed = True
                continue
            payload, payload_warnings = _payload_from_response(
                outcome.response.text, config.scan_bare_json
            )
            for w in payload_warnings:
                warning_entries.append({"doc_id": doc_id, "message": w})
            try:
                value = post_mod.parse_lenient_json(payload)
                records, record_warnings = post_mod.to_records(
                    value,
                    schema,
                    doc_id,
                    provenance,
                    coerce_invalid_to_missing=config.coerce_invalid_to_missing,
                )
            except PaperExtractError as exc:
                warning_entries.append({"doc_id": doc_id, "message": str(exc)})
                doc_failed = True
                continue
            for w in record_warnings:
                warning_entries.append({"doc_id": doc_id, "message": w})
            per_chunk.append(records)
        if config.mode == prompting_mod.CHUNKED:
            merged, merge_warnings = post_mod.merge_chunk_records(per_chunk, schema)
            for w in merge_warnings:
                warning_entries.append({"doc_id": doc_id, "message": w})
            all_records.extend(merged)
        else:
            for records in per_chunk:
                all_records.extend(records)
        if doc_failed:
            failed_docs += 1
        else:
            ok_docs += 1

    out_dir = Path(config.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    write_text_atomic(out_dir / "records.jsonl", post_mod.dump_records_jsonl(all_records))
    warning_lines = "".join(
        json.dumps(entry, ensure_ascii=False, sort_keys=True) + "\n" for entry in warning_entries
    )
    write_text_atomic(out_dir / "warnings.jsonl", warning_lines)
    run_info = {"run_id": run_id, "config": dataclasses.asdict(config)}
    write_text_atomic(
        out_dir / "run.json",
        json.dumps(run_info, ensure_ascii=False, sort_keys=True, indent=2) + "\n",
    )
    return len(docs), ok_docs, failed_docs


@main.command()
@click.option("--schema", "schema_arg", required=True,
              help=f"Bundled schema name {BUNDLED_SCHEMAS} or a schema config path.")
@click.option("--records", required=True, type=click.Path(exists=True, dir_okay=False),
              help="records.jsonl from an extract run.")
@click.option("--gold", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--tol", type=float, default=align_mod.DEFAULT_NUMERIC_REL_TOL, show_default=True,
              help="Relative tolerance for numeric agreement.")
@click.option("--annotations", type=click.Path(exists=True, dir_okay=False), default=None,
              help="Error-annotation CSV for breakdown reports.")
@click.option("--method", default=None,
              help="Label for the summary CSV; defaults to the records' prompt mode.")
@click.option("--out", required=True, type=click.Path(file_okay=False))
def evaluate(
    schema_arg: str,
    records: str,
    gold: str,
    tol: float,
    annotations: str | None,
    method: str | None,
    out: str,
) -> None:
    """Align extracted records against gold rows and report metrics."""
    try:
        _run_evaluate(schema_arg, records, gold, tol, annotations, method, Path(out))
    except PaperExtractError as exc:
        _echo_error(str(exc))
        sys.exit(_exit_for(exc))
    except OSError as exc:
        _echo_error(str(exc))
        sys.exit(2)


def _run_evaluate(
    schema_arg: str,
    records_path: str,
    gold_path: str,
    tol: float,
    annotations_path: str | None,
    method: str | None,
    out_dir: Path,
) -> None:
    schema = _load_schema_arg(schema_arg)
    extracted = post_mod.load_records_jsonl(Path(records_path).read_text(encoding="utf-8"))
    gold_rows = corpus_mod.load_gold(Path(gold_path).read_text(encoding="utf-8"), schema)

    outcomes = align_mod.align_corpus(gold_rows, extracted, schema, tol)
    run_id = extracted[0].provenance.run_id if extracted else ""
    report = evaluate_mod.build_report(outcomes, schema, run_id)
    if method is None:
        method = extracted[0].provenance.mode if extracted else "run"

    out_dir.mkdir(parents=True, exist_ok=True)
    alignment_lines = "".join(
        json.dumps(align_mod.outcome_to_dict(o), ensure_ascii=False, sort_keys=True) + "\n"
        for o in outcomes
    )
    write_text_atomic(out_dir / "alignment.jsonl", alignment_lines)
    write_text_atomic(out_dir / "metrics.json", evaluate_mod.report_to_json(report))
    write_text_atomic(out_dir / "summary.csv", evaluate_mod.summary_csv(report, method))

    if annotations_path is not None:
        notes = evaluate_mod.load_annotations(Path(annotations_path).read_text(encoding="utf-8"))
        format_dist, reason_dist = evaluate_mod.breakdowns(notes, outcomes)
        write_text_atomic(
            out_dir / "breakdowns.json",
            json.dumps(
                {"format_distribution": format_dist, "reason_distribution": reason_dist},
                ensure_ascii=False,
                sort_keys=True,
                indent=2,
            )
            + "\n",
        )
        write_text_atomic(out_dir / "format_breakdown.csv",
                          evaluate_mod.format_breakdown_csv(format_dist))
        write_text_atomic(out_dir / "reason_breakdown.csv",
                          evaluate_mod.reason_breakdown_csv(reason_dist))

    matched = report.matched
    click.echo(
        f"matched={matched} missed={report.missed} hallucinated={report.hallucinated} "
        f"recall={evaluate_mod.NO_MATCH if report.recall is None else f'{report.recall:.3f}'} "
        f"precision={evaluate_mod.NO_MATCH if report.precision is None else f'{report.precision:.3f}'}"
    )


if __name__ == "__main__":
    main()
