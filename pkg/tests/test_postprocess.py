from __future__ import annotations

import json
import random

import pytest
from hypothesis import given
from hypothesis import strategies as st

from paperextract import (
    MISSING,
    Number,
    Text,
    is_missing,
    merge_chunk_records,
    parse_lenient_json,
    strip_fences,
    to_records,
)
from paperextract.errors import CoercionError, LenientJsonError, StructureError
from paperextract.postprocess import (
    Provenance,
    cell_from_json,
    cell_to_json,
    count_fenced_blocks,
    dump_records_jsonl,
    load_records_jsonl,
    record_from_dict,
    record_to_dict,
    scan_bare_json,
)

from conftest import extracted_row, make_schema, random_json_value

# Single entry of the one-shot exemplar output as it circulates in the wild:
# single-quoted values, escaped slashes, inconsistent spacing.
RAW_MPEA_EXEMPLAR = """{
    "high entropy alloy formula": 'NbMoTaWVCr',
    "microstructure":'BCC+Laves+Sec.',
    "processing method":'POWDER',
    "BCC\\/FCC\\/other":'other',
    "grain size": 0.54,
    "experimental density": 'No information',
    "hardness": 1072.0,
    "type of test":'C',
    "test temperature": 25.0,
    "yield strength": 'No information',
    "ultimate tensile strength": 'No information',
    "elongation": 'No information',
    "elongation plastic": 'No information',
    "experimental young modulus": 'No information',
    "oxygen content": 7946.0,
    "nitrogen content": 'No information',
    "carbon content": 'No information'
}"""

RAW_DIFFUSION_EXEMPLAR = """{
    "melt": "NCMAS6",
    "diffusing species": "Fe",
    "type of experiment": "electrochemistry",
    "test temperature": 1573.15,
    "pressure": "No information",
    "diffusivity": 1.35e-07,
    "SiO2": 80.6793201360426,
    "TiO2": "No information",
    "Al2O3": 0.0,
    "FeOt": "No information",
    "MnO": "No information",
    "MgO": 0.0,
    "CaO": 14.11921335907197,
    "Na2O": 5.201466504885413,
    "K2O": "No information",
    "P2O5": "No information",
    "H2Ot": "No information"
}"""


class TestStripFences:
    def test_plain_fenced_block(self):
        assert strip_fences("```json\n[{}]\n```") == "[{}]"

    def test_no_fence_passthrough(self):
        assert strip_fences('[{"a": 1}]') == '[{"a": 1}]'

    def test_prose_around_fence(self):
        text = "Here you go:\n```json\n[1]\n```\nDone."
        assert strip_fences(text) == "[1]"

    def test_unclosed_fence_passthrough(self):
        text = "```json\n[1]"
        assert strip_fences(text) == text

    def test_language_tag_variants(self):
        assert strip_fences("```\n{}\n```") == "{}"
        assert strip_fences("   ```json\n{}\n   ```") == "{}"

    def test_multiline_payload_preserved(self):
        assert strip_fences("```json\n[\n  1,\n  2\n]\n```") == "[\n  1,\n  2\n]"

    def test_idempotent_on_examples(self):
        for text in ["```json\n[{}]\n```", "plain", "a\n```x\nb\n```\nc", "```\n\n```"]:
            once = strip_fences(text)
            assert strip_fences(once) == once

    @given(st.text(alphabet="`\nab j[]{}", max_size=60))
    def test_idempotent_property(self, text):
        once = strip_fences(text)
        assert strip_fences(once) == once

    def test_count_fenced_blocks(self):
        assert count_fenced_blocks("no fences") == 0
        assert count_fenced_blocks("```\na\n```") == 1
        assert count_fenced_blocks("```\na\n```\nand\n```\nb\n```") == 2


class TestScanBareJson:
    def test_prose_wrapped_array(self):
        assert scan_bare_json('The result is [1, 2, {"a": "]"}] as requested.') == (
            '[1, 2, {"a": "]"}]'
        )

    def test_no_json_passthrough(self):
        assert scan_bare_json("nothing here") == "nothing here"

    def test_unbalanced_passthrough(self):
        text = "starts [1, 2"
        assert scan_bare_json(text) == text


class TestParseLenientJson:
    def test_line_comments(self):
        assert parse_lenient_json('// header\n[1, 2] // tail') == [1, 2]

    def test_block_comments(self):
        assert parse_lenient_json('[1, /* middle */ 2]') == [1, 2]

    def test_trailing_commas(self):
        assert parse_lenient_json('[1, 2,]') == [1, 2]
        assert parse_lenient_json('{"a": 1,}') == {"a": 1}
        assert parse_lenient_json('{"a": [1, 2, ], }') == {"a": [1, 2]}

    def test_trailing_comma_before_comment(self):
        assert parse_lenient_json('[1, 2, // done\n]') == [1, 2]

    def test_comment_markers_inside_strings_untouched(self):
        assert parse_lenient_json('{"url": "http://x/*y*/z"}') == {"url": "http://x/*y*/z"}
        assert parse_lenient_json('["a // not a comment"]') == ["a // not a comment"]

    def test_single_quoted_strings(self):
        assert parse_lenient_json("{'a': 'b'}") == {"a": "b"}
        assert parse_lenient_json("['it\\'s']") == ["it's"]
        assert parse_lenient_json("['say \"hi\"']") == ['say "hi"']

    def test_mpea_exemplar_entry_verbatim(self):
        parsed = parse_lenient_json(RAW_MPEA_EXEMPLAR)
        assert parsed["high entropy alloy formula"] == "NbMoTaWVCr"
        assert parsed["BCC/FCC/other"] == "other"
        assert parsed["grain size"] == 0.54
        assert parsed["hardness"] == 1072.0
        assert parsed["oxygen content"] == 7946.0
        assert parsed["carbon content"] == "No information"

    def test_diffusion_exemplar_entry_verbatim(self):
        parsed = parse_lenient_json(RAW_DIFFUSION_EXEMPLAR)
        assert parsed["diffusivity"] == 1.35e-07
        assert parsed["SiO2"] == 80.6793201360426
        assert parsed["pressure"] == "No information"

    def test_prose_raises_with_offset(self):
        with pytest.raises(LenientJsonError) as err:
            parse_lenient_json("hello world")
        assert err.value.offset >= 0

    def test_unterminated_block_comment_treated_as_tail(self):
        assert parse_lenient_json('[1] /* never closed') == [1]

    def test_strict_json_unchanged(self):
        doc = {"a": [1, 2.5, None, True, "x // y"], "b": {"c": "/*"}}
        assert parse_lenient_json(json.dumps(doc)) == doc

    def test_differential_against_stdlib(self):
        rng = random.Random(20240817)
        for _ in range(500):
            doc = random_json_value(rng)
            text = json.dumps(doc)
            assert parse_lenient_json(text) == doc


class TestToRecords:
    def test_array_of_objects(self):
        schema = make_schema(n_required=1, n_optional=1)
        prov = Provenance("run1", "zero_shot")
        records, warnings = to_records(
            [{"r1": "a", "o1": "b"}, {"r1": "c"}], schema, "10.1/d", prov
        )
        assert warnings == []
        assert [r.record_id for r in records] == ["10.1/d#r0", "10.1/d#r1"]
        assert records[0].cells == {"r1": Text("a"), "o1": Text("b")}
        assert is_missing(records[1].cells["o1"])
        assert records[0].provenance == prov

    def test_single_object_wrapped(self):
        schema = make_schema(n_required=1, n_optional=0)
        records, _ = to_records({"r1": "a"}, schema, "d", Provenance("r", "zero_shot"))
        assert len(records) == 1

    def test_missing_token_and_null(self):
        schema = make_schema(n_required=1, n_optional=1)
        records, _ = to_records(
            [{"r1": "No information", "o1": None}], schema, "d", Provenance("r", "zero_shot")
        )
        assert is_missing(records[0].cells["r1"])
        assert is_missing(records[0].cells["o1"])

    def test_unknown_key_dropped_with_warning(self):
        schema = make_schema(n_required=1, n_optional=0)
        records, warnings = to_records(
            [{"r1": "a", "extra": 5}], schema, "d", Provenance("r", "zero_shot")
        )
        assert "extra" not in records[0].cells
        assert any("extra" in w for w in warnings)

    def test_structure_errors(self):
        schema = make_schema()
        prov = Provenance("r", "zero_shot")
        with pytest.raises(StructureError):
            to_records(5, schema, "d", prov)
        with pytest.raises(StructureError):
            to_records("text", schema, "d", prov)
        with pytest.raises(StructureError):
            to_records([{"r1": "a"}, 7], schema, "d", prov)

    def test_empty_array_is_empty(self):
        schema = make_schema()
        records, warnings = to_records([], schema, "d", Provenance("r", "zero_shot"))
        assert records == [] and warnings == []

    def test_coercion_error_propagates_by_default(self):
        schema = make_schema(n_required=1, n_optional=1, kind="number")
        with pytest.raises(CoercionError):
            to_records([{"r1": "not a number"}], schema, "d", Provenance("r", "zero_shot"))

    def test_coerce_invalid_to_missing_downgrades(self):
        schema = make_schema(n_required=1, n_optional=1, kind="number")
        records, warnings = to_records(
            [{"r1": "not a number", "o1": 2}],
            schema,
            "d",
            Provenance("r", "zero_shot"),
            coerce_invalid_to_missing=True,
        )
        assert is_missing(records[0].cells["r1"])
        assert records[0].cells["o1"] == Number(2.0, None)
        assert len(warnings) == 1

    def test_chunk_index_in_record_id(self):
        schema = make_schema(n_required=1, n_optional=0)
        records, _ = to_records(
            [{"r1": "a"}], schema, "d", Provenance("r", "chunked", chunk_index=3)
        )
        assert records[0].record_id == "d#c3-r0"


class TestMergeChunkRecords:
    def make(self, cells, chunk, rid="x"):
        return extracted_row(rid, "doc", cells, mode="chunked", chunk_index=chunk)

    def test_missing_filled_from_later_chunk(self):
        schema = make_schema(n_required=1, n_optional=2)
        a = self.make({"r1": Text("id"), "o1": Text("v1")}, 0, "a")
        b = self.make({"r1": Text("id"), "o2": Text("v2")}, 1, "b")
        merged, warnings = merge_chunk_records([[a], [b]], schema)
        assert len(merged) == 1
        assert merged[0].cells["o1"] == Text("v1")
        assert merged[0].cells["o2"] == Text("v2")
        assert merged[0].record_id == "a"
        assert warnings == []

    def test_conflict_keeps_earlier_and_warns(self, mpea_schema):
        a = extracted_row(
            "a", "doc",
            {
                "high entropy alloy formula": Text("AlCrFeNi"),
                "yield strength": Number(1350.0, "MPa"),
                "grain size": Number(0.5, "um"),
            },
            mode="chunked", chunk_index=0,
        )
        b = extracted_row(
            "b", "doc",
            {
                "high entropy alloy formula": Text("AlCrFeNi"),
                "yield strength": Number(1350.0, "MPa"),
                "grain size": Number(0.6, "um"),
            },
            mode="chunked", chunk_index=1,
        )
        merged, warnings = merge_chunk_records([[a], [b]], mpea_schema)
        assert len(merged) == 1
        assert merged[0].cells["grain size"] == Number(0.5, "um")
        assert len(warnings) == 1
        assert "grain size" in warnings[0]

    def test_same_chunk_never_merges(self):
        schema = make_schema(n_required=1, n_optional=1)
        a = self.make({"r1": Text("id")}, 0, "a")
        b = self.make({"r1": Text("id")}, 0, "b")
        merged, _ = merge_chunk_records([[a, b]], schema)
        assert len(merged) == 2

    def test_required_disagreement_stays_separate(self):
        schema = make_schema(n_required=1, n_optional=1)
        a = self.make({"r1": Text("one")}, 0, "a")
        b = self.make({"r1": Text("two")}, 1, "b")
        merged, _ = merge_chunk_records([[a], [b]], schema)
        assert len(merged) == 2

    def test_required_missing_never_merges(self):
        schema = make_schema(n_required=1, n_optional=1)
        a = self.make({"r1": Text("one")}, 0, "a")
        b = self.make({"o1": Text("x")}, 1, "b")
        merged, _ = merge_chunk_records([[a], [b]], schema)
        assert len(merged) == 2

    def test_merge_idempotent(self):
        schema = make_schema(n_required=1, n_optional=3)
        rows = [
            [self.make({"r1": Text("id"), "o1": Text("p")}, 0, "a")],
            [self.make({"r1": Text("id"), "o2": Text("q")}, 1, "b")],
            [self.make({"r1": Text("id"), "o3": Text("s")}, 2, "c")],
        ]
        merged, _ = merge_chunk_records(rows, schema)
        again, warnings = merge_chunk_records([merged], schema)
        assert again == merged
        assert warnings == []

    def test_three_way_merge_tracks_chunks(self):
        schema = make_schema(n_required=1, n_optional=2)
        rows = [
            [self.make({"r1": Text("id"), "o1": Text("p")}, 0, "a")],
            [self.make({"r1": Text("id")}, 1, "b")],
            [self.make({"r1": Text("id"), "o2": Text("q")}, 2, "c")],
        ]
        merged, _ = merge_chunk_records(rows, schema)
        assert len(merged) == 1
        assert merged[0].cells["o1"] == Text("p")
        assert merged[0].cells["o2"] == Text("q")


class TestSerialization:
    def test_cell_round_trip(self):
        for cell in (MISSING, Text("x"), Number(1.5, "MPa"), Number(2.0, None)):
            assert cell_from_json(cell_to_json(cell)) == cell

    def test_missing_serializes_to_null(self):
        assert cell_to_json(MISSING) is None

    def test_record_round_trip(self, mpea_schema):
        rec = extracted_row(
            "10.1/d#r0", "10.1/d",
            {
                "high entropy alloy formula": Text("AlCrFeNi"),
                "yield strength": Number(1350.0, "MPa"),
                "hardness": MISSING,
            },
            chunk_index=None,
        )
        assert record_from_dict(record_to_dict(rec)) == rec

    def test_jsonl_round_trip_preserves_order(self):
        schema = make_schema(n_required=1, n_optional=1)
        records, _ = to_records(
            [{"r1": "a"}, {"r1": "b"}, {"r1": "c"}], schema, "d", Provenance("r", "zero_shot")
        )
        text = dump_records_jsonl(records)
        assert text.count("\n") == 3
        assert load_records_jsonl(text) == records
