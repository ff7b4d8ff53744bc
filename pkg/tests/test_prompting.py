from __future__ import annotations

import json

import pytest

from paperextract import (
    MISSING,
    Number,
    Text,
    build_chunked_prompts,
    build_prompt,
    load_bundled_exemplar,
    parse_tei,
    render_exemplar,
)
from paperextract.corpus import DocumentModel, Section
from paperextract.errors import ConfigurationError, ValidationError
from paperextract.prompting import (
    CHUNKED,
    ONE_SHOT,
    ZERO_SHOT,
    Exemplar,
    PromptBundle,
    load_instruction_template,
    load_role_text,
)

from conftest import GOLDEN_DIR, extracted_row, make_schema


def tiny_doc(doc_id="10.1/doc", text="Some body text."):
    return DocumentModel(
        doc_id=doc_id,
        title="Tiny title",
        abstract="Tiny abstract.",
        sections=(Section("Body", (text,), 0),),
        tables=(),
        year=2020,
    )


class TestGoldenPrompts:
    @pytest.mark.parametrize("name", ["mpea", "diffusion"])
    def test_zero_shot_matches_golden(self, name, request):
        schema = request.getfixturevalue(f"{name}_schema")
        tei_text = request.getfixturevalue(f"{name}_tei_text")
        doc = parse_tei(tei_text)
        prompt = build_prompt(schema, doc, ZERO_SHOT).full_text()
        golden = (GOLDEN_DIR / f"{name}_zero_shot.txt").read_text(encoding="utf-8")
        assert prompt == golden

    @pytest.mark.parametrize("name", ["mpea", "diffusion"])
    def test_one_shot_matches_golden(self, name, request):
        schema = request.getfixturevalue(f"{name}_schema")
        tei_text = request.getfixturevalue(f"{name}_tei_text")
        doc = parse_tei(tei_text)
        exemplar = load_bundled_exemplar(name, schema)
        prompt = build_prompt(schema, doc, ONE_SHOT, exemplar=exemplar).full_text()
        golden = (GOLDEN_DIR / f"{name}_one_shot.txt").read_text(encoding="utf-8")
        assert prompt == golden


class TestBuildPrompt:
    def test_zero_shot_layout(self, mpea_schema):
        doc = tiny_doc()
        bundle = build_prompt(mpea_schema, doc, ZERO_SHOT)
        text = bundle.full_text()
        assert text.startswith(load_role_text())
        assert text.count("Tiny abstract.") == 1
        assert '"high entropy alloy formula": {"type": "string"}' in text
        assert bundle.doc_id == "10.1/doc"
        assert bundle.mode == ZERO_SHOT

    def test_one_shot_repeats_instructions(self, mpea_schema):
        doc = tiny_doc()
        exemplar = Exemplar("EXEMPLAR INPUT", '[{"high entropy alloy formula": "X"}]')
        text = build_prompt(mpea_schema, doc, ONE_SHOT, exemplar=exemplar).full_text()
        # instruction preamble appears around the exemplar and again for the target
        assert text.count("Extract all information relating to every High Entropy Alloys") == 2
        assert text.index("EXEMPLAR INPUT") < text.index('[{"high entropy alloy formula": "X"}]')
        assert text.index('[{"high entropy alloy formula": "X"}]') < text.index("Tiny abstract.")

    def test_exemplar_mode_mismatch(self, mpea_schema):
        doc = tiny_doc()
        with pytest.raises(ConfigurationError):
            build_prompt(mpea_schema, doc, ONE_SHOT)
        with pytest.raises(ConfigurationError):
            build_prompt(mpea_schema, doc, ZERO_SHOT, exemplar=Exemplar("a", "b"))
        with pytest.raises(ConfigurationError):
            build_prompt(mpea_schema, doc, CHUNKED)

    def test_tuple_exemplar_accepted(self, mpea_schema):
        doc = tiny_doc()
        bundle = build_prompt(mpea_schema, doc, ONE_SHOT, exemplar=("in", "out"))
        assert bundle.exemplar == Exemplar("in", "out")

    def test_document_braces_survive(self, mpea_schema):
        doc = tiny_doc(text="weird literal {schema} and {text} in a paper")
        text = build_prompt(mpea_schema, doc, ZERO_SHOT).full_text()
        assert "weird literal {schema} and {text} in a paper" in text

    def test_generic_template_for_unknown_schema_name(self):
        schema = make_schema()
        template = load_instruction_template(schema.name)
        assert "{text}" in template and "{schema}" in template
        assert "tiny" in template


class TestBundleInvariants:
    def test_chunk_index_requires_chunked(self, mpea_schema):
        doc = tiny_doc()
        bundle = build_prompt(mpea_schema, doc, ZERO_SHOT)
        with pytest.raises(ConfigurationError):
            PromptBundle(
                role_text=bundle.role_text,
                instruction_text=bundle.instruction_text,
                instruction_template=bundle.instruction_template,
                schema_text=bundle.schema_text,
                target_text=bundle.target_text,
                mode=ZERO_SHOT,
                doc_id=bundle.doc_id,
                chunk_index=0,
            )

    def test_unknown_mode_rejected(self, mpea_schema):
        doc = tiny_doc()
        with pytest.raises(ConfigurationError):
            build_prompt(mpea_schema, doc, "few_shot")


class TestChunkedPrompts:
    def test_short_doc_single_bundle(self, mpea_schema):
        bundles = build_chunked_prompts(mpea_schema, tiny_doc())
        assert len(bundles) == 1
        assert bundles[0].chunk_index == 0
        assert bundles[0].mode == CHUNKED

    def test_long_doc_multiple_bundles_cover_text(self, mpea_schema):
        words = " ".join(f"w{i}" for i in range(450))
        doc = tiny_doc(text=words)
        bundles = build_chunked_prompts(mpea_schema, doc, chunk_size=200, overlap_fraction=0.05)
        assert len(bundles) > 1
        assert [b.chunk_index for b in bundles] == list(range(len(bundles)))
        assert "w449" in bundles[-1].instruction_text

    def test_fields_block_lists_descriptions(self, mpea_schema):
        bundle = build_chunked_prompts(mpea_schema, tiny_doc())[0]
        assert "- yield strength: Yield strength, in MPa" in bundle.instruction_text
        assert bundle.schema_text.splitlines()[0] == (
            "- high entropy alloy formula: Composition of the alloy"
        )

    def test_full_text_is_role_plus_instruction(self, mpea_schema):
        bundle = build_chunked_prompts(mpea_schema, tiny_doc())[0]
        assert bundle.full_text() == f"{bundle.role_text}\n\n{bundle.instruction_text}"


class TestRenderExemplar:
    def test_expected_output_shape(self, mpea_schema):
        doc = tiny_doc()
        rec = extracted_row(
            "r0", doc.doc_id,
            {
                "high entropy alloy formula": Text("AlCrFeNi"),
                "yield strength": Number(1350.0, "MPa"),
            },
        )
        exemplar = render_exemplar(mpea_schema, doc, [rec])
        payload = json.loads(exemplar.expected_output)
        assert isinstance(payload, list) and len(payload) == 1
        entry = payload[0]
        # every schema field present, in schema order, missing token filled in
        assert list(entry) == [f.name for f in mpea_schema.fields]
        assert entry["high entropy alloy formula"] == "AlCrFeNi"
        assert entry["yield strength"] == 1350.0
        assert entry["hardness"] == "No information"
        assert exemplar.input_text.startswith("Tiny title")

    def test_unknown_field_rejected(self, mpea_schema):
        doc = tiny_doc()
        rec = extracted_row("r0", doc.doc_id, {"mystery": Text("x")})
        with pytest.raises(ValidationError, match="mystery"):
            render_exemplar(mpea_schema, doc, [rec])

    def test_bundled_exemplars_load(self, mpea_schema, diffusion_schema):
        mpea = load_bundled_exemplar("mpea", mpea_schema)
        assert '"high entropy alloy formula": "NbMoTaWVCr"' in mpea.expected_output
        assert '"hardness": 1072.0' in mpea.expected_output
        assert '"experimental density": "No information"' in mpea.expected_output
        diffusion = load_bundled_exemplar("diffusion", diffusion_schema)
        assert '"diffusivity": 1.35e-07' in diffusion.expected_output
        assert '"SiO2": 80.6793201360426' in diffusion.expected_output

    def test_unknown_bundle_rejected(self, mpea_schema):
        with pytest.raises(ConfigurationError):
            load_bundled_exemplar("nope", mpea_schema)
