#!/usr/bin/env python3
"""Regenerate the golden prompt files under tests/data/goldens.

Run from the repo root after a deliberate prompt-layout change, then review
the diff before committing. The test suite compares assembled prompts
byte-for-byte against these files.
"""

from __future__ import annotations

from pathlib import Path

from paperextract import (
    build_prompt,
    load_bundled_exemplar,
    load_bundled_schema,
    parse_tei,
)

ROOT = Path(__file__).resolve().parent.parent
TEI_DIR = ROOT / "tests" / "data" / "tei"
GOLDEN_DIR = ROOT / "tests" / "data" / "goldens"


def main() -> None:
    GOLDEN_DIR.mkdir(parents=True, exist_ok=True)
    for name, tei_file in (("mpea", "mpea_target.xml"), ("diffusion", "diffusion_target.xml")):
        schema = load_bundled_schema(name)
        doc = parse_tei((TEI_DIR / tei_file).read_text(encoding="utf-8"))
        zero = build_prompt(schema, doc, "zero_shot").full_text()
        exemplar = load_bundled_exemplar(name, schema)
        one = build_prompt(schema, doc, "one_shot", exemplar=exemplar).full_text()
        (GOLDEN_DIR / f"{name}_zero_shot.txt").write_text(zero, encoding="utf-8")
        (GOLDEN_DIR / f"{name}_one_shot.txt").write_text(one, encoding="utf-8")
        print(f"{name}: zero_shot {len(zero)} bytes, one_shot {len(one)} bytes")


if __name__ == "__main__":
    main()
