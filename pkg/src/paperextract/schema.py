"""Extraction schemas, cell values, value normalization, and unit conversion.

A schema is an ordered list of named fields. Each field is either text or
number; number fields may carry a canonical unit. Cell values are Number,
Text, or the Missing sentinel (distinct from empty text).
"""

from __future__ import annotations

import json
import math
import re
from dataclasses import dataclass
from importlib.resources import files

from .errors import CoercionError, ConfigParseError, ConversionError, ValidationError
from .util import collapse_ws

TEXT = "text"
NUMBER = "number"
KINDS = (TEXT, NUMBER)

VARIANCE_CLASSES = ("identifier", "related", "low_variance", "high_variance")

DEFAULT_MISSING_TOKEN = "No information"


@dataclass(frozen=True)
class _MissingType:
    def __repr__(self) -> str:
        return "Missing"

    def __bool__(self) -> bool:
        return False


MISSING = _MissingType()


@dataclass(frozen=True)
class Number:
    value: float
    unit: str | None = None


@dataclass(frozen=True)
class Text:
    value: str


CellValue = Number | Text | _MissingType


def is_missing(value: CellValue) -> bool:
    return isinstance(value, _MissingType)


@dataclass(frozen=True)
class FieldSpec:
    name: str
    kind: str
    description: str = ""
    unit: str | None = None
    variance_class: str = "related"
    required_for_match: bool = False

    def __post_init__(self) -> None:
        if not self.name or not self.name.strip():
            raise ValidationError("field name must be non-empty")
        if self.kind not in KINDS:
            raise ValidationError(f"field {self.name!r}: unknown kind {self.kind!r}")
        if self.variance_class not in VARIANCE_CLASSES:
            raise ValidationError(
                f"field {self.name!r}: unknown variance class {self.variance_class!r}"
            )
        if self.unit is not None and self.kind != NUMBER:
            raise ValidationError(f"field {self.name!r}: unit set on a text field")


@dataclass(frozen=True)
class ExtractionSchema:
    name: str
    fields: tuple[FieldSpec, ...]
    required_match_fields: tuple[str, ...]
    missing_token: str = DEFAULT_MISSING_TOKEN

    def __post_init__(self) -> None:
        if not self.name:
            raise ValidationError("schema name must be non-empty")
        if not self.fields:
            raise ValidationError("schema must declare at least one field")
        names = [f.name for f in self.fields]
        dupes = sorted({n for n in names if names.count(n) > 1})
        if dupes:
            raise ValidationError(f"duplicate field names: {dupes}")
        if not self.required_match_fields:
            raise ValidationError("required_match_fields must be non-empty")
        unknown = [n for n in self.required_match_fields if n not in names]
        if unknown:
            raise ValidationError(f"required_match_fields not in schema: {unknown}")
        for f in self.fields:
            if f.required_for_match != (f.name in self.required_match_fields):
                raise ValidationError(
                    f"field {f.name!r}: required_for_match flag disagrees with "
                    "required_match_fields"
                )

    @classmethod
    def build(
        cls,
        name: str,
        fields: list[FieldSpec] | tuple[FieldSpec, ...],
        required_match_fields: list[str] | tuple[str, ...],
        missing_token: str = DEFAULT_MISSING_TOKEN,
    ) -> "ExtractionSchema":
        """Construct with required_for_match flags derived from the name list."""
        required = tuple(required_match_fields)
        flagged = tuple(
            FieldSpec(
                name=f.name,
                kind=f.kind,
                description=f.description,
                unit=f.unit,
                variance_class=f.variance_class,
                required_for_match=f.name in required,
            )
            for f in fields
        )
        return cls(name=name, fields=flagged, required_match_fields=required,
                   missing_token=missing_token)

    @property
    def field_map(self) -> dict[str, FieldSpec]:
        return {f.name: f for f in self.fields}

    def field_named(self, name: str) -> FieldSpec:
        for f in self.fields:
            if f.name == name:
                return f
        raise KeyError(name)


def load_schema(config_text: str) -> ExtractionSchema:
    """Parse a schema config (JSON text) into an ExtractionSchema.

    Raises ConfigParseError on malformed JSON and ValidationError on
    structural problems (zero fields, duplicate names, unknown required
    fields, bad kind or variance class).
    """
    try:
        raw = json.loads(config_text)
    except json.JSONDecodeError as exc:
        raise ConfigParseError(
            f"schema config is not valid JSON: {exc.msg} (line {exc.lineno}, column {exc.colno})"
        ) from exc
    if not isinstance(raw, dict):
        raise ValidationError("schema config must be a JSON object")
    name = raw.get("name")
    if not isinstance(name, str) or not name:
        raise ValidationError("schema config needs a non-empty 'name'")
    raw_fields = raw.get("fields")
    if not isinstance(raw_fields, list) or not raw_fields:
        raise ValidationError("schema config needs a non-empty 'fields' list")
    fields = []
    for i, rf in enumerate(raw_fields):
        if not isinstance(rf, dict):
            raise ValidationError(f"fields[{i}] must be an object")
        fields.append(
            FieldSpec(
                name=rf.get("name", ""),
                kind=rf.get("kind", ""),
                description=rf.get("description", ""),
                unit=rf.get("unit"),
                variance_class=rf.get("variance_class", "related"),
            )
        )
    required = raw.get("required_match_fields")
    if not isinstance(required, list) or not required:
        raise ValidationError("schema config needs a non-empty 'required_match_fields' list")
    missing_token = raw.get("missing_token", DEFAULT_MISSING_TOKEN)
    if not isinstance(missing_token, str) or not missing_token:
        raise ValidationError("'missing_token' must be a non-empty string")
    return ExtractionSchema.build(name, fields, required, missing_token)


def load_bundled_schema(name: str) -> ExtractionSchema:
    """Load one of the schema configs shipped with the package ('mpea', 'diffusion')."""
    resource = files("paperextract") / "data" / "schemas" / f"{name}.json"
    try:
        text = resource.read_text(encoding="utf-8")
    except (FileNotFoundError, OSError) as exc:
        raise ValidationError(f"no bundled schema named {name!r}") from exc
    return load_schema(text)


def render_schema(schema: ExtractionSchema) -> str:
    """Render the schema as the JSON-shaped block embedded in prompts.

    One field per line, insertion order, stable across runs.
    """
    lines = ["{"]
    last = len(schema.fields) - 1
    for i, f in enumerate(schema.fields):
        type_token = "float" if f.kind == NUMBER else "string"
        comma = "," if i != last else ""
        lines.append(f'    "{f.name}": {{"type": "{type_token}"}}{comma}')
    lines.append("}")
    return "\n".join(lines)


_NUMBER_WITH_UNIT = re.compile(
    r"^\s*([+-]?(?:\d+(?:,\d{3})*(?:\.\d*)?|\.\d+)(?:[eE][+-]?\d+)?)\s*(\S*)\s*$"
)


def _parse_numeric_string(field_name: str, raw: str) -> tuple[float, str | None]:
    stripped = raw.strip()
    if not stripped:
        raise CoercionError(field_name, raw, "empty string")
    # plain float() accepts "nan"/"inf"; those are not data
    try:
        value = float(stripped)
        if not math.isfinite(value):
            raise CoercionError(field_name, raw, "non-finite")
        return value, None
    except ValueError:
        pass
    m = _NUMBER_WITH_UNIT.match(stripped)
    if not m:
        raise CoercionError(field_name, raw)
    number_part, unit_part = m.group(1), m.group(2)
    try:
        value = float(number_part.replace(",", ""))
    except ValueError as exc:
        raise CoercionError(field_name, raw) from exc
    if not math.isfinite(value):
        raise CoercionError(field_name, raw, "non-finite")
    return value, unit_part or None


def normalize_value(
    spec: FieldSpec,
    raw: object,
    *,
    missing_token: str = DEFAULT_MISSING_TOKEN,
) -> CellValue:
    """Coerce a raw JSON payload to this field's cell value.

    None and the missing token (case-insensitive, trimmed) become Missing.
    Number fields accept ints, floats, numeric strings (scientific notation
    included), and "number unit" strings; the trailing unit token wins over
    the field's canonical unit. Anything else raises CoercionError. Text
    fields stringify and collapse whitespace.
    """
    if raw is None or is_missing(raw):
        return MISSING
    if isinstance(raw, str) and raw.strip().lower() == missing_token.strip().lower():
        return MISSING
    if spec.kind == NUMBER:
        if isinstance(raw, bool):
            raise CoercionError(spec.name, raw, "boolean")
        if isinstance(raw, (int, float)):
            if not math.isfinite(raw):
                raise CoercionError(spec.name, raw, "non-finite")
            return Number(float(raw), spec.unit)
        if isinstance(raw, str):
            value, unit = _parse_numeric_string(spec.name, raw)
            return Number(value, unit if unit is not None else spec.unit)
        raise CoercionError(spec.name, raw)
    if isinstance(raw, bool):
        return Text("true" if raw else "false")
    if isinstance(raw, (int, float)):
        return Text(repr(raw))
    if isinstance(raw, str):
        return Text(collapse_ws(raw))
    raise CoercionError(spec.name, raw, "not a scalar")


# Closed unit table. Linear units map (group, scale-to-canonical); the
# canonical unit of each group has scale 1. Temperature is affine and the
# log10 diffusivity form is handled specially.
_LINEAR_UNITS: dict[str, tuple[str, float]] = {
    "m2/s": ("diffusivity", 1.0),
    "cm2/s": ("diffusivity", 1e-4),
    "um2/s": ("diffusivity", 1e-12),
    "MPa": ("stress", 1.0),
    "GPa": ("stress", 1e3),
}
_LOG_DIFFUSIVITY = "log10(m2/s)"
_TEMPERATURES = ("C", "K")


def _unit_group(unit: str) -> str | None:
    if unit in _LINEAR_UNITS:
        return _LINEAR_UNITS[unit][0]
    if unit == _LOG_DIFFUSIVITY:
        return "diffusivity"
    if unit in _TEMPERATURES:
        return "temperature"
    return None


def units_convertible(from_unit: str, to_unit: str) -> bool:
    if from_unit == to_unit:
        return True
    ga, gb = _unit_group(from_unit), _unit_group(to_unit)
    return ga is not None and ga == gb


def convert_unit(value: float, from_unit: str, to_unit: str) -> float:
    """Convert between units of one dimension group; identity when equal.

    Raises ConversionError for pairs outside the closed table and for
    domain errors (log of a non-positive diffusivity, overflow).
    """
    if from_unit == to_unit:
        return value
    if not units_convertible(from_unit, to_unit):
        raise ConversionError(f"unsupported conversion {from_unit!r} -> {to_unit!r}")
    group = _unit_group(from_unit)
    if group == "temperature":
        return value + 273.15 if from_unit == "C" else value - 273.15
    # to canonical
    if from_unit == _LOG_DIFFUSIVITY:
        try:
            canonical = 10.0 ** value
        except OverflowError as exc:
            raise ConversionError(f"log10 value {value} overflows") from exc
    else:
        canonical = value * _LINEAR_UNITS[from_unit][1]
    # from canonical
    if to_unit == _LOG_DIFFUSIVITY:
        if canonical <= 0.0:
            raise ConversionError(f"cannot take log10 of non-positive value {canonical}")
        return math.log10(canonical)
    return canonical / _LINEAR_UNITS[to_unit][1]
