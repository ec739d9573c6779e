"""Instruction-dataset records and JSONL ingestion.

The canonical on-disk form is alpaca-style JSON lines with keys
``instruction`` / ``input`` (optional) / ``output`` / ``id`` (optional).
Records keep the raw line they were parsed from so that a pruned dataset
can reproduce the selected records byte for byte.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field, replace

from .errors import DataError, IoError, TooManyMalformedLines
from .ioutil import atomic_write_text

MALFORMED_FRACTION_LIMIT = 0.10


@dataclass(frozen=True)
class SampleRecord:
    """One instruction-tuning example; ``response`` is the supervised label."""

    sample_id: str
    instruction: str
    response: str
    input: str = ""
    raw: str | None = field(default=None, compare=False)

    def __post_init__(self):
        if not self.sample_id:
            raise DataError("sample_id must be non-empty")
        if not self.response.strip():
            raise DataError(f"sample {self.sample_id!r}: response is empty after trimming")


@dataclass(frozen=True)
class MalformedLine:
    lineno: int
    reason: str


@dataclass(frozen=True)
class IngestResult:
    records: tuple[SampleRecord, ...]
    malformed: tuple[MalformedLine, ...]

    @property
    def ids(self) -> tuple[str, ...]:
        return tuple(r.sample_id for r in self.records)


def _parse_line(lineno: int, line: str, seen_ids: set) -> SampleRecord:
    try:
        obj = json.loads(line)
    except json.JSONDecodeError as e:
        raise DataError(f"invalid JSON: {e.msg}") from e
    if not isinstance(obj, dict):
        raise DataError(f"expected a JSON object, got {type(obj).__name__}")
    instruction = obj.get("instruction")
    if not isinstance(instruction, str):
        raise DataError("missing or non-string 'instruction'")
    output = obj.get("output")
    if not isinstance(output, str):
        raise DataError("missing or non-string 'output'")
    if not output.strip():
        raise DataError("empty 'output'")
    extra = obj.get("input", "")
    if extra is None:
        extra = ""
    if not isinstance(extra, str):
        raise DataError("non-string 'input'")
    sample_id = obj.get("id", f"line-{lineno}")
    if not isinstance(sample_id, str) or not sample_id:
        raise DataError("non-string or empty 'id'")
    if sample_id in seen_ids:
        raise DataError(f"duplicate sample id {sample_id!r}")
    return SampleRecord(
        sample_id=sample_id,
        instruction=instruction,
        response=output,
        input=extra,
        raw=line,
    )


def ingest_dataset(path) -> IngestResult:
    """Parse a JSONL dataset, collecting malformed lines instead of failing.

    Aborts with TooManyMalformedLines only when more than 10% of the
    non-empty lines are unusable.
    """
    try:
        with open(path, "r", encoding="utf-8") as fh:
            lines = fh.read().split("\n")
    except OSError as e:
        raise IoError(f"cannot read dataset {os.fspath(path)!r}: {e}") from e
    except UnicodeDecodeError as e:
        raise DataError(f"dataset {os.fspath(path)!r} is not valid UTF-8: {e}") from e

    records: list[SampleRecord] = []
    malformed: list[MalformedLine] = []
    seen_ids: set = set()
    n_nonempty = 0
    for lineno, line in enumerate(lines, 1):
        if not line.strip():
            continue
        n_nonempty += 1
        try:
            rec = _parse_line(lineno, line, seen_ids)
        except DataError as e:
            malformed.append(MalformedLine(lineno=lineno, reason=str(e)))
            continue
        seen_ids.add(rec.sample_id)
        records.append(rec)

    if n_nonempty and len(malformed) / n_nonempty > MALFORMED_FRACTION_LIMIT:
        raise TooManyMalformedLines(
            f"{len(malformed)} of {n_nonempty} lines are malformed "
            f"(threshold {MALFORMED_FRACTION_LIMIT:.0%}); first: "
            f"line {malformed[0].lineno}: {malformed[0].reason}",
            malformed=malformed,
        )
    return IngestResult(records=tuple(records), malformed=tuple(malformed))


def record_to_json(record: SampleRecord) -> str:
    """Canonical single-line JSON for a record without a raw source line."""
    obj = {"id": record.sample_id, "instruction": record.instruction}
    if record.input:
        obj["input"] = record.input
    obj["output"] = record.response
    return json.dumps(obj, ensure_ascii=False)


def dataset_lines(records) -> str:
    """JSONL text for records, reusing raw source lines where available."""
    out = []
    for rec in records:
        out.append(rec.raw if rec.raw is not None else record_to_json(rec))
        out.append("\n")
    return "".join(out)


def write_dataset(path, records) -> None:
    atomic_write_text(path, dataset_lines(records))


def strip_raw(record: SampleRecord) -> SampleRecord:
    """Record with the raw line dropped (used once text has been altered)."""
    return replace(record, raw=None)
