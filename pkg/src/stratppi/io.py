"""CSV ingestion and result emission."""

from __future__ import annotations

import csv
import json
import logging
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, TextIO

import numpy as np

from .core import DataError
from .sampling import Pool

log = logging.getLogger(__name__)

REPORT_FIELDS = ("method", "n", "coverage", "mean_width", "width_q16", "width_q84",
                 "percent_reduction", "effective_sample_size", "trials", "alpha", "seed")


@dataclass(frozen=True)
class EvaluationCsvRow:
    prediction: float
    label: float | None = None
    confidence: float | None = None
    stratum: int | None = None


def _parse_float(text: str, line: int, column: str) -> float | None:
    text = text.strip()
    if text == "":
        return None
    try:
        value = float(text)
    except ValueError:
        raise DataError(f"line {line}, column {column!r}: cannot parse {text!r} as a number") from None
    if not math.isfinite(value):
        raise DataError(f"line {line}, column {column!r}: non-finite value {text!r}")
    return value


def read_rows(path, binary: bool = False) -> list[EvaluationCsvRow]:
    """Parse an evaluation CSV into typed rows.

    Columns are matched by header name; ``prediction`` is required, ``label``,
    ``confidence`` and ``stratum`` are optional and an empty cell means
    missing. Extra columns are ignored.
    """
    rows = []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        header = [h.strip() for h in (reader.fieldnames or [])]
        if "prediction" not in header:
            raise DataError(f"{path}: missing required column 'prediction' (header: {header})")
        reader.fieldnames = header
        for line, raw in enumerate(reader, start=2):
            pred = _parse_float(raw.get("prediction") or "", line, "prediction")
            if pred is None:
                raise DataError(f"line {line}, column 'prediction': empty cell")
            label = _parse_float(raw.get("label") or "", line, "label")
            conf = _parse_float(raw.get("confidence") or "", line, "confidence")
            stratum = _parse_float(raw.get("stratum") or "", line, "stratum")
            if stratum is not None and stratum != int(stratum):
                raise DataError(f"line {line}, column 'stratum': {stratum!r} is not an integer")
            if binary:
                if label is not None and label not in (0.0, 1.0):
                    raise DataError(f"line {line}, column 'label': binary mode needs 0 or 1, got {label!r}")
                if not 0.0 <= pred <= 1.0:
                    raise DataError(f"line {line}, column 'prediction': binary mode needs [0, 1], got {pred!r}")
            if conf is not None and not 0.0 <= conf <= 1.0:
                raise DataError(f"line {line}, column 'confidence': must lie in [0, 1], got {conf!r}")
            rows.append(EvaluationCsvRow(pred, label, conf, None if stratum is None else int(stratum)))
    return rows


def rows_to_pool(rows: list[EvaluationCsvRow], binary: bool = False) -> Pool:
    if not rows:
        raise DataError("no data rows")
    label = np.array([np.nan if r.label is None else r.label for r in rows])
    pred = np.array([r.prediction for r in rows])
    confidence = stratum = None
    has_conf = [r.confidence is not None for r in rows]
    if any(has_conf):
        if not all(has_conf):
            raise DataError("the confidence column must be filled for every row or none")
        confidence = np.array([r.confidence for r in rows])
    has_stratum = [r.stratum is not None for r in rows]
    if any(has_stratum):
        if not all(has_stratum):
            raise DataError("the stratum column must be filled for every row or none")
        stratum = np.array([r.stratum for r in rows])
    return Pool(label=label, prediction=pred, confidence=confidence, stratum=stratum, binary=binary)


def load_csv(path, binary: bool = False) -> Pool:
    """Load an evaluation CSV as a :class:`Pool`; unlabeled rows carry NaN labels."""
    pool = rows_to_pool(read_rows(path, binary), binary)
    n_lab = int(pool.labeled_mask.sum())
    log.info("%s: %d rows, %d labeled, %d unlabeled", path, len(pool), n_lab, len(pool) - n_lab)
    return pool


def concat_pools(a: Pool, b: Pool) -> Pool:
    def _cat(x, y):
        if x is None and y is None:
            return None
        if x is None or y is None:
            raise DataError("labeled and unlabeled files must provide the same optional columns")
        return np.concatenate([x, y])

    return Pool(
        label=np.concatenate([a.label, b.label]),
        prediction=np.concatenate([a.prediction, b.prediction]),
        confidence=_cat(a.confidence, b.confidence),
        stratum=_cat(a.stratum, b.stratum),
        binary=a.binary,
    )


def write_pool_csv(pool: Pool, path) -> None:
    columns = ["label", "prediction"]
    if pool.confidence is not None:
        columns.append("confidence")
    if pool.stratum is not None:
        columns.append("stratum")
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(columns)
        for i in range(len(pool)):
            lab = pool.label[i]
            row = ["" if np.isnan(lab) else repr(float(lab)), repr(float(pool.prediction[i]))]
            if pool.confidence is not None:
                row.append(repr(float(pool.confidence[i])))
            if pool.stratum is not None:
                row.append(str(int(pool.stratum[i])))
            writer.writerow(row)


def write_records(records: Iterable[dict], out: TextIO, fmt: str = "jsonl",
                  fields=REPORT_FIELDS) -> None:
    """Write report records as JSON lines or CSV with a fixed column order."""
    if fmt == "jsonl":
        for rec in records:
            out.write(json.dumps({k: rec[k] for k in fields}) + "\n")
    elif fmt == "csv":
        writer = csv.DictWriter(out, fieldnames=list(fields), lineterminator="\n")
        writer.writeheader()
        for rec in records:
            writer.writerow({k: rec[k] for k in fields})
    else:
        raise ValueError(f"unknown output format {fmt!r}")


def open_output(path):
    if path in (None, "-"):
        import sys
        return _NoClose(sys.stdout)
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    return open(path, "w", newline="", encoding="utf-8")


class _NoClose:
    def __init__(self, stream):
        self._stream = stream

    def __enter__(self):
        return self._stream

    def __exit__(self, *exc):
        self._stream.flush()
        return False
