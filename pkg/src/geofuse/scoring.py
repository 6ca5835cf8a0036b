"""Composite evaluation scores and strict CSV round-tripping.

Driving sub-scores live as fractions in [0, 1] inside the package and as
0-100 values at every file/CLI boundary. Floats are serialized with 17
significant digits so a written CSV parses back bit-identically.
"""

from __future__ import annotations

import csv
import math
from collections.abc import Mapping, Sequence
from dataclasses import dataclass
from pathlib import Path

from .errors import ValidationError


@dataclass(frozen=True)
class SubScores:
    """Per-scenario driving sub-scores as fractions.

    nc: no collision; dac: drivable-area compliance; ep: ego progress;
    ttc: time-to-collision; comfort: ride comfort.
    """

    nc: float
    dac: float
    ep: float
    ttc: float
    comfort: float

    def __post_init__(self):
        for name in ("nc", "dac", "ep", "ttc", "comfort"):
            v = getattr(self, name)
            if not (isinstance(v, (int, float)) and math.isfinite(v)):
                raise ValidationError(f"sub-score {name} must be finite, got {v!r}")
            if not (0.0 <= v <= 1.0):
                raise ValidationError(f"sub-score {name} must lie in [0, 1], got {v}")


def pdms(s: SubScores) -> float:
    """Gated weighted driving score: nc * dac * (5*ep + 5*ttc + 2*comfort) / 12.

    Either gate at zero forces the score to zero; all-ones scores 1.
    """
    return s.nc * s.dac * (5.0 * s.ep + 5.0 * s.ttc + 2.0 * s.comfort) / 12.0


def pdms_aggregate(scores: Sequence[SubScores]) -> float:
    """Mean of per-scenario scores. Not the score of mean sub-scores."""
    if not scores:
        raise ValidationError("pdms_aggregate needs at least one scenario")
    return sum(pdms(s) for s in scores) / len(scores)


def _require(row: Mapping[str, float], key: str, lo: float, hi: float) -> float:
    if key not in row:
        raise ValidationError(f"missing metric column {key!r}")
    v = row[key]
    if not (isinstance(v, (int, float)) and math.isfinite(v)):
        raise ValidationError(f"metric {key!r} must be finite, got {v!r}")
    if not (lo <= v <= hi):
        raise ValidationError(f"metric {key!r} must lie in [{lo}, {hi}], got {v}")
    return float(v)


def avg_nuinstruct(row: Mapping[str, float]) -> float:
    """Four-metric composite on the 0-100 scale, clamped at zero.

    (accuracy + map + bleu - mae) / 4; the error term subtracts, and a
    negative composite reports as 0.
    """
    acc = _require(row, "accuracy", 0.0, 100.0)
    ap = _require(row, "map", 0.0, 100.0)
    bleu = _require(row, "bleu", 0.0, 100.0)
    mae = _require(row, "mae", 0.0, 100.0)
    return max((acc + ap + bleu - mae) / 4.0, 0.0)


AVG3_KEYS = ("bleu", "cider", "rouge")


def avg3(row: Mapping[str, float], keys: Sequence[str] = AVG3_KEYS) -> float:
    """Arithmetic mean of three caption metrics on the 0-100 scale."""
    if len(keys) != 3:
        raise ValidationError(f"avg3 needs exactly three keys, got {list(keys)}")
    return sum(_require(row, k, 0.0, 100.0) for k in keys) / 3.0


def pdms_from_percent_row(row: Mapping[str, float]) -> float:
    """0-100 CSV row -> fractions -> pdms -> 0-100."""
    s = SubScores(
        nc=_require(row, "nc", 0.0, 100.0) / 100.0,
        dac=_require(row, "dac", 0.0, 100.0) / 100.0,
        ep=_require(row, "ep", 0.0, 100.0) / 100.0,
        ttc=_require(row, "ttc", 0.0, 100.0) / 100.0,
        comfort=_require(row, "comfort", 0.0, 100.0) / 100.0,
    )
    return 100.0 * pdms(s)


METRICS = {
    "pdms": (pdms_from_percent_row, ("nc", "dac", "ep", "ttc", "comfort")),
    "avg4": (avg_nuinstruct, ("accuracy", "map", "bleu", "mae")),
    "avg3": (avg3, AVG3_KEYS),
}


# ---------------------------------------------------------------------------
# CSV helpers
# ---------------------------------------------------------------------------

def format_value(v) -> str:
    """Floats with 17 significant digits (bit-exact round trip), rest as str."""
    if isinstance(v, bool):
        return str(v)
    if isinstance(v, float):
        return f"{v:.17g}"
    return str(v)


def write_csv(path: str | Path, header: Sequence[str], rows: Sequence[Sequence]) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for row in rows:
            writer.writerow([format_value(v) for v in row])


def read_csv(path: str | Path) -> tuple[list[str], list[dict[str, str]]]:
    path = Path(path)
    if not path.exists():
        raise ValidationError(f"CSV file not found: {path}")
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ValidationError(f"CSV file is empty: {path}") from None
        rows = []
        for line_no, raw in enumerate(reader, start=2):
            if not raw:
                continue
            if len(raw) != len(header):
                raise ValidationError(f"{path}:{line_no}: {len(raw)} fields, expected {len(header)}")
            rows.append(dict(zip(header, raw)))
    if not rows:
        raise ValidationError(f"CSV file has a header but no rows: {path}")
    return header, rows


def _parse_metric_value(name: str, text: str) -> float:
    try:
        v = float(text)
    except ValueError:
        raise ValidationError(f"metric {name!r} is not a number: {text!r}") from None
    if not math.isfinite(v):
        raise ValidationError(f"metric {name!r} must be finite, got {text!r}")
    return v


def score_rows(metric: str, header: Sequence[str], rows: Sequence[Mapping[str, str]]) -> list[float]:
    """Apply one composite metric to parsed CSV rows."""
    if metric not in METRICS:
        raise ValidationError(f"unknown metric {metric!r}, expected one of {sorted(METRICS)}")
    fn, needed = METRICS[metric]
    for col in needed:
        if col not in header:
            raise ValidationError(f"input CSV is missing required column {col!r} for {metric}")
    out = []
    for row in rows:
        numeric = {k: _parse_metric_value(k, row[k]) for k in needed}
        out.append(fn(numeric))
    return out


def score_file(metric: str, in_path: str | Path, out_path: str | Path | None = None):
    """Score every row of a CSV; optionally write the input plus a metric column."""
    header, rows = read_csv(in_path)
    values = score_rows(metric, header, rows)
    if out_path is not None:
        out_header = list(header) + [metric]
        out_rows = [[row[c] for c in header] + [v] for row, v in zip(rows, values)]
        write_csv(out_path, out_header, out_rows)
    return header, rows, values
