"""Raw log ingestion and temporally disjoint train/test splitting.

Two on-disk layouts are supported:

* ``alert-prefix`` -- BGL/Thunderbird style: the first whitespace token of a
  line is an alert tag, ``-`` meaning a normal line and anything else an
  alert; the second token is an epoch timestamp and the rest is the message.
* ``sidecar-labels`` -- the raw lines carry no alert column (Zookeeper
  style); labels come from a companion file of ``<line_no> <0|1>`` lines,
  where line_no indexes the non-empty lines of the log file from 0.
"""

from __future__ import annotations

import datetime
import json
from dataclasses import dataclass, field
from pathlib import Path

from .errors import ContractError, IngestionError, LabelingError, SnapshotError, SplitError

FORMATS = ("alert-prefix", "sidecar-labels")

NORMAL_TAG = "-"

# Severity tokens used when deriving a default sidecar from bare log lines.
_SEVERE_LEVELS = ("ERROR", "FATAL")


@dataclass(frozen=True)
class RawLogRecord:
    """One log line with its ground-truth label."""

    line_no: int
    timestamp: float
    alert_tag: str | None
    content: str
    is_anomalous: bool
    raw: str = ""


@dataclass
class CorpusSplit:
    """Temporally disjoint train/test partition of one corpus."""

    train: list[RawLogRecord]
    test: list[RawLogRecord]
    gap_seconds: float
    ratio: float
    dropped: list[RawLogRecord] = field(default_factory=list)


def _parse_timestamp(token: str) -> float | None:
    try:
        return float(token)
    except ValueError:
        return None


def _parse_datetime_prefix(tokens: list[str]) -> float | None:
    # "2015-07-29 17:41:41,648" style prefixes seen in service logs.
    if len(tokens) < 2:
        return None
    stamp = tokens[0] + " " + tokens[1].split(",")[0]
    try:
        dt = datetime.datetime.strptime(stamp, "%Y-%m-%d %H:%M:%S")
    except ValueError:
        return None
    return dt.replace(tzinfo=datetime.timezone.utc).timestamp()


def _read_lines(path: str | Path) -> list[str]:
    try:
        text = Path(path).read_text(encoding="utf-8", errors="replace")
    except OSError as exc:
        raise IngestionError(f"cannot read log file {path}: {exc}") from exc
    return [line for line in text.splitlines() if line.strip()]


def load_sidecar(path: str | Path) -> dict[int, bool]:
    """Read a ``<line_no> <0|1>`` sidecar label file."""
    labels: dict[int, bool] = {}
    for raw in _read_lines(path):
        parts = raw.split()
        if len(parts) != 2 or parts[1] not in ("0", "1"):
            raise LabelingError(f"malformed sidecar line in {path}: {raw!r}")
        labels[int(parts[0])] = parts[1] == "1"
    return labels


def derive_default_sidecar(log_path: str | Path, sidecar_path: str | Path) -> int:
    """Write a sidecar that marks ERROR/FATAL level lines anomalous.

    Returns the number of lines labeled anomalous. This is a convenience for
    corpora whose raw lines carry a severity level but no alert column; the
    produced file stays an ordinary, editable sidecar.
    """
    lines = _read_lines(log_path)
    out = []
    n_anomalous = 0
    for i, line in enumerate(lines):
        tokens = line.split()
        severe = any(level in tokens for level in _SEVERE_LEVELS)
        n_anomalous += int(severe)
        out.append(f"{i} {1 if severe else 0}")
    Path(sidecar_path).write_text("\n".join(out) + "\n", encoding="utf-8")
    return n_anomalous


def load_labeled_log(
    path: str | Path,
    format: str,
    sidecar: str | Path | None = None,
) -> list[RawLogRecord]:
    """Load one raw log file into labeled records, preserving file order.

    Timestamps that fail to parse inherit the previous record's timestamp
    (0.0 for the very first line) so downstream splits stay monotone.
    """
    if format not in FORMATS:
        raise ContractError(f"unknown corpus format {format!r}; expected one of {FORMATS}")

    lines = _read_lines(path)
    sidecar_labels: dict[int, bool] | None = None
    if format == "sidecar-labels":
        if sidecar is None:
            raise LabelingError(f"format sidecar-labels requires a sidecar file for {path}")
        sidecar_labels = load_sidecar(sidecar)

    records: list[RawLogRecord] = []
    prev_ts = 0.0
    for line_no, line in enumerate(lines):
        if format == "alert-prefix":
            parts = line.split(maxsplit=2)
            alert_tag = parts[0]
            ts = _parse_timestamp(parts[1]) if len(parts) > 1 else None
            content = parts[2] if len(parts) > 2 else ""
            anomalous = alert_tag != NORMAL_TAG
        else:
            tokens = line.split()
            alert_tag = None
            ts = _parse_timestamp(tokens[0]) if tokens else None
            if ts is not None:
                content = line.split(maxsplit=1)[1] if len(tokens) > 1 else ""
            else:
                ts = _parse_datetime_prefix(tokens)
                content = line.split(maxsplit=2)[2] if ts is not None and len(tokens) > 2 else line
            assert sidecar_labels is not None
            if line_no not in sidecar_labels:
                raise LabelingError(f"sidecar {sidecar} has no label for line {line_no}")
            anomalous = sidecar_labels[line_no]
        if ts is None:
            ts = prev_ts
        prev_ts = ts
        records.append(
            RawLogRecord(
                line_no=line_no,
                timestamp=ts,
                alert_tag=alert_tag,
                content=content,
                is_anomalous=anomalous,
                raw=line,
            )
        )
    return records


def temporal_split(
    records: list[RawLogRecord],
    ratio: float,
    gap_seconds: float = 60.0,
) -> CorpusSplit:
    """Split time-ordered records into train/test with a quarantine gap.

    The first ``round(ratio * N)`` records (clamped so both sides are
    non-empty) form the train side; test-side records whose timestamp falls
    within ``gap_seconds`` of the last train timestamp are dropped, never
    reassigned.
    """
    if not 0.0 < ratio < 1.0:
        raise ContractError(f"ratio must be in (0,1), got {ratio}")
    if gap_seconds < 0:
        raise ContractError(f"gap_seconds must be non-negative, got {gap_seconds}")
    if len(records) < 2:
        raise SplitError(f"need at least 2 records to split, got {len(records)}")
    for a, b in zip(records, records[1:]):
        if b.timestamp < a.timestamp:
            raise ContractError(
                f"records not timestamp-sorted at line {b.line_no} "
                f"({b.timestamp} < {a.timestamp})"
            )

    n = len(records)
    n_train = min(max(round(ratio * n), 1), n - 1)
    train = records[:n_train]
    cutoff = train[-1].timestamp + gap_seconds
    dropped = [r for r in records[n_train:] if r.timestamp < cutoff]
    test = [r for r in records[n_train:] if r.timestamp >= cutoff]
    if not test:
        raise SplitError(
            f"gap of {gap_seconds}s starting at t={train[-1].timestamp} consumed all "
            f"{n - n_train} test records"
        )
    return CorpusSplit(train=train, test=test, gap_seconds=gap_seconds, ratio=ratio, dropped=dropped)


RECORDS_FORMAT = "logadapt-records"


def save_records(records: list[RawLogRecord], path: str | Path, digest: str = "") -> None:
    """Cache a record list as header + JSON lines for stage-wise CLI runs."""
    lines = [f"# format={RECORDS_FORMAT} version=1 digest={digest}"]
    for r in records:
        lines.append(
            json.dumps(
                {
                    "line_no": r.line_no,
                    "ts": r.timestamp,
                    "tag": r.alert_tag,
                    "content": r.content,
                    "anomalous": r.is_anomalous,
                    "raw": r.raw,
                }
            )
        )
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def load_records(path: str | Path) -> list[RawLogRecord]:
    lines = Path(path).read_text(encoding="utf-8").splitlines()
    if not lines or not lines[0].startswith(f"# format={RECORDS_FORMAT} "):
        raise SnapshotError(f"{path} is not a cached record file")
    records = []
    for line in lines[1:]:
        if not line.strip():
            continue
        d = json.loads(line)
        records.append(
            RawLogRecord(
                line_no=d["line_no"],
                timestamp=d["ts"],
                alert_tag=d["tag"],
                content=d["content"],
                is_anomalous=d["anomalous"],
                raw=d.get("raw", ""),
            )
        )
    return records
