"""Fixed-size event windows over embedded log streams.

A window of ``t`` consecutive events is the unit fed to the encoder; it is
labeled anomalous when any member record is. Windows are event-count
windows (window k covers records ``[k*stride, k*stride + t)``); the
trailing partial window is dropped.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .corpus import RawLogRecord
from .embedding import EventEmbedding
from .errors import ContractError, SnapshotError

SOURCE = "source"
TARGET = "target"

WINDOWS_FORMAT = "logadapt-windows"
WINDOWS_VERSION = 1


class EmbeddingTable:
    """Dense lookup from template id to embedding row."""

    def __init__(self, embeddings: dict[int, EventEmbedding]):
        ids = sorted(embeddings)
        self.dimension = embeddings[ids[0]].vector.shape[0] if ids else 0
        self._row_of = {tid: i for i, tid in enumerate(ids)}
        self.rows = (
            np.stack([embeddings[tid].vector for tid in ids])
            if ids
            else np.zeros((0, 0))
        )

    def matrix(self, events: list[int]) -> np.ndarray:
        return self.rows[[self._row_of[e] for e in events]]

    def batch(self, event_rows: np.ndarray) -> np.ndarray:
        """(B, t) int array of row indices -> (B, t, d) embedding tensor."""
        return self.rows[event_rows]

    def row_index(self, template_id: int) -> int:
        return self._row_of[template_id]


@dataclass
class LogSequence:
    events: list[int]
    label: int
    origin: str
    window_index: int
    time_span: tuple[float, float]
    table: EmbeddingTable | None = None

    @property
    def matrix(self) -> np.ndarray:
        if self.table is None:
            raise ContractError(f"window {self.window_index} has no embedding table attached")
        return self.table.matrix(self.events)


def build_windows(
    records: list[RawLogRecord],
    template_ids: list[int],
    embeddings: dict[int, EventEmbedding] | EmbeddingTable,
    window_size: int,
    stride: int,
    origin: str = SOURCE,
) -> list[LogSequence]:
    """Tile records into labeled windows of ``window_size`` events."""
    if window_size < 1 or stride < 1:
        raise ContractError(
            f"window_size and stride must be >= 1, got {window_size}, {stride}"
        )
    if len(records) != len(template_ids):
        raise ContractError(
            f"{len(records)} records but {len(template_ids)} template ids"
        )
    table = embeddings if isinstance(embeddings, EmbeddingTable) else EmbeddingTable(embeddings)

    windows: list[LogSequence] = []
    n = len(records)
    for k, start in enumerate(range(0, n - window_size + 1, stride)):
        chunk = records[start : start + window_size]
        windows.append(
            LogSequence(
                events=list(template_ids[start : start + window_size]),
                label=int(any(r.is_anomalous for r in chunk)),
                origin=origin,
                window_index=k,
                time_span=(chunk[0].timestamp, chunk[-1].timestamp),
                table=table,
            )
        )
    return windows


def pool_stats(windows: list[LogSequence]) -> dict[str, tuple[int, int]]:
    """Per-origin (normal, anomalous) window counts."""
    stats: dict[str, tuple[int, int]] = {}
    for w in windows:
        normal, anomalous = stats.get(w.origin, (0, 0))
        if w.label:
            anomalous += 1
        else:
            normal += 1
        stats[w.origin] = (normal, anomalous)
    return stats


def export_windows(windows: list[LogSequence], path: str | Path, digest: str = "") -> None:
    """Write one line per window: index, origin, label, template id list."""
    lines = [f"# format={WINDOWS_FORMAT} version={WINDOWS_VERSION} digest={digest}"]
    for w in windows:
        ids = ",".join(str(e) for e in w.events)
        lines.append(
            f"{w.window_index}\t{w.origin}\t{w.label}\t{ids}\t{w.time_span[0]!r}\t{w.time_span[1]!r}"
        )
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def import_windows(
    path: str | Path, table: EmbeddingTable | None = None
) -> list[LogSequence]:
    lines = Path(path).read_text(encoding="utf-8").splitlines()
    if not lines or not lines[0].startswith(f"# format={WINDOWS_FORMAT} "):
        raise SnapshotError(f"{path} is not a windowed-corpus export")
    windows = []
    for line in lines[1:]:
        if not line.strip():
            continue
        idx, origin, label, ids, t0, t1 = line.split("\t")
        windows.append(
            LogSequence(
                events=[int(x) for x in ids.split(",")] if ids else [],
                label=int(label),
                origin=origin,
                window_index=int(idx),
                time_span=(float(t0), float(t1)),
                table=table,
            )
        )
    return windows
