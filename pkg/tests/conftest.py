import numpy as np
import pytest

from logadapt.corpus import RawLogRecord
from logadapt.embedding import EventEmbedding
from logadapt.sequencing import EmbeddingTable, LogSequence


def make_records(timestamps, anomalous=None, contents=None):
    anomalous = anomalous or [False] * len(timestamps)
    contents = contents or [f"event {i}" for i in range(len(timestamps))]
    return [
        RawLogRecord(
            line_no=i,
            timestamp=float(t),
            alert_tag="-" if not a else "ALERT",
            content=c,
            is_anomalous=a,
            raw=f"{'-' if not a else 'ALERT'} {t} {c}",
        )
        for i, (t, a, c) in enumerate(zip(timestamps, anomalous, contents))
    ]


def class_separated_table(dimension: int, seed: int, scale: float = 3.0) -> EmbeddingTable:
    """20 template embeddings: ids 0-9 cluster one way, 10-19 the other."""
    rng = np.random.Generator(np.random.PCG64(seed))
    axis = rng.standard_normal(dimension)
    axis /= np.linalg.norm(axis)
    rows = {}
    for tid in range(20):
        sign = 1.0 if tid < 10 else -1.0
        vec = sign * scale * axis + 0.3 * rng.standard_normal(dimension)
        rows[tid] = EventEmbedding(tid, vec, "test")
    return EmbeddingTable(rows)


def synthetic_embedded_windows(
    count: int,
    window_size: int = 8,
    dimension: int = 16,
    seed: int = 0,
    origin: str = "source",
    scale: float = 3.0,
):
    """Alternating-class windows over a class-separated embedding table."""
    table = class_separated_table(dimension, seed, scale)
    rng = np.random.Generator(np.random.PCG64(seed + 1))
    windows = []
    for k in range(count):
        label = k % 2
        lo, hi = (0, 10) if label == 0 else (10, 20)
        events = rng.integers(lo, hi, size=window_size).tolist()
        windows.append(
            LogSequence(
                events=events,
                label=label,
                origin=origin,
                window_index=k,
                time_span=(float(k), float(k + window_size - 1)),
                table=table,
            )
        )
    return windows


@pytest.fixture(scope="session")
def fixture_logs(tmp_path_factory):
    """Small synthetic source/target pair shared by the pipeline tests."""
    from logadapt.synthetic import generate_fixture

    directory = tmp_path_factory.mktemp("fixture-logs")
    source_path, target_path, stats = generate_fixture(directory, lines=6000, seed=11)
    return source_path, target_path, stats


@pytest.fixture(scope="session")
def small_campaign(fixture_logs):
    """Prepared campaign data plus a desk config with quick schedules."""
    from logadapt.corpus import load_labeled_log
    from logadapt.evaluation import build_campaign_data, desk_config

    source_path, target_path, _ = fixture_logs
    cfg = desk_config(
        epochs=12,
        batch_size=128,
        d_w=16,
        encoder_hidden=16,
        classifier_input=16,
        rounds=2,
        active_ratio=0.02,
        encoder_refresh_epochs=4,
        finetune_epochs=8,
        seed=5,
    )
    source = load_labeled_log(source_path, "alert-prefix")
    target = load_labeled_log(target_path, "alert-prefix")
    data, artifacts = build_campaign_data(source, target, cfg)
    return data, cfg, artifacts
