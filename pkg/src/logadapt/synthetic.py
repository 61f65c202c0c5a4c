"""Seeded synthetic log corpora for two systems with disjoint vocabularies.

The generator writes alert-prefix log files that exercise the full
pipeline: each system has its own token vocabulary (every token carries the
system prefix, so nothing is shared lexically), a skewed mix of normal
message patterns dominated by a few chatty ones, and anomaly episodes in
which one of several rare error patterns bursts for a stretch of lines.
The two systems share the anomaly *shape* (bursty rare patterns inside a
redundant normal stream) while differing in vocabulary and anomaly rate,
which is exactly the regime a cross-system detector has to survive.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

_SYLLABLES = [
    "ba", "ce", "di", "fo", "gu", "ha", "ki", "lo", "mu", "ne",
    "pa", "qi", "ro", "su", "ta", "ve", "wo", "xi", "yo", "zu",
]


@dataclass
class SystemSpec:
    prefix: str
    lines: int = 100_000
    n_normal_patterns: int = 24
    n_dominant: int = 3
    dominant_share: float = 0.6
    n_anomaly_patterns: int = 8
    episode_rate: float = 0.004
    episode_lines: tuple[int, int] = (12, 40)
    episode_density: float = 0.7
    start_time: float = 1_000_000.0
    alert_tag: str = "HWERR"


def _word(rng: np.random.Generator, prefix: str) -> str:
    n = int(rng.integers(2, 4))
    return prefix + "".join(rng.choice(_SYLLABLES) for _ in range(n))


def _patterns(rng: np.random.Generator, prefix: str, count: int) -> list[list[str]]:
    """Each pattern is a token skeleton; None marks a parameter slot."""
    vocab = [_word(rng, prefix) for _ in range(max(30, count * 3))]
    patterns = []
    for _ in range(count):
        length = int(rng.integers(4, 9))
        skeleton: list[str | None] = [str(rng.choice(vocab)) for _ in range(length)]
        for _ in range(int(rng.integers(1, 3))):
            skeleton[int(rng.integers(0, length))] = None
        patterns.append(skeleton)
    return patterns


def _render(pattern: list[str | None], rng: np.random.Generator) -> str:
    out = []
    for token in pattern:
        if token is None:
            out.append(str(int(rng.integers(0, 100_000))))
        else:
            out.append(token)
    return " ".join(out)


def write_synthetic_log(path: str | Path, spec: SystemSpec, seed: int) -> dict:
    """Write one system's alert-prefix log file; returns generation stats."""
    rng = np.random.Generator(np.random.PCG64(seed))
    normal = _patterns(rng, spec.prefix, spec.n_normal_patterns)
    anomalous = _patterns(rng, spec.prefix + "err", spec.n_anomaly_patterns)

    weights = np.ones(spec.n_normal_patterns)
    weights[: spec.n_dominant] = (
        spec.dominant_share
        / max(spec.n_dominant, 1)
        * (spec.n_normal_patterns - spec.n_dominant)
        / (1.0 - spec.dominant_share)
    )
    weights /= weights.sum()

    lines = []
    n_anomalous = 0
    episode_left = 0
    episode_pattern = 0
    for i in range(spec.lines):
        ts = int(spec.start_time + i)
        if episode_left == 0 and rng.random() < spec.episode_rate:
            episode_left = int(rng.integers(spec.episode_lines[0], spec.episode_lines[1] + 1))
            episode_pattern = int(rng.integers(0, spec.n_anomaly_patterns))
        if episode_left > 0:
            episode_left -= 1
            if rng.random() < spec.episode_density:
                lines.append(f"{spec.alert_tag} {ts} {_render(anomalous[episode_pattern], rng)}")
                n_anomalous += 1
                continue
        k = int(rng.choice(spec.n_normal_patterns, p=weights))
        lines.append(f"- {ts} {_render(normal[k], rng)}")

    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")
    return {
        "lines": spec.lines,
        "anomalous_lines": n_anomalous,
        "anomaly_rate": n_anomalous / spec.lines,
    }


def default_pair(lines: int = 100_000) -> tuple[SystemSpec, SystemSpec]:
    """Source/target system specs used by the desk-scale experiments.

    The source system is richer in anomalies; the target stream is mostly
    redundant normal traffic with rarer, more varied anomaly bursts.
    """
    source = SystemSpec(
        prefix="aur",
        lines=lines,
        n_normal_patterns=24,
        n_dominant=3,
        dominant_share=0.5,
        n_anomaly_patterns=8,
        episode_rate=0.008,
        episode_lines=(12, 40),
        episode_density=0.7,
        start_time=1_000_000.0,
    )
    target = SystemSpec(
        prefix="zep",
        lines=lines,
        n_normal_patterns=20,
        n_dominant=3,
        dominant_share=0.65,
        n_anomaly_patterns=10,
        episode_rate=0.003,
        episode_lines=(10, 36),
        episode_density=0.7,
        start_time=2_000_000.0,
    )
    return source, target


def generate_fixture(
    directory: str | Path, lines: int = 100_000, seed: int = 7
) -> tuple[Path, Path, dict]:
    """Write the standard source/target fixture pair into a directory."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    source_spec, target_spec = default_pair(lines)
    source_path = directory / "source.log"
    target_path = directory / "target.log"
    stats = {
        "source": write_synthetic_log(source_path, source_spec, seed),
        "target": write_synthetic_log(target_path, target_spec, seed + 1),
    }
    return source_path, target_path, stats
