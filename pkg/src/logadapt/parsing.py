"""Streaming log template mining with a fixed-depth parse tree.

Lines are first masked (hex ids, IPv4 addresses, bare numbers become the
wildcard token ``<*>``), then routed through a shallow tree keyed by token
count and leading tokens. Each leaf holds candidate templates; a line joins
the most similar one at or above the similarity threshold, rewriting any
differing positions to the wildcard, or starts a new template.

Similarity is the fraction of position-wise equal tokens over the token
count. A match additionally requires at least one equal non-wildcard
position, so no template can ever degrade to all wildcards; lines whose
tokens are all wildcards (or empty) route to a single designated fallback
template instead.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field
from pathlib import Path

from .errors import SnapshotError

WILDCARD = "<*>"

SNAPSHOT_FORMAT = "logadapt-miner-snapshot"
SNAPSHOT_VERSION = 1

# Ordered masking rules applied to raw content before tokenization.
MASK_PATTERNS: tuple[tuple[str, re.Pattern], ...] = (
    ("hex-literal", re.compile(r"\b0[xX][0-9a-fA-F]+\b")),
    ("long-hex-id", re.compile(r"\b[0-9a-fA-F]{8,}\b")),
    ("ipv4", re.compile(r"\b\d{1,3}(?:\.\d{1,3}){3}\b")),
    ("number", re.compile(r"\b\d+\b")),
)


@dataclass(frozen=True)
class MinerConfig:
    tree_depth: int = 4
    similarity_threshold: float = 0.4
    max_children: int = 100

    def __post_init__(self):
        if self.tree_depth < 3:
            raise ValueError(f"tree_depth must be >= 3, got {self.tree_depth}")
        if not 0.0 < self.similarity_threshold <= 1.0:
            raise ValueError(
                f"similarity_threshold must be in (0,1], got {self.similarity_threshold}"
            )
        if self.max_children < 2:
            raise ValueError(f"max_children must be >= 2, got {self.max_children}")


@dataclass
class LogTemplate:
    template_id: int
    tokens: list[str]
    example_line: str
    match_count: int = 0

    def render(self) -> str:
        return " ".join(self.tokens)


def mask_parameters(content: str) -> str:
    for _, pattern in MASK_PATTERNS:
        content = pattern.sub(WILDCARD, content)
    return content


def tokenize(content: str) -> list[str]:
    return mask_parameters(content).split()


@dataclass
class _Node:
    children: dict[str, "_Node"] = field(default_factory=dict)
    template_ids: list[int] = field(default_factory=list)


class TemplateMiner:
    """Single-writer template miner; one instance per log-producing system.

    ``parse_record`` mutates the tree and must be externally serialized;
    read-only accessors are safe once no writer is active.
    """

    def __init__(self, config: MinerConfig | None = None):
        self.config = config or MinerConfig()
        self._root = _Node()
        self._templates: list[LogTemplate] = []
        self._by_id: dict[int, LogTemplate] = {}
        self._fallback_id: int | None = None
        self._parse_calls = 0

    # -- mining ---------------------------------------------------------

    def parse_record(self, content: str) -> int:
        self._parse_calls += 1
        tokens = tokenize(content)
        if not tokens or all(t == WILDCARD for t in tokens):
            return self._match_fallback(content)

        leaf = self._route(tokens, create=True)
        assert leaf is not None
        best = self._best_match(leaf, tokens)
        if best is None:
            template = self._new_template(tokens, content)
            leaf.template_ids.append(template.template_id)
            template.match_count += 1
            return template.template_id
        for i, token in enumerate(tokens):
            if best.tokens[i] != token:
                best.tokens[i] = WILDCARD
        best.match_count += 1
        return best.template_id

    def _match_fallback(self, content: str) -> int:
        if self._fallback_id is None:
            template = self._new_template([WILDCARD], content)
            self._fallback_id = template.template_id
        template = self._by_id[self._fallback_id]
        template.match_count += 1
        return template.template_id

    def _route(self, tokens: list[str], create: bool) -> _Node | None:
        node = self._root
        keys = [str(len(tokens))]
        for depth in range(self.config.tree_depth - 2):
            if depth >= len(tokens):
                break
            token = tokens[depth]
            keys.append(WILDCARD if any(c.isdigit() for c in token) else token)
        for key in keys:
            child = node.children.get(key)
            if child is None:
                if key != WILDCARD and len(node.children) >= self.config.max_children - 1:
                    key = WILDCARD
                    child = node.children.get(key)
                if child is None:
                    if not create:
                        return None
                    child = _Node()
                    node.children[key] = child
            node = child
        return node

    def _best_match(self, leaf: _Node, tokens: list[str]) -> LogTemplate | None:
        best: LogTemplate | None = None
        best_sim = -1.0
        for tid in leaf.template_ids:
            template = self._by_id[tid]
            if len(template.tokens) != len(tokens):
                continue
            equal = sum(a == b for a, b in zip(template.tokens, tokens))
            literal_hits = sum(
                a == b and a != WILDCARD for a, b in zip(template.tokens, tokens)
            )
            sim = equal / len(tokens)
            if sim >= self.config.similarity_threshold and literal_hits >= 1 and sim > best_sim:
                best, best_sim = template, sim
        return best

    def _new_template(self, tokens: list[str], example: str) -> LogTemplate:
        template = LogTemplate(
            template_id=len(self._templates), tokens=list(tokens), example_line=example
        )
        self._templates.append(template)
        self._by_id[template.template_id] = template
        return template

    # -- accessors ------------------------------------------------------

    def templates(self) -> list[LogTemplate]:
        return [
            LogTemplate(t.template_id, list(t.tokens), t.example_line, t.match_count)
            for t in self._templates
        ]

    def template(self, template_id: int) -> LogTemplate:
        t = self._by_id[template_id]
        return LogTemplate(t.template_id, list(t.tokens), t.example_line, t.match_count)

    @property
    def parse_calls(self) -> int:
        return self._parse_calls

    # -- persistence ----------------------------------------------------

    def snapshot(self, path: str | Path) -> None:
        def encode(node: _Node) -> dict:
            out: dict = {"children": {k: encode(v) for k, v in node.children.items()}}
            if node.template_ids:
                out["templates"] = list(node.template_ids)
            return out

        payload = {
            "format": SNAPSHOT_FORMAT,
            "version": SNAPSHOT_VERSION,
            "config": {
                "tree_depth": self.config.tree_depth,
                "similarity_threshold": self.config.similarity_threshold,
                "max_children": self.config.max_children,
            },
            "parse_calls": self._parse_calls,
            "fallback_id": self._fallback_id,
            "templates": [
                {
                    "id": t.template_id,
                    "tokens": t.tokens,
                    "example": t.example_line,
                    "count": t.match_count,
                }
                for t in self._templates
            ],
            "tree": encode(self._root),
        }
        Path(path).write_text(json.dumps(payload, indent=1), encoding="utf-8")

    @classmethod
    def restore(cls, path: str | Path) -> "TemplateMiner":
        try:
            payload = json.loads(Path(path).read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError) as exc:
            raise SnapshotError(f"cannot load miner snapshot {path}: {exc}") from exc
        if not isinstance(payload, dict) or payload.get("format") != SNAPSHOT_FORMAT:
            raise SnapshotError(f"{path} is not a miner snapshot")
        if payload.get("version") != SNAPSHOT_VERSION:
            raise SnapshotError(
                f"snapshot version {payload.get('version')} unsupported "
                f"(expected {SNAPSHOT_VERSION})"
            )

        def decode(data: dict) -> _Node:
            node = _Node()
            node.template_ids = list(data.get("templates", []))
            node.children = {k: decode(v) for k, v in data.get("children", {}).items()}
            return node

        try:
            miner = cls(MinerConfig(**payload["config"]))
            miner._parse_calls = payload["parse_calls"]
            miner._fallback_id = payload["fallback_id"]
            for entry in payload["templates"]:
                t = LogTemplate(entry["id"], list(entry["tokens"]), entry["example"], entry["count"])
                miner._templates.append(t)
                miner._by_id[t.template_id] = t
            miner._root = decode(payload["tree"])
        except (KeyError, TypeError, ValueError) as exc:
            raise SnapshotError(f"malformed miner snapshot {path}: {exc}") from exc
        return miner
