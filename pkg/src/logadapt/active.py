"""Active adaptation campaign: score, select, label, fine-tune, repeat.

Each round scores the remaining unlabeled target pool with the current
classifier, keeps the top slice by free energy (vectors least like anything
already fit), then picks the round quota of most uncertain vectors within
that slice -- by default the ones with the smallest |P(V,0) - P(V,1)| gap,
i.e. where the classifier separates the classes worst. The selected windows
go to an oracle (ground truth in experiments, a human through the labeling
service); the labels move windows into the labeled pool, the encoder gets a
joint refresh over source plus all labeled target windows, and the
classifier fine-tunes with the energy-alignment penalty.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .config import ExperimentConfig, config_digest, derive_seed
from .encoder import (
    EncoderParams,
    DiscriminatorParams,
    TrainSchedule,
    encode_matrix,
    init_discriminator,
    init_encoder,
    train_encoder,
)
from .energy import (
    ClassifierParams,
    SelectionScore,
    export_scores,
    finetune,
    init_classifier,
    predict_matrix,
    score_pool,
    train_source,
)
from .errors import ContractError, SnapshotError, TrainingError
from .metrics import MetricsReport, compute_metrics
from .sequencing import LogSequence

VARIANTS = ("full", "wt", "wa", "wu", "we")

STATE_FORMAT = "logadapt-campaign-state"

SKIP = "skip"


# -- selection ---------------------------------------------------------------


def sample_selection(
    scores: list[SelectionScore],
    first_ratio: float,
    quota: int,
    order: str = "least_margin",
) -> list[SelectionScore]:
    """Two-stage pick: top free-energy slice, then the quota by uncertainty.

    Stage 1 keeps the ceil(first_ratio * n) highest free energies; stage 2
    keeps the ``quota`` most uncertain of those (smallest probability gap
    under ``least_margin``, largest under ``literal_max_U``). All ties break
    by ascending window index.
    """
    if not scores:
        raise ContractError("selection over an empty pool")
    if not 0 < first_ratio <= 1:
        raise ContractError(f"first_ratio must be in (0,1], got {first_ratio}")
    stage1_size = math.ceil(first_ratio * len(scores))
    if not 1 <= quota <= stage1_size:
        raise ContractError(
            f"quota {quota} outside [1, {stage1_size}] for pool of {len(scores)}"
        )
    if order not in ("least_margin", "literal_max_U"):
        raise ContractError(f"unknown uncertainty order {order!r}")

    stage1 = sorted(scores, key=lambda s: (-s.free_energy, s.window_index))[:stage1_size]
    if order == "least_margin":
        stage2 = sorted(stage1, key=lambda s: (s.uncertainty, s.window_index))
    else:
        stage2 = sorted(stage1, key=lambda s: (-s.uncertainty, s.window_index))
    return stage2[:quota]


def select_for_labeling(
    psi: ClassifierParams,
    pool_vectors: np.ndarray,
    window_indices: list[int],
    first_ratio: float,
    quota: int,
    order: str = "least_margin",
    probability_mode: str = "ratio",
) -> list[SelectionScore]:
    scores = score_pool(psi, pool_vectors, window_indices, mode=probability_mode)
    return sample_selection(scores, first_ratio, quota, order)


# -- labeling ----------------------------------------------------------------


@dataclass
class QueryItem:
    query_id: str
    window_index: int
    raw_lines: list[str]
    template_views: list[dict]
    score: SelectionScore
    round: int
    status: str = "pending"  # pending | labeled | skipped
    label: int | None = None
    labeler_id: str | None = None


class GroundTruthOracle:
    """Answers every query immediately from the corpus labels."""

    def __init__(self, truth: dict[int, int]):
        self.truth = truth

    def label_query(self, query: QueryItem) -> int:
        return self.truth[query.window_index]


class InteractiveOracle:
    """Defers every query to the labeling service; rounds suspend until
    humans resolve the pending queue."""

    def label_query(self, query: QueryItem) -> None:
        return None


@dataclass
class CampaignState:
    original_pool_size: int
    budget: float
    first_ratio: float
    round: int = 0
    labeled_target: dict[int, int] = field(default_factory=dict)
    unlabeled_target: list[int] = field(default_factory=list)
    pending_queries: list[QueryItem] = field(default_factory=list)
    history: list[dict] = field(default_factory=list)

    @property
    def round_quota(self) -> int:
        return max(1, math.floor(self.budget * self.original_pool_size))


@dataclass
class CampaignData:
    """Prepared windows for one source -> target experiment."""

    source_train: list[LogSequence]
    target_pool: list[LogSequence]
    target_test: list[LogSequence]
    target_raw_lines: dict[int, list[str]] = field(default_factory=dict)
    template_renders: dict[int, str] = field(default_factory=dict)


class CampaignDriver:
    """Owns one campaign end to end; the single logical writer of its state."""

    def __init__(
        self,
        data: CampaignData,
        cfg: ExperimentConfig,
        variant: str = "full",
        experiment_id: str = "campaign",
        run_dir: str | Path | None = None,
    ):
        if variant not in VARIANTS:
            raise ContractError(f"unknown variant {variant!r}; expected one of {VARIANTS}")
        if cfg.classifier_input != cfg.encoder_hidden:
            raise ContractError(
                f"classifier_input ({cfg.classifier_input}) must equal encoder_hidden "
                f"({cfg.encoder_hidden}): the classifier consumes encoder outputs"
            )
        if not data.target_pool:
            raise ContractError("target sample pool is empty")
        self.data = data
        self.cfg = cfg
        self.variant = variant
        self.experiment_id = experiment_id
        self.run_dir = Path(run_dir) if run_dir else None
        self.digest = config_digest(cfg)
        self.state = CampaignState(
            original_pool_size=len(data.target_pool),
            budget=cfg.active_ratio,
            first_ratio=cfg.first_sample_ratio,
            unlabeled_target=[w.window_index for w in data.target_pool],
        )
        self.theta: EncoderParams | None = None
        self.phi: DiscriminatorParams | None = None
        self.psi: ClassifierParams | None = None
        self.metrics: list[MetricsReport] = []
        self.score_tables: dict[int, list[SelectionScore]] = {}
        self._pool_by_index = {w.window_index: w for w in data.target_pool}
        self._row_of_index = {w.window_index: row for row, w in enumerate(data.target_pool)}
        self._truth = {w.window_index: w.label for w in data.target_pool}
        self._query_seq = 0
        self._v_source = self._v_pool = self._v_test = None
        if self.run_dir:
            self.run_dir.mkdir(parents=True, exist_ok=True)

    # -- helpers ------------------------------------------------------------

    def _schedule(self, stage: str, epochs: int) -> TrainSchedule:
        return TrainSchedule(
            epochs=epochs,
            batch_size=self.cfg.batch_size,
            learning_rate=self.cfg.learning_rate,
            seed=derive_seed(self.cfg.seed, stage),
        )

    def _encode_array(self, windows: list[LogSequence]) -> np.ndarray:
        assert self.theta is not None
        if not windows:
            return np.zeros((0, self.theta.hidden_dim))
        chunks = []
        for start in range(0, len(windows), 1024):
            block = windows[start : start + 1024]
            chunks.append(encode_matrix(self.theta, np.stack([w.matrix for w in block])))
        return np.concatenate(chunks)

    def _reencode(self) -> None:
        # wt never touches source windows or vectors at all
        source = [] if self.variant == "wt" else self.data.source_train
        self._v_source = self._encode_array(source)
        self._v_pool = self._encode_array(self.data.target_pool)
        self._v_test = self._encode_array(self.data.target_test)

    def _pool_rows(self, indices: list[int]) -> np.ndarray:
        assert self._v_pool is not None
        if not indices:
            return np.zeros((0, self._v_pool.shape[1]))
        return self._v_pool[[self._row_of_index[i] for i in indices]]

    def _labeled_target_windows(self) -> list[LogSequence]:
        # windows carry the oracle's label, which is what training may see
        return [
            dataclasses.replace(self._pool_by_index[i], label=lab)
            for i, lab in sorted(self.state.labeled_target.items())
        ]

    def _evaluate(self, round_no: int) -> MetricsReport:
        assert self.psi is not None and self._v_test is not None
        preds = predict_matrix(self.psi, self._v_test)
        truths = [w.label for w in self.data.target_test]
        budget = len(self.state.labeled_target) / self.state.original_pool_size
        report = compute_metrics(
            preds.tolist(),
            truths,
            experiment_id=self.experiment_id,
            round=round_no,
            budget_fraction=budget,
        )
        self.metrics.append(report)
        return report

    # -- campaign phases ------------------------------------------------------

    def pretrain(self) -> MetricsReport:
        """Source-side training; the returned metrics are the 0%-budget point."""
        cfg = self.cfg
        self.theta = init_encoder(
            cfg.d_w, cfg.encoder_hidden, cfg.encoder_layers, derive_seed(cfg.seed, "encoder-init")
        )
        self.phi = init_discriminator(cfg.encoder_hidden, derive_seed(cfg.seed, "discriminator-init"))
        if self.variant != "wt" and cfg.epochs > 0:
            self.theta, self.phi, _ = train_encoder(
                self.data.source_train, [], self.theta, self.phi,
                self._schedule("encoder-pretrain", cfg.epochs),
            )
        self._reencode()
        self.psi = init_classifier(
            cfg.classifier_input,
            cfg.classifier_hidden,
            cfg.classifier_layer,
            derive_seed(cfg.seed, "classifier-init"),
        )
        if self.variant != "wt" and cfg.epochs > 0:
            labels = [w.label for w in self.data.source_train]
            self.psi, _ = train_source(
                self._v_source, labels, self.psi, self._schedule("classifier-pretrain", cfg.epochs)
            )
        return self._evaluate(round_no=0)

    def start_round(self) -> list[QueryItem]:
        """Score the pool, select this round's windows, and open queries."""
        if self.psi is None:
            raise ContractError("campaign not pretrained; call pretrain() first")
        if self.state.pending_queries:
            raise ContractError("previous round still has pending queries")
        unlabeled = self.state.unlabeled_target
        if not unlabeled:
            raise ContractError("unlabeled target pool is exhausted")

        round_no = self.state.round + 1
        scores = score_pool(
            self.psi, self._pool_rows(unlabeled), unlabeled, mode=self.cfg.probability_mode
        )
        self.score_tables[round_no] = scores
        if self.run_dir:
            export_scores(scores, self.run_dir / f"scores-round{round_no:03d}.tsv", self.digest)

        quota = min(self.state.round_quota, len(unlabeled))
        stage1_cap = math.ceil(self.state.first_ratio * len(unlabeled))
        selected = self._select(scores, min(quota, stage1_cap), round_no)
        already = set(self.state.labeled_target)
        assert not (set(s.window_index for s in selected) & already)

        queries = []
        for s in selected:
            self._query_seq += 1
            window = self._pool_by_index[s.window_index]
            queries.append(
                QueryItem(
                    query_id=f"q{self._query_seq:06d}",
                    window_index=s.window_index,
                    raw_lines=self.data.target_raw_lines.get(s.window_index, []),
                    template_views=[
                        {
                            "template_id": tid,
                            "rendered": self.data.template_renders.get(tid, ""),
                        }
                        for tid in window.events
                    ],
                    score=s,
                    round=round_no,
                )
            )
        self.state.pending_queries = queries
        return queries

    def _select(self, scores: list[SelectionScore], quota: int, round_no: int) -> list[SelectionScore]:
        cfg = self.cfg
        if self.variant == "wa":
            rng = np.random.Generator(
                np.random.PCG64(derive_seed(cfg.seed, f"wa-select-{round_no}"))
            )
            picks = rng.choice(len(scores), size=quota, replace=False)
            return [scores[i] for i in sorted(picks)]
        if self.variant == "wu":
            stage1_size = math.ceil(cfg.first_sample_ratio * len(scores))
            stage1 = sorted(scores, key=lambda s: (-s.free_energy, s.window_index))[:stage1_size]
            rng = np.random.Generator(
                np.random.PCG64(derive_seed(cfg.seed, f"wu-select-{round_no}"))
            )
            picks = rng.choice(len(stage1), size=quota, replace=False)
            return [stage1[i] for i in sorted(picks)]
        if self.variant == "we":
            return sample_selection(scores, 1.0, quota, cfg.uncertainty_order)
        return sample_selection(scores, cfg.first_sample_ratio, quota, cfg.uncertainty_order)

    def submit_label(self, query_id: str, label: int | str | None, labeler_id: str = "") -> str:
        """First submission is final; replays acknowledge without effect."""
        for q in self.state.pending_queries:
            if q.query_id != query_id:
                continue
            if q.status != "pending":
                return "duplicate"
            if label == SKIP or label is None:
                q.status = "skipped"
            elif label in (0, 1):
                q.status = "labeled"
                q.label = int(label)
            else:
                raise ContractError(f"label must be 0, 1 or {SKIP!r}, got {label!r}")
            q.labeler_id = labeler_id or None
            return "accepted"
        return "unknown_query"

    def round_ready(self) -> bool:
        return bool(self.state.pending_queries) and all(
            q.status != "pending" for q in self.state.pending_queries
        )

    def complete_round(self) -> MetricsReport:
        """Fold resolved labels into the pools, refresh, fine-tune, evaluate."""
        pending = [q.query_id for q in self.state.pending_queries if q.status == "pending"]
        if pending:
            raise ContractError(f"round has unresolved queries: {', '.join(pending)}")
        if not self.state.pending_queries:
            raise ContractError("no round in progress")
        cfg = self.cfg
        round_no = self.state.round + 1
        labeled_now: dict[int, int] = {}
        skipped: list[int] = []
        for q in self.state.pending_queries:
            if q.status == "labeled":
                labeled_now[q.window_index] = int(q.label)
            else:
                skipped.append(q.window_index)
        self.state.labeled_target.update(labeled_now)
        self.state.unlabeled_target = [
            i for i in self.state.unlabeled_target if i not in labeled_now
        ]

        labeled_windows = self._labeled_target_windows()
        source_windows = self.data.source_train if self.variant != "wt" else []
        classes = {w.label for w in source_windows} | {w.label for w in labeled_windows}
        if cfg.encoder_refresh_epochs > 0 and len(classes) == 2:
            self.theta, self.phi, _ = train_encoder(
                source_windows,
                labeled_windows,
                self.theta,
                self.phi,
                self._schedule(f"encoder-refresh-{round_no}", cfg.encoder_refresh_epochs),
            )
            self._reencode()

        if cfg.finetune_epochs > 0 and len(classes) == 2 and self.state.labeled_target:
            src_labels = [w.label for w in source_windows]
            tgt_items = sorted(self.state.labeled_target.items())
            self.psi, _ = finetune(
                self.psi,
                self._v_source if self.variant != "wt" else np.zeros((0, cfg.classifier_input)),
                src_labels,
                self._pool_rows([i for i, _ in tgt_items]),
                [lab for _, lab in tgt_items],
                self._pool_rows(self.state.unlabeled_target),
                align_weight=cfg.energy_align_weight,
                schedule=self._schedule(f"finetune-{round_no}", cfg.finetune_epochs),
            )

        report = self._evaluate(round_no)
        self.state.history.append(
            {
                "round": round_no,
                "selected": [q.window_index for q in self.state.pending_queries],
                "labels": {str(k): v for k, v in labeled_now.items()},
                "skipped": skipped,
                "labelers": {
                    q.query_id: q.labeler_id
                    for q in self.state.pending_queries
                    if q.labeler_id
                },
                "f1": report.f1,
            }
        )
        self.state.pending_queries = []
        self.state.round = round_no
        if self.run_dir:
            self.save_state()
        return report

    def run_round(self, oracle) -> str:
        """One full round; returns 'complete' or 'suspended' (labels pending)."""
        queries = self.start_round()
        for q in queries:
            answer = oracle.label_query(q)
            if answer is None:
                continue
            self.submit_label(q.query_id, answer, labeler_id=type(oracle).__name__)
        if all(q.status != "pending" for q in self.state.pending_queries):
            self.complete_round()
            return "complete"
        if self.run_dir:
            self.save_state()
        return "suspended"

    def run_campaign(self, oracle=None) -> list[MetricsReport]:
        """Pretrain then run the configured rounds; returns per-round metrics."""
        oracle = oracle or GroundTruthOracle(self._truth)
        self.pretrain()
        for _ in range(self.cfg.rounds):
            if not self.state.unlabeled_target:
                break
            outcome = self.run_round(oracle)
            if outcome == "suspended":
                break
        if self.run_dir:
            self.save_state()
            self.write_manifest()
        return list(self.metrics)

    def ground_truth_oracle(self) -> GroundTruthOracle:
        return GroundTruthOracle(dict(self._truth))

    def adopt_pretrained(self, base: "CampaignDriver") -> None:
        """Reuse another driver's source pretraining (same config digest).

        Under the per-stage seed fan-out, every variant except wt pretrains
        identically, so sharing the trained parameters is purely a compute
        saving; scores and selections evolve independently afterwards.
        """
        if base.digest != self.digest:
            raise ContractError("cannot adopt pretraining from a different configuration")
        if base.theta is None or base.psi is None or not base.metrics:
            raise ContractError("base driver is not pretrained")
        if self.variant == "wt":
            raise ContractError("the wt variant never uses source pretraining")
        self.theta = base.theta.copy()
        self.phi = base.phi.copy()
        self.psi = base.psi.copy()
        self._v_source = base._v_source.copy()
        self._v_pool = base._v_pool.copy()
        self._v_test = base._v_test.copy()
        self.metrics = [dataclasses.replace(base.metrics[0], experiment_id=self.experiment_id)]

    # -- audit / persistence ---------------------------------------------------

    def budget_ledger(self) -> dict:
        return {
            "round": self.state.round,
            "rounds_configured": self.cfg.rounds,
            "round_quota": self.state.round_quota,
            "labels_used": len(self.state.labeled_target),
            "labels_budgeted": self.state.round_quota * self.cfg.rounds,
            "pool_remaining": len(self.state.unlabeled_target),
        }

    def state_digest(self) -> str:
        """Stable digest of everything that defines the campaign outcome."""
        h = hashlib.sha256()
        h.update(self.digest.encode())
        h.update(str(self.state.round).encode())
        h.update(json.dumps(sorted(self.state.labeled_target.items())).encode())
        h.update(json.dumps(sorted(self.state.unlabeled_target)).encode())
        for params in (self.theta, self.phi, self.psi):
            if params is None:
                continue
            for key in sorted(params.weights):
                h.update(key.encode())
                h.update(np.ascontiguousarray(params.weights[key]).tobytes())
        for m in self.metrics:
            h.update(
                f"{m.round}:{m.tp}:{m.fp}:{m.tn}:{m.fn}:{m.precision:.12g}:{m.recall:.12g}:{m.f1:.12g}".encode()
            )
        return h.hexdigest()

    def metrics_table(self) -> str:
        """Deterministic CSV of the per-round metrics."""
        lines = [f"# format=logadapt-metrics version=1 digest={self.digest}"]
        lines.append("round,budget_fraction,tp,fp,tn,fn,precision,recall,f1")
        for m in self.metrics:
            lines.append(
                f"{m.round},{m.budget_fraction:.6f},{m.tp},{m.fp},{m.tn},{m.fn},"
                f"{m.precision:.6f},{m.recall:.6f},{m.f1:.6f}"
            )
        return "\n".join(lines) + "\n"

    def write_manifest(self) -> None:
        assert self.run_dir is not None
        manifest = {
            "format": "logadapt-campaign-manifest",
            "version": 1,
            "experiment_id": self.experiment_id,
            "config_digest": self.digest,
            "variant": self.variant,
            "seed": self.cfg.seed,
            "uncertainty_order": self.cfg.uncertainty_order,
            "rounds": self.state.round,
            "history": self.state.history,
            "budget_ledger": self.budget_ledger(),
            "metrics": [dataclasses.asdict(m) for m in self.metrics],
            "state_digest": self.state_digest(),
        }
        (self.run_dir / "manifest.json").write_text(
            json.dumps(manifest, indent=1, sort_keys=True), encoding="utf-8"
        )
        (self.run_dir / "metrics.csv").write_text(self.metrics_table(), encoding="utf-8")

    def save_state(self) -> None:
        assert self.run_dir is not None
        state = {
            "format": STATE_FORMAT,
            "version": 1,
            "config_digest": self.digest,
            "variant": self.variant,
            "experiment_id": self.experiment_id,
            "query_seq": self._query_seq,
            "round": self.state.round,
            "labeled_target": {str(k): v for k, v in self.state.labeled_target.items()},
            "unlabeled_target": self.state.unlabeled_target,
            "pending_queries": [dataclasses.asdict(q) for q in self.state.pending_queries],
            "history": self.state.history,
            "metrics": [dataclasses.asdict(m) for m in self.metrics],
        }
        (self.run_dir / "state.json").write_text(json.dumps(state, indent=1), encoding="utf-8")
        arrays = {}
        for prefix, params in (("theta", self.theta), ("phi", self.phi), ("psi", self.psi)):
            if params is None:
                continue
            arrays.update({f"{prefix}.{k}": v for k, v in params.weights.items()})
        np.savez(self.run_dir / "state-params.npz", **arrays)

    @classmethod
    def resume(
        cls, run_dir: str | Path, data: CampaignData, cfg: ExperimentConfig
    ) -> "CampaignDriver":
        run_dir = Path(run_dir)
        try:
            state = json.loads((run_dir / "state.json").read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError) as exc:
            raise SnapshotError(f"cannot resume campaign from {run_dir}: {exc}") from exc
        if state.get("format") != STATE_FORMAT or state.get("version") != 1:
            raise SnapshotError(f"{run_dir}/state.json is not a campaign state file")
        if state["config_digest"] != config_digest(cfg):
            raise SnapshotError(
                "config digest mismatch: state was produced by a different configuration"
            )
        driver = cls(
            data,
            cfg,
            variant=state["variant"],
            experiment_id=state["experiment_id"],
            run_dir=run_dir,
        )
        driver._query_seq = state["query_seq"]
        driver.state.round = state["round"]
        driver.state.labeled_target = {int(k): v for k, v in state["labeled_target"].items()}
        driver.state.unlabeled_target = list(state["unlabeled_target"])
        driver.state.history = state["history"]
        driver.state.pending_queries = [
            QueryItem(
                query_id=q["query_id"],
                window_index=q["window_index"],
                raw_lines=q["raw_lines"],
                template_views=q["template_views"],
                score=SelectionScore(**q["score"]),
                round=q["round"],
                status=q["status"],
                label=q["label"],
                labeler_id=q["labeler_id"],
            )
            for q in state["pending_queries"]
        ]
        driver.metrics = [MetricsReport(**m) for m in state["metrics"]]

        arrays = np.load(run_dir / "state-params.npz", allow_pickle=False)
        cfg_seed = cfg.seed
        theta_weights = {k[6:]: arrays[k] for k in arrays.files if k.startswith("theta.")}
        phi_weights = {k[4:]: arrays[k] for k in arrays.files if k.startswith("phi.")}
        psi_weights = {k[4:]: arrays[k] for k in arrays.files if k.startswith("psi.")}
        if theta_weights:
            driver.theta = EncoderParams(
                theta_weights, cfg.d_w, cfg.encoder_hidden, cfg.encoder_layers, cfg_seed
            )
        if phi_weights:
            driver.phi = DiscriminatorParams(phi_weights, cfg_seed)
        if psi_weights:
            driver.psi = ClassifierParams(
                psi_weights,
                cfg.classifier_input,
                cfg.classifier_hidden,
                cfg.classifier_layer,
                cfg_seed,
                phase="target" if driver.state.round > 0 else "source",
            )
        if driver.theta is not None:
            driver._reencode()
        return driver
