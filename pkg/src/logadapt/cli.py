"""Command-line pipeline runner over a locked run directory.

Each subcommand reads the config plus the artifacts of earlier stages from
the run directory and writes its own stage outputs there; a missing
upstream artifact exits nonzero with a "run <stage> first" message. The
output root defaults to ./runs and can be overridden with the
LOGACTION_RUN_DIR environment variable.
"""

from __future__ import annotations

import argparse
import fcntl
import json
import os
import sys
from pathlib import Path

from . import evaluation
from .active import CampaignDriver, GroundTruthOracle, sample_selection
from .config import ExperimentConfig, config_digest, load_config, save_config
from .corpus import load_labeled_log, load_records, save_records, temporal_split
from .embedding import embed_corpus
from .encoder import (
    encode_windows,
    export_vectors,
    load_encoder_checkpoint,
    save_encoder_checkpoint,
)
from .energy import (
    export_scores,
    load_classifier_checkpoint,
    save_classifier_checkpoint,
    score_pool,
)
from .errors import LogAdaptError, StageError
from .parsing import MinerConfig, TemplateMiner
from .sequencing import EmbeddingTable, build_windows, export_windows, pool_stats

ROLES = ("source", "target")


def _run_root() -> Path:
    return Path(os.environ.get("LOGACTION_RUN_DIR", "runs"))


def _run_dir(args) -> Path:
    if args.run_dir:
        return Path(args.run_dir)
    return _run_root() / args.experiment_id


def _load_cfg(args, run_dir: Path) -> ExperimentConfig:
    if args.config:
        cfg = load_config(args.config)
    elif (run_dir / "config.cfg").exists():
        cfg = load_config(run_dir / "config.cfg")
    else:
        cfg = ExperimentConfig()
    run_dir.mkdir(parents=True, exist_ok=True)
    save_config(cfg, run_dir / "config.cfg")
    return cfg


def _require(path: Path, stage: str) -> Path:
    if not path.exists():
        raise StageError(f"missing artifact {path.name}: run {stage} first", stage)
    return path


def _records_path(run_dir: Path, role: str) -> Path:
    return run_dir / f"{role}.records.jsonl"


def _load_role_records(args, run_dir: Path, role: str):
    path_arg = getattr(args, role, None)
    if path_arg:
        fmt = getattr(args, f"{role}_format")
        sidecar = getattr(args, f"{role}_sidecar", None)
        return load_labeled_log(path_arg, fmt, sidecar)
    return load_records(_require(_records_path(run_dir, role), "parse"))


def _prepared_system(run_dir: Path, cfg: ExperimentConfig, role: str):
    records = load_records(_require(_records_path(run_dir, role), "parse"))
    backend = evaluation.backend_from_config(cfg)
    return evaluation.prepare_system(records, cfg, role, backend)


# -- subcommand handlers -----------------------------------------------------


def cmd_parse(args, run_dir: Path, cfg: ExperimentConfig) -> int:
    records = load_labeled_log(args.input, args.format, args.sidecar)
    digest = config_digest(cfg)
    save_records(records, _records_path(run_dir, args.role), digest)
    miner = TemplateMiner(
        MinerConfig(cfg.parser_depth, cfg.parser_similarity, cfg.parser_max_children)
    )
    for r in records:
        miner.parse_record(r.content)
    miner.snapshot(run_dir / f"{args.role}.miner.json")
    print(
        f"parsed {len(records)} records from {args.input} into "
        f"{len(miner.templates())} templates"
    )
    return 0


def cmd_embed(args, run_dir: Path, cfg: ExperimentConfig) -> int:
    miner_path = _require(run_dir / f"{args.role}.miner.json", "parse")
    miner = TemplateMiner.restore(miner_path)
    backend = evaluation.backend_from_config(cfg)
    embeddings = embed_corpus(
        miner.templates(), backend, cache_path=run_dir / f"{args.role}.embeddings.json"
    )
    print(f"embedded {len(embeddings)} templates with backend {backend.backend_id}")
    return 0


def cmd_windows(args, run_dir: Path, cfg: ExperimentConfig) -> int:
    _require(run_dir / f"{args.role}.embeddings.json", "embed")
    system = _prepared_system(run_dir, cfg, args.role)
    digest = config_digest(cfg)
    export_windows(system.train_windows, run_dir / f"{args.role}.train.windows.tsv", digest)
    export_windows(system.test_windows, run_dir / f"{args.role}.test.windows.tsv", digest)
    stats = pool_stats(system.train_windows + system.test_windows)
    print(f"{args.role}: windows (normal, anomalous) per origin = {stats}")
    return 0


def cmd_train_encoder(args, run_dir: Path, cfg: ExperimentConfig) -> int:
    _require(run_dir / "source.train.windows.tsv", "windows")
    from .encoder import TrainSchedule, init_discriminator, init_encoder, train_encoder
    from .config import derive_seed

    system = _prepared_system(run_dir, cfg, "source")
    theta = init_encoder(
        cfg.d_w, cfg.encoder_hidden, cfg.encoder_layers, derive_seed(cfg.seed, "encoder-init")
    )
    phi = init_discriminator(cfg.encoder_hidden, derive_seed(cfg.seed, "discriminator-init"))
    theta, phi, history = train_encoder(
        system.train_windows,
        [],
        theta,
        phi,
        TrainSchedule(
            cfg.epochs, cfg.batch_size, cfg.learning_rate,
            seed=derive_seed(cfg.seed, "encoder-pretrain"),
        ),
    )
    save_encoder_checkpoint(
        run_dir / "encoder.npz", theta, phi, epoch=cfg.epochs, digest=config_digest(cfg)
    )
    final = history[-1] if history else float("nan")
    print(f"encoder trained for {cfg.epochs} epochs, final loss {final:.6f}")
    return 0


def cmd_train_source(args, run_dir: Path, cfg: ExperimentConfig) -> int:
    encoder_path = _require(run_dir / "encoder.npz", "train-encoder")
    from .encoder import TrainSchedule
    from .energy import init_classifier, train_source
    from .config import derive_seed

    theta, _, _ = load_encoder_checkpoint(encoder_path)
    system = _prepared_system(run_dir, cfg, "source")
    vectors = encode_windows(system.train_windows, theta)
    export_vectors(vectors, run_dir / "source.train.vectors.tsv", config_digest(cfg))
    psi = init_classifier(
        cfg.classifier_input,
        cfg.classifier_hidden,
        cfg.classifier_layer,
        derive_seed(cfg.seed, "classifier-init"),
    )
    psi, history = train_source(
        vectors,
        [w.label for w in system.train_windows],
        psi,
        TrainSchedule(
            cfg.epochs, cfg.batch_size, cfg.learning_rate,
            seed=derive_seed(cfg.seed, "classifier-pretrain"),
        ),
    )
    save_classifier_checkpoint(
        run_dir / "classifier-source.npz", psi, epoch=cfg.epochs, digest=config_digest(cfg)
    )
    final = history[-1] if history else float("nan")
    print(f"source classifier trained, final loss {final:.6f}")
    return 0


def cmd_select(args, run_dir: Path, cfg: ExperimentConfig) -> int:
    classifier_path = _require(run_dir / "classifier-source.npz", "train-source")
    encoder_path = _require(run_dir / "encoder.npz", "train-encoder")
    theta, _, _ = load_encoder_checkpoint(encoder_path)
    psi, _ = load_classifier_checkpoint(classifier_path)
    system = _prepared_system(run_dir, cfg, "target")
    vectors = encode_windows(system.train_windows, theta)
    indices = [w.window_index for w in system.train_windows]
    scores = score_pool(psi, vectors, indices, mode=cfg.probability_mode)
    digest = config_digest(cfg)
    export_scores(scores, run_dir / "scores-round001.tsv", digest)
    quota = max(1, int(cfg.active_ratio * len(scores)))
    selected = sample_selection(scores, cfg.first_sample_ratio, quota, cfg.uncertainty_order)
    export_scores(selected, run_dir / "selection-round001.tsv", digest)
    print(f"selected {len(selected)} of {len(scores)} pool windows")
    return 0


def _build_driver(args, run_dir: Path, cfg: ExperimentConfig, variant: str = "full"):
    source = _load_role_records(args, run_dir, "source")
    target = _load_role_records(args, run_dir, "target")
    data, _ = evaluation.build_campaign_data(source, target, cfg)
    return CampaignDriver(
        data, cfg, variant=variant, experiment_id=args.experiment_id, run_dir=run_dir
    )


def cmd_round(args, run_dir: Path, cfg: ExperimentConfig) -> int:
    driver = _build_driver(args, run_dir, cfg)
    if (run_dir / "state.json").exists():
        driver = CampaignDriver.resume(run_dir, driver.data, cfg)
    if driver.psi is None:
        driver.pretrain()
    outcome = driver.run_round(GroundTruthOracle(driver._truth))
    driver.save_state()
    print(f"round {driver.state.round}: {outcome}; f1={driver.metrics[-1].f1:.4f}")
    return 0


def cmd_campaign(args, run_dir: Path, cfg: ExperimentConfig) -> int:
    driver = _build_driver(args, run_dir, cfg, variant=args.variant)
    if args.oracle == "ground-truth":
        driver.run_campaign()
    else:
        driver.pretrain()
        if cfg.rounds > 0 and driver.state.unlabeled_target:
            driver.start_round()
        driver.save_state()
        print("campaign initialized in interactive mode; serve it with the serve command")
        return 0
    for m in driver.metrics:
        print(
            f"round {m.round}: budget={m.budget_fraction:.4f} "
            f"P={m.precision:.4f} R={m.recall:.4f} F1={m.f1:.4f}"
        )
    print(f"manifest written to {run_dir / 'manifest.json'}")
    return 0


def cmd_sweep(args, run_dir: Path, cfg: ExperimentConfig) -> int:
    source = _load_role_records(args, run_dir, "source")
    target = _load_role_records(args, run_dir, "target")
    data, _ = evaluation.build_campaign_data(source, target, cfg)
    fractions = [float(x) for x in args.fractions.split(",")]
    points = evaluation.budget_sweep(data, cfg, fractions, n_seeds=args.seeds)
    evaluation.save_sweep_table(points, run_dir / "sweep.csv", cfg)
    for p in points:
        print(f"budget {p.fraction:.3%}: mean F1 {p.mean_f1:.4f} (std {p.std_f1:.4f})")
    return 0


def cmd_ablate(args, run_dir: Path, cfg: ExperimentConfig) -> int:
    source = _load_role_records(args, run_dir, "source")
    target = _load_role_records(args, run_dir, "target")
    data, _ = evaluation.build_campaign_data(source, target, cfg)
    outcome = evaluation.ablation(data, cfg, args.variant, n_seeds=args.seeds)
    payload = {
        "variant": outcome.variant,
        "mean_f1": outcome.mean_f1,
        "mean_precision": outcome.mean_precision,
        "mean_recall": outcome.mean_recall,
        "std_f1": outcome.std_f1,
        "per_seed": [
            {"seed": s, "f1": r.f1, "precision": r.precision, "recall": r.recall}
            for s, r in zip(outcome.seeds, outcome.reports)
        ],
    }
    (run_dir / f"ablation-{args.variant}.json").write_text(
        json.dumps(payload, indent=1), encoding="utf-8"
    )
    print(f"{args.variant}: mean F1 {outcome.mean_f1:.4f} over {args.seeds} seeds")
    return 0


def cmd_eval(args, run_dir: Path, cfg: ExperimentConfig) -> int:
    _require(run_dir / "state.json", "campaign")
    driver = _build_driver(args, run_dir, cfg)
    driver = CampaignDriver.resume(run_dir, driver.data, cfg)
    (run_dir / "metrics.csv").write_text(driver.metrics_table(), encoding="utf-8")
    for m in driver.metrics:
        print(f"round {m.round}: P={m.precision:.4f} R={m.recall:.4f} F1={m.f1:.4f}")
    return 0


def cmd_export_vectors(args, run_dir: Path, cfg: ExperimentConfig) -> int:
    encoder_path = _require(run_dir / "encoder.npz", "train-encoder")
    theta, _, _ = load_encoder_checkpoint(encoder_path)
    system = _prepared_system(run_dir, cfg, args.role)
    windows = system.train_windows if args.split == "train" else system.test_windows
    vectors = encode_windows(windows, theta)
    out = run_dir / f"{args.role}.{args.split}.vectors.tsv"
    export_vectors(vectors, out, config_digest(cfg))
    print(f"wrote {len(vectors)} vectors to {out}")
    return 0


def cmd_serve(args, run_dir: Path, cfg: ExperimentConfig) -> int:
    import uvicorn

    from .service import create_app

    driver = _build_driver(args, run_dir, cfg)
    if (run_dir / "state.json").exists():
        driver = CampaignDriver.resume(run_dir, driver.data, cfg)
    app = create_app(driver)
    print(f"labeling service on http://{args.host}:{args.port} (digest {driver.digest})")
    uvicorn.run(app, host=args.host, port=args.port, log_level="warning")
    return 0


# -- argument wiring -----------------------------------------------------------


def _add_common(sub: argparse.ArgumentParser) -> None:
    sub.add_argument("--config", help="key=value config file")
    sub.add_argument("--run-dir", help="explicit run directory (overrides the root)")
    sub.add_argument("--experiment-id", default="exp", help="run directory name under the root")


def _add_corpus_inputs(sub: argparse.ArgumentParser) -> None:
    for role in ROLES:
        sub.add_argument(f"--{role}", help=f"{role} log file (else uses parsed stage artifacts)")
        sub.add_argument(
            f"--{role}-format",
            default="alert-prefix",
            choices=("alert-prefix", "sidecar-labels"),
        )
        sub.add_argument(f"--{role}-sidecar", help=f"sidecar label file for the {role} corpus")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="logadapt",
        description="cross-system log anomaly detection with active adaptation",
    )
    subs = parser.add_subparsers(dest="command", required=True)

    p = subs.add_parser("parse", help="ingest a raw log file and mine templates")
    _add_common(p)
    p.add_argument("--role", choices=ROLES, required=True)
    p.add_argument("--input", required=True)
    p.add_argument("--format", default="alert-prefix", choices=("alert-prefix", "sidecar-labels"))
    p.add_argument("--sidecar")
    p.set_defaults(func=cmd_parse)

    p = subs.add_parser("embed", help="embed mined templates into the shared space")
    _add_common(p)
    p.add_argument("--role", choices=ROLES, required=True)
    p.set_defaults(func=cmd_embed)

    p = subs.add_parser("windows", help="assemble labeled event windows")
    _add_common(p)
    p.add_argument("--role", choices=ROLES, required=True)
    p.set_defaults(func=cmd_windows)

    p = subs.add_parser("train-encoder", help="train the contrastive encoder on source windows")
    _add_common(p)
    p.set_defaults(func=cmd_train_encoder)

    p = subs.add_parser("train-source", help="train the energy classifier on source vectors")
    _add_common(p)
    p.set_defaults(func=cmd_train_source)

    p = subs.add_parser("select", help="score the target pool and pick a labeling batch")
    _add_common(p)
    p.set_defaults(func=cmd_select)

    p = subs.add_parser("round", help="run one active round with the ground-truth oracle")
    _add_common(p)
    _add_corpus_inputs(p)
    p.set_defaults(func=cmd_round)

    p = subs.add_parser("campaign", help="run a full adaptation campaign")
    _add_common(p)
    _add_corpus_inputs(p)
    p.add_argument("--oracle", default="ground-truth", choices=("ground-truth", "interactive"))
    p.add_argument("--variant", default="full", choices=("full", "wt", "wa", "wu", "we"))
    p.set_defaults(func=cmd_campaign)

    p = subs.add_parser("sweep", help="mean F1 against labeling budget")
    _add_common(p)
    _add_corpus_inputs(p)
    p.add_argument("--fractions", default="0,0.01,0.02")
    p.add_argument("--seeds", type=int, default=1)
    p.set_defaults(func=cmd_sweep)

    p = subs.add_parser("ablate", help="run one ablation variant over several seeds")
    _add_common(p)
    _add_corpus_inputs(p)
    p.add_argument("--variant", required=True, choices=("full", "wt", "wa", "wu", "we"))
    p.add_argument("--seeds", type=int, default=5)
    p.set_defaults(func=cmd_ablate)

    p = subs.add_parser("eval", help="recompute the metrics table from campaign state")
    _add_common(p)
    _add_corpus_inputs(p)
    p.set_defaults(func=cmd_eval)

    p = subs.add_parser("export-vectors", help="encode windows and export the vector table")
    _add_common(p)
    p.add_argument("--role", choices=ROLES, required=True)
    p.add_argument("--split", choices=("train", "test"), default="train")
    p.set_defaults(func=cmd_export_vectors)

    p = subs.add_parser("serve", help="serve the interactive labeling API")
    _add_common(p)
    _add_corpus_inputs(p)
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8321)
    p.set_defaults(func=cmd_serve)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    run_dir = _run_dir(args)
    run_dir.mkdir(parents=True, exist_ok=True)
    lock_path = run_dir / ".lock"
    lock_file = open(lock_path, "w")
    try:
        try:
            fcntl.flock(lock_file, fcntl.LOCK_EX | fcntl.LOCK_NB)
        except OSError:
            print(f"error: run directory {run_dir} is locked by another process", file=sys.stderr)
            return 3
        cfg = _load_cfg(args, run_dir)
        return args.func(args, run_dir, cfg)
    except StageError as exc:
        print(f"error [{args.command}]: {exc}", file=sys.stderr)
        return 2
    except LogAdaptError as exc:
        print(f"error [{args.command}]: {exc}", file=sys.stderr)
        return 1
    finally:
        lock_file.close()


if __name__ == "__main__":
    sys.exit(main())
