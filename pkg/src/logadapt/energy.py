"""Energy-based anomaly classifier with free energy and uncertainty scoring.

A small feed-forward network maps a log vector to two non-negative
energies, one per class (0 = normal, 1 = anomalous); the final softplus
keeps energies positive so the raw-energy probability ratio is defined
everywhere. Prediction takes the class with the lower energy; the free
energy of a vector summarizes how far it sits from everything the model
has fit, and the absolute probability gap measures how confidently the two
classes are separated (a *small* gap means an uncertain vector).

Training minimizes cross-entropy of the Boltzmann distribution over the
negated energies, the standard surrogate under which the true label ends up
with the smaller energy. Fine-tuning toward a new system adds a hinge
penalty pushing unlabeled target free energies down to the running mean of
the source free energy.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ._nn import Adam, ParamTree, clip_global_norm, copy_tree, sigmoid, softplus, uniform_fan_in
from .encoder import LogVector, TrainSchedule
from .errors import (
    ContractError,
    DegenerateEnergyError,
    ShapeError,
    SnapshotError,
    TrainingError,
)

CLASSIFIER_CHECKPOINT_FORMAT = "logadapt-classifier-checkpoint"
SCORES_FORMAT = "logadapt-scores"

PROBABILITY_MODES = ("ratio", "boltzmann")


@dataclass(frozen=True)
class EnergyPair:
    e0: float
    e1: float


@dataclass
class ClassifierParams:
    weights: ParamTree
    input_dim: int
    hidden_dim: int
    layer_dim: int
    seed: int
    phase: str = "source"

    def copy(self, phase: str | None = None) -> "ClassifierParams":
        return ClassifierParams(
            copy_tree(self.weights),
            self.input_dim,
            self.hidden_dim,
            self.layer_dim,
            self.seed,
            phase or self.phase,
        )


@dataclass(frozen=True)
class SelectionScore:
    window_index: int
    free_energy: float
    uncertainty: float
    p0: float
    p1: float
    e0: float
    e1: float


def init_classifier(
    input_dim: int,
    hidden_dim: int = 64,
    layer_dim: int = 64,
    seed: int = 0,
    phase: str = "source",
) -> ClassifierParams:
    rng = np.random.Generator(np.random.PCG64(seed))
    weights: ParamTree = {
        "W1": uniform_fan_in(rng, (input_dim, hidden_dim), input_dim),
        "b1": np.zeros(hidden_dim),
        "W2": uniform_fan_in(rng, (hidden_dim, layer_dim), hidden_dim),
        "b2": np.zeros(layer_dim),
        "W3": uniform_fan_in(rng, (layer_dim, 2), layer_dim),
        "b3": np.zeros(2),
    }
    return ClassifierParams(weights, input_dim, hidden_dim, layer_dim, seed, phase)


# -- scoring -----------------------------------------------------------------


def _forward(psi: ClassifierParams, x: np.ndarray):
    w = psi.weights
    a1 = x @ w["W1"] + w["b1"]
    h1 = np.maximum(a1, 0.0)
    a2 = h1 @ w["W2"] + w["b2"]
    h2 = np.maximum(a2, 0.0)
    u = h2 @ w["W3"] + w["b3"]
    return softplus(u), (x, a1, h1, a2, h2, u)


def _backward(psi: ClassifierParams, cache, d_u: np.ndarray) -> ParamTree:
    x, a1, h1, a2, h2, _ = cache
    w = psi.weights
    grads: ParamTree = {}
    grads["W3"] = h2.T @ d_u
    grads["b3"] = d_u.sum(axis=0)
    d_h2 = d_u @ w["W3"].T
    d_a2 = d_h2 * (a2 > 0)
    grads["W2"] = h1.T @ d_a2
    grads["b2"] = d_a2.sum(axis=0)
    d_h1 = d_a2 @ w["W2"].T
    d_a1 = d_h1 * (a1 > 0)
    grads["W1"] = x.T @ d_a1
    grads["b1"] = d_a1.sum(axis=0)
    return grads


def _as_matrix(vectors) -> np.ndarray:
    if isinstance(vectors, np.ndarray):
        return np.asarray(vectors, dtype=np.float64)
    return np.stack([v.values if isinstance(v, LogVector) else np.asarray(v) for v in vectors])


def energies_matrix(psi: ClassifierParams, x: np.ndarray) -> np.ndarray:
    if x.ndim != 2 or x.shape[1] != psi.input_dim:
        raise ShapeError(f"expected (n, {psi.input_dim}) vectors, got shape {x.shape}")
    e, _ = _forward(psi, x)
    return e


def energies(v: LogVector | np.ndarray, psi: ClassifierParams) -> EnergyPair:
    values = v.values if isinstance(v, LogVector) else np.asarray(v, dtype=np.float64)
    if values.shape != (psi.input_dim,):
        raise ShapeError(f"vector has shape {values.shape}, expected ({psi.input_dim},)")
    e = energies_matrix(psi, values[None, :])[0]
    return EnergyPair(float(e[0]), float(e[1]))


def predict(v: LogVector | np.ndarray, psi: ClassifierParams) -> int:
    pair = energies(v, psi)
    # ties resolve to normal: fewer false alarms
    return 0 if pair.e0 <= pair.e1 else 1


def predict_matrix(psi: ClassifierParams, x: np.ndarray) -> np.ndarray:
    e = energies_matrix(psi, x)
    return (e[:, 1] < e[:, 0]).astype(int)


def free_energy(pair: EnergyPair) -> float:
    """-log(exp(-e0) + exp(-e1)) in the shift-invariant stable form."""
    lo = min(pair.e0, pair.e1)
    hi = max(pair.e0, pair.e1)
    return float(lo - np.log1p(np.exp(lo - hi)))


def free_energy_array(e: np.ndarray) -> np.ndarray:
    lo = e.min(axis=1)
    hi = e.max(axis=1)
    return lo - np.log1p(np.exp(lo - hi))


def class_probabilities(pair: EnergyPair, mode: str = "ratio") -> tuple[float, float]:
    """Per-class probabilities from the energy pair.

    The default is the raw-energy ratio e_l / (e0 + e1); ``boltzmann``
    switches to softmax over the negated energies for sensitivity studies.
    """
    if mode not in PROBABILITY_MODES:
        raise ContractError(f"unknown probability mode {mode!r}")
    if mode == "boltzmann":
        z = np.array([-pair.e0, -pair.e1])
        z -= z.max()
        ez = np.exp(z)
        p = ez / ez.sum()
        return float(p[0]), float(p[1])
    total = pair.e0 + pair.e1
    if total == 0.0:
        raise DegenerateEnergyError(
            "both energies are zero; the probability ratio is undefined "
            "(softplus outputs make this unreachable unless parameters are corrupt)"
        )
    return pair.e0 / total, pair.e1 / total


def uncertainty(pair: EnergyPair, mode: str = "ratio") -> float:
    """|p0 - p1|; smaller values mean the classes are harder to separate."""
    p0, p1 = class_probabilities(pair, mode)
    return abs(p0 - p1)


def score_pool(
    psi: ClassifierParams, vectors, window_indices: list[int], mode: str = "ratio"
) -> list[SelectionScore]:
    """Free energy and uncertainty for every vector of an unlabeled pool."""
    x = _as_matrix(vectors)
    e = energies_matrix(psi, x)
    f = free_energy_array(e)
    scores = []
    for i, idx in enumerate(window_indices):
        pair = EnergyPair(float(e[i, 0]), float(e[i, 1]))
        p0, p1 = class_probabilities(pair, mode)
        scores.append(
            SelectionScore(
                window_index=idx,
                free_energy=float(f[i]),
                uncertainty=abs(p0 - p1),
                p0=p0,
                p1=p1,
                e0=pair.e0,
                e1=pair.e1,
            )
        )
    return scores


# -- training ----------------------------------------------------------------


def _classification_loss_and_grads(psi: ClassifierParams, x: np.ndarray, y: np.ndarray):
    """Cross-entropy of softmax over negated energies against labels."""
    e, cache = _forward(psi, x)
    z = -e
    z_shift = z - z.max(axis=1, keepdims=True)
    ez = np.exp(z_shift)
    p = ez / ez.sum(axis=1, keepdims=True)
    n = x.shape[0]
    onehot = np.zeros_like(p)
    onehot[np.arange(n), y.astype(int)] = 1.0
    loss = float(-np.mean(np.log(p[np.arange(n), y.astype(int)] + 1e-300)))
    d_z = (p - onehot) / n
    d_u = -d_z * sigmoid(cache[5])  # dE/du = sigmoid(u), z = -E
    return loss, _backward(psi, cache, d_u)


def _alignment_loss_and_grads(psi: ClassifierParams, x: np.ndarray, f_src_mean: float):
    """Hinge on target free energy above the source running mean."""
    e, cache = _forward(psi, x)
    f = free_energy_array(e)
    active = f > f_src_mean
    n = x.shape[0]
    loss = float(np.sum(np.maximum(f - f_src_mean, 0.0)) / n)
    # dF/dE_l is the Boltzmann weight of class l
    z = -e
    z_shift = z - z.max(axis=1, keepdims=True)
    ez = np.exp(z_shift)
    q = ez / ez.sum(axis=1, keepdims=True)
    d_e = q * active[:, None] / n
    d_u = d_e * sigmoid(cache[5])
    return loss, _backward(psi, cache, d_u)


def _check_two_classes(y: np.ndarray) -> None:
    present = set(np.asarray(y).astype(int).tolist())
    if present != {0, 1}:
        raise TrainingError(
            f"training requires both classes; labels present: {sorted(present)}"
        )


def train_source(
    vectors,
    labels,
    psi0: ClassifierParams,
    schedule: TrainSchedule,
) -> tuple[ClassifierParams, list[float]]:
    """Fit the classifier on labeled source-system log vectors."""
    psi = psi0.copy(phase="source")
    if schedule.epochs == 0:
        return psi, []
    x = _as_matrix(vectors)
    y = np.asarray(labels, dtype=int)
    if x.shape[0] != y.shape[0]:
        raise ContractError(f"{x.shape[0]} vectors but {y.shape[0]} labels")
    _check_two_classes(y)

    optimizer = Adam(psi.weights, lr=schedule.learning_rate)
    rng = np.random.Generator(np.random.PCG64(schedule.seed))
    batch_size = min(schedule.batch_size, x.shape[0])
    history: list[float] = []
    for _ in range(schedule.epochs):
        perm = rng.permutation(x.shape[0])
        losses = []
        for start in range(0, x.shape[0], batch_size):
            idx = perm[start : start + batch_size]
            loss, grads = _classification_loss_and_grads(psi, x[idx], y[idx])
            clip_global_norm(grads, schedule.clip_norm)
            optimizer.step(psi.weights, grads)
            losses.append(loss)
        history.append(float(np.mean(losses)))
    return psi, history


def finetune(
    psi_source: ClassifierParams,
    source_vectors,
    source_labels,
    target_vectors,
    target_labels,
    unlabeled_target,
    align_weight: float = 0.01,
    schedule: TrainSchedule | None = None,
    require_target_labels: bool = True,
) -> tuple[ClassifierParams, list[float]]:
    """Continue training toward the target system.

    The loss is classification cross-entropy over the pooled (source +
    labeled target) vectors plus ``align_weight`` times the mean hinge
    ``max(0, F(v) - running mean source F)`` over the unlabeled target pool.
    ``require_target_labels=False`` relaxes the non-empty labeled-target
    precondition for the pure-continuation regression path.
    """
    schedule = schedule or TrainSchedule()
    tgt_x = _as_matrix(target_vectors) if len(target_vectors) else np.zeros((0, psi_source.input_dim))
    if require_target_labels and tgt_x.shape[0] == 0:
        raise ContractError("fine-tuning requires a non-empty labeled target pool")

    src_x = _as_matrix(source_vectors) if len(source_vectors) else np.zeros((0, psi_source.input_dim))
    x = np.concatenate([src_x, tgt_x]) if tgt_x.size else src_x
    y = np.concatenate(
        [np.asarray(source_labels, dtype=int), np.asarray(target_labels, dtype=int)]
    )
    unl_x = (
        _as_matrix(unlabeled_target)
        if unlabeled_target is not None and len(unlabeled_target)
        else np.zeros((0, psi_source.input_dim))
    )

    psi = psi_source.copy(phase="target")
    if schedule.epochs == 0:
        return psi, []
    _check_two_classes(y)

    n_src = src_x.shape[0]
    use_alignment = align_weight > 0 and unl_x.shape[0] > 0 and n_src > 0
    if use_alignment:
        f_src_mean = float(np.mean(free_energy_array(energies_matrix(psi, src_x))))

    optimizer = Adam(psi.weights, lr=schedule.learning_rate)
    rng = np.random.Generator(np.random.PCG64(schedule.seed))
    batch_size = min(schedule.batch_size, x.shape[0])
    history: list[float] = []
    for _ in range(schedule.epochs):
        perm = rng.permutation(x.shape[0])
        losses = []
        for start in range(0, x.shape[0], batch_size):
            idx = perm[start : start + batch_size]
            loss, grads = _classification_loss_and_grads(psi, x[idx], y[idx])
            if use_alignment:
                if unl_x.shape[0] > batch_size:
                    unl_idx = rng.choice(unl_x.shape[0], size=batch_size, replace=False)
                    unl_batch = unl_x[unl_idx]
                else:
                    unl_batch = unl_x
                align_loss, align_grads = _alignment_loss_and_grads(psi, unl_batch, f_src_mean)
                loss += align_weight * float(align_loss)
                for k in grads:
                    grads[k] += align_weight * align_grads[k]
            clip_global_norm(grads, schedule.clip_norm)
            optimizer.step(psi.weights, grads)
            losses.append(loss)
            if use_alignment:
                src_rows = idx[idx < n_src]
                if src_rows.size:
                    batch_f = float(
                        np.mean(free_energy_array(energies_matrix(psi, x[src_rows])))
                    )
                    f_src_mean = 0.9 * f_src_mean + 0.1 * batch_f
        history.append(float(np.mean(losses)))
    return psi, history


# -- persistence ---------------------------------------------------------------


def save_classifier_checkpoint(
    path: str | Path, psi: ClassifierParams, epoch: int = 0, digest: str = ""
) -> None:
    meta = {
        "format": CLASSIFIER_CHECKPOINT_FORMAT,
        "version": 1,
        "input_dim": psi.input_dim,
        "hidden_dim": psi.hidden_dim,
        "layer_dim": psi.layer_dim,
        "seed": psi.seed,
        "phase": psi.phase,
        "epoch": epoch,
        "digest": digest,
    }
    np.savez(path, meta=json.dumps(meta), **psi.weights)


def load_classifier_checkpoint(path: str | Path) -> tuple[ClassifierParams, dict]:
    try:
        data = np.load(path, allow_pickle=False)
        meta = json.loads(str(data["meta"]))
    except (OSError, KeyError, ValueError, json.JSONDecodeError) as exc:
        raise SnapshotError(f"cannot load classifier checkpoint {path}: {exc}") from exc
    if meta.get("format") != CLASSIFIER_CHECKPOINT_FORMAT or meta.get("version") != 1:
        raise SnapshotError(f"{path} is not a supported classifier checkpoint")
    weights = {k: data[k] for k in data.files if k != "meta"}
    psi = ClassifierParams(
        weights,
        meta["input_dim"],
        meta["hidden_dim"],
        meta["layer_dim"],
        meta["seed"],
        meta["phase"],
    )
    return psi, meta


def export_scores(scores: list[SelectionScore], path: str | Path, digest: str = "") -> None:
    """Audit table: window_index, e0, e1, F, U, p0, p1."""
    lines = [f"# format={SCORES_FORMAT} version=1 digest={digest}"]
    for s in scores:
        lines.append(
            f"{s.window_index}\t{s.e0:.17g}\t{s.e1:.17g}\t{s.free_energy:.17g}"
            f"\t{s.uncertainty:.17g}\t{s.p0:.17g}\t{s.p1:.17g}"
        )
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")
