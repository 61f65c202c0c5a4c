"""Contrastive sequence encoder and its discriminator head.

The encoder is a two-layer gated recurrent (LSTM) network over a window's
embedding matrix; the final hidden state of the top layer is the log vector
V. A one-unit affine + sigmoid discriminator predicts the probability that
V belongs to class 0 (normal); training minimizes the binary cross-entropy
between that probability and the window labels pooled from both systems,
which drives same-class windows from different systems toward the same
region of the vector space.

All math is hand-rolled numpy with exact analytic gradients (verified
against finite differences in the test suite), float64, and fully seeded.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ._nn import (
    Adam,
    ParamTree,
    clip_global_norm,
    copy_tree,
    sigmoid,
    softplus,
    uniform_fan_in,
)
from .errors import ContractError, ShapeError, SnapshotError, TrainingError
from .sequencing import LogSequence

ENCODER_CHECKPOINT_FORMAT = "logadapt-encoder-checkpoint"
VECTORS_FORMAT = "logadapt-vectors"
_PROB_EPS = 1e-12


@dataclass
class EncoderParams:
    weights: ParamTree
    input_dim: int
    hidden_dim: int
    num_layers: int
    seed: int

    def copy(self) -> "EncoderParams":
        return EncoderParams(
            copy_tree(self.weights), self.input_dim, self.hidden_dim, self.num_layers, self.seed
        )

    @property
    def output_dim(self) -> int:
        return self.hidden_dim


@dataclass
class DiscriminatorParams:
    weights: ParamTree
    seed: int

    def copy(self) -> "DiscriminatorParams":
        return DiscriminatorParams(copy_tree(self.weights), self.seed)

    @property
    def input_dim(self) -> int:
        return self.weights["w"].shape[0]


@dataclass
class LogVector:
    values: np.ndarray
    origin: str
    window_index: int
    label: int | None = None


@dataclass
class TrainSchedule:
    epochs: int = 60
    batch_size: int = 512
    learning_rate: float = 1e-3
    clip_norm: float = 5.0
    seed: int = 0


def init_encoder(
    input_dim: int, hidden_dim: int, num_layers: int = 2, seed: int = 0
) -> EncoderParams:
    """Uniform fan-in initialization; biases start at zero."""
    rng = np.random.Generator(np.random.PCG64(seed))
    weights: ParamTree = {}
    for layer in range(num_layers):
        d_in = input_dim if layer == 0 else hidden_dim
        weights[f"l{layer}.Wx"] = uniform_fan_in(rng, (d_in, 4 * hidden_dim), d_in)
        weights[f"l{layer}.Wh"] = uniform_fan_in(rng, (hidden_dim, 4 * hidden_dim), hidden_dim)
        weights[f"l{layer}.b"] = np.zeros(4 * hidden_dim)
    return EncoderParams(weights, input_dim, hidden_dim, num_layers, seed)


def init_discriminator(input_dim: int, seed: int = 0) -> DiscriminatorParams:
    rng = np.random.Generator(np.random.PCG64(seed))
    return DiscriminatorParams(
        {"w": uniform_fan_in(rng, (input_dim,), input_dim), "b": np.zeros(1)}, seed
    )


# -- forward / backward ----------------------------------------------------


def _lstm_layer_forward(weights: ParamTree, prefix: str, x: np.ndarray):
    """x: (B, T, d_in) -> outputs (B, T, h) plus the step cache for BPTT."""
    Wx, Wh, b = weights[f"{prefix}.Wx"], weights[f"{prefix}.Wh"], weights[f"{prefix}.b"]
    B, T, _ = x.shape
    h_dim = Wh.shape[0]
    h = np.zeros((B, h_dim))
    c = np.zeros((B, h_dim))
    outputs = np.zeros((B, T, h_dim))
    cache = []
    for t in range(T):
        z = x[:, t] @ Wx + h @ Wh + b
        i = sigmoid(z[:, :h_dim])
        f = sigmoid(z[:, h_dim : 2 * h_dim])
        g = np.tanh(z[:, 2 * h_dim : 3 * h_dim])
        o = sigmoid(z[:, 3 * h_dim :])
        c_new = f * c + i * g
        tc = np.tanh(c_new)
        h_new = o * tc
        cache.append((x[:, t], h, c, i, f, g, o, tc))
        h, c = h_new, c_new
        outputs[:, t] = h
    return outputs, cache


def _lstm_layer_backward(weights: ParamTree, prefix: str, cache, d_out: np.ndarray):
    """d_out: (B, T, h) gradients on each step's output; returns grads, dX."""
    Wx, Wh = weights[f"{prefix}.Wx"], weights[f"{prefix}.Wh"]
    B, T, h_dim = d_out.shape
    dWx = np.zeros_like(Wx)
    dWh = np.zeros_like(Wh)
    db = np.zeros(4 * h_dim)
    dx = np.zeros((B, T, Wx.shape[0]))
    dh_next = np.zeros((B, h_dim))
    dc_next = np.zeros((B, h_dim))
    for t in range(T - 1, -1, -1):
        x_t, h_prev, c_prev, i, f, g, o, tc = cache[t]
        dh = d_out[:, t] + dh_next
        do = dh * tc
        dc = dh * o * (1.0 - tc * tc) + dc_next
        dz = np.concatenate(
            [
                dc * g * i * (1.0 - i),
                dc * c_prev * f * (1.0 - f),
                dc * i * (1.0 - g * g),
                do * o * (1.0 - o),
            ],
            axis=1,
        )
        dWx += x_t.T @ dz
        dWh += h_prev.T @ dz
        db += dz.sum(axis=0)
        dx[:, t] = dz @ Wx.T
        dh_next = dz @ Wh.T
        dc_next = dc * f
    return {f"{prefix}.Wx": dWx, f"{prefix}.Wh": dWh, f"{prefix}.b": db}, dx


def _encoder_forward(theta: EncoderParams, x: np.ndarray):
    caches = []
    layer_input = x
    for layer in range(theta.num_layers):
        layer_input, cache = _lstm_layer_forward(theta.weights, f"l{layer}", layer_input)
        caches.append(cache)
    return layer_input[:, -1], caches


def _encoder_backward(theta: EncoderParams, caches, batch_shape, d_v: np.ndarray) -> ParamTree:
    B, T, _ = batch_shape
    grads: ParamTree = {}
    d_out = np.zeros((B, T, theta.hidden_dim))
    d_out[:, -1] = d_v
    for layer in range(theta.num_layers - 1, -1, -1):
        layer_grads, d_out = _lstm_layer_backward(theta.weights, f"l{layer}", caches[layer], d_out)
        grads.update(layer_grads)
    return grads


def encode_matrix(theta: EncoderParams, x: np.ndarray) -> np.ndarray:
    """Encode a (B, t, d_w) batch into (B, r) log vectors."""
    if x.ndim != 3 or x.shape[2] != theta.input_dim:
        raise ShapeError(
            f"expected batch of (t, {theta.input_dim}) matrices, got array of shape {x.shape}"
        )
    v, _ = _encoder_forward(theta, np.asarray(x, dtype=np.float64))
    return v


def encode(sequence: LogSequence, theta: EncoderParams) -> LogVector:
    matrix = sequence.matrix
    if matrix.ndim != 2 or matrix.shape[1] != theta.input_dim:
        raise ShapeError(
            f"window {sequence.window_index} matrix has shape {matrix.shape}, "
            f"expected (t, {theta.input_dim})"
        )
    values = encode_matrix(theta, matrix[None, :, :])[0]
    return LogVector(
        values=values,
        origin=sequence.origin,
        window_index=sequence.window_index,
        label=sequence.label,
    )


def encode_windows(
    windows: list[LogSequence], theta: EncoderParams, chunk: int = 1024
) -> list[LogVector]:
    out: list[LogVector] = []
    for start in range(0, len(windows), chunk):
        part = windows[start : start + chunk]
        x = np.stack([w.matrix for w in part])
        values = encode_matrix(theta, x)
        out.extend(
            LogVector(values=values[i], origin=w.origin, window_index=w.window_index, label=w.label)
            for i, w in enumerate(part)
        )
    return out


def discriminate(v: LogVector | np.ndarray, phi: DiscriminatorParams) -> float:
    """Probability that the log vector belongs to class 0 (normal)."""
    values = v.values if isinstance(v, LogVector) else np.asarray(v, dtype=np.float64)
    if values.shape != (phi.input_dim,):
        raise ShapeError(f"vector has shape {values.shape}, expected ({phi.input_dim},)")
    logit = float(values @ phi.weights["w"] + phi.weights["b"][0])
    prob = float(sigmoid(np.array([logit]))[0])
    return min(max(prob, _PROB_EPS), 1.0 - _PROB_EPS)


def binary_alignment_loss(labels: np.ndarray, class0_probs: np.ndarray) -> float:
    """Mean cross-entropy of the class-0 probabilities against labels.

    Labels use 0 = normal, 1 = anomalous; probabilities are P(class 0), so a
    perfect model drives the loss to zero. This is the plain textbook form
    and doubles as the independent oracle for the stable implementation.
    """
    y = np.asarray(labels, dtype=np.float64)
    p = np.asarray(class0_probs, dtype=np.float64)
    if y.size == 0:
        raise ContractError("loss undefined on an empty batch")
    return float(np.mean(-((1.0 - y) * np.log(p) + y * np.log(1.0 - p))))


def _loss_and_grads(
    theta: EncoderParams, phi: DiscriminatorParams, x: np.ndarray, y: np.ndarray
):
    """Stable loss + analytic gradients for one batch. x: (B,t,d), y: (B,)."""
    B = x.shape[0]
    v, caches = _encoder_forward(theta, x)
    logits = v @ phi.weights["w"] + phi.weights["b"][0]
    target = 1.0 - y  # discriminator predicts P(class 0)
    # softplus-based cross entropy: -[t*log(sig(a)) + (1-t)*log(1-sig(a))]
    loss = float(np.mean(target * softplus(-logits) + (1.0 - target) * softplus(logits)))
    d_logits = (sigmoid(logits) - target) / B
    phi_grads: ParamTree = {
        "w": v.T @ d_logits,
        "b": np.array([np.sum(d_logits)]),
    }
    d_v = np.outer(d_logits, phi.weights["w"])
    theta_grads = _encoder_backward(theta, caches, x.shape, d_v)
    return loss, theta_grads, phi_grads


def contrastive_loss(
    batch: list[tuple[LogSequence, int]], theta: EncoderParams, phi: DiscriminatorParams
) -> float:
    """Training loss of a labeled batch of windows (lower is better)."""
    if not batch:
        raise ContractError("loss undefined on an empty batch")
    for _, y in batch:
        if y not in (0, 1):
            raise ContractError(f"labels must be 0 or 1, got {y}")
    x = np.stack([seq.matrix for seq, _ in batch])
    y = np.array([label for _, label in batch], dtype=np.float64)
    loss, _, _ = _loss_and_grads(theta, phi, x, y)
    return loss


def train_encoder(
    source_windows: list[LogSequence],
    target_windows: list[LogSequence],
    theta0: EncoderParams,
    phi0: DiscriminatorParams,
    schedule: TrainSchedule,
) -> tuple[EncoderParams, DiscriminatorParams, list[float]]:
    """Minimize the alignment loss over the pooled labeled windows.

    Returns refreshed parameter snapshots and the per-epoch mean training
    loss. A zero-epoch schedule returns unchanged copies.
    """
    theta = theta0.copy()
    phi = phi0.copy()
    if schedule.epochs == 0:
        return theta, phi, []
    pool = list(source_windows) + list(target_windows)
    if not pool:
        raise TrainingError("training pool is empty")
    labels = np.array([w.label for w in pool], dtype=np.float64)
    if len(set(labels.tolist())) < 2:
        raise TrainingError(
            "training pool holds a single class; the alignment loss is degenerate"
        )

    x_all = np.stack([w.matrix for w in pool])
    merged = {f"enc.{k}": v for k, v in theta.weights.items()}
    merged.update({f"disc.{k}": v for k, v in phi.weights.items()})
    optimizer = Adam(merged, lr=schedule.learning_rate)
    rng = np.random.Generator(np.random.PCG64(schedule.seed))
    batch_size = min(schedule.batch_size, len(pool))

    history: list[float] = []
    for _ in range(schedule.epochs):
        perm = rng.permutation(len(pool))
        epoch_losses = []
        for start in range(0, len(pool), batch_size):
            idx = perm[start : start + batch_size]
            loss, theta_grads, phi_grads = _loss_and_grads(theta, phi, x_all[idx], labels[idx])
            grads = {f"enc.{k}": v for k, v in theta_grads.items()}
            grads.update({f"disc.{k}": v for k, v in phi_grads.items()})
            clip_global_norm(grads, schedule.clip_norm)
            optimizer.step(merged, grads)
            epoch_losses.append(loss)
        history.append(float(np.mean(epoch_losses)))
    return theta, phi, history


# -- persistence -------------------------------------------------------------


def save_encoder_checkpoint(
    path: str | Path,
    theta: EncoderParams,
    phi: DiscriminatorParams,
    epoch: int = 0,
    digest: str = "",
) -> None:
    meta = {
        "format": ENCODER_CHECKPOINT_FORMAT,
        "version": 1,
        "input_dim": theta.input_dim,
        "hidden_dim": theta.hidden_dim,
        "num_layers": theta.num_layers,
        "seed": theta.seed,
        "epoch": epoch,
        "digest": digest,
    }
    arrays = {f"enc.{k}": v for k, v in theta.weights.items()}
    arrays.update({f"disc.{k}": v for k, v in phi.weights.items()})
    np.savez(path, meta=json.dumps(meta), **arrays)


def load_encoder_checkpoint(path: str | Path) -> tuple[EncoderParams, DiscriminatorParams, dict]:
    try:
        data = np.load(path, allow_pickle=False)
        meta = json.loads(str(data["meta"]))
    except (OSError, KeyError, ValueError, json.JSONDecodeError) as exc:
        raise SnapshotError(f"cannot load encoder checkpoint {path}: {exc}") from exc
    if meta.get("format") != ENCODER_CHECKPOINT_FORMAT or meta.get("version") != 1:
        raise SnapshotError(f"{path} is not a supported encoder checkpoint")
    enc = {k[4:]: data[k] for k in data.files if k.startswith("enc.")}
    disc = {k[5:]: data[k] for k in data.files if k.startswith("disc.")}
    theta = EncoderParams(
        enc, meta["input_dim"], meta["hidden_dim"], meta["num_layers"], meta["seed"]
    )
    phi = DiscriminatorParams(disc, meta["seed"])
    return theta, phi, meta


def export_vectors(vectors: list[LogVector], path: str | Path, digest: str = "") -> None:
    """One window per line: index, origin, label (- if unknown), components."""
    lines = [f"# format={VECTORS_FORMAT} version=1 digest={digest}"]
    for v in vectors:
        label = "-" if v.label is None else str(v.label)
        values = " ".join(f"{x:.17g}" for x in v.values)
        lines.append(f"{v.window_index}\t{v.origin}\t{label}\t{values}")
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def import_vectors(path: str | Path) -> list[LogVector]:
    lines = Path(path).read_text(encoding="utf-8").splitlines()
    if not lines or not lines[0].startswith(f"# format={VECTORS_FORMAT} "):
        raise SnapshotError(f"{path} is not a vector table")
    out = []
    for line in lines[1:]:
        if not line.strip():
            continue
        idx, origin, label, values = line.split("\t")
        out.append(
            LogVector(
                values=np.array([float(x) for x in values.split()]),
                origin=origin,
                window_index=int(idx),
                label=None if label == "-" else int(label),
            )
        )
    return out
