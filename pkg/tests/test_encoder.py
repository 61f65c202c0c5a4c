import math

import numpy as np
import pytest

from logadapt._nn import pack
from logadapt.encoder import (
    LogVector,
    TrainSchedule,
    binary_alignment_loss,
    contrastive_loss,
    discriminate,
    encode,
    encode_windows,
    export_vectors,
    import_vectors,
    init_discriminator,
    init_encoder,
    load_encoder_checkpoint,
    save_encoder_checkpoint,
    train_encoder,
    _loss_and_grads,
)
from logadapt.errors import ContractError, ShapeError, SnapshotError, TrainingError

from conftest import synthetic_embedded_windows

D, H, T = 6, 8, 5


def tiny_params(seed=0):
    return init_encoder(D, H, 2, seed), init_discriminator(H, seed + 1)


def test_encode_deterministic():
    theta, _ = tiny_params()
    (w,) = synthetic_embedded_windows(1, window_size=T, dimension=D, seed=3)
    a = encode(w, theta)
    b = encode(w, theta)
    np.testing.assert_array_equal(a.values, b.values)
    assert a.values.shape == (H,)
    assert a.origin == w.origin and a.window_index == w.window_index


def test_zero_matrix_zero_params_bias_path():
    theta, _ = tiny_params()
    for k in theta.weights:
        theta.weights[k][:] = 0.0
    w1, w2 = synthetic_embedded_windows(2, window_size=T, dimension=D, seed=3)
    w1.table.rows[:] = 0.0  # both windows become all-zero matrices
    v1, v2 = encode(w1, theta), encode(w2, theta)
    np.testing.assert_array_equal(v1.values, v2.values)
    np.testing.assert_array_equal(v1.values, np.zeros(H))


def test_paper_width_output_is_512():
    theta = init_encoder(16, 512, 2, seed=0)
    (w,) = synthetic_embedded_windows(1, window_size=4, dimension=16, seed=5)
    assert encode(w, theta).values.shape == (512,)


def test_encode_shape_mismatch():
    theta, _ = tiny_params()
    (w,) = synthetic_embedded_windows(1, window_size=T, dimension=D + 1, seed=3)
    with pytest.raises(ShapeError):
        encode(w, theta)


# -- discriminator ------------------------------------------------------------


def test_discriminate_zero_weights_is_half():
    phi = init_discriminator(3, seed=0)
    phi.weights["w"][:] = 0.0
    assert discriminate(np.zeros(3), phi) == pytest.approx(0.5)


def test_discriminate_bias_asymptote():
    phi = init_discriminator(3, seed=0)
    phi.weights["w"][:] = 0.0
    phi.weights["b"][0] = 30.0
    assert discriminate(np.zeros(3), phi) > 0.999999
    assert discriminate(np.zeros(3), phi) < 1.0


def test_discriminate_hand_value():
    # logit ln(3) = 1.0986...; sigmoid gives 0.75
    phi = init_discriminator(3, seed=0)
    phi.weights["w"][:] = np.array([1.0, 0.0, 0.0])
    phi.weights["b"][0] = 0.0
    y = discriminate(np.array([1.0986122886681098, 0.0, 0.0]), phi)
    assert y == pytest.approx(0.75, abs=1e-9)


def test_discriminate_shape_error():
    phi = init_discriminator(3, seed=0)
    with pytest.raises(ShapeError):
        discriminate(np.zeros(4), phi)


# -- loss ----------------------------------------------------------------------


def test_loss_uniform_prediction_is_ln2():
    theta, phi = tiny_params()
    for k in phi.weights:
        phi.weights[k][:] = 0.0
    (w,) = synthetic_embedded_windows(1, window_size=T, dimension=D, seed=1)
    assert contrastive_loss([(w, 0)], theta, phi) == pytest.approx(math.log(2), abs=1e-12)


def test_loss_hand_case():
    # direct evaluation of the formula on known probabilities
    expected = -(math.log(0.9) + math.log(0.8)) / 2
    assert binary_alignment_loss([0, 1], [0.9, 0.2]) == pytest.approx(expected, abs=1e-12)
    assert expected == pytest.approx(0.1643, abs=1e-4)


def test_loss_floor_at_perfect_predictions():
    assert binary_alignment_loss([0, 1], [1 - 1e-12, 1e-12]) < 1e-9


def test_stable_loss_matches_naive_formula():
    theta, phi = tiny_params(seed=4)
    windows = synthetic_embedded_windows(6, window_size=T, dimension=D, seed=7)
    batch = [(w, w.label) for w in windows]
    stable = contrastive_loss(batch, theta, phi)
    probs = [discriminate(encode(w, theta), phi) for w, _ in batch]
    naive = binary_alignment_loss([y for _, y in batch], probs)
    assert stable == pytest.approx(naive, rel=1e-9)


def test_loss_bounds():
    theta, phi = tiny_params(seed=2)
    windows = synthetic_embedded_windows(8, window_size=T, dimension=D, seed=8)
    loss = contrastive_loss([(w, w.label) for w in windows], theta, phi)
    assert 0.0 <= loss < math.inf


def test_loss_rejects_empty_and_bad_labels():
    theta, phi = tiny_params()
    with pytest.raises(ContractError):
        contrastive_loss([], theta, phi)
    (w,) = synthetic_embedded_windows(1, window_size=T, dimension=D, seed=1)
    with pytest.raises(ContractError):
        contrastive_loss([(w, 2)], theta, phi)


# -- gradients -----------------------------------------------------------------


def _numeric_gradient(theta, phi, x, y, tree, key, index, eps=1e-5):
    original = tree.weights[key].flat[index]
    tree.weights[key].flat[index] = original + eps
    up, _, _ = _loss_and_grads(theta, phi, x, y)
    tree.weights[key].flat[index] = original - eps
    down, _, _ = _loss_and_grads(theta, phi, x, y)
    tree.weights[key].flat[index] = original
    return (up - down) / (2 * eps)


def test_gradient_check_against_central_differences():
    rng = np.random.Generator(np.random.PCG64(12))
    theta, phi = tiny_params(seed=6)
    windows = synthetic_embedded_windows(4, window_size=T, dimension=D, seed=9)
    x = np.stack([w.matrix for w in windows])
    y = np.array([w.label for w in windows], dtype=np.float64)
    _, theta_grads, phi_grads = _loss_and_grads(theta, phi, x, y)

    checked = 0
    for tree, grads in ((theta, theta_grads), (phi, phi_grads)):
        for key in tree.weights:
            size = tree.weights[key].size
            for index in rng.choice(size, size=min(5, size), replace=False):
                numeric = _numeric_gradient(theta, phi, x, y, tree, key, int(index))
                analytic = grads[key].flat[int(index)]
                if abs(numeric - analytic) < 1e-9:
                    # below finite-difference resolution on both sides
                    checked += 1
                    continue
                scale = max(abs(numeric), abs(analytic))
                assert abs(numeric - analytic) / scale < 1e-4, (key, index)
                checked += 1
    assert checked >= 30


# -- training -------------------------------------------------------------------


def _training_fixture():
    windows = synthetic_embedded_windows(
        32, window_size=10, dimension=16, seed=21, scale=4.0
    )
    theta = init_encoder(16, 64, 2, seed=0)
    phi = init_discriminator(64, seed=1)
    return windows, theta, phi


def test_training_reduces_loss_by_10x():
    windows, theta, phi = _training_fixture()
    schedule = TrainSchedule(epochs=60, batch_size=512, learning_rate=1e-3, seed=3)
    initial = contrastive_loss([(w, w.label) for w in windows], theta, phi)
    theta2, phi2, history = train_encoder(windows, [], theta, phi, schedule)
    final = contrastive_loss([(w, w.label) for w in windows], theta2, phi2)
    assert len(history) == 60
    assert final < 0.1 * initial
    assert history[-1] <= history[0]


# pinned from the first run of the fixed-seed fixture above
PINNED_FINAL_LOSS = 0.009665161205583157


def test_training_loss_regression_value():
    windows, theta, phi = _training_fixture()
    schedule = TrainSchedule(epochs=60, batch_size=512, learning_rate=1e-3, seed=3)
    _, _, history = train_encoder(windows, [], theta, phi, schedule)
    assert history[-1] == pytest.approx(PINNED_FINAL_LOSS, rel=1e-6)


def test_zero_epochs_returns_inputs_unchanged():
    windows, theta, phi = _training_fixture()
    theta2, phi2, history = train_encoder(
        windows, [], theta, phi, TrainSchedule(epochs=0, seed=0)
    )
    assert history == []
    for k in theta.weights:
        np.testing.assert_array_equal(theta.weights[k], theta2.weights[k])
    for k in phi.weights:
        np.testing.assert_array_equal(phi.weights[k], phi2.weights[k])


def test_training_is_bit_deterministic():
    windows, theta, phi = _training_fixture()
    schedule = TrainSchedule(epochs=5, batch_size=16, learning_rate=1e-3, seed=3)
    a_theta, a_phi, a_hist = train_encoder(windows, [], theta, phi, schedule)
    b_theta, b_phi, b_hist = train_encoder(windows, [], theta, phi, schedule)
    assert a_hist == b_hist
    for k in a_theta.weights:
        np.testing.assert_array_equal(a_theta.weights[k], b_theta.weights[k])
    for k in a_phi.weights:
        np.testing.assert_array_equal(a_phi.weights[k], b_phi.weights[k])


def test_single_class_pool_is_training_error():
    windows, theta, phi = _training_fixture()
    normals = [w for w in windows if w.label == 0]
    with pytest.raises(TrainingError):
        train_encoder(normals, [], theta, phi, TrainSchedule(epochs=1, seed=0))


def test_alignment_tendency_after_training():
    windows, theta, phi = _training_fixture()
    schedule = TrainSchedule(epochs=60, batch_size=512, learning_rate=1e-3, seed=3)
    theta2, _, _ = train_encoder(windows, [], theta, phi, schedule)
    vectors = encode_windows(windows, theta2)
    v = np.stack([x.values for x in vectors])
    v = v / np.linalg.norm(v, axis=1, keepdims=True)
    labels = np.array([w.label for w in windows])
    cos = v @ v.T
    same = cos[np.equal.outer(labels, labels) & ~np.eye(len(labels), dtype=bool)]
    diff = cos[~np.equal.outer(labels, labels)]
    assert same.mean() > diff.mean()


# -- persistence -----------------------------------------------------------------


def test_checkpoint_round_trip(tmp_path):
    theta, phi = tiny_params(seed=11)
    path = tmp_path / "encoder.npz"
    save_encoder_checkpoint(path, theta, phi, epoch=7, digest="beef")
    theta2, phi2, meta = load_encoder_checkpoint(path)
    assert meta["epoch"] == 7 and meta["digest"] == "beef"
    assert (theta2.input_dim, theta2.hidden_dim, theta2.num_layers) == (D, H, 2)
    np.testing.assert_array_equal(pack(theta.weights), pack(theta2.weights))
    np.testing.assert_array_equal(pack(phi.weights), pack(phi2.weights))


def test_checkpoint_rejects_garbage(tmp_path):
    path = tmp_path / "bad.npz"
    path.write_bytes(b"not an archive")
    with pytest.raises(SnapshotError):
        load_encoder_checkpoint(path)


def test_vector_table_round_trip_exact(tmp_path):
    rng = np.random.Generator(np.random.PCG64(2))
    vectors = [
        LogVector(rng.standard_normal(5), "target", i, label=None if i % 2 else 1)
        for i in range(5)
    ]
    path = tmp_path / "vectors.tsv"
    export_vectors(vectors, path, digest="cafe")
    back = import_vectors(path)
    assert len(back) == 5
    for a, b in zip(vectors, back):
        np.testing.assert_array_equal(a.values, b.values)
        assert a.label == b.label and a.origin == b.origin and a.window_index == b.window_index
    export_vectors([], tmp_path / "empty.tsv")
    assert import_vectors(tmp_path / "empty.tsv") == []
