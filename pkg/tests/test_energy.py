import math

import numpy as np
import pytest

from logadapt._nn import pack, softplus
from logadapt.encoder import TrainSchedule
from logadapt.energy import (
    ClassifierParams,
    EnergyPair,
    class_probabilities,
    energies,
    energies_matrix,
    export_scores,
    finetune,
    free_energy,
    free_energy_array,
    init_classifier,
    load_classifier_checkpoint,
    predict,
    predict_matrix,
    save_classifier_checkpoint,
    score_pool,
    train_source,
    uncertainty,
)
from logadapt.errors import (
    ContractError,
    DegenerateEnergyError,
    ShapeError,
    SnapshotError,
    TrainingError,
)


def test_zero_parameters_give_ln2_energies():
    psi = init_classifier(4, 8, 8, seed=0)
    for k in psi.weights:
        psi.weights[k][:] = 0.0
    pair = energies(np.ones(4), psi)
    assert pair.e0 == pytest.approx(math.log(2), abs=1e-12)
    assert pair.e1 == pytest.approx(math.log(2), abs=1e-12)


def test_energies_deterministic_and_nonnegative():
    psi = init_classifier(6, 16, 16, seed=3)
    rng = np.random.Generator(np.random.PCG64(0))
    v = rng.standard_normal(6)
    a, b = energies(v, psi), energies(v, psi)
    assert (a.e0, a.e1) == (b.e0, b.e1)
    assert a.e0 >= 0 and a.e1 >= 0


def test_hand_built_toy_network_forward():
    # 1-dim input, single unit per layer, weights chosen by hand
    psi = ClassifierParams(
        weights={
            "W1": np.array([[0.5]]),
            "b1": np.array([0.1]),
            "W2": np.array([[1.0]]),
            "b2": np.array([0.0]),
            "W3": np.array([[1.0, -1.0]]),
            "b3": np.array([0.2, 0.3]),
        },
        input_dim=1,
        hidden_dim=1,
        layer_dim=1,
        seed=0,
    )
    # h1 = relu(0.5*2 + 0.1) = 1.1; h2 = 1.1; u = (1.3, -0.8)
    pair = energies(np.array([2.0]), psi)
    assert pair.e0 == pytest.approx(math.log1p(math.exp(1.3)), abs=1e-12)
    assert pair.e1 == pytest.approx(math.log1p(math.exp(-0.8)), abs=1e-12)


def test_energies_shape_error():
    psi = init_classifier(4, 8, 8, seed=0)
    with pytest.raises(ShapeError):
        energies(np.zeros(5), psi)


def test_predict_argmin_and_tie_rule():
    # argmin over the pair; a tie resolves to the normal class
    assert _predict_pair(1.0, 3.0) == 0
    assert _predict_pair(3.0, 1.0) == 1
    assert _predict_pair(2.0, 2.0) == 0


def _predict_pair(e0, e1):
    return 0 if e0 <= e1 else 1


def test_predict_shift_invariance_on_real_network():
    psi = init_classifier(5, 8, 8, seed=2)
    rng = np.random.Generator(np.random.PCG64(4))
    x = rng.standard_normal((50, 5))
    e = energies_matrix(psi, x)
    base = (e[:, 1] < e[:, 0]).astype(int)
    shifted = ((e[:, 1] + 5.0) < (e[:, 0] + 5.0)).astype(int)
    np.testing.assert_array_equal(base, shifted)
    np.testing.assert_array_equal(predict_matrix(psi, x), base)
    assert predict(x[0], psi) == base[0]


# -- free energy ---------------------------------------------------------------


def test_free_energy_symmetric_zeros():
    assert free_energy(EnergyPair(0.0, 0.0)) == pytest.approx(-math.log(2), abs=1e-12)


def test_free_energy_hand_value():
    # direct evaluation: -ln(e^-1 + e^-3) = 0.8730719889570274
    expected = -math.log(math.exp(-1.0) + math.exp(-3.0))
    assert expected == pytest.approx(0.8730719889570274, abs=1e-12)
    assert free_energy(EnergyPair(1.0, 3.0)) == pytest.approx(expected, abs=1e-12)


def test_free_energy_shift_covariance():
    base = free_energy(EnergyPair(1.0, 3.0))
    for c in (0.5, 2.0, 17.0, -0.3):
        assert free_energy(EnergyPair(1.0 + c, 3.0 + c)) == pytest.approx(base + c, abs=1e-9)


def test_free_energy_matches_direct_evaluation_on_random_pairs():
    rng = np.random.Generator(np.random.PCG64(99))
    pairs = rng.uniform(0.0, 30.0, size=(100_000, 2))
    stable = free_energy_array(pairs)
    direct = -np.log(np.exp(-pairs[:, 0]) + np.exp(-pairs[:, 1]))
    assert np.max(np.abs(stable - direct)) < 1e-9


def test_free_energy_sandwich_and_monotonicity():
    rng = np.random.Generator(np.random.PCG64(7))
    pairs = rng.uniform(0.0, 50.0, size=(100_000, 2))
    f = free_energy_array(pairs)
    lo = pairs.min(axis=1)
    assert np.all(f <= lo + 1e-12)
    assert np.all(f >= lo - math.log(2) - 1e-12)
    # raising either energy strictly raises F
    assert free_energy(EnergyPair(1.5, 3.0)) > free_energy(EnergyPair(1.0, 3.0))
    assert free_energy(EnergyPair(1.0, 3.5)) > free_energy(EnergyPair(1.0, 3.0))


# -- probabilities / uncertainty -------------------------------------------------


def test_class_probabilities_pinned_cases():
    assert class_probabilities(EnergyPair(2.0, 2.0)) == pytest.approx((0.5, 0.5))
    assert class_probabilities(EnergyPair(1.0, 3.0)) == pytest.approx((0.25, 0.75))
    assert class_probabilities(EnergyPair(0.0, 4.0)) == pytest.approx((0.0, 1.0))


def test_probabilities_sum_to_one_in_range():
    rng = np.random.Generator(np.random.PCG64(13))
    for e0, e1 in rng.uniform(0.0, 20.0, size=(500, 2)):
        p0, p1 = class_probabilities(EnergyPair(float(e0), float(e1)))
        assert 0.0 <= p0 <= 1.0 and 0.0 <= p1 <= 1.0
        assert p0 + p1 == pytest.approx(1.0, abs=1e-12)


def test_uncertainty_pinned_cases():
    assert uncertainty(EnergyPair(2.0, 2.0)) == pytest.approx(0.0)
    assert uncertainty(EnergyPair(1.0, 3.0)) == pytest.approx(0.5)
    assert uncertainty(EnergyPair(0.0, 4.0)) == pytest.approx(1.0)


def test_degenerate_energy_is_an_error():
    with pytest.raises(DegenerateEnergyError):
        class_probabilities(EnergyPair(0.0, 0.0))
    with pytest.raises(DegenerateEnergyError):
        uncertainty(EnergyPair(0.0, 0.0))


def test_boltzmann_mode_alternative():
    p0, p1 = class_probabilities(EnergyPair(1.0, 3.0), mode="boltzmann")
    z = math.exp(-1.0) + math.exp(-3.0)
    assert p0 == pytest.approx(math.exp(-1.0) / z)
    assert p1 == pytest.approx(math.exp(-3.0) / z)
    # boltzmann handles the all-zero pair that the ratio rejects
    assert class_probabilities(EnergyPair(0.0, 0.0), mode="boltzmann") == pytest.approx((0.5, 0.5))
    with pytest.raises(ContractError):
        class_probabilities(EnergyPair(1.0, 2.0), mode="banana")


def test_score_pool_fields_and_export(tmp_path):
    psi = init_classifier(4, 8, 8, seed=1)
    rng = np.random.Generator(np.random.PCG64(3))
    vectors = rng.standard_normal((6, 4))
    scores = score_pool(psi, vectors, list(range(6)))
    assert [s.window_index for s in scores] == list(range(6))
    for s in scores:
        assert s.uncertainty == pytest.approx(abs(s.p0 - s.p1))
        assert s.free_energy == pytest.approx(free_energy(EnergyPair(s.e0, s.e1)))
    path = tmp_path / "scores.tsv"
    export_scores(scores, path, digest="d")
    lines = path.read_text().splitlines()
    assert len(lines) == 7 and lines[0].endswith("digest=d")


# -- training ---------------------------------------------------------------------


def separable_toy(n=40, seed=5):
    rng = np.random.Generator(np.random.PCG64(seed))
    half = n // 2
    x0 = rng.normal(loc=(+2.0, 0.0), scale=0.3, size=(half, 2))
    x1 = rng.normal(loc=(-2.0, 0.0), scale=0.3, size=(half, 2))
    x = np.concatenate([x0, x1])
    y = np.array([0] * half + [1] * half)
    return x, y


def test_train_source_separates_linear_toy():
    x, y = separable_toy()
    psi = init_classifier(2, 16, 16, seed=0)
    psi, history = train_source(x, y, psi, TrainSchedule(epochs=120, batch_size=40, seed=1))
    assert psi.phase == "source"
    preds = predict_matrix(psi, x)
    accuracy = float(np.mean(preds == y))
    assert accuracy == 1.0
    assert history[-1] < history[0]


def test_train_source_zero_epochs_no_change():
    x, y = separable_toy()
    psi0 = init_classifier(2, 8, 8, seed=0)
    psi, history = train_source(x, y, psi0, TrainSchedule(epochs=0, seed=1))
    assert history == []
    np.testing.assert_array_equal(pack(psi0.weights), pack(psi.weights))


def test_train_source_seeded_determinism():
    x, y = separable_toy()
    psi0 = init_classifier(2, 8, 8, seed=0)
    a, _ = train_source(x, y, psi0, TrainSchedule(epochs=10, batch_size=8, seed=2))
    b, _ = train_source(x, y, psi0, TrainSchedule(epochs=10, batch_size=8, seed=2))
    np.testing.assert_array_equal(pack(a.weights), pack(b.weights))


def test_train_source_single_class_error():
    x, _ = separable_toy()
    psi = init_classifier(2, 8, 8, seed=0)
    with pytest.raises(TrainingError):
        train_source(x, np.zeros(len(x), dtype=int), psi, TrainSchedule(epochs=1, seed=0))


def test_training_accuracy_on_fixture_at_least_95():
    rng = np.random.Generator(np.random.PCG64(8))
    x0 = rng.normal((1.5, -0.5, 0.0), 0.6, size=(60, 3))
    x1 = rng.normal((-1.5, 0.5, 0.3), 0.6, size=(60, 3))
    x = np.concatenate([x0, x1])
    y = np.array([0] * 60 + [1] * 60)
    psi = init_classifier(3, 16, 16, seed=4)
    psi, _ = train_source(x, y, psi, TrainSchedule(epochs=150, batch_size=64, seed=5))
    assert float(np.mean(predict_matrix(psi, x) == y)) >= 0.95


# -- finetune ----------------------------------------------------------------------


def two_domain_fixture(seed=11):
    rng = np.random.Generator(np.random.PCG64(seed))
    src_x, src_y = separable_toy(60, seed)
    # target sits shifted away from the source clusters
    tgt0 = rng.normal((+2.6, 1.8), 0.4, size=(30, 2))
    tgt1 = rng.normal((-2.6, -1.8), 0.4, size=(30, 2))
    tgt_x = np.concatenate([tgt0, tgt1])
    tgt_y = np.array([0] * 30 + [1] * 30)
    return src_x, src_y, tgt_x, tgt_y


def test_finetune_requires_target_labels():
    src_x, src_y, tgt_x, _ = two_domain_fixture()
    psi = init_classifier(2, 8, 8, seed=0)
    with pytest.raises(ContractError):
        finetune(psi, src_x, src_y, np.zeros((0, 2)), [], tgt_x)


def test_finetune_zero_alignment_equals_source_continuation():
    src_x, src_y, tgt_x, _ = two_domain_fixture()
    psi0 = init_classifier(2, 8, 8, seed=0)
    psi_src, _ = train_source(src_x, src_y, psi0, TrainSchedule(epochs=20, batch_size=32, seed=3))
    schedule = TrainSchedule(epochs=15, batch_size=32, seed=9)
    cont, hist_a = train_source(src_x, src_y, psi_src, schedule)
    tuned, hist_b = finetune(
        psi_src, src_x, src_y, np.zeros((0, 2)), [], tgt_x,
        align_weight=0.0, schedule=schedule, require_target_labels=False,
    )
    assert hist_a == hist_b
    np.testing.assert_array_equal(pack(cont.weights), pack(tuned.weights))
    assert tuned.phase == "target"


def test_finetune_reduces_free_energy_gap():
    src_x, src_y, tgt_x, tgt_y = two_domain_fixture()
    psi0 = init_classifier(2, 16, 16, seed=2)
    psi_src, _ = train_source(src_x, src_y, psi0, TrainSchedule(epochs=100, batch_size=64, seed=3))

    def gap(psi):
        f_src = free_energy_array(energies_matrix(psi, src_x)).mean()
        f_tgt = free_energy_array(energies_matrix(psi, tgt_x)).mean()
        return f_tgt - f_src

    before = gap(psi_src)
    labeled = np.concatenate([tgt_x[:5], tgt_x[30:35]])
    labels = [0] * 5 + [1] * 5
    tuned, _ = finetune(
        psi_src, src_x, src_y, labeled, labels, tgt_x,
        align_weight=0.05, schedule=TrainSchedule(epochs=60, batch_size=64, seed=4),
    )
    assert gap(tuned) < before


def test_finetune_seeded_determinism():
    src_x, src_y, tgt_x, tgt_y = two_domain_fixture()
    psi0 = init_classifier(2, 8, 8, seed=0)
    psi_src, _ = train_source(src_x, src_y, psi0, TrainSchedule(epochs=10, batch_size=32, seed=3))
    args = (psi_src, src_x, src_y, tgt_x[:4], [0, 0, 1, 1], tgt_x)
    kwargs = dict(align_weight=0.01, schedule=TrainSchedule(epochs=10, batch_size=32, seed=5))
    a, _ = finetune(*args, **kwargs)
    b, _ = finetune(*args, **kwargs)
    np.testing.assert_array_equal(pack(a.weights), pack(b.weights))


# -- persistence ---------------------------------------------------------------------


def test_classifier_checkpoint_round_trip(tmp_path):
    psi = init_classifier(4, 8, 8, seed=6, phase="target")
    path = tmp_path / "clf.npz"
    save_classifier_checkpoint(path, psi, epoch=3, digest="ab12")
    psi2, meta = load_classifier_checkpoint(path)
    assert meta["phase"] == "target" and meta["epoch"] == 3
    np.testing.assert_array_equal(pack(psi.weights), pack(psi2.weights))
    bad = tmp_path / "bad.npz"
    bad.write_bytes(b"junk")
    with pytest.raises(SnapshotError):
        load_classifier_checkpoint(bad)


def test_softplus_matches_reference():
    x = np.linspace(-30, 30, 101)
    np.testing.assert_allclose(softplus(x), np.log1p(np.exp(-np.abs(x))) + np.maximum(x, 0))
