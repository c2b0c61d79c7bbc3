import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from iovfl.fl import (
    AdamConfig, AdamState, ModelParams, accuracy, adam_step, encode_accidents, fed_avg, forward,
    global_loss, gradient, init_model, load_model, local_loss, local_train, partition_data,
    save_model, softmax, steps_for_epochs,
)
from iovfl.ingestion import SynthConfig, synth_generate
from iovfl.selection import Tier

# Hand evaluation of the first Adam step from a zero state with g = 1:
# p' = 0.1, q' = 0.001, kappa' = 0.01*sqrt(0.001)/0.1, dW = -kappa'*p'/(sqrt(q')+1e-8),
# evaluated with 30-digit arithmetic.
ADAM_KAPPA_1 = 0.00316227766016837933
ADAM_DELTA_W = -0.00999999683772333983


def fd_gradient(model, X, G, h=1e-5):
    grads = []
    for li, w in enumerate(model.layers):
        g = np.zeros_like(w)
        for idx in np.ndindex(w.shape):
            plus, minus = model.copy(), model.copy()
            plus.layers[li][idx] += h
            minus.layers[li][idx] -= h
            g[idx] = (local_loss(forward(plus, X)[1], G) - local_loss(forward(minus, X)[1], G)) / (2 * h)
        grads.append(g)
    return grads


def random_problem(seed, widths=(4, 2, 3), n=5):
    rng = np.random.default_rng(seed)
    model = init_model(list(widths), seed)
    X = rng.normal(size=(n, widths[0]))
    G = np.eye(3)[rng.integers(0, 3, n)]
    return model, X, G


def test_init_deterministic_and_scaled():
    a, b = init_model([20, 128, 64, 3], 1), init_model([20, 128, 64, 3], 1)
    for wa, wb in zip(a.layers, b.layers):
        np.testing.assert_array_equal(wa, wb)
    assert [w.shape for w in a.layers] == [(21, 128), (129, 64), (65, 3)]
    assert np.abs(a.layers[0]).max() <= 1 / np.sqrt(20)
    with pytest.raises(ValueError):
        init_model([4, 0, 3], 0)
    with pytest.raises(ValueError):
        init_model([4, 2, 5], 0)


def test_forward_zero_weights_uniform_output():
    model = ModelParams([np.zeros((5, 2)), np.zeros((3, 3))])
    inputs, out = forward(model, np.ones((4, 4)))
    np.testing.assert_array_equal(inputs[1][:, :-1], 0.0)
    np.testing.assert_allclose(out, 1 / 3)


def test_forward_shape_mismatch():
    with pytest.raises(ValueError):
        forward(init_model([4, 2, 3], 0), np.ones((2, 5)))


def test_softmax_examples():
    np.testing.assert_allclose(softmax(np.zeros((1, 3))), [[1 / 3] * 3])
    z = np.array([[1.0, -2.0, 0.5]])
    np.testing.assert_allclose(softmax(z + 123.0), softmax(z), atol=1e-12)


@settings(max_examples=200, deadline=None)
@given(arrays(np.float64, (4, 3), elements=st.floats(-700, 700)))
def test_softmax_rows_sum_to_one(z):
    s = softmax(z)
    assert np.all(np.abs(s.sum(axis=1) - 1) <= 1e-9)
    assert np.all(s >= 0)


def test_local_loss_examples():
    G = np.array([[1.0, 0, 0]])
    assert local_loss(G, G) == 0.0
    assert local_loss(np.full((1, 3), 1 / 3), G) == pytest.approx(2 / 3)
    assert local_loss(np.full((2, 3), 1 / 3), np.vstack([G, G]), eta_n=2) == pytest.approx(2 / 3)
    with pytest.raises(ValueError):
        local_loss(np.zeros((1, 3)), np.zeros((2, 3)))


@pytest.mark.parametrize("seed", range(5))
def test_gradient_matches_finite_differences(seed):
    model, X, G = random_problem(seed)
    for a, b in zip(gradient(model, X, G), fd_gradient(model, X, G)):
        assert np.linalg.norm(a - b) / max(np.linalg.norm(b), 1e-12) < 1e-4


def test_gradient_zero_at_perfect_fit():
    # a saturated output cannot match a one-hot label exactly, so use a label equal to the output
    model, X, _ = random_problem(0)
    _, out = forward(model, X)
    for g in gradient(model, X, out):
        np.testing.assert_allclose(g, 0.0, atol=1e-15)


def test_gradient_invariant_to_duplicating_data():
    model, X, G = random_problem(1)
    for a, b in zip(gradient(model, X, G), gradient(model, np.vstack([X, X]), np.vstack([G, G]))):
        np.testing.assert_allclose(a, b, atol=1e-14)


def test_adam_single_step_hand_example():
    w = [np.array([[0.0]])]
    state = AdamState.zeros_like(w, AdamConfig(0.01, 0.9, 0.999, 1e-8))
    new_state, new_w = adam_step(state, [np.array([[1.0]])], w)
    assert new_state.p[0][0, 0] == pytest.approx(0.1, abs=1e-15)
    assert new_state.q[0][0, 0] == pytest.approx(0.001, abs=1e-15)
    assert new_state.tau == 1
    assert new_w[0][0, 0] == pytest.approx(ADAM_DELTA_W, abs=1e-12)
    # the kappa used is the bias-corrected step
    assert abs(new_w[0][0, 0]) == pytest.approx(ADAM_KAPPA_1 * 0.1 / (np.sqrt(0.001) + 1e-8), abs=1e-15)


def test_adam_zero_gradient_leaves_weights():
    w = [np.array([[0.3, -0.2]])]
    _, new_w = adam_step(AdamState.zeros_like(w), [np.zeros((1, 2))], w)
    np.testing.assert_array_equal(new_w[0], w[0])


@settings(max_examples=100, deadline=None)
@given(arrays(np.float64, (2, 3), elements=st.floats(-5, 5).filter(lambda x: abs(x) > 1e-6)))
def test_adam_first_step_opposes_gradient(g):
    w = [np.zeros((2, 3))]
    _, new_w = adam_step(AdamState.zeros_like(w), [g], w)
    np.testing.assert_array_equal(np.sign(new_w[0]), -np.sign(g))


def test_adam_config_validation():
    with pytest.raises(ValueError):
        AdamConfig(beta_p=1.0)
    with pytest.raises(ValueError):
        AdamConfig(epsilon=0.0)


def test_local_train_zero_steps_and_counter():
    model, X, G = random_problem(2, n=40)
    same, state = local_train(model, X, G, 0)
    assert state.tau == 0
    for a, b in zip(same.layers, model.layers):
        np.testing.assert_array_equal(a, b)
    _, state = local_train(model, X, G, 17, batch_size=8, seed=3)
    assert state.tau == 17


def test_local_train_deterministic_per_seed():
    model, X, G = random_problem(3, n=40)
    a, _ = local_train(model, X, G, 10, batch_size=8, seed=9)
    b, _ = local_train(model, X, G, 10, batch_size=8, seed=9)
    for wa, wb in zip(a.layers, b.layers):
        np.testing.assert_array_equal(wa, wb)


def test_local_train_reduces_loss_on_most_seeds():
    wins = 0
    for seed in range(10):
        model, X, G = random_problem(seed, widths=(6, 8, 3), n=60)
        before = local_loss(forward(model, X)[1], G)
        trained, _ = local_train(model, X, G, 60, batch_size=16, seed=seed)
        wins += local_loss(forward(trained, X)[1], G) <= before
    assert wins >= 9


def test_steps_for_epochs():
    assert steps_for_epochs(100, 5, 32) == 20
    assert steps_for_epochs(0, 5, 32) == 0


def test_fed_avg_examples():
    one = init_model([4, 2, 3], 0)
    single = fed_avg([one], [7])
    for a, b in zip(single.layers, one.layers):
        assert np.max(np.abs(a - b)) <= 1e-12
    m0 = ModelParams([np.zeros((1, 1))])
    m4 = ModelParams([np.full((1, 1), 4.0)])
    assert fed_avg([m0, m4], [1, 3]).layers[0][0, 0] == pytest.approx(3.0)
    same = fed_avg([one, one, one], [1, 2, 3])
    for a, b in zip(same.layers, one.layers):
        assert np.max(np.abs(a - b)) <= 1e-12


def test_fed_avg_errors():
    with pytest.raises(ValueError):
        fed_avg([], [])
    with pytest.raises(ValueError):
        fed_avg([init_model([4, 2, 3], 0), init_model([4, 3, 3], 0)], [1, 1])
    with pytest.raises(ValueError):
        fed_avg([init_model([4, 2, 3], 0)], [0])


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**32 - 1), st.integers(2, 5))
def test_fed_avg_permutation_invariant(seed, k):
    rng = np.random.default_rng(seed)
    models = [init_model([4, 2, 3], int(rng.integers(1000))) for _ in range(k)]
    etas = rng.integers(1, 50, k)
    perm = rng.permutation(k)
    a = fed_avg(models, etas)
    b = fed_avg([models[i] for i in perm], etas[perm])
    for wa, wb in zip(a.layers, b.layers):
        np.testing.assert_allclose(wa, wb, atol=1e-12)


def test_global_loss():
    assert global_loss([2.0, 4.0], 2) == 3.0
    assert global_loss([1.5]) == 1.5
    assert global_loss([0.0, 0.0, 0.0]) == 0.0
    with pytest.raises(ValueError):
        global_loss([])
    with pytest.raises(ValueError):
        global_loss([1.0], 2)


def test_accuracy():
    model = ModelParams([np.zeros((3, 3))])
    model.layers[0][0] = [5.0, 0.0, 0.0]
    X = np.array([[1.0, 0.0], [1.0, 0.0]])
    assert accuracy(model, X, np.array([0, 1])) == 0.5


def test_partition_noniid_sorted_slices():
    shards = partition_data(np.array([0, 0, 1, 1]), [Tier.LOW, Tier.LOW], "noniid", seed=0)
    labels = np.array([0, 0, 1, 1])
    assert sorted(labels[s].tolist() for s in shards) == [[0, 0], [1, 1]]


def test_partition_iid_equal_tiers_balanced():
    shards = partition_data(np.zeros(103, dtype=int), [Tier.MEDIUM] * 10, "iid", seed=1)
    sizes = [s.size for s in shards]
    assert max(sizes) - min(sizes) <= 1 and sum(sizes) == 103


def test_partition_deterministic_and_errors():
    labels = np.arange(50) % 3
    tiers = [Tier.HIGH, Tier.MEDIUM, Tier.LOW, Tier.LOW]
    a = partition_data(labels, tiers, "noniid", seed=4)
    b = partition_data(labels, tiers, "noniid", seed=4)
    assert all(np.array_equal(x, y) for x, y in zip(a, b))
    with pytest.raises(ValueError):
        partition_data(np.zeros(2, dtype=int), [Tier.LOW] * 3, "iid")
    with pytest.raises(ValueError):
        partition_data(labels, tiers, "shuffle")


@settings(max_examples=60, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), n=st.integers(10, 300), k=st.integers(1, 10), mode=st.sampled_from(["iid", "noniid"]))
def test_partition_covers_every_row_once(seed, n, k, mode):
    rng = np.random.default_rng(seed)
    labels = rng.integers(0, 3, n)
    tiers = [list(Tier)[i] for i in rng.integers(0, 3, k)]
    shards = partition_data(labels, tiers, mode, seed=seed)
    allrows = np.concatenate(shards)
    assert np.array_equal(np.sort(allrows), np.arange(n))
    assert all(s.size >= 1 for s in shards)


def test_partition_tier_weights_order_sizes():
    shards = partition_data(np.zeros(800, dtype=int), [Tier.HIGH, Tier.MEDIUM, Tier.LOW], "iid", seed=0)
    assert shards[0].size > shards[1].size > shards[2].size


def test_encode_accidents_one_hot():
    _, acc = synth_generate(SynthConfig(num_samples=50, num_locations=4, seed=1))
    data = encode_accidents(acc, 4)
    assert data.features.shape == (50, 4 + 7 + 24 + 4 + 5 + 5)
    np.testing.assert_array_equal(data.features.sum(axis=1), 6)
    np.testing.assert_array_equal(data.labels.sum(axis=1), 1)
    assert data.day.min() >= 1 and data.location.max() <= 4


def test_checkpoint_roundtrip(tmp_path):
    model = init_model([5, 4, 3], 2)
    save_model(model, tmp_path / "m.txt")
    back = load_model(tmp_path / "m.txt")
    for a, b in zip(model.layers, back.layers):
        np.testing.assert_array_equal(a, b)
