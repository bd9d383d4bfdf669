"""Tests for the feed-forward classifier."""

import numpy as np
import pytest

from scripta.dataset import FeatureStore
from scripta.errors import ConfigError, FormatError
from scripta.mlp import (
    MlpModel,
    TrainConfig,
    backward,
    compute_batch_size,
    cross_entropy,
    embed,
    embed_batch,
    forward,
    init_model,
    load_model,
    make_dropout_masks,
    save_model,
    train,
)
from scripta.srslbp import config_digest


def small_model(seed=0, output_activation="softmax"):
    return init_model(
        6, ("a", "b", "c"), seed=seed, hidden_sizes=(5, 4),
        output_activation=output_activation,
    )


def blob_store(rng, n_per_class=20, dim=12, n_classes=3, noise=0.05):
    """Linearly separable clusters dressed up as a feature store."""
    feats, labels = [], []
    for c in range(n_classes):
        center = np.zeros(dim)
        center[c * (dim // n_classes) : (c + 1) * (dim // n_classes)] = 1.0
        feats.append(center + noise * rng.standard_normal((n_per_class, dim)))
        labels.extend([c] * n_per_class)
    classes = tuple(f"cls{i}" for i in range(n_classes))
    return FeatureStore(
        np.concatenate(feats).astype(np.float32),
        np.array(labels, dtype=np.uint32),
        classes,
        (1,),
        "global",
    )


# ---------------------------------------------------------------------------
# initialization


def test_init_shapes_and_zero_biases():
    m = small_model()
    assert [w.shape for w in m.weights] == [(6, 5), (5, 4), (4, 3)]
    assert m.layer_sizes == (6, 5, 4, 3)
    for b in m.biases:
        np.testing.assert_array_equal(b, 0.0)


def test_init_glorot_bounds():
    m = init_model(100, ("a", "b"), seed=3, hidden_sizes=(50, 20))
    for w in m.weights:
        limit = np.sqrt(6.0 / (w.shape[0] + w.shape[1]))
        assert np.abs(w).max() <= limit
        # something actually close to the bound: the draw is uniform
        assert np.abs(w).max() > 0.8 * limit


def test_init_weights_live_on_float32_grid():
    m = small_model(seed=9)
    for w in m.weights:
        np.testing.assert_array_equal(w, w.astype(np.float32).astype(np.float64))


def test_init_deterministic_in_seed():
    a, b, c = small_model(seed=4), small_model(seed=4), small_model(seed=5)
    for wa, wb in zip(a.weights, b.weights):
        np.testing.assert_array_equal(wa, wb)
    assert any(not np.array_equal(wa, wc) for wa, wc in zip(a.weights, c.weights))


def test_parameter_count_at_reference_size():
    m = init_model(9216, tuple(f"s{i}" for i in range(10)), seed=0)
    assert m.n_parameters == 9_968_138


def test_init_rejects_bad_inputs():
    with pytest.raises(ValueError):
        init_model(0, ("a", "b"))
    with pytest.raises(ValueError):
        init_model(4, ("a",))
    with pytest.raises(ValueError):
        init_model(4, ("a", "a"))
    with pytest.raises(ValueError):
        init_model(4, ("a", "b"), output_activation="relu")


# ---------------------------------------------------------------------------
# forward pass


def test_forward_softmax_rows_sum_to_one():
    rng = np.random.default_rng(2)
    m = small_model(seed=1)
    acts = forward(m, rng.standard_normal((10, 6)))
    assert acts.output.shape == (10, 3)
    np.testing.assert_allclose(acts.output.sum(axis=1), 1.0, rtol=0, atol=1e-12)
    assert acts.output.min() > 0.0
    assert acts.hidden1.shape == (10, 5)
    assert acts.hidden2.shape == (10, 4)


def test_forward_logistic_outputs_in_unit_interval():
    rng = np.random.default_rng(3)
    m = small_model(seed=1, output_activation="logistic")
    out = forward(m, rng.standard_normal((8, 6))).output
    assert out.min() > 0.0 and out.max() < 1.0


def test_forward_rejects_wrong_width():
    with pytest.raises(ValueError):
        forward(small_model(), np.zeros((3, 7)))


def test_dropout_masks_values_and_scale():
    rng = np.random.default_rng(7)
    masks = make_dropout_masks(rng, (64, 32), 50, 0.5)
    assert [m.shape for m in masks] == [(50, 64), (50, 32)]
    for m in masks:
        assert set(np.unique(m)) <= {0.0, 2.0}
        assert abs(m.mean() - 1.0) < 0.1
    ones = make_dropout_masks(rng, (8,), 4, 1.0)[0]
    np.testing.assert_array_equal(ones, 1.0)
    with pytest.raises(ValueError):
        make_dropout_masks(rng, (8,), 4, 0.0)


def test_cross_entropy_known_values():
    assert cross_entropy(np.array([[0.5, 0.5]]), [0]) == pytest.approx(np.log(2.0))
    # clamp keeps exact zeros finite
    assert cross_entropy(np.array([[0.0, 1.0]]), [0]) == pytest.approx(
        -np.log(1e-12)
    )
    near_perfect = cross_entropy(np.array([[1.0, 0.0]]), [0])
    assert near_perfect == 0.0


# ---------------------------------------------------------------------------
# gradients against central finite differences


def numeric_gradients(model, x, y, masks, eps=1e-6):
    def loss():
        return cross_entropy(forward(model, x, masks).output, y)

    num_w, num_b = [], []
    for arrs, out in ((model.weights, num_w), (model.biases, num_b)):
        for a in arrs:
            g = np.zeros_like(a)
            for idx in np.ndindex(a.shape):
                orig = a[idx]
                a[idx] = orig + eps
                lp = loss()
                a[idx] = orig - eps
                lm = loss()
                a[idx] = orig
                g[idx] = (lp - lm) / (2 * eps)
            out.append(g)
    return num_w, num_b


@pytest.mark.parametrize("output_activation", ["softmax", "logistic"])
@pytest.mark.parametrize("with_dropout", [False, True])
def test_backward_matches_finite_differences(output_activation, with_dropout):
    rng = np.random.default_rng(11)
    model = small_model(seed=13, output_activation=output_activation)
    x = rng.standard_normal((7, 6))
    y = rng.integers(0, 3, size=7)
    masks = None
    if with_dropout:
        masks = make_dropout_masks(np.random.default_rng(5), (5, 4), 7, 0.5)
    acts = forward(model, x, masks)
    grads = backward(model, x, acts, y, masks)
    num_w, num_b = numeric_gradients(model, x, y, masks)
    for analytic, numeric in zip(grads.weights + grads.biases, num_w + num_b):
        np.testing.assert_allclose(analytic, numeric, rtol=1e-5, atol=1e-8)


# ---------------------------------------------------------------------------
# training


def test_batch_size_rule():
    assert compute_batch_size(1.0, 100, 10) == 32
    assert compute_batch_size(1.0, 3200, 10) == 320
    assert compute_batch_size(2.0, 320, 10) == 64
    # clamped by the training set itself
    assert compute_batch_size(1.0, 20, 2) == 20


def test_train_learns_separable_blobs():
    rng = np.random.default_rng(17)
    store = blob_store(rng)
    model = init_model(12, store.class_list, seed=1, hidden_sizes=(16, 8))
    cfg = TrainConfig(
        epochs=30, learning_rate=0.5, dropout_keep=1.0,
        validation_fraction=0.25, seed=2,
    )
    trained, hist = train(model, store, cfg)
    assert hist.n_epochs == 30
    assert hist.train_loss is not None
    assert hist.train_loss[-1] < hist.train_loss[0]
    assert hist.output_error[-1] == 0.0
    acts = embed_batch(trained, store.features.astype(np.float64))
    assert (acts.output.argmax(axis=1) == store.labels).mean() == 1.0


def test_train_does_not_mutate_input_model():
    rng = np.random.default_rng(19)
    store = blob_store(rng, n_per_class=8)
    model = init_model(12, store.class_list, seed=3, hidden_sizes=(8, 4))
    before = [w.copy() for w in model.weights]
    train(model, store, TrainConfig(epochs=2, seed=0))
    for w, b in zip(model.weights, before):
        np.testing.assert_array_equal(w, b)
    assert model.config_digest is None


def test_train_deterministic_in_seed():
    rng = np.random.default_rng(23)
    store = blob_store(rng, n_per_class=8)
    model = init_model(12, store.class_list, seed=3, hidden_sizes=(8, 4))
    cfg = TrainConfig(epochs=3, seed=7)
    t1, h1 = train(model, store, cfg)
    t2, h2 = train(model, store, cfg)
    for wa, wb in zip(t1.weights, t2.weights):
        np.testing.assert_array_equal(wa, wb)
    np.testing.assert_array_equal(h1.output_error, h2.output_error)
    t3, _ = train(model, store, TrainConfig(epochs=3, seed=8))
    assert any(not np.array_equal(a, b) for a, b in zip(t1.weights, t3.weights))


def test_train_keeps_weights_on_float32_grid():
    rng = np.random.default_rng(29)
    store = blob_store(rng, n_per_class=8)
    model = init_model(12, store.class_list, seed=0, hidden_sizes=(8, 4))
    trained, _ = train(model, store, TrainConfig(epochs=2, seed=1))
    for a in trained.weights + trained.biases:
        np.testing.assert_array_equal(a, a.astype(np.float32).astype(np.float64))


def test_train_binds_store_digest():
    rng = np.random.default_rng(31)
    store = blob_store(rng, n_per_class=8)
    model = init_model(12, store.class_list, seed=0, hidden_sizes=(8, 4))
    assert model.config_digest is None
    trained, _ = train(model, store, TrainConfig(epochs=1, seed=0))
    assert trained.config_digest == store.digest


def test_train_rejects_mismatched_artifacts():
    rng = np.random.default_rng(37)
    store = blob_store(rng, n_per_class=8)
    wrong_classes = init_model(12, ("x", "y", "z"), seed=0, hidden_sizes=(8, 4))
    with pytest.raises(ConfigError):
        train(wrong_classes, store, TrainConfig(epochs=1))
    wrong_dim = init_model(13, store.class_list, seed=0, hidden_sizes=(8, 4))
    with pytest.raises(ConfigError):
        train(wrong_dim, store, TrainConfig(epochs=1))
    wrong_digest = init_model(
        12, store.class_list, seed=0, hidden_sizes=(8, 4),
        config_digest=config_digest((1, 2), "three-halves"),
    )
    with pytest.raises(ConfigError):
        train(wrong_digest, store, TrainConfig(epochs=1))


def test_train_without_validation_split_scores_train_set():
    rng = np.random.default_rng(41)
    store = blob_store(rng, n_per_class=6)
    model = init_model(12, store.class_list, seed=0, hidden_sizes=(8, 4))
    _, hist = train(
        model, store, TrainConfig(epochs=2, validation_fraction=0.0, seed=0)
    )
    # every probe sits in the gallery at distance exactly zero
    np.testing.assert_array_equal(hist.layer1_error, 0.0)
    np.testing.assert_array_equal(hist.layer2_error, 0.0)


def test_train_config_validation():
    with pytest.raises(ValueError):
        TrainConfig(epochs=0)
    with pytest.raises(ValueError):
        TrainConfig(learning_rate=0.0)
    with pytest.raises(ValueError):
        TrainConfig(dropout_keep=0.0)
    with pytest.raises(ValueError):
        TrainConfig(validation_fraction=1.0)
    with pytest.raises(ValueError):
        TrainConfig(batch_scale=-1.0)


# ---------------------------------------------------------------------------
# embeddings and persistence


def test_embed_matches_embed_batch():
    rng = np.random.default_rng(43)
    m = small_model(seed=2)
    x = rng.standard_normal((4, 6))
    batch = embed_batch(m, x)
    single = embed(m, x[2])
    # BLAS may pick different kernels for 1-row and 4-row products, so the
    # agreement is to the last ulp rather than bitwise
    np.testing.assert_allclose(single.hidden1, batch.hidden1[2], rtol=1e-14)
    np.testing.assert_allclose(single.hidden2, batch.hidden2[2], rtol=1e-14)
    np.testing.assert_allclose(single.output, batch.output[2], rtol=1e-14)
    with pytest.raises(ValueError):
        embed(m, x)


def test_save_load_roundtrip_bitwise(tmp_path):
    rng = np.random.default_rng(47)
    store = blob_store(rng, n_per_class=8)
    model = init_model(12, store.class_list, seed=5, hidden_sizes=(8, 4))
    trained, _ = train(model, store, TrainConfig(epochs=2, seed=5))
    p = tmp_path / "m.smlp"
    save_model(trained, p)
    again = load_model(p)
    assert again.class_list == trained.class_list
    assert again.output_activation == trained.output_activation
    assert again.config_digest == trained.config_digest
    assert again.seed == trained.seed
    for a, b in zip(again.weights + again.biases, trained.weights + trained.biases):
        np.testing.assert_array_equal(a, b)


def test_loaded_model_reproduces_outputs_exactly(tmp_path):
    rng = np.random.default_rng(53)
    m = small_model(seed=6)
    p = tmp_path / "m.smlp"
    save_model(m, p)
    again = load_model(p)
    x = rng.standard_normal((100, 6))
    a, b = embed_batch(m, x), embed_batch(again, x)
    np.testing.assert_array_equal(a.output, b.output)
    np.testing.assert_array_equal(a.hidden1, b.hidden1)
    np.testing.assert_array_equal(a.hidden2, b.hidden2)


def test_load_rejects_corrupt_files(tmp_path):
    p = tmp_path / "m.smlp"
    save_model(small_model(seed=7), p)
    good = p.read_bytes()

    p.write_bytes(b"XXXX" + good[4:])
    with pytest.raises(FormatError, match="magic"):
        load_model(p)

    bad_version = bytearray(good)
    bad_version[4] = 9
    p.write_bytes(bytes(bad_version))
    with pytest.raises(FormatError, match="version"):
        load_model(p)

    p.write_bytes(good[:-3])
    with pytest.raises(FormatError, match="bytes"):
        load_model(p)

    headerless = bytearray(good)
    headerless[12] = ord("!")
    p.write_bytes(bytes(headerless))
    with pytest.raises(FormatError, match="header"):
        load_model(p)


def test_model_validation():
    w = [np.zeros((4, 3)), np.zeros((3, 2))]
    b = [np.zeros(3), np.zeros(2)]
    MlpModel(w, b, ("a", "b"))
    with pytest.raises(ValueError):
        MlpModel(w, b, ("a", "b", "c"))
    with pytest.raises(ValueError):
        MlpModel(w, [np.zeros(2), np.zeros(2)], ("a", "b"))
    with pytest.raises(ValueError):
        MlpModel([np.zeros((4, 3)), np.zeros((5, 2))], b, ("a", "b"))
