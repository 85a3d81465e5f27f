import numpy as np
import pytest

from flowtune.nn import (CheckpointError, MlpSurrogate, NormStats,
                         load_checkpoint, load_manifest, save_checkpoint,
                         save_manifest, unit_seed)

from oracles import reference_mlp_forward


def random_model(seed=0, d_in=5, d_out=3, pinned=False):
    rng = np.random.default_rng(seed)
    def stats(dim):
        pin = np.zeros(dim, dtype=bool)
        sigma = rng.uniform(0.5, 2.0, dim)
        if pinned:
            pin[0] = True
            sigma[0] = 1e-8
        return NormStats(mu=rng.normal(size=dim), sigma=sigma, pinned=pin)
    model = MlpSurrogate.initialize(d_in, d_out, stats(d_in), stats(d_out), seed=seed)
    for name in model.params:
        model.params[name] = rng.normal(scale=0.3, size=model.params[name].shape)
    return model


def test_zero_weights_give_output_mean():
    stats_in = NormStats.identity(4)
    stats_out = NormStats(mu=np.array([1.0, -2.0]), sigma=np.array([3.0, 0.5]),
                          pinned=np.zeros(2, dtype=bool))
    model = MlpSurrogate.initialize(4, 2, stats_in, stats_out, seed=1)
    for name in model.params:
        model.params[name][:] = 0.0
    np.testing.assert_array_equal(model.predict(np.ones(4)), stats_out.mu)


def test_identity_skip_reproduces_input():
    dim = 3
    stats = NormStats(mu=np.array([1.0, 2.0, 3.0]), sigma=np.array([2.0, 4.0, 8.0]),
                      pinned=np.zeros(dim, dtype=bool))
    model = MlpSurrogate.initialize(dim, dim, stats, stats, seed=2)
    for name in model.params:
        model.params[name][:] = 0.0
    model.params["w_skip"][:] = np.eye(dim)
    x = np.array([0.5, -1.5, 11.0])
    np.testing.assert_allclose(model.predict(x), x, atol=1e-12)


@pytest.mark.parametrize("seed", range(5))
def test_forward_matches_reference_implementation(seed):
    model = random_model(seed)
    x = np.random.default_rng(100 + seed).normal(size=model.d_in)
    expected = reference_mlp_forward(
        model.params, model.input_norm.mu, model.input_norm.sigma,
        model.input_norm.pinned, model.output_norm.mu, model.output_norm.sigma,
        model.output_norm.pinned, x)
    np.testing.assert_allclose(model.predict(x), expected, rtol=0, atol=1e-12)


def test_batch_forward_matches_per_row():
    model = random_model(3)
    xs = np.random.default_rng(8).normal(size=(7, model.d_in))
    batch = model.predict(xs)
    rows = np.stack([model.predict(x) for x in xs])
    np.testing.assert_allclose(batch, rows, atol=1e-14)


def test_record_matches_predict():
    from flowtune.autograd import Tape

    model = random_model(4)
    x = np.random.default_rng(9).normal(size=model.d_in)
    tape = Tape()
    out = model.record(tape, tape.input(x))
    np.testing.assert_allclose(out.value, model.predict(x), atol=1e-14)


def test_normalization_round_trip():
    rng = np.random.default_rng(12)
    data = rng.normal(size=(50, 6)) * rng.uniform(0.1, 30, 6) + rng.normal(size=6)
    stats = NormStats.from_data(data)
    x = rng.normal(size=6) * 10
    np.testing.assert_allclose(stats.denormalize(stats.normalize(x)), x,
                               rtol=0, atol=1e-12 * np.abs(x).max())


def test_pinned_channels_clamp_exactly():
    model = random_model(6, pinned=True)
    x = np.random.default_rng(1).normal(size=model.d_in)
    y1 = model.predict(x)
    x2 = x.copy()
    x2[0] += 123.0  # pinned input ignored
    y2 = model.predict(x2)
    np.testing.assert_array_equal(y1, y2)
    assert y1[0] == model.output_norm.mu[0]  # pinned output clamps to mean


def test_non_finite_input_rejected():
    model = random_model(5)
    x = np.ones(model.d_in)
    x[2] = np.nan
    with pytest.raises(ValueError):
        model.predict(x)


def test_dimension_mismatch_rejected():
    model = random_model(5)
    with pytest.raises(ValueError):
        model.predict(np.ones(model.d_in + 1))


def test_softplus_hidden_activations_positive():
    model = random_model(7)
    x = np.random.default_rng(2).normal(size=model.d_in) * 5
    xn = model.input_norm.normalize(x)
    h1 = np.logaddexp(0, xn @ model.params["w1"] + model.params["b1"])
    assert np.all(h1 > 0)


def test_checkpoint_round_trip_bit_exact(tmp_path):
    model = random_model(6, pinned=True)
    path = tmp_path / "unit.ckpt"
    save_checkpoint(model, path)
    loaded = load_checkpoint(path)
    for name in model.params:
        np.testing.assert_array_equal(loaded.params[name], model.params[name])
    np.testing.assert_array_equal(loaded.input_norm.mu, model.input_norm.mu)
    np.testing.assert_array_equal(loaded.input_norm.sigma, model.input_norm.sigma)
    np.testing.assert_array_equal(loaded.input_norm.pinned, model.input_norm.pinned)
    np.testing.assert_array_equal(loaded.output_norm.sigma, model.output_norm.sigma)


def test_checkpoint_bad_magic(tmp_path):
    path = tmp_path / "bad.ckpt"
    path.write_bytes(b"NOTCKPT" + b"\0" * 64)
    with pytest.raises(CheckpointError, match="magic"):
        load_checkpoint(path)


def test_checkpoint_truncated(tmp_path):
    model = random_model(2, d_in=3, d_out=2)
    path = tmp_path / "t.ckpt"
    save_checkpoint(model, path)
    data = path.read_bytes()
    path.write_bytes(data[:len(data) // 2])
    with pytest.raises(CheckpointError, match="bytes"):
        load_checkpoint(path)


def test_checkpoint_rejects_zero_sigma(tmp_path):
    model = random_model(2, d_in=3, d_out=2)
    model.output_norm.sigma[1] = 0.0
    path = tmp_path / "z.ckpt"
    save_checkpoint(model, path)
    with pytest.raises(CheckpointError, match="sigma"):
        load_checkpoint(path)


def test_checkpoint_rejects_nan_params(tmp_path):
    model = random_model(2, d_in=3, d_out=2)
    model.params["w2"][0, 0] = np.nan
    path = tmp_path / "n.ckpt"
    save_checkpoint(model, path)
    with pytest.raises(CheckpointError, match="non-finite"):
        load_checkpoint(path)


def test_manifest_round_trip(tmp_path):
    models = {"alpha": random_model(1), "beta": random_model(2, d_in=4, d_out=4)}
    manifest = save_manifest(models, tmp_path / "ckpts")
    loaded = load_manifest(manifest)
    assert set(loaded) == {"alpha", "beta"}
    np.testing.assert_array_equal(loaded["alpha"].params["w1"],
                                  models["alpha"].params["w1"])


def test_unit_seed_is_stable():
    assert unit_seed(42, "reactor") == unit_seed(42, "reactor")
    assert unit_seed(42, "reactor") != unit_seed(42, "mixer")
    assert unit_seed(42, "reactor") != unit_seed(43, "reactor")
