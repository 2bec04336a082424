import numpy as np
import pytest

from echofield.field import (
    FULL_SCALE,
    FieldConfig,
    FieldParams,
    TrainingError,
    backward,
    forward,
    forward_raw,
    heads,
    heads_backward,
    init,
    load_checkpoint,
    optimizer_step,
    save_checkpoint,
)


@pytest.fixture
def tiny_config():
    return FieldConfig(num_layers=2, hidden_width=8, num_bands=2, seed=3)


@pytest.fixture
def tiny_params(tiny_config):
    return init(tiny_config)


class TestFieldConfig:
    def test_layer_shapes_chain(self, tiny_config):
        # 2 hidden layers of width 8 on 12 input features, 2 outputs
        assert tiny_config.layer_shapes() == [(12, 8), (8, 8), (8, 2)]

    def test_large_preset_parameter_count(self):
        # 60-wide input, 8 hidden layers of 256, linear 2-unit head
        p = init(FULL_SCALE)
        expected = (60 * 256 + 256) + 7 * (256 * 256 + 256) + (256 * 2 + 2)
        assert p.n_parameters() == expected == 476_674

    def test_rejects_degenerate_configs(self):
        with pytest.raises(ValueError):
            FieldConfig(num_layers=1)
        with pytest.raises(ValueError):
            FieldConfig(hidden_width=2)
        with pytest.raises(ValueError):
            FieldConfig(num_bands=0)

    def test_round_trip_dict(self, tiny_config):
        assert FieldConfig.from_dict(tiny_config.to_dict()) == tiny_config


class TestInit:
    def test_deterministic_for_seed(self, tiny_config):
        a, b = init(tiny_config), init(tiny_config)
        for wa, wb in zip(a.weights, b.weights):
            np.testing.assert_array_equal(wa, wb)

    def test_seed_changes_weights(self, tiny_config):
        other = FieldConfig(num_layers=2, hidden_width=8, num_bands=2, seed=4)
        assert not np.array_equal(init(tiny_config).weights[0], init(other).weights[0])

    def test_uniform_bounds_and_zero_biases(self, tiny_params):
        for w, (fan_in, fan_out) in zip(
                tiny_params.weights, tiny_params.config.layer_shapes()):
            bound = np.sqrt(6.0 / (fan_in + fan_out))
            assert np.abs(w).max() <= bound
        for b in tiny_params.biases:
            np.testing.assert_array_equal(b, 0.0)


class TestForward:
    def test_output_shapes(self, tiny_params, rng):
        feats = rng.standard_normal((5, 12))
        logits, cache = forward_raw(tiny_params, feats, want_cache=True)
        assert logits.shape == (5, 2)
        assert len(cache.hidden) == 2
        single, _ = forward_raw(tiny_params, feats[0])
        np.testing.assert_allclose(single, logits[0], atol=1e-12)

    def test_head_ranges(self, tiny_params, rng):
        alpha, b = forward(tiny_params, rng.standard_normal((200, 12)) * 5)
        assert np.all(alpha >= 0)
        assert np.all((b > 0) & (b < 1))

    def test_heads_against_reference_values(self):
        logits = np.array([[0.0, 0.0], [2.0, -3.0]])
        alpha, b = heads(logits)
        np.testing.assert_allclose(alpha, [np.log(2.0), np.log1p(np.exp(2.0))],
                                   atol=1e-12)
        np.testing.assert_allclose(b, [0.5, 1 / (1 + np.exp(3.0))], atol=1e-12)

    def test_softplus_stable_at_extremes(self, tiny_params):
        logits = np.array([[800.0, -800.0]])
        alpha, b = heads(logits)
        assert np.isfinite(alpha[0]) and alpha[0] == pytest.approx(800.0)
        assert b[0] == 0.0 or b[0] < 1e-300

    def test_rejects_wrong_feature_length(self, tiny_params):
        with pytest.raises(ValueError, match="feature length"):
            forward_raw(tiny_params, np.zeros(11))


class TestBackward:
    def test_matches_finite_differences(self, tiny_params, rng):
        feats = rng.standard_normal((6, 12))
        d_logits = rng.standard_normal((6, 2))

        def objective(p):
            logits, _ = forward_raw(p, feats)
            return float(np.sum(d_logits * logits))

        logits, cache = forward_raw(tiny_params, feats, want_cache=True)
        d_w, d_b = backward(tiny_params, cache, d_logits)

        eps = 1e-6
        for li in range(len(tiny_params.weights)):
            for arr, grad in ((tiny_params.weights[li], d_w[li]),
                              (tiny_params.biases[li], d_b[li])):
                idx = tuple(rng.integers(0, s) for s in arr.shape)
                orig = arr[idx]
                arr[idx] = orig + eps
                hi = objective(tiny_params)
                arr[idx] = orig - eps
                lo = objective(tiny_params)
                arr[idx] = orig
                assert grad[idx] == pytest.approx((hi - lo) / (2 * eps), abs=1e-5)

    def test_heads_backward_matches_finite_differences(self, rng):
        logits = rng.standard_normal((8, 2))
        d_alpha = rng.standard_normal(8)
        d_b = rng.standard_normal(8)
        got = heads_backward(logits, d_alpha, d_b)
        eps = 1e-6
        for j in range(2):
            bumped = logits.copy()
            bumped[:, j] += eps
            a_hi, b_hi = heads(bumped)
            bumped[:, j] -= 2 * eps
            a_lo, b_lo = heads(bumped)
            fd = (d_alpha * (a_hi - a_lo) + d_b * (b_hi - b_lo)) / (2 * eps)
            np.testing.assert_allclose(got[:, j], fd, atol=1e-6)

    def test_requires_cache(self, tiny_params):
        with pytest.raises(ValueError, match="cache"):
            backward(tiny_params, None, np.zeros((1, 2)))

    def test_gradient_accumulates_over_batch(self, tiny_params, rng):
        feats = rng.standard_normal((4, 12))
        d_logits = rng.standard_normal((4, 2))
        _, cache = forward_raw(tiny_params, feats, want_cache=True)
        d_w, _ = backward(tiny_params, cache, d_logits)
        total = np.zeros_like(d_w[0])
        for i in range(4):
            _, c = forward_raw(tiny_params, feats[i : i + 1], want_cache=True)
            dwi, _ = backward(tiny_params, c, d_logits[i : i + 1])
            total += dwi[0]
        np.testing.assert_allclose(d_w[0], total, atol=1e-12)


class TestOptimizerStep:
    def test_single_step_matches_adam_formula(self, tiny_params):
        g = [np.ones_like(w) for w in tiny_params.weights]
        gb = [np.ones_like(b) for b in tiny_params.biases]
        before = tiny_params.copy()
        optimizer_step(tiny_params, (g, gb), lr=1e-3)
        # step 1 with unit gradient: m_hat = 1, v_hat = 1 -> update lr/(1+eps)
        delta = 1e-3 / (1.0 + 1e-8)
        np.testing.assert_allclose(
            before.weights[0] - tiny_params.weights[0], delta, atol=1e-12)
        assert tiny_params.step == 1

    def test_two_steps_match_independent_adam(self, tiny_params, rng):
        """Scalar oracle: track one coordinate through two updates."""
        idx = (3, 1)
        x = tiny_params.weights[0][idx]
        grads = [rng.standard_normal(), rng.standard_normal()]
        m = v = 0.0
        for t, gval in enumerate(grads, start=1):
            m = 0.9 * m + 0.1 * gval
            v = 0.999 * v + 0.001 * gval**2
            x -= 1e-2 * (m / (1 - 0.9**t)) / (np.sqrt(v / (1 - 0.999**t)) + 1e-8)
        for gval in grads:
            g = [np.zeros_like(w) for w in tiny_params.weights]
            gb = [np.zeros_like(b) for b in tiny_params.biases]
            g[0][idx] = gval
            optimizer_step(tiny_params, (g, gb), lr=1e-2)
        assert tiny_params.weights[0][idx] == pytest.approx(x, abs=1e-12)

    def test_rejects_non_finite_gradient(self, tiny_params):
        g = [np.zeros_like(w) for w in tiny_params.weights]
        gb = [np.zeros_like(b) for b in tiny_params.biases]
        g[1][0, 0] = np.nan
        with pytest.raises(TrainingError, match="layer 1"):
            optimizer_step(tiny_params, (g, gb), lr=1e-3)

    def test_descends_a_quadratic(self, tiny_params, rng):
        """Adam on f = 0.5||logits||^2 should reduce the objective."""
        feats = rng.standard_normal((16, 12))

        def loss_and_grads():
            logits, cache = forward_raw(tiny_params, feats, want_cache=True)
            return 0.5 * np.sum(logits**2), backward(tiny_params, cache, logits)

        first, _ = loss_and_grads()
        for _ in range(50):
            _, grads = loss_and_grads()
            optimizer_step(tiny_params, grads, lr=1e-2)
        last, _ = loss_and_grads()
        assert last < 0.1 * first


class TestCheckpoint:
    def test_round_trip_preserves_state(self, tiny_params, tmp_path, rng):
        # dirty the moments so the round trip covers them
        g = [rng.standard_normal(w.shape) for w in tiny_params.weights]
        gb = [rng.standard_normal(b.shape) for b in tiny_params.biases]
        optimizer_step(tiny_params, (g, gb), lr=1e-3)

        path = tmp_path / "ckpt.json"
        save_checkpoint(tiny_params, path, extra={"note": "x"})
        loaded, manifest = load_checkpoint(path)

        assert manifest["note"] == "x"
        assert loaded.step == tiny_params.step
        f32 = tiny_params.astype(np.float32)
        for group in ("weights", "biases", "m_w", "v_w", "m_b", "v_b"):
            for a, b in zip(getattr(f32, group), getattr(loaded, group)):
                np.testing.assert_array_equal(np.asarray(a, np.float64), b)

    def test_round_trip_forward_is_identical(self, tiny_params, tmp_path, rng):
        path = tmp_path / "ckpt.json"
        p32 = tiny_params.astype(np.float32).astype(np.float64)
        save_checkpoint(tiny_params, path)
        loaded, _ = load_checkpoint(path)
        feats = rng.standard_normal((10, 12))
        np.testing.assert_array_equal(
            forward_raw(loaded, feats)[0], forward_raw(p32, feats)[0])

    def test_rejects_truncated_blob(self, tiny_params, tmp_path):
        path = tmp_path / "ckpt.json"
        save_checkpoint(tiny_params, path)
        blob = tmp_path / "ckpt.bin"
        blob.write_bytes(blob.read_bytes()[:-8])
        with pytest.raises(ValueError, match="payload size"):
            load_checkpoint(path)

    def test_rejects_unknown_version(self, tiny_params, tmp_path):
        import json

        path = tmp_path / "ckpt.json"
        save_checkpoint(tiny_params, path)
        manifest = json.loads(path.read_text())
        manifest["version"] = 99
        path.write_text(json.dumps(manifest))
        with pytest.raises(ValueError, match="version"):
            load_checkpoint(path)
