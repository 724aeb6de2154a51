import numpy as np
import pytest

from flowcomplete import coupling, field, objective
from oracles import assert_grad_matches_fd, chamfer_assignments, nn_map_exhaustive

SMALL = field.FieldConfig(hidden_widths=(8,), time_embed_dim=4, seed=3)


def random_cloud(rng, n):
    return rng.uniform(-1, 1, size=(n, 3))


def make_sample(rng, n0=10, n1=8, with_scan=True):
    x0 = random_cloud(rng, n0)
    x1 = random_cloud(rng, n1)
    scan = random_cloud(rng, 6) if with_scan else None
    return coupling.nearest_neighbor_flow(x0, x1, float(rng.uniform()), condition=scan)


class TestFieldConfig:
    def test_odd_time_dim_rejected(self):
        with pytest.raises(ValueError, match="even"):
            field.FieldConfig(time_embed_dim=7)

    def test_unknown_activation(self):
        with pytest.raises(ValueError, match="activation"):
            field.FieldConfig(activation="swish")

    def test_unknown_cond_mode(self):
        with pytest.raises(ValueError, match="condition"):
            field.FieldConfig(cond_feature_mode="voxel")

    def test_empty_widths(self):
        with pytest.raises(ValueError, match="widths"):
            field.FieldConfig(hidden_widths=())

    def test_input_dim(self):
        cfg = field.FieldConfig(time_embed_dim=8, cond_feature_mode="nearest-offset")
        assert cfg.input_dim == 3 + 8 + 5
        cfg = field.FieldConfig(time_embed_dim=8, cond_feature_mode="none")
        assert cfg.input_dim == 11


class TestTimeEmbedding:
    def test_zero_time(self):
        emb = field.time_embedding(0.0, 8)
        assert np.array_equal(emb[:4], np.zeros(4))
        assert np.array_equal(emb[4:], np.ones(4))

    def test_repeatable(self):
        assert np.array_equal(field.time_embedding(0.37, 12),
                              field.time_embedding(0.37, 12))

    def test_lipschitz_in_time(self):
        a = field.time_embedding(0.5, 16)
        b = field.time_embedding(0.5 + 1e-9, 16)
        assert np.max(np.abs(a - b)) < 1e-6

    def test_odd_dim_error(self):
        with pytest.raises(ValueError, match="even"):
            field.time_embedding(0.5, 5)

    def test_time_out_of_range(self):
        with pytest.raises(ValueError, match=r"\[0, 1\]"):
            field.time_embedding(1.2, 4)


class TestConditionFeatures:
    def test_null_condition(self):
        f = field.condition_features([1.0, 2.0, 3.0], None)
        assert np.array_equal(f, np.zeros(5))

    def test_point_on_scan(self):
        scan = np.array([[1.0, 2.0, 3.0], [5.0, 5.0, 5.0]])
        f = field.condition_features([1.0, 2.0, 3.0], scan)
        assert np.array_equal(f, [0.0, 0.0, 0.0, 0.0, 1.0])

    def test_offset_matches_oracle(self):
        rng = np.random.default_rng(1)
        scan = random_cloud(rng, 20)
        for _ in range(10):
            x = rng.uniform(-1, 1, size=3)
            f = field.condition_features(x, scan)
            q = scan[nn_map_exhaustive(x[None], scan)[0]]
            assert np.allclose(f[:3], q - x, atol=0)
            assert f[3] == pytest.approx(np.linalg.norm(q - x), rel=1e-12)
            assert f[4] == 1.0


class TestForward:
    def test_zero_init_gives_zero_field(self):
        rng = np.random.default_rng(2)
        state = field.init_model(SMALL)
        out = field.forward(state, 0.5, random_cloud(rng, 15), random_cloud(rng, 6))
        assert np.array_equal(out, np.zeros((15, 3)))

    def test_permutation_equivariance(self):
        rng = np.random.default_rng(3)
        cfg = field.FieldConfig(hidden_widths=(8,), time_embed_dim=4,
                                seed=5, zero_init_output=False)
        state = field.init_model(cfg)
        pts = random_cloud(rng, 20)
        scan = random_cloud(rng, 7)
        perm = rng.permutation(20)
        out = field.forward(state, 0.3, pts, scan)
        out_perm = field.forward(state, 0.3, pts[perm], scan)
        assert np.array_equal(out[perm], out_perm)

    def test_bit_identical_across_runs(self):
        rng = np.random.default_rng(4)
        pts = random_cloud(rng, 12)
        scan = random_cloud(rng, 5)
        cfg = field.FieldConfig(hidden_widths=(16, 16), seed=9, zero_init_output=False)
        a = field.forward(field.init_model(cfg), 0.7, pts, scan)
        b = field.forward(field.init_model(cfg), 0.7, pts, scan)
        assert np.array_equal(a, b)

    def test_overflow_reported(self):
        cfg = field.FieldConfig(hidden_widths=(4,), activation="relu",
                                time_embed_dim=4, zero_init_output=False)
        state = field.init_model(cfg)
        state.weights[:] = 1e300
        with pytest.raises(FloatingPointError, match="numeric overflow in field"):
            field.forward(state, 0.5, np.ones((3, 3)), None)

    def test_ema_weights_selectable(self):
        cfg = field.FieldConfig(hidden_widths=(8,), seed=11, zero_init_output=False)
        state = field.init_model(cfg)
        state = field.ema_update(state, decay=0.0)  # ema == weights now
        rng = np.random.default_rng(5)
        pts = random_cloud(rng, 9)
        assert np.array_equal(
            field.forward(state, 0.2, pts, None),
            field.forward(state, 0.2, pts, None, use_ema=True),
        )


class TestGradient:
    def test_matches_finite_differences_flow_only(self):
        rng = np.random.default_rng(6)
        cfg = field.FieldConfig(hidden_widths=(6,), time_embed_dim=4,
                                seed=7, zero_init_output=False)
        weights = objective.LossWeights(1.0, 0.0)
        for _ in range(3):
            sample = make_sample(rng)
            state = field.init_model(cfg)
            _, grad = field.loss_and_grad(state, sample, weights)

            def scalar(flat):
                trial = field.ModelState(cfg, flat, flat, 0)
                rep, _ = field.loss_and_grad(trial, sample, weights)
                return rep.total

            assert_grad_matches_fd(scalar, grad, state.weights)

    def test_matches_finite_differences_blended(self):
        rng = np.random.default_rng(7)
        cfg = field.FieldConfig(hidden_widths=(6,), time_embed_dim=4,
                                seed=13, zero_init_output=False)
        weights = objective.LossWeights(1.0, 0.1)
        sample = make_sample(rng, n0=8, n1=6)
        state = field.init_model(cfg)
        _, grad = field.loss_and_grad(state, sample, weights)

        def scalar(flat):
            trial = field.ModelState(cfg, flat, flat, 0)
            rep, _ = field.loss_and_grad(trial, sample, weights)
            return rep.total

        def assignments(flat):
            trial = field.ModelState(cfg, flat, flat, 0)
            u = field.forward(trial, sample.t, sample.x_t, sample.condition)
            return chamfer_assignments(sample.x0, u, sample.x1)

        assert_grad_matches_fd(scalar, grad, state.weights, assignments)

    def test_relu_gradient(self):
        rng = np.random.default_rng(8)
        cfg = field.FieldConfig(hidden_widths=(6,), time_embed_dim=4, seed=15,
                                activation="relu", zero_init_output=False)
        weights = objective.LossWeights(1.0, 0.0)
        sample = make_sample(rng)
        state = field.init_model(cfg)
        _, grad = field.loss_and_grad(state, sample, weights)

        def scalar(flat):
            trial = field.ModelState(cfg, flat, flat, 0)
            rep, _ = field.loss_and_grad(trial, sample, weights)
            return rep.total

        # relu kinks at z=0 are not NN flips; random nets rarely sit on them
        assert_grad_matches_fd(scalar, grad, state.weights,
                               assign_fn=None, max_kink_fraction=0.0)


class TestOptimizer:
    def test_zero_gradient_no_motion(self):
        state = field.init_model(SMALL)
        opt = field.init_optimizer(state)
        before = state.weights.copy()
        state, opt = field.apply_gradient(state, opt, np.zeros_like(state.weights))
        assert np.array_equal(state.weights, before)
        assert state.step_count == 1

    def test_nonfinite_gradient_rejected(self):
        state = field.init_model(SMALL)
        opt = field.init_optimizer(state)
        bad = np.zeros_like(state.weights)
        bad[0] = np.nan
        before = state.weights.copy()
        with pytest.raises(FloatingPointError, match="non-finite gradient"):
            field.apply_gradient(state, opt, bad)
        assert np.array_equal(state.weights, before)
        assert state.step_count == 0
        assert np.all(opt.m == 0.0)

    def test_loss_decreases_over_200_steps(self):
        rng = np.random.default_rng(9)
        x0 = random_cloud(rng, 24)
        x1 = random_cloud(rng, 24)
        scan = random_cloud(rng, 12)
        cfg = field.FieldConfig(hidden_widths=(16, 16), seed=21)
        state = field.init_model(cfg)
        opt = field.init_optimizer(state)
        weights = objective.LossWeights(1.0, 0.1)
        losses = []
        for step in range(200):
            sample = coupling.nearest_neighbor_flow(
                x0, x1, float(rng.uniform()), condition=scan
            )
            state, opt, report = field.train_step(state, opt, sample, weights)
            losses.append(report.total)
        assert np.isfinite(state.weights).all()
        first = np.mean(losses[:20])
        last = np.mean(losses[-20:])
        assert last < first

    def test_batch_averages_gradients(self):
        rng = np.random.default_rng(10)
        cfg = field.FieldConfig(hidden_widths=(6,), time_embed_dim=4,
                                seed=23, zero_init_output=False)
        weights = objective.LossWeights(1.0, 0.0)
        samples = [make_sample(rng) for _ in range(4)]
        state = field.init_model(cfg)
        grads = [field.loss_and_grad(state, s, weights)[1] for s in samples]
        want = np.mean(grads, axis=0)
        opt = field.init_optimizer(state)
        stepped, _ = field.apply_gradient(state, opt, want)
        batched, _, _ = field.train_batch(
            field.init_model(cfg), field.init_optimizer(state), samples, weights
        )
        assert np.allclose(stepped.weights, batched.weights, atol=1e-15)


class TestEma:
    def test_decay_zero_copies_weights(self):
        state = field.init_model(
            field.FieldConfig(hidden_widths=(8,), seed=1, zero_init_output=False)
        )
        out = field.ema_update(state, decay=0.0)
        assert np.array_equal(out.ema_weights, state.weights)

    def test_decay_one_freezes_shadow(self):
        state = field.init_model(
            field.FieldConfig(hidden_widths=(8,), seed=2, zero_init_output=False)
        )
        before = state.ema_weights.copy()
        out = field.ema_update(state, decay=1.0)
        assert np.array_equal(out.ema_weights, before)

    def test_blend(self):
        state = field.init_model(SMALL)
        state.weights[:] = 1.0
        state.ema_weights[:] = 0.0
        out = field.ema_update(state, decay=0.9)
        assert np.allclose(out.ema_weights, 0.1, atol=1e-15)


class TestCheckpoint:
    def test_round_trip_bit_exact(self, tmp_path):
        rng = np.random.default_rng(11)
        cfg = field.FieldConfig(hidden_widths=(16, 8), time_embed_dim=6,
                                seed=31, zero_init_output=False)
        state = field.init_model(cfg)
        opt = field.init_optimizer(state, learning_rate=3e-4)
        sample = make_sample(rng)
        state, opt, _ = field.train_step(state, opt, sample, objective.LossWeights())
        state = field.ema_update(state, 0.99)

        path = tmp_path / "model.ckpt"
        field.save_checkpoint(path, state, opt)
        loaded, loaded_opt = field.load_checkpoint(path)

        assert loaded.config == cfg
        assert loaded.step_count == state.step_count
        assert np.array_equal(loaded.weights, state.weights)
        assert np.array_equal(loaded.ema_weights, state.ema_weights)
        assert np.array_equal(loaded_opt.m, opt.m)
        assert np.array_equal(loaded_opt.v, opt.v)
        assert loaded_opt.learning_rate == opt.learning_rate

    def test_rewrite_is_byte_identical(self, tmp_path):
        state = field.init_model(SMALL)
        opt = field.init_optimizer(state)
        a = tmp_path / "a.ckpt"
        b = tmp_path / "b.ckpt"
        field.save_checkpoint(a, state, opt)
        field.save_checkpoint(b, state, opt)
        assert a.read_bytes() == b.read_bytes()

    def test_bad_magic(self, tmp_path):
        path = tmp_path / "junk.ckpt"
        path.write_bytes(b"NOTACKPT" + b"\x00" * 32)
        with pytest.raises(ValueError, match="magic"):
            field.load_checkpoint(path)

    def test_truncated_file(self, tmp_path):
        state = field.init_model(SMALL)
        opt = field.init_optimizer(state)
        path = tmp_path / "model.ckpt"
        field.save_checkpoint(path, state, opt)
        raw = path.read_bytes()
        path.write_bytes(raw[:-16])
        with pytest.raises(ValueError, match="truncated"):
            field.load_checkpoint(path)
