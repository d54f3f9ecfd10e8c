import numpy as np
import pytest
from numpy.testing import assert_allclose

from fdiafl.neural import (
    AdamState,
    DivergenceError,
    ModelParams,
    TrainConfig,
    adam_step,
    backward,
    forward,
    init_adam,
    init_params,
    load_checkpoint,
    loss,
    plateau_events,
    save_checkpoint,
)
from fdiafl.neural.scheduler import PlateauScheduler
from fdiafl.rng import substream


def toy_net(layer_sizes=(3, 8, 4, 3), seed=101):
    return init_params(layer_sizes, substream(seed, "toy-init"))


def toy_batch(rng, n, width, label_rate=0.4):
    x = rng.normal(size=(n, width))
    y = (rng.random((n, width)) < label_rate).astype(np.float64)
    return x, y


NO_DROPOUT = dict(dropout_p=0.0)


class TestForward:
    def test_zero_params_give_half(self):
        params = ModelParams((3, 5, 3))  # all-zero weights and biases
        params.t["gamma0"][:] = 1.0
        params.t["rvar0"][:] = 1.0
        x = substream(1, "x").normal(size=(4, 3))
        probs, _ = forward(params, x, TrainConfig(**NO_DROPOUT), train=False)
        assert np.all(probs == 0.5)

    def test_train_eval_agree_with_frozen_stats(self):
        """With dropout off and running stats set to batch stats, modes agree."""
        params = toy_net()
        cfg = TrainConfig(dropout_p=0.0, bn_momentum=0.0)  # running <- batch exactly
        x, _ = toy_batch(substream(2, "b"), 16, 3)
        train_probs, _ = forward(params, x, cfg, train=True)
        eval_probs, _ = forward(params, x, cfg, train=False)
        assert_allclose(train_probs, eval_probs, atol=1e-6)

    def test_eval_is_pure(self):
        params = toy_net(seed=7)
        x, _ = toy_batch(substream(3, "c"), 8, 3)
        cfg = TrainConfig()
        a, _ = forward(params, x, cfg, train=False)
        b, _ = forward(params, x, cfg, train=False)
        assert np.array_equal(a, b)

    def test_shape_mismatch(self):
        params = toy_net()
        with pytest.raises(ValueError, match="width"):
            forward(params, np.zeros((4, 5)), TrainConfig(), train=False)

    def test_divergent_params_raise(self):
        params = toy_net()
        params.t["w_out"][0, 0] = np.inf
        x, _ = toy_batch(substream(4, "d"), 4, 3)
        with np.errstate(invalid="ignore"), pytest.raises(DivergenceError):
            forward(params, x, TrainConfig(**NO_DROPOUT), train=False)

    def test_dropout_needs_rng(self):
        params = toy_net()
        with pytest.raises(ValueError, match="generator"):
            forward(params, np.zeros((2, 3)), TrainConfig(), train=True)

    def test_dropout_expectation_matches_eval(self):
        """Inverted dropout is unbiased: the masked activation (and hence the
        next pre-activation, which is linear in it) averages to the mask-free
        value. Tested on a single-hidden-layer net where the cached activation
        is the dropout output itself."""
        params = toy_net((3, 16, 3), seed=11)
        cfg = TrainConfig(dropout_p=0.4)
        x, _ = toy_batch(substream(5, "e"), 12, 3)
        rng = substream(6, "masks")
        _, ref_cache = forward(params, x, TrainConfig(dropout_p=0.0), train=True,
                               update_running=False)
        reference = ref_cache["a_last"]
        total = np.zeros_like(reference)
        n_draws = 10_000
        for _ in range(n_draws):
            _, cache = forward(params, x, cfg, train=True, rng=rng, update_running=False)
            total += cache["a_last"]
        mean_act = total / n_draws
        scale = np.abs(reference).mean()
        assert np.abs(mean_act - reference).mean() <= 0.02 * scale


class TestLoss:
    def test_perfect_predictions(self):
        probs = np.array([[1.0, 0.0], [0.0, 1.0]])
        labels = probs.copy()
        params = ModelParams((2, 4, 2))
        assert loss(probs, labels, params, l2=0.0) <= 1e-6

    def test_uniform_half_is_ln2(self):
        probs = np.full((5, 3), 0.5)
        labels = np.zeros((5, 3))
        params = ModelParams((3, 4, 3))
        assert loss(probs, labels, params, l2=0.0) == pytest.approx(np.log(2.0), rel=1e-12)

    def test_matches_scalar_loop_oracle(self):
        rng = substream(7, "loss")
        probs = rng.random((20, 6))
        labels = (rng.random((20, 6)) < 0.5).astype(np.float64)
        params = toy_net((6, 5, 6), seed=8)
        got = loss(probs, labels, params, l2=0.01)
        lo, hi = 1e-7, 1.0 - 1e-7
        total = 0.0
        for r in range(20):
            for c in range(6):
                p = min(max(probs[r, c], lo), hi)
                total += -(labels[r, c] * np.log(p) + (1 - labels[r, c]) * np.log(1 - p))
        expected = total / 120
        for name in ("w0", "w_out"):
            expected += 0.005 * float((params.t[name] ** 2).sum())
        assert got == pytest.approx(expected, rel=1e-9)


def numeric_gradient(params, x, y, cfg, eps=1e-5):
    """Central finite differences of the full loss over every trainable entry."""
    flat = params.trainable()
    grad = np.zeros_like(flat)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + eps
        probs, _ = forward(params, x, cfg, train=True, update_running=False)
        hi = loss(probs, y, params, cfg.l2)
        flat[i] = orig - eps
        probs, _ = forward(params, x, cfg, train=True, update_running=False)
        lo = loss(probs, y, params, cfg.l2)
        flat[i] = orig
        grad[i] = (hi - lo) / (2 * eps)
    return grad


class TestBackward:
    def test_finite_difference_agreement(self):
        """Max relative error <= 1e-4 on a 3->8->4->3 net, dropout off, batch stats."""
        params = toy_net()
        cfg = TrainConfig(dropout_p=0.0, l2=0.01)
        rng = substream(9, "fd")
        x, y = toy_batch(rng, 6, 3)
        probs, cache = forward(params, x, cfg, train=True, update_running=False)
        analytic = backward(cache, y).vec
        numeric = numeric_gradient(params, x, y, cfg)
        denom = np.maximum(np.abs(numeric), 1e-6)
        assert (np.abs(analytic - numeric) / denom).max() <= 1e-4

    def test_output_bias_gradient_at_zero_weights(self):
        """Zero net, zero labels: output probabilities are 0.5, so the output
        bias gradient is mean(0.5 - 0) spread over the output cells."""
        params = ModelParams((1, 4, 1))
        params.t["gamma0"][:] = 1.0
        params.t["rvar0"][:] = 1.0
        cfg = TrainConfig(dropout_p=0.0, l2=0.0)
        x = np.ones((8, 1))
        y = np.zeros((8, 1))
        _, cache = forward(params, x, cfg, train=True, update_running=False)
        grads = backward(cache, y)
        assert grads.t["b_out"][0] == pytest.approx(0.5)
        # with a wider output the mean spreads across I cells
        params3 = ModelParams((3, 4, 3))
        params3.t["gamma0"][:] = 1.0
        params3.t["rvar0"][:] = 1.0
        _, cache3 = forward(params3, np.ones((8, 3)), cfg, train=True, update_running=False)
        grads3 = backward(cache3, np.zeros((8, 3)))
        assert_allclose(grads3.t["b_out"], np.full(3, 0.5 / 3), atol=1e-12)

    def test_l2_only_when_labels_equal_probs(self):
        """Soft labels equal to the probabilities cancel the data term, leaving l2*W."""
        params = toy_net(seed=12)
        cfg = TrainConfig(dropout_p=0.0, l2=0.01)
        x, _ = toy_batch(substream(10, "l2"), 10, 3)
        probs, cache = forward(params, x, cfg, train=True, update_running=False)
        grads = backward(cache, probs.copy())
        for name in params.layout.weight_names():
            assert_allclose(grads.t[name], cfg.l2 * params.t[name], atol=1e-12)
        assert_allclose(grads.t["b_out"], np.zeros(3), atol=1e-12)

    def test_backward_requires_train_cache(self):
        params = toy_net()
        x, y = toy_batch(substream(11, "ev"), 4, 3)
        _, cache = forward(params, x, TrainConfig(**NO_DROPOUT), train=False)
        with pytest.raises(ValueError, match="train-mode"):
            backward(cache, y)


class TestAdam:
    def test_first_step_hand_value(self):
        """One step with g=1, lr=1e-3: bias correction cancels and the update is
        -lr/(sqrt(1)+eps), i.e. about -9.9999999e-4."""
        params = ModelParams((1, 2, 1))
        state = AdamState(params.layout.n_trainable)
        from fdiafl.neural.params import GradVector

        grads = GradVector(params.layout, np.ones(params.layout.n_trainable))
        cfg = TrainConfig(lr=1e-3, dropout_p=0.0)
        before = params.trainable().copy()
        adam_step(params, grads, state, cfg)
        delta = params.trainable() - before
        assert np.all(np.abs(delta + 9.99999995e-4) <= 1e-11)

    def test_zero_gradient_no_motion(self):
        params = toy_net()
        state = init_adam(params)
        from fdiafl.neural.params import GradVector

        grads = GradVector(params.layout)
        before = params.vec.copy()
        adam_step(params, grads, state, TrainConfig())
        assert np.array_equal(params.vec, before)

    def test_equal_gradients_equal_updates(self):
        params = ModelParams((2, 3, 2))
        state = AdamState(params.layout.n_trainable)
        from fdiafl.neural.params import GradVector

        grads = GradVector(params.layout, np.full(params.layout.n_trainable, 0.37))
        before = params.trainable().copy()
        adam_step(params, grads, state, TrainConfig(lr=0.01))
        delta = params.trainable() - before
        assert np.all(delta == delta[0])


class TestPlateauScheduler:
    def test_strictly_decreasing_no_event(self):
        history = [1.0 - 0.01 * i for i in range(30)]
        assert plateau_events(history, 0.1, 10) == []

    def test_flat_history_fires_once_at_11(self):
        assert plateau_events([0.5] * 11, 0.1, 10) == [11]

    def test_fires_ten_entries_after_last_improvement(self):
        history = [1.0, 0.9, 0.8] + [0.8] * 10
        events = plateau_events(history, 0.1, 10)
        assert events == [13]  # last improvement at entry 3

    def test_matches_step_through_oracle(self):
        rng = substream(13, "sched")
        history = list(np.round(rng.random(60), 3))
        got = plateau_events(history, 0.5, 4, min_delta=1e-6)
        # independent automaton walk
        best, wait, expected = np.inf, 0, []
        for i, v in enumerate(history, start=1):
            if v < best - 1e-6:
                best, wait = v, 0
            else:
                wait += 1
                if wait >= 4:
                    expected.append(i)
                    wait = 0
        assert got == expected

    def test_lr_multiplies_by_factor(self):
        sched = PlateauScheduler(1e-3, 0.1, 2)
        for v in (1.0, 1.0, 1.0):
            sched.update(v)
        assert sched.lr == pytest.approx(1e-4)


class TestTrainingBehaviour:
    def test_loss_halves_on_separable_toy_task(self):
        """200 Adam steps on a linearly separable 2-feature multilabel task."""
        rng = substream(14, "toy-task")
        n = 256
        x = rng.normal(size=(n, 2))
        y = np.stack([(x[:, 0] > 0), (x[:, 1] > 0)], axis=1).astype(np.float64)
        params = init_params((2, 16, 2), substream(15, "init"))
        cfg = TrainConfig(lr=1e-2, l2=0.0, dropout_p=0.0, batch_size=64)
        state = init_adam(params)
        probs, _ = forward(params, x, cfg, train=True, update_running=False)
        initial = loss(probs, y, params, cfg.l2)
        for step in range(200):
            idx = rng.integers(0, n, size=cfg.batch_size)
            probs, cache = forward(params, x[idx], cfg, train=True)
            grads = backward(cache, y[idx])
            adam_step(params, grads, state, cfg)
        probs, _ = forward(params, x, cfg, train=False)
        final = loss(probs, y, params, cfg.l2)
        assert final <= 0.5 * initial

    def test_fixed_seed_reproduces_parameters(self):
        def train_once():
            rng = substream(16, "repro")
            params = init_params((3, 8, 3), substream(17, "init"))
            cfg = TrainConfig(dropout_p=0.4, batch_size=8)
            state = init_adam(params)
            x, y = toy_batch(substream(18, "data"), 64, 3)
            for _ in range(30):
                idx = rng.integers(0, 64, size=8)
                probs, cache = forward(params, x[idx], cfg, train=True, rng=rng)
                grads = backward(cache, y[idx])
                adam_step(params, grads, state, cfg)
            return params

        a, b = train_once(), train_once()
        assert a.vec.tobytes() == b.vec.tobytes()


class TestCheckpoint:
    def test_bit_exact_roundtrip(self, tmp_path):
        params = toy_net(seed=19)
        path = tmp_path / "model.ckpt"
        save_checkpoint(path, params, {"note": "x"})
        loaded, manifest = load_checkpoint(path)
        assert loaded.vec.tobytes() == params.vec.tobytes()
        assert manifest["layer_sizes"] == [3, 8, 4, 3]
        save_checkpoint(tmp_path / "again.ckpt", loaded, {"note": "x"})
        assert (tmp_path / "again.ckpt").read_bytes() == path.read_bytes()

    def test_bad_magic_rejected(self, tmp_path):
        params = toy_net()
        path = tmp_path / "model.ckpt"
        save_checkpoint(path, params, {})
        blob = bytearray(path.read_bytes())
        blob[:8] = b"XXXXXXXX"
        path.write_bytes(bytes(blob))
        from fdiafl.neural import CheckpointError

        with pytest.raises(CheckpointError, match="magic"):
            load_checkpoint(path)

    def test_manifest_table_mismatch(self, tmp_path):
        params = toy_net()
        path = tmp_path / "model.ckpt"
        save_checkpoint(path, params, {})
        import json

        mpath = tmp_path / "model.ckpt.json"
        manifest = json.loads(mpath.read_text())
        manifest["layer_sizes"] = [3, 9, 4, 3]
        mpath.write_text(json.dumps(manifest))
        from fdiafl.neural import CheckpointError

        with pytest.raises(CheckpointError, match="table"):
            load_checkpoint(path)
