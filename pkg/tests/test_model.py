import numpy as np
import pytest

from fairscope.model import (
    BLOCKS,
    AdamState,
    MlpParams,
    TrainConfig,
    TrainingDivergedError,
    adam_step,
    cross_entropy,
    features,
    forward,
    head_gradient,
    init_params,
    input_gradient,
    load_checkpoint,
    loss_and_grads,
    saliency_map,
    save_checkpoint,
    train,
)
from fairscope.numerics import InvalidInputError, child_seed
from oracles import central_difference


def tiny(seed=0, h=5, w=4):
    return init_params(h * w, hidden=6, feature_dim=3, seed=seed)


def toy_batch(rng, n=7, h=5, w=4):
    return rng.normal(size=(n, h, w)), rng.integers(0, 2, size=n)


class TestForward:
    def test_zero_params_zero_logits(self, rng):
        p = tiny().zeros_like()
        tr = forward(p, rng.normal(size=(3, 5, 4)))
        assert np.array_equal(tr.logits, np.zeros((3, 2)))

    def test_hand_evaluated_toy(self):
        p = MlpParams(
            W1=np.array([[1.0, 0.0], [0.0, -1.0]]),
            b1=np.array([0.0, 0.5]),
            W2=np.eye(2),
            b2=np.zeros(2),
            W3=np.array([[1.0, 0.0], [0.0, 2.0]]),
            b3=np.array([0.0, 1.0]),
        )
        x = np.array([[3.0], [-2.0]])  # 2x1 image flattens to (3, -2)
        tr = forward(p, x)
        # ReLU([3, 2.5]) = [3, 2.5]; logits = [3, 2*2.5 + 1]
        np.testing.assert_allclose(tr.h, [[3.0, 2.5]])
        np.testing.assert_allclose(tr.logits, [[3.0, 6.0]])

    def test_deterministic_and_features(self, rng):
        p, (x, _) = tiny(), toy_batch(rng)
        a, b = forward(p, x), forward(p, x)
        assert np.array_equal(a.logits, b.logits)
        assert np.array_equal(features(p, x), a.h)

    def test_dimension_mismatch(self):
        with pytest.raises(InvalidInputError):
            forward(tiny(), np.zeros((1, 3, 3)))


class TestGradients:
    def test_uniform_logits_give_ln2(self, rng):
        x, y = toy_batch(rng)
        loss, _ = loss_and_grads(tiny().zeros_like(), x, y)
        assert loss == pytest.approx(np.log(2))

    def test_finite_differences_200_coordinates(self, rng):
        p = tiny(3)
        x, y = toy_batch(rng)
        _, grads = loss_and_grads(p, x, y)
        sizes = [getattr(p, b).size for b in BLOCKS]
        worst = 0.0
        for _ in range(200):
            block = BLOCKS[rng.choice(len(BLOCKS), p=np.array(sizes) / sum(sizes))]
            arr = getattr(p, block)
            idx = tuple(rng.integers(s) for s in arr.shape)
            num = central_difference(lambda: loss_and_grads(p, x, y)[0], arr, idx)
            ana = getattr(grads, block)[idx]
            worst = max(worst, abs(ana - num) / max(abs(ana) + abs(num), 1e-7))
        assert worst < 1e-4

    def test_duplicate_batch_same_loss_and_grads(self, rng):
        p = tiny(1)
        x, y = toy_batch(rng)
        l1, g1 = loss_and_grads(p, x, y)
        l2, g2 = loss_and_grads(p, np.concatenate([x, x]), np.concatenate([y, y]))
        assert l1 == pytest.approx(l2)
        for a, b in zip(g1.blocks(), g2.blocks()):
            np.testing.assert_allclose(a, b, atol=1e-14)

    def test_head_gradient_single_sample(self, rng):
        p = tiny(2)
        x, y = toy_batch(rng, n=1)
        tr = forward(p, x)
        probs = np.exp(tr.logits[0]) / np.exp(tr.logits[0]).sum()
        expected = np.outer(probs - np.eye(2)[y[0]], tr.h[0])
        np.testing.assert_allclose(head_gradient(p, x, y), expected, atol=1e-12)

    def test_input_gradient_finite_differences(self, rng):
        p = tiny(4)
        frame = rng.normal(size=(5, 4))
        g = input_gradient(p, frame)

        def margin():
            lg = forward(p, frame[None]).logits[0]
            return lg[1] - lg[0]

        worst = 0.0
        for idx in np.ndindex(frame.shape):
            num = central_difference(margin, frame, idx)
            worst = max(worst, abs(g[idx] - num) / max(abs(g[idx]) + abs(num), 1e-7))
        assert worst < 1e-4

    def test_saliency_edges(self, rng):
        frame = rng.normal(size=(5, 4))
        assert np.array_equal(saliency_map(tiny().zeros_like(), frame), np.zeros((5, 4)))
        p = tiny(5)
        p.W1[:, 10:] = 0.0  # pixels beyond the first 10 are ignored
        s = saliency_map(p, frame)
        assert np.all(s.ravel()[10:] == 0) and s.max() == pytest.approx(1.0)


class TestAdam:
    def test_zero_grad_no_move(self):
        p = tiny()
        new, state = adam_step(p, p.zeros_like(), AdamState.for_params(p), 1e-3)
        for a, b in zip(p.blocks(), new.blocks()):
            assert np.array_equal(a, b)
        assert state.step == 1

    def test_first_step_is_lr_sign(self, rng):
        p = tiny()
        g = MlpParams(*(rng.normal(size=b.shape) for b in p.blocks()))
        new, _ = adam_step(p, g, AdamState.for_params(p), 1e-3)
        for a, b, gb in zip(p.blocks(), new.blocks(), g.blocks()):
            np.testing.assert_allclose(b - a, -1e-3 * np.sign(gb), rtol=1e-4)

    def test_deterministic(self, rng):
        p = tiny()
        g = MlpParams(*(rng.normal(size=b.shape) for b in p.blocks()))
        s = AdamState.for_params(p)
        a, _ = adam_step(p, g, s, 1e-3)
        b, _ = adam_step(p, g, s, 1e-3)
        assert all(np.array_equal(x, y) for x, y in zip(a.blocks(), b.blocks()))


class TestTraining:
    def test_zero_epochs_returns_init(self, rng):
        x, y = toy_batch(rng)
        res = train(x, y, TrainConfig(epochs=0, hidden=6, feature_dim=3, seed=9))
        ref = init_params(20, 6, 3, seed=child_seed(9, 0))
        assert res.history == []
        assert all(np.array_equal(a, b) for a, b in zip(res.params.blocks(), ref.blocks()))

    def test_same_seed_same_params(self, rng):
        x, y = toy_batch(rng, n=40)
        cfg = TrainConfig(epochs=3, batch_size=8, hidden=6, feature_dim=3, seed=4)
        a, b = train(x, y, cfg), train(x, y, cfg)
        assert all(np.array_equal(u, v) for u, v in zip(a.params.blocks(), b.params.blocks()))

    def test_hook_receives_batches(self, rng):
        x, y = toy_batch(rng, n=20)
        seen = []

        def hook(idx, xb, yb, params, r):
            seen.append(len(idx))
            assert np.array_equal(xb, x[idx]) and np.array_equal(yb, y[idx])
            return xb

        train(x, y, TrainConfig(epochs=2, batch_size=8, hidden=6, feature_dim=3), augment=hook)
        assert seen == [8, 8, 4, 8, 8, 4]

    def test_divergence_raises(self, rng):
        x, y = toy_batch(rng, n=16)
        bad = init_params(20, 6, 3)
        bad.W1[:] = 1e308
        with pytest.raises(TrainingDivergedError):
            train(x * 1e10, y, TrainConfig(epochs=1, hidden=6, feature_dim=3), params=bad)

    def test_invalid_config(self, rng):
        x, y = toy_batch(rng)
        with pytest.raises(InvalidInputError):
            train(x, y, TrainConfig(batch_size=0))

    def test_early_stop(self, rng):
        x, y = toy_batch(rng, n=30)
        vx, vy = toy_batch(rng, n=10)
        cfg = TrainConfig(epochs=50, batch_size=10, hidden=6, feature_dim=3, lr=0.5, patience=1)
        res = train(x, y, cfg, val=(vx, vy))
        assert len(res.history) < 50

    def test_cross_entropy_value(self):
        logits = np.array([[0.0, np.log(3.0)]])
        assert cross_entropy(logits, np.array([1])) == pytest.approx(-np.log(0.75))


class TestCheckpoint:
    def test_roundtrip(self, tmp_path):
        p = tiny(7)
        path = save_checkpoint(tmp_path / "m.ckpt", p, {"seed": 7, "epoch": 3})
        q, header = load_checkpoint(path)
        assert header["seed"] == 7 and header["epoch"] == 3
        assert all(np.array_equal(a, b) for a, b in zip(p.blocks(), q.blocks()))

    def test_layout(self, tmp_path):
        p = tiny(7)
        raw = save_checkpoint(tmp_path / "m.ckpt", p).read_bytes()
        body = raw[raw.index(b"\n") + 1 :]
        assert body == b"".join(b.astype("<f8").tobytes() for b in p.blocks())

    def test_truncated(self, tmp_path):
        path = save_checkpoint(tmp_path / "m.ckpt", tiny())
        path.write_bytes(path.read_bytes()[:-8])
        with pytest.raises(ValueError):
            load_checkpoint(path)
