import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from specsense import cnn
from specsense.cnn import ArchSpec, TABLE_IV, build_network, count_cost, forward, grad_check, kfold_indices


def direct_forward(net, x):
    """Loop-based reference forward pass for one (2, N) input."""
    h = np.asarray(x, dtype=float)  # (C, N)
    for layer, p in zip(net.architecture.layers, net.layers):
        C, N = h.shape
        if layer.kind == "conv":
            W, b = p["W"], p["b"]
            s = layer.kernel_size
            left = (s - 1) // 2
            out = np.zeros((W.shape[0], N))
            for f in range(W.shape[0]):
                for n in range(N):
                    acc = b[f]
                    for c in range(C):
                        for k in range(s):
                            i = n + k - left
                            if 0 <= i < N:
                                acc += W[f, c, k] * h[c, i]
                    out[f, n] = max(acc, 0.0)
            h = out
        elif layer.kind == "pool":
            sp = layer.pool_size
            m = N // sp
            h = np.array([[h[c, j * sp : (j + 1) * sp].max() for j in range(m)] for c in range(C)])
        else:
            h = h.mean(axis=1)
    z = float(np.dot(h, net.head_w) + net.head_b[0])
    return 1.0 / (1.0 + np.exp(-z))


ARCHS = ["C8x3,GAP", "C4x3,P2,C3x5,GAP", "C2x5,P4,C3x3,P2,GAP", "C3x3,C2x3,GAP"]


class TestArchSpec:
    def test_parse_roundtrip(self):
        a = ArchSpec.parse("C64x3,C32x5,P2,GAP")
        assert str(a) == "C64x3,C32x5,P2,GAP"

    @pytest.mark.parametrize("bad", ["P4,C8x3,GAP", "C8x3", "C8x3,GAP,GAP", "GAP", "C8x3,X,GAP"])
    def test_rejects(self, bad):
        with pytest.raises(ValueError):
            ArchSpec.parse(bad)

    def test_pool_too_long(self):
        with pytest.raises(ValueError):
            build_network(ArchSpec.parse("C8x3,P4,P4,GAP"), 10)


class TestBuild:
    def test_parameter_count(self):
        net = build_network(TABLE_IV["dataset1"], 100, seed=0)
        assert net.n_parameters() == 513

    def test_determinism(self):
        a = build_network(TABLE_IV["dataset2"], 160, seed=5)
        b = build_network(TABLE_IV["dataset2"], 160, seed=5)
        assert all(np.array_equal(p, q) for p, q in zip(a.parameters(), b.parameters()))

    def test_zero_biases_and_head(self):
        net = build_network(ArchSpec.parse("C8x3,C4x5,GAP"), 20, seed=1)
        assert all(not np.any(p["b"]) for p in net.layers if p)
        assert net.head_b[0] == 0 and not net.head_w.any()

    def test_glorot_range(self):
        net = build_network(ArchSpec.parse("C64x5,GAP"), 20, seed=1)
        W = net.layers[0]["W"]
        limit = np.sqrt(6.0 / (2 * 5 + 64 * 5))
        assert np.abs(W).max() <= limit and np.abs(W).max() > 0.9 * limit


class TestForward:
    def test_zero_weights(self):
        net = build_network(ArchSpec.parse("C4x3,P2,GAP"), 12, seed=0)
        for p in net.parameters():
            p[...] = 0
        x = np.random.default_rng(0).normal(size=(5, 2, 12))
        assert np.all(forward(net, x) == 0.5)

    def test_identity_filter(self):
        net = build_network(ArchSpec.parse("C2x3,GAP"), 8, seed=0)
        W = net.layers[0]["W"]
        W[...] = 0
        W[0, 0, 1] = W[1, 1, 1] = 1
        x = np.abs(np.random.default_rng(1).normal(size=(1, 2, 8)))
        _, _, cache = cnn._forward(net, x)
        _, zl, _ = cache[0]
        assert np.allclose(np.maximum(zl, 0)[0].T, x[0])

    @pytest.mark.parametrize("arch", ARCHS)
    def test_against_loops(self, arch):
        rng = np.random.default_rng(2)
        net = build_network(ArchSpec.parse(arch), 16, seed=3)
        for p in net.parameters():
            p[...] = rng.normal(size=p.shape)
        x = rng.normal(size=(4, 2, 16))
        got = forward(net, x)
        want = [direct_forward(net, xi) for xi in x]
        assert np.max(np.abs(got - want)) < 1e-10

    def test_shape_mismatch(self):
        net = build_network(ArchSpec.parse("C2x3,GAP"), 8, seed=0)
        with pytest.raises(ValueError):
            forward(net, np.zeros((1, 2, 9)))


class TestGradients:
    def test_spec_case(self):
        rng = np.random.default_rng(0)
        net = build_network(ArchSpec.parse("C8x3,GAP"), 16, seed=0)
        net.head_w[:] = rng.normal(size=net.head_w.shape)
        assert grad_check(net, rng.normal(size=(3, 2, 16)), [0, 1, 1]) < 1e-5

    @given(st.sampled_from(ARCHS), st.integers(0, 10_000))
    @settings(max_examples=12, deadline=None)
    def test_random_networks(self, arch, seed):
        rng = np.random.default_rng(seed)
        net = build_network(ArchSpec.parse(arch), 16, seed=seed)
        for p in net.parameters():
            p[...] += 0.1 * rng.normal(size=p.shape)
        x = rng.normal(size=(3, 2, 16))
        assert grad_check(net, x, rng.integers(0, 2, 3)) < 1e-5

    def test_stationary_at_zero_loss(self):
        rng = np.random.default_rng(1)
        net = build_network(ArchSpec.parse("C4x3,GAP"), 10, seed=1)
        net.head_w[:] = rng.normal(size=net.head_w.shape)
        x = rng.normal(size=(2, 2, 10))
        y = forward(net, x)  # soft labels equal to the output
        _, grads = cnn.loss_and_grads(net, x, y)
        assert max(np.abs(g).max() for g in grads) < 1e-12

    def test_negative_control(self):
        rng = np.random.default_rng(2)
        net = build_network(ArchSpec.parse("C8x3,GAP"), 16, seed=2)
        net.head_w[:] = rng.normal(size=net.head_w.shape)
        flipped = lambda n, x, y: [-g for g in cnn.loss_and_grads(n, x, y)[1]]
        assert grad_check(net, rng.normal(size=(3, 2, 16)), [0, 1, 0], grad_fn=flipped) > 0.1


def constant_vs_noise(n_each, length=16, seed=0):
    rng = np.random.default_rng(seed)
    noise = rng.normal(size=(n_each, 2, length))
    const = np.full((n_each, 2, length), 3.0) + 0.1 * rng.normal(size=(n_each, 2, length))
    x = np.concatenate([noise, const])
    y = np.r_[np.zeros(n_each), np.ones(n_each)]
    return x, y


class TestTraining:
    def test_loss_decreases(self):
        x, y = constant_vs_noise(200)
        net = build_network(ArchSpec.parse("C4x3,GAP"), 16, seed=0)
        res = cnn.train(net, (x, y), 1, seed=0)
        assert res.losses[0] <= res.initial_loss

    def test_determinism(self):
        x, y = constant_vs_noise(100)
        runs = [cnn.train(build_network(ArchSpec.parse("C4x3,GAP"), 16, seed=1), (x, y), 2, seed=2).final_loss for _ in range(2)]
        assert runs[0] == runs[1]

    def test_single_class(self):
        net = build_network(ArchSpec.parse("C4x3,GAP"), 16, seed=0)
        with pytest.raises(ValueError):
            cnn.train(net, (np.zeros((4, 2, 16)), np.ones(4)), 1)

    def test_kfold_partition(self):
        folds = kfold_indices(103, 10, seed=4)
        allidx = np.concatenate(folds)
        assert sorted(allidx.tolist()) == list(range(103))

    def test_separable_kfold(self):
        x, y = constant_vs_noise(500)
        assert cnn.kfold_accuracy(ArchSpec.parse("C8x3,GAP"), (x, y), k=5, epochs=20, seed=0) >= 0.99

    def test_shuffled_labels_chance(self):
        rng = np.random.default_rng(5)
        x = rng.normal(size=(2000, 2, 16))
        y = rng.permutation(np.r_[np.zeros(1000), np.ones(1000)])
        pc = cnn.kfold_accuracy(ArchSpec.parse("C2x3,GAP"), (x, y), k=5, epochs=1, seed=0)
        assert 0.45 <= pc <= 0.55

    def test_network_roundtrip(self, tmp_path):
        net = build_network(TABLE_IV["dataset2"], 160, seed=9)
        path = tmp_path / "n.ssnet"
        cnn.save_network(net, path)
        back = cnn.load_network(path)
        assert str(back.architecture) == str(net.architecture)
        assert all(np.array_equal(p, q) for p, q in zip(back.parameters(), net.parameters()))


class TestCost:
    def test_dataset1(self):
        r = count_cost(TABLE_IV["dataset1"], 100)
        assert (r.rrm, r.weights) == (38_464, 513)

    @pytest.mark.parametrize(
        "key,n,rrm,w",
        [("dataset1", 100, "0.038", "0.5"), ("dataset2", 160, "4.854", "30.6"), ("dataset3", 640, "27.075", "42.7")],
    )
    def test_table(self, key, n, rrm, w):
        r = count_cost(TABLE_IV[key], n)
        assert (r.rrm_millions, r.weights_thousands) == (rrm, w)

    def test_weights_equal_parameter_count(self):
        for key, n in (("dataset1", 100), ("dataset2", 160), ("dataset3", 640)):
            assert count_cost(TABLE_IV[key], n).weights == build_network(TABLE_IV[key], n, seed=0).n_parameters()

    def test_pool_is_free(self):
        a = count_cost(ArchSpec.parse("C8x3,P2,C8x3,GAP"), 100)
        b = count_cost(ArchSpec.parse("C8x3,C8x3,GAP"), 100)
        assert a.weights == b.weights and a.rrm < b.rrm
