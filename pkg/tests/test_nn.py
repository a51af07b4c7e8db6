import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from green_oran.gradcheck import numeric_grads, relative_error
from green_oran.nn import (
    AdamState,
    CheckpointError,
    Mlp,
    adam_step,
    clip_grad_norm,
    global_norm,
    load,
    load_bundle,
    save,
    save_bundle,
    softmax,
)


def test_biases_zero_and_seeded():
    a = Mlp([4, 8], [(3, "categorical")], rng=1)
    b = Mlp([4, 8], [(3, "categorical")], rng=1)
    assert all(np.all(bias == 0) for bias in a.biases)
    for p, q in zip(a.params(), b.params()):
        np.testing.assert_array_equal(p, q)


def test_xavier_variance():
    net = Mlp([100, 100], [(100, "scalar")], rng=0)
    w = net.weights[0]
    assert w.size == 10_000
    assert w.var() == pytest.approx(2.0 / 200.0, rel=0.1)


def test_invalid_construction():
    with pytest.raises(ValueError):
        Mlp([0, 4], [(2, "scalar")])
    with pytest.raises(ValueError):
        Mlp([3, 4], [(2, "scalar")], activation="relu")


def test_zero_net_gives_uniform():
    net = Mlp([3, 5], [(4, "categorical")], rng=0)
    net.set_params([np.zeros_like(p) for p in net.params()])
    np.testing.assert_allclose(net.head_outputs(net.forward(np.ones(3)))[0], 0.25)


def test_softmax_shift_invariance():
    z = np.array([[0.3, -1.2, 2.0]])
    np.testing.assert_allclose(softmax(z), softmax(z + 1234.5), rtol=1e-12)
    big = softmax(np.array([1000.0, 0.0]))
    assert np.all(np.isfinite(big))


def test_hand_computed_2_2_2():
    net = Mlp([2, 2], [(2, "categorical")], rng=0)
    w1 = np.array([[0.5, -1.0], [0.25, 2.0]])
    b1 = np.array([0.1, -0.2])
    w2 = np.array([[1.0, -0.5], [0.3, 0.7]])
    b2 = np.array([0.0, 0.05])
    net.set_params([w1, b1, w2, b2])
    x = np.array([1.0, -1.0])
    h = np.tanh([0.5 * 1 + 0.25 * -1 + 0.1, -1.0 * 1 + 2.0 * -1 - 0.2])
    z = [h[0] * 1.0 + h[1] * 0.3, h[0] * -0.5 + h[1] * 0.7 + 0.05]
    e = np.exp(z)
    want = e / e.sum()
    got = net.head_outputs(net.forward(x))[0][0]
    np.testing.assert_allclose(got, want, rtol=1e-12, atol=1e-12)


def test_input_width_checked():
    with pytest.raises(ValueError):
        Mlp([3, 4], [(2, "scalar")]).forward(np.ones(4))


@given(st.lists(st.integers(1, 6), min_size=1, max_size=3), st.lists(st.integers(1, 4), min_size=1, max_size=3),
       st.integers(0, 10_000))
@settings(max_examples=30, deadline=None)
def test_softmax_heads_are_distributions(dims, heads, seed):
    net = Mlp([3, *dims], [(h, "categorical") for h in heads], rng=seed)
    x = np.random.default_rng(seed).normal(size=(4, 3)) * 5
    for probs in net.head_outputs(net.forward(x)):
        assert np.all(probs >= 0)
        np.testing.assert_allclose(probs.sum(axis=-1), 1.0, atol=1e-12)


def test_zero_upstream_zero_grads():
    net = Mlp([3, 4], [(2, "scalar")], rng=0)
    _, cache = net.forward(np.ones((2, 3)), return_cache=True)
    assert all(np.all(g == 0) for g in net.backward(cache, np.zeros((2, 2))))


def test_linear_unit_net():
    net = Mlp([1], [(1, "scalar")], rng=0, activation="identity")
    _, cache = net.forward(np.array([[3.5]]), return_cache=True)
    gw, gb = net.backward(cache, np.array([[1.0]]))
    assert gw[0, 0] == 3.5 and gb[0] == 1.0


@given(st.lists(st.integers(1, 5), min_size=1, max_size=3), st.lists(st.integers(1, 3), min_size=1, max_size=3),
       st.sampled_from(["tanh", "identity"]), st.integers(0, 10_000))
@settings(max_examples=25, deadline=None)
def test_gradient_check_any_architecture(dims, heads, act, seed):
    rng = np.random.default_rng(seed)
    net = Mlp([4, *dims], [(h, "categorical" if i % 2 else "scalar") for i, h in enumerate(heads)],
              rng=rng, activation=act)
    x = rng.normal(size=(5, 4))
    w = rng.normal(size=(5, net.out_dim))
    _, cache = net.forward(x, return_cache=True)
    err = relative_error(net.backward(cache, w), numeric_grads(net, lambda n: float(np.sum(w * n.forward(x)))))
    assert err < 1e-4


def test_gradient_check_64_parameters():
    rng = np.random.default_rng(7)
    net = Mlp([5, 6], [(4, "scalar")], rng=rng)
    assert net.n_params == 64
    x = rng.normal(size=(6, 5))
    w = rng.normal(size=(6, 4))
    _, cache = net.forward(x, return_cache=True)
    err = relative_error(net.backward(cache, w), numeric_grads(net, lambda n: float(np.sum(w * n.forward(x)))))
    assert err < 1e-4


class TestAdam:
    def test_zero_gradient(self):
        net = Mlp([2, 3], [(1, "scalar")], rng=0)
        before = [p.copy() for p in net.params()]
        adam_step(net, [np.zeros_like(p) for p in net.params()], AdamState.for_net(net, 1e-2))
        for p, q in zip(before, net.params()):
            np.testing.assert_array_equal(p, q)

    def test_first_step_is_signed_lr(self):
        net = Mlp([2], [(2, "scalar")], rng=0)
        before = [p.copy() for p in net.params()]
        g = [np.array([[3.0, -0.2], [1e-3, -50.0]]), np.array([0.5, -0.5])]
        adam_step(net, g, AdamState.for_net(net, 1e-3))
        for p0, p1, gi in zip(before, net.params(), g):
            np.testing.assert_allclose(p1 - p0, -1e-3 * np.sign(gi), rtol=1e-4)

    def test_quadratic_bowl(self):
        net = Mlp([1], [(1, "scalar")], rng=0, activation="identity")
        net.set_params([np.array([[1.0]]), np.array([0.0])])
        opt = AdamState.for_net(net, 1e-2)
        for _ in range(500):
            w = net.params()[0]
            adam_step(net, [2.0 * w, np.zeros(1)], opt)
        assert abs(net.params()[0][0, 0]) < 1e-3
        assert opt.step_count == 500


def test_clip_grad_norm():
    g = [np.array([3.0]), np.array([4.0])]
    clipped, norm = clip_grad_norm(g, 0.5)
    assert norm == 5.0
    assert global_norm(clipped) == pytest.approx(0.5)
    same, _ = clip_grad_norm([np.array([0.1])], 0.5)
    assert same[0][0] == 0.1


class TestCheckpoint:
    def _trained(self):
        net = Mlp([3, 4], [(2, "categorical"), (1, "scalar")], rng=2)
        opt = AdamState.for_net(net, 1e-3)
        adam_step(net, [np.ones_like(p) for p in net.params()], opt)
        return net, opt

    def test_round_trip_bit_exact(self, tmp_path):
        net, opt = self._trained()
        save(net, opt, tmp_path / "c.json", config_hash="abc")
        net2, opt2, h = load(tmp_path / "c.json")
        assert h == "abc"
        x = np.random.default_rng(0).normal(size=(5, 3))
        np.testing.assert_array_equal(net.forward(x), net2.forward(x))
        assert opt2.step_count == 1
        for a, b in zip(opt.second_moment, opt2.second_moment):
            np.testing.assert_array_equal(a, b)

    def test_bundle(self, tmp_path):
        net, opt = self._trained()
        save_bundle(tmp_path / "b.json", {"actor": (net, opt), "critic": (net, None)})
        members, _ = load_bundle(tmp_path / "b.json")
        assert set(members) == {"actor", "critic"} and members["critic"][1] is None

    def test_truncated_file(self, tmp_path):
        net, opt = self._trained()
        p = tmp_path / "c.json"
        save(net, opt, p)
        p.write_text(p.read_text()[:200])
        with pytest.raises(CheckpointError, match="line 1 column"):
            load(p)

    def test_bad_shape_reports_location(self, tmp_path):
        net, opt = self._trained()
        p = tmp_path / "c.json"
        save(net, None, p)
        doc = json.loads(p.read_text())
        doc["members"]["net"]["params"][2]["shape"] = [9, 9]
        p.write_text(json.dumps(doc))
        with pytest.raises(CheckpointError, match=r"params\[2\]"):
            load(p)

    def test_wrong_format(self, tmp_path):
        p = tmp_path / "c.json"
        p.write_text(json.dumps({"format": "other", "members": {}}))
        with pytest.raises(CheckpointError, match="format"):
            load(p)
