"""Forward/backward correctness, pinned against central finite differences.

The FD oracle perturbs every weight entry of small nets and compares the
directional change of the mean loss; backprop has to match entrywise.
"""

import math

import numpy as np
import pytest

import widthlab as wl
from conftest import make_net, random_batch


def fd_gradients(net, batch, targets, loss, eps=1e-6):
    """Central-difference gradient of the mean loss w.r.t. every weight."""
    grads = []
    for w in net.weights:
        g = np.zeros_like(w)
        it = np.nditer(w, flags=["multi_index"])
        while not it.finished:
            idx = it.multi_index
            orig = w[idx]
            w[idx] = orig + eps
            up, _ = wl.loss_and_chi(loss, wl.forward(net, batch).logits, targets)
            w[idx] = orig - eps
            down, _ = wl.loss_and_chi(loss, wl.forward(net, batch).logits, targets)
            w[idx] = orig
            g[idx] = (up - down) / (2 * eps)
            it.iternext()
        grads.append(g)
    return grads


def assert_grads_close(got, want, rel=1e-5, abs_floor=1e-6):
    for layer, (g, w) in enumerate(zip(got, want)):
        tol = abs_floor + rel * np.abs(w)
        worst = np.max(np.abs(g - w) - tol)
        assert worst <= 0, f"layer {layer}: max excess {worst:.2e}"


@pytest.mark.parametrize("loss", list(wl.Loss))
@pytest.mark.parametrize("activation,sigma", [("relu", None), ("identity", None),
                                              ("sigma_gelu", 1.0), ("sigma_gelu", 0.5)])
def test_backward_matches_finite_differences(loss, activation, sigma):
    act = wl.make_activation(activation, sigma or 1.0)
    net, _ = make_net(seed=3, depth=3, width=8, d_in=4, d_out=3, activation=act)
    x, y = random_batch(5, samples=6, d_in=4, d_out=3)
    trace = wl.forward(net, x)
    _, chi = wl.loss_and_chi(loss, trace.logits, y)
    got = wl.backward(net, trace, chi)
    want = fd_gradients(net, x, y, loss)
    assert_grads_close(got, want)


def test_backward_fd_depth_one_and_two():
    for depth in (1, 2):
        net, _ = make_net(seed=depth, depth=depth, width=8, d_in=4, d_out=2)
        x, y = random_batch(depth + 10, samples=4, d_in=4, d_out=2)
        trace = wl.forward(net, x)
        _, chi = wl.loss_and_chi(wl.Loss.MSE, trace.logits, y)
        assert_grads_close(wl.backward(net, trace, chi), fd_gradients(net, x, y, wl.Loss.MSE))


def test_backward_is_linear_in_chi():
    net, _ = make_net(seed=9, depth=3, width=10, d_in=6, d_out=4)
    x, _ = random_batch(2, samples=5, d_in=6, d_out=4)
    trace = wl.forward(net, x)
    chi = wl.Rng(0).normal((5, 4))
    g1 = wl.backward(net, trace, chi)
    g2 = wl.backward(net, trace, 3.0 * chi)
    for a, b in zip(g1, g2):
        assert np.allclose(3.0 * a, b, rtol=1e-12)


def test_forward_trace_shapes_and_logits():
    net, _ = make_net(depth=4, width=7, d_in=3, d_out=2)
    x, _ = random_batch(1, samples=9, d_in=3, d_out=2)
    trace = wl.forward(net, x)
    assert [a.shape for a in trace.xs] == [(9, 3), (9, 7), (9, 7), (9, 7)]
    assert [h.shape for h in trace.hs] == [(9, 7), (9, 7), (9, 7), (9, 2)]
    assert trace.logits is trace.hs[-1]
    assert not trace.diverged
    # Manual recomputation of the first pre-activation.
    assert np.allclose(trace.hs[0], x @ net.weights[0].T)


def test_forward_validates_batch_shape():
    net, _ = make_net(d_in=5)
    with pytest.raises(ValueError):
        wl.forward(net, np.ones((3, 4)))
    with pytest.raises(ValueError):
        wl.forward(net, np.ones(5))


def test_forward_flags_divergence_without_raising():
    net, _ = make_net(d_in=5, d_out=3)
    net.weights[0][:] = 1e200
    net.weights[1][:] = 1e200
    trace = wl.forward(net, np.ones((2, 5)))
    assert trace.diverged


def test_backward_validates_chi_shape():
    net, _ = make_net(d_in=5, d_out=3)
    trace = wl.forward(net, np.ones((2, 5)))
    with pytest.raises(ValueError):
        wl.backward(net, trace, np.ones((2, 4)))


def test_erf_against_math_erf():
    xs = np.linspace(-4, 4, 201)
    got = wl.net.erf(xs)
    want = np.array([math.erf(v) for v in xs])
    assert np.max(np.abs(got - want)) < 1.5e-7


def test_relu_prime_at_zero_is_zero():
    r = wl.make_activation("relu")
    assert r.prime(np.array([-1.0, 0.0, 2.0])).tolist() == [0.0, 0.0, 1.0]
    assert r.value(np.array([-3.0, 0.5])).tolist() == [0.0, 0.5]


def test_sigma_gelu_limits_and_derivative():
    # Large |x|: approaches relu. Derivative is the clean erf form.
    g = wl.make_activation("sigma_gelu", 0.1)
    assert g.value(np.array([5.0]))[0] == pytest.approx(5.0, abs=1e-8)
    assert g.value(np.array([-5.0]))[0] == pytest.approx(0.0, abs=1e-8)
    # FD check of prime.
    xs = np.linspace(-2, 2, 41)
    eps = 1e-6
    fd = (wl.sigma_gelu(xs + eps, 0.7) - wl.sigma_gelu(xs - eps, 0.7)) / (2 * eps)
    assert np.max(np.abs(fd - wl.sigma_gelu_prime(xs, 0.7))) < 1e-6
    # At x = 0 the value is sigma/(2 sqrt(pi)), the smoothing mass.
    assert wl.sigma_gelu(0.0, 0.8) == pytest.approx(0.8 / (2 * math.sqrt(math.pi)), abs=1e-9)
    with pytest.raises(ValueError):
        wl.make_activation("sigma_gelu", 0.0)
    with pytest.raises(ValueError):
        wl.make_activation("swish")


def test_layer_dims_all_depths():
    assert wl.layer_dims(1, 64, 5, 3) == [(3, 5)]
    assert wl.layer_dims(2, 64, 5, 3) == [(64, 5), (3, 64)]
    assert wl.layer_dims(4, 64, 5, 3) == [(64, 5), (64, 64), (64, 64), (3, 64)]
    with pytest.raises(ValueError):
        wl.layer_dims(0, 64, 5, 3)


def test_init_network_variances_match_resolved_rules():
    spec = wl.resolve_preset(wl.PresetName.MUP, depth=3, base_lr=0.1)
    net = wl.init_network(wl.Rng(0).split("net", 1024), spec, 1024, d_in=100, d_out=10)
    # Input layer: var 2/d_in; hidden 2/n; output 2*256/n^2 (empirical, 5%).
    assert net.weights[0].var() == pytest.approx(2 / 100, rel=0.05)
    assert net.weights[1].var() == pytest.approx(2 / 1024, rel=0.05)
    assert net.weights[2].var() == pytest.approx(2 * 256 / 1024**2, rel=0.10)


def test_init_network_layer_streams_are_stable():
    # Layer 0 draws must not depend on how many layers follow.
    spec3 = wl.resolve_preset(wl.PresetName.SP, depth=3, alpha=0.0, base_lr=0.1)
    spec2 = wl.resolve_preset(wl.PresetName.SP, depth=2, alpha=0.0, base_lr=0.1)
    a = wl.init_network(wl.Rng(4).split("net", 32), spec3, 32, d_in=6, d_out=2)
    b = wl.init_network(wl.Rng(4).split("net", 32), spec2, 32, d_in=6, d_out=2)
    assert np.array_equal(a.weights[0], b.weights[0])


def test_frozen_init_copy_is_immutable_and_tracked():
    net, spec = make_net()
    w0 = [w.copy() for w in net.weights_0]
    trace = wl.forward(net, np.ones((2, net.d_in)))
    _, chi = wl.loss_and_chi(wl.Loss.MSE, trace.logits, np.zeros((2, net.d_out)))
    wl.sgd_step(net, wl.backward(net, trace, chi), spec, net.width)
    for w, orig in zip(net.weights_0, w0):
        assert np.array_equal(w, orig)
    with pytest.raises(ValueError):
        net.weights_0[0][0, 0] = 5.0
    assert np.allclose(net.delta_w(0), net.weights[0] - net.weights_0[0])


def test_save_load_roundtrip(tmp_path):
    net, _ = make_net(depth=3, width=9, d_in=4, d_out=2)
    path = tmp_path / "w.bin"
    wl.save_weights(path, net.weights)
    back = wl.load_weights(path)
    assert len(back) == 3
    for a, b in zip(net.weights, back):
        assert np.array_equal(a, b)


def test_load_rejects_corrupt_files(tmp_path):
    net, _ = make_net()
    path = tmp_path / "w.bin"
    wl.save_weights(path, net.weights)
    raw = path.read_bytes()
    bad_magic = tmp_path / "bad1.bin"
    bad_magic.write_bytes(b"XXNET99\n" + raw[8:])
    with pytest.raises(ValueError):
        wl.load_weights(bad_magic)
    truncated = tmp_path / "bad2.bin"
    truncated.write_bytes(raw[:-16])
    with pytest.raises(ValueError):
        wl.load_weights(truncated)
    padded = tmp_path / "bad3.bin"
    padded.write_bytes(raw + b"\x00" * 8)
    with pytest.raises(ValueError):
        wl.load_weights(padded)
