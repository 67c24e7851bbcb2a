"""Loss gradients, optimizer steps, and the training loop contract.

chi is everywhere the gradient of the MEAN batch loss w.r.t. the logits,
so per-sample quantities multiply by the batch size before norms.
"""

import json
import math

import numpy as np
import pytest

import widthlab as wl
from conftest import make_net, random_batch


def softmax_ref(f):
    e = np.exp(f - f.max(axis=1, keepdims=True))
    return e / e.sum(axis=1, keepdims=True)


# ---------------------------------------------------------------- losses

def test_ce_loss_hand_value():
    logits = np.array([[0.0, 0.0]])
    targets = np.array([[1.0, 0.0]])
    loss, chi = wl.loss_and_chi(wl.Loss.CROSS_ENTROPY, logits, targets)
    assert loss == pytest.approx(np.log(2.0))
    assert chi == pytest.approx(np.array([[-0.5, 0.5]]))


def test_ce_chi_rows_sum_to_zero():
    for seed in range(30):
        f = wl.Rng(seed).normal((8, 5)) * 10
        y = np.zeros((8, 5))
        y[np.arange(8), seed % 5] = 1.0
        _, chi = wl.loss_and_chi(wl.Loss.CROSS_ENTROPY, f, y)
        assert np.max(np.abs(chi.sum(axis=1))) < 1e-12


def test_ce_loss_nonnegative_and_shift_invariant():
    for seed in range(20):
        f = wl.Rng(seed).normal((6, 4)) * 5
        y = np.zeros((6, 4))
        y[:, seed % 4] = 1.0
        loss, chi = wl.loss_and_chi(wl.Loss.CROSS_ENTROPY, f, y)
        assert loss >= 0.0
        shifted, chi2 = wl.loss_and_chi(wl.Loss.CROSS_ENTROPY, f + 123.0, y)
        assert shifted == pytest.approx(loss, abs=1e-10)
        assert np.allclose(chi, chi2, atol=1e-12)


def test_ce_per_sample_chi_bounded_by_one():
    # |softmax - onehot| <= 1 entrywise: the mechanism keeping CE training
    # gradient-stable even with exploding logits.
    for seed in range(50):
        f = wl.Rng(seed).normal((4, 3)) * 100
        y = np.zeros((4, 3))
        y[:, seed % 3] = 1.0
        _, chi = wl.loss_and_chi(wl.Loss.CROSS_ENTROPY, f, y)
        assert np.max(np.abs(4 * chi)) <= 1.0 + 1e-12


def test_ce_extreme_logits_stay_finite():
    f = np.array([[800.0, -800.0], [-800.0, 800.0]])
    y = np.array([[0.0, 1.0], [0.0, 1.0]])
    loss, chi = wl.loss_and_chi(wl.Loss.CROSS_ENTROPY, f, y)
    assert np.isfinite(loss) and loss == pytest.approx(800.0)
    assert np.all(np.isfinite(chi))


def test_mse_loss_hand_value():
    logits = np.array([[1.0, 2.0], [0.0, 0.0]])
    targets = np.array([[0.0, 2.0], [0.0, 1.0]])
    loss, chi = wl.loss_and_chi(wl.Loss.MSE, logits, targets)
    # Per-sample 0.5*||resid||^2: (0.5, 0.5); mean 0.5. chi = resid / batch.
    assert loss == pytest.approx(0.5)
    assert chi == pytest.approx(np.array([[0.5, 0.0], [0.0, -0.5]]))


def test_mse_softmax_chi_matches_finite_differences():
    f = wl.Rng(3).normal((5, 4))
    y = np.zeros((5, 4))
    y[np.arange(5), [0, 1, 2, 3, 0]] = 1.0
    _, chi = wl.loss_and_chi(wl.Loss.MSE_SOFTMAX, f, y)
    eps = 1e-7
    for i in range(5):
        for j in range(4):
            up = f.copy(); up[i, j] += eps
            dn = f.copy(); dn[i, j] -= eps
            lu, _ = wl.loss_and_chi(wl.Loss.MSE_SOFTMAX, up, y)
            ld, _ = wl.loss_and_chi(wl.Loss.MSE_SOFTMAX, dn, y)
            assert chi[i, j] == pytest.approx((lu - ld) / (2 * eps), abs=1e-7)


def test_loss_on_nonfinite_logits():
    f = np.array([[np.inf, 0.0]])
    y = np.array([[1.0, 0.0]])
    for loss in wl.Loss:
        val, chi = wl.loss_and_chi(loss, f, y)
        assert val == np.inf
        assert np.array_equal(chi, np.zeros((1, 2)))


def test_loss_shape_mismatch():
    with pytest.raises(ValueError):
        wl.loss_and_chi(wl.Loss.MSE, np.ones((2, 3)), np.ones((2, 2)))


def test_softmax_rows_sum_to_one():
    s = wl.softmax(wl.Rng(1).normal((7, 9)) * 50)
    assert np.allclose(s.sum(axis=1), 1.0, atol=1e-12)
    assert np.all(s >= 0)


# ---------------------------------------------------------------- accuracy

def test_accuracy_scaling_invariance_and_ties():
    y = np.array([[0.0, 1.0], [1.0, 0.0]])
    f = np.array([[0.1, 0.9], [0.3, 0.2]])
    assert wl.accuracy(f, y) == 1.0
    assert wl.accuracy(5.0 * f, y) == 1.0
    # Uniform logits: argmax is index 0 for every sample.
    uniform = np.zeros((4, 10))
    targets = np.zeros((4, 10))
    targets[np.arange(4), [0, 0, 3, 9]] = 1.0
    assert wl.accuracy(uniform, targets) == 0.5


def test_accuracy_against_naive_loop():
    f = wl.Rng(2).normal((40, 6))
    y = np.zeros((40, 6))
    y[np.arange(40), (wl.Rng(3).uniform(40) * 6).astype(int)] = 1.0
    want = sum(int(np.argmax(f[i]) == np.argmax(y[i])) for i in range(40)) / 40
    assert wl.accuracy(f, y) == pytest.approx(want)


# ---------------------------------------------------------------- optimizer steps

def test_sgd_step_is_exactly_lr_times_grad():
    net, spec = make_net(preset=wl.PresetName.MUP, base_lr=0.05, width=16)
    before = [w.copy() for w in net.weights]
    grads = [np.ones_like(w) for w in net.weights]
    assert wl.sgd_step(net, grads, spec, net.width)
    for i, (w, b) in enumerate(zip(net.weights, before)):
        lr = wl.scaled_lr(spec, i, net.width)
        assert np.allclose(w, b - lr, rtol=0, atol=1e-15)


def test_sgd_step_rejects_nonfinite_gradients():
    net, spec = make_net()
    before = [w.copy() for w in net.weights]
    grads = [np.ones_like(w) for w in net.weights]
    grads[1][0, 0] = np.nan
    assert not wl.sgd_step(net, grads, spec, net.width)
    assert net.diverged
    for w, b in zip(net.weights, before):
        assert np.array_equal(w, b)


def test_adam_first_step_is_signed_lr():
    # With v_hat = g^2 at t=1, the update is -lr * g/(|g| + eps) ~ -lr*sign(g).
    net, spec = make_net(optimizer=wl.Optimizer.ADAM, preset=wl.PresetName.SP,
                         alpha=0.0, base_lr=0.01)
    opt = wl.AdamState.init(net)
    before = [w.copy() for w in net.weights]
    grads = [wl.Rng(i).normal(w.shape) for i, w in enumerate(net.weights)]
    for g in grads:
        g[np.abs(g) < 0.1] = 0.5  # keep |g| >> eps so the sign law is exact
    assert wl.adam_step(net, opt, grads, spec, net.width)
    for w, b, g in zip(net.weights, before, grads):
        assert np.allclose(w - b, -0.01 * np.sign(g), rtol=1e-6)


def test_adam_moments_accumulate():
    net, spec = make_net(optimizer=wl.Optimizer.ADAM, alpha=0.0, base_lr=0.01)
    opt = wl.AdamState.init(net, wl.AdamConfig(beta1=0.5, beta2=0.5, eps=1e-8))
    g = [np.ones_like(w) for w in net.weights]
    wl.adam_step(net, opt, g, spec, net.width)
    wl.adam_step(net, opt, g, spec, net.width)
    assert opt.step == 2
    # m after two unit grads with beta1=0.5: 0.5*0.5 + 0.5 = 0.75.
    assert opt.m[0][0, 0] == pytest.approx(0.75)


def test_adam_step_rejects_nonfinite_gradients():
    net, spec = make_net(optimizer=wl.Optimizer.ADAM, alpha=0.0)
    opt = wl.AdamState.init(net)
    grads = [np.full_like(w, np.inf) for w in net.weights]
    before = [w.copy() for w in net.weights]
    assert not wl.adam_step(net, opt, grads, spec, net.width)
    assert net.diverged
    for w, b in zip(net.weights, before):
        assert np.array_equal(w, b)


def test_first_sgd_update_is_minus_lr_chi_outer_x():
    # The output layer update after one step must be exactly -eta chi^T x^L.
    net, spec = make_net(depth=3, width=12, d_in=5, d_out=3, alpha=0.0, base_lr=0.2)
    x, y = random_batch(4, samples=7, d_in=5, d_out=3)
    trace = wl.forward(net, x)
    _, chi = wl.loss_and_chi(wl.Loss.MSE, trace.logits, y)
    w_before = net.weights[-1].copy()
    wl.sgd_step(net, wl.backward(net, trace, chi), spec, net.width)
    expect = w_before - 0.2 * chi.T @ trace.xs[-1]
    assert np.allclose(net.weights[-1], expect, atol=1e-15)


# ---------------------------------------------------------------- train loop

def stream_of(x, y, batch, steps):
    for i in range(steps):
        lo = (i * batch) % (x.shape[0] - batch + 1)
        yield x[lo:lo + batch], y[lo:lo + batch]


def test_zero_steps_gives_initial_probe_only(tiny_dataset):
    train_set, _ = tiny_dataset
    net, spec = make_net(d_in=train_set.d_in, d_out=2)
    m = wl.train(net, wl.batch_stream(train_set, 32), wl.Loss.CROSS_ENTROPY,
                 spec, steps=0)
    assert m.steps_run == 0
    assert len(m.probes) == 1 and m.probes[0].step == 0
    assert m.rows == []
    assert not m.diverged


def test_train_is_bitwise_reproducible(tiny_dataset):
    train_set, _ = tiny_dataset

    def go():
        net, spec = make_net(seed=5, d_in=train_set.d_in, d_out=2, width=24)
        m = wl.train(net, wl.batch_stream(train_set, 32), wl.Loss.CROSS_ENTROPY,
                     spec, steps=5, probe_steps=(1, 5))
        return net, m

    n1, m1 = go()
    n2, m2 = go()
    for a, b in zip(n1.weights, n2.weights):
        assert np.array_equal(a, b)
    assert [r.loss for r in m1.rows] == [r.loss for r in m2.rows]
    assert [p.logit_rms for p in m1.probes] == [p.logit_rms for p in m2.probes]


def test_probe_schedule_and_steps(tiny_dataset):
    train_set, _ = tiny_dataset
    net, spec = make_net(d_in=train_set.d_in, d_out=2)
    m = wl.train(net, wl.batch_stream(train_set, 32), wl.Loss.MSE, spec,
                 steps=4, probe_steps=(2, 4), log_every=2)
    assert [p.step for p in m.probes] == [0, 2, 4]
    assert m.steps_run == 4
    steps_logged = [r.step for r in m.rows]
    assert steps_logged == sorted(set(steps_logged))  # strictly increasing


def test_stream_exhaustion_ends_run_early(tiny_dataset):
    train_set, _ = tiny_dataset
    net, spec = make_net(d_in=train_set.d_in, d_out=2)
    m = wl.train(net, wl.batch_stream(train_set, 64), wl.Loss.MSE, spec, steps=100)
    assert m.steps_run == 3  # 192 samples / 64 = 3 batches
    assert not m.diverged


def test_eval_set_scores_final_metrics(tiny_dataset):
    train_set, test_set = tiny_dataset
    net, spec = make_net(d_in=train_set.d_in, d_out=2)
    m = wl.train(net, wl.batch_stream(train_set, 32), wl.Loss.CROSS_ENTROPY, spec,
                 steps=2, eval_set=(test_set.inputs, test_set.targets))
    want_trace = wl.forward(net, test_set.inputs)
    want_loss, _ = wl.loss_and_chi(wl.Loss.CROSS_ENTROPY, want_trace.logits, test_set.targets)
    assert m.final_loss == pytest.approx(want_loss)
    assert 0.0 <= m.final_accuracy <= 1.0


def test_divergence_flag_sticks_and_truncates():
    # Giant learning rate at tiny width: MSE blows up to non-finite fast.
    net, spec = make_net(seed=2, depth=2, width=64, d_in=6, d_out=2,
                         alpha=0.0, base_lr=1e4)
    x, y = random_batch(8, samples=256, d_in=6, d_out=2)
    m = wl.train(net, stream_of(x, y, 32, 50), wl.Loss.MSE, spec, steps=50)
    assert m.diverged
    assert m.diverged_step is not None and m.diverged_step <= 50
    assert m.rows[-1].diverged
    assert m.final_loss is None
    # Per spec the flag never clears once set.
    assert net.diverged or not np.isfinite(m.rows[-1].loss)


def test_ce_cap_counts_as_divergence():
    # Logits driven hard in the wrong direction: CE loss > 50 must halt.
    net, spec = make_net(seed=1, depth=2, width=32, d_in=4, d_out=2,
                         alpha=0.0, base_lr=500.0)
    x, y = random_batch(9, samples=64, d_in=4, d_out=2)
    m = wl.train(net, stream_of(x, y, 16, 200), wl.Loss.CROSS_ENTROPY, spec, steps=200)
    assert m.diverged
    last = m.rows[-1]
    assert (not np.isfinite(last.loss)) or last.loss > wl.CE_LOSS_CAP


def test_probe_batch_default_is_first_batch_and_still_trained(tiny_dataset):
    train_set, _ = tiny_dataset
    net, spec = make_net(seed=8, d_in=train_set.d_in, d_out=2)
    m = wl.train(net, wl.batch_stream(train_set, 48), wl.Loss.MSE, spec,
                 steps=3, probe_steps=(1,))
    # 3 optimizer steps ran even though batch 1 doubles as the probe batch.
    assert m.steps_run == 3
    assert len(m.probes) == 2


def test_explicit_probe_batch(tiny_dataset):
    train_set, _ = tiny_dataset
    net, spec = make_net(d_in=train_set.d_in, d_out=2)
    probe = (train_set.inputs[:16], train_set.targets[:16])
    m = wl.train(net, wl.batch_stream(train_set, 32), wl.Loss.MSE, spec,
                 steps=2, probe_steps=(2,), probe_batch=probe)
    assert all(p.layers[0].delta_h_rms is not None for p in m.probes[1:])


def test_metrics_csv_roundtrip(tmp_path, tiny_dataset):
    train_set, _ = tiny_dataset
    net, spec = make_net(d_in=train_set.d_in, d_out=2, depth=3)
    m = wl.train(net, wl.batch_stream(train_set, 32), wl.Loss.MSE, spec, steps=3)
    path = tmp_path / "metrics.csv"
    wl.metrics_to_csv(m, path, depth=3)
    lines = path.read_text().strip().splitlines()
    header = lines[0].split(",")
    assert header == ["step", "loss", "accuracy", "logit_rms", "chi_rms",
                      "chi_inf", "grad_rms_l1", "grad_rms_l2", "grad_rms_l3",
                      "diverged"]
    assert len(lines) == 1 + len(m.rows)
    first = lines[1].split(",")
    assert float(first[1]) == m.rows[0].loss  # repr roundtrips float64


def test_run_summary_contents(tiny_dataset):
    train_set, _ = tiny_dataset
    net, spec = make_net(d_in=train_set.d_in, d_out=2)
    m = wl.train(net, wl.batch_stream(train_set, 32), wl.Loss.MSE, spec, steps=2)
    summary = wl.run_summary(m)
    assert summary["diverged"] is False
    assert summary["diverged_step"] is None
    assert summary["steps_run"] == 2
    assert summary["final_loss"] == m.final_loss
    assert summary["probe_steps"] == [0]
    json.dumps(summary)


def test_sp_mse_large_lr_diverges_fast():
    # Desk-scale stand-in for the catastrophic SP/MSE instability: at width
    # 256 the NaN threshold sits near lr 10 (measured), so lr 30 must blow
    # up within a single data pass.
    data, _ = wl.gen_multi_index(seed=7, n_train=640, n_test=10)
    spec = wl.resolve_preset(wl.PresetName.SP, depth=3, optimizer=wl.Optimizer.SGD,
                             alpha=0.0, base_lr=30.0)
    net = wl.init_network(wl.Rng(0).split("net", 256), spec, 256, d_in=100, d_out=2)
    m = wl.train(net, wl.batch_stream(data, 64), wl.Loss.MSE, spec, steps=10)
    assert m.diverged and m.diverged_step <= 10


def test_sp_ce_large_lr_capped_not_nan():
    # The same rate that NaNs MSE cannot produce a non-finite value under
    # cross-entropy: per-sample chi is bounded by 1, so the logits blow up
    # smoothly and the run is halted by the loss cap with finite weights.
    data, _ = wl.gen_multi_index(seed=7, n_train=640, n_test=10)
    spec = wl.resolve_preset(wl.PresetName.SP, depth=3, optimizer=wl.Optimizer.SGD,
                             alpha=0.5, base_lr=30.0)
    net = wl.init_network(wl.Rng(0).split("net", 256), spec, 256, d_in=100, d_out=2)
    m = wl.train(net, wl.batch_stream(data, 64), wl.Loss.CROSS_ENTROPY, spec,
                 steps=10, log_every=1)
    assert m.diverged and m.diverged_step is not None
    assert all(math.isfinite(r.loss) for r in m.rows)
    assert m.rows[-1].loss > wl.CE_LOSS_CAP
    assert m.max_chi_inf <= 1.0 + 1e-12
    assert all(np.all(np.isfinite(w)) for w in net.weights)
    finite_rows = [r for r in m.rows if not r.diverged]
    assert max(r.logit_rms for r in finite_rows) > finite_rows[0].logit_rms
