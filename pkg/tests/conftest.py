import numpy as np
import pytest

import widthlab as wl


@pytest.fixture
def rng():
    return wl.Rng(1234)


@pytest.fixture
def tiny_dataset():
    """Small multi-index dataset shared by training/sweep tests."""
    train, test = wl.gen_multi_index(seed=11, n_train=192, n_test=64, d_in=12)
    return train, test


def make_net(seed=0, preset=wl.PresetName.SP, depth=3, width=16, d_in=5, d_out=3,
             optimizer=wl.Optimizer.SGD, alpha=0.0, base_lr=0.05, activation=None,
             gain=2.0):
    if preset is not wl.PresetName.SP:
        alpha = None
    spec = wl.resolve_preset(preset, depth=depth, activation_gain=gain,
                             optimizer=optimizer, alpha=alpha, base_lr=base_lr)
    net = wl.init_network(wl.Rng(seed).split("net", width), spec, width,
                          d_in=d_in, d_out=d_out, activation=activation)
    return net, spec


def random_batch(seed, samples, d_in, d_out, one_hot=True):
    r = wl.Rng(seed).split("batch")
    x = r.normal((samples, d_in))
    if one_hot:
        labels = wl.Rng(seed).split("labels").uniform(samples)
        y = np.zeros((samples, d_out))
        y[np.arange(samples), (labels * d_out).astype(int)] = 1.0
    else:
        y = wl.Rng(seed).split("targets").normal((samples, d_out))
    return x, y
