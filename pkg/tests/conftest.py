import os
from pathlib import Path

import numpy as np
import pytest
from hypothesis import settings

settings.register_profile("default", deadline=None, max_examples=50)
settings.load_profile("default")

DATA_DIR = Path(os.environ.get("SPIKELAB_DATA", "/root/data/fashion-mnist"))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def central_diff(f, x, eps):
    """Central finite-difference gradient of scalar ``f`` at array ``x`` (modified in place, restored)."""
    g = np.zeros_like(x)
    flat = x.reshape(-1)
    gf = g.reshape(-1)
    for i in range(flat.size):
        old = flat[i]
        flat[i] = old + eps
        fp = f()
        flat[i] = old - eps
        fm = f()
        flat[i] = old
        gf[i] = (fp - fm) / (2 * eps)
    return g


def tiny_spec(kind="sigmoid", alpha=None, model="IF", reset_mode="hard", T=2):
    """Conv 1->2 (k3) on a 6x6 input, dense 32->2, spiking output."""
    from spikelab.network import Conv, Dense, Flatten, NetworkSpec, Spike
    from spikelab.neuron import NeuronSpec, SurrogateSpec

    if alpha is None:
        alpha = {"sigmoid": 4.0, "atan": 2.0, "triangular": 1.0, "constant": 1.0}[kind]
    spk = Spike(NeuronSpec(model=model, tau=2.0, reset_mode=reset_mode), SurrogateSpec(kind, alpha))
    return NetworkSpec((Conv(1, 2, 3), spk, Flatten(), Dense(32, 2), spk), T=T, input_shape=(1, 6, 6))


def random_net(spec, seed, scale=0.6, bias=0.3):
    from spikelab.network import Network

    r = np.random.default_rng(seed)
    net = Network(spec)
    for p in net.params:
        if p is not None:
            p["weight"][...] = scale * r.standard_normal(p["weight"].shape)
            p["bias"][...] = bias + 0.2 * r.standard_normal(p["bias"].shape)
    net.touch()
    return net


def relaxed_gradient_check(spec, seed, eps=1e-4, batch=3):
    """Max relative error between relaxed BPTT and central differences, over |g| > 1e-6."""
    from spikelab.network import backward, flatten_grads, forward
    from spikelab.train import mse_loss

    r = np.random.default_rng(seed + 1)
    net = random_net(spec, seed)
    images = r.uniform(0, 1, (batch,) + spec.input_shape)
    labels = r.integers(0, spec.n_classes, batch)

    def loss():
        net.touch()
        return mse_loss(forward(net, images, "relaxed")[0], labels)[0]

    rates, tape = forward(net, images, "relaxed")
    g = flatten_grads(backward(net, tape, mse_loss(rates, labels)[1]))
    fd = np.concatenate([central_diff(loss, a, eps).ravel() for a in net.param_arrays()])
    mask = np.abs(g) > 1e-6
    rel = np.abs(g - fd)[mask] / np.maximum(np.abs(g[mask]), np.abs(fd[mask]))
    return float(rel.max()), int(mask.sum())
