import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from spikelab.errors import ParameterError
from spikelab.init import (INIT_KINDS, InitScheme, compute_sigma_w, estimate_ef2, fan_dims,
                           initialize_network)
from spikelab.network import Conv, Dense, Flatten, Network, NetworkSpec, Pool, Spike, default_spec
from spikelab.neuron import NeuronSpec, SurrogateSpec
from spikelab.numerics import RngStream, sample_gaussian
from spikelab.varprop import build_stack

# E[f'(H)^2] for the sigmoid surrogate (alpha = 4) under H ~ N(0, 1), from adaptive quadrature
# (scipy.integrate.quad over the real line, abs. error < 3e-12)
EF2_SIGMOID4_STD_NORMAL = 0.2559504432


def test_sigma_w_examples():
    assert compute_sigma_w(InitScheme("kaiming"), 50, 1) == pytest.approx(0.2, abs=1e-15)
    assert compute_sigma_w(InitScheme("xavier"), 300, 100) == pytest.approx(math.sqrt(0.005), abs=1e-15)
    assert compute_sigma_w(InitScheme("lecun"), 25, 7) == pytest.approx(0.2, abs=1e-15)
    assert compute_sigma_w(InitScheme("normal", fixed_std=0.05), 9, 9) == 0.05
    v1 = compute_sigma_w(InitScheme("ikun_v1", alpha=2.0), 100, 10, 1.0, 1.0)
    assert v1 == pytest.approx(0.141421, abs=1e-6)
    assert v1 == compute_sigma_w(InitScheme("kaiming"), 100, 10)


def test_sigma_w_errors():
    with pytest.raises(ParameterError):
        compute_sigma_w(InitScheme("kaiming"), 0, 1)
    with pytest.raises(ParameterError):
        compute_sigma_w(InitScheme("ikun_v1"), 10, 10, 0.0, 1.0)
    with pytest.raises(ParameterError):
        compute_sigma_w(InitScheme("ikun_v2"), 10, 10, 1.0, 0.0)
    with pytest.raises(ParameterError):
        InitScheme("orthogonal")
    with pytest.raises(ParameterError):
        InitScheme("ikun_v1", alpha=-1.0)


@given(fan_in=st.integers(1, 10**5), fan_out=st.integers(1, 10**5), sx2=st.floats(1e-3, 1e3),
       ef2=st.floats(1e-3, 10), c=st.floats(1e-3, 1e3), kind=st.sampled_from(["ikun_v1", "ikun_v2"]))
def test_ikun_scale_covariance(fan_in, fan_out, sx2, ef2, c, kind):
    s = InitScheme(kind, alpha=1.7)
    a = compute_sigma_w(s, fan_in, fan_out, sx2, ef2) ** 2
    b = compute_sigma_w(s, fan_in, fan_out, c * sx2, ef2) ** 2
    assert b == pytest.approx(a / c, rel=1e-12)


@given(fan=st.integers(1, 10**5), sx2=st.floats(1e-2, 1e2), ef2=st.floats(1e-2, 10))
def test_v2_with_equal_fans_is_v1_with_doubled_fan_in(fan, sx2, ef2):
    v2 = compute_sigma_w(InitScheme("ikun_v2"), fan, fan, sx2, ef2)
    v1 = compute_sigma_w(InitScheme("ikun_v1"), 2 * fan, 1, sx2, ef2)
    assert v2 == pytest.approx(v1, rel=1e-14)


def test_fan_dims():
    assert fan_dims(Dense(784, 128)) == (784, 128)
    assert fan_dims(Conv(1, 8, 3)) == (9, 72)
    with pytest.raises(ParameterError, match="no parameters"):
        fan_dims(Pool())
    with pytest.raises(ParameterError):
        fan_dims(Spike())


# ---- E[f'(H)^2] ----------------------------------------------------------------

def test_ef2_constant_surrogate_is_one():
    for mu, sd in ((0.0, 1.0), (3.0, 0.1), (-2.0, 10.0)):
        assert estimate_ef2(SurrogateSpec("constant"), mu, sd, 1000) == 1.0


def test_ef2_small_alpha_vanishes():
    assert estimate_ef2(SurrogateSpec("sigmoid", 1e-3), 0.0, 1.0, 10**4) < 1e-6


def test_ef2_matches_quadrature_constant():
    est = estimate_ef2(SurrogateSpec("sigmoid", 4.0), 0.0, 1.0, 10**6, RngStream(2024))
    assert abs(est / EF2_SIGMOID4_STD_NORMAL - 1) < 0.005


def test_ef2_monotone_in_sigma():
    s = SurrogateSpec("sigmoid", 4.0)
    vals = [estimate_ef2(s, 0.0, sd, 10**5, RngStream(1)) for sd in (0.5, 1.0, 2.0, 4.0)]
    assert all(a >= b for a, b in zip(vals, vals[1:]))


def test_ef2_errors_and_determinism():
    s = SurrogateSpec()
    with pytest.raises(ParameterError):
        estimate_ef2(s, 0.0, 0.0)
    with pytest.raises(ParameterError):
        estimate_ef2(s, 0.0, 1.0, 999)
    assert estimate_ef2(s, 0.2, 1.5, 5000, RngStream(3)) == estimate_ef2(s, 0.2, 1.5, 5000, RngStream(3))


# ---- initialize_network --------------------------------------------------------

def big_dense_net():
    spk = Spike(NeuronSpec(), SurrogateSpec("sigmoid", 4.0))
    return Network(NetworkSpec((Dense(400, 300), spk, Dense(300, 10), spk), input_shape=(400,)))


@pytest.mark.parametrize("kind", INIT_KINDS)
def test_empirical_weight_std_matches_scheme(kind):
    net, stats = initialize_network(big_dense_net(), InitScheme(kind), rng=RngStream(9))
    w = net.params[0]["weight"]
    assert w.size >= 10**5
    assert abs(w.var() / stats[0].sigma_w ** 2 - 1) < 0.02
    assert not np.any(net.params[0]["bias"]) and not np.any(net.params[2]["bias"])


def test_normal_scheme_std():
    net, _ = initialize_network(big_dense_net(), InitScheme("normal", fixed_std=0.05), rng=RngStream(1))
    assert abs(net.params[0]["weight"].std() / 0.05 - 1) < 0.02


def test_ikun_v1_analytic_constant_reduces_to_kaiming():
    spec = default_spec()
    const = SurrogateSpec("constant")
    a, sa = initialize_network(Network(spec), InitScheme("ikun_v1", alpha=2.0), surrogate=const)
    b, sb = initialize_network(Network(spec), InitScheme("kaiming"))
    for x, y in zip(sa, sb):
        assert abs(x.sigma_w - y.sigma_w) <= 1e-12
    assert np.array_equal(a.get_flat(), b.get_flat())


def test_analytic_mode_keeps_thresholds():
    net, stats = initialize_network(Network(default_spec()), InitScheme("ikun_v2"))
    assert [s.sigma_x2 for s in stats] == [1.0, 1.0, 1.0]
    assert all(t == 1.0 for t in net.thresholds if t is not None)


def test_initialization_is_deterministic():
    a, _ = initialize_network(Network(default_spec()), InitScheme("xavier"), rng=RngStream(5))
    b, _ = initialize_network(Network(default_spec()), InitScheme("xavier"), rng=RngStream(5))
    c, _ = initialize_network(Network(default_spec()), InitScheme("xavier"), rng=RngStream(6))
    assert np.array_equal(a.get_flat(), b.get_flat())
    assert not np.array_equal(a.get_flat(), c.get_flat())


def test_calibration_sets_threshold_to_mu_h():
    spec = default_spec()
    calib = np.random.default_rng(0).uniform(0, 1, (64, 1, 28, 28))
    net, stats = initialize_network(Network(spec), InitScheme("ikun_v2"), calib=calib, rng=RngStream(0))
    for s in stats:
        assert s.v_threshold == s.mu_h == net.thresholds[s.layer + 1]
    # first layer sees the raw images
    assert stats[0].sigma_x2 == pytest.approx(np.mean(calib ** 2))


def test_calibration_measures_only_for_baselines():
    calib = np.random.default_rng(0).uniform(0, 1, (32, 1, 28, 28))
    net, stats = initialize_network(Network(default_spec()), InitScheme("kaiming"), calib=calib)
    assert all(t == 1.0 for t in net.thresholds if t is not None)
    assert stats[0].sigma_w == compute_sigma_w(InitScheme("kaiming"), 9, 72)
    assert stats[1].sigma_x2 > 0


def test_empty_calibration_batch():
    with pytest.raises(ParameterError):
        initialize_network(Network(default_spec()), InitScheme("ikun_v2"), calib=np.zeros((0, 1, 28, 28)))


def test_calibrated_v2_input_second_moment_is_stable():
    net, stats = build_stack(4, 128, NeuronSpec(), SurrogateSpec("sigmoid", 4.0),
                             InitScheme("ikun_v2"), RngStream(3))
    sx = [s.sigma_x2 for s in stats]
    for a, b in zip(sx, sx[1:]):
        assert 0.5 <= b / a <= 2.0
