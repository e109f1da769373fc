import csv

import numpy as np
import pytest

from spikelab.errors import ParameterError
from spikelab.init import InitScheme
from spikelab.network import Dense, Spike
from spikelab.neuron import NeuronSpec, SurrogateSpec
from spikelab.numerics import RngStream, sample_gaussian
from spikelab.varprop import VARPROP_COLUMNS, build_stack, measure_variances, write_varprop_csv

SIG4 = SurrogateSpec("sigmoid", 4.0)


def gaussian_batch(width, seed=0, n=256):
    return sample_gaussian(RngStream(seed).substream("batch"), (n, width))


def test_stack_structure():
    net, stats = build_stack(2, 8, NeuronSpec(), SIG4, InitScheme("kaiming"), RngStream(0))
    kinds = [type(l) for l in net.spec.layers]
    assert kinds == [Dense, Spike, Dense, Spike]
    assert len(stats) == 2
    with pytest.raises(ParameterError):
        build_stack(1, 8, NeuronSpec(), SIG4, InitScheme("kaiming"), RngStream(0))
    with pytest.raises(ParameterError):
        build_stack(3, 1, NeuronSpec(), SIG4, InitScheme("kaiming"), RngStream(0))


def test_zero_weight_stack_has_zero_forward_variance():
    net, _ = build_stack(4, 16, NeuronSpec(), SIG4, InitScheme("normal", fixed_std=0.0), RngStream(0))
    rep = measure_variances(net, gaussian_batch(16), RngStream(1))
    assert rep.depth == 4
    assert rep.forward_var[1:] == [0.0, 0.0, 0.0]
    assert all(np.isfinite(rep.ratio_forward)) and all(np.isfinite(rep.ratio_backward))


def test_ikun_v1_matches_kaiming_under_constant_surrogate():
    const = SurrogateSpec("constant", 1.0)
    x = gaussian_batch(32)
    x /= np.sqrt(np.mean(x * x))  # second moment exactly 1
    _, a = build_stack(5, 32, NeuronSpec(), const, InitScheme("ikun_v1", alpha=2.0), RngStream(0), calib=x)
    _, b = build_stack(5, 32, NeuronSpec(), const, InitScheme("kaiming"), RngStream(0))
    assert a[0].sigma_w == pytest.approx(b[0].sigma_w, abs=1e-12)
    # deeper layers see spike inputs, whose measured second moment rescales the Kaiming value
    for sa, sb in zip(a, b):
        assert sa.sigma_w == pytest.approx(sb.sigma_w / np.sqrt(sa.sigma_x2), rel=1e-12)


def test_batch_too_small():
    net, _ = build_stack(2, 8, NeuronSpec(), SIG4, InitScheme("kaiming"), RngStream(0))
    with pytest.raises(ParameterError, match="256"):
        measure_variances(net, gaussian_batch(8, n=255))


def test_report_is_deterministic():
    reps = []
    for _ in range(2):
        net, _ = build_stack(3, 32, NeuronSpec(), SIG4, InitScheme("ikun_v2"), RngStream(5), T=4)
        reps.append(measure_variances(net, gaussian_batch(32, 1), RngStream(2), "ikun_v2"))
    assert reps[0] == reps[1]
    r = reps[0]
    assert r.ratio_forward[0] == 1.0 and r.ratio_backward[-1] == 1.0
    assert all(v >= 0 for v in r.forward_var + r.backward_var + r.spike_var)


def test_linear_stack_self_check():
    # relaxed mode + constant surrogate + zero threshold + soft reset + T=1 makes
    # each block the identity map, so the stack is linear; LeCun keeps its variance
    neuron = NeuronSpec(v_threshold=0.0, reset_mode="soft")
    net, _ = build_stack(10, 128, neuron, SurrogateSpec("constant", 1.0), InitScheme("lecun"), RngStream(0), T=1)
    rep = measure_variances(net, gaussian_batch(128, n=1024), RngStream(1), mode="relaxed")
    assert all(0.5 <= r <= 2.0 for r in rep.ratio_forward)
    assert all(0.5 <= r <= 2.0 for r in rep.ratio_backward)


def test_csv_output(tmp_path):
    net, _ = build_stack(3, 16, NeuronSpec(), SIG4, InitScheme("xavier"), RngStream(0))
    rep = measure_variances(net, gaussian_batch(16), RngStream(1), "xavier")
    write_varprop_csv([rep, rep], tmp_path / "v.csv")
    rows = list(csv.reader(open(tmp_path / "v.csv")))
    assert tuple(rows[0]) == VARPROP_COLUMNS
    assert len(rows) == 7
    assert rows[1][:2] == ["xavier", "1"]
    assert float(rows[1][2]) == pytest.approx(rep.forward_var[0], rel=1e-8)
