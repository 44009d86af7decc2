"""Forward engine against scalar-loop references, plus validation errors."""

import numpy as np
import pytest

import _oracles as oracle
from regionwalk.errors import InputError, NumericError
from regionwalk.net import (ActivationPattern, Network, add, avgpool2d, conv2d, dense,
                            flatten, forward, forward_batch, forward_frozen,
                            forward_frozen_batch, forward_pair, pattern_at, relu, save)
from conftest import (make_affine_net, make_conv_net, make_dense_relu_net,
                      make_residual_net, sample_segment)


def test_dense_forward_matches_scalar_loops(rng):
    for _ in range(10):
        net = make_dense_relu_net(rng)
        x = rng.uniform(-2, 2, size=2)
        got = forward(net, x).logits
        want = oracle.naive_forward(net, x)
        np.testing.assert_allclose(got, want, rtol=1e-12, atol=1e-14)


def test_conv_forward_matches_scalar_loops(rng):
    net = make_conv_net(rng)
    for _ in range(3):
        x = rng.uniform(-1, 1, size=(2, 6, 6))
        got = forward(net, x).logits
        want = oracle.naive_forward(net, x)
        np.testing.assert_allclose(got, want, rtol=1e-12, atol=1e-13)


def test_residual_forward_matches_scalar_loops(rng):
    net = make_residual_net(rng)
    for _ in range(5):
        x = rng.uniform(-2, 2, size=4)
        got = forward(net, x).logits
        want = oracle.naive_forward(net, x)
        np.testing.assert_allclose(got, want, rtol=1e-12, atol=1e-14)


def test_conv_stride_padding_variants(rng):
    # strided conv without padding, then with, each against the loop oracle
    for stride, padding in [(1, 0), (2, 1), (2, 0)]:
        w = rng.normal(size=(3, 2, 3, 3))
        b = rng.normal(size=3)
        net = Network([conv2d(w, b, stride=stride, padding=padding), relu(), flatten(),
                       dense(np.eye(3 * ((6 + 2 * padding - 3) // stride + 1) ** 2)[:2],
                             np.zeros(2))],
                      input_shape=(2, 6, 6))
        x = rng.uniform(-1, 1, size=(2, 6, 6))
        np.testing.assert_allclose(forward(net, x).logits, oracle.naive_forward(net, x),
                                   rtol=1e-12, atol=1e-13)


def test_batch_matches_single(rng):
    net = make_dense_relu_net(rng)
    xs = rng.uniform(-2, 2, size=(17, 2))
    logits, bits = forward_batch(net, xs)
    for i in range(xs.shape[0]):
        single = forward(net, xs[i])
        np.testing.assert_allclose(logits[i], single.logits, rtol=1e-12, atol=1e-14)
        assert ActivationPattern(bits[i]) == single.pattern


def test_pattern_bits_follow_preactivation_signs(rng):
    net = make_dense_relu_net(rng)
    x = rng.uniform(-2, 2, size=2)
    res = forward(net, x)
    bits = np.concatenate([p > 0 for p in res.preacts])
    assert np.array_equal(res.pattern.bits, bits)


def test_pattern_equality_and_digest():
    a = ActivationPattern(np.array([True, False, True]))
    b = ActivationPattern(np.array([True, False, True]))
    c = ActivationPattern(np.array([True, False, False]))
    assert a == b and hash(a) == hash(b)
    assert a != c
    # digests of different lengths never alias via packbits padding
    d = ActivationPattern(np.array([True, False, True, False]))
    assert a != d


def test_frozen_pass_matches_plain_inside_region(rng):
    net = make_dense_relu_net(rng)
    x = rng.uniform(-2, 2, size=2)
    pat = pattern_at(net, x)
    np.testing.assert_allclose(forward_frozen(net, pat, x), forward(net, x).logits,
                               rtol=1e-12, atol=1e-14)


def test_frozen_pass_is_affine_everywhere(rng):
    # frozen masks remove every nonlinearity: check additivity of increments
    net = make_dense_relu_net(rng)
    pat = pattern_at(net, rng.uniform(-2, 2, size=2))
    xs = rng.uniform(-4, 4, size=(3, 2))
    f = forward_frozen_batch(net, np.broadcast_to(pat.bits, (3, pat.bits.size)), xs)
    mid = forward_frozen(net, pat, (xs[0] + xs[1]) / 2)
    np.testing.assert_allclose(mid, (f[0] + f[1]) / 2, rtol=1e-11, atol=1e-12)


def test_forward_pair_direction_is_region_slope(rng):
    net = make_dense_relu_net(rng)
    task = sample_segment(rng, net)
    xs, ds = forward_pair(net, task.x0, task.unit_dir)
    h = 1e-7
    f0 = forward(net, task.x0).logits
    f1 = forward(net, task.x0 + h * task.unit_dir).logits
    np.testing.assert_allclose(ds[-1], (f1 - f0) / h, rtol=1e-5, atol=1e-7)


def test_forward_pair_rejects_zero_direction(rng):
    net = make_dense_relu_net(rng)
    with pytest.raises(InputError):
        forward_pair(net, np.zeros(2), np.zeros(2))


def test_forward_rejects_wrong_shape_and_nonfinite(rng):
    net = make_dense_relu_net(rng)
    with pytest.raises(InputError):
        forward(net, np.zeros(3))
    with pytest.raises(InputError):
        forward(net, np.array([np.nan, 0.0]))


@pytest.mark.filterwarnings("ignore:overflow")
def test_overflow_raises_numeric_error():
    w = np.full((1, 1), 1e308)
    net = Network([dense(w, np.zeros(1)), relu(), dense(w, np.zeros(1))],
                  input_shape=(1,))
    with pytest.raises(NumericError):
        forward(net, np.array([1e308]))


def test_network_validation_errors(rng):
    with pytest.raises(InputError):  # shape mismatch between layers
        Network([dense(np.ones((3, 2)), np.zeros(3)), dense(np.ones((2, 4)), np.zeros(2))],
                input_shape=(2,))
    with pytest.raises(InputError):  # non-finite weight
        Network([dense(np.array([[np.inf]]), np.zeros(1))], input_shape=(1,))
    with pytest.raises(InputError):  # duplicate save tag
        Network([dense(np.ones((2, 2)), np.zeros(2)), save("a"), save("a"),
                 dense(np.ones((2, 2)), np.zeros(2))], input_shape=(2,))
    with pytest.raises(InputError):  # add without matching save
        Network([dense(np.ones((2, 2)), np.zeros(2)), add("missing")], input_shape=(2,))
    with pytest.raises(InputError):  # output must be flat
        Network([conv2d(np.ones((1, 1, 2, 2)), np.zeros(1))], input_shape=(1, 4, 4))


def test_add_shape_mismatch_rejected():
    layers = [save("s"), dense(np.ones((3, 2)), np.zeros(3)), add("s")]
    with pytest.raises(InputError):
        Network(layers, input_shape=(2,))


def test_neuron_count_and_offsets(rng):
    net = make_dense_relu_net(rng, widths=(5, 7))
    assert net.relu_sizes == [5, 7]
    assert net.relu_offsets == [0, 5]
    assert net.neuron_count == 12
    assert net.output_dim == 3


def test_affine_net_has_no_neurons(rng):
    net = make_affine_net(rng)
    assert net.neuron_count == 0
    res = forward(net, rng.uniform(-1, 1, size=2))
    assert res.pattern.bits.size == 0
