"""Closed-form deviation: hand integrals, trapezoid oracle, edge cases."""

import numpy as np
import pytest

import _oracles as oracle
from regionwalk.deviation import (DeviationScore, absolute_deviation, deviation_record,
                                  interpolant_at, path_deviation, region_deviation)
from regionwalk.discovery import RegionTrace, SegmentTask, find_linear_regions
from regionwalk.errors import InputError
from regionwalk.net import Network, dense, relu
from conftest import make_affine_net, make_dense_relu_net, sample_segment


def test_interpolant_endpoints_and_midpoint():
    f0 = np.array([0.0, 2.0])
    f1 = np.array([1.0, 0.0])
    np.testing.assert_allclose(interpolant_at(f0, f1, 0.0), f0)
    np.testing.assert_allclose(interpolant_at(f0, f1, 1.0), f1)
    np.testing.assert_allclose(interpolant_at(f0, f1, 0.5), [0.5, 1.0])


def test_region_deviation_hand_integrals():
    # |t| on [-1, 1] integrates to 1; scaled cases halve predictably
    assert region_deviation(0.0, 1.0, -1.0, 1.0) == pytest.approx(1.0)
    assert region_deviation(0.0, 1.0, 0.0, 1.0) == pytest.approx(0.5)
    assert region_deviation(-0.5, 1.0, 0.0, 1.0) == pytest.approx(0.25)
    assert region_deviation(0.0, 0.0, 0.0, 1.0) == pytest.approx(0.0)
    # constant offset: |c| * width, the m == 0 branch
    assert region_deviation(2.0, 0.0, 0.25, 0.75) == pytest.approx(1.0)


def test_region_deviation_kink_inside_interval():
    # c + m t = t - 0.3 on [0, 1]: area 0.3^2/2 + 0.7^2/2
    want = 0.3 ** 2 / 2 + 0.7 ** 2 / 2
    assert region_deviation(-0.3, 1.0, 0.0, 1.0) == pytest.approx(want, rel=1e-15)


def test_region_deviation_broadcasts():
    c = np.array([[0.0, -0.5]])
    m = np.array([[1.0, 1.0]])
    out = region_deviation(c, m, np.array([[0.0, 0.0]]), np.array([[1.0, 1.0]]))
    np.testing.assert_allclose(out, [[0.5, 0.25]])


def test_region_deviation_rejects_reversed_interval():
    with pytest.raises(InputError):
        region_deviation(0.0, 1.0, 1.0, 0.0)


def test_relu_identity_deviation():
    # f(x) = relu(x) on [-1, 1]: interpolant is x/2 + 1/2 scaled... checked by hand: 0.5
    net = Network([dense(np.array([[1.0]]), np.array([0.0])), relu()], input_shape=(1,))
    task = SegmentTask.from_endpoints(np.array([-1.0]), np.array([1.0]))
    tr = find_linear_regions(net, task)
    dev = absolute_deviation(net, task, tr)
    assert dev.per_logit[0] == pytest.approx(0.5, abs=1e-12)
    assert dev.l2 == pytest.approx(0.5, abs=1e-12)
    assert not dev.partial
    assert dev.density == 2


def test_deviation_matches_trapezoid(rng):
    for _ in range(8):
        net = make_dense_relu_net(rng)
        task = sample_segment(rng, net)
        tr = find_linear_regions(net, task)
        dev = absolute_deviation(net, task, tr)
        want = oracle.trapezoid_deviation(net, task, n=40001)
        np.testing.assert_allclose(dev.per_logit, want, rtol=3e-6, atol=1e-10)


def test_affine_net_deviation_is_zero(affine_net, rng):
    for _ in range(5):
        task = sample_segment(rng, affine_net)
        tr = find_linear_regions(affine_net, task)
        dev = absolute_deviation(affine_net, task, tr)
        assert dev.density == 1
        assert np.all(np.abs(dev.per_logit) <= 1e-12)
        assert dev.l2 <= 1e-12


def test_l2_is_norm_of_per_logit(rng):
    net = make_dense_relu_net(rng)
    task = sample_segment(rng, net)
    dev = absolute_deviation(net, task, find_linear_regions(net, task))
    assert dev.l2 == pytest.approx(float(np.linalg.norm(dev.per_logit)), rel=1e-15)


def test_partial_trace_marks_score(rng):
    net = Network([dense(np.array([[1.0]]), np.array([0.0])), relu()], input_shape=(1,))
    task = SegmentTask.from_endpoints(np.array([-5e-7]), np.array([5e-7]))
    tr = find_linear_regions(net, task)
    assert tr.termination == "no_finite_lambda"
    dev = absolute_deviation(net, task, tr)
    assert dev.partial


def test_deviation_requires_patterns(rng):
    net = make_dense_relu_net(rng)
    task = sample_segment(rng, net)
    bare = RegionTrace(boundaries=[0.0, 1.0], records=[])
    with pytest.raises(InputError):
        absolute_deviation(net, task, bare)


def test_path_deviation_sums_segments(rng):
    net = make_dense_relu_net(rng)
    a, b, c = (rng.uniform(-2, 2, size=2) for _ in range(3))
    scores = []
    for i, (p, q) in enumerate([(a, b), (b, c)]):
        task = SegmentTask.from_endpoints(p, q, segment_id=f"s{i}", path_id="p0")
        scores.append(absolute_deviation(net, task, find_linear_regions(net, task)))
    total = path_deviation(scores)
    np.testing.assert_allclose(total.per_logit, scores[0].per_logit + scores[1].per_logit)
    assert total.density == scores[0].density + scores[1].density
    assert total.path_id == "p0"


def test_path_deviation_rejects_mixed_paths(rng):
    s1 = DeviationScore(np.ones(3), density=1, partial=False, path_id="a")
    s2 = DeviationScore(np.ones(3), density=1, partial=False, path_id="b")
    with pytest.raises(InputError):
        path_deviation([s1, s2])
    with pytest.raises(InputError):
        path_deviation([])


def test_partial_flag_survives_summation():
    s1 = DeviationScore(np.ones(2), density=1, partial=False, path_id="a")
    s2 = DeviationScore(np.ones(2), density=2, partial=True, path_id="a")
    assert path_deviation([s1, s2]).partial


def test_deviation_record_fields(rng):
    net = make_dense_relu_net(rng)
    task = sample_segment(rng, net)
    task.path_id = "p7"
    dev = absolute_deviation(net, task, find_linear_regions(net, task))
    rec = deviation_record(dev)
    assert rec["path_id"] == "p7"
    assert rec["density"] == dev.density
    assert rec["deviation_l2"] == pytest.approx(dev.l2)
    assert len(rec["deviation_per_logit"]) == net.output_dim
    assert rec["partial"] is False
