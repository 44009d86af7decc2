"""Shared fixtures: deterministic factories for nets and segments."""

import numpy as np
import pytest

from regionwalk.discovery import SegmentTask
from regionwalk.net import Network, add, avgpool2d, conv2d, dense, flatten, relu, save


def make_dense_relu_net(rng, in_dim=2, widths=None, out_dim=3):
    """Random He-scaled MLP with a ReLU after every hidden layer."""
    if widths is None:
        widths = (int(rng.integers(4, 17)), int(rng.integers(4, 17)))
    dims = [in_dim, *widths, out_dim]
    layers = []
    for i in range(len(dims) - 1):
        w = rng.normal(0.0, np.sqrt(2.0 / dims[i]), size=(dims[i + 1], dims[i]))
        b = rng.normal(0.0, 0.1, size=dims[i + 1])
        layers.append(dense(w, b))
        if i < len(dims) - 2:
            layers.append(relu())
    return Network(layers, input_shape=(in_dim,))


def make_affine_net(rng, in_dim=2, out_dim=3):
    """No ReLU anywhere: the whole input space is one region."""
    w1 = rng.normal(size=(5, in_dim))
    w2 = rng.normal(size=(out_dim, 5))
    return Network([dense(w1, rng.normal(size=5)), dense(w2, rng.normal(size=out_dim))],
                   input_shape=(in_dim,))


def make_conv_net(rng, shape=(2, 6, 6), out_dim=3):
    """Small conv/pool/dense stack on CHW images."""
    c, h, w = shape
    k1 = rng.normal(0.0, 0.4, size=(4, c, 3, 3))
    layers = [
        conv2d(k1, rng.normal(0.0, 0.1, size=4), stride=1, padding=1),
        relu(),
        avgpool2d(2),
        conv2d(rng.normal(0.0, 0.3, size=(6, 4, 3, 3)), rng.normal(0.0, 0.1, size=6)),
        relu(),
        flatten(),
    ]
    flat = 6 * (h // 2 - 2) * (w // 2 - 2)
    layers.append(dense(rng.normal(0.0, np.sqrt(2.0 / flat), size=(out_dim, flat)),
                        rng.normal(0.0, 0.1, size=out_dim)))
    return Network(layers, input_shape=shape)


def make_residual_net(rng, in_dim=4, width=8, out_dim=3):
    """Dense chain with one save/add skip around two ReLU blocks."""
    layers = [
        dense(rng.normal(0.0, np.sqrt(2.0 / in_dim), size=(width, in_dim)),
              rng.normal(0.0, 0.1, size=width)),
        relu(),
        save("skip"),
        dense(rng.normal(0.0, np.sqrt(2.0 / width), size=(width, width)),
              rng.normal(0.0, 0.1, size=width)),
        relu(),
        dense(rng.normal(0.0, np.sqrt(2.0 / width), size=(width, width)),
              rng.normal(0.0, 0.1, size=width)),
        add("skip"),
        relu(),
        dense(rng.normal(0.0, np.sqrt(2.0 / width), size=(out_dim, width)),
              rng.normal(0.0, 0.1, size=out_dim)),
    ]
    return Network(layers, input_shape=(in_dim,))


def sample_segment(rng, net, lo=-2.0, hi=2.0, tau=None):
    """Random segment inside the box, endpoints at least 1e-3 apart."""
    shape = net.input_shape
    while True:
        x0 = rng.uniform(lo, hi, size=shape)
        x1 = rng.uniform(lo, hi, size=shape)
        if np.linalg.norm((x1 - x0).ravel()) >= 1e-3:
            break
    kw = {} if tau is None else {"tau": tau}
    return SegmentTask.from_endpoints(x0, x1, **kw)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def dense_net(rng):
    return make_dense_relu_net(rng)


@pytest.fixture
def conv_net(rng):
    return make_conv_net(rng)


@pytest.fixture
def residual_net(rng):
    return make_residual_net(rng)


@pytest.fixture
def affine_net(rng):
    return make_affine_net(rng)
