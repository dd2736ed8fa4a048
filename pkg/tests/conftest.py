import numpy as np
import pytest

from varlab.fields import radial_bump
from varlab.models import CatenoidSpec, GraphSheet, generate_catenoid, generate_graph, \
    generate_plane


@pytest.fixture(scope="session")
def plane_q1():
    return generate_plane(2, 1, q=1, h=1 / 64, radius=2.5)


@pytest.fixture(scope="session")
def plane_q3():
    return generate_plane(2, 1, q=3, h=1 / 64, radius=2.5)


@pytest.fixture(scope="session")
def catenoid_small():
    return generate_catenoid(CatenoidSpec(r_max=4.0), h=1 / 64)


def tilt_pair_sheets(eps):
    return [
        GraphSheet(fn=lambda x, e=eps: e * x[:, 0],
                   grad=lambda x, e=eps: np.stack(
                       [np.full(len(x), e), np.zeros(len(x))], axis=1)),
        GraphSheet(fn=lambda x, e=eps: -e * x[:, 0],
                   grad=lambda x, e=eps: np.stack(
                       [np.full(len(x), -e), np.zeros(len(x))], axis=1)),
    ]


def harmonic_sheets(eps):
    return [GraphSheet(
        fn=lambda x, e=eps: e * (x[:, 0] ** 2 - x[:, 1] ** 2),
        grad=lambda x, e=eps: np.stack([2 * e * x[:, 0], -2 * e * x[:, 1]], axis=1),
    )]


def bump_sheets(amplitude, radius=0.12):
    b = radial_bump(np.zeros(2), radius, amplitude=amplitude)
    return [GraphSheet(fn=lambda x, bb=b: bb.value(x),
                       grad=lambda x, bb=b: bb.grad(x))]


@pytest.fixture(scope="session")
def two_sheet_graph():
    return generate_graph(tilt_pair_sheets(0.05), h=1 / 64, radius=4.2)
