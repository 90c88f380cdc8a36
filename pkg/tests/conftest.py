import numpy as np
import pytest

from stressdist.geometry import (Ball, Box, CylinderAnnulus, SphericalShell,
                                 equatorial_annulus_interface,
                                 plane_disk_interface, sphere_interface)


@pytest.fixture(scope="session")
def ball():
    return Ball(1.0)


@pytest.fixture(scope="session")
def big_ball():
    return Ball(2.0)


@pytest.fixture(scope="session")
def shell():
    return SphericalShell(1.0, 2.0)


@pytest.fixture(scope="session")
def box():
    return Box([1.0, 1.0, 1.0])


@pytest.fixture(scope="session")
def cylinder():
    return CylinderAnnulus(0.5, 1.5, 2.0)


@pytest.fixture(scope="session")
def sphere_half():
    return sphere_interface(0.5)


@pytest.fixture(scope="session")
def unit_sphere():
    return sphere_interface(1.0)


@pytest.fixture(scope="session")
def shell_sphere():
    return sphere_interface(1.45)


@pytest.fixture(scope="session")
def annulus(shell):
    return equatorial_annulus_interface(shell)


@pytest.fixture(scope="session")
def ball_disk(ball):
    return plane_disk_interface(ball, z=0.0)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
