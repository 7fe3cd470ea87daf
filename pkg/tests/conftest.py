import numpy as np
import pytest

from spintomo.dynamics import ControlParams, evolve_observables, random_waveforms
from spintomo.records import design_matrix
from spintomo.spin_system import SpinSpace, hermitian_basis


@pytest.fixture(scope="session")
def space():
    return SpinSpace.cesium()


@pytest.fixture(scope="session")
def basis16():
    return hermitian_basis(16)


@pytest.fixture(scope="session")
def waveforms_short():
    return random_waveforms(600.0, 13)


@pytest.fixture(scope="session")
def series_short(waveforms_short):
    """600 us homogeneous series: informationally complete, quick to build."""
    return evolve_observables(waveforms_short, ControlParams(), 1.0, 600.0)


@pytest.fixture(scope="session")
def design_short(series_short, basis16):
    return design_matrix(series_short, basis16, 1.0)


@pytest.fixture(scope="session")
def waveforms_2ms():
    return random_waveforms(2000.0, 13)


@pytest.fixture(scope="session")
def series_2ms(waveforms_2ms):
    return evolve_observables(waveforms_2ms, ControlParams(), 1.0, 2000.0)


@pytest.fixture(scope="session")
def design_2ms(series_2ms, basis16):
    return design_matrix(series_2ms, basis16, 1.0)


def random_hermitian(rng, d, scale=1.0):
    z = rng.standard_normal((d, d)) + 1j * rng.standard_normal((d, d))
    return scale * (z + z.conj().T) / 2
