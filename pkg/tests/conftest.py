import numpy as np
import pytest

from riscf.scenario import build_scenario, desk_config
from riscf.selftest import random_admm_state, random_beams


@pytest.fixture
def desk():
    return build_scenario(desk_config(), seed=0)


def crandn(rng, *shape):
    return (rng.standard_normal(shape) + 1j * rng.standard_normal(shape)) / np.sqrt(2)


def random_psd(rng, n, rank=None):
    A = crandn(rng, n, rank or n)
    return A @ A.conj().T


def unit_phases(rng, *shape):
    return np.exp(1j * rng.uniform(0, 2 * np.pi, shape))


__all__ = ["crandn", "random_psd", "unit_phases", "random_beams", "random_admm_state"]
