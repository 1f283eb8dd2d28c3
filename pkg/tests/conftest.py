import numpy as np
import pytest

from zakotfs.lattice import ModulationParams, QuasiPeriodicGrid


def random_grid(p: ModulationParams, rng) -> QuasiPeriodicGrid:
    return QuasiPeriodicGrid(p, (rng.standard_normal((p.M, p.N)) + 1j * rng.standard_normal((p.M, p.N))) / np.sqrt(2))


@pytest.fixture
def p8():
    return ModulationParams(8, 8, 15e3)


@pytest.fixture
def rng():
    return np.random.default_rng(20240607)
