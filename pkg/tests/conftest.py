import json
import os

import numpy as np
import pytest

from hydrokam.torus import make_grid
from hydrokam.random_fields import random_density, random_field

TOL_MANIFEST = os.path.join(os.path.dirname(__file__), "tol_manifest.json")


@pytest.fixture(scope="session")
def tol_manifest():
    with open(TOL_MANIFEST, "r", encoding="utf-8") as fh:
        return json.load(fh)


def tol_disc(manifest, name, dt, dx):
    return manifest["constants"][name] * (dt + dx**2)


@pytest.fixture
def grid():
    return make_grid(256)


@pytest.fixture
def grid128():
    return make_grid(128)


@pytest.fixture
def rng():
    return np.random.default_rng(20240817)


def make_density(grid, seed, modes=6, amplitude=0.5):
    return random_density(grid, np.random.default_rng(seed), modes=modes,
                          amplitude=amplitude)


def make_field(grid, seed, modes=4, amplitude=1.0, zero_mean=False):
    return random_field(grid, np.random.default_rng(seed), modes=modes,
                        amplitude=amplitude, zero_mean=zero_mean)
