"""Shared fixtures: small meshes and default parameter sets."""

import numpy as np
import pytest

from kwcdyn.mesh import MeshSpec, build_mesh
from kwcdyn.model import ModelParams


@pytest.fixture(scope="session")
def interval_mesh():
    return build_mesh(MeshSpec("interval", 9, 1, 1.0, 1.0))


@pytest.fixture(scope="session")
def strip_mesh():
    return build_mesh(MeshSpec("periodic_strip", 8, 5, 1.0, 1.0))


@pytest.fixture(scope="session")
def small_params(interval_mesh):
    return ModelParams.default(grid=interval_mesh.spec)


@pytest.fixture(scope="session")
def strip_params(strip_mesh):
    return ModelParams.default(grid=strip_mesh.spec)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
