import functools

import numpy as np
import pytest

from fracmono import GridSpec, assemble_operator, uniform_partition


@functools.lru_cache(maxsize=16)
def _cached_op(n_i: int, s: float, collar: float, dim: int):
    if dim == 1:
        grid = GridSpec(dim=1, omega_box=(0.0, 1.0), collar_width=collar, h=1.0 / n_i)
    else:
        grid = GridSpec(dim=2, omega_box=((0.0, 1.0), (0.0, 1.0)), collar_width=collar, h=1.0 / n_i)
    return assemble_operator(grid, s=s)


def make_op(n_i=32, s=0.5, collar=0.5, dim=1):
    return _cached_op(n_i, s, collar, dim)


@pytest.fixture
def op32():
    return make_op(32)


@pytest.fixture
def op64():
    return make_op(64)


@pytest.fixture
def grid32(op32):
    return op32.grid


@pytest.fixture
def part4_64(op64):
    return uniform_partition(op64.grid, 4)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
