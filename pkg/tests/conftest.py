import numpy as np
import pytest

from bundlemf import (
    OneForm,
    ScalarField,
    build_grid,
    exterior_derivative,
    make_connection,
    make_problem,
)


def axis(n):
    return np.arange(n) / n


def cos_x_field(n, amp=1.0):
    return ScalarField(amp * np.cos(2 * np.pi * axis(n))[:, None] * np.ones((1, n)))


def zero_form(n):
    z = np.zeros((n, n))
    return OneForm(z, z)


def zero_connection(grid):
    return make_connection(zero_form(grid.n), grid)


def df_connection(grid, amp=0.3):
    f = cos_x_field(grid.n, amp)
    return make_connection(exterior_derivative(f, grid), grid)


def harmonic_connection(grid, a=2 * np.pi, b=0.0):
    n = grid.n
    return make_connection(OneForm(np.full((n, n), a), np.full((n, n), b)), grid)


def ones_field(n):
    return ScalarField(np.ones((n, n)))


@pytest.fixture(scope="session")
def grid32():
    return build_grid(32)


@pytest.fixture(scope="session")
def grid64():
    return build_grid(64)


@pytest.fixture(scope="session")
def flat_problem64(grid64):
    conn = zero_connection(grid64)
    return make_problem(grid64, conn, ones_field(64), 4 * np.pi)


@pytest.fixture(scope="session")
def df_problem64(grid64):
    conn = df_connection(grid64)
    return make_problem(grid64, conn, ones_field(64), 4 * np.pi)
