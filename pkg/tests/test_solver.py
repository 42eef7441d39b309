import numpy as np
import pytest

from fracshe.covariance import NoiseSpec, fbm, riesz, white_time
from fracshe.exceptions import ConfigurationError, DomainError
from fracshe.noise import NoiseStream, uniform_grid
from fracshe.solver import (
    SigmaSpec,
    identity,
    linear,
    sine_perturbed,
    solve_path,
    u0_on_grid,
    validate_assumptions,
)
from fracshe.spectral import semigroup_apply


def test_sigma_constants():
    assert (identity().l_sigma, identity().L_sigma) == (1.0, 1.0)
    assert linear(-2.0).l_sigma == 2.0
    s = sine_perturbed(0.3)
    assert s.l_sigma == pytest.approx(0.7) and s.L_sigma == pytest.approx(1.3)
    with pytest.raises(DomainError):
        sine_perturbed(1.0)
    with pytest.raises(ConfigurationError):
        SigmaSpec("cubic")


@pytest.mark.parametrize("sigma", [identity(), linear(0.5), sine_perturbed(0.4)])
def test_sigma_growth_bounds_hold(sigma):
    assert validate_assumptions(1.0, 0.25, sigma).ok


def test_validate_rejects_bad_u0_and_epsilon():
    assert not validate_assumptions(-1.0, 0.25, identity()).ok
    assert not validate_assumptions(1.0, 0.7, identity()).ok
    assert not validate_assumptions(lambda x: np.where(np.abs(x) < 0.5, 0.0, 1.0), 0.25, identity()).ok


def test_u0_forms():
    nodes = np.linspace(-0.9, 0.9, 5)
    assert np.all(u0_on_grid(2.0, nodes) == 2.0)
    assert np.allclose(u0_on_grid(np.cos, nodes), np.cos(nodes))
    with pytest.raises(ConfigurationError):
        u0_on_grid(np.ones(3), nodes)


def test_zero_noise_reproduces_semigroup(small_basis):
    grid = uniform_grid(small_basis.M, 0.01, 20)
    noise = NoiseSpec(0.0, riesz(0.5), white_time())
    path = solve_path(small_basis, noise, identity(), 1.0, grid, NoiseStream(0, 0))
    ref = semigroup_apply(small_basis, 0.2, np.ones(small_basis.M))
    assert np.allclose(path.values[-1], ref, atol=1e-12)
    assert not path.diverged


def test_path_is_reproducible(small_basis):
    grid = uniform_grid(small_basis.M, 0.01, 10)
    noise = NoiseSpec(1.0, riesz(0.5), white_time())
    a = solve_path(small_basis, noise, identity(), 1.0, grid, NoiseStream(3, 1))
    b = solve_path(small_basis, noise, identity(), 1.0, grid, NoiseStream(3, 1))
    assert np.array_equal(a.values, b.values)


def test_divergence_is_flagged(small_basis):
    grid = uniform_grid(small_basis.M, 0.05, 400)
    noise = NoiseSpec(60.0, riesz(0.5), white_time())
    path = solve_path(small_basis, noise, identity(), 1.0, grid, NoiseStream(0, 0))
    assert path.diverged and path.diverged_step is not None
    assert np.all(np.isnan(path.values[path.diverged_step:]))


def test_solver_requires_white_time(small_basis):
    grid = uniform_grid(small_basis.M, 0.01, 5)
    with pytest.raises(ConfigurationError):
        solve_path(small_basis, NoiseSpec(1.0, riesz(0.5), fbm(0.75)), identity(), 1.0, grid, NoiseStream(0))


def test_solver_rejects_grid_mismatch(small_basis):
    grid = uniform_grid(small_basis.M * 2, 0.01, 5)
    with pytest.raises(ConfigurationError):
        solve_path(small_basis, NoiseSpec(1.0, riesz(0.5), white_time()), identity(), 1.0, grid, NoiseStream(0))
