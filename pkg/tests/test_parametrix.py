import math

import numpy as np
import pytest

from nlfilt.grid import Grid
from nlfilt.model import DomainError
from nlfilt.parametrix import (CoefficientField, LeviDivergence, bump_coefficient, coefficient_from_csv,
                               constant_coefficient, csv_from_coefficient, exact_discrete_gamma, first_correction,
                               fundamental_solution, hat_integrals, levi_series, matched_grading,
                               parametrix_Z, periodic_poisson, phi_volterra, quasi_triangle_constant,
                               quasimetric, sine_coefficient, solve_nondiv, time_nodes)

SIGMA = 1.0


@pytest.fixture(scope="module")
def grid():
    return Grid.periodic(32)


@pytest.fixture(scope="module")
def sine(grid):
    return sine_coefficient(grid)


@pytest.fixture(scope="module")
def series(sine):
    return levi_series(sine, SIGMA, T=1.0, n_time=32, tol=1e-6)


@pytest.fixture(scope="module")
def gamma(sine, series):
    return fundamental_solution(sine, series)


def test_coefficient_validation(grid):
    with pytest.raises(DomainError):
        CoefficientField(grid, lambda x, t: np.sin(x), True, "signed")
    with pytest.raises(DomainError):
        CoefficientField(Grid(1, 0.1, 1.0), lambda x, t: 1 + 0 * x, True, "line")
    a = sine_coefficient(grid)
    assert a.lambda1 == pytest.approx(0.75, abs=1e-2) and a.lambda2 == pytest.approx(1.25, abs=1e-2)
    assert not a.is_constant and constant_coefficient(grid, 2.0).is_constant


def test_csv_round_trip(grid, sine):
    b = coefficient_from_csv(csv_from_coefficient(sine), grid)
    assert np.allclose(b.at_nodes(), sine.at_nodes(), rtol=0, atol=1e-15)
    two = coefficient_from_csv(csv_from_coefficient(sine, times=(0.0, 1.0)), grid)
    assert not two.static
    with pytest.raises(DomainError):
        coefficient_from_csv("x,t,value\n0,0,1\n1,0,1\n0,1,1\n", grid)


def test_quasimetric():
    assert quasimetric((3.0, 0.0), (0.0, 0.0), 1.0) == pytest.approx(3.0)
    assert quasimetric((0.0, 4.0), (0.0, 0.0), 1.0) == pytest.approx(4.0)
    # sigma = 1/2: the time part enters as |t|^4
    assert quasimetric((0.0, 2.0), (0.0, 0.0), 0.5) == pytest.approx(4.0)
    # a genuine metric for sigma >= 1, a quasimetric with constant 2^(1/sigma - 1) below
    assert quasi_triangle_constant(1.5) <= 1.0 + 1e-12
    C = quasi_triangle_constant(0.5, n=20000)
    assert 1.0 < C <= 2.0 + 1e-9


def test_time_nodes():
    t = time_nodes(2.0, 4, 2.0)
    assert np.allclose(t, [0, 0.125, 0.5, 1.125, 2.0])
    assert np.allclose(time_nodes(1.0, 4, 1.0), np.linspace(0, 1, 5))
    with pytest.raises(DomainError):
        time_nodes(1.0, 1)
    assert matched_grading(1.0, 1.0) == 2.0 and matched_grading(1.0, 0.1) == 4.0


def test_hat_integrals_sum_to_exponential_integral():
    nodes = time_nodes(1.0, 10, 2.0)
    c = np.array([0.0, 0.5, 3.0, 50.0])
    for t in (0.3, 1.0):
        total = sum(hat_integrals(c, t, nodes, q) for q in range(nodes.size))
        exact = np.where(c > 0, -np.expm1(-c * t) / np.where(c > 0, c, 1), t)
        assert np.allclose(total, exact, rtol=1e-12, atol=1e-15)


def test_frozen_kernel(grid):
    # sigma = 1 on the circle: Poisson kernel sinh(s) / (2 pi (cosh s - cos y)), up to the mode cut
    y = np.linspace(-math.pi, math.pi, 41)
    s = 2.0
    exact = np.sinh(s) / (2 * math.pi * (math.cosh(s) - np.cos(y)))
    assert np.allclose(periodic_poisson(grid, 1.0, y, s), exact, atol=1e-12)
    a1 = constant_coefficient(grid, 1.0)
    a4 = constant_coefficient(grid, 4.0)
    assert parametrix_Z(a4, 1.0, y, 0.3, 0.0, 0.0) == pytest.approx(parametrix_Z(a1, 1.0, y, 1.2, 0.0, 0.0))
    with pytest.raises(DomainError):
        parametrix_Z(a1, 1.0, 0.0, 0.5, 0.0, 0.5)


def test_frozen_kernel_residual(grid):
    # d_t Z + a(xi) A Z = 0 exactly, so a centred difference sees O(step^2) only
    a = bump_coefficient(grid)
    y = grid.axis
    t, d = 0.4, 1e-4
    dt = (parametrix_Z(a, 1.0, y, t + d, 0.3, 0.0) - parametrix_Z(a, 1.0, y, t - d, 0.3, 0.0)) / (2 * d)
    z = parametrix_Z(a, 1.0, y, t, 0.3, 0.0)
    lam = np.abs(np.fft.fftfreq(grid.n_axis, d=1.0 / grid.n_axis))
    Az = np.real(np.fft.ifft(lam * np.fft.fft(z)))
    abar = float(a(np.array([0.3]))[0])
    assert np.max(np.abs(dt + abar * Az)) <= 1e-3 * np.max(np.abs(z))


def test_constant_coefficient_is_frozen_kernel(grid):
    a = constant_coefficient(grid, 1.5)
    s = levi_series(a, SIGMA, n_time=8)
    assert s.K == 0 and not np.any(s.Phi)
    G = fundamental_solution(a, s).matrix(0.5)
    assert np.allclose(G, exact_discrete_gamma(a, SIGMA, 0.5), atol=1e-10)


def test_levi_norms_decay(series):
    assert series.converged
    assert series.norms[-1] <= series.tol
    assert np.all(np.diff(series.norms) < 0)
    assert np.all(series.decay_ratios()[1:] > 2.0)
    assert series.norm_csv().splitlines()[0] == "k,psi_norm"


def test_series_matches_volterra(sine, series):
    Phi = phi_volterra(sine, SIGMA, series.nodes)
    assert np.max(np.abs(Phi - series.Phi)) <= 1e-6 * np.max(np.abs(Phi))


def test_gamma_matches_oracle(sine, gamma):
    for s in (0.25, 1.0):
        G = gamma.matrix(s)
        E = exact_discrete_gamma(sine, SIGMA, s)
        assert np.max(np.abs(G - E)) <= 1e-3 * np.max(np.abs(E))


def test_gamma_reproduces_constants(gamma):
    assert np.allclose(gamma.mass_xi(0.5), 1.0, atol=1e-4)
    assert np.isclose(gamma(0.0, 0.5, 0.0), gamma.matrix(0.5)[gamma.grid.n_axis // 2, gamma.grid.n_axis // 2])


def test_gamma_residual(gamma, series):
    pts = [(i, float(t), j) for i, t, j in zip([3, 10, 16, 25], series.nodes[[4, 10, 20, 30]], [16, 5, 16, 30])]
    assert np.max(gamma.residual(pts)) <= 1e-3


def test_gap_and_horizon(gamma):
    with pytest.raises(DomainError):
        gamma.matrix(1e-4)
    with pytest.raises(DomainError):
        gamma.matrix(2.0)
    with pytest.raises(DomainError):
        gamma(0.05, 0.5, 0.0)


def test_graded_beats_uniform(sine):
    # psi_1 against a fine graded reference at an interior and the final time
    times = (0.3, 1.0)
    ref = {t: first_correction(sine, SIGMA, time_nodes(1.0, 768, 2.0), t) for t in times}

    def error(r):
        nodes = time_nodes(1.0, 48, r)
        return max(np.max(np.abs(first_correction(sine, SIGMA, nodes, t) - ref[t])) for t in times)

    assert error(2.0) <= 0.5 * error(1.0)


def test_divergence_is_reported(grid):
    rough = CoefficientField(grid, lambda x, t: 1.0 + 0.9 * np.sign(np.sin(8 * x)), True, "rough")
    with pytest.raises(LeviDivergence) as info:
        levi_series(rough, 1.9, n_time=4, K_max=3)
    assert len(info.value.norms) == 4


def test_nondiv_semigroup(grid):
    a = constant_coefficient(grid, 1.0)
    fs = fundamental_solution(a, levi_series(a, SIGMA, n_time=8))
    f0 = grid.field(periodic_poisson(grid, 1.0, grid.axis, 1.0))
    sol = solve_nondiv(fs, f0, times=[0.5])
    assert np.allclose(sol.values[0], periodic_poisson(grid, 1.0, grid.axis, 1.5), atol=1e-12)


def test_nondiv_constant_forcing(grid, gamma):
    f0 = grid.field(np.zeros(grid.size))
    sol = solve_nondiv(gamma, f0, F=lambda x, t: np.ones_like(x), times=[0.25, 0.5])
    # constants are annihilated by A, so f = t
    assert np.allclose(sol.values, [[0.25], [0.5]], atol=1e-4)
    assert sol.max_principle_gap() <= 1e-4


def test_nondiv_max_principle(grid, gamma):
    f0 = grid.sample(lambda x: np.cos(x) + 0.5 * np.sin(3 * x))
    sol = solve_nondiv(gamma, f0, T=1.0)
    assert sol.max_principle_gap() <= 1e-6
    assert sol.energy_integral > 0 and sol.weighted_norm > 0
