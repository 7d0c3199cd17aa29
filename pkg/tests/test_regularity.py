import math

import numpy as np
import pytest

from nlfilt.grid import Field, Grid
from nlfilt.model import DomainError, ThetaMap, power
from nlfilt.regularity import (SigmaCylinder, bpsi_closed_form, delta_theta, energy_Bpsi, holder_fit,
                               oscillation)


@pytest.fixture
def line():
    return Grid(1, 0.001, 1.0)


def test_cylinder_validation():
    c = SigmaCylinder(0.0, 1.0, 0.5, 1.0)
    assert c.half_height == 0.5
    assert c.shrink(0.5).R == 0.25
    with pytest.raises(ValueError):
        SigmaCylinder(0.0, 1.0, 0.0, 1.0)
    with pytest.raises(ValueError):
        SigmaCylinder(0.0, 1.0, 1.0, 2.0)


def test_oscillation_static(line):
    u = line.sample(lambda x: x)
    assert oscillation(u, SigmaCylinder(0.0, 0.0, 0.5, 1.0)) == pytest.approx(1.0, abs=2 * line.h)
    with pytest.raises(DomainError):
        oscillation(u, SigmaCylinder(5.0, 0.0, 0.1, 1.0))


def test_oscillation_over_time(line):
    snaps = [line.sample(lambda x, s=s: s + 0 * x, time=s) for s in (0.0, 0.1, 0.2, 0.3)]
    cyl = SigmaCylinder(0.0, 0.15, 0.1, 1.0)
    # times 0.1 and 0.2 are inside |t - 0.15| < 0.1
    assert oscillation(snaps, cyl) == pytest.approx(0.1)
    with pytest.raises(DomainError):
        oscillation(snaps, SigmaCylinder(0.0, 5.0, 0.1, 1.0))


def test_sqrt_profile_exponent(line):
    u = line.sample(lambda x: np.sqrt(np.abs(x)))
    rep = holder_fit(u, (0.0, 0.0), R0=0.5, gamma_ratio=0.5, levels=6, sigma=1.0)
    assert rep.status == "ok"
    assert rep.alpha_hat == pytest.approx(0.5, rel=0.05)
    assert rep.varpi_hat == pytest.approx(0.5 ** rep.alpha_hat)
    assert rep.to_csv().splitlines()[0] == "R,osc"
    assert set(rep.summary()) == {"alpha_hat", "varpi_hat", "residual", "status"}


def test_flat_snapshot(line):
    rep = holder_fit(line.sample(lambda x: 0 * x + 3.0), (0.0, 0.0), R0=0.5, levels=4, sigma=1.0)
    assert rep.status == "flat" and rep.alpha_hat is None


def test_holder_fit_preconditions(line):
    u = line.sample(lambda x: x)
    with pytest.raises(DomainError):
        holder_fit(u, (0.0, 0.0), R0=0.5, levels=3, sigma=1.0)
    with pytest.raises(DomainError):
        holder_fit(u, (0.0, 0.0), R0=0.01, levels=8, sigma=1.0)
    snaps = [line.sample(lambda x: x, time=s) for s in (0.0, 0.5, 1.0)]
    with pytest.raises(DomainError):
        holder_fit(snaps, (0.0, 0.5), R0=0.5, levels=5, sigma=1.0)


@pytest.mark.parametrize("theta", [ThetaMap.identity(), ThetaMap.inverse_of(power(2.0))])
def test_bpsi_quadrature_matches_closed_form(theta):
    g = Grid(1, 0.01, 1.0)
    rng = np.random.default_rng(3)
    w = Field(g, rng.uniform(-2, 2, g.size))
    psi = Field(g, rng.uniform(-2, 2, g.size))
    vals, lam1, lam2, rep = energy_Bpsi(w, psi, theta)
    exact = bpsi_closed_form(w.values, psi.values, theta)
    assert np.allclose(vals.values, exact, atol=1e-9)
    assert rep.passed and rep.n_active > 0
    assert lam2 >= 0 and lam1 >= 0
    closed, *_ = energy_Bpsi(w, psi, theta, method="closed")
    assert np.array_equal(closed.values, exact)


def test_bpsi_identity_example():
    # theta = id: B_psi = (w - psi)_+^2 / 2
    g = Grid(1, 0.5, 1.0)
    w = Field(g, np.array([0.0, 1.0, 3.0, -1.0, 2.0]))
    psi = Field(g, np.array([1.0, 1.0, 1.0, 1.0, -2.0]))
    vals, lam1, lam2, rep = energy_Bpsi(w, psi, ThetaMap.identity())
    assert np.allclose(vals.values, [0.0, 0.0, 2.0, 0.0, 8.0])
    assert lam1 == pytest.approx(0.5)
    assert rep.passed


def test_bpsi_inactive_and_errors():
    g = Grid(1, 0.5, 1.0)
    w = Field(g, np.zeros(5))
    vals, lam1, lam2, rep = energy_Bpsi(w, w, ThetaMap.identity())
    assert rep.n_active == 0 and np.all(vals.values == 0)
    with pytest.raises(DomainError):
        energy_Bpsi(w, w, lambda s: s)
    with pytest.raises(ValueError):
        energy_Bpsi(w, w, ThetaMap.identity(), method="nope")


def test_delta_theta_values():
    assert delta_theta(ThetaMap.identity()) == pytest.approx(1.0 / 3.0, rel=1e-9)
    # theta = sqrt: inf over [0, 2] of theta' sits at 2, 1/(2 sqrt 2), over 1 + sqrt 2
    inv = ThetaMap.inverse_of(power(2.0))
    assert delta_theta(inv) == pytest.approx(1 / (2 * math.sqrt(2)) / (1 + math.sqrt(2)), rel=1e-6)
    assert delta_theta(inv, variant=True) >= delta_theta(inv)


def test_delta_theta_shift_invariant():
    inv = ThetaMap.inverse_of(power(3.0))
    assert delta_theta(inv.shifted(5.0)) == pytest.approx(delta_theta(inv), rel=1e-12)
