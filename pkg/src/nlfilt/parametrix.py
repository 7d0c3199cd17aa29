"""Levi parametrix for f_t + a(x, t)(-Delta)^(sigma/2) f = F on a periodic line.

Everything lives on a periodic grid of M nodes, where ``A`` is the Fourier
multiplier |k|^sigma. The frozen kernel ``Z(x, t; xi, tau)`` solves the
equation with ``a`` fixed at ``(xi, tau)``. The parametrix correction is
``Phi = sum_k psi_k``, with

    psi_0 = (a(xi, tau) - a(x, t)) A Z,    psi_{k+1} = int psi_0 psi_k,

and ``Gamma = Z + int Z Phi``. Time integrals use product integration:
psi_k is piecewise linear between graded time nodes, and the frozen
exponential is integrated exactly for each Fourier mode. For a
time-independent coefficient the exact discrete fundamental solution is
``expm(-t diag(a) A) / h``, which serves as an oracle.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field as dc_field
from typing import Callable, Optional

import numpy as np
from scipy.interpolate import RegularGridInterpolator

from .grid import Field, Grid
from .model import DomainError
from .stable import poisson_kernel  # noqa: F401  (re-exported: kernel on the line)

MIN_GAP = 1e-3


class LeviDivergence(RuntimeError):
    """The Levi terms did not decay by K_max."""

    def __init__(self, message: str, norms):
        super().__init__(message)
        self.norms = list(norms)


# ---------------------------------------------------------------------------
# coefficients


@dataclass(frozen=True)
class CoefficientField:
    """a(x, t) on a periodic grid, with ellipticity bounds from its samples.

    ``fn(x, t)`` must accept arrays. ``static`` marks a coefficient without
    time dependence, which lets one Levi series serve every source time.
    """

    grid: Grid
    fn: Callable
    static: bool = True
    name: str = "custom"
    T: float = 1.0

    def __post_init__(self):
        if self.grid.mode != "periodic" or self.grid.dim != 1:
            raise DomainError("the parametrix engine runs on a 1D periodic grid")
        s = self.samples()
        if not np.all(np.isfinite(s)) or np.min(s) <= 0:
            raise DomainError("coefficient must be positive and finite (ellipticity)")

    def __call__(self, x, t=0.0) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        return np.broadcast_to(np.asarray(self.fn(x, np.broadcast_to(t, x.shape)), dtype=float), x.shape)

    def at_nodes(self, t=0.0) -> np.ndarray:
        return self(self.grid.axis, t)

    def samples(self, n_times: int = 9) -> np.ndarray:
        ts = [0.0] if self.static else np.linspace(0.0, self.T, n_times)
        return np.stack([self.at_nodes(t) for t in ts])

    @property
    def lambda1(self) -> float:
        return float(np.min(self.samples()))

    @property
    def lambda2(self) -> float:
        return float(np.max(self.samples()))

    @property
    def is_constant(self) -> bool:
        s = self.samples()
        return bool(np.ptp(s) <= 1e-14 * np.max(np.abs(s)))

    def holder(self, alpha: float = 1.0) -> float:
        """Largest |a(x) - a(y)| / |x - y|^alpha over node pairs (periodic distance)."""
        v = self.samples()
        x = self.grid.axis
        d = np.abs(x[:, None] - x[None, :])
        d = np.minimum(d, self.grid.period - d)
        off = d > 0
        best = 0.0
        for row in v:
            q = np.abs(row[:, None] - row[None, :])[off] / d[off] ** alpha
            best = max(best, float(np.max(q)))
        return best

    def holder_exponent(self) -> float:
        """Empirical exponent from the modulus of continuity at dyadic scales, capped at 1."""
        v = self.samples()[0]
        M = v.size
        shifts = [s for s in (1, 2, 4, 8, 16) if s < M // 2]
        if self.is_constant or len(shifts) < 2:
            return 1.0
        osc = np.array([np.max(np.abs(np.roll(v, -s) - v)) for s in shifts])
        hs = np.array(shifts) * self.grid.h
        slope = np.polyfit(np.log(hs), np.log(np.maximum(osc, 1e-300)), 1)[0]
        return float(min(1.0, max(slope, 0.05)))


def constant_coefficient(grid: Grid, value: float = 1.0) -> CoefficientField:
    return CoefficientField(grid, lambda x, t: np.full_like(x, float(value)), True, "constant")


def sine_coefficient(grid: Grid, amplitude: float = 0.25, base: float = 1.0) -> CoefficientField:
    """a(x) = base + amplitude sin x."""
    return CoefficientField(grid, lambda x, t: base + amplitude * np.sin(x), True, "sine")


def bump_coefficient(grid: Grid, amplitude: float = 0.5, width: float = 0.5, base: float = 1.0) -> CoefficientField:
    """a(x) = base + amplitude exp(-(x/width)^2)."""
    return CoefficientField(grid, lambda x, t: base + amplitude * np.exp(-(x / width) ** 2), True, "bump")


COEFFICIENTS = {"constant": constant_coefficient, "sine": sine_coefficient, "bump": bump_coefficient}


def coefficient_from_csv(text: str, grid: Grid) -> CoefficientField:
    """Coefficient from ``x,t,value`` rows on a tensor grid (linear interpolation).

    A single time level gives a static coefficient.
    """
    rows = np.loadtxt(io.StringIO(text), delimiter=",", skiprows=1, ndmin=2)
    xs = np.unique(rows[:, 0])
    ts = np.unique(rows[:, 1])
    table = np.full((xs.size, ts.size), np.nan)
    ix = np.searchsorted(xs, rows[:, 0])
    it = np.searchsorted(ts, rows[:, 1])
    table[ix, it] = rows[:, 2]
    if np.isnan(table).any():
        raise DomainError("coefficient CSV is not a full tensor grid")
    if ts.size == 1:
        def fn(x, t):
            xp = (np.asarray(x) + grid.R_dom) % grid.period - grid.R_dom
            return np.interp(xp, xs, table[:, 0], period=grid.period)
        return CoefficientField(grid, fn, True, "csv")
    rgi = RegularGridInterpolator((xs, ts), table, bounds_error=False, fill_value=None)

    def fn(x, t):
        xp = (np.asarray(x) + grid.R_dom) % grid.period - grid.R_dom
        return rgi(np.column_stack([np.ravel(xp), np.ravel(t)])).reshape(np.shape(x))

    return CoefficientField(grid, fn, False, "csv", float(ts[-1]))


def csv_from_coefficient(a: CoefficientField, times=(0.0,)) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["x", "t", "value"])
    for t in times:
        for x, v in zip(a.grid.axis, a.at_nodes(t)):
            w.writerow([repr(float(x)), repr(float(t)), repr(float(v))])
    return buf.getvalue()


# ---------------------------------------------------------------------------
# spectral helpers


def _modes(grid: Grid, sigma: float) -> np.ndarray:
    k = np.fft.fftfreq(grid.n_axis, d=1.0 / grid.n_axis) * (2 * math.pi / grid.period)
    return np.abs(k) ** sigma


def _circulant(F: np.ndarray) -> np.ndarray:
    """C[..., i, l] = (1/M) sum_k F[..., l, k] exp(i k (x_i - x_l))."""
    M = F.shape[-1]
    G = np.real(np.fft.ifft(F, axis=-1))
    i = np.arange(M)
    L = np.broadcast_to(i[None, :], (M, M))
    D = (i[:, None] - i[None, :]) % M
    return G[..., L, D]


def _e1(u):
    out = np.empty_like(u)
    small = u < 1e-4
    us = u[small]
    out[small] = 1.0 - us / 2.0 + us * us / 6.0
    ub = u[~small]
    out[~small] = -np.expm1(-ub) / ub
    return out


def _e2(u):
    # int_0^1 exp(-u (1 - s)) s ds
    out = np.empty_like(u)
    small = u < 1e-3
    us = u[small]
    out[small] = 0.5 - us / 6.0 + us * us / 24.0 - us ** 3 / 120.0
    ub = u[~small]
    out[~small] = (ub - 1.0 + np.exp(-ub)) / (ub * ub)
    return out


def _exp_moments(c: np.ndarray, t: float, a: float, b: float):
    """int_a^b e^{-c(t-eta)} d eta and int_a^b e^{-c(t-eta)} (eta - a) d eta, b <= t."""
    w = b - a
    u = c * w
    E = np.exp(-c * (t - b))
    return E * w * _e1(u), E * w * w * _e2(u)


def hat_integrals(c: np.ndarray, t: float, nodes: np.ndarray, q: int) -> np.ndarray:
    """int_0^t e^{-c(t-eta)} phi_q(eta) d eta for the hat phi_q on ``nodes``."""
    out = np.zeros_like(c)
    if q > 0 and nodes[q - 1] < t:
        a, b = nodes[q - 1], min(nodes[q], t)
        _, I1 = _exp_moments(c, t, a, b)
        out += I1 / (nodes[q] - nodes[q - 1])
    if q + 1 < nodes.size and nodes[q] < t:
        a, b = nodes[q], min(nodes[q + 1], t)
        I0, I1 = _exp_moments(c, t, a, b)
        out += I0 - I1 / (nodes[q + 1] - nodes[q])
    return out


# ---------------------------------------------------------------------------
# time nodes and the quasimetric


def quasimetric(Y, Ybar, sigma: float) -> float:
    """|Y - Ybar|_sigma = (|x|^2 + |t|^(2/sigma))^(1/2) for Y = (x, t)."""
    Y = np.asarray(Y, dtype=float)
    Yb = np.asarray(Ybar, dtype=float)
    d = Y - Yb
    x = d[..., :-1]
    t = d[..., -1]
    return np.sqrt(np.sum(x * x, axis=-1) + np.abs(t) ** (2.0 / sigma))


def quasi_triangle_constant(sigma: float, n: int = 2000, rng: Optional[np.random.Generator] = None,
                            dim: int = 1) -> float:
    """max of |Y - Yb| / (|Y - W| + |W - Yb|) over random triples."""
    rng = np.random.default_rng(0) if rng is None else rng
    P = rng.normal(size=(3, n, dim + 1)) * np.exp(rng.normal(size=(3, n, 1)))
    a = quasimetric(P[0], P[2], sigma)
    b = quasimetric(P[0], P[1], sigma) + quasimetric(P[1], P[2], sigma)
    ok = b > 0
    return float(np.max(a[ok] / b[ok]))


def time_nodes(T: float, n: int, grading: float = 2.0) -> np.ndarray:
    """Nodes T (q/n)^grading, q = 0..n; grading 1 is uniform."""
    if n < 2 or not T > 0 or grading < 1:
        raise DomainError("need n >= 2, T > 0 and grading >= 1")
    return T * (np.arange(n + 1) / n) ** grading


def matched_grading(sigma: float, alpha: float) -> float:
    """Grading for a time singularity of order s^(-1 + alpha/sigma): 2 sigma / alpha in [1, 4]."""
    return float(min(4.0, max(1.0, 2.0 * sigma / alpha)))


# ---------------------------------------------------------------------------
# frozen kernel


def parametrix_Z(a: CoefficientField, sigma: float, x, t: float, xi, tau: float):
    """Z(x, t; xi, tau) = P_per(x - xi, a(xi, tau)(t - tau)) on the periodic grid.

    P_per is the kernel of exp(-s A): the trigonometric sum over the grid's
    modes (Nyquist mode halved), evaluable at any x.

    Raises
    ------
    DomainError
        If t <= tau.
    """
    if not t > tau:
        raise DomainError("Z needs t > tau")
    abar = float(a(np.asarray([xi], dtype=float), tau)[0])
    return periodic_poisson(a.grid, sigma, np.asarray(x, dtype=float) - xi, abar * (t - tau))


def periodic_poisson(grid: Grid, sigma: float, y, s: float):
    """(1/L) sum_k w_k exp(-s |k|^sigma) cos(k y) over the grid's modes."""
    M = grid.n_axis
    kk = np.arange(0, M // 2 + 1) * (2 * math.pi / grid.period)
    w = np.full(kk.size, 2.0)
    w[0] = 1.0
    if M % 2 == 0:
        w[-1] = 1.0
    y = np.asarray(y, dtype=float)
    spectrum = w * np.exp(-s * kk ** sigma)
    out = np.cos(np.multiply.outer(y, kk)) @ spectrum / grid.period
    return float(out) if out.ndim == 0 else out


# ---------------------------------------------------------------------------
# Levi series


@dataclass
class LeviSeries:
    """psi_0..psi_K at the time nodes; arrays indexed [n, i, j] = (t_n, x_i; xi_j, tau0)."""

    a: CoefficientField
    sigma: float
    nodes: np.ndarray  # absolute times, nodes[0] = tau0
    terms: list
    norms: list
    K: int
    tol: float
    converged: bool
    grading: float
    Phi: np.ndarray = dc_field(repr=False, default=None)

    @property
    def tau0(self) -> float:
        return float(self.nodes[0])

    def norm_csv(self) -> str:
        buf = io.StringIO()
        buf.write("k,psi_norm\n")
        for k, v in enumerate(self.norms):
            buf.write(f"{k},{float(v)!r}\n")
        return buf.getvalue()

    def decay_ratios(self) -> np.ndarray:
        n = np.asarray(self.norms)
        return n[:-1] / np.maximum(n[1:], 1e-300)


class _Weights:
    """Product-integration weights for one coefficient, sigma and node set."""

    def __init__(self, a: CoefficientField, sigma: float, nodes: np.ndarray):
        self.a = a
        self.sigma = sigma
        self.nodes = nodes
        self.lam = _modes(a.grid, sigma)
        self.h = a.grid.h
        self.x = a.grid.axis
        self._a_nodes = {}

    def a_at(self, t: float) -> np.ndarray:
        key = 0.0 if self.a.static else float(t)
        if key not in self._a_nodes:
            self._a_nodes[key] = self.a.at_nodes(key)
        return self._a_nodes[key]

    def Z(self, t: float) -> np.ndarray:
        tau0 = self.nodes[0]
        aj = self.a_at(tau0)
        return _circulant(np.exp(-np.outer(aj, self.lam) * (t - tau0))) / self.h

    def psi0(self, t: float) -> np.ndarray:
        tau0 = self.nodes[0]
        aj = self.a_at(tau0)
        ai = self.a_at(t)
        C = _circulant(self.lam[None, :] * np.exp(-np.outer(aj, self.lam) * (t - tau0))) / self.h
        return (aj[None, :] - ai[:, None]) * C

    def omega(self, t: float):
        """hat integrals for every node q with nodes[q - 1] < t; shape (nq, l, k)."""
        qs = [q for q in range(self.nodes.size) if q == 0 or self.nodes[q - 1] < t]
        qs = [q for q in qs if not (q == 0 and self.nodes[0] >= t)]
        om = np.stack([hat_integrals(np.outer(self.a_at(self.nodes[q]), self.lam), t, self.nodes, q)
                       for q in qs]) if qs else np.zeros((0, self.x.size, self.x.size))
        return qs, om

    def W(self, t: float):
        qs, om = self.omega(t)
        ai = self.a_at(t)
        al = np.stack([self.a_at(self.nodes[q]) for q in qs]) if qs else np.zeros((0, self.x.size))
        C = _circulant(self.lam[None, None, :] * om)
        return qs, (al[:, None, :] - ai[None, :, None]) * C

    def V(self, t: float):
        qs, om = self.omega(t)
        return qs, _circulant(om)


def levi_series(a: CoefficientField, sigma: float, T: float = 1.0, n_time: int = 48,
                tol: float = 1e-6, K_max: int = 20, grading: Optional[float] = None,
                tau0: float = 0.0) -> LeviSeries:
    """Tabulate psi_k on graded time nodes tau0 + T (q/n)^r and sum Phi.

    ``grading`` defaults to :func:`matched_grading` with the coefficient's
    empirical Hoelder exponent. All K_max terms are built in one sweep over
    the nodes; K is the first index whose sup norm is at most ``tol``.

    Raises
    ------
    LeviDivergence
        If the norms are not decreasing at K_max.
    """
    if grading is None:
        grading = matched_grading(sigma, a.holder_exponent())
    nodes = tau0 + time_nodes(T, n_time, grading)
    Wt = _Weights(a, sigma, nodes)
    M = a.grid.n_axis
    N = nodes.size
    if a.is_constant:
        z = [np.zeros((N, M, M))]
        return LeviSeries(a, sigma, nodes, z, [0.0], 0, tol, True, grading, np.zeros((N, M, M)))
    terms = [np.zeros((N, M, M)) for _ in range(K_max + 1)]
    for n in range(N):
        terms[0][n] = Wt.psi0(nodes[n])
        if n == 0:
            continue
        qs, W = Wt.W(nodes[n])
        for k in range(K_max):
            stack = terms[k][qs]
            terms[k + 1][n] = np.einsum("qil,qlj->ij", W, stack, optimize=True)
    norms = [float(np.max(np.abs(p))) for p in terms]
    K = next((k for k, v in enumerate(norms) if v <= tol), None)
    converged = K is not None
    if K is None:
        if norms[-1] >= norms[-2]:
            raise LeviDivergence(f"Levi norms not decaying by K_max={K_max}", norms)
        K = K_max
    terms = terms[:K + 1]
    Phi = np.sum(terms, axis=0)
    return LeviSeries(a, sigma, nodes, terms, norms[:K + 1], K, tol, converged, grading, Phi)


def first_correction(a: CoefficientField, sigma: float, nodes: np.ndarray, t: float) -> np.ndarray:
    """psi_1(t) = int psi_0(t - eta) psi_0(eta) d eta, psi_0 interpolated on ``nodes``."""
    Wt = _Weights(a, sigma, nodes)
    qs, W = Wt.W(t)
    p0 = np.stack([Wt.psi0(nodes[q]) for q in qs])
    return np.einsum("qil,qlj->ij", W, p0, optimize=True)


def phi_volterra(a: CoefficientField, sigma: float, nodes: np.ndarray) -> np.ndarray:
    """Phi from the Volterra equation Phi = psi_0 + int psi_0 Phi, marched node by node."""
    Wt = _Weights(a, sigma, nodes)
    M = a.grid.n_axis
    Phi = np.zeros((nodes.size, M, M))
    for n in range(nodes.size):
        p0 = Wt.psi0(nodes[n])
        if n == 0:
            Phi[0] = p0
            continue
        qs, W = Wt.W(nodes[n])
        rhs = p0 + np.einsum("qil,qlj->ij", W[:-1], Phi[qs[:-1]], optimize=True)
        Phi[n] = np.linalg.solve(np.eye(M) - W[-1], rhs)
    return Phi


# ---------------------------------------------------------------------------
# fundamental solution


@dataclass
class FundamentalSolution:
    """Gamma(x_i, t; xi_j, tau) = Z + int Z Phi, built from a Levi series.

    For a static coefficient one series (source time 0) serves every tau
    through Gamma(t, tau) = Gamma(t - tau, 0).
    """

    a: CoefficientField
    series: LeviSeries
    min_gap: float = MIN_GAP
    _weights: Optional[_Weights] = dc_field(default=None, repr=False)

    def __post_init__(self):
        self._weights = _Weights(self.a, self.series.sigma, self.series.nodes)

    @property
    def sigma(self) -> float:
        return self.series.sigma

    @property
    def grid(self) -> Grid:
        return self.a.grid

    @property
    def horizon(self) -> float:
        return float(self.series.nodes[-1] - self.series.nodes[0])

    def _lag(self, t: float, tau: float) -> float:
        if not self.a.static and abs(tau - self.series.tau0) > 1e-14:
            raise DomainError("series was built for another source time")
        s = t - tau
        if s < self.min_gap:
            raise DomainError(f"t - tau = {s:.3g} below the resolved gap {self.min_gap}")
        if s > self.horizon * (1 + 1e-12):
            raise DomainError("t - tau beyond the tabulated horizon")
        return s

    def matrix(self, t: float, tau: float = 0.0, columns=None) -> np.ndarray:
        """[Gamma(x_i, t; xi_j, tau)]_{ij}, optionally for a subset of columns j."""
        s = self._lag(t, tau)
        t_abs = self.series.tau0 + s
        Wt = self._weights
        Z = Wt.Z(t_abs)
        qs, V = Wt.V(t_abs)
        Phi = self.series.Phi[qs]
        if columns is not None:
            Z = Z[:, columns]
            Phi = Phi[..., columns]
        if not qs:
            return Z
        return Z + np.einsum("qil,ql...->i...", V, Phi, optimize=True)

    def __call__(self, x, t: float, xi, tau: float = 0.0) -> float:
        i = self._node(x)
        j = self._node(xi)
        return float(self.matrix(t, tau, columns=[j])[i, 0])

    def _node(self, x) -> int:
        g = self.grid
        i = int(round((float(x) + g.R_dom) / g.h)) % g.n_axis
        if abs(((float(x) + g.R_dom) % g.period) - i * g.h) > 1e-9 * g.h and i != 0:
            raise DomainError("Gamma is tabulated at grid nodes")
        return i

    def mass_x(self, t: float, tau: float = 0.0) -> np.ndarray:
        """int Gamma dx for every source node xi_j."""
        return self.matrix(t, tau).sum(axis=0) * self.grid.h

    def mass_xi(self, t: float, tau: float = 0.0) -> np.ndarray:
        """int Gamma dxi for every target node x_i (Gamma reproduces constants)."""
        return self.matrix(t, tau).sum(axis=1) * self.grid.h

    def residual(self, points, tau: float = 0.0, step: Optional[float] = None) -> np.ndarray:
        """|d_t Gamma + a (-Delta)^(sigma/2) Gamma| / sup_x |a (-Delta)^(sigma/2) Gamma| per point.

        ``points`` holds (i, t, j) triples. The time derivative is a centred
        difference with step ``min_gap / 8``; the space operator is the exact
        Fourier multiplier on the grid.
        """
        step = self.min_gap / 8.0 if step is None else step
        lam = _modes(self.grid, self.sigma)
        out = []
        for i, t, j in points:
            cols = [int(j)]
            gp = self.matrix(t + step, tau, cols)[:, 0]
            gm = self.matrix(t - step, tau, cols)[:, 0]
            g0 = self.matrix(t, tau, cols)[:, 0]
            dt = (gp - gm) / (2 * step)
            Ag = np.real(np.fft.ifft(lam * np.fft.fft(g0)))
            aAg = self.a.at_nodes(t) * Ag
            scale = float(np.max(np.abs(aAg)))
            out.append(abs(dt[int(i)] + aAg[int(i)]) / scale)
        return np.array(out)


def fundamental_solution(a: CoefficientField, series: LeviSeries, min_gap: float = MIN_GAP) -> FundamentalSolution:
    if series.a is not a:
        raise DomainError("series was built for another coefficient")
    return FundamentalSolution(a, series, min_gap)


def exact_discrete_gamma(a: CoefficientField, sigma: float, s: float) -> np.ndarray:
    """expm(-s diag(a) A) / h for a static coefficient (the oracle)."""
    from scipy.linalg import expm

    if not a.static:
        raise DomainError("oracle needs a static coefficient")
    g = a.grid
    lam = _modes(g, sigma)
    A = _circulant(np.broadcast_to(lam, (g.n_axis, g.n_axis)).copy())
    return expm(-s * a.at_nodes()[:, None] * A) / g.h


# ---------------------------------------------------------------------------
# nondivergence problem


@dataclass
class NondivSolution:
    times: np.ndarray
    values: np.ndarray  # [n, i]
    grid: Grid
    bound: float  # |f0|_inf + T |F|_inf
    weighted_norm: float  # sum |f0| / (1 + |x|^(1 + sigma)) h
    energy_sup: float  # sup_t |(-Delta)^(sigma/4) f|_2^2
    energy_integral: float  # int int a |(-Delta)^(sigma/2) f|^2

    def field(self, n: int) -> Field:
        return Field(self.grid, self.values[n], float(self.times[n]))

    def max_principle_gap(self) -> float:
        return float(np.max(np.abs(self.values)) - self.bound)


def solve_nondiv(fs: FundamentalSolution, f0: Field, F: Optional[Callable] = None, T: Optional[float] = None,
                 times=None, n_tau: int = 8) -> NondivSolution:
    """f(t) = int Gamma(., t; xi, 0) f0 dxi + int_0^t int Gamma(., t; xi, tau) F(xi, tau) dxi dtau.

    ``F(x, t)`` takes node arrays. The frozen part of the forcing integral
    is integrated exactly against F piecewise linear on ``n_tau`` panels per
    step; the smooth correction int Z Phi uses Gauss-Legendre in tau.
    Defaults: ``times`` are series nodes in [min_gap, T].

    Raises
    ------
    DomainError
        For a time below the resolved gap, non-static coefficients with
        forcing, or f0 outside the weighted class.
    """
    g = fs.grid
    f0.check_grid(g)
    sig = fs.sigma
    x = g.axis
    wnorm = float(np.sum(np.abs(f0.values) / (1 + np.abs(x) ** (1 + sig))) * g.h)
    if not np.isfinite(wnorm):
        raise DomainError("initial data outside the weighted class")
    T = fs.horizon if T is None else T
    if times is None:
        nodes = fs.series.nodes - fs.series.tau0
        times = nodes[(nodes >= fs.min_gap) & (nodes <= T * (1 + 1e-12))]
    times = np.asarray(times, dtype=float)
    if F is not None and not fs.a.static:
        raise DomainError("forcing with a time-dependent coefficient is not supported")
    lam = _modes(g, sig)
    vals = []
    for t in times:
        G = fs.matrix(t)
        f = G @ f0.values * g.h
        if F is not None:
            f = f + _forcing_term(fs, F, t, n_tau)
        vals.append(f)
    vals = np.array(vals)
    Fmax = 0.0
    if F is not None:
        tt = np.linspace(0.0, float(times[-1]) if times.size else 0.0, 33)
        Fmax = max(float(np.max(np.abs(F(x, s)))) for s in tt)
    bound = float(np.max(np.abs(f0.values))) + (float(times[-1]) if times.size else 0.0) * Fmax
    spectrum = np.fft.fft(vals, axis=1)
    e_half = np.sum(lam * np.abs(spectrum) ** 2, axis=1) * g.h / g.n_axis
    Af = np.real(np.fft.ifft(lam * spectrum, axis=1))
    dens = np.sum(fs.a.at_nodes()[None, :] * Af ** 2, axis=1) * g.h
    e_int = float(np.trapezoid(dens, times)) if times.size > 1 else 0.0
    return NondivSolution(times, vals, g, bound, wnorm, float(np.max(e_half)) if times.size else 0.0, e_int)


def _forcing_term(fs: FundamentalSolution, F: Callable, t: float, n_tau: int) -> np.ndarray:
    g = fs.grid
    lam = _modes(g, fs.sigma)
    aj = fs.a.at_nodes()
    x = g.axis
    # frozen part: int_0^t Z(t - tau) F(tau) dtau with F linear on a uniform tau mesh
    mesh = np.linspace(0.0, t, n_tau + 1)
    c = np.outer(aj, lam)
    acc = np.zeros(g.n_axis)
    for q in range(mesh.size):
        om = hat_integrals(c, t, mesh, q)
        C = _circulant(om)  # h Z integrated against the hat, columns xi_l
        acc += C @ F(x, mesh[q])
    # correction: int_0^{t - gap} (Gamma - Z)(t - tau) F(tau) dtau, smooth in tau
    top = t - fs.min_gap
    if top > 0 and not fs.a.is_constant:
        xg, wg = np.polynomial.legendre.leggauss(12)
        tau = 0.5 * top * (xg + 1.0)
        for tq, wq in zip(tau, 0.5 * top * wg):
            s = t - tq
            R = fs.matrix(s) - fs._weights.Z(fs.series.tau0 + s)
            acc += wq * (R @ F(x, tq)) * g.h
    return acc
