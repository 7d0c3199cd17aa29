"""Self-similar (Barenblatt) profiles, solution rescaling and the asymptotic metric.

A Barenblatt solution of mass M has the form ``B_M(x, t) = t^-alpha Z(x t^-beta)``
with ``alpha = N/(N(m-1)+sigma)`` and ``beta = 1/(N(m-1)+sigma)``. For m = 1
it is M times the stable density. For m > 1 the profile is obtained as the
fixed point of the rescaling ``Z_H(y) = H^alpha u(H^beta y, H)`` applied to
the evolution of near-delta data, doubling the horizon H until successive
profiles agree.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field as dc_field
from fractions import Fraction
from pathlib import Path
from typing import Optional

import numpy as np
from scipy.interpolate import RegularGridInterpolator

from .discretize import DiscreteOperator, assemble, frequencies
from .evolve import SolverError, elliptic_solve, near_delta
from .grid import Field, Grid, load_field
from .model import DomainError, KernelSpec, Nonlinearity, power
from .stable import stable_profile

PROVENANCES = ("stable-density", "rescaled-evolution")


def _exact(x) -> Fraction:
    if isinstance(x, Fraction):
        return x
    if isinstance(x, int):
        return Fraction(x)
    return Fraction(repr(float(x)))


@dataclass(frozen=True)
class SelfSimilarExponents:
    """alpha = N beta, beta = 1/(N(m-1)+sigma), held as exact fractions."""

    N: int
    m: Fraction
    sigma: Fraction
    alpha: Fraction
    beta: Fraction

    @property
    def a(self) -> float:
        return float(self.alpha)

    @property
    def b(self) -> float:
        return float(self.beta)

    def as_dict(self) -> dict:
        return {"N": self.N, "m": str(self.m), "sigma": str(self.sigma),
                "alpha": str(self.alpha), "beta": str(self.beta)}


def exponents(N: int, m, sigma) -> SelfSimilarExponents:
    """Barenblatt exponents as exact rationals of the inputs.

    Raises
    ------
    DomainError
        Outside N >= 1, m >= 1, 0 < sigma < 2.
    """
    mq, sq = _exact(m), _exact(sigma)
    if int(N) != N or N < 1:
        raise DomainError(f"N must be a positive integer, got {N}")
    if mq < 1 or not 0 < sq < 2:
        raise DomainError(f"need m >= 1 and 0 < sigma < 2, got m={m}, sigma={sigma}")
    beta = 1 / (int(N) * (mq - 1) + sq)
    return SelfSimilarExponents(int(N), mq, sq, int(N) * beta, beta)


# ---------------------------------------------------------------------------
# stable density


def stable_density(N: int, sigma: float, t: float, grid: Grid, method: str = "auto") -> Field:
    """Density of exp(-t |xi|^sigma) on ``grid``.

    ``method``:

    - ``"fft"``: discrete inverse Fourier transform on a periodic grid; the
      zero mode makes the discrete mass exactly one. On an extended grid the
      transform runs on a zero-padded periodic grid four times wider.
    - ``"quadrature"``: the tabulated Fourier integral (N = 1 only),
      periodized on periodic grids.
    - ``"auto"``: fft on periodic grids and in 2D, quadrature otherwise.

    Raises
    ------
    DomainError
        For t <= 0, or a mismatch between ``N`` and the grid.
    """
    if not t > 0:
        raise DomainError("stable density needs t > 0")
    if N != grid.dim:
        raise DomainError(f"N = {N} but the grid has dimension {grid.dim}")
    if method == "auto":
        method = "fft" if grid.mode == "periodic" or grid.dim == 2 else "quadrature"
    if method == "fft":
        vals = _fft_density(sigma, t, grid)
    elif method == "quadrature":
        if grid.dim != 1:
            raise DomainError("quadrature density is one-dimensional")
        P = stable_profile(float(sigma))
        x = grid.axis
        vals = P.periodized(x, t, grid.period) if grid.mode == "periodic" else P.at_time(x, t)
    else:
        raise ValueError(f"unknown method {method!r}")
    return Field(grid, np.maximum(vals, 0.0), t)


def _fft_density(sigma: float, t: float, grid: Grid) -> np.ndarray:
    g = grid
    if g.mode == "extended":
        # periodic grid four times wider; the central block is returned
        big = Grid(g.dim, g.h, 4 * g.R_dom, "periodic", g.memory_budget * 16)
        v = _fft_density(sigma, t, big).reshape(big.shape)
        lo = big.half_nodes - g.half_nodes
        sl = slice(lo, lo + g.n_axis)
        return (v[sl] if g.dim == 1 else v[sl, sl]).ravel()
    symbol = np.exp(-t * frequencies(g) ** sigma)
    spectrum = np.real(np.fft.ifftn(symbol)) / g.cell
    # index 0 of the transform is offset 0; move it to the node x = 0
    spectrum = np.roll(spectrum, g.half_nodes, axis=tuple(range(g.dim)))
    return spectrum.ravel()


# ---------------------------------------------------------------------------
# interpolation and rescaling


def _interpolator(Z: Field):
    g = Z.grid
    vals = Z.as_array()
    ax = g.axis
    if g.mode == "periodic":
        # close the period so the last cell interpolates back to the first node
        ax = np.append(ax, g.R_dom)
        vals = np.concatenate([vals, vals[:1]], axis=0)
        if g.dim == 2:
            vals = np.concatenate([vals, vals[:, :1]], axis=1)
    if g.dim == 1:
        return lambda p: np.interp(p[:, 0], ax, vals, left=0.0, right=0.0)
    rgi = RegularGridInterpolator((ax, ax), vals, bounds_error=False, fill_value=0.0)
    return rgi


def _sample(u: Field, pts: np.ndarray) -> np.ndarray:
    g = u.grid
    if g.mode == "periodic":
        pts = (pts + g.R_dom) % g.period - g.R_dom
    return np.asarray(_interpolator(u)(pts), dtype=float)


def rescale(u: Field, k: float, exps: SelfSimilarExponents, tol: float = 1e-6) -> Field:
    """u_k(x) = k^alpha u(k^beta x), carrying time ``u.time / k``.

    Piecewise-linear interpolation in space. Points that fall outside the
    source grid read as zero; that is an error unless the source is below
    ``tol * max|u|`` on its outermost nodes.

    Raises
    ------
    DomainError
        k <= 0, or resampling beyond a source that is not negligible there.
    """
    if not k > 0:
        raise DomainError("rescaling factor must be positive")
    if k == 1:
        return u
    g = u.grid
    pts = g.coords * k ** exps.b
    if g.mode == "extended" and np.max(np.abs(pts)) > g.R_dom * (1 + 1e-12):
        edge = np.max(np.abs(g.coords), axis=1) >= g.R_dom - 0.5 * g.h
        scale = max(u.linf(), 1e-300)
        if np.max(np.abs(u.values[edge])) > tol * scale:
            raise DomainError("rescaled points leave the support of the source field")
    vals = k ** exps.a * _sample(u, pts)
    return Field(g, vals, u.time / k)


# ---------------------------------------------------------------------------
# Barenblatt profiles


@dataclass
class BarenblattProfile:
    """Sampled profile Z with B_M(x, t) = t^-alpha Z(x t^-beta)."""

    M: float
    exps: SelfSimilarExponents
    Z: Field
    provenance: str
    history: list = dc_field(default_factory=list)
    horizon: Optional[float] = None

    def __post_init__(self):
        if self.provenance not in PROVENANCES:
            raise ValueError(f"provenance must be one of {PROVENANCES}")

    @property
    def grid(self) -> Grid:
        return self.Z.grid

    def at(self, x, t: float) -> np.ndarray:
        """B_M at points ``x`` (shape (n, N) or (n,) in 1D) and time t > 0."""
        if not t > 0:
            raise DomainError("Barenblatt solution is evaluated at t > 0")
        pts = np.asarray(x, dtype=float)
        if pts.ndim == 1:
            pts = pts[:, None]
        if self.Z.grid.mode == "periodic":
            inner = np.all(np.abs(pts * t ** -self.exps.b) <= self.Z.grid.R_dom, axis=1)
            out = np.zeros(pts.shape[0])
            out[inner] = _sample(self.Z, pts[inner] * t ** -self.exps.b)
            return t ** -self.exps.a * out
        return t ** -self.exps.a * _sample(self.Z, pts * t ** -self.exps.b)

    def field(self, grid: Grid, t: float) -> Field:
        return Field(grid, self.at(grid.coords, t), t)

    def mass(self) -> float:
        """Discrete mass of Z plus, on extended 1D grids, the |y|^(-1-sigma) tail."""
        m = self.Z.integral()
        g = self.Z.grid
        if g.mode == "extended" and g.dim == 1:
            s = float(self.exps.sigma)
            Zr = 0.5 * (self.Z.values[0] + self.Z.values[-1])
            m += 2.0 * Zr * g.R_dom / s
        return m

    def check_invariants(self, mass_rtol: float = 1e-3, mono_tol: float = 1e-6) -> dict:
        """Mass, sign and radial monotonicity of Z."""
        v = self.Z.values
        sgn = math.copysign(1.0, self.M) if self.M != 0 else 0.0
        scale = max(float(np.max(np.abs(v))), 1e-300)
        r = self.Z.grid.radius
        order = np.lexsort((-sgn * v, r))
        a = sgn * v[order]
        rr = r[order]
        # values must not increase with radius (ties in r ignored)
        jumps = np.diff(a)[np.diff(rr) > 1e-12 * self.Z.grid.h]
        return {
            "mass": abs(self.mass() - self.M) <= mass_rtol * abs(self.M),
            "sign": bool(np.all(sgn * v >= -mono_tol * scale)),
            "monotone": bool(jumps.size == 0 or np.max(jumps) <= mono_tol * scale),
        }

    def sidecar(self) -> dict:
        return {"M": self.M, "m": str(self.exps.m), "sigma": str(self.exps.sigma),
                "alpha": str(self.exps.alpha), "beta": str(self.exps.beta), "N": self.exps.N,
                "provenance": self.provenance, "horizon": self.horizon,
                "convergence_history": [float(x) for x in self.history]}

    def save(self, stem) -> tuple:
        """Write ``stem.bin`` (field dump of Z) and ``stem.json`` (sidecar)."""
        stem = Path(stem)
        b, j = stem.with_suffix(".bin"), stem.with_suffix(".json")
        self.Z.save(b)
        j.write_text(json.dumps(self.sidecar(), indent=2, sort_keys=True) + "\n")
        return b, j


def load_profile(stem) -> BarenblattProfile:
    stem = Path(stem)
    meta = json.loads(stem.with_suffix(".json").read_text())
    exps = exponents(meta["N"], Fraction(meta["m"]), Fraction(meta["sigma"]))
    return BarenblattProfile(meta["M"], exps, load_field(stem.with_suffix(".bin")), meta["provenance"],
                             list(meta["convergence_history"]), meta["horizon"])


def geometric_times(t_end: float, per_octave: int = 32, t_min: float = 2.0 ** -6) -> np.ndarray:
    """Step times: uniform up to ``t_min`` then ``per_octave`` steps per doubling."""
    t_min = min(t_min, t_end)
    head = np.linspace(0.0, t_min, per_octave + 1)[1:]
    if t_end <= t_min:
        return head
    n = int(math.ceil(per_octave * math.log2(t_end / t_min) - 1e-9))
    tail = t_min * (t_end / t_min) ** (np.arange(1, n + 1) / n)
    return np.concatenate([head, tail])


def march(u0: Field, L: DiscreteOperator, n: Nonlinearity, times, stops=(), tol: float = 1e-11) -> dict:
    """Implicit Euler through the increasing sequence ``times``.

    Returns the fields at the members of ``stops`` (matched to step times
    within 1e-9 relative), keyed by the requested stop.
    """
    times = np.asarray(times, dtype=float)
    want = sorted(float(s) for s in stops)
    out = {}
    if 0.0 in want:
        out[0.0] = u0
    u = Field(u0.grid, u0.values, 0.0)
    t_prev = 0.0
    for t in times:
        u, _, _ = elliptic_solve(L, n, u, float(t - t_prev), tol=tol, return_info=True)
        u = Field(u.grid, u.values, float(t))
        t_prev = float(t)
        for s in want:
            if s not in out and abs(t - s) <= 1e-9 * max(1.0, s):
                out[s] = u
    missing = [s for s in want if s not in out]
    if missing:
        raise ValueError(f"stop times {missing} are not step times")
    return out


def _dyadic_schedule(stops, per_octave: int, t_min: float) -> np.ndarray:
    """geometric_times up to max(stops), with every stop forced onto the schedule."""
    t = geometric_times(max(stops), per_octave, t_min)
    return np.unique(np.concatenate([t, np.asarray(stops, dtype=float)]))


def _profile_at(u: Field, H: float, exps: SelfSimilarExponents) -> Field:
    g = u.grid
    vals = H ** exps.a * _sample(u, g.coords * H ** exps.b)
    return Field(g, vals, 1.0)


def barenblatt(M: float, m: float, sigma: float, grid: Grid, horizon: float = 8.0,
               max_doublings: int = 6, gap_tol: float = 1e-3, per_octave: int = 32,
               operator: Optional[DiscreteOperator] = None) -> BarenblattProfile:
    """Barenblatt profile of mass ``M`` sampled on ``grid``.

    m = 1 uses the tabulated stable density (periodized on periodic grids).
    m > 1 evolves near-delta data (a box of width 4h) with phi(u) = |u|^(m-1) u
    and the fractional kernel normalized by mu_{N,sigma}, rescales u(., H) to
    t = 1 variables, and doubles H until two successive profiles differ by
    less than ``gap_tol`` on the nodes both of them resolve.

    Raises
    ------
    SolverError
        When the profiles have not settled after ``max_doublings``.
    """
    exps = exponents(grid.dim, m, sigma)
    if exps.m == 1:
        if grid.dim == 1:
            Z = stable_density(1, sigma, 1.0, grid, method="quadrature")
        else:
            Z = stable_density(grid.dim, sigma, 1.0, grid, method="fft")
        return BarenblattProfile(M, exps, Z.with_values(M * Z.values, 1.0), "stable-density")
    if M == 0:
        return BarenblattProfile(0.0, exps, grid.zeros(1.0), "rescaled-evolution")
    if M < 0:
        # the equation is odd in u
        pos = barenblatt(-M, m, sigma, grid, horizon, max_doublings, gap_tol, per_octave, operator)
        return BarenblattProfile(M, exps, pos.Z.with_values(-pos.Z.values), pos.provenance, pos.history,
                                 pos.horizon)
    if grid.mode != "extended":
        raise DomainError("the rescaling construction runs on an extended grid")
    L = operator if operator is not None else assemble(KernelSpec(float(sigma), dim=grid.dim), grid)
    n = power(float(m))
    u0 = near_delta(grid, M)
    stops = [horizon * 2.0 ** j for j in range(max_doublings + 1)]
    sched = _dyadic_schedule(stops, per_octave, min(2.0 ** -6, horizon))
    history = []
    prev = None
    u = Field(grid, u0.values, 0.0)
    t_prev = 0.0
    si = 0
    for t in sched:
        u, _, _ = elliptic_solve(L, n, u, float(t - t_prev), tol=1e-11, return_info=True)
        u = Field(grid, u.values, float(t))
        t_prev = float(t)
        if si < len(stops) and abs(t - stops[si]) <= 1e-9 * stops[si]:
            H = stops[si]
            si += 1
            Z = _profile_at(u, H, exps)
            if prev is not None:
                valid = grid.radius <= grid.R_dom / H ** exps.b
                gap = float(np.max(np.abs(Z.values - prev.values)[valid]))
                history.append(gap)
                if gap < gap_tol:
                    return BarenblattProfile(M, exps, Z, "rescaled-evolution", history, H)
            prev = Z
    raise SolverError(f"rescaled profiles did not settle: gaps {history}", history[-1] if history else math.nan,
                      len(history))


def convergence_metric(u: Field, B: BarenblattProfile) -> float:
    """t^alpha max over nodes |u - B_M(., t)| at t = u.time."""
    t = u.time
    if not t > 0:
        raise DomainError("metric defined for t > 0")
    return float(t ** B.exps.a * np.max(np.abs(u.values - B.at(u.grid.coords, t))))


def metric_series(snapshots: dict, B: BarenblattProfile) -> list:
    """[(t, metric)] for a {t: Field} mapping, sorted by t."""
    return [(t, convergence_metric(snapshots[t], B)) for t in sorted(snapshots) if t > 0]
