"""Backward Euler evolution of u_t + L phi(u) = 0 and its diagnostics.

Each step solves ``u + tau L phi(u) = u_prev``. With the monotone weights of
:mod:`nlfilt.discretize`, this implicit map is order preserving and an L1
contraction. The maximum principle, comparison and T-contraction then hold
step by step up to the solver tolerance.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Optional, Sequence

import numpy as np
from scipy.linalg import lu_factor, lu_solve
from scipy.sparse.linalg import LinearOperator, gmres

from . import _kernels
from .discretize import DiscreteOperator, quadratic
from .grid import Field, Grid, GridMismatch
from .model import DomainError, Nonlinearity

DIAG_HEADER = ("t", "mass", "linf", "l1", "energy", "pos_mass", "neg_mass", "iters")
PHI_PRIME_FLOOR = 1e-12


class SolverError(RuntimeError):
    """Nonlinear solve failed; ``residual`` holds the last residual norm."""

    def __init__(self, message: str, residual: float = math.nan, iterations: int = 0):
        super().__init__(message)
        self.residual = residual
        self.iterations = iterations


class EvolveError(RuntimeError):
    """A step failed mid-run; ``trajectory`` holds everything computed before it."""

    def __init__(self, message: str, trajectory: "Trajectory", cause: Exception):
        super().__init__(message)
        self.trajectory = trajectory
        self.cause = cause


@dataclass(frozen=True)
class EvolveConfig:
    """Time stepping parameters.

    ``T = 0`` is allowed and yields a trajectory holding the initial row
    only. ``cadence`` stores every ``cadence``-th step (the final one is
    always stored).
    """

    tau: float
    T: float
    solver: str = "newton"
    tol: float = 1e-12
    max_iter: int = 60
    cadence: int = 1

    def __post_init__(self):
        if not self.tau > 0:
            raise ValueError("tau must be positive")
        if self.T < 0:
            raise ValueError("T must be nonnegative")
        if self.T > 0 and self.tau > self.T * (1 + 1e-12):
            raise ValueError("tau must not exceed T")
        if not self.tol > 0:
            raise ValueError("tolerance must be positive")
        if self.solver not in ("newton", "fixed-point"):
            raise ValueError(f"unknown solver {self.solver!r}")
        if self.cadence < 1 or self.max_iter < 1:
            raise ValueError("cadence and max_iter must be >= 1")

    @property
    def n_steps(self) -> int:
        return int(math.ceil(self.T / self.tau - 1e-9)) if self.T > 0 else 0


@dataclass(frozen=True)
class DiagnosticsRow:
    t: float
    mass: float
    linf: float
    l1: float
    energy: float
    pos_mass: float
    neg_mass: float
    iters: int

    def as_tuple(self):
        return (self.t, self.mass, self.linf, self.l1, self.energy, self.pos_mass, self.neg_mass, self.iters)


def diagnostics(u: Field, L: DiscreteOperator, n: Nonlinearity, iters: int = 0) -> DiagnosticsRow:
    v = u.values
    cell = u.grid.cell
    try:
        energy = quadratic(L, u.with_values(n.phi(v)))
    except DomainError:
        energy = math.nan
    return DiagnosticsRow(
        t=float(u.time),
        mass=float(np.sum(v) * cell),
        linf=float(np.max(np.abs(v))),
        l1=float(np.sum(np.abs(v)) * cell),
        energy=float(energy),
        pos_mass=float(np.sum(np.maximum(v, 0.0)) * cell),
        neg_mass=float(np.sum(np.maximum(-v, 0.0)) * cell),
        iters=int(iters),
    )


@dataclass
class Trajectory:
    """Stored snapshots with one diagnostics row each. Append-only."""

    fields: list
    rows: list
    config: EvolveConfig
    operator: DiscreteOperator
    nonlinearity: Nonlinearity
    exterior_loss: float = 0.0

    @property
    def grid(self) -> Grid:
        return self.operator.grid

    @property
    def times(self) -> np.ndarray:
        return np.array([r.t for r in self.rows])

    def column(self, name: str) -> np.ndarray:
        return np.array([getattr(r, name) for r in self.rows])

    def at(self, t: float, atol: float = 1e-9) -> Field:
        """Stored snapshot at time ``t`` (no interpolation)."""
        times = self.times
        i = int(np.argmin(np.abs(times - t)))
        if abs(times[i] - t) > atol * max(1.0, abs(t)):
            raise KeyError(f"no snapshot at t={t}; nearest is {times[i]}")
        return self.fields[i]

    def to_csv(self, path=None) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(DIAG_HEADER)
        for r in self.rows:
            w.writerow([repr(float(x)) if not isinstance(x, int) else str(x) for x in r.as_tuple()])
        text = buf.getvalue()
        if path is not None:
            Path(path).write_text(text)
        return text


# ---------------------------------------------------------------------------
# nonlinear elliptic solve


@dataclass
class _SolveCache:
    """LU of I + tau*coef*L for a linear phi, keyed on (operator, tau, coef)."""

    owner: object = None
    key: tuple = ()
    lu: tuple = ()


_LINEAR_CACHE = _SolveCache()


def _residual(L, n, u, g, tau):
    return u + tau * L.apply_values(n.phi(u)) - g


def _newton(L: DiscreteOperator, n: Nonlinearity, g: np.ndarray, tau: float, tol: float,
            max_iter: int, u0: Optional[np.ndarray] = None):
    scale = max(1.0, float(np.max(np.abs(g))) if g.size else 1.0)
    atol = tol * scale
    linear = n.is_power and n.m == 1.0
    if linear and L.dense:
        key = (float(tau), float(n.coef))
        if _LINEAR_CACHE.owner is not L or _LINEAR_CACHE.key != key:
            A = np.eye(g.size) + tau * n.coef * L.matrix()
            _LINEAR_CACHE.owner = L
            _LINEAR_CACHE.key = key
            _LINEAR_CACHE.lu = lu_factor(A, check_finite=False)
        u = lu_solve(_LINEAR_CACHE.lu, g, check_finite=False)
        # one refinement sweep keeps the residual at roundoff
        F = _residual(L, n, u, g, tau)
        u = u - lu_solve(_LINEAR_CACHE.lu, F, check_finite=False)
        F = _residual(L, n, u, g, tau)
        res = float(np.max(np.abs(F)))
        if not np.isfinite(res) or res > atol:
            raise SolverError(f"linear solve residual {res:.3e} above {atol:.3e}", res, 1)
        return u, 1, res
    u = g.copy() if u0 is None else np.array(u0, dtype=float)
    F = _residual(L, n, u, g, tau)
    res = float(np.max(np.abs(F)))
    it = 0
    eye = np.eye(g.size) if L.dense else None
    while res > atol:
        if it >= max_iter:
            raise SolverError(f"Newton did not converge in {max_iter} iterations (residual {res:.3e})",
                              res, it)
        d = np.maximum(n.phi_prime(u), PHI_PRIME_FLOOR)
        if L.dense:
            J = eye + tau * (L.matrix() * d[None, :])
            du = lu_solve(lu_factor(J, check_finite=False), -F, check_finite=False)
        else:
            op = LinearOperator((g.size, g.size), matvec=lambda x: x + tau * L.apply_values(d * x))
            du, info = gmres(op, -F, rtol=1e-13, atol=0.1 * atol, restart=80, maxiter=200)
            if info < 0:
                raise SolverError("GMRES breakdown", res, it)
        alpha = 1.0
        while True:
            trial = u + alpha * du
            Ft = _residual(L, n, trial, g, tau)
            rt = float(np.max(np.abs(Ft)))
            if np.isfinite(rt) and (rt <= (1.0 - 1e-4 * alpha) * res or rt <= atol):
                break
            alpha *= 0.5
            if alpha < 1e-6:
                raise SolverError(f"line search stalled at residual {res:.3e}", res, it)
        u, F, res = trial, Ft, rt
        it += 1
        if not np.all(np.isfinite(u)):
            raise SolverError("NaN in Newton iterate", res, it)
    return u, max(it, 1), res


def _scalar_solve(n: Nonlinearity, c: np.ndarray, r: np.ndarray) -> np.ndarray:
    """Nodewise root of u + c phi(u) = r, c >= 0."""
    if n.is_power:
        return _kernels.solve_power_scalar(np.ascontiguousarray(c, dtype=float),
                                           np.ascontiguousarray(r, dtype=float), float(n.coef), float(n.m))
    lo = np.minimum(r, 0.0) - 1e-300
    hi = np.maximum(r, 0.0) + 1e-300
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        up = mid + c * n.phi(mid) < r
        lo = np.where(up, mid, lo)
        hi = np.where(up, hi, mid)
    return 0.5 * (lo + hi)


def fixed_point_solve(L: DiscreteOperator, n: Nonlinearity, g: Field, tau: float, tol: float = 1e-12,
                      max_iter: int = 100000) -> tuple:
    """Nonlinear Jacobi iteration for u + tau L phi(u) = g.

    Each sweep solves, node by node, u_i + tau d_i phi(u_i) = g_i +
    tau sum_j W_ij phi(u_j). In the variable phi(u) the sweep is a sup-norm
    contraction, so it converges from any start; it is used as an
    independent oracle for the Newton solver.

    Returns
    -------
    (Field, iterations, residual)
    """
    if L.weights is None:
        raise DomainError("fixed-point oracle needs dense weights")
    W = L.weights
    d = L.diagonal()
    gv = g.values
    scale = max(1.0, float(np.max(np.abs(gv))))
    u = gv.copy()
    for it in range(1, max_iter + 1):
        rhs = gv + tau * (W @ n.phi(u))
        u_new = _scalar_solve(n, tau * d, rhs)
        step = float(np.max(np.abs(u_new - u)))
        u = u_new
        if step <= 0.1 * tol * scale:
            res = float(np.max(np.abs(_residual(L, n, u, gv, tau))))
            if res <= tol * scale:
                return Field(g.grid, u, g.time), it, res
    res = float(np.max(np.abs(_residual(L, n, u, gv, tau))))
    raise SolverError(f"fixed-point iteration did not converge (residual {res:.3e})", res, max_iter)


def elliptic_solve(L: DiscreteOperator, n: Nonlinearity, g: Field, tau: float, tol: float = 1e-12,
                   max_iter: int = 60, solver: str = "newton", return_info: bool = False):
    """Solve u + tau L phi(u) = g.

    Damped Newton with Jacobian I + tau L diag(max(phi'(u), 1e-12)); for a
    linear phi the factorization is cached across calls. ``solver =
    "fixed-point"`` uses :func:`fixed_point_solve` instead; if Newton fails
    it is tried as a fallback.

    Raises
    ------
    SolverError
        Non-convergence or non-finite iterates.
    """
    if L.grid is not g.grid and not L.grid.same_as(g.grid):
        raise GridMismatch("data and operator live on different grids")
    if not tau > 0:
        raise ValueError("tau must be positive")
    if solver == "fixed-point":
        u, it, res = fixed_point_solve(L, n, g, tau, tol)
        u = u.values
    else:
        try:
            u, it, res = _newton(L, n, g.values, tau, tol, max_iter)
        except SolverError:
            if not L.dense:
                raise
            f, it, res = fixed_point_solve(L, n, g, tau, tol)
            u = f.values
    out = Field(g.grid, u, g.time)
    return (out, it, res) if return_info else out


def step(u_prev: Field, L: DiscreteOperator, n: Nonlinearity, tau: float, tol: float = 1e-12,
         solver: str = "newton", return_info: bool = False):
    """One implicit Euler step; the result carries time ``u_prev.time + tau``."""
    u, it, res = elliptic_solve(L, n, u_prev, tau, tol=tol, solver=solver, return_info=True)
    out = Field(u.grid, u.values, u_prev.time + tau)
    return (out, it, res) if return_info else out


def evolve(u0: Field, L: DiscreteOperator, n: Nonlinearity, cfg: EvolveConfig,
           callback: Optional[Callable] = None) -> Trajectory:
    """Run ``cfg.n_steps`` implicit steps from ``u0``.

    Raises
    ------
    EvolveError
        Carrying the partial trajectory if a step fails.
    """
    if not L.grid.same_as(u0.grid):
        raise GridMismatch("initial data and operator live on different grids")
    u = Field(u0.grid, u0.values, 0.0) if u0.time != 0.0 else u0
    traj = Trajectory([u], [diagnostics(u, L, n, 0)], cfg, L, n)
    try:
        rate = L.exterior_rate()
    except DomainError:
        rate = None
    nsteps = cfg.n_steps
    for k in range(1, nsteps + 1):
        try:
            vals, it, _ = elliptic_solve(L, n, u, cfg.tau, tol=cfg.tol, max_iter=cfg.max_iter,
                                         solver=cfg.solver, return_info=True)
        except SolverError as exc:
            raise EvolveError(f"step {k} (t={k * cfg.tau:.6g}) failed: {exc}", traj, exc) from exc
        u = Field(u.grid, vals.values, k * cfg.tau)
        if rate is not None:
            traj.exterior_loss += cfg.tau * u.grid.cell * float(np.sum(np.abs(n.phi(u.values)) * rate))
        if k % cfg.cadence == 0 or k == nsteps:
            traj.fields.append(u)
            traj.rows.append(diagnostics(u, L, n, it))
        if callback is not None:
            callback(k, u)
    return traj


# ---------------------------------------------------------------------------
# diagnostics


def t_contraction(u: Field, v: Field) -> float:
    """h^N sum (u - v)_+."""
    u.check_grid(v)
    return float(np.sum(np.maximum(u.values - v.values, 0.0)) * u.grid.cell)


@dataclass(frozen=True)
class DecayFit:
    gamma_hat: float
    delta_hat: float
    residual: float
    n_points: int
    prefactor: float


def fit_decay_exponent(traj, window: tuple, sigma: Optional[float] = None, dim: Optional[int] = None) -> DecayFit:
    """Least-squares fit of log L_inf = log C - gamma log t over ``window``.

    ``traj`` is a :class:`Trajectory` or a sequence of :class:`DiagnosticsRow`.
    ``delta_hat = sigma * gamma_hat / N`` is the matching exponent of the
    L1 norm in the smoothing estimate.

    Raises
    ------
    DomainError
        Fewer than 10 rows in the window, or a vanishing L_inf.
    """
    rows = traj.rows if isinstance(traj, Trajectory) else list(traj)
    if isinstance(traj, Trajectory):
        sigma = traj.operator.kernel.sigma if sigma is None else sigma
        dim = traj.grid.dim if dim is None else dim
    t0, t1 = window
    sel = [r for r in rows if t0 - 1e-12 <= r.t <= t1 + 1e-12]
    if len(sel) < 10:
        raise DomainError(f"window {window} holds {len(sel)} rows; need at least 10")
    t = np.array([r.t for r in sel])
    y = np.array([r.linf for r in sel])
    if np.any(y <= 0.0) or np.any(t <= 0.0):
        raise DomainError("L_inf (or t) vanishes inside the window")
    A = np.column_stack([np.ones_like(t), np.log(t)])
    coef, *_ = np.linalg.lstsq(A, np.log(y), rcond=None)
    fit = A @ coef
    resid = float(np.sqrt(np.mean((np.log(y) - fit) ** 2)))
    gamma_hat = -float(coef[1])
    delta_hat = sigma * gamma_hat / dim if (sigma is not None and dim) else math.nan
    return DecayFit(gamma_hat, delta_hat, resid, len(sel), float(math.exp(coef[0])))


def smooth_cutoff(r: np.ndarray) -> np.ndarray:
    """psi(r) = 1 on [0, 1], 0 on [2, inf), smooth and monotone in between."""
    r = np.asarray(r, dtype=float)
    s = np.clip(r - 1.0, 0.0, 1.0)

    def bump(x):
        with np.errstate(divide="ignore", over="ignore"):
            return np.where(x > 0.0, np.exp(-1.0 / np.where(x > 0, x, 1.0)), 0.0)

    a = bump(1.0 - s)
    b = bump(s)
    return a / (a + b)


@dataclass(frozen=True)
class MassProbe:
    R: tuple
    drift: tuple  # max over stored times of |int u phi_R - int u0 phi_R|
    cutoff_norm: tuple  # ||L phi_R||_q on the grid
    bound: tuple  # T ||L phi_R||_q ||u0||_inf^(m - 1/p) ||u0||_1^(1/p)
    p: float
    q: float
    exponent_hat: float  # fitted slope of log ||L phi_R||_q in log R
    exponent_theory: float  # -sigma + N (p - 1) / p
    drift_exponent_hat: float


def cutoff_operator_norm(L: DiscreteOperator, R: float, q: float) -> float:
    """||L phi_R||_q over the grid, with phi_R(x) = psi(|x| / R).

    On a censored 1D fractional grid the exterior term phi_R * kappa is
    added back, so the value approximates the whole-space operator.
    """
    g = L.grid
    phiR = smooth_cutoff(g.radius / R)
    v = L.apply_values(phiR)
    try:
        v = v + phiR * L.exterior_rate()
    except DomainError:
        pass
    if math.isinf(q):
        return float(np.max(np.abs(v)))
    return float((np.sum(np.abs(v) ** q) * g.cell) ** (1.0 / q))


def mass_conservation_probe(traj: Trajectory, R) -> MassProbe:
    """Drift of the localized mass int u phi_R against its a priori bound.

    ``R`` may be a single radius or a sequence; with two or more radii the
    R-exponents of the bound factor and of the drift are fitted.

    Raises
    ------
    DomainError
        If the kernel is not translation invariant.
    """
    L = traj.operator
    n = traj.nonlinearity
    if not L.kernel.translation_invariant:
        raise DomainError("the mass probe needs a translation-invariant kernel")
    radii = tuple(float(r) for r in np.atleast_1d(R))
    m = n.m
    p = max(1.0, 1.0 / m)
    q = math.inf if p == 1.0 else p / (p - 1.0)
    u0 = traj.fields[0]
    g = traj.grid
    linf0 = u0.linf()
    l10 = u0.l1()
    T = traj.rows[-1].t
    drifts, norms, bounds = [], [], []
    for Rv in radii:
        phiR = smooth_cutoff(g.radius / Rv)
        base = float(np.sum(u0.values * phiR) * g.cell)
        drift = max(abs(float(np.sum(f.values * phiR) * g.cell) - base) for f in traj.fields)
        nrm = cutoff_operator_norm(L, Rv, q)
        drifts.append(drift)
        norms.append(nrm)
        bounds.append(T * nrm * linf0 ** (m - 1.0 / p) * l10 ** (1.0 / p))
    theory = -L.kernel.sigma + g.dim * (p - 1.0) / p
    if len(radii) >= 2:
        lr = np.log(radii)
        slope = float(np.polyfit(lr, np.log(norms), 1)[0])
        dpos = np.array(drifts) > 0
        dslope = float(np.polyfit(lr[dpos], np.log(np.array(drifts)[dpos]), 1)[0]) if dpos.sum() >= 2 else math.nan
    else:
        slope = dslope = math.nan
    return MassProbe(radii, tuple(drifts), tuple(norms), tuple(bounds), p, q, slope, theory, dslope)


def boundary_leakage(u: Field, shell: float = 0.1) -> float:
    """Mass |u| in the outermost ``shell`` fraction of the box (sup-norm shell)."""
    g = u.grid
    c = np.max(np.abs(g.coords), axis=1)
    mask = c >= (1.0 - shell) * g.R_dom - 1e-12
    return float(np.sum(np.abs(u.values[mask])) * g.cell)


def trajectory_leakage(traj: Trajectory, shell: float = 0.1) -> float:
    return max(boundary_leakage(f, shell) for f in traj.fields)


def energy_budget(traj: Trajectory) -> tuple:
    """(tau * sum of stored energies, ||u0||_1 ||phi(u0)||_inf); needs cadence 1."""
    if traj.config.cadence != 1:
        raise DomainError("energy budget needs every step stored")
    e = traj.column("energy")[1:]
    lhs = traj.config.tau * float(np.sum(e))
    u0 = traj.fields[0]
    rhs = u0.l1() * float(np.max(np.abs(traj.nonlinearity.phi(u0.values))))
    return lhs, rhs


# ---------------------------------------------------------------------------
# initial data


def box(grid: Grid, mass: float = 1.0, width: float = 1.0, center: float = 0.0) -> Field:
    """Constant on the nodes with |x - center|_inf <= width/2, scaled to ``mass``."""
    c = grid.coords
    inside = np.all(np.abs(c - center) <= 0.5 * width + 1e-9 * grid.h, axis=1)
    if not inside.any():
        raise DomainError("box holds no nodes")
    v = np.where(inside, 1.0, 0.0)
    return grid.field(v * mass / (v.sum() * grid.cell))


def near_delta(grid: Grid, mass: float = 1.0) -> Field:
    """Mass ``mass`` spread evenly over the nodes within 2h of the origin (width 4h)."""
    return box(grid, mass, width=4.0 * grid.h)


def gaussian(grid: Grid, mass: float = 1.0, width: float = 1.0, center: float = 0.0) -> Field:
    r2 = np.sum((grid.coords - center) ** 2, axis=1)
    v = np.exp(-0.5 * r2 / width ** 2)
    return grid.field(v * mass / (v.sum() * grid.cell))


def two_bump(grid: Grid, mass_pos: float = 1.0, mass_neg: float = 0.5, sep: float = 2.0,
             width: float = 0.5) -> Field:
    """A positive and a negative Gaussian bump at -sep/2 and +sep/2 along x."""
    shift = np.zeros(grid.dim)
    shift[0] = 0.5 * sep
    a = gaussian(grid, mass_pos, width, -shift).values
    b = gaussian(grid, mass_neg, width, shift).values
    return grid.field(a - b)


def random_smooth(grid: Grid, rng: np.random.Generator, modes: int = 6, amplitude: float = 1.0,
                  support: Optional[float] = None) -> Field:
    """Random trigonometric sum, optionally tapered to |x| <= support."""
    x = grid.coords[:, 0]
    L = grid.period
    v = np.zeros(grid.size)
    for k in range(1, modes + 1):
        a, b = rng.normal(size=2) / k
        v += a * np.cos(2 * np.pi * k * x / L) + b * np.sin(2 * np.pi * k * x / L)
    if grid.dim == 2:
        y = grid.coords[:, 1]
        for k in range(1, modes + 1):
            a, b = rng.normal(size=2) / k
            v += a * np.cos(2 * np.pi * k * y / L) + b * np.sin(2 * np.pi * k * y / L)
    v += rng.normal()
    if support is not None:
        v *= smooth_cutoff(grid.radius / (0.5 * support))
    return grid.field(amplitude * v / max(1e-300, np.max(np.abs(v))))


INITIAL_DATA = {
    "box": box,
    "gaussian": gaussian,
    "two_bump": two_bump,
    "near_delta": near_delta,
}
