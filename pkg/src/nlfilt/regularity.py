"""Regularity diagnostics: cylinder oscillations, Hoelder fits, B_psi and delta(theta).

All functions are pure and read stored snapshots only; nothing is
interpolated in time.
"""

from __future__ import annotations

import io
import json
import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
from scipy.optimize import minimize_scalar

from . import _kernels
from .grid import Field
from .model import DomainError, ShiftedTheta, ThetaMap

FLAT_LEVEL = 1e-12
BPSI_TOL = 1e-10
BPSI_MAX_DEPTH = 50


@dataclass(frozen=True)
class SigmaCylinder:
    """{|x - x0| < R, |t - t0| < R^sigma}."""

    x0: tuple
    t0: float
    R: float
    sigma: float

    def __post_init__(self):
        if not self.R > 0:
            raise ValueError("cylinder radius must be positive")
        if not 0 < self.sigma < 2:
            raise ValueError("sigma must lie in (0, 2)")
        object.__setattr__(self, "x0", tuple(float(c) for c in np.atleast_1d(self.x0)))

    @property
    def half_height(self) -> float:
        return self.R ** self.sigma

    def space_mask(self, coords: np.ndarray) -> np.ndarray:
        d = coords - np.asarray(self.x0)[None, :]
        return np.sqrt(np.sum(d * d, axis=1)) < self.R

    def time_mask(self, times: np.ndarray) -> np.ndarray:
        return np.abs(np.asarray(times) - self.t0) < self.half_height

    def shrink(self, factor: float) -> "SigmaCylinder":
        return SigmaCylinder(self.x0, self.t0, self.R * factor, self.sigma)


def _snapshots(traj) -> list:
    if isinstance(traj, Field):
        return [traj]
    fields = getattr(traj, "fields", traj)
    out = list(fields)
    if not out:
        raise DomainError("no snapshots")
    return out


def _cylinder_values(snaps: Sequence[Field], cyl: SigmaCylinder):
    times = np.array([f.time for f in snaps])
    static = len(snaps) == 1
    tsel = np.ones(1, dtype=bool) if static else cyl.time_mask(times)
    if not tsel.any():
        raise DomainError("cylinder holds no snapshot")
    g = snaps[0].grid
    xsel = cyl.space_mask(g.coords)
    if not xsel.any():
        raise DomainError("cylinder holds no grid node")
    vals = np.stack([snaps[i].values[xsel] for i in np.nonzero(tsel)[0]])
    return vals, int(xsel.sum()), int(tsel.sum())


def oscillation(traj, cyl: SigmaCylinder) -> float:
    """sup - inf of u over the nodes and stored times inside ``cyl``.

    ``traj`` is a Trajectory, a list of Fields, or one Field (a static
    snapshot, for which the time window is ignored).

    Raises
    ------
    DomainError
        If the cylinder contains no node or no snapshot.
    """
    vals, _, _ = _cylinder_values(_snapshots(traj), cyl)
    return float(np.max(vals) - np.min(vals))


@dataclass(frozen=True)
class OscillationReport:
    radii: np.ndarray
    osc: np.ndarray
    alpha_hat: Optional[float]
    varpi_hat: Optional[float]
    residual: float
    status: str  # "ok" or "flat"

    def to_csv(self, path=None) -> str:
        buf = io.StringIO()
        buf.write("R,osc\n")
        for r, o in zip(self.radii, self.osc):
            buf.write(f"{float(r)!r},{float(o)!r}\n")
        text = buf.getvalue()
        if path is not None:
            with open(path, "w") as fh:
                fh.write(text)
        return text

    def summary(self) -> dict:
        return {"alpha_hat": self.alpha_hat, "varpi_hat": self.varpi_hat,
                "residual": self.residual, "status": self.status}

    def to_json(self) -> str:
        return json.dumps(self.summary(), indent=2, sort_keys=True)


def holder_fit(traj, center, R0: float, gamma_ratio: float = 0.5, levels: int = 5,
               sigma: Optional[float] = None) -> OscillationReport:
    """Fit log osc_j = alpha log R_j + c over R_j = R0 gamma^j, j < levels.

    The cylinders are centred at ``center = (x0, t0)``. ``sigma`` defaults
    to the order of the trajectory's kernel. The fitted exponent is
    empirical; varpi_hat = gamma^alpha_hat is the per-level reduction factor.

    Raises
    ------
    DomainError
        If levels < 4, the smallest cylinder holds fewer than 3 nodes or
        fewer than 2 snapshots, or snapshots are spaced more than R_min^sigma/2
        apart near t0 (a single static snapshot is exempt from the time
        conditions).
    """
    if levels < 4:
        raise DomainError("need at least 4 levels")
    if not 0 < gamma_ratio < 1:
        raise DomainError("gamma_ratio must lie in (0, 1)")
    snaps = _snapshots(traj)
    if sigma is None:
        sigma = traj.operator.kernel.sigma
    x0, t0 = center
    radii = R0 * gamma_ratio ** np.arange(levels)
    cyls = [SigmaCylinder(x0, t0, float(r), sigma) for r in radii]
    _, n_nodes, n_times = _cylinder_values(snaps, cyls[-1])
    if n_nodes < 3:
        raise DomainError(f"smallest cylinder holds {n_nodes} nodes, need 3")
    if len(snaps) > 1:
        if n_times < 2:
            raise DomainError(f"smallest cylinder holds {n_times} snapshots, need 2")
        times = np.array([f.time for f in snaps])
        near = times[np.abs(times - t0) <= radii[0] ** sigma]
        if near.size > 1 and np.max(np.diff(np.sort(near))) > 0.5 * radii[-1] ** sigma * (1 + 1e-9):
            raise DomainError("snapshot cadence too coarse for the smallest cylinder")
    osc = np.array([oscillation(snaps, c) for c in cyls])
    if np.all(osc < FLAT_LEVEL):
        return OscillationReport(radii, osc, None, None, 0.0, "flat")
    keep = osc >= FLAT_LEVEL
    if keep.sum() < 2:
        return OscillationReport(radii, osc, None, None, 0.0, "flat")
    X = np.log(radii[keep])
    Y = np.log(osc[keep])
    A = np.column_stack([X, np.ones_like(X)])
    coef, res, *_ = np.linalg.lstsq(A, Y, rcond=None)
    resid = float(np.sqrt(np.mean((A @ coef - Y) ** 2)))
    alpha = float(coef[0])
    return OscillationReport(radii, osc, alpha, float(gamma_ratio ** alpha), resid, "ok")


# ---------------------------------------------------------------------------
# B_psi


def _theta_params(theta):
    if isinstance(theta, ShiftedTheta):
        theta = theta.base
    if not isinstance(theta, ThetaMap):
        raise DomainError("B_psi needs a ThetaMap (or a shifted one)")
    return theta


@dataclass(frozen=True)
class SandwichReport:
    lower_gap: float  # max of Lambda1 (w-psi)_+^2 - B, should be <= tol
    upper_gap: float  # max of B - Lambda2 (w-psi)_+, should be <= tol
    tolerance: float
    n_active: int

    @property
    def passed(self) -> bool:
        return self.lower_gap <= self.tolerance and self.upper_gap <= self.tolerance


def bpsi_closed_form(w: np.ndarray, psi: np.ndarray, theta) -> np.ndarray:
    """theta(w) d - (Theta(w) - Theta(psi)) with d = (w - psi)_+ and Theta' = theta."""
    th = _theta_params(theta)
    w = np.asarray(w, dtype=float)
    psi = np.asarray(psi, dtype=float)
    d = np.maximum(w - psi, 0.0)

    def anti(v):
        return th.a / (th.b * (th.p + 1.0)) * np.abs(th.b * v + th.c) ** (th.p + 1.0)

    out = th(w) * d - (anti(w) - anti(psi))
    return np.where(d > 0, out, 0.0)


def _bpsi_quadrature(w, psi, th: ThetaMap, tol: float) -> tuple:
    return _kernels.bpsi(np.ascontiguousarray(w, dtype=float), np.ascontiguousarray(psi, dtype=float),
                         float(th.a), float(th.b), float(th.c), float(th.p), float(tol), BPSI_MAX_DEPTH)


def energy_Bpsi(w: Field, psi: Field, theta, method: str = "quadrature", tol: float = BPSI_TOL):
    """B_psi(w) = int_0^{(w-psi)_+} theta'(s + psi) s ds at every node.

    Returns ``(values, Lambda1, Lambda2, report)``. With l the smallest psi and
    M the largest w over the active nodes (w > psi), Lambda1 = inf theta'/2
    and Lambda2 = theta(M) - theta(l), both over [l, M]; the report checks
    Lambda1 (w-psi)_+^2 <= B_psi <= Lambda2 (w-psi)_+ nodewise.

    ``method`` is "quadrature" (adaptive Simpson, tolerance ``tol``, with a
    substitution at the singular point of theta') or "closed" (antiderivative).

    Raises
    ------
    DomainError
        If theta is not a power map or the integral is not finite.
    """
    w.check_grid(psi)
    th = _theta_params(theta)
    wv, pv = w.values, psi.values
    if method == "quadrature":
        vals, _ = _bpsi_quadrature(wv, pv, th, tol)
    elif method == "closed":
        vals = bpsi_closed_form(wv, pv, th)
    else:
        raise ValueError(f"unknown method {method!r}")
    if not np.all(np.isfinite(vals)):
        raise DomainError("theta' is not integrable on the needed range")
    d = np.maximum(wv - pv, 0.0)
    act = d > 0
    if not act.any():
        rep = SandwichReport(0.0, 0.0, tol, 0)
        return w.with_values(vals), 0.0, 0.0, rep
    lo = float(np.min(pv[act]))
    hi = float(np.max(wv[act]))
    lam1 = 0.5 * _inf_prime(th, lo, hi)
    lam2 = float(th(hi) - th(lo))
    scale = max(1.0, float(np.max(np.abs(vals))))
    lower_gap = float(np.max(lam1 * d[act] ** 2 - vals[act]))
    upper_gap = float(np.max(vals[act] - lam2 * d[act]))
    rep = SandwichReport(lower_gap, upper_gap, tol * scale, int(act.sum()))
    return w.with_values(vals), lam1, lam2, rep


def _inf_prime(th, lo: float, hi: float) -> float:
    """inf of theta' over [lo, hi]; for a power map it sits at an endpoint unless p > 1."""
    v0 = -th.c / th.b
    cands = [lo, hi]
    if th.p > 1.0 and lo <= v0 <= hi:
        cands.append(v0)
    return float(min(th.prime(np.array(cands))))


def delta_theta(theta, variant: bool = False, samples: int = 4001) -> float:
    """inf_{[s0, 2]} theta' / (1 + theta(2) - theta(0)), s0 = 0 (or 1/4 for the variant).

    theta is any callable with a ``prime`` method. The infimum is taken over
    a uniform sample and refined by a bounded scalar minimisation around the
    best sample.
    """
    s0 = 0.25 if variant else 0.0
    s = np.linspace(s0, 2.0, samples)
    with np.errstate(divide="ignore", invalid="ignore"):
        d = np.asarray(theta.prime(s), dtype=float)
    d = np.where(np.isnan(d), np.inf, d)
    i = int(np.argmin(d))
    best = float(d[i])
    a, b = s[max(i - 1, 0)], s[min(i + 1, samples - 1)]
    if b > a:
        r = minimize_scalar(lambda x: float(theta.prime(np.array([x]))[0]), bounds=(a, b),
                            method="bounded", options={"xatol": 1e-12})
        best = min(best, float(r.fun))
    denom = 1.0 + float(theta(np.array([2.0]))[0]) - float(theta(np.array([0.0]))[0])
    return max(best, 0.0) / denom
