"""Kernels J(x, y), nonlinearities phi, and checks of their structural bounds.

A kernel is described by :class:`KernelSpec` and a constitutive function by
:class:`Nonlinearity`. Both are frozen; evaluation is pure and vectorised.
:func:`validate_hypotheses` samples point pairs and levels and reports, for
every bound, the worst observed ratio and where it occurred.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from typing import Callable, Optional

import numpy as np
from scipy.special import gamma as _gamma

from . import _kernels

FORMS = ("fractional", "truncated", "oscillating", "custom")
_FORM_CODE = {
    "fractional": _kernels.FORM_FRACTIONAL,
    "truncated": _kernels.FORM_TRUNCATED,
    "oscillating": _kernels.FORM_OSCILLATING,
}


class DomainError(ValueError):
    """Argument outside the set where an operation is defined."""


def normalization_constant(dim: int, sigma: float) -> float:
    """Constant mu such that mu |z|^(-N-sigma) has Fourier symbol |xi|^sigma.

    mu = 2^sigma Gamma((N+sigma)/2) / (pi^(N/2) |Gamma(-sigma/2)|).

    >>> round(normalization_constant(1, 1.0), 12) == round(1 / math.pi, 12)
    True
    """
    if not 0.0 < sigma < 2.0:
        raise DomainError(f"sigma must lie in (0, 2), got {sigma}")
    return float(2.0 ** sigma * _gamma(0.5 * (dim + sigma))
                 / (math.pi ** (0.5 * dim) * abs(_gamma(-0.5 * sigma))))


# ---------------------------------------------------------------------------
# kernels


@dataclass(frozen=True)
class KernelSpec:
    """A jump kernel of order ``sigma`` with ellipticity constant ``lambda_ell``.

    Parameters
    ----------
    sigma : float
        Order, in (0, 2).
    lambda_ell : float, optional
        Constant Lambda >= 1 in the two-sided bound. Defaults to the smallest
        value for which the built-in form satisfies it.
    form : str
        ``fractional`` (mu_{N,sigma} |z|^(-N-sigma) times ``normalization``
        ratio), ``truncated`` (|z|^(-N-sigma) for |z| <= 3), ``oscillating``
        (|z|^(-N-sigma) (1 + eps sin(1/|z|) sin(x1 + y1))), or ``custom``.
    dim : int
        Space dimension, 1 or 2.
    epsilon : float
        Oscillation amplitude; needs |eps| <= 1 - 1/Lambda.
    normalization : float, optional
        Prefactor of the fractional form; defaults to mu_{N,sigma}.
    func : callable, optional
        For ``custom``: ``func(x, y)`` on arrays of shape (n, N) returning n
        values. Flags must then be declared by the caller.
    seed : int
        Carried along for reproducible sampling plans.
    """

    sigma: float
    lambda_ell: Optional[float] = None
    form: str = "fractional"
    dim: int = 1
    epsilon: float = 0.0
    normalization: Optional[float] = None
    func: Optional[Callable] = field(default=None, compare=False)
    translation_invariant_flag: Optional[bool] = None
    radially_symmetric_flag: Optional[bool] = None
    pointwise_symmetric_flag: Optional[bool] = None
    local_constant: Optional[float] = None
    seed: int = 0

    def __post_init__(self):
        if self.form not in FORMS:
            raise ValueError(f"unknown kernel form {self.form!r}; expected one of {FORMS}")
        if not 0.0 < self.sigma < 2.0:
            raise ValueError(f"sigma must lie in (0, 2), got {self.sigma}")
        if self.dim not in (1, 2):
            raise ValueError(f"dim must be 1 or 2, got {self.dim}")
        if self.form == "fractional" and self.normalization is None:
            object.__setattr__(self, "normalization", normalization_constant(self.dim, self.sigma))
        if self.lambda_ell is None:
            object.__setattr__(self, "lambda_ell", self._default_lambda())
        if not self.lambda_ell >= 1.0:
            raise ValueError(f"Lambda must be >= 1, got {self.lambda_ell}")
        if self.form == "oscillating" and abs(self.epsilon) > 1.0 - 1.0 / self.lambda_ell + 1e-15:
            raise ValueError(
                f"|epsilon| = {abs(self.epsilon)} exceeds 1 - 1/Lambda = {1 - 1 / self.lambda_ell}; "
                "the lower kernel bound would fail")
        if self.form == "custom" and self.func is None:
            raise ValueError("custom kernels need func(x, y)")

    def _default_lambda(self) -> float:
        if self.form == "fractional":
            return max(self.normalization, 1.0 / self.normalization)
        if self.form == "oscillating":
            return 1.0 / (1.0 - abs(self.epsilon)) if abs(self.epsilon) < 1.0 else math.inf
        return 1.0

    # flags ---------------------------------------------------------------
    @property
    def translation_invariant(self) -> bool:
        if self.translation_invariant_flag is not None:
            return self.translation_invariant_flag
        return self.form in ("fractional", "truncated") or (
            self.form == "oscillating" and self.epsilon == 0.0)

    @property
    def radially_symmetric(self) -> bool:
        if self.radially_symmetric_flag is not None:
            return self.radially_symmetric_flag
        return self.translation_invariant and self.form != "custom"

    @property
    def pointwise_symmetric(self) -> bool:
        """Whether J(x, x + y) = J(x, x - y) for all x, y.

        Translation-invariant kernels have it; the oscillating form does not
        once the amplitude is nonzero.
        """
        if self.pointwise_symmetric_flag is not None:
            return self.pointwise_symmetric_flag
        return self.translation_invariant

    @property
    def mu(self) -> float:
        """Far-field constant lim |z|^(N+sigma) J(z); 0 for compact support."""
        if self.form == "fractional":
            return self.normalization
        if self.form == "truncated":
            return 0.0
        if self.form == "oscillating":
            return 1.0 if self.epsilon == 0.0 else math.nan
        return math.nan

    @property
    def near_constant(self) -> float:
        """Mean of |z|^(N+sigma) J near the diagonal, used by the singular cell."""
        if self.local_constant is not None:
            return self.local_constant
        if self.form == "fractional":
            return self.normalization
        return 1.0

    @property
    def form_code(self) -> int:
        return _FORM_CODE.get(self.form, -1)

    # evaluation ----------------------------------------------------------
    def pairs(self, x: np.ndarray, y: np.ndarray) -> np.ndarray:
        """J on matched rows of ``x`` and ``y`` (shape (n, N)); no coincidence check."""
        x = np.ascontiguousarray(np.atleast_2d(np.asarray(x, dtype=float)))
        y = np.ascontiguousarray(np.atleast_2d(np.asarray(y, dtype=float)))
        if self.form == "custom":
            return np.asarray(self.func(x, y), dtype=float)
        return _kernels.kernel_pairs(self.form_code, float(self.sigma), float(self.normalization or 1.0),
                                     float(self.epsilon), x, y)

    def with_values(self, **changes) -> "KernelSpec":
        return replace(self, **changes)


def _as_points(p, dim):
    a = np.asarray(p, dtype=float)
    if a.ndim == 0:
        a = a.reshape(1)
    if a.shape[-1] != dim:
        if dim == 1:
            a = a[..., None]
        else:
            raise DomainError(f"point shape {a.shape} does not match dim={dim}")
    return a.reshape(-1, dim)


def kernel_eval(k: KernelSpec, x, y):
    """J(x, y) for one point pair or arrays of pairs.

    Raises
    ------
    DomainError
        If any pair coincides.

    Examples
    --------
    >>> kernel_eval(KernelSpec(1.0, form="fractional", normalization=1.0), 0.0, 2.0)
    0.25
    """
    xs = _as_points(x, k.dim)
    ys = _as_points(y, k.dim)
    xs, ys = np.broadcast_arrays(xs, ys)
    if np.any(np.all(xs == ys, axis=1)):
        raise DomainError("kernel is singular at x = y")
    out = k.pairs(xs, ys)
    if np.ndim(x) == 0 or (k.dim > 1 and np.ndim(x) == 1):
        return float(out[0])
    return out


# ---------------------------------------------------------------------------
# nonlinearities


def _bisect_inverse(phi, w, lo=-1e6, hi=1e6, iters=200):
    w = np.asarray(w, dtype=float)
    a = np.full(w.shape, lo)
    b = np.full(w.shape, hi)
    for _ in range(iters):
        mid = 0.5 * (a + b)
        up = phi(mid) < w
        a = np.where(up, mid, a)
        b = np.where(up, b, mid)
    return 0.5 * (a + b)


@dataclass(frozen=True)
class Nonlinearity:
    """Constitutive map phi with derivative and inverse.

    Use the constructors :func:`power`, :func:`stefan`, :func:`fast_diffusion`
    or :func:`custom_nonlinearity` rather than building one by hand.
    ``kind`` records which family produced it, ``coef`` and ``m`` its
    parameters; ``a`` is the limit of |u|^(1-m) phi'(u) at 0 and ``bounds``
    the (c, C) with c|u|^(m-1) <= phi'(u) <= C|u|^(m-1).
    """

    kind: str
    m: float
    coef: float = 1.0
    a: float = math.nan
    bounds: tuple = (math.nan, math.nan)
    phi_fn: Optional[Callable] = field(default=None, compare=False, repr=False)
    dphi_fn: Optional[Callable] = field(default=None, compare=False, repr=False)
    beta_fn: Optional[Callable] = field(default=None, compare=False, repr=False)

    @property
    def is_power(self) -> bool:
        return self.kind == "power"

    def phi(self, u):
        u = np.asarray(u, dtype=float)
        if self.kind == "power":
            return self.coef * np.abs(u) ** (self.m - 1.0) * u if self.m != 1.0 else self.coef * u
        if self.kind == "fast":
            with np.errstate(divide="ignore", invalid="ignore"):
                return np.where(u == 0.0, 0.0, np.abs(u) ** (self.m - 1.0) * u)
        if self.kind == "stefan":
            return np.maximum(u - 1.0, 0.0)
        return np.asarray(self.phi_fn(u), dtype=float)

    def phi_prime(self, u):
        u = np.asarray(u, dtype=float)
        if self.kind == "power":
            if self.m == 1.0:
                return np.full_like(u, self.coef)
            return self.coef * self.m * np.abs(u) ** (self.m - 1.0)
        if self.kind == "fast":
            with np.errstate(divide="ignore"):
                return self.m * np.abs(u) ** (self.m - 1.0)
        if self.kind == "stefan":
            return np.where(u > 1.0, 1.0, 0.0)
        if self.dphi_fn is not None:
            return np.asarray(self.dphi_fn(u), dtype=float)
        step = 1e-6 * np.maximum(1.0, np.abs(u))
        return (self.phi(u + step) - self.phi(u - step)) / (2.0 * step)

    def beta(self, w):
        w = np.asarray(w, dtype=float)
        if self.kind == "power":
            if self.m == 1.0:
                return w / self.coef
            return np.sign(w) * (np.abs(w) / self.coef) ** (1.0 / self.m)
        if self.kind == "fast":
            return np.sign(w) * np.abs(w) ** (1.0 / self.m)
        if self.kind == "stefan":
            if np.any(w <= 0.0):
                raise DomainError("the Stefan map is not invertible at levels <= 0")
            return w + 1.0
        if self.beta_fn is not None:
            return np.asarray(self.beta_fn(w), dtype=float)
        return _bisect_inverse(self.phi, w)


def power(m: float, coef: float = 1.0) -> Nonlinearity:
    """phi(u) = coef |u|^(m-1) u for m >= 1."""
    if not m >= 1.0:
        raise ValueError(f"power nonlinearity needs m >= 1, got {m}")
    if not coef > 0.0:
        raise ValueError("coef must be positive")
    return Nonlinearity("power", float(m), float(coef), a=coef * m, bounds=(coef * m, coef * m))


def stefan() -> Nonlinearity:
    """phi(s) = (s - 1)_+, a negative test case (flat on s < 1)."""
    return Nonlinearity("stefan", 1.0)


def fast_diffusion(m: float) -> Nonlinearity:
    """phi(u) = |u|^(m-1) u with 0 < m < 1; phi' blows up at 0."""
    if not 0.0 < m < 1.0:
        raise ValueError("fast diffusion needs 0 < m < 1")
    return Nonlinearity("fast", float(m), a=m, bounds=(m, m))


def custom_nonlinearity(phi, phi_prime=None, beta=None, m: float = 1.0, a: float = math.nan,
                        bounds=(math.nan, math.nan)) -> Nonlinearity:
    """Wrap user callables. Without ``beta`` the inverse is found by bisection."""
    return Nonlinearity("custom", float(m), a=a, bounds=tuple(bounds), phi_fn=phi,
                        dphi_fn=phi_prime, beta_fn=beta)


def phi_apply(n: Nonlinearity, u):
    """phi(u), elementwise; scalars in, scalar out."""
    out = n.phi(u)
    return float(out) if np.ndim(u) == 0 else out


def beta_apply(n: Nonlinearity, w):
    """Inverse map beta = phi^(-1).

    Raises
    ------
    DomainError
        If ``w`` lies outside the range of phi.
    """
    out = n.beta(w)
    return float(out) if np.ndim(w) == 0 else out


# ---------------------------------------------------------------------------
# theta maps used by the regularity diagnostics


@dataclass(frozen=True)
class ThetaMap:
    """theta(s) = a sgn(b s + c) |b s + c|^p, with b > 0 and p > 0.

    Covers the identity (1, 1, 0, 1), the inverse of a power phi
    (coef^(-1/m), 1, 0, 1/m) and their affine rescalings.
    """

    a: float = 1.0
    b: float = 1.0
    c: float = 0.0
    p: float = 1.0

    def __post_init__(self):
        if not (self.a > 0 and self.b > 0 and self.p > 0):
            raise ValueError("ThetaMap needs a, b, p > 0")

    @classmethod
    def identity(cls) -> "ThetaMap":
        return cls()

    @classmethod
    def inverse_of(cls, n: Nonlinearity) -> "ThetaMap":
        if not n.is_power:
            raise DomainError("closed-form inverse exists only for power nonlinearities")
        return cls(a=n.coef ** (-1.0 / n.m), b=1.0, c=0.0, p=1.0 / n.m)

    @property
    def singular_point(self) -> float:
        return -self.c / self.b

    def __call__(self, s):
        z = self.b * np.asarray(s, dtype=float) + self.c
        return self.a * np.sign(z) * np.abs(z) ** self.p

    def prime(self, s):
        z = np.abs(self.b * np.asarray(s, dtype=float) + self.c)
        if self.p == 1.0:
            return np.full_like(z, self.a * self.b)
        with np.errstate(divide="ignore"):
            return self.a * self.b * self.p * z ** (self.p - 1.0)

    def shifted(self, const: float) -> "ShiftedTheta":
        return ShiftedTheta(self, const)


@dataclass(frozen=True)
class ShiftedTheta:
    """theta + const; same derivative."""

    base: ThetaMap
    const: float

    def __call__(self, s):
        return self.base(s) + self.const

    def prime(self, s):
        return self.base.prime(s)


# ---------------------------------------------------------------------------
# hypothesis validation


@dataclass(frozen=True)
class SamplePlan:
    """What :func:`validate_hypotheses` samples.

    ``n_pairs`` random pairs in the box [-box, box]^N, half of them with
    |x - y| <= 3; ``levels`` dyadic radii r = 2^-j for the phi oscillation
    constants; ``extra_pairs`` are appended verbatim (to probe a known spot).
    Pairs and levels closer than ``margin`` to the singular sets are dropped.
    """

    n_pairs: int = 2000
    box: float = 5.0
    levels: int = 20
    s_per_level: int = 64
    M: float = 2.0
    seed: int = 0
    margin: float = 1e-8
    extra_pairs: tuple = ()

    def __post_init__(self):
        if self.n_pairs + len(self.extra_pairs) <= 0 or self.levels <= 0:
            raise ValueError("sample plan is empty")


@dataclass(frozen=True)
class HypothesisCheck:
    name: str
    passed: bool
    worst_ratio: float
    witness: tuple
    detail: str = ""


@dataclass(frozen=True)
class ValidationReport:
    checks: tuple

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks if not c.name.startswith("info."))

    def __getitem__(self, name: str) -> HypothesisCheck:
        for c in self.checks:
            if c.name == name:
                return c
        raise KeyError(name)

    def names(self):
        return [c.name for c in self.checks]

    def summary(self) -> str:
        lines = []
        for c in self.checks:
            flag = "pass" if c.passed else "FAIL"
            lines.append(f"{c.name:28s} {flag}  worst={c.worst_ratio:.6g}  at {c.witness}  {c.detail}")
        return "\n".join(lines)


def _sample_pairs(plan: SamplePlan, dim: int):
    rng = np.random.default_rng(plan.seed)
    n = plan.n_pairs
    x = rng.uniform(-plan.box, plan.box, size=(n, dim))
    # half near-diagonal pairs, log-uniform distance in [1e-4, 3]
    near = n // 2
    dirs = rng.normal(size=(near, dim))
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    dist = np.exp(rng.uniform(math.log(1e-4), math.log(3.0), size=near))
    y = np.empty_like(x)
    y[:near] = x[:near] + dirs * dist[:, None]
    y[near:] = rng.uniform(-plan.box, plan.box, size=(n - near, dim))
    if plan.extra_pairs:
        ex = np.asarray([np.ravel(p[0]) for p in plan.extra_pairs], dtype=float).reshape(-1, dim)
        ey = np.asarray([np.ravel(p[1]) for p in plan.extra_pairs], dtype=float).reshape(-1, dim)
        x = np.vstack([x, ex])
        y = np.vstack([y, ey])
    r = np.linalg.norm(x - y, axis=1)
    keep = r > plan.margin
    return x[keep], y[keep], r[keep]


def _worst(ratio, x, y):
    i = int(np.nanargmax(ratio))
    return float(ratio[i]), (tuple(np.round(x[i], 15)), tuple(np.round(y[i], 15)))


def _kernel_checks(k: KernelSpec, plan: SamplePlan):
    x, y, r = _sample_pairs(plan, k.dim)
    jxy = k.pairs(x, y)
    jyx = k.pairs(y, x)
    scaled = jxy * r ** (k.dim + k.sigma)
    lam = k.lambda_ell
    slack = 1e-12
    checks = []
    neg = np.maximum(-jxy, 0.0)
    checks.append(HypothesisCheck("H_J.nonnegative", bool(np.all(jxy >= 0.0)), *_worst(neg, x, y)))
    asym = np.abs(jxy - jyx) / np.maximum(np.abs(jxy), 1e-300)
    checks.append(HypothesisCheck("H_J.symmetric", bool(np.all(asym <= slack)), *_worst(asym, x, y)))
    upper = scaled / lam
    checks.append(HypothesisCheck("H_J.upper", bool(np.all(upper <= 1.0 + slack)), *_worst(upper, x, y),
                                  detail="max J|z|^(N+s)/Lambda"))
    inner = r <= 3.0
    with np.errstate(divide="ignore"):
        lower = 1.0 / (lam * scaled[inner])
    if inner.any():
        checks.append(HypothesisCheck("H_J.lower", bool(np.all(lower <= 1.0 + slack)),
                                      *_worst(lower, x[inner], y[inner]),
                                      detail="max 1/(Lambda J|z|^(N+s)), |z|<=3"))
    with np.errstate(divide="ignore"):
        glob = 1.0 / (lam * scaled)
    refl = k.pairs(x, 2.0 * x - y)
    pws = np.abs(jxy - refl) / np.maximum(np.abs(jxy), 1e-300)
    checks.append(HypothesisCheck("info.pointwise_symmetric", bool(np.all(pws <= 1e-12)),
                                  *_worst(pws, x, y), detail="J(x,x+y) vs J(x,x-y)"))
    checks.append(HypothesisCheck("info.H_J'.global_lower", bool(np.all(glob <= 1.0 + slack)),
                                  *_worst(glob, x, y), detail="lower bound for all |z|"))
    return checks


def _phi_checks(n: Nonlinearity, plan: SamplePlan):
    rng = np.random.default_rng(plan.seed + 1)
    checks = []
    s = np.concatenate([np.linspace(-plan.M, plan.M, 401), rng.uniform(-plan.M, plan.M, 400)])
    s = s[np.abs(s) > plan.margin]
    f0 = float(n.phi(np.array([0.0]))[0])
    checks.append(HypothesisCheck("H_phi.zero", f0 == 0.0, abs(f0), (0.0,)))
    ss = np.sort(s)
    fs = n.phi(ss)
    drops = np.maximum(fs[:-1] - fs[1:], 0.0)
    checks.append(HypothesisCheck("H_phi.monotone", bool(np.all(drops == 0.0)),
                                  float(drops.max()), (float(ss[int(np.argmax(drops))]),)))
    d = n.phi_prime(ss)
    # ratio > 1 means phi' fails to be positive (or finite) at that level
    with np.errstate(divide="ignore"):
        bad = np.where(np.isfinite(d) & (d > 0.0), 0.0, np.inf)
    i = int(np.argmax(bad))
    checks.append(HypothesisCheck("H_phi.positive_derivative", bool(np.all(bad == 0.0)), float(bad[i]),
                                  (float(ss[i]),), detail="phi'(s) > 0 and finite for s != 0"))
    # continuity of phi' at 0: derivative must stay bounded as s -> 0
    tiny = 2.0 ** -np.arange(10, 40, 2)
    dt = n.phi_prime(np.concatenate([tiny, -tiny]))
    fin = bool(np.all(np.isfinite(dt)) and np.max(np.abs(dt)) < 1e6 * (1.0 + abs(float(n.phi_prime(np.array([1.0]))[0]))))
    checks.append(HypothesisCheck("H_phi.C1_at_zero", fin, float(np.max(np.abs(dt))), (float(tiny[-1]),)))

    # oscillation constants on dyadic levels
    c1_levels, c2_levels = [], []
    worst_c1 = (math.inf, None)
    worst_c2 = (0.0, None)
    for j in range(1, plan.levels + 1):
        for sign in (1.0, -1.0):
            r = sign * 2.0 ** -j
            q = float(n.phi(np.array([r]))[0]) / r
            mags = np.exp(rng.uniform(math.log(abs(r) / 4.0), math.log(3.0 * abs(r)), plan.s_per_level))
            ssamp = np.concatenate([mags, -mags])
            dv = n.phi_prime(ssamp)
            with np.errstate(divide="ignore", invalid="ignore"):
                lo = float(np.min(dv)) / q if q > 0 else 0.0
                hi = float(np.max(dv)) / q if q > 0 else math.inf
            c1_levels.append(lo)
            c2_levels.append(hi)
            if lo < worst_c1[0]:
                worst_c1 = (lo, (r,))
            if hi > worst_c2[0]:
                worst_c2 = (hi, (r,))
    c1 = np.array(c1_levels)
    c2 = np.array(c2_levels)
    ok = bool(np.all(np.isfinite(c2)) and worst_c1[0] > 0.0 and np.all(np.isfinite(c1)))
    # growth flag: compare the last quarter of levels with the first quarter
    q4 = max(1, len(c2) // 4)
    growth = float(np.max(c2[-q4:]) / max(np.max(c2[:q4]), 1e-300)) if ok else math.inf
    shrink = float(np.min(c1[:q4]) / max(np.min(c1[-q4:]), 1e-300)) if ok else math.inf
    flag = ok and growth < 2.0 and shrink < 2.0
    checks.append(HypothesisCheck("H_phi'.C1", ok and worst_c1[0] > 0.0, worst_c1[0], worst_c1[1],
                                  detail=f"empirical C1 (smallest ratio); level drift {shrink:.3g}"))
    checks.append(HypothesisCheck("H_phi'.C2", ok, worst_c2[0], worst_c2[1],
                                  detail=f"empirical C2 (largest ratio); level growth {growth:.3g}"))
    checks.append(HypothesisCheck("H_phi'.uniform_levels", flag, max(growth, shrink), (plan.levels,),
                                  detail="constants stable as r -> 0"))
    # D_M: sup phi' on [A, B] vs difference quotient
    A = rng.uniform(-plan.M, plan.M, 200)
    B = rng.uniform(-plan.M, plan.M, 200)
    A, B = np.minimum(A, B), np.maximum(A, B)
    keep = B - A > 1e-6
    A, B = A[keep], B[keep]
    t = np.linspace(0.0, 1.0, 65)
    grid = A[:, None] + (B - A)[:, None] * t[None, :]
    sup = np.max(n.phi_prime(grid), axis=1)
    quot = (n.phi(B) - n.phi(A)) / (B - A)
    with np.errstate(divide="ignore", invalid="ignore"):
        dm = np.where(quot > 0, sup / quot, np.inf)
    i = int(np.argmax(dm))
    checks.append(HypothesisCheck("H_phi'.D_M", bool(np.isfinite(dm[i])), float(dm[i]),
                                  (float(A[i]), float(B[i])), detail=f"empirical D_M for M={plan.M}"))
    return checks


def validate_hypotheses(k: KernelSpec, n: Nonlinearity, samples: Optional[SamplePlan] = None) -> ValidationReport:
    """Sample the kernel and nonlinearity bounds and report each one.

    Failures are returned as data. Each check carries the worst ratio seen
    (for kernel bounds, > 1 means violated) and the pair or level where it
    was attained. Names starting with ``info.`` are reported but do not
    count toward :attr:`ValidationReport.passed`.
    """
    plan = samples or SamplePlan(seed=k.seed)
    return ValidationReport(tuple(_kernel_checks(k, plan) + _phi_checks(n, plan)))


# ---------------------------------------------------------------------------
# JSON config block


def model_to_dict(k: KernelSpec, n: Nonlinearity) -> dict:
    """Flat JSON-ready block; floats survive a dump/load round trip bit-exactly."""
    if k.form == "custom" or n.kind == "custom":
        raise DomainError("custom callables do not serialize")
    return {
        "form": k.form,
        "sigma": float(k.sigma),
        "Lambda": float(k.lambda_ell),
        "m": float(n.m),
        "epsilon": float(k.epsilon),
        "seed": int(k.seed),
        "dim": int(k.dim),
        "normalization": None if k.normalization is None else float(k.normalization),
        "phi_form": n.kind,
        "coef": float(n.coef),
    }


def model_from_dict(d: dict):
    """Inverse of :func:`model_to_dict`; returns ``(KernelSpec, Nonlinearity)``."""
    kind = d.get("phi_form", "power")
    m = float(d.get("m", 1.0))
    if kind == "power":
        nl = power(m, float(d.get("coef", 1.0)))
    elif kind == "stefan":
        nl = stefan()
    elif kind == "fast":
        nl = fast_diffusion(m)
    else:
        raise ValueError(f"cannot rebuild nonlinearity kind {kind!r}")
    ks = KernelSpec(
        sigma=float(d["sigma"]),
        lambda_ell=None if d.get("Lambda") is None else float(d["Lambda"]),
        form=d.get("form", "fractional"),
        dim=int(d.get("dim", 1)),
        epsilon=float(d.get("epsilon", 0.0)),
        normalization=None if d.get("normalization") is None else float(d["normalization"]),
        seed=int(d.get("seed", 0)),
    )
    return ks, nl


def model_to_json(k: KernelSpec, n: Nonlinearity) -> str:
    return json.dumps(model_to_dict(k, n), sort_keys=True)


def model_from_json(text: str):
    return model_from_dict(json.loads(text))
