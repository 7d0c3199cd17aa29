"""Quadrature of the jump operator and of its energy form on a grid.

The operator acts as ``(L f)_i = sum_j W_ij (f_i - f_j)`` with a symmetric,
nonnegative weight matrix ``W``; the energy form is
``E(f, g) = h^N / 2 * sum_ij W_ij (f_i - f_j)(g_i - g_j)``.

Weights
-------
Fractional kernel in 1D
    Each weight is the kernel integrated against the piecewise-linear hat of
    its node. On the first cell the hat is replaced by the quadratic z^2/h^2,
    which is exact for the even second difference near the diagonal. Closed
    form; periodic images are summed directly out to a few periods and then
    through a Hurwitz zeta tail.
Other kernels, and 2D
    Midpoint values J(x_i, x_j) h^N, plus a singular-cell term on the nearest
    neighbours carrying the part of the integral inside the cell of x_i.

Boundary handling on extended grids is censored. A jump whose target lies
outside the box is discarded, so row sums vanish and mass is conserved
exactly. :meth:`DiscreteOperator.exterior_rate` gives the (fractional, 1D)
rate at which a jump would have left the box, as a diagnostic.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
from scipy import integrate
from scipy.special import zeta

from . import _kernels
from .grid import Field, Grid, GridMismatch
from .model import DomainError, KernelSpec

DENSE_LIMIT = 6000 * 6000  # entries of W beyond which a lazy apply is used
PERIODIC_IMAGES_1D = 4
PERIODIC_IMAGES_2D = 3


class NotPointwiseSymmetric(DomainError):
    """The kernel has no pointwise second-difference form; only the energy is defined."""


# ---------------------------------------------------------------------------
# closed-form weights for the fractional kernel, 1D


def _moment(a, b, e):
    """int_a^b s^e ds for 0 < a < b, stable near e = -1."""
    e1 = e + 1.0
    if e1 == 0.0:
        return math.log(b / a)
    return a ** e1 * math.expm1(e1 * math.log(b / a)) / e1


def _hat_integral(n: int, sigma: float) -> float:
    """int hat_n(s) s^(-1-sigma) ds in units where h = 1, n >= 1."""
    q = -1.0 - sigma
    if n == 1:
        return 1.0 / (2.0 - sigma) + 2.0 * _moment(1.0, 2.0, q) - _moment(1.0, 2.0, q + 1.0)
    if n >= 24:
        # expansion of int_{-1}^{1} (1-|t|)(n+t)^q dt in even powers of t
        total = 0.0
        coef = 1.0  # generalized binomial C(q, j)
        for j in range(0, 16):
            if j % 2 == 0:
                total += coef * n ** (q - j) * 2.0 / ((j + 1) * (j + 2))
            coef *= (q - j) / (j + 1)
        return total
    left = _moment(n - 1.0, n, q + 1.0) - (n - 1.0) * _moment(n - 1.0, n, q)
    right = (n + 1.0) * _moment(n, n + 1.0, q) - _moment(n, n + 1.0, q + 1.0)
    return left + right


def fractional_weights_1d(n_max: int, sigma: float, h: float, mu: float) -> np.ndarray:
    """Weights w_1..w_{n_max} (index 0 unused, set to 0) on an infinite line."""
    w = np.zeros(n_max + 1)
    scale = mu * h ** (-sigma)
    for n in range(1, n_max + 1):
        w[n] = scale * _hat_integral(n, sigma)
    return w


def _periodic_fractional_1d(M: int, sigma: float, h: float, mu: float, images: int = PERIODIC_IMAGES_1D):
    dist_max = (images + 1) * M
    base = fractional_weights_1d(dist_max, sigma, h, mu)
    n = np.arange(M)
    acc = np.zeros(M)
    for j in range(-images, images + 1):
        d = np.abs(n + j * M)
        acc += np.where(d > 0, base[np.minimum(d, dist_max)], 0.0)
    # far images through the leading term mu h^-sigma d^(-1-sigma)
    tail_coef = mu * h ** (-sigma)
    s = 1.0 + sigma
    frac = n[1:] / M
    acc[1:] += tail_coef * M ** (-s) * (zeta(s, images + 1 + frac) + zeta(s, images + 1 - frac))
    acc[0] = 0.0
    # exact symmetry w(n) = w(M - n)
    acc[1:] = 0.5 * (acc[1:] + acc[1:][::-1])
    return acc, tail_coef


def singular_cell_neighbour_weight(sigma: float, h: float, c: float, dim: int) -> float:
    """Weight on each nearest neighbour that carries the in-cell integral."""
    if dim == 1:
        return c * (0.5 * h) ** (2.0 - sigma) / ((2.0 - sigma) * h * h)
    return 0.5 * c * square_cell_moment(sigma) * h ** (-sigma)


_K_CACHE: dict = {}


def square_cell_moment(sigma: float) -> float:
    """K = int over [-1/2, 1/2]^2 of z1^2 |z|^(-2-sigma) dz."""
    if sigma not in _K_CACHE:
        # z1^2 and z2^2 integrate alike, so K = 1/2 int |z|^-sigma; polar on 8 triangles
        def radial(th):
            return (0.5 / math.cos(th)) ** (2.0 - sigma) / (2.0 - sigma)

        val, _ = integrate.quad(radial, 0.0, math.pi / 4, epsabs=1e-15, epsrel=1e-13)
        _K_CACHE[sigma] = 4.0 * val
    return _K_CACHE[sigma]


# ---------------------------------------------------------------------------
# operator


@dataclass(frozen=True, eq=False)
class DiscreteOperator:
    """Assembled operator on ``grid``. Build with :func:`assemble`.

    ``weights`` is the dense symmetric W (``None`` when the apply is lazy),
    ``tail_coefficient`` the prefactor of the far-field correction (periodic
    fractional form), ``weak_only`` marks kernels for which only the energy
    form is defined.
    """

    grid: Grid
    kernel: KernelSpec
    weights: Optional[np.ndarray]
    tail_coefficient: float
    symmetric: bool
    weak_only: bool = False
    neighbour_weight: float = 0.0
    _lazy: Optional[Callable] = field(default=None, repr=False)
    _rowsum: Optional[np.ndarray] = field(default=None, repr=False)
    _lmat: Optional[np.ndarray] = field(default=None, repr=False)

    @property
    def dense(self) -> bool:
        return self.weights is not None

    def matrix(self) -> np.ndarray:
        """Dense L = diag(row sums) - W."""
        if self._lmat is None:
            raise DomainError("operator was assembled lazily; no dense matrix")
        return self._lmat

    def diagonal(self) -> np.ndarray:
        if self._rowsum is None:
            raise DomainError("row sums were not computed for this lazy operator")
        return self._rowsum

    def apply_values(self, v: np.ndarray) -> np.ndarray:
        if self.weak_only:
            raise NotPointwiseSymmetric(
                "kernel lacks J(x,x+y) = J(x,x-y); only bilinear/quadratic are defined")
        v = np.asarray(v, dtype=float)
        if self._lmat is not None:
            return self._lmat @ v
        return self._lazy(v)

    def _energy_values(self, f: np.ndarray, g: np.ndarray) -> float:
        if self.weights is not None:
            return _kernels.pair_energy(self.weights, np.ascontiguousarray(f), np.ascontiguousarray(g))
        return float(np.dot(f, self._lazy(g)))

    def exterior_rate(self) -> np.ndarray:
        """Per-node rate of jumps leaving the box (1D extended fractional form).

        kappa(x) = (mu / sigma) ((R' - x)^-sigma + (R' + x)^-sigma), R' = R + h/2.
        """
        g = self.grid
        k = self.kernel
        if g.mode != "extended" or g.dim != 1 or k.form != "fractional":
            raise DomainError("exterior rate is available for the 1D fractional form on extended grids")
        x = g.axis
        Rp = g.R_dom + 0.5 * g.h
        return (k.normalization / k.sigma) * ((Rp - x) ** (-k.sigma) + (Rp + x) ** (-k.sigma))


def _index_offsets_dense(n_axis: int, dim: int, w_off: np.ndarray, periodic: bool) -> np.ndarray:
    """Expand an offset table into the dense W."""
    idx = np.arange(n_axis)
    if dim == 1:
        if periodic:
            return w_off[(idx[None, :] - idx[:, None]) % n_axis]
        return w_off[np.abs(idx[None, :] - idx[:, None])]
    ii, jj = np.meshgrid(idx, idx, indexing="ij")
    a = ii.ravel()
    b = jj.ravel()
    if periodic:
        da = (a[None, :] - a[:, None]) % n_axis
        db = (b[None, :] - b[:, None]) % n_axis
        return w_off[da, db]
    da = a[None, :] - a[:, None] + n_axis - 1
    db = b[None, :] - b[:, None] + n_axis - 1
    return w_off[da, db]


def _offset_table(k: KernelSpec, g: Grid) -> tuple:
    """Weights indexed by node offset for translation-invariant kernels.

    Returns (table, tail_coefficient, neighbour_weight). 1D extended tables
    are indexed by |offset|; 1D periodic by offset mod n; 2D extended by
    offset + (n - 1) per axis; 2D periodic by offset mod n per axis.
    """
    n = g.n_axis
    h = g.h
    periodic = g.mode == "periodic"
    c = k.near_constant
    if g.dim == 1 and k.form == "fractional":
        if periodic:
            tab, tail = _periodic_fractional_1d(n, k.sigma, h, k.normalization)
            return tab, tail, 0.0
        return fractional_weights_1d(n - 1, k.sigma, h, k.normalization), 0.0, 0.0
    nb = singular_cell_neighbour_weight(k.sigma, h, c, g.dim)
    if g.dim == 1:
        if periodic:
            off = np.arange(n)
            images = PERIODIC_IMAGES_1D if k.form == "fractional" else 2
            tab = np.zeros(n)
            for j in range(-images, images + 1):
                z = (off + j * n) * h
                mask = z != 0.0
                zz = np.zeros((mask.sum(), 1))
                tab[mask] += k.pairs(zz, z[mask][:, None]) * h
            tab[0] = 0.0
            tab[1] += nb
            tab[n - 1] += nb
            tab[1:] = 0.5 * (tab[1:] + tab[1:][::-1])
        else:
            z = np.arange(n) * h
            tab = np.zeros(n)
            tab[1:] = k.pairs(np.zeros((n - 1, 1)), z[1:, None]) * h
            tab[1] += nb
        return tab, 0.0, nb
    # 2D
    cell = h * h
    if periodic:
        off = np.arange(n)
        A, B = np.meshgrid(off, off, indexing="ij")
        tab = np.zeros((n, n))
        images = PERIODIC_IMAGES_2D
        for ja in range(-images, images + 1):
            for jb in range(-images, images + 1):
                z = np.column_stack([((A + ja * n) * h).ravel(), ((B + jb * n) * h).ravel()])
                r0 = np.all(z == 0.0, axis=1)
                vals = np.zeros(z.shape[0])
                vals[~r0] = k.pairs(np.zeros(((~r0).sum(), 2)), z[~r0])
                tab += vals.reshape(n, n) * cell
        tab[0, 0] = 0.0
        for a, b in ((1, 0), (n - 1, 0), (0, 1), (0, n - 1)):
            tab[a, b] += nb
        # symmetrize under offset -> -offset
        tab = 0.5 * (tab + np.roll(tab[::-1, ::-1], 1, axis=(0, 1)))
    else:
        off = np.arange(-(n - 1), n)
        A, B = np.meshgrid(off, off, indexing="ij")
        z = np.column_stack([(A * h).ravel(), (B * h).ravel()])
        r0 = np.all(z == 0.0, axis=1)
        vals = np.zeros(z.shape[0])
        vals[~r0] = k.pairs(np.zeros(((~r0).sum(), 2)), z[~r0])
        tab = vals.reshape(2 * n - 1, 2 * n - 1) * cell
        c0 = n - 1
        for a, b in ((1, 0), (-1, 0), (0, 1), (0, -1)):
            tab[c0 + a, c0 + b] += nb
    tail = k.normalization * h ** (-k.sigma) if k.form == "fractional" else 0.0
    return tab, tail, nb


def _lazy_translation_invariant(g: Grid, tab: np.ndarray):
    """FFT convolution apply for offset tables (2D or very large 1D)."""
    n = g.n_axis
    shape = g.shape
    if g.mode == "periodic":
        spectrum = np.fft.rfftn(tab)
        rowsum = np.full(g.size, float(np.sum(tab)))

        def conv(v):
            return np.fft.irfftn(np.fft.rfftn(v.reshape(shape)) * np.conj(spectrum), s=shape).ravel()
    else:
        if g.dim == 1:
            full = np.concatenate([tab[::-1], tab[1:]])  # offsets -(n-1)..(n-1)
        else:
            full = tab
        pad = tuple(2 * n - 1 + n - 1 for _ in shape)
        axes = tuple(range(len(shape)))
        spectrum = np.fft.rfftn(full, s=pad, axes=axes)
        c0 = n - 1

        def conv(v):
            out = np.fft.irfftn(np.fft.rfftn(v.reshape(shape), s=pad, axes=axes) * spectrum, s=pad, axes=axes)
            sl = tuple(slice(c0, c0 + n) for _ in shape)
            return out[sl].ravel()

        rowsum = conv(np.ones(g.size))

    def apply(v):
        return rowsum * v - conv(v)

    return apply, rowsum


def assemble(k: KernelSpec, g: Grid, weak: bool = False, dense: Optional[bool] = None) -> DiscreteOperator:
    """Weights realizing the jump operator of ``k`` on ``g``.

    Parameters
    ----------
    weak : bool
        Accept kernels without pointwise symmetry. The result then only
        supports :func:`bilinear` and :func:`quadratic`.
    dense : bool, optional
        Force (or forbid) the dense weight matrix. By default W is dense when
        it fits in ``DENSE_LIMIT`` entries.

    Raises
    ------
    NotPointwiseSymmetric
        If the kernel lacks J(x, x+y) = J(x, x-y) and ``weak`` is false.
    """
    if k.dim != g.dim:
        raise GridMismatch(f"kernel dimension {k.dim} != grid dimension {g.dim}")
    if not k.pointwise_symmetric and not weak:
        raise NotPointwiseSymmetric(
            f"{k.form} kernel fails J(x,x+y) = J(x,x-y); the second-difference form is not valid. "
            "Pass weak=True to build the energy form only.")
    n = g.size
    if dense is None:
        dense = n * n <= DENSE_LIMIT
    periodic = g.mode == "periodic"
    weak_only = not k.pointwise_symmetric
    if k.translation_invariant:
        tab, tail, nb = _offset_table(k, g)
        if dense:
            W = _index_offsets_dense(g.n_axis, g.dim, tab, periodic)
            W = np.ascontiguousarray(W, dtype=float)
            np.fill_diagonal(W, 0.0)
            return _finish_dense(g, k, W, tail, nb, weak_only)
        apply, rowsum = _lazy_translation_invariant(g, tab)
        return DiscreteOperator(g, k, None, tail, True, weak_only, nb, apply, rowsum, None)
    # kernels that depend on position: midpoint weights pair by pair
    coords = np.ascontiguousarray(g.coords)
    period = g.period if periodic else 0.0
    images = (PERIODIC_IMAGES_2D if g.dim == 2 else 2) if periodic else 0
    nb = singular_cell_neighbour_weight(k.sigma, g.h, k.near_constant, g.dim)
    if k.form == "custom":
        if not dense or (periodic and g.dim == 2):
            raise DomainError("custom position-dependent kernels need a dense grid, 1D if periodic")
        W = _custom_dense(k, g, images)
    elif dense:
        W = _kernels.midpoint_weights(k.form_code, float(k.sigma), float(k.normalization or 1.0),
                                      float(k.epsilon), coords, g.cell, float(period), images)
    else:
        if g.dim != 2 or periodic:
            raise DomainError("lazy position-dependent apply exists for 2D extended grids only")
        return _lazy_position_dependent(k, g, coords, nb, weak_only)
    W = np.array(W, dtype=float)
    _add_neighbours(W, g, nb)
    return _finish_dense(g, k, W, 0.0, nb, weak_only)


def _custom_dense(k: KernelSpec, g: Grid, images: int) -> np.ndarray:
    c = g.coords
    n = g.size
    ii, jj = np.triu_indices(n, 1)
    vals = np.zeros(ii.size)
    shifts = [0.0] if images == 0 else list(np.arange(-images, images + 1) * g.period)
    for s in shifts:
        y = c[jj].copy()
        y[:, 0] += s
        vals += k.pairs(c[ii], y)
    W = np.zeros((n, n))
    W[ii, jj] = vals * g.cell
    W[jj, ii] = vals * g.cell
    return W


def _neighbour_pairs(g: Grid):
    n = g.n_axis
    idx = np.arange(g.size).reshape(g.shape)
    pairs = []
    for ax in range(g.dim):
        a = idx
        b = np.roll(idx, -1, axis=ax)
        if g.mode == "extended":
            sl = [slice(None)] * g.dim
            sl[ax] = slice(0, n - 1)
            a = a[tuple(sl)]
            b = b[tuple(sl)]
        pairs.append((a.ravel(), b.ravel()))
    return pairs


def _add_neighbours(W: np.ndarray, g: Grid, nb: float):
    for a, b in _neighbour_pairs(g):
        W[a, b] += nb
        W[b, a] += nb


def _finish_dense(g, k, W, tail, nb, weak_only) -> DiscreteOperator:
    rowsum = W.sum(axis=1)
    L = -W.copy()
    L[np.diag_indices_from(L)] = rowsum
    symmetric = bool(np.array_equal(W, W.T))
    W.setflags(write=False)
    L.setflags(write=False)
    return DiscreteOperator(g, k, W, tail, symmetric, weak_only, nb, None, rowsum, L)


def _lazy_position_dependent(k, g, coords, nb, weak_only) -> DiscreteOperator:
    pairs = _neighbour_pairs(g)
    form, sig, norm, eps = k.form_code, float(k.sigma), float(k.normalization or 1.0), float(k.epsilon)

    def apply(v):
        out = _kernels.lazy_apply_2d(form, sig, norm, eps, coords, g.cell, np.ascontiguousarray(v))
        for a, b in pairs:
            d = v[a] - v[b]
            np.add.at(out, a, nb * d)
            np.add.at(out, b, -nb * d)
        return out

    # row sums would cost a second full sweep; diagonal() is unavailable here
    return DiscreteOperator(g, k, None, 0.0, True, weak_only, nb, apply, None, None)


# ---------------------------------------------------------------------------
# public operations


def _check(L: DiscreteOperator, f: Field):
    if not L.grid.same_as(f.grid):
        raise GridMismatch("field and operator live on different grids")


def apply(L: DiscreteOperator, f: Field) -> Field:
    """L f as a new field at the same time as ``f``."""
    _check(L, f)
    return Field(L.grid, L.apply_values(f.values), f.time)


def bilinear(L: DiscreteOperator, f: Field, g: Field) -> float:
    """h^N / 2 * sum_ij W_ij (f_i - f_j)(g_i - g_j)."""
    _check(L, f)
    _check(L, g)
    return L.grid.cell * L._energy_values(f.values, g.values)


def quadratic(L: DiscreteOperator, f: Field) -> float:
    """bilinear(f, f). Dense weights give a sum of nonnegative terms; the lazy
    path goes through <f, Lf> and is clipped at zero against roundoff."""
    q = bilinear(L, f, f)
    return q if L.weights is not None else max(q, 0.0)


def inner(f: Field, g: Field) -> float:
    """Discrete L2 pairing h^N sum f_i g_i."""
    f.check_grid(g)
    return float(np.dot(f.values, g.values) * f.grid.cell)


def frequencies(g: Grid) -> np.ndarray:
    """|xi| per node in FFT order, shape ``g.shape``."""
    ax = 2.0 * np.pi * np.fft.fftfreq(g.n_axis, d=g.h)
    if g.dim == 1:
        return np.abs(ax)
    X, Y = np.meshgrid(ax, ax, indexing="ij")
    return np.sqrt(X * X + Y * Y)


def fourier_multiplier(g: Grid, values: np.ndarray, symbol: np.ndarray) -> np.ndarray:
    spectrum = np.fft.fftn(np.asarray(values, dtype=float).reshape(g.shape))
    return np.real(np.fft.ifftn(spectrum * symbol)).ravel()


def fourier_apply(sigma: float, f: Field) -> Field:
    """Exact multiplier |xi|^sigma in the discrete Fourier basis of ``f``'s grid.

    Raises
    ------
    DomainError
        On a non-periodic grid.
    """
    g = f.grid
    if g.mode != "periodic":
        raise DomainError("fourier_apply needs a periodic grid")
    if not 0.0 < sigma < 4.0:
        raise DomainError(f"order {sigma} outside (0, 4)")
    return Field(g, fourier_multiplier(g, f.values, frequencies(g) ** sigma), f.time)


def operator_symbol(L: DiscreteOperator) -> np.ndarray:
    """Eigenvalues of a periodic translation-invariant operator, FFT order."""
    g = L.grid
    if g.mode != "periodic" or not L.kernel.translation_invariant:
        raise DomainError("symbol defined for translation-invariant operators on periodic grids")
    e0 = np.zeros(g.size)
    e0[0] = 1.0
    col = L.apply_values(e0).reshape(g.shape)
    return np.real(np.fft.fftn(col))


# ---------------------------------------------------------------------------
# Stroock-Varopoulos


@dataclass(frozen=True)
class ScalarMap:
    """A scalar map with its derivative, both vectorised."""

    fn: Callable
    prime: Callable
    name: str = ""

    def __call__(self, s):
        return self.fn(np.asarray(s, dtype=float))


def identity_map() -> ScalarMap:
    return ScalarMap(lambda s: s, lambda s: np.ones_like(np.asarray(s, dtype=float)), "id")


def power_triple(m: float):
    """(F, G, H) with F = |s|^(m-1)s, G = s, H = (2 sqrt(m)/(m+1)) |s|^((m-1)/2) s."""
    cH = 2.0 * math.sqrt(m) / (m + 1.0)
    F = ScalarMap(lambda s: np.abs(s) ** (m - 1.0) * s, lambda s: m * np.abs(s) ** (m - 1.0), f"pow{m}")
    G = identity_map()
    H = ScalarMap(lambda s: cH * np.abs(s) ** (0.5 * (m - 1.0)) * s,
                  lambda s: cH * 0.5 * (m + 1.0) * np.abs(s) ** (0.5 * (m - 1.0)), f"H{m}")
    return F, G, H


def identity_triple():
    i = identity_map()
    return i, i, i


@dataclass(frozen=True)
class SVReport:
    lhs: float  # quadratic(H(u))
    rhs: float  # bilinear(F(u), G(u))
    gap: float
    tolerance: float
    passed: bool


def check_stroock_varopoulos(L: DiscreteOperator, u: Field, F: ScalarMap, G: ScalarMap, H: ScalarMap,
                             samples: int = 2001) -> SVReport:
    """Gap quadratic(H(u)) - bilinear(F(u), G(u)); passes when <= 1e-10 * scale.

    ``scale`` is 1 + |lhs| + |rhs|.

    Raises
    ------
    DomainError
        If (H')^2 <= F'G' fails on the range of ``u``.
    """
    lo, hi = float(np.min(u.values)), float(np.max(u.values))
    s = np.linspace(lo, hi, samples) if hi > lo else np.array([lo])
    dH = H.prime(s)
    prod = F.prime(s) * G.prime(s)
    if np.any(dH * dH > prod * (1.0 + 1e-12) + 1e-300):
        i = int(np.argmax(dH * dH - prod))
        raise DomainError(f"(H')^2 > F'G' at s = {s[i]:.6g}: triple violates the precondition")
    lhs = bilinear(L, u.with_values(H(u.values)), u.with_values(H(u.values)))
    rhs = bilinear(L, u.with_values(F(u.values)), u.with_values(G(u.values)))
    gap = lhs - rhs
    tol = 1e-10 * (1.0 + abs(lhs) + abs(rhs))
    return SVReport(lhs, rhs, gap, tol, bool(gap <= tol))


# ---------------------------------------------------------------------------
# comparability of energy forms


@dataclass(frozen=True)
class ComparabilityReport:
    c1: float  # min quadratic_frac / quadratic_L
    c2: float  # max quadratic_frac / (||f||_2^2 + quadratic_L)
    n_fields: int


def comparability(L: DiscreteOperator, L_frac: DiscreteOperator, fields) -> ComparabilityReport:
    """Empirical constants c1, c2 relating the kernel energy and the fractional one."""
    c1 = math.inf
    c2 = 0.0
    count = 0
    for f in fields:
        qL = quadratic(L, f)
        qF = quadratic(L_frac, f)
        nrm = inner(f, f)
        if qL > 0:
            c1 = min(c1, qF / qL)
        if nrm + qL > 0:
            c2 = max(c2, qF / (nrm + qL))
        count += 1
    return ComparabilityReport(c1, c2, count)
