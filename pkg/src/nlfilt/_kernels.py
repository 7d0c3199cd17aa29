"""Hot inner loops.

Every kernel exists twice: a loop form (``*_loop``), compiled by numba when
the numba backend is active, and a vectorised numpy form (``*_numpy``). The
unsuffixed name is bound to whichever backend :mod:`nlfilt._accel` selected.
Both forms must agree to rounding; ``tests/test_kernels.py`` enforces it and
``benchmarks/bench_backends.py`` times them against each other.
"""

import math

import numpy as np

from ._accel import HAVE_NUMBA, jit

FORM_FRACTIONAL = 0
FORM_TRUNCATED = 1
FORM_OSCILLATING = 2
TRUNCATION_RADIUS = 3.0


# ---------------------------------------------------------------------------
# kernel evaluation on pairs of points


def _kernel_pairs_loop(form, sigma, norm, eps, x, y):
    n, dim = x.shape
    out = np.empty(n)
    for k in range(n):
        r2 = 0.0
        for d in range(dim):
            dz = x[k, d] - y[k, d]
            r2 += dz * dz
        r = math.sqrt(r2)
        base = r ** (-dim - sigma)
        if form == FORM_FRACTIONAL:
            out[k] = norm * base
        elif form == FORM_TRUNCATED:
            out[k] = base if r <= TRUNCATION_RADIUS else 0.0
        else:
            out[k] = base * (1.0 + eps * math.sin(1.0 / r) * math.sin(x[k, 0] + y[k, 0]))
    return out


def kernel_pairs_numpy(form, sigma, norm, eps, x, y):
    r = np.sqrt(np.sum((x - y) ** 2, axis=1))
    dim = x.shape[1]
    with np.errstate(divide="ignore"):
        base = r ** (-dim - sigma)
    if form == FORM_FRACTIONAL:
        return norm * base
    if form == FORM_TRUNCATED:
        return np.where(r <= TRUNCATION_RADIUS, base, 0.0)
    return base * (1.0 + eps * np.sin(1.0 / r) * np.sin(x[:, 0] + y[:, 0]))


kernel_pairs_loop = jit(_kernel_pairs_loop)


# ---------------------------------------------------------------------------
# dense midpoint weights W_ij = J(x_i, x_j) h^N (+ periodic images)


def _midpoint_weights_loop(form, sigma, norm, eps, coords, cell, period, n_images):
    n, dim = coords.shape
    w = np.zeros((n, n))
    for i in range(n):
        for j in range(i + 1, n):
            acc = 0.0
            if dim == 1:
                for a in range(-n_images, n_images + 1):
                    dz = coords[j, 0] + a * period - coords[i, 0]
                    r = abs(dz)
                    if r == 0.0:
                        continue
                    base = r ** (-1.0 - sigma)
                    if form == FORM_FRACTIONAL:
                        acc += norm * base
                    elif form == FORM_TRUNCATED:
                        if r <= TRUNCATION_RADIUS:
                            acc += base
                    else:
                        acc += base * (1.0 + eps * math.sin(1.0 / r)
                                       * math.sin(coords[i, 0] + coords[j, 0] + a * period))
            else:
                for a in range(-n_images, n_images + 1):
                    for b in range(-n_images, n_images + 1):
                        dz0 = coords[j, 0] + a * period - coords[i, 0]
                        dz1 = coords[j, 1] + b * period - coords[i, 1]
                        r = math.sqrt(dz0 * dz0 + dz1 * dz1)
                        if r == 0.0:
                            continue
                        base = r ** (-2.0 - sigma)
                        if form == FORM_FRACTIONAL:
                            acc += norm * base
                        elif form == FORM_TRUNCATED:
                            if r <= TRUNCATION_RADIUS:
                                acc += base
                        else:
                            acc += base * (1.0 + eps * math.sin(1.0 / r)
                                           * math.sin(coords[i, 0] + coords[j, 0] + a * period))
            w[i, j] = acc * cell
            w[j, i] = acc * cell
    return w


def midpoint_weights_numpy(form, sigma, norm, eps, coords, cell, period, n_images):
    n, dim = coords.shape
    w = np.zeros((n, n))
    shifts = np.arange(-n_images, n_images + 1) * period
    if dim == 1:
        image_offsets = shifts[:, None]
    else:
        image_offsets = np.stack(np.meshgrid(shifts, shifts, indexing="ij"), axis=-1).reshape(-1, 2)
    for off in image_offsets:
        dz = coords[None, :, :] + off[None, None, :] - coords[:, None, :]
        r = np.sqrt(np.sum(dz * dz, axis=-1))
        with np.errstate(divide="ignore", invalid="ignore"):
            base = r ** (-dim - sigma)
            if form == FORM_FRACTIONAL:
                val = norm * base
            elif form == FORM_TRUNCATED:
                val = np.where(r <= TRUNCATION_RADIUS, base, 0.0)
            else:
                s = coords[:, None, 0] + coords[None, :, 0] + off[0]
                val = base * (1.0 + eps * np.sin(1.0 / r) * np.sin(s))
        val[r == 0.0] = 0.0
        w += val
    np.fill_diagonal(w, 0.0)
    w *= cell
    # enforce exact symmetry, the loop form writes both triangles from one value
    iu = np.triu_indices(n, 1)
    w[(iu[1], iu[0])] = w[iu]
    return w


midpoint_weights_loop = jit(_midpoint_weights_loop)


# ---------------------------------------------------------------------------
# pair energy 1/2 sum_ij W_ij (f_i - f_j)(g_i - g_j)


def _pair_energy_loop(w, f, g):
    n = f.shape[0]
    acc = 0.0
    for i in range(n):
        row = 0.0
        fi = f[i]
        gi = g[i]
        for j in range(i + 1, n):
            row += w[i, j] * (fi - f[j]) * (gi - g[j])
        acc += row
    return acc


def pair_energy_numpy(w, f, g):
    df = f[:, None] - f[None, :]
    dg = g[:, None] - g[None, :]
    return 0.5 * float(np.sum(w * df * dg))


pair_energy_loop = jit(_pair_energy_loop)


# ---------------------------------------------------------------------------
# scalar monotone solve  u + c * coef * |u|^(m-1) u = r   (nodewise)


def _solve_power_scalar_loop(c, r, coef, m):
    n = r.shape[0]
    out = np.empty(n)
    for i in range(n):
        ri = r[i]
        ci = c[i] * coef
        if ri == 0.0:
            out[i] = 0.0
            continue
        sgn = 1.0 if ri > 0.0 else -1.0
        target = abs(ri)
        # root of F(v) = v + ci v^m - target on [0, target]
        lo = 0.0
        hi = target
        v = target
        for _ in range(200):
            fv = v + ci * v ** m - target
            if fv > 0.0:
                hi = v
            else:
                lo = v
            dfv = 1.0 + ci * m * v ** (m - 1.0) if v > 0.0 else 1.0
            vn = v - fv / dfv
            if vn <= lo or vn >= hi:
                vn = 0.5 * (lo + hi)
            if abs(vn - v) <= 1e-16 * max(1.0, target):
                v = vn
                break
            v = vn
        out[i] = sgn * v
    return out


def solve_power_scalar_numpy(c, r, coef, m):
    sgn = np.sign(r)
    target = np.abs(r)
    ci = c * coef
    lo = np.zeros_like(target)
    hi = target.copy()
    v = target.copy()
    for _ in range(200):
        fv = v + ci * v ** m - target
        hi = np.where(fv > 0.0, v, hi)
        lo = np.where(fv > 0.0, lo, v)
        with np.errstate(divide="ignore", invalid="ignore"):
            dfv = np.where(v > 0.0, 1.0 + ci * m * v ** (m - 1.0), 1.0)
        vn = v - fv / dfv
        bad = (vn <= lo) | (vn >= hi)
        vn = np.where(bad, 0.5 * (lo + hi), vn)
        done = np.abs(vn - v) <= 1e-16 * np.maximum(1.0, target)
        v = vn
        if np.all(done):
            break
    return sgn * v


solve_power_scalar_loop = jit(_solve_power_scalar_loop)


# ---------------------------------------------------------------------------
# B_psi(w) = int_0^{(w-psi)+} theta'(s + psi) s ds,
# theta'(v) = a * b * p * |b v + c|^(p-1): adaptive Simpson per node.
# For p < 1 the piece touching the singular point v0 = -c/b is integrated in
# the variable tau with s = end +- tau^(1/p), which makes the integrand smooth.


def _dtheta(v, a, b, c, p):
    if p == 1.0:
        return a * b
    z = abs(b * v + c)
    if z == 0.0:
        return math.inf if p < 1.0 else 0.0
    return a * b * p * z ** (p - 1.0)


def _dtheta_offset(delta, a, b, p):
    # theta' at distance delta from the singular point, without cancellation
    z = abs(b * delta)
    if z == 0.0:
        return math.inf if p < 1.0 else 0.0
    return a * b * p * z ** (p - 1.0)


def _make_piece_eval(dtheta, dtheta_offset):
    def _piece_eval(tau, lo, hi, mode, k, tspan, psi, a, b, c, p):
        if mode == 0:
            s = tau
            return dtheta(s + psi, a, b, c, p) * s
        if tau == 0.0:
            tau = 1e-8 * tspan
        tk = tau ** k
        s = lo + tk if mode == 1 else hi - tk
        return dtheta_offset(tk, a, b, p) * s * k * tk / tau

    return _piece_eval


def _make_bpsi_loop(piece_eval):
    def _bpsi_loop(w, psi, a, b, c, p, tol, max_depth):
        n = w.shape[0]
        out = np.zeros(n)
        evals = np.zeros(n, dtype=np.int64)
        cap = 2 * max_depth + 8
        st_x0 = np.empty(cap)
        st_x1 = np.empty(cap)
        st_f0 = np.empty(cap)
        st_fm = np.empty(cap)
        st_f1 = np.empty(cap)
        st_s = np.empty(cap)
        st_t = np.empty(cap)
        st_d = np.empty(cap, dtype=np.int64)
        k = 1.0 / p if p < 1.0 else 1.0
        v0 = -c / b
        for i in range(n):
            d = w[i] - psi[i]
            if d <= 0.0:
                continue
            cut = v0 - psi[i]
            piece_lo = np.zeros(2)
            piece_hi = np.zeros(2)
            piece_mode = np.zeros(2, dtype=np.int64)
            npieces = 1
            piece_hi[0] = d
            if p < 1.0:
                if cut > 0.0 and cut < d:
                    npieces = 2
                    piece_hi[0] = cut
                    piece_mode[0] = 2
                    piece_lo[1] = cut
                    piece_hi[1] = d
                    piece_mode[1] = 1
                elif cut == 0.0:
                    piece_mode[0] = 1
                elif cut == d:
                    piece_mode[0] = 2
            total = 0.0
            count = 0
            for q in range(npieces):
                lo = piece_lo[q]
                hi = piece_hi[q]
                mode = piece_mode[q]
                if mode == 0:
                    t0 = lo
                    t1 = hi
                else:
                    t0 = 0.0
                    t1 = (hi - lo) ** (1.0 / k)
                tspan = t1 - t0
                f0 = piece_eval(t0, lo, hi, mode, k, tspan, psi[i], a, b, c, p)
                f1 = piece_eval(t1, lo, hi, mode, k, tspan, psi[i], a, b, c, p)
                fm = piece_eval(0.5 * (t0 + t1), lo, hi, mode, k, tspan, psi[i], a, b, c, p)
                count += 3
                whole = tspan / 6.0 * (f0 + 4.0 * fm + f1)
                st_x0[0] = t0
                st_x1[0] = t1
                st_f0[0] = f0
                st_fm[0] = fm
                st_f1[0] = f1
                st_s[0] = whole
                st_t[0] = tol * max(1.0, abs(whole)) / npieces
                st_d[0] = 0
                top = 1
                while top > 0:
                    top -= 1
                    x0 = st_x0[top]
                    x1 = st_x1[top]
                    g0 = st_f0[top]
                    gm = st_fm[top]
                    g1 = st_f1[top]
                    s_whole = st_s[top]
                    t_loc = st_t[top]
                    dep = st_d[top]
                    xm = 0.5 * (x0 + x1)
                    gl = piece_eval(0.5 * (x0 + xm), lo, hi, mode, k, tspan, psi[i], a, b, c, p)
                    gr = piece_eval(0.5 * (xm + x1), lo, hi, mode, k, tspan, psi[i], a, b, c, p)
                    count += 2
                    s_left = (xm - x0) / 6.0 * (g0 + 4.0 * gl + gm)
                    s_right = (x1 - xm) / 6.0 * (gm + 4.0 * gr + g1)
                    delta = s_left + s_right - s_whole
                    if dep >= max_depth or not abs(delta) > 15.0 * t_loc:
                        total += s_left + s_right + delta / 15.0
                    else:
                        st_x0[top] = xm
                        st_x1[top] = x1
                        st_f0[top] = gm
                        st_fm[top] = gr
                        st_f1[top] = g1
                        st_s[top] = s_right
                        st_t[top] = 0.5 * t_loc
                        st_d[top] = dep + 1
                        top += 1
                        st_x0[top] = x0
                        st_x1[top] = xm
                        st_f0[top] = g0
                        st_fm[top] = gl
                        st_f1[top] = gm
                        st_s[top] = s_left
                        st_t[top] = 0.5 * t_loc
                        st_d[top] = dep + 1
                        top += 1
            out[i] = total
            evals[i] = count
        return out, evals

    return _bpsi_loop


if HAVE_NUMBA:
    _piece_eval_jit = jit(_make_piece_eval(jit(_dtheta), jit(_dtheta_offset)))
    bpsi_loop = jit(_make_bpsi_loop(_piece_eval_jit))
else:
    bpsi_loop = _make_bpsi_loop(_make_piece_eval(_dtheta, _dtheta_offset))


def _piece_eval_numpy(tau, lo, hi, mode, k, tspan, psi, a, b, c, p):
    tau = np.where((mode != 0) & (tau == 0.0), 1e-8 * tspan, tau)
    tk = tau ** k
    s = np.where(mode == 0, tau, np.where(mode == 1, lo + tk, hi - tk))
    with np.errstate(divide="ignore", invalid="ignore"):
        jac = np.where(mode == 0, 1.0, k * tk / tau)
    if p == 1.0:
        dth = np.full_like(s, a * b)
    else:
        z = np.where(mode == 0, np.abs(b * (s + psi) + c), np.abs(b * tk))
        with np.errstate(divide="ignore"):
            dth = a * b * p * z ** (p - 1.0)
    return dth * s * jac


def bpsi_numpy(w, psi, a, b, c, p, tol, max_depth):
    """Adaptive Simpson over a work list of intervals, all nodes at once.

    Same pieces, substitution and acceptance rule as the loop form; results
    agree to rounding (summation order differs).
    """
    n = w.shape[0]
    out = np.zeros(n)
    evals = np.zeros(n, dtype=np.int64)
    d = w - psi
    act = np.nonzero(d > 0.0)[0]
    if act.size == 0:
        return out, evals
    k = 1.0 / p if p < 1.0 else 1.0
    cut = (-c / b) - psi[act]
    dd = d[act]
    inner = (p < 1.0) & (cut > 0.0) & (cut < dd)
    single_mode = np.zeros(act.size, dtype=np.int64)
    if p < 1.0:
        single_mode[cut == 0.0] = 1
        single_mode[cut == dd] = 2
    node = np.concatenate([act, act[inner]])
    lo = np.concatenate([np.zeros(act.size), cut[inner]])
    hi = np.concatenate([np.where(inner, cut, dd), dd[inner]])
    mode = np.concatenate([np.where(inner, 2, single_mode), np.ones(int(inner.sum()), dtype=np.int64)])
    npieces = np.concatenate([np.where(inner, 2.0, 1.0), np.full(int(inner.sum()), 2.0)])
    t0 = np.where(mode == 0, lo, 0.0)
    t1 = np.where(mode == 0, hi, np.abs(hi - lo) ** (1.0 / k))
    tspan = t1 - t0
    ps = psi[node]
    f0 = _piece_eval_numpy(t0, lo, hi, mode, k, tspan, ps, a, b, c, p)
    f1 = _piece_eval_numpy(t1, lo, hi, mode, k, tspan, ps, a, b, c, p)
    fm = _piece_eval_numpy(0.5 * (t0 + t1), lo, hi, mode, k, tspan, ps, a, b, c, p)
    np.add.at(evals, node, 3)
    whole = tspan / 6.0 * (f0 + 4.0 * fm + f1)
    tl = tol * np.maximum(1.0, np.abs(whole)) / npieces
    depth = np.zeros(node.size, dtype=np.int64)
    x0, x1 = t0, t1
    while node.size:
        ps = psi[node]
        xm = 0.5 * (x0 + x1)
        gl = _piece_eval_numpy(0.5 * (x0 + xm), lo, hi, mode, k, tspan, ps, a, b, c, p)
        gr = _piece_eval_numpy(0.5 * (xm + x1), lo, hi, mode, k, tspan, ps, a, b, c, p)
        np.add.at(evals, node, 2)
        s_left = (xm - x0) / 6.0 * (f0 + 4.0 * gl + fm)
        s_right = (x1 - xm) / 6.0 * (fm + 4.0 * gr + f1)
        delta = s_left + s_right - whole
        done = (depth >= max_depth) | ~(np.abs(delta) > 15.0 * tl)
        np.add.at(out, node[done], (s_left + s_right + delta / 15.0)[done])
        kp = ~done

        def twice(arr):
            return np.concatenate([arr[kp], arr[kp]])

        node, lo, hi, mode, tspan = twice(node), twice(lo), twice(hi), twice(mode), twice(tspan)
        x0, x1 = np.concatenate([x0[kp], xm[kp]]), np.concatenate([xm[kp], x1[kp]])
        f0, f1 = np.concatenate([f0[kp], fm[kp]]), np.concatenate([fm[kp], f1[kp]])
        fm = np.concatenate([gl[kp], gr[kp]])
        whole = np.concatenate([s_left[kp], s_right[kp]])
        tl = 0.5 * twice(tl)
        depth = twice(depth) + 1
    return out, evals


# ---------------------------------------------------------------------------
# matrix-free apply for 2D kernels that are not translation invariant


def _lazy_apply_2d_loop(form, sigma, norm, eps, coords, cell, f):
    n = coords.shape[0]
    out = np.zeros(n)
    for i in range(n):
        acc = 0.0
        xi0 = coords[i, 0]
        xi1 = coords[i, 1]
        for j in range(n):
            if j == i:
                continue
            dz0 = coords[j, 0] - xi0
            dz1 = coords[j, 1] - xi1
            r = math.sqrt(dz0 * dz0 + dz1 * dz1)
            base = r ** (-2.0 - sigma)
            if form == FORM_FRACTIONAL:
                wij = norm * base
            elif form == FORM_TRUNCATED:
                wij = base if r <= TRUNCATION_RADIUS else 0.0
            else:
                wij = base * (1.0 + eps * math.sin(1.0 / r) * math.sin(xi0 + coords[j, 0]))
            acc += wij * (f[i] - f[j])
        out[i] = acc * cell
    return out


def lazy_apply_2d_numpy(form, sigma, norm, eps, coords, cell, f, chunk=256):
    n = coords.shape[0]
    out = np.empty(n)
    for start in range(0, n, chunk):
        stop = min(n, start + chunk)
        block = coords[start:stop]
        dz = coords[None, :, :] - block[:, None, :]
        r = np.sqrt(np.sum(dz * dz, axis=-1))
        with np.errstate(divide="ignore", invalid="ignore"):
            base = r ** (-2.0 - sigma)
            if form == FORM_FRACTIONAL:
                wij = norm * base
            elif form == FORM_TRUNCATED:
                wij = np.where(r <= TRUNCATION_RADIUS, base, 0.0)
            else:
                wij = base * (1.0 + eps * np.sin(1.0 / r)
                              * np.sin(block[:, None, 0] + coords[None, :, 0]))
        wij[r == 0.0] = 0.0
        out[start:stop] = cell * np.sum(wij * (f[start:stop, None] - f[None, :]), axis=1)
    return out


lazy_apply_2d_loop = jit(_lazy_apply_2d_loop)


if HAVE_NUMBA:
    kernel_pairs = kernel_pairs_loop
    midpoint_weights = midpoint_weights_loop
    pair_energy = pair_energy_loop
    solve_power_scalar = solve_power_scalar_loop
    bpsi = bpsi_loop
    lazy_apply_2d = lazy_apply_2d_loop
else:
    kernel_pairs = kernel_pairs_numpy
    midpoint_weights = midpoint_weights_numpy
    pair_energy = pair_energy_numpy
    solve_power_scalar = solve_power_scalar_numpy
    bpsi = bpsi_numpy
    lazy_apply_2d = lazy_apply_2d_numpy
