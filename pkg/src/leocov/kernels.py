"""Hot quadrature and solver kernels, each with a numba and a numpy path.

The coverage integrals all reduce to one primitive: the time-averaged squared
mismatch between a sum of triangular intensity profiles and a wrapped Gaussian
mixture demand over one arc of the circle.

Rotating the satellites by ``omega * tau`` is the same as rotating the demand
the other way, so the breakpoints (and hence the intensity at every node) are
computed once and only the demand is re-evaluated per time sample.
"""

from __future__ import annotations

import math

import numpy as np

from ._accel import USE_NUMBA, njit

TWO_PI = 2.0 * math.pi
INV_SQRT_2PI = 1.0 / math.sqrt(2.0 * math.pi)
DEMAND_WRAPS = 3
MAX_PIECE = 0.25  # rad; longer pieces are split so GL accuracy does not depend on gaps


def gauss_legendre(order: int) -> tuple[np.ndarray, np.ndarray]:
    """Nodes and weights on [-1, 1]."""
    x, w = np.polynomial.legendre.leggauss(order)
    return np.ascontiguousarray(x), np.ascontiguousarray(w)


# --------------------------------------------------------------------------
# numba path


@njit
def _wrap_pi_nb(d):
    return (d + math.pi) % TWO_PI - math.pi


@njit
def _demand_nb(theta, means, sigmas, weights, scale, wraps):
    total = 0.0
    for c in range(means.shape[0]):
        inv = 1.0 / sigmas[c]
        acc = 0.0
        for r in range(-wraps, wraps + 1):
            z = (_wrap_pi_nb(theta - means[c]) + TWO_PI * r) * inv
            acc += math.exp(-0.5 * z * z)
        total += weights[c] * inv * INV_SQRT_2PI * acc
    return scale * total


@njit
def _breakpoints_nb(lo, hi, centers, alphas):
    n = centers.shape[0]
    buf = np.empty(3 * n + 2)
    m = 0
    buf[m] = lo
    m += 1
    for j in range(n):
        for s in range(-1, 2):
            base = centers[j] + s * alphas[j]
            t = lo + (base - lo) % TWO_PI
            if t > lo and t < hi:
                buf[m] = t
                m += 1
    buf[m] = hi
    m += 1
    bp = np.sort(buf[:m])
    total = 1
    for p in range(m - 1):
        total += max(1, int(math.ceil((bp[p + 1] - bp[p]) / MAX_PIECE)))
    out = np.empty(total)
    out[0] = bp[0]
    w = 1
    for p in range(m - 1):
        s = max(1, int(math.ceil((bp[p + 1] - bp[p]) / MAX_PIECE)))
        h = (bp[p + 1] - bp[p]) / s
        for q in range(1, s):
            out[w] = bp[p] + q * h
            w += 1
        out[w] = bp[p + 1]
        w += 1
    return out


@njit
def _intensity_nb(x, centers, alphas, psis):
    rho = 0.0
    for j in range(centers.shape[0]):
        d = abs(_wrap_pi_nb(x - centers[j]))
        if d < alphas[j]:
            rho += psis[j] * (1.0 - d / alphas[j])
    return rho


@njit
def _arc_quadrature_nb(lo, hi, centers, alphas, psis, means, sigmas, weights,
                       scale, n_tau, gl_x, gl_w, wraps):
    bp = _breakpoints_nb(lo, hi, centers, alphas)
    npiece = bp.shape[0] - 1
    g = gl_x.shape[0]
    nodes = np.empty(npiece * g)
    wts = np.empty(npiece * g)
    rho = np.empty(npiece * g)
    for p in range(npiece):
        a = bp[p]
        h = bp[p + 1] - a
        for q in range(g):
            x = a + 0.5 * h * (gl_x[q] + 1.0)
            nodes[p * g + q] = x
            wts[p * g + q] = 0.5 * h * gl_w[q]
            rho[p * g + q] = _intensity_nb(x, centers, alphas, psis)
    total = 0.0
    for m in range(n_tau):
        shift = TWO_PI * m / n_tau
        acc = 0.0
        for i in range(nodes.shape[0]):
            e = rho[i] - _demand_nb(nodes[i] + shift, means, sigmas, weights, scale, wraps)
            acc += wts[i] * e * e
        total += acc
    return 0.5 * total / n_tau


@njit
def _ball_project_nb(U, r):
    for k in range(U.shape[0] // 2):
        a = U[2 * k]
        b = U[2 * k + 1]
        nrm = math.sqrt(a * a + b * b)
        if nrm > r:
            s = r / nrm
            U[2 * k] = a * s
            U[2 * k + 1] = b * s


@njit
def _apg_nb(H, g, r, U0, L, max_iter, tol):
    n = U0.shape[0]
    U = U0.copy()
    _ball_project_nb(U, r)
    Y = U.copy()
    t = 1.0
    f_old = 0.5 * U @ (H @ U) + g @ U
    res = np.inf
    it = 0
    while it < max_iter:
        it += 1
        Un = Y - (H @ Y + g) / L
        _ball_project_nb(Un, r)
        f_new = 0.5 * Un @ (H @ Un) + g @ Un
        if f_new > f_old:
            # non-monotone step: drop momentum and retry from U
            Y[:] = U
            t = 1.0
            continue
        t_new = 0.5 * (1.0 + math.sqrt(1.0 + 4.0 * t * t))
        Y = Un + ((t - 1.0) / t_new) * (Un - U)
        U = Un
        t = t_new
        f_old = f_new
        Z = U - (H @ U + g) / L
        _ball_project_nb(Z, r)
        res = 0.0
        for i in range(n):
            res += (U[i] - Z[i]) ** 2
        res = L * math.sqrt(res)
        if res < tol:
            break
    return U, it, res


# --------------------------------------------------------------------------
# numpy path


def _wrap_pi_np(d):
    return np.mod(d + math.pi, TWO_PI) - math.pi


def _demand_np(theta, means, sigmas, weights, scale, wraps):
    theta = np.asarray(theta, dtype=float)
    r = np.arange(-wraps, wraps + 1) * TWO_PI
    # reduce to the principal image first so the wrap window is centered
    d = _wrap_pi_np(theta[..., None] - means)
    z = (d[..., None] + r) / sigmas[:, None]
    comp = np.exp(-0.5 * z * z).sum(axis=-1) * (weights / sigmas * INV_SQRT_2PI)
    return scale * comp.sum(axis=-1)


def _breakpoints_np(lo, hi, centers, alphas):
    base = (centers[:, None] + np.array([-1.0, 0.0, 1.0])[None, :] * alphas[:, None]).ravel()
    t = lo + np.mod(base - lo, TWO_PI)
    inner = t[(t > lo) & (t < hi)]
    bp = np.sort(np.concatenate([[lo], inner, [hi]]))
    out = [bp[:1]]
    for a, b in zip(bp[:-1], bp[1:]):
        s = max(1, int(math.ceil((b - a) / MAX_PIECE)))
        h = (b - a) / s
        out.append(a + h * np.arange(1, s))
        out.append(np.array([b]))
    return np.concatenate(out)


def _intensity_np(x, centers, alphas, psis):
    x = np.asarray(x, dtype=float)
    d = np.abs(_wrap_pi_np(x[..., None] - centers))
    return np.where(d < alphas, psis * (1.0 - d / alphas), 0.0).sum(axis=-1)


def _arc_quadrature_np(lo, hi, centers, alphas, psis, means, sigmas, weights,
                       scale, n_tau, gl_x, gl_w, wraps):
    bp = _breakpoints_np(lo, hi, centers, alphas)
    a = bp[:-1, None]
    h = np.diff(bp)[:, None]
    nodes = (a + 0.5 * h * (gl_x[None, :] + 1.0)).ravel()
    wts = (0.5 * h * gl_w[None, :]).ravel()
    rho = _intensity_np(nodes, centers, alphas, psis)
    shifts = TWO_PI * np.arange(n_tau) / n_tau
    mu = _demand_np(nodes[None, :] + shifts[:, None], means, sigmas, weights, scale, wraps)
    err = rho[None, :] - mu
    return 0.5 * float((err * err * wts[None, :]).sum(axis=1).sum()) / n_tau


def _apg_np(H, g, r, U0, L, max_iter, tol):
    def proj(V):
        V2 = V.reshape(-1, 2)
        nrm = np.sqrt((V2 * V2).sum(axis=1))
        s = np.where(nrm > r, r / np.where(nrm > 0, nrm, 1.0), 1.0)
        return (V2 * s[:, None]).ravel()

    U = proj(np.array(U0, dtype=float))
    Y = U.copy()
    t = 1.0
    f_old = 0.5 * U @ (H @ U) + g @ U
    res = np.inf
    it = 0
    while it < max_iter:
        it += 1
        Un = proj(Y - (H @ Y + g) / L)
        f_new = 0.5 * Un @ (H @ Un) + g @ Un
        if f_new > f_old:
            Y = U.copy()
            t = 1.0
            continue
        t_new = 0.5 * (1.0 + math.sqrt(1.0 + 4.0 * t * t))
        Y = Un + ((t - 1.0) / t_new) * (Un - U)
        U = Un
        t = t_new
        f_old = f_new
        res = L * float(np.linalg.norm(U - proj(U - (H @ U + g) / L)))
        if res < tol:
            break
    return U, it, res


# --------------------------------------------------------------------------
# dispatch


def arc_quadrature(lo, hi, centers, alphas, psis, demand_arrays, n_tau, gl, *, use_numba=None):
    """Half the time-averaged integral of (intensity - demand)^2 over [lo, hi].

    ``demand_arrays`` is ``(means, sigmas, weights, scale)``; ``gl`` is a
    Gauss-Legendre ``(nodes, weights)`` pair used on every piece between
    consecutive intensity breakpoints.
    """
    means, sigmas, weights, scale = demand_arrays
    fn = _arc_quadrature_nb if (USE_NUMBA if use_numba is None else use_numba) else _arc_quadrature_np
    return float(fn(float(lo), float(hi),
                    np.ascontiguousarray(centers, dtype=float),
                    np.ascontiguousarray(alphas, dtype=float),
                    np.ascontiguousarray(psis, dtype=float),
                    means, sigmas, weights, float(scale), int(n_tau),
                    gl[0], gl[1], DEMAND_WRAPS))


def demand_values(theta, demand_arrays):
    means, sigmas, weights, scale = demand_arrays
    return _demand_np(theta, means, sigmas, weights, scale, DEMAND_WRAPS)


def intensity_values(theta, centers, alphas, psis):
    return _intensity_np(theta, np.asarray(centers, float), np.asarray(alphas, float),
                         np.asarray(psis, float))


def apg_ball_qp(H, g, r, U0, L, max_iter, tol, *, use_numba=None):
    """Accelerated projected gradient for min 0.5 U'HU + g'U, ||u_k|| <= r."""
    fn = _apg_nb if (USE_NUMBA if use_numba is None else use_numba) else _apg_np
    U, it, res = fn(np.ascontiguousarray(H, dtype=float), np.ascontiguousarray(g, dtype=float),
                    float(r), np.ascontiguousarray(U0, dtype=float), float(L),
                    int(max_iter), float(tol))
    return np.asarray(U), int(it), float(res)
