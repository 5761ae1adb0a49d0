"""Compiled single-chain stepping kernels.

Potentials are encoded for the kernels as an integer kind plus a flat float
parameter vector so one compiled function covers every built-in potential:

    kind 0 (harmonic):      pp = [stiffness]
    kind 1 (double well):   pp = [well_scale]
    kind 2 (LJ + confinement): pp = [n_particles, space_dim, confinement_stiffness,
                                     epsilon, sigma]

The pointwise energy/gradient helpers here are the single source of truth for
scalar evaluation; the Python-level potential objects call into them so a
trajectory driven step by step is bit-identical to one produced by
``advance_chain``.
"""

import numpy as np
from numba import njit

KIND_HARMONIC = 0
KIND_DOUBLE_WELL = 1
KIND_LJ_CONFINED = 2

NO_ESCAPE = -1


@njit(cache=True, nogil=True)
def energy_point(kind, pp, x):
    if kind == KIND_HARMONIC:
        k = pp[0]
        s = 0.0
        for i in range(x.shape[0]):
            s += x[i] * x[i]
        return 0.5 * k * s
    if kind == KIND_DOUBLE_WELL:
        a = pp[0]
        s = 0.0
        for i in range(x.shape[0]):
            q = x[i] * x[i] - 1.0
            s += a * q * q
        return s
    # Lennard-Jones pairs (shifted +eps each so the sum stays >= 0) plus
    # quadratic confinement.
    n = int(pp[0])
    nu = int(pp[1])
    kc = pp[2]
    eps = pp[3]
    sig2 = pp[4] * pp[4]
    u = 0.0
    for i in range(x.shape[0]):
        u += 0.5 * kc * x[i] * x[i]
    for i in range(n):
        for j in range(i + 1, n):
            r2 = 0.0
            for a in range(nu):
                dxa = x[i * nu + a] - x[j * nu + a]
                r2 += dxa * dxa
            if r2 <= 0.0:
                return np.inf
            inv6 = (sig2 / r2) ** 3
            if inv6 == np.inf:
                return np.inf
            u += 4.0 * eps * (inv6 * inv6 - inv6) + eps
    return u


@njit(cache=True, nogil=True)
def gradient_point(kind, pp, x, out):
    """Fill ``out`` with the potential gradient at ``x`` (assumed inside the domain)."""
    if kind == KIND_HARMONIC:
        k = pp[0]
        for i in range(x.shape[0]):
            out[i] = k * x[i]
        return
    if kind == KIND_DOUBLE_WELL:
        a = pp[0]
        for i in range(x.shape[0]):
            out[i] = 4.0 * a * x[i] * (x[i] * x[i] - 1.0)
        return
    n = int(pp[0])
    nu = int(pp[1])
    kc = pp[2]
    eps = pp[3]
    sig2 = pp[4] * pp[4]
    for i in range(x.shape[0]):
        out[i] = kc * x[i]
    for i in range(n):
        for j in range(i + 1, n):
            r2 = 0.0
            for a in range(nu):
                dxa = x[i * nu + a] - x[j * nu + a]
                r2 += dxa * dxa
            inv6 = (sig2 / r2) ** 3
            coef = 24.0 * eps * (inv6 - 2.0 * inv6 * inv6) / r2
            for a in range(nu):
                dxa = x[i * nu + a] - x[j * nu + a]
                out[i * nu + a] += coef * dxa
                out[j * nu + a] -= coef * dxa


@njit(cache=True, nogil=True)
def advance_chain(
    x,
    y,
    g,
    delta,
    gamma,
    beta,
    threshold,
    stopped,
    escape_energy,
    kind,
    pp,
    out_h,
    rec,
    rec_stride,
    rec_count,
    step0,
):
    """Advance one chain by ``g.shape[0]`` steps in place.

    g            pre-drawn standard normals, one row per step
    out_h        if non-empty, receives the post-step Hamiltonian of every step
    rec          if non-empty, receives flattened (x, y) states; a state is
                 recorded after global step s (1-based) whenever s % rec_stride == 0
    rec_count    rows of ``rec`` already filled by earlier segments
    step0        number of steps taken before this segment

    Returns (rejections, escape_step, max_h, max_u, rec_count). escape_step is
    NO_ESCAPE unless the unstopped variant proposed a state that is non-finite
    or has potential energy above ``escape_energy``; the pre-step state is then
    left in (x, y).
    """
    d = x.shape[0]
    k = g.shape[0]
    sq = np.sqrt(2.0 * gamma * delta / beta)
    grad = np.empty(d)
    xp = np.empty(d)
    yp = np.empty(d)

    u_cur = energy_point(kind, pp, x)
    kin = 0.0
    for i in range(d):
        kin += y[i] * y[i]
    h_cur = u_cur + 0.5 * kin
    max_h = h_cur
    max_u = u_cur
    rejections = 0

    for s in range(k):
        gradient_point(kind, pp, x, grad)
        kin = 0.0
        for i in range(d):
            yp[i] = y[i] - delta * grad[i] - delta * gamma * y[i] + sq * g[s, i]
            xp[i] = x[i] + delta * yp[i]
            kin += yp[i] * yp[i]
        u_prop = energy_point(kind, pp, xp)
        h_prop = u_prop + 0.5 * kin

        if stopped:
            if h_prop <= threshold:
                for i in range(d):
                    x[i] = xp[i]
                    y[i] = yp[i]
                u_cur = u_prop
                h_cur = h_prop
            else:
                rejections += 1
        else:
            ok = u_prop <= escape_energy  # false for inf and nan
            if ok:
                for i in range(d):
                    if not (np.isfinite(xp[i]) and np.isfinite(yp[i])):
                        ok = False
                        break
            if not ok:
                return rejections, step0 + s, max_h, max_u, rec_count
            for i in range(d):
                x[i] = xp[i]
                y[i] = yp[i]
            u_cur = u_prop
            h_cur = h_prop

        if h_cur > max_h:
            max_h = h_cur
        if u_cur > max_u:
            max_u = u_cur
        if out_h.shape[0] > 0:
            out_h[s] = h_cur
        if rec.shape[0] > 0 and (step0 + s + 1) % rec_stride == 0:
            for i in range(d):
                rec[rec_count, i] = x[i]
                rec[rec_count, d + i] = y[i]
            rec_count += 1

    return rejections, NO_ESCAPE, max_h, max_u, rec_count


_EMPTY_H = np.empty(0)
_EMPTY_REC = np.empty((0, 0))


def empty_h():
    return _EMPTY_H


def empty_rec():
    return _EMPTY_REC
