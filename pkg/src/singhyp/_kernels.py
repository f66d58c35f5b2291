"""Numba kernels for the built-in map families.

Every kernel takes ``(code, prm, ...)`` where ``code`` selects the family and
``prm`` is the packed float64 parameter vector built by ``SingularMap``:

    GEOMETRIC_LORENZ  [A, B, nu0, nu]
    BELYKH            [k, lambda1, lambda2, mu1, mu2]
    STACKED_LORENZ    [A, B, nu0, nu, levels]

Branch labels are nonnegative ints; ``ON_N`` marks a point of the singular set
(for the stacked map this includes the excluded residual strip).
"""
import math

import numpy as np
from numba import njit

GEOMETRIC_LORENZ = 0
BELYKH = 1
STACKED_LORENZ = 2

ON_N = -1
ON_BOUNDARY = -2

COMPLETED = 0
SINGULAR_COLLAR = 1
ESCAPED = 2

ESCAPE_TOL = 1e-9

BASIS_NONE = 0
BASIS_TRIG3 = 1
BASIS_TRIG3_CONST = 2

# (i, j) index pairs of cos(pi i x) cos(pi j y), in storage order.
TRIG3_PAIRS = ((1, 0), (0, 1), (2, 0), (1, 1), (0, 2), (3, 0), (2, 1), (1, 2), (0, 3))


@njit(cache=True, nogil=True)
def _stacked_level(t, levels):
    # level k occupies y + 1 in (2^-k, 2^-k+1)
    lo = 1.0
    for k in range(levels):
        if t > lo:
            return k
        if t == lo:
            return ON_N
        lo *= 0.5
    return ON_N


@njit(cache=True, nogil=True)
def branch_of(code, prm, x, y):
    """Branch label of a point of the closed square, or ON_N."""
    if code == GEOMETRIC_LORENZ:
        if y > 0.0:
            return 0
        if y < 0.0:
            return 1
        return ON_N
    if code == BELYKH:
        kx = prm[0] * x
        if y > kx:
            return 0
        if y < kx:
            return 1
        return ON_N
    levels = int(prm[4])
    t = y + 1.0
    lev = _stacked_level(t, levels)
    if lev < 0:
        return ON_N
    yh = 2.0 ** (lev + 1) * t - 3.0
    if yh > 0.0:
        return 2 * lev
    if yh < 0.0:
        return 2 * lev + 1
    return ON_N


@njit(cache=True, nogil=True)
def _gl_apply(A, B, nu0, nu, s, x, y):
    ay = abs(y)
    p0 = ay ** nu0
    xn = (-B * p0 + B * x * s * ay ** nu + 1.0) * s
    yn = ((1.0 + A) * p0 - A) * s
    return xn, yn


@njit(cache=True, nogil=True)
def apply_branch(code, prm, b, x, y):
    """Evaluate the formula of branch ``b`` at (x, y).

    Valid on the closure of the branch domain; on N itself this yields the
    one-sided limit from the side of ``b``.
    """
    if code == GEOMETRIC_LORENZ:
        s = 1.0 if b == 0 else -1.0
        return _gl_apply(prm[0], prm[1], prm[2], prm[3], s, x, y)
    if code == BELYKH:
        if b == 0:
            return prm[1] * (x - 1.0) + 1.0, prm[2] * (y - 1.0) + 1.0
        return prm[3] * (x + 1.0) - 1.0, prm[4] * (y + 1.0) - 1.0
    lev = b // 2
    s = 1.0 if b % 2 == 0 else -1.0
    scale = 2.0 ** (lev + 1)
    yh = scale * (y + 1.0) - 3.0
    xb, yb = _gl_apply(prm[0], prm[1], prm[2], prm[3], s, x, yh)
    return xb, (yb + 3.0) / scale - 1.0


@njit(cache=True, nogil=True)
def _gl_jac(A, B, nu0, nu, s, x, y):
    ay = abs(y)
    a = B * ay ** nu
    b = -B * nu0 * ay ** (nu0 - 1.0) + B * x * nu * s * ay ** (nu - 1.0)
    d = (1.0 + A) * nu0 * ay ** (nu0 - 1.0)
    return a, b, 0.0, d


@njit(cache=True, nogil=True)
def jac_branch(code, prm, b, x, y):
    """Row-major entries (a, b, c, d) of the differential of branch ``b``."""
    if code == GEOMETRIC_LORENZ:
        s = 1.0 if b == 0 else -1.0
        return _gl_jac(prm[0], prm[1], prm[2], prm[3], s, x, y)
    if code == BELYKH:
        if b == 0:
            return prm[1], 0.0, 0.0, prm[2]
        return prm[3], 0.0, 0.0, prm[4]
    lev = b // 2
    s = 1.0 if b % 2 == 0 else -1.0
    scale = 2.0 ** (lev + 1)
    yh = scale * (y + 1.0) - 3.0
    a, bb, c, d = _gl_jac(prm[0], prm[1], prm[2], prm[3], s, x, yh)
    return a, bb * scale, c / scale, d


@njit(cache=True, nogil=True)
def _point_segment(px, py, ax, ay, bx, by):
    dx = bx - ax
    dy = by - ay
    den = dx * dx + dy * dy
    t = ((px - ax) * dx + (py - ay) * dy) / den
    if t < 0.0:
        t = 0.0
    elif t > 1.0:
        t = 1.0
    qx = ax + t * dx - px
    qy = ay + t * dy - py
    return math.sqrt(qx * qx + qy * qy)


@njit(cache=True, nogil=True)
def singular_dist(code, prm, x, y, include_boundary):
    if code == GEOMETRIC_LORENZ:
        d = abs(y)
    elif code == BELYKH:
        k = prm[0]
        d = _point_segment(x, y, -1.0, -k, 1.0, k)
    else:
        levels = int(prm[4])
        t = y + 1.0
        lo = 1.0
        d = 1e300
        if t <= 0.5 ** (levels - 1):
            d = 0.0
        else:
            for k in range(levels):
                d = min(d, abs(t - lo), abs(t - 1.5 * lo))
                lo *= 0.5
    if include_boundary:
        d = min(d, 1.0 - abs(x), 1.0 - abs(y))
        if d < 0.0:
            d = 0.0
    return d


@njit(cache=True, nogil=True)
def eval_point(code, prm, x, y):
    """Return (x', y', branch); branch ON_BOUNDARY / ON_N when undefined."""
    if abs(x) >= 1.0 or abs(y) >= 1.0:
        return x, y, ON_BOUNDARY
    b = branch_of(code, prm, x, y)
    if b < 0:
        return x, y, ON_N
    xn, yn = apply_branch(code, prm, b, x, y)
    return xn, yn, b


@njit(cache=True, nogil=True)
def _accumulate_fp(fp, basis_code, x, y):
    cx = math.cos(math.pi * x)
    cy = math.cos(math.pi * y)
    cx2 = 2.0 * cx * cx - 1.0
    cy2 = 2.0 * cy * cy - 1.0
    cx3 = (4.0 * cx * cx - 3.0) * cx
    cy3 = (4.0 * cy * cy - 3.0) * cy
    fp[0] += cx
    fp[1] += cy
    fp[2] += cx2
    fp[3] += cx * cy
    fp[4] += cy2
    fp[5] += cx3
    fp[6] += cx2 * cy
    fp[7] += cx * cy2
    fp[8] += cy3
    if basis_code == BASIS_TRIG3_CONST:
        fp[9] += 1.0


@njit(cache=True, nogil=True)
def run_orbit(code, prm, x, y, n, burn_in, collar, thin,
              pts, hist, res, fp, basis_code, itin, counts):
    """Iterate ``burn_in + n`` steps from (x, y) with collar guards.

    Retained points are the images after the burn-in: z_{b+1}, ..., z_{b+n}.
    ``pts`` receives every ``thin``-th retained point (thin == 0: none),
    ``hist`` (flat res*res, row = y cell) counts retained points, ``fp`` sums
    basis values over retained points, ``itin`` receives the branch labels of
    the retained steps up to its length, ``counts`` the branch frequencies.

    Returns (retained_steps, status, min_distance, x, y).
    """
    md = singular_dist(code, prm, x, y, True)
    if md <= collar:
        return 0, SINGULAR_COLLAR, md, x, y
    total = burn_in + n
    n_itin = itin.shape[0]
    n_pts = pts.shape[0]
    for i in range(total):
        b = branch_of(code, prm, x, y)
        xn, yn = apply_branch(code, prm, b, x, y)
        kept = i - burn_in
        if not (abs(xn) <= 1.0 + ESCAPE_TOL and abs(yn) <= 1.0 + ESCAPE_TOL):
            return max(kept, 0), ESCAPED, md, xn, yn
        if kept >= 0:
            counts[b] += 1
            if kept < n_itin:
                itin[kept] = b
        x = xn
        y = yn
        d = singular_dist(code, prm, x, y, True)
        if d < md:
            md = d
        if d <= collar:
            return max(kept, 0), SINGULAR_COLLAR, md, x, y
        if kept >= 0:
            if thin > 0 and (kept + 1) % thin == 0:
                j = (kept + 1) // thin - 1
                if j < n_pts:
                    pts[j, 0] = x
                    pts[j, 1] = y
            if res > 0:
                ix = int((x + 1.0) * 0.5 * res)
                iy = int((y + 1.0) * 0.5 * res)
                ix = min(max(ix, 0), res - 1)
                iy = min(max(iy, 0), res - 1)
                hist[iy * res + ix] += 1
            if basis_code != BASIS_NONE:
                _accumulate_fp(fp, basis_code, x, y)
    return n, COMPLETED, md, x, y


@njit(cache=True, nogil=True)
def _kahan(acc, i, v):
    # acc[i] running sum, acc[i + 2] its compensation
    yv = v - acc[i + 2]
    t = acc[i] + yv
    acc[i + 2] = (t - acc[i]) - yv
    acc[i] = t


@njit(cache=True, nogil=True)
def _renorm(q, logs):
    # Gram-Schmidt on the columns of q; returns deviation of Q^T Q from I
    r11 = math.sqrt(q[0, 0] ** 2 + q[1, 0] ** 2)
    q[0, 0] /= r11
    q[1, 0] /= r11
    r12 = q[0, 0] * q[0, 1] + q[1, 0] * q[1, 1]
    q[0, 1] -= r12 * q[0, 0]
    q[1, 1] -= r12 * q[1, 0]
    r22 = math.sqrt(q[0, 1] ** 2 + q[1, 1] ** 2)
    q[0, 1] /= r22
    q[1, 1] /= r22
    _kahan(logs, 0, math.log(r11))
    _kahan(logs, 1, math.log(r22))
    g00 = q[0, 0] ** 2 + q[1, 0] ** 2 - 1.0
    g11 = q[0, 1] ** 2 + q[1, 1] ** 2 - 1.0
    g01 = q[0, 0] * q[0, 1] + q[1, 0] * q[1, 1]
    return max(abs(g00), abs(g11), abs(g01))


@njit(cache=True, nogil=True)
def run_lyapunov(code, prm, x, y, n, renorm, collar, counts, half_logs, logs):
    """Propagate an orthonormal frame along n steps from (x, y).

    ``logs`` (length 4: two sums, two compensations) accumulates the log
    stretch of both frame columns, ``half_logs``
    holds their value at step n // 2 (a renormalization is forced there).
    Returns (steps, status, max_gram_deviation, x, y).
    """
    q = np.eye(2)
    gram = 0.0
    half = n // 2
    since = 0
    if singular_dist(code, prm, x, y, True) <= collar:
        return 0, SINGULAR_COLLAR, gram, x, y
    for i in range(n):
        b = branch_of(code, prm, x, y)
        a, bb, c, d = jac_branch(code, prm, b, x, y)
        q00 = a * q[0, 0] + bb * q[1, 0]
        q10 = c * q[0, 0] + d * q[1, 0]
        q01 = a * q[0, 1] + bb * q[1, 1]
        q11 = c * q[0, 1] + d * q[1, 1]
        q[0, 0] = q00
        q[1, 0] = q10
        q[0, 1] = q01
        q[1, 1] = q11
        counts[b] += 1
        since += 1
        x, y = apply_branch(code, prm, b, x, y)
        if since == renorm or i + 1 == half or i + 1 == n:
            gram = max(gram, _renorm(q, logs))
            since = 0
            if i + 1 == half:
                half_logs[0] = logs[0]
                half_logs[1] = logs[1]
        if singular_dist(code, prm, x, y, True) <= collar:
            if since > 0:
                gram = max(gram, _renorm(q, logs))
            return i + 1, SINGULAR_COLLAR, gram, x, y
    return n, COMPLETED, gram, x, y


@njit(cache=True, nogil=True)
def push_particles(code, prm, xs, ys, tx, ty, stretch, branches):
    """Map particle positions and unit tangents in place.

    ``stretch`` receives |df t| per particle, ``branches`` the branch used
    (negative when the particle sits on N+ and was left unmoved).
    """
    for i in range(xs.shape[0]):
        x = xs[i]
        y = ys[i]
        xn, yn, b = eval_point(code, prm, x, y)
        branches[i] = b
        if b < 0:
            stretch[i] = 0.0
            continue
        a, bb, c, d = jac_branch(code, prm, b, x, y)
        vx = a * tx[i] + bb * ty[i]
        vy = c * tx[i] + d * ty[i]
        s = math.sqrt(vx * vx + vy * vy)
        stretch[i] = s
        if s > 0.0:
            tx[i] = vx / s
            ty[i] = vy / s
        xs[i] = xn
        ys[i] = yn


@njit(cache=True, nogil=True)
def dist_many(code, prm, xs, ys, include_boundary, out):
    for i in range(xs.shape[0]):
        out[i] = singular_dist(code, prm, xs[i], ys[i], include_boundary)


@njit(cache=True, nogil=True)
def deposit(xs, ys, w, res, grid):
    for i in range(xs.shape[0]):
        ix = int((xs[i] + 1.0) * 0.5 * res)
        iy = int((ys[i] + 1.0) * 0.5 * res)
        ix = min(max(ix, 0), res - 1)
        iy = min(max(iy, 0), res - 1)
        grid[iy, ix] += w[i]


@njit(cache=True, nogil=True)
def branch_many(code, prm, xs, ys, out):
    for i in range(xs.shape[0]):
        out[i] = branch_of(code, prm, xs[i], ys[i])


@njit(cache=True, nogil=True)
def jac_many(code, prm, xs, ys, out, branches):
    """Differentials at the points; NaN where the point lies on N+."""
    for i in range(xs.shape[0]):
        x = xs[i]
        y = ys[i]
        b = branch_of(code, prm, x, y)
        if abs(x) >= 1.0 or abs(y) >= 1.0:
            b = ON_BOUNDARY
        branches[i] = b
        if b < 0:
            out[i, 0, 0] = out[i, 0, 1] = out[i, 1, 0] = out[i, 1, 1] = math.nan
            continue
        a, bb, c, d = jac_branch(code, prm, b, x, y)
        out[i, 0, 0] = a
        out[i, 0, 1] = bb
        out[i, 1, 0] = c
        out[i, 1, 1] = d


@njit(cache=True, nogil=True)
def jac_branch_many(code, prm, b, xs, ys, out):
    for i in range(xs.shape[0]):
        a, bb, c, d = jac_branch(code, prm, b, xs[i], ys[i])
        out[i, 0, 0] = a
        out[i, 0, 1] = bb
        out[i, 1, 0] = c
        out[i, 1, 1] = d


@njit(cache=True, nogil=True)
def apply_many(code, prm, b, xs, ys, ox, oy):
    for i in range(xs.shape[0]):
        ox[i], oy[i] = apply_branch(code, prm, b, xs[i], ys[i])
