"""Exact rational arithmetic for N- images of the k = 0 Belykh map.

At k = 0 the y-coordinate evolves by a one-dimensional piecewise affine map,
so the horizontal N- segments stay horizontal and f^j(N-) meets N exactly
when its height reaches 0.
"""
from fractions import Fraction

import sympy


def _rat(v):
    return sympy.Rational(str(v))


def y_step(y, lam2, mu2):
    return lam2 * (y - 1) + 1 if y > 0 else mu2 * (y + 1) - 1


def least_k(lam):
    k = 1
    while lam ** k <= 2:
        k += 1
    return k


def n_minus_heights(lam2, mu2):
    # one-sided limits of the two branches on y = 0
    return [1 - lam2, mu2 - 1]


def hits(lam2, mu2, jmax=None):
    """Heights of f^j(N-) for j < k (or j <= jmax); returns the (j, comp) that land on 0."""
    lam2, mu2 = _rat(lam2), _rat(mu2)
    k = least_k(min(lam2, mu2))
    last = k - 1 if jmax is None else min(jmax, k - 1)
    out = []
    for c, y in enumerate(n_minus_heights(lam2, mu2)):
        for j in range(last + 1):
            if y == 0:
                out.append((j, c))
                break
            y = y_step(y, lam2, mu2)
    return out


def bad_mu2(grid, lam2, jmax=None):
    return sorted(mu for mu in grid if hits(lam2, mu, jmax))


def solve_bad_mu2(lam2, jmax):
    """All mu2 in (1, 2) with f^j(N-) on N for some j <= jmax, by solving polynomials."""
    lam2 = _rat(lam2)
    mu = sympy.Symbol("mu", positive=True)
    found = set()
    for c, y0 in enumerate(n_minus_heights(lam2, mu)):
        # follow every sign pattern of the itinerary symbolically
        stack = [(y0, 0, [])]
        while stack:
            y, j, conds = stack.pop()
            for r in sympy.solve(sympy.Eq(y, 0), mu):
                if r.is_real and 1 < r < 2 and all(cond.subs(mu, r) for cond in conds):
                    found.add(sympy.nsimplify(r))
            if j == jmax:
                continue
            stack.append((lam2 * (y - 1) + 1, j + 1, conds + [y > 0]))
            stack.append((mu * (y + 1) - 1, j + 1, conds + [y < 0]))
    return sorted(found)


def as_fraction(v):
    return Fraction(str(v))
