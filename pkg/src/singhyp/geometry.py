"""Vectorized plane geometry for polylines against the singular set."""
from __future__ import annotations

import math

import numpy as np


class Lines:
    """N as lines n . p = c (every built-in singular segment spans the square)."""

    def __init__(self, segments):
        rows = []
        for s in segments:
            (ax, ay), (bx, by) = s.a, s.b
            nx, ny = -(by - ay), bx - ax
            h = math.hypot(nx, ny)
            if h == 0:
                continue
            nx, ny = nx / h, ny / h
            rows.append((nx, ny, nx * ax + ny * ay))
        self.rows = np.array(rows, dtype=float).reshape(-1, 3)

    def first_crossing(self, ax, ay, bx, by):
        """Earliest crossing fraction along each segment, and its normal speed."""
        n = self.rows
        ga = n[:, 0][None] * ax[:, None] + n[:, 1][None] * ay[:, None] - n[:, 2][None]
        gb = n[:, 0][None] * bx[:, None] + n[:, 1][None] * by[:, None] - n[:, 2][None]
        crosses = (ga * gb < 0) | ((gb == 0) & (ga != 0))
        with np.errstate(divide="ignore", invalid="ignore"):
            tau = np.where(crosses, ga / (ga - gb), np.inf)
        j = np.argmin(tau, axis=1)
        r = np.arange(len(ax))
        return tau[r, j], np.abs(ga - gb)[r, j]


def point_segment(p, a, b):
    """Distances from points p (n, 2) to segments a -> b, with the feet."""
    p, a, b = (np.asarray(v, dtype=float).reshape(-1, 2) for v in (p, a, b))
    d = b - a
    dd = (d * d).sum(axis=1)
    with np.errstate(divide="ignore", invalid="ignore"):
        t = np.where(dd > 0, ((p - a) * d).sum(axis=1) / dd, 0.0)
    t = np.clip(t, 0.0, 1.0)
    foot = a + t[:, None] * d
    return np.hypot(*(p - foot).T), foot


def _cross(u, v):
    return u[:, 0] * v[:, 1] - u[:, 1] * v[:, 0]


def segment_distance(P, Q, a, b):
    """Distance from each segment P[i] -> Q[i] to the fixed segment a -> b.

    Returns (distances, nearest points on the P -> Q segments).
    """
    P = np.asarray(P, dtype=float).reshape(-1, 2)
    Q = np.asarray(Q, dtype=float).reshape(-1, 2)
    A = np.broadcast_to(np.asarray(a, dtype=float), P.shape)
    B = np.broadcast_to(np.asarray(b, dtype=float), P.shape)
    o1 = _cross(B - A, P - A)
    o2 = _cross(B - A, Q - A)
    o3 = _cross(Q - P, A - P)
    o4 = _cross(Q - P, B - P)
    meet = (o1 * o2 <= 0) & (o3 * o4 <= 0) & ~((o1 == 0) & (o2 == 0) & (o3 == 0) & (o4 == 0))
    cands = []
    d1, _ = point_segment(P, A, B)
    cands.append((d1, P))
    d2, _ = point_segment(Q, A, B)
    cands.append((d2, Q))
    d3, f3 = point_segment(A, P, Q)
    cands.append((d3, f3))
    d4, f4 = point_segment(B, P, Q)
    cands.append((d4, f4))
    D = np.stack([c[0] for c in cands], axis=1)
    X = np.stack([c[1] for c in cands], axis=1)
    k = np.argmin(D, axis=1)
    r = np.arange(len(P))
    dist = D[r, k]
    near = X[r, k]
    with np.errstate(divide="ignore", invalid="ignore"):
        t = np.where(o1 != o2, o1 / (o1 - o2), 0.0)
    hit = P + t[:, None] * (Q - P)
    dist = np.where(meet, 0.0, dist)
    near = np.where(meet[:, None], hit, near)
    return dist, near


def polyline_distance(pts, segments):
    """Minimum distance from a polyline (or single point) to a set of segments.

    Returns (distance, nearest polyline point).
    """
    pts = np.asarray(pts, dtype=float).reshape(-1, 2)
    best, where = math.inf, tuple(pts[0])
    if len(pts) == 1:
        P, Q = pts, pts
    else:
        P, Q = pts[:-1], pts[1:]
    for s in segments:
        d, near = segment_distance(P, Q, s.a, s.b)
        i = int(np.argmin(d))
        if d[i] < best:
            best, where = float(d[i]), (float(near[i, 0]), float(near[i, 1]))
    return best, where


def boundary_distance(pts) -> float:
    pts = np.asarray(pts, dtype=float).reshape(-1, 2)
    return float(max(0.0, (1.0 - np.abs(pts).max(axis=1)).min()))
