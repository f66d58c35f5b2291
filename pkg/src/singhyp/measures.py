"""Empirical measures on the square, Birkhoff fingerprints and ergodic
component counting."""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy.spatial.distance import pdist, squareform

from singhyp import _kernels as K
from singhyp.errors import EmptyInput, GridMismatch, OrbitTerminated
from singhyp.maps import level_box
from singhyp.reports import _clean
from singhyp.trajectory import (DEFAULT_BURN_IN, DEFAULT_COLLAR, OrbitRecord, ensemble,
                                iterate)

DEFAULT_GRID = 512


@dataclass
class EmpiricalMeasure:
    """Cell weights on a regular grid over [-1, 1]^2.

    ``weights[i, j]`` is the cell with y-index ``i`` (from y = -1 upward) and
    x-index ``j``.  ``total`` is the raw mass before normalization.
    """

    grid_res: int
    weights: np.ndarray
    total: float

    @classmethod
    def from_counts(cls, counts) -> "EmpiricalMeasure":
        counts = np.asarray(counts, dtype=float)
        total = float(counts.sum())
        if total <= 0:
            raise EmptyInput("no mass to normalize")
        return cls(counts.shape[0], counts / total, total)

    def coarsen(self, grid_res: int) -> "EmpiricalMeasure":
        return EmpiricalMeasure(grid_res, _coarsen(self.weights, grid_res), self.total)

    def to_csv(self, path) -> None:
        rows, cols = np.nonzero(self.weights)
        with open(path, "w") as fh:
            fh.write("row,col,weight\n")
            for i, j in zip(rows, cols):
                fh.write(f"{i},{j},{float(self.weights[i, j])!r}\n")

    @classmethod
    def from_csv(cls, path, grid_res: int) -> "EmpiricalMeasure":
        w = np.zeros((grid_res, grid_res))
        with open(path) as fh:
            next(fh)
            for line in fh:
                i, j, v = line.strip().split(",")
                w[int(i), int(j)] = float(v)
        return cls(grid_res, w, 1.0)

    def to_pgm(self, path, dynamic_range: float = 1e4) -> None:
        """Binary P5 image, top row = largest y, log-scaled and max-normalized."""
        w = self.weights
        top = w.max()
        s = w / top if top > 0 else w
        img = np.floor(255.0 * np.log1p(s * dynamic_range) / math.log1p(dynamic_range) + 0.5)
        img = np.clip(img, 0, 255).astype(np.uint8)[::-1]
        with open(path, "wb") as fh:
            fh.write(f"P5\n{self.grid_res} {self.grid_res}\n255\n".encode("ascii"))
            fh.write(np.ascontiguousarray(img).tobytes())


def _coarsen(w: np.ndarray, grid_res: int) -> np.ndarray:
    n = w.shape[0]
    if n == grid_res:
        return w.copy()
    if n % grid_res:
        raise GridMismatch(f"cannot coarsen a {n}-grid to {grid_res}")
    f = n // grid_res
    return w.reshape(grid_res, f, grid_res, f).sum(axis=(1, 3))


def bin_points(pts, grid_res: int) -> np.ndarray:
    pts = np.asarray(pts, dtype=float).reshape(-1, 2)
    idx = np.clip(((pts + 1.0) * 0.5 * grid_res).astype(np.int64), 0, grid_res - 1)
    counts = np.zeros((grid_res, grid_res), dtype=np.int64)
    np.add.at(counts, (idx[:, 1], idx[:, 0]), 1)
    return counts


def histogram(orbits: Sequence[OrbitRecord], grid_res: int = DEFAULT_GRID) -> EmpiricalMeasure:
    """Normalized occupancy of all retained orbit points.

    Uses an orbit's in-kernel occupancy grid when it is a refinement of
    ``grid_res``; otherwise bins the stored points.
    """
    if not orbits:
        raise EmptyInput("no orbits")
    counts = np.zeros((grid_res, grid_res), dtype=np.int64)
    for rec in orbits:
        h = rec.histogram
        if h is not None and h.shape[0] % grid_res == 0:
            counts += _coarsen(h, grid_res)
        else:
            counts += bin_points(rec.points, grid_res)
    if counts.sum() == 0:
        raise EmptyInput("orbits carry no retained points")
    return EmpiricalMeasure.from_counts(counts)


def measure_distance(a: EmpiricalMeasure, b: EmpiricalMeasure) -> float:
    """L1 distance of cell weights (twice the total variation distance)."""
    if a.grid_res != b.grid_res:
        raise GridMismatch(f"grid {a.grid_res} vs {b.grid_res}")
    return float(np.abs(a.weights - b.weights).sum())


# -- fingerprints -------------------------------------------------------------

def trig3_values(x, y) -> np.ndarray:
    """The nine functions cos(pi i x) cos(pi j y), 0 < i + j <= 3."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    return np.stack([np.cos(np.pi * i * x) * np.cos(np.pi * j * y) for i, j in K.TRIG3_PAIRS],
                    axis=-1)


@dataclass
class Fingerprint:
    values: np.ndarray
    n_steps: int
    basis_id: str
    usable: bool = True


def birkhoff_average(points, basis="trig3") -> np.ndarray:
    """Average of each basis function over a point sequence."""
    pts = np.asarray(points, dtype=float).reshape(-1, 2)
    if len(pts) == 0:
        raise EmptyInput("no points")
    if basis == "trig3":
        vals = trig3_values(pts[:, 0], pts[:, 1])
    elif basis == "trig3+const":
        vals = np.concatenate([trig3_values(pts[:, 0], pts[:, 1]), np.ones((len(pts), 1))], axis=1)
    else:
        vals = np.stack([np.broadcast_to(np.asarray(f(pts[:, 0], pts[:, 1]), float), len(pts))
                         for f in basis], axis=1)
    return vals.mean(axis=0)


def fingerprint(m, x0, n: int, basis: str | Sequence[Callable] = "trig3",
                burn_in: int = DEFAULT_BURN_IN, collar_eps: float = DEFAULT_COLLAR) -> Fingerprint:
    """Time averages of ``basis`` over the n images after ``burn_in``.

    ``basis`` is ``"trig3"``, ``"trig3+const"`` or a list of vectorized
    callables f(x, y); callables go through stored points and are slower.
    """
    custom = not isinstance(basis, str)
    if custom:
        rec = iterate(m, x0, n, collar_eps, thin=1, burn_in=burn_in, itinerary_cap=0)
    else:
        rec = iterate(m, x0, n, collar_eps, thin=0, burn_in=burn_in, basis=basis,
                      itinerary_cap=0)
    bid = "custom" if custom else basis
    if rec.steps_taken == 0:
        vals = np.full(len(basis) if custom else (9 if basis == "trig3" else 10), np.nan)
    elif custom:
        vals = birkhoff_average(rec.points, basis)
    else:
        vals = rec.basis_sums / rec.steps_taken
    fp = Fingerprint(vals, rec.steps_taken, bid, usable=rec.completed)
    if not rec.completed:
        raise OrbitTerminated(f"orbit hit the collar after {rec.steps_taken} steps", fp)
    return fp


def fingerprints_from_orbits(orbits: Sequence[OrbitRecord]) -> list:
    out = []
    for rec in orbits:
        if rec.basis_sums is None:
            raise ValueError("orbits were run without a basis accumulator")
        out.append(Fingerprint(rec.basis_sums / max(rec.steps_taken, 1), rec.steps_taken,
                               rec.basis_id, usable=rec.completed))
    return out


def ensemble_fingerprints(m, count, seed, n, burn_in=DEFAULT_BURN_IN, collar_eps=DEFAULT_COLLAR,
                          basis="trig3", box=None, workers=1, first_index=0) -> list:
    recs = ensemble(m, count, seed, n, burn_in, collar_eps, basis=basis, box=box,
                    workers=workers, first_index=first_index)
    return fingerprints_from_orbits(recs)


def level_fingerprints(m, per_level, seed, n, burn_in=DEFAULT_BURN_IN,
                       collar_eps=DEFAULT_COLLAR, basis="trig3", workers=1) -> list:
    """Fingerprints of ``per_level`` orbits started in each stacked level.

    Level k uses substreams k * per_level onward, so levels never share one.
    """
    if m.family != "stacked-lorenz":
        raise ValueError("per-level sampling needs a stacked-lorenz map")
    levels = m.params.levels
    out = []
    for k in range(levels):
        out += ensemble_fingerprints(m, per_level, seed, n, burn_in, collar_eps, basis,
                                     level_box(levels, k), workers, first_index=k * per_level)
    return out


# -- component counting -------------------------------------------------------

@dataclass
class ComponentReport:
    cluster_count: int
    cluster_sizes: list
    max_intra_distance: float
    min_inter_distance: float
    threshold_used: float
    well_separated: bool
    separation_ratio: float
    labels: list = field(default_factory=list)

    def to_json(self, **kw) -> str:
        return json.dumps(_clean(asdict(self)), sort_keys=True, **kw)


def _mst_edges(D: np.ndarray):
    # Prim's algorithm on a dense matrix; returns (i, j, w) per tree edge
    n = D.shape[0]
    in_tree = np.zeros(n, bool)
    in_tree[0] = True
    best = D[0].copy()
    parent = np.zeros(n, dtype=np.int64)
    edges = []
    for _ in range(n - 1):
        cand = np.where(in_tree, np.inf, best)
        j = int(np.argmin(cand))
        edges.append((int(parent[j]), j, float(best[j])))
        in_tree[j] = True
        closer = D[j] < best
        best = np.where(closer, D[j], best)
        parent = np.where(closer, j, parent)
    return edges


def count_components(fingerprints: Sequence[Fingerprint], threshold: float | str = "auto",
                     separation_min: float = 3.0) -> ComponentReport:
    """Single-linkage clusters under the max-norm distance.

    ``threshold="auto"`` uses 10x the median nearest-neighbour distance.  With
    single linkage the largest kept spanning-tree edge is the worst intra
    distance and the smallest cut edge is the minimum inter-cluster distance.
    """
    fps = list(fingerprints)
    if not fps:
        return ComponentReport(0, [], 0.0, math.inf, 0.0, True, math.inf, [])
    ids = {(f.basis_id, f.n_steps) for f in fps}
    if len(ids) > 1:
        raise ValueError(f"fingerprints mix bases or lengths: {sorted(ids)}")
    V = np.stack([np.asarray(f.values, float) for f in fps])
    n = len(V)
    if n == 1:
        return ComponentReport(1, [1], 0.0, math.inf,
                               0.0 if threshold == "auto" else float(threshold),
                               True, math.inf, [0])
    D = squareform(pdist(V, "chebyshev"))
    if threshold == "auto":
        nn = np.where(np.eye(n, dtype=bool), np.inf, D).min(axis=1)
        thr = 10.0 * float(np.median(nn))
    else:
        thr = float(threshold)
    edges = _mst_edges(D)
    parent = list(range(n))

    def find(a):
        while parent[a] != a:
            parent[a] = parent[parent[a]]
            a = parent[a]
        return a

    kept = [w for _, _, w in edges if w <= thr]
    cut = [w for _, _, w in edges if w > thr]
    for i, j, w in edges:
        if w <= thr:
            parent[find(i)] = find(j)
    roots = [find(i) for i in range(n)]
    order = {r: k for k, r in enumerate(dict.fromkeys(roots))}
    labels = [order[r] for r in roots]
    sizes = np.bincount(labels).tolist()
    max_intra = max(kept, default=0.0)
    min_inter = min(cut, default=math.inf)
    if math.isinf(min_inter):
        ratio = math.inf
    else:
        ratio = min_inter / max_intra if max_intra > 0 else math.inf
    return ComponentReport(len(sizes), sizes, float(max_intra), float(min_inter), thr,
                           bool(ratio >= separation_min), float(ratio), labels)


def fingerprints_to_csv(fps: Sequence[Fingerprint], path) -> None:
    nb = len(fps[0].values) if fps else 0
    with open(path, "w") as fh:
        fh.write(",".join(["orbit", "n_steps", "basis_id", "usable"] +
                          [f"f{i}" for i in range(nb)]) + "\n")
        for i, f in enumerate(fps):
            vals = ",".join(repr(float(v)) for v in f.values)
            fh.write(f"{i},{f.n_steps},{f.basis_id},{int(f.usable)},{vals}\n")
