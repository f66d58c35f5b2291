"""Push normalized leaf volume on an unstable segment forward and average.

A leaf is a set of polyline pieces of particles.  Each particle carries a
position, a unit tangent propagated by the jacobian and a density with
respect to arclength.  Mass is the trapezoid integral of density along each
piece, so splitting a segment and dropping part of it moves exactly that
part's mass into the lost column.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from singhyp import _kernels as K
from singhyp.errors import LeafCollapse, SingularStart, Unsupported
from singhyp.geometry import Lines
from singhyp.measures import DEFAULT_GRID, EmpiricalMeasure, _coarsen
from singhyp.trajectory import DEFAULT_COLLAR, orbit_rng

DEFAULT_WARMUP = 1000


@dataclass
class LeafParticleMeasure:
    """One generation of the leaf measure.

    ``breaks[i]`` is True when particles i and i+1 belong to different
    pieces.  Densities are scaled so that the carried mass plus
    ``lost_mass`` (the fraction removed in this generation) is 1.
    """

    positions: np.ndarray
    arclength_weights: np.ndarray
    densities: np.ndarray
    breaks: np.ndarray
    generation: int
    lost_mass: float

    @property
    def mass(self) -> float:
        return float(np.dot(self.arclength_weights, self.densities))

    @property
    def particles(self) -> list:
        return [((float(p[0]), float(p[1])), float(w), float(r))
                for p, w, r in zip(self.positions, self.arclength_weights, self.densities)]


@dataclass
class GenerationStats:
    generation: int
    particles: int
    pieces: int
    mass_before: float
    mass_kept: float
    mass_removed: float
    resampled: bool


@dataclass
class LeafPushResult:
    reference_point: tuple
    tangent: tuple
    generations: list
    final: LeafParticleMeasure
    cesaro: EmpiricalMeasure
    stats: list = field(default_factory=list)
    increments: list = field(default_factory=list)

    @property
    def lost_fractions(self) -> np.ndarray:
        return np.array([s.mass_removed / s.mass_before if s.mass_before > 0 else 0.0
                         for s in self.stats])


class _Leaf:
    # flat particle arrays plus per-segment break flags
    def __init__(self, x, y, tx, ty, rho, brk):
        self.x, self.y, self.tx, self.ty, self.rho, self.brk = x, y, tx, ty, rho, brk

    def __len__(self):
        return len(self.x)

    def seg_lengths(self):
        L = np.hypot(np.diff(self.x), np.diff(self.y))
        L[self.brk] = 0.0
        return L

    def seg_mass(self):
        return self.seg_lengths() * 0.5 * (self.rho[:-1] + self.rho[1:])

    def weights(self):
        L = self.seg_lengths()
        w = np.zeros(len(self))
        w[:-1] += 0.5 * L
        w[1:] += 0.5 * L
        return w

    def take(self, idx, brk):
        return _Leaf(self.x[idx], self.y[idx], self.tx[idx], self.ty[idx], self.rho[idx], brk)


def _interp(leaf: _Leaf, owner, t, brk):
    # points at fraction t along segment owner -> owner + 1
    nxt = np.minimum(owner + 1, len(leaf) - 1)

    def lin(a):
        return a[owner] + t * (a[nxt] - a[owner])

    tx, ty = lin(leaf.tx), lin(leaf.ty)
    nrm = np.hypot(tx, ty)
    nrm[nrm == 0] = 1.0
    return _Leaf(lin(leaf.x), lin(leaf.y), tx / nrm, ty / nrm, lin(leaf.rho), brk)


def _insert(leaf: _Leaf, counts, fracs=None, cuts=None):
    """Insert ``counts[i]`` points inside segment i.

    ``fracs`` (flattened, per inserted point) defaults to equal spacing.
    ``cuts`` marks whether the segment following a new point is cut; it is
    returned alongside the new leaf.
    """
    m = len(leaf)
    ext = np.zeros(m, dtype=np.int64)
    ext[:-1] = counts
    group = 1 + ext
    owner = np.repeat(np.arange(m), group)
    starts = np.cumsum(group) - group
    local = np.arange(len(owner)) - starts[owner]
    if fracs is None:
        t = local / group[owner]
    else:
        t = np.zeros(len(owner))
        t[local > 0] = fracs
    last = local == group[owner] - 1
    brk = np.zeros(len(owner) - 1, dtype=bool)
    brk_src = np.append(leaf.brk, False)
    brk[last[:-1]] = brk_src[owner[:-1][last[:-1]]]
    cut = np.zeros(len(owner) - 1, dtype=bool)
    if cuts is not None:
        cut[local[:-1] > 0] = cuts[:np.count_nonzero(local[:-1] > 0)]
    return _interp(leaf, owner, t, brk), cut


def _branches(m, leaf):
    out = np.empty(len(leaf), dtype=np.int64)
    K.branch_many(m.code, m.prm, leaf.x, leaf.y, out)
    return out


def _dists(m, leaf):
    out = np.empty(len(leaf))
    K.dist_many(m.code, m.prm, leaf.x, leaf.y, True, out)
    return out


def _split(m, leaf: _Leaf, lines: Lines, collar_eps: float, gap: float):
    """Cut segments crossing N and drop particles in the collar of N+.

    Returns the cleaned leaf and (mass before, mass kept, mass removed).
    """
    cut = np.zeros(len(leaf) - 1, dtype=bool)
    for _ in range(64):
        br = _branches(m, leaf)
        d = _dists(m, leaf)
        bad = d <= collar_eps
        live = ~leaf.brk & ~cut & ~bad[:-1] & ~bad[1:]
        cross = np.flatnonzero(live & (br[:-1] != br[1:]))
        if len(cross) == 0:
            break
        tau, speed = lines.first_crossing(leaf.x[cross], leaf.y[cross],
                                          leaf.x[cross + 1], leaf.y[cross + 1])
        tau = np.where(np.isfinite(tau), tau, 0.5)
        delta = gap / np.maximum(speed, 1e-300)
        lo, hi = tau - delta, tau + delta
        has_lo, has_hi = lo > 0.0, hi < 1.0
        counts = np.zeros(len(leaf) - 1, dtype=np.int64)
        counts[cross] = has_lo.astype(np.int64) + has_hi
        fr, cu = [], []
        for a, b, hl, hh in zip(lo, hi, has_lo, has_hi):
            # the piece strictly between the two new points straddles N
            if hl:
                fr.append(a)
                cu.append(True)
            if hh:
                fr.append(b)
                cu.append(False)
        # the original segment is cut at its start when the left point is missing
        cut_start = np.zeros(len(leaf) - 1, dtype=bool)
        cut_start[cross[~has_lo]] = True
        old_cut = cut | cut_start
        new, new_cut = _insert(leaf, counts, np.array(fr), np.array(cu, dtype=bool))
        # carry old cut flags onto the first sub-segment of each old segment
        m_old = len(leaf)
        ext = np.zeros(m_old, dtype=np.int64)
        ext[:-1] = counts
        starts = np.cumsum(1 + ext) - (1 + ext)
        new_cut[starts[:-1]] |= old_cut
        leaf, cut = new, new_cut
    else:
        raise LeafCollapse("polyline splitting did not terminate")
    d = _dists(m, leaf)
    bad = d <= collar_eps
    cut = cut | bad[:-1] | bad[1:]
    mass = leaf.seg_mass()
    before = float(mass.sum())
    removed = float(mass[cut].sum())
    kept = float(mass[~cut].sum())
    keep = np.flatnonzero(~bad)
    flag = leaf.brk | cut
    brk = (np.diff(keep) != 1) | flag[keep[:-1]] if len(keep) > 1 else np.zeros(0, bool)
    leaf = leaf.take(keep, brk)
    leaf = _drop_isolated(leaf)
    return leaf, before, kept, removed


def _drop_isolated(leaf: _Leaf) -> _Leaf:
    m = len(leaf)
    if m == 0:
        return leaf
    left = np.ones(m, bool)
    right = np.ones(m, bool)
    left[1:] = leaf.brk
    right[:-1] = leaf.brk
    keep = np.flatnonzero(~(left & right))
    if len(keep) == m:
        return leaf
    flag = leaf.brk
    brk = (np.diff(keep) != 1) | flag[keep[:-1]] if len(keep) > 1 else np.zeros(0, bool)
    return leaf.take(keep, brk)


def _refine(leaf: _Leaf, h_max: float) -> _Leaf:
    L = leaf.seg_lengths()
    counts = np.where(L > h_max, np.ceil(L / h_max).astype(np.int64) - 1, 0)
    if not counts.any():
        return leaf
    return _insert(leaf, counts)[0]


def _resample(leaf: _Leaf, target: int, chunk: int, rng) -> _Leaf:
    """Keep a uniform random subset of chunks of consecutive segments.

    Every chunk has the same inclusion probability, so the expected measure
    is unchanged and equal densities stay equal.
    """
    m = len(leaf)
    piece = np.concatenate([[0], np.cumsum(leaf.brk)])
    seg_piece = piece[:-1]
    live = ~leaf.brk
    first = np.concatenate([[0], np.flatnonzero(leaf.brk) + 1])
    seg_idx = np.arange(m - 1)
    within = seg_idx - first[seg_piece]
    cid = np.where(live, seg_piece * (m + 1) + within // chunk, -1)
    ids, inv = np.unique(cid[live], return_inverse=True)
    segs = seg_idx[live]
    s_lo = np.full(len(ids), m, dtype=np.int64)
    s_hi = np.zeros(len(ids), dtype=np.int64)
    np.minimum.at(s_lo, inv, segs)
    np.maximum.at(s_hi, inv, segs)
    J = len(ids)
    keep = min(J, max(1, int(math.ceil(J * target / m))))
    chosen = np.sort(rng.choice(J, size=keep, replace=False))
    idx = np.concatenate([np.arange(s_lo[c], s_hi[c] + 2) for c in chosen])
    brk = np.concatenate([np.append(np.zeros(s_hi[c] + 1 - s_lo[c], bool), True)
                          for c in chosen])[:-1]
    out = leaf.take(idx, brk)
    out.rho = out.rho * (J / keep)
    return out


def unstable_direction(m, z, warmup: int = DEFAULT_WARMUP, collar_eps: float = DEFAULT_COLLAR,
                       tangent=(1.0, 1.0)):
    """Iterate ``z`` for ``warmup`` steps while power-iterating a tangent.

    Returns the end point and the aligned unit tangent.
    """
    xs = np.array([float(z[0])])
    ys = np.array([float(z[1])])
    h = math.hypot(*tangent)
    tx = np.array([tangent[0] / h])
    ty = np.array([tangent[1] / h])
    st = np.empty(1)
    br = np.empty(1, dtype=np.int64)
    for step in range(warmup):
        if K.singular_dist(m.code, m.prm, xs[0], ys[0], True) <= collar_eps:
            raise SingularStart(f"warmup orbit reached the collar of N+ at step {step}")
        K.push_particles(m.code, m.prm, xs, ys, tx, ty, st, br)
        if not (st[0] > 0 and math.isfinite(st[0])):
            raise LeafCollapse(f"tangent norm degenerated at warmup step {step}")
    return (float(xs[0]), float(ys[0])), (float(tx[0]), float(ty[0]))


def _snapshot(leaf: _Leaf, gen: int, lost: float) -> LeafParticleMeasure:
    return LeafParticleMeasure(np.column_stack([leaf.x, leaf.y]), leaf.weights(),
                               leaf.rho.copy(), leaf.brk.copy(), gen, lost)


def leaf_pushforward(m, z=None, r: float = 1e-3, steps: int = 1000, h_max: float = 1e-3, *,
                     warmup: int = DEFAULT_WARMUP, seed: int = 0,
                     collar_eps: float = DEFAULT_COLLAR, grid_res: int = DEFAULT_GRID,
                     max_particles: int = 8000, chunk: int = 64,
                     snapshot_every: int | None = None, checkpoints: int = 20,
                     tangent=None) -> LeafPushResult:
    """Cesaro average of the first ``steps`` leaf generations.

    ``z`` starts the warmup orbit (a seeded random point when omitted); the
    warmup end is the reference point and the power-iterated tangent the
    unstable direction.  Passing ``tangent`` with ``warmup=0`` uses ``z``
    and ``tangent`` as given.  Once particles exceed ``max_particles`` a
    uniform random half of the length-``chunk`` pieces is kept.
    """
    if m.code is None:
        raise Unsupported("leaf pushforward needs a built-in family")
    if steps < 1:
        raise ValueError("steps must be positive")
    rng = orbit_rng(seed, 0)
    if z is None:
        for _ in range(100):
            z0 = tuple(rng.uniform(-0.9, 0.9, size=2))
            try:
                ref, t = unstable_direction(m, z0, warmup, collar_eps)
                break
            except SingularStart:
                continue
        else:
            raise SingularStart("no warmup orbit avoided the collar")
    elif warmup > 0:
        ref, t = unstable_direction(m, z, warmup, collar_eps, tangent or (1.0, 1.0))
    else:
        h = math.hypot(*(tangent or (0.0, 1.0)))
        ref = (float(z[0]), float(z[1]))
        t = ((tangent or (0.0, 1.0))[0] / h, (tangent or (0.0, 1.0))[1] / h)

    npts = max(2, int(math.ceil(2 * r / h_max)) + 1)
    s = np.linspace(-r, r, npts)
    leaf = _Leaf(ref[0] + s * t[0], ref[1] + s * t[1], np.full(npts, t[0]), np.full(npts, t[1]),
                 np.full(npts, 1.0 / (2 * r)), np.zeros(npts - 1, bool))
    br = _branches(m, leaf)
    if (_dists(m, leaf) <= collar_eps).any() or len(set(br.tolist())) > 1:
        raise SingularStart(f"initial segment through {ref} meets N+")
    leaf.rho = leaf.rho / leaf.seg_mass().sum()

    lines = Lines(m.segments)
    gap = max(10.0 * collar_eps, 1e-12)
    grid = np.zeros((grid_res, grid_res))
    prev = None
    every = max(1, steps // max(checkpoints, 1))
    gens = [_snapshot(leaf, 0, 0.0)]
    stats = [GenerationStats(0, len(leaf), int(leaf.brk.sum()) + 1, 1.0, 1.0, 0.0, False)]
    increments = []
    st = np.empty(0)
    bb = np.empty(0, dtype=np.int64)
    for gen in range(steps):
        if gen > 0:
            if len(st) != len(leaf):
                st = np.empty(len(leaf))
                bb = np.empty(len(leaf), dtype=np.int64)
            K.push_particles(m.code, m.prm, leaf.x, leaf.y, leaf.tx, leaf.ty, st, bb)
            ok = bb >= 0
            if np.any(ok & ~((st > 0) & np.isfinite(st))):
                raise LeafCollapse(f"tangent stretch degenerated in generation {gen}")
            leaf.rho = np.where(ok, leaf.rho / np.where(ok, st, 1.0), leaf.rho)
            leaf = _refine(leaf, h_max)
            leaf, before, kept, removed = _split(m, leaf, lines, collar_eps, gap)
            if len(leaf) == 0 or kept <= 0:
                raise LeafCollapse(f"all leaf mass lost in generation {gen}")
            lost = removed / before
            leaf.rho = leaf.rho * ((1.0 - lost) / kept)
            resampled = False
            if snapshot_every and gen % snapshot_every == 0:
                gens.append(_snapshot(leaf, gen, lost))
            leaf.rho = leaf.rho / (1.0 - lost)
            if len(leaf) > max_particles:
                leaf = _resample(leaf, max_particles // 2, chunk, rng)
                leaf.rho = leaf.rho / leaf.seg_mass().sum()
                resampled = True
            stats.append(GenerationStats(gen, len(leaf), int(leaf.brk.sum()) + 1,
                                         before, kept, removed, resampled))
        mass = leaf.weights() * leaf.rho
        K.deposit(leaf.x, leaf.y, mass / mass.sum(), grid_res, grid)
        n = gen + 1
        if n % every == 0 or n == steps:
            cur = grid / n
            if prev is not None:
                increments.append((n, float(np.abs(cur - prev).sum())))
            prev = cur
    lost = stats[-1].mass_removed / stats[-1].mass_before
    final = _snapshot(leaf, steps - 1, lost)
    final.densities *= 1.0 - lost
    if not gens or gens[-1].generation != final.generation:
        gens.append(final)
    return LeafPushResult(ref, t, gens, final, EmpiricalMeasure(grid_res, grid / steps, 1.0),
                          stats, increments)


def cesaro_on_grid(result: LeafPushResult, grid_res: int) -> EmpiricalMeasure:
    return EmpiricalMeasure(grid_res, _coarsen(result.cesaro.weights, grid_res), 1.0)
