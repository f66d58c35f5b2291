"""Orbit iteration with singular-collar guards, seeded ensembles, Lyapunov
spectra and numerical cone-invariance checks."""
from __future__ import annotations

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from singhyp import _kernels as K
from singhyp.errors import (DomainError, EscapedOrbitError, OrbitTerminated, SingularHitError,
                            ParamError)
from singhyp.maps import Point2, SingularMap, as_point
from singhyp.reports import CheckReport, Witness

log = logging.getLogger(__name__)

DEFAULT_COLLAR = 1e-12
DEFAULT_BURN_IN = 10_000
DEFAULT_RENORM = 8
ITINERARY_CAP = 1_000_000

TERMINATIONS = {K.COMPLETED: "completed", K.SINGULAR_COLLAR: "singular_collar",
                K.ESCAPED: "escaped"}

BASES = {"trig3": (K.BASIS_TRIG3, 9), "trig3+const": (K.BASIS_TRIG3_CONST, 10)}


@dataclass
class OrbitRecord:
    initial: Point2
    points: np.ndarray
    steps_taken: int
    termination: str
    min_singular_distance: float
    branch_itinerary: np.ndarray | None
    branch_counts: np.ndarray
    final: Point2
    requested: int
    histogram: np.ndarray | None = None
    basis_sums: np.ndarray | None = None
    basis_id: str | None = None
    restarts: int = 0
    index: int = 0

    @property
    def completed(self) -> bool:
        return self.termination == "completed"


@dataclass
class LyapunovEstimate:
    """Exponents in nats per step."""

    lambda_u: float
    lambda_s: float
    n_steps: int
    renorm_interval: int
    branch_counts: np.ndarray = field(repr=False)
    first_half: tuple = ()
    second_half: tuple = ()
    gram_deviation: float = 0.0

    @property
    def drift(self) -> float:
        if not self.first_half:
            return math.nan
        return max(abs(a - b) for a, b in zip(self.first_half, self.second_half))


@dataclass(frozen=True)
class ConeSpec:
    center_direction: str  # "vertical" | "horizontal"
    half_angle_tan: float

    def __post_init__(self):
        if self.center_direction not in ("vertical", "horizontal"):
            raise ParamError(f"center_direction must be vertical or horizontal, "
                             f"got {self.center_direction!r}")
        if not 0.0 < self.half_angle_tan < 1.0:
            raise ParamError(f"0 < half_angle_tan < 1 violated: {self.half_angle_tan}")


# -- orbit engines -----------------------------------------------------------

def _py_run_orbit(m, x, y, n, burn_in, collar, thin, pts, hist, res, fp, basis_code,
                  itin, counts):
    # mirror of _kernels.run_orbit for maps without a kernel
    md = m.singular_distance((x, y), True)
    if md <= collar:
        return 0, K.SINGULAR_COLLAR, md, x, y
    fpv = np.zeros(fp.shape[0]) if basis_code else None
    for i in range(burn_in + n):
        b = m.branch_of((x, y))
        x, y = m.apply_branch(b, (x, y))
        kept = i - burn_in
        if not (abs(x) <= 1.0 + K.ESCAPE_TOL and abs(y) <= 1.0 + K.ESCAPE_TOL):
            return max(kept, 0), K.ESCAPED, md, x, y
        if kept >= 0:
            counts[b] += 1
            if kept < itin.shape[0]:
                itin[kept] = b
        d = m.singular_distance((max(-1.0, min(1.0, x)), max(-1.0, min(1.0, y))), True)
        md = min(md, d)
        if d <= collar:
            return max(kept, 0), K.SINGULAR_COLLAR, md, x, y
        if kept >= 0:
            if thin > 0 and (kept + 1) % thin == 0 and (kept + 1) // thin - 1 < pts.shape[0]:
                pts[(kept + 1) // thin - 1] = (x, y)
            if res > 0:
                ix = min(max(int((x + 1.0) * 0.5 * res), 0), res - 1)
                iy = min(max(int((y + 1.0) * 0.5 * res), 0), res - 1)
                hist[iy * res + ix] += 1
            if basis_code:
                fpv[:] = 0.0
                K._accumulate_fp(fpv, basis_code, x, y)
                fp += fpv
    return n, K.COMPLETED, md, x, y


def _run(m: SingularMap, x0, n, burn_in, collar, thin, grid_res, basis, itinerary_cap):
    basis_code, nb = BASES[basis] if basis else (K.BASIS_NONE, 0)
    n_pts = n // thin if thin > 0 else 0
    pts = np.zeros((n_pts, 2))
    res = int(grid_res or 0)
    hist = np.zeros(res * res, dtype=np.int64)
    fp = np.zeros(nb)
    itin = np.zeros(min(itinerary_cap, n), dtype=np.int16)
    counts = np.zeros(m.branch_count, dtype=np.int64)
    runner = K.run_orbit if m.code is not None else _py_run_orbit
    first = m.code if m.code is not None else m
    steps, status, md, x, y = runner(first, m.prm if m.code is not None else None,
                                     float(x0[0]), float(x0[1]), int(n), int(burn_in),
                                     float(collar), int(thin), pts, hist, res, fp,
                                     basis_code, itin, counts)
    n_stored = steps // thin if thin > 0 else 0
    return OrbitRecord(
        initial=Point2(float(x0[0]), float(x0[1])),
        points=pts[:n_stored],
        steps_taken=int(steps),
        termination=TERMINATIONS[int(status)],
        min_singular_distance=float(md),
        branch_itinerary=itin[:min(steps, itin.shape[0])] if itinerary_cap else None,
        branch_counts=counts,
        final=Point2(float(x), float(y)),
        requested=int(n),
        histogram=hist.reshape(res, res) if res else None,
        basis_sums=fp if basis else None,
        basis_id=basis,
    )


def iterate(m: SingularMap, x0, n: int, collar_eps: float = DEFAULT_COLLAR, thin: int = 1,
            *, burn_in: int = 0, grid_res: int | None = None, basis: str | None = None,
            itinerary_cap: int = ITINERARY_CAP) -> OrbitRecord:
    """Iterate ``m`` from ``x0``, stopping at the collar of N+.

    ``points`` holds every ``thin``-th image f^thin(x0), f^2thin(x0), ...;
    ``thin=0`` stores nothing (use ``grid_res``/``basis`` accumulators).
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    if collar_eps < 0:
        raise ValueError("collar_eps must be >= 0")
    x0 = as_point(x0)
    rec = _run(m, x0, n, burn_in, collar_eps, thin, grid_res, basis, itinerary_cap)
    if rec.termination == "escaped":
        log.error("orbit from %s escaped the square at %s", x0, rec.final)
    return rec


def _draw_initial(rng, m, box, collar):
    (xl, xh), (yl, yh) = box
    for _ in range(10_000):
        x = rng.uniform(xl, xh)
        y = rng.uniform(yl, yh)
        if xl < x < xh and yl < y < yh and m.singular_distance((x, y), True) > collar:
            return x, y
    raise DomainError(f"could not draw an initial point off the collar in {box}")


def orbit_rng(seed: int, index: int) -> np.random.Generator:
    """Per-orbit substream, a pure function of (seed, index)."""
    return np.random.default_rng(np.random.SeedSequence(int(seed), spawn_key=(int(index),)))


def _ensemble_member(m, index, seed, n, burn_in, collar, thin, grid_res, basis, box,
                     itinerary_cap, max_restarts):
    rng = orbit_rng(seed, index)
    for attempt in range(max_restarts + 1):
        x0 = _draw_initial(rng, m, box, collar)
        rec = _run(m, x0, n, burn_in, collar, thin, grid_res, basis, itinerary_cap)
        if rec.termination == "escaped":
            raise EscapedOrbitError(f"orbit {index} from {x0} escaped at {rec.final}")
        if rec.completed:
            rec.restarts = attempt
            rec.index = index
            return rec
        log.info("orbit %d (seed %d) hit the collar after %d steps; resampling",
                 index, seed, rec.steps_taken)
    raise OrbitTerminated(f"orbit {index} hit the collar {max_restarts + 1} times", rec)


def ensemble(m: SingularMap, count: int, seed: int, n: int, burn_in: int = DEFAULT_BURN_IN,
             collar_eps: float = DEFAULT_COLLAR, *, thin: int = 0,
             grid_res: int | None = None, basis: str | None = None, box=None,
             workers: int = 1, itinerary_cap: int = 0, max_restarts: int = 100,
             first_index: int = 0) -> list:
    """Run ``count`` orbits from seeded uniform initial points.

    Orbit ``i`` draws from the substream ``(seed, i)``, so the output does not
    depend on ``workers``.  Orbits that hit the collar are redrawn from the
    same substream and the redraw count is kept in ``restarts``.
    ``box`` restricts initial points to ((x_lo, x_hi), (y_lo, y_hi)).
    Substream indices start at ``first_index``.
    """
    if count <= 0:
        return []
    box = box or ((-1.0, 1.0), (-1.0, 1.0))

    def one(i):
        return _ensemble_member(m, i, seed, n, burn_in, collar_eps, thin, grid_res,
                                basis, box, itinerary_cap, max_restarts)

    if workers > 1 and count > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            return list(pool.map(one, range(first_index, first_index + count)))
    return [one(i) for i in range(first_index, first_index + count)]


# -- Lyapunov spectrum -------------------------------------------------------

def _py_run_lyapunov(m, x, y, n, renorm, collar, counts, half_logs, logs):
    q = np.eye(2)
    gram = 0.0
    half = n // 2
    since = 0
    if m.singular_distance((x, y), True) <= collar:
        return 0, K.SINGULAR_COLLAR, gram, x, y
    for i in range(n):
        b = m.branch_of((x, y))
        q = m.jacobian_branch(b, (x, y)) @ q
        counts[b] += 1
        since += 1
        x, y = m.apply_branch(b, (x, y))
        if since == renorm or i + 1 == half or i + 1 == n:
            gram = max(gram, K._renorm(q, logs))
            since = 0
            if i + 1 == half:
                half_logs[:] = logs[:2]
        if m.singular_distance((x, y), True) <= collar:
            if since:
                gram = max(gram, K._renorm(q, logs))
            return i + 1, K.SINGULAR_COLLAR, gram, x, y
    return n, K.COMPLETED, gram, x, y


def lyapunov_spectrum(m: SingularMap, x0, n: int, renorm_interval: int = DEFAULT_RENORM,
                      collar_eps: float = DEFAULT_COLLAR, burn_in: int = 0) -> LyapunovEstimate:
    """Lyapunov exponents by QR-renormalized frame propagation.

    The frame starts at the identity; on diagonal or triangular cocycles this
    keeps the estimate exact up to rounding.  Raises ``OrbitTerminated``
    (with the partial estimate attached) if the orbit reaches the collar.
    """
    x0 = as_point(x0)
    if burn_in:
        pre = iterate(m, x0, burn_in, collar_eps, thin=0, itinerary_cap=0)
        if not pre.completed:
            raise OrbitTerminated("orbit hit the collar during burn-in", None)
        x0 = pre.final
    counts = np.zeros(m.branch_count, dtype=np.int64)
    half_logs = np.zeros(2)
    logs = np.zeros(4)
    if m.code is not None:
        steps, status, gram, _, _ = K.run_lyapunov(m.code, m.prm, x0.x, x0.y, int(n),
                                                   int(renorm_interval), float(collar_eps),
                                                   counts, half_logs, logs)
    else:
        steps, status, gram, _, _ = _py_run_lyapunov(m, x0.x, x0.y, int(n), int(renorm_interval),
                                                     float(collar_eps), counts, half_logs, logs)
    steps = int(steps)
    if steps == 0:
        raise OrbitTerminated("initial point lies in the collar", None)
    logs = logs[:2]
    a = logs / steps
    first = second = ()
    half = n // 2
    if status == K.COMPLETED and half > 0 and n - half > 0:
        first = tuple(sorted(half_logs / half, reverse=True))
        second = tuple(sorted((logs - half_logs) / (n - half), reverse=True))
    est = LyapunovEstimate(lambda_u=float(max(a)), lambda_s=float(min(a)), n_steps=steps,
                           renorm_interval=int(renorm_interval), branch_counts=counts,
                           first_half=first, second_half=second, gram_deviation=float(gram))
    if status != K.COMPLETED:
        raise OrbitTerminated(f"orbit hit the collar after {steps} steps", est)
    return est


# -- cones -------------------------------------------------------------------

def _cone_vectors(cone: ConeSpec, sign):
    a = cone.half_angle_tan
    if cone.center_direction == "vertical":
        return np.array([sign * a, 1.0])
    return np.array([1.0, sign * a])


def _cone_slack(w, cone: ConeSpec):
    # a - |off-axis| / |axis| per vector; positive iff strictly inside
    a = cone.half_angle_tan
    ax, off = (1, 0) if cone.center_direction == "vertical" else (0, 1)
    with np.errstate(divide="ignore", invalid="ignore"):
        r = np.abs(w[:, off]) / np.abs(w[:, ax])
    return a - np.where(np.isfinite(r), r, np.inf)


def _mapped_cone_slack(M, cone: ConeSpec):
    """Slack of M(cone) inside cone for a batch of matrices.

    The image of the convex sector spanned by the two boundary rays stays in
    the double cone iff both images are inside and on the same half.
    """
    w1 = M @ _cone_vectors(cone, -1.0)
    w2 = M @ _cone_vectors(cone, 1.0)
    ax = 1 if cone.center_direction == "vertical" else 0
    slack = np.minimum(_cone_slack(w1, cone), _cone_slack(w2, cone))
    same = np.sign(w1[:, ax]) == np.sign(w2[:, ax])
    return np.where(same, slack, -np.inf)


def min_cone_expansion(J: np.ndarray, cone: ConeSpec | None):
    """Exact min of |J v|/|v| over the cone, for a batch of matrices (n, 2, 2).

    ``cone=None`` means the vertical axis only.  Returns (values, minimizing
    vectors).
    """
    J = np.asarray(J, dtype=float).reshape(-1, 2, 2)
    C = np.einsum("nki,nkj->nij", J, J)
    if cone is None:
        v = np.tile([0.0, 1.0], (len(J), 1))
        return np.sqrt(C[:, 1, 1]), v
    a = cone.half_angle_tan
    vertical = cone.center_direction == "vertical"
    # parametrize v = (t, 1) (vertical) or (1, t); g(t) = quadratic / (1 + t^2)
    if vertical:
        p, q, r = C[:, 0, 0], C[:, 0, 1], C[:, 1, 1]
    else:
        p, q, r = C[:, 1, 1], C[:, 0, 1], C[:, 0, 0]

    def g(t):
        return (p * t * t + 2 * q * t + r) / (1 + t * t)

    cands = [np.full(len(J), -a), np.full(len(J), a)]
    # stationary points solve q t^2 - (p - r) t - q = 0
    disc = np.sqrt((p - r) ** 2 + 4 * q * q)
    with np.errstate(divide="ignore", invalid="ignore"):
        for sgn in (1.0, -1.0):
            t = np.where(q != 0, ((p - r) + sgn * disc) / (2 * q), 0.0)
            cands.append(np.where(np.abs(t) <= a, t, a))
    T = np.stack(cands, axis=1)
    G = np.stack([g(T[:, i]) for i in range(T.shape[1])], axis=1)
    idx = np.argmin(G, axis=1)
    t_best = T[np.arange(len(J)), idx]
    vals = np.sqrt(np.maximum(G[np.arange(len(J)), idx], 0.0))
    vec = np.stack([t_best, np.ones(len(J))], axis=1) if vertical else \
        np.stack([np.ones(len(J)), t_best], axis=1)
    return vals, vec


def jacobians(m: SingularMap, pts) -> np.ndarray:
    pts = np.asarray(pts, dtype=float).reshape(-1, 2)
    if m.code is None:
        return np.stack([m.jacobian(p) for p in pts]) if len(pts) else np.zeros((0, 2, 2))
    out = np.empty((len(pts), 2, 2))
    br = np.empty(len(pts), dtype=np.int64)
    K.jac_many(m.code, m.prm, np.ascontiguousarray(pts[:, 0]), np.ascontiguousarray(pts[:, 1]),
               out, br)
    if (br < 0).any():
        i = int(np.flatnonzero(br < 0)[0])
        raise SingularHitError(tuple(pts[i]), "N" if br[i] == K.ON_N else "boundary")
    return out


def sample_points(m: SingularMap, samples: int, seed: int, sampling: str = "auto",
                  collar_eps: float = 1e-6):
    """Points for sampled checks; returns (points, number discarded in collar).

    ``uniform`` draws from K; ``attractor`` thins long orbits after a burn-in;
    ``auto`` is uniform for the piecewise-affine Belykh family (whose
    differential does not depend on the point) and attractor otherwise.
    """
    if sampling == "auto":
        sampling = "uniform" if m.family == "belykh" else "attractor"
    rng = np.random.default_rng(seed)
    if sampling == "uniform":
        pts = rng.uniform(-1.0, 1.0, size=(samples, 2))
        pts = pts[(np.abs(pts) < 1.0).all(axis=1)]
    elif sampling == "attractor":
        orbits = max(1, min(16, samples // 1000))
        per = -(-samples // orbits)
        thin = 7
        recs = ensemble(m, orbits, seed, per * thin, burn_in=2000, collar_eps=DEFAULT_COLLAR,
                        thin=thin)
        pts = np.concatenate([r.points for r in recs])[:samples]
    else:
        raise ValueError(f"unknown sampling {sampling!r}")
    d = m.distances(pts, include_boundary=True)
    keep = d > collar_eps
    return pts[keep], int((~keep).sum())


def cone_check(m: SingularMap, cone_u: ConeSpec, cone_s: ConeSpec, samples: int,
               seed: int = 0, sampling: str = "auto",
               collar_eps: float = 1e-6) -> CheckReport:
    """Check constant-cone invariance and unstable expansion on samples.

    Passes iff, at every sample z, df_z maps cone_u strictly into cone_u,
    df_z^{-1} maps cone_s strictly into cone_s, and the minimum expansion of
    df_z over cone_u exceeds 1.
    """
    if samples <= 0:
        return CheckReport("CONES", "inconclusive", notes="no samples requested")
    pts, dropped = sample_points(m, samples, seed, sampling, collar_eps)
    notes = f"sampling={sampling}, collar={collar_eps:g}"
    if dropped > 0.01 * samples or len(pts) == 0:
        return CheckReport("CONES", "inconclusive", notes=notes + f", {dropped} samples in collar",
                           data={"dropped": dropped})
    J = jacobians(m, pts)
    slack_u = _mapped_cone_slack(J, cone_u)
    slack_s = _mapped_cone_slack(np.linalg.inv(J), cone_s)
    ok_u = slack_u > 0
    ok_s = slack_s > 0
    expn, vecs = min_cone_expansion(J, cone_u)
    worst = int(np.argmin(expn))
    witnesses = []
    for mask, label in ((~ok_u, "unstable inclusion"), (~ok_s, "stable inclusion")):
        if mask.any():
            i = int(np.flatnonzero(mask)[0])
            v = _cone_vectors(cone_u if label.startswith("unstable") else cone_s, 1.0)
            witnesses.append(Witness(0, tuple(pts[i]), float("nan"), tuple(v)))
            notes += f"; {label} fails at {int(mask.sum())} samples"
    if expn[worst] <= 1.0:
        witnesses.append(Witness(0, tuple(pts[worst]), float(expn[worst]), tuple(vecs[worst])))
    margins = {"min_unstable_expansion-1": float(expn[worst] - 1.0),
               "unstable_inclusion": float(slack_u.min()),
               "stable_inclusion": float(slack_s.min())}
    verdict = "pass" if ok_u.all() and ok_s.all() and expn[worst] > 1.0 else "fail"
    return CheckReport("CONES", verdict, witnesses=witnesses, margins=margins, notes=notes,
                       data={"worst_expansion": float(expn[worst]),
                             "worst_point": tuple(pts[worst]),
                             "samples_used": int(len(pts)), "dropped": dropped})
