"""Piecewise-smooth maps of the square K = (-1, 1)^2 with a singular set N.

Three built-in families are evaluated by numba kernels (see ``_kernels``):
the geometric Lorenz map, the Belykh map and a finite truncation of the
stacked-Lorenz counterexample.  A fourth, ``lorenz-type-generic``, is a
data-driven Lorenz-type map whose branch formulas are Python callables; it
runs through slower pure-Python paths.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from typing import Callable, NamedTuple, Sequence

import numpy as np

from singhyp import _kernels as K
from singhyp.errors import DomainError, ParamError, SingularHitError, Unsupported

FAMILIES = ("geometric-lorenz", "belykh", "stacked-lorenz", "lorenz-type-generic")


class Point2(NamedTuple):
    x: float
    y: float


class Segment(NamedTuple):
    a: Point2
    b: Point2
    label: str

    @property
    def length(self) -> float:
        return math.hypot(self.b.x - self.a.x, self.b.y - self.a.y)


@dataclass(frozen=True)
class SingularHit:
    """Returned by ``SingularMap.eval`` where the map is undefined."""

    point: Point2
    where: str  # "N" or "boundary"


def as_point(p) -> Point2:
    x, y = float(p[0]), float(p[1])
    if not (math.isfinite(x) and math.isfinite(y)):
        raise DomainError(f"non-finite point {(x, y)}")
    if abs(x) > 1.0 or abs(y) > 1.0:
        raise DomainError(f"point {(x, y)} outside the closed square")
    return Point2(x, y)


@dataclass(frozen=True)
class GeometricLorenzParams:
    A: float
    B: float
    nu0: float
    nu: float

    def validate(self):
        A, B, nu0, nu = self.A, self.B, self.nu0, self.nu
        if not 0.0 < A < 1.0:
            raise ParamError(f"0 < A < 1 violated: A = {A}")
        if not 0.0 < B < 0.5:
            raise ParamError(f"0 < B < 1/2 violated: B = {B}")
        lo = 1.0 / (1.0 + A)
        if not nu0 > lo:
            raise ParamError(f"nu0 > 1/(1+A) violated: {nu0} <= {lo:.6g}")
        if not nu0 < 1.0:
            raise ParamError(f"nu0 < 1 violated: nu0 = {nu0}")
        if not nu > 1.0:
            raise ParamError(f"nu > 1 violated: nu = {nu}")


@dataclass(frozen=True)
class BelykhParams:
    k: float
    lambda1: float
    lambda2: float
    mu1: float
    mu2: float

    def validate(self):
        k = self.k
        if not abs(k) < 1.0:
            raise ParamError(f"|k| < 1 violated: k = {k}")
        for name in ("lambda1", "mu1"):
            v = getattr(self, name)
            if not 0.0 < v < 0.5:
                raise ParamError(f"0 < {name} < 1/2 violated: {name} = {v}")
        bound = 2.0 / (1.0 + abs(k))
        for name in ("lambda2", "mu2"):
            v = getattr(self, name)
            if not v > 1.0:
                raise ParamError(f"{name} > 1 violated: {name} = {v}")
            if not v < bound:
                raise ParamError(
                    f"{name} < 2/(1+|k|) violated: {name} = {v}, bound = {bound:.6g}")


@dataclass(frozen=True)
class StackedParams:
    base: GeometricLorenzParams
    levels: int

    def validate(self):
        self.base.validate()
        if isinstance(self.levels, bool) or int(self.levels) != self.levels or self.levels < 1:
            raise ParamError(f"levels >= 1 violated: levels = {self.levels}")


def conjugacy(k: int):
    """The affine bijections h_k : P_k -> K and h_k^{-1}, acting on y.

    P_k = (-1, 1) x (2^-k - 1, 2^-(k-1) - 1).  The expressions match the
    kernel's so that compositions agree bit for bit.
    """
    scale = 2.0 ** (k + 1)

    def h(p):
        return Point2(p[0], scale * (p[1] + 1.0) - 3.0)

    def h_inv(p):
        return Point2(p[0], (p[1] + 3.0) / scale - 1.0)

    return h, h_inv


def level_box(levels: int, k: int):
    """Open rectangle P_k as ((x_lo, x_hi), (y_lo, y_hi))."""
    if not 0 <= k < levels:
        raise ValueError(f"level {k} outside 0..{levels - 1}")
    return (-1.0, 1.0), (2.0 ** -k - 1.0, 2.0 ** (-k + 1) - 1.0)


@dataclass(frozen=True, eq=False)
class SingularMap:
    """A map f : K minus N -> K from one of the built-in families.

    Immutable; safe to share between threads.  ``segments`` is N (without the
    boundary of K).  Branch labels are small nonnegative integers.
    """

    family: str
    params: object
    segments: tuple
    branch_count: int
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        codes = {"geometric-lorenz": K.GEOMETRIC_LORENZ, "belykh": K.BELYKH,
                 "stacked-lorenz": K.STACKED_LORENZ}
        object.__setattr__(self, "code", codes.get(self.family))
        object.__setattr__(self, "prm", _pack(self.params))

    # -- evaluation -------------------------------------------------------
    def eval(self, p):
        x, y = as_point(p)
        xn, yn, b = K.eval_point(self.code, self.prm, x, y)
        if b == K.ON_BOUNDARY:
            return SingularHit(Point2(x, y), "boundary")
        if b == K.ON_N:
            return SingularHit(Point2(x, y), "N")
        return Point2(xn, yn)

    def branch_of(self, p) -> int:
        """Branch label of a point of the closed square; -1 on N."""
        x, y = as_point(p)
        return int(K.branch_of(self.code, self.prm, x, y))

    def apply_branch(self, branch: int, p) -> Point2:
        """Branch formula continued to the closure of its domain."""
        xn, yn = K.apply_branch(self.code, self.prm, int(branch), float(p[0]), float(p[1]))
        return Point2(xn, yn)

    def jacobian(self, p) -> np.ndarray:
        x, y = as_point(p)
        _, _, b = K.eval_point(self.code, self.prm, x, y)
        if b < 0:
            raise SingularHitError((x, y), "boundary" if b == K.ON_BOUNDARY else "N")
        return np.array(K.jac_branch(self.code, self.prm, b, x, y)).reshape(2, 2)

    def jacobian_branch(self, branch: int, p) -> np.ndarray:
        return np.array(K.jac_branch(self.code, self.prm, int(branch),
                                     float(p[0]), float(p[1]))).reshape(2, 2)

    def singular_distance(self, p, include_boundary: bool = False) -> float:
        x, y = as_point(p)
        return float(K.singular_dist(self.code, self.prm, x, y, include_boundary))

    def distances(self, pts, include_boundary: bool = False) -> np.ndarray:
        pts = np.ascontiguousarray(pts, dtype=float).reshape(-1, 2)
        out = np.empty(len(pts))
        K.dist_many(self.code, self.prm, np.ascontiguousarray(pts[:, 0]),
                    np.ascontiguousarray(pts[:, 1]), include_boundary, out)
        return out

    # -- geometry ---------------------------------------------------------
    def n_minus(self) -> tuple:
        """Closure of the one-sided limit images of N, as segments.

        Point components are returned as zero-length segments (a == b).
        """
        out = []
        if self.family == "geometric-lorenz":
            for b, side in ((0, "y->0+"), (1, "y->0-")):
                q = self.apply_branch(b, (0.0, 0.0))
                out.append(Segment(q, q, side))
        elif self.family == "belykh":
            k = self.params.k
            for b, side in ((0, "upper"), (1, "lower")):
                qa = self.apply_branch(b, (-1.0, -k))
                qb = self.apply_branch(b, (1.0, k))
                out.append(Segment(qa, qb, side))
        elif self.family == "stacked-lorenz":
            levels = self.params.levels
            for lev in range(levels):
                _, h_inv = conjugacy(lev)
                mid = h_inv((0.0, 0.0)).y
                for b, side in ((2 * lev, "+"), (2 * lev + 1, "-")):
                    q = self.apply_branch(b, (0.0, mid))
                    out.append(Segment(q, q, f"mid[{lev}]{side}"))
                # limits from inside the level at its horizontal edges; the
                # top edge of level 0 is the boundary of K, not part of N
                (_, _), (y_lo, y_hi) = level_box(levels, lev)
                edges = [(y_lo, 2 * lev + 1, "bottom")]
                if lev > 0:
                    edges.append((y_hi, 2 * lev, "top"))
                for yy, b, side in edges:
                    qa = self.apply_branch(b, (-1.0, yy))
                    qb = self.apply_branch(b, (1.0, yy))
                    out.append(Segment(qa, qb, f"edge[{lev}]{side}"))
        else:
            raise Unsupported(f"n_minus not available for {self.family}")
        return tuple(out)

    def lorenz_strips(self) -> list:
        """Horizontal strips (y_lo, y_hi, branch) of a Lorenz-type map."""
        if self.family == "geometric-lorenz":
            return [(0.0, 1.0, 0), (-1.0, 0.0, 1)]
        if self.family == "stacked-lorenz":
            strips = []
            for lev in range(self.params.levels):
                _, (y_lo, y_hi) = level_box(self.params.levels, lev)
                mid = 0.5 * (y_lo + y_hi)
                strips += [(mid, y_hi, 2 * lev), (y_lo, mid, 2 * lev + 1)]
            return strips
        raise Unsupported(f"{self.family} is not of Lorenz type")

    def to_json(self) -> dict:
        return {"family": self.family, "params": asdict(self.params)}


def _pack(params) -> np.ndarray:
    if isinstance(params, GeometricLorenzParams):
        v = [params.A, params.B, params.nu0, params.nu]
    elif isinstance(params, BelykhParams):
        v = [params.k, params.lambda1, params.lambda2, params.mu1, params.mu2]
    elif isinstance(params, StackedParams):
        b = params.base
        v = [b.A, b.B, b.nu0, b.nu, float(params.levels)]
    else:
        v = [0.0]
    return np.array(v, dtype=np.float64)


def make_geometric_lorenz(params: GeometricLorenzParams | None = None, **kw) -> SingularMap:
    params = params or GeometricLorenzParams(**kw)
    params.validate()
    seg = Segment(Point2(-1.0, 0.0), Point2(1.0, 0.0), "y=0")
    return SingularMap("geometric-lorenz", params, (seg,), 2)


def make_belykh(params: BelykhParams | None = None, **kw) -> SingularMap:
    params = params or BelykhParams(**kw)
    params.validate()
    k = params.k
    seg = Segment(Point2(-1.0, -k), Point2(1.0, k), "y=kx")
    return SingularMap("belykh", params, (seg,), 2)


def make_stacked_lorenz(params: StackedParams | None = None, **kw) -> SingularMap:
    if params is None:
        base = kw.pop("base")
        if isinstance(base, dict):
            base = GeometricLorenzParams(**base)
        params = StackedParams(base=base, **kw)
    params.validate()
    levels = int(params.levels)
    if levels != params.levels:
        params = StackedParams(params.base, levels)
    segs = []
    # below the last level is an excluded strip whose top edge is N
    for k in range(levels):
        y = 2.0 ** -k - 1.0
        segs.append(Segment(Point2(-1.0, y), Point2(1.0, y), f"edge[{k}]"))
        ym = 1.5 * 2.0 ** -k - 1.0
        segs.append(Segment(Point2(-1.0, ym), Point2(1.0, ym), f"mid[{k}]"))
    return SingularMap("stacked-lorenz", params, tuple(segs), 2 * levels,
                       meta={"excluded_strip": (-1.0, 2.0 ** -(levels - 1) - 1.0)})


_PARAM_TYPES = {
    "geometric-lorenz": GeometricLorenzParams,
    "belykh": BelykhParams,
}


def _strict_fields(cls, obj, where):
    names = [f for f in cls.__dataclass_fields__]
    if not isinstance(obj, dict):
        raise ParamError(f"{where}: expected an object")
    unknown = sorted(set(obj) - set(names))
    if unknown:
        raise ParamError(f"{where}: unknown field(s) {unknown}")
    missing = [n for n in names if n not in obj]
    if missing:
        raise ParamError(f"{where}: missing field(s) {missing}")


def map_from_json(obj: dict) -> SingularMap:
    """Build a map from ``{"family": ..., "params": {...}}`` (strict keys)."""
    if not isinstance(obj, dict) or set(obj) != {"family", "params"}:
        raise ParamError("map spec must have exactly the keys 'family' and 'params'")
    fam, prm = obj["family"], obj["params"]
    if fam in _PARAM_TYPES:
        cls = _PARAM_TYPES[fam]
        _strict_fields(cls, prm, f"params of {fam}")
        p = cls(**{k: float(v) for k, v in prm.items()})
        return make_geometric_lorenz(p) if fam == "geometric-lorenz" else make_belykh(p)
    if fam == "stacked-lorenz":
        _strict_fields(StackedParams, prm, "params of stacked-lorenz")
        _strict_fields(GeometricLorenzParams, prm["base"], "params.base of stacked-lorenz")
        base = GeometricLorenzParams(**{k: float(v) for k, v in prm["base"].items()})
        return make_stacked_lorenz(StackedParams(base, prm["levels"]))
    raise ParamError(f"unknown family {fam!r}")


# -- data-driven Lorenz-type maps --------------------------------------------

@dataclass(frozen=True)
class LorenzBranch:
    """One strip I x (a_i, a_{i+1}) of a Lorenz-type map.

    ``phi``/``psi`` give the new x/y, ``jac`` returns the 2x2 differential.
    ``lower_limit``/``upper_limit`` are the x-independent one-sided limits
    (phi, psi) as y tends to a_i from above / a_{i+1} from below.
    ``exponents`` (nu^1..nu^4) and ``constants`` (B^1, C^1, B^2, C^2) are
    descriptive metadata and are not checked.
    """

    phi: Callable[[float, float], float]
    psi: Callable[[float, float], float]
    jac: Callable[[float, float], Sequence]
    lower_limit: tuple | None = None
    upper_limit: tuple | None = None
    exponents: tuple = (0.0, 0.0, 0.0, 0.0)
    constants: tuple = ()


class LorenzTypeMap(SingularMap):
    """Generic Lorenz-type map with partition -1 = a_0 < ... < a_{m+1} = 1."""

    def __init__(self, partition: Sequence[float], branches: Sequence[LorenzBranch]):
        a = [float(v) for v in partition]
        if len(a) != len(branches) + 1 or a[0] != -1.0 or a[-1] != 1.0:
            raise ParamError("partition must run from -1 to 1 with one more point than branches")
        if any(b <= c for c, b in zip(a, a[1:])):
            raise ParamError("partition points must be strictly increasing")
        segs = tuple(Segment(Point2(-1.0, y), Point2(1.0, y), f"y={y:g}") for y in a[1:-1])
        super().__init__("lorenz-type-generic", None, segs, len(branches),
                         meta={"partition": tuple(a)})
        object.__setattr__(self, "partition", tuple(a))
        object.__setattr__(self, "branches", tuple(branches))

    def branch_of(self, p) -> int:
        y = float(p[1])
        a = self.partition
        if y in a[1:-1]:
            return -1
        for i in range(len(a) - 1):
            if y <= a[i + 1]:
                return i
        return len(a) - 2

    def apply_branch(self, branch: int, p) -> Point2:
        br = self.branches[branch]
        x, y = float(p[0]), float(p[1])
        a = self.partition
        if y == a[branch] and br.lower_limit is not None and branch > 0:
            return Point2(*map(float, br.lower_limit))
        if y == a[branch + 1] and br.upper_limit is not None and branch + 1 < len(a) - 1:
            return Point2(*map(float, br.upper_limit))
        return Point2(float(br.phi(x, y)), float(br.psi(x, y)))

    def eval(self, p):
        x, y = as_point(p)
        if abs(x) >= 1.0 or abs(y) >= 1.0:
            return SingularHit(Point2(x, y), "boundary")
        b = self.branch_of((x, y))
        if b < 0:
            return SingularHit(Point2(x, y), "N")
        return self.apply_branch(b, (x, y))

    def jacobian_branch(self, branch: int, p) -> np.ndarray:
        return np.asarray(self.branches[branch].jac(float(p[0]), float(p[1])),
                          dtype=float).reshape(2, 2)

    def jacobian(self, p) -> np.ndarray:
        x, y = as_point(p)
        hit = self.eval((x, y))
        if isinstance(hit, SingularHit):
            raise SingularHitError((x, y), hit.where)
        return self.jacobian_branch(self.branch_of((x, y)), (x, y))

    def singular_distance(self, p, include_boundary: bool = False) -> float:
        x, y = as_point(p)
        inner = self.partition[1:-1]
        d = min((abs(y - a) for a in inner), default=math.inf)
        if include_boundary:
            d = max(min(d, 1.0 - abs(x), 1.0 - abs(y)), 0.0)
        return float(d)

    def distances(self, pts, include_boundary: bool = False) -> np.ndarray:
        pts = np.asarray(pts, dtype=float).reshape(-1, 2)
        return np.array([self.singular_distance(p, include_boundary) for p in pts])

    def n_minus(self) -> tuple:
        out = []
        a = self.partition
        for i, br in enumerate(self.branches):
            sides = []
            if i > 0:
                sides.append((br.lower_limit, f"a{i}+"))
            if i + 1 < len(a) - 1:
                sides.append((br.upper_limit, f"a{i + 1}-"))
            for lim, label in sides:
                if lim is None:
                    raise Unsupported(f"branch {i} lacks a declared one-sided limit ({label})")
                q = Point2(float(lim[0]), float(lim[1]))
                out.append(Segment(q, q, label))
        return tuple(out)

    def lorenz_strips(self) -> list:
        a = self.partition
        return [(a[i], a[i + 1], i) for i in range(len(a) - 1)]

    def to_json(self) -> dict:
        raise Unsupported("lorenz-type-generic maps carry callables and are not JSON-serializable")
