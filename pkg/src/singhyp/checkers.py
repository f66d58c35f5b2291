"""Finite-time numerical checks of the finiteness hypotheses.

The discontinuity images N- are carried forward as polylines using each
branch formula on the closure of its domain, so pieces that start on the
boundary of K or on N itself are still transported.
"""
from __future__ import annotations

import copy
import csv
import itertools
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from singhyp import _kernels as K
from singhyp.errors import SingHypError, Unsupported
from singhyp.geometry import Lines, boundary_distance, polyline_distance
from singhyp.maps import map_from_json
from singhyp.measures import count_components, ensemble_fingerprints
from singhyp.reports import CheckReport, Witness
from singhyp.trajectory import ConeSpec, jacobians, min_cone_expansion, sample_points

LAMBDA_DEFINITIONS = ("inf_operator_norm", "min_cone_expansion")
DEFAULT_MARGIN = 1e-9
DEFAULT_GAMMA_MAX = 0.05
L3_COLLAR = 1e-4
LAMBDA_SAMPLES = 100_000
LAMBDA_COLLAR = 1e-6


# -- polyline transport -------------------------------------------------------

def _labels(m, pts) -> np.ndarray:
    if m.code is None:
        return np.array([m.branch_of(p) for p in pts], dtype=np.int64)
    out = np.empty(len(pts), dtype=np.int64)
    K.branch_many(m.code, m.prm, np.ascontiguousarray(pts[:, 0]),
                  np.ascontiguousarray(pts[:, 1]), out)
    return out


def _apply(m, b, pts) -> np.ndarray:
    if m.code is None:
        return np.array([tuple(m.apply_branch(b, p)) for p in pts], dtype=float).reshape(-1, 2)
    ox = np.empty(len(pts))
    oy = np.empty(len(pts))
    K.apply_many(m.code, m.prm, b, np.ascontiguousarray(pts[:, 0]),
                 np.ascontiguousarray(pts[:, 1]), ox, oy)
    return np.column_stack([ox, oy])


def _length(pts) -> float:
    return float(np.hypot(*np.diff(pts, axis=0).T).sum()) if len(pts) > 1 else 0.0


class Transport:
    """Forward images of one N- component as a list of polyline pieces."""

    def __init__(self, m, segment, refine_h: float = 1e-2, subdivide: int = 64):
        self.m = m
        self.lines = Lines(m.segments)
        self.affine = m.family == "belykh"
        self.refine_h = refine_h
        a, b = np.asarray(segment.a, float), np.asarray(segment.b, float)
        if np.array_equal(a, b):
            self.pieces = [a.reshape(1, 2)]
        else:
            n = 1 if self.affine else subdivide
            t = np.linspace(0.0, 1.0, n + 1)[:, None]
            self.pieces = [a + t * (b - a)]
        self.label = segment.label
        self.max_loss = 0.0

    def distance(self):
        """(distance to N, nearest point, distance to the boundary of K)."""
        best, where, bd = math.inf, None, math.inf
        for P in self.pieces:
            d, w = polyline_distance(P, self.m.segments)
            if d < best:
                best, where = d, w
            bd = min(bd, boundary_distance(P))
        return best, where, bd

    def _runs(self, P):
        lab = _labels(self.m, P)
        if len(P) > 1:
            change = np.flatnonzero((lab[:-1] != lab[1:]) & (lab[:-1] >= 0) & (lab[1:] >= 0))
            if len(change):
                tau, _ = self.lines.first_crossing(P[change, 0], P[change, 1],
                                                   P[change + 1, 0], P[change + 1, 1])
                tau = np.where(np.isfinite(tau), tau, 0.5)
                X = P[change] + tau[:, None] * (P[change + 1] - P[change])
                P = np.insert(P, change + 1, X, axis=0)
                lab = np.insert(lab, change + 1, K.ON_N)
        runs, start = [], 0
        on_n = lab < 0
        for i in range(1, len(P) + 1):
            if i == len(P) or on_n[i]:
                seg = slice(start, min(i + 1, len(P)))
                good = lab[seg][lab[seg] >= 0]
                if len(good):
                    runs.append((int(good[0]), P[seg]))
                start = i
        return runs

    def step(self) -> None:
        out = []
        before = sum(_length(P) for P in self.pieces)
        kept = 0.0
        for P in self.pieces:
            for b, R in self._runs(P):
                kept += _length(R)
                out.append(self._map_run(b, R))
        if before > 0:
            self.max_loss = max(self.max_loss, 1.0 - kept / before)
        self.pieces = out

    def _map_run(self, b, R):
        Q = _apply(self.m, b, R)
        if self.affine or len(R) < 2:
            return Q
        for _ in range(30):
            long = np.flatnonzero(np.hypot(*np.diff(Q, axis=0).T) > self.refine_h)
            if len(long) == 0 or len(R) > 200_000:
                break
            mid = 0.5 * (R[long] + R[long + 1])
            R = np.insert(R, long + 1, mid, axis=0)
            Q = np.insert(Q, long + 1, _apply(self.m, b, mid), axis=0)
        return Q


# -- SH7 ----------------------------------------------------------------------

def expansion_lambda(m, lambda_definition: str = "inf_operator_norm",
                     samples: int = LAMBDA_SAMPLES, seed: int = 0,
                     collar_eps: float = LAMBDA_COLLAR, cone_tan: float = 0.0):
    """Sampled lower bound for the expansion rate; returns (lambda, argmin point).

    ``min_cone_expansion`` uses the vertical cone of half-angle tangent
    ``cone_tan`` (0 means the vertical axis alone).
    """
    if lambda_definition not in LAMBDA_DEFINITIONS:
        raise ValueError(f"lambda_definition must be one of {LAMBDA_DEFINITIONS}")
    pts, _ = sample_points(m, samples, seed, "uniform", collar_eps)
    J = jacobians(m, pts)
    if lambda_definition == "inf_operator_norm":
        vals = np.linalg.norm(J, 2, axis=(1, 2))
    else:
        cone = ConeSpec("vertical", cone_tan) if cone_tan > 0 else None
        vals = min_cone_expansion(J, cone)[0]
    i = int(np.argmin(vals))
    return float(vals[i]), (float(pts[i, 0]), float(pts[i, 1]))


def k_for_lambda(lam: float) -> int:
    """Least k with lam**k > 2 (strictly)."""
    if not lam > 1.0:
        raise ValueError(f"lambda must exceed 1, got {lam}")
    k = max(1, math.ceil(math.log(2.0) / math.log(lam)))
    while lam ** k <= 2.0:
        k += 1
    while k > 1 and lam ** (k - 1) > 2.0:
        k -= 1
    return k


def check_sh7(m, lambda_definition: str = "inf_operator_norm",
              margin_eps: float = DEFAULT_MARGIN, *, samples: int = LAMBDA_SAMPLES,
              seed: int = 0, collar_eps: float = LAMBDA_COLLAR, cone_tan: float = 0.0,
              lam: float | None = None) -> CheckReport:
    """Images of N- for j < k must stay more than ``margin_eps`` away from N.

    Distances to the boundary of K are reported in ``data`` but do not
    decide the verdict.  ``lam`` overrides the sampled expansion rate.
    """
    where = None
    if lam is None:
        lam, where = expansion_lambda(m, lambda_definition, samples, seed, collar_eps, cone_tan)
    if not lam > 1.0:
        return CheckReport("SH7", "inconclusive", lambda_used=lam,
                           lambda_definition=lambda_definition,
                           notes=f"sampled expansion {lam:.6g} <= 1, no finite k")
    k = k_for_lambda(lam)
    transports = [Transport(m, s) for s in m.n_minus()]
    witnesses, margins, bdist = [], {}, {}
    worst = math.inf
    for j in range(k):
        dmin, bmin = math.inf, math.inf
        for tr in transports:
            if not tr.pieces:
                continue
            d, w, bd = tr.distance()
            witnesses.append(Witness(j, w, d))
            dmin, bmin = min(dmin, d), min(bmin, bd)
        margins[f"j{j}"] = dmin - margin_eps
        bdist[f"j{j}"] = bmin
        worst = min(worst, dmin)
        if j + 1 < k:
            for tr in transports:
                tr.step()
    loss = max((tr.max_loss for tr in transports), default=0.0)
    notes = "separation from N decides; boundary distances reported separately"
    if min(bdist.values(), default=math.inf) == 0.0:
        notes += "; images of N- touch the boundary of K"
    if worst <= margin_eps:
        verdict = "fail"
        witnesses = sorted([w for w in witnesses if w.distance <= margin_eps],
                           key=lambda w: (w.j, w.distance)) + \
            [w for w in witnesses if w.distance > margin_eps]
    elif loss > 0.5:
        verdict = "inconclusive"
        notes += f"; transport lost {loss:.0%} of its arclength on N"
    else:
        verdict = "pass"
    return CheckReport("SH7", verdict, k_used=k, lambda_used=lam,
                       lambda_definition=lambda_definition, witnesses=witnesses,
                       margins=margins, notes=notes,
                       data={"boundary_distance": bdist, "lambda_point": where,
                             "components": [tr.label for tr in transports],
                             "min_distance": worst, "arclength_loss": loss,
                             "margin_eps": margin_eps})


# -- L3 -----------------------------------------------------------------------

def _strip_jacobians(m, b, xs, ys):
    X, Y = np.meshgrid(xs, ys)
    X, Y = X.ravel(), Y.ravel()
    if m.code is None:
        J = np.stack([m.jacobian_branch(b, (x, y)) for x, y in zip(X, Y)])
    else:
        J = np.empty((len(X), 2, 2))
        K.jac_branch_many(m.code, m.prm, b, X, Y, J)
    return J, np.column_stack([X, Y])


def check_l3(m, sample_grid: int = 512, collar: float = L3_COLLAR) -> CheckReport:
    """Sup norms of the partials on a mesh and the three (L3) inequalities.

    Here f is the new x-coordinate phi and g the new y-coordinate psi.
    Strip ends on N are pulled in by ``collar``; ends on the boundary of K
    are kept.
    """
    if m.family == "belykh":
        raise Unsupported("the (L3) inequalities apply to Lorenz-type maps; use cone_check")
    strips = m.lorenz_strips()
    if sample_grid < 2:
        return CheckReport("L3", "inconclusive", notes=f"sample_grid={sample_grid} too coarse",
                           data={"collar": collar})
    n_lines = {float(s.a[1]) for s in m.segments}
    norms = {"phi_x": 0.0, "psi_y_inv": 0.0, "psi_x": 0.0, "psi_y_inv_phi_y": 0.0}
    argmax = {}
    xs = np.linspace(-1.0, 1.0, sample_grid)
    for lo, hi, b in strips:
        ylo = lo + collar if lo in n_lines else lo
        yhi = hi - collar if hi in n_lines else hi
        ys = np.linspace(ylo, yhi, sample_grid)
        J, P = _strip_jacobians(m, b, xs, ys)
        vals = {"phi_x": np.abs(J[:, 0, 0]), "psi_y_inv": np.abs(1.0 / J[:, 1, 1]),
                "psi_x": np.abs(J[:, 1, 0]), "psi_y_inv_phi_y": np.abs(J[:, 0, 1] / J[:, 1, 1])}
        for key, v in vals.items():
            i = int(np.argmax(v))
            if v[i] >= norms[key]:
                norms[key] = float(v[i])
                argmax[key] = (float(P[i, 0]), float(P[i, 1]))
    fx, gyi, gx, gyfy = (norms[k] for k in ("phi_x", "psi_y_inv", "psi_x", "psi_y_inv_phi_y"))
    margins = {
        "1-|phi_x|": 1.0 - fx,
        "1-|psi_y^-1|": 1.0 - gyi,
        "contraction_gap": 1.0 - gyi * fx - 2.0 * math.sqrt(gyi * gx * gyfy),
        "cross_term": (1.0 - fx) * (1.0 - gyi) - gyi * gx,
    }
    ok = all(v > 0 for v in margins.values()) and all(math.isfinite(v) for v in norms.values())
    return CheckReport("L3", "pass" if ok else "fail", margins=margins,
                       notes=f"grid {sample_grid}x{sample_grid} per strip, collar {collar:g} of N",
                       data={"norms": norms, "argmax": argmax, "collar": collar,
                             "sample_grid": sample_grid})


# -- orbit separation ---------------------------------------------------------

def check_orbit_separation(m, horizon: int = 1000, gamma_max: float = DEFAULT_GAMMA_MAX,
                           collar_eps: float = 1e-12) -> CheckReport:
    """Fit d_n >= C exp(-gamma n) to the distances of N- images from N.

    An exact hit of N gives C = 0 and fails.  A component that comes
    within ``collar_eps`` of N (without hitting it) before horizon/2 makes
    the result inconclusive.
    """
    if horizon < 2:
        return CheckReport("THM41B", "inconclusive", notes="horizon < 2 leaves the fit underdetermined")
    comps = m.n_minus()
    gammas, consts, witnesses, series = [], [], [], {}
    hit, early = False, []
    for seg in comps:
        tr = Transport(m, seg)
        ns, ds = [], []
        first_w = None
        comp_hit = False
        for n in range(horizon):
            if not tr.pieces:
                break
            d, w, _ = tr.distance()
            if d <= 0.0:
                comp_hit = True
                witnesses.append(Witness(n, w, 0.0))
                break
            if d <= collar_eps:
                break
            ns.append(n)
            ds.append(d)
            if first_w is None or d < first_w.distance:
                first_w = Witness(n, w, d)
            tr.step()
        series[seg.label] = len(ns)
        if not comp_hit and len(ns) < horizon // 2:
            early.append(seg.label)
        if len(ns) >= 2:
            slope = float(np.polyfit(np.array(ns, float), np.log(ds), 1)[0])
            g = max(0.0, -slope)
            c = float(min(d * math.exp(g * n) for n, d in zip(ns, ds)))
        else:
            g, c = math.nan, math.nan
        if comp_hit:
            hit, c = True, 0.0
        gammas.append(g)
        consts.append(c)
        if first_w is not None:
            witnesses.append(first_w)
    finite_g = [g for g in gammas if math.isfinite(g)]
    gamma = max(finite_g) if finite_g else math.nan
    C = 0.0 if hit else min((c for c in consts if math.isfinite(c)), default=math.nan)
    if hit:
        verdict, notes = "fail", "an image of N- lands on N (C = 0)"
    elif early:
        verdict, notes = "inconclusive", f"orbits reached the collar before horizon/2: {early}"
    elif not math.isfinite(gamma):
        verdict, notes = "inconclusive", "no usable distances"
    else:
        verdict = "pass" if gamma <= gamma_max else "fail"
        notes = f"gamma_max = {gamma_max:g} is a user threshold"
    margins = {"gamma_max-gamma": gamma_max - gamma if math.isfinite(gamma) else math.nan,
               "C": C}
    return CheckReport("THM41B", verdict, witnesses=witnesses, margins=margins, notes=notes,
                       data={"gamma": gamma, "C": C, "per_component_gamma": gammas,
                             "per_component_C": consts, "steps_used": series,
                             "horizon": horizon})


# -- sweeps -------------------------------------------------------------------

DEFAULT_BASES = {
    "belykh": {"k": 0.0, "lambda1": 0.3, "lambda2": 1.2, "mu1": 0.3, "mu2": 1.5},
    "geometric-lorenz": {"A": 0.5, "B": 0.4, "nu0": 0.8, "nu": 1.5},
    "stacked-lorenz": {"base": {"A": 0.5, "B": 0.4, "nu0": 0.8, "nu": 1.5}, "levels": 2},
}
CHECKS = ("sh7", "l3", "thm41b")


@dataclass
class SweepCell:
    params: dict
    verdict: str | None
    margins: dict = field(default_factory=dict)
    component_count: int | None = None
    skipped: str | None = None


@dataclass
class SweepResult:
    family: str
    check: str
    axes: dict
    cells: dict

    def fail_set(self) -> list:
        return [key for key, c in self.cells.items() if c.verdict == "fail"]

    def to_csv(self, path) -> None:
        names = list(self.axes)
        mkeys = sorted({k for c in self.cells.values() for k in c.margins})
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(names + ["verdict"] + [f"margin:{k}" for k in mkeys] +
                       ["component_count", "skipped"])
            for key, c in self.cells.items():
                w.writerow([repr(float(v)) if isinstance(v, float) else v for v in key] +
                           [c.verdict or ""] + [repr(float(c.margins[k])) if k in c.margins
                                                else "" for k in mkeys] +
                           ["" if c.component_count is None else c.component_count,
                            c.skipped or ""])


def _set_param(params: dict, name: str, value) -> None:
    node = params
    parts = name.split(".")
    for p in parts[:-1]:
        node = node.setdefault(p, {})
    node[parts[-1]] = value


def _run_cell(family, check, params, index, seed, budget, margin_eps, lambda_definition,
              components):
    try:
        m = map_from_json({"family": family, "params": params})
        if check == "sh7":
            rep = check_sh7(m, lambda_definition, margin_eps, samples=budget, seed=seed + index)
        elif check == "l3":
            rep = check_l3(m)
        else:
            rep = check_orbit_separation(m, horizon=budget)
        count = None
        if components:
            fps = ensemble_fingerprints(m, components.get("count", 20), seed + index,
                                        components.get("n", 10**5))
            count = count_components(fps).cluster_count
        return SweepCell(params, rep.verdict, rep.margins, count)
    except (SingHypError, ValueError) as exc:
        return SweepCell(params, None, skipped=f"{type(exc).__name__}: {exc}")


def sweep(family: str, axes: dict, check: str = "sh7", per_cell_budget: int = 10_000, *,
          base: dict | None = None, seed: int = 0, workers: int = 1,
          margin_eps: float = DEFAULT_MARGIN, lambda_definition: str = "inf_operator_norm",
          components: dict | None = None) -> SweepResult:
    """Run ``check`` on every cell of the product of ``axes``.

    Axis names may be dotted (``base.A``) for nested parameters.  Cell i is
    seeded with ``seed + i``.  ``per_cell_budget`` is the sample count for
    sh7 and the horizon for thm41b.  Per-cell errors mark the cell skipped.
    """
    if check not in CHECKS:
        raise ValueError(f"check must be one of {CHECKS}")
    axes = {k: list(v) for k, v in axes.items()}
    defaults = copy.deepcopy(base if base is not None else DEFAULT_BASES.get(family, {}))
    if not axes or any(len(v) == 0 for v in axes.values()):
        return SweepResult(family, check, axes, {})
    keys = list(itertools.product(*axes.values()))
    jobs = []
    for i, key in enumerate(keys):
        params = copy.deepcopy(defaults)
        for name, v in zip(axes, key):
            _set_param(params, name, v)
        jobs.append((family, check, params, i, seed, per_cell_budget, margin_eps,
                     lambda_definition, components))
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            cells = list(pool.map(lambda a: _run_cell(*a), jobs))
    else:
        cells = [_run_cell(*a) for a in jobs]
    return SweepResult(family, check, axes, dict(zip(keys, cells)))


def grid(lo: float, hi: float, step: float) -> list:
    """Inclusive grid lo, lo + step, ..., rounded to 12 decimals."""
    n = int(round((hi - lo) / step))
    return [round(lo + i * step, 12) for i in range(n + 1)]
