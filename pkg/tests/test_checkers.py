import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from belykh_oracle import bad_mu2, hits, least_k, solve_bad_mu2
from singhyp.checkers import (check_l3, check_orbit_separation, check_sh7, expansion_lambda,
                              grid, k_for_lambda, sweep)
from singhyp.errors import Unsupported
from singhyp.maps import SingularHit, make_belykh, make_geometric_lorenz, make_stacked_lorenz

from conftest import STANDARD_GL


def belykh(l2, m2, k=0.0):
    return make_belykh(k=k, lambda1=0.3, lambda2=l2, mu1=0.3, mu2=m2)


def test_k_for_lambda():
    assert k_for_lambda(1.9) == 2
    assert k_for_lambda(1.2) == 4
    assert k_for_lambda(2.0) == 2  # 2^1 = 2 is not > 2
    assert k_for_lambda(math.sqrt(2) + 1e-9) == 2
    with pytest.raises(ValueError):
        k_for_lambda(1.0)


def test_sh7_pass_example():
    rep = check_sh7(belykh(1.9, 1.9), samples=1000)
    assert rep.verdict == "pass"
    assert rep.k_used == 2 and rep.lambda_used == pytest.approx(1.9, abs=1e-12)
    d = {}
    for w in rep.witnesses:
        d.setdefault(w.j, []).append(w.distance)
    assert d[0] == pytest.approx([0.9, 0.9], abs=1e-12)
    assert d[1] == pytest.approx([0.81, 0.81], abs=1e-12)
    assert all(v > 0 for v in rep.margins.values())


def test_sh7_fail_example():
    m = belykh(1.2, 1.25)
    rep = check_sh7(m, samples=1000)
    assert rep.verdict == "fail"
    assert rep.lambda_used == pytest.approx(1.2, abs=1e-12) and rep.k_used == 4
    w = rep.witnesses[0]
    assert w.j == 1 and abs(w.distance) <= 1e-12
    # reproduce: the witness is on N and is the lower-branch image of the upper N- segment
    assert isinstance(m.eval(w.point), SingularHit)
    pre = ((w.point[0] + 1) / 0.3 - 1, -0.2)
    assert 0.4 - 1e-12 <= pre[0] <= 1 + 1e-12
    img = m.apply_branch(m.branch_of((0.0, -0.5)), pre)
    assert img == pytest.approx(w.point, abs=1e-12)


def test_sh7_lorenz_passes_touching_boundary(gl):
    rep = check_sh7(gl, samples=20000)
    assert rep.verdict == "pass"
    assert min(rep.data["boundary_distance"].values()) == 0.0
    # at j = 0 the N- points (1, -A) and (-1, A) sit at height A from N
    assert rep.margins["j0"] + 1e-9 == pytest.approx(0.5, abs=1e-12)
    assert "boundary" in rep.notes


def test_lambda_definitions_agree():
    for lam in (1.3, 1.6, 1.9):
        m = belykh(lam, lam)
        a, _ = expansion_lambda(m, "inf_operator_norm", samples=2000)
        b, _ = expansion_lambda(m, "min_cone_expansion", samples=2000)
        assert abs(a - b) <= 1e-12 and abs(a - lam) <= 1e-12


def test_unknown_lambda_definition():
    with pytest.raises(ValueError):
        expansion_lambda(belykh(1.3, 1.3), "spectral_radius")


@given(st.floats(1.05, 1.95), st.floats(1.05, 1.95), st.floats(0, 1), st.floats(0, 1))
@settings(max_examples=30)
def test_margin_monotone(l2, m2, e1, e2):
    m = belykh(round(l2, 3), round(m2, 3))
    lo, hi = sorted((e1, e2))
    a = check_sh7(m, margin_eps=lo, samples=200)
    b = check_sh7(m, margin_eps=hi, samples=200)
    assert not (a.verdict == "fail" and b.verdict == "pass")


@given(st.integers(105, 195), st.integers(105, 195))
@settings(max_examples=40)
def test_sh7_matches_exact_oracle(a, b):
    l2, m2 = a / 100, b / 100
    rep = check_sh7(belykh(l2, m2), samples=200)
    assert rep.k_used == least_k(min(l2, m2)) or abs(min(l2, m2) ** rep.k_used - 2) < 1e-9
    assert (rep.verdict == "fail") == bool(hits(l2, m2))


def test_fail_reports_carry_witness():
    rep = check_sh7(belykh(1.2, 1.25), samples=200)
    assert rep.witnesses and min(rep.margins.values()) <= 0


# -- L3 -----------------------------------------------------------------------

def test_l3_lorenz(gl):
    rep = check_l3(gl, 512)
    assert rep.verdict == "pass"
    n = rep.data["norms"]
    assert n["phi_x"] == pytest.approx(0.4, abs=1e-3)
    assert n["psi_x"] == 0.0
    assert rep.margins["cross_term"] == pytest.approx((1 - n["phi_x"]) * (1 - n["psi_y_inv"]))
    assert all(v > 0 for v in rep.margins.values())


def test_l3_psi_y_inverse_closed_form(gl):
    # |psi_y| = (1+A) nu0 |y|^(nu0-1) is smallest at |y| = 1
    n = check_l3(gl, 64).data["norms"]
    assert n["psi_y_inv"] == pytest.approx(1 / (1.5 * 0.8), rel=1e-12)


def test_l3_guards(gl, belykh13):
    assert check_l3(gl, 1).verdict == "inconclusive"
    with pytest.raises(Unsupported):
        check_l3(belykh13)


@given(st.lists(st.floats(-1e-6, 1e-6), min_size=4, max_size=4))
@settings(max_examples=15)
def test_l3_norms_continuous(d):
    base = check_l3(make_geometric_lorenz(**STANDARD_GL), 128).data["norms"]
    p = dict(A=0.5 + d[0], B=0.4 + d[1], nu0=0.8 + d[2], nu=1.5 + d[3])
    pert = check_l3(make_geometric_lorenz(**p), 128).data["norms"]
    for key in base:
        assert abs(base[key] - pert[key]) < 1e-4


def test_l3_stacked_runs():
    rep = check_l3(make_stacked_lorenz(base=STANDARD_GL, levels=2), 64)
    assert rep.verdict in ("pass", "fail")
    assert rep.data["norms"]["psi_x"] == 0.0


# -- orbit separation ---------------------------------------------------------

def test_orbit_separation_lorenz(gl):
    rep = check_orbit_separation(gl, horizon=1000)
    assert rep.verdict == "pass"
    assert rep.data["gamma"] <= 0.05 and rep.data["C"] > 0


def test_orbit_separation_exact_hit():
    rep = check_orbit_separation(belykh(1.2, 1.25), horizon=50)
    assert rep.verdict == "fail" and rep.data["C"] == 0.0
    assert any(w.distance == 0.0 and w.j == 1 for w in rep.witnesses)


def test_orbit_separation_short_horizon(gl):
    assert check_orbit_separation(gl, horizon=1).verdict == "inconclusive"


# -- sweeps -------------------------------------------------------------------

def test_grid():
    g = grid(1.05, 1.95, 0.01)
    assert len(g) == 91 and g[0] == 1.05 and g[-1] == 1.95 and 1.25 in g


def test_sweep_matches_enumeration():
    mus = grid(1.05, 1.95, 0.01)
    res = sweep("belykh", {"mu2": mus}, "sh7", 1000,
                base={"k": 0.0, "lambda1": 0.3, "lambda2": 1.2, "mu1": 0.3, "mu2": 1.5})
    assert len(res.cells) == 91
    fails = sorted(key[0] for key in res.fail_set())
    assert fails == bad_mu2(mus, 1.2)
    assert 1.25 in fails
    assert sum(c.verdict == "pass" for c in res.cells.values()) > 80


def test_symbolic_enumeration_agrees_on_grid():
    # roots of the j <= 3 hit polynomials, intersected with the grid
    mus = grid(1.05, 1.95, 0.01)
    roots = solve_bad_mu2(1.2, 3)
    on_grid = sorted(m for m in mus if any(abs(float(r) - m) < 1e-12 for r in roots))
    assert on_grid == bad_mu2(mus, 1.2, jmax=3)
    assert 1.25 in on_grid


def test_empty_axis_empty_result():
    assert sweep("belykh", {"mu2": []}).cells == {}


def test_sweep_records_skips():
    res = sweep("belykh", {"lambda2": [1.5, 2.5]}, "sh7", 200)
    cells = list(res.cells.values())
    assert cells[0].verdict is not None and cells[0].skipped is None
    assert cells[1].verdict is None and "lambda2" in cells[1].skipped


def test_sweep_continuity_in_k():
    ks = grid(-0.2, 0.2, 0.05)
    res = sweep("belykh", {"k": ks}, "sh7", 500,
                base={"k": 0.0, "lambda1": 0.3, "lambda2": 1.6, "mu1": 0.3, "mu2": 1.6})
    assert all(c.skipped is None for c in res.cells.values())
    verdicts = {key[0]: c.verdict for key, c in res.cells.items()}
    near = [verdicts[k] for k in ks if abs(k) <= 0.1 + 1e-12]
    assert set(near) == {"pass"}


def test_sweep_workers_and_dotted_axes(tmp_path):
    a = sweep("stacked-lorenz", {"base.A": [0.4, 0.5]}, "l3", workers=1)
    b = sweep("stacked-lorenz", {"base.A": [0.4, 0.5]}, "l3", workers=2)
    a.to_csv(tmp_path / "a.csv")
    b.to_csv(tmp_path / "b.csv")
    assert (tmp_path / "a.csv").read_bytes() == (tmp_path / "b.csv").read_bytes()
    assert list(a.cells.values())[0].params["base"]["A"] == 0.4
