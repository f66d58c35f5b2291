"""Batch front end: ``singhyp run --config cfg.json --out dir``.

Exit status is 0 on success or a passing check, 2 when a check does not
pass (fail or inconclusive) and 1 on any error.
"""
from __future__ import annotations

import argparse
import json
import logging
import math
import sys
from importlib import resources
from pathlib import Path

import numpy as np

import singhyp
from singhyp.checkers import (CHECKS, LAMBDA_DEFINITIONS, check_l3, check_orbit_separation,
                              check_sh7, grid, sweep)
from singhyp.errors import ConfigError, SingHypError
from singhyp.leaf import leaf_pushforward
from singhyp.maps import map_from_json
from singhyp.measures import (count_components, ensemble_fingerprints, fingerprints_to_csv,
                              histogram, level_fingerprints)
from singhyp.reports import _clean
from singhyp.trajectory import (ConeSpec, cone_check, ensemble, lyapunov_spectrum, orbit_rng,
                                _draw_initial)

log = logging.getLogger("singhyp")

EXIT_OK, EXIT_ERROR, EXIT_CHECK = 0, 1, 2
COMMANDS = ("simulate", "lyapunov", "components", "leafpush", "check", "sweep")
TOP_KEYS = {"map", "command", "options", "out"}


# -- option schema ------------------------------------------------------------

def _int(lo=None, hi=None):
    def conv(name, v):
        if isinstance(v, bool) or not isinstance(v, (int, float)) or int(v) != v:
            raise ConfigError(f"{name}: expected an integer, got {v!r}")
        v = int(v)
        if (lo is not None and v < lo) or (hi is not None and v > hi):
            raise ConfigError(f"{name}: {v} outside [{lo}, {hi}]")
        return v
    return conv


def _real(lo=None, hi=None, open_lo=False):
    def conv(name, v):
        if isinstance(v, bool) or not isinstance(v, (int, float)) or not math.isfinite(v):
            raise ConfigError(f"{name}: expected a finite number, got {v!r}")
        v = float(v)
        if lo is not None and (v < lo or (open_lo and v == lo)):
            raise ConfigError(f"{name}: {v} below {lo}")
        if hi is not None and v > hi:
            raise ConfigError(f"{name}: {v} above {hi}")
        return v
    return conv


def _choice(*opts):
    def conv(name, v):
        if v not in opts:
            raise ConfigError(f"{name}: expected one of {list(opts)}, got {v!r}")
        return v
    return conv


def _bool(name, v):
    if not isinstance(v, bool):
        raise ConfigError(f"{name}: expected true or false, got {v!r}")
    return v


def _point_or_null(name, v):
    if v is None:
        return None
    if not isinstance(v, list) or len(v) != 2:
        raise ConfigError(f"{name}: expected [x, y] or null")
    return [_real(-1.0, 1.0)(f"{name}[{i}]", c) for i, c in enumerate(v)]


def _box_or_null(name, v):
    if v is None:
        return None
    if not isinstance(v, list) or len(v) != 2 or any(not isinstance(r, list) or len(r) != 2
                                                     for r in v):
        raise ConfigError(f"{name}: expected [[x_lo, x_hi], [y_lo, y_hi]] or null")
    return [[_real(-1.0, 1.0)(f"{name}[{i}][{j}]", c) for j, c in enumerate(r)]
            for i, r in enumerate(v)]


def _threshold(name, v):
    if v == "auto":
        return v
    return _real(0.0, open_lo=True)(name, v)


def _cone(name, v):
    if not isinstance(v, dict) or set(v) != {"center_direction", "half_angle_tan"}:
        raise ConfigError(f"{name}: expected {{center_direction, half_angle_tan}}")
    try:
        ConeSpec(v["center_direction"], float(v["half_angle_tan"]))
    except (ValueError, TypeError) as exc:
        raise ConfigError(f"{name}: {exc}") from exc
    return {"center_direction": v["center_direction"],
            "half_angle_tan": float(v["half_angle_tan"])}


def _axes(name, v):
    if not isinstance(v, dict):
        raise ConfigError(f"{name}: expected an object of parameter grids")
    out = {}
    for k, g in v.items():
        where = f"{name}.{k}"
        if isinstance(g, list):
            out[k] = [_real()(f"{where}[{i}]", x) for i, x in enumerate(g)]
        elif isinstance(g, dict) and set(g) == {"lo", "hi", "step"}:
            lo, hi = _real()(f"{where}.lo", g["lo"]), _real()(f"{where}.hi", g["hi"])
            step = _real(0.0, open_lo=True)(f"{where}.step", g["step"])
            out[k] = grid(lo, hi, step)
        else:
            raise ConfigError(f"{where}: expected a list or {{lo, hi, step}}")
    return out


COMMON = {"seed": (_int(0), 0), "collar_eps": (_real(0.0, 1e-3, open_lo=True), 1e-12)}
SCHEMA = {
    "simulate": {"n": (_int(1), 10**6), "burn_in": (_int(0), 10**4), "count": (_int(1), 100),
                 "grid_res": (_int(1, 4096), 512), "box": (_box_or_null, None)},
    "lyapunov": {"x0": (_point_or_null, None), "n": (_int(2), 10**6),
                 "burn_in": (_int(0), 10**4), "renorm_interval": (_int(1), 8)},
    "components": {"n": (_int(1), 10**6), "burn_in": (_int(0), 10**4),
                   "count": (_int(1), 100), "per_level": (_bool, False),
                   "basis": (_choice("trig3", "trig3+const"), "trig3"),
                   "threshold": (_threshold, "auto"),
                   "separation_min": (_real(1.0), 3.0)},
    "leafpush": {"z": (_point_or_null, None), "r": (_real(0.0, 0.5, open_lo=True), 1e-3),
                 "steps": (_int(1), 20_000), "h_max": (_real(0.0, 1.0, open_lo=True), 1e-3),
                 "warmup": (_int(0), 1000), "grid_res": (_int(1, 4096), 512),
                 "max_particles": (_int(16), 8000), "checkpoints": (_int(1), 20)},
    "check": {"condition": (_choice("sh7", "l3", "thm41b", "cones"), "sh7"),
              "lambda_definition": (_choice(*LAMBDA_DEFINITIONS), "inf_operator_norm"),
              "margin_eps": (_real(0.0), 1e-9), "samples": (_int(1), 100_000),
              "sample_grid": (_int(1, 8192), 512), "horizon": (_int(1), 1000),
              "gamma_max": (_real(0.0), 0.05),
              "cone_u": (_cone, {"center_direction": "vertical", "half_angle_tan": 0.8}),
              "cone_s": (_cone, {"center_direction": "horizontal", "half_angle_tan": 0.5}),
              "sampling": (_choice("auto", "uniform", "attractor"), "auto")},
    "sweep": {"axes": (_axes, {}), "check": (_choice(*CHECKS), "sh7"),
              "per_cell_budget": (_int(1), 10_000),
              "lambda_definition": (_choice(*LAMBDA_DEFINITIONS), "inf_operator_norm"),
              "margin_eps": (_real(0.0), 1e-9)},
}


def parse_config(obj, seed: int | None = None) -> dict:
    """Validate a RunConfig dict and fill defaults (strict: unknown keys fail).

    A manifest written by a previous run is accepted and re-run as is.
    """
    if isinstance(obj, dict) and "config" in obj and "package_version" in obj:
        obj = obj["config"]
    if not isinstance(obj, dict):
        raise ConfigError("config: expected a JSON object")
    unknown = sorted(set(obj) - TOP_KEYS)
    if unknown:
        raise ConfigError(f"config: unknown field(s) {unknown}")
    for key in ("map", "command"):
        if key not in obj:
            raise ConfigError(f"config: missing field '{key}'")
    cmd = obj["command"]
    if cmd not in COMMANDS:
        raise ConfigError(f"command: expected one of {list(COMMANDS)}, got {cmd!r}")
    opts = obj.get("options", {})
    if not isinstance(opts, dict):
        raise ConfigError("options: expected an object")
    schema = {**COMMON, **SCHEMA[cmd]}
    unknown = sorted(set(opts) - set(schema))
    if unknown:
        raise ConfigError(f"options: unknown field(s) {unknown} for command {cmd}")
    resolved = {}
    for name, (conv, default) in schema.items():
        resolved[name] = conv(f"options.{name}", opts[name]) if name in opts else default
    if seed is not None:
        resolved["seed"] = _int(0)("--seed", seed)
    m = map_from_json(obj["map"])
    out = {"map": m.to_json(), "command": cmd, "options": resolved}
    if "out" in obj:
        out["out"] = obj["out"]
    return out


# -- artifact writers ---------------------------------------------------------

def _write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(_clean(obj), sort_keys=True, indent=2) + "\n")


def _report_status(rep) -> int:
    return EXIT_OK if rep.passed else EXIT_CHECK


def _cmd_simulate(m, o, out, workers):
    recs = ensemble(m, o["count"], o["seed"], o["n"], o["burn_in"], o["collar_eps"],
                    grid_res=o["grid_res"], box=o["box"], workers=workers)
    h = histogram(recs, o["grid_res"])
    h.to_csv(out / "histogram.csv")
    h.to_pgm(out / "histogram.pgm")
    _write_json(out / "orbits.json", [
        {"index": r.index, "initial": list(r.initial), "final": list(r.final),
         "steps": r.steps_taken, "restarts": r.restarts,
         "min_singular_distance": r.min_singular_distance} for r in recs])
    return EXIT_OK


def _cmd_lyapunov(m, o, out, workers):
    x0 = o["x0"]
    if x0 is None:
        x0 = _draw_initial(orbit_rng(o["seed"], 0), m, ((-1.0, 1.0), (-1.0, 1.0)),
                           o["collar_eps"])
    est = lyapunov_spectrum(m, x0, o["n"], o["renorm_interval"], o["collar_eps"],
                            burn_in=o["burn_in"])
    _write_json(out / "lyapunov.json", {
        "x0": list(x0), "exponents": [est.lambda_u, est.lambda_s], "drift": est.drift,
        "half_orbit": [list(est.first_half), list(est.second_half)],
        "steps": est.n_steps, "max_gram_deviation": est.gram_deviation,
        "branch_counts": est.branch_counts.tolist()})
    return EXIT_OK


def _cmd_components(m, o, out, workers):
    if o["per_level"]:
        fps = level_fingerprints(m, o["count"], o["seed"], o["n"], o["burn_in"],
                                 o["collar_eps"], o["basis"], workers)
    else:
        fps = ensemble_fingerprints(m, o["count"], o["seed"], o["n"], o["burn_in"],
                                    o["collar_eps"], o["basis"], workers=workers)
    rep = count_components(fps, o["threshold"], o["separation_min"])
    fingerprints_to_csv(fps, out / "fingerprints.csv")
    (out / "components.json").write_text(rep.to_json(indent=2) + "\n")
    return EXIT_OK


def _cmd_leafpush(m, o, out, workers):
    res = leaf_pushforward(m, o["z"], o["r"], o["steps"], o["h_max"], warmup=o["warmup"],
                           seed=o["seed"], collar_eps=o["collar_eps"], grid_res=o["grid_res"],
                           max_particles=o["max_particles"], checkpoints=o["checkpoints"])
    res.cesaro.to_csv(out / "cesaro.csv")
    res.cesaro.to_pgm(out / "cesaro.pgm")
    lost = res.lost_fractions
    _write_json(out / "leaf.json", {
        "reference_point": list(res.reference_point), "tangent": list(res.tangent),
        "increments": [list(p) for p in res.increments],
        "final_particles": len(res.final.densities),
        "lost_fraction_mean": float(lost.mean()), "lost_fraction_max": float(lost.max()),
        "resampled_generations": int(sum(s.resampled for s in res.stats))})
    return EXIT_OK


def _cmd_check(m, o, out, workers):
    cond = o["condition"]
    if cond == "sh7":
        rep = check_sh7(m, o["lambda_definition"], o["margin_eps"], samples=o["samples"],
                        seed=o["seed"])
    elif cond == "l3":
        rep = check_l3(m, o["sample_grid"])
    elif cond == "thm41b":
        rep = check_orbit_separation(m, o["horizon"], o["gamma_max"])
    else:
        rep = cone_check(m, ConeSpec(**o["cone_u"]), ConeSpec(**o["cone_s"]), o["samples"],
                         o["seed"], o["sampling"])
    (out / "report.json").write_text(rep.to_json(indent=2) + "\n")
    return _report_status(rep)


def _cmd_sweep(m, o, out, workers):
    res = sweep(m.family, o["axes"], o["check"], o["per_cell_budget"],
                base=m.to_json()["params"], seed=o["seed"], workers=workers,
                margin_eps=o["margin_eps"], lambda_definition=o["lambda_definition"])
    res.to_csv(out / "sweep.csv")
    _write_json(out / "sweep.json", {
        "family": res.family, "check": res.check, "axes": res.axes,
        "fail_set": [list(k) for k in res.fail_set()],
        "skipped": [list(k) for k, c in res.cells.items() if c.skipped]})
    return EXIT_OK


HANDLERS = {"simulate": _cmd_simulate, "lyapunov": _cmd_lyapunov,
            "components": _cmd_components, "leafpush": _cmd_leafpush,
            "check": _cmd_check, "sweep": _cmd_sweep}


def run(config: dict, out, workers: int = 1) -> int:
    """Execute a parsed config, write artifacts and the manifest; return the exit code."""
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    m = map_from_json(config["map"])
    status = HANDLERS[config["command"]](m, config["options"], out, max(1, int(workers)))
    artifacts = sorted(p.name for p in out.iterdir() if p.name != "manifest.json")
    _write_json(out / "manifest.json", {
        "config": config, "package_version": singhyp.__version__,
        "numpy_version": np.__version__, "seeds": {"master": config["options"]["seed"]},
        "artifacts": artifacts, "exit_status": status})
    return status


def config_dir():
    return resources.files("singhyp") / "configs"


def committed_configs() -> list:
    return sorted((p for p in config_dir().iterdir() if p.name.endswith(".json")),
                  key=lambda p: p.name)


def repro(out, workers: int = 1, only=None) -> int:
    """Re-run every committed config into out/<config name>/."""
    worst = EXIT_OK
    for p in committed_configs():
        name = p.name[:-5]
        if only and name not in only:
            continue
        cfg = parse_config(json.loads(p.read_text()))
        code = run(cfg, Path(out) / name, workers)
        print(f"{name}: exit {code}")
        worst = max(worst, code)
    return worst


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="singhyp", description=__doc__.splitlines()[0])
    ap.add_argument("--version", action="version", version=singhyp.__version__)
    sub = ap.add_subparsers(dest="cmd", required=True)
    r = sub.add_parser("run", help="run one JSON config")
    r.add_argument("--config", required=True, help="RunConfig JSON (or a manifest)")
    r.add_argument("--out", help="output directory (overrides the config's 'out')")
    r.add_argument("--workers", type=int, default=1)
    r.add_argument("--seed", type=int, help="override options.seed")
    p = sub.add_parser("repro", help="regenerate artifacts for the committed configs")
    p.add_argument("--out", required=True)
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--only", nargs="*", help="config names (without .json) to run")
    sub.add_parser("list-configs", help="print the committed config names")
    ap.add_argument("-v", "--verbose", action="store_true")
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.cmd == "list-configs":
            for p in committed_configs():
                print(p.name[:-5])
            return EXIT_OK
        if args.cmd == "repro":
            return repro(args.out, args.workers, args.only)
        try:
            raw = json.loads(Path(args.config).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"--config: {exc}") from exc
        cfg = parse_config(raw, args.seed)
        out = args.out or cfg.get("out")
        if not out:
            raise ConfigError("--out: no output directory given")
        return run(cfg, out, args.workers)
    except SingHypError as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_ERROR
    except (ValueError, TypeError) as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
