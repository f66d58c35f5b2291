"""Two-parameter SH7 phase diagram for the k = 0 Belykh map.

Writes a CSV of verdicts over (lambda2, mu2) and a PGM where failing cells
are black, passing cells white and skipped cells grey.
"""
import argparse
from pathlib import Path

import numpy as np

from singhyp.checkers import grid, sweep


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--out", default="phase_diagram")
    ap.add_argument("--step", type=float, default=0.01)
    ap.add_argument("--samples", type=int, default=2000)
    ap.add_argument("--workers", type=int, default=1)
    args = ap.parse_args()

    lam = grid(1.05, 1.95, args.step)
    mu = grid(1.05, 1.95, args.step)
    res = sweep("belykh", {"lambda2": lam, "mu2": mu}, "sh7", args.samples,
                base={"k": 0.0, "lambda1": 0.3, "lambda2": 1.5, "mu1": 0.3, "mu2": 1.5},
                workers=args.workers)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    res.to_csv(out / "sweep.csv")

    img = np.full((len(mu), len(lam)), 128, np.uint8)
    shade = {"pass": 255, "fail": 0}
    for (l2, m2), cell in res.cells.items():
        img[mu.index(m2), lam.index(l2)] = shade.get(cell.verdict, 128)
    with open(out / "sweep.pgm", "wb") as fh:
        fh.write(f"P5\n{len(lam)} {len(mu)}\n255\n".encode("ascii"))
        fh.write(img[::-1].tobytes())
    fails = res.fail_set()
    print(f"{len(res.cells)} cells, {len(fails)} fail")
    for l2, m2 in fails[:20]:
        print(f"  lambda2={l2:.2f} mu2={m2:.2f}")


if __name__ == "__main__":
    main()
