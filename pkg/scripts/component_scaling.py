"""Cluster count of stacked Lorenz maps as the number of levels grows."""
import argparse

from singhyp.maps import make_stacked_lorenz
from singhyp.measures import count_components, level_fingerprints


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--levels", type=int, nargs="+", default=[1, 2, 3, 4, 5, 6])
    ap.add_argument("--per-level", type=int, default=50)
    ap.add_argument("--n", type=int, default=10**5)
    ap.add_argument("--seed", type=int, default=1)
    ap.add_argument("--workers", type=int, default=1)
    args = ap.parse_args()

    base = {"A": 0.5, "B": 0.4, "nu0": 0.8, "nu": 1.5}
    print("levels clusters well_separated ratio")
    for L in args.levels:
        m = make_stacked_lorenz(base=base, levels=L)
        fps = level_fingerprints(m, args.per_level, args.seed, args.n, workers=args.workers)
        rep = count_components(fps)
        print(f"{L:6d} {rep.cluster_count:8d} {str(rep.well_separated):>14} "
              f"{rep.separation_ratio:.3g}")


if __name__ == "__main__":
    main()
