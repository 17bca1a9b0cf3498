"""Single-point attack on 2-D Gaussian blobs; optionally draws the W landscape.

    python3 scripts/fig1_demo.py --out results/fig1 [--plot]

``--plot`` needs matplotlib, which is not a package dependency.
"""

import argparse

import numpy as np

from fspoison.harness import demo_fig1


def main():
    parser = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    parser.add_argument("--out", required=True)
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--grid-points", type=int, default=51)
    parser.add_argument("--plot", action="store_true")
    args = parser.parse_args()

    res = demo_fig1(args.out, grid_points=args.grid_points, seed=args.seed)
    path = np.array([x for _, x, _ in res.state.trajectory])
    print(f"start {res.initial_point}, end {res.state.points[0]}, {len(path)} steps")
    print(f"test error {res.error_before:.3f} -> {res.error_after:.3f}")

    if args.plot:
        import matplotlib.pyplot as plt

        fig, axes = plt.subplots(1, 2, figsize=(10, 4.5))
        for ax, values, title in zip(axes, (res.W, res.error), ("attacker objective", "test error")):
            cs = ax.contourf(res.grid, res.grid, values, levels=30)
            fig.colorbar(cs, ax=ax)
            X, y = res.data.features, res.data.labels
            ax.scatter(*X[y > 0].T, c="white", edgecolors="k", s=25)
            ax.scatter(*X[y < 0].T, c="k", s=25)
            ax.plot(*path.T, "r.-")
            ax.set_title(title)
        fig.savefig(f"{args.out}/fig1.png", dpi=120, bbox_inches="tight")


if __name__ == "__main__":
    main()
