"""Plot the Toy2D CSVs written by `ire-lab toy`.

usage: python scripts/plot_toy.py OUT_DIR [--save FILE]
"""

import argparse
from pathlib import Path

import matplotlib.pyplot as plt
import pandas as pd


def load(path):
    df = pd.read_csv(path, dtype=str)
    status = df[df["step"] == "status"] if "step" in df else None
    data = df[df["step"] != "status"].copy()
    for c in data.columns:
        data[c] = pd.to_numeric(data[c])
    return data, status


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("out_dir", type=Path)
    ap.add_argument("--save", type=Path)
    args = ap.parse_args()

    fig, axes = plt.subplots(1, 3, figsize=(14, 4))
    for ax, name, title in [
        (axes[0], "toy_gd_eta1.csv", "GD, lr = 1"),
        (axes[1], "toy_gd_eta2.csv", "GD, lr = 2"),
    ]:
        d, _ = load(args.out_dir / name)
        ax.plot(d["theta_0"], d["theta_1"], ".-", ms=2, lw=0.5)
        ax.axhline(0.0, color="k", lw=0.5)
        ax.set(title=title, xlabel="u", ylabel="v")

    d, _ = load(args.out_dir / "toy_ire_kappa.csv")
    for k, run in d.groupby("kappa"):
        axes[2].plot(run["step"], run["trace_hessian"], label=f"κ = {k:g}")
    axes[2].set(title="IRE, lr = 0.5", xlabel="step", ylabel="Tr H", yscale="log")
    axes[2].legend()
    fig.tight_layout()
    if args.save:
        fig.savefig(args.save, dpi=150)
    else:
        plt.show()


if __name__ == "__main__":
    main()
