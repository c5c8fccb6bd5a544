#!/usr/bin/env python3
"""Level curves and DER vs SNR from an `atomdet sweep` table."""

import argparse

import matplotlib.pyplot as plt
import numpy as np
import pandas as pd


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("csv")
    ap.add_argument("--level", type=float, default=1e-3, help="DER level, as a fraction")
    ap.add_argument("--out", default="sweep.png")
    args = ap.parse_args()

    df = pd.read_csv(args.csv)
    grid = df[df.tag == "grid"]
    mus = np.sort(grid.mu.unique())
    spacings = np.sort(grid.spacing_a.unique())
    colors = {"prior": "tab:blue", "posterior": "tab:green", "deconv": "tab:red"}

    fig, (ax0, ax1) = plt.subplots(1, 2, figsize=(10, 4))
    for est, color in colors.items():
        sub = grid[grid.estimator == est]
        if sub.empty:
            continue
        table = sub.pivot(index="spacing_a", columns="mu", values="der_mean").loc[spacings, mus]
        z = np.log10(np.clip(table.values, 1e-6, None))
        ax0.contour(mus, spacings, z, levels=[np.log10(args.level)], colors=color, linestyles="solid")
        ax0.plot([], [], color=color, label=est)
        ax1.errorbar(sub.snr_db, 100 * sub.der_mean, yerr=100 * sub.der_std, fmt="o", color=color, label=est)

    ax0.set_xscale("log")
    ax0.set_xlabel("mu (photons)")
    ax0.set_ylabel("a (pixels)")
    ax0.set_title(f"DER = {100 * args.level:g}%")
    ax0.legend()
    ax1.set_yscale("log")
    ax1.set_xlabel("SNR (dB)")
    ax1.set_ylabel("DER (%)")
    ax1.legend()
    fig.tight_layout()
    fig.savefig(args.out, dpi=150)


if __name__ == "__main__":
    main()
