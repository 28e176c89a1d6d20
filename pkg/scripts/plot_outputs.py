"""
Quick-look plots of a scenario's output directory.

    python scripts/plot_outputs.py qbm_output/extract

Not imported by the package; matplotlib is only needed here.
"""

import json
import logging
import os
import sys

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt

from qbm.services.export import read_csv

logging.basicConfig(
    format="%(asctime)s - %(name)s - %(levelname)s - %(message)s",
    level=logging.INFO,
)
logger = logging.getLogger(__name__)


def plot_kernel(data, ax):
    ax.plot(data["t"], data["K"], label="K(t)")
    ax.plot(data["t"], data["K_N"], "--", label="K_N(t)")
    ax.plot(data["t"], data["nu"], label="nu(t)")
    ax.set_xlabel("t")
    ax.legend()


def plot_coefficients(data, ax):
    for name in ("OmegaBar2", "gammaBar", "d", "D"):
        ax.plot(data["t"], data[name], label=name)
    ax.set_xlabel("t")
    ax.legend()


def plot_moments(data, ax):
    for name in ("QQ", "QP", "PP"):
        ax.errorbar(data["t"], data[name], yerr=3 * data[f"se_{name}"], fmt=".", ms=2, label=f"ensemble {name}")
        ax.plot(data["t"], data[f"exact_{name}"], "k-", lw=0.8)
    ax.set_xlabel("t")
    ax.legend()


def plot_decoherence(data, ax):
    ax.plot(data["t"], data["visibility"], label="fringe visibility")
    ax.plot(data["t"], data["purity"], label="purity")
    ax.set_xlabel("t")
    ax.legend()


def plot_counterpunch(data, ax):
    ax.plot(data["t"], data["P"], label="P coupled")
    ax.plot(data["t"], data["P_free"], label="P free")
    ax.plot(data["t"], data["drive"], ":", label="drive")
    ax.set_xlabel("t")
    ax.legend()


def plot_wigner(data, ax):
    q = sorted(set(data["Q"]))
    p = sorted(set(data["P"]))
    f = data["f"].reshape(len(q), len(p))
    mesh = ax.pcolormesh(q, p, f.T, shading="auto", cmap="RdBu_r")
    ax.set_xlabel("Q")
    ax.set_ylabel("P")
    plt.colorbar(mesh, ax=ax)


PLOTTERS = {
    "kernel.csv": plot_kernel,
    "coefficients.csv": plot_coefficients,
    "moments.csv": plot_moments,
    "decoherence.csv": plot_decoherence,
    "counterpunch.csv": plot_counterpunch,
    "wigner_initial.csv": plot_wigner,
    "wigner_final.csv": plot_wigner,
    "wigner.csv": plot_wigner,
}


def main(out_dir: str):
    with open(os.path.join(out_dir, "manifest.json")) as fh:
        manifest = json.load(fh)
    for entry in manifest["files"]:
        plotter = PLOTTERS.get(entry["path"])
        if plotter is None:
            continue
        fig, ax = plt.subplots(figsize=(7, 4))
        plotter(read_csv(os.path.join(out_dir, entry["path"])), ax)
        ax.set_title(f"{manifest['scenario']}: {entry['path']}")
        target = os.path.join(out_dir, entry["path"].replace(".csv", ".png"))
        fig.savefig(target, dpi=120, bbox_inches="tight")
        plt.close(fig)
        logger.info(f"Saved {target}")


if __name__ == "__main__":
    if len(sys.argv) != 2:
        sys.exit("usage: plot_outputs.py OUTPUT_DIR")
    main(sys.argv[1])
