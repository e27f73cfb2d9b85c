"""Plot training loss and validation accuracy of one or more run directories."""

import argparse
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt
import pandas as pd


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("runs", nargs="+", type=Path, help="run directories with loss.csv")
    parser.add_argument("--out", type=Path, default=Path("curves.png"))
    args = parser.parse_args()

    fig, (loss_ax, acc_ax) = plt.subplots(1, 2, figsize=(11, 4))
    for i, run in enumerate(args.runs):
        color = f"C{i}"
        name = str(run).rstrip("/")
        loss = pd.read_csv(run / "loss.csv")
        loss_ax.plot(loss["step"], loss["window_mean"], color=color, label=name)
        val_path = run / "validation.csv"
        if val_path.exists():
            val = pd.read_csv(val_path)
            acc_ax.plot(val["step"], val["seq_acc"], color=color, marker="o", label=f"{name} seq")
            acc_ax.plot(val["step"], val["char_acc"], color=color, linestyle="--", label=f"{name} char")
    loss_ax.set(xlabel="step", ylabel="loss (window mean)", yscale="log", title="training loss")
    acc_ax.set(xlabel="step", ylabel="validation accuracy (%)", title="validation, nesting <= 2")
    for ax in (loss_ax, acc_ax):
        ax.grid(alpha=0.3)
        ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(args.out, dpi=120)


if __name__ == "__main__":
    main()
