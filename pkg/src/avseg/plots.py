"""Matplotlib figures rendered next to the delimited/JSON outputs."""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402


def plot_training_curve(records: list[dict], path):
    if not records:
        return
    iters = [r["iter"] for r in records]
    fig, ax = plt.subplots(figsize=(6.5, 4))
    for key, style in (("total", "-"), ("cls", "--"), ("mask", ":"), ("ada", "-.")):
        ax.plot(iters, [r[key] for r in records], style, label=key)
    ax.set_xlabel("iteration")
    ax.set_ylabel("loss")
    ax.set_yscale("log")
    ax.legend(frameon=False)
    ax.set_title("training loss components")
    fig.tight_layout()
    fig.savefig(path, dpi=110)
    plt.close(fig)


def plot_metric_report(report: dict, path):
    fig, axes = plt.subplots(1, 2, figsize=(9, 4))
    classes = sorted(report["per_class"])
    if classes:
        x = range(len(classes))
        axes[0].bar([i - 0.2 for i in x],
                    [report["per_class"][k]["miou"] for k in classes],
                    width=0.4, label="mIoU")
        axes[0].bar([i + 0.2 for i in x],
                    [report["per_class"][k]["fscore"] for k in classes],
                    width=0.4, label="F-score")
        axes[0].set_xticks(list(x), [f"class {k}" for k in classes])
        axes[0].set_ylim(0, 1)
        axes[0].legend(frameon=False)
    axes[0].set_title("per-class scores")
    per_clip = [row["miou"] for row in report["per_clip"]]
    axes[1].hist(per_clip, bins=10, range=(0, 1), color="#4477aa")
    axes[1].axvline(report["miou"], color="k", linestyle="--",
                    label=f"mean {report['miou']:.3f}")
    axes[1].set_title("per-clip mIoU")
    axes[1].legend(frameon=False)
    fig.tight_layout()
    fig.savefig(path, dpi=110)
    plt.close(fig)
