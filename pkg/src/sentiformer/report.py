"""Figure rendering for training runs and evaluation reports."""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np


def save_training_curves(metrics, path) -> None:
    """Loss and accuracy curves over epochs, written next to the metrics file."""
    epochs = [m["epoch"] for m in metrics]
    fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(10, 4))
    ax1.plot(epochs, [m["loss"] for m in metrics], color="tab:red")
    ax1.set_xlabel("epoch")
    ax1.set_ylabel("training loss")
    ax1.grid(True, alpha=0.3)
    ax2.plot(epochs, [m["accuracy"] for m in metrics], label="train accuracy")
    ax2.plot(epochs, [m["macro_f1"] for m in metrics], label="train macro-F1")
    if metrics and "eval_accuracy" in metrics[0]:
        ax2.plot(epochs, [m["eval_accuracy"] for m in metrics], label="eval accuracy")
        ax2.plot(epochs, [m["eval_macro_f1"] for m in metrics], label="eval macro-F1")
    ax2.set_xlabel("epoch")
    ax2.set_ylim(0.0, 1.02)
    ax2.grid(True, alpha=0.3)
    ax2.legend(loc="lower right", fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def save_confusion_matrix(confusion, path, class_names=None) -> None:
    confusion = np.asarray(confusion)
    n = confusion.shape[0]
    if class_names is None:
        class_names = [str(i) for i in range(n)]
    fig, ax = plt.subplots(figsize=(5.5, 5))
    im = ax.imshow(confusion, cmap="Blues")
    ax.set_xticks(range(n), class_names)
    ax.set_yticks(range(n), class_names)
    ax.set_xlabel("predicted")
    ax.set_ylabel("true")
    threshold = confusion.max() / 2 if confusion.max() else 0.5
    for i in range(n):
        for j in range(n):
            ax.text(j, i, str(int(confusion[i, j])), ha="center", va="center",
                    fontsize=8, color="white" if confusion[i, j] > threshold else "black")
    fig.colorbar(im, fraction=0.046)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
