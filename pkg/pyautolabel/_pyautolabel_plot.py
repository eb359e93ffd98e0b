# Plotting functions for PyAutoLabel. Importing this module fails with ImportError if matplotlib isn't installed,
# and pyautolabel/__init__.py swaps in stubs that raise PyAutoLabelException instead.

import math

import numpy as np

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

from pyautolabel import EVENT_KINDS  # noqa: E402


def _save(fig, path):
    fig.tight_layout()
    fig.savefig(path, dpi=160)
    plt.close(fig)


def plotFoldAccuracies(reports, path, title=None):
    """Saves a box plot of the test accuracy (in percent) of each fold's runs to the image file ``path``."""
    fig, ax = plt.subplots(figsize=(6, 4))
    values = [[100.0 * a for a in report.accuracies if not math.isnan(a)] for report in reports]
    ax.boxplot(values)
    ax.set_xticks(range(1, len(reports) + 1))
    ax.set_xticklabels(["Fold %d" % (report.fold,) for report in reports])
    ax.set_ylabel("Test accuracy (%)")
    ax.set_ylim(0, 100)
    if title:
        ax.set_title("%s test accuracy across folds" % (title.capitalize(),))
    _save(fig, path)


def plotConfusionMatrix(cm, path, accuracy=None):
    """Saves a confusion matrix (rows true class, columns predicted) with its counts to the image file ``path``."""
    cm = np.asarray(cm)
    fig, ax = plt.subplots(figsize=(5, 4.5))
    image = ax.imshow(cm, cmap="Blues")
    fig.colorbar(image, ax=ax)
    ax.set_xticks(range(len(EVENT_KINDS)))
    ax.set_yticks(range(len(EVENT_KINDS)))
    ax.set_xticklabels(EVENT_KINDS)
    ax.set_yticklabels(EVENT_KINDS)
    ax.set_xlabel("Predicted")
    ax.set_ylabel("True")
    for i in range(cm.shape[0]):
        for j in range(cm.shape[1]):
            ax.text(j, i, "%d" % (cm[i, j],), ha="center", va="center",
                    color="white" if cm[i, j] > cm.max() / 2.0 else "black")
    if accuracy is not None:
        ax.set_title("Test accuracy %.2f%%" % (100.0 * accuracy,))
    _save(fig, path)


def plotMelSpectrogram(spectrogram, path, rate=None, hopLength=None):
    """Saves a mel spectrogram (mel bands x frames, in dB) to the image file ``path``."""
    spectrogram = np.asarray(spectrogram)
    fig, ax = plt.subplots(figsize=(7, 3.5))
    extent = None
    if rate and hopLength:
        extent = [0, spectrogram.shape[1] * hopLength / float(rate), 0, spectrogram.shape[0]]
        ax.set_xlabel("Time (s)")
    else:
        ax.set_xlabel("Frame")
    image = ax.imshow(spectrogram, origin="lower", aspect="auto", extent=extent)
    fig.colorbar(image, ax=ax, format="%+.0f dB")
    ax.set_ylabel("Mel band")
    _save(fig, path)
