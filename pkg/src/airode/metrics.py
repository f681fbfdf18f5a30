"""Evaluation metrics for complex-valued image pairs and tag scores."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass

import numpy as np

__all__ = [
    "complex_mse",
    "psnr",
    "ssim",
    "predict_tags",
    "accuracy",
    "confusion_matrix",
    "MetricsRecord",
    "save_confusion_csv",
]


def _as_batch(a):
    a = np.asarray(a, dtype=np.complex128)
    if a.ndim == 2:
        return a[None], True
    if a.ndim == 3:
        return a, False
    raise ValueError(f"expected (A, A) or (N, A, A), got shape {a.shape}")


def complex_mse(ref, test):
    """Mean squared error over the 2*A*A real components, per image."""
    r, squeeze = _as_batch(ref)
    t, _ = _as_batch(test)
    if r.shape != t.shape:
        raise ValueError(f"shape mismatch {r.shape} vs {t.shape}")
    err = np.abs(r - t) ** 2
    mse = err.sum(axis=(1, 2)) / (2 * r.shape[1] * r.shape[2])
    return float(mse[0]) if squeeze else mse


def psnr(ref, test, peak=None):
    """10*log10(peak^2 / mse); peak defaults to the reference's maximum
    modulus. Identical images give +inf."""
    r, squeeze = _as_batch(ref)
    t, _ = _as_batch(test)
    mse = np.atleast_1d(complex_mse(r, t))
    if peak is None:
        peaks = np.abs(r).max(axis=(1, 2))
    else:
        peaks = np.full(mse.shape, float(peak))
    if np.any(peaks <= 0):
        raise ValueError("psnr: reference peak must be positive")
    out = np.where(mse == 0.0, math.inf, 10.0 * np.log10(peaks**2 / np.where(mse == 0, 1, mse)))
    return float(out[0]) if squeeze else out


def ssim(ref, test, peak=None, k1=0.01, k2=0.03):
    """Global (single-window) structural similarity on the moduli.

    Means/variances/covariance are taken over the whole image; the
    dynamic range defaults to the reference's maximum modulus.
    """
    r, squeeze = _as_batch(ref)
    t, _ = _as_batch(test)
    if r.shape != t.shape:
        raise ValueError(f"shape mismatch {r.shape} vs {t.shape}")
    x = np.abs(r).reshape(r.shape[0], -1)
    y = np.abs(t).reshape(t.shape[0], -1)
    if peak is None:
        rng = x.max(axis=1)
    else:
        rng = np.full(x.shape[0], float(peak))
    if np.any(rng <= 0):
        raise ValueError("ssim: dynamic range must be positive")
    c1 = (k1 * rng) ** 2
    c2 = (k2 * rng) ** 2
    mx, my = x.mean(axis=1), y.mean(axis=1)
    vx, vy = x.var(axis=1), y.var(axis=1)
    cov = ((x - mx[:, None]) * (y - my[:, None])).mean(axis=1)
    out = ((2 * mx * my + c1) * (2 * cov + c2)) / (
        (mx**2 + my**2 + c1) * (vx + vy + c2)
    )
    return float(out[0]) if squeeze else out


def _label_ints(labels, q):
    labels = np.asarray(labels)
    if labels.ndim == 2:
        if labels.shape[1] != q:
            raise ValueError(f"one-hot labels have {labels.shape[1]} classes, scores {q}")
        return labels.argmax(axis=1)
    return labels.astype(np.int64)


def predict_tags(scores):
    """Class prediction: argmax of the score moduli (ties -> lowest)."""
    s = np.asarray(scores)
    if s.ndim != 2:
        raise ValueError(f"expected (N, Q) scores, got {s.shape}")
    return np.abs(s).argmax(axis=1)


def accuracy(scores, labels):
    s = np.asarray(scores)
    if s.shape[0] == 0:
        raise ValueError("accuracy of an empty batch is undefined")
    pred = predict_tags(s)
    truth = _label_ints(labels, s.shape[1])
    return float(np.mean(pred == truth))


def confusion_matrix(scores, labels, num_classes=None):
    """Rows are true classes, columns predictions."""
    s = np.asarray(scores)
    q = num_classes or s.shape[1]
    pred = predict_tags(s)
    truth = _label_ints(labels, s.shape[1])
    cm = np.zeros((q, q), dtype=np.int64)
    np.add.at(cm, (truth, pred), 1)
    return cm


@dataclass
class MetricsRecord:
    mse: float
    psnr: float
    ssim: float
    accuracy: float

    def as_row(self):
        return [f"{self.mse:.10g}", f"{self.psnr:.10g}",
                f"{self.ssim:.10g}", f"{self.accuracy:.10g}"]

    HEADER = ["mse", "psnr", "ssim", "accuracy"]


def save_confusion_csv(path, cm):
    cm = np.asarray(cm)
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["true\\pred"] + [str(i) for i in range(cm.shape[1])])
        for i, row in enumerate(cm):
            w.writerow([str(i)] + [str(int(v)) for v in row])
