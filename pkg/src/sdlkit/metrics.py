"""Reconstruction and classification scores."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ArgumentError
from .io import fmt
from .linalg import as_matrix


def relative_recon(X, W, H) -> float:
    """||X - W H||_F^2 / ||X||_F^2."""
    X = as_matrix(X, "X")
    W = np.asarray(W, dtype=np.float64)
    H = np.asarray(H, dtype=np.float64)
    if W.ndim != 2 or H.ndim != 2 or W.shape[0] != X.shape[0] or H.shape[1] != X.shape[1] \
            or W.shape[1] != H.shape[0]:
        raise ArgumentError(f"shapes do not conform: X {X.shape}, W {W.shape}, H {H.shape}")
    den = float(np.sum(X * X))
    if den == 0.0:
        raise ArgumentError("X must be nonzero")
    R = X - W @ H
    return float(np.sum(R * R)) / den


def confusion_matrix(pred, truth, n_classes: int | None = None) -> np.ndarray:
    """Counts C[t, p] of samples with true label t predicted as p."""
    pred = np.asarray(pred, dtype=np.int64).ravel()
    truth = np.asarray(truth, dtype=np.int64).ravel()
    if pred.shape != truth.shape:
        raise ArgumentError("pred and truth must have equal length")
    if pred.size and (pred.min() < 0 or truth.min() < 0):
        raise ArgumentError("labels must be nonnegative")
    k = n_classes or (int(max(pred.max(initial=0), truth.max(initial=0))) + 1)
    C = np.zeros((k, k), dtype=np.int64)
    np.add.at(C, (truth, pred), 1)
    return C


def _f_from_counts(tp: int, fp: int, fn: int) -> float:
    # zero denominators give F = 0
    if tp + fp == 0 or tp + fn == 0:
        return 0.0
    prec = tp / (tp + fp)
    rec = tp / (tp + fn)
    return 0.0 if prec + rec == 0 else 2.0 * prec * rec / (prec + rec)


@dataclass(frozen=True)
class EvalSummary:
    accuracy: float
    f_score: float
    recon_rel: float
    confusion: np.ndarray

    @property
    def error_rate(self) -> float:
        total = int(self.confusion.sum())
        return (total - int(np.trace(self.confusion))) / total if total else 0.0

    def to_dict(self) -> dict:
        return {"accuracy": self.accuracy, "f_score": self.f_score, "recon_rel": self.recon_rel,
                "confusion": self.confusion.tolist()}

    CSV_HEADER = ("accuracy", "f_score", "recon_rel")

    def csv_row(self) -> str:
        return ",".join(fmt(v) for v in (self.accuracy, self.f_score, self.recon_rel))


def classification_metrics(pred, truth, positive: int = 1, n_classes: int | None = None,
                           recon_rel: float = float("nan")) -> EvalSummary:
    """Accuracy and F-score of ``pred`` against ``truth``.

    With two classes the F-score is taken w.r.t. ``positive``. With more
    classes it is the macro average of the one-vs-rest scores over every class
    except the reference class 0.
    """
    C = confusion_matrix(pred, truth, n_classes)
    if positive >= C.shape[0]:
        C = np.pad(C, (0, positive + 1 - C.shape[0]))
    total = int(C.sum())
    acc = float(np.trace(C)) / total if total else 0.0
    if C.shape[0] <= 2:
        f = _f_from_counts(int(C[positive, positive]), int(C[:, positive].sum() - C[positive, positive]),
                           int(C[positive, :].sum() - C[positive, positive]))
    else:
        fs = [_f_from_counts(int(C[j, j]), int(C[:, j].sum() - C[j, j]), int(C[j, :].sum() - C[j, j]))
              for j in range(1, C.shape[0])]
        f = float(np.mean(fs))
    return EvalSummary(acc, float(f), float(recon_rel), C)
