"""Grouped accuracy and proxy generative-quality metrics.

The Frechet distance and the inception-style score are computed with an
in-domain feature extractor / classifier (trained on a balanced dataset)
instead of an external pretrained network, so absolute values are only
comparable within one experiment family.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .data import ClassGroups


@dataclass
class EvalReport:
    overall: float
    many: float
    med: float
    few: float
    per_class: np.ndarray
    per_class_count: np.ndarray
    proxy_fid: Optional[float] = None
    proxy_is: Optional[float] = None

    CSV_COLUMNS = ("overall", "many", "med", "few", "proxy_fid", "proxy_is")

    def group_accuracy(self, classes):
        """Joint accuracy over the test samples of the given classes."""
        idx = sorted(classes)
        total = self.per_class_count[idx].sum()
        if total == 0:
            return float("nan")
        hits = (np.nan_to_num(self.per_class[idx]) * self.per_class_count[idx]).sum()
        return float(hits / total)

    def csv_row(self):
        row = [self.overall, self.many, self.med, self.few]
        row.append("" if self.proxy_fid is None else self.proxy_fid)
        row.append("" if self.proxy_is is None else self.proxy_is)
        return [v if v == "" else f"{v:.6g}" for v in row]

    def write_csv(self, path):
        with open(path, "w", newline="") as f:
            writer = csv.writer(f)
            m = len(self.per_class)
            writer.writerow(list(self.CSV_COLUMNS) + [f"class_{c}" for c in range(m)])
            per_class = [f"{a:.6g}" for a in self.per_class]
            writer.writerow(self.csv_row() + per_class)


def grouped_accuracy(predictions, labels, groups: ClassGroups):
    """Accuracy overall and per frequency group.

    Group accuracies are sample-level over the classes in each group; a group
    whose classes never appear in the test set reports NaN rather than 0.
    """
    predictions = np.asarray(predictions)
    labels = np.asarray(labels)
    if predictions.shape != labels.shape:
        raise ValueError("predictions and labels must have the same length")
    classes = sorted(groups.all_classes())
    m = len(classes)
    per_class = np.full(m, np.nan)
    per_count = np.zeros(m, dtype=np.int64)
    correct = predictions == labels
    for c in classes:
        mask = labels == c
        per_count[c] = int(mask.sum())
        if per_count[c]:
            per_class[c] = correct[mask].mean()

    def group_acc(cls):
        idx = sorted(cls)
        total = per_count[idx].sum() if idx else 0
        if total == 0:
            return float("nan")
        return float((np.nan_to_num(per_class[idx]) * per_count[idx]).sum() / total)

    overall = float(correct.mean()) if len(labels) else float("nan")
    return EvalReport(
        overall=overall,
        many=group_acc(groups.many),
        med=group_acc(groups.med),
        few=group_acc(groups.few),
        per_class=per_class,
        per_class_count=per_count,
    )


def _sqrt_psd(mat):
    """Symmetric PSD square root via eigendecomposition, clamping negatives."""
    vals, vecs = np.linalg.eigh((mat + mat.T) / 2.0)
    vals = np.clip(vals, 0.0, None)
    return (vecs * np.sqrt(vals)) @ vecs.T


def proxy_fid(real_features, gen_features, eps=1e-6):
    """Frechet distance between Gaussian fits of two feature sets.

    ||mu_r - mu_g||^2 + Tr(S_r + S_g - 2 (S_r S_g)^(1/2)), with eps * I added
    to both covariances to keep the square root well conditioned.
    """
    a = np.asarray(real_features, dtype=np.float64)
    b = np.asarray(gen_features, dtype=np.float64)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[1]:
        raise ValueError("feature sets must be 2-D with equal dimension")
    if a.shape[0] < 2 or b.shape[0] < 2:
        raise ValueError("need at least 2 feature vectors per side")
    mu_a, mu_b = a.mean(axis=0), b.mean(axis=0)
    d = a.shape[1]
    cov_a = np.cov(a, rowvar=False).reshape(d, d) + eps * np.eye(d)
    cov_b = np.cov(b, rowvar=False).reshape(d, d) + eps * np.eye(d)
    sqrt_a = _sqrt_psd(cov_a)
    inner = sqrt_a @ cov_b @ sqrt_a
    vals = np.linalg.eigvalsh((inner + inner.T) / 2.0)
    trace_sqrt = np.sqrt(np.clip(vals, 0.0, None)).sum()
    fid = float(((mu_a - mu_b) ** 2).sum() + np.trace(cov_a) + np.trace(cov_b)
                - 2.0 * trace_sqrt)
    return max(fid, 0.0)


def proxy_is(class_probabilities, tol=1e-5):
    """exp(mean KL(p(y|x) || mean_x p(y|x))); 1 for collapsed, M for diverse."""
    p = np.asarray(class_probabilities, dtype=np.float64)
    if p.ndim != 2 or p.shape[0] < 1:
        raise ValueError("need a (N, M) array of probability rows")
    if (p < -tol).any():
        raise ValueError("probabilities must be non-negative")
    sums = p.sum(axis=1)
    if np.abs(sums - 1.0).max() > tol:
        raise ValueError("probability rows must sum to 1")
    p = np.clip(p, 0.0, None)
    p = p / p.sum(axis=1, keepdims=True)
    marginal = p.mean(axis=0)
    ratio = np.divide(p, marginal[None, :], out=np.ones_like(p),
                      where=marginal[None, :] > 0)
    kl = np.where(p > 0, p * np.log(np.clip(ratio, 1e-300, None)), 0.0).sum(axis=1)
    score = float(np.exp(kl.mean()))
    return float(np.clip(score, 1.0, p.shape[1]))
