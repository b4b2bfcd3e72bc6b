"""Score generated samples against the real data and keep the useful ones.

Three scores are supported:
  pixel    -- L2 distance to the nearest same-class real image, measured on
              the 0..255 byte scale (kept when <= threshold)
  feature  -- the same nearest-neighbour distance in the feature space of a
              head-stripped classifier (kept when <= threshold)
  prob     -- the probability the reference classifier assigns to the
              sample's own label (kept when >= threshold)

Nearest-neighbour search is exhaustive; scores are pure functions of their
inputs, so scoring parallelizes trivially across samples.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from .data import LongTailDataset, unit_to_bytes
from .models import classifier_logits, extract_features, softmax_probs

METRICS = ("pixel", "feature", "prob")


@dataclass(frozen=True)
class FilterConfig:
    metric: str
    threshold: float

    def __post_init__(self):
        if self.metric not in METRICS:
            raise ValueError(f"metric must be one of {METRICS}, got {self.metric!r}")
        if not np.isfinite(self.threshold):
            raise ValueError("threshold must be finite")
        if self.metric == "prob" and not 0.0 <= self.threshold <= 1.0:
            raise ValueError("prob threshold must lie in [0, 1]")

    def keeps(self, scores):
        """Boolean keep mask; equality keeps on every metric."""
        scores = np.asarray(scores)
        if self.metric == "prob":
            return scores >= self.threshold
        return scores <= self.threshold


@dataclass
class FilterReport:
    metric: str
    threshold: float
    scores: np.ndarray
    kept: np.ndarray  # bool mask over the generated samples
    labels: np.ndarray
    num_classes: int

    @property
    def kept_count(self):
        return int(self.kept.sum())

    @property
    def removed_count(self):
        return int(len(self.kept) - self.kept.sum())

    @property
    def per_class_kept(self):
        return np.bincount(self.labels[self.kept], minlength=self.num_classes)

    def write_csv(self, path):
        with open(path, "w", newline="") as f:
            writer = csv.writer(f)
            writer.writerow(["sample_index", "class", "score", "kept"])
            for i, (c, s, k) in enumerate(zip(self.labels, self.scores, self.kept)):
                writer.writerow([i, int(c), f"{s:.6g}", int(k)])


def _nearest_same_class(vectors, labels, ref_vectors, ref_labels, num_classes):
    """Min Euclidean distance from each vector to same-class reference vectors."""
    out = np.full(len(vectors), np.nan)
    for c in range(num_classes):
        q = np.flatnonzero(labels == c)
        if q.size == 0:
            continue
        r = np.flatnonzero(ref_labels == c)
        if r.size == 0:
            raise ValueError(f"no real samples with label {c} to compare against")
        ref = ref_vectors[r]
        for start in range(0, q.size, 64):
            block = q[start:start + 64]
            diff = vectors[block][:, None, :] - ref[None, :, :]
            out[block] = np.sqrt((diff * diff).sum(axis=2).min(axis=1))
    return out


def pixel_scores(gen, real):
    """Nearest same-class pixel distance (byte scale) for every generated sample."""
    gv = gen.pixels.reshape(len(gen), -1).astype(np.float64)
    rv = real.pixels.reshape(len(real), -1).astype(np.float64)
    return _nearest_same_class(gv, gen.labels, rv, real.labels, gen.num_classes)


def feature_scores(gen, real, extractor):
    """Nearest same-class distance in the extractor's feature space."""
    gv = extract_features(extractor, gen.images).astype(np.float64)
    rv = extract_features(extractor, real.images).astype(np.float64)
    return _nearest_same_class(gv, gen.labels, rv, real.labels, gen.num_classes)


def prob_scores(gen, classifier):
    """Probability the classifier assigns each sample's own label."""
    probs = softmax_probs(classifier_logits(classifier, gen.images))
    return probs[np.arange(len(gen)), gen.labels]


def score_pixel_distance(image, label, real):
    """Single-sample pixel score; `image` is (H, W, C) float in [-1, 1]."""
    b = unit_to_bytes(image).reshape(1, -1).astype(np.float64)
    rv = real.pixels.reshape(len(real), -1).astype(np.float64)
    return float(
        _nearest_same_class(b, np.array([label]), rv, real.labels, real.num_classes)[0]
    )


def score_feature_distance(image, label, real, extractor):
    gv = extract_features(extractor, np.asarray(image)[None]).astype(np.float64)
    rv = extract_features(extractor, real.images).astype(np.float64)
    return float(
        _nearest_same_class(gv, np.array([label]), rv, real.labels, real.num_classes)[0]
    )


def score_label_prob(image, label, classifier):
    probs = softmax_probs(classifier_logits(classifier, np.asarray(image)[None]))
    return float(probs[0, label])


def compute_scores(gen, cfg, real=None, classifier=None, extractor=None):
    if cfg.metric == "pixel":
        if real is None:
            raise ValueError("pixel metric needs the real dataset")
        return pixel_scores(gen, real)
    if cfg.metric == "feature":
        if real is None or extractor is None:
            raise ValueError("feature metric needs the real dataset and an extractor")
        return feature_scores(gen, real, extractor)
    if classifier is None:
        raise ValueError("prob metric needs the reference classifier")
    return prob_scores(gen, classifier)


def apply_filter(gen, cfg, real=None, classifier=None, extractor=None):
    """Keep the generated samples passing the threshold rule, order preserved.

    Returns the filtered dataset and a report with per-sample scores.
    """
    scores = compute_scores(gen, cfg, real=real, classifier=classifier,
                            extractor=extractor)
    kept = cfg.keeps(scores)
    report = FilterReport(
        metric=cfg.metric, threshold=cfg.threshold, scores=scores, kept=kept,
        labels=np.array(gen.labels), num_classes=gen.num_classes,
    )
    return gen.select(np.flatnonzero(kept)), report


def calibrate_threshold(scores, keep_fraction, metric):
    """Threshold keeping roughly `keep_fraction` of the scored samples.

    Absolute thresholds do not transfer across datasets or feature spaces,
    so sweeps are anchored to the observed score distribution instead.
    """
    if not 0.0 < keep_fraction <= 1.0:
        raise ValueError("keep_fraction must be in (0, 1]")
    scores = np.asarray(scores, dtype=np.float64)
    if scores.size == 0:
        raise ValueError("no scores to calibrate against")
    if metric == "prob":
        return float(np.quantile(scores, 1.0 - keep_fraction))
    return float(np.quantile(scores, keep_fraction))
