"""Score generated samples against the real data and filter the bad ones.

Uses a quickly-trained reference classifier. Mixes real images (good
stand-ins for faithful generations) with pure noise (bad ones) to show the
three scores separating them.
"""

import numpy as np

from tailgen import (FilterConfig, LongTailDataset, apply_filter,
                     calibrate_threshold, classifier_train_defaults, feature_scores,
                     generate_shapes_dataset, pixel_scores, prob_scores, strip_head,
                     train_classifier)

real = generate_shapes_dataset(num_classes=10, per_class=80, seed=21)
print(f"reference set: {len(real)} real images")

f0 = train_classifier(real, classifier_train_defaults(epochs=10, seed=2))
extractor = strip_head(f0)

# Fake "generated" pool: held-out real images (faithful) + uniform noise (junk).
held_out = generate_shapes_dataset(num_classes=10, per_class=10, seed=22)
rng = np.random.default_rng(23)
junk_pixels = rng.integers(0, 256, size=(100, 16, 16, 1), dtype=np.uint8)
junk = LongTailDataset(junk_pixels, rng.integers(0, 10, 100).astype(np.int64),
                       np.ones(100, np.uint8), 10)
gen = LongTailDataset.concat([
    LongTailDataset(held_out.pixels, held_out.labels,
                    np.ones(len(held_out), np.uint8), 10),
    junk,
])
faithful = np.arange(len(gen)) < len(held_out)

for name, scores, low_is_good in (
    ("pixel distance", pixel_scores(gen, real), True),
    ("feature distance", feature_scores(gen, real, extractor), True),
    ("own-label probability", prob_scores(gen, f0), False),
):
    a = np.median(scores[faithful])
    b = np.median(scores[~faithful])
    marker = "<" if low_is_good else ">"
    print(f"{name:24s} median faithful {a:10.4g} {marker} junk {b:10.4g}")

# Thresholds do not transfer across datasets; calibrate from the scores.
probs = prob_scores(gen, f0)
threshold = calibrate_threshold(probs, keep_fraction=0.5, metric="prob")
kept, report = apply_filter(gen, FilterConfig("prob", threshold), classifier=f0)
frac_faithful = faithful[report.kept].mean()
print(f"\nprob >= {threshold:.3g} keeps {report.kept_count}/{len(gen)} samples; "
      f"{frac_faithful:.0%} of the kept ones are faithful")
