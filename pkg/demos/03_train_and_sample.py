"""Train a small conditional denoiser and sample a class grid.

A short run on a reduced dataset; expect blobby but class-consistent
samples after a couple of minutes. Longer schedules sharpen them.
"""

from pathlib import Path

import numpy as np

from tailgen import (CbdmConfig, denoiser_train_defaults, generate_shapes_dataset,
                     make_schedule, sample, train_denoiser)

out = Path("demo_out")
out.mkdir(exist_ok=True)

data = generate_shapes_dataset(num_classes=10, per_class=120, seed=11)
sched = make_schedule(num_steps=100, beta_start=1e-4, beta_end=0.02)

cfg = denoiser_train_defaults(epochs=20, batch_size=128, lr=2e-4, seed=1)
print(f"training on {len(data)} images for {cfg.epochs} epochs "
      f"(class-balancing regularizer on) ...")
model = train_denoiser(data, sched, CbdmConfig(tau=1.0, gamma=0.25), cfg,
                       curve_path=out / "denoiser_curve.csv", base_width=16)

rows = []
for label in range(10):
    images = sample(model, sched, label=label, count=8, seed=500 + label)
    rows.append(np.concatenate([img[:, :, 0] for img in images], axis=1))
grid = np.concatenate(rows, axis=0)

b = np.round(255 * (grid + 1) / 2).astype(np.uint8)
with open(out / "samples.pgm", "wb") as f:
    f.write(f"P5\n{b.shape[1]} {b.shape[0]}\n255\n".encode())
    f.write(b.tobytes())
print(f"wrote {out / 'samples.pgm'}: one row per class, 8 samples each")
print(f"training curve in {out / 'denoiser_curve.csv'}")
