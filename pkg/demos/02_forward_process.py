"""Visualize the forward noising process and the denoising objective.

Writes a PGM strip of one image at increasing noise levels and evaluates
the training loss of an untrained denoiser against known reference points.
"""

from pathlib import Path

import numpy as np
import torch

from tailgen import (ConditionalUNet, ddpm_loss, forward_diffuse,
                     generate_shapes_dataset, make_schedule)


def write_pgm(path, image):
    """image: (H, W) floats in [-1, 1] -> binary PGM."""
    b = np.round(255 * (np.clip(image, -1, 1) + 1) / 2).astype(np.uint8)
    h, w = b.shape
    with open(path, "wb") as f:
        f.write(f"P5\n{w} {h}\n255\n".encode())
        f.write(b.tobytes())


out = Path("demo_out")
out.mkdir(exist_ok=True)

sched = make_schedule(num_steps=200, beta_start=1e-4, beta_end=0.02)
print(f"schedule: T={sched.num_steps}, alpha_bar_1={sched.alpha_bars[0]:.5f}, "
      f"alpha_bar_T={sched.alpha_bars[-1]:.5f}")

ds = generate_shapes_dataset(num_classes=10, per_class=1, seed=3)
x0 = torch.from_numpy(ds.images[0].transpose(2, 0, 1))[None]  # (1, 1, 16, 16)

gen = torch.Generator().manual_seed(0)
strip = []
for t in (1, 50, 100, 150, 200):
    eps = torch.randn(x0.shape, generator=gen)
    xt = forward_diffuse(x0, t, eps, sched)
    strip.append(xt[0, 0].numpy())
    print(f"t={t:3d}: signal fraction sqrt(alpha_bar)={np.sqrt(sched.alpha_bars[t-1]):.3f}")
write_pgm(out / "forward_process.pgm", np.concatenate(strip, axis=1))
print(f"wrote {out / 'forward_process.pgm'} (t = 1, 50, 100, 150, 200)")

# An untrained denoiser scores close to 1.0: it cannot beat predicting
# nothing, and the squared noise has unit expectation.
with torch.random.fork_rng(devices=[]):
    torch.manual_seed(1)
    model = ConditionalUNet(num_classes=10, in_channels=1, base_width=16,
                            emb_dim=32, image_size=(16, 16))
batch = generate_shapes_dataset(num_classes=10, per_class=24, seed=4)
x = torch.from_numpy(batch.images.transpose(0, 3, 1, 2).copy())
y = torch.from_numpy(batch.labels.copy())
loss = ddpm_loss(model, x, y, sched, rng=torch.Generator().manual_seed(2))
print(f"untrained denoiser loss: {float(loss):.3f} (unit-variance reference: 1.0)")
