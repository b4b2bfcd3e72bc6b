"""Noise schedule, forward process, DDPM/CBDM training losses, and sampling."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np
import torch

from .data import LongTailDataset


@dataclass(frozen=True)
class NoiseSchedule:
    """Variance schedule beta_1..beta_T with cumulative signal alpha_bar_t.

    alpha_bar_t = prod_{i<=t} (1 - beta_i); arrays are indexed t-1 for step t.
    """

    betas: np.ndarray
    alpha_bars: np.ndarray

    @property
    def num_steps(self):
        return len(self.betas)

    def alpha_bar(self, t):
        """alpha_bar at 1-based step t (scalar or array)."""
        return self.alpha_bars[np.asarray(t) - 1]


def make_schedule(num_steps, beta_start=1e-4, beta_end=0.02, kind="linear"):
    if kind != "linear":
        raise ValueError(f"unknown schedule kind {kind!r}")
    if num_steps < 1:
        raise ValueError("num_steps must be >= 1")
    if not (0.0 < beta_start <= beta_end < 1.0):
        raise ValueError(
            f"need 0 < beta_start <= beta_end < 1, got ({beta_start}, {beta_end})"
        )
    if num_steps == 1:
        betas = np.array([beta_start], dtype=np.float64)
    else:
        betas = np.linspace(beta_start, beta_end, num_steps, dtype=np.float64)
    alpha_bars = np.cumprod(1.0 - betas)
    betas.setflags(write=False)
    alpha_bars.setflags(write=False)
    return NoiseSchedule(betas=betas, alpha_bars=alpha_bars)


def _gather(values, t, like):
    """Per-element schedule lookup, broadcast against an image batch."""
    v = torch.as_tensor(values, dtype=like.dtype, device=like.device)
    out = v[t - 1] if torch.is_tensor(t) else v[int(t) - 1]
    if torch.is_tensor(t) and t.dim() == 1:
        out = out.reshape(-1, *([1] * (like.dim() - 1)))
    return out


def forward_diffuse(x0, t, eps, sched):
    """x_t = sqrt(alpha_bar_t) * x0 + sqrt(1 - alpha_bar_t) * eps.

    `t` is 1-based, either a scalar or a per-sample vector matching x0's
    leading dimension.
    """
    if eps.shape != x0.shape:
        raise ValueError(f"eps shape {tuple(eps.shape)} != x0 shape {tuple(x0.shape)}")
    t_arr = t.detach().cpu().numpy() if torch.is_tensor(t) else np.asarray(t)
    if t_arr.min() < 1 or t_arr.max() > sched.num_steps:
        raise ValueError(f"t out of range [1, {sched.num_steps}]")
    ab = _gather(sched.alpha_bars, t, x0)
    return torch.sqrt(ab) * x0 + torch.sqrt(1.0 - ab) * eps


def _draw_t_eps(x0, sched, rng):
    b = x0.shape[0]
    t = torch.randint(1, sched.num_steps + 1, (b,), generator=rng, device=x0.device)
    eps = torch.randn(x0.shape, generator=rng, dtype=x0.dtype, device=x0.device)
    return t, eps


def _per_sample_mse(a, b):
    return ((a - b) ** 2).flatten(1).mean(dim=1)


def ddpm_loss(model, x0, y, sched, rng=None, *, t=None, eps=None):
    """Denoising objective: mean squared error between drawn and predicted noise.

    Timesteps are uniform over [1, T] and noise is standard normal, drawn
    from `rng` unless passed explicitly.
    """
    if x0.shape[0] == 0:
        raise ValueError("empty batch")
    if t is None or eps is None:
        drawn_t, drawn_eps = _draw_t_eps(x0, sched, rng)
        t = drawn_t if t is None else t
        eps = drawn_eps if eps is None else eps
    x_t = forward_diffuse(x0, t, eps, sched)
    return _per_sample_mse(eps, model(x_t, t, y)).mean()


@dataclass(frozen=True)
class CbdmConfig:
    """Class-balancing regularizer settings.

    The regularizer weight grows as tau * t / dataset_size; `gamma` scales
    the reverse (commutative) term. `dataset_size` defaults to the training
    set size when left unset.
    """

    tau: float = 1.0
    gamma: float = 0.25
    dataset_size: Optional[int] = None
    contrast_sampling: str = "uniform"  # or "frequency"

    def __post_init__(self):
        if not (np.isfinite(self.tau) and self.tau >= 0):
            raise ValueError("tau must be finite and >= 0")
        if not (np.isfinite(self.gamma) and self.gamma >= 0):
            raise ValueError("gamma must be finite and >= 0")
        if self.contrast_sampling not in ("uniform", "frequency"):
            raise ValueError("contrast_sampling must be 'uniform' or 'frequency'")


def _draw_contrast_labels(cfg, num_classes, batch, rng, class_counts, device):
    if cfg.contrast_sampling == "uniform":
        return torch.randint(0, num_classes, (batch,), generator=rng, device=device)
    if class_counts is None:
        raise ValueError("frequency sampling needs class_counts")
    w = torch.as_tensor(np.asarray(class_counts, dtype=np.float64), device=device)
    return torch.multinomial(w, batch, replacement=True, generator=rng)


def cbdm_loss(model, x0, y, sched, cfg, rng=None, *, t=None, eps=None,
              contrast_labels=None, class_counts=None, num_classes=None):
    """DDPM loss plus a stop-gradient contrast term between class conditions.

    For each batch element a contrast label y' is drawn (uniform over classes
    by default) and the squared difference between the predictions under y
    and y' is penalized, pulling class-conditional outputs together in
    proportion to the timestep. tau = 0 reduces exactly to `ddpm_loss`,
    consuming the same rng draws.
    """
    if cfg.dataset_size is None:
        raise ValueError("cfg.dataset_size must be set")
    if x0.shape[0] == 0:
        raise ValueError("empty batch")
    if t is None or eps is None:
        drawn_t, drawn_eps = _draw_t_eps(x0, sched, rng)
        t = drawn_t if t is None else t
        eps = drawn_eps if eps is None else eps
    x_t = forward_diffuse(x0, t, eps, sched)
    pred = model(x_t, t, y)
    base = _per_sample_mse(eps, pred).mean()
    if cfg.tau == 0.0:
        return base
    if contrast_labels is None:
        m = num_classes if num_classes is not None else int(getattr(model, "num_classes"))
        contrast_labels = _draw_contrast_labels(
            cfg, m, x0.shape[0], rng, class_counts, x0.device
        )
    pred_contrast = model(x_t, t, contrast_labels)
    t_f = t.to(x0.dtype) if torch.is_tensor(t) else torch.as_tensor(float(t), dtype=x0.dtype)
    coef = cfg.tau * t_f / float(cfg.dataset_size)
    reg = _per_sample_mse(pred, pred_contrast.detach())
    if cfg.gamma > 0.0:
        reg = reg + cfg.gamma * _per_sample_mse(pred.detach(), pred_contrast)
    return base + (coef * reg).mean()


def sample(model, sched, label, count, seed, max_batch=512):
    """Draw `count` images of class `label` by running the reverse chain.

    Ancestral sampling from pure noise with variance beta_t, deterministic
    for a fixed seed and configuration. Returns float32 (count, H, W, C)
    images clamped to [-1, 1].
    """
    if count < 1:
        raise ValueError("count must be >= 1")
    for p in model.parameters():
        if not torch.isfinite(p).all():
            raise ValueError("model parameters are not finite; refusing to sample")
    in_channels = model.in_channels
    h, w = model.image_size if hasattr(model, "image_size") else (None, None)
    rng = torch.Generator().manual_seed(seed)
    model.eval()
    chunks = []
    with torch.no_grad():
        for start in range(0, count, max_batch):
            b = min(max_batch, count - start)
            x = torch.randn((b, in_channels, h, w), generator=rng)
            y = torch.full((b,), int(label), dtype=torch.long)
            for step in range(sched.num_steps, 0, -1):
                t = torch.full((b,), step, dtype=torch.long)
                eps_hat = model(x, t, y)
                beta = float(sched.betas[step - 1])
                ab = float(sched.alpha_bars[step - 1])
                x = (x - beta / np.sqrt(1.0 - ab) * eps_hat) / np.sqrt(1.0 - beta)
                if step > 1:
                    x = x + np.sqrt(beta) * torch.randn(x.shape, generator=rng)
            chunks.append(x.clamp(-1.0, 1.0))
    out = torch.cat(chunks).permute(0, 2, 3, 1).contiguous()
    return out.numpy().astype(np.float32)


def generate_dataset(model, sched, budget, seed, num_classes):
    """Sample per-class budgets into a generated-origin dataset.

    Per-class noise streams are derived from `seed` so class order does not
    couple the draws. Classes with zero budget are skipped.
    """
    budget = np.asarray(budget, dtype=np.int64)
    parts_pixels, parts_labels = [], []
    for c in range(num_classes):
        need = int(budget[c])
        if need <= 0:
            continue
        class_seed = (int(seed) * 0x9E3779B9 + c) % (2**63)
        imgs = sample(model, sched, c, need, seed=class_seed)
        parts_pixels.append(imgs)
        parts_labels.append(np.full(need, c, dtype=np.int64))
    if not parts_pixels:
        h, w = model.image_size
        empty = np.zeros((0, h, w, model.in_channels), dtype=np.float32)
        return LongTailDataset.from_unit_images(
            empty, np.zeros(0, np.int64), np.zeros(0, np.uint8), num_classes
        )
    images = np.concatenate(parts_pixels)
    labels = np.concatenate(parts_labels)
    return LongTailDataset.from_unit_images(
        images, labels, np.ones(len(labels), np.uint8), num_classes
    )
