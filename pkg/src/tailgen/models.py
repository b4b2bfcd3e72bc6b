"""Denoiser and classifier networks, weighted cross-entropy, training loops."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, replace
from typing import Optional

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from .data import LongTailDataset
from .diffusion import cbdm_loss, ddpm_loss


class TrainingDiverged(RuntimeError):
    """Raised when a training loss becomes non-finite."""


class CheckpointError(ValueError):
    """Raised for unreadable or incompatible checkpoint files."""


# ---------------------------------------------------------------------------
# Networks
# ---------------------------------------------------------------------------


def _sinusoidal_embedding(t, dim):
    half = dim // 2
    freqs = torch.exp(
        -math.log(10000.0) * torch.arange(half, dtype=torch.float32, device=t.device)
        / (half - 1)
    )
    args = t.float()[:, None] * freqs[None, :]
    return torch.cat([torch.sin(args), torch.cos(args)], dim=1)


class _ResBlock(nn.Module):
    def __init__(self, cin, cout, emb_dim):
        super().__init__()
        self.norm1 = nn.GroupNorm(8, cin)
        self.conv1 = nn.Conv2d(cin, cout, 3, padding=1)
        self.emb_proj = nn.Linear(emb_dim, cout)
        self.norm2 = nn.GroupNorm(8, cout)
        self.conv2 = nn.Conv2d(cout, cout, 3, padding=1)
        self.skip = nn.Conv2d(cin, cout, 1) if cin != cout else nn.Identity()

    def forward(self, x, emb):
        h = self.conv1(F.silu(self.norm1(x)))
        h = h + self.emb_proj(emb)[:, :, None, None]
        h = self.conv2(F.silu(self.norm2(h)))
        return h + self.skip(x)


class ConditionalUNet(nn.Module):
    """Noise predictor eps(x_t, t, y) for small images.

    Two resolutions with two residual blocks per level, group norm, SiLU,
    and a skip connection across the downsampling. The class embedding is
    added to the time embedding, so conditioning costs no extra structure.
    """

    def __init__(self, num_classes, in_channels=1, base_width=32, emb_dim=128,
                 image_size=(16, 16)):
        super().__init__()
        self.num_classes = num_classes
        self.in_channels = in_channels
        self.base_width = base_width
        self.emb_dim = emb_dim
        self.image_size = tuple(image_size)
        w = base_width
        self.time_mlp = nn.Sequential(
            nn.Linear(emb_dim, emb_dim), nn.SiLU(), nn.Linear(emb_dim, emb_dim)
        )
        self.class_emb = nn.Embedding(num_classes, emb_dim)
        self.stem = nn.Conv2d(in_channels, w, 3, padding=1)
        self.enc1 = nn.ModuleList([_ResBlock(w, w, emb_dim), _ResBlock(w, w, emb_dim)])
        self.down = nn.Conv2d(w, 2 * w, 3, stride=2, padding=1)
        self.enc2 = nn.ModuleList(
            [_ResBlock(2 * w, 2 * w, emb_dim), _ResBlock(2 * w, 2 * w, emb_dim)]
        )
        self.dec2 = nn.ModuleList(
            [_ResBlock(2 * w, 2 * w, emb_dim), _ResBlock(2 * w, 2 * w, emb_dim)]
        )
        self.up = nn.ConvTranspose2d(2 * w, w, 2, stride=2)
        self.dec1 = nn.ModuleList([_ResBlock(2 * w, w, emb_dim), _ResBlock(w, w, emb_dim)])
        self.out_norm = nn.GroupNorm(8, w)
        self.out_conv = nn.Conv2d(w, in_channels, 3, padding=1)

    def forward(self, x, t, y):
        t = torch.as_tensor(t, device=x.device)
        y = torch.as_tensor(y, device=x.device)
        if t.dim() == 0:
            t = t.expand(x.shape[0])
        if y.dim() == 0:
            y = y.expand(x.shape[0])
        if int(t.min()) < 1:
            raise ValueError("timestep must be >= 1")
        if int(y.min()) < 0 or int(y.max()) >= self.num_classes:
            raise ValueError(f"class label out of range [0, {self.num_classes})")
        emb = self.time_mlp(_sinusoidal_embedding(t, self.emb_dim).to(x.dtype))
        emb = emb + self.class_emb(y).to(x.dtype)
        h = self.stem(x)
        for block in self.enc1:
            h = block(h, emb)
        skip = h
        h = self.down(h)
        for block in self.enc2:
            h = block(h, emb)
        for block in self.dec2:
            h = block(h, emb)
        h = self.up(h)
        h = torch.cat([h, skip], dim=1)
        for block in self.dec1:
            h = block(h, emb)
        return self.out_conv(F.silu(self.out_norm(h)))


class _BasicBlock(nn.Module):
    def __init__(self, cin, cout, stride=1):
        super().__init__()
        self.conv1 = nn.Conv2d(cin, cout, 3, stride=stride, padding=1, bias=False)
        self.bn1 = nn.BatchNorm2d(cout)
        self.conv2 = nn.Conv2d(cout, cout, 3, padding=1, bias=False)
        self.bn2 = nn.BatchNorm2d(cout)
        if stride != 1 or cin != cout:
            self.skip = nn.Sequential(
                nn.Conv2d(cin, cout, 1, stride=stride, bias=False), nn.BatchNorm2d(cout)
            )
        else:
            self.skip = nn.Identity()

    def forward(self, x):
        h = F.relu(self.bn1(self.conv1(x)))
        h = self.bn2(self.conv2(h))
        return F.relu(h + self.skip(x))


class ResNetClassifier(nn.Module):
    """Small residual classifier: three stages, two blocks each, GAP head."""

    def __init__(self, num_classes, in_channels=1, widths=(16, 32, 64)):
        super().__init__()
        self.num_classes = num_classes
        self.in_channels = in_channels
        self.widths = tuple(widths)
        w1, w2, w3 = self.widths
        self.stem = nn.Sequential(
            nn.Conv2d(in_channels, w1, 3, padding=1, bias=False),
            nn.BatchNorm2d(w1),
            nn.ReLU(),
        )
        self.stage1 = nn.Sequential(_BasicBlock(w1, w1), _BasicBlock(w1, w1))
        self.stage2 = nn.Sequential(_BasicBlock(w1, w2, stride=2), _BasicBlock(w2, w2))
        self.stage3 = nn.Sequential(_BasicBlock(w2, w3, stride=2), _BasicBlock(w3, w3))
        self.head = nn.Linear(w3, num_classes)

    @property
    def feature_dim(self):
        return self.widths[-1]

    def features(self, x):
        h = self.stage3(self.stage2(self.stage1(self.stem(x))))
        return h.mean(dim=(2, 3))

    def forward(self, x):
        return self.head(self.features(x))


class FeatureExtractor(nn.Module):
    """A classifier with the linear head removed; outputs pooled features."""

    def __init__(self, classifier):
        super().__init__()
        self.classifier = classifier

    @property
    def feature_dim(self):
        return self.classifier.feature_dim

    def forward(self, x):
        return self.classifier.features(x)


def strip_head(classifier):
    """Expose the pre-head features; logits factor as head(features) exactly."""
    return FeatureExtractor(classifier)


# ---------------------------------------------------------------------------
# Losses
# ---------------------------------------------------------------------------


def wce_loss(logits, labels, origins, omega):
    """Cross-entropy with generated samples down-weighted by omega.

    Per-sample weight is omega for generated samples (origin 1) and 1 for
    real ones; the batch mean keeps omega's effect independent of batch size.
    """
    if not 0.0 <= omega <= 1.0:
        raise ValueError(f"omega must be in [0, 1], got {omega}")
    if logits.dim() == 1:
        logits = logits.unsqueeze(0)
    labels = torch.as_tensor(labels, device=logits.device).reshape(-1)
    origins = torch.as_tensor(origins, device=logits.device).reshape(-1).to(logits.dtype)
    weights = omega * origins + (1.0 - origins)
    per_sample = F.cross_entropy(logits, labels, reduction="none")
    return (weights * per_sample).mean()


# ---------------------------------------------------------------------------
# Training
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 30
    batch_size: int = 128
    lr: float = 0.1
    seed: int = 0
    omega: float = 1.0
    optimizer: str = "sgd"  # or "adam"
    momentum: float = 0.9
    weight_decay: float = 5e-4
    lr_schedule: str = "cosine"  # or "constant"
    val_fraction: float = 0.1
    augment: bool = True
    threads: Optional[int] = None

    def __post_init__(self):
        if not 0.0 <= self.omega <= 1.0:
            raise ValueError(f"omega must be in [0, 1], got {self.omega}")
        if self.optimizer not in ("sgd", "adam"):
            raise ValueError(f"unknown optimizer {self.optimizer!r}")
        if self.lr_schedule not in ("cosine", "constant"):
            raise ValueError(f"unknown lr_schedule {self.lr_schedule!r}")
        if not 0.0 < self.val_fraction < 1.0:
            raise ValueError("val_fraction must be in (0, 1)")


def classifier_train_defaults(**overrides):
    base = dict(epochs=30, batch_size=128, lr=0.1, optimizer="sgd", lr_schedule="cosine")
    base.update(overrides)
    return TrainConfig(**base)


def denoiser_train_defaults(**overrides):
    base = dict(epochs=30, batch_size=128, lr=2e-4, optimizer="adam",
                lr_schedule="constant", weight_decay=0.0, augment=False)
    base.update(overrides)
    return TrainConfig(**base)


def _apply_threads(cfg):
    if cfg.threads is not None:
        torch.set_num_threads(cfg.threads)


def _to_tensor(images):
    """(N, H, W, C) float images in [-1, 1] to a (N, C, H, W) float32 tensor."""
    arr = np.asarray(images, dtype=np.float32).transpose(0, 3, 1, 2).copy()
    return torch.from_numpy(arr)


def _make_optimizer(model, cfg):
    if cfg.optimizer == "adam":
        return torch.optim.Adam(model.parameters(), lr=cfg.lr,
                                weight_decay=cfg.weight_decay)
    return torch.optim.SGD(model.parameters(), lr=cfg.lr, momentum=cfg.momentum,
                           weight_decay=cfg.weight_decay)


def _lr_at(cfg, step, total_steps):
    if cfg.lr_schedule == "constant" or total_steps <= 1:
        return cfg.lr
    return cfg.lr * 0.5 * (1.0 + math.cos(math.pi * step / total_steps))


def _write_curve(path, rows):
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["step", "loss"])
        for step, loss in rows:
            writer.writerow([step, f"{loss:.6g}"])


def _augment_batch(x, gen):
    """Random horizontal flip plus a shift of up to 2 pixels (replicate pad)."""
    b, _, h, w = x.shape
    flip = torch.rand(b, generator=gen) < 0.5
    x = torch.where(flip.view(-1, 1, 1, 1), x.flip(-1), x)
    padded = F.pad(x, (2, 2, 2, 2), mode="replicate")
    shifts = torch.randint(0, 5, (b, 2), generator=gen)
    out = torch.empty_like(x)
    for i in range(b):
        dy, dx = int(shifts[i, 0]), int(shifts[i, 1])
        out[i] = padded[i, :, dy:dy + h, dx:dx + w]
    return out


def _val_split(labels, origins, val_fraction, seed):
    """Per-class validation indices carved from real samples only."""
    rng = np.random.default_rng(seed)
    val_idx = []
    for c in np.unique(labels):
        real_c = np.flatnonzero((labels == c) & (origins == 0))
        if real_c.size == 0:
            continue
        k = max(1, int(round(val_fraction * real_c.size)))
        val_idx.append(np.sort(rng.choice(real_c, size=k, replace=False)))
    val = np.concatenate(val_idx) if val_idx else np.zeros(0, np.int64)
    mask = np.ones(len(labels), dtype=bool)
    mask[val] = False
    return np.flatnonzero(mask), val


def _check_finite(loss, step):
    if not torch.isfinite(loss):
        raise TrainingDiverged(f"non-finite loss {loss.item()} at step {step}")


def train_classifier(data, cfg, curve_path=None, widths=(16, 32, 64)):
    """Train a classifier with weighted cross-entropy; keep the best-val weights.

    Validation is a per-class 10% slice of the real samples (never the
    generated ones). Deterministic for a fixed seed and thread count.
    """
    if len(data) == 0:
        raise ValueError("empty dataset")
    counts = data.class_counts
    if counts.min() == 0:
        missing = int(np.flatnonzero(counts == 0)[0])
        raise ValueError(f"class {missing} has no samples")
    _apply_threads(cfg)
    h, w, c = data.image_shape
    with torch.random.fork_rng(devices=[]):
        torch.manual_seed(cfg.seed)
        model = ResNetClassifier(data.num_classes, in_channels=c, widths=widths)
    train_idx, val_idx = _val_split(data.labels, data.origins, cfg.val_fraction, cfg.seed)
    images = _to_tensor(data.images)
    labels = torch.from_numpy(np.ascontiguousarray(data.labels))
    origins = torch.from_numpy(np.ascontiguousarray(data.origins)).float()
    tr_x, tr_y, tr_o = images[train_idx], labels[train_idx], origins[train_idx]
    va_x, va_y = images[val_idx], labels[val_idx]
    gen = torch.Generator().manual_seed(cfg.seed)
    opt = _make_optimizer(model, cfg)
    n = tr_x.shape[0]
    steps_per_epoch = max(1, math.ceil(n / cfg.batch_size))
    total_steps = cfg.epochs * steps_per_epoch
    best_acc, best_state = -1.0, None
    curve, step = [], 0
    for _ in range(cfg.epochs):
        model.train()
        perm = torch.randperm(n, generator=gen)
        for start in range(0, n, cfg.batch_size):
            idx = perm[start:start + cfg.batch_size]
            xb = tr_x[idx]
            if cfg.augment:
                xb = _augment_batch(xb, gen)
            for group in opt.param_groups:
                group["lr"] = _lr_at(cfg, step, total_steps)
            loss = wce_loss(model(xb), tr_y[idx], tr_o[idx], cfg.omega)
            _check_finite(loss, step)
            opt.zero_grad()
            loss.backward()
            opt.step()
            curve.append((step, float(loss)))
            step += 1
        acc = _eval_accuracy(model, va_x, va_y)
        # ties go to the later epoch: with a small validation split the
        # accuracy is coarsely quantized, and the low-lr tail of the cosine
        # schedule generalizes better than an early tied checkpoint
        if acc >= best_acc:
            best_acc = acc
            best_state = {k: v.detach().clone() for k, v in model.state_dict().items()}
    if best_state is not None:
        model.load_state_dict(best_state)
    model.eval()
    if curve_path is not None:
        _write_curve(curve_path, curve)
    return model


def _eval_accuracy(model, x, y, batch_size=1024):
    if x.shape[0] == 0:
        return float("nan")
    model.eval()
    hits = 0
    with torch.no_grad():
        for start in range(0, x.shape[0], batch_size):
            pred = model(x[start:start + batch_size]).argmax(dim=1)
            hits += int((pred == y[start:start + batch_size]).sum())
    return hits / x.shape[0]


def train_denoiser(data, sched, cbdm, cfg, curve_path=None, base_width=32,
                   emb_dim=128):
    """Train the conditional noise predictor on the real samples of `data`.

    `cbdm=None` uses the plain denoising objective; otherwise the
    class-balancing regularizer is added. A CbdmConfig with tau=0 follows the
    exact same trajectory as `cbdm=None` for the same seed.
    """
    real = data.real_only()
    if len(real) == 0:
        raise ValueError("no real samples to train on")
    _apply_threads(cfg)
    h, w, c = real.image_shape
    with torch.random.fork_rng(devices=[]):
        torch.manual_seed(cfg.seed)
        model = ConditionalUNet(real.num_classes, in_channels=c,
                                base_width=base_width, emb_dim=emb_dim,
                                image_size=(h, w))
    if cbdm is not None and cbdm.dataset_size is None:
        cbdm = replace(cbdm, dataset_size=len(real))
    counts = real.class_counts
    images = _to_tensor(real.images)
    labels = torch.from_numpy(np.ascontiguousarray(real.labels))
    gen = torch.Generator().manual_seed(cfg.seed)
    opt = _make_optimizer(model, cfg)
    n = images.shape[0]
    steps_per_epoch = max(1, math.ceil(n / cfg.batch_size))
    total_steps = cfg.epochs * steps_per_epoch
    curve, step = [], 0
    model.train()
    for _ in range(cfg.epochs):
        perm = torch.randperm(n, generator=gen)
        for start in range(0, n, cfg.batch_size):
            idx = perm[start:start + cfg.batch_size]
            xb, yb = images[idx], labels[idx]
            for group in opt.param_groups:
                group["lr"] = _lr_at(cfg, step, total_steps)
            if cbdm is None:
                loss = ddpm_loss(model, xb, yb, sched, rng=gen)
            else:
                loss = cbdm_loss(model, xb, yb, sched, cbdm, rng=gen,
                                 class_counts=counts)
            _check_finite(loss, step)
            opt.zero_grad()
            loss.backward()
            opt.step()
            curve.append((step, float(loss)))
            step += 1
    model.eval()
    if curve_path is not None:
        _write_curve(curve_path, curve)
    return model


# ---------------------------------------------------------------------------
# Numpy-facing inference helpers
# ---------------------------------------------------------------------------


def classifier_logits(model, images, batch_size=1024):
    """Logits for (N, H, W, C) float images in [-1, 1], as float32 (N, M)."""
    model.eval()
    x = _to_tensor(images)
    outs = []
    with torch.no_grad():
        for start in range(0, x.shape[0], batch_size):
            outs.append(model(x[start:start + batch_size]))
    if not outs:
        return np.zeros((0, model.num_classes), dtype=np.float32)
    return torch.cat(outs).numpy()


def softmax_probs(logits):
    """Numerically stable softmax rows."""
    z = np.asarray(logits, dtype=np.float64)
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def predict_labels(model, images, batch_size=1024):
    return classifier_logits(model, images, batch_size).argmax(axis=1)


def extract_features(extractor, images, batch_size=1024):
    """Pooled features for (N, H, W, C) float images, as float32 (N, D)."""
    extractor.eval()
    x = _to_tensor(images)
    outs = []
    with torch.no_grad():
        for start in range(0, x.shape[0], batch_size):
            outs.append(extractor(x[start:start + batch_size]))
    if not outs:
        return np.zeros((0, extractor.feature_dim), dtype=np.float32)
    return torch.cat(outs).numpy()


# ---------------------------------------------------------------------------
# Checkpoints
# ---------------------------------------------------------------------------

_CKPT_FORMAT = "tailgen.ckpt"
_CKPT_VERSION = 1


def save_checkpoint(path, model):
    if isinstance(model, ConditionalUNet):
        kind = "denoiser"
        arch = dict(num_classes=model.num_classes, in_channels=model.in_channels,
                    base_width=model.base_width, emb_dim=model.emb_dim,
                    image_size=list(model.image_size))
    elif isinstance(model, ResNetClassifier):
        kind = "classifier"
        arch = dict(num_classes=model.num_classes, in_channels=model.in_channels,
                    widths=list(model.widths))
    else:
        raise CheckpointError(f"cannot checkpoint {type(model).__name__}")
    torch.save(
        {"format": _CKPT_FORMAT, "version": _CKPT_VERSION, "kind": kind,
         "arch": arch, "state": model.state_dict()},
        path,
    )


def load_checkpoint(path):
    try:
        payload = torch.load(path, map_location="cpu", weights_only=False)
    except Exception as e:
        raise CheckpointError(f"{path}: unreadable checkpoint ({e})") from e
    if not isinstance(payload, dict) or payload.get("format") != _CKPT_FORMAT:
        raise CheckpointError(f"{path}: not a tailgen checkpoint")
    if payload.get("version") != _CKPT_VERSION:
        raise CheckpointError(
            f"{path}: unsupported checkpoint version {payload.get('version')}"
        )
    arch = payload["arch"]
    if payload["kind"] == "denoiser":
        model = ConditionalUNet(
            arch["num_classes"], in_channels=arch["in_channels"],
            base_width=arch["base_width"], emb_dim=arch["emb_dim"],
            image_size=tuple(arch["image_size"]),
        )
    elif payload["kind"] == "classifier":
        model = ResNetClassifier(
            arch["num_classes"], in_channels=arch["in_channels"],
            widths=tuple(arch["widths"]),
        )
    else:
        raise CheckpointError(f"{path}: unknown checkpoint kind {payload['kind']!r}")
    model.load_state_dict(payload["state"])
    model.eval()
    return model
