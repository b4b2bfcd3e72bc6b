"""Shared fixtures and tiny configurations for fast tests."""

import dataclasses

import numpy as np
import torch
import torch.nn as nn

from tailgen import (CbdmConfig, DatasetConfig, FilterConfig, GroupBounds,
                     LongTailDataset, PipelineConfig, ScheduleConfig, TrainConfig,
                     classifier_train_defaults, denoiser_train_defaults)


def random_dataset(rng, n=40, num_classes=4, h=16, w=16, c=1, ensure_all=True):
    """Random byte-image dataset; each class occupied when ensure_all."""
    pixels = rng.integers(0, 256, size=(n, h, w, c), dtype=np.uint8)
    if ensure_all:
        labels = np.concatenate(
            [np.arange(num_classes), rng.integers(0, num_classes, size=n - num_classes)]
        ).astype(np.int64)
    else:
        labels = rng.integers(0, num_classes, size=n).astype(np.int64)
    origins = rng.integers(0, 2, size=n).astype(np.uint8)
    return LongTailDataset(pixels, labels, origins, num_classes)


class TinyDenoiser(nn.Module):
    """Few-parameter noise predictor for finite-difference checks."""

    def __init__(self, num_classes=3, in_channels=1):
        super().__init__()
        self.num_classes = num_classes
        self.in_channels = in_channels
        self.conv = nn.Conv2d(in_channels, in_channels, 3, padding=1)
        self.class_emb = nn.Embedding(num_classes, 1)

    def forward(self, x, t, y):
        y = torch.as_tensor(y)
        if y.dim() == 0:
            y = y.expand(x.shape[0])
        return self.conv(x) + self.class_emb(y)[:, :, None, None]


class EchoNoise(nn.Module):
    """Returns a pre-set tensor regardless of input (perfect/constant oracle)."""

    def __init__(self, output):
        super().__init__()
        self.output = output

    def forward(self, x, t, y):
        return self.output


def flat_params(model):
    return torch.cat([p.detach().reshape(-1) for p in model.parameters()])


def set_flat_params(model, vec):
    offset = 0
    with torch.no_grad():
        for p in model.parameters():
            n = p.numel()
            p.copy_(vec[offset:offset + n].reshape(p.shape))
            offset += n


def fd_gradient(model, loss_fn, h=1e-6):
    """Central finite differences of loss_fn() w.r.t. the model parameters."""
    base = flat_params(model).clone()
    grads = torch.zeros_like(base)
    for i in range(base.numel()):
        for sign in (+1.0, -1.0):
            vec = base.clone()
            vec[i] += sign * h
            set_flat_params(model, vec)
            with torch.no_grad():
                value = float(loss_fn())
            grads[i] += sign * value
    set_flat_params(model, base)
    return grads / (2.0 * h)


def autograd_gradient(model, loss_fn):
    for p in model.parameters():
        p.grad = None
    loss = loss_fn()
    loss.backward()
    return torch.cat([
        (p.grad if p.grad is not None else torch.zeros_like(p)).reshape(-1)
        for p in model.parameters()
    ])


def assert_close_rel(actual, expected, rtol, floor=1e-8):
    actual = np.asarray(actual, dtype=np.float64)
    expected = np.asarray(expected, dtype=np.float64)
    denom = np.maximum(np.abs(expected), floor)
    rel = np.abs(actual - expected) / denom
    assert rel.max() <= rtol, f"max relative error {rel.max():.3e} > {rtol}"


def tiny_pipeline_config(**overrides):
    """Small, fast pipeline configuration for mechanics tests."""
    base = PipelineConfig(
        dataset=DatasetConfig(num_classes=10, n1=24, ratio=6.0, test_per_class=12,
                              seed=0),
        groups=GroupBounds(many_min=15, few_max=8),
        schedule=ScheduleConfig(num_steps=6),
        generator="cbdm",
        cbdm=CbdmConfig(tau=1.0, gamma=0.25),
        target_count=10,
        filter=FilterConfig("prob", 1e-6),
        denoiser_width=8,
        denoiser_train=denoiser_train_defaults(epochs=1, batch_size=64, seed=1),
        f0_train=classifier_train_defaults(epochs=2, batch_size=64, seed=2),
        classifier_train=classifier_train_defaults(epochs=2, batch_size=64, seed=3,
                                                   omega=0.3),
    )
    return dataclasses.replace(base, **overrides) if overrides else base
