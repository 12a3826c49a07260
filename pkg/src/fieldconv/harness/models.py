"""FCNet: gradient lift, FCResNet blocks and a task head."""

from __future__ import annotations

import numpy as np

from .. import autodiff as ad
from ..layers import (MLP, ComplexLinear, EchoBlock, EchoConfig, FCResNetBlock, GradientLift, Linear, Module,
                      dropout, global_mean_pool, magnitude_readout)
from .config import NetConfig

CORR_HIDDEN = 256


class FCNet(Module):
    """``lift -> complex linear -> blocks -> head``.

    Heads: ``classification`` pools feature magnitudes into a linear
    classifier; ``segmentation`` and ``correspondence`` end in an ECHO block
    (the latter followed by two linear layers with dropout); ``matching``
    maps to ``descriptor_dim`` channels and returns their magnitudes.
    """

    def __init__(self, cfg: NetConfig, in_channels: int, n_out: int, rng: np.random.Generator):
        self.cfg = cfg
        self.n_out = n_out
        N, B, W = cfg.radial_nodes, cfg.band_limit, cfg.width
        self.lift = GradientLift(in_channels, cfg.lift_width, N, rng)
        self.widen = ComplexLinear(cfg.lift_width, W, rng)
        self.blocks = [FCResNetBlock(W, N, B, rng) for _ in range(cfg.blocks)]
        if cfg.task == "classification":
            self.head = Linear(W, n_out, rng)
        elif cfg.task == "segmentation":
            self.echo_cfg = EchoConfig.from_samples(cfg.echo_d, cfg.echo_h)
            self.head = EchoBlock(W, self.echo_cfg, list(cfg.mlp) + [n_out], N, B, rng)
        elif cfg.task == "correspondence":
            self.echo_cfg = EchoConfig.from_samples(cfg.echo_d, cfg.echo_h)
            self.head = EchoBlock(W, self.echo_cfg, list(cfg.mlp), N, B, rng)
            self.tail = MLP([cfg.mlp[-1], CORR_HIDDEN, n_out], rng)
        else:
            self.head = ComplexLinear(W, cfg.descriptor_dim, rng)

    def features(self, xi, cache):
        """Tangent features after the last FCResNet block."""
        h = self.widen(self.lift(xi, cache))
        saved = h
        period = self.cfg.residual_period
        for i, block in enumerate(self.blocks, 1):
            h = block(h, cache)
            if period and i % period == 0:
                h = ad.add(h, saved)
                saved = h
        return h

    def __call__(self, xi, cache, training: bool = False, rng=None):
        h = self.features(xi, cache)
        task = self.cfg.task
        if task == "classification":
            return self.head(global_mean_pool(magnitude_readout(h)))
        if task == "segmentation":
            return self.head(h, cache)
        if task == "correspondence":
            x = ad.relu(self.head(h, cache))
            first, second = self.tail.layers
            x = ad.relu(first(x))
            x = dropout(x, self.cfg.dropout, training, rng)
            return second(x)
        return magnitude_readout(self.head(h))


def build_model(cfg: NetConfig, in_channels: int, n_out: int, seed: int | None = None) -> FCNet:
    rng = np.random.default_rng(cfg.seed if seed is None else seed)
    return FCNet(cfg, in_channels, n_out, rng)
