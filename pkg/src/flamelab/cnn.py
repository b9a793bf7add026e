"""Convolutional encoder-decoder baseline and its latent-rollout extension.

The encoder halves the spatial size from level 2 on (size-2 max pool prepended),
each level being a stack of periodic stride-1 convolutions with ReLU and
channel layer norm. The decoder concatenates the upsampled deeper state with
the same-level encoder output. The rollout variant advances all encoder levels
with per-level convolution stacks before each decode.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .errors import ConfigurationError
from .params import ParamRegistry, ParamVector

__all__ = ["CnnConfig", "build_cnn_registry", "cnn_family_forward"]


@dataclass(frozen=True)
class CnnConfig:
    p: int = 256
    channels: tuple[int, ...] = (16, 32, 64, 128, 128, 64, 32)
    kernel: int = 3
    n: int = 20
    variant: str = "default"            # default (rollout) | baseline
    inception_levels: tuple[int, ...] = ()
    convs_per_level: int = 2

    def __post_init__(self):
        object.__setattr__(self, "channels", tuple(int(c) for c in self.channels))
        object.__setattr__(self, "inception_levels", tuple(self.inception_levels))
        if self.kernel % 2 != 1:
            raise ConfigurationError("kernel size must be odd")
        if self.levels < 2:
            raise ConfigurationError("need at least two levels")
        if self.p % (2 ** (self.levels - 1)) != 0:
            raise ConfigurationError(
                f"p={self.p} must be divisible by 2^(L-1)={2 ** (self.levels - 1)}"
            )
        if self.variant not in ("default", "baseline"):
            raise ConfigurationError(f"unknown CNN variant {self.variant!r}")
        if self.variant == "baseline" and self.n != 1:
            raise ConfigurationError("baseline CNN predicts a single step (n=1)")
        if any(l < 1 or l > self.levels for l in self.inception_levels):
            raise ConfigurationError("inception levels must lie in [1, L]")

    @property
    def levels(self) -> int:
        return len(self.channels)


def _inception_split(c_out: int) -> tuple[int, int, int]:
    base = c_out // 3
    return (base, c_out - 2 * base, base)


def _register_conv(reg, name, c_in, c_out, k):
    reg.register(f"{name}.w", (c_out, c_in, k), init="fanin", init_scale=c_in * k)
    reg.register(f"{name}.b", (c_out,), init="zeros")


def _register_block(reg, name, c_in, c_out, cfg, inception=False):
    for j in range(cfg.convs_per_level):
        ci = c_in if j == 0 else c_out
        if inception and j == 0:
            for part, k in zip(_inception_split(c_out), (1, 3, 5)):
                _register_conv(reg, f"{name}.c{j}.k{k}", ci, part, k)
        else:
            _register_conv(reg, f"{name}.c{j}", ci, c_out, cfg.kernel)
        reg.register(f"{name}.ln{j}.g", (c_out,), init="ones")
        reg.register(f"{name}.ln{j}.b", (c_out,), init="zeros")


def build_cnn_registry(cfg: CnnConfig) -> ParamRegistry:
    reg = ParamRegistry()
    cs = cfg.channels
    for lvl in range(1, cfg.levels + 1):
        c_in = 1 if lvl == 1 else cs[lvl - 2]
        _register_block(reg, f"enc.{lvl}", c_in, cs[lvl - 1], cfg,
                        inception=lvl in cfg.inception_levels)
    for lvl in range(cfg.levels - 1, 0, -1):
        _register_block(reg, f"dec.{lvl}", cs[lvl] + cs[lvl - 1], cs[lvl - 1], cfg)
    if cfg.variant != "baseline":
        for lvl in range(1, cfg.levels + 1):
            c = cs[lvl - 1]
            _register_conv(reg, f"adv.{lvl}.c0", c, c, cfg.kernel)
            reg.register(f"adv.{lvl}.ln0.g", (c,), init="ones")
            reg.register(f"adv.{lvl}.ln0.b", (c,), init="zeros")
            _register_conv(reg, f"adv.{lvl}.c1", c, c, cfg.kernel)
    _register_conv(reg, "head", cs[0], 1, 1)
    return reg


def _conv(bind, x, name):
    return ad.conv_periodic(x, bind(f"{name}.w"), bind(f"{name}.b"))


def _block(bind, x, name, cfg, inception=False):
    for j in range(cfg.convs_per_level):
        if inception and j == 0:
            parts = [_conv(bind, x, f"{name}.c{j}.k{k}") for k in (1, 3, 5)]
            x = ad.concat_channels(ad.concat_channels(parts[0], parts[1]), parts[2])
        else:
            x = _conv(bind, x, f"{name}.c{j}")
        x = ad.activation(x, "relu")
        x = ad.layer_norm(x, bind(f"{name}.ln{j}.g"), bind(f"{name}.ln{j}.b"))
    return x


def _encode(bind, x, cfg):
    states = []
    for lvl in range(1, cfg.levels + 1):
        if lvl > 1:
            x = ad.maxpool2(x)
        x = _block(bind, x, f"enc.{lvl}", cfg, inception=lvl in cfg.inception_levels)
        states.append(x)
    return states


def _decode(bind, states, cfg):
    d = states[-1]
    for lvl in range(cfg.levels - 1, 0, -1):
        d = ad.concat_channels(ad.upsample2(d), states[lvl - 1])
        d = _block(bind, d, f"dec.{lvl}", cfg)
    return _conv(bind, d, "head")


def _advance(bind, states, cfg):
    out = []
    for lvl, e in enumerate(states, start=1):
        h = _conv(bind, e, f"adv.{lvl}.c0")
        h = ad.activation(h, "relu")
        h = ad.layer_norm(h, bind(f"adv.{lvl}.ln0.g"), bind(f"adv.{lvl}.ln0.b"))
        out.append(_conv(bind, h, f"adv.{lvl}.c1"))
    return out


def cnn_family_forward(tape: ad.Tape, params: ParamVector, phi, cfg: CnnConfig, bind=None):
    """Forward pass; phi is (B, 1, p) array or tape Var. Returns (stacked_var,
    binder) where the rollout variant stacks the n steps step-major along the
    batch axis."""
    from .fno import Binder  # shared binding helper

    is_var = isinstance(phi, ad.Var)
    shape = phi.value.shape if is_var else phi.shape
    if len(shape) != 3 or shape[2] != cfg.p:
        raise ConfigurationError(f"input shape {shape} does not match 1D model p={cfg.p}")
    if bind is None:
        bind = Binder(tape, params)
    x = phi if is_var else tape.leaf(phi)
    states = _encode(bind, x, cfg)
    if cfg.variant == "baseline":
        return _decode(bind, states, cfg), bind
    preds = []
    for _ in range(cfg.n):
        states = _advance(bind, states, cfg)
        preds.append(_decode(bind, states, cfg))
    return ad.concat_batch(preds), bind
