"""Model-kind dispatch: configs, registries, and forward passes behind one handle."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .cnn import CnnConfig, build_cnn_registry, cnn_family_forward
from .errors import ConfigurationError
from .fno import FnoConfig, build_fno_registry, fno_family_forward, unstack_steps
from .params import ParamRegistry, ParamVector

__all__ = ["Model", "make_model", "MODEL_KINDS"]

MODEL_KINDS = ("fno", "kfno", "kfno_star", "kfno_dagger", "cnn", "kcnn")

_FNO_VARIANTS = {"fno": "baseline", "kfno": "default", "kfno_star": "star",
                 "kfno_dagger": "dagger"}


@dataclass
class Model:
    """One architecture: its kind, config, and parameter registry."""

    kind: str
    config: FnoConfig | CnnConfig
    registry: ParamRegistry

    @property
    def n(self) -> int:
        return self.config.n

    @property
    def is_multistep(self) -> bool:
        return self.kind in ("kfno", "kfno_star", "kfno_dagger", "kcnn")

    @property
    def grid_shape(self) -> tuple[int, ...]:
        d = getattr(self.config, "d", 1)
        return (self.config.p,) * d

    def init_params(self, seed: int, dtype=np.float64) -> ParamVector:
        return ParamVector.initialize(self.registry, seed, dtype)

    def forward(self, tape: ad.Tape, params: ParamVector, phi, bind=None):
        """Tape forward; returns (output Var, binder). Output is step-major
        stacked (n*B, 1, *spatial) for multistep kinds, (B, 1, *spatial) else."""
        if isinstance(self.config, FnoConfig):
            return fno_family_forward(tape, params, phi, self.config, bind=bind)
        return cnn_family_forward(tape, params, phi, self.config, bind=bind)

    def apply(self, params: ParamVector, phi: np.ndarray) -> np.ndarray:
        """Plain prediction: (B, 1, *sp) -> (B, n, *sp); tape is discarded."""
        out, _ = self.forward(ad.Tape(), params, phi)
        if self.is_multistep:
            return unstack_steps(out.value, self.n)
        return out.value.reshape(phi.shape[0], 1, *phi.shape[2:])

    def config_dict(self) -> dict:
        d = dict(self.config.__dict__)
        for k, v in d.items():
            if isinstance(v, tuple):
                d[k] = list(v)
        return d


def make_model(kind: str, **cfg_kwargs) -> Model:
    if kind not in MODEL_KINDS:
        raise ConfigurationError(f"unknown model kind {kind!r}; expected one of {MODEL_KINDS}")
    if kind in _FNO_VARIANTS:
        cfg_kwargs.setdefault("variant", _FNO_VARIANTS[kind])
        if cfg_kwargs["variant"] != _FNO_VARIANTS[kind]:
            raise ConfigurationError(f"variant {cfg_kwargs['variant']!r} conflicts with kind {kind!r}")
        if kind == "fno":
            cfg_kwargs["n"] = 1
        if "kappa_max" in cfg_kwargs and isinstance(cfg_kwargs["kappa_max"], (int, list)):
            km = cfg_kwargs["kappa_max"]
            cfg_kwargs["kappa_max"] = (km,) if isinstance(km, int) else tuple(km)
        cfg = FnoConfig(**cfg_kwargs)
        return Model(kind, cfg, build_fno_registry(cfg))
    cfg_kwargs.setdefault("variant", "baseline" if kind == "cnn" else "default")
    if kind == "cnn":
        cfg_kwargs["n"] = 1
    if "channels" in cfg_kwargs:
        cfg_kwargs["channels"] = tuple(cfg_kwargs["channels"])
    if "inception_levels" in cfg_kwargs:
        cfg_kwargs["inception_levels"] = tuple(cfg_kwargs["inception_levels"])
    cfg = CnnConfig(**cfg_kwargs)
    return Model(kind, cfg, build_cnn_registry(cfg))
