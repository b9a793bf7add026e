"""Fourier-operator family: baseline FNO and the latent-rollout kFNO variants.

The latent update is the Fourier layer

    z  ->  alpha * z + sigma(W z + b + F^{-1}{ R . F{z} }),

with R a per-retained-mode complex channel mixer. kFNO composes
lift -> hidden -> latent rollout (A applied j times for the j-th step) ->
per-step refinement -> per-step projection; the baseline FNO merges rollout
and refinement depth into the hidden stack and predicts a single step.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .errors import ConfigurationError
from .params import ParamRegistry, ParamVector

__all__ = ["FnoConfig", "build_fno_registry", "fno_family_forward", "N_LAYERS_A", "N_LAYERS_Q"]

N_LAYERS_A = {"default": 2, "star": 1, "dagger": 2, "baseline": 2}
N_LAYERS_Q = 1


@dataclass(frozen=True)
class FnoConfig:
    d: int = 1
    p: int = 256
    d_z: int = 30
    kappa_max: tuple[int, ...] = (128,)
    n_layers_H: int = 3
    alpha: int = 1
    n: int = 20
    variant: str = "default"       # default | star | dagger | baseline
    activation: str = "gelu"
    share_H_params: bool = False
    qbar_shared: bool = True
    coord_channels: bool = False

    def __post_init__(self):
        if self.variant not in N_LAYERS_A:
            raise ConfigurationError(f"unknown kFNO variant {self.variant!r}")
        kmax = self.kappa_max if isinstance(self.kappa_max, tuple) else (self.kappa_max,)
        object.__setattr__(self, "kappa_max", tuple(int(k) for k in kmax))
        if len(self.kappa_max) != self.d:
            raise ConfigurationError("kappa_max needs one cutoff per spatial axis")
        if any(k < 1 or k > self.p // 2 for k in self.kappa_max):
            raise ConfigurationError("kappa_max must lie in [1, p/2]")
        if self.n < 1:
            raise ConfigurationError("rollout length n must be >= 1")
        if self.variant == "baseline" and self.n != 1:
            raise ConfigurationError("baseline FNO predicts a single step (n=1)")
        if self.alpha not in (0, 1):
            raise ConfigurationError("alpha must be 0 or 1")

    @property
    def in_channels(self) -> int:
        return 1 + (2 * self.d if self.coord_channels else 0)

    @property
    def proj_hidden(self) -> int:
        return 4 * self.d_z

    def mode_index_sets(self, extra_axis: int | None = None) -> list[np.ndarray]:
        """Retained-mode indices per transform axis (|kappa_j| < kappa_max)."""
        axes_len = [self.p] * self.d
        kmax = list(self.kappa_max)
        if extra_axis is not None:
            axes_len = [extra_axis] + axes_len
            kmax = [extra_axis] + kmax  # step axis keeps all modes
        idxs = []
        for i, (ln, km) in enumerate(zip(axes_len, kmax)):
            is_rfft = i == len(axes_len) - 1
            idxs.append(ad.retained_indices(ln if is_rfft else ln, km, is_rfft))
        return idxs

    def mode_shape(self, extra_axis: int | None = None) -> tuple[int, ...]:
        return tuple(len(ix) for ix in self.mode_index_sets(extra_axis))


def _register_fourier_layer(reg: ParamRegistry, name: str, cfg: FnoConfig,
                            extra_axis: int | None = None):
    c = cfg.d_z
    reg.register(f"{name}.R", cfg.mode_shape(extra_axis) + (c, c), is_complex=True,
                 init="spectral", init_scale=1.0 / c)
    reg.register(f"{name}.W", (c, c), init="fanin", init_scale=c)
    reg.register(f"{name}.b", (c,), init="zeros")


def _register_mlp(reg: ParamRegistry, name: str, c_in: int, c_hidden: int, c_out: int):
    reg.register(f"{name}.w1", (c_hidden, c_in), init="fanin", init_scale=c_in)
    reg.register(f"{name}.b1", (c_hidden,), init="zeros")
    reg.register(f"{name}.w2", (c_out, c_hidden), init="fanin", init_scale=c_hidden)
    reg.register(f"{name}.b2", (c_out,), init="zeros")


def hidden_layer_names(cfg: FnoConfig) -> list[str]:
    n_h = cfg.n_layers_H + (N_LAYERS_A[cfg.variant] + N_LAYERS_Q if cfg.variant == "baseline" else 0)
    if cfg.share_H_params:
        return ["H.shared"] * n_h
    return [f"H.{i}" for i in range(n_h)]


def build_fno_registry(cfg: FnoConfig) -> ParamRegistry:
    reg = ParamRegistry()
    _register_mlp(reg, "lift", cfg.in_channels, cfg.d_z, cfg.d_z)
    for name in dict.fromkeys(hidden_layer_names(cfg)):
        _register_fourier_layer(reg, name, cfg)
    if cfg.variant != "baseline":
        for i in range(N_LAYERS_A[cfg.variant]):
            _register_fourier_layer(reg, f"A.{i}", cfg)
        if cfg.variant == "dagger":
            _register_fourier_layer(reg, "Q.0", cfg, extra_axis=cfg.n)
        elif cfg.qbar_shared:
            _register_fourier_layer(reg, "Q.0", cfg)
        else:
            for s in range(cfg.n):
                _register_fourier_layer(reg, f"Q.s{s}", cfg)
    _register_mlp(reg, "proj", cfg.d_z, cfg.proj_hidden, 1)
    return reg


class Binder:
    """Binds registry-named parameters to tape leaves, once per forward call."""

    def __init__(self, tape: ad.Tape, params: ParamVector):
        self.tape = tape
        self.params = params
        self.leaves: dict[str, ad.Var] = {}

    def __call__(self, name: str) -> ad.Var:
        v = self.leaves.get(name)
        if v is None:
            v = self.tape.leaf(self.params.view(name), requires_grad=True)
            self.leaves[name] = v
        return v

    def collect_grads(self, grads) -> np.ndarray:
        """Assemble the flat gradient vector aligned with the parameter buffer."""
        out = np.zeros_like(self.params.data)
        for name, leaf in self.leaves.items():
            g = grads[leaf.index]
            if g is None:
                continue
            e = self.params.registry.entry(name)
            tgt = out[e.offset:e.offset + e.n_reals]
            if e.is_complex:
                cdtype = np.complex64 if out.dtype == np.float32 else np.complex128
                tgt.view(cdtype)[...] = g.reshape(-1)
            else:
                tgt[...] = g.reshape(-1).real if np.iscomplexobj(g) else g.reshape(-1)
        return out


def _fourier_layer(bind: Binder, z: ad.Var, name: str, cfg: FnoConfig,
                   idxs, spatial, activate: bool = True) -> ad.Var:
    d_sp = len(spatial)
    Z = ad.fft_forward(z, d_sp)
    U = ad.spectral_multiply(Z, bind(f"{name}.R"), idxs)
    conv = ad.fft_inverse(U, d_sp, spatial)
    body = ad.add(ad.affine_pointwise(z, bind(f"{name}.W"), bind(f"{name}.b")), conv)
    if activate:
        body = ad.activation(body, cfg.activation)
    return ad.add(z, body) if cfg.alpha == 1 else body


def _mlp(bind: Binder, x: ad.Var, name: str, cfg: FnoConfig) -> ad.Var:
    h = ad.activation(ad.affine_pointwise(x, bind(f"{name}.w1"), bind(f"{name}.b1")),
                      cfg.activation)
    return ad.affine_pointwise(h, bind(f"{name}.w2"), bind(f"{name}.b2"))


def _coord_embedding(cfg: FnoConfig) -> np.ndarray:
    x = -np.pi + (2 * np.pi / cfg.p) * np.arange(cfg.p)
    if cfg.d == 1:
        return np.stack([np.sin(x), np.cos(x)])
    gx, gy = np.meshgrid(x, x, indexing="ij")
    return np.stack([np.sin(gx), np.cos(gx), np.sin(gy), np.cos(gy)])


def fno_family_forward(tape: ad.Tape, params: ParamVector, phi, cfg: FnoConfig,
                       bind: Binder | None = None):
    """Forward pass for every FNO-family variant.

    phi: (B, 1, *spatial) array or tape Var. Returns (stacked_var, binder) where
    stacked_var holds the n predicted steps in step-major order along the batch
    axis, i.e. shape (n*B, 1, *spatial); the baseline returns (B, 1, *spatial).
    """
    is_var = isinstance(phi, ad.Var)
    shape = phi.value.shape if is_var else phi.shape
    if shape[2:] != (cfg.p,) * cfg.d:
        raise ConfigurationError(f"input grid {shape[2:]} does not match model p={cfg.p}")
    if bind is None:
        bind = Binder(tape, params)
    spatial = shape[2:]
    idxs = cfg.mode_index_sets()

    if cfg.coord_channels:
        emb = _coord_embedding(cfg)
        if is_var:
            dtype = phi.value.dtype
            embv = tape.leaf(np.broadcast_to(emb.astype(dtype),
                                             (shape[0], 2 * cfg.d) + spatial).copy())
            x = ad.concat_channels(phi, embv)
        else:
            emb = np.broadcast_to(emb.astype(phi.dtype), (shape[0], 2 * cfg.d) + spatial)
            x = tape.leaf(np.concatenate([phi, emb], axis=1))
    else:
        x = phi if is_var else tape.leaf(phi)

    z = _mlp(bind, x, "lift", cfg)
    for name in hidden_layer_names(cfg):
        z = _fourier_layer(bind, z, name, cfg, idxs, spatial)

    if cfg.variant == "baseline":
        return _mlp(bind, z, "proj", cfg), bind

    n_a = N_LAYERS_A[cfg.variant]
    steps = []
    for _ in range(cfg.n):
        for i in range(n_a):
            last = i == n_a - 1
            z = _fourier_layer(bind, z, f"A.{i}", cfg, idxs, spatial,
                               activate=not (cfg.variant == "star" and last))
        steps.append(z)

    if cfg.variant == "dagger":
        seq = ad.steps_to_axis(ad.concat_batch(steps), cfg.n)
        idxs_t = cfg.mode_index_sets(extra_axis=cfg.n)
        seq = _fourier_layer(bind, seq, "Q.0", cfg, idxs_t, (cfg.n,) + spatial)
        seq = ad.axis_to_steps(seq)
    elif cfg.qbar_shared:
        seq = _fourier_layer(bind, ad.concat_batch(steps), "Q.0", cfg, idxs, spatial)
    else:
        refined = [
            _fourier_layer(bind, zs, f"Q.s{s}", cfg, idxs, spatial)
            for s, zs in enumerate(steps)
        ]
        seq = ad.concat_batch(refined)

    return _mlp(bind, seq, "proj", cfg), bind


def unstack_steps(stacked: np.ndarray, n: int) -> np.ndarray:
    """(n*B, 1, *sp) step-major -> (B, n, *sp)."""
    B = stacked.shape[0] // n
    return stacked.reshape(n, B, *stacked.shape[2:]).swapaxes(0, 1)
