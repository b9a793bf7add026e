"""Reference pseudo-spectral time integrator for the MS and KS front equations.

Both equations are integrated in Fourier space with the integrating-factor
transform u = exp(-omega t) F{phi} applied to the linear symbol, and a
classical fixed-step RK4 on the transformed nonlinear term. The linear part is
therefore advanced exactly; accuracy of the nonlinear part is pinned by the
linear-regime dispersion tests.
"""

from __future__ import annotations

import datetime as _dt
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np
import scipy.fft as sfft

from .errors import BlowUpError, ConfigurationError
from .spectral import Field, Grid, dispersion_symbol

__all__ = [
    "SolverConfig",
    "InitialConditionSpec",
    "TrajectoryDataset",
    "nonlinear_rhs",
    "step",
    "sample_initial_condition",
    "generate_trajectories",
]

EQUATIONS = ("MS", "KS")


@dataclass(frozen=True)
class SolverConfig:
    eq: str
    beta: float
    grid: Grid
    dt_internal: float
    output_interval: float
    dealias: bool = False

    def __post_init__(self):
        if self.eq not in EQUATIONS:
            raise ConfigurationError(f"eq must be one of {EQUATIONS}, got {self.eq!r}")
        if self.beta <= 0:
            raise ConfigurationError("beta must be positive")
        if self.beta > self.grid.p / 2:
            raise ConfigurationError(
                f"beta={self.beta} exceeds the resolvable p/2={self.grid.p / 2}"
            )
        if self.dt_internal <= 0 or self.output_interval <= 0:
            raise ConfigurationError("time steps must be positive")
        k = self.output_interval / self.dt_internal
        if abs(k - round(k)) > 1e-9 * max(1.0, k):
            raise ConfigurationError(
                f"output_interval={self.output_interval} is not an integer multiple "
                f"of dt_internal={self.dt_internal}"
            )

    @property
    def substeps_per_output(self) -> int:
        return int(round(self.output_interval / self.dt_internal))


@dataclass(frozen=True)
class InitialConditionSpec:
    """Random initial front: i.i.d. uniform noise, optionally wave-truncated."""

    kind: str = "uniform_pointwise"
    lo: float = 0.0
    hi: float = 0.03
    kappa_cutoff: int = 8
    seed: int = 0

    def __post_init__(self):
        if self.kind not in ("uniform_pointwise", "lowwave_truncated"):
            raise ConfigurationError(f"unknown initial-condition kind {self.kind!r}")
        if self.lo > self.hi:
            raise ConfigurationError("amplitude range must satisfy lo <= hi")
        if self.kind == "lowwave_truncated" and self.kappa_cutoff < 1:
            raise ConfigurationError("kappa_cutoff must be >= 1")


@dataclass
class TrajectoryDataset:
    """Stack of solution sequences at fixed output spacing.

    `data` is shaped (n_sequences, n_steps + 1, *grid) in float64; consecutive
    entries along axis 1 are output_interval apart.
    """

    config: SolverConfig
    ic_spec: InitialConditionSpec
    data: np.ndarray
    seeds: list[int]
    master_seed: int
    created: str = field(default_factory=lambda: _dt.datetime.now(_dt.timezone.utc).isoformat())

    @property
    def n_sequences(self) -> int:
        return self.data.shape[0]

    @property
    def n_steps(self) -> int:
        return self.data.shape[1] - 1

    def sequence(self, i: int) -> np.ndarray:
        return self.data[i]


class _Operators:
    """Precomputed spectral arrays for one solver configuration."""

    def __init__(self, cfg: SolverConfig):
        g = cfg.grid
        self.grid = g
        kn = g.wavenumber_norm()
        self.omega = dispersion_symbol(cfg.eq, cfg.beta, kn)
        self.ik = []
        for ax, k in enumerate(g.wavenumbers()):
            ik = 1j * k.copy()
            if ax == g.d - 1:
                ik[-1] = 0.0
            else:
                ik[g.p // 2] = 0.0
            shape = [1] * g.d
            shape[ax] = -1
            self.ik.append(ik.reshape(shape))
        tau = cfg.beta / 10.0
        self.nl_coef = (tau if cfg.eq == "MS" else 1.0) / (2.0 * cfg.beta**2)
        h = cfg.dt_internal
        self.dt = h
        self.E = np.exp(self.omega * (h / 2.0))
        self.E2 = np.exp(self.omega * h)
        if cfg.dealias:
            mask = np.ones(g.half_shape, dtype=bool)
            cutoff = g.p / 3.0
            for ax, k in enumerate(g.wavenumbers()):
                shape = [1] * g.d
                shape[ax] = -1
                mask &= np.abs(k).reshape(shape) <= cutoff
            self.dealias_mask = mask
        else:
            self.dealias_mask = None
        self._axes = tuple(range(-g.d, 0))
        self._shape = g.shape

    def to_hat(self, phi: np.ndarray) -> np.ndarray:
        return sfft.rfftn(phi, axes=self._axes)

    def from_hat(self, h: np.ndarray) -> np.ndarray:
        return sfft.irfftn(h, s=self._shape, axes=self._axes)

    def nonlin_hat(self, phi_hat: np.ndarray) -> np.ndarray:
        grad_sq = 0.0
        for ik in self.ik:
            dphi = self.from_hat(ik * phi_hat)
            grad_sq = grad_sq + dphi * dphi
        out = -self.nl_coef * sfft.rfftn(grad_sq, axes=self._axes)
        if self.dealias_mask is not None:
            out *= self.dealias_mask
        return out

    def step_hat(self, phi_hat: np.ndarray) -> np.ndarray:
        h, E, E2 = self.dt, self.E, self.E2
        a = self.nonlin_hat(phi_hat)
        b = self.nonlin_hat(E * (phi_hat + (h / 2.0) * a))
        c = self.nonlin_hat(E * phi_hat + (h / 2.0) * b)
        d = self.nonlin_hat(E2 * phi_hat + h * E * c)
        return E2 * phi_hat + (h / 6.0) * (E2 * a + 2.0 * E * (b + c) + d)


_OP_CACHE: dict[tuple, _Operators] = {}


def _operators(cfg: SolverConfig) -> _Operators:
    key = (cfg.eq, cfg.beta, cfg.grid.d, cfg.grid.p, cfg.dt_internal, cfg.dealias)
    op = _OP_CACHE.get(key)
    if op is None:
        op = _OP_CACHE[key] = _Operators(cfg)
    return op


def nonlinear_rhs(f: Field, cfg: SolverConfig) -> Field:
    """Nonlinear tendency N(phi) = -coef * |grad phi|^2 in physical space."""
    op = _operators(cfg)
    out = np.stack([op.from_hat(op.nonlin_hat(op.to_hat(ch))) for ch in f.values])
    return Field(f.grid, out)


def step(state: Field, cfg: SolverConfig) -> Field:
    """Advance one dt_internal with the integrating-factor RK4 scheme."""
    if state.grid != cfg.grid:
        raise ConfigurationError("state grid does not match solver configuration")
    op = _operators(cfg)
    out = np.stack([op.from_hat(op.step_hat(op.to_hat(ch))) for ch in state.values])
    if not np.isfinite(out).all():
        raise BlowUpError(step_index=0)
    return Field(state.grid, out)


def sample_initial_condition(spec: InitialConditionSpec, grid: Grid) -> Field:
    """Draw a random initial front per the spec; deterministic given the seed."""
    rng = np.random.default_rng(spec.seed)
    noise = rng.uniform(spec.lo, spec.hi, size=grid.shape)
    if spec.kind == "uniform_pointwise":
        return Field(grid, noise[None])
    # lowwave: truncate the noise spectrum, then rescale back into [lo, hi]
    axes = tuple(range(-grid.d, 0))
    h = sfft.rfftn(noise, axes=axes)
    h[grid.wavenumber_norm() > spec.kappa_cutoff] = 0.0
    smooth = sfft.irfftn(h, s=grid.shape, axes=axes)
    span = smooth.max() - smooth.min()
    if span > 0:
        smooth = spec.lo + (smooth - smooth.min()) * (spec.hi - spec.lo) / span
    return Field(grid, smooth[None])


def _sequence_seed(master_seed: int, index: int) -> int:
    return int(np.random.SeedSequence([master_seed, index]).generate_state(1, np.uint64)[0])


def _run_sequence(args) -> np.ndarray:
    cfg, ic_spec, seq_seed, n_steps, seq_index = args
    op = _operators(cfg)
    phi0 = sample_initial_condition(replace(ic_spec, seed=seq_seed), cfg.grid)
    out = np.empty((n_steps + 1, *cfg.grid.shape), dtype=np.float64)
    out[0] = phi0.values[0]
    h = op.to_hat(out[0])
    k = cfg.substeps_per_output
    for t in range(1, n_steps + 1):
        for _ in range(k):
            h = op.step_hat(h)
        out[t] = op.from_hat(h)
        if not np.isfinite(out[t]).all():
            raise BlowUpError(step_index=t, sequence_index=seq_index)
    return out


def generate_trajectories(
    cfg: SolverConfig,
    ic_spec: InitialConditionSpec,
    n_sequences: int,
    n_steps: int,
    workers: int = 1,
) -> TrajectoryDataset:
    """Generate independent solution sequences; deterministic given ic_spec.seed.

    Sequences are independent (per-sequence seeds derived from the master seed)
    and assembled in sequence order regardless of completion order.
    """
    if n_sequences < 1 or n_steps < 0:
        raise ConfigurationError("need n_sequences >= 1 and n_steps >= 0")
    seeds = [_sequence_seed(ic_spec.seed, i) for i in range(n_sequences)]
    jobs = [(cfg, ic_spec, seeds[i], n_steps, i) for i in range(n_sequences)]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as ex:
            sequences = list(ex.map(_run_sequence, jobs))
    else:
        sequences = [_run_sequence(j) for j in jobs]
    data = np.stack(sequences)
    return TrajectoryDataset(
        config=cfg, ic_spec=ic_spec, data=data, seeds=seeds, master_seed=ic_spec.seed
    )
