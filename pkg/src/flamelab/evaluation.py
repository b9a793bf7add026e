"""Recurrent rollout of trained operators and the long-horizon diagnostics:
relative-error curves, normalized front length, autocorrelation.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.fft as sfft

from .models import Model
from .params import ParamVector
from .training import relative_l2

__all__ = [
    "Rollout",
    "MetricSeries",
    "rollout",
    "solver_rollout",
    "error_curve",
    "ensemble_average",
    "front_length",
    "front_length_series",
    "autocorrelation",
    "radial_autocorrelation",
]

DIVERGENCE_THRESHOLD = 1.0e6


@dataclass
class Rollout:
    kind: str
    states: np.ndarray           # (n_recorded + 1, *grid), states[0] is the input
    diverged: bool = False
    divergence_step: int | None = None


@dataclass
class MetricSeries:
    kind: str
    axis: np.ndarray
    values: np.ndarray
    n_ensemble: int = 1


def rollout(model: Model, params: ParamVector, phi0: np.ndarray, total_steps: int) -> Rollout:
    """Roll the operator out for total_steps outputs at training spacing.

    Multistep models emit n steps per call and chain on the n-th output;
    single-step models chain every step. Divergence (|phi| beyond 1e6) is
    recorded, not raised, and truncates the rollout.
    """
    grid = model.grid_shape
    phi0 = np.asarray(phi0, dtype=np.float64).reshape(grid)
    states = np.empty((total_steps + 1, *grid))
    states[0] = phi0
    done = 0
    cur = phi0
    while done < total_steps:
        pred = model.apply(params, cur[None, None].astype(np.float64))[0]  # (n, *grid)
        take = min(model.n, total_steps - done)
        states[done + 1: done + 1 + take] = pred[:take]
        bad = ~np.isfinite(pred[:take]) | (np.abs(pred[:take]) > DIVERGENCE_THRESHOLD)
        if bad.any():
            first = done + 1 + int(np.argwhere(bad.reshape(take, -1).any(axis=1))[0][0])
            return Rollout(model.kind, states[:first + 1], True, first)
        cur = pred[model.n - 1] if take == model.n else pred[take - 1]
        done += take
    return Rollout(model.kind, states)


def solver_rollout(cfg, phi0: np.ndarray, total_steps: int) -> Rollout:
    """Reference integrator wrapped in the Rollout interface."""
    from .solver import _operators

    op = _operators(cfg)
    states = np.empty((total_steps + 1, *cfg.grid.shape))
    states[0] = np.asarray(phi0, dtype=np.float64).reshape(cfg.grid.shape)
    h = op.to_hat(states[0])
    for t in range(1, total_steps + 1):
        for _ in range(cfg.substeps_per_output):
            h = op.step_hat(h)
        states[t] = op.from_hat(h)
        if not np.isfinite(states[t]).all():
            return Rollout("solver", states[:t + 1], True, t)
    return Rollout("solver", states)


def error_curve(pred: Rollout, ref: np.ndarray, dt: float = 1.0) -> MetricSeries:
    """Per-time relative L2 error between a rollout and a reference trajectory."""
    T = pred.states.shape[0]
    if ref.shape[0] < T:
        raise ValueError(f"reference has {ref.shape[0]} states, rollout has {T}")
    vals = np.array([relative_l2(pred.states[t], ref[t]) for t in range(T)])
    return MetricSeries("relative_l2", np.arange(T) * dt, vals)


def ensemble_average(series: list[MetricSeries]) -> MetricSeries:
    if not series:
        raise ValueError("empty ensemble")
    n = min(s.values.shape[0] for s in series)
    vals = np.mean([s.values[:n] for s in series], axis=0)
    return MetricSeries(series[0].kind, series[0].axis[:n], vals,
                        n_ensemble=sum(s.n_ensemble for s in series))


def front_length(phi: np.ndarray, d: int | None = None) -> float:
    """Normalized front length (1/|D|) integral sqrt(1 + |grad phi|^2); 1 when planar."""
    phi = np.asarray(phi, dtype=np.float64)
    if d is None:
        d = phi.ndim
    gsq = _grad_sq_nd(phi, d)
    return float(np.sqrt(1.0 + gsq).mean())


def _grad_sq_nd(phi: np.ndarray, d: int) -> np.ndarray:
    axes = tuple(range(-d, 0))
    shape = phi.shape[-d:]
    h = sfft.rfftn(phi, axes=axes)
    out = 0.0
    for ax in range(d):
        p = shape[ax]
        if ax == d - 1:
            ik = 1j * np.arange(shape[-1] // 2 + 1, dtype=np.float64)
            ik[-1] = 0.0
        else:
            ik = 1j * np.fft.fftfreq(p, 1.0 / p).astype(np.float64)
            ik[p // 2] = 0.0
        kshape = [1] * phi.ndim
        kshape[-d + ax] = ik.shape[0]
        g = sfft.irfftn(h * ik.reshape(kshape), s=shape, axes=axes)
        out = out + g * g
    return out


def front_length_series(states: np.ndarray, d: int, dt: float = 1.0) -> MetricSeries:
    gsq = _grad_sq_nd(np.asarray(states, dtype=np.float64), d)
    red = tuple(range(-d, 0))
    vals = np.sqrt(1.0 + gsq).mean(axis=red)
    return MetricSeries("front_length", np.arange(states.shape[0]) * dt, vals)


def autocorrelation(snapshots: np.ndarray, subtract_mean: bool = True) -> MetricSeries:
    """Ensemble-averaged spatial autocorrelation R(r) of 1D snapshots.

    Each snapshot is mean-subtracted (the zero mode drifts without bound, which
    would pin R at 1 for every lag), correlated circularly with itself via FFT,
    normalized by its own variance, then averaged across the ensemble. Lags run
    over the full circle r = m * (2 pi / p).
    """
    snaps = np.atleast_2d(np.asarray(snapshots, dtype=np.float64))
    if snaps.size == 0:
        raise ValueError("empty ensemble")
    if subtract_mean:
        snaps = snaps - snaps.mean(axis=-1, keepdims=True)
    p = snaps.shape[-1]
    F = sfft.rfft(snaps, axis=-1)
    corr = sfft.irfft(F * np.conj(F), n=p, axis=-1)  # circular, lag-indexed
    denom = corr[..., :1].copy()
    denom[denom == 0] = 1.0
    R = (corr / denom).mean(axis=0)
    R[0] = 1.0
    return MetricSeries("autocorrelation", np.arange(p) * (2 * np.pi / p), R,
                        n_ensemble=snaps.shape[0])


def radial_autocorrelation(snapshots: np.ndarray, subtract_mean: bool = True) -> MetricSeries:
    """Direction-independent R(|r|) for an ensemble of 2D snapshots, shell-binned."""
    snaps = np.asarray(snapshots, dtype=np.float64)
    if snaps.ndim == 2:
        snaps = snaps[None]
    if snaps.size == 0:
        raise ValueError("empty ensemble")
    if subtract_mean:
        snaps = snaps - snaps.mean(axis=(-2, -1), keepdims=True)
    p = snaps.shape[-1]
    F = sfft.rfftn(snaps, axes=(-2, -1))
    corr = sfft.irfftn(F * np.conj(F), s=snaps.shape[-2:], axes=(-2, -1))
    denom = corr[..., :1, :1].copy()
    denom[denom == 0] = 1.0
    Rmap = (corr / denom).mean(axis=0)
    m = np.fft.fftfreq(p, 1.0 / p)
    dist = np.sqrt(m[:, None] ** 2 + m[None, :] ** 2)
    bins = np.rint(dist).astype(int)
    nbins = bins.max() + 1
    sums = np.bincount(bins.ravel(), weights=Rmap.ravel(), minlength=nbins)
    counts = np.bincount(bins.ravel(), minlength=nbins)
    R = sums / counts
    R[0] = 1.0
    return MetricSeries("radial_autocorrelation", np.arange(nbins) * (2 * np.pi / p), R,
                        n_ensemble=snaps.shape[0])
