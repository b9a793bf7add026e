"""Training loop: 1-to-n objectives, Adam with decoupled weight decay,
step-decay schedule, global-norm gradient clipping.

Multistep models are supervised directly on their n outputs; single-step
baselines are applied recurrently n times with gradients flowing through the
whole recurrence. Both objectives are the arithmetic mean over steps and
windows of the per-step relative L2 error ||a - b|| / ||b||.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .errors import ConfigurationError
from .fno import Binder
from .models import Model
from .params import ParamVector

__all__ = [
    "TrainConfig",
    "OptimizerState",
    "TrainResult",
    "relative_l2",
    "loss_multistep",
    "loss_recurrent",
    "adam_step",
    "lr_at_epoch",
    "clip_gradients",
    "train",
    "write_history_csv",
    "read_history_csv",
]


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 200
    batch_size: int = 128
    learning_rate: float = 0.0025
    weight_decay: float = 0.0001
    sched_step: int = 100
    sched_gamma: float = 0.5
    clip_max_norm: float = 30.0
    n: int = 20
    recurrent_1_to_n: bool = False
    seed: int = 0
    precision: str = "single"
    val_fraction: float = 0.1

    def __post_init__(self):
        if min(self.epochs, self.batch_size, self.n, self.sched_step) < 1:
            raise ConfigurationError("epochs, batch_size, n and sched_step must be positive")
        if self.learning_rate <= 0 or self.clip_max_norm <= 0 or self.sched_gamma <= 0:
            raise ConfigurationError("learning_rate, clip_max_norm, sched_gamma must be positive")
        if self.weight_decay < 0 or not (0.0 <= self.val_fraction < 1.0):
            raise ConfigurationError("bad weight_decay or val_fraction")
        if self.precision not in ("single", "double"):
            raise ConfigurationError("precision must be 'single' or 'double'")


@dataclass
class OptimizerState:
    m: np.ndarray
    v: np.ndarray
    t: int = 0

    @classmethod
    def zeros(cls, n: int, dtype=np.float64) -> "OptimizerState":
        return cls(np.zeros(n, dtype), np.zeros(n, dtype), 0)


@dataclass
class TrainResult:
    history: list[dict]
    final_params: ParamVector
    best_params: ParamVector
    best_epoch: int
    best_valid: float
    diverged: bool = False
    n_train_windows: int = 0
    n_valid_windows: int = 0


def relative_l2(a: np.ndarray, b: np.ndarray) -> float:
    """||a - b||_2 / ||b||_2 over all values."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch {a.shape} vs {b.shape}")
    bnorm = np.linalg.norm(b.ravel())
    if bnorm == 0:
        raise ValueError("relative_l2: zero-norm target")
    return float(np.linalg.norm((a - b).ravel()) / bnorm)


def _stack_targets(targets: np.ndarray) -> np.ndarray:
    """(B, n, *sp) -> (n*B, 1, *sp), step-major."""
    B, n = targets.shape[:2]
    return targets.swapaxes(0, 1).reshape(n * B, 1, *targets.shape[2:])


def loss_multistep(tape: ad.Tape, model: Model, params: ParamVector,
                   inputs: np.ndarray, targets: np.ndarray):
    """Direct n-output objective: mean per-step relative error."""
    out, bind = model.forward(tape, params, inputs)
    return ad.relative_l2_mean(out, _stack_targets(targets)), bind


def loss_recurrent(tape: ad.Tape, model: Model, params: ParamVector,
                   inputs: np.ndarray, targets: np.ndarray, n: int):
    """Recurrent objective for single-step models; gradients flow through all
    n applications."""
    bind = Binder(tape, params)
    cur = tape.leaf(inputs)
    preds = []
    for _ in range(n):
        cur, _ = model.forward(tape, params, cur, bind=bind)
        preds.append(cur)
    stacked = ad.concat_batch(preds)
    return ad.relative_l2_mean(stacked, _stack_targets(targets)), bind


def lr_at_epoch(epoch: int, cfg: TrainConfig) -> float:
    return cfg.learning_rate * cfg.sched_gamma ** (epoch // cfg.sched_step)


def clip_gradients(grads: np.ndarray, max_norm: float = 30.0) -> np.ndarray:
    norm = float(np.linalg.norm(grads.astype(np.float64, copy=False)))
    if norm > max_norm:
        return grads * grads.dtype.type(max_norm / norm)
    return grads


def adam_step(params: ParamVector, grads: np.ndarray, state: OptimizerState,
              lr: float, cfg: TrainConfig,
              beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8) -> None:
    """Bias-corrected Adam with decoupled weight decay, in place."""
    if not np.isfinite(grads).all():
        raise FloatingPointError("adam_step: non-finite gradient")
    state.t += 1
    dt = params.data.dtype.type
    state.m += (1 - beta1) * (grads - state.m)
    state.v += (1 - beta2) * (grads * grads - state.v)
    mhat = state.m / (1 - beta1**state.t)
    vhat = state.v / (1 - beta2**state.t)
    if cfg.weight_decay:
        params.data *= dt(1.0 - lr * cfg.weight_decay)
    params.data -= dt(lr) * (mhat / (np.sqrt(vhat) + eps)).astype(params.data.dtype)


def enumerate_windows(n_sequences: int, n_time: int, n: int) -> list[tuple[int, int]]:
    """All admissible (sequence, offset) pairs for 1-to-n windows."""
    offsets = n_time - n  # data has n_time+1 snapshots; offset + n <= n_time
    if offsets < 0:
        raise ConfigurationError(f"sequences too short for horizon n={n}")
    return [(s, o) for s in range(n_sequences) for o in range(offsets + 1)]


def train(model: Model, data: np.ndarray, cfg: TrainConfig,
          progress=None, init_params: ParamVector | None = None) -> TrainResult:
    """Train on trajectory data shaped (n_sequences, n_time+1, *grid).

    Windows pair the snapshot at offset j with the n following snapshots; every
    admissible (sequence, offset) pair is visited exactly once per epoch in a
    seeded shuffled order. The last ceil(val_fraction * n_seq) sequences are
    held out for validation.
    """
    if model.is_multistep and cfg.n != model.n:
        raise ConfigurationError(f"supervision n={cfg.n} != model n={model.n}")
    if not model.is_multistep and not cfg.recurrent_1_to_n and cfg.n != 1:
        raise ConfigurationError("single-step model with n>1 requires recurrent_1_to_n")
    if data.shape[2:] != model.grid_shape:
        raise ConfigurationError(f"dataset grid {data.shape[2:]} != model grid {model.grid_shape}")

    dtype = np.float32 if cfg.precision == "single" else np.float64
    data = data.astype(dtype, copy=False)
    n_seq, n_time_plus = data.shape[:2]
    n_val = 0
    if cfg.val_fraction > 0 and n_seq > 1:
        n_val = min(n_seq - 1, max(1, int(round(cfg.val_fraction * n_seq))))
    train_windows = enumerate_windows(n_seq - n_val, n_time_plus - 1, cfg.n)
    val_windows = [(s + n_seq - n_val, o)
                   for s, o in enumerate_windows(n_val, n_time_plus - 1, cfg.n)] if n_val else []

    params = init_params.astype(dtype) if init_params is not None \
        else model.init_params(cfg.seed, dtype)
    opt = OptimizerState.zeros(params.data.size, dtype)
    best = params.copy()
    best_valid = np.inf
    best_epoch = -1
    history: list[dict] = []
    snapshot = params.copy()
    diverged = False

    def batch_loss(windows, need_grad):
        seqs = np.array([w[0] for w in windows])
        offs = np.array([w[1] for w in windows])
        inputs = data[seqs, offs][:, None]
        targets = data[seqs[:, None], offs[:, None] + 1 + np.arange(cfg.n)]
        tape = ad.Tape()
        if model.is_multistep:
            loss, bind = loss_multistep(tape, model, params, inputs, targets)
        elif cfg.recurrent_1_to_n:
            loss, bind = loss_recurrent(tape, model, params, inputs, targets, cfg.n)
        else:
            out, bind = model.forward(tape, params, inputs)
            loss = ad.relative_l2_mean(out, _stack_targets(targets))
        loss_value = float(loss.value)  # read before backward releases the tape
        if not need_grad:
            return loss_value, None
        return loss_value, bind.collect_grads(ad.backward(loss))

    for epoch in range(cfg.epochs):
        lr = lr_at_epoch(epoch, cfg)
        rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, epoch]))
        order = rng.permutation(len(train_windows))
        epoch_loss = 0.0
        try:
            for start in range(0, len(order), cfg.batch_size):
                batch = [train_windows[i] for i in order[start:start + cfg.batch_size]]
                loss, grads = batch_loss(batch, True)
                if not np.isfinite(loss):
                    raise FloatingPointError("non-finite training loss")
                epoch_loss += loss * len(batch)
                grads = clip_gradients(grads, cfg.clip_max_norm)
                adam_step(params, grads, opt, lr, cfg)
        except FloatingPointError:
            diverged = True
            params = snapshot  # retain the last good state
            break
        train_loss = epoch_loss / len(train_windows)
        valid_loss = np.nan
        if val_windows:
            tot = 0.0
            for start in range(0, len(val_windows), cfg.batch_size):
                batch = val_windows[start:start + cfg.batch_size]
                loss, _ = batch_loss(batch, False)
                tot += loss * len(batch)
            valid_loss = tot / len(val_windows)
            if valid_loss < best_valid:
                best_valid = valid_loss
                best_epoch = epoch
                best = params.copy()
        history.append({"epoch": epoch, "lr": lr,
                        "train_rel_l2": train_loss, "valid_rel_l2": valid_loss})
        snapshot = params.copy()
        if progress is not None:
            progress(history[-1])

    if not val_windows:
        best = params.copy()
        best_epoch = len(history) - 1
        best_valid = np.nan
    return TrainResult(history, params, best, best_epoch, best_valid, diverged,
                       len(train_windows), len(val_windows))


def write_history_csv(path, history: list[dict]) -> None:
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["epoch", "lr", "train_rel_l2", "valid_rel_l2"])
        for row in history:
            w.writerow([row["epoch"], f"{row['lr']:.17g}",
                        f"{row['train_rel_l2']:.17g}", f"{row['valid_rel_l2']:.17g}"])


def read_history_csv(path) -> list[dict]:
    out = []
    with open(path, newline="") as f:
        for row in csv.DictReader(f):
            out.append({"epoch": int(row["epoch"]), "lr": float(row["lr"]),
                        "train_rel_l2": float(row["train_rel_l2"]),
                        "valid_rel_l2": float(row["valid_rel_l2"])})
    return out
