"""Binary artifact formats, little-endian pinned for cross-platform identity.

Dataset file: magic "SIVA", format version u32, then the header fields
(eq, beta, d, p, channels, dt, n_sequences, n_steps, seed) in fixed order,
followed by the float64 payload (sequence-major, time-major, row-major grid).
A sidecar JSON manifest at <path>.json duplicates the header readably and
carries the generation metadata the binary header does not pin.

Checkpoint file: magic "SIVACKPT", u64 header length, JSON header (model kind,
config, registry layout, training step, precision), float64 parameter payload.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .errors import ConfigurationError
from .params import ParamRegistry, ParamVector
from .solver import InitialConditionSpec, SolverConfig, TrajectoryDataset
from .spectral import Grid

__all__ = [
    "write_dataset",
    "read_dataset",
    "write_checkpoint",
    "read_checkpoint",
]

DATASET_MAGIC = b"SIVA"
DATASET_VERSION = 1
_HEADER_FMT = "<4sIIdIIIdIIQ"  # magic, version, eq, beta, d, p, channels, dt, nseq, nsteps, seed
CHECKPOINT_MAGIC = b"SIVACKPT"

_EQ_CODE = {"MS": 0, "KS": 1}
_EQ_NAME = {v: k for k, v in _EQ_CODE.items()}


def write_dataset(path, ds: TrajectoryDataset) -> None:
    path = Path(path)
    cfg = ds.config
    header = struct.pack(
        _HEADER_FMT, DATASET_MAGIC, DATASET_VERSION, _EQ_CODE[cfg.eq], cfg.beta,
        cfg.grid.d, cfg.grid.p, 1, cfg.output_interval,
        ds.n_sequences, ds.n_steps, ds.master_seed & 0xFFFFFFFFFFFFFFFF,
    )
    with open(path, "wb") as f:
        f.write(header)
        f.write(np.ascontiguousarray(ds.data, dtype="<f8").tobytes())
    sidecar = {
        "magic": DATASET_MAGIC.decode(),
        "version": DATASET_VERSION,
        "eq": cfg.eq,
        "beta": cfg.beta,
        "d": cfg.grid.d,
        "p": cfg.grid.p,
        "channels": 1,
        "dt": cfg.output_interval,
        "n_sequences": ds.n_sequences,
        "n_steps": ds.n_steps,
        "seed": ds.master_seed,
        "dt_internal": cfg.dt_internal,
        "dealias": cfg.dealias,
        "initial_condition": {
            "kind": ds.ic_spec.kind, "lo": ds.ic_spec.lo, "hi": ds.ic_spec.hi,
            "kappa_cutoff": ds.ic_spec.kappa_cutoff, "seed": ds.ic_spec.seed,
        },
        "sequence_seeds": [int(s) for s in ds.seeds],
        "created": ds.created,
    }
    with open(f"{path}.json", "w") as f:
        json.dump(sidecar, f, indent=2, sort_keys=True)
        f.write("\n")


def read_dataset(path) -> TrajectoryDataset:
    path = Path(path)
    hsize = struct.calcsize(_HEADER_FMT)
    with open(path, "rb") as f:
        raw = f.read(hsize)
        if len(raw) < hsize:
            raise ConfigurationError(f"{path}: truncated dataset header")
        magic, version, eq, beta, d, p, channels, dt, nseq, nsteps, seed = \
            struct.unpack(_HEADER_FMT, raw)
        if magic != DATASET_MAGIC:
            raise ConfigurationError(f"{path}: bad magic {magic!r}")
        if version != DATASET_VERSION:
            raise ConfigurationError(f"{path}: unsupported version {version}")
        count = nseq * (nsteps + 1) * p**d * channels
        data = np.fromfile(f, dtype="<f8", count=count)
    if data.size != count:
        raise ConfigurationError(f"{path}: payload truncated ({data.size} of {count} values)")
    data = data.astype(np.float64).reshape(nseq, nsteps + 1, *((p,) * d))

    sidecar_path = Path(f"{path}.json")
    meta = {}
    if sidecar_path.exists():
        meta = json.loads(sidecar_path.read_text())
    dt_internal = meta.get("dt_internal", dt / 5.0)
    cfg = SolverConfig(eq=_EQ_NAME[eq], beta=beta, grid=Grid(d, p),
                       dt_internal=dt_internal, output_interval=dt,
                       dealias=meta.get("dealias", False))
    ic = meta.get("initial_condition", {})
    ic_spec = InitialConditionSpec(
        kind=ic.get("kind", "uniform_pointwise"), lo=ic.get("lo", 0.0),
        hi=ic.get("hi", 0.03), kappa_cutoff=ic.get("kappa_cutoff", 8),
        seed=ic.get("seed", int(seed)),
    )
    return TrajectoryDataset(
        config=cfg, ic_spec=ic_spec, data=data,
        seeds=[int(s) for s in meta.get("sequence_seeds", range(nseq))],
        master_seed=int(seed), created=meta.get("created", ""),
    )


def write_checkpoint(path, kind: str, config: dict, params: ParamVector,
                     train_step: int = 0, extra: dict | None = None) -> None:
    header = {
        "kind": kind,
        "config": config,
        "registry": params.registry.layout(),
        "train_step": train_step,
        "precision": "single" if params.dtype == np.float32 else "double",
    }
    if extra:
        header["extra"] = extra
    blob = json.dumps(header, sort_keys=True).encode()
    with open(path, "wb") as f:
        f.write(CHECKPOINT_MAGIC)
        f.write(struct.pack("<Q", len(blob)))
        f.write(blob)
        f.write(params.data.astype("<f8").tobytes())


def read_checkpoint(path):
    """Returns (kind, config, params, train_step, extra)."""
    with open(path, "rb") as f:
        if f.read(len(CHECKPOINT_MAGIC)) != CHECKPOINT_MAGIC:
            raise ConfigurationError(f"{path}: not a checkpoint file")
        (hlen,) = struct.unpack("<Q", f.read(8))
        header = json.loads(f.read(hlen).decode())
        data = np.fromfile(f, dtype="<f8")
    registry = ParamRegistry.from_layout(header["registry"])
    if data.size != registry.total:
        raise ConfigurationError(
            f"{path}: parameter payload {data.size} != registry total {registry.total}"
        )
    dtype = np.float32 if header.get("precision") == "single" else np.float64
    params = ParamVector(registry, data.astype(dtype))
    return (header["kind"], header["config"], params,
            header.get("train_step", 0), header.get("extra", {}))
