"""Flat parameter storage with a named registry, shared by all architectures.

Every model owns one real-valued flat vector; complex tensors (the spectral
mixing weights) occupy interleaved real/imag slots so the optimizer only ever
sees reals. Views returned by `view` alias the flat buffer, so in-place
optimizer updates are visible to the next forward pass.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

__all__ = ["ParamEntry", "ParamRegistry", "ParamVector"]


@dataclass(frozen=True)
class ParamEntry:
    name: str
    shape: tuple[int, ...]
    is_complex: bool
    init: str          # "fanin" | "spectral" | "zeros" | "ones"
    init_scale: float  # fan_in for "fanin", direct scale for "spectral"
    offset: int

    @property
    def n_reals(self) -> int:
        n = int(np.prod(self.shape))
        return 2 * n if self.is_complex else n


class ParamRegistry:
    """Ordered name -> (shape, storage slice) map for one architecture."""

    def __init__(self):
        self.entries: list[ParamEntry] = []
        self._by_name: dict[str, ParamEntry] = {}
        self.total = 0

    def register(self, name, shape, is_complex=False, init="fanin", init_scale=1.0):
        if name in self._by_name:
            raise ValueError(f"duplicate parameter name {name!r}")
        if is_complex and self.total % 2:
            self.total += 1  # keep complex views element-aligned in the flat buffer
        e = ParamEntry(name, tuple(shape), is_complex, init, init_scale, self.total)
        self.entries.append(e)
        self._by_name[name] = e
        self.total += e.n_reals
        return e

    def __contains__(self, name):
        return name in self._by_name

    def entry(self, name) -> ParamEntry:
        return self._by_name[name]

    def layout(self) -> list[dict]:
        return [
            {
                "name": e.name,
                "shape": list(e.shape),
                "complex": e.is_complex,
                "init": e.init,
                "init_scale": e.init_scale,
                "offset": e.offset,
            }
            for e in self.entries
        ]

    @classmethod
    def from_layout(cls, layout: list[dict]) -> "ParamRegistry":
        reg = cls()
        for d in layout:
            e = reg.register(d["name"], tuple(d["shape"]), d["complex"], d["init"], d["init_scale"])
            if e.offset != d["offset"]:
                raise ValueError(f"layout offset mismatch for {d['name']!r}")
        return reg


class ParamVector:
    """Registry plus the flat real parameter buffer."""

    def __init__(self, registry: ParamRegistry, data: np.ndarray):
        if data.shape != (registry.total,):
            raise ValueError(f"expected flat length {registry.total}, got {data.shape}")
        self.registry = registry
        self.data = data

    @property
    def dtype(self):
        return self.data.dtype

    def view(self, name: str) -> np.ndarray:
        """Shaped (complex-typed where declared) view aliasing the flat buffer."""
        e = self.registry.entry(name)
        flat = self.data[e.offset:e.offset + e.n_reals]
        if e.is_complex:
            cdtype = np.complex64 if self.data.dtype == np.float32 else np.complex128
            return flat.view(cdtype).reshape(e.shape)
        return flat.reshape(e.shape)

    def copy(self) -> "ParamVector":
        return ParamVector(self.registry, self.data.copy())

    def astype(self, dtype) -> "ParamVector":
        return ParamVector(self.registry, self.data.astype(dtype))

    @classmethod
    def zeros(cls, registry: ParamRegistry, dtype=np.float64) -> "ParamVector":
        return cls(registry, np.zeros(registry.total, dtype=dtype))

    @classmethod
    def initialize(cls, registry: ParamRegistry, seed: int, dtype=np.float64) -> "ParamVector":
        """Seeded init: symmetric uniform, scale 1/sqrt(fan_in) for pointwise and
        convolutional weights and a direct 1/d_z-style scale for spectral tensors."""
        rng = np.random.default_rng(seed)
        pv = cls.zeros(registry, dtype)
        for e in registry.entries:
            tgt = pv.data[e.offset:e.offset + e.n_reals]
            if e.init == "zeros":
                continue
            if e.init == "ones":
                tgt[:] = 1.0
            elif e.init == "fanin":
                bound = 1.0 / math.sqrt(e.init_scale)
                tgt[:] = rng.uniform(-bound, bound, size=e.n_reals)
            elif e.init == "spectral":
                tgt[:] = rng.uniform(-e.init_scale, e.init_scale, size=e.n_reals)
            else:
                raise ValueError(f"unknown init kind {e.init!r}")
        return pv
