"""Mass distributions on regular 2-D grids, integer quantization and ground costs.

Pixels are indexed row-major: index ``k = row * width + col`` and the pixel
sits at location ``(col * spacing, row * spacing)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from mkflow.errors import InvalidArgument

DEFAULT_RESOLUTION = 10**6


@dataclass(frozen=True)
class Grid:
    width: int
    height: int
    spacing: float = 1.0

    def __post_init__(self):
        if int(self.width) != self.width or self.width < 1:
            raise InvalidArgument(f"grid width must be a positive integer, got {self.width!r}")
        if int(self.height) != self.height or self.height < 1:
            raise InvalidArgument(f"grid height must be a positive integer, got {self.height!r}")
        if not (np.isfinite(self.spacing) and self.spacing > 0):
            raise InvalidArgument(f"grid spacing must be positive, got {self.spacing!r}")

    @property
    def size(self) -> int:
        return self.width * self.height

    @property
    def shape(self) -> tuple[int, int]:
        """(rows, cols), the numpy shape of an image on this grid."""
        return (self.height, self.width)

    def coords(self, index) -> tuple[np.ndarray, np.ndarray]:
        """Integer (col, row) pixel coordinates of one or more flat indices."""
        index = np.asarray(index)
        return index % self.width, index // self.width

    @cached_property
    def _cols_rows(self) -> tuple[np.ndarray, np.ndarray]:
        return self.coords(np.arange(self.size))

    def locations(self) -> np.ndarray:
        """(K, 2) array of pixel locations in row-major order."""
        col, row = self.coords(np.arange(self.size))
        return np.stack([col, row], axis=1) * float(self.spacing)


def _readonly(a: np.ndarray) -> np.ndarray:
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class MassDistribution:
    """Nonnegative mass on the pixels of ``grid`` (flat, row-major)."""

    grid: Grid
    mass: np.ndarray = field(repr=False)

    def __post_init__(self):
        mass = np.array(self.mass, dtype=np.float64).reshape(-1)
        if mass.shape[0] != self.grid.size:
            raise InvalidArgument(
                f"mass has {mass.shape[0]} entries but the grid has {self.grid.size} pixels"
            )
        if not np.all(np.isfinite(mass)):
            raise InvalidArgument("mass entries must be finite")
        if np.any(mass < 0):
            raise InvalidArgument("mass entries must be nonnegative")
        object.__setattr__(self, "mass", _readonly(mass))

    @classmethod
    def from_array(cls, values, spacing: float = 1.0) -> "MassDistribution":
        """Build from a 2-D (rows, cols) array."""
        values = np.asarray(values, dtype=np.float64)
        if values.ndim != 2:
            raise InvalidArgument(f"expected a 2-D array, got shape {values.shape}")
        rows, cols = values.shape
        return cls(Grid(cols, rows, spacing), values.reshape(-1))

    @classmethod
    def delta(cls, grid: Grid, index: int, amount: float = 1.0) -> "MassDistribution":
        mass = np.zeros(grid.size)
        mass[index] = amount
        return cls(grid, mass)

    def as_array(self) -> np.ndarray:
        return self.mass.reshape(self.grid.shape)

    @property
    def total_mass(self) -> float:
        return total_mass(self)

    def scaled(self, factor: float) -> "MassDistribution":
        return MassDistribution(self.grid, self.mass * factor)


@dataclass(frozen=True, eq=False)
class QuantizedDistribution:
    """Mass expressed as a nonnegative integer count of ``unit_size`` units."""

    grid: Grid
    units: np.ndarray = field(repr=False)
    unit_size: float

    def __post_init__(self):
        units = np.array(self.units, dtype=np.int64).reshape(-1)
        if units.shape[0] != self.grid.size:
            raise InvalidArgument("units length does not match the grid")
        if np.any(units < 0):
            raise InvalidArgument("units must be nonnegative")
        if not (np.isfinite(self.unit_size) and self.unit_size > 0):
            raise InvalidArgument("unit_size must be positive")
        object.__setattr__(self, "units", _readonly(units))

    @property
    def total_units(self) -> int:
        return int(self.units.sum())

    def to_distribution(self) -> MassDistribution:
        return MassDistribution(self.grid, self.units * self.unit_size)


def total_mass(f: MassDistribution) -> float:
    # fsum keeps the total independent of summation order
    return _fsum(f.mass)


def _fsum(values: np.ndarray) -> float:
    return math.fsum(values.tolist())


def _largest_remainder(scaled: np.ndarray, target: int) -> np.ndarray:
    """Round ``scaled`` to integers summing to ``target``; ties go to the lower index."""
    base = np.floor(scaled)
    units = base.astype(np.int64)
    missing = target - int(units.sum())
    if missing > 0:
        remainder = scaled - base
        order = np.argsort(-remainder, kind="stable")
        units[order[:missing]] += 1
    elif missing < 0:
        # only reachable through floating noise in scaled; take from the smallest remainders
        remainder = scaled - base
        order = np.argsort(remainder, kind="stable")
        taken = 0
        for idx in order:
            if taken == -missing:
                break
            if units[idx] > 0:
                units[idx] -= 1
                taken += 1
    return units


def quantize(f: MassDistribution, resolution: int = DEFAULT_RESOLUTION) -> QuantizedDistribution:
    """Split ``f`` into exactly ``resolution`` units of size ``total_mass / resolution``.

    Largest-remainder rounding keeps the unit total exact, so every pixel is
    off by less than one unit. An all-zero input maps to all-zero units with
    unit size 1.
    """
    if int(resolution) != resolution or resolution < 1:
        raise InvalidArgument(f"resolution must be a positive integer, got {resolution!r}")
    total = total_mass(f)
    if total == 0:
        return QuantizedDistribution(f.grid, np.zeros(f.grid.size, dtype=np.int64), 1.0)
    unit = total / resolution
    return QuantizedDistribution(f.grid, _largest_remainder(f.mass / unit, int(resolution)), unit)


def quantize_with_unit(f: MassDistribution, unit_size: float,
                       target: int | None = None) -> QuantizedDistribution:
    """Quantize ``f`` onto a caller-chosen unit.

    The unit total is ``target`` when given, else round(total / unit_size).
    """
    scaled = f.mass / unit_size
    if target is None:
        target = int(round(_fsum(scaled))) if scaled.size else 0
    return QuantizedDistribution(f.grid, _largest_remainder(scaled, target), unit_size)


def quantize_jointly(
    f0: MassDistribution, f1: MassDistribution, resolution: int = DEFAULT_RESOLUTION
) -> tuple[QuantizedDistribution, QuantizedDistribution]:
    """Quantize two distributions on one shared unit, ``(|f0| + |f1|) / (2 resolution)``."""
    if int(resolution) != resolution or resolution < 1:
        raise InvalidArgument(f"resolution must be a positive integer, got {resolution!r}")
    combined = total_mass(f0) + total_mass(f1)
    unit = combined / (2 * resolution) if combined > 0 else 1.0
    return quantize_with_unit(f0, unit), quantize_with_unit(f1, unit)


@dataclass(frozen=True)
class GroundCost:
    """Cost ``d(x_i, x_j) ** p`` between pixels of two grids, Euclidean ``d``."""

    grid0: Grid
    grid1: Grid
    p: float = 1.0

    def __post_init__(self):
        if not (np.isfinite(self.p) and self.p > 0):
            raise InvalidArgument(f"cost exponent p must be positive, got {self.p!r}")

    @classmethod
    def on(cls, grid: Grid, p: float = 1.0) -> "GroundCost":
        return cls(grid, grid, p)

    def value(self, i: int, j: int) -> float:
        return ground_cost_value(self, i, j)

    @cached_property
    def _offset_table(self) -> np.ndarray:
        """Cost indexed by (|row offset|, |col offset|) on a shared grid, O(K) entries."""
        g = self.grid0
        dy, dx = np.meshgrid(np.arange(g.height), np.arange(g.width), indexing="ij")
        d = np.hypot(dx * g.spacing, dy * g.spacing)
        return d if self.p == 1 else d**self.p

    def costs(self, i, j) -> np.ndarray:
        """Vectorised cost between pixel indices ``i`` (grid0) and ``j`` (grid1)."""
        i = np.asarray(i)
        j = np.asarray(j)
        if self.grid0 == self.grid1:
            cols, rows = self.grid0._cols_rows
            return self._offset_table[np.abs(rows[i] - rows[j]), np.abs(cols[i] - cols[j])]
        c0, r0 = self.grid0.coords(i)
        c1, r1 = self.grid1.coords(j)
        d = np.hypot(c0 * self.grid0.spacing - c1 * self.grid1.spacing,
                     r0 * self.grid0.spacing - r1 * self.grid1.spacing)
        return d if self.p == 1 else d**self.p

    def cost_block(self, sources: np.ndarray, sinks: np.ndarray) -> np.ndarray:
        """(len(sources), len(sinks)) array of costs."""
        return self.costs(np.asarray(sources)[:, None], np.asarray(sinks)[None, :])

    def matrix(self) -> np.ndarray:
        """Dense K0 x K1 cost matrix. Only for small grids."""
        i, j = np.meshgrid(np.arange(self.grid0.size), np.arange(self.grid1.size), indexing="ij")
        return self.costs(i, j)

    def max_cost(self) -> float:
        # extreme pairs sit at grid corners
        corners0 = _corner_indices(self.grid0)
        corners1 = _corner_indices(self.grid1)
        i, j = np.meshgrid(corners0, corners1, indexing="ij")
        return float(self.costs(i, j).max())


def _corner_indices(grid: Grid) -> np.ndarray:
    w, h = grid.width, grid.height
    return np.unique([0, w - 1, (h - 1) * w, h * w - 1])


def ground_cost_value(c: GroundCost, i: int, j: int) -> float:
    if not (0 <= i < c.grid0.size):
        raise InvalidArgument(f"source index {i} out of range for {c.grid0.size} pixels")
    if not (0 <= j < c.grid1.size):
        raise InvalidArgument(f"target index {j} out of range for {c.grid1.size} pixels")
    return float(c.costs(i, j))
