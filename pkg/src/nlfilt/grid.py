"""Uniform grids, fields on them, and their CSV / binary formats."""

from __future__ import annotations

import io
import math
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Union

import numpy as np

MODES = ("periodic", "extended")
DEFAULT_MEMORY_BUDGET = 4096 * 4096  # largest dense weight matrix, in entries


class GridMismatch(ValueError):
    """Two objects that must share a grid do not."""


@dataclass(frozen=True)
class Grid:
    """Uniform grid on [-R_dom, R_dom]^N with spacing ``h``.

    Extended grids hold both endpoints (2R/h + 1 nodes per axis) and model
    the whole space with zero outside. Periodic grids identify the endpoints
    (2R/h nodes per axis, period 2R).
    """

    dim: int
    h: float
    R_dom: float
    mode: str = "extended"
    memory_budget: int = DEFAULT_MEMORY_BUDGET

    def __post_init__(self):
        if self.dim not in (1, 2):
            raise ValueError(f"dim must be 1 or 2, got {self.dim}")
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}, got {self.mode!r}")
        if not (self.h > 0 and self.R_dom > 0):
            raise ValueError("h and R_dom must be positive")
        ratio = self.R_dom / self.h
        if abs(ratio - round(ratio)) > 1e-9 * max(1.0, ratio):
            raise ValueError(f"R_dom/h = {ratio} is not an integer")
        if self.dim * self.n_axis > self.memory_budget:
            raise ValueError("grid exceeds the memory budget")

    @classmethod
    def periodic(cls, n: int, dim: int = 1, length: float = 2 * math.pi) -> "Grid":
        """``n`` nodes per axis on [-length/2, length/2)."""
        return cls(dim, length / n, 0.5 * length, "periodic")

    @property
    def half_nodes(self) -> int:
        return int(round(self.R_dom / self.h))

    @property
    def n_axis(self) -> int:
        return 2 * self.half_nodes + (1 if self.mode == "extended" else 0)

    @property
    def shape(self) -> tuple:
        return (self.n_axis,) * self.dim

    @property
    def size(self) -> int:
        return self.n_axis ** self.dim

    @property
    def period(self) -> float:
        return 2.0 * self.R_dom

    @property
    def cell(self) -> float:
        return self.h ** self.dim

    @property
    def axis(self) -> np.ndarray:
        return np.arange(self.n_axis) * self.h - self.R_dom

    @property
    def coords(self) -> np.ndarray:
        """Node coordinates, shape (size, dim), row-major over axes."""
        ax = self.axis
        if self.dim == 1:
            return ax[:, None].copy()
        X, Y = np.meshgrid(ax, ax, indexing="ij")
        return np.column_stack([X.ravel(), Y.ravel()])

    @property
    def radius(self) -> np.ndarray:
        return np.linalg.norm(self.coords, axis=1)

    def same_as(self, other: "Grid") -> bool:
        return (self.dim, self.mode, self.n_axis) == (other.dim, other.mode, other.n_axis) and \
            math.isclose(self.h, other.h, rel_tol=1e-12) and math.isclose(self.R_dom, other.R_dom, rel_tol=1e-12)

    def field(self, values, time: float = 0.0) -> "Field":
        return Field(self, np.asarray(values, dtype=float).reshape(self.size), time)

    def zeros(self, time: float = 0.0) -> "Field":
        return Field(self, np.zeros(self.size), time)

    def sample(self, fn, time: float = 0.0) -> "Field":
        """Field with values ``fn(x)`` (1D, x of shape (n,)) or ``fn(x, y)`` (2D)."""
        c = self.coords
        vals = fn(c[:, 0]) if self.dim == 1 else fn(c[:, 0], c[:, 1])
        return self.field(np.broadcast_to(np.asarray(vals, dtype=float), (self.size,)).copy(), time)


@dataclass(frozen=True, eq=False)
class Field:
    """Values on the nodes of ``grid`` at time ``time``. The array is read-only."""

    grid: Grid
    values: np.ndarray
    time: float = 0.0

    def __post_init__(self):
        v = np.array(self.values, dtype=float, copy=True).reshape(-1)
        if v.size != self.grid.size:
            raise ValueError(f"{v.size} values for a grid of {self.grid.size} nodes")
        if not np.all(np.isfinite(v)):
            raise ValueError("field values must be finite")
        if self.time < 0:
            raise ValueError("time must be nonnegative")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    def check_grid(self, other: Union["Field", Grid]):
        g = other.grid if isinstance(other, Field) else other
        if not self.grid.same_as(g):
            raise GridMismatch("fields live on different grids")

    def with_values(self, values, time: float | None = None) -> "Field":
        return Field(self.grid, values, self.time if time is None else time)

    def integral(self) -> float:
        return float(np.sum(self.values) * self.grid.cell)

    def l1(self) -> float:
        return float(np.sum(np.abs(self.values)) * self.grid.cell)

    def linf(self) -> float:
        return float(np.max(np.abs(self.values)))

    def as_array(self) -> np.ndarray:
        return self.values.reshape(self.grid.shape)

    # formats -------------------------------------------------------------
    def to_csv(self, path=None) -> str:
        """CSV with header ``x,value`` (1D) or ``x,y,value`` (2D)."""
        buf = io.StringIO()
        buf.write("x,value\n" if self.grid.dim == 1 else "x,y,value\n")
        c = self.grid.coords
        for row, v in zip(c, self.values):
            buf.write(",".join(repr(float(t)) for t in row) + "," + repr(float(v)) + "\n")
        text = buf.getvalue()
        if path is not None:
            Path(path).write_text(text)
        return text

    def to_bytes(self) -> bytes:
        """Little-endian dump: int32 dim, int32 counts[dim], f64 h, R_dom, time, values."""
        g = self.grid
        head = struct.pack("<i", g.dim) + struct.pack(f"<{g.dim}i", *g.shape)
        head += struct.pack("<3d", g.h, g.R_dom, self.time)
        return head + self.values.astype("<f8").tobytes()

    def save(self, path):
        Path(path).write_bytes(self.to_bytes())


def field_from_bytes(data: bytes) -> Field:
    """Inverse of :meth:`Field.to_bytes`; the boundary mode follows from the counts."""
    (dim,) = struct.unpack_from("<i", data, 0)
    if dim not in (1, 2):
        raise ValueError(f"bad dimension {dim} in dump header")
    counts = struct.unpack_from(f"<{dim}i", data, 4)
    off = 4 + 4 * dim
    h, R_dom, time = struct.unpack_from("<3d", data, off)
    off += 24
    half = int(round(R_dom / h))
    n = counts[0]
    if n == 2 * half + 1:
        mode = "extended"
    elif n == 2 * half:
        mode = "periodic"
    else:
        raise ValueError("node count matches neither boundary mode")
    grid = Grid(dim, h, R_dom, mode)
    vals = np.frombuffer(data, dtype="<f8", offset=off)
    if vals.size != grid.size:
        raise ValueError("truncated field dump")
    return Field(grid, vals.astype(float), time)


def load_field(path) -> Field:
    return field_from_bytes(Path(path).read_bytes())


def field_from_csv(text: str, grid: Grid, time: float = 0.0) -> Field:
    """Read a CSV written by :meth:`Field.to_csv` (node order must match ``grid``)."""
    rows = np.loadtxt(io.StringIO(text), delimiter=",", skiprows=1, ndmin=2)
    if rows.shape[1] != grid.dim + 1:
        raise ValueError("column count does not match grid dimension")
    if not np.allclose(rows[:, :-1], grid.coords, atol=1e-9 * grid.R_dom):
        raise GridMismatch("CSV coordinates do not match the grid")
    return Field(grid, rows[:, -1], time)
