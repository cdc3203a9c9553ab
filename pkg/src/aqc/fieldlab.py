"""Cell-centred grids, discrete fields and their calculus.

Fields store one vector per cell in an array of shape ``(*grid.shape, codim)``.
Derivatives are central differences; on Dirichlet grids the first and last
cell along each axis use one-sided differences. The adjoint of the discrete
derivative is implemented explicitly so that energy gradients are exact.
"""

from __future__ import annotations

import itertools
import json
import math
import os
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .errors import (
    DimensionMismatchError,
    DomainError,
    MemoryCapError,
    UnsupportedBoundaryError,
)

FIELD_MAGIC = b"AQCF"
FIELD_VERSION = 1
DEFAULT_MAX_CELLS = 1 << 24
DEFAULT_LAYER = 2


def max_cells() -> int:
    """Cell cap from ``AQC_MAX_CELLS`` (default 2**24)."""
    env = os.environ.get("AQC_MAX_CELLS")
    return int(env) if env else DEFAULT_MAX_CELLS


@dataclass(frozen=True)
class Grid:
    """Rectangular cell-centred sampling of a box.

    Parameters
    ----------
    shape : tuple of int
        Cells per axis.
    extent : tuple of float, optional
        Box side lengths, default all ones.
    boundary : {"periodic", "dirichlet"}
        Boundary mode.
    layer : int
        Width (in cells) of the pinned layer in Dirichlet mode.
    """

    shape: tuple
    extent: tuple | None = None
    boundary: str = "periodic"
    layer: int = DEFAULT_LAYER

    def __post_init__(self):
        shape = tuple(int(s) for s in self.shape)
        extent = tuple(float(e) for e in (self.extent or (1.0,) * len(shape)))
        object.__setattr__(self, "shape", shape)
        object.__setattr__(self, "extent", extent)
        if not shape or any(s < 1 for s in shape):
            raise DomainError(f"invalid grid shape {shape}")
        if len(extent) != len(shape) or any(not e > 0 for e in extent):
            raise DomainError("extent must be positive with one entry per axis")
        if self.boundary not in ("periodic", "dirichlet"):
            raise DomainError(f"unknown boundary mode {self.boundary!r}")
        if self.boundary == "dirichlet" and any(s < 2 * self.layer + 1 for s in shape):
            raise DomainError("grid too small for its Dirichlet layer")
        cap = max_cells()
        if math.prod(shape) > cap:
            raise MemoryCapError(f"grid with {math.prod(shape)} cells exceeds the cap of {cap}")

    @property
    def n(self) -> int:
        return len(self.shape)

    @property
    def h(self) -> np.ndarray:
        return np.asarray(self.extent) / np.asarray(self.shape)

    @property
    def cell_volume(self) -> float:
        return float(np.prod(self.h))

    @property
    def volume(self) -> float:
        return float(np.prod(self.extent))

    @property
    def size(self) -> int:
        return math.prod(self.shape)

    def axes(self) -> list[np.ndarray]:
        """1-D cell-centre coordinates per axis."""
        return [(np.arange(m) + 0.5) * hi for m, hi in zip(self.shape, self.h)]

    def coords(self) -> np.ndarray:
        """Cell centres, shape ``(*shape, n)``."""
        return np.stack(np.meshgrid(*self.axes(), indexing="ij"), axis=-1)

    def interior_mask(self) -> np.ndarray:
        """True on free cells (everything when periodic)."""
        mask = np.ones(self.shape, dtype=bool)
        if self.boundary == "dirichlet":
            w = self.layer
            for ax in range(self.n):
                idx = [slice(None)] * self.n
                idx[ax] = slice(0, w)
                mask[tuple(idx)] = False
                idx[ax] = slice(self.shape[ax] - w, None)
                mask[tuple(idx)] = False
        return mask

    def refine(self, factor: int = 2) -> "Grid":
        return Grid(tuple(s * factor for s in self.shape), self.extent, self.boundary, self.layer)

    def to_dict(self) -> dict:
        return {"shape": list(self.shape), "extent": list(self.extent), "boundary": self.boundary,
                "layer": self.layer}

    @classmethod
    def from_dict(cls, d: dict) -> "Grid":
        return cls(tuple(d["shape"]), tuple(d["extent"]) if d.get("extent") else None,
                   d.get("boundary", "periodic"), d.get("layer", DEFAULT_LAYER))


@dataclass
class Field:
    """Vector samples on a grid; ``values`` has shape ``(*grid.shape, codim)``."""

    grid: Grid
    values: np.ndarray
    codim: int = field(default=-1)

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.shape == self.grid.shape:
            v = v[..., None]
        if v.shape[:-1] != self.grid.shape:
            raise DimensionMismatchError(f"values of shape {v.shape} do not fit grid {self.grid.shape}")
        if self.codim >= 0 and v.shape[-1] != self.codim:
            raise DimensionMismatchError(f"codim {self.codim} but values carry {v.shape[-1]} components")
        if not np.all(np.isfinite(v)):
            raise DomainError("field values must be finite")
        self.values = v
        self.codim = v.shape[-1]

    def norm(self) -> np.ndarray:
        """Pointwise Euclidean norm."""
        return np.sqrt(np.sum(self.values ** 2, axis=-1))

    def with_values(self, values) -> "Field":
        return Field(self.grid, values)

    def __add__(self, other: "Field") -> "Field":
        return Field(self.grid, self.values + other.values)

    def __sub__(self, other: "Field") -> "Field":
        return Field(self.grid, self.values - other.values)

    def __mul__(self, c: float) -> "Field":
        return Field(self.grid, self.values * c)

    __rmul__ = __mul__


def zeros(grid: Grid, codim: int) -> Field:
    return Field(grid, np.zeros(grid.shape + (codim,)))


def from_function(grid: Grid, fn: Callable[[np.ndarray], np.ndarray], codim: int | None = None) -> Field:
    """Sample ``fn(x)`` (``x`` of shape ``(*shape, n)``) at cell centres."""
    vals = np.asarray(fn(grid.coords()), dtype=float)
    if vals.shape == grid.shape:
        vals = vals[..., None]
    return Field(grid, vals, codim if codim is not None else -1)


# ---------------------------------------------------------------------------
# differences


def _diff_axis(u: np.ndarray, axis: int, h: float, periodic: bool) -> np.ndarray:
    if periodic:
        return (np.roll(u, -1, axis=axis) - np.roll(u, 1, axis=axis)) / (2.0 * h)
    u = np.moveaxis(u, axis, 0)
    out = np.empty_like(u)
    out[1:-1] = (u[2:] - u[:-2]) / (2.0 * h)
    out[0] = (u[1] - u[0]) / h
    out[-1] = (u[-1] - u[-2]) / h
    return np.moveaxis(out, 0, axis)


def _diff_axis_adjoint(w: np.ndarray, axis: int, h: float, periodic: bool) -> np.ndarray:
    if periodic:
        return -_diff_axis(w, axis, h, True)
    w = np.moveaxis(w, axis, 0)
    out = np.zeros_like(w)
    c = w[1:-1] / (2.0 * h)
    out[:-2] -= c
    out[2:] += c
    out[0] -= w[0] / h
    out[1] += w[0] / h
    out[-2] -= w[-1] / h
    out[-1] += w[-1] / h
    return np.moveaxis(out, 0, axis)


def gradient_fd(u: Field) -> np.ndarray:
    """Discrete Jacobian, shape ``(*shape, codim, n)`` with entry ``[..., j, i] = D_i u_j``."""
    g = u.grid
    periodic = g.boundary == "periodic"
    return np.stack([_diff_axis(u.values, i, g.h[i], periodic) for i in range(g.n)], axis=-1)


def gradient_fd_adjoint(grid: Grid, sigma: np.ndarray) -> np.ndarray:
    """Adjoint of :func:`gradient_fd` (Euclidean pairing of sample arrays)."""
    periodic = grid.boundary == "periodic"
    return sum(_diff_axis_adjoint(sigma[..., i], i, grid.h[i], periodic) for i in range(grid.n))


def _check_op(op, grid: Grid, codim: int, side: str):
    if op.n != grid.n:
        raise DimensionMismatchError(f"operator acts on R^{op.n} but grid has dimension {grid.n}")
    want = op.dimV if side == "V" else op.dimW
    if codim != want:
        raise DimensionMismatchError(f"field codim {codim} does not match operator dim{side}={want}")


def apply_op_fd(op, u: Field) -> Field:
    """``sum_i A_i D_i u`` with central differences (one-sided on Dirichlet edges)."""
    _check_op(op, u.grid, u.codim, "V")
    jac = gradient_fd(u)
    return Field(u.grid, np.einsum("iwj,...ji->...w", op.coeffs, jac, optimize=True))


def apply_op_fd_adjoint(op, sigma: Field | np.ndarray, grid: Grid | None = None) -> np.ndarray:
    """Adjoint of :func:`apply_op_fd`: maps W-valued samples to V-valued samples."""
    if isinstance(sigma, Field):
        grid, sigma = sigma.grid, sigma.values
    jac_dual = np.einsum("iwj,...w->...ji", op.coeffs, sigma, optimize=True)
    return gradient_fd_adjoint(grid, jac_dual)


def frequencies(grid: Grid) -> np.ndarray:
    """Physical frequency vectors ``k / extent`` on the FFT grid, shape ``(*shape, n)``."""
    ks = [np.fft.fftfreq(m, d=1.0 / m) / L for m, L in zip(grid.shape, grid.extent)]
    return np.stack(np.meshgrid(*ks, indexing="ij"), axis=-1)


def _require_periodic(grid: Grid):
    if grid.boundary != "periodic":
        raise UnsupportedBoundaryError("spectral operations need a periodic grid")


def apply_multiplier(m, f: Field) -> Field:
    """Apply a matrix-valued Fourier multiplier ``m(xi)`` to a periodic field.

    The symbol is evaluated at the physical frequencies ``k / extent``; the
    zero mode uses ``m(0)`` (zero for operator multipliers). The real part
    of the inverse transform is returned.
    """
    _require_periodic(f.grid)
    if m.dim_in != f.codim:
        raise DimensionMismatchError(f"multiplier expects codim {m.dim_in}, field has {f.codim}")
    axes = tuple(range(f.grid.n))
    fh = np.fft.fftn(f.values, axes=axes)
    mat = m(frequencies(f.grid))
    gh = np.einsum("...ab,...b->...a", mat, fh)
    return Field(f.grid, np.real(np.fft.ifftn(gh, axes=axes)))


def apply_op_spectral(op, u: Field) -> Field:
    """Exact spectral ``A u`` for a periodic band-limited field."""
    _require_periodic(u.grid)
    _check_op(op, u.grid, u.codim, "V")
    axes = tuple(range(u.grid.n))
    uh = np.fft.fftn(u.values, axes=axes)
    xi = frequencies(u.grid)
    sym = 2j * np.pi * np.einsum("iwj,...i->...wj", op.coeffs, xi)
    return Field(u.grid, np.real(np.fft.ifftn(np.einsum("...wj,...j->...w", sym, uh), axes=axes)))


def derivative_spectral(u: Field, axis: int) -> Field:
    """Exact spectral partial derivative along ``axis``."""
    _require_periodic(u.grid)
    axes = tuple(range(u.grid.n))
    xi = frequencies(u.grid)[..., axis]
    uh = np.fft.fftn(u.values, axes=axes)
    return Field(u.grid, np.real(np.fft.ifftn(2j * np.pi * xi[..., None] * uh, axes=axes)))


# ---------------------------------------------------------------------------
# quadrature and rearrangement


def integrate_phi(phi, f: Field) -> float:
    """Midpoint rule ``sum_k phi(|f(x_k)|) h^n``."""
    return float(np.sum(phi.value(f.norm())) * f.grid.cell_volume)


@dataclass(frozen=True)
class RearrangedProfile:
    """Decreasing rearrangement as a step function.

    ``thresholds[k]`` is the value of ``f*`` on ``[measures[k-1], measures[k])``
    (with ``measures[-1] = 0``).
    """

    thresholds: np.ndarray
    measures: np.ndarray
    cell_measure: float

    @property
    def total_measure(self) -> float:
        return float(self.measures[-1]) if self.measures.size else 0.0

    def __call__(self, s):
        s = np.asarray(s, dtype=float)
        idx = np.clip(np.searchsorted(self.measures, s, side="right"), 0, self.thresholds.size - 1)
        return self.thresholds[idx]

    def integrate_phi(self, phi) -> float:
        return float(np.sum(phi.value(self.thresholds)) * self.cell_measure)


def rearrangement(f: Field) -> RearrangedProfile:
    """Sort ``|f|`` in decreasing order and pair it with cumulative cell measure."""
    vals = np.sort(f.norm().ravel())[::-1]
    vol = f.grid.cell_volume
    meas = np.arange(1, vals.size + 1) * vol
    return RearrangedProfile(vals.copy(), meas, vol)


# ---------------------------------------------------------------------------
# test-field families


def bump_window(grid: Grid, collar: float = 0.125) -> np.ndarray:
    """Smooth product bump, positive on ``(collar, 1-collar)^n`` (relative to the box), zero outside."""
    if not 0 <= collar < 0.5:
        raise DomainError("collar must lie in [0, 1/2)")
    w = np.ones(grid.shape)
    for ax, (xs, L) in enumerate(zip(grid.axes(), grid.extent)):
        r = (xs / L - 0.5) / (0.5 - collar)
        b = np.zeros_like(r)
        inside = np.abs(r) < 1
        b[inside] = np.exp(1.0 - 1.0 / (1.0 - r[inside] ** 2))
        shape = [1] * grid.n
        shape[ax] = -1
        w = w * b.reshape(shape)
    return w


def support_mask(grid: Grid, collar: float = 0.125) -> np.ndarray:
    """Cells strictly inside the collar (where :func:`bump_window` may be non-zero)."""
    return bump_window(grid, collar) > 0


def random_field(grid: Grid, codim: int, band: int = 3, seed: int = 0, amplitude: float = 1.0,
                 compact: bool = True, collar: float = 0.125) -> Field:
    """Random trigonometric polynomial with frequencies ``|k|_inf <= band``.

    Coefficients are drawn in a fixed order that does not depend on the grid
    resolution, so the same seed gives the same continuum field on every
    grid. With ``compact`` the field is multiplied by :func:`bump_window`.
    """
    rng = np.random.default_rng(seed)
    modes = np.array(list(itertools.product(range(-band, band + 1), repeat=grid.n)), dtype=float)
    coef = rng.standard_normal((2, modes.shape[0], codim)) / math.sqrt(modes.shape[0])
    x = grid.coords() / np.asarray(grid.extent)
    phase = 2.0 * np.pi * np.tensordot(x, modes, axes=([-1], [1]))
    vals = np.cos(phase) @ coef[0] + np.sin(phase) @ coef[1]
    if compact:
        vals = vals * bump_window(grid, collar)[..., None]
    return Field(grid, amplitude * vals)


def is_compactly_supported(f: Field, cells: int = 2, atol: float = 0.0) -> bool:
    """True when ``f`` vanishes on the outermost ``cells`` layers along every axis."""
    mask = np.ones(f.grid.shape, dtype=bool)
    idx = [slice(cells, s - cells) for s in f.grid.shape]
    mask[tuple(idx)] = False
    return bool(np.all(np.abs(f.values[mask]) <= atol))


# ---------------------------------------------------------------------------
# I/O


def save_field(path: str | os.PathLike, f: Field) -> None:
    """Write ``AQCF`` magic, a little-endian uint32 header length, a JSON header
    and row-major little-endian float64 samples."""
    header = {"version": FIELD_VERSION, "shape": list(f.grid.shape), "extent": list(f.grid.extent),
              "boundary": f.grid.boundary, "layer": f.grid.layer, "codim": f.codim, "dtype": "<f8"}
    hb = json.dumps(header, sort_keys=True).encode()
    with open(path, "wb") as fh:
        fh.write(FIELD_MAGIC)
        fh.write(struct.pack("<I", len(hb)))
        fh.write(hb)
        fh.write(np.ascontiguousarray(f.values, dtype="<f8").tobytes())


def load_field(path: str | os.PathLike) -> Field:
    data = Path(path).read_bytes()
    if data[:4] != FIELD_MAGIC:
        raise DomainError(f"{path}: not a field file")
    (hl,) = struct.unpack("<I", data[4:8])
    header = json.loads(data[8:8 + hl].decode())
    grid = Grid(tuple(header["shape"]), tuple(header["extent"]), header["boundary"],
                header.get("layer", DEFAULT_LAYER))
    vals = np.frombuffer(data[8 + hl:], dtype="<f8").reshape(grid.shape + (header["codim"],))
    return Field(grid, vals.astype(float))


def export_csv(path: str | os.PathLike, f: Field, index: Sequence[int] | None = None) -> None:
    """Write a 1-D or 2-D slice as CSV with columns ``x_0..x_{d-1}, c_0..``.

    For grids of dimension > 2 pass ``index`` with the fixed indices of the
    trailing axes.
    """
    g = f.grid
    vals, coords = f.values, g.coords()
    if g.n > 2:
        if index is None or len(index) != g.n - 2:
            raise DimensionMismatchError("index must fix all axes beyond the first two")
        sl = (slice(None), slice(None)) + tuple(index)
        vals, coords = vals[sl], coords[sl]
    d = min(g.n, 2)
    flat_x = coords.reshape(-1, g.n)[:, :d]
    flat_v = vals.reshape(-1, f.codim)
    cols = [f"x_{i}" for i in range(d)] + [f"c_{j}" for j in range(f.codim)]
    np.savetxt(path, np.hstack((flat_x, flat_v)), delimiter=",", header=",".join(cols), comments="",
               fmt="%.17g")
