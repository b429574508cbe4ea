"""Periodic box, wavenumber lattice and the physical <-> spectral transform.

Conventions
-----------
The box is ``[0, 2*pi*L)^3`` sampled with ``n`` points per axis, so the
wavenumbers are ``m / L`` for integer ``m`` in ``[-n/2, n/2)``.  The Nyquist
index ``-n/2`` appears exactly once per axis.

Spectral coefficients are Fourier-series coefficients::

    f(x) = sum_k f_hat(k) exp(i k.x),      f_hat = fftn(f) / n**3

i.e. the forward transform carries ``1/n^3`` and the inverse carries ``n^3``
relative to the unnormalized DFT.  Parseval then reads
``mean_x |f|^2 = sum_k |f_hat|^2`` and ``||f||_{L^2(box)}^2 = vol * sum |f_hat|^2``.

Array layout: scalar fields have shape ``(n, n, n)`` indexed ``[ix, iy, iz]``;
vector fields have shape ``(3, n, n, n)`` with the component axis first.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from functools import cached_property
from pathlib import Path
from typing import Literal, Sequence

import numpy as np
import scipy.fft as sfft

from .errors import ConfigurationError, ContractError

Representation = Literal["physical", "spectral"]

N_MIN, N_MAX = 8, 512
DEFAULT_PERIOD = 2 * np.pi * 16

SNAPSHOT_MAGIC = b"RCSF"
SNAPSHOT_VERSION = 1
_HEADER = struct.Struct("<4sIIdIB")
_REPR_TAGS = {"physical": 0, "spectral": 1}


@dataclass(frozen=True, eq=False)
class Grid:
    """Immutable periodic lattice descriptor.

    Attributes are cheap scalars; wavenumber arrays are built lazily and cached.
    """

    n: int
    period: float

    def __eq__(self, other):
        return isinstance(other, Grid) and self.n == other.n and self.period == other.period

    def __hash__(self):
        return hash((self.n, self.period))

    @property
    def shape(self) -> tuple[int, int, int]:
        return (self.n, self.n, self.n)

    @property
    def length_scale(self) -> float:
        """``L`` with ``period = 2 pi L``."""
        return self.period / (2 * np.pi)

    @property
    def spacing(self) -> float:
        """Wavenumber spacing ``1/L``."""
        return 1.0 / self.length_scale

    @property
    def dx(self) -> float:
        """Physical grid spacing."""
        return self.period / self.n

    @property
    def volume(self) -> float:
        return self.period**3

    @property
    def k_axis_max(self) -> float:
        """Largest axis wavenumber magnitude (the Nyquist value ``n/(2L)``)."""
        return self.n / 2 * self.spacing

    @property
    def k_corner(self) -> float:
        """Norm of the lattice corner, ``sqrt(3) * n / (2L)``."""
        return float(np.sqrt(3.0) * self.k_axis_max)

    @cached_property
    def k1d(self) -> np.ndarray:
        return sfft.fftfreq(self.n, d=1.0 / self.n) * self.spacing

    @cached_property
    def index1d(self) -> np.ndarray:
        """Integer mode indices ``m`` along one axis in FFT order."""
        return np.rint(sfft.fftfreq(self.n, d=1.0 / self.n)).astype(np.int64)

    @cached_property
    def k(self) -> np.ndarray:
        """Wavevector array, shape ``(3, n, n, n)``."""
        kx, ky, kz = np.meshgrid(self.k1d, self.k1d, self.k1d, indexing="ij")
        return np.stack([kx, ky, kz])

    @cached_property
    def k2(self) -> np.ndarray:
        return np.sum(self.k**2, axis=0)

    @cached_property
    def kmag(self) -> np.ndarray:
        return np.sqrt(self.k2)

    @cached_property
    def nyquist_mask(self) -> np.ndarray:
        """True on modes with any axis index equal to the Nyquist index."""
        ny = self.index1d == -(self.n // 2)
        return ny[:, None, None] | ny[None, :, None] | ny[None, None, :]

    @cached_property
    def dealias_mask(self) -> np.ndarray:
        """True on modes kept by the two-thirds rule (every ``|m| <= n//3``)."""
        keep = np.abs(self.index1d) <= self.n // 3
        return keep[:, None, None] & keep[None, :, None] & keep[None, None, :]

    @cached_property
    def x(self) -> np.ndarray:
        """Physical coordinates, shape ``(3, n, n, n)``."""
        x1 = np.arange(self.n) * self.dx
        return np.stack(np.meshgrid(x1, x1, x1, indexing="ij"))

    def conjugate_index(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Index arrays mapping each mode ``m`` to ``-m`` (mod n)."""
        neg = (-np.arange(self.n)) % self.n
        return np.ix_(neg, neg, neg)


def make_grid(n_per_axis: int, period: float = DEFAULT_PERIOD) -> Grid:
    """Build a grid with ``n_per_axis`` points per axis on a box of side ``period``."""
    n = int(n_per_axis)
    if n != n_per_axis or n < N_MIN or n > N_MAX or n & (n - 1):
        raise ConfigurationError(
            f"n_per_axis must be a power of two in [{N_MIN}, {N_MAX}], got {n_per_axis!r}"
        )
    if not np.isfinite(period) or period <= 0:
        raise ConfigurationError(f"period must be positive, got {period!r}")
    return Grid(n=n, period=float(period))


@dataclass(eq=False)
class Field:
    """Scalar ``(n,n,n)`` or vector ``(3,n,n,n)`` data on a grid, tagged with its representation."""

    grid: Grid
    values: np.ndarray
    representation: Representation = "physical"

    def __post_init__(self):
        if self.representation not in _REPR_TAGS:
            raise ContractError(f"unknown representation {self.representation!r}")
        if self.values.shape[-3:] != self.grid.shape or self.values.ndim not in (3, 4):
            raise ContractError(
                f"values shape {self.values.shape} incompatible with grid {self.grid.shape}"
            )

    @property
    def is_vector(self) -> bool:
        return self.values.ndim == 4

    def copy(self) -> "Field":
        return Field(self.grid, self.values.copy(), self.representation)


def forward(values: np.ndarray) -> np.ndarray:
    """Physical samples -> Fourier coefficients over the last three axes."""
    return sfft.fftn(values, axes=(-3, -2, -1), norm="forward")


def inverse(coeffs: np.ndarray) -> np.ndarray:
    """Fourier coefficients -> physical samples over the last three axes."""
    return sfft.ifftn(coeffs, axes=(-3, -2, -1), norm="forward")


def transform(f: Field, direction: Literal["forward", "inverse"]) -> Field:
    """Change representation; the source representation must match ``direction``."""
    if direction == "forward":
        if f.representation != "physical":
            raise ContractError("forward transform needs a physical-representation field")
        return Field(f.grid, forward(f.values), "spectral")
    if direction == "inverse":
        if f.representation != "spectral":
            raise ContractError("inverse transform needs a spectral-representation field")
        return Field(f.grid, inverse(f.values), "physical")
    raise ContractError(f"unknown direction {direction!r}")


def dealias(f: Field, rule: str = "two_thirds") -> Field:
    """Zero every coefficient with an axis index beyond ``n//3``."""
    if rule != "two_thirds":
        raise ContractError(f"unsupported dealiasing rule {rule!r}")
    if f.representation != "spectral":
        raise ContractError("dealias needs a spectral-representation field")
    return Field(f.grid, np.where(f.grid.dealias_mask, f.values, 0.0), "spectral")


def conjugate_symmetry_error(grid: Grid, coeffs: np.ndarray) -> float:
    """Relative deviation of ``coeffs`` from ``c(-k) = conj(c(k))``."""
    idx = grid.conjugate_index()
    mirrored = np.conj(coeffs[(..., *idx)])
    scale = np.max(np.abs(coeffs))
    if scale == 0:
        return 0.0
    return float(np.max(np.abs(coeffs - mirrored)) / scale)


def symmetrize(grid: Grid, coeffs: np.ndarray) -> np.ndarray:
    """Project coefficients onto the conjugate-symmetric (real-field) subspace."""
    idx = grid.conjugate_index()
    return 0.5 * (coeffs + np.conj(coeffs[(..., *idx)]))


def spectral_derivative(grid: Grid, coeffs: np.ndarray, axis: int) -> np.ndarray:
    """Multiply by ``i k_axis``; the Nyquist mode is dropped."""
    return np.where(grid.nyquist_mask, 0.0, 1j * grid.k[axis] * coeffs)


# --------------------------------------------------------------------------
# Binary snapshots
# --------------------------------------------------------------------------


def write_snapshot(path: str | Path, fields: Sequence[Field]) -> None:
    """Write fields sharing one grid and representation in the RCSF format.

    Layout (little endian)::

        magic "RCSF" | version u32 | n u32 | period f64 | field count u32 | repr u8
        then per scalar component: n^3 complex values as interleaved (re, im) f64,
        x index fastest.

    Vector fields contribute three scalar components, in order.
    """
    if not fields:
        raise ContractError("no fields to write")
    grid = fields[0].grid
    rep = fields[0].representation
    comps = []
    for f in fields:
        if f.grid != grid or f.representation != rep:
            raise ContractError("all snapshot fields must share grid and representation")
        comps.extend(f.values if f.is_vector else [f.values])
    header = _HEADER.pack(
        SNAPSHOT_MAGIC, SNAPSHOT_VERSION, grid.n, grid.period, len(comps), _REPR_TAGS[rep]
    )
    with open(path, "wb") as fh:
        fh.write(header)
        for c in comps:
            data = np.asarray(c, dtype="<c16").ravel(order="F")
            fh.write(data.view("<f8").tobytes())


def read_snapshot(path: str | Path) -> tuple[Grid, Representation, list[np.ndarray]]:
    """Read an RCSF file; returns the grid, representation and scalar component arrays."""
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < _HEADER.size:
        raise ContractError("snapshot truncated")
    magic, version, n, period, count, tag = _HEADER.unpack_from(raw)
    if magic != SNAPSHOT_MAGIC:
        raise ContractError(f"bad snapshot magic {magic!r}")
    if version != SNAPSHOT_VERSION:
        raise ContractError(f"unsupported snapshot version {version}")
    grid = make_grid(n, period)
    rep = {v: k for k, v in _REPR_TAGS.items()}[tag]
    body = np.frombuffer(raw, dtype="<f8", offset=_HEADER.size)
    per = 2 * n**3
    if body.size != per * count:
        raise ContractError("snapshot body size does not match header")
    comps = [
        body[i * per : (i + 1) * per].view("<c16").reshape(grid.shape, order="F").copy()
        for i in range(count)
    ]
    return grid, rep, comps
