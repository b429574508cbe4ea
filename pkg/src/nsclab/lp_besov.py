"""Littlewood-Paley blocks and the Besov / Chemin-Lerner norms built on them.

Bump profile
------------
With the C-infinity step ``s(x) = g(x) / (g(x) + g(1-x))``, ``g(x) = exp(-1/x)``
for ``x > 0`` and ``0`` otherwise, the radial generator is::

    phi0(r) = s(2 - r) - s(2 - 2r)

which equals ``s(2r - 1)`` on ``[1/2, 1]``, ``s(2 - r)`` on ``[1, 2]`` and
vanishes elsewhere.  Since ``chi(r) = s(2 - r)`` is a smooth cutoff with
``chi = 1`` on ``[0, 1]`` and ``chi = 0`` beyond 2, ``phi0(r) = chi(r) - chi(2r)``
and the dyadic sum ``sum_j phi0(2^-j r)`` telescopes to 1 for every ``r > 0``.
``phi_j(xi) = phi0(2^-j |xi|)``.

Band conditions follow the truncated semi-norms: ``high(beta)`` keeps
``beta < 2^j``, ``mid(alpha, beta)`` keeps ``alpha < 2^j <= beta`` and
``low(alpha)`` keeps ``2^j <= alpha``.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .errors import ContractError, DomainError, InsufficientDataError
from .grid import Field, Grid, inverse


def smooth_step(x):
    """C-infinity step: 0 for ``x <= 0``, 1 for ``x >= 1``."""
    x = np.asarray(x, dtype=float)
    with np.errstate(divide="ignore", over="ignore", invalid="ignore"):
        g0 = np.where(x > 0, np.exp(-1.0 / np.where(x > 0, x, 1.0)), 0.0)
        y = 1.0 - x
        g1 = np.where(y > 0, np.exp(-1.0 / np.where(y > 0, y, 1.0)), 0.0)
        out = g0 / (g0 + g1)
    return out


def phi0_radial(r):
    """Generator bump as a function of ``r = |xi|``; supported in ``[1/2, 2]``."""
    r = np.asarray(r, dtype=float)
    return smooth_step(2.0 - r) - smooth_step(2.0 - 2.0 * r)


def phi_radial(r, j: int):
    """``phi_j`` as a function of ``|xi|``."""
    return phi0_radial(np.ldexp(np.asarray(r, dtype=float), -int(j)))


def phi_weight(xi, j: int):
    """Weight ``phi_j(xi)`` for a 3-vector (or an array of them, last axis of size 3).

    ``xi = 0`` gives 0.
    """
    xi = np.asarray(xi, dtype=float)
    return phi_radial(np.linalg.norm(xi, axis=-1), j)


# --------------------------------------------------------------------------
# Decomposition
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class Band:
    """Frequency band selecting dyadic indices by the value ``2^j``."""

    kind: str = "all"  # all | low | mid | high
    alpha: float = 0.0
    beta: float = math.inf

    def __post_init__(self):
        if self.kind not in ("all", "low", "mid", "high"):
            raise ContractError(f"unknown band kind {self.kind!r}")
        if self.kind == "mid" and not (0 <= self.alpha < self.beta):
            raise ContractError("mid band needs 0 <= alpha < beta")

    def contains(self, j: int) -> bool:
        v = 2.0**j
        if self.kind == "all":
            return True
        if self.kind == "low":
            return v <= self.alpha
        if self.kind == "mid":
            return self.alpha < v <= self.beta
        return self.beta < v

    def bounds(self) -> list[float]:
        if self.kind == "low":
            return [0.0, self.alpha]
        if self.kind == "mid":
            return [self.alpha, self.beta]
        if self.kind == "high":
            return [self.beta, math.inf]
        return [0.0, math.inf]


ALL = Band("all")


def low(alpha: float) -> Band:
    return Band("low", alpha=alpha)


def mid(alpha: float, beta: float) -> Band:
    return Band("mid", alpha=alpha, beta=beta)


def high(beta: float) -> Band:
    return Band("high", beta=beta)


@dataclass(frozen=True, eq=False)
class DyadicDecomposition:
    """The family ``{phi_j}`` restricted to the dyadic range a grid resolves.

    ``j_min = ceil(log2(2 * spacing))`` and ``j_max = floor(log2(k_axis / 2))`` so
    that ``supp phi_j`` lies between the first lattice shell and the inscribed
    ball of the lattice for every resolved ``j``.
    """

    grid: Grid
    j_min: int
    j_max: int

    @classmethod
    def for_grid(cls, grid: Grid) -> "DyadicDecomposition":
        j_min = math.ceil(math.log2(2 * grid.spacing) - 1e-12)
        j_max = math.floor(math.log2(grid.k_axis_max / 2) + 1e-12)
        return cls(grid, j_min, j_max)

    @property
    def js(self) -> range:
        return range(self.j_min, self.j_max + 1)

    def weight(self, j: int) -> np.ndarray:
        return _weights(self.grid, j)

    def partition_error(self) -> float:
        """Max deviation of ``sum_j phi_j`` from 1 on ``2^(j_min+1) <= |xi| <= 2^(j_max-1)``.

        At the two ends of the resolved range the sum is legitimately below 1
        because the neighbouring blocks are not resolved.
        """
        total = sum(self.weight(j) for j in self.js)
        km = self.grid.kmag
        inside = (km >= 2.0 ** (self.j_min + 1)) & (km <= 2.0 ** (self.j_max - 1))
        if not inside.any():
            return 0.0
        return float(np.max(np.abs(total[inside] - 1.0)))


_WEIGHT_CACHE: dict = {}


def _weights(grid: Grid, j: int) -> np.ndarray:
    key = (grid.n, grid.period, int(j))
    w = _WEIGHT_CACHE.get(key)
    if w is None:
        if len(_WEIGHT_CACHE) > 64:
            _WEIGHT_CACHE.clear()
        w = phi_radial(grid.kmag, j)
        _WEIGHT_CACHE[key] = w
    return w


def block_project(f: Field, j: int) -> Field:
    """``Delta_j f``: multiply the spectral coefficients by ``phi_j``."""
    if f.representation != "spectral":
        raise ContractError("block_project needs a spectral-representation field")
    return Field(f.grid, _weights(f.grid, j) * f.values, "spectral")


def block_lp_norm(grid: Grid, coeffs: np.ndarray, j: int, p: float) -> float:
    """``||Delta_j f||_{L^p(box)}`` for spectral coefficients (scalar or stacked components).

    Vector-valued data use the pointwise Euclidean norm.  ``p = 2`` is exact via
    Parseval; other ``p`` use rectangle quadrature of the physical samples.
    """
    return lp_norm(grid, _weights(grid, j) * coeffs, p)


def lp_norm(grid: Grid, coeffs: np.ndarray, p: float) -> float:
    """``L^p(box)`` norm of the field with the given Fourier coefficients."""
    coeffs = np.asarray(coeffs)
    if p == 2:
        return float(np.sqrt(grid.volume * np.sum(np.abs(coeffs) ** 2)))
    vals = inverse(coeffs)
    mod = np.abs(vals) if vals.ndim == 3 else np.sqrt(np.sum(np.abs(vals) ** 2, axis=0))
    if math.isinf(p):
        return float(np.max(mod))
    return float((grid.volume * np.mean(mod**p)) ** (1.0 / p))


def _lsigma(values: Sequence[float], sigma: float) -> float:
    v = np.asarray(values, dtype=float)
    if v.size == 0:
        return 0.0
    if math.isinf(sigma):
        return float(np.max(v))
    return float(np.sum(v**sigma) ** (1.0 / sigma))


# --------------------------------------------------------------------------
# Norm reports
# --------------------------------------------------------------------------


@dataclass
class NormReport:
    """A norm value together with the per-block contributions it aggregates."""

    value: float
    s: float
    p: float
    sigma: float
    band: Band = ALL
    blocks: dict[int, float] = field(default_factory=dict)
    r: float | None = None
    excluded: list[int] = field(default_factory=list)

    def to_dict(self) -> dict:
        def num(v):
            return None if v is None else (v if math.isfinite(v) else "inf")

        return {
            "value": self.value,
            "s": self.s,
            "p": num(self.p),
            "sigma": num(self.sigma),
            "band": [num(b) for b in self.band.bounds()],
            "blocks": [{"j": j, "contrib": c} for j, c in sorted(self.blocks.items())],
            "r": num(self.r),
            "excluded": self.excluded,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict())


def _excluded_js(dec: DyadicDecomposition, band: Band, coeffs: np.ndarray) -> list[int]:
    """Unresolved indices just outside the range that the data would touch."""
    out = []
    km = dec.grid.kmag
    energy = np.abs(coeffs) ** 2
    if energy.ndim == 4:
        energy = energy.sum(axis=0)
    for j in (dec.j_min - 1, dec.j_max + 1):
        if band.contains(j):
            sup = (km > 2.0 ** (j - 1)) & (km < 2.0 ** (j + 1))
            if np.any(energy[sup] > 0):
                out.append(j)
    return out


def besov_norm(
    f: Field,
    s: float,
    p: float = 2,
    sigma: float = 1,
    band: Band = ALL,
    decomposition: DyadicDecomposition | None = None,
) -> NormReport:
    """Homogeneous Besov (semi)norm restricted to a band of dyadic indices."""
    if f.representation != "spectral":
        raise ContractError("besov_norm needs a spectral-representation field")
    dec = decomposition or DyadicDecomposition.for_grid(f.grid)
    blocks = {}
    for j in dec.js:
        if band.contains(j):
            blocks[j] = 2.0 ** (s * j) * block_lp_norm(f.grid, f.values, j, p)
    return NormReport(
        value=_lsigma(list(blocks.values()), sigma),
        s=s,
        p=p,
        sigma=sigma,
        band=band,
        blocks=blocks,
        excluded=_excluded_js(dec, band, f.values),
    )


def _time_norm(samples: np.ndarray, dt: float, r: float) -> float:
    """``L^r`` norm in time of uniformly spaced nonnegative samples (trapezoid rule)."""
    samples = np.asarray(samples, dtype=float)
    if math.isinf(r):
        return float(np.max(samples))
    if samples.size < 2:
        raise InsufficientDataError("L^r time quadrature needs at least two samples")
    vals = samples**r
    integral = dt * (np.sum(vals) - 0.5 * (vals[0] + vals[-1]))
    return float(integral ** (1.0 / r))


def _uniform_dt(times: Sequence[float]) -> float:
    t = np.asarray(times, dtype=float)
    if t.size < 2:
        return 0.0
    d = np.diff(t)
    if np.any(d <= 0) or np.max(np.abs(d - d.mean())) > 1e-9 * max(abs(d.mean()), 1e-300):
        raise ContractError("time grid must be uniform and increasing")
    return float(d.mean())


def block_time_series(
    fields: Sequence[Field], js: Iterable[int], p: float
) -> dict[int, np.ndarray]:
    """``t -> ||Delta_j F(t)||_{L^p}`` for each ``j``."""
    js = list(js)
    out = {j: np.empty(len(fields)) for j in js}
    for i, f in enumerate(fields):
        if f.representation != "spectral":
            raise ContractError("trajectory fields must be spectral")
        for j in js:
            out[j][i] = block_lp_norm(f.grid, f.values, j, p)
    return out


def chemin_lerner_norm(
    times: Sequence[float],
    fields: Sequence[Field],
    r: float,
    s: float,
    p: float = 2,
    sigma: float = 1,
    band: Band = ALL,
    decomposition: DyadicDecomposition | None = None,
    tilde: bool = True,
    series: dict[int, np.ndarray] | None = None,
) -> NormReport:
    """Time-space norm of a trajectory sampled on a uniform grid.

    ``tilde=True`` is the Chemin-Lerner norm (``L^r`` in time per block, then
    weighted ``l^sigma`` in ``j``); ``tilde=False`` takes the truncated Besov
    norm at each time and then the ``L^r`` norm in time.  ``series`` may carry
    precomputed per-block ``L^p`` time series to avoid recomputation.
    """
    if len(fields) == 0 or len(times) != len(fields):
        raise ContractError("trajectory must be nonempty and match its time grid")
    if not math.isinf(r) and len(fields) < 2:
        raise InsufficientDataError("a single time sample cannot be integrated for r < inf")
    dt = _uniform_dt(times)
    dec = decomposition or DyadicDecomposition.for_grid(fields[0].grid)
    js = [j for j in dec.js if band.contains(j)]
    if series is None:
        series = block_time_series(fields, js, p)
    if tilde:
        blocks = {j: 2.0 ** (s * j) * _time_norm(series[j], dt, r) for j in js}
        value = _lsigma(list(blocks.values()), sigma)
    else:
        if js:
            weighted = np.stack([2.0 ** (s * j) * series[j] for j in js])
            if math.isinf(sigma):
                per_time = weighted.max(axis=0)
            else:
                per_time = np.sum(weighted**sigma, axis=0) ** (1.0 / sigma)
            value = _time_norm(per_time, dt, r)
            blocks = {j: 2.0 ** (s * j) * _time_norm(series[j], dt, r) for j in js}
        else:
            value, blocks = 0.0, {}
    return NormReport(value=value, s=s, p=p, sigma=sigma, band=band, blocks=blocks, r=r)


def bernstein_ratio(f: Field, j: int) -> float:
    """``||grad Delta_j f||_{L^2} / ||Delta_j f||_{L^2}``; at most ``2^(j+1)`` by support."""
    if f.representation != "spectral":
        raise ContractError("bernstein_ratio needs a spectral field")
    block = block_project(f, j).values
    num = np.sqrt(np.sum(f.grid.k2 * np.abs(block) ** 2))
    den = np.sqrt(np.sum(np.abs(block) ** 2))
    if den == 0:
        raise DomainError("empty block")
    return float(num / den)
