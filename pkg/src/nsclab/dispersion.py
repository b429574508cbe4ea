"""Dyadic oscillatory integrals, their dispersive decay, and Strichartz-norm scaling.

The block integral is::

    I_j(t, x) = int exp(i x.xi) exp(i t lambda(xi)) phi_j(xi) d xi
              = 2^{3j} int exp(i X.z) exp(i t lambda(2^j z)) phi_0(z) dz,   X = 2^j x

All evaluators work with the rescaled form.  Two are provided:

* ``eval_oscillatory_block``: trapezoid rule on the cube ``[-2, 2]^3`` of
  ``z`` with ``N^3`` nodes, mapped to an ``x`` lattice by a zero-padded FFT.
  Exact for small ``t`` but the node count needed grows like ``t 2^j``.
* ``AxisymmetricBlock``: both ``lambda`` and ``phi_0`` depend on ``(|z_h|, z_3)``
  only, so ``I`` depends on ``(|X_h|, X_3)`` only.  The ``|z_h|`` integral is a
  Gauss-Legendre Hankel sum with ``J_0`` and the ``z_3`` integral a trapezoid
  rule evaluated by FFT.  A uniform drift ``V`` along ``e_3`` is removed from
  the phase, which translates ``I`` in ``X_3`` and leaves ``sup_x |I|`` unchanged.
  Node counts scale with the phase variation; the base count ``N`` plays the
  role of the box node count (doubling ``N`` doubles every node count).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
import scipy.fft as sfft
from scipy import integrate, optimize, special

from .errors import DataError, DomainError, InsufficientDataError, ResolutionError
from .grid import Grid, inverse, make_grid
from .lp_besov import _weights, phi0_radial
from .propagator import (
    SpectralState,
    apply_mode_matrices,
    inviscid_group,
    mode_wavevectors,
    viscous_semigroup,
)
from .symbol import Params, _sgn, eigensystem_inviscid, eta, grad_lambda, hessian_lambda, hessian_rank, lambda_pm

FIT_CLOCK_MIN = 5.0
FIT_RESIDUAL_TOL = 0.05
X_MARGIN = 16.0
"""Padding (rescaled units) around the ray set where the kernel is searched."""
X_STEP = math.pi / 4
"""Search lattice spacing in rescaled ``X``: twice finer than Nyquist for ``|z| <= 2``."""


def clock(j: int, t):
    """``min(2^{3j}, 1) |t|``."""
    return min(2.0 ** (3 * j), 1.0) * np.abs(t)


def bump_integral(j: int = 0) -> float:
    """``int phi_j = 2^{3j} * 4 pi int r^2 phi_0(r) dr`` by adaptive quadrature."""
    val, _ = integrate.quad(lambda r: 4 * np.pi * r * r * phi0_radial(r), 0.5, 2.0, epsabs=1e-14, epsrel=1e-13, limit=200)
    return 2.0 ** (3 * j) * val


# --------------------------------------------------------------------------
# Box quadrature
# --------------------------------------------------------------------------


@dataclass
class BlockField:
    """``I_j(t, x)`` sampled on a cubic ``x`` lattice (axis ``x1d``, array ``[ix, iy, iz]``)."""

    j: int
    sign: int
    t: float
    x1d: np.ndarray
    values: np.ndarray
    tail_fraction: float

    def sup(self) -> float:
        return float(np.max(np.abs(self.values)))


def _box_nodes(n: int) -> tuple[np.ndarray, float]:
    h = 4.0 / n
    return -2.0 + h * np.arange(n), h


def eval_oscillatory_block(
    j: int, sign, t: float, x_extent: float | None = None, x_points: int | None = None, n_nodes: int = 96, pad: int = 2
) -> BlockField:
    """Trapezoid quadrature of ``I_j(t, .)`` over the support cube, evaluated on an ``x`` lattice.

    The lattice is the zero-padded FFT lattice: spacing ``2 pi / (pad * n_nodes * h)``
    in rescaled units, ``h = 4 / n_nodes``.  ``x_extent``/``x_points`` crop the
    returned lattice to ``|x_i| <= x_extent`` (physical units) and, when both are
    given, resample it by nearest lattice index.

    Raises :class:`ResolutionError` with the node count required when the phase
    changes by more than ``pi/2`` between neighbouring nodes, or when the kernel
    would wrap around the periodic ``x`` lattice.
    """
    s = _sgn(sign)
    z, h = _box_nodes(n_nodes)
    Z = np.stack(np.meshgrid(z, z, z, indexing="ij"), axis=-1)
    r = np.linalg.norm(Z, axis=-1)
    w = phi0_radial(r)
    supp = w > 0
    scale = 2.0**j
    if t != 0:
        g = grad_lambda(scale * Z[supp], s) * scale * abs(t)
        vmax = float(np.max(np.linalg.norm(g, axis=-1)))
    else:
        vmax = 0.0
    step = vmax * h
    if step > np.pi / 2:
        raise ResolutionError(
            f"phase step {step:.3g} rad per node exceeds pi/2", required_n=int(math.ceil(n_nodes * step / (np.pi / 2)))
        )
    P = pad * n_nodes
    x_range = 2 * np.pi / h  # rescaled period of the x lattice
    reach = vmax + X_MARGIN
    if reach > 0.45 * x_range:
        need = int(math.ceil(n_nodes * reach / (0.45 * x_range)))
        raise ResolutionError(f"kernel reach {reach:.3g} exceeds the x lattice half-width", required_n=need)
    phase = np.zeros_like(r)
    if t != 0:
        phase[supp] = t * lambda_pm(scale * Z[supp], s)
    g = w * np.exp(1j * phase)
    big = np.zeros((P, P, P), complex)
    big[:n_nodes, :n_nodes, :n_nodes] = g
    # sum_k g_k exp(i x_m z_k) with z_k = -2 + k h and x_m = m * 2 pi / (P h)
    S = sfft.ifftn(big, norm="forward")
    m = sfft.fftfreq(P, d=1.0 / P)
    X1 = m * 2 * np.pi / (P * h)
    shift = np.exp(-2j * X1)
    S = S * shift[:, None, None] * shift[None, :, None] * shift[None, None, :]
    vals = (2.0 ** (3 * j)) * h**3 * S
    order = np.argsort(X1)
    X1 = X1[order]
    vals = vals[np.ix_(order, order, order)]
    x1 = X1 / scale
    total = np.sum(np.abs(vals) ** 2)
    edge = np.abs(X1) > 0.45 * x_range
    tail = float(
        np.sum(np.abs(vals[edge]) ** 2) + np.sum(np.abs(vals[:, edge]) ** 2) + np.sum(np.abs(vals[:, :, edge]) ** 2)
    ) / max(total, 1e-300)
    if x_extent is not None:
        keep = np.abs(x1) <= x_extent
        if x_points is not None:
            target = np.linspace(-x_extent, x_extent, x_points)
            keep_idx = np.unique(np.searchsorted(x1, target).clip(0, len(x1) - 1))
        else:
            keep_idx = np.nonzero(keep)[0]
        x1 = x1[keep_idx]
        vals = vals[np.ix_(keep_idx, keep_idx, keep_idx)]
    return BlockField(j, s, float(t), x1, vals, tail)


def direct_block_value(j: int, sign, t: float, x, n_nodes: int = 96, rescaled: bool = True) -> complex:
    """``I_j(t, x)`` at one point by direct summation over the trapezoid nodes.

    ``rescaled=True`` uses the ``2^{3j} int exp(i 2^j x.z) ...`` form; ``False``
    sums over the physical cube ``[-2^{j+1}, 2^{j+1}]^3`` directly.
    """
    s = _sgn(sign)
    x = np.asarray(x, float)
    if rescaled:
        z, h = _box_nodes(n_nodes)
        Z = np.stack(np.meshgrid(z, z, z, indexing="ij"), axis=-1)
        w = phi0_radial(np.linalg.norm(Z, axis=-1))
        ph = t * lambda_pm(2.0**j * Z, s) + (2.0**j) * Z @ x
        return complex(2.0 ** (3 * j) * h**3 * np.sum(w * np.exp(1j * ph)))
    z, h = _box_nodes(n_nodes)
    z, h = z * 2.0**j, h * 2.0**j
    Xi = np.stack(np.meshgrid(z, z, z, indexing="ij"), axis=-1)
    w = phi0_radial(np.linalg.norm(Xi, axis=-1) / 2.0**j)
    ph = t * lambda_pm(Xi, s) + Xi @ x
    return complex(h**3 * np.sum(w * np.exp(1j * ph)))


# --------------------------------------------------------------------------
# Axisymmetric evaluator
# --------------------------------------------------------------------------


@dataclass
class SupResult:
    value: float
    rho: float
    x3: float
    grid_value: float
    n_rho: int
    n_z: int
    x_points: int


class AxisymmetricBlock:
    """``I_j^{sign}(t, .)`` as a function of ``(|X_h|, X_3)`` in rescaled coordinates.

    ``X = 2^j x``; ``x3`` arguments are shifted by the removed drift, i.e. the
    physical point is ``X_3 = x3 - drift``.
    """

    def __init__(self, j: int, sign, t: float, n_base: int = 96):
        self.j, self.sign, self.t, self.n_base = int(j), _sgn(sign), float(t), int(n_base)
        scale = 2.0**self.j
        # coarse survey of the phase gradient on the support
        zr = np.linspace(0.0, 2.0, 161)
        zz = np.linspace(-2.0, 2.0, 321)
        R, Z3 = np.meshgrid(zr, zz, indexing="ij")
        w = phi0_radial(np.hypot(R, Z3))
        pts = np.stack([R, np.zeros_like(R), Z3], axis=-1)[w > 0]
        with np.errstate(invalid="ignore", divide="ignore"):
            g = grad_lambda(scale * pts, self.sign) * scale * self.t
        g = np.nan_to_num(g)
        wts = w[w > 0]
        self.drift = float(np.sum(wts * g[:, 2]) / np.sum(wts))
        grho = np.abs(g[:, 0])
        g3 = g[:, 2] - self.drift
        # stationary points sit at X_h = -grad_h psi, X_3 = -d_3 psi
        self.rho_max = float(grho.max()) + X_MARGIN
        self.x3_lo = float(-g3.max()) - X_MARGIN
        self.x3_hi = float(-g3.min()) + X_MARGIN
        phi_rho = 2.0 * (float(grho.max()) + self.rho_max)
        phi_z = 4.0 * (float(np.abs(g3).max()) + max(abs(self.x3_lo), abs(self.x3_hi)))
        self.n_rho = int(math.ceil(n_base / 2 * (1 + phi_rho / (32 * np.pi))))
        self.n_z = int(math.ceil(n_base * (1 + phi_z / (64 * np.pi))))
        self.ref = float(lambda_pm(np.array([0.0, 0.0, 0.0]) if self.j < 0 else np.array([scale, 0, 0]), self.sign))
        self._build()

    def _build(self):
        scale = 2.0**self.j
        xg, w_rho = special.roots_legendre(self.n_rho)
        self.rho = 1.0 + xg  # [0, 2]
        self.hz = 4.0 / self.n_z
        self.z3 = -2.0 + self.hz * np.arange(self.n_z)
        self.g = np.empty((self.n_rho, self.n_z), complex)
        for sl in _row_chunks(self.n_rho, self.n_z):
            R, Z3 = np.meshgrid(self.rho[sl], self.z3, indexing="ij")
            bump = phi0_radial(np.hypot(R, Z3))
            pts = np.stack([scale * R, np.zeros_like(R), scale * Z3], axis=-1)
            psi = self.t * (lambda_pm(pts, self.sign) - self.ref) - self.drift * Z3
            self.g[sl] = (2 * np.pi * R * w_rho[sl, None] * self.hz) * bump * np.exp(1j * psi)
        self.prefactor = 2.0 ** (3 * self.j)

    def _z3_transform(self, x3: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        # FFT in z3 onto the lattice X3 = m * dX3, dX3 = 2 pi / (P hz)
        P = int(math.ceil(2 * np.pi / (self.hz * X_STEP)))
        P = sfft.next_fast_len(max(P, self.n_z))
        dX = 2 * np.pi / (P * self.hz)
        m_lo = int(math.floor(x3.min() / dX))
        m_hi = int(math.ceil(x3.max() / dX))
        if m_hi - m_lo + 1 > P:
            raise ResolutionError("x3 window wider than the z3 lattice period")
        ms = np.arange(m_lo, m_hi + 1)
        X3 = ms * dX
        out = np.empty((self.n_rho, len(ms)), complex)
        for sl in _row_chunks(self.n_rho, P):
            # sum_k g_k exp(2 pi i m k / P)
            F = sfft.ifft(self.g[sl], n=P, axis=1, norm="forward")
            out[sl] = F[:, ms % P]
        return out * np.exp(-2j * X3)[None, :], X3

    def values(self, rho_x: np.ndarray, x3: np.ndarray, _z3=None) -> np.ndarray:
        """``I`` on the tensor grid ``rho_x`` x ``x3`` (``x3`` uniform with step ``X_STEP``)."""
        F, X3 = self._z3_transform(x3) if _z3 is None else _z3
        J = special.j0(np.outer(rho_x, self.rho))
        return self.prefactor * (J @ F), X3

    def value(self, rho_x: float, x3: float) -> complex:
        ph = np.exp(1j * x3 * self.z3)
        J = special.j0(rho_x * self.rho)
        return complex(self.prefactor * (J @ self.g @ ph))

    def sup(self, n_refine: int = 6) -> SupResult:
        rho_x = np.arange(0.0, self.rho_max + X_STEP, X_STEP)
        x3 = np.arange(self.x3_lo, self.x3_hi + X_STEP, X_STEP)
        chunk = max(1, int(2e7 // (len(self.rho) * max(len(x3), 1))))
        z3 = self._z3_transform(x3)
        cands = []
        for i in range(0, len(rho_x), chunk):
            V, X3 = self.values(rho_x[i : i + chunk], x3, z3)
            A = np.abs(V)
            k = np.argsort(A, axis=None)[-n_refine:]
            for kk in k:
                a, b = np.unravel_index(kk, A.shape)
                cands.append((A[a, b], rho_x[i + a], X3[b]))
        cands.sort(reverse=True)
        cands = _spread(cands, n_refine)
        grid_best = cands[0][0]
        top = grid_best
        loc = cands[0][1:]
        for _, r0, x0 in cands:
            res = optimize.minimize(
                lambda p: -abs(self.value(abs(p[0]), p[1])),
                x0=[r0, x0],
                method="Nelder-Mead",
                options={"xatol": 1e-4, "fatol": 1e-10 * grid_best, "initial_simplex": [[r0, x0], [r0 + 0.1, x0], [r0, x0 + 0.1]]},
            )
            if -res.fun > top:
                top, loc = -res.fun, (abs(res.x[0]), res.x[1])
        return SupResult(float(top), float(loc[0]), float(loc[1]), float(grid_best), self.n_rho, self.n_z, len(rho_x) * len(x3))


def _row_chunks(n_rows: int, n_cols: int, budget: int = 4_000_000):
    step = max(1, budget // max(n_cols, 1))
    return [slice(i, min(i + step, n_rows)) for i in range(0, n_rows, step)]


def _spread(cands, k, min_dist=2.0):
    """Top ``k`` candidates at mutual distance at least ``min_dist``."""
    out = []
    for c in cands:
        if all(math.hypot(c[1] - o[1], c[2] - o[2]) >= min_dist for o in out):
            out.append(c)
        if len(out) == k:
            break
    return out


def sup_norm(j: int, sign, t: float, n_base: int = 96) -> float:
    """``sup_x |I_j^{sign}(t, x)|`` via the axisymmetric evaluator."""
    if t == 0:
        return bump_integral(j)
    return AxisymmetricBlock(j, sign, t, n_base).sup().value


# --------------------------------------------------------------------------
# Decay fits
# --------------------------------------------------------------------------


@dataclass
class DecayFit:
    """Least-squares power law ``value ~ prefactor * clock^exponent``."""

    j: int
    sign: str
    samples: list[tuple[float, float]]
    exponent: float
    prefactor: float
    residual: float
    clocks: list[float] = field(default_factory=list)
    convergence: float | None = None

    @property
    def bound_constant(self) -> float:
        """``max_t sup|I_j| (1 + clock) / 2^{3j}``: the constant of the decay bound on the samples."""
        return max(v * (1 + c) for (_, v), c in zip(self.samples, self.clocks)) / 2.0 ** (3 * self.j)

    def to_dict(self) -> dict:
        return {
            "j": self.j,
            "sign": self.sign,
            "bound_constant": self.bound_constant,
            "exponent": self.exponent,
            "prefactor": self.prefactor,
            "prefactor_over_2^3j": self.prefactor / 2.0 ** (3 * self.j),
            "residual": self.residual,
            "convergence": self.convergence,
            "samples": [{"t": t, "clock": c, "value": v} for (t, v), c in zip(self.samples, self.clocks)],
        }


def power_fit(x, y) -> tuple[float, float, float]:
    """Slope, intercept and max absolute log residual of ``log y`` against ``log x``."""
    x, y = np.asarray(x, float), np.asarray(y, float)
    if np.any(y <= 0) or np.any(x <= 0):
        raise DataError("power-law fit needs positive samples")
    lx, ly = np.log(x), np.log(y)
    slope, icpt = np.polyfit(lx, ly, 1)
    res = float(np.max(np.abs(ly - (slope * lx + icpt))))
    return float(slope), float(icpt), res


def _fit_samples(j, sign, ts, n_base):
    ts = ts[clock(j, ts) >= FIT_CLOCK_MIN * (1 - 1e-12)]
    if len(ts) < 3:
        raise InsufficientDataError("fewer than three samples with clock >= 5")
    vals = [sup_norm(j, sign, t, n_base) for t in ts]
    return ts, vals, power_fit(clock(j, ts), vals)


def sup_decay_fit(
    j: int,
    sign,
    t_range: tuple[float, float] | None = None,
    n_samples: int = 6,
    n_base: int = 96,
    check_convergence: bool = False,
    max_shifts: int = 4,
) -> DecayFit:
    """Fit ``sup_x |I_j(t)|`` against the clock ``min(2^{3j}, 1) t`` for clock ``>= 5``.

    Without ``t_range`` the window starts at clock ``[5, 40]`` and is doubled
    (at most ``max_shifts`` times) while the max log residual exceeds
    ``FIT_RESIDUAL_TOL``, i.e. until the samples sit on a power law.  With
    ``check_convergence`` the largest-``t`` sample is recomputed with twice the
    base node count and the relative change is stored in ``convergence``.
    """
    c = min(2.0 ** (3 * j), 1.0)
    if t_range is not None:
        ts, vals, (slope, icpt, res) = _fit_samples(j, sign, np.geomspace(*t_range, n_samples), n_base)
    else:
        for shift in range(max_shifts + 1):
            lo = FIT_CLOCK_MIN * 2.0**shift / c
            ts, vals, (slope, icpt, res) = _fit_samples(j, sign, np.geomspace(lo, 8 * lo, n_samples), n_base)
            if res <= FIT_RESIDUAL_TOL:
                break
    conv = None
    if check_convergence:
        fine = sup_norm(j, sign, ts[-1], 2 * n_base)
        conv = abs(fine - vals[-1]) / fine
    return DecayFit(
        j=j,
        sign="+" if _sgn(sign) > 0 else "-",
        samples=[(float(t), float(v)) for t, v in zip(ts, vals)],
        exponent=slope,
        prefactor=float(np.exp(icpt)),
        residual=res,
        clocks=[float(x) for x in clock(j, ts)],
        convergence=conv,
    )


# --------------------------------------------------------------------------
# Hessian ranks
# --------------------------------------------------------------------------


def hessian_rank_map(sign, points, clearance: float = 1e-3, rel_tol: float = 1e-8):
    """Numerical rank of ``grad^2 lambda^{sign}`` at each point, with a histogram."""
    points = np.asarray(points, float)
    if np.any(eta(points, +1) < clearance) or np.any(eta(points, -1) < clearance):
        raise DomainError("lattice passes within the clearance of a singular point (0, 0, +-1)")
    ranks = hessian_rank(hessian_lambda(points, sign), rel_tol)
    hist = {int(k): int(v) for k, v in zip(*np.unique(ranks, return_counts=True))}
    return ranks, hist


# --------------------------------------------------------------------------
# Strichartz block norms
# --------------------------------------------------------------------------


def check_admissible(q: float, r: float) -> None:
    if not (1.0 / q + 1.0 / r <= 0.5 + 1e-15) or (math.isinf(q) and r == 2):
        raise DomainError(
            f"(q, r) = ({q}, {r}) is not admissible: need 1/q + 1/r <= 1/2 and (q, r) != (inf, 2)"
        )


@dataclass
class StrichartzResult:
    value: float
    times: np.ndarray
    lq_series: np.ndarray


def _block_lq(grid: Grid, q: np.ndarray, p: float) -> float:
    vals = inverse(q)
    mod = np.sqrt(np.sum(np.abs(vals) ** 2, axis=0))
    if math.isinf(p):
        return float(mod.max())
    return float((grid.volume * np.mean(mod**p)) ** (1 / p))


def strichartz_block_norm(
    state0: SpectralState,
    j: int,
    q: float,
    r: float,
    omega: float,
    eps: float,
    T: float,
    n_times: int = 256,
    params: Params | None = None,
) -> StrichartzResult:
    """``||Delta_j (a, u)||_{L^r(0, T; L^q)}`` along the exact linear flow.

    Inviscid (group of the ``(omega, eps)`` symbol) unless ``params`` is given,
    in which case the viscous semigroup of ``params`` is used.  Time quadrature
    is the trapezoid rule on ``n_times`` uniform intervals (max for ``r = inf``).
    """
    check_admissible(q, r)
    grid = state0.grid
    w = _weights(grid, j)
    mask = w > 0
    dt = T / n_times
    xi = mode_wavevectors(grid, mask)
    step = viscous_semigroup(xi, dt, params) if params is not None else inviscid_group(xi, dt, omega, eps)
    qv = np.where(mask, w * state0.stacked(), 0)
    series = np.empty(n_times + 1)
    for i in range(n_times + 1):
        if i:
            qv = apply_mode_matrices(step, qv, mask)
        series[i] = _block_lq(grid, qv, q)
    if math.isinf(r):
        val = float(series.max())
    else:
        vals = series**r
        val = float((dt * (vals.sum() - 0.5 * (vals[0] + vals[-1]))) ** (1 / r))
    return StrichartzResult(val, np.linspace(0, T, n_times + 1), series)


def inertial_polarize(state: SpectralState, omega: float, eps: float, mask: np.ndarray | None = None) -> SpectralState:
    """Project every mode onto the eigenvectors of ``+-i Omega lambda^-(xi/(Omega eps))``.

    These carry the slow (inertial) branch of the inviscid group; the fast
    ``lambda^+`` branch is removed.
    """
    grid = state.grid
    mask = (grid.kmag > 0) & ~grid.nyquist_mask if mask is None else mask
    xi = mode_wavevectors(grid, mask) / (omega * eps)
    q = state.stacked()
    out = np.zeros_like(q)
    cols = q[:, mask].T
    res = np.empty_like(cols)
    for n in range(len(xi)):
        es = eigensystem_inviscid(xi[n])
        V = es.vectors[:, [1, 2]]  # labels (+,-) and (-,-)
        res[n] = V @ (V.conj().T @ cols[n])
    out[:, mask] = res.T
    return SpectralState.from_stacked(grid, out, state.t)


# --------------------------------------------------------------------------
# Scaling fits
# --------------------------------------------------------------------------


@dataclass
class ScalingFit:
    slope: float
    intercept: float
    r2: float
    stderr: float

    def to_dict(self) -> dict:
        return {"slope": self.slope, "intercept": self.intercept, "r2": self.r2, "stderr": self.stderr}


def scaling_fit(x: Sequence[float], y: Sequence[float]) -> ScalingFit:
    """Ordinary least squares of ``log y`` on ``log x``."""
    x, y = np.asarray(x, float), np.asarray(y, float)
    if len(x) < 4:
        raise InsufficientDataError("scaling fit needs at least four points")
    if np.any(y <= 0) or np.any(x <= 0):
        raise DataError("scaling fit needs positive values")
    lx, ly = np.log(x), np.log(y)
    A = np.stack([lx, np.ones_like(lx)], axis=1)
    coef, *_ = np.linalg.lstsq(A, ly, rcond=None)
    pred = A @ coef
    ss_res = float(np.sum((ly - pred) ** 2))
    ss_tot = float(np.sum((ly - ly.mean()) ** 2))
    r2 = 1.0 if ss_tot == 0 else 1.0 - ss_res / ss_tot
    dof = max(len(x) - 2, 1)
    sxx = float(np.sum((lx - lx.mean()) ** 2))
    stderr = math.sqrt(ss_res / dof / sxx) if sxx > 0 else math.inf
    return ScalingFit(float(coef[0]), float(coef[1]), r2, stderr)


def joint_power_fit(features: np.ndarray, y: Sequence[float]) -> tuple[np.ndarray, float]:
    """Exponents ``e`` and intercept of ``log y = e . log features + c``."""
    F = np.log(np.asarray(features, float))
    y = np.asarray(y, float)
    if np.any(y <= 0):
        raise DataError("joint fit needs positive values")
    A = np.column_stack([F, np.ones(len(y))])
    coef, *_ = np.linalg.lstsq(A, np.log(y), rcond=None)
    return coef[:-1], float(coef[-1])


# --------------------------------------------------------------------------
# Strichartz scaling experiments
# --------------------------------------------------------------------------


def packet_data(grid: Grid, width: float, k0: float) -> SpectralState:
    """Gaussian envelope of the given ``width`` at the box centre times mixed carriers of size ``~k0``.

    The four components carry different carriers so no branch or polarisation
    is singled out.
    """
    X, Y, Z = grid.x
    c = grid.period / 2
    env = np.exp(-((X - c) ** 2 + (Y - c) ** 2 + (Z - c) ** 2) / (2 * width**2))
    a = env * np.cos(k0 * (2 * X + Z))
    u = np.stack(
        [env * np.sin(k0 * 2 * Y), env * np.cos(k0 * (2 * Z - X)), env * np.sin(k0 * (X + 2 * Z))]
    )
    return SpectralState.from_physical(grid, a, u)


@dataclass
class StrichartzSweep:
    """Block norms over a parameter sweep and their log-log fit."""

    j: int
    q: float
    r: float
    rows: list[dict]
    exponents: dict[str, float]
    expected: dict[str, float]
    r2: float | None = None

    def to_dict(self) -> dict:
        return {
            "j": self.j,
            "q": self.q,
            "r": self.r,
            "rows": self.rows,
            "exponents": self.exponents,
            "expected": self.expected,
            "r2": self.r2,
        }


def strichartz_high_band(
    omegas: Sequence[float] = (8, 16, 32, 64),
    q: float = 4,
    r: float = 4,
    j: int = 1,
    T: float = 4.0,
    n: int = 64,
    L: float = 8.0,
    n_times: int = 256,
) -> StrichartzSweep:
    """``||Delta_j (a, u)||_{L^r L^q}`` against ``Omega`` with ``eps = 1/Omega``, so ``2^j > Omega eps``."""
    grid = make_grid(n, 2 * np.pi * L)
    state0 = packet_data(grid, width=2.0, k0=1.0)
    rows = []
    for om in omegas:
        res = strichartz_block_norm(state0, j, q, r, float(om), 1.0 / om, T, n_times)
        rows.append({"omega": float(om), "eps": 1.0 / om, "T": T, "value": res.value})
    fit = scaling_fit([w["omega"] for w in rows], [w["value"] for w in rows])
    return StrichartzSweep(j, q, r, rows, {"omega": fit.slope}, {"omega": -1.0 / r}, fit.r2)


def strichartz_low_band(
    pairs: Sequence[tuple[float, float]] = ((4, 1 / 8), (4, 1 / 4), (8, 1 / 16), (8, 1 / 8), (16, 1 / 32), (16, 1 / 16)),
    q: float = 4,
    r: float = 4,
    j: int = -3,
    clock_target: float = 30.0,
    n: int = 32,
    L: float = 64.0,
    radians_per_step: float = 0.5,
) -> StrichartzSweep:
    """Joint fit of the block norm in ``Omega`` and ``eps`` for ``2^j <= Omega eps``.

    Data are polarised onto the inertial branch.  Each run lasts ``T = S tau``
    with ``tau = Omega^2 eps^3 / 2^{3j}`` the dispersive time of the branch, so
    every run reaches the same dispersive clock ``S``; the time step resolves
    the carrier rotation ``|xi_3| / eps``.
    """
    grid = make_grid(n, 2 * np.pi * L)
    base = packet_data(grid, width=2.0 / 2.0**j, k0=2.0**j)
    rows = []
    for om, ep in pairs:
        if not 2.0**j <= om * ep <= 1.0:
            raise DomainError(f"(Omega, eps) = ({om}, {ep}) is outside 2^j <= Omega eps <= 1")
        state0 = inertial_polarize(base, om, ep)
        tau = om**2 * ep**3 / 2.0 ** (3 * j)
        T = clock_target * tau
        n_times = int(math.ceil(T * 2.0 ** (j + 1) / ep / radians_per_step))
        res = strichartz_block_norm(state0, j, q, r, float(om), float(ep), T, n_times)
        rows.append({"omega": float(om), "eps": float(ep), "T": T, "n_times": n_times, "value": res.value})
    feats = np.array([[w["omega"], w["eps"]] for w in rows])
    e, _ = joint_power_fit(feats, [w["value"] for w in rows])
    return StrichartzSweep(j, q, r, rows, {"omega": float(e[0]), "eps": float(e[1])}, {"omega": 2.0 / r, "eps": 3.0 / r})
