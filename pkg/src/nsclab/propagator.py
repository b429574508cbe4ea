"""Exact per-mode linear evolution of ``(a, u)`` and the energy functionals built on it.

Every operator here is a Fourier multiplier acting on the 4-vector
``q = (a_hat, u_hat)`` of each retained mode.  Retained modes default to all
non-Nyquist modes; Nyquist coefficients are returned as zero.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy.integrate import cumulative_simpson

from .errors import BlowUpError, ContractError, DomainError
from .expm import expm, phi_functions
from .grid import Field, Grid, forward, inverse, make_grid, read_snapshot, write_snapshot
from .lp_besov import _weights
from .symbol import Params, inviscid_generator, viscous_symbol

CHUNK = 16384


@dataclass
class SpectralState:
    """Fourier coefficients of the density perturbation ``a`` and velocity ``u`` at time ``t``."""

    grid: Grid
    a: np.ndarray
    u: np.ndarray
    t: float = 0.0

    def __post_init__(self):
        self.a = np.asarray(self.a, dtype=complex)
        self.u = np.asarray(self.u, dtype=complex)
        if self.a.shape != self.grid.shape or self.u.shape != (3,) + self.grid.shape:
            raise ContractError("state arrays do not match the grid")
        if not (np.all(np.isfinite(self.a)) and np.all(np.isfinite(self.u))):
            raise BlowUpError("non-finite values in spectral state")

    @classmethod
    def zeros(cls, grid: Grid, t: float = 0.0) -> "SpectralState":
        return cls(grid, np.zeros(grid.shape, complex), np.zeros((3,) + grid.shape, complex), t)

    @classmethod
    def from_stacked(cls, grid: Grid, q: np.ndarray, t: float = 0.0) -> "SpectralState":
        return cls(grid, q[0], q[1:], t)

    @classmethod
    def from_physical(cls, grid: Grid, a, u, t: float = 0.0) -> "SpectralState":
        return cls(grid, forward(np.asarray(a, float)), forward(np.asarray(u, float)), t)

    def stacked(self) -> np.ndarray:
        return np.concatenate([self.a[None], self.u])

    def physical(self) -> tuple[np.ndarray, np.ndarray]:
        """Real physical-space ``(a, u)``."""
        return inverse(self.a).real, inverse(self.u).real

    def scaled(self, c: float) -> "SpectralState":
        return SpectralState(self.grid, c * self.a, c * self.u, self.t)

    def at(self, t: float) -> "SpectralState":
        return replace(self, t=float(t))

    def fields(self) -> tuple[Field, Field]:
        return Field(self.grid, self.a, "spectral"), Field(self.grid, self.u, "spectral")

    def l2_norm(self) -> float:
        """``||(a, u)||_{L^2(box)}``."""
        q = self.stacked()
        return float(np.sqrt(self.grid.volume * np.sum(np.abs(q) ** 2)))


def default_mask(grid: Grid) -> np.ndarray:
    return ~grid.nyquist_mask


def mode_wavevectors(grid: Grid, mask: np.ndarray) -> np.ndarray:
    """Wavevectors of the masked modes, shape ``(N, 3)`` in C order of the mask."""
    return grid.k[:, mask].T


def apply_mode_matrices(mats: np.ndarray, q: np.ndarray, mask: np.ndarray) -> np.ndarray:
    """Multiply each masked mode's 4-vector by its matrix; unmasked modes become zero."""
    out = np.zeros_like(q, dtype=complex)
    out[:, mask] = np.einsum("nij,jn->in", mats, q[:, mask])
    return out


def _chunked(fn, xi: np.ndarray) -> np.ndarray:
    parts = [fn(xi[i : i + CHUNK]) for i in range(0, len(xi), CHUNK)]
    return np.concatenate(parts) if parts else np.zeros((0, 4, 4), complex)


def inviscid_group(xi: np.ndarray, t: float, omega: float, eps: float) -> np.ndarray:
    """``exp(t G(xi))`` for the skew-Hermitian inviscid generator, via ``eigh`` of ``i G``."""

    def block(x):
        G = inviscid_generator(x, omega, eps)
        w, V = np.linalg.eigh(1j * G)
        phase = np.exp(-1j * t * w)
        return (V * phase[:, None, :]) @ np.conj(np.swapaxes(V, -1, -2))

    return _chunked(block, np.asarray(xi, float))


def viscous_semigroup(xi: np.ndarray, t: float, params: Params) -> np.ndarray:
    """``exp(-t M(xi))`` by scaling-and-squaring Pade(6)."""
    if t < 0:
        raise DomainError("the viscous semigroup only runs forward in time")
    return _chunked(lambda x: expm(-t * viscous_symbol(x, params)), np.asarray(xi, float))


def evolve_inviscid(
    state: SpectralState, t: float, omega: float, eps: float, mask: np.ndarray | None = None
) -> SpectralState:
    """Apply the unitary inviscid group for time ``t`` (any sign) to every mode.

    With ``omega = 0`` this is the pure acoustic group.
    """
    mask = default_mask(state.grid) if mask is None else mask
    U = inviscid_group(mode_wavevectors(state.grid, mask), t, omega, eps)
    q = apply_mode_matrices(U, state.stacked(), mask)
    return SpectralState.from_stacked(state.grid, q, state.t + t)


def evolve_viscous(
    state: SpectralState, t: float, params: Params, mask: np.ndarray | None = None
) -> SpectralState:
    """Apply ``exp(-t M)`` to every mode; ``t >= 0``."""
    mask = default_mask(state.grid) if mask is None else mask
    E = viscous_semigroup(mode_wavevectors(state.grid, mask), t, params)
    q = apply_mode_matrices(E, state.stacked(), mask)
    return SpectralState.from_stacked(state.grid, q, state.t + t)


def dissipativity_margin(xi: np.ndarray, params: Params) -> float:
    """Smallest eigenvalue of the Hermitian part of ``M`` over the given wavevectors (``>= 0``)."""
    M = viscous_symbol(np.atleast_2d(xi), params)
    H = 0.5 * (M + np.conj(np.swapaxes(M, -1, -2)))
    return float(np.min(np.linalg.eigvalsh(H)))


class LinearPropagator:
    """Cached one-step operators for fixed-step runs on one grid.

    ``L = -M(xi)`` per mode; holds ``exp(hL)``, ``exp(hL/2)``, ``phi_1(hL)``,
    ``phi_2(hL)`` for the retained modes.
    """

    def __init__(self, grid: Grid, params: Params, dt: float, mask: np.ndarray | None = None, phis: bool = False):
        if not dt > 0:
            raise DomainError("time step must be positive")
        self.grid, self.params, self.dt = grid, params, float(dt)
        self.mask = default_mask(grid) if mask is None else mask
        xi = mode_wavevectors(grid, self.mask)
        self.E = viscous_semigroup(xi, dt, params)
        self.E_half = viscous_semigroup(xi, dt / 2, params)
        self.phi1 = self.phi2 = None
        if phis:
            p1, p2 = [], []
            for i in range(0, len(xi), CHUNK // 4):
                _, a, b = phi_functions(-dt * viscous_symbol(xi[i : i + CHUNK // 4], params))
                p1.append(a)
                p2.append(b)
            self.phi1 = np.concatenate(p1)
            self.phi2 = np.concatenate(p2)

    def apply(self, mats: np.ndarray, q: np.ndarray) -> np.ndarray:
        return apply_mode_matrices(mats, q, self.mask)


def duhamel(
    state0: SpectralState,
    forcing: Sequence[SpectralState],
    t_grid: Sequence[float],
    params: Params,
    mask: np.ndarray | None = None,
) -> list[SpectralState]:
    """Forced linear trajectory ``q' = -M q + F`` on a uniform time grid.

    Exponential midpoint rule with the forcing averaged over each step::

        q_{n+1} = e^{-hM} q_n + h e^{-hM/2} (F_n + F_{n+1}) / 2

    which is second order in ``h``.
    """
    t = np.asarray(t_grid, dtype=float)
    if len(forcing) != len(t) or len(t) < 1:
        raise ContractError("forcing must be sampled on every point of the time grid")
    if len(t) > 1:
        d = np.diff(t)
        if np.any(d <= 0) or np.max(np.abs(d - d[0])) > 1e-9 * d[0]:
            raise ContractError("time grid must be uniform and increasing")
    for f in forcing:
        if f.grid != state0.grid:
            raise ContractError("forcing lives on a different grid")
    out = [state0.at(t[0])]
    if len(t) == 1:
        return out
    h = t[1] - t[0]
    prop = LinearPropagator(state0.grid, params, h, mask)
    q = state0.stacked()
    F_prev = forcing[0].stacked()
    for n in range(1, len(t)):
        F_next = forcing[n].stacked()
        q = prop.apply(prop.E, q) + h * prop.apply(prop.E_half, 0.5 * (F_prev + F_next))
        out.append(SpectralState.from_stacked(state0.grid, q, t[n]))
        F_prev = F_next
    return out


# --------------------------------------------------------------------------
# Scaling transform
# --------------------------------------------------------------------------


def to_unit_scale(xi, t, omega: float, eps: float):
    """Map ``(xi, t)`` of the ``(Omega, eps)`` inviscid system to the unit system.

    ``exp(t G_{Omega,eps}(xi)) = exp(Omega t A(xi / (Omega eps)))``.
    """
    return np.asarray(xi, float) / (omega * eps), omega * np.asarray(t, float)


def from_unit_scale(xi_unit, t_unit, omega: float, eps: float):
    return np.asarray(xi_unit, float) * (omega * eps), np.asarray(t_unit, float) / omega


# --------------------------------------------------------------------------
# Effective velocity and energy functionals
# --------------------------------------------------------------------------


def effective_velocity(state: SpectralState, eps: float) -> np.ndarray:
    """``w_hat = u_hat + eps^-1 (i xi / |xi|^2) a_hat``, so ``div w = div u - a / eps``.

    The correction at ``xi = 0`` is set to zero.
    """
    g = state.grid
    k2 = g.k2
    with np.errstate(divide="ignore", invalid="ignore"):
        inv = np.where(k2 > 0, 1.0 / np.where(k2 > 0, k2, 1.0), 0.0)
    return state.u + (1j * g.k * inv) * state.a / eps


def block_energy(state: SpectralState, j: int) -> float:
    """``||Delta_j (a, u)||^2_{L^2}``."""
    w = _weights(state.grid, j)
    return float(state.grid.volume * np.sum(w**2 * np.abs(state.stacked()) ** 2))


def block_dissipation(state: SpectralState, j: int, params: Params) -> float:
    """``mu ||grad Delta_j u||^2 + (mu + mu') ||div Delta_j u||^2``."""
    g = state.grid
    w = _weights(g, j)
    u = w * state.u
    grad2 = np.sum(g.k2 * np.abs(u) ** 2)
    div2 = np.sum(np.abs(np.sum(g.k * u, axis=0)) ** 2)
    return float(g.volume * (params.mu * grad2 + (params.mu + params.mu_prime) * div2))


def v_functional(state: SpectralState, j: int, eps: float, delta: float) -> float:
    """``V_j^2 = ||Delta_j (a,u)||^2 + 2 delta Re <eps grad Delta_j a, Delta_j u>``."""
    g = state.grid
    w = _weights(g, j)
    grad_a = 1j * g.k * (w * state.a)
    cross = np.sum(np.conj(eps * grad_a) * (w * state.u)).real
    return block_energy(state, j) + 2 * delta * float(g.volume * cross)


def sandwich_ratio(state: SpectralState, j: int, eps: float, delta: float) -> float:
    """``V_j^2 / ||Delta_j (a,u)||^2`` (nan for an empty block)."""
    e = block_energy(state, j)
    return v_functional(state, j, eps, delta) / e if e > 0 else math.nan


def choose_delta(states: Sequence[SpectralState], js, eps: float, mu: float, max_halvings: int = 30) -> float:
    """Start from ``0.1 min(mu, 1)`` and halve until ``1/2 <= V_j^2 / ||Delta_j(a,u)||^2 <= 3/2``
    on every given state and block."""
    delta = 0.1 * min(mu, 1.0)
    for _ in range(max_halvings):
        ratios = [sandwich_ratio(s, j, eps, delta) for s in states for j in js]
        ratios = [r for r in ratios if not math.isnan(r)]
        if all(0.5 <= r <= 1.5 for r in ratios):
            return delta
        delta /= 2
    raise DomainError("no delta found satisfying the V_j sandwich")


@dataclass
class EnergyIdentityResult:
    times: np.ndarray
    energy: np.ndarray
    dissipation: np.ndarray
    residual: np.ndarray

    @property
    def max_relative_residual(self) -> float:
        e0 = self.energy[0]
        return float(np.max(np.abs(self.residual)) / e0) if e0 > 0 else 0.0


def energy_identity(state0: SpectralState, params: Params, j: int, T: float, n_intervals: int = 2000) -> EnergyIdentityResult:
    """Block energy balance of the unforced linear flow::

        ||Delta_j q(t)||^2 + 2 int_0^t (mu ||grad Delta_j u||^2 + (mu+mu') ||div Delta_j u||^2) = ||Delta_j q_0||^2

    States come from the exact semigroup on the block's modes; the time
    integral uses cumulative Simpson quadrature on ``n_intervals`` steps.
    """
    mask = _weights(state0.grid, j) > 0
    times = np.linspace(0.0, T, n_intervals + 1)
    E = viscous_semigroup(mode_wavevectors(state0.grid, mask), times[1], params)
    state = state0
    energy = np.empty(len(times))
    diss = np.empty(len(times))
    q = state0.stacked()
    q = np.where(mask, q, 0)
    for i in range(len(times)):
        if i:
            q = apply_mode_matrices(E, q, mask)
        state = SpectralState.from_stacked(state0.grid, q, times[i])
        energy[i] = block_energy(state, j)
        diss[i] = block_dissipation(state, j, params)
    integral = np.concatenate([[0.0], cumulative_simpson(diss, x=times)])
    residual = energy + 2 * integral - energy[0]
    return EnergyIdentityResult(times, energy, diss, residual)


def density_relaxation_rate(xi, params: Params, t_fit) -> float:
    """Fitted decay rate of ``|a_hat(t)|`` for a single mode started from ``a = 1, u = 0``.

    Returns the least-squares slope of ``log |a_hat|`` over ``t_fit`` (negative for decay).
    """
    t_fit = np.asarray(t_fit, float)
    vals = []
    for t in t_fit:
        E = expm(-t * viscous_symbol(np.asarray(xi, float), params))
        vals.append(abs(E[0, 0]))
    return float(np.polyfit(t_fit, np.log(vals), 1)[0])


@dataclass
class BlockRelaxation:
    j: int
    fitted_rate: float
    slow_root: float  # slowest decay among the block's modes (generator eigenvalue, real part)
    target: float  # -1 / (nu eps^2)

    def to_dict(self) -> dict:
        return {"j": self.j, "fitted_rate": self.fitted_rate, "slow_root": self.slow_root, "target": self.target}


def block_relaxation(params: Params, j: int, n: int = 32, t_fit=None, seed: int = 0) -> BlockRelaxation:
    """Decay rate of ``||Delta_j a||`` for random density-only data under the linear flow.

    The box is sized so that block ``j`` is the top resolved block.  ``t_fit``
    defaults to ``[2, 10] eps^2`` (after the viscous transient of ``u``).
    """
    from .symbol import slow_root

    L = n / 2.0 ** (j + 2)
    grid = make_grid(n, 2 * np.pi * L)
    rng = np.random.default_rng(seed)
    w = _weights(grid, j)
    a = w * forward(rng.normal(size=grid.shape))
    state = SpectralState(grid, a, np.zeros((3,) + grid.shape, complex))
    t_fit = np.linspace(2, 10, 17) * params.eps**2 if t_fit is None else np.asarray(t_fit, float)
    vals = [np.sqrt(np.sum(np.abs(evolve_viscous(state, t, params).a) ** 2)) for t in t_fit]
    rate = float(np.polyfit(t_fit, np.log(vals), 1)[0])
    mask = (w > 0) & ~grid.nyquist_mask
    xi = mode_wavevectors(grid, mask)
    roots = [slow_root(x, params).real for x in xi[:: max(1, len(xi) // 400)]]
    return BlockRelaxation(j, rate, float(max(roots)), -1.0 / (params.nu * params.eps**2))


# --------------------------------------------------------------------------
# Trajectory files
# --------------------------------------------------------------------------


def save_trajectory(directory, states: Sequence[SpectralState], params: Params | None = None) -> Path:
    """One snapshot file per state plus ``index.json`` with the times and parameters."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    files = []
    for i, s in enumerate(states):
        name = f"snap_{i:05d}.rcsf"
        a, u = s.fields()
        write_snapshot(directory / name, [a, u])
        files.append(name)
    index = {
        "times": [float(s.t) for s in states],
        "files": files,
        "params": None if params is None else {
            "mu": params.mu, "mu_prime": params.mu_prime, "eps": params.eps,
            "omega": params.omega, "gamma": params.gamma,
        },
    }
    path = directory / "index.json"
    path.write_text(json.dumps(index, indent=1))
    return path


def load_trajectory(directory) -> tuple[list[SpectralState], dict]:
    directory = Path(directory)
    index = json.loads((directory / "index.json").read_text())
    states = []
    for t, name in zip(index["times"], index["files"]):
        grid, rep, comps = read_snapshot(directory / name)
        if rep != "spectral" or len(comps) != 4:
            raise ContractError(f"{name} is not a spectral (a, u) snapshot")
        states.append(SpectralState(grid, comps[0], np.stack(comps[1:]), t))
    return states, index
