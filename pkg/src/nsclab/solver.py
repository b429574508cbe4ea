"""Pseudospectral integrator for the rescaled compressible rotating system.

Per mode ``q = (a_hat, u_hat)`` obeys ``dq/dt = -M(xi) q + F(q)`` with the exact
linear part taken from :mod:`nsclab.propagator` and the nonlinear right-hand side
``F = (-div(a u), -N_eps[a, u])`` evaluated pseudospectrally::

    N_eps = (u.grad) u + J(eps a) L u + eps^-1 K(eps a) grad a,
    J(b) = b / (1 + b),  K(b) = P'(1 + b) / (1 + b) - 1,  P(rho) = rho^gamma / gamma.

Time stepping is ETDRK2 (Cox-Matthews).  Monitors record the per-block
series from which the energy, auxiliary and combined norms are assembled.
"""

from __future__ import annotations

import csv
import hashlib
import json
import math
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
import yaml
from scipy.integrate import cumulative_simpson

from .errors import BlowUpError, ConfigurationError, VacuumProximityError
from .grid import Grid, forward, inverse, make_grid, read_snapshot, write_snapshot
from .lp_besov import Band, DyadicDecomposition, _lsigma, _time_norm, _weights, high, low, mid
from .propagator import (
    LinearPropagator,
    SpectralState,
    block_dissipation,
    block_energy,
    choose_delta,
    sandwich_ratio,
)
from .symbol import Params

Forcing = Callable[[float], SpectralState]

# --------------------------------------------------------------------------
# Configuration
# --------------------------------------------------------------------------


@dataclass
class GridSpec:
    n: int = 32
    L: float = 16.0  # box side 2 pi L

    def build(self) -> Grid:
        return make_grid(self.n, 2 * np.pi * self.L)


@dataclass
class InitialSpec:
    profile: str = "taylor_green_gaussian"
    amplitude: float = 0.1
    seed: int = 0
    snapshot: str | None = None
    options: dict = field(default_factory=dict)


@dataclass
class MonitorSpec:
    cadence: int = 10  # steps between samples
    q: float = 4.0
    r: float = 4.0
    alpha: float = 1.0
    beta0: float = 4.0
    delta: float | None = None  # V_j cross-term weight; chosen from the data when None


@dataclass
class SimulationConfig:
    """A run: grid, constants, initial data, time window and monitors.

    ``blowup_density`` and ``blowup_growth`` are the stopping thresholds for
    ``min(1 + eps a)`` and for the growth of the energy norm.
    """

    grid: GridSpec = field(default_factory=GridSpec)
    params: Params = field(default_factory=lambda: Params(mu=0.5, mu_prime=0.0, eps=0.1, omega=10.0))
    ic: InitialSpec = field(default_factory=InitialSpec)
    T: float = 1.0
    dt: float = 0.01
    monitors: MonitorSpec = field(default_factory=MonitorSpec)
    blowup_density: float = 0.05
    blowup_growth: float = 1e6

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        if not self.dt > 0:
            raise ConfigurationError(f"dt must be positive, got {self.dt}")
        if not self.T >= self.dt:
            raise ConfigurationError(f"T = {self.T} must be at least dt = {self.dt}")
        if self.monitors.cadence < 1:
            raise ConfigurationError("monitor cadence must be at least one step")
        self.params.check_rescaled()
        NormSettings(self.params.eps, self.monitors.alpha, self.monitors.beta0, self.monitors.q, self.monitors.r)

    @property
    def n_steps(self) -> int:
        n = int(round(self.T / self.dt))
        if abs(n * self.dt - self.T) > 1e-9 * self.T:
            raise ConfigurationError(f"T = {self.T} is not a whole number of steps dt = {self.dt}")
        return n

    def to_dict(self) -> dict:
        return {
            "grid": asdict(self.grid),
            "params": asdict(self.params),
            "ic": asdict(self.ic),
            "time": {"T": self.T, "dt": self.dt},
            "monitors": asdict(self.monitors),
            "blowup": {"density": self.blowup_density, "growth": self.blowup_growth},
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SimulationConfig":
        known = {"grid", "params", "ic", "time", "monitors", "blowup"}
        extra = set(d) - known
        if extra:
            raise ConfigurationError(f"unknown config sections {sorted(extra)}; expected {sorted(known)}")
        try:
            t = d.get("time", {})
            b = d.get("blowup", {})
            return cls(
                grid=GridSpec(**d.get("grid", {})),
                params=Params(**d.get("params", {})),
                ic=InitialSpec(**d.get("ic", {})),
                T=float(t.get("T", 1.0)),
                dt=float(t.get("dt", 0.01)),
                monitors=MonitorSpec(**d.get("monitors", {})),
                blowup_density=float(b.get("density", 0.05)),
                blowup_growth=float(b.get("growth", 1e6)),
            )
        except TypeError as exc:
            raise ConfigurationError(f"bad config entry: {exc}") from None

    @classmethod
    def from_yaml(cls, path) -> "SimulationConfig":
        data = yaml.safe_load(Path(path).read_text()) or {}
        if not isinstance(data, dict):
            raise ConfigurationError(f"{path}: top level must be a mapping")
        return cls.from_dict(data)

    def to_yaml(self) -> str:
        return yaml.safe_dump(self.to_dict(), sort_keys=True)

    def config_hash(self) -> str:
        return hashlib.sha256(json.dumps(self.to_dict(), sort_keys=True).encode()).hexdigest()[:16]

    def with_params(self, **kw) -> "SimulationConfig":
        return replace(self, params=replace(self.params, **kw))


# --------------------------------------------------------------------------
# Initial data
# --------------------------------------------------------------------------


def taylor_green_gaussian(grid: Grid, amplitude: float, mode: int = 1, width: float | None = None) -> SpectralState:
    """Taylor-Green velocity on the box mode ``mode`` plus a Gaussian density bump at the centre.

    Both fields have maximum ``amplitude``.
    """
    X, Y, Z = grid.x
    k = 2 * np.pi * mode / grid.period
    u = np.stack(
        [
            np.sin(k * X) * np.cos(k * Y) * np.cos(k * Z),
            -np.cos(k * X) * np.sin(k * Y) * np.cos(k * Z),
            np.zeros_like(X),
        ]
    )
    c = grid.period / 2
    w = grid.period / 8 if width is None else width
    a = np.exp(-((X - c) ** 2 + (Y - c) ** 2 + (Z - c) ** 2) / (2 * w**2))
    return SpectralState.from_physical(grid, amplitude * a, amplitude * u)


def random_band_limited(
    grid: Grid, amplitude: float, seed: int = 0, k_lo: float | None = None, k_hi: float | None = None, s: float = 0.5
) -> SpectralState:
    """Random-phase fields supported on ``k_lo <= |k| <= k_hi`` with ``|coef| ~ |k|^{-(s + 3/2)}``.

    The slope gives every dyadic block the same ``B^s_{2,.}`` weight.  Each
    component is scaled to maximum modulus ``amplitude``.
    """
    rng = np.random.default_rng(seed)
    km = grid.kmag
    k_lo = 2 * grid.spacing if k_lo is None else k_lo
    k_hi = grid.k_axis_max / 2 if k_hi is None else k_hi
    band = (km >= k_lo) & (km <= k_hi) & ~grid.nyquist_mask
    with np.errstate(divide="ignore"):
        prof = np.where(band, np.where(km > 0, km, 1.0) ** (-(s + 1.5)), 0.0)
    comps = []
    for _ in range(4):
        phase = np.exp(2j * np.pi * rng.random(grid.shape))
        mag = rng.rayleigh(1.0, grid.shape)
        vals = inverse(prof * mag * phase).real
        peak = np.max(np.abs(vals))
        comps.append(amplitude * vals / peak if peak > 0 else vals)
    return SpectralState.from_physical(grid, comps[0], np.stack(comps[1:]))


PROFILES = {"taylor_green_gaussian": taylor_green_gaussian, "random_band_limited": random_band_limited}


def initial_state(config: SimulationConfig) -> SpectralState:
    """Initial data of a run; checks ``1 + eps a_0 > 0`` on the grid."""
    ic = config.ic
    grid = config.grid.build()
    if ic.snapshot:
        g, rep, comps = read_snapshot(ic.snapshot)
        if g != grid or len(comps) != 4:
            raise ConfigurationError(f"{ic.snapshot} does not hold (a, u) on the configured grid")
        if rep == "spectral":
            state = SpectralState(grid, comps[0], np.stack(comps[1:]))
        else:
            state = SpectralState.from_physical(grid, comps[0], np.stack(comps[1:]))
        state = state.scaled(ic.amplitude) if ic.amplitude != 1 else state
    else:
        if ic.profile not in PROFILES:
            raise ConfigurationError(f"unknown profile {ic.profile!r}; known: {sorted(PROFILES)}")
        opts = dict(ic.options)
        if ic.profile == "random_band_limited":
            opts.setdefault("seed", ic.seed)
        state = PROFILES[ic.profile](grid, ic.amplitude, **opts)
    a = inverse(state.a).real
    if np.min(1 + config.params.eps * a) <= 0:
        raise ConfigurationError("initial density 1 + eps a_0 is not positive everywhere")
    return state


# --------------------------------------------------------------------------
# Nonlinear terms
# --------------------------------------------------------------------------


def K_function(b: np.ndarray, gamma: float) -> np.ndarray:
    """``P'(1 + b) / (1 + b) - 1 = (1 + b)^(gamma - 2) - 1``; zero for ``gamma = 2``."""
    if gamma == 2:
        return np.zeros_like(b)
    return (1 + b) ** (gamma - 2) - 1


def J_function(b: np.ndarray) -> np.ndarray:
    return b / (1 + b)


def _deriv(grid: Grid, coeffs: np.ndarray, axis: int) -> np.ndarray:
    return inverse(1j * grid.k[axis] * coeffs).real


def nonlinearity(state: SpectralState, params: Params, with_density: bool = False):
    """``(-div(a u), -N_eps[a, u])`` with 2/3-rule dealiasing of inputs and outputs.

    Raises :class:`VacuumProximityError` when ``eps a <= -1/2`` somewhere.  With
    ``with_density`` also returns ``min(1 + eps a)`` of the dealiased density.
    """
    g = state.grid
    D = g.dealias_mask
    ah, uh = state.a * D, state.u * D
    a = inverse(ah).real
    u = inverse(uh).real
    ea = params.eps * a
    ea_min = float(ea.min())
    if ea_min <= -0.5:
        raise VacuumProximityError(f"eps*a reaches {ea_min:.3g} <= -1/2")
    adv = np.zeros_like(u)
    for kx in range(3):
        for i in range(3):
            adv[i] += u[kx] * _deriv(g, uh[i], kx)
    kdotu = np.sum(g.k * uh, axis=0)
    Lu_h = -params.mu * g.k2 * uh - (params.mu + params.mu_prime) * g.k * kdotu
    N = adv + J_function(ea) * inverse(Lu_h).real
    if params.gamma != 2:
        K = K_function(ea, params.gamma)
        N += K * np.stack([_deriv(g, ah, i) for i in range(3)]) / params.eps
    au_h = forward(a * u)
    Fa = -np.sum(1j * g.k * au_h, axis=0) * D
    Fu = -forward(N) * D
    out = SpectralState(g, Fa, Fu, state.t)
    return (out, 1.0 + ea_min) if with_density else out


# --------------------------------------------------------------------------
# Time stepping
# --------------------------------------------------------------------------


def stability_limit(state: SpectralState, params: Params) -> float:
    """``0.5 min(dx / max|u|, eps dx / max|K(eps a)|)``; the linear stiffness is exact and absent."""
    g = state.grid
    a, u = state.physical()
    umax = float(np.max(np.sqrt(np.sum(u**2, axis=0))))
    kmax = float(np.max(np.abs(K_function(params.eps * a, params.gamma))))
    lim_u = g.dx / umax if umax > 0 else math.inf
    lim_k = params.eps * g.dx / kmax if kmax > 0 else math.inf
    return 0.5 * min(lim_u, lim_k)


class ETDRK2:
    """Cox-Matthews exponential Runge-Kutta of order two on the retained modes.

    ``a = E q + h phi_1 F(q)``, ``q+ = a + h phi_2 (F(a) - F(q))`` with
    ``E = exp(-h M)``.  With ``nonlinear=False`` only the forcing (if any)
    enters ``F``.
    """

    def __init__(self, grid: Grid, params: Params, dt: float, nonlinear: bool = True, forcing: Forcing | None = None):
        params.check_rescaled()
        self.grid, self.params, self.dt = grid, params, float(dt)
        self.nonlinear, self.forcing = nonlinear, forcing
        self.lin = LinearPropagator(grid, params, dt, phis=True)
        self.last_density = math.nan

    def rhs(self, state: SpectralState) -> SpectralState:
        if self.nonlinear:
            F, self.last_density = nonlinearity(state, self.params, with_density=True)
            q = F.stacked()
        else:
            q = np.zeros((4,) + self.grid.shape, complex)
        if self.forcing is not None:
            q = q + self.forcing(state.t).stacked()
        return SpectralState.from_stacked(self.grid, q, state.t)

    def step(self, state: SpectralState, F0: SpectralState | None = None) -> SpectralState:
        h = self.dt
        q = state.stacked()
        F0 = self.rhs(state) if F0 is None else F0
        f0 = F0.stacked()
        mid = self.lin.apply(self.lin.E, q) + h * self.lin.apply(self.lin.phi1, f0)
        a = _finite(mid, state, self.grid, state.t + h)
        if self.nonlinear or self.forcing is not None:
            fa = self.rhs(a).stacked()
            new = mid + h * self.lin.apply(self.lin.phi2, fa - f0)
        else:
            new = mid
        return _finite(new, state, self.grid, state.t + h)


def _finite(q: np.ndarray, last: SpectralState, grid: Grid, t: float) -> SpectralState:
    if not np.all(np.isfinite(q)):
        raise BlowUpError("non-finite values after a step", last_state=last)
    return SpectralState.from_stacked(grid, q, t)


def step(state: SpectralState, dt: float, params: Params) -> SpectralState:
    """One ETDRK2 step (builds the per-mode operators; use :class:`ETDRK2` for runs)."""
    return ETDRK2(state.grid, params, dt).step(state)


# --------------------------------------------------------------------------
# Norm framework
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class NormSettings:
    """Cutoffs and exponents of the energy and auxiliary norms.

    Bands: ``l`` is ``2^j <= alpha``, ``m`` is ``alpha < 2^j <= beta0/eps`` and
    ``h`` is ``2^j > beta0/eps``; the energy norm splits at ``beta0/eps`` only.
    """

    eps: float
    alpha: float
    beta0: float
    q: float = 4.0
    r: float = 4.0

    def __post_init__(self):
        if not (self.alpha > 0 and self.eps > 0 and self.beta0 > 0):
            raise ConfigurationError("alpha, eps and beta0 must be positive")
        if not self.alpha <= self.beta0 / self.eps:
            raise ConfigurationError(f"alpha = {self.alpha} exceeds beta0/eps = {self.beta0 / self.eps}")
        if not (self.q >= 1 and self.r > 1):
            raise ConfigurationError("need q >= 1 and r > 1")

    @property
    def split(self) -> float:
        return self.beta0 / self.eps

    @property
    def bands(self) -> dict[str, Band]:
        return {
            "El": low(self.split),
            "Eh": high(self.split),
            "Al": low(self.alpha),
            "Am": mid(self.alpha, self.split) if self.alpha < self.split else Band("low", alpha=0.0),
            "Ah": high(self.split),
        }


def _series_norm(series: dict[int, np.ndarray], js: Sequence[int], s: float, r: float, dt: float, tilde: bool) -> float:
    """Time-space norm of per-block series: ``L^r_t`` of ``sum_j 2^{sj} S_j`` (or per block if ``tilde``)."""
    if not js:
        return 0.0
    n = len(series[js[0]])
    if n == 1 and not math.isinf(r):
        return 0.0
    if tilde:
        return _lsigma([2.0 ** (s * j) * _time_norm(series[j], dt, r) for j in js], 1)
    total = np.sum([2.0 ** (s * j) * series[j] for j in js], axis=0)
    return _time_norm(total, dt, r)


@dataclass
class BlockLedger:
    """Per-block time series: ``L^2`` and ``L^q`` norms of ``Delta_j a`` and ``Delta_j u``."""

    js: list[int]
    q: float
    times: list[float] = field(default_factory=list)
    a2: dict[int, list] = field(default_factory=dict)
    u2: dict[int, list] = field(default_factory=dict)
    aq: dict[int, list] = field(default_factory=dict)
    uq: dict[int, list] = field(default_factory=dict)

    def __post_init__(self):
        for d in (self.a2, self.u2, self.aq, self.uq):
            for j in self.js:
                d.setdefault(j, [])

    def record(self, state: SpectralState) -> None:
        from .lp_besov import block_lp_norm

        g = state.grid
        self.times.append(float(state.t))
        for j in self.js:
            self.a2[j].append(block_lp_norm(g, state.a, j, 2))
            self.u2[j].append(block_lp_norm(g, state.u, j, 2))
            self.aq[j].append(block_lp_norm(g, state.a, j, self.q))
            self.uq[j].append(block_lp_norm(g, state.u, j, self.q))

    def arrays(self, upto: int | None = None):
        k = len(self.times) if upto is None else upto
        conv = lambda d: {j: np.asarray(v[:k], float) for j, v in d.items()}
        return conv(self.a2), conv(self.u2), conv(self.aq), conv(self.uq)

    def dt(self) -> float:
        t = np.asarray(self.times)
        return float(t[1] - t[0]) if len(t) > 1 else 0.0


def d_norm(state0: SpectralState, settings: NormSettings, decomposition: DyadicDecomposition | None = None) -> float:
    """``||(a0,u0)||^{l}_{B^{1/2}_{2,1}} + ||(eps a0, u0)||^{h}_{B^{3/2} x B^{1/2}}``, split at ``beta0/eps``."""
    dec = decomposition or DyadicDecomposition.for_grid(state0.grid)
    led = BlockLedger(list(dec.js), settings.q)
    led.record(state0)
    a2, u2, _, _ = led.arrays()
    b = settings.bands
    lo = [j for j in led.js if b["El"].contains(j)]
    hi = [j for j in led.js if b["Eh"].contains(j)]
    val = sum(2.0 ** (0.5 * j) * (a2[j][0] + u2[j][0]) for j in lo)
    val += sum(settings.eps * 2.0 ** (1.5 * j) * a2[j][0] + 2.0 ** (0.5 * j) * u2[j][0] for j in hi)
    return float(val)


def norms_from_ledger(ledger: BlockLedger, settings: NormSettings, upto: int | None = None) -> dict[str, float]:
    """``E_eps(t)``, ``A^{q,r}_{eps,alpha}(t)`` and the combined norm over the first ``upto`` samples.

    Pair norms are sums of the component norms.
    """
    a2, u2, aq, uq = ledger.arrays(upto)
    dt = ledger.dt()
    eps, q, r = settings.eps, settings.q, settings.r
    b = settings.bands
    js = ledger.js
    sel = {k: [j for j in js if band.contains(j)] for k, band in b.items()}
    inf = math.inf
    N = _series_norm
    E = 0.0
    for S in (a2, u2):
        E += N(S, sel["El"], 0.5, inf, dt, True) + N(S, sel["El"], 2.5, 1, dt, True)
    E += eps * N(a2, sel["Eh"], 1.5, inf, dt, False) + N(a2, sel["Eh"], 1.5, 1, dt, False) / eps
    E += N(u2, sel["Eh"], 0.5, inf, dt, False) + N(u2, sel["Eh"], 2.5, 1, dt, False)
    s0 = 3.0 / q - 1.0
    A = 0.0
    for S in (aq, uq):
        A += N(S, sel["Al"], s0 + 2.0 / r, r, dt, False)
        A += N(S, sel["Am"], s0, inf, dt, False) + N(S, sel["Am"], s0 + 2, 1, dt, False)
    A += eps * N(aq, sel["Ah"], 3.0 / q, inf, dt, False) + N(aq, sel["Ah"], 3.0 / q, 1, dt, False) / eps
    A += N(uq, sel["Ah"], s0, inf, dt, False) + N(uq, sel["Ah"], s0 + 2, 1, dt, False)
    return {"E": E, "A": A, "calA": combined_norm(E, A, settings)}


def combined_norm(E: float, A: float, settings: NormSettings) -> float:
    """``alpha eps E + A + E^{(r-2)/(r-1)} A^{1/(r-1)}``."""
    r = settings.r
    return settings.alpha * settings.eps * E + A + E ** ((r - 2) / (r - 1)) * A ** (1 / (r - 1))


def norms_framework(
    times: Sequence[float], states: Sequence[SpectralState], settings: NormSettings
) -> dict[str, float]:
    """``D_eps``, ``E_eps(t)``, ``A^{q,r}_{eps,alpha}(t)`` and the combined norm at the last time."""
    dec = DyadicDecomposition.for_grid(states[0].grid)
    led = BlockLedger(list(dec.js), settings.q)
    for t, s in zip(times, states):
        led.record(s.at(t))
    out = norms_from_ledger(led, settings)
    out["D"] = d_norm(states[0], settings, dec)
    return out


# --------------------------------------------------------------------------
# Monitors
# --------------------------------------------------------------------------


@dataclass
class MonitorSeries:
    """Per-sample records of a run.

    Columns: ``t``, ``D``, ``E``, ``A``, ``calA``, ``min_density``, ``max_u``,
    ``energy`` (dealiased ``L^2`` energy), ``dt_limit``, then ``vj_ratio_<j>``
    for mid-band blocks and ``residual_<j>`` (block energy balance, relative to
    the initial block energy) for every block.
    """

    settings: NormSettings
    ledger: BlockLedger
    records: list[dict] = field(default_factory=list)
    block_energy: dict[int, list] = field(default_factory=dict)
    block_diss: dict[int, list] = field(default_factory=dict)
    block_power: dict[int, list] = field(default_factory=dict)
    mid_js: list[int] = field(default_factory=list)
    high_js: list[int] = field(default_factory=list)
    delta: float = 0.0
    D: float = 0.0

    @property
    def columns(self) -> list[str]:
        base = ["t", "D", "E", "A", "calA", "min_density", "max_u", "energy", "dt_limit"]
        return base + [f"vj_ratio_{j}" for j in self.mid_js] + [f"residual_{j}" for j in self.ledger.js]

    def residuals(self) -> dict[int, np.ndarray]:
        """Discrete block balance ``e_j(t) - e_j(0) + 2 int D_j - 2 int P_j`` over ``e_j(0)``.

        ``D_j`` is the viscous dissipation and ``P_j = Re <Delta_j F, Delta_j q>``.
        Time integrals use cumulative Simpson on the samples.
        """
        t = np.asarray(self.ledger.times)
        out = {}
        for j in self.ledger.js:
            e = np.asarray(self.block_energy[j])
            if len(t) < 2:
                out[j] = np.zeros(len(t))
                continue
            d = np.concatenate([[0.0], cumulative_simpson(np.asarray(self.block_diss[j]), x=t)])
            p = np.concatenate([[0.0], cumulative_simpson(np.asarray(self.block_power[j]), x=t)])
            out[j] = (e - e[0] + 2 * d - 2 * p) / e[0] if e[0] > 0 else np.zeros(len(t))
        return out

    def rows(self) -> list[dict]:
        res = self.residuals()
        rows = []
        for i, rec in enumerate(self.records):
            row = dict(rec)
            for j in self.ledger.js:
                row[f"residual_{j}"] = float(res[j][i])
            rows.append(row)
        return rows

    def column(self, name: str) -> np.ndarray:
        return np.array([r[name] for r in self.rows()], float)

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(self.columns)
            for row in self.rows():
                w.writerow([_fmt(row[c]) for c in self.columns])

    def high_band_report(self) -> dict[int, float]:
        """``eps^-1 int ||Delta_j a||_{L^2}`` over ``||Delta_j (eps a_0, u_0)||_{L^2}`` per high-band block."""
        a2, u2, _, _ = self.ledger.arrays()
        dt = self.ledger.dt()
        out = {}
        for j in self.high_js:
            init = self.settings.eps * a2[j][0] + u2[j][0]
            integral = _time_norm(a2[j], dt, 1) if len(a2[j]) > 1 else 0.0
            out[j] = integral / self.settings.eps / init if init > 0 else math.nan
        return out


def _fmt(v) -> str:
    return format(float(v), ".17g")


class MonitorRecorder:
    """Accumulates a :class:`MonitorSeries` sample by sample."""

    def __init__(self, state0: SpectralState, params: Params, spec: MonitorSpec, decomposition=None):
        self.params = params
        self.settings = NormSettings(params.eps, spec.alpha, spec.beta0, spec.q, spec.r)
        dec = decomposition or DyadicDecomposition.for_grid(state0.grid)
        js = list(dec.js)
        lo_mid = max(abs(params.omega) * params.eps, 0.0)
        mid_js = [j for j in js if lo_mid <= 2.0**j <= self.settings.split]
        high_js = [j for j in js if 2.0**j > self.settings.split]
        delta = spec.delta
        if delta is None:
            delta = choose_delta([state0], mid_js, params.eps, params.mu) if mid_js else 0.0
        self.series = MonitorSeries(
            self.settings,
            BlockLedger(js, spec.q),
            block_energy={j: [] for j in js},
            block_diss={j: [] for j in js},
            block_power={j: [] for j in js},
            mid_js=mid_js,
            high_js=high_js,
            delta=delta,
            D=d_norm(state0, self.settings, dec),
        )

    def record(self, state: SpectralState, forcing: SpectralState | None) -> dict:
        s = self.series
        g = state.grid
        s.ledger.record(state)
        fq = None if forcing is None else forcing.stacked()
        q = state.stacked()
        for j in s.ledger.js:
            s.block_energy[j].append(block_energy(state, j))
            s.block_diss[j].append(block_dissipation(state, j, self.params))
            if fq is None:
                s.block_power[j].append(0.0)
            else:
                w2 = _weights(g, j) ** 2
                s.block_power[j].append(float(g.volume * np.sum(w2 * np.conj(fq) * q).real))
        norms = norms_from_ledger(s.ledger, self.settings)
        a, u = state.physical()
        D = g.dealias_mask
        rec = {
            "t": float(state.t),
            "D": s.D,
            "E": norms["E"],
            "A": norms["A"],
            "calA": norms["calA"],
            "min_density": float(np.min(1 + self.params.eps * a)),
            "max_u": float(np.max(np.sqrt(np.sum(u**2, axis=0)))),
            "energy": float(g.volume * np.sum(np.abs(q * D) ** 2)),
            "dt_limit": stability_limit(state, self.params),
        }
        for j in s.mid_js:
            rec[f"vj_ratio_{j}"] = sandwich_ratio(state, j, self.params.eps, s.delta)
        s.records.append(rec)
        return rec


def energy_monitors(
    states: Sequence[SpectralState],
    params: Params,
    spec: MonitorSpec | None = None,
    forcings: Sequence[SpectralState] | None = None,
) -> MonitorSeries:
    """Monitor series of a stored trajectory (uniform sample times)."""
    spec = spec or MonitorSpec()
    rec = MonitorRecorder(states[0], params, spec)
    for i, s in enumerate(states):
        rec.record(s, None if forcings is None else forcings[i])
    return rec.series


# --------------------------------------------------------------------------
# Runs
# --------------------------------------------------------------------------

CLASSIFICATIONS = ("completed", "nan", "vacuum_proximity", "low_density", "energy_growth")


@dataclass
class RunResult:
    config: SimulationConfig
    final_state: SpectralState
    classification: str
    t_end: float
    monitors: MonitorSeries | None
    snapshots: list[SpectralState] = field(default_factory=list)
    message: str = ""

    @property
    def blew_up(self) -> bool:
        return self.classification != "completed"

    def summary(self) -> dict:
        out = {"final_time": self.t_end, "classification": self.classification, "message": self.message}
        if self.monitors is not None and self.monitors.records:
            rows = self.monitors.records
            out["peak_norms"] = {k: max(r[k] for r in rows) for k in ("E", "A", "calA", "max_u")}
            out["min_density"] = min(r["min_density"] for r in rows)
            out["D"] = self.monitors.D
        return out


def simulate(
    config: SimulationConfig,
    state0: SpectralState | None = None,
    nonlinear: bool = True,
    forcing: Forcing | None = None,
    monitor: bool = True,
    snapshot_every: int | None = None,
) -> RunResult:
    """Run to ``T`` or to the first blow-up signal.

    Blow-up signals, in order of detection: non-finite values, ``eps a <= -1/2``
    inside the nonlinearity, ``min(1 + eps a) < blowup_density`` and growth of
    the energy norm beyond ``blowup_growth`` times its initial value (the last
    two at monitor samples).
    """
    state = initial_state(config) if state0 is None else state0
    params = config.params
    lim = stability_limit(state, params)
    if config.dt > lim:
        raise ConfigurationError(f"dt = {config.dt} exceeds the stability limit {lim:.6g}")
    n_steps = config.n_steps
    integ = ETDRK2(state.grid, params, config.dt, nonlinear=nonlinear, forcing=forcing)
    rec = MonitorRecorder(state, params, config.monitors) if monitor else None
    snaps = [state] if snapshot_every else []
    E0 = None
    classification, message = "completed", ""
    for n in range(n_steps + 1):
        try:
            F0 = integ.rhs(state) if (nonlinear or forcing is not None) else None
        except VacuumProximityError as exc:
            classification, message = "vacuum_proximity", str(exc)
            break
        if rec is not None and n % config.monitors.cadence == 0:
            r = rec.record(state, F0)
            E0 = r["E"] if E0 is None else E0
            if r["min_density"] < config.blowup_density:
                classification, message = "low_density", f"min density {r['min_density']:.3g}"
                break
            if E0 > 0 and r["E"] > config.blowup_growth * E0:
                classification, message = "energy_growth", f"energy norm grew by {r['E'] / E0:.3g}"
                break
        if n == n_steps:
            break
        try:
            state = integ.step(state, F0)
        except VacuumProximityError as exc:
            classification, message = "vacuum_proximity", str(exc)
            break
        except BlowUpError as exc:
            classification, message = "nan", str(exc)
            state = exc.last_state
            break
        state = state.at((n + 1) * config.dt)
        if snapshot_every and (n + 1) % snapshot_every == 0:
            snaps.append(state)
    return RunResult(config, state, classification, float(state.t), rec.series if rec else None, snaps, message)


def write_run_outputs(result: RunResult, out_dir, prefix: str = "run") -> dict[str, str]:
    """Monitor CSV, final snapshot, optional snapshot series and the JSON summary."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = {}
    if result.monitors is not None:
        p = out / f"{prefix}_monitors.csv"
        result.monitors.write_csv(p)
        paths["monitors"] = str(p)
    p = out / f"{prefix}_final.rcsf"
    a, u = result.final_state.fields()
    write_snapshot(p, [a, u])
    paths["final_snapshot"] = str(p)
    for i, s in enumerate(result.snapshots):
        p = out / f"{prefix}_snap_{i:04d}.rcsf"
        fa, fu = s.fields()
        write_snapshot(p, [fa, fu])
        paths[f"snapshot_{i}"] = str(p)
    p = out / f"{prefix}_summary.json"
    p.write_text(json.dumps(result.summary(), indent=1, sort_keys=True))
    paths["summary"] = str(p)
    return paths


# --------------------------------------------------------------------------
# Omega sweep
# --------------------------------------------------------------------------


@dataclass
class SweepRow:
    omega: float
    eps: float
    max_calA: float
    max_E: float
    max_A: float
    A_final: float
    classification: str
    t_end: float
    D: float
    below_threshold: bool


def omega_sweep(base: SimulationConfig, omegas: Sequence[float], threshold_factor: float = 2.0) -> list[SweepRow]:
    """Run ``base`` with ``Omega`` from the list and ``eps = 1/Omega``; same initial data for all.

    ``below_threshold`` records ``A(T) <= threshold_factor * D_eps`` (monitored only).
    """
    rows = []
    for om in omegas:
        cfg = base.with_params(omega=float(om), eps=1.0 / float(om))
        res = simulate(cfg)
        recs = res.monitors.records
        rows.append(
            SweepRow(
                omega=float(om),
                eps=1.0 / float(om),
                max_calA=max(r["calA"] for r in recs),
                max_E=max(r["E"] for r in recs),
                max_A=max(r["A"] for r in recs),
                A_final=recs[-1]["A"],
                classification=res.classification,
                t_end=res.t_end,
                D=res.monitors.D,
                below_threshold=bool(recs[-1]["A"] <= threshold_factor * res.monitors.D),
            )
        )
    return rows


def nonincreasing_within(values: Sequence[float], tol: float = 0.1) -> bool:
    """``v[k+1] <= (1 + tol) v[k]`` for consecutive entries."""
    v = list(values)
    return all(b <= (1 + tol) * a for a, b in zip(v, v[1:]))
