import json
from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from nsclab.errors import ConfigurationError, VacuumProximityError
from nsclab.grid import inverse, make_grid
from nsclab.lp_besov import DyadicDecomposition, block_lp_norm, chemin_lerner_norm, low, high
from nsclab.propagator import (
    SpectralState,
    apply_mode_matrices,
    default_mask,
    energy_identity,
    evolve_viscous,
    mode_wavevectors,
)
from nsclab.solver import (
    ETDRK2,
    GridSpec,
    InitialSpec,
    MonitorSpec,
    NormSettings,
    SimulationConfig,
    K_function,
    combined_norm,
    d_norm,
    energy_monitors,
    initial_state,
    nonincreasing_within,
    nonlinearity,
    norms_framework,
    omega_sweep,
    random_band_limited,
    simulate,
    stability_limit,
    taylor_green_gaussian,
    write_run_outputs,
)
from nsclab.symbol import Params, viscous_symbol

P = Params(mu=0.5, mu_prime=0.0, eps=0.1, omega=10.0)


def small_config(**kw):
    base = dict(grid=GridSpec(n=16, L=2.0), params=P, T=0.2, dt=0.02, ic=InitialSpec(amplitude=0.3))
    base.update(kw)
    return SimulationConfig(**base)


# --------------------------------------------------------------------------
# Configuration
# --------------------------------------------------------------------------


def test_config_validation():
    with pytest.raises(ConfigurationError):
        small_config(dt=0.0)
    with pytest.raises(ConfigurationError):
        small_config(T=0.01, dt=0.02)
    with pytest.raises(ConfigurationError):
        small_config(monitors=MonitorSpec(alpha=100.0))
    with pytest.raises(ConfigurationError):
        SimulationConfig.from_dict({"grid": {"n": 16}, "bogus": {}})
    with pytest.raises(ConfigurationError):
        SimulationConfig.from_dict({"grid": {"size": 16}})


def test_config_yaml_round_trip(tmp_path):
    cfg = small_config(monitors=MonitorSpec(cadence=3, q=6.0))
    p = tmp_path / "c.yaml"
    p.write_text(cfg.to_yaml())
    back = SimulationConfig.from_yaml(p)
    assert back.to_dict() == cfg.to_dict()
    assert back.config_hash() == cfg.config_hash()


def test_initial_density_must_be_positive():
    cfg = small_config(params=replace(P, eps=0.5), ic=InitialSpec(amplitude=-3.0))
    with pytest.raises(ConfigurationError):
        initial_state(cfg)


def test_profiles_are_seeded_and_scaled():
    g = make_grid(16, 2 * np.pi * 2)
    a = random_band_limited(g, 0.2, seed=3)
    b = random_band_limited(g, 0.2, seed=3)
    c = random_band_limited(g, 0.2, seed=4)
    assert np.array_equal(a.stacked(), b.stacked()) and not np.allclose(a.stacked(), c.stacked())
    phys_a, phys_u = a.physical()
    assert np.max(np.abs(phys_a)) == pytest.approx(0.2, rel=1e-12)
    tg = taylor_green_gaussian(g, 0.3)
    _, u = tg.physical()
    div = sum(inverse(1j * g.k[i] * tg.u[i]).real for i in range(3))
    assert np.max(np.abs(div)) < 1e-12 and np.max(np.abs(u)) <= 0.3 + 1e-12


# --------------------------------------------------------------------------
# Nonlinearity
# --------------------------------------------------------------------------


def test_zero_state_gives_zero_forcing(grid16):
    F = nonlinearity(SpectralState.zeros(grid16), P)
    assert not np.any(F.stacked())


def test_K_vanishes_for_quadratic_pressure():
    b = np.linspace(-0.4, 0.4, 11)
    assert not np.any(K_function(b, 2.0))
    assert np.allclose(K_function(b, 3.0), b, atol=1e-15)


def test_pressure_term_against_finer_grid():
    # gamma = 3: K(b) = b, so the term is a grad a; a single mode keeps it inside the 2/3 band
    p = replace(P, gamma=3.0)
    vals = []
    for n in (16, 32):
        g = make_grid(n, 2 * np.pi * 2)
        X = g.x[0]
        a = 0.3 * np.cos(X)
        F = nonlinearity(SpectralState.from_physical(g, a, np.zeros((3,) + g.shape)), p)
        vals.append((g, inverse(F.u).real))
    (g1, f1), (g2, f2) = vals
    ref = 0.3**2 * np.cos(g2.x[0]) * np.sin(g2.x[0])
    assert np.max(np.abs(f2[0] - ref)) < 1e-8
    assert np.max(np.abs(f1[0] - f2[0][::2, ::2, ::2])) < 1e-8
    assert np.max(np.abs(f1[1:])) < 1e-12


def test_vacuum_proximity_raises(grid16):
    a = np.full(grid16.shape, -6.0)
    s = SpectralState.from_physical(grid16, a, np.zeros((3,) + grid16.shape))
    with pytest.raises(VacuumProximityError):
        nonlinearity(s, P)


def test_outputs_are_dealiased_and_real(grid16):
    s = random_band_limited(grid16, 0.3, seed=1, k_hi=grid16.k_axis_max)
    F = nonlinearity(s, P).stacked()
    assert not np.any(F[:, ~grid16.dealias_mask])
    assert np.max(np.abs(inverse(F).imag)) < 1e-12 * np.max(np.abs(inverse(F)))


# --------------------------------------------------------------------------
# Time stepping
# --------------------------------------------------------------------------


def test_linearized_step_matches_exact_flow(grid16):
    s = random_band_limited(grid16, 1.0, seed=2)
    integ = ETDRK2(grid16, P, 0.05, nonlinear=False)
    out = integ.step(s)
    ref = evolve_viscous(s, 0.05, P)
    assert np.max(np.abs(out.stacked() - ref.stacked())) <= 1e-10 * np.max(np.abs(ref.stacked()))


def test_dt_halving_ratio():
    cfg = small_config(grid=GridSpec(n=16, L=2.0), T=0.4, ic=InitialSpec(amplitude=0.5))
    s0 = initial_state(cfg)
    run = lambda dt: simulate(replace(cfg, dt=dt), state0=s0, monitor=False).final_state.stacked()
    ref = run(0.02 / 16)
    e1, e2 = (np.linalg.norm((run(dt) - ref).ravel()) for dt in (0.02, 0.01))
    assert 3.0 <= e1 / e2 <= 5.0


def test_manufactured_solution_second_order():
    g = make_grid(16, 2 * np.pi * 2)
    X, Y, Z = g.x
    qa = SpectralState.from_physical(g, 0.2 * np.cos(X + Y), 0.2 * np.stack([np.sin(Z), np.cos(X), np.sin(Y)]))
    qb = SpectralState.from_physical(g, 0.2 * np.sin(Z), 0.2 * np.stack([np.cos(Y), np.sin(Z), np.cos(X + Z)]))
    A, B = qa.stacked(), qb.stacked()
    mask = default_mask(g)
    M = viscous_symbol(mode_wavevectors(g, mask), P)

    def exact(t):
        return SpectralState.from_stacked(g, np.cos(t) * A + np.sin(t) * B, t)

    def forcing(t):
        q = exact(t)
        dq = -np.sin(t) * A + np.cos(t) * B
        f = dq + apply_mode_matrices(M, q.stacked(), mask) - nonlinearity(q, P).stacked()
        return SpectralState.from_stacked(g, f, t)

    errs = []
    for dt in (0.05, 0.025, 0.0125):
        cfg = small_config(grid=GridSpec(n=16, L=2.0), T=0.5, dt=dt)
        end = simulate(cfg, state0=exact(0.0), forcing=forcing, monitor=False).final_state
        errs.append(np.max(np.abs(end.stacked() - exact(0.5).stacked())))
    assert 3.0 <= errs[0] / errs[1] <= 5.0 and 3.0 <= errs[1] / errs[2] <= 5.0


def test_mass_is_conserved():
    res = simulate(small_config(T=0.4))
    s0 = initial_state(small_config())
    assert abs(res.final_state.a[0, 0, 0] - s0.a[0, 0, 0]) <= 1e-10 * max(1.0, abs(s0.a[0, 0, 0]))


def test_small_amplitude_run_is_linear():
    cfg = small_config(T=0.5, dt=0.01, ic=InitialSpec(amplitude=1e-6))
    s0 = initial_state(cfg)
    nl = simulate(cfg, state0=s0, monitor=False).final_state.stacked()
    lin = evolve_viscous(s0, 0.5, P).stacked()
    assert np.linalg.norm((nl - lin).ravel()) <= 1e-7 * np.linalg.norm(lin.ravel())


def test_vertical_independence_without_rotation():
    g = make_grid(16, 2 * np.pi * 2)
    X, Y, _ = g.x
    a = 0.2 * np.cos(X) * np.sin(Y)
    u = 0.2 * np.stack([np.sin(Y), np.cos(X + Y), np.sin(X)])
    s0 = SpectralState.from_physical(g, a, u)
    cfg = small_config(params=replace(P, omega=0.0), T=0.3)
    out = simulate(cfg, state0=s0, monitor=False).final_state.stacked()
    kz = g.k[2]
    assert np.max(np.abs(out[:, kz != 0])) <= 1e-9 * np.max(np.abs(out))


def test_stability_guard():
    s = taylor_green_gaussian(make_grid(16, 2 * np.pi * 2), 0.3)
    lim = stability_limit(s, P)
    assert lim == pytest.approx(0.5 * s.grid.dx / 0.3, rel=1e-2)
    assert stability_limit(SpectralState.zeros(s.grid), P) == np.inf
    with pytest.raises(ConfigurationError):
        simulate(small_config(ic=InitialSpec(amplitude=20.0), dt=0.2, T=0.2))


def test_blowup_classification_by_density():
    cfg = small_config(params=replace(P, eps=0.5), ic=InitialSpec(amplitude=-1.9), blowup_density=0.05)
    s0 = SpectralState.zeros(make_grid(16, 2 * np.pi * 2))
    s0.a[0, 0, 0] = -1.95  # uniform density 1 + eps a = 0.025
    res = simulate(cfg, state0=s0, nonlinear=False)
    assert res.classification == "low_density" and res.blew_up and res.t_end == 0.0


def test_vacuum_classification():
    s0 = SpectralState.zeros(make_grid(16, 2 * np.pi * 2))
    s0.a[0, 0, 0] = -6.0
    res = simulate(small_config(), state0=s0)
    assert res.classification == "vacuum_proximity"


# --------------------------------------------------------------------------
# Norms and monitors
# --------------------------------------------------------------------------


@pytest.fixture(scope="module")
def short_run():
    cfg = small_config(T=0.2, dt=0.01, monitors=MonitorSpec(cadence=1, alpha=1.0, beta0=4.0))
    return simulate(cfg, snapshot_every=1)


def test_norms_two_ways(short_run):
    # ledger assembly vs direct Chemin-Lerner calls on the stored states
    st_ = NormSettings(P.eps, 1.0, 4.0)
    states = short_run.snapshots
    times = [s.t for s in states]
    fa = [s.fields()[0] for s in states]
    fu = [s.fields()[1] for s in states]
    split = st_.split
    E = 0.0
    for fs in (fa, fu):
        E += chemin_lerner_norm(times, fs, np.inf, 0.5, 2, 1, low(split), tilde=True).value
        E += chemin_lerner_norm(times, fs, 1, 2.5, 2, 1, low(split), tilde=True).value
    E += P.eps * chemin_lerner_norm(times, fa, np.inf, 1.5, 2, 1, high(split), tilde=False).value
    E += chemin_lerner_norm(times, fa, 1, 1.5, 2, 1, high(split), tilde=False).value / P.eps
    E += chemin_lerner_norm(times, fu, np.inf, 0.5, 2, 1, high(split), tilde=False).value
    E += chemin_lerner_norm(times, fu, 1, 2.5, 2, 1, high(split), tilde=False).value
    A = 0.0
    for fs in (fa, fu):
        A += chemin_lerner_norm(times, fs, 4, 0.25, 4, 1, low(1.0), tilde=False).value
    from nsclab.lp_besov import mid

    for fs in (fa, fu):
        A += chemin_lerner_norm(times, fs, np.inf, -0.25, 4, 1, mid(1.0, split), tilde=False).value
        A += chemin_lerner_norm(times, fs, 1, 1.75, 4, 1, mid(1.0, split), tilde=False).value
    out = norms_framework(times, states, st_)
    last = short_run.monitors.records[-1]
    assert out["E"] == pytest.approx(E, rel=1e-12) and last["E"] == pytest.approx(E, rel=1e-12)
    assert out["A"] == pytest.approx(A, rel=1e-12) and last["A"] == pytest.approx(A, rel=1e-12)


def test_zero_state_norms_vanish():
    g = make_grid(16, 2 * np.pi * 2)
    z = SpectralState.zeros(g)
    out = norms_framework([0.0, 0.1], [z, z.at(0.1)], NormSettings(0.1, 1.0, 4.0))
    assert out == {"E": 0.0, "A": 0.0, "calA": 0.0, "D": 0.0}


def test_combined_norm_with_zero_energy():
    s = NormSettings(0.1, 1.0, 4.0)
    assert combined_norm(0.0, 2.5, s) == 2.5


@settings(max_examples=15, deadline=None)
@given(st.floats(0.1, 10))
def test_norm_homogeneity(c):
    g = make_grid(16, 2 * np.pi * 2)
    s0 = random_band_limited(g, 0.3, seed=5)
    states = [s0, evolve_viscous(s0, 0.1, P), evolve_viscous(s0, 0.2, P)]
    times = [0.0, 0.1, 0.2]
    st_ = NormSettings(P.eps, 1.0, 4.0)
    a = norms_framework(times, states, st_)
    b = norms_framework(times, [s.scaled(c) for s in states], st_)
    for k in ("D", "E", "A", "calA"):
        assert b[k] == pytest.approx(c * a[k], rel=1e-10)


def test_norm_cutoffs_checked():
    with pytest.raises(ConfigurationError):
        NormSettings(0.1, 50.0, 4.0)


def test_d_norm_split():
    g = make_grid(16, 2 * np.pi * 2)
    s = random_band_limited(g, 0.3, seed=7)
    st_ = NormSettings(0.5, 1.0, 2.0)  # split at 4: high blocks exist on this grid
    dec = DyadicDecomposition.for_grid(g)
    ref = 0.0
    for j in dec.js:
        a2 = block_lp_norm(g, s.a, j, 2)
        u2 = block_lp_norm(g, s.u, j, 2)
        ref += 2**(0.5 * j) * (a2 + u2) if 2.0**j <= 4 else 0.5 * 2**(1.5 * j) * a2 + 2**(0.5 * j) * u2
    assert d_norm(s, st_) == pytest.approx(ref, rel=1e-13)


def test_monitor_series_contents(short_run, tmp_path):
    mon = short_run.monitors
    t = [r["t"] for r in mon.records]
    assert np.all(np.diff(t) > 0)
    assert all(np.isfinite(r[c]) for r in mon.rows() for c in mon.columns)
    for j in mon.mid_js:
        assert all(0.5 <= r[f"vj_ratio_{j}"] <= 1.5 for r in mon.records)
    paths = write_run_outputs(short_run, tmp_path)
    header = (tmp_path / "run_monitors.csv").read_text().splitlines()[0].split(",")
    assert header == mon.columns
    summary = json.loads((tmp_path / "run_summary.json").read_text())
    assert summary["classification"] == "completed" and summary["final_time"] == pytest.approx(0.2)
    assert set(summary["peak_norms"]) == {"E", "A", "calA", "max_u"}
    assert len([k for k in paths if k.startswith("snapshot_")]) == len(short_run.snapshots)


def test_linear_monitor_residual_matches_identity():
    # unforced linear run sampled densely: the monitor's block balance is the energy identity
    g = make_grid(16, 2 * np.pi * 2)
    s0 = random_band_limited(g, 0.3, seed=9)
    states = [evolve_viscous(s0, t, P) for t in np.linspace(0, 0.2, 201)]
    states = [s.at(t) for s, t in zip(states, np.linspace(0, 0.2, 201))]
    mon = energy_monitors(states, P, MonitorSpec(beta0=4.0))
    res = mon.residuals()
    assert max(np.max(np.abs(r)) for r in res.values()) <= 1e-6
    ident = energy_identity(s0, P, 0, 0.2, 200)
    assert ident.max_relative_residual <= 1e-6


def test_high_band_report():
    g = make_grid(16, 2 * np.pi * 2)
    s0 = random_band_limited(g, 0.3, seed=9)
    p = replace(P, eps=0.5, omega=1.0)
    ts = np.linspace(0, 0.5, 26)
    states = [evolve_viscous(s0, t, p).at(t) for t in ts]
    mon = energy_monitors(states, p, MonitorSpec(alpha=1.0, beta0=0.5))
    rep = mon.high_band_report()
    assert rep and all(np.isfinite(v) and v > 0 for v in rep.values())


# --------------------------------------------------------------------------
# Sweep
# --------------------------------------------------------------------------


def test_sweep_with_zero_amplitude_is_bounded():
    base = small_config(T=0.04, ic=InitialSpec(amplitude=0.0))
    rows = omega_sweep(base, [4, 8])
    assert all(r.classification == "completed" and r.max_calA == 0 and r.max_E == 0 for r in rows)


def test_sweep_norms_vanish_linearly_with_amplitude():
    vals = []
    for amp in (1e-3, 5e-4):
        base = small_config(T=0.04, ic=InitialSpec(amplitude=amp))
        vals.append(omega_sweep(base, [4])[0].max_calA)
    assert vals[1] / vals[0] == pytest.approx(0.5, rel=1e-3)


def test_nonincreasing_within():
    assert nonincreasing_within([5, 4, 4.3, 4.0])
    assert not nonincreasing_within([5, 6])
