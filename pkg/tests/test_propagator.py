import numpy as np
import pytest
import scipy.linalg as sla
from hypothesis import given, settings, strategies as st

from nsclab.errors import BlowUpError, ContractError, DomainError
from nsclab.expm import expm, phi_functions
from nsclab.grid import make_grid
from nsclab.lp_besov import block_project
from nsclab.propagator import (
    SpectralState,
    choose_delta,
    density_relaxation_rate,
    dissipativity_margin,
    duhamel,
    effective_velocity,
    energy_identity,
    evolve_inviscid,
    evolve_viscous,
    from_unit_scale,
    inviscid_group,
    load_trajectory,
    sandwich_ratio,
    save_trajectory,
    to_unit_scale,
)
from nsclab.symbol import Params, calibrate_beta0, inviscid_symbol, slow_root, viscous_symbol

P = Params(mu=0.5, mu_prime=0.0, eps=0.1, omega=10.0)


@pytest.fixture(scope="module")
def g():
    return make_grid(16, 2 * np.pi * 2)


def random_state(grid, seed=0):
    rng = np.random.default_rng(seed)
    return SpectralState.from_physical(grid, rng.normal(size=grid.shape), rng.normal(size=(3,) + grid.shape))


def single_mode(grid, m, q):
    s = SpectralState.zeros(grid)
    idx = tuple(mi % grid.n for mi in m)
    s.a[idx] = q[0]
    s.u[(slice(None),) + idx] = q[1:]
    return s


# --- expm -------------------------------------------------------------------


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**31), st.floats(1e-4, 50))
def test_expm_matches_scipy(seed, scale):
    rng = np.random.default_rng(seed)
    A = (rng.normal(size=(4, 4)) + 1j * rng.normal(size=(4, 4))) * scale / 4
    ref = sla.expm(A)
    assert np.max(np.abs(expm(A) - ref)) <= 1e-11 * max(1.0, np.max(np.abs(ref)))


def test_expm_batch_and_zero():
    A = np.zeros((5, 3, 3))
    assert np.array_equal(expm(A), np.broadcast_to(np.eye(3), (5, 3, 3)))
    M = viscous_symbol(np.random.default_rng(1).normal(size=(50, 3)) * 20, P)
    E = expm(-0.01 * M)
    for k in range(50):
        assert np.allclose(E[k], sla.expm(-0.01 * M[k]), rtol=1e-12, atol=1e-14)


def test_phi_functions_identities(rng):
    A = rng.normal(size=(4, 4)) - 2 * np.eye(4)
    E, p1, p2 = phi_functions(A)
    I = np.eye(4)
    assert np.allclose(A @ p1, E - I, atol=1e-13)
    assert np.allclose(A @ A @ p2, E - I - A, atol=1e-13)
    _, z1, z2 = phi_functions(np.zeros((4, 4)))
    assert np.allclose(z1, I) and np.allclose(z2, I / 2)


# --- states -----------------------------------------------------------------


def test_state_validation(g):
    with pytest.raises(ContractError):
        SpectralState(g, np.zeros((8, 8, 8)), np.zeros((3, 16, 16, 16)))
    a = np.zeros(g.shape, complex)
    a[1, 1, 1] = np.nan
    with pytest.raises(BlowUpError):
        SpectralState(g, a, np.zeros((3,) + g.shape))


def test_physical_roundtrip(g):
    s = random_state(g)
    a, u = s.physical()
    s2 = SpectralState.from_physical(g, a, u)
    assert np.allclose(s2.stacked(), s.stacked(), atol=1e-14)


# --- inviscid ---------------------------------------------------------------


def test_inviscid_identity(g):
    s = random_state(g)
    out = evolve_inviscid(s, 0.0, 10.0, 0.1)
    keep = ~g.nyquist_mask
    assert np.allclose(out.stacked()[:, keep], s.stacked()[:, keep], atol=1e-14)


def test_inviscid_unitarity_per_mode(rng):
    xi = rng.normal(size=(1000, 3)) * np.exp(rng.uniform(-3, 3, (1000, 1)))
    for t in (0.3, -2.0, 17.0):
        U = inviscid_group(xi, t, omega=7.0, eps=0.05)
        q = rng.normal(size=(1000, 4)) + 1j * rng.normal(size=(1000, 4))
        out = np.einsum("nij,nj->ni", U, q)
        assert np.max(np.abs(np.linalg.norm(out, axis=1) / np.linalg.norm(q, axis=1) - 1)) < 1e-10


def test_inviscid_group_law(g):
    s = random_state(g, 3)
    a = evolve_inviscid(evolve_inviscid(s, 0.7, 5.0, 0.2), 1.1, 5.0, 0.2)
    b = evolve_inviscid(s, 1.8, 5.0, 0.2)
    assert np.max(np.abs(a.stacked() - b.stacked())) <= 1e-9 * np.max(np.abs(s.stacked()))
    assert a.t == pytest.approx(1.8)


def test_inviscid_unit_symbol():
    xi = np.array([[0.3, -0.4, 1.2]])
    U = inviscid_group(xi, 2.5, 1.0, 1.0)[0]
    assert np.allclose(U, sla.expm(2.5 * inviscid_symbol(xi[0])), atol=1e-12)


def test_scaling_transform(rng):
    om, eps = 8.0, 0.03
    xi = rng.normal(size=(20, 3)) * 3
    xu, tu = to_unit_scale(xi, 0.9, om, eps)
    U1 = inviscid_group(xi, 0.9, om, eps)
    U2 = inviscid_group(xu, float(tu), 1.0, 1.0)
    assert np.allclose(U1, U2, atol=1e-11)
    back, tb = from_unit_scale(xu, tu, om, eps)
    assert np.allclose(back, xi) and tb == pytest.approx(0.9)


def test_pure_acoustic_group():
    xi = np.array([[1.0, 0.0, 0.0]])
    U = inviscid_group(xi, np.pi, omega=0.0, eps=1.0)[0]
    # frequency |xi|/eps = 1: a half period flips the acoustic pair
    assert np.allclose(U[0, 0], -1.0, atol=1e-12)


# --- viscous ----------------------------------------------------------------


def test_viscous_reduces_to_inviscid(g):
    s = random_state(g, 5)
    p = Params(mu=0.0, mu_prime=0.0, eps=0.2, omega=4.0)
    a = evolve_viscous(s, 0.8, p)
    b = evolve_inviscid(s, 0.8, 4.0, 0.2)
    assert np.max(np.abs(a.stacked() - b.stacked())) <= 1e-10 * np.max(np.abs(s.stacked()))


def test_shear_mode_decay():
    g = make_grid(8, 2 * np.pi)
    k, mu, t = 2.0, 0.3, 0.7
    s = single_mode(g, (2, 0, 0), [0, 0, 1.0, 0])
    out = evolve_viscous(s, t, Params(mu=mu, mu_prime=1 - 2 * mu, eps=0.5, omega=0.0))
    assert out.u[1, 2, 0, 0] == pytest.approx(np.exp(-mu * k**2 * t), rel=1e-9)


def test_viscous_contraction(g):
    s = random_state(g, 7)
    n0 = s.l2_norm()
    for t in (0.01, 0.1, 1.0):
        assert evolve_viscous(s, t, P).l2_norm() <= n0 * (1 + 1e-9)


def test_dissipativity(rng):
    assert dissipativity_margin(rng.normal(size=(200, 3)) * 5, P) >= -1e-10


def test_negative_time(g):
    with pytest.raises(DomainError):
        evolve_viscous(random_state(g), -0.1, P)


def test_commutes_with_blocks(g):
    s = random_state(g, 9)
    for j in (0, 1, 2):
        a, u = evolve_viscous(s, 0.2, P).fields()
        pa = block_project(a, j).values
        s_j = SpectralState(g, block_project(s.fields()[0], j).values, block_project(s.fields()[1], j).values)
        assert np.allclose(evolve_viscous(s_j, 0.2, P).a, pa, atol=1e-13)


def test_conjugate_symmetry_preserved(g):
    from nsclab.grid import conjugate_symmetry_error

    out = evolve_viscous(random_state(g, 11), 0.3, P)
    for arr in (out.a, out.u):
        assert conjugate_symmetry_error(g, arr) < 1e-12


# --- Duhamel ----------------------------------------------------------------


def test_duhamel_zero_forcing(g):
    s = random_state(g, 2)
    t = np.linspace(0, 0.5, 11)
    traj = duhamel(s, [SpectralState.zeros(g)] * 11, t, P)
    ref = evolve_viscous(s, 0.5, P)
    assert np.allclose(traj[-1].stacked(), ref.stacked(), atol=1e-12)


def _const_forcing_error(dt, T=1.0):
    g = make_grid(8, 2 * np.pi * 4)
    # midpoint error ~ h^2 ||M||^2 T / 24, so the mode is kept mild
    p = Params(mu=0.3, mu_prime=0.4, eps=1.0, omega=0.25)
    F = single_mode(g, (1, 1, 0), [0.3, 1.0, -0.5j, 0.2])
    t = np.arange(0, T + dt / 2, dt)
    traj = duhamel(SpectralState.zeros(g), [F] * len(t), t, p)
    M = viscous_symbol(g.k[:, 1, 1, 0], p)
    exact = (sla.expm(-T * M) - np.eye(4)) @ np.linalg.solve(-M, F.stacked()[:, 1, 1, 0])
    return np.max(np.abs(traj[-1].stacked()[:, 1, 1, 0] - exact)) / np.max(np.abs(exact))


def test_duhamel_constant_forcing():
    assert _const_forcing_error(1e-3) < 1e-8


def test_duhamel_second_order():
    e1, e2 = _const_forcing_error(0.04), _const_forcing_error(0.02)
    assert e1 / e2 == pytest.approx(4.0, rel=0.2)


def test_duhamel_bad_grid(g):
    with pytest.raises(ContractError):
        duhamel(SpectralState.zeros(g), [SpectralState.zeros(g)] * 2, [0, 0.1, 0.2], P)
    with pytest.raises(ContractError):
        duhamel(SpectralState.zeros(g), [SpectralState.zeros(g)] * 3, [0, 0.1, 0.3], P)


# --- effective velocity and functionals -------------------------------------


def test_effective_velocity(g):
    s = random_state(g, 4)
    zero_a = SpectralState(g, np.zeros(g.shape), s.u)
    assert np.array_equal(effective_velocity(zero_a, 0.1), s.u)
    only_a = SpectralState(g, s.a, np.zeros((3,) + g.shape))
    w = effective_velocity(only_a, 0.1)
    div_w = np.sum(1j * g.k * w, axis=0)
    expected = np.where(g.k2 > 0, -s.a / 0.1, 0)
    assert np.allclose(div_w, expected, atol=1e-12)


def test_sandwich_mid_band():
    eps, omega = 0.1, 10.0
    beta0 = calibrate_beta0(P)
    g = make_grid(32, 2 * np.pi)
    js = [j for j in range(0, 5) if omega * eps <= 2.0**j <= beta0 / eps]
    states = [random_state(g, s) for s in range(4)]
    delta = choose_delta(states, js, eps, P.mu)
    assert delta == pytest.approx(0.05)
    for s in states:
        for j in js:
            assert 0.5 <= sandwich_ratio(s, j, eps, delta) <= 1.5


def test_energy_identity(g):
    s = random_state(g, 6)
    for j in (0, 1, 2):
        res = energy_identity(s, P, j, 1.0, 2000)
        assert res.max_relative_residual <= 1e-6
        assert np.all(np.diff(res.energy) <= 1e-12 * res.energy[0])


def test_relaxation_rate():
    beta0 = calibrate_beta0(P)
    xi = np.array([0.0, 0.6, 0.8]) * 2 * beta0 / P.eps
    root = slow_root(xi, P)
    assert abs(root.real + 1 / P.eps**2) <= 0.25 / P.eps**2
    rate = density_relaxation_rate(xi, P, np.linspace(0.02, 0.1, 20))
    assert rate == pytest.approx(root.real, rel=0.15)


def test_trajectory_files(tmp_path, g):
    states = [random_state(g, 1).at(0.0), random_state(g, 2).at(0.5)]
    save_trajectory(tmp_path, states, P)
    back, index = load_trajectory(tmp_path)
    assert index["times"] == [0.0, 0.5] and index["params"]["eps"] == 0.1
    assert np.array_equal(back[1].u, states[1].u)
