import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from nsclab.errors import ConfigurationError, ContractError
from nsclab.grid import (
    Field,
    conjugate_symmetry_error,
    dealias,
    make_grid,
    read_snapshot,
    spectral_derivative,
    transform,
    write_snapshot,
)


def test_unit_lattice():
    g = make_grid(8, 2 * np.pi)
    assert g.spacing == pytest.approx(1.0)
    assert sorted(np.rint(g.k1d).astype(int)) == list(range(-4, 4))


def test_half_spacing():
    g = make_grid(16, 4 * np.pi)
    assert g.spacing == pytest.approx(0.5)
    assert g.k1d.max() == pytest.approx(3.5)
    assert g.k1d.min() == pytest.approx(-4.0)
    assert np.sum(np.isclose(np.abs(g.k1d), 4.0)) == 1


def test_corner_norm():
    g = make_grid(64, 2 * np.pi * 8)
    assert g.k_corner == pytest.approx(np.sqrt(3) * 4, rel=1e-14)
    assert g.k_corner == pytest.approx(6.93, abs=5e-3)


@pytest.mark.parametrize("n", [6, 4, 1024, 24, 7.5])
def test_bad_sizes(n):
    with pytest.raises(ConfigurationError):
        make_grid(n, 1.0)


def test_bad_period():
    with pytest.raises(ConfigurationError):
        make_grid(8, -1.0)


def test_constant_field(grid16):
    f = transform(Field(grid16, np.full(grid16.shape, 2.5 + 0j)), "forward")
    expected = np.zeros(grid16.shape, complex)
    expected[0, 0, 0] = 2.5
    assert np.allclose(f.values, expected, atol=1e-14)


def test_plane_wave(grid16):
    m = (2, -3, 1)
    kx = np.array(m) * grid16.spacing
    vals = np.exp(1j * np.einsum("i,i...->...", kx, grid16.x))
    c = transform(Field(grid16, vals), "forward").values
    idx = tuple(mi % 16 for mi in m)
    assert c[idx] == pytest.approx(1.0, abs=1e-12)
    c[idx] = 0
    assert np.max(np.abs(c)) < 1e-12


@settings(max_examples=10, deadline=None)
@given(st.sampled_from([8, 16, 32]), st.integers(0, 2**31))
def test_parseval_and_roundtrip(n, seed):
    g = make_grid(n, 2 * np.pi * 3)
    f = np.random.default_rng(seed).normal(size=g.shape)
    c = transform(Field(g, f.astype(complex)), "forward")
    back = transform(c, "inverse").values
    assert np.max(np.abs(back - f)) <= 1e-12 * np.max(np.abs(f))
    lhs = g.volume * np.mean(f**2)
    rhs = g.volume * np.sum(np.abs(c.values) ** 2)
    assert abs(lhs - rhs) <= 1e-12 * lhs
    assert conjugate_symmetry_error(g, c.values) < 1e-12


def test_representation_mismatch(grid16):
    f = Field(grid16, np.zeros(grid16.shape, complex), "spectral")
    with pytest.raises(ContractError):
        transform(f, "forward")
    with pytest.raises(ContractError):
        dealias(Field(grid16, np.zeros(grid16.shape, complex)))


def test_dealias_count_and_idempotence(grid16):
    ones = Field(grid16, np.ones(grid16.shape, complex), "spectral")
    d = dealias(ones)
    assert np.count_nonzero(d.values) == 11**3
    assert np.array_equal(dealias(d).values, d.values)


def test_dealias_kills_nyquist(grid16):
    v = np.zeros(grid16.shape, complex)
    v[8, 0, 0] = 1.0
    assert not dealias(Field(grid16, v, "spectral")).values.any()


def test_dealias_keeps_symmetry(grid16, rng):
    f = rng.normal(size=grid16.shape)
    c = dealias(transform(Field(grid16, f.astype(complex)), "forward")).values
    assert conjugate_symmetry_error(grid16, c) < 1e-12


def test_derivative_of_plane_wave(grid16):
    m = np.array([3, 1, -2])
    k = m * grid16.spacing
    vals = np.exp(1j * np.einsum("i,i...->...", k, grid16.x))
    c = transform(Field(grid16, vals), "forward").values
    for axis in range(3):
        d = transform(Field(grid16, spectral_derivative(grid16, c, axis), "spectral"), "inverse")
        assert np.max(np.abs(d.values - 1j * k[axis] * vals)) < 1e-10


def test_snapshot_roundtrip(tmp_path, grid16, rng):
    a = Field(grid16, rng.normal(size=grid16.shape) + 1j * rng.normal(size=grid16.shape), "spectral")
    u = Field(grid16, rng.normal(size=(3,) + grid16.shape) + 0j, "spectral")
    p = tmp_path / "s.rcsf"
    write_snapshot(p, [a, u])
    g, rep, comps = read_snapshot(p)
    assert g == grid16 and rep == "spectral" and len(comps) == 4
    assert np.array_equal(comps[0], a.values)
    assert np.array_equal(comps[3], u.values[2])
    raw = p.read_bytes()
    assert raw[:4] == b"RCSF"
    # x index fastest: second complex value of first component is a[1, 0, 0]
    second = np.frombuffer(raw, "<f8", count=2, offset=25 + 16)
    assert second[0] == a.values[1, 0, 0].real


def test_snapshot_bad_magic(tmp_path):
    p = tmp_path / "bad"
    p.write_bytes(b"XXXX" + bytes(40))
    with pytest.raises(ContractError):
        read_snapshot(p)
