"""Frequency-side closed forms for the linearized rotating compressible system.

Conventions
-----------
Per Fourier mode the linear system reads ``d/dt (a_hat, u_hat) = -M(xi) (a_hat, u_hat)``
with the viscous generator::

    M = [[0,          i xi^T / eps                                 ],
         [i xi / eps, mu |xi|^2 I + (mu + mu') xi xi^T + Omega R   ]]

where ``R u = e3 x u``.  With ``mu = mu' = 0`` and ``Omega = eps = 1`` this gives
``-M = A(xi)``, the inviscid symbol acting on ``(b_hat, v_hat)`` directly; no
rescaling of the density component is needed.

``QUARTIC_ORIENTATION = +1``: the roots of the eigen quartic are the
eigenvalues of ``+M`` (the decay rates), not of the generator ``-M``.  This
was checked against the characteristic polynomial once and is pinned by the
tests.

``lambda_minus`` carries the sign of ``xi_3`` (``lambda+ lambda- = xi_3``), so
``lambda+ >= |lambda-|``.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np

from .errors import ConfigurationError, DomainError

QUARTIC_ORIENTATION = +1

ROTATION = np.array([[0.0, -1.0, 0.0], [1.0, 0.0, 0.0], [0.0, 0.0, 0.0]])
"""Matrix of ``u -> e3 x u``."""

LABELS = (("+", "+"), ("+", "-"), ("-", "-"), ("-", "+"))
"""Eigenpair labels ``(sigma1, sigma2)`` for eigenvalue ``sigma1 * i * lambda^{sigma2}``."""


@dataclass(frozen=True)
class Params:
    """Physical constants of the rescaled system.

    ``P(rho) = rho**gamma / gamma`` so ``P'(1) = 1``.  ``mu = mu' = 0`` (the
    inviscid limit) is accepted for cross-checks; the nonlinear solver demands
    ``mu > 0`` and ``nu = 1``.
    """

    mu: float = 0.5
    mu_prime: float = 0.0
    eps: float = 0.1
    omega: float = 10.0
    gamma: float = 2.0

    def __post_init__(self):
        if not self.eps > 0:
            raise ConfigurationError(f"eps must be positive, got {self.eps}")
        if not self.gamma > 0:
            raise ConfigurationError(f"gamma must be positive, got {self.gamma}")
        if self.mu < 0 or self.nu < 0:
            raise ConfigurationError("ellipticity needs mu >= 0 and nu = 2 mu + mu' >= 0")

    @property
    def nu(self) -> float:
        return 2 * self.mu + self.mu_prime

    @property
    def mu_floor(self) -> float:
        """``min(mu, 1)``."""
        return min(self.mu, 1.0)

    def check_rescaled(self, tol: float = 1e-12) -> None:
        if not (self.mu > 0 and abs(self.nu - 1.0) <= tol):
            raise ConfigurationError(
                f"rescaled system needs mu > 0 and nu = 1, got mu={self.mu}, nu={self.nu}"
            )

    @classmethod
    def rescale(cls, mu, mu_prime, omega, eps, gamma=2.0, rho_inf=1.0, c_inf=1.0):
        """Map dimensional coefficients to the ``nu = rho_inf = c_inf = 1`` system."""
        nu = 2 * mu + mu_prime
        if nu <= 0:
            raise ConfigurationError("nu must be positive to rescale")
        return cls(
            mu=mu / nu,
            mu_prime=mu_prime / nu,
            eps=eps,
            omega=nu / (rho_inf * c_inf) * omega,
            gamma=gamma,
        )

    def pressure_derivative(self, rho):
        return np.asarray(rho, dtype=float) ** (self.gamma - 1.0)


# --------------------------------------------------------------------------
# Inviscid eigenfrequencies
# --------------------------------------------------------------------------


def _sgn(sign) -> int:
    if sign in ("+", +1, 1):
        return 1
    if sign in ("-", -1):
        return -1
    raise ValueError(f"sign must be '+' or '-', got {sign!r}")


def eta(xi, sign):
    """``sqrt(|xi|^2 +- 2 xi_3 + 1)``, i.e. the distance from ``xi`` to ``(0, 0, -+1)``."""
    xi = np.asarray(xi, dtype=float)
    s = _sgn(sign)
    return np.sqrt(xi[..., 0] ** 2 + xi[..., 1] ** 2 + (xi[..., 2] + s) ** 2)


def lambda_pm(xi, sign):
    """``lambda^{+-} = (eta^+ +- eta^-) / 2``."""
    s = _sgn(sign)
    return 0.5 * (eta(xi, +1) + s * eta(xi, -1))


def inviscid_symbol(xi) -> np.ndarray:
    """The 4x4 matrix ``A(xi)``; batched over leading axes of ``xi``."""
    xi = np.asarray(xi, dtype=float)
    A = np.zeros(xi.shape[:-1] + (4, 4), dtype=complex)
    A[..., 0, 1:] = -1j * xi
    A[..., 1:, 0] = -1j * xi
    A[..., 1, 2] = 1.0
    A[..., 2, 1] = -1.0
    return A


@dataclass
class EigenSystem:
    """Eigenpairs of the inviscid symbol.

    ``vectors[:, k]`` is the eigenvector for ``values[k]``; when ``degenerate``
    the vectors of a repeated eigenvalue form an orthonormal basis of the
    eigenspace and their labels carry no meaning beyond the eigenvalue.
    """

    values: np.ndarray
    vectors: np.ndarray
    labels: tuple = LABELS
    degenerate: bool = False

    def projection(self, k: int) -> np.ndarray:
        v = self.vectors[:, k]
        return np.outer(v, v.conj())

    def spectral_projections(self) -> list[np.ndarray]:
        """One orthogonal projection per distinct eigenvalue (rank may exceed 1)."""
        groups: list[list[int]] = []
        for k, lam in enumerate(self.values):
            for g in groups:
                if abs(self.values[g[0]] - lam) < 1e-8:
                    g.append(k)
                    break
            else:
                groups.append([k])
        return [sum(self.projection(k) for k in g) for g in groups]


def closed_form_spectrum(xi) -> np.ndarray:
    """``(i lam+, i lam-, -i lam-, -i lam+)`` in label order."""
    lp, lm = lambda_pm(xi, +1), lambda_pm(xi, -1)
    return np.array([1j * lp, 1j * lm, -1j * lm, -1j * lp])


def eigensystem_inviscid(xi, gap_tol: float = 1e-8) -> EigenSystem:
    """Labelled orthonormal eigenvectors of ``A(xi)`` from the Hermitian matrix ``i A``."""
    xi = np.asarray(xi, dtype=float)
    A = inviscid_symbol(xi)
    mu, V = np.linalg.eigh(1j * A)  # i A a = mu a  =>  A a = -i mu a
    values = -1j * mu
    target = closed_form_spectrum(xi)
    # match computed eigenvalues (ascending mu = descending Im) to the labels
    order_target = np.argsort(-target.imag, kind="stable")
    vals = np.empty(4, dtype=complex)
    vecs = np.empty((4, 4), dtype=complex)
    for slot, k in zip(order_target, range(4)):
        vals[slot] = values[k]
        vecs[:, slot] = V[:, k]
    sorted_im = np.sort(values.imag)
    degenerate = bool(np.min(np.diff(sorted_im)) < gap_tol)
    return EigenSystem(values=vals, vectors=vecs, degenerate=degenerate)


# --------------------------------------------------------------------------
# Viscous symbol and its eigen quartic
# --------------------------------------------------------------------------


def viscous_symbol(xi, params: Params) -> np.ndarray:
    """Generator ``M(xi)`` with ``d/dt (a, u)^ = -M (a, u)^``; batched over ``xi``."""
    xi = np.asarray(xi, dtype=float)
    k2 = np.sum(xi**2, axis=-1)
    M = np.zeros(xi.shape[:-1] + (4, 4), dtype=complex)
    M[..., 0, 1:] = 1j * xi / params.eps
    M[..., 1:, 0] = 1j * xi / params.eps
    vel = (
        params.mu * k2[..., None, None] * np.eye(3)
        + (params.mu + params.mu_prime) * xi[..., :, None] * xi[..., None, :]
        + params.omega * ROTATION
    )
    M[..., 1:, 1:] = vel
    return M


def inviscid_generator(xi, omega: float, eps: float) -> np.ndarray:
    """``-M`` at ``mu = mu' = 0``; skew-Hermitian.  Equals ``Omega * A(xi / (Omega eps))``."""
    xi = np.asarray(xi, dtype=float)
    G = np.zeros(xi.shape[:-1] + (4, 4), dtype=complex)
    G[..., 0, 1:] = -1j * xi / eps
    G[..., 1:, 0] = -1j * xi / eps
    G[..., 1:, 1:] = -omega * ROTATION
    return G


def eigen_quartic_coeffs(xi, params: Params):
    """Coefficients ``(c3, c2, c1, c0)`` of the monic quartic ``l^4 + c3 l^3 + c2 l^2 + c1 l + c0``.

    The ``l^1`` coefficient contains ``mu^2 |xi|^6``, which is
    ``mu^2 nu |xi|^6`` with ``nu = 1`` folded in; the quartic is therefore the
    characteristic polynomial of ``M`` only for rescaled parameters
    (``nu = 1``) or in the inviscid limit ``mu = 0``.
    """
    xi = np.asarray(xi, dtype=float)
    mu, mup, eps, om = params.mu, params.mu_prime, params.eps, params.omega
    if mu > 0 and abs(params.nu - 1.0) > 1e-12:
        raise ConfigurationError(f"eigen quartic assumes nu = 1, got nu = {params.nu}")
    k2 = np.sum(xi**2, axis=-1)
    x3s = xi[..., 2] ** 2
    c3 = -(4 * mu + mup) * k2
    c2 = k2 / eps**2 + mu * (5 * mu + 2 * mup) * k2**2 + om**2
    c1 = -(2 * mu / eps**2 * k2**2 + mu**2 * k2**3 + om**2 * mu * k2 + om**2 * (mu + mup) * x3s)
    c0 = mu**2 / eps**2 * k2**3 + om**2 / eps**2 * x3s
    return c3, c2, c1, c0


def quartic_term_scales(xi, params: Params):
    """Sum of absolute values of the terms making up each quartic coefficient."""
    xi = np.asarray(xi, dtype=float)
    mu, mup, eps, om = params.mu, params.mu_prime, params.eps, params.omega
    k2 = np.sum(xi**2, axis=-1)
    x3s = xi[..., 2] ** 2
    s3 = np.abs(4 * mu + mup) * k2
    s2 = k2 / eps**2 + np.abs(mu * (5 * mu + 2 * mup)) * k2**2 + om**2
    s1 = 2 * mu / eps**2 * k2**2 + mu**2 * k2**3 + om**2 * mu * k2 + om**2 * np.abs(mu + mup) * x3s
    s0 = mu**2 / eps**2 * k2**3 + om**2 / eps**2 * x3s
    return s3, s2, s1, s0


def charpoly_principal_minors(A: np.ndarray) -> np.ndarray:
    """Coefficients ``[c_{n-1}, ..., c_0]`` of ``det(l I - A)`` (batched over leading axes).

    ``c_{n-k} = (-1)^k * (sum of the k x k principal minors)``.  Independent of
    any eigensolver and, unlike the Faddeev-LeVerrier recursion, free of
    cancellation amplification when the coefficient scales differ widely.
    """
    A = np.asarray(A)
    n = A.shape[-1]
    coeffs = []
    for k in range(1, n + 1):
        total = 0
        for idx in itertools.combinations(range(n), k):
            sub = A[..., idx, :][..., :, idx]
            total = total + np.linalg.det(sub)
        coeffs.append((-1) ** k * total)
    return np.stack(coeffs, axis=-1)


def slow_root(xi, params: Params) -> complex:
    """Eigenvalue of the generator ``-M(xi)`` with the smallest decay rate.

    For ``|xi| eps >> 1`` and ``mu |xi|^2 eps^2 > 1`` this is the density
    relaxation root, close to ``-1 / (nu eps^2)``.
    """
    lam = np.linalg.eigvals(-viscous_symbol(xi, params))
    return complex(lam[np.argmax(lam.real)])


def calibrate_beta0(
    params: Params, tol: float = 0.25, m_range=range(-2, 9), n_dirs: int = 16, fallback=8.0
) -> float:
    """Smallest dyadic ``beta0 = 2^m`` such that the slow root is within ``tol`` of ``-1/eps^2``.

    The check runs over ``|xi| eps`` in ``[2^m, 2^(m+6)]`` along ``n_dirs``
    directions; ``fallback`` is returned when no ``m`` qualifies.
    """
    rng = np.random.default_rng(12345)
    dirs = rng.normal(size=(n_dirs, 3))
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    dirs = np.vstack([dirs, [0, 0, 1.0], [1.0, 0, 0]])
    target = -1.0 / (params.nu * params.eps**2)
    for m in m_range:
        ok = True
        for kk in 2.0 ** np.arange(m, m + 6.5, 0.5):
            for d in dirs:
                root = slow_root(d * kk / params.eps, params)
                if abs(root - target) > tol * abs(target):
                    ok = False
                    break
            if not ok:
                break
        if ok:
            return float(2.0**m)
    return float(fallback)


# --------------------------------------------------------------------------
# Hessians of the phases
# --------------------------------------------------------------------------


def _check_regular(xi):
    for s in (+1, -1):
        e = eta(xi, s)
        if np.any(e <= 1e-12):
            name = "eta+" if s > 0 else "eta-"
            raise DomainError(f"{name} vanishes: lambda is singular at xi = (0, 0, {-s})")


def hessian_eta(xi, sign) -> np.ndarray:
    """``grad^2 eta^{+-} = I / eta - w w^T / eta^3`` with ``w = (xi1, xi2, xi3 +- 1)``."""
    xi = np.asarray(xi, dtype=float)
    s = _sgn(sign)
    w = xi.copy()
    w[..., 2] = w[..., 2] + s
    e = eta(xi, s)[..., None, None]
    return np.eye(3) / e - w[..., :, None] * w[..., None, :] / e**3


def grad_lambda(xi, sign) -> np.ndarray:
    """``grad lambda^{+-} = ((xi + e3)/eta+ +- (xi - e3)/eta-) / 2``."""
    xi = np.asarray(xi, dtype=float)
    s = _sgn(sign)
    wp, wm = xi.copy(), xi.copy()
    wp[..., 2] += 1.0
    wm[..., 2] -= 1.0
    ep = eta(xi, +1)[..., None]
    em = eta(xi, -1)[..., None]
    with np.errstate(divide="ignore", invalid="ignore"):
        return 0.5 * (wp / ep + s * wm / em)


def hessian_lambda(xi, sign) -> np.ndarray:
    """``grad^2 lambda^{+-} = (grad^2 eta^+ +- grad^2 eta^-) / 2``."""
    _check_regular(xi)
    s = _sgn(sign)
    return 0.5 * (hessian_eta(xi, +1) + s * hessian_eta(xi, -1))


def hessian_det(xi, sign):
    """Determinant of :func:`hessian_lambda`."""
    return np.linalg.det(hessian_lambda(xi, sign))


def hessian_det_closed_form(xi, sign):
    """Closed forms of ``det grad^2 lambda^{+-}`` in terms of ``eta^{+-}``::

        det grad^2 lambda^+ =  |xi_h|^2 (eta+ + eta-) / (2 eta+^4 eta-^4)
        det grad^2 lambda^- =  2 |xi_h|^2 xi_3 / (eta+^4 eta-^4 (eta+ + eta-))

    The second one is often quoted with a leading minus sign; that version is
    the determinant for the phase ``-lambda^-`` (see :func:`hessian_det_negated_minus`).
    """
    _check_regular(xi)
    xi = np.asarray(xi, dtype=float)
    h2 = xi[..., 0] ** 2 + xi[..., 1] ** 2
    ep, em = eta(xi, +1), eta(xi, -1)
    if _sgn(sign) > 0:
        return h2 * (ep + em) / (2 * ep**4 * em**4)
    return 2 * h2 * xi[..., 2] / (ep**4 * em**4 * (ep + em))


def hessian_det_negated_minus(xi):
    """``-2 |xi_h|^2 xi_3 / (eta+^4 eta-^4 (eta+ + eta-))`` = ``det grad^2 (-lambda^-)``."""
    return -hessian_det_closed_form(xi, -1)


def hessian_fd(xi, sign, h: float = 1e-4) -> np.ndarray:
    """Central finite-difference Hessian of ``lambda^{+-}`` (oracle).

    ``h ~ eps_mach^(1/4)`` balances the ``h^2`` truncation and ``eps/h^2`` roundoff.
    """
    xi = np.asarray(xi, dtype=float)
    H = np.empty(xi.shape[:-1] + (3, 3))
    eye = np.eye(3)
    for a in range(3):
        for b in range(3):
            ea, eb = eye[a] * h, eye[b] * h
            f = (
                lambda_pm(xi + ea + eb, sign)
                - lambda_pm(xi + ea - eb, sign)
                - lambda_pm(xi - ea + eb, sign)
                + lambda_pm(xi - ea - eb, sign)
            )
            H[..., a, b] = f / (4 * h * h)
    return H


def hessian_rank(H, rel_tol: float = 1e-8):
    """Numerical rank: singular values above ``rel_tol`` times the largest."""
    sv = np.linalg.svd(H, compute_uv=False)
    return np.sum(sv > rel_tol * sv[..., :1], axis=-1)


# --------------------------------------------------------------------------
# Regime expansions
# --------------------------------------------------------------------------


def leading_phase(xi, sign, regime: str):
    xi = np.asarray(xi, dtype=float)
    s = _sgn(sign)
    k = np.linalg.norm(xi, axis=-1)
    h2 = xi[..., 0] ** 2 + xi[..., 1] ** 2
    if regime == "high":
        return k if s > 0 else xi[..., 2] / k
    if regime == "low":
        return 1 + 0.5 * h2 if s > 0 else xi[..., 2] - 0.5 * xi[..., 2] * h2
    raise ValueError(f"unknown regime {regime!r}")


def phase_remainder(xi, sign, regime: str):
    """``lambda^{sign}(xi)`` minus its leading high- or low-frequency phase.

    High: ``|xi|`` (sign +), ``xi_3/|xi|`` (sign -), valid for ``|xi| >= 4``.
    Low: ``1 + |xi_h|^2/2`` (sign +), ``xi_3 - xi_3 |xi_h|^2 / 2`` (sign -),
    valid for ``|xi| <= 1/4``.
    """
    xi = np.asarray(xi, dtype=float)
    k = np.linalg.norm(xi, axis=-1)
    if regime == "high" and np.any(k < 4):
        raise DomainError("high-frequency remainder needs |xi| >= 4")
    if regime == "low" and np.any(k > 0.25):
        raise DomainError("low-frequency remainder needs |xi| <= 1/4")
    return lambda_pm(xi, sign) - leading_phase(xi, sign, regime)


# --------------------------------------------------------------------------
# Batched consistency checks
# --------------------------------------------------------------------------


def random_params(rng, n: int):
    """Random rescaled parameter draws (``nu = 1``) spanning several decades."""
    mu = rng.uniform(0.01, 1.0, n)
    eps = np.exp(rng.uniform(np.log(0.01), 0.0, n))
    omega = rng.uniform(-100.0, 100.0, n)
    return [Params(mu[i], 1.0 - 2.0 * mu[i], eps[i], omega[i]) for i in range(n)]


def annulus_sample(n_side: int = 20, r_min: float = 0.25, r_max: float = 4.0, clearance: float = 1e-3):
    """Cube lattice ``n_side^3`` on ``[-r_max, r_max]^3`` cut to the annulus, away from ``(0,0,+-1)``."""
    t = np.linspace(-r_max, r_max, n_side)
    pts = np.stack(np.meshgrid(t, t, t, indexing="ij"), axis=-1).reshape(-1, 3)
    r = np.linalg.norm(pts, axis=1)
    keep = (r >= r_min) & (r <= r_max)
    keep &= (eta(pts, +1) > clearance) & (eta(pts, -1) > clearance)
    return pts[keep]


def consistency_report(draws: int = 10_000, seed: int = 0, n_side: int = 20) -> dict:
    """Quartic, spectrum and Hessian checks over random draws and an annulus lattice."""
    rng = np.random.default_rng(seed)
    xi = rng.normal(size=(draws, 3)) * np.exp(rng.uniform(-3, 3, (draws, 1)))
    params = random_params(rng, draws)
    M = np.stack([viscous_symbol(x, p) for x, p in zip(xi, params)])
    cp = charpoly_principal_minors(M)
    quartic = np.array([eigen_quartic_coeffs(x, p) for x, p in zip(xi, params)])
    scales = np.array([quartic_term_scales(x, p) for x, p in zip(xi, params)])
    quartic_err = np.abs(cp - quartic) / scales

    ev = np.sort(np.linalg.eigvals(inviscid_symbol(xi)).imag, axis=1)
    cf = np.sort(closed_form_spectrum(xi).imag.T, axis=1)
    spec_err = np.abs(ev - cf) / np.maximum(1.0, np.abs(cf))

    pts = annulus_sample(n_side)
    out = {
        "draws": int(draws),
        "max_rel_err_quartic": float(quartic_err.max()),
        "max_rel_err_spectrum": float(spec_err.max()),
        "lattice_points": int(len(pts)),
    }
    fd_err, det_err, rank_viol = 0.0, 0.0, 0
    for sign in ("+", "-"):
        H = hessian_lambda(pts, sign)
        fd_err = max(fd_err, float(np.max(np.abs(H - hessian_fd(pts, sign)))))
        det = np.linalg.det(H)
        cf_det = hessian_det_closed_form(pts, sign)
        det_err = max(det_err, float(np.max(np.abs(det - cf_det) / np.maximum(np.abs(cf_det), 1e-14))))
        rank_viol += int(np.sum(hessian_rank(H) < 2))
    out.update(
        max_hessian_fd_err=fd_err,
        max_rel_err_det=det_err,
        rank_violations=rank_viol,
        quartic_orientation=QUARTIC_ORIENTATION,
    )
    return out
