"""Batched matrix exponential and the phi-functions of exponential integrators.

``expm`` is a diagonal Pade(6) approximant with scaling and squaring, applied
independently to every matrix of a ``(..., n, n)`` stack.  The scaling power is
chosen per matrix from its 1-norm so that ``||A / 2^s||_1 <= THETA``.
``phi_functions`` reads ``phi_1`` and ``phi_2`` off the exponential of the
block matrix ``[[A, I, 0], [0, 0, I], [0, 0, 0]]``.
"""

from __future__ import annotations

from math import factorial

import numpy as np

PADE_DEGREE = 6
THETA = 0.5
"""Scaled 1-norm bound; Pade(6) error stays below double-precision roundoff there."""

_PADE = np.array(
    [
        factorial(2 * PADE_DEGREE - k)
        * factorial(PADE_DEGREE)
        / (factorial(2 * PADE_DEGREE) * factorial(k) * factorial(PADE_DEGREE - k))
        for k in range(PADE_DEGREE + 1)
    ]
)


def _pade6(A: np.ndarray) -> np.ndarray:
    n = A.shape[-1]
    eye = np.broadcast_to(np.eye(n, dtype=A.dtype), A.shape)
    A2 = A @ A
    A4 = A2 @ A2
    A6 = A4 @ A2
    even = _PADE[0] * eye + _PADE[2] * A2 + _PADE[4] * A4 + _PADE[6] * A6
    odd = A @ (_PADE[1] * eye + _PADE[3] * A2 + _PADE[5] * A4)
    return np.linalg.solve(even - odd, even + odd)


def expm(A: np.ndarray) -> np.ndarray:
    """``exp(A)`` for each matrix in a stack of shape ``(..., n, n)``."""
    A = np.asarray(A)
    if not np.iscomplexobj(A):
        A = A.astype(float)
    norms = np.max(np.sum(np.abs(A), axis=-2), axis=-1)
    with np.errstate(divide="ignore"):
        s = np.where(norms > THETA, np.ceil(np.log2(np.maximum(norms, 1e-300) / THETA)), 0)
    s = s.astype(int)
    E = _pade6(A / np.ldexp(1.0, s)[..., None, None])
    shape = E.shape
    E = E.reshape((-1,) + shape[-2:])
    s = s.reshape(-1)
    for k in range(int(s.max(initial=0))):
        idx = np.nonzero(s > k)[0]
        E[idx] = E[idx] @ E[idx]
    return E.reshape(shape)


def phi_functions(A: np.ndarray):
    """``(exp(A), phi_1(A), phi_2(A))`` with ``phi_1(z) = (e^z - 1)/z`` and ``phi_2(z) = (e^z - 1 - z)/z^2``."""
    A = np.asarray(A)
    n = A.shape[-1]
    big = np.zeros(A.shape[:-2] + (3 * n, 3 * n), dtype=np.result_type(A, complex))
    big[..., :n, :n] = A
    big[..., :n, n : 2 * n] = np.eye(n)
    big[..., n : 2 * n, 2 * n :] = np.eye(n)
    E = expm(big)
    return E[..., :n, :n], E[..., :n, n : 2 * n], E[..., :n, 2 * n :]
