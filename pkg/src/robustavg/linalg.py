"""Small dense linear-algebra helpers shared by the other modules.

Conventions
-----------
``vec`` stacks columns (Fortran order), so ``vec(A @ X @ B) ==
kron(B.T, A) @ vec(X)``. Pauli strings are read left to right, the
leftmost character being the first tensor factor.
"""
from __future__ import annotations

import functools
import itertools

import numpy as np

PAULI = {
    "I": np.eye(2, dtype=complex),
    "X": np.array([[0, 1], [1, 0]], dtype=complex),
    "Y": np.array([[0, -1j], [1j, 0]], dtype=complex),
    "Z": np.array([[1, 0], [0, -1]], dtype=complex),
}

HERMITIAN_RTOL = 1e-12


def vec(a: np.ndarray) -> np.ndarray:
    """Column-stacking vectorization; works on stacks ``(..., n, n)``."""
    a = np.asarray(a)
    return np.swapaxes(a, -1, -2).reshape(*a.shape[:-2], -1)


def unvec(x: np.ndarray, n: int) -> np.ndarray:
    return np.swapaxes(np.asarray(x).reshape(*np.shape(x)[:-1], n, n), -1, -2)


def dag(a: np.ndarray) -> np.ndarray:
    return np.conj(np.swapaxes(a, -1, -2))


def pauli_string(label: str) -> np.ndarray:
    """Tensor product of single-qubit Paulis, e.g. ``"XZ" -> X (x) Z``."""
    if not label:
        raise ValueError("empty Pauli string")
    bad = [c for c in label if c not in PAULI]
    if bad:
        raise ValueError(f"invalid Pauli token {bad[0]!r} in {label!r}")
    return functools.reduce(np.kron, (PAULI[c] for c in label))


def pauli_basis(n: int) -> list[np.ndarray]:
    """Normalized Pauli strings: an orthonormal Hermitian basis of n x n matrices.

    ``n`` must be a power of two.
    """
    q = int(round(np.log2(n)))
    if 2**q != n:
        raise ValueError(f"Pauli basis needs a power-of-two dimension, got {n}")
    if q == 0:
        return [np.ones((1, 1), dtype=complex)]
    return [
        pauli_string("".join(p)) / np.sqrt(n)
        for p in itertools.product("IXYZ", repeat=q)
    ]


def is_hermitian(a: np.ndarray, rtol: float = HERMITIAN_RTOL) -> bool:
    a = np.asarray(a)
    scale = max(np.linalg.norm(a), 1.0)
    return bool(np.linalg.norm(a - dag(a)) <= rtol * scale)


def is_unitary(u: np.ndarray, atol: float = 1e-12) -> bool:
    u = np.asarray(u)
    return bool(np.linalg.norm(dag(u) @ u - np.eye(u.shape[-1])) <= atol * u.shape[-1])


def check_hermitian(a, name: str = "operator") -> np.ndarray:
    a = np.asarray(a, dtype=complex)
    if a.ndim < 2 or a.shape[-1] != a.shape[-2]:
        raise ValueError(f"{name} must be square, got shape {a.shape}")
    for idx in np.ndindex(a.shape[:-2]):
        if not is_hermitian(a[idx]):
            raise ValueError(f"{name} is not Hermitian")
    return a


def expm_herm(h: np.ndarray, dt: float) -> np.ndarray:
    """``exp(-i dt H)`` for a (stack of) Hermitian matrices via eigh."""
    w, v = np.linalg.eigh(h)
    return (v * np.exp(-1j * dt * w)[..., None, :]) @ dag(v)


def expm_frechet_kernel(w: np.ndarray, dt: float) -> np.ndarray:
    """Divided differences of ``exp(-i dt x)`` on the eigenvalues ``w``.

    With ``H = V diag(w) V^dag``, the derivative of ``exp(-i dt H)`` along
    ``K`` is ``V (Phi * (V^dag K V)) V^dag`` where ``Phi`` is returned here.
    The sinc form avoids cancellation for (nearly) degenerate eigenvalues.
    """
    wk = w[..., :, None]
    wl = w[..., None, :]
    mid = np.exp(-0.5j * dt * (wk + wl))
    return -1j * dt * mid * np.sinc(dt * (wk - wl) / (2 * np.pi))


def psd_sqrt(c: np.ndarray, tol: float = 1e-12) -> np.ndarray:
    """Symmetric square root of a PSD matrix; eigenvalues in [-tol, 0] are clipped."""
    c = np.asarray(c)
    w, v = np.linalg.eigh(c)
    if np.any(w < -tol):
        raise ValueError(f"matrix is not positive semidefinite (min eigenvalue {w.min():.3e})")
    w = np.clip(w, 0.0, None)
    return (v * np.sqrt(w)) @ dag(v)


def lower_toeplitz(h: np.ndarray) -> np.ndarray:
    """Lower-triangular Toeplitz matrix with first column ``h``."""
    h = np.asarray(h)
    m = h.shape[0]
    idx = np.arange(m)[:, None] - np.arange(m)[None, :]
    out = np.where(idx >= 0, h[np.clip(idx, 0, None)], 0)
    return out.astype(h.dtype, copy=False)


def kron_factor(u: np.ndarray, n1: int, n2: int) -> tuple[np.ndarray, np.ndarray]:
    """Nearest Kronecker factorization ``u ~ a (x) b`` (Van Loan rearrangement).

    For an exact product of unitaries the factors are returned as unitaries,
    each defined up to a reciprocal phase.
    """
    r = u.reshape(n1, n2, n1, n2).transpose(0, 2, 1, 3).reshape(n1 * n1, n2 * n2)
    left, s, right = np.linalg.svd(r)
    # rescale so that ||a||_F = sqrt(n1), i.e. both factors unitary for product input
    a = np.sqrt(n1) * left[:, 0].reshape(n1, n1)
    b = s[0] / np.sqrt(n1) * right[0, :].reshape(n2, n2)
    return a, b
