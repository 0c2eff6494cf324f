"""
Fixed-size linear algebra and SO(3) helpers.

Rotations, vectors and matrices are plain ``numpy`` arrays. ``vec`` uses
column-major (Fortran) stacking everywhere in the package; the output
matrices in :mod:`ltvins.ltv` depend on that ordering.
"""

from __future__ import annotations

import numpy as np
from numpy.typing import ArrayLike, NDArray

# Tolerances, overridable per call.
ORTHO_TOL = 1e-9
DEGENERACY_TOL = 1e-12


def as_vec3(v: ArrayLike) -> NDArray[np.float64]:
    out = np.asarray(v, dtype=float).reshape(-1)
    if out.shape != (3,):
        raise ValueError(f"expected a 3-vector, got shape {np.shape(v)}")
    if not np.all(np.isfinite(out)):
        raise ValueError("vector has non-finite entries")
    return out


def as_mat3(m: ArrayLike) -> NDArray[np.float64]:
    out = np.asarray(m, dtype=float)
    if out.shape != (3, 3):
        raise ValueError(f"expected a 3x3 matrix, got shape {out.shape}")
    if not np.all(np.isfinite(out)):
        raise ValueError("matrix has non-finite entries")
    return out


def skew(v: ArrayLike) -> NDArray[np.float64]:
    """
    Skew-symmetric matrix such that ``skew(v) @ w == np.cross(v, w)``.

    Parameters
    ----------
    v : array_like, shape (3,)

    Returns
    -------
    ndarray, shape (3, 3)
    """
    x, y, z = as_vec3(v)
    return np.array([[0.0, -z, y], [z, 0.0, -x], [-y, x, 0.0]])


def vec(m: ArrayLike) -> NDArray[np.float64]:
    """Stack the columns of ``m`` into a single vector."""
    return np.asarray(m, dtype=float).reshape(-1, order="F")


def unvec3(z: ArrayLike) -> NDArray[np.float64]:
    """Inverse of :func:`vec` for 3x3 matrices."""
    z = np.asarray(z, dtype=float).reshape(-1)
    if z.shape != (9,):
        raise ValueError(f"expected 9 entries, got {z.size}")
    return z.reshape(3, 3, order="F")


def kron(a: ArrayLike, b: ArrayLike) -> NDArray[np.float64]:
    """Kronecker product of two 2-D arrays, block ``(i, j)`` equal to ``a[i, j] * b``."""
    a = np.atleast_2d(np.asarray(a, dtype=float))
    b = np.atleast_2d(np.asarray(b, dtype=float))
    if a.ndim != 2 or b.ndim != 2:
        raise ValueError("kron expects 2-D operands")
    (m, n), (p, q) = a.shape, b.shape
    # np.kron carries heavy generic overhead for these small operands
    return (a[:, None, :, None] * b[None, :, None, :]).reshape(m * p, n * q)


def cross3(a, b) -> NDArray[np.float64]:
    """Cross product of two 3-vectors."""
    a0, a1, a2 = a
    b0, b1, b2 = b
    return np.array([a1 * b2 - a2 * b1, a2 * b0 - a0 * b2, a0 * b1 - a1 * b0])


def exp_so3(v: ArrayLike) -> NDArray[np.float64]:
    """
    Rotation matrix ``exp([v]x)`` by the Rodrigues formula.

    Parameters
    ----------
    v : array_like, shape (3,)
        Rotation vector in radians.

    Returns
    -------
    ndarray, shape (3, 3)
    """
    v = as_vec3(v)
    theta = float(np.linalg.norm(v))
    K = skew(v)
    if theta < 1e-6:
        # Taylor terms keep full precision near zero
        a = 1.0 - theta**2 / 6.0 + theta**4 / 120.0
        b = 0.5 - theta**2 / 24.0 + theta**4 / 720.0
    else:
        a = np.sin(theta) / theta
        b = (1.0 - np.cos(theta)) / theta**2
    return np.eye(3) + a * K + b * (K @ K)


def project_to_so3(m: ArrayLike, tol: float = DEGENERACY_TOL) -> tuple[NDArray[np.float64], bool]:
    """
    Closest rotation matrix to ``m`` in the Frobenius norm.

    With the SVD ``m = U S V^T`` the result is ``U diag(1, 1, det(U V^T)) V^T``.

    Parameters
    ----------
    m : array_like, shape (3, 3)
    tol : float
        Relative singular-value gap below which the minimiser is flagged as
        non-unique.

    Returns
    -------
    R : ndarray, shape (3, 3)
        A minimising rotation.
    degenerate : bool
        True when the minimiser is not unique (repeated smallest singular
        values with a reflection, or rank below 2). ``R`` is still a valid
        rotation in that case.
    """
    m = as_mat3(m)
    U, s, Vt = np.linalg.svd(m)
    d = np.sign(np.linalg.det(U @ Vt))
    if d == 0.0:
        d = 1.0
    R = (U * np.array([1.0, 1.0, d])) @ Vt
    scale = max(s[0], 1.0)
    degenerate = bool(s[1] <= tol * scale or (d < 0 and s[1] - s[2] <= tol * scale))
    return R, degenerate


def is_rotation(m: ArrayLike, tol: float = ORTHO_TOL) -> bool:
    m = np.asarray(m, dtype=float)
    if m.shape != (3, 3) or not np.all(np.isfinite(m)):
        return False
    return bool(
        np.linalg.norm(m @ m.T - np.eye(3)) <= tol and abs(np.linalg.det(m) - 1.0) <= tol
    )


def orthogonality_residual(m: ArrayLike) -> float:
    m = np.asarray(m, dtype=float)
    return float(np.linalg.norm(m @ m.T - np.eye(3)))


def rotation_angle_between(Ra: ArrayLike, Rb: ArrayLike) -> float:
    """Geodesic angle in radians between two rotations."""
    # ||Ra - Rb||_F = 2 sqrt(2) sin(theta / 2), well conditioned near zero
    d = np.linalg.norm(np.asarray(Ra) - np.asarray(Rb)) / (2.0 * np.sqrt(2.0))
    return float(2.0 * np.arcsin(min(d, 1.0)))
