# cosserat_observer/liegroup.py
"""
SO(3)/SE(3) primitives shared by the rod model, the shooting solver and the observers.

Conventions
-----------
- Twists and wrenches are 6-vectors stacked angular-first: eta = [w; v], xi = [u; q],
  Lambda = [m; n].  ``ANGULAR`` / ``LINEAR`` slice the two halves.
- Poses are 4x4 homogeneous matrices.
- Every function broadcasts over leading axes, so a (B, N, 6) stack of twists maps to a
  (B, N, 6, 6) stack of adjoints.  The shooting solver relies on this to run the Newton
  Jacobian sweeps as one batch.
"""
from __future__ import annotations

import logging
from typing import Tuple

import numpy as np

from .errors import DomainError, InvalidArgumentError

logger = logging.getLogger(__name__)

ANGULAR = slice(0, 3)
LINEAR = slice(3, 6)

SMALL_ANGLE = 1e-8          # below this the trig ratios switch to Taylor series
LOG_ANGLE_LIMIT = np.pi - 1e-6
ORTHONORMAL_TOL = 1e-8      # ||R^T R - I||_F that triggers re-projection
MATRIX_TOL = 1e-9


# --------------------------------------------
# hat / vee
# --------------------------------------------

def hat3(v: np.ndarray) -> np.ndarray:
    """Cross-product matrix: hat3(v) @ w == cross(v, w)."""
    v = np.asarray(v, dtype=float)
    out = np.zeros(v.shape[:-1] + (3, 3))
    out[..., 0, 1] = -v[..., 2]
    out[..., 0, 2] = v[..., 1]
    out[..., 1, 0] = v[..., 2]
    out[..., 1, 2] = -v[..., 0]
    out[..., 2, 0] = -v[..., 1]
    out[..., 2, 1] = v[..., 0]
    return out


def vee3(S: np.ndarray) -> np.ndarray:
    S = np.asarray(S, dtype=float)
    return np.stack([S[..., 2, 1], S[..., 0, 2], S[..., 1, 0]], axis=-1)


def hat6(twist: np.ndarray) -> np.ndarray:
    twist = np.asarray(twist, dtype=float)
    out = np.zeros(twist.shape[:-1] + (4, 4))
    out[..., :3, :3] = hat3(twist[..., ANGULAR])
    out[..., :3, 3] = twist[..., LINEAR]
    return out


def vee6(X: np.ndarray) -> np.ndarray:
    X = np.asarray(X, dtype=float)
    if X.shape[-2:] != (4, 4):
        raise InvalidArgumentError(f"vee6 expects (...,4,4) matrices, got {X.shape}")
    if np.any(np.abs(X[..., 3, :]) > MATRIX_TOL):
        raise InvalidArgumentError("vee6: bottom row of an se(3) matrix must be zero")
    W = X[..., :3, :3]
    if np.any(np.abs(W + np.swapaxes(W, -1, -2)) > MATRIX_TOL):
        raise InvalidArgumentError("vee6: rotation block is not skew-symmetric")
    return np.concatenate([vee3(W), X[..., :3, 3]], axis=-1)


# --------------------------------------------
# Adjoint operators
# --------------------------------------------

def ad(twist: np.ndarray) -> np.ndarray:
    """Lie-bracket matrix [[w^, 0], [v^, w^]]."""
    twist = np.asarray(twist, dtype=float)
    W = hat3(twist[..., ANGULAR])
    out = np.zeros(twist.shape[:-1] + (6, 6))
    out[..., :3, :3] = W
    out[..., 3:, 3:] = W
    out[..., 3:, :3] = hat3(twist[..., LINEAR])
    return out


def Ad(g: np.ndarray) -> np.ndarray:
    """Adjoint of a pose: [[R, 0], [p^ R, R]]."""
    R, p = pose_parts(g)
    out = np.zeros(R.shape[:-2] + (6, 6))
    out[..., :3, :3] = R
    out[..., 3:, 3:] = R
    out[..., 3:, :3] = hat3(p) @ R
    return out


def Ad_inverse(g: np.ndarray) -> np.ndarray:
    """Closed-form Ad(g)^-1 = [[R^T, 0], [-R^T p^, R^T]]."""
    R, p = pose_parts(g)
    Rt = np.swapaxes(R, -1, -2)
    out = np.zeros(R.shape[:-2] + (6, 6))
    out[..., :3, :3] = Rt
    out[..., 3:, 3:] = Rt
    out[..., 3:, :3] = -Rt @ hat3(p)
    return out


# --------------------------------------------
# Poses
# --------------------------------------------

def make_pose(R: np.ndarray, p: np.ndarray) -> np.ndarray:
    R = np.asarray(R, dtype=float)
    p = np.asarray(p, dtype=float)
    out = np.zeros(R.shape[:-2] + (4, 4))
    out[..., :3, :3] = R
    out[..., :3, 3] = p
    out[..., 3, 3] = 1.0
    return out


def identity_pose() -> np.ndarray:
    return np.eye(4)


def pose_parts(g: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    g = np.asarray(g, dtype=float)
    return g[..., :3, :3], g[..., :3, 3]


def pose_inverse(g: np.ndarray) -> np.ndarray:
    R, p = pose_parts(g)
    Rt = np.swapaxes(R, -1, -2)
    return make_pose(Rt, -np.einsum("...ij,...j->...i", Rt, p))


def orthonormality_error(g: np.ndarray) -> np.ndarray:
    """Frobenius norm of R^T R - I (per pose)."""
    R, _ = pose_parts(g)
    E = np.swapaxes(R, -1, -2) @ R - np.eye(3)
    return np.sqrt(np.sum(E * E, axis=(-2, -1)))


def reorthonormalize(g: np.ndarray, tol: float = ORTHONORMAL_TOL) -> np.ndarray:
    """Project drifted rotation blocks back onto SO(3) (polar factor via SVD)."""
    g = np.array(g, dtype=float, copy=True)
    flat = g.reshape(-1, 4, 4)
    err = orthonormality_error(flat)
    bad = err > tol
    if not np.any(bad):
        return g
    logger.warning("re-orthonormalising %d pose(s), max drift %.3e", int(np.sum(bad)), float(np.max(err)))
    U, _, Vt = np.linalg.svd(flat[bad, :3, :3])
    # keep det=+1
    neg = np.linalg.det(U @ Vt) < 0
    U[neg, :, -1] *= -1.0
    flat[bad, :3, :3] = U @ Vt
    return flat.reshape(g.shape)


def check_pose(g: np.ndarray, tol: float = MATRIX_TOL) -> None:
    g = np.asarray(g, dtype=float)
    if g.shape[-2:] != (4, 4):
        raise InvalidArgumentError(f"pose must be (...,4,4), got {g.shape}")
    if not np.all(np.isfinite(g)):
        raise InvalidArgumentError("pose has non-finite entries")
    if np.any(orthonormality_error(g) > tol):
        raise InvalidArgumentError("pose rotation is not orthonormal")
    if np.any(np.abs(np.linalg.det(g[..., :3, :3]) - 1.0) > tol):
        raise InvalidArgumentError("pose rotation has det != +1")


# --------------------------------------------
# exp / log
# --------------------------------------------

def _sin_half_sq(theta: np.ndarray) -> np.ndarray:
    # 1 - cos(theta) without cancellation
    return 2.0 * np.sin(0.5 * theta) ** 2


def exp_se3(twist: np.ndarray, step: float = 1.0) -> np.ndarray:
    """Pose increment exp((step * twist)^)."""
    twist = np.asarray(twist, dtype=float) * step
    w = twist[..., ANGULAR]
    v = twist[..., LINEAR]
    theta = np.linalg.norm(w, axis=-1)
    small = theta < SMALL_ANGLE
    th = np.where(small, 1.0, theta)
    t2 = theta * theta
    t4 = t2 * t2
    A = np.where(small, 1.0 - t2 / 6.0 + t4 / 120.0, np.sin(th) / th)
    B = np.where(small, 0.5 - t2 / 24.0 + t4 / 720.0, _sin_half_sq(th) / (th * th))
    C = np.where(small, 1.0 / 6.0 - t2 / 120.0 + t4 / 5040.0, (th - np.sin(th)) / (th ** 3))
    W = hat3(w)
    W2 = W @ W
    I = np.eye(3)
    R = I + A[..., None, None] * W + B[..., None, None] * W2
    V = I + B[..., None, None] * W + C[..., None, None] * W2
    return make_pose(R, np.einsum("...ij,...j->...i", V, v))


def log_se3(g: np.ndarray) -> np.ndarray:
    """Twist xi with exp_se3(xi) == g; rotation angle must stay below pi - 1e-6."""
    R, p = pose_parts(g)
    s_vec = 0.5 * vee3(R - np.swapaxes(R, -1, -2))
    s = np.linalg.norm(s_vec, axis=-1)
    c = 0.5 * (np.trace(R, axis1=-2, axis2=-1) - 1.0)
    theta = np.arctan2(s, c)
    if np.any(theta >= LOG_ANGLE_LIMIT):
        raise DomainError(
            f"log_se3: rotation angle {float(np.max(theta)):.6f} rad is within 1e-6 of pi"
        )
    small = theta < SMALL_ANGLE
    th = np.where(small, 1.0, theta)
    t2 = theta * theta
    t4 = t2 * t2
    factor = np.where(small, 1.0 + t2 / 6.0 + 7.0 * t4 / 360.0, th / np.sin(th))
    w = factor[..., None] * s_vec
    half = 0.5 * th
    D = np.where(small, 1.0 / 12.0 + t2 / 720.0 + t4 / 30240.0,
                 (1.0 - half * np.cos(half) / np.sin(half)) / (th * th))
    W = hat3(w)
    Vinv = np.eye(3) - 0.5 * W + D[..., None, None] * (W @ W)
    return np.concatenate([w, np.einsum("...ij,...j->...i", Vinv, p)], axis=-1)


def rotation_angle(R: np.ndarray) -> np.ndarray:
    """Geodesic angle of a rotation (or relative rotation) in [0, pi]."""
    R = np.asarray(R, dtype=float)
    s = np.linalg.norm(0.5 * vee3(R - np.swapaxes(R, -1, -2)), axis=-1)
    c = 0.5 * (np.trace(R, axis1=-2, axis2=-1) - 1.0)
    return np.arctan2(s, c)
