# cosserat_observer/gains.py
"""
Gain analysis for the linearised rod: characteristic speeds, Riemann coordinates,
boundary reflection matrices, the convergence-rate estimate and the absorbing gains.

    S      = K^1/2 M^-1 K^1/2 = U^T Sigma^2 U
    phi+-  = U K^1/2 eta -+ Sigma U K^-1/2 Lambda
    rho_0  = (I + H Sigma^-1)^-1 (H Sigma^-1 - I),   H  = U K^1/2 G0 K^1/2 U^T
    rho_1  = (I + Sigma G1)^-1 (I - Sigma G1),        G1 = U K^-1/2 Gamma_1 K^-1/2 U^T
    mu_max = sigma_min(Sigma) / (2L) * ln(1 / sigma_max(rho_0 rho_1))
"""
from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Dict, Optional, Tuple

import numpy as np
import scipy.linalg

from . import liegroup as lg
from .errors import InvalidArgumentError, SingularReflectionError
from .rodmodel import RodParameters

logger = logging.getLogger(__name__)

SINGULAR_COND = 1e12
ZERO_SIGMA = 1e-12


def _check_spd(name: str, A) -> np.ndarray:
    A = np.asarray(A, dtype=float)
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise InvalidArgumentError(f"{name} must be square, got {A.shape}")
    scale = max(1.0, float(np.max(np.abs(A))))
    if not np.allclose(A, A.T, rtol=0.0, atol=1e-12 * scale):
        raise InvalidArgumentError(f"{name} must be symmetric")
    if not np.all(np.isfinite(A)) or np.linalg.eigvalsh(A)[0] <= 0:
        raise InvalidArgumentError(f"{name} must be positive definite")
    return 0.5 * (A + A.T)


def spd_power(A: np.ndarray, power: float) -> np.ndarray:
    """A^power for a symmetric positive definite matrix."""
    w, V = scipy.linalg.eigh(A)
    return (V * w ** power) @ V.T


def _symmetrize(A: np.ndarray) -> np.ndarray:
    return 0.5 * (A + A.T)


# --------------------------------------------
# Diagonalisation
# --------------------------------------------

@dataclass(frozen=True)
class GainAnalysis:
    M: np.ndarray
    K: np.ndarray
    S: np.ndarray
    U: np.ndarray
    Sigma: np.ndarray
    K_half: np.ndarray
    K_half_inv: np.ndarray

    @property
    def speeds(self) -> np.ndarray:
        return np.diag(self.Sigma).copy()


def riemann_setup(M, K) -> GainAnalysis:
    """Symmetric eigendecomposition of S with ascending speeds and sign-fixed eigenvectors."""
    M = _check_spd("M", M)
    K = _check_spd("K", K)
    K_half = _symmetrize(spd_power(K, 0.5))
    K_half_inv = _symmetrize(spd_power(K, -0.5))
    S = _symmetrize(K_half @ np.linalg.solve(M, K_half))
    n = S.shape[0]
    if np.count_nonzero(S - np.diag(np.diag(S))) == 0:
        # diagonal S: exact permutation basis
        order = np.argsort(np.diag(S), kind="stable")
        lam = np.diag(S)[order]
        V = np.eye(n)[:, order]
    else:
        lam, V = scipy.linalg.eigh(S)
    idx = np.argmax(np.abs(V), axis=0)
    signs = np.where(V[idx, np.arange(n)] < 0, -1.0, 1.0)
    V = V * signs
    if np.any(lam <= 0):
        raise InvalidArgumentError("S is not positive definite")
    return GainAnalysis(M=M, K=K, S=S, U=V.T, Sigma=np.diag(np.sqrt(lam)), K_half=K_half, K_half_inv=K_half_inv)


def riemann_transform(lam: np.ndarray, eta: np.ndarray, analysis: GainAnalysis) -> Tuple[np.ndarray, np.ndarray]:
    a = analysis
    A = a.U @ a.K_half
    B = a.Sigma @ a.U @ a.K_half_inv
    lam = np.asarray(lam, dtype=float)
    eta = np.asarray(eta, dtype=float)
    x = np.einsum("ij,...j->...i", A, eta)
    y = np.einsum("ij,...j->...i", B, lam)
    return x - y, x + y


def riemann_inverse(phi_plus: np.ndarray, phi_minus: np.ndarray, analysis: GainAnalysis) -> Tuple[np.ndarray, np.ndarray]:
    a = analysis
    Sigma_inv = np.diag(1.0 / np.diag(a.Sigma))
    P = 0.5 * a.K_half @ a.U.T @ Sigma_inv
    Q = 0.5 * a.K_half_inv @ a.U.T
    phi_plus = np.asarray(phi_plus, dtype=float)
    phi_minus = np.asarray(phi_minus, dtype=float)
    lam = np.einsum("ij,...j->...i", P, phi_minus - phi_plus)
    eta = np.einsum("ij,...j->...i", Q, phi_minus + phi_plus)
    return lam, eta


# --------------------------------------------
# Reflection matrices
# --------------------------------------------

def _cayley(A: np.ndarray, B: np.ndarray, what: str) -> np.ndarray:
    """A^-1 B with a conditioning guard."""
    cond = np.linalg.cond(A)
    if not np.isfinite(cond) or cond > SINGULAR_COND:
        raise SingularReflectionError(f"{what}: I + Sigma G is singular (cond={cond:.3e})")
    return np.linalg.solve(A, B)


def reflection_from_G(G: np.ndarray, Sigma: np.ndarray, form: str = "sigma") -> np.ndarray:
    """Either printed form: (I + Sigma G)^-1 (I - Sigma G) or (Sigma^-1 + G)^-1 (Sigma^-1 - G)."""
    I = np.eye(G.shape[0])
    if form == "sigma":
        SG = Sigma @ G
        return _cayley(I + SG, I - SG, "reflection")
    if form == "sigma_inverse":
        Si = np.diag(1.0 / np.diag(Sigma))
        return _cayley(Si + G, Si - G, "reflection")
    raise InvalidArgumentError(f"unknown reflection form {form!r}")


def base_reflection(gamma0: np.ndarray, analysis: GainAnalysis) -> np.ndarray:
    """rho_0 through H = U K^1/2 Gamma_0 K^1/2 U^T; equals -I for Gamma_0 = 0."""
    a = analysis
    I = np.eye(a.S.shape[0])
    H = a.U @ a.K_half @ np.asarray(gamma0, dtype=float) @ a.K_half @ a.U.T
    A = H @ np.diag(1.0 / np.diag(a.Sigma))
    return _cayley(I + A, A - I, "base reflection")


def tip_reflection(gamma1: np.ndarray, analysis: GainAnalysis) -> np.ndarray:
    a = analysis
    G1 = a.U @ a.K_half_inv @ np.asarray(gamma1, dtype=float) @ a.K_half_inv @ a.U.T
    return reflection_from_G(G1, a.Sigma, "sigma")


def reflection_matrices(gamma0: np.ndarray, gamma1: np.ndarray, analysis: GainAnalysis) -> Tuple[np.ndarray, np.ndarray]:
    return base_reflection(gamma0, analysis), tip_reflection(gamma1, analysis)


def mu_max(rho0: np.ndarray, rho1: np.ndarray, Sigma: np.ndarray, length: float) -> float:
    """Decay-rate estimate (1/s); +inf for a perfectly absorbing pair, 0 when nothing decays."""
    if not length > 0:
        raise InvalidArgumentError("length must be > 0")
    smax = float(np.linalg.norm(np.asarray(rho0) @ np.asarray(rho1), 2))
    if smax <= ZERO_SIGMA:
        return float("inf")
    if smax >= 1.0:
        return 0.0
    return float(np.min(np.diag(Sigma)) / (2.0 * length) * np.log(1.0 / smax))


def mu_for_gains(M, K, length: float, gamma0, gamma1) -> float:
    a = riemann_setup(M, K)
    rho0, rho1 = reflection_matrices(gamma0, gamma1, a)
    return mu_max(rho0, rho1, a.Sigma, length)


# --------------------------------------------
# Absorbing gains
# --------------------------------------------

def optimal_gains(M, K) -> Tuple[np.ndarray, np.ndarray]:
    """Gamma_0* = K^-1/2 S^1/2 K^-1/2 and Gamma_1* = (Gamma_0*)^-1 (both reflections vanish)."""
    a = riemann_setup(M, K)
    S_half = a.U.T @ a.Sigma @ a.U
    G0 = _symmetrize(a.K_half_inv @ S_half @ a.K_half_inv)
    G1 = _symmetrize(np.linalg.inv(G0))
    return G0, G1


def finite_time_bound(Sigma: np.ndarray, length: float, absorbing: str = "one") -> float:
    """Time for every error wave to leave the rod with one or both boundaries absorbing."""
    smin = float(np.min(np.diag(np.atleast_2d(Sigma))))
    if absorbing == "one":
        return 2.0 * length / smin
    if absorbing == "both":
        return length / smin
    raise InvalidArgumentError(f"absorbing must be 'one' or 'both', got {absorbing!r}")


def _embed(block: np.ndarray, part: slice) -> np.ndarray:
    out = np.zeros((6, 6))
    out[part, part] = block
    return out


def channel_reference_gains(M, K) -> Dict[str, np.ndarray]:
    """
    Reference gains for injecting a single measurement channel:
    base moment / base force use the 3x3 absorbing base gain of the angular / linear
    block, tip angular / linear velocity its inverse.  For diagonal blocks these are
    (M_a K_a)^-1/2, (M_l K_l)^-1/2, (M_a K_a)^1/2 and (M_l K_l)^1/2.
    """
    M = _check_spd("M", M)
    K = _check_spd("K", K)
    out = {}
    for tag, part in (("angular", lg.ANGULAR), ("linear", lg.LINEAR)):
        g0, g1 = optimal_gains(M[part, part], K[part, part])
        out["base_moment" if tag == "angular" else "base_force"] = _embed(g0, part)
        out["tip_angular" if tag == "angular" else "tip_linear"] = _embed(g1, part)
    return out


def averaged_channel_gains(angular: np.ndarray, linear: np.ndarray) -> np.ndarray:
    """Arithmetic mean of two tuned single-channel gains."""
    return 0.5 * (np.asarray(angular, dtype=float) + np.asarray(linear, dtype=float))


@dataclass(frozen=True)
class NodeAnalysis:
    speeds: np.ndarray       # (N,6)
    base_optimal: np.ndarray  # (N,6,6)
    tip_optimal: np.ndarray   # (N,6,6)

    @property
    def slowest_speed(self) -> float:
        return float(np.min(self.speeds))


def node_analysis(params: RodParameters) -> NodeAnalysis:
    """Diagonalisation and absorbing gains evaluated with node-local M and K."""
    speeds, g0s, g1s = [], [], []
    for k in range(params.node_count):
        a = riemann_setup(params.M[k], params.K[k])
        speeds.append(a.speeds)
        g0, g1 = optimal_gains(params.M[k], params.K[k])
        g0s.append(g0)
        g1s.append(g1)
    return NodeAnalysis(speeds=np.array(speeds), base_optimal=np.array(g0s), tip_optimal=np.array(g1s))


def reflection_spectrum(gamma: np.ndarray, analysis: GainAnalysis, end: str) -> np.ndarray:
    """
    Ascending eigenvalues of the symmetrised numerator of the reflection:
    I - Sigma^1/2 G1 Sigma^1/2 for the tip, Sigma^-1/2 H Sigma^-1/2 - I for the base.
    An eigenvalue crosses zero exactly where the gain absorbs that wave family.
    """
    a = analysis
    n = a.S.shape[0]
    gamma = np.asarray(gamma, dtype=float)
    if end == "tip":
        root = np.diag(np.sqrt(np.diag(a.Sigma)))
        G = a.U @ a.K_half_inv @ gamma @ a.K_half_inv @ a.U.T
        return scipy.linalg.eigvalsh(_symmetrize(np.eye(n) - root @ G @ root))
    if end == "base":
        root_inv = np.diag(1.0 / np.sqrt(np.diag(a.Sigma)))
        H = a.U @ a.K_half @ gamma @ a.K_half @ a.U.T
        return scipy.linalg.eigvalsh(_symmetrize(root_inv @ H @ root_inv - np.eye(n)))
    raise InvalidArgumentError(f"end must be 'base' or 'tip', got {end!r}")
