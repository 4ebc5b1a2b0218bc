# cosserat_observer/rodmodel.py
"""
Physical model of the rod: cross-section matrices, constitutive law, tendon actuation,
gravity, energy, and the Kirchhoff special-case reconstructions.

Every per-arclength quantity is sampled on a uniform node grid that includes both ends;
integrals use the trapezoidal rule on that grid.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Optional, Sequence, Tuple

import numpy as np
from scipy.integrate import cumulative_trapezoid, trapezoid

from . import liegroup as lg
from .errors import DegenerateTangentError, InvalidArgumentError

logger = logging.getLogger(__name__)

STRAIGHT_STRAIN = np.array([0.0, 0.0, 0.0, 0.0, 0.0, 1.0])
STANDARD_GRAVITY = 9.81


# --------------------------------------------
# Cross-section matrices
# --------------------------------------------

def build_section_matrices(radius: float, density: float, youngs: float, shear: float) -> Tuple[np.ndarray, np.ndarray]:
    """
    Solid circular section:
      M_a = diag(1,1,2) rho pi r^4/4,  M_l = rho pi r^2 I
      K_a = diag(E,E,2G) pi r^4/4,     K_l = diag(G,G,E) pi r^2
    Returns (M, K) = (diag(M_a, M_l), diag(K_a, K_l)).
    """
    for name, val in (("radius", radius), ("density", density), ("youngs", youngs), ("shear", shear)):
        if not np.isfinite(val) or val <= 0:
            raise InvalidArgumentError(f"build_section_matrices: {name} must be > 0, got {val}")
    area = np.pi * radius ** 2
    polar4 = np.pi * radius ** 4 / 4.0
    M = np.diag(np.concatenate([np.array([1.0, 1.0, 2.0]) * density * polar4, np.full(3, density * area)]))
    K = np.diag(np.concatenate([np.array([youngs, youngs, 2.0 * shear]) * polar4,
                                np.array([shear, shear, youngs]) * area]))
    return M, K


# --------------------------------------------
# Tendons
# --------------------------------------------

@dataclass(frozen=True)
class TendonRouting:
    """Body-frame tendon offsets d(s) sampled at the nodes; active for node <= termination_node."""
    offset: np.ndarray
    termination_node: int
    offset_derivative: Optional[np.ndarray] = None

    def resolved(self, ds: float) -> "TendonRouting":
        d = np.asarray(self.offset, dtype=float)
        if d.ndim != 2 or d.shape[1] != 3:
            raise InvalidArgumentError(f"tendon offset must be (N,3), got {d.shape}")
        fd = np.gradient(d, ds, axis=0, edge_order=2) if d.shape[0] > 2 else np.gradient(d, ds, axis=0)
        if self.offset_derivative is None:
            dd = fd
        else:
            dd = np.asarray(self.offset_derivative, dtype=float)
            if dd.shape != d.shape:
                raise InvalidArgumentError("tendon offset_derivative must match offset shape")
            curv = np.gradient(fd, ds, axis=0) if d.shape[0] > 2 else np.zeros_like(fd)
            tol = 1e-9 + ds * float(np.max(np.abs(curv))) + 1e-6 * float(np.max(np.abs(dd), initial=0.0))
            if float(np.max(np.abs(dd - fd))) > tol:
                raise InvalidArgumentError("tendon offset_derivative is inconsistent with offset samples")
        return TendonRouting(offset=d, termination_node=int(self.termination_node), offset_derivative=dd)


def parallel_tendon(node_count: int, radius: float, angle: float, termination_node: Optional[int] = None) -> TendonRouting:
    """Straight tendon at constant offset radius*(cos a, sin a, 0)."""
    d = np.tile([radius * np.cos(angle), radius * np.sin(angle), 0.0], (node_count, 1))
    term = node_count - 1 if termination_node is None else termination_node
    return TendonRouting(offset=d, termination_node=term, offset_derivative=np.zeros_like(d))


# --------------------------------------------
# Parameters and state
# --------------------------------------------

@dataclass(frozen=True)
class RodParameters:
    length: float
    node_count: int
    M: np.ndarray                 # (N,6,6)
    K: np.ndarray                 # (N,6,6)
    reference_strain: np.ndarray  # (N,6)
    gravity_wrench: np.ndarray    # (N,6) global-frame wrench per unit length
    tendons: Tuple[TendonRouting, ...] = ()
    K_inv: np.ndarray = field(init=False, repr=False)
    s: np.ndarray = field(init=False, repr=False)
    ds: float = field(init=False, repr=False)
    tendon_unit_wrenches: np.ndarray = field(init=False, repr=False)  # (n_tendons, N, 6)

    def __post_init__(self):
        N = int(self.node_count)
        if N < 2:
            raise InvalidArgumentError("node_count must be >= 2")
        if not self.length > 0:
            raise InvalidArgumentError("length must be > 0")
        M = _per_node(self.M, N, (6, 6), "M")
        K = _per_node(self.K, N, (6, 6), "K")
        xi_o = _per_node(self.reference_strain, N, (6,), "reference_strain")
        F_G = _per_node(self.gravity_wrench, N, (6,), "gravity_wrench")
        for name, mats in (("M", M), ("K", K)):
            if not np.allclose(mats, np.swapaxes(mats, -1, -2), rtol=1e-12, atol=0.0):
                raise InvalidArgumentError(f"{name} must be symmetric at every node")
            if np.any(np.linalg.eigvalsh(mats)[:, 0] <= 0):
                raise InvalidArgumentError(f"{name} must be positive definite at every node")
        if np.any(np.linalg.norm(xi_o[:, lg.LINEAR], axis=1) <= 0):
            raise InvalidArgumentError("reference strain needs a nonzero linear part at every node")
        ds = self.length / (N - 1)
        tendons = tuple(t.resolved(ds) for t in self.tendons)
        for t in tendons:
            if t.offset.shape[0] != N:
                raise InvalidArgumentError("tendon offsets must be sampled on the rod nodes")
        object.__setattr__(self, "node_count", N)
        object.__setattr__(self, "M", M)
        object.__setattr__(self, "K", K)
        object.__setattr__(self, "reference_strain", xi_o)
        object.__setattr__(self, "gravity_wrench", F_G)
        object.__setattr__(self, "tendons", tendons)
        object.__setattr__(self, "K_inv", np.linalg.inv(K))
        object.__setattr__(self, "s", np.linspace(0.0, self.length, N))
        object.__setattr__(self, "ds", ds)
        object.__setattr__(self, "tendon_unit_wrenches", _tendon_unit_wrenches(tendons, xi_o))

    @classmethod
    def uniform(
        cls,
        length: float,
        node_count: int,
        M: np.ndarray,
        K: np.ndarray,
        reference_strain: Optional[np.ndarray] = None,
        gravity: Optional[Sequence[float]] = None,
        tendons: Sequence[TendonRouting] = (),
    ) -> "RodParameters":
        """Uniform rod; gravity (m/s^2, global frame) becomes a force rho*A*g per unit length."""
        M = np.asarray(M, dtype=float)
        xi_o = STRAIGHT_STRAIN if reference_strain is None else np.asarray(reference_strain, dtype=float)
        F_G = np.zeros(6)
        if gravity is not None:
            F_G[lg.LINEAR] = linear_density(M) * np.asarray(gravity, dtype=float)
        return cls(length=float(length), node_count=int(node_count), M=M, K=np.asarray(K, dtype=float),
                   reference_strain=xi_o, gravity_wrench=F_G, tendons=tuple(tendons))

    @property
    def tendon_count(self) -> int:
        return len(self.tendons)

    def tendon_active(self, node: int) -> np.ndarray:
        return np.array([node <= t.termination_node for t in self.tendons], dtype=bool)

    def with_stiffness_scale(self, factor: float) -> "RodParameters":
        """Same rod with every K multiplied by factor (model-mismatch studies)."""
        if not np.isfinite(factor) or factor <= 0:
            raise InvalidArgumentError(f"stiffness scale must be > 0, got {factor}")
        return RodParameters(length=self.length, node_count=self.node_count, M=self.M, K=self.K * factor,
                             reference_strain=self.reference_strain, gravity_wrench=self.gravity_wrench,
                             tendons=self.tendons)

    def resampled(self, node_count: int) -> "RodParameters":
        """Same rod on a different node grid (linear interpolation of every node table)."""
        s_new = np.linspace(0.0, self.length, node_count)

        def interp(arr):
            flat = arr.reshape(self.node_count, -1)
            out = np.stack([np.interp(s_new, self.s, flat[:, j]) for j in range(flat.shape[1])], axis=1)
            return out.reshape((node_count,) + arr.shape[1:])

        tendons = []
        for t in self.tendons:
            term_s = self.s[t.termination_node]
            tendons.append(TendonRouting(offset=interp(t.offset),
                                         termination_node=int(np.searchsorted(s_new, term_s + 1e-12) - 1),
                                         offset_derivative=interp(t.offset_derivative)))
        return RodParameters(length=self.length, node_count=node_count, M=interp(self.M), K=interp(self.K),
                             reference_strain=interp(self.reference_strain),
                             gravity_wrench=interp(self.gravity_wrench), tendons=tuple(tendons))


@dataclass
class RodState:
    """Per-node fields on the arclength grid at time t."""
    g: np.ndarray     # (N,4,4)
    xi: np.ndarray    # (N,6)
    eta: np.ndarray   # (N,6)
    lam: np.ndarray   # (N,6)
    t: float = 0.0

    @property
    def positions(self) -> np.ndarray:
        return self.g[:, :3, 3]

    @property
    def rotations(self) -> np.ndarray:
        return self.g[:, :3, :3]

    def copy(self) -> "RodState":
        return RodState(g=self.g.copy(), xi=self.xi.copy(), eta=self.eta.copy(), lam=self.lam.copy(), t=self.t)


def linear_density(M: np.ndarray) -> float:
    """rho*A recovered from the linear inertia block (mean of its diagonal)."""
    M = np.asarray(M, dtype=float)
    if M.ndim == 3:
        M = M[0]
    return float(np.trace(M[lg.LINEAR, lg.LINEAR]) / 3.0)


def _per_node(arr, N: int, shape: Tuple[int, ...], name: str) -> np.ndarray:
    a = np.asarray(arr, dtype=float)
    if a.shape == shape:
        return np.broadcast_to(a, (N,) + shape).copy()
    if a.shape == (N,) + shape:
        return a.copy()
    raise InvalidArgumentError(f"{name}: expected {shape} or {(N,) + shape}, got {a.shape}")


def _tendon_unit_wrenches(tendons: Sequence[TendonRouting], xi_o: np.ndarray) -> np.ndarray:
    """Actuation wrench per unit tension: [d^ T; T] / |T| with T = q_o + u_o^ d + d'."""
    N = xi_o.shape[0]
    out = np.zeros((len(tendons), N, 6))
    for i, t in enumerate(tendons):
        d = t.offset
        T = xi_o[:, lg.LINEAR] + np.cross(xi_o[:, lg.ANGULAR], d) + t.offset_derivative
        norm = np.linalg.norm(T, axis=1)
        if np.any(norm <= 0):
            raise InvalidArgumentError(f"tendon {i} has a zero tangent")
        out[i, :, lg.ANGULAR] = np.cross(d, T) / norm[:, None]
        out[i, :, lg.LINEAR] = T / norm[:, None]
    return out


# --------------------------------------------
# Wrenches
# --------------------------------------------

def elastic_wrench(params: RodParameters, xi: np.ndarray, node: int) -> np.ndarray:
    """Hooke's law K (xi - xi_o) at one node."""
    return params.K[node] @ (np.asarray(xi, dtype=float) - params.reference_strain[node])


def strain_from_wrench(params: RodParameters, lam: np.ndarray, act: np.ndarray, node: int) -> np.ndarray:
    """Inverse Hooke: xi = K^-1 (Lambda - Lambda_act) + xi_o."""
    return params.K_inv[node] @ (np.asarray(lam, dtype=float) - act) + params.reference_strain[node]


def _check_tensions(params: RodParameters, tensions) -> np.ndarray:
    tau = np.zeros(params.tendon_count) if tensions is None else np.asarray(tensions, dtype=float).reshape(-1)
    if tau.shape[0] != params.tendon_count:
        raise InvalidArgumentError(f"expected {params.tendon_count} tensions, got {tau.shape[0]}")
    if np.any(tau < 0):
        raise InvalidArgumentError("tendon tensions must be >= 0")
    return tau


def actuation_wrench(params: RodParameters, tensions, node: int) -> np.ndarray:
    tau = _check_tensions(params, tensions)
    if params.tendon_count == 0:
        return np.zeros(6)
    active = params.tendon_active(node)
    return np.einsum("i,ij->j", tau * active, params.tendon_unit_wrenches[:, node, :])


def actuation_field(params: RodParameters, tensions) -> np.ndarray:
    """Lambda_act at every node, (N,6)."""
    tau = _check_tensions(params, tensions)
    if params.tendon_count == 0:
        return np.zeros((params.node_count, 6))
    nodes = np.arange(params.node_count)
    active = np.array([nodes <= t.termination_node for t in params.tendons], dtype=float)  # (T,N)
    return np.einsum("i,in,inj->nj", tau, active, params.tendon_unit_wrenches)


def actuation_intervals(params: RodParameters, tensions) -> Tuple[np.ndarray, np.ndarray]:
    """
    Lambda_act at the left and right end of every grid interval, (N-1,6) each.
    A tendon acts on interval k only when node k+1 is within its termination, so the
    jump at a termination node falls between intervals.
    """
    tau = _check_tensions(params, tensions)
    N = params.node_count
    if params.tendon_count == 0:
        z = np.zeros((N - 1, 6))
        return z, z.copy()
    right_nodes = np.arange(1, N)
    active = np.array([right_nodes <= t.termination_node for t in params.tendons], dtype=float)  # (T,N-1)
    U = params.tendon_unit_wrenches
    left = np.einsum("i,in,inj->nj", tau, active, U[:, :-1, :])
    right = np.einsum("i,in,inj->nj", tau, active, U[:, 1:, :])
    return left, right


def external_wrench(params: RodParameters, g: np.ndarray, node: int) -> np.ndarray:
    """Body-frame distributed wrench Ad_g^-1 F_G."""
    return lg.Ad_inverse(g) @ params.gravity_wrench[node]


# --------------------------------------------
# Energy
# --------------------------------------------

def energy_density(params: RodParameters, xi: np.ndarray, eta: np.ndarray) -> np.ndarray:
    dxi = np.asarray(xi, dtype=float) - params.reference_strain
    eta = np.asarray(eta, dtype=float)
    return 0.5 * (np.einsum("ni,nij,nj->n", dxi, params.K, dxi) + np.einsum("ni,nij,nj->n", eta, params.M, eta))


def total_energy(params: RodParameters, state: RodState) -> float:
    """E = 1/2 int (xi - xi_o)^T K (xi - xi_o) + eta^T M eta ds."""
    return float(trapezoid(energy_density(params, state.xi, state.eta), params.s))


def error_energy(params: RodParameters, estimate: RodState, truth: RodState, eta_estimate: Optional[np.ndarray] = None) -> float:
    """Same quadratic form evaluated on (xi_hat - xi, eta_hat - eta)."""
    dxi = estimate.xi - truth.xi
    eta_hat = estimate.eta if eta_estimate is None else eta_estimate
    deta = eta_hat - truth.eta
    dens = 0.5 * (np.einsum("ni,nij,nj->n", dxi, params.K, dxi) + np.einsum("ni,nij,nj->n", deta, params.M, deta))
    return float(trapezoid(dens, params.s))


# --------------------------------------------
# Kirchhoff special cases
# --------------------------------------------

def kirchhoff_linear_velocity(
    R_field: np.ndarray,
    w_field: np.ndarray,
    v_base: np.ndarray,
    s: np.ndarray,
    q_o: Optional[np.ndarray] = None,
) -> np.ndarray:
    """v(s) = R^T [R(0) v(0) + int_0^s R w^ q_o ds] for an inextensible, unshearable rod."""
    R = np.asarray(R_field, dtype=float)
    w = np.asarray(w_field, dtype=float)
    q = np.broadcast_to(np.array([0.0, 0.0, 1.0]) if q_o is None else np.asarray(q_o, dtype=float), w.shape)
    integrand = np.einsum("nij,nj->ni", R, np.cross(w, q))
    spatial = R[0] @ np.asarray(v_base, dtype=float) + cumulative_trapezoid(integrand, np.asarray(s, dtype=float), axis=0, initial=0.0)
    return np.einsum("nji,nj->ni", R, spatial)


def planar_angle_from_positions(p_s_field: np.ndarray, q_o: Sequence[float] = (0.0, 1.0)) -> np.ndarray:
    """Unwrapped theta(s) solving p_s = Rot(theta) q_o for planar rods."""
    p_s = np.asarray(p_s_field, dtype=float)
    if np.any(np.linalg.norm(p_s, axis=-1) <= 1e-9):
        raise DegenerateTangentError("planar_angle_from_positions: tangent vanishes at some node")
    qx, qy = float(q_o[0]), float(q_o[1])
    cross = qx * p_s[:, 1] - qy * p_s[:, 0]
    dot = qx * p_s[:, 0] + qy * p_s[:, 1]
    return np.unwrap(np.arctan2(cross, dot))
