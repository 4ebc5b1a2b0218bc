# cosserat_observer/shootsolve.py
"""
Time stepper for the Cosserat rod: at every time level the spatial two-point boundary
value problem is solved by shooting on the base wrench Lambda(0,t).

Temporal derivatives follow an implicit linear rule
    x_t  ~=  c0 * x(t) + x_h
where (c0, x_h) come from the stored history (BDF1 on the first step, BDF2 afterwards,
c0 = 0 and x_h = 0 for static solves).  The spatial sweep is classical RK4 per grid
interval with multiplicative pose updates.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable, List, Optional

import numpy as np
import scipy.linalg

from . import liegroup as lg
from .errors import DivergenceError, InvalidArgumentError, NonconvergenceError
from .rodmodel import RodParameters, RodState, actuation_field, actuation_intervals

logger = logging.getLogger(__name__)

TIME_RULES = ("bdf2", "bdf1")

TensionSignal = Callable[[float], np.ndarray]


def _mv(A: np.ndarray, x: np.ndarray) -> np.ndarray:
    return np.einsum("...ij,...j->...i", A, x)


def _mtv(A: np.ndarray, x: np.ndarray) -> np.ndarray:
    return np.einsum("...ji,...j->...i", A, x)


# --------------------------------------------
# Settings, history, boundary inputs
# --------------------------------------------

@dataclass(frozen=True)
class SolverSettings:
    dt: float = 0.01
    residual_tolerance: float = 1e-6
    max_newton_iterations: int = 50
    finite_difference_step: float = 1e-6
    spatial_substeps_per_interval: int = 1
    max_step_halvings: int = 5
    time_rule: str = "bdf2"

    def __post_init__(self):
        if not self.dt > 0:
            raise InvalidArgumentError(f"dt must be > 0, got {self.dt}")
        if not self.residual_tolerance > 0:
            raise InvalidArgumentError("residual_tolerance must be > 0")
        if self.max_newton_iterations < 1:
            raise InvalidArgumentError("max_newton_iterations must be >= 1")
        if not self.finite_difference_step > 0:
            raise InvalidArgumentError("finite_difference_step must be > 0")
        if self.spatial_substeps_per_interval < 1:
            raise InvalidArgumentError("spatial_substeps_per_interval must be >= 1")
        if self.time_rule not in TIME_RULES:
            raise InvalidArgumentError(f"time_rule must be one of {TIME_RULES}")


@dataclass
class TimeHistory:
    """The last one or two solver states; the implicit derivative rule is read from here."""
    dt: float
    rule: str = "bdf2"
    states: List[RodState] = field(default_factory=list)

    def push(self, state: RodState) -> None:
        if self.states:
            gap = state.t - self.states[-1].t
            if abs(gap - self.dt) > 1e-9 * max(1.0, abs(self.dt)):
                raise InvalidArgumentError(
                    f"history timestamps must advance by dt={self.dt}, got {gap}"
                )
        self.states.append(state)
        del self.states[:-2]

    @property
    def latest(self) -> RodState:
        if not self.states:
            raise InvalidArgumentError("time history is empty")
        return self.states[-1]

    def derivative_terms(self):
        """(c0, xi_h, eta_h) so that x_t = c0 x + x_h at the next time level."""
        cur = self.latest
        if self.rule == "bdf1" or len(self.states) < 2:
            c0 = 1.0 / self.dt
            return c0, -cur.xi / self.dt, -cur.eta / self.dt
        prev = self.states[-2]
        c0 = 1.5 / self.dt
        return (c0,
                (-4.0 * cur.xi + prev.xi) / (2.0 * self.dt),
                (-4.0 * cur.eta + prev.eta) / (2.0 * self.dt))


def _constant(value):
    arr = np.array(value, dtype=float)
    return lambda t: arr


@dataclass(frozen=True)
class BoundaryInputs:
    """Physical boundary signals g0(t), eta0(t) and F1(t)."""
    base_pose: Callable[[float], np.ndarray] = field(default_factory=lambda: _constant(np.eye(4)))
    base_twist: Callable[[float], np.ndarray] = field(default_factory=lambda: _constant(np.zeros(6)))
    tip_wrench: Callable[[float], np.ndarray] = field(default_factory=lambda: _constant(np.zeros(6)))

    @classmethod
    def fixed(cls, base_pose: np.ndarray, tip_wrench: Optional[np.ndarray] = None) -> "BoundaryInputs":
        lg.check_pose(base_pose)
        return cls(base_pose=_constant(base_pose),
                   tip_wrench=_constant(np.zeros(6) if tip_wrench is None else tip_wrench))


class BoundaryStrategy:
    """Pass-through boundary conditions (pure prediction).  Observers override both hooks."""

    def base_twist(self, t: float, eta0: np.ndarray, lam0: np.ndarray) -> np.ndarray:
        return np.broadcast_to(eta0, lam0.shape)

    def tip_wrench(self, t: float, F1: np.ndarray, g_tip: np.ndarray, eta_tip: np.ndarray) -> np.ndarray:
        return np.broadcast_to(F1, eta_tip.shape)


PASS_THROUGH = BoundaryStrategy()


# --------------------------------------------
# Spatial right-hand side
# --------------------------------------------

def _rhs(g, eta, lam, K_inv, xi_o, act, M, F_G, c0, xi_h, eta_h):
    xi = _mv(K_inv, lam - act) + xi_o
    xi_t = c0 * xi + xi_h
    eta_t = c0 * eta + eta_h
    eta_s = xi_t - _mv(lg.ad(xi), eta)
    F = _mv(lg.Ad_inverse(g), F_G)
    lam_s = _mv(M, eta_t) - _mtv(lg.ad(eta), _mv(M, eta)) + _mtv(lg.ad(xi), lam) - F
    return xi, eta_s, lam_s


def spatial_rhs(
    params: RodParameters,
    g: np.ndarray,
    eta: np.ndarray,
    lam: np.ndarray,
    xi_t: np.ndarray,
    eta_t: np.ndarray,
    node: int,
    tensions: Optional[np.ndarray] = None,
):
    """
    (g_s, eta_s, Lambda_s) at one node given the time derivatives xi_t and eta_t.
    Strain is recovered from the wrench with the inverse constitutive law.
    """
    act = actuation_field(params, tensions)[node]
    # c0 = 0 turns the history slots into the derivatives themselves
    xi, eta_s, lam_s = _rhs(np.asarray(g, dtype=float), np.asarray(eta, dtype=float), np.asarray(lam, dtype=float),
                            params.K_inv[node], params.reference_strain[node], act, params.M[node],
                            params.gravity_wrench[node], 0.0, np.asarray(xi_t, dtype=float),
                            np.asarray(eta_t, dtype=float))
    return np.asarray(g, dtype=float) @ lg.hat6(xi), eta_s, lam_s


# --------------------------------------------
# Sweep coefficients
# --------------------------------------------

def _stage_table(left: np.ndarray, right: np.ndarray, m: int) -> np.ndarray:
    """Values at the start, middle and end of every sub-interval, (n_intervals*m, 3, ...)."""
    j = np.arange(m)
    f = np.stack([j / m, (j + 0.5) / m, (j + 1.0) / m], axis=1)
    f = f.reshape((1, m, 3) + (1,) * (left.ndim - 1))
    out = left[:, None, None] * (1.0 - f) + right[:, None, None] * f
    return out.reshape((-1, 3) + left.shape[1:])


@dataclass(frozen=True)
class SweepCoefficients:
    """Everything the spatial sweep needs at one time level, tabulated per RK4 stage."""
    K_inv: np.ndarray
    xi_o: np.ndarray
    act: np.ndarray
    M: np.ndarray
    F_G: np.ndarray
    xi_h: np.ndarray
    eta_h: np.ndarray
    c0: float
    h: float
    substeps: int
    node_act: np.ndarray
    node_K_inv: np.ndarray
    node_xi_o: np.ndarray


def sweep_coefficients(
    params: RodParameters,
    settings: SolverSettings,
    c0: float,
    xi_h: np.ndarray,
    eta_h: np.ndarray,
    tensions: Optional[np.ndarray] = None,
) -> SweepCoefficients:
    m = settings.spatial_substeps_per_interval

    def table(arr):
        return _stage_table(arr[:-1], arr[1:], m)

    act_left, act_right = actuation_intervals(params, tensions)
    return SweepCoefficients(
        K_inv=table(params.K_inv), xi_o=table(params.reference_strain),
        act=_stage_table(act_left, act_right, m), M=table(params.M), F_G=table(params.gravity_wrench),
        xi_h=table(np.asarray(xi_h, dtype=float)), eta_h=table(np.asarray(eta_h, dtype=float)),
        c0=float(c0), h=params.ds / m, substeps=m,
        node_act=actuation_field(params, tensions), node_K_inv=params.K_inv, node_xi_o=params.reference_strain,
    )


def static_coefficients(params: RodParameters, settings: SolverSettings, tensions=None) -> SweepCoefficients:
    z = np.zeros((params.node_count, 6))
    return sweep_coefficients(params, settings, 0.0, z, z, tensions)


# --------------------------------------------
# Spatial integration
# --------------------------------------------

@dataclass
class SpatialSweep:
    g: np.ndarray      # (B,N,4,4)
    xi: np.ndarray     # (B,N,6)
    eta: np.ndarray    # (B,N,6)
    lam: np.ndarray    # (B,N,6)
    finite: np.ndarray  # (B,)

    def state(self, index: int, t: float) -> RodState:
        return RodState(g=self.g[index].copy(), xi=self.xi[index].copy(), eta=self.eta[index].copy(),
                        lam=self.lam[index].copy(), t=t)

    @property
    def tip_wrench(self) -> np.ndarray:
        return self.lam[:, -1]


def integrate_spatial(
    coeffs: SweepCoefficients,
    base_pose: np.ndarray,
    base_twist: np.ndarray,
    base_wrench: np.ndarray,
) -> SpatialSweep:
    """
    RK4 sweep from s=0 to s=L for a batch of base values ((B,6) twists and wrenches).
    Poses advance as g <- g exp(h * weighted strain), so they stay on SE(3).
    """
    eta = np.atleast_2d(np.asarray(base_twist, dtype=float)).copy()
    lam = np.atleast_2d(np.asarray(base_wrench, dtype=float)).copy()
    B = lam.shape[0]
    eta = np.broadcast_to(eta, (B, 6)).copy()
    g = np.broadcast_to(np.asarray(base_pose, dtype=float), (B, 4, 4)).copy()
    n_nodes = coeffs.node_act.shape[0]
    m = coeffs.substeps
    h = coeffs.h

    G = np.empty((B, n_nodes, 4, 4))
    E = np.empty((B, n_nodes, 6))
    L = np.empty((B, n_nodes, 6))
    G[:, 0], E[:, 0], L[:, 0] = g, eta, lam

    with np.errstate(over="ignore", invalid="ignore", divide="ignore"):
        for j in range(coeffs.K_inv.shape[0]):
            def f(stage, g_, eta_, lam_):
                return _rhs(g_, eta_, lam_, coeffs.K_inv[j, stage], coeffs.xi_o[j, stage], coeffs.act[j, stage],
                            coeffs.M[j, stage], coeffs.F_G[j, stage], coeffs.c0,
                            coeffs.xi_h[j, stage], coeffs.eta_h[j, stage])

            x1, e1, l1 = f(0, g, eta, lam)
            g2 = g @ lg.exp_se3(x1, 0.5 * h)
            x2, e2, l2 = f(1, g2, eta + 0.5 * h * e1, lam + 0.5 * h * l1)
            g3 = g @ lg.exp_se3(x2, 0.5 * h)
            x3, e3, l3 = f(1, g3, eta + 0.5 * h * e2, lam + 0.5 * h * l2)
            g4 = g @ lg.exp_se3(x3, h)
            x4, e4, l4 = f(2, g4, eta + h * e3, lam + h * l3)

            g = g @ lg.exp_se3((x1 + 2.0 * x2 + 2.0 * x3 + x4) / 6.0, h)
            eta = eta + h / 6.0 * (e1 + 2.0 * e2 + 2.0 * e3 + e4)
            lam = lam + h / 6.0 * (l1 + 2.0 * l2 + 2.0 * l3 + l4)
            if (j + 1) % m == 0:
                k = (j + 1) // m
                G[:, k], E[:, k], L[:, k] = g, eta, lam

        XI = _mv(coeffs.node_K_inv, L - coeffs.node_act) + coeffs.node_xi_o
    finite = (np.all(np.isfinite(L), axis=(1, 2)) & np.all(np.isfinite(E), axis=(1, 2))
              & np.all(np.isfinite(G), axis=(1, 2, 3)))
    return SpatialSweep(g=G, xi=XI, eta=E, lam=L, finite=finite)


# --------------------------------------------
# Shooting
# --------------------------------------------

@dataclass
class ShootResult:
    state: RodState
    iterations: int
    residual: float


def _residual_weights(length: float) -> np.ndarray:
    # moments scaled by 1/L so both halves carry force units
    return np.array([1.0 / length] * 3 + [1.0] * 3)


def shoot(
    params: RodParameters,
    settings: SolverSettings,
    coeffs: SweepCoefficients,
    t: float,
    boundary: BoundaryInputs,
    strategy: BoundaryStrategy = PASS_THROUGH,
    initial_guess: Optional[np.ndarray] = None,
    base_twist_override: Optional[np.ndarray] = None,
) -> ShootResult:
    """
    Newton iteration on Lambda(0,t) until the weighted tip residual
    ||W (Lambda(L) - F1_eff)|| drops to the tolerance.  The strategy hooks are evaluated
    inside every residual evaluation with the current base-wrench guess.
    """
    g0 = np.asarray(boundary.base_pose(t), dtype=float)
    eta0 = np.asarray(boundary.base_twist(t) if base_twist_override is None else base_twist_override, dtype=float)
    F1 = np.asarray(boundary.tip_wrench(t), dtype=float)
    W = _residual_weights(params.length)
    eps = settings.residual_tolerance

    def evaluate(X: np.ndarray):
        eta0_eff = strategy.base_twist(t, eta0, X)
        sweep = integrate_spatial(coeffs, g0, eta0_eff, X)
        with np.errstate(invalid="ignore", over="ignore"):
            F1_eff = strategy.tip_wrench(t, F1, sweep.g[:, -1], sweep.eta[:, -1])
            R = W * (sweep.tip_wrench - F1_eff)
        ok = sweep.finite & np.all(np.isfinite(R), axis=1)
        return R, ok, sweep

    x = np.zeros(6) if initial_guess is None else np.array(initial_guess, dtype=float).reshape(6)
    R, ok, sweep = evaluate(x[None, :])
    if not ok[0]:
        raise DivergenceError(f"t={t:.6g}s: spatial sweep produced non-finite values at the initial guess")
    r = R[0]
    gamma = float(np.linalg.norm(r))

    for iteration in range(1, settings.max_newton_iterations + 1):
        logger.debug("t=%.6g newton %d residual %.3e", t, iteration, gamma)
        if gamma <= eps:
            state = sweep.state(0, t)
            state.g = lg.reorthonormalize(state.g)
            return ShootResult(state=state, iterations=iteration, residual=gamma)
        if iteration == settings.max_newton_iterations:
            break

        steps = settings.finite_difference_step * np.maximum(1.0, np.abs(x))
        Xp = x[None, :] + np.diag(steps)
        Rp, okp, _ = evaluate(Xp)
        if not np.all(okp):
            raise DivergenceError(f"t={t:.6g}s: non-finite values while building the shooting Jacobian")
        J = (Rp - r[None, :]).T / steps[None, :]
        try:
            dx = -scipy.linalg.solve(J, r)
        except (scipy.linalg.LinAlgError, ValueError):
            dx = -scipy.linalg.lstsq(J, r)[0]

        alpha = 1.0
        for halving in range(settings.max_step_halvings + 1):
            x_trial = x + alpha * dx
            R_t, ok_t, sweep_t = evaluate(x_trial[None, :])
            gamma_t = float(np.linalg.norm(R_t[0])) if ok_t[0] else float("inf")
            if gamma_t < gamma:
                break
            if halving < settings.max_step_halvings:
                alpha *= 0.5
        else:
            if not ok_t[0]:
                raise DivergenceError(f"t={t:.6g}s: damped Newton step left the finite region")
            logger.warning("t=%.6g: residual did not decrease after %d halvings (%.3e -> %.3e)",
                           t, settings.max_step_halvings, gamma, gamma_t)
            raise NonconvergenceError(
                f"shooting stalled at residual {gamma:.3e} after {iteration} iterations "
                f"(no descent in {settings.max_step_halvings} halvings)", residual=gamma, time=t)
        x, r, gamma, sweep = x_trial, R_t[0], gamma_t, sweep_t

    raise NonconvergenceError(
        f"shooting did not reach {eps:.1e} in {settings.max_newton_iterations} iterations "
        f"(residual {gamma:.3e})", residual=gamma, time=t)


# --------------------------------------------
# Time marching
# --------------------------------------------

def _tensions_at(tensions: Optional[TensionSignal], t: float):
    return None if tensions is None else np.asarray(tensions(t), dtype=float)


def step(
    params: RodParameters,
    settings: SolverSettings,
    history: TimeHistory,
    boundary: BoundaryInputs,
    tensions: Optional[TensionSignal] = None,
    strategy: BoundaryStrategy = PASS_THROUGH,
) -> ShootResult:
    """Advance one time level; the history is updated with the new solver state."""
    t = history.latest.t + settings.dt
    c0, xi_h, eta_h = history.derivative_terms()
    coeffs = sweep_coefficients(params, settings, c0, xi_h, eta_h, _tensions_at(tensions, t))
    try:
        result = shoot(params, settings, coeffs, t, boundary, strategy, initial_guess=history.latest.lam[0])
    except NonconvergenceError as exc:
        raise exc if exc.time is not None else exc.with_time(t)
    history.push(result.state)
    return result


def equilibrium(
    params: RodParameters,
    settings: SolverSettings,
    base_pose: np.ndarray,
    tip_wrench: Optional[np.ndarray] = None,
    tensions: Optional[np.ndarray] = None,
    t: float = 0.0,
    initial_guess: Optional[np.ndarray] = None,
) -> RodState:
    """Static configuration (eta = 0) under gravity, actuation and a constant tip wrench."""
    coeffs = static_coefficients(params, settings, tensions)
    boundary = BoundaryInputs.fixed(base_pose, tip_wrench)
    result = shoot(params, settings, coeffs, t, boundary, initial_guess=initial_guess)
    logger.debug("equilibrium at t=%.6g converged in %d iterations", t, result.iterations)
    return result.state


def straight_state(params: RodParameters, base_pose: np.ndarray, tensions: Optional[np.ndarray] = None, t: float = 0.0) -> RodState:
    """Reference configuration: xi = xi_o, eta = 0, Lambda = Lambda_act."""
    xi = params.reference_strain.copy()
    mid = 0.5 * (xi[:-1] + xi[1:])
    g = np.empty((params.node_count, 4, 4))
    g[0] = np.asarray(base_pose, dtype=float)
    inc = lg.exp_se3(mid, params.ds)
    for k in range(params.node_count - 1):
        g[k + 1] = g[k] @ inc[k]
    return RodState(g=g, xi=xi, eta=np.zeros_like(xi), lam=actuation_field(params, tensions), t=t)


def simulate(
    params: RodParameters,
    settings: SolverSettings,
    boundary: BoundaryInputs,
    initial_state: RodState,
    duration: float,
    tensions: Optional[TensionSignal] = None,
    strategy: BoundaryStrategy = PASS_THROUGH,
    on_step: Optional[Callable[[RodState], None]] = None,
) -> List[RodState]:
    """March from initial_state for `duration` seconds; returns every state including the first."""
    if not duration > 0:
        raise InvalidArgumentError("duration must be > 0")
    n_steps = int(round(duration / settings.dt))
    history = TimeHistory(dt=settings.dt, rule=settings.time_rule)
    history.push(initial_state)
    states = [initial_state]
    for _ in range(n_steps):
        result = step(params, settings, history, boundary, tensions, strategy)
        states.append(result.state)
        if on_step is not None:
            on_step(result.state)
    return states
