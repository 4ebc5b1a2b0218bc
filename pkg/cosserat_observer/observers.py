# cosserat_observer/observers.py
"""
Boundary observers: the rod model driven by corrections injected at the base
(velocity from the wrench error) and at the tip (wrench from pose/twist errors).

    eta0_eff = eta0 + G0 (Lambda(0) - Lambda_meas)
    F1_eff   = F1 - GP log(g_meas^-1 g(L))^v - GD (eta(L) - eta_meas)

A zero gain switches its term off entirely, so an all-zero observer is the plain
forward simulation.
"""
from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional

import numpy as np
import pandas as pd

from . import liegroup as lg
from .errors import ConfigurationError, DomainError, InvalidArgumentError
from .rodmodel import RodParameters, RodState
from .shootsolve import (
    BoundaryInputs,
    BoundaryStrategy,
    SolverSettings,
    TensionSignal,
    simulate,
)
from .streams import MeasurementSample, MeasurementStream, interpolate

logger = logging.getLogger(__name__)

VARIANTS = ("none", "base", "tipD", "tipPD", "combined")
DEFAULT_PD_RATIO = 20.0
PSD_TOL = 1e-12


def _mv(A, x):
    return np.einsum("...ij,...j->...i", A, x)


# --------------------------------------------
# Gains
# --------------------------------------------

def _check_psd(name: str, G: np.ndarray) -> np.ndarray:
    G = np.asarray(G, dtype=float)
    if G.shape != (6, 6):
        raise InvalidArgumentError(f"{name} must be 6x6, got {G.shape}")
    scale = max(1.0, float(np.max(np.abs(G))))
    if not np.allclose(G, G.T, rtol=0.0, atol=1e-12 * scale):
        raise InvalidArgumentError(f"{name} must be symmetric")
    if np.linalg.eigvalsh(0.5 * (G + G.T))[0] < -PSD_TOL * scale:
        raise InvalidArgumentError(f"{name} must be positive semidefinite")
    return G


@dataclass(frozen=True)
class ObserverGains:
    base: np.ndarray = field(default_factory=lambda: np.zeros((6, 6)))          # Gamma_0
    tip_proportional: np.ndarray = field(default_factory=lambda: np.zeros((6, 6)))  # Gamma_P
    tip_derivative: np.ndarray = field(default_factory=lambda: np.zeros((6, 6)))    # Gamma_D

    def __post_init__(self):
        object.__setattr__(self, "base", _check_psd("Gamma_0", self.base))
        object.__setattr__(self, "tip_proportional", _check_psd("Gamma_P", self.tip_proportional))
        object.__setattr__(self, "tip_derivative", _check_psd("Gamma_D", self.tip_derivative))

    @property
    def uses_base(self) -> bool:
        return bool(np.any(self.base != 0))

    @property
    def uses_tip_pose(self) -> bool:
        return bool(np.any(self.tip_proportional != 0))

    @property
    def uses_tip_twist(self) -> bool:
        return bool(np.any(self.tip_derivative != 0))

    @property
    def is_zero(self) -> bool:
        return not (self.uses_base or self.uses_tip_pose or self.uses_tip_twist)

    def required_channels(self) -> List[str]:
        out = []
        if self.uses_base:
            out.append("base_wrench")
        if self.uses_tip_pose:
            out.append("tip_pose")
        if self.uses_tip_twist:
            out.append("tip_twist")
        return out


def variant_gains(
    variant: str,
    gamma: float,
    base_reference: np.ndarray,
    tip_reference: np.ndarray,
    pd_ratio: float = DEFAULT_PD_RATIO,
    combined_includes_proportional: bool = False,
) -> ObserverGains:
    """
    Scaled gains for one observer variant:
      base     Gamma_0 = gamma*G0*
      tipD     Gamma_D = gamma*G1*
      tipPD    Gamma_D = gamma*G1*, Gamma_P = pd_ratio*Gamma_D
      combined base + tipD (+ the proportional term when requested)
    """
    if variant not in VARIANTS:
        raise ConfigurationError(f"unknown observer variant {variant!r}; expected one of {VARIANTS}")
    if not gamma > 0 and variant != "none":
        raise ConfigurationError(f"gain scale must be > 0, got {gamma}")
    z = np.zeros((6, 6))
    G0 = gamma * np.asarray(base_reference, dtype=float)
    GD = gamma * np.asarray(tip_reference, dtype=float)
    if variant == "none":
        return ObserverGains()
    if variant == "base":
        return ObserverGains(base=G0)
    if variant == "tipD":
        return ObserverGains(tip_derivative=GD)
    if variant == "tipPD":
        return ObserverGains(tip_proportional=pd_ratio * GD, tip_derivative=GD)
    return ObserverGains(base=G0, tip_derivative=GD,
                         tip_proportional=pd_ratio * GD if combined_includes_proportional else z)


# --------------------------------------------
# Boundary corrections
# --------------------------------------------

def base_correction(estimated_base_wrench: np.ndarray, measured: np.ndarray, gamma0: np.ndarray) -> np.ndarray:
    """Gamma_0 (Lambda_hat(0) - Lambda_meas); broadcasts over a batch of estimates."""
    return _mv(np.asarray(gamma0, dtype=float), np.asarray(estimated_base_wrench, dtype=float) - measured)


def tip_correction(
    estimated_tip_pose: np.ndarray,
    estimated_tip_twist: np.ndarray,
    measured_pose: Optional[np.ndarray],
    measured_twist: Optional[np.ndarray],
    gamma_p: np.ndarray,
    gamma_d: np.ndarray,
) -> np.ndarray:
    """-Gamma_P log(g_meas^-1 g_hat)^v - Gamma_D (eta_hat - eta_meas); the pose term is skipped when Gamma_P = 0."""
    eta_hat = np.asarray(estimated_tip_twist, dtype=float)
    out = np.zeros(eta_hat.shape)
    gamma_d = np.asarray(gamma_d, dtype=float)
    gamma_p = np.asarray(gamma_p, dtype=float)
    if np.any(gamma_d != 0):
        out = out - _mv(gamma_d, eta_hat - measured_twist)
    if np.any(gamma_p != 0):
        try:
            err = lg.log_se3(lg.pose_inverse(measured_pose) @ np.asarray(estimated_tip_pose, dtype=float))
        except DomainError as exc:
            raise DomainError(f"tip pose error too large for the proportional term: {exc}") from exc
        out = out - _mv(gamma_p, err)
    return out


class ObserverStrategy(BoundaryStrategy):
    """Injects the corrections into the shooting solve using the stream interpolated at t."""

    def __init__(self, gains: ObserverGains, stream: Optional[MeasurementStream]):
        self.gains = gains
        self.stream = stream
        self._sample: Optional[MeasurementSample] = None

    def sample(self, t: float) -> MeasurementSample:
        if self._sample is None or self._sample.t != t:
            self._sample = interpolate(self.stream, t)
        return self._sample

    def base_twist(self, t, eta0, lam0):
        if not self.gains.uses_base:
            return super().base_twist(t, eta0, lam0)
        return eta0 + base_correction(lam0, self.sample(t).base_wrench, self.gains.base)

    def tip_wrench(self, t, F1, g_tip, eta_tip):
        if not (self.gains.uses_tip_pose or self.gains.uses_tip_twist):
            return super().tip_wrench(t, F1, g_tip, eta_tip)
        s = self.sample(t)
        return F1 + tip_correction(g_tip, eta_tip, s.tip_pose, s.tip_twist,
                                   self.gains.tip_proportional, self.gains.tip_derivative)


# --------------------------------------------
# Velocity reconstruction and settle time
# --------------------------------------------

def reconstruct_velocity(g_prev: np.ndarray, g_curr: np.ndarray, dt: float) -> np.ndarray:
    """Body-frame backward difference eta = log(g_prev^-1 g_curr)^v / dt, per node."""
    if not dt > 0:
        raise InvalidArgumentError("dt must be > 0")
    try:
        return lg.log_se3(lg.pose_inverse(g_prev) @ g_curr) / dt
    except DomainError as exc:
        raise DomainError(f"a node rotated by about pi within one step (dt={dt}): {exc}") from exc


@dataclass(frozen=True)
class SettleRule:
    """relative: fraction of the initial error; length: fraction of the rod length."""
    kind: str = "relative"
    fraction: float = 0.02
    length: Optional[float] = None

    def threshold(self, errors: np.ndarray) -> float:
        if self.kind == "relative":
            return self.fraction * float(errors[0])
        if self.kind == "length":
            if self.length is None or not self.length > 0:
                raise InvalidArgumentError("length settle rule needs a positive rod length")
            return self.fraction * self.length
        raise InvalidArgumentError(f"unknown settle rule {self.kind!r}")


def settle_time(times: np.ndarray, errors: np.ndarray, rule: SettleRule = SettleRule()) -> Optional[float]:
    """First time after which the error stays below the threshold for the rest of the series."""
    times = np.asarray(times, dtype=float)
    errors = np.asarray(errors, dtype=float)
    if errors.size == 0 or errors.shape != times.shape:
        raise InvalidArgumentError("settle_time needs matching nonempty series")
    threshold = rule.threshold(errors)
    if threshold == 0.0 and np.all(errors == 0.0):
        return float(times[0])
    above = np.nonzero(~(errors < threshold))[0]
    if above.size == 0:
        return float(times[0])
    last = int(above[-1])
    if last == errors.size - 1:
        return None
    return float(times[last + 1])


# --------------------------------------------
# Running an observer
# --------------------------------------------

@dataclass(frozen=True)
class ObserverRunResult:
    times: np.ndarray
    states: List[RodState]
    reconstructed_eta: np.ndarray       # (T,N,6)
    errors: Optional[pd.DataFrame] = None
    settle_time: Optional[float] = None
    wall_time_s: float = 0.0

    @property
    def real_time_factor(self) -> float:
        span = float(self.times[-1] - self.times[0])
        return span / self.wall_time_s if self.wall_time_s > 0 else float("inf")


def error_series(
    params: RodParameters,
    estimates: List[RodState],
    reconstructed_eta: np.ndarray,
    truth: List[RodState],
) -> pd.DataFrame:
    """Per-step estimation errors: tip, node-averaged and three-quarter-arclength values."""
    if len(estimates) != len(truth):
        raise InvalidArgumentError("estimate and ground-truth trajectories differ in length")
    q = int(round(0.75 * (params.node_count - 1)))
    rows = []
    for k, (est, tru) in enumerate(zip(estimates, truth)):
        dp = np.linalg.norm(est.positions - tru.positions, axis=1)
        rel = np.swapaxes(tru.rotations, -1, -2) @ est.rotations
        drot = lg.rotation_angle(rel)
        deta = reconstructed_eta[k] - tru.eta
        dw = np.linalg.norm(deta[:, lg.ANGULAR], axis=1)
        dv = np.linalg.norm(deta[:, lg.LINEAR], axis=1)
        rows.append({
            "t": est.t,
            "tip_position_m": dp[-1],
            "position_m": dp.mean(),
            "position_pct_length": 100.0 * dp.mean() / params.length,
            "rotation_rad": drot.mean(),
            "linear_m_per_s": dv.mean(),
            "angular_rad_per_s": dw.mean(),
            "three_quarter_position_m": dp[q],
            "three_quarter_rotation_rad": drot[q],
        })
    return pd.DataFrame(rows)


def run_observer(
    params: RodParameters,
    settings: SolverSettings,
    gains: ObserverGains,
    boundary: BoundaryInputs,
    tensions: Optional[TensionSignal],
    stream: Optional[MeasurementStream],
    initial_state: RodState,
    duration: float,
    truth: Optional[List[RodState]] = None,
    settle_rule: SettleRule = SettleRule(),
    on_step: Optional[Callable[[RodState], None]] = None,
) -> ObserverRunResult:
    """
    Time-march the corrected model.  Poses are always integrated from the physical base
    pose g0(t); the emitted velocity field is recomputed from consecutive poses.
    """
    t0 = initial_state.t
    required = gains.required_channels()
    if required:
        if stream is None:
            raise ConfigurationError(f"gains need measurement channels {required} but no stream was given")
        missing = [c for c in required if not stream.has(c)]
        if missing:
            raise ConfigurationError(f"measurement stream lacks channels {missing} required by the gains")
        if not stream.covers(t0, t0 + duration):
            raise ConfigurationError("measurement stream does not cover the run duration")
    strategy = ObserverStrategy(gains, stream)

    started = time.perf_counter()
    states = simulate(params, settings, boundary, initial_state, duration, tensions, strategy, on_step)
    wall = time.perf_counter() - started

    recon = np.empty((len(states), params.node_count, 6))
    recon[0] = states[0].eta
    for k in range(1, len(states)):
        recon[k] = reconstruct_velocity(states[k - 1].g, states[k].g, settings.dt)

    times = np.array([s.t for s in states])
    errors = None
    settle = None
    if truth is not None:
        errors = error_series(params, states, recon, truth)
        settle = settle_time(times - t0, errors["tip_position_m"].to_numpy(), settle_rule)
    logger.info("observer run: %d steps in %.2fs wall (settle=%s)", len(states) - 1, wall, settle)
    return ObserverRunResult(times=times, states=states, reconstructed_eta=recon, errors=errors,
                             settle_time=settle, wall_time_s=wall)


def boundary_stream(states: List[RodState], channels=("base_wrench", "tip_pose", "tip_twist")) -> MeasurementStream:
    """Extract Lambda(0,t), g(L,t) and eta(L,t) from a trajectory."""
    data: Dict[str, np.ndarray] = {}
    if "base_wrench" in channels:
        data["base_wrench"] = np.stack([s.lam[0] for s in states])
    if "tip_pose" in channels:
        data["tip_pose"] = np.stack([s.g[-1] for s in states])
    if "tip_twist" in channels:
        data["tip_twist"] = np.stack([s.eta[-1] for s in states])
    return MeasurementStream(timestamps=np.array([s.t for s in states]), **data)
