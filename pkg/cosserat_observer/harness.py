# cosserat_observer/harness.py
"""
Scenario runner: ground-truth synthesis, observer runs, gain sweeps, mu tables,
energy audits and the real-time trend.
"""
from __future__ import annotations

import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence

import numpy as np
import pandas as pd

from . import liegroup as lg
from .config import RunConfig, TensionTable, build_rod
from .errors import ConfigurationError, RodObserverError, SingularReflectionError
from .gains import mu_max, optimal_gains, reflection_matrices, reflection_spectrum, riemann_setup
from .observers import (
    ObserverGains,
    SettleRule,
    boundary_stream,
    run_observer,
    variant_gains,
)
from .reports import write_states_csv
from .rodmodel import RodParameters, RodState, actuation_field, error_energy, total_energy
from .shootsolve import BoundaryInputs, SolverSettings, equilibrium, simulate, straight_state
from .streams import MeasurementStream, add_noise

logger = logging.getLogger(__name__)

AVERAGE_COLUMNS = ["position_pct_length", "rotation_rad", "linear_m_per_s", "angular_rad_per_s", "tip_position_m"]


# --------------------------------------------
# Tension schedules
# --------------------------------------------

@dataclass(frozen=True)
class TensionSchedule:
    """Piecewise-linear per-tendon tensions; held constant outside the table."""
    times: np.ndarray
    values: np.ndarray  # (T, n_tendons)

    def __call__(self, t: float) -> np.ndarray:
        return np.array([np.interp(t, self.times, self.values[:, j]) for j in range(self.values.shape[1])])

    @classmethod
    def from_table(cls, table: Optional[TensionTable]) -> Optional["TensionSchedule"]:
        if table is None:
            return None
        return cls(times=np.asarray(table.times_s, dtype=float), values=np.asarray(table.tensions_n, dtype=float))


@dataclass(frozen=True)
class SummedTensions:
    parts: tuple

    def __call__(self, t: float) -> np.ndarray:
        return sum(p(t) for p in self.parts)


def _combine(*schedules):
    present = tuple(s for s in schedules if s is not None)
    if not present:
        return None
    return present[0] if len(present) == 1 else SummedTensions(present)


# --------------------------------------------
# Scenario / sweep types
# --------------------------------------------

@dataclass(frozen=True)
class Scenario:
    name: str
    kind: str
    rod: RodParameters               # ground-truth model
    observer_rod: RodParameters      # model used by the observer (stiffness mismatch applied)
    solver: SolverSettings
    duration: float
    base_pose: np.ndarray
    tensions: Optional[TensionSchedule] = None          # known to the observer
    unknown_tensions: Optional[TensionSchedule] = None  # drives the ground truth only
    holding_tip_wrench: Optional[np.ndarray] = None
    initial_state_rule: str = "straight"
    perturbation_magnitude: float = 0.0
    seed: int = 7
    noise_std: Dict[str, float] = field(default_factory=dict)

    @property
    def truth_tensions(self):
        return _combine(self.tensions, self.unknown_tensions)

    def boundary(self) -> BoundaryInputs:
        return BoundaryInputs.fixed(self.base_pose)


@dataclass(frozen=True)
class SweepConfig:
    gain_scales: Sequence[float]
    variants: Sequence[str]
    base_reference: np.ndarray
    tip_reference: np.ndarray
    settle_rule: SettleRule = SettleRule()
    pd_ratio: float = 20.0
    combined_includes_proportional: bool = False

    def __post_init__(self):
        scales = [float(g) for g in self.gain_scales]
        if not scales or any(g <= 0 for g in scales):
            raise ConfigurationError("gain scales must be positive")
        object.__setattr__(self, "gain_scales", tuple(sorted(scales)))


@dataclass
class RunReport:
    scenario: str
    variant: str
    gamma: float
    seed: int
    settle_time: Optional[float]
    average_errors: Dict[str, float]
    three_quarter_errors: Dict[str, float]
    energy_trace: List[float]
    error_energy_trace: List[float]
    real_time_factor: float
    wall_time_s: float
    steps: int
    states_path: Optional[str] = None

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)

    def to_row(self) -> Dict[str, Any]:
        row = {"variant": self.variant, "gamma": self.gamma, "seed": self.seed, "settle_time": self.settle_time}
        row.update(self.average_errors)
        row["real_time_factor"] = self.real_time_factor
        return row


@dataclass(frozen=True)
class GroundTruth:
    states: List[RodState]
    stream: MeasurementStream   # noiseless boundary measurements


def default_holding_wrench(rod: RodParameters, deflection_fraction: float = 0.05) -> np.ndarray:
    """Body-x tip force giving roughly the requested tip deflection (bending plus shear compliance)."""
    EI = rod.K[0][0, 0]
    GA = rod.K[0][3, 3]
    L = rod.length
    compliance = L ** 3 / (3.0 * EI) + L / GA
    out = np.zeros(6)
    out[3] = deflection_fraction * L / compliance
    return out


def scenario_from_config(cfg: RunConfig) -> Scenario:
    sc = cfg.scenario
    truth_rod = build_rod(cfg.rod, gravity=sc.gravity_m_per_s2)
    observer_rod = truth_rod
    if sc.model_mismatch_stiffness_factor != 1.0:
        observer_rod = truth_rod.with_stiffness_scale(sc.model_mismatch_stiffness_factor)
    holding = None if sc.holding_tip_wrench is None else np.asarray(sc.holding_tip_wrench, dtype=float)
    if sc.kind == "free_oscillation_release" and holding is None:
        holding = default_holding_wrench(truth_rod)
    if sc.kind in ("tendon_driven", "unknown_input_replay") and truth_rod.tendon_count == 0:
        raise ConfigurationError(f"scenario kind {sc.kind} needs at least one tendon")
    if sc.kind == "unknown_input_replay" and sc.unknown_tensions is None:
        raise ConfigurationError("unknown_input_replay needs scenario.unknown_tensions")
    return Scenario(
        name=cfg.name, kind=sc.kind, rod=truth_rod, observer_rod=observer_rod, solver=cfg.solver,
        duration=sc.duration_s, base_pose=cfg.base_pose,
        tensions=TensionSchedule.from_table(sc.tensions),
        unknown_tensions=TensionSchedule.from_table(sc.unknown_tensions),
        holding_tip_wrench=holding, initial_state_rule=sc.initial_state_rule,
        perturbation_magnitude=sc.perturbation_magnitude, seed=sc.seed, noise_std=dict(sc.noise_std),
    )


def sweep_from_config(cfg: RunConfig, scenario: Scenario) -> SweepConfig:
    G0, G1 = reference_gains(scenario.observer_rod, cfg.observer.gain_reference)
    return SweepConfig(
        gain_scales=cfg.sweep.gain_scales, variants=cfg.sweep.variants, base_reference=G0, tip_reference=G1,
        settle_rule=SettleRule(kind=cfg.sweep.settle_kind, fraction=cfg.sweep.settle_fraction,
                               length=scenario.rod.length),
        pd_ratio=cfg.observer.pd_ratio, combined_includes_proportional=cfg.observer.combined_includes_proportional,
    )


def reference_gains(rod: RodParameters, reference: str = "optimal"):
    if reference == "identity":
        return np.eye(6), np.eye(6)
    return optimal_gains(rod.M[0], rod.K[0])


# --------------------------------------------
# Ground truth and initial states
# --------------------------------------------

def _at(schedule, t):
    return None if schedule is None else schedule(t)


def synthesize_ground_truth(scenario: Scenario) -> GroundTruth:
    """Zero-gain forward simulation from the scenario's true initial state."""
    rod, settings = scenario.rod, scenario.solver
    tensions = scenario.truth_tensions
    holding = scenario.holding_tip_wrench if scenario.kind == "free_oscillation_release" else None
    initial = equilibrium(rod, settings, scenario.base_pose, tip_wrench=holding, tensions=_at(tensions, 0.0))
    logger.info("ground truth %s: %s for %.3gs", scenario.name, scenario.kind, scenario.duration)
    states = simulate(rod, settings, scenario.boundary(), initial, scenario.duration, tensions)
    return GroundTruth(states=states, stream=boundary_stream(states))


def perturbed_state(
    params: RodParameters,
    reference: RodState,
    magnitude: float,
    seed: int,
    tensions: Optional[np.ndarray] = None,
) -> RodState:
    """Reference strain plus a smooth seeded perturbation; at rest, pose re-integrated from the base."""
    rng = np.random.default_rng(seed)
    s = params.s / params.length
    coeff = rng.normal(0.0, 1.0, (3, 6))
    field_ = sum(np.outer(np.sin((j + 1) * np.pi * s / 2.0), coeff[j]) for j in range(3)) / 3.0
    xi = reference.xi + magnitude * field_
    g = np.empty_like(reference.g)
    g[0] = reference.g[0]
    mid = 0.5 * (xi[:-1] + xi[1:])
    inc = lg.exp_se3(mid, params.ds)
    for k in range(params.node_count - 1):
        g[k + 1] = g[k] @ inc[k]
    lam = np.einsum("nij,nj->ni", params.K, xi - params.reference_strain) + actuation_field(params, tensions)
    return RodState(g=g, xi=xi, eta=np.zeros_like(xi), lam=lam, t=reference.t)


def initial_estimate(scenario: Scenario, truth: GroundTruth) -> RodState:
    rule = scenario.initial_state_rule
    known = _at(scenario.tensions, truth.states[0].t)
    if rule == "truth":
        return truth.states[0].copy()
    if rule == "straight":
        return straight_state(scenario.observer_rod, scenario.base_pose, known, t=truth.states[0].t)
    if rule == "perturbed":
        return perturbed_state(scenario.observer_rod, truth.states[0], scenario.perturbation_magnitude,
                               scenario.seed, known)
    raise ConfigurationError(f"unknown initial_state_rule {rule!r}")


# --------------------------------------------
# Single runs
# --------------------------------------------

def _post_settle_average(errors: pd.DataFrame, settle: Optional[float], t0: float) -> Dict[str, float]:
    window = errors if settle is None else errors[errors["t"] - t0 >= settle]
    if window.empty:
        window = errors
    return {c: float(window[c].mean()) for c in AVERAGE_COLUMNS}


def run_scenario(
    scenario: Scenario,
    variant: str,
    gains: Optional[ObserverGains] = None,
    gamma: float = 1.0,
    truth: Optional[GroundTruth] = None,
    settle_rule: SettleRule = SettleRule(),
    seed: Optional[int] = None,
    states_path: Optional[Path] = None,
    pd_ratio: float = 20.0,
    combined_includes_proportional: bool = False,
) -> RunReport:
    truth = synthesize_ground_truth(scenario) if truth is None else truth
    seed = scenario.seed if seed is None else seed
    if gains is None:
        G0, G1 = reference_gains(scenario.observer_rod)
        gains = variant_gains(variant, gamma, G0, G1, pd_ratio, combined_includes_proportional)
    stream = truth.stream
    if any(v > 0 for v in scenario.noise_std.values()):
        stream = add_noise(stream, scenario.noise_std, seed)
    initial = initial_estimate(scenario, truth)
    result = run_observer(
        scenario.observer_rod, scenario.solver, gains, scenario.boundary(), scenario.tensions, stream,
        initial, scenario.duration, truth=truth.states, settle_rule=settle_rule,
    )
    t0 = float(result.times[0])
    errors = result.errors
    averages = _post_settle_average(errors, result.settle_time, t0)
    window = errors if result.settle_time is None else errors[errors["t"] - t0 >= result.settle_time]
    if window.empty:
        window = errors
    three_quarter = {
        "position_pct_length": float(100.0 * window["three_quarter_position_m"].mean() / scenario.rod.length),
        "rotation_rad": float(window["three_quarter_rotation_rad"].mean()),
    }
    energy = [total_energy(scenario.observer_rod, s) for s in result.states]
    err_energy = [error_energy(scenario.observer_rod, est, tru, result.reconstructed_eta[k])
                  for k, (est, tru) in enumerate(zip(result.states, truth.states))]
    if states_path is not None:
        write_states_csv(result.states, states_path, eta=result.reconstructed_eta)
    report = RunReport(
        scenario=scenario.name, variant=variant, gamma=float(gamma), seed=int(seed),
        settle_time=result.settle_time, average_errors=averages, three_quarter_errors=three_quarter,
        energy_trace=energy, error_energy_trace=err_energy,
        real_time_factor=scenario.duration / result.wall_time_s if result.wall_time_s > 0 else float("inf"),
        wall_time_s=result.wall_time_s, steps=len(result.states) - 1,
        states_path=None if states_path is None else str(states_path),
    )
    logger.info("%s/%s gamma=%.3g settle=%s rtf=%.2f", scenario.name, variant, gamma,
                report.settle_time, report.real_time_factor)
    return report


# --------------------------------------------
# Sweeps
# --------------------------------------------

def _sweep_row(args) -> Dict[str, Any]:
    scenario, truth, sweep, variant, gamma, seed = args
    try:
        report = run_scenario(
            scenario, variant, gamma=gamma, truth=truth, settle_rule=sweep.settle_rule, seed=seed,
            gains=variant_gains(variant, gamma, sweep.base_reference, sweep.tip_reference, sweep.pd_ratio,
                                sweep.combined_includes_proportional),
        )
        row = report.to_row()
        row["error"] = None
    except RodObserverError as exc:
        logger.warning("sweep row %s gamma=%.3g failed: %s", variant, gamma, exc)
        row = {"variant": variant, "gamma": gamma, "seed": seed, "settle_time": None,
               **{c: math.nan for c in AVERAGE_COLUMNS}, "real_time_factor": math.nan, "error": str(exc)}
    return row


def run_sweep(scenario: Scenario, sweep: SweepConfig, workers: int = 1, truth: Optional[GroundTruth] = None) -> pd.DataFrame:
    """Every (variant, gamma) pair; rows run concurrently with seed = scenario seed + row index."""
    truth = synthesize_ground_truth(scenario) if truth is None else truth
    jobs = []
    for variant in sweep.variants:
        for gamma in sweep.gain_scales:
            jobs.append((scenario, truth, sweep, variant, gamma, scenario.seed + len(jobs)))
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            rows = list(pool.map(_sweep_row, jobs))
    else:
        rows = [_sweep_row(j) for j in jobs]
    return pd.DataFrame(rows)


@dataclass(frozen=True)
class ShapeCheck:
    ok: bool
    messages: List[str]


def check_sweep_shape(table: pd.DataFrame, argmin_range=(0.5, 2.0), combined_tolerance: float = 0.10,
                      reference_gamma: float = 1.0) -> ShapeCheck:
    """Settle time is convex-like in gamma: both grid ends slower than the interior minimum."""
    messages: List[str] = []
    settle = table.assign(settle=table["settle_time"].astype(float).fillna(math.inf))
    for variant, grp in settle.groupby("variant"):
        grp = grp.sort_values("gamma")
        g = grp["gamma"].to_numpy()
        s = grp["settle"].to_numpy()
        k = int(np.argmin(s))
        if not (argmin_range[0] <= g[k] <= argmin_range[1]):
            messages.append(f"{variant}: fastest settle at gamma={g[k]:.3g}, outside {argmin_range}")
        if not s[0] > s[k]:
            messages.append(f"{variant}: smallest gamma is not slower than the minimum")
        if not s[-1] > s[k]:
            messages.append(f"{variant}: largest gamma is not slower than the minimum")
    at_ref = settle[np.isclose(settle["gamma"], reference_gamma)].set_index("variant")["settle"]
    if "combined" in at_ref.index:
        singles = [at_ref[v] for v in ("base", "tipD") if v in at_ref.index]
        if singles and at_ref["combined"] > (1.0 + combined_tolerance) * min(singles):
            messages.append(f"combined settle {at_ref['combined']:.3g}s is slower than the best single observer")
    return ShapeCheck(ok=not messages, messages=messages)


def mu_sweep(M, K, length: float, gamma_grid: Sequence[float], which: str = "tip", reference: str = "identity") -> pd.DataFrame:
    """
    mu_max over gamma with the other gain held at zero.  reference='identity' uses Gamma = gamma*I
    (scalar-style tables); 'optimal' scales the absorbing gain.  singular_bracket marks a row where
    an eigenvalue of the reflection numerator changed sign since the previous row.
    """
    if which not in ("tip", "base"):
        raise ConfigurationError(f"which must be 'tip' or 'base', got {which!r}")
    a = riemann_setup(M, K)
    n = a.S.shape[0]
    if reference == "identity":
        ref = np.eye(n)
    elif reference == "optimal":
        G0, G1 = optimal_gains(M, K)
        ref = G1 if which == "tip" else G0
    else:
        raise ConfigurationError(f"unknown reference {reference!r}")
    zero = np.zeros((n, n))
    rows = []
    prev_negative = None
    for gamma in gamma_grid:
        G = float(gamma) * ref
        try:
            rho0, rho1 = reflection_matrices(zero, G, a) if which == "tip" else reflection_matrices(G, zero, a)
            mu = mu_max(rho0, rho1, a.Sigma, length)
        except SingularReflectionError:
            mu = math.nan
        spectrum = reflection_spectrum(G, a, which)
        negative = int(np.count_nonzero(spectrum < 0))
        bracket = prev_negative is not None and (negative != prev_negative or bool(np.any(spectrum == 0.0)))
        rows.append({"gamma_scale": float(gamma), "mu_max": mu, "singular_bracket": bool(bracket)})
        prev_negative = negative
    return pd.DataFrame(rows)


# --------------------------------------------
# Energy audit
# --------------------------------------------

@dataclass(frozen=True)
class EnergyAudit:
    times: np.ndarray
    energy: np.ndarray
    drift: float
    max_step_increase: float
    dissipative: bool

    def passes(self, drift_limit: float = 0.03, step_tolerance: float = 0.005) -> bool:
        if self.dissipative:
            return self.max_step_increase <= step_tolerance
        return self.drift <= drift_limit and self.max_step_increase <= step_tolerance


def lateral_preload(rod: RodParameters, base_pose: np.ndarray, deflection_fraction: float = 0.05) -> np.ndarray:
    """
    Uniform global-frame load along the base's body-x axis whose small-deflection tip
    displacement is deflection_fraction * L (w = 8 EI delta / L^4).
    """
    EI = rod.K[0][0, 0]
    L = rod.length
    w = 8.0 * EI * deflection_fraction * L / L ** 4
    out = np.zeros((rod.node_count, 6))
    out[:, lg.LINEAR] = w * np.asarray(base_pose, dtype=float)[:3, 0]
    return out


def energy_audit(scenario: Scenario, dissipative: bool = False, duration: Optional[float] = None,
                 damping_scale: float = 1.0) -> EnergyAudit:
    """
    Energy trace of a rod released from a uniform lateral preload, with a fixed base and
    no gravity or actuation afterwards.  The dissipative variant adds tip damping
    F1 = -Gamma_D eta(L) with Gamma_D the absorbing tip gain.  Per-step increases are
    measured relative to the initial energy.
    """
    rod = replace_gravity(scenario.rod)
    settings = scenario.solver
    T = scenario.duration if duration is None else duration
    loaded = replace_gravity(scenario.rod, lateral_preload(rod, scenario.base_pose))
    initial = equilibrium(loaded, settings, scenario.base_pose)
    n_steps = int(round(T / settings.dt))
    if dissipative:
        _, G1 = optimal_gains(rod.M[-1], rod.K[-1])
        times = initial.t + settings.dt * np.arange(n_steps + 1)
        still = MeasurementStream(timestamps=times, tip_twist=np.zeros((times.size, 6)))
        result = run_observer(rod, settings, ObserverGains(tip_derivative=damping_scale * G1),
                              scenario.boundary(), None, still, initial, T)
        states = result.states
    else:
        states = simulate(rod, settings, scenario.boundary(), initial, T)
    E = np.array([total_energy(rod, s) for s in states])
    t = np.array([s.t for s in states])
    E0 = E[0] if E[0] > 0 else 1.0
    drift = float(np.max(np.abs(E - E[0])) / E0)
    rel_step = np.diff(E) / E0
    max_inc = float(max(0.0, np.max(rel_step))) if rel_step.size else 0.0
    logger.info("energy audit (%s): drift %.3e, max per-step increase %.3e",
                "dissipative" if dissipative else "conservative", drift, max_inc)
    return EnergyAudit(times=t, energy=E, drift=drift, max_step_increase=max_inc, dissipative=dissipative)


def replace_gravity(rod: RodParameters, gravity_wrench: Optional[np.ndarray] = None) -> RodParameters:
    F = np.zeros((rod.node_count, 6)) if gravity_wrench is None else gravity_wrench
    return RodParameters(length=rod.length, node_count=rod.node_count, M=rod.M, K=rod.K,
                         reference_strain=rod.reference_strain, gravity_wrench=F, tendons=rod.tendons)


# --------------------------------------------
# Real-time trend
# --------------------------------------------

def realtime_trend(scenario: Scenario, node_counts: Sequence[int], variant: str = "base",
                   gamma: float = 1.0) -> pd.DataFrame:
    """Real-time factor of one observer variant as the node count grows."""
    rows = []
    for n in node_counts:
        sc = replace(scenario, rod=scenario.rod.resampled(n), observer_rod=scenario.observer_rod.resampled(n))
        report = run_scenario(sc, variant, gamma=gamma)
        rows.append({"node_count": int(n), "real_time_factor": report.real_time_factor,
                     "wall_time_s": report.wall_time_s})
    return pd.DataFrame(rows)
