# cosserat_observer/config.py
"""
Run configuration.

Scenario documents are JSON with unit-suffixed keys and a top-level ``schema_version``.
They are validated with jsonschema and turned into plain dataclasses; harness.py builds
the runtime objects (RodParameters, Scenario, SweepConfig) from them.
"""
from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional, Union

import jsonschema
import numpy as np
from scipy.spatial.transform import Rotation

from . import liegroup as lg
from .errors import ConfigurationError, InvalidArgumentError
from .rodmodel import (
    RodParameters,
    TendonRouting,
    build_section_matrices,
    parallel_tendon,
)
from .shootsolve import SolverSettings

logger = logging.getLogger(__name__)

SCHEMA_VERSION = 1
SCENARIO_KINDS = ["free_oscillation_release", "tendon_driven", "unknown_input_replay", "static_equilibrium"]
INITIAL_RULES = ["truth", "straight", "perturbed"]


@dataclass
class AppConfig:
    out_dir: str = "runs"
    ledger_path: str = "runs.jsonl"
    workers: int = 1
    log_level: str = "INFO"
    default_seed: int = 7


# --------------------------------------------
# Schema
# --------------------------------------------

_vec3 = {"type": "array", "items": {"type": "number"}, "minItems": 3, "maxItems": 3}
_vec6 = {"type": "array", "items": {"type": "number"}, "minItems": 6, "maxItems": 6}
_pos6 = {"type": "array", "items": {"type": "number", "exclusiveMinimum": 0}, "minItems": 6, "maxItems": 6}

CONFIG_SCHEMA: Dict[str, Any] = {
    "type": "object",
    "required": ["schema_version", "rod", "scenario"],
    "additionalProperties": False,
    "properties": {
        "schema_version": {"type": "integer"},
        "name": {"type": "string"},
        "rod": {
            "type": "object",
            "required": ["length_m", "node_count", "section"],
            "additionalProperties": False,
            "properties": {
                "length_m": {"type": "number", "exclusiveMinimum": 0},
                "node_count": {"type": "integer", "minimum": 2},
                "section": {
                    "oneOf": [
                        {
                            "type": "object",
                            "required": ["radius_m", "density_kg_per_m3", "youngs_modulus_pa", "shear_modulus_pa"],
                            "additionalProperties": False,
                            "properties": {
                                "radius_m": {"type": "number", "exclusiveMinimum": 0},
                                "density_kg_per_m3": {"type": "number", "exclusiveMinimum": 0},
                                "youngs_modulus_pa": {"type": "number", "exclusiveMinimum": 0},
                                "shear_modulus_pa": {"type": "number", "exclusiveMinimum": 0},
                            },
                        },
                        {
                            "type": "object",
                            "required": ["inertia_diag", "stiffness_diag"],
                            "additionalProperties": False,
                            "properties": {"inertia_diag": _pos6, "stiffness_diag": _pos6},
                        },
                    ]
                },
                "reference_strain": _vec6,
                "tendons": {
                    "type": "array",
                    "items": {
                        "type": "object",
                        "required": ["offset_radius_m", "offset_angle_rad"],
                        "additionalProperties": False,
                        "properties": {
                            "offset_radius_m": {"type": "number", "minimum": 0},
                            "offset_angle_rad": {"type": "number"},
                            "termination_fraction": {"type": "number", "exclusiveMinimum": 0, "maximum": 1},
                        },
                    },
                },
            },
        },
        "solver": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "time_step_s": {"type": "number", "exclusiveMinimum": 0},
                "residual_tolerance_n": {"type": "number", "exclusiveMinimum": 0},
                "max_newton_iterations": {"type": "integer", "minimum": 1},
                "finite_difference_step": {"type": "number", "exclusiveMinimum": 0},
                "spatial_substeps_per_interval": {"type": "integer", "minimum": 1},
                "time_rule": {"enum": ["bdf2", "bdf1"]},
            },
        },
        "scenario": {
            "type": "object",
            "required": ["kind", "duration_s"],
            "additionalProperties": False,
            "properties": {
                "kind": {"enum": SCENARIO_KINDS},
                "duration_s": {"type": "number", "exclusiveMinimum": 0},
                "gravity_m_per_s2": _vec3,
                "base_pose": {
                    "type": "object",
                    "additionalProperties": False,
                    "properties": {"rotation_vector_rad": _vec3, "position_m": _vec3},
                },
                "holding_tip_wrench": _vec6,
                "initial_state_rule": {"enum": INITIAL_RULES},
                "perturbation_magnitude": {"type": "number", "minimum": 0},
                "seed": {"type": "integer"},
                "model_mismatch_stiffness_factor": {"type": "number", "exclusiveMinimum": 0},
                "tensions": {"$ref": "#/definitions/tension_table"},
                "unknown_tensions": {"$ref": "#/definitions/tension_table"},
                "noise_std": {
                    "type": "object",
                    "additionalProperties": False,
                    "properties": {
                        "base_wrench": {"type": "number", "minimum": 0},
                        "tip_position": {"type": "number", "minimum": 0},
                        "tip_rotation": {"type": "number", "minimum": 0},
                        "tip_twist": {"type": "number", "minimum": 0},
                    },
                },
            },
        },
        "observer": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "variant": {"enum": ["none", "base", "tipD", "tipPD", "combined"]},
                "gain_scale": {"type": "number", "exclusiveMinimum": 0},
                "pd_ratio": {"type": "number", "minimum": 0},
                "combined_includes_proportional": {"type": "boolean"},
                "gain_reference": {"enum": ["optimal", "identity"]},
            },
        },
        "sweep": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "gain_scales": {"type": "array", "items": {"type": "number", "exclusiveMinimum": 0}, "minItems": 1},
                "variants": {"type": "array", "items": {"enum": ["base", "tipD", "tipPD", "combined"]}, "minItems": 1},
                "settle_rule": {
                    "type": "object",
                    "additionalProperties": False,
                    "properties": {
                        "kind": {"enum": ["relative", "length"]},
                        "fraction": {"type": "number", "exclusiveMinimum": 0},
                    },
                },
            },
        },
    },
    "definitions": {
        "tension_table": {
            "type": "object",
            "required": ["times_s", "tensions_n"],
            "additionalProperties": False,
            "properties": {
                "times_s": {"type": "array", "items": {"type": "number"}, "minItems": 1},
                "tensions_n": {
                    "type": "array",
                    "items": {"type": "array", "items": {"type": "number", "minimum": 0}},
                    "minItems": 1,
                },
            },
        },
    },
}


# --------------------------------------------
# Dataclasses
# --------------------------------------------

@dataclass
class TensionTable:
    times_s: List[float]
    tensions_n: List[List[float]]  # one row per time, one column per tendon


@dataclass
class RodSpec:
    length_m: float
    node_count: int
    section: Dict[str, Any]
    reference_strain: Optional[List[float]] = None
    tendons: List[Dict[str, float]] = field(default_factory=list)


@dataclass
class ScenarioSpec:
    kind: str
    duration_s: float
    gravity_m_per_s2: Optional[List[float]] = None
    rotation_vector_rad: List[float] = field(default_factory=lambda: [0.0, 0.0, 0.0])
    position_m: List[float] = field(default_factory=lambda: [0.0, 0.0, 0.0])
    holding_tip_wrench: Optional[List[float]] = None
    initial_state_rule: str = "straight"
    perturbation_magnitude: float = 0.0
    seed: int = 7
    model_mismatch_stiffness_factor: float = 1.0
    tensions: Optional[TensionTable] = None
    unknown_tensions: Optional[TensionTable] = None
    noise_std: Dict[str, float] = field(default_factory=dict)


@dataclass
class ObserverSpec:
    variant: str = "base"
    gain_scale: float = 1.0
    pd_ratio: float = 20.0
    combined_includes_proportional: bool = False
    gain_reference: str = "optimal"


@dataclass
class SweepSpec:
    gain_scales: List[float] = field(default_factory=lambda: [0.2, 0.5, 1.0, 2.0, 4.0])
    variants: List[str] = field(default_factory=lambda: ["base", "tipD", "combined"])
    settle_kind: str = "relative"
    settle_fraction: float = 0.02


@dataclass
class RunConfig:
    name: str
    rod: RodSpec
    solver: SolverSettings
    scenario: ScenarioSpec
    observer: ObserverSpec
    sweep: SweepSpec
    source: Optional[str] = None

    @property
    def base_pose(self) -> np.ndarray:
        R = Rotation.from_rotvec(self.scenario.rotation_vector_rad).as_matrix()
        return lg.make_pose(R, np.asarray(self.scenario.position_m, dtype=float))


# --------------------------------------------
# Loading
# --------------------------------------------

def _table(doc: Optional[dict]) -> Optional[TensionTable]:
    if doc is None:
        return None
    return TensionTable(times_s=list(doc["times_s"]), tensions_n=[list(r) for r in doc["tensions_n"]])


def config_from_dict(doc: Dict[str, Any], source: Optional[str] = None) -> RunConfig:
    if doc.get("schema_version") != SCHEMA_VERSION:
        raise ConfigurationError(
            f"unsupported schema_version {doc.get('schema_version')!r} (expected {SCHEMA_VERSION})"
        )
    try:
        jsonschema.validate(instance=doc, schema=CONFIG_SCHEMA)
    except jsonschema.ValidationError as exc:
        where = "/".join(str(p) for p in exc.absolute_path) or "<root>"
        raise ConfigurationError(f"config invalid at {where}: {exc.message}") from exc

    rod = doc["rod"]
    solver = doc.get("solver", {})
    scen = doc["scenario"]
    pose = scen.get("base_pose", {})
    obs = doc.get("observer", {})
    sweep = doc.get("sweep", {})
    rule = sweep.get("settle_rule", {})
    try:
        settings = SolverSettings(
            dt=solver.get("time_step_s", 0.01),
            residual_tolerance=solver.get("residual_tolerance_n", 1e-6),
            max_newton_iterations=solver.get("max_newton_iterations", 50),
            finite_difference_step=solver.get("finite_difference_step", 1e-6),
            spatial_substeps_per_interval=solver.get("spatial_substeps_per_interval", 1),
            time_rule=solver.get("time_rule", "bdf2"),
        )
    except InvalidArgumentError as exc:
        raise ConfigurationError(str(exc)) from exc

    cfg = RunConfig(
        name=doc.get("name", Path(source).stem if source else "scenario"),
        rod=RodSpec(length_m=rod["length_m"], node_count=rod["node_count"], section=dict(rod["section"]),
                    reference_strain=rod.get("reference_strain"), tendons=list(rod.get("tendons", []))),
        solver=settings,
        scenario=ScenarioSpec(
            kind=scen["kind"], duration_s=scen["duration_s"],
            gravity_m_per_s2=scen.get("gravity_m_per_s2"),
            rotation_vector_rad=pose.get("rotation_vector_rad", [0.0, 0.0, 0.0]),
            position_m=pose.get("position_m", [0.0, 0.0, 0.0]),
            holding_tip_wrench=scen.get("holding_tip_wrench"),
            initial_state_rule=scen.get("initial_state_rule", "straight"),
            perturbation_magnitude=scen.get("perturbation_magnitude", 0.0),
            seed=scen.get("seed", AppConfig.default_seed),
            model_mismatch_stiffness_factor=scen.get("model_mismatch_stiffness_factor", 1.0),
            tensions=_table(scen.get("tensions")),
            unknown_tensions=_table(scen.get("unknown_tensions")),
            noise_std=dict(scen.get("noise_std", {})),
        ),
        observer=ObserverSpec(**obs),
        sweep=SweepSpec(gain_scales=sorted(sweep.get("gain_scales", SweepSpec().gain_scales)),
                        variants=list(sweep.get("variants", SweepSpec().variants)),
                        settle_kind=rule.get("kind", "relative"), settle_fraction=rule.get("fraction", 0.02)),
        source=source,
    )
    _check_tables(cfg)
    return cfg


def _check_tables(cfg: RunConfig) -> None:
    n_tendons = len(cfg.rod.tendons)
    for label, table in (("tensions", cfg.scenario.tensions), ("unknown_tensions", cfg.scenario.unknown_tensions)):
        if table is None:
            continue
        if n_tendons == 0:
            raise ConfigurationError(f"scenario.{label} given but the rod has no tendons")
        if len(table.times_s) != len(table.tensions_n):
            raise ConfigurationError(f"scenario.{label}: one tension row per time sample is required")
        if any(len(row) != n_tendons for row in table.tensions_n):
            raise ConfigurationError(f"scenario.{label}: every row needs {n_tendons} tensions")
        if any(b <= a for a, b in zip(table.times_s, table.times_s[1:])):
            raise ConfigurationError(f"scenario.{label}: times must be strictly increasing")


def load_config(path: Union[str, Path]) -> RunConfig:
    path = Path(path)
    if not path.exists():
        raise ConfigurationError(f"config file not found: {path}")
    try:
        doc = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ConfigurationError(f"{path}: not valid JSON ({exc})") from exc
    logger.debug("loaded config %s", path)
    return config_from_dict(doc, source=str(path))


# --------------------------------------------
# Rod construction
# --------------------------------------------

def section_matrices(section: Dict[str, Any]):
    if "inertia_diag" in section:
        return np.diag(section["inertia_diag"]), np.diag(section["stiffness_diag"])
    return build_section_matrices(section["radius_m"], section["density_kg_per_m3"],
                                  section["youngs_modulus_pa"], section["shear_modulus_pa"])


def build_rod(spec: RodSpec, gravity: Optional[List[float]] = None) -> RodParameters:
    M, K = section_matrices(spec.section)
    N = spec.node_count
    tendons: List[TendonRouting] = []
    for t in spec.tendons:
        frac = t.get("termination_fraction", 1.0)
        term = int(round(frac * (N - 1)))
        tendons.append(parallel_tendon(N, t["offset_radius_m"], t["offset_angle_rad"], term))
    try:
        return RodParameters.uniform(spec.length_m, N, M, K,
                                     reference_strain=spec.reference_strain, gravity=gravity, tendons=tendons)
    except InvalidArgumentError as exc:
        raise ConfigurationError(f"rod: {exc}") from exc
