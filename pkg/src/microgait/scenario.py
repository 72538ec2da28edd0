"""Scenario configs and end-to-end execution.

A scenario YAML names a robot file, a mode (BL / LRST / PMD / FMD), gait
and contact parameters and simulator settings.  `execute` plans the
motion, runs the simulator and produces a machine-readable summary; a
distribution singularity during planning (the FMD failure mode) becomes a
scenario outcome rather than a crash.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import yaml

from microgait.body_dynamics import system_momentum
from microgait.errors import ComparisonInvalidError, ConfigError, PlanAssemblyError, SingularityError
from microgait.gait import (
    GaitSchedule,
    MotionPlan,
    assemble_plan,
    build_crawl_schedule,
    resolve_alpha,
    single_step_schedule,
)
from microgait.kinematics import forward_kinematics, inverse_kinematics
from microgait.model import RobotModel, load_robot
from microgait.rotations import quat_about_z, quat_angle, quat_from_axis_angle
from microgait.simulate import SimConfig, SimLog, run_scenario
from microgait.state import SystemState
from microgait.swing import LrstWeights

SUMMARY_SCHEMA_VERSION = 1

# exit codes shared with the CLI
EXIT_OK = 0
EXIT_ERROR = 1
EXIT_DETACHED = 2
EXIT_SINGULARITY = 3
EXIT_TIMEOUT = 4
EXIT_BLOWUP = 5

TERMINATION_EXIT_CODES = {
    "goal_reached": EXIT_OK,
    "detached_floating": EXIT_DETACHED,
    "singularity": EXIT_SINGULARITY,
    "time_out": EXIT_TIMEOUT,
    "numerical_blowup": EXIT_BLOWUP,
}

# fields that may legitimately differ between members of a comparison
COMPARE_IGNORED = {"name", "mode", "alpha", "seed"}


def _req(data, key, ctx):
    if key not in data:
        raise ConfigError(f"{ctx}: missing field '{key}'")
    return data[key]


def _vec(value, dim3=True):
    v = [float(x) for x in np.atleast_1d(np.asarray(value, dtype=float))]
    if len(v) == 2 and dim3:
        v = v + [0.0]
    return v


@dataclass
class ScenarioConfig:
    name: str
    robot_path: Path
    mode: str
    alpha: float
    seed: int
    kind: str                     # "crawl" | "single_step"
    surface_normal: list
    travel_axis: list
    initial_base: dict
    stance: dict                  # per-limb {foot: [..], seed: [deg..]} / {seed: ...}
    gait: dict
    plan_dt: float
    lrst: dict
    contact: dict
    sim: dict
    swing: dict | None = None     # single_step only
    support: dict | None = None   # single_step only

    def to_dict(self) -> dict:
        d = {
            "name": self.name,
            "robot": str(self.robot_path),
            "mode": self.mode,
            "seed": self.seed,
            "scenario": self.kind,
            "surface_normal": self.surface_normal,
            "travel_axis": self.travel_axis,
            "initial_base": self.initial_base,
            "stance": self.stance,
            "gait": self.gait,
            "plan_dt": self.plan_dt,
            "lrst": self.lrst,
            "contact": self.contact,
            "sim": self.sim,
        }
        if self.mode == "PMD":
            d["alpha"] = self.alpha
        if self.swing is not None:
            d["swing"] = self.swing
        if self.support is not None:
            d["support"] = self.support
        return d


def load_scenario(path) -> ScenarioConfig:
    path = Path(path)
    try:
        with open(path) as fh:
            data = yaml.safe_load(fh)
    except yaml.YAMLError as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    except OSError as exc:
        raise ConfigError(f"cannot read scenario config {path}: {exc}") from exc
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: scenario config must be a mapping")
    return scenario_from_dict(data, base_dir=path.parent)


def scenario_from_dict(data: dict, base_dir=Path(".")) -> ScenarioConfig:
    ctx = data.get("name", "scenario")
    mode = _req(data, "mode", ctx)
    alpha = resolve_alpha(mode, data.get("alpha"))
    robot_path = Path(_req(data, "robot", ctx))
    if not robot_path.is_absolute():
        robot_path = base_dir / robot_path
    if not robot_path.exists():
        raise ConfigError(f"{ctx}: robot file {robot_path} does not exist")
    kind = data.get("scenario", "crawl")
    if kind not in ("crawl", "single_step"):
        raise ConfigError(f"{ctx}: scenario must be 'crawl' or 'single_step'")
    gait = dict(_req(data, "gait", ctx))
    sim = dict(_req(data, "sim", ctx))
    cfg = ScenarioConfig(
        name=ctx,
        robot_path=robot_path,
        mode=mode,
        alpha=alpha,
        seed=int(data.get("seed", 0)),
        kind=kind,
        surface_normal=_vec(data.get("surface_normal", [0, 0, 1])),
        travel_axis=_vec(data.get("travel_axis", [1, 0, 0])),
        initial_base=dict(data.get("initial_base", {})),
        stance=dict(data.get("stance", {})),
        gait=gait,
        plan_dt=float(data.get("plan_dt", 0.025)),
        lrst=dict(data.get("lrst", {})),
        contact=dict(data.get("contact", {})),
        sim=sim,
        swing=dict(data["swing"]) if "swing" in data else None,
        support=dict(data["support"]) if "support" in data else None,
    )
    if kind == "single_step":
        if cfg.swing is None or cfg.support is None:
            raise ConfigError(f"{ctx}: single_step scenarios need 'swing' and 'support'")
    if float(cfg.contact.get("holding_force", 0.9)) <= 0:
        raise ConfigError(f"{ctx}: contact.holding_force must be > 0")
    return cfg


def build_model(cfg: ScenarioConfig) -> RobotModel:
    return load_robot(cfg.robot_path)


def initial_state(cfg: ScenarioConfig, model: RobotModel) -> SystemState:
    """Base at the configured pose, limbs IK'd to their stance points."""
    pos = np.array(_vec(cfg.initial_base.get("position", [0, 0, 0])))
    yaw = math.radians(float(cfg.initial_base.get("orientation_deg", 0.0)))
    quat = quat_about_z(yaw)
    phi = np.zeros(model.n_joints)
    # seed angles first so IK starts from the intended branch
    for limb_name, entry in cfg.stance.items():
        l = model.limb_index(limb_name)
        seed = entry.get("seed")
        if seed is not None:
            j0 = int(model.limb_start[l])
            for c, deg in enumerate(seed):
                phi[j0 + c] = math.radians(float(deg))
    targets = {}
    if cfg.kind == "single_step":
        targets[model.limb_index(cfg.swing["limb"])] = np.array(_vec(cfg.swing["start"]))
        targets[model.limb_index(cfg.support["limb"])] = np.array(_vec(cfg.support["anchor"]))
    else:
        for limb_name, entry in cfg.stance.items():
            if "foot" not in entry:
                raise ConfigError(f"stance for {limb_name} needs a 'foot' position")
            l = model.limb_index(limb_name)
            foot_base = np.array(_vec(entry["foot"]))
            from microgait.rotations import quat_to_rot
            targets[l] = pos + quat_to_rot(quat) @ foot_base
    for l, target in targets.items():
        phi = inverse_kinematics(model, l, target, (pos, quat), phi)
    return SystemState(pos, quat, np.zeros(3), np.zeros(3), phi,
                       np.zeros(model.n_joints))


def build_schedule(cfg: ScenarioConfig, model: RobotModel) -> GaitSchedule:
    g = cfg.gait
    if cfg.kind == "crawl":
        order = [model.limb_index(n) for n in g.get("leg_order", model.limb_names)]
        return build_crawl_schedule(
            stride=float(_req(g, "stride", "gait")),
            step_height=float(_req(g, "step_height", "gait")),
            swing_period=float(_req(g, "swing_period", "gait")),
            base_shift=float(_req(g, "base_shift", "gait")),
            release_height=float(g.get("release_height", 0.01)),
            grasp_height=float(g.get("grasp_height", 0.01)),
            release_fraction=float(g.get("release_fraction", 0.1)),
            grasp_fraction=float(g.get("grasp_fraction", 0.1)),
            leg_order=order,
        )
    return single_step_schedule(
        limb=model.limb_index(cfg.swing["limb"]),
        start=np.array(_vec(cfg.swing["start"])),
        target=np.array(_vec(cfg.swing["target"])),
        step_height=float(_req(g, "step_height", "gait")),
        swing_period=float(_req(g, "swing_period", "gait")),
        lead_in=float(g.get("lead_in", 0.2)),
        lead_out=float(g.get("lead_out", 0.2)),
    )


def build_weights(cfg: ScenarioConfig) -> LrstWeights:
    lr = cfg.lrst
    return LrstWeights(
        k1=float(lr.get("k1", 1.0)),
        k2=float(lr.get("k2", 10.0)),
        k3=float(lr.get("k3", 10.0)),
        h=float(cfg.gait.get("step_height", 0.05)),
        sample_count=int(lr.get("sample_count", 64)),
        n_starts=int(lr.get("n_starts", 8)),
        max_iter=int(lr.get("max_iter", 500)),
        simplex_tol=float(lr.get("simplex_tol", 1e-6)),
    )


def build_sim_config(cfg: ScenarioConfig, model: RobotModel) -> SimConfig:
    s = cfg.sim
    c = cfg.contact
    config = SimConfig(
        timestep=float(_req(s, "timestep", "sim")),
        duration=float(_req(s, "duration", "sim")),
        kp=np.asarray(s.get("kp", 1.0), dtype=float),
        kd=np.asarray(s.get("kd", 0.1), dtype=float),
        gravity=np.array(_vec(s.get("gravity", [0, 0, 0]))),
        contact_stiffness=float(c.get("stiffness", 4000.0)),
        contact_damping=float(c.get("damping", 1.0)),
        holding_force=float(c.get("holding_force", 0.9)),
        surface_normal=np.array(cfg.surface_normal),
        goal_displacement=float(s.get("goal_displacement", 0.0)),
        goal_axis=np.array(cfg.travel_axis),
        float_grace=float(s.get("float_grace", 2.0)),
        log_every=int(s.get("log_every", 10)),
    )
    config.validate_for(model)
    return config


def plan_scenario(cfg: ScenarioConfig, model: RobotModel, state0: SystemState) -> MotionPlan:
    schedule = build_schedule(cfg, model)
    weights = build_weights(cfg)
    if cfg.kind == "single_step":
        attached = [False] * model.n_limbs
        attached[model.limb_index(cfg.support["limb"])] = True
    else:
        attached = [True] * model.n_limbs
    return assemble_plan(
        model, schedule, cfg.mode, state0,
        alpha=cfg.alpha if cfg.mode == "PMD" else None,
        weights=weights, plan_dt=cfg.plan_dt, up=np.array(cfg.surface_normal),
        cycles=int(cfg.gait.get("cycles", 1)),
        initially_attached=attached, seed=cfg.seed)


@dataclass
class ScenarioResult:
    config: ScenarioConfig
    summary: dict
    plan: MotionPlan | None
    log: SimLog | None
    exit_code: int


def _pooled_stats(log: SimLog) -> dict:
    s = log.stats
    total_samples = float(np.sum(s["force_samples"]))
    if total_samples > 0:
        mean_force = float(np.sum(s["mean_force"] * s["force_samples"]) / total_samples)
        mean_moment = float(np.sum(s["mean_moment"] * s["force_samples"]) / total_samples)
    else:
        mean_force = 0.0
        mean_moment = 0.0
    return {
        "max_force": float(np.max(s["max_force"])) if s["max_force"].size else 0.0,
        "mean_force": mean_force,
        "max_moment": float(np.max(s["max_moment"])) if s["max_moment"].size else 0.0,
        "mean_moment": mean_moment,
        "max_tension": float(np.max(s["max_tension"])) if s["max_tension"].size else 0.0,
    }


def summarize(cfg: ScenarioConfig, log: SimLog | None, plan: MotionPlan | None,
              failure: str | None = None, failure_detail: str = "") -> dict:
    summary = {
        "schema_version": SUMMARY_SCHEMA_VERSION,
        "name": cfg.name,
        "mode": cfg.mode,
        "alpha": cfg.alpha,
        "seed": cfg.seed,
    }
    if failure is not None:
        summary.update({
            "termination": failure,
            "termination_detail": failure_detail,
            "distance_traveled": 0.0,
            "detachments": 0,
            "events": [],
        })
        summary.update({k: 0.0 for k in
                        ("max_force", "mean_force", "max_moment", "mean_moment",
                         "max_tension", "peak_momentum_rate", "attitude_excursion_deg")})
        summary["ratios_to_baseline"] = None
        return summary
    stats = _pooled_stats(log)
    # peak momentum rate from the logged series (world-origin momentum)
    if log.times.size > 2:
        dm = np.gradient(log.momentum, log.times, axis=0)
        peak_rate = float(np.max(np.linalg.norm(dm, axis=1)))
    else:
        peak_rate = 0.0
    att = max(quat_angle(q, log.base_quat[0]) for q in log.base_quat)
    summary.update({
        "termination": log.termination,
        "termination_time": float(log.termination_time),
        "distance_traveled": log.distance_along(np.array(cfg.travel_axis)),
        "detachments": sum(1 for e in log.events if e["kind"] == "detachment"),
        "events": log.events,
        "peak_momentum_rate": peak_rate,
        "attitude_excursion_deg": math.degrees(att),
        **stats,
    })
    return summary


def execute(cfg: ScenarioConfig, emit_plan_only=False) -> ScenarioResult:
    """Plan and simulate one scenario.

    A SingularityError escaping plan assembly is the FMD failure outcome:
    it terminates the scenario with cause "singularity" rather than
    raising.  Other planning failures propagate as errors.
    """
    model = build_model(cfg)
    state0 = initial_state(cfg, model)
    try:
        plan = plan_scenario(cfg, model, state0)
    except PlanAssemblyError as exc:
        if isinstance(exc.cause, SingularityError):
            summary = summarize(cfg, None, None, failure="singularity",
                                failure_detail=str(exc))
            return ScenarioResult(cfg, summary, None, None, EXIT_SINGULARITY)
        raise
    if emit_plan_only:
        summary = {
            "schema_version": SUMMARY_SCHEMA_VERSION,
            "name": cfg.name,
            "mode": cfg.mode,
            "alpha": cfg.alpha,
            "seed": cfg.seed,
            "termination": "plan_only",
            "plan_duration": plan.duration,
        }
        return ScenarioResult(cfg, summary, plan, None, EXIT_OK)
    sim_config = build_sim_config(cfg, model)
    log = run_scenario(model, plan, sim_config)
    summary = summarize(cfg, log, plan)
    return ScenarioResult(cfg, summary, plan, log,
                          TERMINATION_EXIT_CODES[log.termination])


RATIO_KEYS = ("max_force", "mean_force", "max_moment", "mean_moment")


def _comparable_view(cfg: ScenarioConfig) -> dict:
    d = cfg.to_dict()
    for key in COMPARE_IGNORED:
        d.pop(key, None)
    return d


def compare(configs: list, results: list | None = None) -> dict:
    """Run (or accept) one scenario per mode and relate metrics to BL.

    All configs must share robot, gait, contact and sim parameters,
    differing only in mode/alpha (and name/seed); otherwise a
    ComparisonInvalidError is raised.  Ratios are reported only when a BL
    member is present.
    """
    if len(configs) < 2:
        raise ComparisonInvalidError("compare needs at least two scenario configs")
    ref = _comparable_view(configs[0])
    for other in configs[1:]:
        if _comparable_view(other) != ref:
            raise ComparisonInvalidError(
                f"scenario {other.name} differs from {configs[0].name} "
                "in more than mode/alpha")
    if results is None:
        results = [execute(cfg) for cfg in configs]
    baseline = next((r for r in results if r.config.mode == "BL"), None)
    members = {}
    for r in results:
        entry = {
            "name": r.config.name,
            "alpha": r.config.alpha,
            "termination": r.summary["termination"],
            "distance_traveled": r.summary.get("distance_traveled", 0.0),
            "attitude_excursion_deg": r.summary.get("attitude_excursion_deg", 0.0),
            "peak_momentum_rate": r.summary.get("peak_momentum_rate", 0.0),
        }
        for k in RATIO_KEYS:
            entry[k] = r.summary.get(k, 0.0)
        if baseline is not None and r is not baseline:
            entry["ratios_to_baseline"] = {
                k: (entry[k] / baseline.summary[k]) if baseline.summary.get(k) else None
                for k in RATIO_KEYS}
        members[r.config.mode] = entry
    if baseline is not None:
        members["BL"]["ratios_to_baseline"] = {k: 1.0 for k in RATIO_KEYS}
    return {
        "schema_version": SUMMARY_SCHEMA_VERSION,
        "kind": "comparison",
        "baseline_present": baseline is not None,
        "modes": members,
    }
