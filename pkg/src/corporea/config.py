"""Run configuration: one validated JSON document driving every command.

The defaults describe a complete working experiment: an arm with a
restricted sampling envelope (so the forward models are well covered by a
sub-thousand-sample training set), a workspace touch zone that doubles as
the stroking site of the perturbation experiment, and estimator step sizes
chosen inside the stability bound of the boosted-precision condition.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import arm as arm_sim
from .errors import ValidationError
from .estimator import PerturbationSchedule
from .gp import KernelParams
from .grid import GridParams

#: Deterministic per-command RNG sub-streams derived from the single seed.
STAGE_IDS = {"acquire": 0, "train": 1, "rhi": 2, "selfdetect": 3, "reconstruct": 4}

EXPERIMENT_JOINT_LIMITS = ((-1.2, 1.2), (-1.2, 1.2), (-1.2, 1.2))
DEFAULT_TRUE_THETA = (0.7, -0.4, 0.6)


@dataclass(frozen=True)
class AcquireConfig:
    n: int = 800
    touch_zone_center: tuple[float, float] | None = None  # None: derive from rhi staging
    touch_zone_spread: float = 0.04
    touch_zone_present: float = 0.9

    def __post_init__(self):
        if self.n < 1:
            raise ValidationError(f"acquisition size must be >= 1, got {self.n}")
        if self.touch_zone_spread < 0:
            raise ValidationError("touch zone spread must be non-negative")
        if not 0.0 <= self.touch_zone_present <= 1.0:
            raise ValidationError("touch zone presence probability must lie in [0, 1]")


@dataclass(frozen=True)
class GPConfig:
    visual: KernelParams = field(default_factory=lambda: KernelParams(0.5, 1.0, 1e-2))
    tactile: KernelParams = field(default_factory=lambda: KernelParams(0.6, 1.0, 1e-4))
    lengthscale_grid: tuple[float, ...] | None = None  # optional evidence search


@dataclass(frozen=True)
class EstimatorConfig:
    precisions: dict = field(default_factory=lambda: {"proprio": 100.0, "visual": 0.04, "tactile": 2.5})
    prior_precision: float = 0.0
    step_size: float = 5e-5
    tol: float = 1e-6
    max_steps: int = 2000
    state_dependent_precision: bool = False

    def __post_init__(self):
        for name, pi in self.precisions.items():
            if name not in ("proprio", "visual", "tactile"):
                raise ValidationError(f"unknown modality '{name}' in precisions")
            if pi <= 0:
                raise ValidationError(f"precision for '{name}' must be positive")
        if self.prior_precision < 0 or self.step_size <= 0 or self.tol <= 0 or self.max_steps < 1:
            raise ValidationError("invalid estimator settings")


@dataclass(frozen=True)
class RhiConfig:
    true_theta: tuple[float, float, float] = DEFAULT_TRUE_THETA
    visual_offset: tuple[float, float] = (30.0, 0.0)
    precision_gain: float = 4.0
    n_steps: int = 3000
    step_size: float = 5e-5
    stim_period: int = 4
    stim_on: int = 2
    stroke_taxel: int | None = None

    def schedule(self, stimulation: str) -> PerturbationSchedule:
        return PerturbationSchedule(
            visual_offset=self.visual_offset, stimulation=stimulation,
            precision_gain=self.precision_gain, n_steps=self.n_steps,
            step_size=self.step_size, stim_period=self.stim_period,
            stim_on=self.stim_on, stroke_taxel=self.stroke_taxel,
        )

    def __post_init__(self):
        self.schedule("none")  # borrow the schedule validation


@dataclass(frozen=True)
class SelfDetectConfig:
    grid: GridParams = field(default_factory=GridParams)
    n_frames: int = 200
    scene: str = "contingent"

    def __post_init__(self):
        if self.n_frames < 1:
            raise ValidationError("need at least one frame")
        if self.scene not in ("contingent", "static"):
            raise ValidationError(f"unknown scene '{self.scene}'")


@dataclass(frozen=True)
class ReconstructConfig:
    n_holdout: int = 100

    def __post_init__(self):
        if self.n_holdout < 1:
            raise ValidationError("need at least one held-out sample")


@dataclass
class RunConfig:
    arm: arm_sim.ArmConfig
    acquire: AcquireConfig
    gp: GPConfig
    estimator: EstimatorConfig
    rhi: RhiConfig
    selfdetect: SelfDetectConfig
    reconstruct: ReconstructConfig
    seed: int = 42
    output_dir: str = "out"

    def touch_zone(self) -> arm_sim.TouchZone:
        """Workspace touch zone; by default it sits on the stroked taxel of
        the experiment pose, displaced by the visual offset (the rig stands
        where the displaced arm will be seen)."""
        center = self.acquire.touch_zone_center
        if center is None:
            taxel = self.rhi.stroke_taxel
            if taxel is None:
                taxel = self.arm.num_taxels // 2
            pos = arm_sim.taxel_positions(self.rhi.true_theta, self.arm)[taxel]
            off = np.asarray(self.rhi.visual_offset) / self.arm.camera.scale
            center = (float(pos[0] + off[0]), float(pos[1] - off[1]))
        return arm_sim.TouchZone(center=center, spread=self.acquire.touch_zone_spread,
                                 p_present=self.acquire.touch_zone_present)

    def stage_rng(self, stage: str) -> np.random.Generator:
        return np.random.default_rng([self.seed, STAGE_IDS[stage]])

    def stage_seed(self, stage: str) -> list[int]:
        return [self.seed, STAGE_IDS[stage]]


def default_config() -> RunConfig:
    return RunConfig(
        arm=arm_sim.ArmConfig(joint_limits=EXPERIMENT_JOINT_LIMITS, contact_radius=0.07),
        acquire=AcquireConfig(),
        gp=GPConfig(),
        estimator=EstimatorConfig(),
        rhi=RhiConfig(),
        selfdetect=SelfDetectConfig(),
        reconstruct=ReconstructConfig(),
    )


# --- (de)serialization -------------------------------------------------------

def config_to_dict(cfg: RunConfig) -> dict:
    tz = cfg.touch_zone()
    return {
        "arm": cfg.arm.to_dict(),
        "acquire": {
            "n": cfg.acquire.n,
            "touch_zone_center": list(tz.center),
            "touch_zone_spread": cfg.acquire.touch_zone_spread,
            "touch_zone_present": cfg.acquire.touch_zone_present,
        },
        "gp": {
            "visual": vars(cfg.gp.visual).copy(),
            "tactile": vars(cfg.gp.tactile).copy(),
            "lengthscale_grid": list(cfg.gp.lengthscale_grid) if cfg.gp.lengthscale_grid else None,
        },
        "estimator": {
            "precisions": dict(cfg.estimator.precisions),
            "prior_precision": cfg.estimator.prior_precision,
            "step_size": cfg.estimator.step_size,
            "tol": cfg.estimator.tol,
            "max_steps": cfg.estimator.max_steps,
            "state_dependent_precision": cfg.estimator.state_dependent_precision,
        },
        "rhi": {
            "true_theta": list(cfg.rhi.true_theta),
            "visual_offset": list(cfg.rhi.visual_offset),
            "precision_gain": cfg.rhi.precision_gain,
            "n_steps": cfg.rhi.n_steps,
            "step_size": cfg.rhi.step_size,
            "stim_period": cfg.rhi.stim_period,
            "stim_on": cfg.rhi.stim_on,
            "stroke_taxel": cfg.rhi.stroke_taxel,
        },
        "selfdetect": {
            "grid": {
                "width": cfg.selfdetect.grid.width,
                "height": cfg.selfdetect.grid.height,
                "decimation": cfg.selfdetect.grid.decimation,
                "window": cfg.selfdetect.grid.window,
                "beta": cfg.selfdetect.grid.beta,
                "rho": cfg.selfdetect.grid.rho,
                "tau": cfg.selfdetect.grid.tau,
                "per_cell": cfg.selfdetect.grid.per_cell,
            },
            "n_frames": cfg.selfdetect.n_frames,
            "scene": cfg.selfdetect.scene,
        },
        "reconstruct": {"n_holdout": cfg.reconstruct.n_holdout},
        "seed": cfg.seed,
        "output_dir": cfg.output_dir,
    }


def _check_keys(d: dict, allowed, where: str):
    unknown = sorted(set(d) - set(allowed))
    if unknown:
        raise ValidationError(f"unknown config key(s) {unknown} in '{where}'")


def config_from_dict(doc: dict) -> RunConfig:
    _check_keys(doc, ("arm", "acquire", "gp", "estimator", "rhi", "selfdetect",
                      "reconstruct", "seed", "output_dir"), "<root>")
    base = config_to_dict(default_config())

    def section(name):
        merged = dict(base[name])
        given = doc.get(name, {})
        if not isinstance(given, dict):
            raise ValidationError(f"config section '{name}' must be an object")
        _check_keys(given, merged.keys(), name)
        merged.update(given)
        return merged

    arm_doc = doc.get("arm", base["arm"])
    _check_keys(arm_doc, base["arm"].keys(), "arm")
    merged_arm = dict(base["arm"])
    merged_arm.update(arm_doc)
    if "camera" in arm_doc:
        _check_keys(arm_doc["camera"], base["arm"]["camera"].keys(), "arm.camera")
        cam = dict(base["arm"]["camera"])
        cam.update(arm_doc["camera"])
        merged_arm["camera"] = cam
    arm_cfg = arm_sim.ArmConfig.from_dict(merged_arm)

    acq = section("acquire")
    gp_doc = section("gp")
    for mod in ("visual", "tactile"):
        if not isinstance(gp_doc[mod], dict):
            raise ValidationError(f"gp.{mod} must be an object")
        _check_keys(gp_doc[mod], ("lengthscale", "signal_variance", "noise_variance"), f"gp.{mod}")
    est = section("estimator")
    rhi = section("rhi")
    sd = section("selfdetect")
    _check_keys(sd["grid"], base["selfdetect"]["grid"].keys(), "selfdetect.grid")
    grid_doc = dict(base["selfdetect"]["grid"])
    grid_doc.update(sd["grid"])
    rec = section("reconstruct")

    seed = doc.get("seed", base["seed"])
    if not isinstance(seed, int) or isinstance(seed, bool) or not 0 <= seed < 2**64:
        raise ValidationError(f"seed must be a 64-bit unsigned integer, got {seed!r}")

    return RunConfig(
        arm=arm_cfg,
        acquire=AcquireConfig(
            n=acq["n"],
            touch_zone_center=tuple(acq["touch_zone_center"]) if acq["touch_zone_center"] else None,
            touch_zone_spread=acq["touch_zone_spread"],
            touch_zone_present=acq["touch_zone_present"],
        ),
        gp=GPConfig(
            visual=KernelParams(**gp_doc["visual"]),
            tactile=KernelParams(**gp_doc["tactile"]),
            lengthscale_grid=tuple(gp_doc["lengthscale_grid"]) if gp_doc["lengthscale_grid"] else None,
        ),
        estimator=EstimatorConfig(
            precisions=dict(est["precisions"]),
            prior_precision=est["prior_precision"],
            step_size=est["step_size"],
            tol=est["tol"],
            max_steps=est["max_steps"],
            state_dependent_precision=est["state_dependent_precision"],
        ),
        rhi=RhiConfig(
            true_theta=tuple(rhi["true_theta"]),
            visual_offset=tuple(rhi["visual_offset"]),
            precision_gain=rhi["precision_gain"],
            n_steps=rhi["n_steps"],
            step_size=rhi["step_size"],
            stim_period=rhi["stim_period"],
            stim_on=rhi["stim_on"],
            stroke_taxel=rhi["stroke_taxel"],
        ),
        selfdetect=SelfDetectConfig(
            grid=GridParams(**grid_doc),
            n_frames=sd["n_frames"],
            scene=sd["scene"],
        ),
        reconstruct=ReconstructConfig(n_holdout=rec["n_holdout"]),
        seed=seed,
        output_dir=doc.get("output_dir", base["output_dir"]),
    )


def dump_config(cfg: RunConfig) -> str:
    return json.dumps(config_to_dict(cfg), indent=2, sort_keys=True) + "\n"


def load_config(path) -> RunConfig:
    path = Path(path)
    try:
        with open(path) as f:
            doc = json.load(f)
    except json.JSONDecodeError as exc:
        raise ValidationError(f"{path}: invalid JSON ({exc})") from None
    if not isinstance(doc, dict):
        raise ValidationError(f"{path}: config root must be a JSON object")
    return config_from_dict(doc)
