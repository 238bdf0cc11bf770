"""Latent body-state inference by free-energy gradient descent.

The belief over the joint vector mu is represented by its mode. Each
enabled modality contributes a precision-weighted squared prediction error
to the objective

    F = sum_m (Pi_m / 2) |s_m - g_m(mu)|^2 + (Pi_0 / 2) |mu - mu_0|^2,

and mu follows explicit Euler steps down dF/dmu. Missing readings (e.g. an
out-of-frame visual sample) simply drop that modality's term for the frame.

The displaced-vision stroking experiment (`run_rhi`) and its closed-form
1-D counterpart (`run_rhi_toy`) live here too.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Mapping, Sequence

import numpy as np

from . import arm as arm_sim
from .errors import NumericalError, ValidationError

_SNAPSHOT_FIELDS = {"proprio": "proprio", "visual": "visual_self", "tactile": "tactile"}


def modality_reading(snapshot, modality: str):
    """Reading for a modality from a SensorSnapshot or a plain mapping."""
    if isinstance(snapshot, Mapping):
        value = snapshot.get(modality)
    else:
        value = getattr(snapshot, _SNAPSHOT_FIELDS[modality])
    return None if value is None else np.asarray(value, dtype=float)


@dataclass
class BodyBelief:
    """Current estimate of the latent joint vector with its weighting.

    ``modality_precisions`` lists the enabled modalities; a modality absent
    from the dict is ignored entirely.
    """

    mu: np.ndarray
    prior_mean: np.ndarray
    prior_precision: float = 0.0
    modality_precisions: dict[str, float] = field(default_factory=dict)
    last_free_energy: float = np.nan
    converged: bool = False

    def __post_init__(self):
        self.mu = np.asarray(self.mu, dtype=float)
        self.prior_mean = np.asarray(self.prior_mean, dtype=float)
        if not np.all(np.isfinite(self.mu)):
            raise ValidationError(f"belief mode must be finite, got {self.mu}")
        if self.prior_precision < 0:
            raise ValidationError("prior precision must be non-negative")
        for name, pi in self.modality_precisions.items():
            if pi <= 0:
                raise ValidationError(f"precision for '{name}' must be positive, got {pi}")


class IdentityModels:
    """Forward models that read the latent straight through (linear toy)."""

    def __init__(self, modalities: Sequence[str] = ("proprio", "visual")):
        self._modalities = tuple(modalities)

    @property
    def modalities(self) -> tuple[str, ...]:
        return self._modalities

    def predict(self, modality: str, mu) -> np.ndarray:
        if modality not in self._modalities:
            raise ValidationError(f"unknown modality '{modality}'")
        return np.asarray(mu, dtype=float).copy()

    def jacobian(self, modality: str, mu) -> np.ndarray:
        if modality not in self._modalities:
            raise ValidationError(f"unknown modality '{modality}'")
        return np.eye(np.asarray(mu).size)

    def observation_variance(self, modality: str, mu) -> np.ndarray:
        return np.ones(np.asarray(mu).size)


def _modality_terms(belief: BodyBelief, snapshot, models, state_dependent_precision: bool):
    """Yield (modality, precision-vector, residual) for present modalities."""
    any_present = False
    for modality in models.modalities:
        if modality not in belief.modality_precisions:
            continue
        reading = modality_reading(snapshot, modality)
        if reading is None:
            continue
        any_present = True
        prediction = models.predict(modality, belief.mu)
        residual = reading - prediction
        if state_dependent_precision and modality != "proprio":
            pi = 1.0 / np.maximum(models.observation_variance(modality, belief.mu), 1e-12)
        else:
            pi = np.full(residual.size, belief.modality_precisions[modality])
        yield modality, pi, residual
    if not any_present:
        raise ValidationError("no enabled modality present in snapshot")


def free_energy(belief: BodyBelief, snapshot, models,
                state_dependent_precision: bool = False) -> float:
    """Precision-weighted squared prediction error plus the prior term."""
    total = 0.0
    for _, pi, residual in _modality_terms(belief, snapshot, models, state_dependent_precision):
        total += 0.5 * float(np.sum(pi * residual**2))
    if belief.prior_precision > 0:
        diff = belief.mu - belief.prior_mean
        total += 0.5 * belief.prior_precision * float(diff @ diff)
    return total


def free_energy_gradient(belief: BodyBelief, snapshot, models,
                         state_dependent_precision: bool = False) -> np.ndarray:
    """dF/dmu: back-projected weighted residuals plus the prior pull."""
    grad = np.zeros_like(belief.mu)
    for modality, pi, residual in _modality_terms(belief, snapshot, models, state_dependent_precision):
        J = models.jacobian(modality, belief.mu)
        grad -= J.T @ (pi * residual)
    if belief.prior_precision > 0:
        grad += belief.prior_precision * (belief.mu - belief.prior_mean)
    return grad


def step(belief: BodyBelief, snapshot, models, eta: float,
         state_dependent_precision: bool = False) -> BodyBelief:
    """One Euler descent step; refreshes the stored free energy at the new mode."""
    if eta <= 0:
        raise ValidationError(f"step size must be positive, got {eta}")
    grad = free_energy_gradient(belief, snapshot, models, state_dependent_precision)
    if not np.all(np.isfinite(grad)):
        raise NumericalError(f"non-finite free-energy gradient {grad}")
    updated = replace(belief, mu=belief.mu - eta * grad)
    updated.last_free_energy = free_energy(updated, snapshot, models, state_dependent_precision)
    return updated


def infer(initial: BodyBelief, snapshots, models, eta: float,
          tol: float = 1e-6, max_steps: int = 2000,
          state_dependent_precision: bool = False) -> BodyBelief:
    """Descend F over a snapshot stream until the gradient settles.

    A single snapshot is repeated; a finite stream is walked once and its
    last element repeated if the budget allows. Stops when the gradient's
    inf-norm drops below ``tol`` or after ``max_steps`` steps, setting the
    converged flag accordingly.
    """
    if tol <= 0:
        raise ValidationError(f"tolerance must be positive, got {tol}")
    if isinstance(snapshots, (arm_sim.SensorSnapshot, Mapping)):
        stream = [snapshots]
    else:
        stream = list(snapshots)
        if not stream:
            raise ValidationError("empty snapshot stream")

    belief = replace(initial)
    current = stream[0]
    grad = free_energy_gradient(belief, current, models, state_dependent_precision)
    belief.last_free_energy = free_energy(belief, current, models, state_dependent_precision)
    if np.max(np.abs(grad)) < tol:
        belief.converged = True
        return belief

    for k in range(max_steps):
        current = stream[k] if k < len(stream) else stream[-1]
        belief = step(belief, current, models, eta, state_dependent_precision)
        grad = free_energy_gradient(belief, current, models, state_dependent_precision)
        if np.max(np.abs(grad)) < tol:
            belief.converged = True
            return belief
    belief.converged = False
    return belief


def reconstruct_modality(belief: BodyBelief, models, modality: str) -> np.ndarray:
    """Expected reading of a modality under the current belief."""
    if modality not in models.modalities:
        raise ValidationError(f"unknown modality '{modality}'")
    return models.predict(modality, belief.mu)


# --- displaced-vision stroking experiment ----------------------------------

STIMULATION_MODES = ("none", "synchronous", "asynchronous")


@dataclass(frozen=True)
class PerturbationSchedule:
    """Visual displacement and stroking protocol for one experiment run."""

    visual_offset: tuple[float, float] = (30.0, 0.0)
    stimulation: str = "synchronous"
    precision_gain: float = 4.0
    n_steps: int = 1500
    step_size: float = 5e-4
    stim_period: int = 4
    stim_on: int = 2
    stroke_taxel: int | None = None  # default: middle taxel

    def __post_init__(self):
        if self.stimulation not in STIMULATION_MODES:
            raise ValidationError(f"stimulation must be one of {STIMULATION_MODES}")
        if self.precision_gain < 1.0:
            raise ValidationError(f"precision gain must be >= 1, got {self.precision_gain}")
        if self.n_steps < 1:
            raise ValidationError("schedule needs at least one step")
        if self.step_size <= 0:
            raise ValidationError("step size must be positive")
        if not 0 < self.stim_on <= self.stim_period:
            raise ValidationError("stimulation duty must satisfy 0 < on <= period")


@dataclass
class DriftReport:
    """Trajectory and summary of one perturbation run.

    ``drift`` is the displacement of the believed end-effector pixel
    position over the run, projected on the unit vector of the visual
    offset (zero offset reports zero drift).
    """

    mu_trajectory: np.ndarray       # (n_steps + 1, dim)
    drift: float
    converged: bool
    free_energies: np.ndarray       # (n_steps + 1,)
    ee_pixels: np.ndarray           # (n_steps + 1, 2)
    stimulation: str = "none"

    def __post_init__(self):
        if not np.isfinite(self.drift):
            raise ValidationError("drift must be finite")


def rhi_snapshots(schedule: PerturbationSchedule, config: arm_sim.ArmConfig,
                  true_theta) -> list[arm_sim.SensorSnapshot]:
    """Noiseless snapshot sequence for one stimulation condition.

    The visible end-effector is displaced by the schedule's offset. Felt
    touches follow a periodic duty cycle: aligned with the seen-touch cue
    frames when synchronous, shifted by half a period when asynchronous,
    absent when stimulation is off. The seen-touch cue is recorded as
    ``visual_other`` at the displaced stroke site.
    """
    true_theta = np.asarray(true_theta, dtype=float).reshape(3)
    cam = config.camera
    ee_px = arm_sim.pixel_coords(arm_sim.end_effector(true_theta, config), cam)
    offset = np.asarray(schedule.visual_offset, dtype=float)
    displaced_ee_px = ee_px + offset

    taxel = schedule.stroke_taxel
    if taxel is None:
        taxel = config.num_taxels // 2
    if not 0 <= taxel < config.num_taxels:
        raise ValidationError(f"stroke taxel {taxel} out of range")
    # The probe physically touches the real forearm at the stroked taxel, so
    # the felt pattern covers every taxel within contact range of the probe;
    # the cue is the probe as seen in the displaced image.
    probe = arm_sim.taxel_positions(true_theta, config)[taxel]
    felt_pattern = arm_sim.tactile_contact(true_theta, probe, config)
    stroke_px = arm_sim.pixel_coords(probe, cam) + offset

    period, on = schedule.stim_period, schedule.stim_on
    half = period // 2
    snapshots = []
    for t in range(schedule.n_steps):
        cue_on = (t % period) < on and schedule.stimulation != "none"
        if schedule.stimulation == "synchronous":
            felt_on = cue_on
        elif schedule.stimulation == "asynchronous":
            felt_on = ((t + half) % period) < on
        else:
            felt_on = False
        tactile = felt_pattern.copy() if felt_on else np.zeros(config.num_taxels)
        snapshots.append(arm_sim.SensorSnapshot(
            proprio=true_theta.copy(),
            visual_self=displaced_ee_px.copy(),
            visual_other=stroke_px.copy() if cue_on else None,
            tactile=tactile,
            timestamp=t,
        ))
    return snapshots


def run_rhi(models, schedule: PerturbationSchedule, config: arm_sim.ArmConfig,
            true_theta, precisions: Mapping[str, float],
            prior_precision: float = 0.0, settle_tol: float = 1e-7) -> DriftReport:
    """Run one stimulation condition and report the proprioceptive drift.

    Synchronous stroking multiplies the visual and tactile precisions by
    the schedule's gain for the whole run; asynchronous and off conditions
    use the base precisions. The belief starts at the true configuration
    (the prior mean), and drift is read out in pixel space through forward
    kinematics and the camera.
    """
    true_theta = np.asarray(true_theta, dtype=float).reshape(3)
    pi = dict(precisions)
    if schedule.stimulation == "synchronous":
        for name in ("visual", "tactile"):
            if name in pi:
                pi[name] *= schedule.precision_gain

    snapshots = rhi_snapshots(schedule, config, true_theta)
    belief = BodyBelief(mu=true_theta.copy(), prior_mean=true_theta.copy(),
                        prior_precision=prior_precision, modality_precisions=pi)

    dim = true_theta.size
    mu_traj = np.zeros((schedule.n_steps + 1, dim))
    fe_traj = np.zeros(schedule.n_steps + 1)
    ee_traj = np.zeros((schedule.n_steps + 1, 2))
    mu_traj[0] = belief.mu
    fe_traj[0] = free_energy(belief, snapshots[0], models)
    ee_traj[0] = arm_sim.pixel_coords(arm_sim.end_effector(belief.mu, config, check_limits=False), config.camera)

    for t, snap in enumerate(snapshots):
        belief = step(belief, snap, models, schedule.step_size)
        mu_traj[t + 1] = belief.mu
        fe_traj[t + 1] = belief.last_free_energy
        ee_traj[t + 1] = arm_sim.pixel_coords(arm_sim.end_effector(belief.mu, config, check_limits=False), config.camera)

    offset = np.asarray(schedule.visual_offset, dtype=float)
    norm = np.linalg.norm(offset)
    if norm == 0.0:
        drift = 0.0
    else:
        drift = float((ee_traj[-1] - ee_traj[0]) @ (offset / norm))

    # Settled when the trajectory repeats itself over one stimulation period.
    period = schedule.stim_period
    if schedule.n_steps > 2 * period:
        tail = mu_traj[-period - 1:]
        converged = bool(np.max(np.abs(tail[-1] - tail[0])) < settle_tol)
    else:
        converged = False
    return DriftReport(mu_traj, drift, converged, fe_traj, ee_traj, schedule.stimulation)


def run_rhi_toy(delta: float, pi_proprio: float, pi_visual: float,
                eta: float = 0.05, n_steps: int = 2000) -> DriftReport:
    """1-D identity-model fusion: proprio says 0, vision says ``delta``.

    The fixed point is the precision-weighted mean, so the reported drift
    converges to delta * pi_visual / (pi_proprio + pi_visual).
    """
    models = IdentityModels(("proprio", "visual"))
    belief = BodyBelief(mu=np.zeros(1), prior_mean=np.zeros(1),
                        modality_precisions={"proprio": pi_proprio, "visual": pi_visual})
    snapshot = {"proprio": np.zeros(1), "visual": np.array([float(delta)])}

    mu_traj = np.zeros((n_steps + 1, 1))
    fe_traj = np.zeros(n_steps + 1)
    fe_traj[0] = free_energy(belief, snapshot, models)
    for t in range(n_steps):
        belief = step(belief, snapshot, models, eta)
        mu_traj[t + 1] = belief.mu
        fe_traj[t + 1] = belief.last_free_energy

    sign = 1.0 if delta >= 0 else -1.0
    drift = float(sign * (mu_traj[-1, 0] - mu_traj[0, 0])) if delta != 0 else 0.0
    grad = free_energy_gradient(belief, snapshot, models)
    ee = np.column_stack([mu_traj[:, 0], np.zeros(n_steps + 1)])
    return DriftReport(mu_traj, drift, bool(np.max(np.abs(grad)) < 1e-9), fe_traj, ee, "toy")
