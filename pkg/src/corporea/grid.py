"""Recursive Bayesian grid classifying visual-field cells as body or not.

Each cell of a decimated visual field holds a log-odds belief of being part
of the agent's body. Per frame the filter (1) refreshes a four-direction
velocity field from consecutive saliency frames, (2) diffuses beliefs along
those velocities, and (3) accumulates evidence from the windowed Pearson
correlation between cell activation and a scalar self-motion signal:
activity that co-varies with the agent's own movement is body-like.

Grids are stored as (height, width) arrays in image convention: row 0 is
the top, so "down" increases the row index. Log-odds are clamped to
LOG_ODDS_LIMIT so no cell becomes irrecoverably certain.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field

import numpy as np

from .errors import ValidationError

LOG_ODDS_LIMIT = 6.0
DIRECTIONS = ("up", "down", "left", "right")
# Row/col offset applied to a source index to reach the destination cell.
_OFFSETS = {"up": (-1, 0), "down": (1, 0), "left": (0, -1), "right": (0, 1)}


def _sigmoid(x):
    return 1.0 / (1.0 + np.exp(-x))


def _logit(p):
    return np.log(p / (1.0 - p))


def _clamp(log_odds):
    return np.clip(log_odds, -LOG_ODDS_LIMIT, LOG_ODDS_LIMIT)


@dataclass
class BeliefGrid:
    """Decimated visual field of per-cell body log-odds."""

    log_odds: np.ndarray  # (height, width)
    decimation: int = 10

    def __post_init__(self):
        self.log_odds = np.asarray(self.log_odds, dtype=float)
        if self.log_odds.ndim != 2:
            raise ValidationError("belief grid must be a 2-D array")
        if self.decimation < 1:
            raise ValidationError("decimation factor must be at least 1")
        self.log_odds = _clamp(self.log_odds)

    @classmethod
    def uniform(cls, width: int, height: int, decimation: int = 10) -> "BeliefGrid":
        return cls(np.zeros((height, width)), decimation)

    @property
    def width(self) -> int:
        return self.log_odds.shape[1]

    @property
    def height(self) -> int:
        return self.log_odds.shape[0]

    def probabilities(self) -> np.ndarray:
        return _sigmoid(self.log_odds)


@dataclass
class VelocityField:
    """Non-negative per-direction cell velocities with a derived stay weight.

    Entries are scalars in global mode or (height, width) arrays in
    per-cell mode; the transition weights normalize to 1 either way.
    """

    up: np.ndarray | float = 0.0
    down: np.ndarray | float = 0.0
    left: np.ndarray | float = 0.0
    right: np.ndarray | float = 0.0

    def components(self) -> dict:
        return {"up": self.up, "down": self.down, "left": self.left, "right": self.right}

    def stay_weight(self):
        total = self.up + self.down + self.left + self.right
        return np.maximum(0.0, 1.0 - total)

    def transition_weights(self) -> dict:
        """Normalized weights over {stay, up, down, left, right}."""
        stay = self.stay_weight()
        comps = self.components()
        total = stay + sum(comps.values())
        weights = {"stay": stay / total}
        for d in DIRECTIONS:
            weights[d] = comps[d] / total
        return weights

    def is_zero(self) -> bool:
        return all(np.all(np.asarray(v) == 0.0) for v in self.components().values())


def _shift(arr: np.ndarray, offset: tuple[int, int]) -> np.ndarray:
    """Move array contents by (drow, dcol), filling vacated cells with 0."""
    dr, dc = offset
    out = np.zeros_like(arr)
    src_r = slice(max(0, -dr), arr.shape[0] - max(0, dr))
    src_c = slice(max(0, -dc), arr.shape[1] - max(0, dc))
    dst_r = slice(max(0, dr), arr.shape[0] - max(0, -dr))
    dst_c = slice(max(0, dc), arr.shape[1] - max(0, -dc))
    out[dst_r, dst_c] = arr[src_r, src_c]
    return out


def predict(grid: BeliefGrid, vel: VelocityField) -> BeliefGrid:
    """Diffuse beliefs along the velocity field.

    Each cell's new probability is the transition-weighted average of its
    own value and the neighbors opposite each motion direction; cells on
    the border renormalize over the neighbors that exist. A zero field is
    the exact identity.
    """
    if vel.is_zero():
        return BeliefGrid(grid.log_odds.copy(), grid.decimation)

    P = grid.probabilities()
    weights = vel.transition_weights()
    ones = np.ones_like(P)

    num = weights["stay"] * P
    den = weights["stay"] * ones
    for d in DIRECTIONS:
        w = weights[d] * ones
        num += _shift(w * P, _OFFSETS[d])
        den += _shift(w, _OFFSETS[d])
    # A border cell whose only sources lie outside the field (saturated
    # velocity, zero stay weight) receives unknown content: prior 0.5.
    out = np.full_like(P, 0.5)
    np.divide(num, den, out=out, where=den > 0)
    return BeliefGrid(_clamp(_logit(out)), grid.decimation)


def _pearson(a: np.ndarray, b: np.ndarray) -> float:
    """Pearson correlation with the zero-variance convention r = 0."""
    a = np.asarray(a, dtype=float).ravel()
    b = np.asarray(b, dtype=float).ravel()
    ac = a - a.mean()
    bc = b - b.mean()
    va = float(ac @ ac)
    vb = float(bc @ bc)
    if va <= _var_floor(a) or vb <= _var_floor(b):
        return 0.0
    return float(np.clip((ac @ bc) / np.sqrt(va * vb), -1.0, 1.0))


def _var_floor(x: np.ndarray) -> float:
    # Constant windows must count as zero variance even after fp round-off.
    scale = float(np.max(np.abs(x))) if x.size else 0.0
    return (1e-12 * scale) ** 2 * x.size


def correlation_likelihood(cell_window, motion_window, beta: float) -> float:
    """Likelihood ratio exp(beta * r) for one cell's activation window."""
    if beta <= 0:
        raise ValidationError(f"steepness must be positive, got {beta}")
    cell_window = np.asarray(cell_window, dtype=float)
    motion_window = np.asarray(motion_window, dtype=float)
    if cell_window.shape != motion_window.shape:
        raise ValidationError("cell and motion windows must have equal length")
    r = _pearson(cell_window, motion_window)
    return float(np.exp(beta * r))


def windowed_correlation(frame_stack: np.ndarray, motion_window: np.ndarray) -> np.ndarray:
    """Per-cell Pearson correlation of a (w, H, W) stack against (w,) motion."""
    w = frame_stack.shape[0]
    m = np.asarray(motion_window, dtype=float)
    mc = m - m.mean()
    vm = float(mc @ mc)
    xc = frame_stack - frame_stack.mean(axis=0)
    vx = np.sum(xc * xc, axis=0)
    cov = np.tensordot(mc, xc, axes=(0, 0))

    r = np.zeros(frame_stack.shape[1:])
    cell_floor = (1e-12 * np.max(np.abs(frame_stack), axis=0)) ** 2 * w
    ok = (vx > cell_floor) & (vm > _var_floor(m))
    np.divide(cov, np.sqrt(vx * vm), out=r, where=ok)
    return np.clip(r, -1.0, 1.0)


def update(grid: BeliefGrid, frame_window: np.ndarray, motion_window: np.ndarray,
           beta: float) -> BeliefGrid:
    """Bayes step: add each cell's log likelihood ratio, then clamp.

    ``frame_window`` is the stack of the trailing w saliency frames,
    oldest first; the caller (see SelfDetector) owns the buffering.
    """
    if beta <= 0:
        raise ValidationError(f"steepness must be positive, got {beta}")
    frame_window = np.asarray(frame_window, dtype=float)
    if frame_window.ndim != 3 or frame_window.shape[1:] != grid.log_odds.shape:
        raise ValidationError("frame window does not match grid shape")
    if frame_window.shape[0] != np.asarray(motion_window).size:
        raise ValidationError("frame and motion windows must have equal length")
    r = windowed_correlation(frame_window, np.asarray(motion_window, dtype=float))
    return BeliefGrid(_clamp(grid.log_odds + beta * r), grid.decimation)


def _match_scores_global(prev: np.ndarray, curr: np.ndarray) -> dict:
    scores = {"stay": _pearson(curr, prev)}
    for d in DIRECTIONS:
        dr, dc = _OFFSETS[d]
        src_r = slice(max(0, -dr), prev.shape[0] - max(0, dr))
        src_c = slice(max(0, -dc), prev.shape[1] - max(0, dc))
        dst_r = slice(max(0, dr), prev.shape[0] - max(0, -dr))
        dst_c = slice(max(0, dc), prev.shape[1] - max(0, -dc))
        scores[d] = _pearson(curr[dst_r, dst_c], prev[src_r, src_c])
    return scores


def _match_scores_per_cell(prev: np.ndarray, curr: np.ndarray) -> dict:
    # Pointwise agreement in [0, 1]; same comparison as the global mode but
    # resolved per cell instead of pooled into one correlation.
    scores = {"stay": 1.0 - np.abs(curr - prev)}
    for d in DIRECTIONS:
        shifted = _shift(prev, _OFFSETS[d])
        scores[d] = 1.0 - np.abs(curr - shifted)
    return scores


def learn_velocities(prev, curr, vel: VelocityField, rho: float,
                     per_cell: bool = False) -> VelocityField:
    """Exponentially average instantaneous direction estimates into the field.

    A direction's instantaneous velocity is the amount by which shifting
    the previous frame that way explains the current frame better than not
    shifting, normalized across directions.
    """
    if not 0 < rho <= 1:
        raise ValidationError(f"EMA rate must lie in (0, 1], got {rho}")
    prev = np.asarray(prev, dtype=float)
    curr = np.asarray(curr, dtype=float)
    if prev.shape != curr.shape:
        raise ValidationError("frames must have the same shape")

    scores = _match_scores_per_cell(prev, curr) if per_cell else _match_scores_global(prev, curr)
    raw = {d: np.maximum(0.0, scores[d] - scores["stay"]) for d in DIRECTIONS}
    total = sum(raw.values())
    comps = {}
    for d in DIRECTIONS:
        if per_cell:
            est = np.zeros_like(curr)
            np.divide(raw[d], total, out=est, where=np.asarray(total) > 0)
        else:
            est = raw[d] / total if total > 0 else 0.0
        comps[d] = (1.0 - rho) * vel.components()[d] + rho * est
    return VelocityField(**comps)


def classify(grid: BeliefGrid, tau: float) -> np.ndarray:
    """Boolean body mask: P >= tau (ties count as body)."""
    if not 0 < tau < 1:
        raise ValidationError(f"threshold must lie in (0, 1), got {tau}")
    return grid.probabilities() >= tau


@dataclass(frozen=True)
class GridParams:
    """Shape and tuning of the self-detection filter."""

    width: int = 64
    height: int = 48
    decimation: int = 10
    window: int = 15
    beta: float = 2.0
    rho: float = 0.3
    tau: float = 0.9
    per_cell: bool = False

    def __post_init__(self):
        if self.width < 1 or self.height < 1:
            raise ValidationError("grid dimensions must be positive")
        if self.window < 2:
            raise ValidationError("correlation window must be at least 2 frames")
        if self.beta <= 0 or not 0 < self.rho <= 1 or not 0 < self.tau < 1:
            raise ValidationError("invalid filter tuning (beta, rho, tau)")


class SelfDetector:
    """Stateful filter: velocity learning, prediction, and evidence updates.

    The first ``window`` frames only fill the correlation buffers; evidence
    accumulation starts once a full window is available.
    """

    def __init__(self, params: GridParams):
        self.params = params
        self.grid = BeliefGrid.uniform(params.width, params.height, params.decimation)
        zero = np.zeros((params.height, params.width)) if params.per_cell else 0.0
        self.velocities = VelocityField(zero, zero, zero, zero) if params.per_cell else VelocityField()
        self._frames: deque = deque(maxlen=params.window)
        self._motions: deque = deque(maxlen=params.window)
        self._prev_frame: np.ndarray | None = None

    def step(self, frame, motion: float) -> None:
        frame = np.asarray(frame, dtype=float)
        if frame.shape != (self.params.height, self.params.width):
            raise ValidationError(
                f"frame shape {frame.shape} does not match grid "
                f"({self.params.height}, {self.params.width})"
            )
        if np.any(frame < 0) or np.any(frame > 1):
            raise ValidationError("saliency activations must lie in [0, 1]")
        if motion < 0:
            raise ValidationError("self-motion signal must be non-negative")

        if self._prev_frame is not None:
            self.velocities = learn_velocities(self._prev_frame, frame, self.velocities,
                                               self.params.rho, self.params.per_cell)
            self.grid = predict(self.grid, self.velocities)
        self._prev_frame = frame

        self._frames.append(frame)
        self._motions.append(float(motion))
        if len(self._frames) == self.params.window:
            self.grid = update(self.grid, np.stack(self._frames),
                               np.asarray(self._motions), self.params.beta)

    def classify(self) -> np.ndarray:
        return classify(self.grid, self.params.tau)


def run_sequence(frames, motions, params: GridParams, on_frame=None):
    """Run the filter over aligned frame/motion streams.

    Returns (final grid, final velocity field, body mask). ``on_frame`` is
    called as on_frame(index, grid) after each step, for metrics logging.
    """
    frames = list(frames)
    motions = list(motions)
    if len(frames) != len(motions):
        raise ValidationError(
            f"frame stream ({len(frames)}) and motion stream ({len(motions)}) differ in length"
        )
    detector = SelfDetector(params)
    for i, (frame, motion) in enumerate(zip(frames, motions)):
        detector.step(frame, motion)
        if on_frame is not None:
            on_frame(i, detector.grid)
    return detector.grid, detector.velocities, detector.classify()


# --- synthetic scenes -------------------------------------------------------

@dataclass
class SceneData:
    """Labeled synthetic sequence for self-detection runs."""

    frames: list
    motions: np.ndarray
    inbody_mask: np.ndarray
    outbody_mask: np.ndarray


def _burst_envelope(n_frames: int, period: int, on: int, phase: int) -> np.ndarray:
    """Raised-cosine bursts, exactly zero outside the on-window."""
    env = np.zeros(n_frames)
    for t in range(n_frames):
        j = (t + phase) % period
        if j < on:
            env[t] = 0.5 - 0.5 * np.cos(2.0 * np.pi * (j + 1) / (on + 1))
    return env


def make_contingent_scene(params: GridParams, n_frames: int = 200, seed=0) -> SceneData:
    """Arm region pulsing with self-motion plus an independent distractor.

    The arm region's activation tracks the self-motion signal (its own
    movement is what makes it salient); the distractor pulses on its own
    non-coincident schedule. Quiet cells stay at exactly zero so windows
    without activity carry no evidence either way.
    """
    rng = np.random.default_rng(seed)
    H, W = params.height, params.width
    inbody = np.zeros((H, W), dtype=bool)
    outbody = np.zeros((H, W), dtype=bool)
    r0, r1 = int(H * 0.55), int(H * 0.80)
    c0, c1 = int(W * 0.10), int(W * 0.42)
    inbody[r0:r1, c0:c1] = True
    r0, r1 = int(H * 0.15), int(H * 0.38)
    c0, c1 = int(W * 0.60), int(W * 0.90)
    outbody[r0:r1, c0:c1] = True

    period, on = 24, 8
    arm_env = _burst_envelope(n_frames, period, on, phase=0)
    distractor_env = _burst_envelope(n_frames, period, on, phase=period // 2)
    # Per-burst amplitude jitter (same within a burst, different across bursts).
    arm_amp = 0.6 + 0.4 * rng.uniform(size=n_frames // period + 1)
    dis_amp = 0.6 + 0.4 * rng.uniform(size=n_frames // period + 1)
    arm_signal = arm_env * arm_amp[np.arange(n_frames) // period]
    dis_signal = distractor_env * dis_amp[np.arange(n_frames) // period]

    arm_gain = 0.55 + 0.4 * rng.uniform(size=(H, W))
    dis_gain = 0.55 + 0.4 * rng.uniform(size=(H, W))
    frames = []
    for t in range(n_frames):
        frame = np.zeros((H, W))
        frame[inbody] = arm_signal[t] * arm_gain[inbody]
        frame[outbody] = dis_signal[t] * dis_gain[outbody]
        frames.append(frame)
    # Self-motion signal: magnitude of the agent's own movement, which is
    # exactly what modulates the arm region's saliency.
    return SceneData(frames, arm_signal.copy(), inbody, outbody)


def make_static_scene(params: GridParams, n_frames: int = 200) -> SceneData:
    """Motionless control: constant saliency, zero self-motion everywhere."""
    H, W = params.height, params.width
    base = np.zeros((H, W))
    base[H // 3: 2 * H // 3, W // 4: 3 * W // 4] = 0.5
    frames = [base.copy() for _ in range(n_frames)]
    return SceneData(frames, np.zeros(n_frames), np.zeros((H, W), bool), np.zeros((H, W), bool))


# --- image export -----------------------------------------------------------

def write_pgm(path, probabilities: np.ndarray) -> None:
    """8-bit binary PGM of a probability map (gray = round(255 * P))."""
    P = np.asarray(probabilities, dtype=float)
    gray = np.round(255.0 * P).astype(np.uint8)
    h, w = gray.shape
    with open(path, "wb") as f:
        f.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
        f.write(gray.tobytes())


def write_pbm(path, mask: np.ndarray) -> None:
    """Binary PBM of a boolean mask (body cells are black/1)."""
    mask = np.asarray(mask, dtype=bool)
    h, w = mask.shape
    packed = np.packbits(mask.astype(np.uint8), axis=1)
    with open(path, "wb") as f:
        f.write(f"P4\n{w} {h}\n".encode("ascii"))
        f.write(packed.tobytes())
