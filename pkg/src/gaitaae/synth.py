"""Synthetic treadmill-walking point clouds.

The body is a set of sampled surfaces (head ellipsoid, torso elliptic
cylinder, two legs, two arms) posed per frame: legs swing sinusoidally in
anti-phase, arms counter-swing, the trunk bobs twice per cycle. Surface
sample coordinates are drawn once per sequence and only the pose and the
Gaussian jitter change from frame to frame.

Abnormal gaits mimic two perturbations of a real protocol:

* a sole of some thickness under one foot: that hip rides higher, the pelvis
  tilts and the trunk leans away (half compensated), and the sole block
  shows up under the foot;
* a weight strapped to one ankle: that leg swings with a smaller, time-warped
  stroke and carries a small blob at the ankle.

The subject faces +y and its left side is at -x.
"""

from __future__ import annotations

import csv
import hashlib
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from .errors import InvalidParams
from .histogram import PointCloud, write_point_cloud, write_sequence_manifest

LEFT, RIGHT = 0, 1

GAIT_MODES = (
    "normal",
    "sole5_left", "sole5_right",
    "sole10_left", "sole10_right",
    "sole15_left", "sole15_right",
    "weight_left", "weight_right",
)

# fraction of points per body part
_SHARES = {"head": 0.08, "torso": 0.42, "leg": 0.18, "arm": 0.07}
_SOLE_SHARE_PER_M = 0.3
_WEIGHT_SHARE = 0.03


@dataclass(frozen=True)
class GaitParams:
    points_per_frame: int = 1200
    cycle_length: int = 26
    height: float = 1.75
    width_scale: float = 1.0
    leg_amplitude: tuple[float, float] = (0.45, 0.45)
    arm_amplitude: float = 0.3
    sole_thickness: tuple[float, float] = (0.0, 0.0)
    swing_speed: tuple[float, float] = (1.0, 1.0)
    ankle_weight: tuple[bool, bool] = (False, False)
    bob: float = 0.02
    yaw: float = 0.0
    phase0: float = 0.0
    noise_sigma: float = 0.01
    seed: int = 0

    def validate(self):
        if self.cycle_length < 4:
            raise InvalidParams(f"cycle_length must be >= 4, got {self.cycle_length}")
        if self.points_per_frame < 10:
            raise InvalidParams("points_per_frame must be >= 10")
        if min(self.leg_amplitude) < 0 or self.arm_amplitude < 0:
            raise InvalidParams("swing amplitudes must be >= 0")
        if self.noise_sigma < 0:
            raise InvalidParams("noise_sigma must be >= 0")
        if min(self.sole_thickness) < 0:
            raise InvalidParams("sole thickness must be >= 0")
        if not all(0.1 <= s <= 1.0 for s in self.swing_speed):
            raise InvalidParams("swing_speed must lie in [0.1, 1]")
        if self.height <= 0 or self.width_scale <= 0:
            raise InvalidParams("body dimensions must be positive")


def with_mode(params: GaitParams, mode: str) -> GaitParams:
    """Apply one of :data:`GAIT_MODES` to otherwise normal parameters."""
    if mode == "normal":
        return params
    kind, side = mode.split("_")
    idx = LEFT if side == "left" else RIGHT
    if kind.startswith("sole"):
        thick = [0.0, 0.0]
        thick[idx] = int(kind[4:]) / 100.0
        return replace(params, sole_thickness=tuple(thick))
    if kind == "weight":
        speed = [1.0, 1.0]
        speed[idx] = 0.6
        weight = [False, False]
        weight[idx] = True
        return replace(params, swing_speed=tuple(speed), ankle_weight=tuple(weight))
    raise InvalidParams(f"unknown gait mode {mode!r}")


def _sphere_dirs(rng, n):
    v = rng.standard_normal((n, 3))
    return v / np.linalg.norm(v, axis=1, keepdims=True)


@dataclass
class _Template:
    head: np.ndarray          # unit directions (n, 3)
    torso: np.ndarray         # (angle, height fraction) (n, 2)
    legs: list[np.ndarray]    # (angle, fraction) per side
    arms: list[np.ndarray]
    soles: list[np.ndarray]   # unit-box coordinates per side
    weights: list[np.ndarray]  # unit directions per side


def _make_template(p: GaitParams, rng) -> _Template:
    n = p.points_per_frame

    def count(share):
        return max(1, int(round(share * n)))

    def ring(k):
        return np.column_stack([rng.uniform(0, 2 * np.pi, k), rng.uniform(0, 1, k)])

    soles = [rng.uniform(0, 1, (count(_SOLE_SHARE_PER_M * t), 3)) if t > 0 else np.zeros((0, 3))
             for t in p.sole_thickness]
    weights = [_sphere_dirs(rng, count(_WEIGHT_SHARE)) if w else np.zeros((0, 3)) for w in p.ankle_weight]
    return _Template(
        head=_sphere_dirs(rng, count(_SHARES["head"])),
        torso=ring(count(_SHARES["torso"])),
        legs=[ring(count(_SHARES["leg"])) for _ in range(2)],
        arms=[ring(count(_SHARES["arm"])) for _ in range(2)],
        soles=soles,
        weights=weights,
    )


def _limb(start, direction, length, radius_top, radius_bottom, samples):
    """Points on a tapered cylinder hanging from ``start`` along ``direction``."""
    ang, frac = samples[:, 0], samples[:, 1]
    e1 = np.array([1.0, 0.0, 0.0])
    e2 = np.cross(direction, e1)
    radius = radius_top + (radius_bottom - radius_top) * frac
    return (start + np.outer(frac * length, direction)
            + np.outer(radius * np.cos(ang), e1) + np.outer(radius * np.sin(ang), e2))


def _rot_y(beta):
    c, s = np.cos(beta), np.sin(beta)
    return np.array([[c, 0.0, s], [0.0, 1.0, 0.0], [-s, 0.0, c]])


def _rot_z(yaw):
    c, s = np.cos(yaw), np.sin(yaw)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


def _pose(p: GaitParams, tpl: _Template, frame: int) -> np.ndarray:
    H, w = p.height, p.width_scale
    leg_len = 0.48 * H
    hip_z = leg_len + 0.02
    hip_half = 0.09 * H * w
    torso_len = 0.30 * H
    rx, ry = 0.10 * H * w, 0.065 * H * w
    leg_r = 0.04 * H * w
    arm_r = 0.025 * H * w
    arm_len = 0.36 * H

    phi = 2.0 * np.pi * frame / p.cycle_length + p.phase0
    bob = p.bob * np.cos(2.0 * phi)
    lift = np.asarray(p.sole_thickness, dtype=np.float64)
    pelvis = np.array([0.0, 0.0, hip_z + lift.mean() + bob])
    tilt = np.arctan2(lift[LEFT] - lift[RIGHT], 2.0 * hip_half)
    trunk = _rot_y(0.5 * tilt)

    parts = []
    # torso and head ride on the tilted trunk frame
    ang, frac = tpl.torso[:, 0], tpl.torso[:, 1]
    local = np.column_stack([rx * np.cos(ang), ry * np.sin(ang), frac * torso_len])
    parts.append(pelvis + local @ trunk.T)
    head_c = np.array([0.0, 0.0, torso_len + 0.05 * H + 0.065 * H])
    head = head_c + tpl.head * np.array([0.05 * H * w, 0.055 * H * w, 0.065 * H])
    parts.append(pelvis + head @ trunk.T)

    for side, sign in ((LEFT, -1.0), (RIGHT, 1.0)):
        other = np.pi if side == RIGHT else 0.0
        speed = p.swing_speed[side]
        warped = phi + other
        warped = warped - (1.0 - speed) * np.sin(warped)
        amp = p.leg_amplitude[side] * (0.7 + 0.3 * speed)
        theta = amp * np.sin(warped)
        direction = np.array([0.0, np.sin(theta), -np.cos(theta)])
        hip = np.array([sign * hip_half, 0.0, hip_z + lift[side] + bob])
        parts.append(_limb(hip, direction, leg_len, leg_r, 0.6 * leg_r, tpl.legs[side]))
        foot = hip + leg_len * direction
        if len(tpl.soles[side]):
            t = lift[side]
            box = tpl.soles[side] * np.array([2 * leg_r, 0.22, t]) + np.array([-leg_r, -0.06, -t])
            parts.append(foot + box)
        if len(tpl.weights[side]):
            parts.append(foot + np.array([0.0, 0.0, 0.08]) + 0.055 * tpl.weights[side])

        # arms counter-swing with the same-side leg
        psi = -p.arm_amplitude * np.sin(phi + other)
        shoulder = pelvis + trunk @ np.array([sign * (rx + arm_r), 0.0, torso_len - 0.02 * H])
        arm_dir = trunk @ np.array([0.0, np.sin(psi), -np.cos(psi)])
        parts.append(_limb(shoulder, arm_dir, arm_len, arm_r, 0.8 * arm_r, tpl.arms[side]))

    pts = np.vstack(parts)
    if p.yaw:
        pts = pts @ _rot_z(p.yaw).T
    return pts


def generate_sequence(params: GaitParams, n_frames: int) -> list[PointCloud]:
    """Deterministic sequence of ``n_frames`` clouds for ``params``."""
    params.validate()
    if n_frames < 1:
        raise InvalidParams("n_frames must be >= 1")
    tpl = _make_template(params, np.random.default_rng([params.seed, 0xB0D7]))
    clouds = []
    for f in range(n_frames):
        pts = _pose(params, tpl, f)
        if params.noise_sigma > 0:
            jitter = np.random.default_rng([params.seed, f]).standard_normal(pts.shape)
            pts = pts + params.noise_sigma * jitter
        clouds.append(PointCloud(pts, f))
    return clouds


# -- benchmark suite ----------------------------------------------------------


@dataclass(frozen=True)
class SequenceSpec:
    sequence_id: str
    subject: int
    split: str  # train | validation | test
    mode: str
    params: GaitParams
    n_frames: int

    @property
    def label(self) -> int:
        return 0 if self.mode == "normal" else 1

    @property
    def seed(self) -> int:
        return self.params.seed


@dataclass(frozen=True)
class BenchmarkConfig:
    n_train_subjects: int = 6
    n_validation_subjects: int = 1
    n_test_subjects: int = 4
    train_frames: int = 400
    test_frames: int = 240
    validation_frames: int = 120
    points_per_frame: int = 6000
    noise_sigma: float = 0.01
    modes: tuple[str, ...] = GAIT_MODES
    seed: int = 2024
    cycle_length: int | None = None  # None draws one per subject


    def __post_init__(self):
        if min(self.n_train_subjects, self.n_test_subjects) < 1:
            raise InvalidParams("need at least one train and one test subject")
        unknown = set(self.modes) - set(GAIT_MODES)
        if unknown or "normal" not in self.modes:
            raise InvalidParams(f"modes must include 'normal' and be drawn from {GAIT_MODES}")
        if self.cycle_length is not None and self.cycle_length < 4:
            raise InvalidParams(f"cycle_length must be >= 4, got {self.cycle_length}")
        if min(self.train_frames, self.test_frames, self.validation_frames, self.points_per_frame) < 1:
            raise InvalidParams("frame and point counts must be positive")


def subject_params(subject: int, cfg: BenchmarkConfig) -> GaitParams:
    """Per-subject body and gait variation."""
    rng = np.random.default_rng([cfg.seed, subject])
    amp = rng.uniform(0.35, 0.5)
    points = int(cfg.points_per_frame * rng.uniform(0.8, 1.2))
    cycle = int(rng.integers(22, 31))  # drawn even when overridden so later draws do not shift
    return GaitParams(
        points_per_frame=points,
        cycle_length=cycle if cfg.cycle_length is None else cfg.cycle_length,
        height=rng.uniform(1.55, 1.9),
        width_scale=rng.uniform(0.85, 1.2),
        leg_amplitude=(amp, amp),
        arm_amplitude=rng.uniform(0.2, 0.4),
        bob=rng.uniform(0.01, 0.03),
        yaw=rng.uniform(-0.05, 0.05),
        phase0=rng.uniform(0, 2 * np.pi),
        noise_sigma=cfg.noise_sigma,
        seed=0,
    )


def default_benchmark(cfg: BenchmarkConfig | None = None) -> list[SequenceSpec]:
    """Subject-disjoint train / validation / test suite.

    Training subjects contribute one normal sequence each; validation and
    test subjects walk every configured mode.
    """
    cfg = cfg or BenchmarkConfig()
    specs = []
    subject = 0
    splits = (("train", cfg.n_train_subjects), ("validation", cfg.n_validation_subjects), ("test", cfg.n_test_subjects))
    for split, count in splits:
        for _ in range(count):
            base = subject_params(subject, cfg)
            modes = ("normal",) if split == "train" else cfg.modes
            n_frames = {"train": cfg.train_frames, "validation": cfg.validation_frames, "test": cfg.test_frames}[split]
            for mode in modes:
                seed = int(np.random.default_rng([cfg.seed, subject, GAIT_MODES.index(mode)]).integers(2**31))
                params = replace(with_mode(base, mode), seed=seed)
                specs.append(SequenceSpec(f"s{subject:02d}_{mode}", subject, split, mode, params, n_frames))
            subject += 1
    return specs


MANIFEST_FIELDS = ("sequence_id", "label", "mode", "seed", "subject", "split", "n_frames")


def write_manifest(path, specs, comments=()) -> None:
    """CSV of :data:`MANIFEST_FIELDS`, preceded by ``# comment`` lines."""
    with open(path, "w", newline="") as fh:
        for line in comments:
            fh.write(f"# {line}\n")
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(MANIFEST_FIELDS)
        for s in specs:
            writer.writerow([s.sequence_id, "normal" if s.label == 0 else "abnormal", s.mode, s.seed, s.subject, s.split, s.n_frames])


@dataclass
class ManifestRow:
    sequence_id: str
    label: int
    mode: str
    seed: int
    subject: int = -1
    split: str = "test"
    n_frames: int = 0
    extra: dict = field(default_factory=dict)


def read_manifest(path) -> list[ManifestRow]:
    rows = []
    with open(path, newline="") as fh:
        for rec in csv.DictReader(row for row in fh if not row.startswith("#")):
            rows.append(ManifestRow(
                rec["sequence_id"],
                0 if rec["label"] == "normal" else 1,
                rec["mode"],
                int(rec["seed"]),
                int(rec.get("subject", -1) or -1),
                rec.get("split", "test") or "test",
                int(rec.get("n_frames", 0) or 0),
            ))
    return rows


def manifest_digest(specs) -> str:
    h = hashlib.sha256()
    for s in specs:
        h.update(repr((s.sequence_id, s.split, s.mode, asdict(s.params), s.n_frames)).encode())
    return h.hexdigest()


def write_sequence(directory, spec: SequenceSpec) -> int:
    """Write one ``.xyz`` file per frame plus ``frames.txt`` listing them in order."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    names = []
    for cloud in generate_sequence(spec.params, spec.n_frames):
        name = f"frame_{cloud.frame_index:05d}.xyz"
        write_point_cloud(directory / name, cloud)
        names.append(name)
    write_sequence_manifest(directory / "frames.txt", names)
    return len(names)
