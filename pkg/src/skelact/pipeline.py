"""Sequence preprocessing and training-time augmentation.

All transforms take and return SkeletonSequence values and never mutate
their input. Randomized transforms draw from a generator passed by the
caller, in a documented fixed order, so a run is reproducible from its
seed alone.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigurationError, WindowError
from .keypoints import PersonSkeleton
from .sequence import SkeletonSequence

# Slot distance assigned when two non-empty skeletons share no visible
# joint. Large enough to lose against any plausible pixel distance.
MISMATCH_COST = 1e6


def select_persons(
    persons: list[PersonSkeleton], slots: int, joint_count: int | None = None
) -> np.ndarray:
    """Keep the ``slots`` most confident people of one frame.

    Ranking is by mean confidence over visible joints, descending; the
    sort is stable, so equally confident people keep their detector order.
    Unused slots stay all-zero. Returns an array of shape
    ``(slots, V, 3)``.
    """
    if slots < 1:
        raise ConfigurationError("slots: must be at least 1")
    if joint_count is None:
        if not persons:
            raise ConfigurationError(
                "joint_count is required when the person list is empty"
            )
        joint_count = persons[0].joint_count
    out = np.zeros((slots, joint_count, 3))
    if not persons:
        return out
    scores = np.array([p.mean_confidence() for p in persons])
    order = np.argsort(-scores, kind="stable")
    for slot, index in enumerate(order[:slots]):
        person = persons[index]
        if person.joint_count != joint_count:
            raise ConfigurationError(
                f"person {index} has {person.joint_count} joints, expected "
                f"{joint_count}"
            )
        out[slot] = person.joints
    return out


def _slot_distance(a: np.ndarray, b: np.ndarray) -> float:
    """Distance between two (V, 3) skeletons for slot matching.

    Mean Euclidean distance over joints visible in both. Two empty
    skeletons match at distance zero; a pair with no commonly visible
    joint gets MISMATCH_COST.
    """
    visible_a = a[:, 2] > 0.0
    visible_b = b[:, 2] > 0.0
    common = visible_a & visible_b
    if common.any():
        deltas = a[common, :2] - b[common, :2]
        return float(np.sqrt((deltas ** 2).sum(axis=1)).mean())
    if not visible_a.any() and not visible_b.any():
        return 0.0
    return MISMATCH_COST


def track(seq: SkeletonSequence) -> SkeletonSequence:
    """Stabilize person-slot assignment over time.

    Each frame is matched against the most recent frame that had any
    visible joint: every slot permutation is scored by the summed slot
    distance to that reference and the cheapest one is applied. Ties keep
    the identity assignment (comparison is strict), so an already
    consistent sequence passes through unchanged. Frames with no visible
    joints are skipped as references. Cost is exact and exhaustive,
    factorial in the number of slots, which is fine for the usual one or
    two.
    """
    data = seq.data.copy()
    slots = seq.person_slots
    reference: np.ndarray | None = None
    permutations = list(itertools.permutations(range(slots)))
    for t in range(seq.frame_count):
        frame = data[t]
        if reference is not None and slots > 1:
            best = None
            best_cost = np.inf
            for perm in permutations:
                cost = sum(
                    _slot_distance(reference[s], frame[perm[s]])
                    for s in range(slots)
                )
                if cost < best_cost:
                    best_cost = cost
                    best = perm
            frame = frame[list(best)]
            data[t] = frame
        if bool((frame[:, :, 2] > 0.0).any()):
            reference = frame
    return seq.replace_data(data)


def normalize_centralize(
    seq: SkeletonSequence, image_size: tuple[int, int] | None = None
) -> SkeletonSequence:
    """Scale pixel coordinates into [0, 1] and center them on the frame.

    ``x`` is divided by the image width and ``y`` by the height, then 0.5
    is subtracted from both, so coordinates inside the frame land in
    [-0.5, 0.5]. Only visible joints are touched; missing joints stay
    exactly (0, 0, 0). Confidences are unchanged.
    """
    if image_size is None:
        image_size = seq.image_size
    width, height = image_size
    if width <= 0 or height <= 0:
        raise ConfigurationError(
            f"image_size: needs positive width and height, got {image_size}"
        )
    data = seq.data.copy()
    visible = data[..., 2] > 0.0
    data[..., 0] = np.where(visible, data[..., 0] / width - 0.5, data[..., 0])
    data[..., 1] = np.where(visible, data[..., 1] / height - 0.5, data[..., 1])
    return seq.replace_data(data)


def pad_sequence(seq: SkeletonSequence, target_frames: int) -> SkeletonSequence:
    """Bring the sequence to exactly target_frames frames.

    Shorter sequences get all-zero frames appended; longer ones lose their
    tail.
    """
    if target_frames < 1:
        raise ConfigurationError(
            f"target_frames: must be positive, got {target_frames}"
        )
    if target_frames == seq.frame_count:
        return seq.copy()
    if target_frames < seq.frame_count:
        return seq.replace_data(seq.data[:target_frames].copy())
    tail = np.zeros(
        (target_frames - seq.frame_count,) + seq.data.shape[1:]
    )
    return seq.replace_data(np.concatenate([seq.data, tail], axis=0))


PAD_POSITIONS = ("tail", "head")


def random_frame_window(
    seq: SkeletonSequence,
    window: int,
    rng: np.random.Generator,
    pad_position: str = "tail",
) -> SkeletonSequence:
    """Keep a random contiguous window of ``window`` frames, zero the rest.

    The start frame is uniform over all valid positions and the output
    keeps the input's length: the window is moved to the front and the
    remainder zero-padded (or to the back with ``pad_position="head"``).
    """
    total = seq.frame_count
    if pad_position not in PAD_POSITIONS:
        raise ConfigurationError(
            f"pad_position: expected one of {PAD_POSITIONS}, got {pad_position!r}"
        )
    if not 1 <= window <= total:
        raise WindowError(
            f"window: need 1 <= window <= {total} frames, got {window}"
        )
    start = int(rng.integers(0, total - window + 1))
    data = np.zeros_like(seq.data)
    if pad_position == "tail":
        data[:window] = seq.data[start:start + window]
    else:
        data[total - window:] = seq.data[start:start + window]
    return seq.replace_data(data)


@dataclass
class MoveParams:
    """Bounds for the simulated camera movement.

    The rotation angle is drawn from [-rotation, rotation] radians, the
    scale factor from [scale_min, scale_max] (one factor for both axes),
    and each translation component from [-translation, translation] in
    normalized coordinates. Parameters are drawn at ``anchors`` evenly
    spaced frames and linearly interpolated in between, which makes the
    camera drift smoothly instead of jittering.
    """

    rotation: float = np.pi / 18.0
    scale_min: float = 0.9
    scale_max: float = 1.1
    translation: float = 0.1
    anchors: int = 3

    def validate(self) -> None:
        if self.rotation < 0.0:
            raise ConfigurationError("move.rotation: must be non-negative")
        if not 0.0 < self.scale_min <= self.scale_max:
            raise ConfigurationError(
                "move.scale: needs 0 < scale_min <= scale_max"
            )
        if self.translation < 0.0:
            raise ConfigurationError("move.translation: must be non-negative")
        if self.anchors < 1:
            raise ConfigurationError("move.anchors: must be at least 1")


def random_move(
    seq: SkeletonSequence, params: MoveParams, rng: np.random.Generator
) -> SkeletonSequence:
    """Apply a smoothly interpolated random rotation, scale and shift.

    Draw order is fixed: angles, then scales, then x shifts, then y
    shifts, each as one batch of ``anchors`` values. Visible joints are
    mapped through ``p' = s R p + t``; missing joints stay exactly zero.
    With zero-width parameter ranges the transform is the identity bit for
    bit.
    """
    params.validate()
    anchors = params.anchors
    angles = rng.uniform(-params.rotation, params.rotation, anchors)
    scales = rng.uniform(params.scale_min, params.scale_max, anchors)
    shifts_x = rng.uniform(-params.translation, params.translation, anchors)
    shifts_y = rng.uniform(-params.translation, params.translation, anchors)

    total = seq.frame_count
    if anchors == 1 or total == 1:
        frame_angles = np.full(total, angles[0])
        frame_scales = np.full(total, scales[0])
        frame_sx = np.full(total, shifts_x[0])
        frame_sy = np.full(total, shifts_y[0])
    else:
        positions = np.linspace(0.0, max(total - 1, 0), anchors)
        frames = np.arange(total, dtype=np.float64)
        frame_angles = np.interp(frames, positions, angles)
        frame_scales = np.interp(frames, positions, scales)
        frame_sx = np.interp(frames, positions, shifts_x)
        frame_sy = np.interp(frames, positions, shifts_y)

    cos = np.cos(frame_angles)
    sin = np.sin(frame_angles)
    # Per-frame linear map, scale folded into the rotation matrix.
    matrices = np.empty((total, 2, 2))
    matrices[:, 0, 0] = frame_scales * cos
    matrices[:, 0, 1] = -frame_scales * sin
    matrices[:, 1, 0] = frame_scales * sin
    matrices[:, 1, 1] = frame_scales * cos
    shifts = np.stack([frame_sx, frame_sy], axis=1)

    data = seq.data.copy()
    xy = data[..., :2]
    moved = np.einsum("tij,tmvj->tmvi", matrices, xy) + shifts[:, None, None, :]
    visible = data[..., 2:3] > 0.0
    data[..., :2] = np.where(visible, moved, xy)
    return seq.replace_data(data)


def subsample_frames(
    seq: SkeletonSequence, drop_rate: float, rng: np.random.Generator
) -> SkeletonSequence:
    """Drop each frame independently with probability drop_rate.

    Survivors are packed to the front in order; the tail is filled with
    empty frames so the length never changes. A drop rate of zero keeps
    the sequence identical.
    """
    if not 0.0 <= drop_rate < 1.0:
        raise ConfigurationError(
            f"drop_rate: must lie in [0, 1), got {drop_rate}"
        )
    keep = rng.random(seq.frame_count) >= drop_rate
    data = np.zeros_like(seq.data)
    survivors = seq.data[keep]
    data[:survivors.shape[0]] = survivors
    return seq.replace_data(data)


@dataclass
class AugmentConfig:
    """Which augmentations to apply during training, with their settings."""

    window: bool = False
    window_size: int = 150
    window_pad_position: str = "tail"
    move: bool = False
    move_params: MoveParams = field(default_factory=MoveParams)
    subsample: bool = False
    drop_rate: float = 0.0

    def enabled(self) -> bool:
        return self.window or self.move or self.subsample

    def validate(self) -> None:
        if self.window_size < 1:
            raise ConfigurationError("augment.window_size: must be positive")
        if self.window_pad_position not in PAD_POSITIONS:
            raise ConfigurationError(
                "augment.window_pad_position: expected one of "
                f"{PAD_POSITIONS}, got {self.window_pad_position!r}"
            )
        self.move_params.validate()
        if not 0.0 <= self.drop_rate < 1.0:
            raise ConfigurationError(
                f"augment.drop_rate: must lie in [0, 1), got {self.drop_rate}"
            )


def split_rng(rng: np.random.Generator, count: int) -> list[np.random.Generator]:
    """Derive ``count`` independent child generators from one parent.

    One batch of seeds is drawn from the parent, so sibling streams never
    overlap and the derivation itself is reproducible.
    """
    seeds = rng.integers(0, 2 ** 63, size=count, dtype=np.uint64)
    return [np.random.default_rng(int(seed)) for seed in seeds]


def augment_combined(
    seq: SkeletonSequence,
    config: AugmentConfig,
    rng: np.random.Generator,
    training: bool = True,
) -> SkeletonSequence:
    """Apply the configured augmentations in their fixed order.

    Order is window cut, camera move, frame subsampling. Each stage owns
    one child generator derived from ``rng`` whether or not the stage is
    enabled, so enabling one stage never shifts the draws of another.
    Outside training, or with everything disabled, the input is returned
    unchanged (as a copy).
    """
    config.validate()
    if not training or not config.enabled():
        return seq.copy()
    window_rng, move_rng, subsample_rng = split_rng(rng, 3)
    out = seq
    if config.window:
        out = random_frame_window(
            out, config.window_size, window_rng,
            pad_position=config.window_pad_position,
        )
    if config.move:
        out = random_move(out, config.move_params, move_rng)
    if config.subsample:
        out = subsample_frames(out, config.drop_rate, subsample_rng)
    if out is seq:
        out = seq.copy()
    return out
