"""Skeleton topology, motion sequences, and the preprocessing transforms.

Coordinates are stored frame-major with x,y,z contiguous per joint, so a
pose row has width 3*J and column 3*j+c is coordinate c of joint j.
Units are millimeters throughout.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ShapeError

UPPER = "upper"
LOWER = "lower"


def _readonly(a: np.ndarray) -> np.ndarray:
    out = np.ascontiguousarray(np.asarray(a, dtype=np.float64))
    out.flags.writeable = False
    return out


@dataclass(frozen=True)
class Skeleton:
    """Kinematic tree plus a two-way body-part partition of the joints.

    parent[j] is the index of joint j's parent; the root is its own parent.
    part_of[j] is "upper" or "lower"; together the two sets cover all joints.
    """

    parent: tuple[int, ...]
    part_of: tuple[str, ...]

    def __post_init__(self):
        j = len(self.parent)
        if j < 1 or len(self.part_of) != j:
            raise ValueError("parent and part_of must be non-empty and equal length")
        roots = [i for i, p in enumerate(self.parent) if p == i]
        if roots != [0]:
            raise ValueError("skeleton must have exactly one root, at joint 0")
        for i, p in enumerate(self.parent):
            if not 0 <= p < j:
                raise ValueError(f"parent index {p} of joint {i} out of range")
            # walk to the root; a cycle would loop longer than J steps
            seen, cur = 0, i
            while cur != 0:
                cur = self.parent[cur]
                seen += 1
                if seen > j:
                    raise ValueError(f"parent links of joint {i} do not reach the root")
        for i, part in enumerate(self.part_of):
            if part not in (UPPER, LOWER):
                raise ValueError(f"joint {i} has unknown part label {part!r}")

    @property
    def joint_count(self) -> int:
        return len(self.parent)

    @property
    def coord_count(self) -> int:
        return 3 * len(self.parent)

    def joints_of(self, part: str) -> tuple[int, ...]:
        return tuple(i for i, p in enumerate(self.part_of) if p == part)


@dataclass(frozen=True)
class MotionSequence:
    """A pose trajectory: (frames, 3*J) millimeter coordinates at a frame rate."""

    data: np.ndarray
    fps: float
    label: str = ""

    def __post_init__(self):
        data = _readonly(self.data)
        if data.ndim != 2 or data.shape[0] < 2:
            raise ShapeError(f"motion data must be 2-D with >= 2 frames, got {data.shape}")
        if data.shape[1] % 3 != 0 or data.shape[1] == 0:
            raise ShapeError(f"pose width {data.shape[1]} is not a positive multiple of 3")
        if not np.all(np.isfinite(data)):
            raise ValueError("motion data contains non-finite values")
        if self.fps <= 0:
            raise ValueError(f"fps must be positive, got {self.fps}")
        object.__setattr__(self, "data", data)

    @property
    def frames(self) -> int:
        return self.data.shape[0]

    @property
    def joint_count(self) -> int:
        return self.data.shape[1] // 3

    def with_data(self, data: np.ndarray) -> "MotionSequence":
        return MotionSequence(data=data, fps=self.fps, label=self.label)


@dataclass(frozen=True)
class PartLayout:
    """Column indices of the upper and lower body parts.

    The two index sets are disjoint, sorted, and together cover 0..3J-1.
    """

    upper_dims: tuple[int, ...]
    lower_dims: tuple[int, ...]

    def __post_init__(self):
        total = len(self.upper_dims) + len(self.lower_dims)
        merged = sorted(self.upper_dims + self.lower_dims)
        if merged != list(range(total)):
            raise ValueError("upper_dims and lower_dims must partition 0..3J-1")
        if list(self.upper_dims) != sorted(self.upper_dims):
            raise ValueError("upper_dims must be sorted")
        if list(self.lower_dims) != sorted(self.lower_dims):
            raise ValueError("lower_dims must be sorted")

    @classmethod
    def from_skeleton(cls, skeleton: Skeleton) -> "PartLayout":
        upper, lower = [], []
        for j, part in enumerate(skeleton.part_of):
            dims = (3 * j, 3 * j + 1, 3 * j + 2)
            (upper if part == UPPER else lower).extend(dims)
        return cls(upper_dims=tuple(upper), lower_dims=tuple(lower))

    @property
    def upper_size(self) -> int:
        return len(self.upper_dims)

    @property
    def lower_size(self) -> int:
        return len(self.lower_dims)

    @property
    def size(self) -> int:
        return self.upper_size + self.lower_size


def remove_global_translation(seq: MotionSequence, skeleton: Skeleton) -> MotionSequence:
    """Subtract the root joint's coordinates from every joint, per frame.

    The root joint becomes the origin in every frame; all inter-joint
    differences are preserved exactly. Idempotent.
    """
    if seq.data.shape[1] != skeleton.coord_count:
        raise ShapeError(
            f"sequence width {seq.data.shape[1]} != skeleton coords {skeleton.coord_count}"
        )
    root = 0  # skeleton invariant pins the root at joint 0
    root_xyz = seq.data[:, 3 * root : 3 * root + 3]
    j = skeleton.joint_count
    centered = seq.data - np.tile(root_xyz, (1, j))
    return seq.with_data(centered)


def downsample(seq: MotionSequence, factor: int) -> MotionSequence:
    """Keep every factor-th frame starting at frame 0; fps is divided by factor."""
    if factor < 1:
        raise ValueError(f"downsample factor must be >= 1, got {factor}")
    if factor > seq.frames:
        raise ValueError(f"factor {factor} exceeds frame count {seq.frames}")
    return MotionSequence(data=seq.data[::factor], fps=seq.fps / factor, label=seq.label)


def split_parts(seq: MotionSequence, layout: PartLayout) -> tuple[np.ndarray, np.ndarray]:
    """Select the upper- and lower-part columns as two matrices."""
    if seq.data.shape[1] != layout.size:
        raise ShapeError(f"sequence width {seq.data.shape[1]} != layout size {layout.size}")
    return seq.data[:, list(layout.upper_dims)], seq.data[:, list(layout.lower_dims)]


def merge_parts(upper: np.ndarray, lower: np.ndarray, layout: PartLayout) -> np.ndarray:
    """Scatter part columns back to their original positions (inverse of split)."""
    upper = np.asarray(upper, dtype=np.float64)
    lower = np.asarray(lower, dtype=np.float64)
    if upper.ndim != 2 or lower.ndim != 2 or upper.shape[0] != lower.shape[0]:
        raise ShapeError(f"part row counts differ: {upper.shape} vs {lower.shape}")
    if upper.shape[1] != layout.upper_size or lower.shape[1] != layout.lower_size:
        raise ShapeError(
            f"part widths {upper.shape[1]}/{lower.shape[1]} do not match layout "
            f"{layout.upper_size}/{layout.lower_size}"
        )
    out = np.empty((upper.shape[0], layout.size), dtype=np.float64)
    out[:, list(layout.upper_dims)] = upper
    out[:, list(layout.lower_dims)] = lower
    return out
