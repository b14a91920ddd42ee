"""Per-specimen predictors computed from sequence metadata.

Sinking speed is the displacement of the crop's top border between the first
and last frame of one camera's sequence divided by the frame count, in
pixels per frame. Border positions decrease as the specimen descends, so
descent yields a positive speed; negative speeds (floating specimens) are
retained because they still carry density information.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

from .errors import NonPositiveMass, TooFewFrames
from .records import FrameMeta, SpecimenRecord

# Camera used for the speed formula and the image-count convention. If it
# has fewer than two frames we fall back to the other camera; if both fail,
# speed is absent and the specimen remains usable by area-only models.
REFERENCE_CAMERA = "A"
FALLBACK_CAMERA = "B"


@dataclass(frozen=True)
class SpecimenFeatures:
    mean_area_px: float
    image_count: int
    sinking_speed: float | None
    pseudo_mass: float

    def metadata_value(self, name: str, frame: FrameMeta | None = None) -> float:
        if name == "frame_area":
            if frame is None:
                raise ValueError("frame_area needs a frame")
            return frame.area_px
        if name == "mean_area":
            return self.mean_area_px
        if name == "sinking_speed":
            if self.sinking_speed is None:
                raise ValueError("sinking_speed absent")
            return self.sinking_speed
        raise ValueError(f"unknown metadata input {name!r}")


def sinking_speed(frames: list[FrameMeta] | tuple[FrameMeta, ...]) -> float:
    """Speed in pixels per frame over one camera's sequence.

    Computed as (top border of first frame - top border of last frame) / n.
    Invariant under a uniform shift of all positions; scales linearly with a
    uniform scale of them.
    """
    n = len(frames)
    if n < 2:
        raise TooFewFrames(n)
    return (frames[0].top - frames[-1].top) / n


def mean_area(frames: list[FrameMeta] | tuple[FrameMeta, ...]) -> float:
    """Arithmetic mean of area_px over all frames (both cameras)."""
    if not frames:
        raise ValueError("mean_area needs at least one frame")
    return sum(f.area_px for f in frames) / len(frames)


def log_mass(y: float) -> float:
    if not y > 0:
        raise NonPositiveMass(f"mass must be positive, got {y}")
    return math.log(y)


def exp_mass(y_log: float) -> float:
    return math.exp(y_log)


def _reference_frames(record: SpecimenRecord) -> tuple[FrameMeta, ...]:
    primary = record.frames_for(REFERENCE_CAMERA)
    if len(primary) >= 2:
        return primary
    fallback = record.frames_for(FALLBACK_CAMERA)
    if len(fallback) >= 2:
        return fallback
    return primary if primary else fallback


def compute_features(record: SpecimenRecord) -> SpecimenFeatures:
    """Derive SpecimenFeatures from one record.

    ``image_count`` and the speed denominator use the reference camera's
    frame count; ``mean_area`` pools all frames from both cameras.
    ``pseudo_mass`` is exactly mean_area * image_count.
    """
    ref = _reference_frames(record)
    speed = sinking_speed(ref) if len(ref) >= 2 else None
    area = mean_area(record.frames)
    count = len(ref)
    return SpecimenFeatures(
        mean_area_px=area,
        image_count=count,
        sinking_speed=speed,
        pseudo_mass=area * count,
    )
