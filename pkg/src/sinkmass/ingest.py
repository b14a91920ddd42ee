"""Parse sequence-metadata files and silhouette rasters into a Dataset.

File formats (the imaging device's native output is proprietary; users
export to this schema):

* Frame CSV: header exactly ``camera_id,frame_index,top,bottom,left,right,area_px``,
  LF line endings, decimal point ``.``.
* Manifest: JSON array of objects with keys ``specimen_id``, ``taxon``,
  ``dry_mass_ug`` (nullable), ``metadata_csv``, ``raster_dir`` (nullable).
  Paths are resolved relative to the manifest file.
* Rasters: binary PGM (P5), maxval 255, one square image per frame named
  ``<camera_id>_<frame_index>.pgm``.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import (
    DimensionMismatch,
    EmptyFile,
    InputError,
    MalformedRow,
    NonSquareRaster,
    PadTooLarge,
    RasterLargerThanTarget,
    UnsupportedFormat,
)
from .records import CAMERAS, Dataset, FrameMeta, SpecimenRecord

FRAME_CSV_HEADER = "camera_id,frame_index,top,bottom,left,right,area_px"


@dataclass(frozen=True)
class ManifestEntry:
    specimen_id: str
    taxon: str
    dry_mass_ug: float | None
    metadata_csv: Path
    raster_dir: Path | None = None


@dataclass(frozen=True)
class Raster:
    """Square 8-bit grayscale image; ``pixels`` has shape (height, width)."""

    height: int
    width: int
    pixels: np.ndarray


def parse_frame_csv(payload: bytes) -> list[FrameMeta]:
    """Decode a frame-metadata CSV into FrameMeta rows, preserving order.

    Raises MalformedRow(line_no) on a bad header, wrong arity, or a
    non-numeric field; EmptyFile when there are no data rows. Gaps in
    frame_index are permitted here (ordering is a dataset-level invariant).
    """
    try:
        text = payload.decode("utf-8")
    except UnicodeDecodeError as exc:
        raise MalformedRow(1, f"not UTF-8: {exc}") from None
    lines = text.split("\n")
    if lines and lines[-1] == "":
        lines.pop()
    if not lines or lines[0].strip() != FRAME_CSV_HEADER:
        raise MalformedRow(1, f"expected header {FRAME_CSV_HEADER!r}")
    frames: list[FrameMeta] = []
    for offset, line in enumerate(lines[1:], start=2):
        parts = line.split(",")
        if len(parts) != 7:
            raise MalformedRow(offset, f"expected 7 fields, got {len(parts)}")
        camera_id = parts[0].strip()
        if camera_id not in CAMERAS:
            raise MalformedRow(offset, f"unknown camera_id {camera_id!r}")
        try:
            frame_index = int(parts[1])
            top, bottom, left, right = (int(p) for p in parts[2:6])
            area_px = float(parts[6])
        except ValueError as exc:
            raise MalformedRow(offset, str(exc)) from None
        if frame_index < 0:
            raise MalformedRow(offset, f"negative frame_index {frame_index}")
        frames.append(FrameMeta(camera_id, frame_index, top, bottom, left, right, area_px))
    if not frames:
        raise EmptyFile("no data rows")
    return frames


def serialize_frame_csv(frames: list[FrameMeta] | tuple[FrameMeta, ...]) -> bytes:
    """Inverse of parse_frame_csv; the round trip is the identity."""
    lines = [FRAME_CSV_HEADER]
    for f in frames:
        lines.append(
            f"{f.camera_id},{f.frame_index},{f.top},{f.bottom},{f.left},{f.right},{f.area_px!r}"
        )
    return ("\n".join(lines) + "\n").encode("utf-8")


def _pgm_tokens(payload: bytes, count: int) -> tuple[list[bytes], int]:
    """Read ``count`` whitespace-separated header tokens, skipping comments.

    Returns the tokens and the offset of the first byte after the single
    whitespace character that terminates the last token.
    """
    tokens: list[bytes] = []
    i = 0
    n = len(payload)
    while len(tokens) < count:
        while i < n and payload[i : i + 1].isspace():
            i += 1
        if i < n and payload[i : i + 1] == b"#":
            while i < n and payload[i : i + 1] != b"\n":
                i += 1
            continue
        start = i
        while i < n and not payload[i : i + 1].isspace():
            i += 1
        if start == i:
            raise UnsupportedFormat("truncated PGM header")
        tokens.append(payload[start:i])
        i += 1  # consume the single whitespace terminating the token
    return tokens, i


def load_raster(payload: bytes) -> Raster:
    """Decode a binary PGM (P5, maxval 255) into a Raster.

    Non-P5 magic or a maxval other than 255 raises UnsupportedFormat;
    non-square images raise NonSquareRaster (square inputs keep scale
    information intact when resized downstream).
    """
    if len(payload) < 2 or payload[:2] != b"P5":
        raise UnsupportedFormat("not a binary PGM (P5) payload")
    tokens, offset = _pgm_tokens(payload, 4)
    try:
        width, height, maxval = int(tokens[1]), int(tokens[2]), int(tokens[3])
    except ValueError:
        raise UnsupportedFormat("non-numeric PGM header field") from None
    if maxval != 255:
        raise UnsupportedFormat(f"maxval {maxval} not supported, expected 255")
    if width <= 0 or height <= 0:
        raise UnsupportedFormat(f"bad dimensions {width}x{height}")
    if height != width:
        raise NonSquareRaster(f"{width}x{height} raster; square input required")
    body = payload[offset : offset + height * width]
    if len(body) != height * width:
        raise UnsupportedFormat(
            f"payload holds {len(body)} pixels, header promises {height * width}"
        )
    pixels = np.frombuffer(body, dtype=np.uint8).reshape(height, width).copy()
    return Raster(height, width, pixels)


def save_raster(raster: Raster) -> bytes:
    header = f"P5\n{raster.width} {raster.height}\n255\n".encode("ascii")
    return header + raster.pixels.astype(np.uint8).tobytes()


def pad_mirror(raster: Raster, pad: int) -> Raster:
    """Grow a raster by ``pad`` pixels on all four sides with inclusive
    reflection (the edge row/column is duplicated).

    The interior pixel multiset is preserved and the operation is
    deterministic; pad=0 returns the input unchanged.
    """
    if pad < 0:
        raise PadTooLarge(f"negative pad {pad}")
    if pad == 0:
        return raster
    if pad >= min(raster.height, raster.width):
        raise PadTooLarge(
            f"pad {pad} too large for {raster.height}x{raster.width} raster"
        )
    pixels = np.pad(raster.pixels, pad, mode="symmetric")
    return Raster(raster.height + 2 * pad, raster.width + 2 * pad, pixels)


def load_manifest(path: Path | str) -> list[ManifestEntry]:
    """Read a manifest JSON array; paths become absolute relative to it."""
    path = Path(path)
    try:
        raw = json.loads(path.read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise InputError(f"cannot read manifest {path}: {exc}") from None
    if not isinstance(raw, list):
        raise InputError("manifest must be a JSON array")
    base = path.parent
    entries = []
    for i, obj in enumerate(raw):
        try:
            mass = obj["dry_mass_ug"]
            entries.append(
                ManifestEntry(
                    specimen_id=str(obj["specimen_id"]),
                    taxon=str(obj["taxon"]),
                    dry_mass_ug=None if mass is None else float(mass),
                    metadata_csv=base / obj["metadata_csv"],
                    raster_dir=None if obj.get("raster_dir") is None else base / obj["raster_dir"],
                )
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise InputError(f"manifest entry {i}: {exc}") from None
    return entries


def _pad_to_target(raster: Raster, target: tuple[int, int], ref: str) -> Raster:
    th, tw = target
    if raster.height > th or raster.width > tw:
        raise RasterLargerThanTarget(
            f"{ref}: raster {raster.height}x{raster.width} exceeds target {th}x{tw}"
        )
    if raster.height == th and raster.width == tw:
        return raster
    dh, dw = th - raster.height, tw - raster.width
    if dh != dw or dh % 2 != 0:
        raise DimensionMismatch(
            f"{ref}: cannot mirror-pad {raster.height}x{raster.width} to {th}x{tw} symmetrically"
        )
    return pad_mirror(raster, dh // 2)


def assemble_dataset(
    manifest: list[ManifestEntry],
    name: str = "dataset",
    raster_dims: tuple[int, int] | None = None,
) -> Dataset:
    """Build an in-memory Dataset from manifest entries.

    Rasters smaller than ``raster_dims`` are mirror-padded up to it on load;
    larger ones are rejected. When ``raster_dims`` is None it is inferred as
    the largest raster dimensions present. Parse errors are re-raised with
    the offending specimen_id attached.
    """
    specimens: list[SpecimenRecord] = []
    raster_store: dict[str, np.ndarray] = {}
    pending: list[tuple[str, Raster]] = []
    inferred: tuple[int, int] | None = None

    for entry in manifest:
        try:
            frames = parse_frame_csv(entry.metadata_csv.read_bytes())
        except OSError as exc:
            raise InputError(f"{entry.specimen_id}: cannot read {entry.metadata_csv}: {exc}") from None
        except InputError as exc:
            raise type(exc)(f"{entry.specimen_id}: {exc}") from None

        refs: tuple[str, ...] | None = None
        if entry.raster_dir is not None:
            ref_list = []
            for frame in frames:
                fname = f"{frame.camera_id}_{frame.frame_index}.pgm"
                fpath = entry.raster_dir / fname
                try:
                    raster = load_raster(fpath.read_bytes())
                except OSError as exc:
                    raise InputError(f"{entry.specimen_id}: cannot read {fpath}: {exc}") from None
                except InputError as exc:
                    raise type(exc)(f"{entry.specimen_id}/{fname}: {exc}") from None
                ref = f"{entry.specimen_id}/{fname}"
                ref_list.append(ref)
                pending.append((ref, raster))
                if inferred is None or raster.height > inferred[0]:
                    inferred = (raster.height, raster.width)
            refs = tuple(ref_list)
        specimens.append(
            SpecimenRecord(
                specimen_id=entry.specimen_id,
                taxon=entry.taxon,
                dry_mass_ug=entry.dry_mass_ug,
                frames=tuple(frames),
                raster_refs=refs,
            )
        )

    target = raster_dims if raster_dims is not None else inferred
    for ref, raster in pending:
        padded = _pad_to_target(raster, target, ref)
        raster_store[ref] = padded.pixels
    return Dataset(
        name=name,
        specimens=tuple(specimens),
        raster_dims=target,
        rasters=raster_store if raster_store else None,
    )
