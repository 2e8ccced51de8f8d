"""Slice-level dataset: manifest loading, ROI cropping, composition statistics.

A manifest is a single JSON document pointing at NPY arrays:

    {
      "version": 1,
      "label_encoding": {"bg": 0, "RV": 1, "MYO": 2, "LV": 3},
      "records": [
        {"patient_id": "p001", "slice_index": 0, "phase": "ED",
         "pathology": "NOR", "split": "train",
         "image_path": "imgs/p001_00.npy", "mask_path": "masks/p001_00.npy",
         "pixel_spacing_mm": [1.5, 1.5]},
        ...
      ]
    }

Images are 2D float arrays (normalized per slice to [0,1] on load), masks are
2D uint8 label grids remapped on load to the canonical encoding
{0: bg, 1: RV, 2: MYO, 3: LV}.
"""

import json
import math
from dataclasses import dataclass, replace
from enum import Enum
from pathlib import Path

import numpy as np

CANONICAL_ENCODING = {"bg": 0, "RV": 1, "MYO": 2, "LV": 3}
BG, RV, MYO, LV = 0, 1, 2, 3

PATHOLOGIES = ("NOR", "MINF", "DCM", "HCM", "RV")
PHASES = ("ED", "ES")
SPLITS = ("train", "dev")


class DatasetError(ValueError):
    """Raised for malformed manifests or records violating invariants."""


class PresenceSubgroup(str, Enum):
    NONE = "NONE"
    ALL = "ALL"
    MYO = "MYO"
    RV = "RV"
    RV_MYO = "RV_MYO"
    LV_MYO = "LV_MYO"


_SUBGROUP_BY_LABELS = {
    frozenset(): PresenceSubgroup.NONE,
    frozenset({LV, RV, MYO}): PresenceSubgroup.ALL,
    frozenset({MYO}): PresenceSubgroup.MYO,
    frozenset({RV}): PresenceSubgroup.RV,
    frozenset({RV, MYO}): PresenceSubgroup.RV_MYO,
    frozenset({LV, MYO}): PresenceSubgroup.LV_MYO,
}


@dataclass(frozen=True)
class RoiBox:
    """Inclusive pixel bounds of a region of interest."""

    row_min: int
    row_max: int
    col_min: int
    col_max: int

    def union(self, other: "RoiBox") -> "RoiBox":
        return RoiBox(
            min(self.row_min, other.row_min),
            max(self.row_max, other.row_max),
            min(self.col_min, other.col_min),
            max(self.col_max, other.col_max),
        )


@dataclass
class SliceRecord:
    patient_id: str
    slice_index: int
    phase: str
    pathology: str
    split: str
    image: np.ndarray
    mask: np.ndarray
    pixel_spacing: tuple[float, float]

    @property
    def record_id(self) -> str:
        return f"{self.patient_id}_{self.slice_index:03d}_{self.phase}"


def _normalize_intensity(image: np.ndarray) -> np.ndarray:
    image = image.astype(np.float64)
    lo = float(image.min())
    hi = float(image.max())
    if hi > lo:
        return (image - lo) / (hi - lo)
    return np.zeros_like(image)


def load_manifest(path) -> list[SliceRecord]:
    """Load and validate every record of a manifest file."""
    path = Path(path)
    if not path.is_file():
        raise DatasetError(f"manifest not found: {path}")
    doc = json.loads(path.read_text())
    encoding = doc.get("label_encoding", CANONICAL_ENCODING)
    unknown = set(encoding) - set(CANONICAL_ENCODING)
    if unknown:
        raise DatasetError(f"unknown labels in encoding: {sorted(unknown)}")
    remap = {int(v): CANONICAL_ENCODING[k] for k, v in encoding.items()}

    base = path.parent
    records = []
    for i, rec in enumerate(doc.get("records", [])):
        where = f"record {i} ({rec.get('patient_id', '?')})"
        if rec["pathology"] not in PATHOLOGIES:
            raise DatasetError(f"{where}: unknown pathology {rec['pathology']!r}")
        if rec["phase"] not in PHASES:
            raise DatasetError(f"{where}: unknown phase {rec['phase']!r}")
        if rec["split"] not in SPLITS:
            raise DatasetError(f"{where}: unknown split {rec['split']!r}")
        image = np.load(base / rec["image_path"])
        mask = np.load(base / rec["mask_path"])
        if image.ndim != 2 or mask.ndim != 2:
            raise DatasetError(f"{where}: arrays must be 2D")
        if image.shape != mask.shape:
            raise DatasetError(
                f"{where}: image {image.shape} and mask {mask.shape} differ"
            )
        bad = set(np.unique(mask)) - set(remap)
        if bad:
            raise DatasetError(f"{where}: mask values {sorted(bad)} not in encoding")
        canon = np.zeros(mask.shape, dtype=np.uint8)
        for src, dst in remap.items():
            canon[mask == src] = dst
        records.append(
            SliceRecord(
                patient_id=str(rec["patient_id"]),
                slice_index=int(rec["slice_index"]),
                phase=rec["phase"],
                pathology=rec["pathology"],
                split=rec["split"],
                image=_normalize_intensity(image),
                mask=canon,
                pixel_spacing=tuple(float(x) for x in rec["pixel_spacing_mm"]),
            )
        )
    return records


def mask_bbox(mask: np.ndarray) -> RoiBox | None:
    """Tight bounding box of non-background pixels, or None if empty."""
    rows = np.any(mask > 0, axis=1)
    cols = np.any(mask > 0, axis=0)
    if not rows.any():
        return None
    r = np.where(rows)[0]
    c = np.where(cols)[0]
    return RoiBox(int(r[0]), int(r[-1]), int(c[0]), int(c[-1]))


def _pad_and_square(box: RoiBox, margin_frac: float, shape) -> RoiBox:
    H, W = shape
    h = box.row_max - box.row_min + 1
    w = box.col_max - box.col_min + 1
    pad = math.ceil(margin_frac * max(h, w))
    r0, r1 = box.row_min - pad, box.row_max + pad
    c0, c1 = box.col_min - pad, box.col_max + pad
    # expand the shorter axis symmetrically to make the box square
    h, w = r1 - r0 + 1, c1 - c0 + 1
    if h < w:
        extra = w - h
        r0 -= extra // 2
        r1 += extra - extra // 2
    elif w < h:
        extra = h - w
        c0 -= extra // 2
        c1 += extra - extra // 2
    # clip at borders; the box may stop being square here, by design
    return RoiBox(max(0, r0), min(H - 1, r1), max(0, c0), min(W - 1, c1))


def roi_crop(
    record: SliceRecord,
    margin_frac: float = 0.2,
    fallback: RoiBox | None = None,
) -> tuple[SliceRecord, RoiBox]:
    """Crop a slice to its mask-derived region of interest.

    The box is the tight bounding box of non-background pixels, padded on all
    sides by ceil(margin_frac * max(height, width)), expanded on the shorter
    axis to a square, and clipped to the image. An empty mask uses the given
    fallback box unchanged.
    """
    if not 0.0 <= margin_frac <= 1.0:
        raise DatasetError(f"margin_frac must be in [0,1], got {margin_frac}")
    box = mask_bbox(record.mask)
    if box is None:
        if fallback is None:
            raise DatasetError(
                f"{record.record_id}: empty mask and no fallback box available"
            )
        box = fallback
    else:
        box = _pad_and_square(box, margin_frac, record.mask.shape)
    cropped = replace(
        record,
        image=record.image[box.row_min : box.row_max + 1, box.col_min : box.col_max + 1].copy(),
        mask=record.mask[box.row_min : box.row_max + 1, box.col_min : box.col_max + 1].copy(),
    )
    return cropped, box


def compute_fallback_boxes(
    records: list[SliceRecord], margin_frac: float = 0.2
) -> dict[str, RoiBox]:
    """Per-patient union of the ROI boxes of that patient's non-empty slices."""
    boxes: dict[str, RoiBox] = {}
    for rec in records:
        box = mask_bbox(rec.mask)
        if box is None:
            continue
        box = _pad_and_square(box, margin_frac, rec.mask.shape)
        prev = boxes.get(rec.patient_id)
        boxes[rec.patient_id] = box if prev is None else prev.union(box)
    return boxes


def heart_pixel_ratio(records: list[SliceRecord], phase: str | None = None) -> float:
    """Fraction of pixels belonging to any cardiac structure, uncropped."""
    selected = [r for r in records if phase is None or r.phase == phase]
    if not selected:
        raise DatasetError("no records after phase filtering")
    fg = sum(int((r.mask > 0).sum()) for r in selected)
    total = sum(r.mask.size for r in selected)
    return fg / total


def presence_subgroup(mask: np.ndarray) -> PresenceSubgroup:
    present = frozenset(int(v) for v in np.unique(mask) if v != BG)
    try:
        return _SUBGROUP_BY_LABELS[present]
    except KeyError:
        raise DatasetError(f"label combination {sorted(present)} has no subgroup")


def presence_distribution(records: list[SliceRecord]) -> dict[PresenceSubgroup, float]:
    """Fraction of slices per presence subgroup; fractions sum to 1."""
    if not records:
        raise DatasetError("empty record list")
    counts = {sg: 0 for sg in PresenceSubgroup}
    for rec in records:
        counts[presence_subgroup(rec.mask)] += 1
    n = len(records)
    return {sg: c / n for sg, c in counts.items()}
