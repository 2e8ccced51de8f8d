"""Manifest-backed slice dataset for training and export.

Reads the same manifest JSON + NPY contract the analysis engine consumes:
top-level ``version`` / ``label_encoding`` / ``records[]``, each record with
``patient_id``, ``slice_index``, ``phase``, ``pathology``, ``split``,
``image_path``, ``mask_path``, ``pixel_spacing_mm``. Images are normalized
per slice to [0,1]; masks are remapped to {0: bg, 1: RV, 2: MYO, 3: LV}.
"""

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch
import torch.nn.functional as F

CANONICAL_ENCODING = {"bg": 0, "RV": 1, "MYO": 2, "LV": 3}


class DataError(ValueError):
    pass


@dataclass
class Slice:
    record_id: str
    patient_id: str
    pathology: str
    split: str
    image: np.ndarray  # float32 in [0,1]
    mask: np.ndarray  # uint8 canonical labels


def load_slices(manifest_path) -> list[Slice]:
    manifest_path = Path(manifest_path)
    if not manifest_path.is_file():
        raise DataError(f"manifest not found: {manifest_path}")
    doc = json.loads(manifest_path.read_text())
    encoding = doc.get("label_encoding", CANONICAL_ENCODING)
    remap = {int(v): CANONICAL_ENCODING[k] for k, v in encoding.items()}
    base = manifest_path.parent
    slices = []
    for rec in doc.get("records", []):
        image = np.load(base / rec["image_path"]).astype(np.float32)
        mask = np.load(base / rec["mask_path"])
        if image.shape != mask.shape or image.ndim != 2:
            raise DataError(f"{rec['patient_id']}: image/mask shape mismatch")
        lo, hi = float(image.min()), float(image.max())
        image = (image - lo) / (hi - lo) if hi > lo else np.zeros_like(image)
        canon = np.zeros(mask.shape, dtype=np.uint8)
        for src, dst in remap.items():
            canon[mask == src] = dst
        record_id = f"{rec['patient_id']}_{int(rec['slice_index']):03d}_{rec['phase']}"
        slices.append(
            Slice(
                record_id=record_id,
                patient_id=str(rec["patient_id"]),
                pathology=rec["pathology"],
                split=rec["split"],
                image=image,
                mask=canon,
            )
        )
    return slices


def to_tensors(slices: list[Slice], input_size: int) -> tuple[torch.Tensor, torch.Tensor]:
    """Stack slices into (B,1,S,S) images and (B,S,S) integer masks, resized
    to the network input size (bilinear for images, nearest for masks)."""
    if not slices:
        raise DataError("no slices to convert")
    imgs, masks = [], []
    for s in slices:
        img = torch.from_numpy(s.image)[None, None]
        mask = torch.from_numpy(s.mask.astype(np.int64))[None, None].float()
        if img.shape[-2:] != (input_size, input_size):
            img = F.interpolate(img, (input_size, input_size), mode="bilinear", align_corners=False)
            mask = F.interpolate(mask, (input_size, input_size), mode="nearest")
        imgs.append(img[0])
        masks.append(mask[0, 0].long())
    return torch.stack(imgs), torch.stack(masks)


def write_manifest(root, records: list[dict]) -> Path:
    """Write a manifest document for records already saved under ``root``."""
    root = Path(root)
    path = root / "manifest.json"
    path.write_text(
        json.dumps(
            {"version": 1, "label_encoding": CANONICAL_ENCODING, "records": records},
            indent=2,
        )
    )
    return path
