"""Convert an ACDC-style directory tree into the slice manifest format.

Expected layout (one directory per patient):

    <root>/patient001/Info.cfg              # "ED: 1", "ES: 12", "Group: DCM"
    <root>/patient001/patient001_frame01.nii.gz
    <root>/patient001/patient001_frame01_gt.nii.gz
    ...

Each labeled frame volume is split into 2D slices saved as NPY files plus a
manifest. Includes a minimal NIfTI-1 reader (gzip + numpy) so no medical
imaging dependency is required.
"""

import gzip
import struct
from pathlib import Path

import numpy as np

from .data import write_manifest

GROUP_TO_PATHOLOGY = {"NOR": "NOR", "MINF": "MINF", "DCM": "DCM", "HCM": "HCM", "RV": "RV"}
# ACDC ground truth: 0 bg, 1 RV, 2 MYO, 3 LV — already the canonical encoding
_DTYPES = {2: np.uint8, 4: np.int16, 8: np.int32, 16: np.float32, 64: np.float64}


class AcdcError(ValueError):
    pass


def read_nifti(path) -> tuple[np.ndarray, tuple[float, ...]]:
    """Read a .nii or .nii.gz volume; returns (array, voxel spacing).

    Supports the NIfTI-1 single-file layout with common scalar dtypes and the
    optional scl_slope/scl_inter intensity scaling.
    """
    path = Path(path)
    opener = gzip.open if path.suffix == ".gz" else open
    with opener(path, "rb") as f:
        raw = f.read()
    if len(raw) < 348 or struct.unpack_from("<i", raw, 0)[0] != 348:
        raise AcdcError(f"{path}: not a little-endian NIfTI-1 file")
    magic = raw[344:348]
    if magic not in (b"n+1\x00", b"ni1\x00"):
        raise AcdcError(f"{path}: bad NIfTI magic {magic!r}")
    dim = struct.unpack_from("<8h", raw, 40)
    ndim = dim[0]
    if not 1 <= ndim <= 7:
        raise AcdcError(f"{path}: bad ndim {ndim}")
    shape = dim[1 : 1 + ndim]
    datatype = struct.unpack_from("<h", raw, 70)[0]
    if datatype not in _DTYPES:
        raise AcdcError(f"{path}: unsupported datatype code {datatype}")
    pixdim = struct.unpack_from("<8f", raw, 76)
    vox_offset = int(struct.unpack_from("<f", raw, 108)[0])
    slope, inter = struct.unpack_from("<2f", raw, 112)
    count = int(np.prod(shape))
    data = np.frombuffer(raw, dtype=_DTYPES[datatype], count=count, offset=vox_offset)
    # NIfTI stores Fortran order: first axis fastest
    volume = data.reshape(shape[::-1]).transpose(range(ndim - 1, -1, -1))
    if slope not in (0.0, 1.0) or inter != 0.0:
        volume = volume * slope + inter
    return np.ascontiguousarray(volume), tuple(pixdim[1 : 1 + ndim])


def _parse_info(path) -> dict:
    info = {}
    for line in Path(path).read_text().splitlines():
        if ":" in line:
            key, value = line.split(":", 1)
            info[key.strip()] = value.strip()
    return info


def convert(root, out_dir, dev_fraction: float = 0.2) -> Path:
    """Convert every patient under ``root``; returns the manifest path."""
    root = Path(root)
    if not root.is_dir():
        raise AcdcError(f"no patient directories with Info.cfg under {root}")
    out_dir = Path(out_dir)
    (out_dir / "imgs").mkdir(parents=True, exist_ok=True)
    (out_dir / "masks").mkdir(parents=True, exist_ok=True)
    patients = sorted(p for p in root.iterdir() if p.is_dir() and (p / "Info.cfg").is_file())
    if not patients:
        raise AcdcError(f"no patient directories with Info.cfg under {root}")
    n_dev = int(round(dev_fraction * len(patients)))
    dev_ids = {p.name for p in patients[len(patients) - n_dev :]}

    records = []
    for pdir in patients:
        info = _parse_info(pdir / "Info.cfg")
        group = info.get("Group", "")
        if group not in GROUP_TO_PATHOLOGY:
            raise AcdcError(f"{pdir.name}: unknown Group {group!r}")
        pathology = GROUP_TO_PATHOLOGY[group]
        split = "dev" if pdir.name in dev_ids else "train"
        for phase in ("ED", "ES"):
            if phase not in info:
                raise AcdcError(f"{pdir.name}: missing {phase} frame in Info.cfg")
            frame = int(info[phase])
            img_path = pdir / f"{pdir.name}_frame{frame:02d}.nii.gz"
            gt_path = pdir / f"{pdir.name}_frame{frame:02d}_gt.nii.gz"
            if not img_path.is_file() or not gt_path.is_file():
                raise AcdcError(f"{pdir.name}: missing frame {frame:02d} volumes")
            volume, spacing = read_nifti(img_path)
            gt, _ = read_nifti(gt_path)
            if volume.shape != gt.shape:
                raise AcdcError(f"{pdir.name}: image/gt shape mismatch")
            for z in range(volume.shape[2]):
                slice_index = z if phase == "ED" else 1000 + z  # distinct per phase
                stem = f"{pdir.name}_{phase}_{z:02d}"
                img_rel = f"imgs/{stem}.npy"
                mask_rel = f"masks/{stem}.npy"
                np.save(out_dir / img_rel, volume[:, :, z].astype(np.float32))
                np.save(out_dir / mask_rel, gt[:, :, z].astype(np.uint8))
                records.append(
                    {
                        "patient_id": pdir.name,
                        "slice_index": slice_index,
                        "phase": phase,
                        "pathology": pathology,
                        "split": split,
                        "image_path": img_rel,
                        "mask_path": mask_rel,
                        "pixel_spacing_mm": [float(spacing[0]), float(spacing[1])],
                    }
                )
    return write_manifest(out_dir, records)
