"""Dice segmentation metrics, per structure and global."""

from dataclasses import dataclass

import numpy as np

from .dataset import LV, MYO, RV

STRUCTURES = {"LV": LV, "RV": RV, "MYO": MYO}


class MetricsError(ValueError):
    pass


@dataclass
class DiceReport:
    per_structure: dict[str, dict[str, float]]  # {"LV": {"avg": ..., "median": ...}, ...}
    global_avg: float
    dataset_tag: str
    model_tag: str

    def to_dict(self) -> dict:
        return {
            "per_structure": self.per_structure,
            "global_avg": self.global_avg,
            "dataset_tag": self.dataset_tag,
            "model_tag": self.model_tag,
        }


def dice(pred_mask: np.ndarray, true_mask: np.ndarray, structure: str | int) -> float:
    """Dice overlap as a percentage for one structure label.

    Both masks empty for the structure counts as perfect agreement (100);
    exactly one empty counts as 0.
    """
    if pred_mask.shape != true_mask.shape:
        raise MetricsError(f"shape mismatch {pred_mask.shape} vs {true_mask.shape}")
    label = STRUCTURES[structure] if isinstance(structure, str) else int(structure)
    if label not in STRUCTURES.values():
        raise MetricsError(f"unknown structure label {structure!r}")
    a = pred_mask == label
    b = true_mask == label
    na, nb = int(a.sum()), int(b.sum())
    if na == 0 and nb == 0:
        return 100.0
    inter = int((a & b).sum())
    return 100.0 * 2 * inter / (na + nb)


def dice_report(
    pairs, dataset_tag: str = "", model_tag: str = "", skip_both_empty: bool = False
) -> DiceReport:
    """Per-structure average and median Dice over slice pairs.

    ``skip_both_empty`` drops slices where a structure is absent from both
    masks instead of counting them as 100.
    """
    pairs = list(pairs)
    if not pairs:
        raise MetricsError("empty pair list")
    per_structure = {}
    for name, label in STRUCTURES.items():
        values = []
        for pred, true in pairs:
            if skip_both_empty and not (pred == label).any() and not (true == label).any():
                continue
            values.append(dice(pred, true, label))
        if not values:
            values = [100.0]
        per_structure[name] = {
            "avg": float(np.mean(values)),
            "median": float(np.median(values)),
        }
    global_avg = float(np.mean([v["avg"] for v in per_structure.values()]))
    return DiceReport(per_structure, global_avg, dataset_tag, model_tag)
