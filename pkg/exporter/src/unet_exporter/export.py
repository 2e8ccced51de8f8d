"""Export middle-layer activations, gradients, and predicted masks.

Output contract (consumed by the analysis engine's file-backed adapter):

* ``activations.npy``   — (n, d) float32, one row per example
* ``gradients_<target>.npy`` — (n, d) float32, same row order
* ``index.json``        — ``{"examples": [example_id, ...]}`` row order
* ``predictions/<example_id>.npy`` — uint8 argmax masks

The gradient scalar for structure target k is the sum over all output pixels
of the pre-softmax logit of class k; FOREGROUND_SUM sums the three structure
classes. Gradients are taken with respect to the exported latent vector: for
the pooled latent this is the spatial sum of the gradient with respect to
the bottleneck map (perturbing the pooled vector perturbs every spatial
position of the map uniformly).
"""

import json
from pathlib import Path

import numpy as np
import torch

from .data import Slice, to_tensors
from .model import UNet, pool_latent
from .train import TrainConfig, load_checkpoint

STRUCTURE_CLASSES = {"RV": 1, "MYO": 2, "LV": 3}
TARGETS = ("LV", "RV", "MYO", "FOREGROUND_SUM")


class ExportError(RuntimeError):
    pass


def _target_scalar(logits: torch.Tensor, target: str) -> torch.Tensor:
    if target == "FOREGROUND_SUM":
        return sum(_target_scalar(logits, t) for t in STRUCTURE_CLASSES)
    if target not in STRUCTURE_CLASSES:
        raise ExportError(f"unknown target {target!r}")
    return logits[:, STRUCTURE_CLASSES[target]].sum(dim=(1, 2))


def compute_latents_and_gradients(
    model: UNet,
    imgs: torch.Tensor,
    targets=TARGETS,
    latent_mode: str = "pool",
):
    """Per-example latent vectors and per-target latent gradients.

    Returns (latents (n, d), {target: (n, d)}, predictions (n, H, W)).
    """
    model.eval()
    lat_rows, pred_rows = [], []
    grad_rows: dict[str, list] = {t: [] for t in targets}
    for i in range(imgs.shape[0]):
        x = imgs[i : i + 1]
        logits, mid = model(x, return_bottleneck=True)
        pred_rows.append(logits.argmax(dim=1)[0].to(torch.uint8))
        lat_rows.append(pool_latent(mid.detach(), latent_mode)[0])
        for t in targets:
            scalar = _target_scalar(logits, t).sum()
            (g,) = torch.autograd.grad(scalar, mid, retain_graph=True)
            if latent_mode == "pool":
                grad_rows[t].append(g.sum(dim=(2, 3))[0])
            else:
                grad_rows[t].append(g.flatten(1)[0])
    latents = torch.stack(lat_rows)
    grads = {t: torch.stack(rows) for t, rows in grad_rows.items()}
    return latents, grads, torch.stack(pred_rows)


def export(
    checkpoint_path,
    slices: list[Slice],
    out_dir,
    targets=TARGETS,
) -> Path:
    if not slices:
        raise ExportError("no slices to export")
    model, config = load_checkpoint(checkpoint_path)
    imgs, _ = to_tensors(slices, config.input_size)
    latents, grads, preds = compute_latents_and_gradients(
        model, imgs, targets, config.latent_mode
    )

    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    acts = latents.numpy().astype(np.float32)
    if not np.isfinite(acts).all():
        raise ExportError("non-finite activations")
    np.save(out_dir / "activations.npy", acts)
    for t in targets:
        g = grads[t].numpy().astype(np.float32)
        if g.shape != acts.shape or not np.isfinite(g).all():
            raise ExportError(f"bad gradient array for {t}")
        np.save(out_dir / f"gradients_{t}.npy", g)
    (out_dir / "index.json").write_text(
        json.dumps({"examples": [s.record_id for s in slices]}, indent=2)
    )
    pred_dir = out_dir / "predictions"
    pred_dir.mkdir(exist_ok=True)
    pred_index = {}
    for s, p in zip(slices, preds):
        rel = f"predictions/{s.record_id}.npy"
        np.save(out_dir / rel, p.numpy())
        pred_index[s.record_id] = rel
    (out_dir / "predictions.json").write_text(
        json.dumps({"predictions": pred_index, "model_tag": "unet_exporter"}, indent=2)
    )
    return out_dir
