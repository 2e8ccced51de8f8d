"""Training loop for the segmentation U-Net."""

from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np
import torch
from torch import nn

from .augment import augment_batch
from .data import Slice, to_tensors
from .model import UNet


class TrainError(RuntimeError):
    pass


@dataclass
class TrainConfig:
    base_filters: int = 48
    depth: int = 4
    batch_size: int = 10
    epochs: int = 175
    input_size: int = 348
    n_classes: int = 4
    learning_rate: float = 1e-3
    augment: bool = True
    augment_probability: float = 0.1
    scale_range: tuple[float, float] = (0.75, 1.25)
    latent_mode: str = "pool"  # pool | flat
    seed: int = 0


def train(config: TrainConfig, slices: list[Slice], checkpoint_path, log=print) -> Path:
    """Train on the given slices and save a checkpoint.

    The checkpoint records the model weights, the config, and metadata naming
    the loss (cross-entropy) and optimizer (Adam). Non-finite loss aborts.
    """
    if not slices:
        raise TrainError("no training slices")
    if config.input_size % 2**config.depth:
        raise TrainError(
            f"input_size {config.input_size} not divisible by 2^depth={2**config.depth}"
        )
    torch.manual_seed(config.seed)
    model = UNet(
        n_classes=config.n_classes,
        base_filters=config.base_filters,
        depth=config.depth,
    )
    imgs, masks = to_tensors(slices, config.input_size)
    optimizer = torch.optim.Adam(model.parameters(), lr=config.learning_rate)
    loss_fn = nn.CrossEntropyLoss()
    gen = torch.Generator().manual_seed(config.seed)

    model.train()
    n = len(slices)
    for epoch in range(config.epochs):
        order = torch.randperm(n, generator=gen)
        total = 0.0
        for start in range(0, n, config.batch_size):
            idx = order[start : start + config.batch_size]
            bi, bm = imgs[idx], masks[idx]
            if config.augment:
                bi, bm = augment_batch(
                    bi, bm, gen, config.augment_probability, config.scale_range
                )
            optimizer.zero_grad()
            loss = loss_fn(model(bi), bm)
            if not torch.isfinite(loss):
                raise TrainError(f"training diverged at epoch {epoch}: loss={loss.item()}")
            loss.backward()
            optimizer.step()
            total += loss.item() * len(idx)
        if log and (epoch % 10 == 0 or epoch == config.epochs - 1):
            log(f"epoch {epoch + 1}/{config.epochs} loss {total / n:.4f}")

    checkpoint_path = Path(checkpoint_path)
    checkpoint_path.parent.mkdir(parents=True, exist_ok=True)
    torch.save(
        {
            "model_state": model.state_dict(),
            "config": asdict(config),
            "metadata": {"loss": "cross_entropy", "optimizer": "adam"},
        },
        checkpoint_path,
    )
    return checkpoint_path


def load_checkpoint(checkpoint_path) -> tuple[UNet, TrainConfig]:
    doc = torch.load(Path(checkpoint_path), map_location="cpu", weights_only=False)
    cfg_doc = dict(doc["config"])
    cfg_doc["scale_range"] = tuple(cfg_doc["scale_range"])
    config = TrainConfig(**cfg_doc)
    model = UNet(
        n_classes=config.n_classes,
        base_filters=config.base_filters,
        depth=config.depth,
    )
    model.load_state_dict(doc["model_state"])
    model.eval()
    return model, config


def training_dice(model: UNet, slices: list[Slice], input_size: int) -> float:
    """Mean foreground Dice (percent) of argmax predictions on the slices."""
    imgs, masks = to_tensors(slices, input_size)
    model.eval()
    with torch.no_grad():
        pred = model(imgs).argmax(dim=1)
    scores = []
    for label in (1, 2, 3):
        a = pred == label
        b = masks == label
        na, nb = int(a.sum()), int(b.sum())
        if na == 0 and nb == 0:
            scores.append(100.0)
        else:
            scores.append(100.0 * 2 * int((a & b).sum()) / (na + nb))
    return float(np.mean(scores))
