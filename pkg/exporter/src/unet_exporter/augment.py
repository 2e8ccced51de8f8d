"""Training-time augmentations: elastic deformation, rotation, scaling.

Each transform fires independently with the configured probability. Elastic
deformation displaces a coarse 3x3 control grid by gaussian offsets with
standard deviation equal to 10% of the image size, upsampled bilinearly to a
dense displacement field. Images are sampled bilinearly, masks with nearest
neighbor so labels stay crisp.
"""

import math

import torch
import torch.nn.functional as F


def _identity_grid(size: int, device) -> torch.Tensor:
    ys, xs = torch.meshgrid(
        torch.linspace(-1, 1, size, device=device),
        torch.linspace(-1, 1, size, device=device),
        indexing="ij",
    )
    return torch.stack([xs, ys], dim=-1)[None]  # (1, S, S, 2) in grid_sample order


def _sample(img: torch.Tensor, mask: torch.Tensor, grid: torch.Tensor):
    warped = F.grid_sample(img[None], grid, mode="bilinear", padding_mode="border", align_corners=True)[0]
    m = mask[None, None].float()
    warped_mask = F.grid_sample(m, grid, mode="nearest", padding_mode="border", align_corners=True)[0, 0].long()
    return warped, warped_mask


def elastic(img: torch.Tensor, mask: torch.Tensor, gen: torch.Generator):
    size = img.shape[-1]
    sigma = 0.1 * size  # pixels
    coarse = torch.randn(1, 2, 3, 3, generator=gen, device=img.device) * (2.0 * sigma / size)
    field = F.interpolate(coarse, (size, size), mode="bilinear", align_corners=True)
    grid = _identity_grid(size, img.device) + field.permute(0, 2, 3, 1)
    return _sample(img, mask, grid)


def rotation(img: torch.Tensor, mask: torch.Tensor, gen: torch.Generator):
    angle = (torch.rand(1, generator=gen).item() * 2 - 1) * math.pi
    c, s = math.cos(angle), math.sin(angle)
    theta = torch.tensor([[c, -s, 0.0], [s, c, 0.0]], device=img.device)[None]
    grid = F.affine_grid(theta, (1, 1, img.shape[-2], img.shape[-1]), align_corners=True)
    return _sample(img, mask, grid)


def scaling(img: torch.Tensor, mask: torch.Tensor, gen: torch.Generator, lo=0.75, hi=1.25):
    scale = lo + torch.rand(1, generator=gen).item() * (hi - lo)
    theta = torch.tensor([[1.0 / scale, 0.0, 0.0], [0.0, 1.0 / scale, 0.0]], device=img.device)[None]
    grid = F.affine_grid(theta, (1, 1, img.shape[-2], img.shape[-1]), align_corners=True)
    return _sample(img, mask, grid)


def augment_batch(
    imgs: torch.Tensor,
    masks: torch.Tensor,
    gen: torch.Generator,
    probability: float = 0.1,
    scale_range=(0.75, 1.25),
):
    """Apply each augmentation with the given probability, per example."""
    out_i, out_m = [], []
    for img, mask in zip(imgs, masks):
        if torch.rand(1, generator=gen).item() < probability:
            img, mask = elastic(img, mask, gen)
        if torch.rand(1, generator=gen).item() < probability:
            img, mask = rotation(img, mask, gen)
        if torch.rand(1, generator=gen).item() < probability:
            img, mask = scaling(img, mask, gen, *scale_range)
        out_i.append(img)
        out_m.append(mask)
    return torch.stack(out_i), torch.stack(out_m)
