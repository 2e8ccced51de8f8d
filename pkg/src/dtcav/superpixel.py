"""SLIC superpixels on pixel intensity, and network-sized patch rendering.

The SLIC distance combines intensity and spatial proximity:

    D^2 = (dI)^2 + (m / S)^2 * (dr^2 + dc^2)

with S the grid interval sqrt(H*W / n_segments) and m the compactness.
Centers start on a regular grid, perturbed to the lowest-gradient pixel in
their 3x3 neighborhood, and are refined by windowed Lloyd iterations.
Connectivity is enforced afterwards: fragments below a minimum size (and the
smallest components while more than n_segments remain) are merged into the
neighboring segment with the longest shared boundary.
"""

import math
from dataclasses import dataclass, field, replace

import numpy as np
from scipy import ndimage

from . import _kernels


class SuperpixelError(ValueError):
    pass


@dataclass(frozen=True)
class SlicParams:
    n_segments: int = 5
    compactness: float = 10.0
    max_iters: int = 10
    seed: int = 0
    resolutions: tuple[int, ...] = (5,)

    def __post_init__(self):
        if self.n_segments < 1 or self.max_iters < 1:
            raise SuperpixelError("n_segments and max_iters must be >= 1")
        if not self.resolutions:
            raise SuperpixelError("resolutions must be non-empty")


@dataclass
class PatchSource:
    patient_id: str
    slice_index: int
    phase: str
    pathology: str

    @property
    def record_id(self) -> str:
        return f"{self.patient_id}_{self.slice_index:03d}_{self.phase}"


@dataclass
class SuperpixelPatch:
    source: PatchSource
    resolution: int
    segment_id: int
    membership: np.ndarray  # bool grid over the crop
    rendered: np.ndarray  # target_size x target_size floats
    fill_value: float


def _init_centers(image: np.ndarray, k: int) -> np.ndarray:
    """Regular-grid centers perturbed to the lowest-gradient 3x3 neighbor."""
    H, W = image.shape
    n_rows = max(1, round(math.sqrt(k * H / W)))
    n_cols = math.ceil(k / n_rows)
    cells = []
    for i in range(n_rows):
        for j in range(n_cols):
            cells.append(((i + 0.5) * H / n_rows, (j + 0.5) * W / n_cols))
    cells = cells[:k]

    # gradient magnitude with clamped central differences
    up = np.roll(image, 1, axis=0)
    down = np.roll(image, -1, axis=0)
    left = np.roll(image, 1, axis=1)
    right = np.roll(image, -1, axis=1)
    grad = (down - up) ** 2 + (right - left) ** 2
    grad[0, :] = grad[-1, :] = grad[:, 0] = grad[:, -1] = np.inf if H > 2 and W > 2 else 0.0

    centers = np.empty((k, 3))
    for ci, (r, c) in enumerate(cells):
        r = min(H - 1, max(0, int(r)))
        c = min(W - 1, max(0, int(c)))
        best = (np.inf, r, c)
        for rr in range(max(0, r - 1), min(H, r + 2)):
            for cc in range(max(0, c - 1), min(W, c + 2)):
                g = grad[rr, cc]
                if g < best[0]:
                    best = (g, rr, cc)
        _, rr, cc = best
        centers[ci] = (image[rr, cc], float(rr), float(cc))
    return centers


def _boundary_counts(comp: np.ndarray, target: int) -> dict[int, int]:
    """Shared-boundary pixel counts between component `target` and neighbors."""
    counts: dict[int, int] = {}
    mask = comp == target
    for axis in (0, 1):
        for shift in (1, -1):
            neigh = np.roll(comp, shift, axis=axis)
            edge = np.ones_like(mask)
            if axis == 0:
                if shift == 1:
                    edge[0, :] = False
                else:
                    edge[-1, :] = False
            else:
                if shift == 1:
                    edge[:, 0] = False
                else:
                    edge[:, -1] = False
            sel = mask & edge & (neigh != target)
            for v, n in zip(*np.unique(neigh[sel], return_counts=True)):
                counts[int(v)] = counts.get(int(v), 0) + int(n)
    return counts


def _enforce_connectivity(labels: np.ndarray, n_segments: int) -> np.ndarray:
    """Split labels into 4-connected components and merge small/excess ones."""
    H, W = labels.shape
    structure = np.array([[0, 1, 0], [1, 1, 1], [0, 1, 0]])
    comp = np.full((H, W), -1, dtype=np.int64)
    next_id = 0
    for v in np.unique(labels):
        cc, n = ndimage.label(labels == v, structure=structure)
        for c in range(1, n + 1):
            comp[cc == c] = next_id
            next_id += 1

    min_size = (H * W / n_segments) / 4.0
    while True:
        ids, sizes = np.unique(comp, return_counts=True)
        if len(ids) == 1:
            break
        order = np.argsort(sizes, kind="stable")
        smallest_id = int(ids[order[0]])
        smallest_size = int(sizes[order[0]])
        if smallest_size >= min_size and len(ids) <= n_segments:
            break
        neigh = _boundary_counts(comp, smallest_id)
        # dominant neighbor: longest shared boundary, ties to lower id
        best = min(neigh.items(), key=lambda kv: (-kv[1], kv[0]))[0]
        comp[comp == smallest_id] = best

    # relabel 0..n-1 in order of first appearance (row-major)
    ids, first = np.unique(comp, return_index=True)
    lut = np.empty(int(ids.max()) + 1, dtype=np.int64)
    lut[ids[np.argsort(first, kind="stable")]] = np.arange(len(ids))
    return lut[comp]


def slic(image: np.ndarray, params: SlicParams) -> np.ndarray:
    """Segment an intensity image into at most n_segments superpixels.

    Returns an integer label grid partitioning the image; every segment is
    4-connected and labels run 0..n_final-1 with n_final <= n_segments.
    """
    H, W = image.shape
    k = params.n_segments
    if k > H * W:
        raise SuperpixelError(f"n_segments={k} exceeds pixel count {H * W}")
    if k == 1:
        return np.zeros((H, W), dtype=np.int64)

    S = math.sqrt(H * W / k)
    ratio = (params.compactness / S) ** 2
    span = int(2 * S)
    centers = _init_centers(image, k)

    rows = np.arange(H, dtype=np.float64)
    cols = np.arange(W, dtype=np.float64)
    labels = None
    for _ in range(params.max_iters):
        labels, _ = _kernels.slic_assign(image, centers, span, ratio)
        # pixels outside every window: nearest center by full distance
        if (labels < 0).any():
            miss = np.argwhere(labels < 0)
            for r, c in miss:
                d = (image[r, c] - centers[:, 0]) ** 2 + ratio * (
                    (r - centers[:, 1]) ** 2 + (c - centers[:, 2]) ** 2
                )
                labels[r, c] = int(np.argmin(d))
        counts = np.bincount(labels.ravel(), minlength=k)
        sums_i = np.bincount(labels.ravel(), weights=image.ravel(), minlength=k)
        sums_r = np.bincount(labels.ravel(), weights=np.broadcast_to(rows[:, None], (H, W)).ravel(), minlength=k)
        sums_c = np.bincount(labels.ravel(), weights=np.broadcast_to(cols[None, :], (H, W)).ravel(), minlength=k)
        nonzero = counts > 0
        new_centers = centers.copy()
        new_centers[nonzero, 0] = sums_i[nonzero] / counts[nonzero]
        new_centers[nonzero, 1] = sums_r[nonzero] / counts[nonzero]
        new_centers[nonzero, 2] = sums_c[nonzero] / counts[nonzero]
        if np.array_equal(new_centers, centers):
            break
        centers = new_centers

    return _enforce_connectivity(labels, k)


def resize_bilinear(image: np.ndarray, size: int) -> np.ndarray:
    """Corner-aligned bilinear resample to a square size x size grid."""
    H, W = image.shape
    r = np.linspace(0.0, H - 1.0, size)
    c = np.linspace(0.0, W - 1.0, size)
    coords = np.stack(np.meshgrid(r, c, indexing="ij"))
    return ndimage.map_coordinates(image.astype(np.float64), coords, order=1, mode="nearest")


def extract_patches(record, params: SlicParams, target_size: int = 348) -> list[SuperpixelPatch]:
    """Fragment a cropped slice into superpixel patches at each resolution.

    Non-member pixels are replaced by the crop's mean intensity before
    bilinear resampling to the network input size.
    """
    image = record.image
    if image.shape[0] < 2 or image.shape[1] < 2:
        raise SuperpixelError(f"crop {image.shape} too small to fragment")
    fill = float(image.mean())
    source = PatchSource(record.patient_id, record.slice_index, record.phase, record.pathology)
    patches = []
    for resolution in params.resolutions:
        labels = slic(image, replace(params, n_segments=resolution))
        for seg in range(int(labels.max()) + 1):
            membership = labels == seg
            masked = np.where(membership, image, fill)
            patches.append(
                SuperpixelPatch(
                    source=source,
                    resolution=resolution,
                    segment_id=seg,
                    membership=membership,
                    rendered=resize_bilinear(masked, target_size),
                    fill_value=fill,
                )
            )
    return patches
