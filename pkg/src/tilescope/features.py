"""Interest-point detection, description, and matching for drift estimation.

Detection is a scale-normalized determinant-of-Hessian blob search over a
small scale pyramid; each surviving point gets a gradient-orientation patch
descriptor (4×4 cells × 8 angle bins, no rotation invariance, since tiles
only translate).  Matching is nearest-descriptor with a ratio test.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import ndimage

DEFAULT_SIGMAS = (1.6, 2.2627, 3.2, 4.5255)
PATCH_RADIUS = 8  # descriptor window half-size, px
DESCRIPTOR_BINS = 8
DESCRIPTOR_CELLS = 4


@dataclass(frozen=True)
class Keypoint:
    x: float
    y: float
    scale: float
    strength: float


def _hessian_det_stack(img: np.ndarray, sigmas: tuple[float, ...]) -> np.ndarray:
    """Scale-normalized det(Hessian) response at each pyramid scale."""
    responses = np.empty((len(sigmas),) + img.shape, dtype=np.float64)
    for k, s in enumerate(sigmas):
        lxx = ndimage.gaussian_filter(img, s, order=(0, 2), mode="nearest")
        lyy = ndimage.gaussian_filter(img, s, order=(2, 0), mode="nearest")
        lxy = ndimage.gaussian_filter(img, s, order=(1, 1), mode="nearest")
        responses[k] = (s**4) * (lxx * lyy - lxy * lxy)
    return responses


def _refine_axis(vals: tuple[float, float, float]) -> float:
    a, b, c = vals
    denom = a - 2 * b + c
    if denom < -1e-12:
        return float(np.clip(0.5 * (a - c) / denom, -0.5, 0.5))
    return 0.0


def detect_keypoints(
    img: np.ndarray,
    max_points: int = 100,
    sigmas: tuple[float, ...] = DEFAULT_SIGMAS,
    threshold: float = 1e-4,
) -> list[Keypoint]:
    """Strongest blob responses, refined to sub-pixel along each image axis.

    The response threshold is relative to the image's own peak response, so
    detection adapts to contrast; a margin keeps descriptor windows inside.
    """
    field = np.asarray(img, dtype=np.float64)
    span = field.max() - field.min()
    if span <= 0:
        return []  # no contrast, no features
    field = (field - field.min()) / span
    stack = _hessian_det_stack(field, sigmas)
    footprint_max = ndimage.maximum_filter(stack, size=3, mode="nearest")
    peak = stack.max()
    if peak <= 0:
        return []
    is_peak = (stack == footprint_max) & (stack > threshold * peak)

    margin = PATCH_RADIUS + 1
    is_peak[:, :margin, :] = False
    is_peak[:, -margin:, :] = False
    is_peak[:, :, :margin] = False
    is_peak[:, :, -margin:] = False

    ks, ys, xs = np.nonzero(is_peak)
    if len(ks) == 0:
        return []
    strengths = stack[ks, ys, xs]
    order = np.argsort(strengths)[::-1][:max_points]
    points = []
    for idx in order:
        k, y, x = int(ks[idx]), int(ys[idx]), int(xs[idx])
        r = stack[k]
        dy = _refine_axis((r[y - 1, x], r[y, x], r[y + 1, x]))
        dx = _refine_axis((r[y, x - 1], r[y, x], r[y, x + 1]))
        points.append(Keypoint(x + dx, y + dy, sigmas[k], float(strengths[idx])))
    return points


def describe_keypoints(img: np.ndarray, points: list[Keypoint]) -> np.ndarray:
    """Gradient-orientation histograms over a 4×4 cell grid around each point.

    Returns an (n, 128) array of L2-normalized descriptors.
    """
    field = np.asarray(img, dtype=np.float64)
    gy, gx = np.gradient(field)
    mag = np.hypot(gx, gy)
    ang = np.arctan2(gy, gx)  # [-pi, pi)
    bins = np.floor((ang + np.pi) / (2 * np.pi) * DESCRIPTOR_BINS).astype(int) % DESCRIPTOR_BINS

    n_cells, r = DESCRIPTOR_CELLS, PATCH_RADIUS
    cell_px = (2 * r) // n_cells
    descs = np.zeros((len(points), n_cells * n_cells * DESCRIPTOR_BINS), dtype=np.float64)
    for i, kp in enumerate(points):
        cy, cx = int(round(kp.y)), int(round(kp.x))
        m = mag[cy - r : cy + r, cx - r : cx + r]
        b = bins[cy - r : cy + r, cx - r : cx + r]
        d = descs[i].reshape(n_cells, n_cells, DESCRIPTOR_BINS)
        for row in range(n_cells):
            for col in range(n_cells):
                mm = m[row * cell_px : (row + 1) * cell_px, col * cell_px : (col + 1) * cell_px]
                bb = b[row * cell_px : (row + 1) * cell_px, col * cell_px : (col + 1) * cell_px]
                d[row, col] = np.bincount(bb.ravel(), weights=mm.ravel(), minlength=DESCRIPTOR_BINS)
        norm = np.linalg.norm(descs[i])
        if norm > 1e-12:
            descs[i] /= norm
            # damp dominant gradients, as is conventional for robustness
            np.clip(descs[i], 0.0, 0.3, out=descs[i])
            descs[i] /= np.linalg.norm(descs[i]) + 1e-12
    return descs


def match_descriptors(
    desc_a: np.ndarray, desc_b: np.ndarray, ratio: float = 0.8
) -> list[tuple[int, int]]:
    """Nearest-neighbor matches from a to b passing Lowe's ratio test."""
    if len(desc_a) == 0 or len(desc_b) < 2:
        return []
    # squared euclidean distances without forming explicit difference tensors
    d2 = (
        np.sum(desc_a**2, axis=1)[:, None]
        + np.sum(desc_b**2, axis=1)[None, :]
        - 2.0 * desc_a @ desc_b.T
    )
    np.maximum(d2, 0.0, out=d2)
    nearest = np.argsort(d2, axis=1)[:, :2]
    matches = []
    for i, (j0, j1) in enumerate(nearest):
        if d2[i, j0] <= (ratio**2) * d2[i, j1]:
            matches.append((i, int(j0)))
    return matches


@dataclass(frozen=True)
class FrameFeatures:
    """Detected keypoints plus descriptors for one image, reusable across pairs."""

    points: list[Keypoint]
    descriptors: np.ndarray


def extract_features(img: np.ndarray, max_points: int = 100) -> FrameFeatures:
    pts = detect_keypoints(img, max_points=max_points)
    return FrameFeatures(pts, describe_keypoints(img, pts))
