"""Difference-of-Gaussians keypoints with 128-D gradient-histogram descriptors.

Follows Lowe's construction: per-octave Gaussian stacks, 3-D quadratic
refinement of DoG extrema, contrast and edge rejection, 36-bin orientation
histograms with parabolic peak interpolation, and 4x4x8 descriptors with
trilinear binning (clamped at 0.2 and renormalised).  The input image is
assumed to carry a blur of 0.5 px and is not upsampled.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass
from typing import Iterator, NamedTuple

import numpy as np
from scipy.ndimage import gaussian_filter, maximum_filter, minimum_filter
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components
from scipy.spatial import cKDTree

from .. import kernels
from ..imaging import GrayImage

ASSUMED_BLUR = 0.5
BORDER = 5
ORI_BINS = 36
ORI_PEAK_RATIO = 0.8
MIN_SIZE = 16


@dataclass(frozen=True)
class SiftParams:
    octaves: int = 4
    scales_per_octave: int = 3
    base_sigma: float = 1.6
    contrast_threshold: float = 0.04
    edge_threshold: float = 10.0
    ratio_threshold: float = 0.8

    def __post_init__(self):
        for name in ("octaves", "scales_per_octave", "base_sigma", "contrast_threshold", "edge_threshold"):
            if not getattr(self, name) > 0:
                raise ValueError(f"SiftParams.{name} must be positive")
        if not 0.0 < self.ratio_threshold < 1.0:
            raise ValueError("SiftParams.ratio_threshold must lie in (0, 1)")

    def to_dict(self) -> dict:
        return asdict(self)


class Keypoint(NamedTuple):
    x: float
    y: float
    scale: float
    orientation: float


@dataclass(eq=False)
class FeatureSet:
    """Keypoints as an (n, 4) array of x, y, scale, orientation plus (n, 128) descriptors."""

    keypoints: np.ndarray
    descriptors: np.ndarray
    octaves: np.ndarray | None = None

    def __post_init__(self):
        self.keypoints = np.asarray(self.keypoints, dtype=np.float64).reshape(-1, 4)
        self.descriptors = np.asarray(self.descriptors, dtype=np.float32).reshape(-1, 128)
        if len(self.keypoints) != len(self.descriptors):
            raise ValueError("keypoint and descriptor counts differ")
        if self.octaves is None:
            self.octaves = np.zeros(len(self.keypoints), dtype=np.int64)

    def __len__(self) -> int:
        return len(self.keypoints)

    def __iter__(self) -> Iterator[tuple[Keypoint, np.ndarray]]:
        for kp, desc in zip(self.keypoints, self.descriptors):
            yield Keypoint(*map(float, kp)), desc

    @property
    def xy(self) -> np.ndarray:
        return self.keypoints[:, :2]

    @classmethod
    def empty(cls) -> "FeatureSet":
        return cls(np.zeros((0, 4)), np.zeros((0, 128), dtype=np.float32))


def _gradients(stack: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    dx = np.zeros_like(stack)
    dy = np.zeros_like(stack)
    dx[:, :, 1:-1] = stack[:, :, 2:] - stack[:, :, :-2]
    dy[:, 1:-1, :] = stack[:, 2:, :] - stack[:, :-2, :]
    mag = np.hypot(dx, dy)
    ang = np.mod(np.arctan2(dy, dx), 2.0 * math.pi)
    return np.ascontiguousarray(mag), np.ascontiguousarray(ang)


def _orientation_peaks(hist: np.ndarray) -> list[list[float]]:
    # circular [1 4 6 4 1]/16 smoothing
    h = (6 * hist + 4 * (np.roll(hist, 1, axis=1) + np.roll(hist, -1, axis=1))
         + np.roll(hist, 2, axis=1) + np.roll(hist, -2, axis=1)) / 16.0
    left = np.roll(h, 1, axis=1)
    right = np.roll(h, -1, axis=1)
    peak = (h > left) & (h > right) & (h >= ORI_PEAK_RATIO * h.max(axis=1, keepdims=True))
    result = []
    for i in range(len(h)):
        angles = []
        for b in np.flatnonzero(peak[i]):
            l, c, r = left[i, b], h[i, b], right[i, b]
            denom = l - 2.0 * c + r
            offset = 0.5 * (l - r) / denom if denom != 0 else 0.0
            angles.append(((b + offset + 0.5) * 2.0 * math.pi / ORI_BINS) % (2.0 * math.pi))
        result.append(angles)
    return result


def _merge_duplicates(refined: np.ndarray, radius: float = 0.5) -> np.ndarray:
    """Indices of refined extrema left after merging those that converged onto one point.

    Symmetric plateaus (a blob centred between pixels) give several tied
    candidates that refine to the same sub-pixel extremum; the strongest is kept.
    """
    pairs = cKDTree(refined[:, :3]).query_pairs(radius, output_type="ndarray")
    if len(pairs) == 0:
        return np.arange(len(refined))
    graph = coo_matrix((np.ones(len(pairs)), (pairs[:, 0], pairs[:, 1])), shape=(len(refined),) * 2)
    _, label = connected_components(graph, directed=False)
    strength = np.abs(refined[:, 3])
    order = np.lexsort((np.arange(len(refined)), -strength, label))
    first = order[np.r_[True, label[order][1:] != label[order][:-1]]]
    return np.sort(first)


def _octave_features(gauss: np.ndarray, octave: int, p: SiftParams):
    s = p.scales_per_octave
    dog = np.ascontiguousarray(gauss[1:] - gauss[:-1])
    pre = 0.5 * p.contrast_threshold / s
    mx = maximum_filter(dog, size=3, mode="nearest")
    mn = minimum_filter(dog, size=3, mode="nearest")
    cand = ((dog == mx) & (dog > pre)) | ((dog == mn) & (dog < -pre))
    cand[0] = cand[-1] = False
    cand[:, :BORDER] = cand[:, -BORDER:] = False
    cand[:, :, :BORDER] = cand[:, :, -BORDER:] = False
    layers, ys, xs = (np.ascontiguousarray(a, dtype=np.int64) for a in np.nonzero(cand))
    if len(layers) == 0:
        return None
    refined, pos, ok = kernels.refine_extrema(dog, layers, ys, xs, s, p.contrast_threshold,
                                              p.edge_threshold, BORDER)
    refined, pos = refined[ok], pos[ok]
    if len(refined) == 0:
        return None
    keep = _merge_duplicates(refined)
    refined, pos = refined[keep], pos[keep]

    x_o, y_o, layer_f = refined[:, 0], refined[:, 1], refined[:, 2]
    sigma_o = p.base_sigma * 2.0 ** (layer_f / s)
    glayer = np.ascontiguousarray(pos[:, 0])
    mag, ang = _gradients(gauss)
    hist = kernels.orientation_histograms(mag, ang, glayer, np.ascontiguousarray(y_o),
                                          np.ascontiguousarray(x_o), np.ascontiguousarray(sigma_o), ORI_BINS)
    peaks = _orientation_peaks(np.asarray(hist))
    rep = np.array([len(a) for a in peaks])
    idx = np.repeat(np.arange(len(peaks)), rep)
    if len(idx) == 0:
        return None
    oris = np.array([a for angles in peaks for a in angles])
    desc = kernels.descriptors(mag, ang, np.ascontiguousarray(glayer[idx]), np.ascontiguousarray(y_o[idx]),
                               np.ascontiguousarray(x_o[idx]), np.ascontiguousarray(sigma_o[idx]),
                               np.ascontiguousarray(oris))
    desc = np.asarray(desc)
    scale = 2.0 ** octave
    kps = np.column_stack([x_o[idx] * scale, y_o[idx] * scale, sigma_o[idx] * scale, oris])
    return kps, desc


def detect_sift(img: GrayImage, params: SiftParams | None = None) -> FeatureSet:
    """Detect and describe SIFT features, ordered by octave, then y, then x."""
    p = params or SiftParams()
    if img.width < MIN_SIZE or img.height < MIN_SIZE:
        raise ValueError(f"image must be at least {MIN_SIZE}x{MIN_SIZE}, got {img.width}x{img.height}")
    s = p.scales_per_octave
    k = 2.0 ** (1.0 / s)
    base = gaussian_filter(img.data.astype(np.float64) / 255.0,
                           math.sqrt(max(p.base_sigma ** 2 - ASSUMED_BLUR ** 2, 0.01)), mode="nearest")
    incs = [math.sqrt((p.base_sigma * k ** i) ** 2 - (p.base_sigma * k ** (i - 1)) ** 2) for i in range(1, s + 3)]

    all_kps, all_desc, all_oct = [], [], []
    for octave in range(p.octaves):
        if min(base.shape) < 2 * BORDER + 3:
            break
        stack = [base]
        for inc in incs:
            stack.append(gaussian_filter(stack[-1], inc, mode="nearest"))
        gauss = np.ascontiguousarray(np.stack(stack))
        found = _octave_features(gauss, octave, p)
        if found is not None:
            kps, desc = found
            all_kps.append(kps)
            all_desc.append(desc)
            all_oct.append(np.full(len(kps), octave))
        base = gauss[s][::2, ::2]

    if not all_kps:
        return FeatureSet.empty()
    kps = np.concatenate(all_kps)
    desc = np.concatenate(all_desc)
    octs = np.concatenate(all_oct)
    keep = (np.linalg.norm(desc, axis=1) > 0) & (kps[:, 0] >= 0) & (kps[:, 0] < img.width) \
        & (kps[:, 1] >= 0) & (kps[:, 1] < img.height)
    kps, desc, octs = kps[keep], desc[keep], octs[keep]
    order = np.lexsort((kps[:, 0], kps[:, 1], octs))
    return FeatureSet(kps[order], desc[order].astype(np.float32), octs[order])


def average_feature_count(seq) -> float:
    """Mean number of features over a non-empty sequence of feature sets (or counts)."""
    sizes = [s if isinstance(s, (int, np.integer)) else len(s) for s in seq]
    if not sizes:
        raise ValueError("average_feature_count needs at least one feature set")
    return float(sum(sizes)) / len(sizes)
