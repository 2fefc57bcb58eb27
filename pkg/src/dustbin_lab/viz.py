"""Figure emitters: 2D decision-region rasters, church-window cross-sections,
misclassification histograms, and 3D feature projections.

Rasters are written as binary PPM (P6) so golden-file tests can compare
bytes. The dustbin class always renders orange; an optional marker pixel
(the clean sample position in church windows) renders black.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from .autodiff import ContractError

DUSTBIN_COLOR = (255, 165, 0)
MARKER_COLOR = (0, 0, 0)

# Distinct fills for in-distribution classes; cycled when K exceeds the list.
CLASS_COLORS = [
    (31, 119, 180),
    (44, 160, 44),
    (214, 39, 40),
    (148, 103, 189),
    (140, 86, 75),
    (227, 119, 194),
    (127, 127, 127),
    (188, 189, 34),
    (23, 190, 207),
    (255, 127, 14),
]


class NumericError(ArithmeticError):
    """Degenerate geometry (zero direction, vanishing basis)."""


def default_color_map(k_classes: int, augmented: bool) -> dict:
    cmap = {c: CLASS_COLORS[c % len(CLASS_COLORS)] for c in range(k_classes)}
    if augmented:
        cmap[k_classes] = DUSTBIN_COLOR
    return cmap


@dataclass
class RasterGrid:
    width: int
    height: int
    class_ids: np.ndarray  # height x width ints
    color_map: dict
    marker: tuple | None = None  # (row, col) painted black

    def __post_init__(self):
        self.class_ids = np.asarray(self.class_ids, dtype=np.int64)
        if self.class_ids.shape != (self.height, self.width):
            raise ValueError(
                f"class id grid {self.class_ids.shape} != {(self.height, self.width)}"
            )
        missing = set(np.unique(self.class_ids)) - set(self.color_map)
        if missing:
            raise ValueError(f"no colors for classes {sorted(missing)}")


@dataclass
class Projection:
    coords: np.ndarray  # n x k
    explained_variance: np.ndarray
    group_labels: list
    degenerate: bool = False


def decision_regions(model, bounds, resolution: int) -> RasterGrid:
    """Predicted label at each cell center of a resolution^2 grid.

    ``bounds`` is (xmin, xmax, ymin, ymax); row 0 is the top of the image
    (largest y) so the raster reads like a plot.
    """
    if model.config.input_shape != (2,):
        raise ContractError("decision regions need a 2-dimensional model input")
    xmin, xmax, ymin, ymax = bounds
    xs = xmin + (np.arange(resolution) + 0.5) * (xmax - xmin) / resolution
    ys = ymax - (np.arange(resolution) + 0.5) * (ymax - ymin) / resolution
    gx, gy = np.meshgrid(xs, ys)
    pts = np.column_stack([gx.ravel(), gy.ravel()])
    ids = model.predict(pts).reshape(resolution, resolution)
    cmap = default_color_map(model.k_classes, model.config.augmented)
    return RasterGrid(resolution, resolution, ids, cmap)


def _orthonormal_pair(adv_direction: np.ndarray, rng) -> tuple:
    d = adv_direction.ravel().astype(np.float64)
    norm = np.linalg.norm(d)
    if norm < 1e-12:
        raise NumericError("adversary direction has (near-)zero norm")
    d_unit = d / norm
    for _ in range(100):
        cand = rng.normal(size=d.shape)
        cand = cand - (cand @ d_unit) * d_unit
        cnorm = np.linalg.norm(cand)
        if cnorm > 1e-8:
            return d_unit, cand / cnorm
    raise NumericError("could not draw a direction orthogonal to the adversary")


def church_window(
    model,
    x,
    adv_direction,
    n_orthogonal: int = 4,
    extent: float = 0.4,
    resolution: int = 101,
    seed: int = 0,
) -> list:
    """Cross-sections of the label field around x.

    Each window spans x + s*d_adv + t*d_orth for s, t in [-extent, extent],
    with d_orth a fresh random unit vector orthogonalized against the
    adversary direction. The center pixel (the clean sample) is marked.
    """
    if n_orthogonal < 1:
        raise ValueError("n_orthogonal must be >= 1")
    x = np.asarray(x, dtype=np.float64)
    rng = np.random.default_rng(seed)
    cmap = default_color_map(model.k_classes, model.config.augmented)
    coords = np.linspace(-extent, extent, resolution)
    grids = []
    for _ in range(n_orthogonal):
        d_adv, d_orth = _orthonormal_pair(np.asarray(adv_direction), rng)
        pts = (
            x.ravel()[None, None, :]
            + coords[None, :, None] * d_adv[None, None, :]  # s along columns
            + coords[::-1][:, None, None] * d_orth[None, None, :]  # t along rows, top positive
        )
        batch = pts.reshape(-1, *x.shape)
        ids = model.predict(batch).reshape(resolution, resolution)
        grids.append(
            RasterGrid(
                resolution,
                resolution,
                ids,
                cmap,
                marker=(resolution // 2, resolution // 2),
            )
        )
    return grids


def pca_project(features: np.ndarray, k: int = 3, seed: int = 0) -> Projection:
    """Top-k principal directions by power iteration with deflation.

    Components are orthonormalized against the ones already found and their
    signs fixed so each component's largest-magnitude entry is positive.
    When the data has rank below k, the found components are returned with
    the degenerate flag set.
    """
    x = np.asarray(features, dtype=np.float64)
    n, d = x.shape
    if n < k or d < k:
        raise ValueError(f"need at least {k} samples and {k} dimensions, got {x.shape}")
    centered = x - x.mean(axis=0)
    cov = centered.T @ centered / max(n - 1, 1)
    rng = np.random.default_rng(seed)
    components, variances = [], []
    scale = float(np.trace(cov))
    for _ in range(k):
        v = rng.normal(size=d)
        for comp in components:
            v -= (v @ comp) * comp
        vnorm = np.linalg.norm(v)
        if vnorm < 1e-12:
            break
        v /= vnorm
        lam = 0.0
        for _ in range(2000):
            w = cov @ v
            for comp in components:
                w -= (w @ comp) * comp
            wnorm = np.linalg.norm(w)
            if wnorm < 1e-14 * max(scale, 1.0):
                lam = 0.0
                break
            w /= wnorm
            if np.linalg.norm(w - v) < 1e-13 or np.linalg.norm(w + v) < 1e-13:
                v = w
                lam = float(v @ cov @ v)
                break
            v = w
        else:
            lam = float(v @ cov @ v)
        if lam <= 1e-12 * max(scale, 1.0):
            break
        top = int(np.argmax(np.abs(v)))
        if v[top] < 0:
            v = -v
        components.append(v)
        variances.append(lam)
    degenerate = len(components) < k
    if components:
        basis = np.stack(components, axis=1)
        coords = centered @ basis
    else:
        coords = np.zeros((n, 0))
    return Projection(
        coords=coords,
        explained_variance=np.asarray(variances),
        group_labels=[],
        degenerate=degenerate,
    )


def histogram_raster(counts, height: int = 100, bar_width: int = 12, gap: int = 4) -> RasterGrid:
    """Bar chart of per-class counts as a raster (background id -1, white)."""
    counts = [int(c) for c in counts]
    k = len(counts)
    width = k * bar_width + (k + 1) * gap
    ids = np.full((height, width), -1, dtype=np.int64)
    peak = max(max(counts), 1)
    for cls, count in enumerate(counts):
        bar_h = int(round((height - 2) * count / peak))
        left = gap + cls * (bar_width + gap)
        if bar_h > 0:
            ids[height - 1 - bar_h : height - 1, left : left + bar_width] = cls
    cmap = {-1: (255, 255, 255)}
    cmap.update(default_color_map(k, augmented=False))
    return RasterGrid(width, height, ids, cmap)


def write_ppm(grid: RasterGrid, path) -> None:
    """Binary P6, maxval 255, rows top to bottom."""
    header = f"P6\n{grid.width} {grid.height}\n255\n".encode("ascii")
    pixels = np.zeros((grid.height, grid.width, 3), dtype=np.uint8)
    for cls, rgb in grid.color_map.items():
        pixels[grid.class_ids == cls] = rgb
    if grid.marker is not None:
        pixels[grid.marker[0], grid.marker[1]] = MARKER_COLOR
    with open(path, "wb") as f:
        f.write(header + pixels.tobytes())


def read_ppm(path) -> np.ndarray:
    """P6 reader for round-trip tests; returns height x width x 3 uint8."""
    with open(path, "rb") as f:
        blob = f.read()
    parts = blob.split(b"\n", 3)
    if parts[0] != b"P6" or len(parts) < 4:
        raise ValueError(f"{path} is not a binary P6 file")
    width, height = (int(v) for v in parts[1].split())
    if parts[2] != b"255":
        raise ValueError("expected maxval 255")
    data = np.frombuffer(parts[3], dtype=np.uint8, count=width * height * 3)
    return data.reshape(height, width, 3)


def write_projection_csv(projection: Projection, path) -> None:
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        k = projection.coords.shape[1]
        writer.writerow([f"pc{i}" for i in range(k)] + ["group"])
        groups = projection.group_labels or [""] * len(projection.coords)
        for row, group in zip(projection.coords, groups):
            writer.writerow([repr(float(v)) for v in row] + [group])
