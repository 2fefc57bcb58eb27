"""Sample sources: two-moons, IDX image files, synthetic out-distribution
sets, interpolated dustbin samples, and the combined augmented training mix.

Every generator is a pure function of its seed. Labels run over the K
in-distribution classes; the reserved dustbin label is K.
"""

from __future__ import annotations

import csv
import struct
from dataclasses import dataclass

import numpy as np

IDX_IMAGE_MAGIC = 0x00000803
IDX_LABEL_MAGIC = 0x00000801


class DataError(ValueError):
    """A dataset request cannot be satisfied."""


class ParseError(ValueError):
    """Malformed IDX file."""


@dataclass
class LabeledSet:
    samples: list
    labels: list
    k_classes: int
    domain: tuple = (0.0, 1.0)  # inclusive box bounds applied to every coordinate
    name: str = ""

    def __post_init__(self):
        if len(self.samples) != len(self.labels):
            raise DataError(
                f"{len(self.samples)} samples vs {len(self.labels)} labels"
            )
        self.samples = [np.asarray(s, dtype=np.float64) for s in self.samples]
        self.labels = [int(y) for y in self.labels]
        for y in self.labels:
            if not 0 <= y <= self.k_classes:
                raise DataError(f"label {y} outside [0, {self.k_classes}]")

    def __len__(self):
        return len(self.samples)

    @property
    def dustbin_label(self) -> int:
        return self.k_classes

    def stacked(self) -> np.ndarray:
        return np.stack(self.samples)

    def subset(self, indices, name=None) -> "LabeledSet":
        return LabeledSet(
            [self.samples[i] for i in indices],
            [self.labels[i] for i in indices],
            self.k_classes,
            self.domain,
            self.name if name is None else name,
        )

    def to_csv(self, path) -> None:
        """One row per sample, label last, header x0..xN,label."""
        dim = self.samples[0].size if self.samples else 0
        with open(path, "w", newline="") as f:
            writer = csv.writer(f)
            writer.writerow([f"x{i}" for i in range(dim)] + ["label"])
            for x, y in zip(self.samples, self.labels):
                writer.writerow([repr(float(v)) for v in x.ravel()] + [y])


@dataclass
class InterpolationConfig:
    alpha: float = 0.5
    count: int = 100
    seed: int = 0

    def __post_init__(self):
        if not 0.0 < self.alpha < 1.0:
            raise DataError("alpha must lie strictly inside (0, 1)")
        if self.count < 1:
            raise DataError("count must be >= 1")


@dataclass
class MixSpec:
    in_dist_count: int
    out_dist_count: int = 0
    interpolated_count: int = 0
    adversarial_count: int = 0

    def __post_init__(self):
        for v in (
            self.in_dist_count,
            self.out_dist_count,
            self.interpolated_count,
            self.adversarial_count,
        ):
            if v < 0:
                raise DataError("mix counts must be >= 0")

    @property
    def dustbin_total(self) -> int:
        return self.out_dist_count + self.interpolated_count + self.adversarial_count


def two_moons(n: int, noise_sigma: float, seed: int) -> LabeledSet:
    """Two interleaving half-circles of radius 1, n points per class.

    Class 0 is the upper arc centered at the origin; class 1 is the lower
    arc whose apex sits at (1, -0.5). Gaussian noise is added per coordinate.
    """
    if n < 1:
        raise DataError("n must be >= 1")
    if noise_sigma < 0:
        raise DataError("noise_sigma must be >= 0")
    rng = np.random.default_rng(seed)
    t = np.linspace(0.0, np.pi, n)
    upper = np.column_stack([np.cos(t), np.sin(t)])
    lower = np.column_stack([1.0 - np.cos(t), 0.5 - np.sin(t)])
    pts = np.vstack([upper, lower])
    if noise_sigma > 0:
        pts = pts + rng.normal(0.0, noise_sigma, size=pts.shape)
    labels = [0] * n + [1] * n
    return LabeledSet(list(pts), labels, k_classes=2, domain=(-6.0, 6.0), name="two-moons")


def _read_u32be(f, what, path):
    raw = f.read(4)
    if len(raw) != 4:
        raise ParseError(f"truncated {what} in {path}")
    return struct.unpack(">I", raw)[0]


def load_idx(images_path, labels_path, k_classes: int = 10) -> LabeledSet:
    """Standard big-endian IDX image/label pair, pixels scaled to [0, 1]."""
    with open(images_path, "rb") as f:
        magic = _read_u32be(f, "magic", images_path)
        if magic != IDX_IMAGE_MAGIC:
            raise ParseError(
                f"bad image magic 0x{magic:08x} in {images_path}, expected 0x{IDX_IMAGE_MAGIC:08x}"
            )
        count = _read_u32be(f, "count", images_path)
        rows = _read_u32be(f, "rows", images_path)
        cols = _read_u32be(f, "cols", images_path)
        raw = f.read(count * rows * cols)
        if len(raw) != count * rows * cols:
            raise ParseError(f"truncated pixel data in {images_path}")
        images = np.frombuffer(raw, dtype=np.uint8).reshape(count, 1, rows, cols)
    with open(labels_path, "rb") as f:
        magic = _read_u32be(f, "magic", labels_path)
        if magic != IDX_LABEL_MAGIC:
            raise ParseError(
                f"bad label magic 0x{magic:08x} in {labels_path}, expected 0x{IDX_LABEL_MAGIC:08x}"
            )
        n_labels = _read_u32be(f, "count", labels_path)
        raw = f.read(n_labels)
        if len(raw) != n_labels:
            raise ParseError(f"truncated label data in {labels_path}")
        labels = np.frombuffer(raw, dtype=np.uint8)
    if count != n_labels:
        raise ParseError(f"{count} images but {n_labels} labels")
    samples = [img.astype(np.float64) / 255.0 for img in images]
    return LabeledSet(samples, list(labels), k_classes, domain=(0.0, 1.0), name="idx")


def write_idx(lset: LabeledSet, images_path, labels_path) -> None:
    """Inverse of load_idx; exact for pixel values that came from bytes."""
    samples = lset.stacked()
    n, _, rows, cols = samples.shape
    pixels = np.rint(samples * 255.0).astype(np.uint8)
    with open(images_path, "wb") as f:
        f.write(struct.pack(">IIII", IDX_IMAGE_MAGIC, n, rows, cols))
        f.write(pixels.tobytes())
    with open(labels_path, "wb") as f:
        f.write(struct.pack(">II", IDX_LABEL_MAGIC, n))
        f.write(bytes(lset.labels))


def synthetic_outdist(
    kind: str,
    n: int,
    seed: int,
    domain: tuple = (0.0, 1.0),
    dim: int = 2,
    shape: tuple | None = None,
    k_classes: int = 2,
    center: tuple | None = None,
    radius: float = 3.0,
    sigma: float = 0.1,
) -> LabeledSet:
    """Desk-scale out-distribution generators; every label is the dustbin K.

    kind 'uniform-box' fills the domain box, 'ring' draws a noisy circle of
    the given radius (radial noise clipped to 4 sigma), 'shifted-blobs'
    drops Gaussian blobs near the box corners, 'letters-noise' makes blocky
    random patterns for image-shaped domains.
    """
    if n < 1:
        raise DataError("n must be >= 1")
    rng = np.random.default_rng(seed)
    lo, hi = domain
    if kind == "uniform-box":
        if shape is not None:
            pts = rng.uniform(lo, hi, size=(n,) + tuple(shape))
        else:
            pts = rng.uniform(lo, hi, size=(n, dim))
    elif kind == "ring":
        if dim != 2:
            raise DataError("ring generator is 2-dimensional")
        cx, cy = center if center is not None else (0.5, 0.0)
        theta = rng.uniform(0.0, 2.0 * np.pi, size=n)
        radial = np.clip(rng.normal(0.0, sigma, size=n), -4.0 * sigma, 4.0 * sigma)
        r = radius + radial
        pts = np.column_stack([cx + r * np.cos(theta), cy + r * np.sin(theta)])
        pts = np.clip(pts, lo, hi)
    elif kind == "shifted-blobs":
        if dim != 2:
            raise DataError("shifted-blobs generator is 2-dimensional")
        span = hi - lo
        centers = np.array(
            [
                (lo + 0.15 * span, lo + 0.15 * span),
                (lo + 0.15 * span, hi - 0.15 * span),
                (hi - 0.15 * span, lo + 0.15 * span),
                (hi - 0.15 * span, hi - 0.15 * span),
            ]
        )
        which = rng.integers(0, len(centers), size=n)
        pts = centers[which] + rng.normal(0.0, 0.05 * span, size=(n, 2))
        pts = np.clip(pts, lo, hi)
    elif kind == "letters-noise":
        if shape is None:
            raise DataError("letters-noise needs an image shape")
        c, h, w = shape
        coarse = rng.random(size=(n, c, max(h // 4, 1), max(w // 4, 1))) > 0.5
        pts = np.kron(coarse.astype(np.float64), np.ones((1, 1, 4, 4)))[:, :, :h, :w]
        pts = np.clip(pts + rng.normal(0.0, 0.1, size=pts.shape), lo, hi)
    else:
        raise DataError(f"unknown out-distribution kind {kind!r}")
    return LabeledSet(
        list(pts), [k_classes] * n, k_classes, domain=domain, name=kind
    )


def _correctly_classified(lset: LabeledSet, model) -> list:
    preds = model.predict(lset.stacked())
    return [i for i, y in enumerate(lset.labels) if preds[i] == y]


def nearest_cross_class_neighbor(lset: LabeledSet, model, i: int) -> int:
    """Index j minimizing feature-space distance with label(j) != label(i)."""
    feats = model.features(lset.stacked())
    yi = lset.labels[i]
    best_j, best_d = -1, np.inf
    for j in range(len(lset)):
        if lset.labels[j] == yi:
            continue
        d = float(np.linalg.norm(feats[i] - feats[j]))
        if d < best_d:
            best_j, best_d = j, d
    if best_j < 0:
        raise DataError(f"no sample with a label different from {yi}")
    return best_j


def interpolate(lset: LabeledSet, model, cfg: InterpolationConfig) -> LabeledSet:
    """Dustbin samples alpha*x_i + (1-alpha)*x_j from correctly classified
    cross-class feature-space nearest-neighbor pairs."""
    keep = _correctly_classified(lset, model)
    if len(keep) < cfg.count:
        raise DataError(
            f"requested {cfg.count} pairs but only {len(keep)} correctly classified samples"
        )
    pool = lset.subset(keep)
    feats = model.features(pool.stacked())
    labels = np.asarray(pool.labels)
    rng = np.random.default_rng(cfg.seed)
    order = rng.permutation(len(pool))[: cfg.count]
    out = []
    for i in order:
        other = labels != labels[i]
        if not other.any():
            raise DataError(f"no cross-class sample for label {labels[i]}")
        d = np.linalg.norm(feats[other] - feats[i], axis=1)
        j = np.flatnonzero(other)[int(np.argmin(d))]
        out.append(cfg.alpha * pool.samples[i] + (1.0 - cfg.alpha) * pool.samples[j])
    return LabeledSet(
        out,
        [lset.k_classes] * len(out),
        lset.k_classes,
        domain=lset.domain,
        name="interpolated",
    )


def adversarial_dustbin(lset: LabeledSet, model, ifgs_config, n: int, seed: int) -> LabeledSet:
    """Iterative signed-gradient adversaries of correctly classified samples,
    labeled dustbin."""
    from .attacks import ifgs

    keep = _correctly_classified(lset, model)
    if len(keep) < n:
        raise DataError(
            f"requested {n} adversaries but only {len(keep)} correctly classified samples"
        )
    rng = np.random.default_rng(seed)
    chosen = rng.permutation(len(keep))[:n]
    out = []
    for idx in chosen:
        i = keep[idx]
        res = ifgs(
            model,
            lset.samples[i],
            lset.labels[i],
            ifgs_config.epsilon,
            ifgs_config.clip_radius,
            ifgs_config.iterations,
            domain=lset.domain,
        )
        out.append(res.x_adv)
    return LabeledSet(
        out,
        [lset.k_classes] * n,
        lset.k_classes,
        domain=lset.domain,
        name="adversarial",
    )


def build_mix(
    in_dist: LabeledSet,
    out_dist: LabeledSet | None,
    interpolated: LabeledSet | None,
    adversarial: LabeledSet | None,
    spec: MixSpec,
    seed: int,
) -> LabeledSet:
    """Concatenate sources, relabel dustbin parts to K, shuffle deterministically."""
    if spec.dustbin_total == 0:
        raise DataError("an augmented mix needs at least one dustbin source")
    k = in_dist.k_classes
    samples, labels = [], []

    def take(source, count, role):
        if count == 0:
            return
        if source is None or len(source) < count:
            have = 0 if source is None else len(source)
            raise DataError(f"{role}: requested {count} samples, only {have} available")
        samples.extend(source.samples[:count])
        labels.extend(
            source.labels[:count] if role == "in-dist" else [k] * count
        )

    take(in_dist, spec.in_dist_count, "in-dist")
    take(out_dist, spec.out_dist_count, "out-dist")
    take(interpolated, spec.interpolated_count, "interpolated")
    take(adversarial, spec.adversarial_count, "adversarial")
    rng = np.random.default_rng(seed)
    order = rng.permutation(len(samples))
    return LabeledSet(
        [samples[i] for i in order],
        [labels[i] for i in order],
        k,
        domain=in_dist.domain,
        name="augmented-mix",
    )
