"""Synthetic multimodal brain-like phantoms.

A subject is a stack of nested ellipsoids; each transaxial slice is the
set of elliptical cross-sections at that height.  Every tissue class is
rendered into PET activity, a T1-like and a T2-like contrast from one
shared label map, so the MRI channels carry real information about the
PET structure.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import DomainError
from .rng import Rng
from .tensor import Image

BACKGROUND, WHITE, GRAY, CSF, LESION_HOT, LESION_COLD = range(6)
CLASS_NAMES = ("background", "white", "gray", "csf", "lesion_hot", "lesion_cold")
LESION_CLASSES = (LESION_HOT, LESION_COLD)

# (pet_activity, t1_intensity, t2_intensity)
DEFAULT_CONTRAST = {
    "background": (0.0, 0.0, 0.0),
    "white": (0.3, 0.85, 0.35),
    "gray": (1.0, 0.55, 0.6),
    "csf": (0.05, 0.15, 0.95),
    "lesion_hot": (1.5, 0.5, 0.7),
    "lesion_cold": (0.12, 0.45, 0.8),
}

TEXTURE_MODES = 4
TEXTURE_AMPLITUDE = 0.05
SUPERSAMPLE = 4


@dataclass(frozen=True)
class PhantomSpec:
    size: int = 128
    num_ellipses: int = 6
    seed: int = 0
    contrast_profile: dict = field(default_factory=lambda: dict(DEFAULT_CONTRAST))
    lesion_probability: float = 0.3
    voxel_size: float = 2.0

    def __post_init__(self):
        problems = []
        if int(self.size) != self.size or self.size < 8:
            problems.append("size must be an integer >= 8")
        if int(self.num_ellipses) != self.num_ellipses or self.num_ellipses < 1:
            problems.append("num_ellipses must be a positive integer")
        if not 0.0 <= self.lesion_probability <= 1.0:
            problems.append("lesion_probability must lie in [0, 1]")
        if not self.voxel_size > 0:
            problems.append("voxel_size must be positive")
        missing = [c for c in CLASS_NAMES if c not in self.contrast_profile]
        if missing:
            problems.append(f"contrast_profile lacks classes {missing}")
        for name, triple in self.contrast_profile.items():
            pet, t1, t2 = triple
            if pet < 0:
                problems.append(f"{name}: PET activity must be >= 0")
            if not (0 <= t1 <= 1 and 0 <= t2 <= 1):
                problems.append(f"{name}: MRI intensities must lie in [0, 1]")
        if problems:
            raise DomainError("; ".join(problems))

    def with_seed(self, seed: int) -> "PhantomSpec":
        return PhantomSpec(self.size, self.num_ellipses, int(seed), dict(self.contrast_profile),
                           self.lesion_probability, self.voxel_size)


@dataclass(frozen=True)
class _Ellipsoid:
    label: int
    cx: float
    cy: float
    cz: float
    a: float
    b: float
    c: float
    angle: float


def _layout(spec: PhantomSpec):
    """Draw the ellipsoid list for one subject in normalised coordinates.

    x and y span [-1, 1] across the field of view; slices span z in [-1, 1].
    """
    rng = Rng(spec.seed)
    u = rng.uniform
    shapes = []
    # head: gray cortex shell around a white-matter core
    ha, hb = 0.70 + 0.08 * u(), 0.82 + 0.06 * u()
    tilt = (u() - 0.5) * 0.3
    shapes.append(_Ellipsoid(GRAY, 0.0, 0.0, 0.0, ha, hb, 2.5, tilt))
    shapes.append(_Ellipsoid(WHITE, 0.0, 0.0, 0.0, 0.8 * ha, 0.8 * hb, 2.2, tilt))
    # ventricles
    for side in (-1, 1):
        shapes.append(_Ellipsoid(CSF, side * (0.08 + 0.04 * u()), 0.05 * (u() - 0.5), 0.2 * (u() - 0.5),
                                 0.07 + 0.04 * u(), 0.22 + 0.08 * u(), 0.7 + 0.4 * u(), side * 0.3 * u()))
    # further structures scattered inside the white-matter core
    kinds = (GRAY, GRAY, CSF, WHITE)
    for i in range(spec.num_ellipses):
        r = 0.55 * math.sqrt(u())
        phi = 2 * math.pi * u()
        shapes.append(_Ellipsoid(kinds[int(rng.integers(0, len(kinds)))],
                                 r * math.cos(phi) * ha, r * math.sin(phi) * hb, 1.6 * (u() - 0.5),
                                 0.05 + 0.1 * u(), 0.05 + 0.1 * u(), 0.4 + 0.8 * u(), math.pi * u()))
    for label in LESION_CLASSES:
        # draws are made unconditionally so the layout does not depend on the probability
        hit = u() < spec.lesion_probability
        r, phi = 0.5 * math.sqrt(u()), 2 * math.pi * u()
        geom = (r * math.cos(phi) * ha, r * math.sin(phi) * hb, 0.8 * (u() - 0.5),
                0.04 + 0.05 * u(), 0.04 + 0.05 * u(), 0.3 + 0.4 * u(), math.pi * u())
        if hit:
            shapes.append(_Ellipsoid(label, *geom))
    # texture modes: integer frequencies keep the field smooth and seed-determined
    modes = []
    for _ in range(3):
        k = rng.integers(0, 3, size=(TEXTURE_MODES, 3)).astype(float)
        phase = 2 * math.pi * rng.uniform(TEXTURE_MODES)
        modes.append((k, phase))
    return shapes, modes


def _grid(size, supersample=1):
    n = size * supersample
    c = (np.arange(n) - (n - 1) / 2.0) / (n / 2.0)
    Y, X = np.meshgrid(c, c, indexing="ij")
    return X, Y


def _labels(shapes, X, Y, z):
    labels = np.zeros(X.shape, dtype=np.int64)
    for e in shapes:
        dz = (z - e.cz) / e.c
        if abs(dz) >= 1.0:
            continue
        scale = math.sqrt(1.0 - dz * dz)
        ca, sa = math.cos(e.angle), math.sin(e.angle)
        xr = (X - e.cx) * ca + (Y - e.cy) * sa
        yr = -(X - e.cx) * sa + (Y - e.cy) * ca
        inside = (xr / (e.a * scale)) ** 2 + (yr / (e.b * scale)) ** 2 <= 1.0
        labels[inside] = e.label
    return labels


def fov_mask(size: int) -> np.ndarray:
    """Disk inscribed in the square grid."""
    X, Y = _grid(size)
    return X * X + Y * Y <= 1.0


def _texture(modes, X, Y, z):
    k, phase = modes
    f = np.zeros_like(X)
    for (kx, ky, kz), ph in zip(k, phase):
        f += np.cos(math.pi * (kx * X + ky * Y + kz * z) + ph)
    return f / len(phase)


def _render(spec, shapes, modes, z):
    # Intensities are box-averaged over SUPERSAMPLE^2 sub-voxels (partial volume);
    # the label map is sampled at voxel centres.
    n, ss = spec.size, SUPERSAMPLE
    mask = fov_mask(n)
    labels = _labels(shapes, *_grid(n), z)
    labels[~mask] = BACKGROUND
    Xs, Ys = _grid(n, ss)
    fine_labels = _labels(shapes, Xs, Ys, z)
    fine_labels[Xs * Xs + Ys * Ys > 1.0] = BACKGROUND
    out = []
    for m in range(3):
        table = np.array([spec.contrast_profile[name][m] for name in CLASS_NAMES], dtype=np.float64)
        fine = table[fine_labels] * (1.0 + TEXTURE_AMPLITUDE * _texture(modes[m], Xs, Ys, z))
        if m > 0:
            fine = np.clip(fine, 0.0, 1.0)
        img = fine.reshape(n, ss, n, ss).mean(axis=(1, 3))
        img[~mask] = 0.0
        out.append(Image(img, spec.voxel_size))
    out.append(Image(labels.astype(np.float64), spec.voxel_size))
    return tuple(out)


def slice_positions(num_slices: int) -> np.ndarray:
    if num_slices == 1:
        return np.zeros(1)
    return np.linspace(-0.8, 0.8, num_slices)


def generate(spec: PhantomSpec):
    """Central slice: ``(pet, t1, t2, tissue_map)``."""
    shapes, modes = _layout(spec)
    return _render(spec, shapes, modes, 0.0)


def generate_volume(spec: PhantomSpec, num_slices: int):
    """``num_slices`` contiguous slices: four lists ``(pet, t1, t2, tissue)``."""
    if num_slices < 1:
        raise DomainError("num_slices must be positive")
    shapes, modes = _layout(spec)
    slices = [_render(spec, shapes, modes, z) for z in slice_positions(num_slices)]
    return tuple(list(col) for col in zip(*slices))


@dataclass
class Subject:
    index: int
    seed: int
    pet: list
    t1: list
    t2: list
    tissue: list

    @property
    def num_slices(self):
        return len(self.pet)


@dataclass
class Dataset:
    train: list
    val: list
    test: list

    def splits(self):
        return {"train": self.train, "val": self.val, "test": self.test}


def split_sizes(n: int):
    """70/10/20 split, every part nonempty."""
    if n < 3:
        raise DomainError(f"need at least 3 subjects, got {n}")
    n_val = max(1, round(0.1 * n))
    n_test = max(1, round(0.2 * n))
    return n - n_val - n_test, n_val, n_test


def subject_seed(seed: int, index: int) -> int:
    return int(np.random.SeedSequence([int(seed), int(index)]).generate_state(1, np.uint64)[0])


def generate_dataset(n: int, template: PhantomSpec, seed: int, num_slices: int = 16) -> Dataset:
    n_train, n_val, _ = split_sizes(n)
    order = Rng(seed, stream_id=7).permutation(n)
    subjects = []
    for i in range(n):
        s = subject_seed(seed, i)
        pet, t1, t2, tissue = generate_volume(template.with_seed(s), num_slices)
        subjects.append(Subject(i, s, pet, t1, t2, tissue))
    picked = [subjects[i] for i in order]
    return Dataset(picked[:n_train], picked[n_train : n_train + n_val], picked[n_train + n_val :])


def region_noise_target(clean, tissue_map, sigma_by_class: dict, rng: Rng) -> Image:
    """``clean + N(0, sigma(class)^2)`` voxelwise; classes missing from the map get sigma 0."""
    clean_arr = np.asarray(clean, dtype=np.float64)
    labels = np.asarray(tissue_map).astype(np.int64)
    sigma = np.zeros_like(clean_arr)
    for cls, s in sigma_by_class.items():
        sigma[labels == cls] = s
    return Image(clean_arr + sigma * rng.normal(clean_arr.shape), getattr(clean, "voxel_size", 1.0))
