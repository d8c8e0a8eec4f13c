"""Seeded synthetic mapping scenarios: smooth predictor fields, a known response, point samples."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from typing import List

import numpy as np

from ._utils import derive_rng
from .geom import PointSet
from .models import Dataset
from .raster import RasterStack


@dataclass
class SyntheticScenario:
    size: int = 100
    n_bumps: int = 8
    n_informative: int = 3
    n_noise: int = 3
    design: str = "clustered"
    n_clusters: int = 8
    cluster_radius: float = 5.0
    n_samples: int = 200
    noise_sd: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if self.n_informative < 1:
            raise ValueError("need at least one informative predictor")
        if self.design not in ("random", "clustered"):
            raise ValueError("design must be 'random' or 'clustered'")
        if self.size < 2 or self.n_samples < 2:
            raise ValueError("grid size and sample count must be at least 2")

    @classmethod
    def from_json(cls, path) -> "SyntheticScenario":
        with open(path, encoding="utf-8") as fh:
            return cls(**json.load(fh))

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class SyntheticData:
    stack: RasterStack
    truth: RasterStack
    data: Dataset
    informative: List[str]
    noise: List[str]
    cells: np.ndarray = field(repr=False)


def smooth_field(size: int, n_bumps: int, rng: np.random.Generator) -> np.ndarray:
    """Sum of Gaussian bumps, standardized to mean 0 and sd 1 over the grid."""
    rows, cols = np.mgrid[0:size, 0:size].astype(np.float64)
    out = np.zeros((size, size))
    for _ in range(n_bumps):
        cr, cc = rng.uniform(0, size, 2)
        width = rng.uniform(0.08, 0.25) * size
        amp = rng.uniform(-1.0, 1.0)
        out += amp * np.exp(-((rows - cr) ** 2 + (cols - cc) ** 2) / (2 * width ** 2))
    sd = out.std()
    return (out - out.mean()) / (sd if sd > 0 else 1.0)


_TERMS = (
    lambda z: 10.0 * np.sin(1.2 * z),
    lambda z: 4.0 * (z ** 2 - 1.0),
    lambda z: 6.0 * np.tanh(1.5 * z),
)


def response_surface(fields: List[np.ndarray]) -> np.ndarray:
    """Fixed nonlinear combination of the informative fields."""
    out = sum(_TERMS[j % len(_TERMS)](z) for j, z in enumerate(fields))
    if len(fields) >= 2:
        out = out + 3.0 * fields[0] * fields[1]
    return out


def _sample_cells(s: SyntheticScenario, rng: np.random.Generator) -> np.ndarray:
    size = s.size
    if s.design == "random":
        flat = rng.choice(size * size, s.n_samples, replace=False)
        return np.column_stack([flat // size, flat % size])
    counts = [s.n_samples // s.n_clusters + (1 if i < s.n_samples % s.n_clusters else 0) for i in range(s.n_clusters)]
    r = s.cluster_radius
    taken = set()
    cells = []
    for count in counts:
        lo, hi = min(r, size / 2), max(size - r, size / 2)
        center = rng.uniform(lo, hi, 2)
        got, attempts = 0, 0
        while got < count:
            attempts += 1
            if attempts > 10000 * max(count, 1):
                raise ValueError("cluster radius too small for the requested samples per cluster")
            rho = r * np.sqrt(rng.uniform())
            theta = rng.uniform(0, 2 * np.pi)
            rc = int(np.floor(center[0] + rho * np.sin(theta)))
            cc = int(np.floor(center[1] + rho * np.cos(theta)))
            if not (0 <= rc < size and 0 <= cc < size) or (rc, cc) in taken:
                continue
            taken.add((rc, cc))
            cells.append((rc, cc))
            got += 1
    return np.asarray(cells, dtype=np.intp)


def generate_synthetic(s: SyntheticScenario) -> SyntheticData:
    """Predictor stack, noiseless truth grid and a sampled training table."""
    if s.n_samples > s.size * s.size:
        raise ValueError("more samples requested than grid cells")
    fields, names = {}, []
    informative = [f"inf{j + 1}" for j in range(s.n_informative)]
    noise = [f"noise{j + 1}" for j in range(s.n_noise)]
    for name in informative + noise:
        fields[name] = smooth_field(s.size, s.n_bumps, derive_rng(s.seed, "synth", "field", name))
    truth = response_surface([fields[n] for n in informative])
    stack = RasterStack(s.size, s.size, 0.0, 0.0, 1.0, bands=fields)
    cells = _sample_cells(s, derive_rng(s.seed, "synth", "design"))
    xs, ys = stack.cell_centers()
    coords = np.column_stack([xs[cells[:, 0], cells[:, 1]], ys[cells[:, 0], cells[:, 1]]])
    names = informative + noise
    X = np.column_stack([fields[n][cells[:, 0], cells[:, 1]] for n in names])
    y = truth[cells[:, 0], cells[:, 1]] + derive_rng(s.seed, "synth", "noise").normal(0.0, s.noise_sd, len(cells))
    data = Dataset(X, y, names, PointSet(coords, "projected"))
    return SyntheticData(stack, stack.like({"truth": truth}), data, informative, noise, cells)
