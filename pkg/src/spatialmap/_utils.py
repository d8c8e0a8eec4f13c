"""Input validation, seeding and worker-pool helpers shared across modules."""

from __future__ import annotations

import zlib
from concurrent.futures import ThreadPoolExecutor
from typing import Callable, Iterable, Sequence, TypeVar

import numpy as np

T = TypeVar("T")
R = TypeVar("R")


def check_matrix(X, name="X", min_rows=1, allow_nan=False) -> np.ndarray:
    """Return ``X`` as a 2-D float64 array, raising ValueError on bad input."""
    X = np.asarray(X, dtype=np.float64)
    if X.ndim == 1:
        X = X.reshape(-1, 1)
    if X.ndim != 2:
        raise ValueError(f"{name} must be 2-D, got shape {X.shape}")
    if X.shape[0] < min_rows:
        raise ValueError(f"{name} needs at least {min_rows} rows, got {X.shape[0]}")
    if not allow_nan and not np.all(np.isfinite(X)):
        bad = np.where(~np.all(np.isfinite(X), axis=1))[0]
        raise ValueError(f"{name} has non-finite entries in rows {bad[:10].tolist()}")
    return X


def check_vector(y, name="y", n=None) -> np.ndarray:
    y = np.asarray(y, dtype=np.float64).ravel()
    if n is not None and y.shape[0] != n:
        raise ValueError(f"{name} has length {y.shape[0]}, expected {n}")
    if not np.all(np.isfinite(y)):
        bad = np.where(~np.isfinite(y))[0]
        raise ValueError(f"{name} has non-finite entries at {bad[:10].tolist()}")
    return y


def check_names(names, p=None) -> list[str]:
    names = [str(n) for n in names]
    if len(set(names)) != len(names):
        dupes = sorted({n for n in names if names.count(n) > 1})
        raise ValueError(f"duplicate predictor names: {dupes}")
    if p is not None and len(names) != p:
        raise ValueError(f"got {len(names)} names for {p} columns")
    return names


def split_frame(X, feature_names=None):
    """Accept a DataFrame or array; return (array, names or None)."""
    if hasattr(X, "columns") and hasattr(X, "to_numpy"):
        names = [str(c) for c in X.columns]
        return X.to_numpy(dtype=np.float64), names
    return X, (list(feature_names) if feature_names is not None else None)


def derive_rng(seed: int, *labels: str) -> np.random.Generator:
    """Independent generator for ``(seed, labels)``.

    The stream is ``SeedSequence(seed, spawn_key=crc32(label) for each label)``,
    so the same master seed and purpose label always give the same stream
    regardless of call order elsewhere.
    """
    key = tuple(zlib.crc32(label.encode("utf-8")) for label in labels)
    return np.random.default_rng(np.random.SeedSequence(int(seed), spawn_key=key))


def derive_seed(seed: int, *labels: str) -> int:
    return int(derive_rng(seed, *labels).integers(0, 2**31 - 1))


def parallel_map(fn: Callable[[T], R], items: Iterable[T], threads: int = 1) -> list[R]:
    """Map ``fn`` over ``items``; results come back in input order."""
    items = list(items)
    if threads <= 1 or len(items) <= 1:
        return [fn(item) for item in items]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, items))


def type7_quantile(values: Sequence[float], q: float) -> float:
    """Linear-interpolation quantile (R type 7, numpy default)."""
    return float(np.quantile(np.asarray(values, dtype=np.float64), q, method="linear"))
