"""Per-class mode discovery: k-means++ seeding, Lloyd refinement, prototype sets."""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ConfigError, DataError, SchemaError
from .latent_space import ClassPool, read_records, write_rows

MODES = ("centroid", "closest_point")


def _sq_dists(points: np.ndarray, centers: np.ndarray) -> np.ndarray:
    diff = points[:, None, :] - centers[None, :, :]
    return np.einsum("nkd,nkd->nk", diff, diff)


def kmeans_objective(points: np.ndarray, centers: np.ndarray) -> float:
    """Sum of squared distances from each point to its nearest center."""
    return float(_sq_dists(points, centers).min(axis=1).sum())


def kmeans_pp_init(points: np.ndarray, K: int, seed) -> np.ndarray:
    """k-means++ seeding.

    The first center is a uniform draw; each later one is drawn with
    probability proportional to the squared distance to the nearest chosen
    center. When every remaining distance is zero (K exceeds the number of
    distinct points) the draw falls back to uniform, so duplicates appear.
    """
    if K < 1:
        raise ConfigError(f"K must be >= 1, got {K}")
    points = np.asarray(points, dtype=np.float64)
    if len(points) == 0:
        raise DataError("kmeans_pp_init needs at least one point")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    n = len(points)
    centers = np.empty((K, points.shape[1]))
    centers[0] = points[rng.integers(n)]
    d2 = _sq_dists(points, centers[:1])[:, 0]
    for i in range(1, K):
        total = d2.sum()
        if total > 0:
            idx = rng.choice(n, p=d2 / total)
        else:
            idx = rng.integers(n)
        centers[i] = points[idx]
        d2 = np.minimum(d2, _sq_dists(points, centers[i:i + 1])[:, 0])
    return centers


def lloyd_refine(points: np.ndarray, centers: np.ndarray, tol: float = 1e-4,
                 max_iter: int = 300, return_history: bool = False):
    """Lloyd iterations from ``centers``.

    Stops once the largest per-center displacement drops below ``tol`` or
    after ``max_iter`` updates. An empty cluster is moved onto the point
    farthest from its current center. With ``return_history`` the objective
    before the first update and after every update is returned as well.
    """
    points = np.asarray(points, dtype=np.float64)
    centers = np.array(centers, dtype=np.float64)
    if len(points) == 0 or len(centers) == 0:
        raise DataError("lloyd_refine needs non-empty points and centers")
    K = len(centers)
    history = [kmeans_objective(points, centers)]
    for _ in range(max_iter):
        d2 = _sq_dists(points, centers)
        labels = d2.argmin(axis=1)
        nearest = d2[np.arange(len(points)), labels]
        new = centers.copy()
        for k in range(K):
            members = labels == k
            if members.any():
                new[k] = points[members].mean(axis=0)
        for k in range(K):
            if not (labels == k).any():
                far = int(nearest.argmax())
                new[k] = points[far]
                nearest[far] = 0.0
        shift = np.sqrt(((new - centers) ** 2).sum(axis=1)).max()
        centers = new
        history.append(kmeans_objective(points, centers))
        if shift < tol:
            break
    if return_history:
        return centers, history
    return centers


def closest_members(points: np.ndarray, centers: np.ndarray) -> np.ndarray:
    """Replace each center by its nearest point (lowest index on ties)."""
    idx = _sq_dists(points, centers).argmin(axis=0)
    return points[idx].copy()


@dataclass(frozen=True)
class PrototypeSet:
    centers: dict[int, np.ndarray]
    K: int
    mode: str = "centroid"

    def __post_init__(self):
        if self.mode not in MODES:
            raise ConfigError(f"unknown prototype mode {self.mode!r}")
        for y, c in self.centers.items():
            if c.shape[0] != self.K:
                raise SchemaError(f"class {y}: expected {self.K} centers, got {c.shape[0]}")
            c.setflags(write=False)

    @property
    def dim(self) -> int:
        return next(iter(self.centers.values())).shape[1]

    @property
    def classes(self) -> list[int]:
        return sorted(self.centers)

    def __getitem__(self, y: int) -> np.ndarray:
        return self.centers[y]

    def mapped(self, fn) -> "PrototypeSet":
        """Apply ``fn`` to every class's center array, e.g. ``standardizer.inverse``."""
        return PrototypeSet({y: np.asarray(fn(c), dtype=np.float64) for y, c in self.centers.items()},
                            self.K, self.mode)

    def save(self, path: str | Path, num_classes: int | None = None) -> None:
        num_classes = num_classes or max(self.classes) + 1
        rows = [(y, c) for y in self.classes for c in self.centers[y]]
        write_rows(path, {"dim": self.dim, "classes": num_classes, "k": self.K,
                          "mode": self.mode}, rows)

    @classmethod
    def load(cls, path: str | Path) -> "PrototypeSet":
        header, records = read_records(path)
        try:
            K, mode = int(header["k"]), header["mode"]
        except (KeyError, ValueError):
            raise SchemaError("prototype header needs k=<int> and mode=<name>") from None
        buckets: dict[int, list] = {}
        for y, v in records:
            buckets.setdefault(y, []).append(v)
        return cls({y: np.stack(v) for y, v in buckets.items()}, K, mode)


def _class_prototypes(points, K, mode, seed, y, tol, max_iter):
    rng = np.random.default_rng([seed, y])
    centers = lloyd_refine(points, kmeans_pp_init(points, K, rng), tol=tol, max_iter=max_iter)
    if mode == "closest_point":
        centers = closest_members(points, centers)
    return centers


def build_prototypes(pool: ClassPool, K: int, mode: str = "centroid", seed: int = 0,
                     tol: float = 1e-4, max_iter: int = 300, workers: int = 1) -> PrototypeSet:
    """Cluster every class of ``pool`` into ``K`` prototypes.

    Class y draws its seeding randomness from the stream ``(seed, y)``, so
    the result does not depend on ``workers``.
    """
    if mode not in MODES:
        raise ConfigError(f"unknown prototype mode {mode!r}")
    if K < 1:
        raise ConfigError(f"K must be >= 1, got {K}")
    for y in range(pool.num_classes):
        if len(pool[y]) == 0:
            raise DataError(f"class {y} has no points to cluster")

    def run(y):
        return _class_prototypes(pool[y], K, mode, seed, y, tol, max_iter)

    ys = list(range(pool.num_classes))
    if workers > 1:
        with ThreadPoolExecutor(workers) as ex:
            results = list(ex.map(run, ys))
    else:
        results = [run(y) for y in ys]
    return PrototypeSet(dict(zip(ys, results)), K, mode)


def assign_prototypes(K: int, ipc: int) -> np.ndarray:
    """Round-robin prototype index in ``1..K`` for each of ``ipc`` samples."""
    if K < 1 or ipc < 1:
        raise ConfigError("K and ipc must be >= 1")
    return np.arange(ipc) % K + 1
