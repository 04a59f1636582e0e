"""Latent pools, Gaussian-mixture targets, standardization and codecs.

All latents are float64 numpy arrays. A pool stores one ``(n_y, D)`` array per
class; a single latent is a ``(D,)`` vector.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Iterator, NamedTuple, Sequence

import numpy as np

from .errors import ConfigError, DataError, EmptyInputError, ParseError, SchemaError, ShapeError

EPS_STD = 1e-6


class LabeledLatent(NamedTuple):
    z: np.ndarray
    y: int


@dataclass(frozen=True)
class ClassPool:
    """Per-class buckets of latents sharing one dimension."""

    latents: dict[int, np.ndarray]
    dim: int
    num_classes: int

    def __post_init__(self):
        if self.dim < 1:
            raise ShapeError(f"dim must be >= 1, got {self.dim}")
        for y, arr in self.latents.items():
            if not 0 <= y < self.num_classes:
                raise SchemaError(f"class {y} outside [0, {self.num_classes})")
            if arr.ndim != 2 or arr.shape[1] != self.dim:
                raise ShapeError(f"class {y}: expected (n, {self.dim}), got {arr.shape}")
            if not np.all(np.isfinite(arr)):
                raise SchemaError(f"class {y}: non-finite coordinates")
            arr.setflags(write=False)

    @classmethod
    def from_arrays(cls, arrays: dict[int, np.ndarray] | Sequence[np.ndarray],
                    num_classes: int | None = None) -> "ClassPool":
        if not isinstance(arrays, dict):
            arrays = dict(enumerate(arrays))
        arrays = {int(y): np.array(a, dtype=np.float64, ndmin=2) for y, a in arrays.items()}
        if not arrays:
            raise EmptyInputError("no classes given")
        dim = next(iter(arrays.values())).shape[1]
        if num_classes is None:
            num_classes = max(arrays) + 1
        return cls(arrays, dim, num_classes)

    def __getitem__(self, y: int) -> np.ndarray:
        return self.latents.get(y, np.empty((0, self.dim)))

    def __iter__(self) -> Iterator[LabeledLatent]:
        for y in self.classes:
            for z in self.latents[y]:
                yield LabeledLatent(z, y)

    def __len__(self) -> int:
        return sum(len(a) for a in self.latents.values())

    @property
    def classes(self) -> list[int]:
        return sorted(self.latents)

    def counts(self) -> dict[int, int]:
        return {y: len(self.latents[y]) for y in self.classes}

    def stacked(self) -> tuple[np.ndarray, np.ndarray]:
        """All latents as one ``(N, D)`` array plus the ``(N,)`` label vector."""
        ys = self.classes
        if not ys:
            return np.empty((0, self.dim)), np.empty(0, dtype=int)
        X = np.concatenate([self.latents[y] for y in ys])
        labels = np.concatenate([np.full(len(self.latents[y]), y) for y in ys])
        return X, labels

    def map(self, fn) -> "ClassPool":
        out = {y: np.asarray(fn(a), dtype=np.float64) for y, a in self.latents.items()}
        dim = next(iter(out.values())).shape[1] if out else self.dim
        return ClassPool(out, dim, self.num_classes)


# -- delimited text format ---------------------------------------------------

def _parse_header(line: str) -> dict[str, str]:
    if not line.startswith("#"):
        raise ParseError("missing '#key=value' header", line=1)
    fields = {}
    for tok in line[1:].split():
        key, sep, val = tok.partition("=")
        if not sep:
            raise ParseError(f"bad header token {tok!r}", line=1)
        fields[key] = val
    return fields


def read_records(path: str | Path) -> tuple[dict[str, str], list[tuple[int, np.ndarray]]]:
    """Parse a ``#dim=D classes=C ...`` file into (header, [(label, vector)])."""
    text = Path(path).read_text()
    lines = text.splitlines()
    if not lines or not any(l.strip() for l in lines):
        raise EmptyInputError(f"{path}: empty file")
    header = _parse_header(lines[0].strip())
    try:
        dim = int(header["dim"])
        num_classes = int(header["classes"])
    except (KeyError, ValueError):
        raise ParseError("header must declare integer dim and classes", line=1) from None
    if dim < 1 or num_classes < 1:
        raise SchemaError("dim and classes must be positive")

    records = []
    for lineno, raw in enumerate(lines[1:], start=2):
        raw = raw.strip()
        if not raw or raw.startswith("#"):
            continue
        parts = raw.split(",")
        if len(parts) != dim + 1:
            raise ParseError(f"expected {dim + 1} fields, got {len(parts)}", line=lineno)
        try:
            label = int(parts[0])
            vec = np.array([float(p) for p in parts[1:]])
        except ValueError as exc:
            raise ParseError(str(exc), line=lineno) from None
        if not 0 <= label < num_classes:
            raise SchemaError(f"line {lineno}: label {label} outside [0, {num_classes})")
        if not np.all(np.isfinite(vec)):
            raise ParseError("non-finite value", line=lineno)
        records.append((label, vec))
    return header, records


def load_dataset(path: str | Path) -> ClassPool:
    header, records = read_records(path)
    dim, num_classes = int(header["dim"]), int(header["classes"])
    if not records:
        raise EmptyInputError(f"{path}: header but no records")
    buckets: dict[int, list[np.ndarray]] = {}
    for label, vec in records:
        buckets.setdefault(label, []).append(vec)
    arrays = {y: np.stack(v) for y, v in buckets.items()}
    return ClassPool(arrays, dim, num_classes)


def format_row(label: int, vec: np.ndarray) -> str:
    return ",".join([str(int(label))] + [format(float(v), ".17g") for v in vec])


def write_rows(path: str | Path, header: dict[str, object],
               rows: Sequence[tuple[int, np.ndarray]]) -> None:
    head = "#" + " ".join(f"{k}={v}" for k, v in header.items())
    body = [format_row(y, v) for y, v in rows]
    Path(path).write_text("\n".join([head, *body]) + "\n")


def save_dataset(pool: ClassPool, path: str | Path) -> None:
    rows = [(y, z) for z, y in pool]
    write_rows(path, {"dim": pool.dim, "classes": pool.num_classes}, rows)


# -- mixture targets -----------------------------------------------------------

@dataclass(frozen=True)
class Component:
    mean: np.ndarray
    std: float | np.ndarray
    weight: float

    def std_vector(self) -> np.ndarray:
        return np.broadcast_to(np.asarray(self.std, dtype=np.float64), self.mean.shape)


@dataclass(frozen=True)
class MixtureSpec:
    """Class-conditional Gaussian mixtures; ``classes[y]`` lists the components of class y.

    ``std`` is isotropic for specs built by hand. A per-dimension vector is
    allowed so a spec can be mapped through a standardizer exactly.
    """

    classes: tuple[tuple[Component, ...], ...]

    def __post_init__(self):
        if not self.classes:
            raise ConfigError("mixture spec has no classes")
        dim = None
        for y, comps in enumerate(self.classes):
            if not comps:
                raise ConfigError(f"class {y} has no components")
            w = np.array([c.weight for c in comps])
            if np.any(w < 0) or not np.isclose(w.sum(), 1.0, atol=1e-9):
                raise ConfigError(f"class {y}: weights must be non-negative and sum to 1")
            for c in comps:
                if not np.all(np.isfinite(c.mean)):
                    raise ConfigError(f"class {y}: non-finite mean")
                if np.any(np.asarray(c.std) < 0):
                    raise ConfigError(f"class {y}: negative std")
                dim = dim or c.mean.shape[0]
                if c.mean.shape != (dim,):
                    raise ConfigError(f"class {y}: mean dim {c.mean.shape} != ({dim},)")

    @classmethod
    def build(cls, classes) -> "MixtureSpec":
        """Build from nested ``[[(mean, std, weight), ...], ...]``; weights are normalized."""
        out = []
        for comps in classes:
            comps = list(comps)
            if not comps:
                raise ConfigError("class with no components")
            total = float(sum(w for _, _, w in comps))
            if total <= 0:
                raise ConfigError("component weights sum to zero")
            out.append(tuple(Component(np.asarray(m, dtype=np.float64),
                                       s if np.ndim(s) == 0 else np.asarray(s, dtype=np.float64),
                                       float(w) / total) for m, s, w in comps))
        return cls(tuple(out))

    @property
    def dim(self) -> int:
        return self.classes[0][0].mean.shape[0]

    @property
    def num_classes(self) -> int:
        return len(self.classes)

    def arrays(self, y: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """(means (M, D), stds (M, D), weights (M,)) for class y."""
        comps = self.classes[y]
        return (np.stack([c.mean for c in comps]),
                np.stack([c.std_vector() for c in comps]),
                np.array([c.weight for c in comps]))

    def moments(self, y: int) -> tuple[np.ndarray, np.ndarray]:
        """Analytic mean and covariance of class y."""
        means, stds, w = self.arrays(y)
        mean = w @ means
        second = np.einsum("m,mi,mj->ij", w, means, means) + np.diag(w @ stds**2)
        return mean, second - np.outer(mean, mean)

    def transformed(self, s: "Standardizer") -> "MixtureSpec":
        """The same mixture expressed in the standardized coordinates of ``s``."""
        return MixtureSpec(tuple(
            tuple(Component((c.mean - s.mu) / s.sigma, c.std_vector() / s.sigma, c.weight)
                  for c in comps)
            for comps in self.classes))

    def to_dict(self) -> dict:
        def std_out(std):
            return float(std) if np.ndim(std) == 0 else [float(v) for v in std]
        return {"dim": self.dim, "classes": {
            str(y): [{"mean": [float(v) for v in c.mean], "std": std_out(c.std), "weight": c.weight}
                     for c in comps]
            for y, comps in enumerate(self.classes)}}

    @classmethod
    def from_dict(cls, data: dict) -> "MixtureSpec":
        try:
            classes = data["classes"]
            keys = sorted(classes, key=int)
            if [int(k) for k in keys] != list(range(len(keys))):
                raise ConfigError("mixture classes must be numbered 0..C-1")
            return cls.build([[(c["mean"], c["std"], c["weight"]) for c in classes[k]]
                              for k in keys])
        except (KeyError, TypeError) as exc:
            raise ConfigError(f"malformed mixture spec: {exc}") from None

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2) + "\n")

    @classmethod
    def load(cls, path: str | Path) -> "MixtureSpec":
        try:
            data = json.loads(Path(path).read_text())
        except json.JSONDecodeError as exc:
            raise ConfigError(f"mixture file is not valid JSON: {exc}") from None
        return cls.from_dict(data)


def sample_mixture_dataset(spec: MixtureSpec, n_per_class: int, seed: int) -> ClassPool:
    """Draw ``n_per_class`` latents per class; class y uses the stream ``(seed, y)``."""
    if n_per_class < 1:
        raise ConfigError("n_per_class must be >= 1")
    arrays = {}
    for y in range(spec.num_classes):
        rng = np.random.default_rng([seed, y])
        means, stds, w = spec.arrays(y)
        idx = rng.choice(len(w), size=n_per_class, p=w)
        noise = rng.standard_normal((n_per_class, spec.dim))
        arrays[y] = means[idx] + stds[idx] * noise
    return ClassPool(arrays, spec.dim, spec.num_classes)


# -- standardization -----------------------------------------------------------

@dataclass(frozen=True)
class Standardizer:
    mu: np.ndarray
    sigma: np.ndarray

    def __post_init__(self):
        if self.mu.shape != self.sigma.shape or self.mu.ndim != 1:
            raise ShapeError("mu and sigma must be matching vectors")
        if np.any(self.sigma <= 0):
            raise ConfigError("sigma entries must be positive")

    @property
    def dim(self) -> int:
        return self.mu.shape[0]

    def forward(self, z: np.ndarray) -> np.ndarray:
        return standardize(z, self, "forward")

    def inverse(self, z: np.ndarray) -> np.ndarray:
        return standardize(z, self, "inverse")


def fit_standardizer(pool: ClassPool, eps: float = EPS_STD) -> Standardizer:
    X, _ = pool.stacked()
    if len(X) == 0:
        raise EmptyInputError("cannot fit a standardizer on an empty pool")
    mu = X.mean(axis=0)
    sigma = np.maximum(X.std(axis=0), eps)
    return Standardizer(mu, sigma)


def standardize(z: np.ndarray, s: Standardizer, direction: str = "forward") -> np.ndarray:
    z = np.asarray(z, dtype=np.float64)
    if z.shape[-1] != s.dim:
        raise ShapeError(f"latent dim {z.shape[-1]} != standardizer dim {s.dim}")
    if direction == "forward":
        return (z - s.mu) / s.sigma
    if direction == "inverse":
        return z * s.sigma + s.mu
    raise ConfigError(f"unknown direction {direction!r}")


# -- codecs --------------------------------------------------------------------

@dataclass(frozen=True)
class LatentCodec:
    """Stand-in for a frozen encoder/decoder pair.

    ``decode(l) = A @ l + b``; ``encode`` applies the pseudo-inverse, so the
    round trip is exact only for samples in the range of ``A``. ``s_vae``
    scales latents: the encoder multiplies by it and decoding divides first.
    """

    kind: str = "identity"
    A: np.ndarray | None = None
    b: np.ndarray | None = None
    s_vae: float = 1.0

    def __post_init__(self):
        if self.kind not in ("identity", "affine"):
            raise ConfigError(f"unknown codec kind {self.kind!r}")
        if self.kind == "affine":
            if self.A is None:
                raise ConfigError("affine codec needs a matrix A")
            A = np.asarray(self.A, dtype=np.float64)
            if A.ndim != 2 or np.linalg.matrix_rank(A) < A.shape[1]:
                raise ConfigError("affine codec matrix must have full column rank")
            object.__setattr__(self, "A", A)
            b = np.zeros(A.shape[0]) if self.b is None else np.asarray(self.b, dtype=np.float64)
            object.__setattr__(self, "b", b)
            object.__setattr__(self, "_pinv", np.linalg.pinv(A))

    def encode(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        if self.kind == "identity":
            z = x
        else:
            z = (x - self.b) @ self._pinv.T
        return z * self.s_vae

    def decode(self, latent: np.ndarray) -> np.ndarray:
        return codec_decode(latent, self)


def codec_decode(latent: np.ndarray, codec: LatentCodec) -> np.ndarray:
    if not codec.s_vae > 0:
        raise ConfigError(f"s_vae must be positive, got {codec.s_vae}")
    latent = np.asarray(latent, dtype=np.float64)
    if not np.all(np.isfinite(latent)):
        raise DataError("latent has non-finite entries")
    scaled = latent / codec.s_vae
    if codec.kind == "identity":
        return scaled
    return scaled @ codec.A.T + codec.b
