"""Evaluation of distilled sets: mode hits, coverage, representativeness,
moment errors, a linear probe, and NFE accounting.

All distances are Euclidean and are meant to be taken in standardized
latent coordinates; callers forward synthetic latents through the same
``Standardizer`` used for clustering.
"""

from __future__ import annotations

import csv
import json
import warnings
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy.spatial import cKDTree
from scipy.special import log_softmax

from .errors import AccountingError, DataError, EmptyInputError, ShapeError
from .latent_space import ClassPool, MixtureSpec
from .prototypes import PrototypeSet, _sq_dists


def nearest_prototype(z: np.ndarray, centers: np.ndarray) -> np.ndarray:
    """Index of the nearest center for each row (lowest index on ties)."""
    z = np.atleast_2d(np.asarray(z, dtype=np.float64))
    return _sq_dists(z, np.asarray(centers, dtype=np.float64)).argmin(axis=1)


def class_hit_rate(z: np.ndarray, assigned: Sequence[int] | None, centers: np.ndarray) -> float:
    """Percentage of rows whose nearest center is the assigned one (1-based)."""
    z = np.atleast_2d(np.asarray(z, dtype=np.float64))
    if assigned is None:
        raise DataError("synthetic samples carry no prototype assignment")
    assigned = np.asarray(assigned, dtype=int)
    if assigned.shape != (len(z),):
        raise DataError(f"expected {len(z)} assignments, got {assigned.shape}")
    if len(z) == 0:
        raise EmptyInputError("no samples to score")
    return 100.0 * float(np.mean(nearest_prototype(z, centers) + 1 == assigned))


def hit_rate(synthetic: ClassPool, assignments: dict[int, np.ndarray],
             protos: PrototypeSet) -> tuple[dict[int, float], float]:
    """Per-class hit rate (%) and its unweighted class average."""
    per_class = {}
    for y in synthetic.classes:
        if y not in assignments:
            raise DataError(f"class {y} has no prototype assignments")
        per_class[y] = class_hit_rate(synthetic[y], assignments[y], protos[y])
    return per_class, float(np.mean(list(per_class.values())))


def coverage(synthetic: np.ndarray, centers: np.ndarray) -> float:
    """Fraction of prototype cells holding at least one synthetic sample."""
    centers = np.atleast_2d(np.asarray(centers, dtype=np.float64))
    synthetic = np.asarray(synthetic, dtype=np.float64)
    if synthetic.size == 0:
        return 0.0
    occupied = np.unique(nearest_prototype(synthetic, centers))
    return len(occupied) / len(centers)


def representativeness(synthetic: np.ndarray, real: np.ndarray, k_nn: int = 50) -> float:
    """``1 / (1 + dbar)`` where dbar is the mean distance to the k_nn nearest real points."""
    real = np.atleast_2d(np.asarray(real, dtype=np.float64))
    synthetic = np.atleast_2d(np.asarray(synthetic, dtype=np.float64))
    if real.size == 0 or len(real) == 0:
        raise DataError("representativeness needs a non-empty real pool")
    if synthetic.size == 0:
        raise EmptyInputError("no synthetic samples")
    if synthetic.shape[1] != real.shape[1]:
        raise ShapeError(f"dimension mismatch: {synthetic.shape[1]} vs {real.shape[1]}")
    k = max(1, min(int(k_nn), len(real)))
    dist, _ = cKDTree(real).query(synthetic, k=k)
    dist = np.asarray(dist).reshape(len(synthetic), k)
    return 1.0 / (1.0 + float(dist.mean()))


def moment_error(samples: np.ndarray, spec: MixtureSpec, y: int = 0) -> tuple[float, float]:
    """(L2 error of the mean, Frobenius error of the covariance) against class y of ``spec``."""
    samples = np.atleast_2d(np.asarray(samples, dtype=np.float64))
    if len(samples) < 2:
        raise DataError("moment_error needs at least 2 samples")
    mean, cov = spec.moments(y)
    emp_mean = samples.mean(axis=0)
    emp_cov = np.cov(samples, rowvar=False, bias=True).reshape(cov.shape)
    return float(np.linalg.norm(emp_mean - mean)), float(np.linalg.norm(emp_cov - cov))


# -- downstream probe ----------------------------------------------------------

@dataclass
class ProbeConfig:
    iters: int = 500
    lr: float = 0.5
    l2: float = 1e-2
    init_scale: float = 0.01


def fit_probe(X: np.ndarray, y: np.ndarray, num_classes: int, seed: int,
              cfg: ProbeConfig = ProbeConfig()) -> tuple[np.ndarray, np.ndarray]:
    """Multinomial logistic regression by full-batch gradient descent."""
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=int)
    rng = np.random.default_rng(seed)
    W = cfg.init_scale * rng.standard_normal((X.shape[1], num_classes))
    b = np.zeros(num_classes)
    onehot = np.eye(num_classes)[y]
    n = len(X)
    for _ in range(cfg.iters):
        p = np.exp(log_softmax(X @ W + b, axis=1))
        r = (p - onehot) / n
        W -= cfg.lr * (X.T @ r + cfg.l2 * W)
        b -= cfg.lr * r.sum(axis=0)
    return W, b


def probe_accuracy(W: np.ndarray, b: np.ndarray, X: np.ndarray, y: np.ndarray) -> float:
    return float(np.mean((np.asarray(X) @ W + b).argmax(axis=1) == np.asarray(y)))


@dataclass
class EvalReport:
    variant: str
    accuracies: list[float]

    @property
    def mean(self) -> float:
        return float(np.mean(self.accuracies))

    @property
    def std(self) -> float:
        return float(np.std(self.accuracies))

    @property
    def seeds(self) -> int:
        return len(self.accuracies)


def probe_eval(train: ClassPool, test: ClassPool, seeds: int = 3, variant: str = "",
               cfg: ProbeConfig = ProbeConfig()) -> EvalReport:
    """Train a linear softmax probe on ``train`` once per seed and score it on ``test``."""
    if train.dim != test.dim:
        raise ShapeError(f"train dim {train.dim} != test dim {test.dim}")
    if seeds < 1:
        raise DataError("probe_eval needs at least one seed")
    Xtr, ytr = train.stacked()
    Xte, yte = test.stacked()
    if len(Xtr) == 0 or len(Xte) == 0:
        raise EmptyInputError("probe needs non-empty train and test sets")
    num_classes = max(train.num_classes, test.num_classes)
    if len(np.unique(ytr)) < 2:
        warnings.warn("probe trained on a single class; it can only predict that class",
                      RuntimeWarning, stacklevel=2)
    accs = []
    for seed in range(seeds):
        W, b = fit_probe(Xtr, ytr, num_classes, seed, cfg)
        accs.append(probe_accuracy(W, b, Xte, yte))
    return EvalReport(variant, accs)


# -- NFE accounting --------------------------------------------------------------

@dataclass
class NFEReport:
    total: int
    per_sample: list[int]
    expected_per_sample: int


def closed_form_nfe(steps: int, substeps: int, method: str, cfg_active: bool) -> int:
    evals = {"euler": 1, "heun": 2}[method]
    return steps * substeps * evals * (2 if cfg_active else 1)


def nfe_report(records, steps: int, substeps: int) -> NFEReport:
    """Sum recorded field evaluations and check each against the closed form."""
    if not records:
        raise EmptyInputError("no trajectory records")
    per_sample = [int(r.nfe) for r in records]
    expected = [closed_form_nfe(steps, substeps, r.method, r.cfg_active) for r in records]
    bad = [i for i, (a, e) in enumerate(zip(per_sample, expected)) if a != e]
    if bad:
        i = bad[0]
        raise AccountingError(f"record {i}: counted {per_sample[i]} evaluations, expected {expected[i]}")
    return NFEReport(sum(per_sample), per_sample, expected[0])


# -- combined report -----------------------------------------------------------

@dataclass
class CoverageReport:
    variant: str
    hit_rate: dict[int, float]
    coverage: dict[int, float]
    representativeness: dict[int, float]
    mean_error: dict[int, float] = field(default_factory=dict)
    cov_error: dict[int, float] = field(default_factory=dict)
    total_nfe: int = 0

    def average(self, name: str) -> float:
        vals = list(getattr(self, name).values())
        return float(np.mean(vals)) if vals else float("nan")

    def summary(self) -> dict:
        out = {"variant": self.variant, "total_nfe": self.total_nfe}
        for name in ("hit_rate", "coverage", "representativeness", "mean_error", "cov_error"):
            if getattr(self, name):
                out[name] = self.average(name)
        return out


def coverage_report(variant: str, synthetic_std: ClassPool, assignments: dict[int, np.ndarray],
                    protos_std: PrototypeSet, real_std: ClassPool, k_nn: int = 50,
                    synthetic_model: ClassPool | None = None, spec: MixtureSpec | None = None,
                    total_nfe: int = 0) -> CoverageReport:
    """Evaluate one synthetic set. Moment errors need the model-space set and a target spec."""
    hits, _ = hit_rate(synthetic_std, assignments, protos_std)
    cov = {y: coverage(synthetic_std[y], protos_std[y]) for y in synthetic_std.classes}
    rep = {y: representativeness(synthetic_std[y], real_std[y], k_nn) for y in synthetic_std.classes}
    mean_err, cov_err = {}, {}
    if spec is not None and synthetic_model is not None:
        for y in synthetic_model.classes:
            if len(synthetic_model[y]) >= 2:
                mean_err[y], cov_err[y] = moment_error(synthetic_model[y], spec, y)
    return CoverageReport(variant, hits, cov, rep, mean_err, cov_err, total_nfe)


def write_coverage_csv(report: CoverageReport, path: str | Path) -> None:
    """One row per class plus a final ``average`` row."""
    cols = ["hit_rate", "coverage", "representativeness"]
    if report.mean_error:
        cols += ["mean_error", "cov_error"]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["class"] + cols)
        for y in sorted(report.hit_rate):
            w.writerow([y] + [f"{getattr(report, c)[y]:.10g}" for c in cols])
        w.writerow(["average"] + [f"{report.average(c):.10g}" for c in cols])


def write_summary(data: dict, path: str | Path) -> None:
    with open(path, "w") as fh:
        json.dump(data, fh, indent=2, sort_keys=True)
        fh.write("\n")


def eval_summary(report: EvalReport) -> dict:
    return {"variant": report.variant, "probe_mean": report.mean, "probe_std": report.std,
            "seeds": report.seeds, "accuracies": list(report.accuracies)}


def nfe_summary(report: NFEReport) -> dict:
    d = asdict(report)
    d.pop("per_sample")
    return d
