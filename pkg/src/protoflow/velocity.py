"""Velocity fields for the linear interpolant ``z_t = (1 - t) z0 + t z1``.

Two implementations share the ``VelocityField`` contract:

* ``OracleMixtureField`` gives the exact marginal velocity when the target is a
  Gaussian mixture and the source is ``N(0, I)``.
* ``TrainableField`` is a small tanh MLP fit with the conditional flow-matching
  regression loss.

Fields accept a single latent ``(D,)`` or a batch ``(B, D)``. Every call to
``eval`` or ``eval_with_clean`` counts as one function evaluation (NFE),
whatever the batch size.
"""

from __future__ import annotations

import json
import threading
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, NamedTuple, Sequence

import numpy as np
from scipy.special import logsumexp, softmax

from .errors import ConfigError, DataError, DivergenceError, DomainError, ShapeError
from .latent_space import ClassPool, MixtureSpec

EPS_T = 1e-3


def clean_from_velocity(t: float, z: np.ndarray, u: np.ndarray) -> np.ndarray:
    """Terminal-latent estimate implied by velocity ``u`` at ``(t, z)``."""
    return z + (1.0 - t) * u


def cfg_combine(u_cond: np.ndarray, u_uncond: np.ndarray, gamma: float) -> np.ndarray:
    if gamma == 0:
        return u_cond
    return u_cond + gamma * (u_cond - u_uncond)


class VelocityField:
    """Base class: subclasses implement ``_velocity(t, z, y)``.

    ``y=None`` asks for the unconditional (class-marginal) velocity.
    """

    dim: int
    num_classes: int

    def __init__(self):
        self._nfe = 0
        self._nfe_lock = threading.Lock()

    @property
    def nfe(self) -> int:
        return self._nfe

    def reset_nfe(self) -> None:
        with self._nfe_lock:
            self._nfe = 0

    def _count(self) -> None:
        with self._nfe_lock:
            self._nfe += 1

    def _velocity(self, t: float, z: np.ndarray, y) -> np.ndarray:
        raise NotImplementedError

    def eval(self, t: float, z: np.ndarray, y=None) -> np.ndarray:
        self._count()
        return self._velocity(t, np.asarray(z, dtype=np.float64), y)

    def eval_with_clean(self, t: float, z: np.ndarray, y=None) -> tuple[np.ndarray, np.ndarray]:
        """Velocity and clean prediction from a single evaluation."""
        z = np.asarray(z, dtype=np.float64)
        u = self.eval(t, z, y)
        return u, clean_from_velocity(t, z, u)

    def predict_clean(self, t: float, z: np.ndarray, y=None) -> np.ndarray:
        return self.eval_with_clean(t, z, y)[1]


class CFGField(VelocityField):
    """Classifier-free guidance wrapper; costs two base evaluations per query."""

    def __init__(self, base: VelocityField, gamma: float = 0.3):
        self.base = base
        self.gamma = float(gamma)
        self.dim = base.dim
        self.num_classes = base.num_classes

    @property
    def nfe(self) -> int:
        return self.base.nfe

    def reset_nfe(self) -> None:
        self.base.reset_nfe()

    def eval(self, t, z, y=None):
        u_cond = self.base.eval(t, z, y)
        u_uncond = self.base.eval(t, z, None)
        return cfg_combine(u_cond, u_uncond, self.gamma)


class ConstantField(VelocityField):
    """``u(t, z, y) = v`` everywhere; used for solver checks."""

    def __init__(self, v: Sequence[float], num_classes: int = 1):
        super().__init__()
        self.v = np.asarray(v, dtype=np.float64)
        self.dim = self.v.shape[0]
        self.num_classes = num_classes

    def _velocity(self, t, z, y):
        return np.broadcast_to(self.v, z.shape).copy()


# -- analytic field ------------------------------------------------------------

def _check_time(t: float, eps: float = EPS_T) -> None:
    if t < 0 or 1.0 - t < eps:
        raise DomainError(f"t={t} outside [0, 1 - {eps}]")


class OracleMixtureField(VelocityField):
    """Exact marginal velocity ``E[z1 - z0 | z_t = z]`` for a mixture target.

    Under component ``(m, s)`` the state ``z_t`` is ``N(t m, (1-t)^2 + t^2 s^2)``
    per coordinate, and the conditional velocity is affine in ``z``. The
    marginal velocity weights these by the posterior responsibilities.
    """

    def __init__(self, spec: MixtureSpec, eps_t: float = EPS_T):
        super().__init__()
        self.spec = spec
        self.eps_t = eps_t
        self.dim = spec.dim
        self.num_classes = spec.num_classes
        self._params = [spec.arrays(y) for y in range(spec.num_classes)]
        C = spec.num_classes
        self._uncond = (np.concatenate([p[0] for p in self._params]),
                        np.concatenate([p[1] for p in self._params]),
                        np.concatenate([p[2] / C for p in self._params]))

    def _components(self, y):
        if y is None:
            return self._uncond
        if not 0 <= y < self.num_classes:
            raise DataError(f"class {y} outside [0, {self.num_classes})")
        return self._params[y]

    def _log_resp(self, t, z, means, stds, weights):
        var = (1.0 - t) ** 2 + t**2 * stds**2              # (M, D)
        resid = z[..., None, :] - t * means                  # (..., M, D)
        loglik = -0.5 * (resid**2 / var + np.log(var)).sum(axis=-1)
        logits = np.log(np.maximum(weights, 1e-300)) + loglik
        logits = np.where(weights > 0, logits, -np.inf)
        return logits - logsumexp(logits, axis=-1, keepdims=True), var, resid

    def responsibilities(self, t: float, z: np.ndarray, y=None) -> np.ndarray:
        _check_time(t, self.eps_t)
        z = np.asarray(z, dtype=np.float64)
        log_r, _, _ = self._log_resp(t, z, *self._components(y))
        return np.exp(log_r)

    def _velocity(self, t, z, y):
        _check_time(t, self.eps_t)
        if z.shape[-1] != self.dim:
            raise ShapeError(f"latent dim {z.shape[-1]} != field dim {self.dim}")
        means, stds, weights = self._components(y)
        log_r, var, resid = self._log_resp(t, z, means, stds, weights)
        gain = (t * stds**2 - (1.0 - t)) / var               # (M, D)
        u_comp = means + gain * resid                        # (..., M, D)
        return np.einsum("...m,...md->...d", np.exp(log_r), u_comp)


def oracle_velocity(t: float, z: np.ndarray, y: int, spec: MixtureSpec) -> np.ndarray:
    """One-off oracle query (does not go through a counted field)."""
    return OracleMixtureField(spec)._velocity(t, np.asarray(z, dtype=np.float64), y)


# -- trainable field -----------------------------------------------------------

class CFMBatch(NamedTuple):
    """Regression batch: times (B,), states (B, D), labels (B,) with -1 for
    unconditional, and target velocities (B, D)."""

    t: np.ndarray
    z_t: np.ndarray
    y: np.ndarray
    target: np.ndarray


def unit_weight(t: np.ndarray) -> np.ndarray:
    return np.ones_like(t)


class TrainableField(VelocityField):
    """Fully connected tanh network on ``[t, z, one_hot(y)]``.

    ``hidden=()`` gives a purely linear map, which is handy for gradient checks.
    """

    def __init__(self, dim: int, num_classes: int, hidden: Sequence[int] = (64, 64),
                 seed: int = 0):
        super().__init__()
        if any(h < 1 or h > 64 for h in hidden) or len(hidden) > 2:
            raise ConfigError("hidden layers: at most two, each of width 1..64")
        self.dim = dim
        self.num_classes = num_classes
        self.hidden = tuple(hidden)
        self.steps = 0
        rng = np.random.default_rng(seed)
        sizes = [1 + dim + num_classes, *self.hidden, dim]
        self.params: list[np.ndarray] = []
        for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
            self.params.append(rng.normal(0.0, 1.0 / np.sqrt(fan_in), (fan_in, fan_out)))
            self.params.append(np.zeros(fan_out))

    @property
    def num_params(self) -> int:
        return sum(p.size for p in self.params)

    def get_flat(self) -> np.ndarray:
        return np.concatenate([p.ravel() for p in self.params])

    def set_flat(self, flat: np.ndarray) -> None:
        flat = np.asarray(flat, dtype=np.float64)
        if flat.size != self.num_params:
            raise ShapeError(f"expected {self.num_params} parameters, got {flat.size}")
        out, i = [], 0
        for p in self.params:
            out.append(flat[i:i + p.size].reshape(p.shape).copy())
            i += p.size
        self.params = out

    def _inputs(self, t, z, y) -> np.ndarray:
        z = np.atleast_2d(z)
        B = z.shape[0]
        t = np.broadcast_to(np.asarray(t, dtype=np.float64), (B,))
        labels = np.full(B, -1) if y is None else np.broadcast_to(np.asarray(y), (B,))
        onehot = np.zeros((B, self.num_classes))
        cond = labels >= 0
        onehot[np.nonzero(cond)[0], labels[cond]] = 1.0
        return np.concatenate([t[:, None], z, onehot], axis=1)

    def _forward(self, x):
        acts = [x]
        h = x
        n_layers = len(self.params) // 2
        for i in range(n_layers):
            W, b = self.params[2 * i], self.params[2 * i + 1]
            h = h @ W + b
            if i < n_layers - 1:
                h = np.tanh(h)
            acts.append(h)
        return h, acts

    def _velocity(self, t, z, y):
        out, _ = self._forward(self._inputs(t, z, y))
        return out if np.ndim(z) == 2 else out[0]

    def loss_and_grad(self, batch: CFMBatch,
                      weight: Callable[[np.ndarray], np.ndarray] = unit_weight):
        """Weighted CFM loss and its gradient with respect to ``self.params``."""
        x = self._inputs(batch.t, batch.z_t, batch.y)
        out, acts = self._forward(x)
        lam = weight(np.asarray(batch.t, dtype=np.float64))
        resid = out - batch.target
        B = len(resid)
        loss = float(np.mean(lam * np.sum(resid**2, axis=1)))
        delta = 2.0 * lam[:, None] * resid / B
        grads = [None] * len(self.params)
        n_layers = len(self.params) // 2
        for i in reversed(range(n_layers)):
            grads[2 * i] = acts[i].T @ delta
            grads[2 * i + 1] = delta.sum(axis=0)
            if i > 0:
                delta = (delta @ self.params[2 * i].T) * (1.0 - acts[i] ** 2)
        return loss, grads

    def save(self, path: str | Path) -> None:
        """Write parameters as raw little-endian float64 plus a JSON shape sidecar."""
        path = Path(path)
        self.get_flat().astype("<f8").tofile(path)
        meta = {"dim": self.dim, "num_classes": self.num_classes, "hidden": list(self.hidden),
                "steps": self.steps, "shapes": [list(p.shape) for p in self.params]}
        path.with_suffix(path.suffix + ".json").write_text(json.dumps(meta, indent=2) + "\n")

    @classmethod
    def load(cls, path: str | Path) -> "TrainableField":
        path = Path(path)
        meta = json.loads(path.with_suffix(path.suffix + ".json").read_text())
        field = cls(meta["dim"], meta["num_classes"], meta["hidden"])
        if [list(p.shape) for p in field.params] != meta["shapes"]:
            raise ShapeError("sidecar shapes do not match the architecture")
        field.set_flat(np.fromfile(path, dtype="<f8"))
        field.steps = meta["steps"]
        return field


def cfm_loss(batch: CFMBatch, field: VelocityField,
             weight: Callable[[np.ndarray], np.ndarray] = unit_weight) -> float:
    """Mean of ``weight(t) * ||field(t, z_t, y) - target||^2`` over the batch."""
    t = np.asarray(batch.t, dtype=np.float64)
    if len(t) == 0:
        raise DataError("empty CFM batch")
    if isinstance(field, TrainableField):
        pred = field.eval(t, batch.z_t, batch.y)
    else:
        pred = np.stack([field.eval(float(ti), zi, None if yi < 0 else int(yi))
                         for ti, zi, yi in zip(t, batch.z_t, batch.y)])
    return float(np.mean(weight(t) * np.sum((pred - batch.target) ** 2, axis=1)))


def draw_cfm_batch(pool: ClassPool, size: int, rng: np.random.Generator,
                   p_uncond: float = 0.0) -> CFMBatch:
    X, labels = pool.stacked()
    idx = rng.integers(len(X), size=size)
    z1 = X[idx]
    z0 = rng.standard_normal(z1.shape)
    t = rng.random(size)
    y = labels[idx].copy()
    if p_uncond > 0:
        y[rng.random(size) < p_uncond] = -1
    z_t = (1.0 - t)[:, None] * z0 + t[:, None] * z1
    return CFMBatch(t, z_t, y, z1 - z0)


@dataclass
class TrainingLog:
    losses: list[float]
    initial_eval_loss: float
    final_eval_loss: float


def train_field(pool: ClassPool, epochs: int = 20, batch_size: int = 128, lr: float = 1e-3,
                seed: int = 0, hidden: Sequence[int] = (64, 64), p_uncond: float = 0.1,
                weight: Callable[[np.ndarray], np.ndarray] = unit_weight,
                eval_size: int = 2048) -> tuple[TrainableField, TrainingLog]:
    """Fit a ``TrainableField`` to ``pool`` with Adam on the CFM loss.

    The loss on a fixed held-out draw is reported before and after training.
    """
    if len(pool) == 0:
        raise DataError("cannot train on an empty pool")
    rng = np.random.default_rng(seed)
    field = TrainableField(pool.dim, pool.num_classes, hidden, seed=int(rng.integers(2**31)))
    eval_batch = draw_cfm_batch(pool, eval_size, np.random.default_rng([seed, 1]))
    initial, _ = field.loss_and_grad(eval_batch, weight)

    beta1, beta2, eps = 0.9, 0.999, 1e-8
    m = [np.zeros_like(p) for p in field.params]
    v = [np.zeros_like(p) for p in field.params]
    steps_per_epoch = max(1, -(-len(pool) // batch_size))
    losses = []
    for epoch in range(epochs):
        for _ in range(steps_per_epoch):
            batch = draw_cfm_batch(pool, batch_size, rng, p_uncond)
            loss, grads = field.loss_and_grad(batch, weight)
            if not np.isfinite(loss):
                raise DivergenceError("non-finite training loss", step=field.steps)
            field.steps += 1
            for i, g in enumerate(grads):
                m[i] = beta1 * m[i] + (1 - beta1) * g
                v[i] = beta2 * v[i] + (1 - beta2) * g**2
                mhat = m[i] / (1 - beta1**field.steps)
                vhat = v[i] / (1 - beta2**field.steps)
                field.params[i] = field.params[i] - lr * mhat / (np.sqrt(vhat) + eps)
            losses.append(loss)
    final, _ = field.loss_and_grad(eval_batch, weight)
    field.reset_nfe()
    return field, TrainingLog(losses, initial, final)
