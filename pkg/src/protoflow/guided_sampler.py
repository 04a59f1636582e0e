"""Prototype-guided flow-matching sampler.

The guided ODE adds a bounded pull toward an assigned prototype to the base
velocity::

    dz/dt = u_phi + g(s) * alpha * lambda * (mu - zhat1)
    alpha = min(1, rho(s) * |u_phi| / (|u_proto| + c))

where ``zhat1`` is the field's clean prediction, ``rho`` decays linearly from
``rho0`` to ``rho_min`` over ``[0, s_end]`` and the gate ``g`` switches the
pull off after ``s_end``. The initial noise may be pulled toward the
prototype before integration (warm start).
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field as dc_field
from typing import Callable, NamedTuple

import numpy as np

from .errors import ConfigError, DataError, DivergenceError, EmptyInputError
from .latent_space import ClassPool, LatentCodec, codec_decode
from .prototypes import PrototypeSet, assign_prototypes
from .velocity import EPS_T, CFGField, VelocityField


@dataclass(frozen=True)
class GuidanceConfig:
    lam: float = 0.5
    s_end: float = 0.6
    rho0: float = 0.5
    rho_min: float = 0.1
    c: float = 1e-8
    eta_init: float = 0.09

    def __post_init__(self):
        vals = (self.lam, self.s_end, self.rho0, self.rho_min, self.c, self.eta_init)
        if not all(np.isfinite(v) for v in vals):
            raise ConfigError("guidance parameters must be finite")
        if self.lam < 0:
            raise ConfigError(f"lambda must be >= 0, got {self.lam}")
        if not 0 < self.s_end <= 1:
            raise ConfigError(f"s_end must lie in (0, 1], got {self.s_end}")
        if self.rho0 <= 0:
            raise ConfigError(f"rho0 must be > 0, got {self.rho0}")
        if not 0 <= self.rho_min <= self.rho0:
            raise ConfigError(f"need 0 <= rho_min <= rho0, got rho_min={self.rho_min}, rho0={self.rho0}")
        if self.c <= 0:
            raise ConfigError(f"c must be > 0, got {self.c}")
        if not 0 <= self.eta_init <= 1:
            raise ConfigError(f"eta_init must lie in [0, 1], got {self.eta_init}")


@dataclass(frozen=True)
class SolverConfig:
    steps: int = 48
    substeps: int = 4
    method: str = "heun"

    def __post_init__(self):
        if self.steps < 1 or self.substeps < 1:
            raise ConfigError("steps and substeps must be >= 1")
        if self.method not in ("euler", "heun"):
            raise ConfigError(f"unknown solver method {self.method!r}")

    @property
    def n_intervals(self) -> int:
        return self.steps * self.substeps

    @property
    def evals_per_interval(self) -> int:
        return 1 if self.method == "euler" else 2

    def grid(self) -> np.ndarray:
        return np.linspace(0.0, 1.0, self.n_intervals + 1)

    def expected_nfe(self, cfg_active: bool = False) -> int:
        return self.n_intervals * self.evals_per_interval * (2 if cfg_active else 1)


@dataclass
class TrajectoryRecord:
    """One trajectory: endpoints and the per-interval guidance log."""

    y: int
    k: int
    z1: np.ndarray
    zhat1: np.ndarray
    t: np.ndarray
    norm_u_phi: np.ndarray
    norm_u_proto: np.ndarray
    alpha: np.ndarray
    g: np.ndarray
    nfe: int
    cfg_active: bool = False
    method: str = "heun"
    path: np.ndarray | None = dc_field(default=None, repr=False)


# -- guidance primitives -------------------------------------------------------

def warm_start(z0: np.ndarray, mu: np.ndarray, eta: float) -> np.ndarray:
    if not 0 <= eta <= 1:
        raise ConfigError(f"eta must lie in [0, 1], got {eta}")
    return (1.0 - eta) * z0 + eta * mu


def progress(t: float) -> float:
    return float(t)


def gate(s: float, s_end: float) -> int:
    return int(s <= s_end)


def rho_schedule(s: float, cfg: GuidanceConfig) -> float:
    return cfg.rho0 + (cfg.rho_min - cfg.rho0) * s / cfg.s_end


def prototype_control(zhat1: np.ndarray, mu: np.ndarray, lam: float) -> np.ndarray:
    return lam * (mu - zhat1)


def _norm(v: np.ndarray) -> np.ndarray:
    return np.sqrt(np.sum(v * v, axis=-1))


def trust_region_scale(u_phi: np.ndarray, u_proto: np.ndarray, rho: float, c: float):
    """Scale in [0, 1] keeping ``|alpha * u_proto| <= rho * |u_phi|``.

    Works row-wise on batches; returns a scalar for single vectors.
    """
    if c <= 0:
        raise ConfigError("c must be > 0")
    return np.minimum(1.0, rho * _norm(u_phi) / (_norm(u_proto) + c))


def prototype_targets(protos: PrototypeSet, y: int, k) -> np.ndarray:
    """Centers for 1-based prototype indices ``k`` of class ``y``."""
    k = np.asarray(k, dtype=int)
    if y not in protos.centers or np.any(k < 1) or np.any(k > protos.K):
        raise DataError(f"no prototype {k.tolist()} for class {y}")
    return protos[y][k - 1]


class GuidanceStep(NamedTuple):
    velocity: np.ndarray
    zhat: np.ndarray
    norm_u_phi: np.ndarray
    norm_u_proto: np.ndarray
    alpha: np.ndarray
    g: int


def guided_velocity(t: float, z: np.ndarray, y: int, k, field: VelocityField,
                    protos: PrototypeSet, cfg: GuidanceConfig) -> GuidanceStep:
    """Guided velocity at ``(t, z)`` for class ``y`` and prototype ``k`` (1-based).

    ``z`` may be a batch ``(B, D)`` with ``k`` an index array of length B.
    """
    u_phi, zhat = field.eval_with_clean(t, z, y)
    n_phi = _norm(u_phi)
    s = progress(t)
    g = gate(s, cfg.s_end)
    if not g:
        zeros = np.zeros_like(n_phi)
        return GuidanceStep(u_phi, zhat, n_phi, zeros, zeros, 0)
    mu = prototype_targets(protos, y, k)
    u_proto = prototype_control(zhat, mu, cfg.lam)
    alpha = trust_region_scale(u_phi, u_proto, rho_schedule(s, cfg), cfg.c)
    velocity = u_phi + np.asarray(alpha)[..., None] * u_proto
    return GuidanceStep(velocity, zhat, n_phi, _norm(u_proto), alpha, 1)


# -- integration ---------------------------------------------------------------

class _Tally(VelocityField):
    """Counts evaluations of ``base`` made through this view only."""

    def __init__(self, base: VelocityField):
        super().__init__()
        self.base = base
        self.dim = base.dim
        self.num_classes = base.num_classes

    def eval(self, t, z, y=None):
        self._count()
        return self.base.eval(t, z, y)


def _query_field(field: VelocityField, cfg_scale: float) -> tuple[_Tally, VelocityField]:
    tally = _Tally(field)
    return tally, (CFGField(tally, cfg_scale) if cfg_scale else tally)


StepFn = Callable[[float, np.ndarray], GuidanceStep]


def _solve(z0: np.ndarray, step_fn: StepFn, scfg: SolverConfig, keep_path: bool):
    """Explicit fixed-grid integration of ``dz/dt = step_fn(t, z).velocity``.

    Returns the final state, the clean prediction from the last evaluation,
    the first-stage log of every interval, and optionally the node states.
    """
    ts = scfg.grid()
    n = scfg.n_intervals
    B = z0.shape[0]
    log = {key: np.zeros((n, B)) for key in ("norm_u_phi", "norm_u_proto", "alpha", "g")}
    path = [z0] if keep_path else None
    z = z0
    zhat = None
    for i in range(n):
        t, t_next = ts[i], ts[i + 1]
        h = t_next - t
        first = step_fn(t, z)
        log["norm_u_phi"][i] = first.norm_u_phi
        log["norm_u_proto"][i] = first.norm_u_proto
        log["alpha"][i] = first.alpha
        log["g"][i] = first.g
        zhat = first.zhat
        if scfg.method == "euler":
            z = z + h * first.velocity
        else:
            # On the last interval the corrector node is pulled back to 1 - eps;
            # the two-stage weights for node fraction theta keep second order.
            theta = (min(t_next, 1.0 - EPS_T) - t) / h
            second = step_fn(t + theta * h, z + theta * h * first.velocity)
            zhat = second.zhat
            w = 0.5 / theta
            z = z + h * ((1.0 - w) * first.velocity + w * second.velocity)
        if not np.all(np.isfinite(z)):
            raise DivergenceError("non-finite solver state", step=i)
        if keep_path:
            path.append(z)
    return z, zhat, ts[:-1], log, (np.stack(path, axis=1) if keep_path else None)


def _records(y, ks, z1, zhat1, ts, log, path, nfe, cfg_active, method):
    return [TrajectoryRecord(y=y, k=int(ks[b]), z1=z1[b], zhat1=zhat1[b], t=ts,
                             norm_u_phi=log["norm_u_phi"][:, b],
                             norm_u_proto=log["norm_u_proto"][:, b],
                             alpha=log["alpha"][:, b], g=log["g"][:, b].astype(int),
                             nfe=nfe, cfg_active=cfg_active, method=method,
                             path=None if path is None else path[b])
            for b in range(z1.shape[0])]


def integrate_batch(z0: np.ndarray, y: int, k, field: VelocityField, protos: PrototypeSet,
                    gcfg: GuidanceConfig, scfg: SolverConfig, cfg_scale: float = 0.0,
                    keep_path: bool = False) -> list[TrajectoryRecord]:
    """Integrate the guided ODE for a batch of already warm-started latents."""
    z0 = np.atleast_2d(np.asarray(z0, dtype=np.float64))
    ks = np.broadcast_to(np.asarray(k, dtype=int), (z0.shape[0],))
    tally, query = _query_field(field, cfg_scale)

    def step_fn(t, z):
        return guided_velocity(t, z, y, ks, query, protos, gcfg)

    z1, zhat1, ts, log, path = _solve(z0, step_fn, scfg, keep_path)
    return _records(y, ks, z1, zhat1, ts, log, path, tally.nfe, bool(cfg_scale), scfg.method)


def integrate(z0: np.ndarray, y: int, k: int, field: VelocityField, protos: PrototypeSet,
              gcfg: GuidanceConfig, scfg: SolverConfig, cfg_scale: float = 0.0,
              keep_path: bool = False) -> TrajectoryRecord:
    return integrate_batch(z0, y, [k], field, protos, gcfg, scfg, cfg_scale, keep_path)[0]


def integrate_unguided(z0: np.ndarray, y: int, field: VelocityField, scfg: SolverConfig,
                       cfg_scale: float = 0.0, keep_path: bool = False,
                       k=1) -> list[TrajectoryRecord]:
    """Plain flow-matching sampler: the same solver with no guidance term."""
    z0 = np.atleast_2d(np.asarray(z0, dtype=np.float64))
    ks = np.broadcast_to(np.asarray(k, dtype=int), (z0.shape[0],))
    tally, query = _query_field(field, cfg_scale)

    def step_fn(t, z):
        u, zhat = query.eval_with_clean(t, z, y)
        zeros = np.zeros(z.shape[0])
        return GuidanceStep(u, zhat, _norm(u), zeros, zeros, 0)

    z1, zhat1, ts, log, path = _solve(z0, step_fn, scfg, keep_path)
    return _records(y, ks, z1, zhat1, ts, log, path, tally.nfe, bool(cfg_scale), scfg.method)


# -- decode-latent selection -----------------------------------------------------

def select_decode_latent(batch_z1: np.ndarray, batch_zhat1: np.ndarray) -> tuple[np.ndarray, str]:
    """Pick the candidate set whose per-sample norms scatter least.

    Returns the chosen ``(B, D)`` array and ``"z1"`` or ``"zhat1"``. Ties and
    single-sample batches keep the solver state ``z1``.
    """
    z1 = np.atleast_2d(np.asarray(batch_z1, dtype=np.float64))
    zhat = np.atleast_2d(np.asarray(batch_zhat1, dtype=np.float64))
    if z1.size == 0 or zhat.size == 0:
        raise EmptyInputError("empty candidate batch")
    if z1.shape != zhat.shape:
        raise DataError(f"candidate batches differ in shape: {z1.shape} vs {zhat.shape}")
    if len(z1) == 1:
        return z1, "z1"
    if np.std(_norm(zhat)) < np.std(_norm(z1)):
        return zhat, "zhat1"
    return z1, "z1"


# -- full synthesis ------------------------------------------------------------

@dataclass
class SynthesisResult:
    """Output of one synthesis run.

    ``latents`` holds the selected latents in the field's coordinates and
    ``samples`` their decoded vectors. ``assignments[y][i]`` is the 1-based
    prototype index given to sample i of class y.
    """

    latents: ClassPool
    samples: ClassPool
    assignments: dict[int, np.ndarray]
    choices: dict[int, str]
    records: list[TrajectoryRecord]
    guided: bool

    @property
    def total_nfe(self) -> int:
        return sum(r.nfe for r in self.records)


def base_noise(seed: int, y: int, k: int, dim: int) -> np.ndarray:
    """Source draw for sample k (1-based) of class y; one stream per (seed, y, k)."""
    return np.random.default_rng([seed, y, k]).standard_normal(dim)


def _synthesize_class(y, protos, field, gcfg, scfg, ipc, seed, cfg_scale, guided):
    ks = assign_prototypes(protos.K, ipc)
    z0 = np.stack([base_noise(seed, y, i + 1, protos.dim) for i in range(ipc)])
    try:
        if guided:
            if gcfg.eta_init > 0:
                z0 = warm_start(z0, prototype_targets(protos, y, ks), gcfg.eta_init)
            recs = integrate_batch(z0, y, ks, field, protos, gcfg, scfg, cfg_scale)
        else:
            recs = integrate_unguided(z0, y, field, scfg, cfg_scale, k=ks)
    except DivergenceError as exc:
        raise DivergenceError(f"class {y}: {exc}", step=exc.step) from exc
    chosen, flag = select_decode_latent(np.stack([r.z1 for r in recs]),
                                        np.stack([r.zhat1 for r in recs]))
    return chosen, flag, ks, recs


def synthesize_set(protos: PrototypeSet, field: VelocityField,
                   gcfg: GuidanceConfig = GuidanceConfig(), scfg: SolverConfig = SolverConfig(),
                   ipc: int = 10, seed: int = 0, cfg_scale: float = 0.0,
                   codec: LatentCodec = LatentCodec(), guided: bool = True,
                   workers: int = 1) -> SynthesisResult:
    """Distill ``ipc`` samples per class.

    ``protos`` must be expressed in the field's latent coordinates (map
    clustering-space prototypes back with ``PrototypeSet.mapped``). Each
    class is integrated as one batch, so results do not depend on
    ``workers``. ``guided=False`` runs the plain sampler from the same noise.
    """
    if ipc < 1:
        raise ConfigError("ipc must be >= 1")
    num_classes = field.num_classes
    missing = [y for y in range(num_classes) if y not in protos.centers]
    if missing:
        raise DataError(f"no prototypes for classes {missing}")

    def run(y):
        return _synthesize_class(y, protos, field, gcfg, scfg, ipc, seed, cfg_scale, guided)

    ys = list(range(num_classes))
    if workers > 1:
        with ThreadPoolExecutor(workers) as ex:
            results = list(ex.map(run, ys))
    else:
        results = [run(y) for y in ys]

    latents = {y: res[0] for y, res in zip(ys, results)}
    samples = {y: codec_decode(latents[y], codec) for y in ys}
    return SynthesisResult(
        latents=ClassPool(latents, protos.dim, num_classes),
        samples=ClassPool(samples, samples[0].shape[1], num_classes),
        assignments={y: res[2] for y, res in zip(ys, results)},
        choices={y: res[1] for y, res in zip(ys, results)},
        records=[r for res in results for r in res[3]],
        guided=guided,
    )


def write_trajectory_log(records: list[TrajectoryRecord], path) -> None:
    """CSV with columns class,k,step,t,norm_u_phi,norm_u_proto,alpha,g."""
    lines = ["class,k,step,t,norm_u_phi,norm_u_proto,alpha,g"]
    for r in records:
        for i in range(len(r.t)):
            lines.append(f"{r.y},{r.k},{i},{r.t[i]:.17g},{r.norm_u_phi[i]:.17g},"
                         f"{r.norm_u_proto[i]:.17g},{r.alpha[i]:.17g},{int(r.g[i])}")
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")
