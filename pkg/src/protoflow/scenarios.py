"""Bundled benchmark mixtures and a one-call experiment runner."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .guided_sampler import GuidanceConfig, SolverConfig, SynthesisResult, synthesize_set
from .latent_space import ClassPool, MixtureSpec, Standardizer, fit_standardizer, sample_mixture_dataset
from .metrics import hit_rate
from .prototypes import PrototypeSet, build_prototypes
from .velocity import OracleMixtureField


def desk8_spec(ax: float = 6.0, by: float = 12.0, offset: float = 6.0, std: float = 0.5) -> MixtureSpec:
    """Two classes, each an 8-mode ring on an ellipse.

    Class y is centered at ``(+-offset, 0)``; its modes sit at angles
    ``2 pi (j + 1/2) / 8`` on the ellipse with semi-axes ``ax`` (along the
    class offset) and ``by``. Every mode is isotropic with ``std``.
    """
    angles = 2 * np.pi * (np.arange(8) + 0.5) / 8
    classes = []
    for y, sign in enumerate((1.0, -1.0)):
        center = np.array([sign * offset, 0.0])
        modes = center + np.stack([ax * np.cos(angles), by * np.sin(angles)], axis=1)
        classes.append([(m, std, 1.0) for m in modes])
    return MixtureSpec.build(classes)


SCENARIOS = {"desk8": desk8_spec}


def scenario_spec(name: str) -> MixtureSpec:
    from .errors import ConfigError

    try:
        return SCENARIOS[name]()
    except KeyError:
        raise ConfigError(f"unknown scenario {name!r}; choose from {sorted(SCENARIOS)}") from None


@dataclass
class Experiment:
    """Everything needed to distill and score one seed of a mixture benchmark."""

    spec: MixtureSpec
    pool: ClassPool
    standardizer: Standardizer
    protos_std: PrototypeSet
    protos: PrototypeSet
    field: OracleMixtureField

    def synthesize(self, gcfg: GuidanceConfig = GuidanceConfig(), scfg: SolverConfig = SolverConfig(),
                   ipc: int = 8, seed: int = 0, guided: bool = True, cfg_scale: float = 0.0,
                   workers: int = 1) -> SynthesisResult:
        return synthesize_set(self.protos, self.field, gcfg, scfg, ipc, seed, cfg_scale,
                              guided=guided, workers=workers)

    def hit_rate(self, result: SynthesisResult) -> float:
        return hit_rate(result.latents.map(self.standardizer.forward), result.assignments,
                        self.protos_std)[1]


def prepare(spec: MixtureSpec, seed: int, n_per_class: int = 400, K: int = 8) -> Experiment:
    """Sample a pool, standardize it, cluster it, and build the exact oracle field."""
    pool = sample_mixture_dataset(spec, n_per_class, seed)
    st = fit_standardizer(pool)
    protos_std = build_prototypes(pool.map(st.forward), K, seed=seed)
    return Experiment(spec, pool, st, protos_std, protos_std.mapped(st.inverse),
                      OracleMixtureField(spec))
