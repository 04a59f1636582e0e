"""
Warm-start ablation
===================

Blend the base noise with the target prototype before integration and
measure how the hit rate responds, averaged over ten seeds.
"""

import numpy as np

from protoflow.guided_sampler import GuidanceConfig, SolverConfig
from protoflow.scenarios import desk8_spec, prepare

spec = desk8_spec()
scfg = SolverConfig(48, 4, "heun")
etas = [0.0, 0.05, 0.09, 0.15, 0.3]

rows = {"fm": []} | {eta: [] for eta in etas}
for seed in range(10):
    ex = prepare(spec, seed)
    rows["fm"].append(ex.hit_rate(ex.synthesize(scfg=scfg, seed=seed, guided=False)))
    for eta in etas:
        res = ex.synthesize(GuidanceConfig(eta_init=eta), scfg, seed=seed)
        rows[eta].append(ex.hit_rate(res))

print(f"{'variant':>10} {'hit rate':>9} {'std':>6}")
for key, vals in rows.items():
    label = "FM" if key == "fm" else f"eta={key}"
    print(f"{label:>10} {np.mean(vals):9.1f} {np.std(vals):6.1f}")
