"""
Prototypes from a latent pool
=============================

Cluster each class of a toy latent pool into K prototypes with k-means++
seeding and Lloyd refinement, then compare the two prototype modes.
"""

import numpy as np

from protoflow.latent_space import fit_standardizer, sample_mixture_dataset
from protoflow.prototypes import build_prototypes, kmeans_objective
from protoflow.scenarios import desk8_spec

# two classes, eight well separated modes each
spec = desk8_spec()
pool = sample_mixture_dataset(spec, n_per_class=400, seed=0)
print("classes:", pool.classes, "counts:", pool.counts())

# clustering happens on standardized latents
st = fit_standardizer(pool)
pool_std = pool.map(st.forward)

protos = build_prototypes(pool_std, K=8, seed=0)
for y in protos.classes:
    print(f"class {y}: objective {kmeans_objective(pool_std[y], protos[y]):.2f}")

# with one prototype per mode, every true mode mean has a prototype nearby
true_modes = st.forward(spec.arrays(0)[0])
gap = np.linalg.norm(true_modes[:, None] - protos[0][None], axis=-1).min(axis=1)
print("distance from each class-0 mode to its closest prototype:", np.round(gap, 3))

# closest_point mode snaps every center onto a real member of the pool
snapped = build_prototypes(pool_std, K=8, mode="closest_point", seed=0)
members = {tuple(row) for row in pool_std[0]}
print("class-0 prototypes are pool members:", all(tuple(c) in members for c in snapped[0]))

# back to model space for sampling
protos_model = protos.mapped(st.inverse)
print("first class-0 prototype in model space:", np.round(protos_model[0][0], 2))
