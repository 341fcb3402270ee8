"""
Which concepts does the detector lean on?
=========================================

A concept vector is the direction in feature space that separates images
showing a concept from images that do not. Projecting the loss gradient of
each environment onto that direction, and measuring how much the
projection varies from environment to environment, gives the concept
sensitivity score. A concept whose influence changes across environments
behaves like a shortcut rather than a stable cue.

The scores then turn into sampling weights: clusters that hold sensitive
concepts and are small get picked more often as augmentation partners.
"""

import numpy as np

from fairscope.clustering import fit_clusters, form_environments
from fairscope.concepts import css, css_report, fit_concept_vector, gradient_matrix, presence_sets, sampling_weights
from fairscope.data import GenConfig, default_concept_bank, generate_concept_set, generate_split
from fairscope.model import TrainConfig, features, train
from fairscope.numerics import make_rng

# %%
# Hand-sized example: two environments whose gradient matrices differ only
# along the first feature axis.
M1 = np.array([[1.0, 0.0], [0.0, 1.0]])
M2 = np.array([[3.0, 0.0], [0.0, 1.0]])
axis_x = fit_concept_vector([[1.0, 0.0]] * 4, [[-1.0, 0.0]] * 4, "x")
axis_y = fit_concept_vector([[0.0, 1.0]] * 4, [[0.0, -1.0]] * 4, "y")
for r in css([axis_x, axis_y], [M1, M2]):
    print(f"concept {r.concept}: score {r.score}, dominant class {r.dominant_class}")

# %%
# The same computation on a trained detector.
cfg = GenConfig()
videos = generate_split(cfg, "train")
frames = np.concatenate([v.frames for v in videos])
labels = np.concatenate([np.full(v.n_frames, v.label) for v in videos])
params = train(frames, labels, TrainConfig(seed=42)).params

concepts = []
for i, spec in enumerate(default_concept_bank(cfg.groups)):
    pos, neg = generate_concept_set(spec, 200, seed=i, cfg=cfg)
    concepts.append(fit_concept_vector(features(params, pos), features(params, neg), spec.name, seed=i))
    print(f"{spec.name:12s} probe accuracy {concepts[-1].accuracy:.2f}")

H = features(params, frames)
clusters = fit_clusters(H, labels, 4, seed=0)
envs = form_environments(clusters, make_rng(0))
mats = [gradient_matrix(params, frames[e.members(clusters)], labels[e.members(clusters)]) for e in envs]
records = css(concepts, mats)
for row in css_report(records)[:4]:
    print(row)

# %%
# Sampling weights without and with the concept scores. A concept counts
# as present in a cluster when the cluster's mean projection onto the
# concept vector exceeds the mean over all frames.
sizes = clusters.sizes()
ps = sampling_weights(sizes, None, None, "PS")
presence = presence_sets(clusters, H, concepts)
for key in sorted(presence):
    print("cluster", key, "holds", sorted(presence[key]))
bs = sampling_weights(sizes, records, presence, "BS")
for y in (0, 1):
    print(f"class {y}: size-only {np.round(ps.prob[y], 3)}  concept-aware {np.round(bs.prob[y], 3)}")
