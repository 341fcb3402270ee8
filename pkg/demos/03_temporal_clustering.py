"""
Clustering frames with a temporal signal
========================================

Without group labels, the pipeline looks for structure in the detector's
own feature space. Frames are reduced with PCA, optionally extended with
the temporal difference to the previous frame, and clustered per class.
Pairing one real cluster with one fake cluster gives an environment.
"""

import numpy as np

from fairscope.clustering import build_cluster_inputs, fit_clusters, form_environments, temporal_difference
from fairscope.data import GenConfig, generate_split
from fairscope.model import TrainConfig, features, train
from fairscope.numerics import make_rng, pca_fit, pca_transform

# %%
# The default training split and schedule, as in the first pipeline phase.
videos = generate_split(GenConfig(), "train")
frames = np.concatenate([v.frames for v in videos])
labels = np.concatenate([np.full(v.n_frames, v.label) for v in videos])
result = train(frames, labels, TrainConfig(seed=42))
model = result.params
print("epoch losses:", np.round(result.history, 4))

# %%
# Feature rows, reduced to eight principal components.
H = features(model, frames)
pca = pca_fit(H, 8)
Z = pca_transform(pca, H)
print("explained variance:", np.round(pca.explained_variance, 4))

# %%
# The temporal difference is 0 for the first frame of a video and grows
# with the change between consecutive frames.
per_video = np.split(Z, np.cumsum([v.n_frames for v in videos])[:-1])
d = [temporal_difference(z) for z in per_video]
for label, name in ((0, "real"), (1, "fake")):
    shift = np.mean([x[1:].mean() for x, v in zip(d, videos) if v.label == label])
    print(f"{name} mean temporal difference in feature space: {shift:.4f}")

# %%
# Cluster both variants (plain features and features plus the temporal
# difference) and compare cluster sizes.
for mode in ("NC", "PC"):
    X = np.concatenate(build_cluster_inputs(per_video, mode))
    X = (X - X.mean(axis=0)) / np.where(X.std(axis=0) > 0, X.std(axis=0), 1)
    clusters = fit_clusters(X, labels, 4, seed=0)
    print(mode, "cluster sizes (k, class) -> n:", clusters.sizes())

# %%
# Each call draws a fresh random pairing of real and fake clusters.
rng = make_rng(12)
for _ in range(3):
    envs = form_environments(clusters, rng)
    print("environments (real cluster, fake cluster):", [(e.real_cluster, e.fake_cluster) for e in envs])
