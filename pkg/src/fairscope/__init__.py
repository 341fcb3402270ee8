"""Bias-aware augmentation for fairer face-forgery detectors, in numpy.

Modules:

- ``numerics``: FFT wrappers, PCA, cosine similarity, seeded generators.
- ``augment``: frequency masks and the pairwise augmenters.
- ``data``: synthetic video generator, on-disk format, concept bank.
- ``model``: the small MLP detector, manual gradients, Adam, checkpoints.
- ``clustering``: temporal-shift features, k-means, environments.
- ``concepts``: concept vectors, sensitivity scores, sampling weights.
- ``fairness``: fairness gaps, AUC, F1 and reports.
- ``pipeline``: full training runs and the ablation grid.
- ``cli``: ``python -m fairscope``.
"""

__version__ = "0.1.0"
