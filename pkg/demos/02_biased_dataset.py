"""
A synthetic benchmark with a planted shortcut
=============================================

The generator produces short greyscale videos. Fakes carry a faint
high-frequency fingerprint and extra frame-to-frame jitter; on top of that,
one demographic group is over-represented among the training fakes, so a
detector can lean on group appearance instead of the artifact.

This script generates a reduced copy of the benchmark and inspects the
imbalance, the fingerprint and the temporal jitter directly on the pixels.
"""

import json
import sys
import tempfile
from dataclasses import replace
from pathlib import Path

import numpy as np

from fairscope.data import GenConfig, artifact_variant, generate_dataset, load_split

root = Path(sys.argv[1]) if len(sys.argv) > 1 else Path(tempfile.mkdtemp(prefix="fairscope-data-"))

# %%
# Same generator as the benchmark, fewer videos.
cfg = replace(GenConfig(), n_train=120, n_val=20, n_test=60)
generate_dataset(cfg, root)
manifest = json.loads((root / "train" / "manifest.json").read_text())
print("train manifest keys:", sorted(manifest["videos"][0]))

# %%
# Group shares per label. The manifest stores groups for every split, but
# the loader only hands them out for the test split.
for split in ("train", "test"):
    videos = json.loads((root / split / "manifest.json").read_text())["videos"]
    for label, name in ((0, "real"), (1, "fake")):
        groups = np.array([v["group"] for v in videos if v["label"] == label])
        print(f"{split:5s} {name}: share of group 0 = {np.mean(groups == 0):.2f} over {len(groups)} videos")

# %%
# Fingerprint energy on its spectral bins, fakes against reals.
train = load_split(root / "train")
bins = [artifact_variant(cfg, v)[:2] for v in range(cfg.artifact_variants)]


def fingerprint_energy(video):
    spec = np.abs(np.fft.fft2(video.frames)) ** 2
    return np.mean([spec[:, r % 32, c % 32].mean() for r, c in bins])


for label, name in ((0, "real"), (1, "fake")):
    e = [fingerprint_energy(v) for v in train if v.label == label]
    print(f"{name} fingerprint energy: {np.mean(e):.3g}")


# %%
# Frame-to-frame change, as one minus cosine similarity of raw pixels.
def mean_shift(video):
    flat = video.frames.reshape(video.n_frames, -1)
    a, b = flat[:-1], flat[1:]
    cos = np.sum(a * b, axis=1) / (np.linalg.norm(a, axis=1) * np.linalg.norm(b, axis=1))
    return np.mean(1 - cos)


for label, name in ((0, "real"), (1, "fake")):
    print(f"{name} mean temporal shift: {np.mean([mean_shift(v) for v in train if v.label == label]):.5f}")
print("dataset written to", root)
