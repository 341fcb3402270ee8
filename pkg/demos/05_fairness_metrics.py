"""
Measuring fairness gaps
=======================

Each fairness metric asks how far the worst demographic group drifts from
the overall rate: false positives among reals, true positives among fakes,
or whichever of the two is larger. Accuracy is reported next to it as
rank-based AUC and F1 at a 0.5 threshold.
"""

import numpy as np

from fairscope.fairness import PredictionRecord, Predictions, aggregate_by_video, group_report

# %%
# Four reals and two fakes. Group 0 has one real flagged as fake, group 1
# has none, so the false-positive rate is 0.5 against an overall 0.25.
records = [
    PredictionRecord(0.9, 0, 0),
    PredictionRecord(0.1, 0, 0),
    PredictionRecord(0.2, 0, 1),
    PredictionRecord(0.3, 0, 1),
    PredictionRecord(0.8, 1, 0),
    PredictionRecord(0.7, 1, 1),
]
report = group_report(records)
print(f"F_FPR {report.f_fpr}  F_TPR {report.f_tpr}  F_EO {report.f_eo}  AUC {report.auc:.3f}")
for g in report.groups:
    print("  group", g)

# %%
# A detector whose scores depend on the group as well as the label.
rng = np.random.default_rng(0)
n = 2000
y = rng.integers(0, 2, n)
a = rng.integers(0, 2, n)
score = 1 / (1 + np.exp(-(2.5 * (y - 0.5) + 1.2 * (a - 0.5) + rng.normal(0, 1, n))))
biased = group_report(Predictions(score, y, a))
print(f"group-dependent scores: F_EO {biased.f_eo:.3f}, AUC {biased.auc:.3f}")

fair = group_report(Predictions(1 / (1 + np.exp(-(2.5 * (y - 0.5) + rng.normal(0, 1, n)))), y, a))
print(f"group-blind scores:     F_EO {fair.f_eo:.3f}, AUC {fair.auc:.3f}")

# %%
# Video-level metrics average the frame scores of each video first. Here
# every video has eight noisy frames around a per-video score.
n_videos, T = 250, 8
vy = rng.integers(0, 2, n_videos)
va = rng.integers(0, 2, n_videos)
centre = 1.5 * (vy - 0.5) + 0.8 * (va - 0.5)
frame_scores = 1 / (1 + np.exp(-(np.repeat(centre, T) + rng.normal(0, 2, n_videos * T))))
frames = Predictions(frame_scores, np.repeat(vy, T), np.repeat(va, T))
per_video, ids = aggregate_by_video(frames, np.repeat(np.arange(n_videos), T))
print(f"frame-level AUC {group_report(frames).auc:.3f}, video-level AUC {group_report(per_video).auc:.3f}")
