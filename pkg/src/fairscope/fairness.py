"""Group fairness and detection metrics.

The three fairness gaps compare each group's positive-prediction rate,
conditioned on the true label, with the rate over everyone::

    F_FPR = max_a  [ P(yhat=1 | a, y=0) - P(yhat=1 | y=0) ]
    F_TPR = max_a  [ P(yhat=1 | a, y=1) - P(yhat=1 | y=1) ]
    F_EO  = max_{a,y} [ P(yhat=1 | a, y) - P(yhat=1 | y) ]

Differences are signed, as defined; the max is still non-negative because
the overall rate is a weighted average of the group rates. Groups with no
samples of the conditioning label are skipped for that term.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.stats import rankdata


class UndefinedMetricError(ValueError):
    pass


@dataclass(frozen=True)
class PredictionRecord:
    score: float
    y: int
    a: int
    threshold: float = 0.5

    @property
    def y_hat(self) -> int:
        return int(self.score >= self.threshold)


@dataclass
class Predictions:
    """Column view of many prediction records."""

    score: np.ndarray
    y: np.ndarray
    a: np.ndarray
    threshold: float = 0.5

    def __post_init__(self):
        self.score = np.asarray(self.score, dtype=np.float64)
        self.y = np.asarray(self.y, dtype=int)
        self.a = np.asarray(self.a, dtype=int)
        if not (len(self.score) == len(self.y) == len(self.a)):
            raise ValueError("score, y and a must have equal length")

    @property
    def y_hat(self) -> np.ndarray:
        return (self.score >= self.threshold).astype(int)

    def __len__(self):
        return len(self.y)

    @classmethod
    def from_records(cls, records, threshold: float | None = None) -> "Predictions":
        records = list(records)
        th = threshold if threshold is not None else (records[0].threshold if records else 0.5)
        return cls([r.score for r in records], [r.y for r in records], [r.a for r in records], th)

    def take(self, idx) -> "Predictions":
        return Predictions(self.score[idx], self.y[idx], self.a[idx], self.threshold)


def _as_predictions(p) -> Predictions:
    return p if isinstance(p, Predictions) else Predictions.from_records(p)


def _rate_gap(p: Predictions, label: int) -> float:
    cond = p.y == label
    if not cond.any():
        raise UndefinedMetricError(f"no samples with y={label}")
    y_hat = p.y_hat
    overall = y_hat[cond].mean()
    gaps = [y_hat[cond & (p.a == g)].mean() - overall for g in np.unique(p.a[cond])]
    return float(max(gaps))


def f_fpr(records) -> float:
    return _rate_gap(_as_predictions(records), 0)


def f_tpr(records) -> float:
    return _rate_gap(_as_predictions(records), 1)


def f_eo(records) -> float:
    p = _as_predictions(records)
    terms = [_rate_gap(p, y) for y in np.unique(p.y)]
    if not terms:
        raise UndefinedMetricError("no samples")
    return max(terms)


def auc(records) -> float:
    """Mann-Whitney AUC with average ranks for tied scores."""
    p = _as_predictions(records)
    pos = p.y == 1
    n_pos, n_neg = int(pos.sum()), int((~pos).sum())
    if n_pos == 0 or n_neg == 0:
        raise UndefinedMetricError("AUC needs both classes")
    ranks = rankdata(p.score)
    return float((ranks[pos].sum() - n_pos * (n_pos + 1) / 2) / (n_pos * n_neg))


def f1(records, threshold: float | None = None) -> float:
    p = _as_predictions(records)
    y_hat = (p.score >= (p.threshold if threshold is None else threshold)).astype(int)
    tp = int(np.sum((y_hat == 1) & (p.y == 1)))
    fp = int(np.sum((y_hat == 1) & (p.y == 0)))
    fn = int(np.sum((y_hat == 0) & (p.y == 1)))
    if tp + fp + fn == 0:
        raise UndefinedMetricError("F1 needs at least one predicted or actual positive")
    precision = tp / (tp + fp) if tp + fp else 0.0
    recall = tp / (tp + fn) if tp + fn else 0.0
    if precision + recall == 0:
        return 0.0
    return 2 * precision * recall / (precision + recall)


def aggregate_by_video(p: Predictions, video_ids) -> tuple[Predictions, list[str]]:
    """Mean frame score per video; label and group taken from the first frame."""
    video_ids = np.asarray(video_ids)
    ids, first, inverse = np.unique(video_ids, return_index=True, return_inverse=True)
    sums = np.bincount(inverse, weights=p.score)
    counts = np.bincount(inverse)
    return Predictions(sums / counts, p.y[first], p.a[first], p.threshold), [str(i) for i in ids]


@dataclass
class FairnessReport:
    f_fpr: float | None
    f_tpr: float | None
    f_eo: float | None
    auc: float | None
    f1: float | None
    groups: list[dict] = field(default_factory=list)
    errors: dict[str, str] = field(default_factory=dict)
    n: int = 0

    def to_dict(self) -> dict:
        d = {
            "f_fpr": self.f_fpr,
            "f_tpr": self.f_tpr,
            "f_eo": self.f_eo,
            "auc": self.auc,
            "f1": self.f1,
            "groups": self.groups,
        }
        if self.errors:
            d["errors"] = self.errors
        return d


def group_report(records, video_ids=None) -> FairnessReport:
    """All metrics plus a per-group table.

    With ``video_ids`` the frame scores are first averaged per video.
    """
    p = _as_predictions(records)
    if len(p) == 0:
        raise UndefinedMetricError("no prediction records")
    if video_ids is not None:
        p, _ = aggregate_by_video(p, video_ids)
    values, errors = {}, {}
    for name, fn in (("f_fpr", f_fpr), ("f_tpr", f_tpr), ("f_eo", f_eo), ("auc", auc), ("f1", f1)):
        try:
            values[name] = fn(p)
        except UndefinedMetricError as exc:
            values[name] = None
            errors[name] = str(exc)
    y_hat = p.y_hat
    groups = []
    for g in np.unique(p.a):
        real = (p.a == g) & (p.y == 0)
        fake = (p.a == g) & (p.y == 1)
        groups.append(
            {
                "a": int(g),
                "n_real": int(real.sum()),
                "n_fake": int(fake.sum()),
                "fpr": float(y_hat[real].mean()) if real.any() else None,
                "tpr": float(y_hat[fake].mean()) if fake.any() else None,
            }
        )
    return FairnessReport(groups=groups, errors=errors, n=len(p), **values)


def _fmt(v) -> str:
    return "n/a" if v is None else f"{v:.4f}"


def markdown_header() -> str:
    return "| Run | F_FPR | F_EO | F_TPR | F1 | AUC |\n|---|---|---|---|---|---|"


def markdown_row(name: str, report: FairnessReport) -> str:
    cells = [report.f_fpr, report.f_eo, report.f_tpr, report.f1, report.auc]
    return f"| {name} | " + " | ".join(_fmt(c) for c in cells) + " |"


def write_metrics(out_dir, frame_report: FairnessReport, video_report: FairnessReport, name: str = "run") -> tuple[Path, Path]:
    """``metrics.json`` (video level at the top, frame level nested) and ``metrics.md``.

    Video-level scores are the mean frame score of each video; they are the
    headline numbers.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    payload = video_report.to_dict()
    payload["level"] = "video"
    payload["frame_level"] = frame_report.to_dict()
    jpath = out / "metrics.json"
    jpath.write_text(json.dumps(payload, indent=1, sort_keys=True), encoding="utf-8")
    mpath = out / "metrics.md"
    mpath.write_text(
        "\n".join(
            [
                markdown_header(),
                markdown_row(f"{name} (video)", video_report),
                markdown_row(f"{name} (frame)", frame_report),
                "",
            ]
        ),
        encoding="utf-8",
    )
    return jpath, mpath
