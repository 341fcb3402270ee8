"""End-to-end training pipeline and ablation runner.

Phases of a ``proposed`` / ``variant`` run:

1. plain training of the detector on the train split (cached per config);
2. features -> PCA -> standardisation (+ temporal shift for ``PC``) ->
   ``K`` k-means clusters per class;
3. concept vectors from the concept bank and per-cluster presence sets;
4. further training where every batch is rebuilt: random environment
   pairing, per-environment head gradients, CSS, cluster sampling weights,
   same-class partner draw and pairwise augmentation.

``vanilla`` stops after phase 1. Group attributes are read for the test
split only, at evaluation time.
"""

from __future__ import annotations

import hashlib
import json
import logging
import time
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from . import augment as aug
from .clustering import (
    ClusterModel,
    Standardizer,
    build_cluster_inputs,
    environment_of,
    fit_clusters,
    form_environments,
)
from .concepts import (
    ConceptVector,
    CssRecord,
    css,
    css_report,
    fit_concept_vector,
    gradient_matrices_from_batch,
    presence_sets,
    sample_partner,
    sampling_weights,
)
from .data import GenConfig, VideoSample, load_concept_bank, load_split
from .fairness import FairnessReport, Predictions, group_report, write_metrics
from .model import (
    MlpParams,
    TrainConfig,
    fake_probability,
    features,
    init_params,
    load_checkpoint,
    save_checkpoint,
    train,
)
from .numerics import child_seed, make_rng, pca_fit, pca_transform

log = logging.getLogger(__name__)

MODES = ("vanilla", "proposed", "variant")
EARLY_STOP_PATIENCE = 3


class PipelineConfigError(ValueError):
    pass


@dataclass
class PipelineConfig:
    data_dir: str = "data"
    out_dir: str = "runs/default"
    bank_dir: str | None = None
    cache_dir: str | None = None
    mode: str = "proposed"
    clustering: str = "PC"
    concepts: bool = True
    sampling: str = "BS"
    augment: str = "PF"
    k: int = 4
    alpha: float = 0.75
    mask_layout: str = "centered"
    pca_dim: int = 8
    n_concepts: int = 8
    concept_images: int = 200
    reinit: bool = False
    seed: int = 42
    gen: GenConfig = field(default_factory=GenConfig)
    train: TrainConfig = field(default_factory=TrainConfig)

    def resolved(self) -> "PipelineConfig":
        """Copy with the mode's fixed axes applied and the config checked."""
        cfg = replace(self, train=replace(self.train, seed=self.seed))
        if cfg.mode not in MODES:
            raise PipelineConfigError(f"unknown mode {cfg.mode!r}")
        if cfg.mode == "proposed":
            cfg = replace(cfg, clustering="PC", concepts=True, sampling="BS", augment="PF")
        if cfg.clustering not in ("NC", "PC"):
            raise PipelineConfigError(f"unknown clustering {cfg.clustering!r}")
        if cfg.sampling not in ("PS", "BS"):
            raise PipelineConfigError(f"unknown sampling {cfg.sampling!r}")
        if cfg.augment not in aug.AUGMENTERS:
            raise PipelineConfigError(f"unknown augmenter {cfg.augment!r}")
        if not cfg.concepts and cfg.sampling == "BS":
            raise PipelineConfigError("bias-aware sampling needs concepts; use sampling=PS")
        if cfg.k < 1 or cfg.pca_dim < 1 or cfg.n_concepts < 1:
            raise PipelineConfigError("k, pca_dim and n_concepts must be positive")
        if not 0 <= cfg.alpha <= 1:
            raise PipelineConfigError("alpha must lie in [0, 1]")
        return cfg

    @property
    def bank_path(self) -> Path:
        return Path(self.bank_dir) if self.bank_dir else Path(self.data_dir) / "concepts"

    @property
    def cache_path(self) -> Path:
        return Path(self.cache_dir) if self.cache_dir else Path(self.out_dir) / "cache"

    def to_dict(self) -> dict:
        d = asdict(self)
        d["gen"] = self.gen.to_dict()
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "PipelineConfig":
        d = dict(d)
        known = set(cls.__dataclass_fields__)
        unknown = set(d) - known
        if unknown:
            raise PipelineConfigError(f"unknown config keys: {sorted(unknown)}")
        if "gen" in d:
            d["gen"] = GenConfig.from_dict(d["gen"])
        if "train" in d:
            d["train"] = TrainConfig(**d["train"])
        return cls(**d)

    @classmethod
    def load(cls, path) -> "PipelineConfig":
        return cls.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))


@dataclass
class FrameTable:
    """Frames of a split flattened to one row per frame."""

    frames: np.ndarray
    labels: np.ndarray
    video_ids: np.ndarray
    frame_index: np.ndarray
    slices: list[slice]
    groups: np.ndarray | None = None

    @classmethod
    def from_videos(cls, videos: list[VideoSample]) -> "FrameTable":
        frames, labels, vids, tidx, slices = [], [], [], [], []
        start = 0
        for v in videos:
            T = v.n_frames
            frames.append(v.frames)
            labels.append(np.full(T, v.label))
            vids.extend([v.id] * T)
            tidx.append(np.arange(T))
            slices.append(slice(start, start + T))
            start += T
        groups = None
        if videos and videos[0].group is not None:
            groups = np.concatenate([np.full(v.n_frames, v.group) for v in videos])
        return cls(
            np.concatenate(frames),
            np.concatenate(labels).astype(int),
            np.array(vids),
            np.concatenate(tidx),
            slices,
            groups,
        )


def _load_table(data_dir, split: str, with_groups: bool = False) -> FrameTable:
    return FrameTable.from_videos(load_split(Path(data_dir) / split, with_groups=with_groups))


def _digest(*parts) -> str:
    h = hashlib.sha256()
    for p in parts:
        h.update(p if isinstance(p, bytes) else json.dumps(p, sort_keys=True).encode())
    return h.hexdigest()[:16]


def phase1(cfg: PipelineConfig, table: FrameTable, val: FrameTable | None = None):
    """Plain training, cached on disk by a hash of the data and train config."""
    key = _digest(
        hashlib.sha256(table.frames.astype("<f4").tobytes()).digest(),
        table.labels.tolist(),
        asdict(cfg.train),
    )
    cache = cfg.cache_path / f"phase1-{key}.ckpt"
    stamp = cache.with_suffix(".sha256")
    if cache.exists() and stamp.exists():
        if _file_sha256(cache) == stamp.read_text(encoding="utf-8").strip():
            params, header = load_checkpoint(cache)
            return params, header.get("history", []), key, True
        log.warning("phase-1 cache %s failed its checksum; retraining", cache)
    vdata = (val.frames, val.labels) if val is not None and cfg.train.patience else None
    res = train(table.frames, table.labels, cfg.train, val=vdata)
    cache.parent.mkdir(parents=True, exist_ok=True)
    save_checkpoint(cache, res.params, {"seed": cfg.train.seed, "epoch": len(res.history), "history": res.history})
    stamp.write_text(_file_sha256(cache) + "\n", encoding="utf-8")
    return res.params, res.history, key, False


def _file_sha256(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


@dataclass
class ClusterPhase:
    model: ClusterModel
    features: np.ndarray
    inputs: np.ndarray


def phase2(cfg: PipelineConfig, params: MlpParams, table: FrameTable) -> ClusterPhase:
    H = features(params, table.frames)
    pca = pca_fit(H, cfg.pca_dim)
    reduced = pca_transform(pca, H)
    per_video = build_cluster_inputs([reduced[s] for s in table.slices], cfg.clustering)
    Z = np.concatenate(per_video)
    std = Standardizer.fit(Z[:, : pca.n_components])
    Z[:, : pca.n_components] = std(Z[:, : pca.n_components])
    model = fit_clusters(Z, table.labels, cfg.k, seed=child_seed(cfg.seed, 11) % (2**31))
    return ClusterPhase(model, H, Z)


def phase3(cfg: PipelineConfig, params: MlpParams, height: int, width: int) -> list[ConceptVector]:
    bank = load_concept_bank(cfg.bank_path, height, width)[: cfg.n_concepts]
    vectors = []
    for i, (name, pos, neg) in enumerate(bank):
        vectors.append(
            fit_concept_vector(features(params, pos), features(params, neg), name, seed=child_seed(cfg.seed, 13, i))
        )
    return vectors


class BatchAugmenter:
    """Augmentation hook implementing the per-batch loop of phase 4."""

    def __init__(self, cfg: PipelineConfig, table: FrameTable, clusters: ClusterPhase, concepts: list[ConceptVector]):
        self.cfg = cfg
        self.table = table
        self.model = clusters.model
        self.concepts = concepts
        self.mask = aug.FreqMaskConfig(cfg.alpha, cfg.mask_layout)
        self.env_rng = make_rng(child_seed(cfg.seed, 12))
        self.sizes = self.model.sizes()
        self.presence = presence_sets(self.model, clusters.features, concepts) if concepts else {}
        self.last_css: list[CssRecord] | None = None
        self.css_updates = 0
        self.css_reused = 0
        self.partner_draws = np.zeros((2, cfg.k), dtype=int)
        if cfg.sampling == "PS":
            self.weights = sampling_weights(self.sizes, None, None, "PS")

    def _weights(self, idx, xb, yb, params):
        if self.cfg.sampling == "PS":
            return self.weights
        envs = form_environments(self.model, self.env_rng)
        env_ids = environment_of(envs, self.model, idx)
        mats = gradient_matrices_from_batch(params, xb, yb, env_ids, len(envs))
        if len(mats) >= 2:
            self.last_css = css(self.concepts, mats)
            self.css_updates += 1
        else:
            self.css_reused += 1
        return sampling_weights(self.sizes, self.last_css, self.presence, "BS")

    def __call__(self, idx, xb, yb, params, rng):
        weights = self._weights(idx, xb, yb, params)
        partners = np.empty(len(idx), dtype=int)
        for n, (i, y) in enumerate(zip(idx, yb)):
            partners[n] = sample_partner(int(i), int(y), weights, self.model, rng)
            self.partner_draws[int(y), self.model.assignment[partners[n]]] += 1
        return aug.augment_batch(self.cfg.augment, xb, self.table.frames[partners], rng, self.mask)


def explanation_css(cfg: PipelineConfig, params: MlpParams, table: FrameTable, model: ClusterModel, concepts) -> list[CssRecord]:
    """CSS over full clusters (one seeded pairing) for the explanation report."""
    envs = form_environments(model, make_rng(child_seed(cfg.seed, 14)))
    mats = {}
    for e in envs:
        m = e.members(model)
        mats[e.index] = gradient_matrices_from_batch(params, table.frames[m], table.labels[m], np.zeros(len(m), int), 1)[0]
    return css(concepts, mats)


def evaluate(params: MlpParams, data_dir, out_dir, name: str = "run") -> tuple[FairnessReport, FairnessReport]:
    test = _load_table(data_dir, "test", with_groups=True)
    if test.frames[0].size != params.input_dim:
        raise PipelineConfigError(
            f"checkpoint expects {params.input_dim} pixels, test frames have {test.frames[0].size}"
        )
    scores = fake_probability(params, test.frames)
    preds = Predictions(scores, test.labels, test.groups)
    frame_report = group_report(preds)
    video_report = group_report(preds, video_ids=test.video_ids)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_metrics(out, frame_report, video_report, name)
    lines = ["video,frame,label,group,score"]
    lines += [
        f"{v},{t},{y},{a},{s!r}"
        for v, t, y, a, s in zip(test.video_ids, test.frame_index, test.labels, test.groups, scores.tolist())
    ]
    (out / "frame_scores.csv").write_text("\n".join(lines) + "\n", encoding="utf-8")
    return frame_report, video_report


@dataclass
class RunResult:
    params: MlpParams
    frame_report: FairnessReport
    video_report: FairnessReport
    report: dict


def run(cfg: PipelineConfig) -> RunResult:
    """Train according to ``cfg`` and evaluate on the test split."""
    cfg = cfg.resolved()
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    timings = {}
    t0 = time.perf_counter()
    table = _load_table(cfg.data_dir, "train")
    val = _load_table(cfg.data_dir, "val") if cfg.train.patience else None
    timings["load"] = time.perf_counter() - t0

    t = time.perf_counter()
    params, history, cache_key, cache_hit = phase1(cfg, table, val)
    timings["phase1"] = time.perf_counter() - t
    report: dict = {
        "config": cfg.to_dict(),
        "phase1_cache": {"key": cache_key, "hit": cache_hit},
        "loss_history": {"phase1": history},
    }
    files = {}
    if cfg.mode != "vanilla":
        t = time.perf_counter()
        clusters = phase2(cfg, params, table)
        clusters.model.dump(out / "clusters.json", table.video_ids, table.frame_index)
        files["clusters"] = str(out / "clusters.json")
        timings["phase2"] = time.perf_counter() - t

        t = time.perf_counter()
        concepts = phase3(cfg, params, *table.frames.shape[1:]) if cfg.concepts else []
        timings["phase3"] = time.perf_counter() - t

        t = time.perf_counter()
        hook = BatchAugmenter(cfg, table, clusters, concepts)
        start = init_params(table.frames[0].size, cfg.train.hidden, cfg.train.feature_dim, child_seed(cfg.seed, 15)) if cfg.reinit else params
        vdata = (val.frames, val.labels) if val is not None else None
        res = train(table.frames, table.labels, cfg.train, augment=hook, params=start, val=vdata, stream=1)
        params = res.params
        timings["phase4"] = time.perf_counter() - t
        report["loss_history"]["phase4"] = res.history
        report["sampling"] = {
            "cluster_sizes": {f"{k},{y}": n for (k, y), n in hook.sizes.items()},
            "partner_draws": hook.partner_draws.tolist(),
            "css_updates": hook.css_updates,
            "css_reused": hook.css_reused,
        }
        if concepts:
            records = explanation_css(cfg, params, table, clusters.model, concepts)
            ranked = css_report(records)
            (out / "css.json").write_text(json.dumps(ranked, indent=1), encoding="utf-8")
            files["css"] = str(out / "css.json")
            report["top_css"] = ranked[:3]
            report["concept_accuracy"] = {c.name: c.accuracy for c in concepts}

    ckpt = save_checkpoint(out / "model.ckpt", params, {"seed": cfg.seed, "mode": cfg.mode, "data_dir": str(cfg.data_dir)})
    files["checkpoint"] = str(ckpt)
    t = time.perf_counter()
    frame_report, video_report = evaluate(params, cfg.data_dir, out, cfg.mode)
    timings["evaluate"] = time.perf_counter() - t
    timings["total"] = time.perf_counter() - t0
    files.update(metrics=str(out / "metrics.json"), metrics_md=str(out / "metrics.md"))
    report.update(timings=timings, frame_metrics=frame_report.to_dict(), video_metrics=video_report.to_dict(), files=files)
    (out / "report.json").write_text(json.dumps(report, indent=1, default=float), encoding="utf-8")
    return RunResult(params, frame_report, video_report, report)


TABLE3 = {
    "VariantA": dict(clustering="NC", concepts=True, sampling="BS"),
    "VariantB": dict(clustering="NC", concepts=False, sampling="PS"),
    "VariantC": dict(clustering="PC", concepts=False, sampling="PS"),
    "VariantD": dict(clustering="PC", concepts=True, sampling="BS"),
}
TABLE4 = {f"Variant{n}": dict(augment=a) for n, a in zip("ABCD", ("MU", "CM", "FM", "PF"))}


def ablation_cells(tables=("3", "4")) -> list[tuple[str, dict]]:
    cells = []
    if "3" in tables:
        cells += [(f"T3-{name}", dict(axes, augment="PF")) for name, axes in TABLE3.items()]
    if "4" in tables:
        cells += [(f"T4-{name}", dict(axes, clustering="PC", concepts=True, sampling="BS")) for name, axes in TABLE4.items()]
    return cells


def _run_cell(args):
    name, cfg = args
    try:
        r = run(cfg)
        metrics = r.video_report.to_dict()
        metrics["frame_level"] = r.frame_report.to_dict()
        return name, cfg, metrics, None
    except Exception as exc:  # recorded per cell, the grid continues
        return name, cfg, None, f"{type(exc).__name__}: {exc}"


def ablate(base: PipelineConfig, out_dir, tables=("3", "4"), workers: int = 1) -> list[dict]:
    """Run the ablation grid; every cell shares the phase-1 cache."""
    out = Path(out_dir)
    cache = Path(base.cache_dir) if base.cache_dir else out / "cache"
    jobs = [("vanilla", replace(base, mode="vanilla", out_dir=str(out / "vanilla"), cache_dir=str(cache)))]
    for name, axes in ablation_cells(tables):
        jobs.append((name, replace(base, mode="variant", out_dir=str(out / name), cache_dir=str(cache), **axes)))
    # the first job populates the phase-1 cache before any parallel work
    results = [_run_cell(jobs[0])]
    if workers > 1:
        from concurrent.futures import ProcessPoolExecutor

        with ProcessPoolExecutor(workers) as pool:
            results += list(pool.map(_run_cell, jobs[1:]))
    else:
        results += [_run_cell(j) for j in jobs[1:]]

    rows = []
    for name, cfg, metrics, err in results:
        rows.append(
            {
                "name": name,
                "clustering": cfg.clustering if cfg.mode != "vanilla" else "-",
                "concepts": ("CB" if cfg.concepts else "-") if cfg.mode != "vanilla" else "-",
                "sampling": cfg.sampling if cfg.mode != "vanilla" else "-",
                "augment": cfg.augment if cfg.mode != "vanilla" else "-",
                "f_eo": metrics["f_eo"] if metrics else None,
                "auc": metrics["auc"] if metrics else None,
                "frame_f_eo": metrics["frame_level"]["f_eo"] if metrics else None,
                "frame_auc": metrics["frame_level"]["auc"] if metrics else None,
                "error": err,
            }
        )
    lines = ["| Name | Cl | Cg | Ps | Da | F_EO | AUC |", "|---|---|---|---|---|---|---|"]
    for r in rows:
        cells = [r["name"], r["clustering"], r["concepts"], r["sampling"], r["augment"]]
        if r["error"]:
            cells += ["failed", r["error"]]
        else:
            cells += [f"{r['f_eo']:.4f}", f"{r['auc']:.4f}"]
        lines.append("| " + " | ".join(cells) + " |")
    out.mkdir(parents=True, exist_ok=True)
    (out / "ablation.md").write_text("\n".join(lines) + "\n", encoding="utf-8")
    (out / "ablation.json").write_text(json.dumps(rows, indent=1), encoding="utf-8")
    return rows
