"""Synthetic video datasets with planted artifacts and demographic bias.

Every frame is built from three ingredients:

* a smooth background blob that drifts slowly over time,
* a per-group low-frequency signature (a cosine "brightness gradient" whose
  direction depends on the group), and
* for fake videos only, a high-frequency grating whose phase jitters from
  frame to frame.

The grating is one of ``artifact_variants`` fixed fingerprints (frequency
and base phase drawn once per dataset seed), like the traces a given
forgery method leaves. Per-video random phases would make the artifact
invisible to a small dense model.

Fakes are drawn from group 0 with probability ``bias``; reals mirror that
imbalance, so in a biased split the group signature is a shortcut for the
label. The artifact band sits outside the default low-frequency mask and
therefore survives the frequency-aware augmentation.

On disk a split is a ``manifest.json`` plus one headerless file per video
holding float32 little-endian frames, row-major, concatenated.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .augment import low_cutoff
from .numerics import InvalidInputError, child_seed, make_rng

FORMAT_VERSION = 1
SPLITS = ("train", "val", "test")
FRAME_DTYPE = np.dtype("<f4")

# integer (row, col) frequency of each group's signature; all far inside the low band
SIGNATURE_FREQS = [(0, 1), (1, 0), (1, 1), (1, -1), (0, 2), (2, 0), (2, 1), (1, 2)]


class ConfigError(ValueError):
    pass


class CorruptDatasetError(ValueError):
    pass


@dataclass
class VideoSample:
    id: str
    frames: np.ndarray  # (T, H, W)
    label: int
    group: int | None
    seed: int | None = None

    @property
    def n_frames(self) -> int:
        return self.frames.shape[0]


@dataclass
class GenConfig:
    height: int = 32
    width: int = 32
    n_train: int = 400
    n_val: int = 100
    n_test: int = 200
    frames: int = 8
    groups: int = 2
    fake_fraction: float = 0.5
    bias: float = 0.8
    test_bias: float = 0.5
    mirror_real_bias: bool = True
    background_amplitude: float = 0.25
    signature_amplitude: float = 0.1
    artifact_amplitude: float = 0.024
    artifact_band: tuple[int, int] = (13, 15)
    artifact_variants: int = 2
    artifact_radius: float = 0.0
    phase_jitter: float = 0.6
    drift: float = 0.3
    noise: float = 0.04
    alpha: float = 0.75
    seed: int = 42

    def validate(self) -> None:
        if self.height < 2 or self.width < 2:
            raise ConfigError("frames must be at least 2x2")
        if self.frames < 2:
            raise ConfigError("videos need at least two frames")
        if min(self.n_train, self.n_val, self.n_test) < 1:
            raise ConfigError("every split needs at least one video")
        if not 1 <= self.groups <= len(SIGNATURE_FREQS):
            raise ConfigError(f"groups must be in 1..{len(SIGNATURE_FREQS)}")
        for name in ("fake_fraction", "bias", "test_bias", "alpha"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ConfigError(f"{name} must lie in [0, 1], got {v}")
        lo, hi = self.artifact_band
        nyquist = min(self.height, self.width) // 2
        if not 0 < lo <= hi <= nyquist:
            raise ConfigError(f"artifact band {self.artifact_band} outside 1..{nyquist}")
        # the band must clear the low-frequency mask by a margin of two bins
        cutoff = max(low_cutoff(self.height, self.alpha), low_cutoff(self.width, self.alpha))
        if lo < cutoff + 2:
            raise ConfigError(
                f"artifact band starts at {lo} but the low-frequency mask reaches {cutoff};"
                " augmentation would erase the artifacts"
            )

    def split_size(self, split: str) -> int:
        return {"train": self.n_train, "val": self.n_val, "test": self.n_test}[split]

    def split_bias(self, split: str) -> float:
        return self.test_bias if split == "test" else self.bias

    def to_dict(self) -> dict:
        d = asdict(self)
        d["artifact_band"] = list(self.artifact_band)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "GenConfig":
        d = dict(d)
        if "artifact_band" in d:
            d["artifact_band"] = tuple(d["artifact_band"])
        return cls(**d)


def _grid(height: int, width: int):
    return np.meshgrid(np.arange(height), np.arange(width), indexing="ij")


def _cosine(height, width, fr, fc, phase):
    r, c = _grid(height, width)
    return np.cos(2 * np.pi * (fr * r / height + fc * c / width) + phase)


def signature_pattern(group: int, height: int, width: int, phase: float = 0.0) -> np.ndarray:
    fr, fc = SIGNATURE_FREQS[group]
    return _cosine(height, width, fr, fc, phase)


def _background(rng, height, width, frames, cfg: GenConfig, return_centers: bool = False):
    r, c = _grid(height, width)
    center = rng.uniform(0.25, 0.75, size=2) * (height, width)
    velocity = rng.normal(0.0, cfg.drift, size=2)
    sigma = rng.uniform(0.15, 0.3) * min(height, width)
    amp = cfg.background_amplitude * rng.uniform(0.5, 1.0)
    out = np.empty((frames, height, width))
    centers = np.empty((frames, 2))
    for t in range(frames):
        cy, cx = centers[t] = center + velocity * t
        out[t] = amp * np.exp(-((r - cy) ** 2 + (c - cx) ** 2) / (2 * sigma**2))
    return (out, centers) if return_centers else out


def _band_frequency(rng, cfg: GenConfig) -> tuple[int, int]:
    lo, hi = cfg.artifact_band
    fr = int(rng.integers(lo, hi + 1)) * (1 if rng.random() < 0.5 else -1)
    fc = int(rng.integers(lo, hi + 1)) * (1 if rng.random() < 0.5 else -1)
    return fr, fc


def artifact_variant(cfg: GenConfig, index: int) -> tuple[int, int, float]:
    """Frequency and base phase of one of the generator's artifact fingerprints."""
    rng = make_rng(child_seed(cfg.seed, 99, index))
    fr, fc = _band_frequency(rng, cfg)
    return fr, fc, float(rng.uniform(0, 2 * np.pi))


def render_video(cfg: GenConfig, label: int, group: int, seed: int) -> np.ndarray:
    """Frames ``(T, H, W)`` in [0, 1], rounded to float32 precision."""
    rng = make_rng(seed)
    h, w, T = cfg.height, cfg.width, cfg.frames
    blob, centers = _background(rng, h, w, T, cfg, return_centers=True)
    frames = 0.5 + blob - 0.125
    sig_phase = rng.uniform(0, 2 * np.pi)
    frames += cfg.signature_amplitude * signature_pattern(group, h, w, sig_phase)[None]
    if label == 1 and cfg.artifact_amplitude > 0:
        fr, fc, phase0 = artifact_variant(cfg, int(rng.integers(cfg.artifact_variants)))
        r, c = _grid(h, w)
        for t in range(T):
            phase = phase0 + cfg.phase_jitter * rng.normal()
            grating = _cosine(h, w, fr, fc, phase)
            if cfg.artifact_radius > 0:
                # confined to the blob ("face") region and moving with it
                cy, cx = centers[t]
                sd = cfg.artifact_radius * min(h, w)
                grating *= np.exp(-((r - cy) ** 2 + (c - cx) ** 2) / (2 * sd**2))
            frames[t] += cfg.artifact_amplitude * grating
    frames += rng.normal(0.0, cfg.noise, size=frames.shape)
    return np.clip(frames, 0.0, 1.0).astype(FRAME_DTYPE).astype(np.float64)


def _quota_groups(rng, count: int, group0_fraction: float, groups: int) -> np.ndarray:
    if groups == 1:
        return np.zeros(count, dtype=int)
    n0 = int(round(group0_fraction * count))
    rest = np.arange(count - n0) % (groups - 1) + 1
    out = np.concatenate([np.zeros(n0, dtype=int), rest])
    return rng.permutation(out)


def assign_labels_groups(cfg: GenConfig, split: str) -> tuple[np.ndarray, np.ndarray]:
    """Label and group for every video of a split, deterministic in the seed."""
    n = cfg.split_size(split)
    rng = make_rng(child_seed(cfg.seed, SPLITS.index(split)))
    n_fake = int(round(cfg.fake_fraction * n))
    b = cfg.split_bias(split)
    fake_groups = _quota_groups(rng, n_fake, b, cfg.groups)
    real_frac = 1.0 - b if cfg.mirror_real_bias else 1.0 / cfg.groups
    real_groups = _quota_groups(rng, n - n_fake, real_frac, cfg.groups)
    labels = np.concatenate([np.ones(n_fake, dtype=int), np.zeros(n - n_fake, dtype=int)])
    groups = np.concatenate([fake_groups, real_groups])
    order = rng.permutation(n)
    return labels[order], groups[order]


def generate_split(cfg: GenConfig, split: str) -> list[VideoSample]:
    cfg.validate()
    labels, groups = assign_labels_groups(cfg, split)
    videos = []
    for i, (y, a) in enumerate(zip(labels, groups)):
        seed = child_seed(cfg.seed, SPLITS.index(split), i + 1)
        videos.append(
            VideoSample(
                id=f"{split}_{i:05d}",
                frames=render_video(cfg, int(y), int(a), seed),
                label=int(y),
                group=int(a),
                seed=seed,
            )
        )
    return videos


# ---------------------------------------------------------------- frame files


def write_frames(path, frames) -> None:
    """Write frames as raw float32 little-endian, row-major, no header."""
    arr = np.asarray(frames, dtype=np.float64)
    if arr.size and not np.all(np.isfinite(arr)):
        raise CorruptDatasetError(f"non-finite values for {path}")
    Path(path).write_bytes(arr.astype(FRAME_DTYPE).tobytes())


def read_frames(path, expected_count: int | None, height: int, width: int) -> np.ndarray:
    """Read a frame file back as ``(T, H, W)`` float64.

    ``expected_count=None`` infers the count from the file size.
    """
    raw = Path(path).read_bytes()
    per_frame = height * width * FRAME_DTYPE.itemsize
    if expected_count is None:
        if len(raw) % per_frame:
            raise CorruptDatasetError(f"{path}: size {len(raw)} is not a whole number of frames")
        expected_count = len(raw) // per_frame
    if len(raw) != expected_count * per_frame:
        raise CorruptDatasetError(
            f"{path}: expected {expected_count * per_frame} bytes, found {len(raw)}"
        )
    data = np.frombuffer(raw, dtype=FRAME_DTYPE)
    if not np.all(np.isfinite(data)):
        raise CorruptDatasetError(f"{path}: non-finite values")
    return data.astype(np.float64).reshape(expected_count, height, width)


# ------------------------------------------------------------------ manifests


@dataclass
class DatasetManifest:
    height: int
    width: int
    split: str
    videos: list[dict] = field(default_factory=list)
    version: int = FORMAT_VERSION

    def to_json(self) -> str:
        payload = {
            "version": self.version,
            "height": self.height,
            "width": self.width,
            "split": self.split,
            "videos": [
                {k: v[k] for k in ("id", "label", "group", "frames", "file")} for v in self.videos
            ],
        }
        return json.dumps(payload, indent=1)

    @classmethod
    def from_json(cls, text: str) -> "DatasetManifest":
        d = json.loads(text)
        return cls(
            height=int(d["height"]),
            width=int(d["width"]),
            split=d["split"],
            videos=list(d["videos"]),
            version=int(d["version"]),
        )


def write_split(videos: list[VideoSample], out_dir, split: str, height: int, width: int) -> DatasetManifest:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    manifest = DatasetManifest(height=height, width=width, split=split)
    for v in videos:
        fname = f"{v.id}.f32"
        write_frames(out / fname, v.frames)
        manifest.videos.append(
            {"id": v.id, "label": v.label, "group": v.group, "frames": v.n_frames, "file": fname}
        )
    (out / "manifest.json").write_text(manifest.to_json(), encoding="utf-8")
    return manifest


def load_split(split_dir, with_groups: bool = False) -> list[VideoSample]:
    """Load the videos of one split directory.

    Group attributes are only surfaced for the test split and only when
    ``with_groups`` is set; training code never sees them.
    """
    split_dir = Path(split_dir)
    manifest = DatasetManifest.from_json((split_dir / "manifest.json").read_text(encoding="utf-8"))
    if with_groups and manifest.split != "test":
        raise InvalidInputError("group attributes are only available for the test split")
    names = [v["file"] for v in manifest.videos]
    if len(set(names)) != len(names):
        raise CorruptDatasetError("duplicate file names in manifest")
    out = []
    for v in manifest.videos:
        frames = read_frames(split_dir / v["file"], int(v["frames"]), manifest.height, manifest.width)
        out.append(
            VideoSample(
                id=v["id"],
                frames=frames,
                label=int(v["label"]),
                group=int(v["group"]) if with_groups else None,
            )
        )
    return out


def generate_dataset(cfg: GenConfig, out_dir) -> dict[str, DatasetManifest]:
    """Write train/val/test splits under ``out_dir/<split>/``."""
    cfg.validate()
    out = Path(out_dir)
    return {
        split: write_split(generate_split(cfg, split), out / split, split, cfg.height, cfg.width)
        for split in SPLITS
    }


# ---------------------------------------------------------------- concept bank


@dataclass(frozen=True)
class ConceptSpec:
    name: str
    pattern: str
    group: int | None = None


PATTERNS = ("signature", "grating", "blob", "checker", "ring", "stripes", "vignette", "corner")


def default_concept_bank(groups: int = 2, size: int = 8) -> list[ConceptSpec]:
    specs = [ConceptSpec(f"signature_{g}", "signature", g) for g in range(min(groups, size))]
    for p in ("grating", "blob", "checker", "ring", "stripes", "vignette", "corner"):
        if len(specs) >= size:
            break
        specs.append(ConceptSpec(p, p))
    return specs


def concept_pattern(spec: ConceptSpec, rng, cfg: GenConfig) -> np.ndarray:
    """One random instance of a concept pattern, roughly unit amplitude."""
    h, w = cfg.height, cfg.width
    r, c = _grid(h, w)
    p = spec.pattern
    if p == "signature":
        return signature_pattern(spec.group or 0, h, w, rng.uniform(0, 2 * np.pi))
    if p == "grating":
        fr, fc = _band_frequency(rng, cfg)
        return _cosine(h, w, fr, fc, rng.uniform(0, 2 * np.pi))
    if p == "blob":
        cy, cx = rng.uniform(0.3, 0.7, size=2) * (h, w)
        return np.exp(-((r - cy) ** 2 + (c - cx) ** 2) / (2 * (0.08 * h) ** 2))
    if p == "checker":
        return _cosine(h, w, 4, 0, rng.uniform(0, 2 * np.pi)) * _cosine(h, w, 0, 4, rng.uniform(0, 2 * np.pi))
    if p == "ring":
        cy, cx = rng.uniform(0.4, 0.6, size=2) * (h, w)
        rad = np.hypot(r - cy, c - cx)
        return np.exp(-((rad - 0.3 * h) ** 2) / (2 * (0.05 * h) ** 2))
    if p == "stripes":
        return _cosine(h, w, 3, 3, rng.uniform(0, 2 * np.pi))
    if p == "vignette":
        rad = np.hypot(r - h / 2, c - w / 2) / (0.5 * h)
        return -np.clip(rad - 0.6, 0, None) * 2
    if p == "corner":
        m = np.zeros((h, w))
        qh, qw = h // 4, w // 4
        corner = int(rng.integers(4))
        rs = slice(0, qh) if corner < 2 else slice(h - qh, h)
        cs = slice(0, qw) if corner % 2 == 0 else slice(w - qw, w)
        m[rs, cs] = 1.0
        return m
    raise InvalidInputError(f"unknown concept pattern {p!r}")


def generate_concept_set(
    spec: ConceptSpec,
    count: int = 200,
    seed: int = 0,
    cfg: GenConfig | None = None,
    amplitude: float = 0.12,
) -> tuple[np.ndarray, np.ndarray]:
    """Positive and negative image stacks ``(count, H, W)`` for one concept.

    Negatives are the same backgrounds without the pattern.
    """
    if count < 2:
        raise InvalidInputError("a concept set needs at least two images per side")
    cfg = cfg or GenConfig()
    rng = make_rng(seed)
    neg = np.empty((count, cfg.height, cfg.width))
    pos = np.empty_like(neg)
    for n in range(count):
        bg = 0.5 + _background(rng, cfg.height, cfg.width, 1, cfg)[0] - 0.125
        bg += rng.normal(0.0, cfg.noise, size=bg.shape)
        pattern = concept_pattern(spec, rng, cfg)
        neg[n] = bg
        pos[n] = bg + amplitude * pattern
    to32 = lambda a: np.clip(a, 0, 1).astype(FRAME_DTYPE).astype(np.float64)  # noqa: E731
    return to32(pos), to32(neg)


def write_concept_bank(specs, out_dir, count: int = 200, cfg: GenConfig | None = None, seed: int = 0) -> Path:
    cfg = cfg or GenConfig()
    out = Path(out_dir)
    entries = []
    for i, spec in enumerate(specs):
        pos, neg = generate_concept_set(spec, count, child_seed(seed, 7, i), cfg)
        for side, imgs in (("pos", pos), ("neg", neg)):
            d = out / spec.name / side
            d.mkdir(parents=True, exist_ok=True)
            write_frames(d / "images.f32", imgs)
        entries.append(
            {
                "name": spec.name,
                "pattern": spec.pattern,
                "pos_dir": f"{spec.name}/pos",
                "neg_dir": f"{spec.name}/neg",
            }
        )
    (out / "concepts.json").write_text(json.dumps(entries, indent=1), encoding="utf-8")
    return out


def load_concept_bank(bank_dir, height: int, width: int) -> list[tuple[str, np.ndarray, np.ndarray]]:
    bank_dir = Path(bank_dir)
    entries = json.loads((bank_dir / "concepts.json").read_text(encoding="utf-8"))
    names = [e["name"] for e in entries]
    if len(set(names)) != len(names):
        raise CorruptDatasetError("duplicate concept names")
    return [
        (
            e["name"],
            read_frames(bank_dir / e["pos_dir"] / "images.f32", None, height, width),
            read_frames(bank_dir / e["neg_dir"] / "images.f32", None, height, width),
        )
        for e in entries
    ]
