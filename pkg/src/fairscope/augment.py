"""Frequency decomposition and pairwise image augmentations.

The proposed augmentation keeps the high-frequency part of ``x_i`` intact
and swaps a square patch of its low-frequency part for the same patch of
``x_j``'s low-frequency part::

    x' = M_cut * LF(x_i) + HF(x_i) + (1 - M_cut) * LF(x_j)

MixUp, CutMix and frequency masking are provided as ablation baselines.
All functions accept a single ``(H, W)`` image; the ``*_batch`` variants
work on ``(N, H, W)`` stacks.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .numerics import InvalidInputError, fft2, ifft2

LAYOUTS = ("centered", "literal")
AUGMENTERS = ("MU", "CM", "FM", "PF")


@dataclass(frozen=True)
class FreqMaskConfig:
    """Low-frequency mask parameters.

    ``centered`` keeps a block of rows/columns symmetric about DC: a row of
    signed frequency ``f`` is kept when ``min(2|f| + 1, H) <= floor(alpha*H)``.
    The block is conjugate-symmetric, so low/high parts of a real image are
    themselves real and the split is an exact projection.

    ``literal`` keeps the corner block ``u < floor(alpha*H), v < floor(alpha*W)``
    of the unshifted spectrum. That block is not conjugate-symmetric; taking
    the real part after inversion makes LF only approximately idempotent.
    """

    alpha: float = 0.75
    layout: str = "centered"

    def __post_init__(self):
        if not 0.0 <= self.alpha <= 1.0:
            raise InvalidInputError(f"alpha must lie in [0, 1], got {self.alpha}")
        if self.layout not in LAYOUTS:
            raise InvalidInputError(f"unknown mask layout {self.layout!r}")


def _axis_keep(n: int, alpha: float, layout: str) -> np.ndarray:
    budget = int(np.floor(alpha * n + 1e-9))
    idx = np.arange(n)
    if layout == "literal":
        return idx < budget
    signed = np.where(idx <= n // 2, idx, idx - n)
    return np.minimum(2 * np.abs(signed) + 1, n) <= budget


def low_cutoff(n: int, alpha: float) -> int:
    """Largest |frequency| kept by the centered mask along an axis of length n.

    Returns -1 when nothing is kept.
    """
    keep = _axis_keep(n, alpha, "centered")
    idx = np.arange(n)
    signed = np.abs(np.where(idx <= n // 2, idx, idx - n))
    return int(signed[keep].max()) if keep.any() else -1


def low_freq_mask(height: int, width: int, cfg: FreqMaskConfig = FreqMaskConfig()) -> np.ndarray:
    rows = _axis_keep(height, cfg.alpha, cfg.layout)
    cols = _axis_keep(width, cfg.alpha, cfg.layout)
    return np.outer(rows, cols).astype(np.float64)


def low_pass(x, cfg: FreqMaskConfig = FreqMaskConfig()) -> np.ndarray:
    """Low-frequency component LF(x); works on ``(H, W)`` or ``(N, H, W)``."""
    x = np.asarray(x)
    if x.ndim not in (2, 3):
        raise InvalidInputError(f"expected (H, W) or (N, H, W), got {x.shape}")
    mask = low_freq_mask(x.shape[-2], x.shape[-1], cfg)
    if mask.all():
        return x.astype(np.float64 if not np.iscomplexobj(x) else np.complex128, copy=True)
    if not mask.any():
        return np.zeros_like(x, dtype=np.float64)
    if x.ndim == 2:
        return ifft2(fft2(x) * mask)
    return np.fft.ifft2(np.fft.fft2(x, axes=(-2, -1)) * mask, axes=(-2, -1)).real


def high_pass(x, cfg: FreqMaskConfig = FreqMaskConfig()) -> np.ndarray:
    """HF(x) = x - LF(x)."""
    x = np.asarray(x)
    return x - low_pass(x, cfg)


@dataclass(frozen=True)
class CutPatch:
    """Square patch; inside it pixels come from the partner image."""

    top: int
    left: int
    side: int

    def mask(self, height: int, width: int) -> np.ndarray:
        """Binary keep-mask: 1 keeps ``x_i``, 0 takes the partner."""
        if self.top < 0 or self.left < 0 or self.top + self.side > height or self.left + self.side > width:
            raise InvalidInputError(f"patch {self} does not fit in {height}x{width}")
        m = np.ones((height, width))
        m[self.top : self.top + self.side, self.left : self.left + self.side] = 0.0
        return m


def sample_patch(height: int, width: int, rng: np.random.Generator) -> CutPatch:
    """lambda ~ U(0.1, 0.5); side = round(H * sqrt(lambda)); uniform position."""
    lam = rng.uniform(0.1, 0.5)
    side = min(int(round(height * np.sqrt(lam))), height, width)
    top = int(rng.integers(0, height - side + 1))
    left = int(rng.integers(0, width - side + 1))
    return CutPatch(top, left, side)


def _check_pair(x_i, x_j):
    x_i = np.asarray(x_i, dtype=np.float64)
    x_j = np.asarray(x_j, dtype=np.float64)
    if x_i.shape != x_j.shape:
        raise InvalidInputError(f"extent mismatch: {x_i.shape} vs {x_j.shape}")
    if x_i.ndim != 2:
        raise InvalidInputError(f"expected 2D images, got {x_i.shape}")
    return x_i, x_j


def freq_cutmix(x_i, x_j, cfg: FreqMaskConfig = FreqMaskConfig(), rng=None, patch: CutPatch | None = None):
    """Frequency-aware CutMix of ``x_i`` with partner ``x_j``.

    Either ``rng`` or an explicit ``patch`` must be given.
    """
    x_i, x_j = _check_pair(x_i, x_j)
    if patch is None:
        patch = sample_patch(*x_i.shape, rng)
    keep = patch.mask(*x_i.shape)
    lf_i = low_pass(x_i, cfg)
    return keep * lf_i + (x_i - lf_i) + (1.0 - keep) * low_pass(x_j, cfg)


def cutmix(x_i, x_j, rng=None, patch: CutPatch | None = None):
    x_i, x_j = _check_pair(x_i, x_j)
    if patch is None:
        patch = sample_patch(*x_i.shape, rng)
    keep = patch.mask(*x_i.shape)
    return keep * x_i + (1.0 - keep) * x_j


def mixup(x_i, x_j, rng=None, lam: float | None = None):
    x_i, x_j = _check_pair(x_i, x_j)
    if lam is None:
        lam = rng.beta(1.0, 1.0)
    return lam * x_i + (1.0 - lam) * x_j


@dataclass(frozen=True)
class SpectralRect:
    top: int
    left: int
    height: int
    width: int


def sample_spectral_rect(height: int, width: int, rng: np.random.Generator) -> SpectralRect:
    # at most H/2 x W/2 bins, i.e. <= 25% of the spectrum
    h = int(rng.integers(0, height // 2 + 1))
    w = int(rng.integers(0, width // 2 + 1))
    top = int(rng.integers(0, height - h + 1))
    left = int(rng.integers(0, width - w + 1))
    return SpectralRect(top, left, h, w)


def freq_mask(x, rng=None, rect: SpectralRect | None = None):
    """Zero a rectangle of the unshifted spectrum and invert (real part)."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2:
        raise InvalidInputError(f"expected a 2D image, got {x.shape}")
    if rect is None:
        rect = sample_spectral_rect(*x.shape, rng)
    if rect.height == 0 or rect.width == 0:
        return x.copy()
    s = fft2(x)
    s[rect.top : rect.top + rect.height, rect.left : rect.left + rect.width] = 0.0
    return ifft2(s)


def augment_batch(mode: str, xs, partners, rng: np.random.Generator, cfg: FreqMaskConfig = FreqMaskConfig()):
    """Apply one augmenter to each ``(xs[n], partners[n])`` pair.

    Random draws happen in sample order so results depend only on ``rng``.
    ``FM`` ignores the partners.
    """
    xs = np.asarray(xs, dtype=np.float64)
    partners = np.asarray(partners, dtype=np.float64)
    if mode not in AUGMENTERS:
        raise InvalidInputError(f"unknown augmenter {mode!r}")
    if xs.shape != partners.shape or xs.ndim != 3:
        raise InvalidInputError(f"batch shape mismatch: {xs.shape} vs {partners.shape}")
    n, height, width = xs.shape
    if mode == "MU":
        lam = rng.beta(1.0, 1.0, size=n)[:, None, None]
        return lam * xs + (1.0 - lam) * partners
    if mode == "FM":
        return np.stack([freq_mask(x, rng) for x in xs])
    keep = np.stack([sample_patch(height, width, rng).mask(height, width) for _ in range(n)])
    if mode == "CM":
        return keep * xs + (1.0 - keep) * partners
    lf_x = low_pass(xs, cfg)
    return keep * lf_x + (xs - lf_x) + (1.0 - keep) * low_pass(partners, cfg)


def band_energy(x, band_mask) -> float:
    """Sum of |F(x)|^2 over the bins selected by ``band_mask``."""
    return float(np.sum(np.abs(fft2(x)) ** 2 * band_mask))


def to_pgm_bytes(img) -> bytes:
    """8-bit binary PGM, min-max normalised (a flat image maps to zeros)."""
    img = np.asarray(img, dtype=np.float64)
    if img.ndim != 2:
        raise InvalidInputError(f"expected a 2D image, got {img.shape}")
    lo, hi = float(img.min()), float(img.max())
    if hi - lo > 0:
        scaled = np.round((img - lo) / (hi - lo) * 255.0)
    else:
        scaled = np.zeros_like(img)
    h, w = img.shape
    return f"P5\n{w} {h}\n255\n".encode("ascii") + scaled.astype(np.uint8).tobytes()


def write_pgm(path, img) -> Path:
    path = Path(path)
    path.write_bytes(to_pgm_bytes(img))
    return path


def preview(x_i, x_j, out_dir, cfg: FreqMaskConfig = FreqMaskConfig(), rng=None, patch=None) -> list[Path]:
    """Write x_i, x_j, LF(x_i), HF(x_i) and the mixed image as PGM files."""
    x_i, x_j = _check_pair(x_i, x_j)
    if patch is None:
        patch = sample_patch(*x_i.shape, rng)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    images = {
        "x_i": x_i,
        "x_j": x_j,
        "lf_x_i": low_pass(x_i, cfg),
        "hf_x_i": high_pass(x_i, cfg),
        "mixed": freq_cutmix(x_i, x_j, cfg, patch=patch),
    }
    return [write_pgm(out / f"{name}.pgm", img) for name, img in images.items()]
