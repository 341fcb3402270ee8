"""Numerical kernels shared by the rest of the package.

Everything here works in float64. Random streams come from numpy's PCG64
bit generator, which is fully specified and produces the same sequence on
every platform for a given seed. Child streams are derived with
``numpy.random.SeedSequence`` so parallel work never shares a generator.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

NORM_EPS = 1e-12


class InvalidInputError(ValueError):
    """Raised when an argument has the wrong shape or an illegal value."""


def _as_image(x) -> np.ndarray:
    x = np.asarray(x)
    if x.ndim != 2:
        raise InvalidInputError(f"expected a 2D array, got shape {x.shape}")
    if x.shape[0] < 2 or x.shape[1] < 2:
        raise InvalidInputError(f"image extent must be at least 2x2, got {x.shape}")
    return x


def fft2(x) -> np.ndarray:
    """Unshifted 2D DFT of an ``H x W`` image.

    Bin ``(0, 0)`` holds the DC term, i.e. the sum of all pixels.
    """
    x = _as_image(x)
    dtype = np.complex128 if np.iscomplexobj(x) else np.float64
    return np.fft.fft2(x.astype(dtype, copy=False))


def ifft2(spectrum, return_residue: bool = False):
    """Inverse of :func:`fft2`, returning the real part.

    With ``return_residue=True`` a tuple ``(image, max_abs_imag)`` is
    returned so callers can check how far from Hermitian the input was.
    """
    s = _as_image(spectrum)
    z = np.fft.ifft2(s.astype(np.complex128, copy=False))
    if return_residue:
        return z.real.copy(), float(np.max(np.abs(z.imag)))
    return z.real.copy()


def fft2_batch(xs) -> np.ndarray:
    """Transform a stack ``(N, H, W)`` over its last two axes."""
    xs = np.asarray(xs, dtype=np.float64)
    if xs.ndim != 3 or xs.shape[1] < 2 or xs.shape[2] < 2:
        raise InvalidInputError(f"expected (N, H, W) with H, W >= 2, got {xs.shape}")
    return np.fft.fft2(xs, axes=(-2, -1))


def ifft2_batch(spectra) -> np.ndarray:
    return np.fft.ifft2(np.asarray(spectra, dtype=np.complex128), axes=(-2, -1)).real


@dataclass(frozen=True)
class PcaModel:
    """Fitted principal-component projection.

    ``basis`` has one principal direction per row, ordered by descending
    explained variance. ``truncated`` is set when fewer directions than
    requested were available.
    """

    mean: np.ndarray
    basis: np.ndarray
    explained_variance: np.ndarray
    truncated: bool = False

    @property
    def n_components(self) -> int:
        return self.basis.shape[0]

    @property
    def input_dim(self) -> int:
        return self.mean.shape[0]


def pca_fit(rows, n_components: int) -> PcaModel:
    """Fit PCA by eigendecomposition of the population covariance.

    Each basis row is signed so that its largest-magnitude entry is
    positive. Directions with (numerically) zero variance are not
    retained; if that leaves fewer than ``n_components`` the model is
    flagged as truncated.
    """
    X = np.asarray(rows, dtype=np.float64)
    if X.ndim != 2 or X.shape[0] < 2:
        raise InvalidInputError("pca_fit needs a 2D matrix with at least two rows")
    if n_components < 1:
        raise InvalidInputError("n_components must be positive")
    n, dim = X.shape
    mean = X.mean(axis=0)
    centered = X - mean
    cov = centered.T @ centered / n
    evals, evecs = np.linalg.eigh(cov)
    order = np.argsort(evals)[::-1]
    evals = np.clip(evals[order], 0.0, None)
    evecs = evecs[:, order]

    top = evals[0] if evals.size else 0.0
    rank = int(np.sum(evals > max(top * 1e-12, 1e-15)))
    keep = min(n_components, n, dim, rank)
    basis = evecs[:, :keep].T.copy()
    for row in basis:
        if row[np.argmax(np.abs(row))] < 0:
            row *= -1.0
    return PcaModel(
        mean=mean,
        basis=basis,
        explained_variance=evals[:keep].copy(),
        truncated=keep < n_components,
    )


def pca_transform(model: PcaModel, h) -> np.ndarray:
    """Project one vector ``(D,)`` or a stack ``(N, D)`` onto the basis."""
    h = np.asarray(h, dtype=np.float64)
    if h.shape[-1] != model.input_dim:
        raise InvalidInputError(
            f"expected trailing dimension {model.input_dim}, got {h.shape[-1]}"
        )
    return (h - model.mean) @ model.basis.T


def pca_inverse(model: PcaModel, z) -> np.ndarray:
    return np.asarray(z, dtype=np.float64) @ model.basis + model.mean


def cosine_similarity(a, b) -> float:
    """Cosine of the angle between ``a`` and ``b``; 0 if either is ~zero."""
    a = np.asarray(a, dtype=np.float64).ravel()
    b = np.asarray(b, dtype=np.float64).ravel()
    if a.shape != b.shape:
        raise InvalidInputError(f"dimension mismatch: {a.shape} vs {b.shape}")
    if a.size == 0:
        raise InvalidInputError("cosine similarity of empty vectors")
    na = np.linalg.norm(a)
    nb = np.linalg.norm(b)
    if na < NORM_EPS or nb < NORM_EPS:
        return 0.0
    return float(a @ b / (na * nb))


def population_variance(values) -> float:
    v = np.asarray(values, dtype=np.float64).ravel()
    if v.size == 0:
        raise InvalidInputError("variance of an empty list")
    return float(np.mean((v - v.mean()) ** 2))


def make_rng(seed: int) -> np.random.Generator:
    """PCG64 generator for a 64-bit seed."""
    return np.random.Generator(np.random.PCG64(int(seed) & 0xFFFFFFFFFFFFFFFF))


def child_seed(parent: int, *stream: int) -> int:
    """Derive an independent 64-bit seed from ``parent`` and a stream path."""
    ss = np.random.SeedSequence(
        entropy=int(parent) & 0xFFFFFFFFFFFFFFFF, spawn_key=tuple(int(s) for s in stream)
    )
    return int(ss.generate_state(1, dtype=np.uint64)[0])
