"""Concept vectors, concept sensitivity scores and bias-aware sampling.

A concept vector is the unit normal of a linear probe that separates
concept images from matched negatives in the model's feature space.

For an environment ``k`` let ``M_k`` be the gradient of the mean loss over
its members with respect to the head weights (shape ``C x D``). The
sensitivity of concept ``l`` is the population variance over environments
of ``(M_k @ v_l)[y_l]``, where ``y_l`` is the class with the largest summed
projection. A high score means the concept's pull on the loss changes
from environment to environment, i.e. a spurious association.

Sampling weights combine inverse cluster size with the probability that
at least one of the cluster's present concepts is "biased"::

    r(k,y) = 1 / |C_k^y|
    P(l,y) = S_l^y / sum_{l' in L_y} S_l'^y
    S(k,y) = 1 - prod_{l in L_{k,y}} (1 - P(l,y))
    W(k,y) = S(k,y) * r(k,y)
"""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .clustering import ClusterModel
from .model import MlpParams, forward, head_gradient, softmax
from .numerics import InvalidInputError, make_rng, population_variance

SAMPLING_MODES = ("BS", "PS")


class LowQualityConceptWarning(UserWarning):
    pass


class EmptyClusterWarning(UserWarning):
    pass


class EmptyEnvironmentError(ValueError):
    pass


@dataclass
class ConceptVector:
    name: str
    v: np.ndarray
    accuracy: float


def _logistic_fit(X, t, l2, tol, max_iter):
    """Minimise mean log-loss + l2/2 |w|^2 (bias unpenalised) by accelerated GD."""
    n, d = X.shape
    Xa = np.hstack([X, np.ones((n, 1))])
    lipschitz = 0.25 * np.linalg.eigvalsh(Xa.T @ Xa / n).max() + l2
    step = 1.0 / lipschitz
    reg = np.full(d + 1, l2)
    reg[-1] = 0.0

    def grad(theta):
        z = Xa @ theta
        p = 0.5 * (1.0 + np.tanh(0.5 * z))
        return Xa.T @ (p - t) / n + reg * theta

    theta = np.zeros(d + 1)
    y = theta.copy()
    momentum = 1.0
    for _ in range(max_iter):
        g = grad(y)
        new = y - step * g
        new_momentum = 0.5 * (1 + np.sqrt(1 + 4 * momentum**2))
        y = new + (momentum - 1) / new_momentum * (new - theta)
        # restart when the momentum step goes uphill
        if np.dot(g, new - theta) > 0:
            y = new.copy()
            new_momentum = 1.0
        theta, momentum = new, new_momentum
        if np.linalg.norm(grad(theta)) < tol:
            break
    return theta[:-1], theta[-1]


def fit_concept_vector(
    pos,
    neg,
    name: str = "",
    l2: float = 1e-3,
    tol: float = 1e-6,
    holdout: float = 0.2,
    seed: int = 0,
    max_iter: int = 20000,
) -> ConceptVector:
    """Linear probe separating ``pos`` from ``neg`` feature rows.

    Features are standardised per coordinate before fitting, so the
    resulting direction does not depend on the overall feature scale. The
    returned ``v`` is the boundary normal in the original feature space,
    oriented towards the positives.
    """
    pos = np.asarray(pos, dtype=np.float64)
    neg = np.asarray(neg, dtype=np.float64)
    if len(pos) < 2 or len(neg) < 2:
        raise InvalidInputError("need at least two samples per side")
    rng = make_rng(seed)
    n_hold_pos = int(np.floor(holdout * len(pos)))
    n_hold_neg = int(np.floor(holdout * len(neg)))
    pos_order, neg_order = rng.permutation(len(pos)), rng.permutation(len(neg))
    train_X = np.vstack([pos[pos_order[n_hold_pos:]], neg[neg_order[n_hold_neg:]]])
    train_t = np.r_[np.ones(len(pos) - n_hold_pos), np.zeros(len(neg) - n_hold_neg)]
    if n_hold_pos and n_hold_neg:
        test_X = np.vstack([pos[pos_order[:n_hold_pos]], neg[neg_order[:n_hold_neg]]])
        test_t = np.r_[np.ones(n_hold_pos), np.zeros(n_hold_neg)]
    else:
        test_X, test_t = train_X, train_t

    mu = train_X.mean(axis=0)
    sd = train_X.std(axis=0)
    sd = np.where(sd > 1e-12 * max(sd.max(), 1e-300), sd, np.inf)
    w, b = _logistic_fit((train_X - mu) / sd, train_t, l2, tol, max_iter)
    pred = ((test_X - mu) / sd @ w + b) > 0
    accuracy = float(np.mean(pred == test_t.astype(bool)))

    v = w / sd
    norm = np.linalg.norm(v)
    if norm < 1e-300:
        v = np.zeros_like(v)
        v[0] = 1.0
    else:
        v = v / norm
    if accuracy < 0.6:
        warnings.warn(
            f"concept {name!r}: probe accuracy {accuracy:.2f} is below 0.6",
            LowQualityConceptWarning,
            stacklevel=2,
        )
    return ConceptVector(name, v, accuracy)


def gradient_matrix(params: MlpParams, frames, labels) -> np.ndarray:
    """Head-weight gradient ``M_k`` of the mean loss over an environment's members."""
    if len(labels) == 0:
        raise EmptyEnvironmentError("environment has no members in this batch")
    return head_gradient(params, frames, labels)


def gradient_matrices_from_batch(params: MlpParams, frames, labels, env_ids, n_envs: int):
    """``M_k`` for every environment present in a batch, from one forward pass.

    Returns ``{env index: C x D matrix}``; environments without members are
    left out.
    """
    labels = np.asarray(labels, dtype=int)
    env_ids = np.asarray(env_ids)
    tr = forward(params, frames)
    resid = softmax(tr.logits)
    resid[np.arange(len(labels)), labels] -= 1.0
    out = {}
    for k in range(n_envs):
        sel = env_ids == k
        if sel.any():
            out[k] = resid[sel].T @ tr.h[sel] / sel.sum()
    return out


@dataclass
class CssRecord:
    concept: str
    score: float
    dominant_class: int
    masked: np.ndarray  # S_l^y for y = 0, 1
    projections: np.ndarray = field(default_factory=lambda: np.zeros((0, 2)))


def css(concepts: list[ConceptVector], matrices) -> list[CssRecord]:
    """Concept sensitivity scores for a set of environment gradient matrices."""
    mats = [np.asarray(m, dtype=np.float64) for m in (matrices.values() if isinstance(matrices, dict) else matrices)]
    if not mats:
        raise InvalidInputError("css needs at least one gradient matrix")
    n_classes = mats[0].shape[0]
    records = []
    for c in concepts:
        proj = np.array([m @ c.v for m in mats])  # (K, C)
        dominant = int(np.argmax(proj.sum(axis=0)))
        score = population_variance(proj[:, dominant])
        masked = np.zeros(n_classes)
        masked[dominant] = score
        records.append(CssRecord(c.name, score, dominant, masked, proj))
    return records


def css_report(records: list[CssRecord]) -> list[dict]:
    """Concepts ranked by score, highest first (ties keep bank order)."""
    order = sorted(range(len(records)), key=lambda i: -records[i].score)
    return [
        {"concept": records[i].concept, "S_l": records[i].score, "y_l": records[i].dominant_class, "rank": r + 1}
        for r, i in enumerate(order)
    ]


def write_css_report(path, records) -> Path:
    path = Path(path)
    path.write_text(json.dumps(css_report(records), indent=1), encoding="utf-8")
    return path


def projection_means(features, concepts: list[ConceptVector]) -> np.ndarray:
    H = np.asarray(features, dtype=np.float64)
    return np.array([float(np.mean(H @ c.v)) for c in concepts])


def concept_presence(cluster_features, concepts: list[ConceptVector], global_means) -> set[str]:
    """Concepts whose mean projection over the cluster beats the global mean."""
    H = np.asarray(cluster_features, dtype=np.float64)
    if len(H) == 0:
        raise InvalidInputError("empty cluster")
    means = projection_means(H, concepts)
    return {c.name for c, m, g in zip(concepts, means, global_means) if m > g}


def presence_sets(model: ClusterModel, features, concepts: list[ConceptVector]) -> dict[tuple[int, int], set[str]]:
    """``L_{k,y}`` for every nonempty cluster, against the train-wide means."""
    glob = projection_means(features, concepts)
    H = np.asarray(features, dtype=np.float64)
    return {
        (k, y): concept_presence(H[m], concepts, glob)
        for y, ms in model.members.items()
        for k, m in enumerate(ms)
        if len(m)
    }


@dataclass
class SamplingWeights:
    k: int
    r: dict[tuple[int, int], float]
    p_size: dict[tuple[int, int], float]
    p_concept: dict[tuple[str, int], float]
    bias_score: dict[tuple[int, int], float]
    weight: dict[tuple[int, int], float]
    prob: dict[int, np.ndarray]  # per class, over cluster index
    presence: dict[tuple[int, int], set[str]] = field(default_factory=dict)


def sampling_weights(
    sizes: dict[tuple[int, int], int],
    records: list[CssRecord] | None,
    presence: dict[tuple[int, int], set[str]] | None,
    mode: str = "BS",
) -> SamplingWeights:
    """Per-cluster partner-sampling distribution for each class.

    ``mode="PS"`` uses inverse cluster size only; ``"BS"`` multiplies it by
    the cluster's concept-bias score. A class whose weights are all zero
    falls back to a uniform choice among its nonempty clusters.
    """
    if mode not in SAMPLING_MODES:
        raise InvalidInputError(f"unknown sampling mode {mode!r}")
    k = 1 + max(kk for kk, _ in sizes)
    classes = sorted({y for _, y in sizes})
    r = {}
    for key, n in sizes.items():
        if n == 0:
            warnings.warn(f"cluster {key} is empty and gets weight 0", EmptyClusterWarning, stacklevel=2)
            r[key] = 0.0
        else:
            r[key] = 1.0 / n
    total_r = sum(r.values())
    p_size = {key: (v / total_r if total_r > 0 else 0.0) for key, v in r.items()}

    p_concept: dict[tuple[str, int], float] = {}
    bias_score = {key: 0.0 for key in sizes}
    presence = presence or {}
    if mode == "BS":
        masked = {rec.concept: rec.masked for rec in (records or [])}
        for y in classes:
            l_y = sorted(set().union(*(presence.get((kk, y), set()) for kk in range(k))) & masked.keys())
            denom = sum(masked[name][y] for name in l_y)
            for name in l_y:
                p_concept[(name, y)] = masked[name][y] / denom if denom > 0 else 0.0
            for kk in range(k):
                if sizes.get((kk, y), 0) == 0:
                    continue
                miss = 1.0
                for name in presence.get((kk, y), set()):
                    miss *= 1.0 - p_concept.get((name, y), 0.0)
                bias_score[(kk, y)] = 1.0 - miss
        weight = {key: bias_score[key] * r[key] for key in sizes}
    else:
        weight = dict(r)

    prob = {}
    for y in classes:
        w = np.array([weight.get((kk, y), 0.0) for kk in range(k)])
        if w.sum() > 0:
            prob[y] = w / w.sum()
        else:
            nonempty = np.array([sizes.get((kk, y), 0) > 0 for kk in range(k)], dtype=float)
            prob[y] = nonempty / nonempty.sum()
    return SamplingWeights(k, r, p_size, p_concept, bias_score, weight, prob, dict(presence))


def sample_partner(index: int, label: int, weights: SamplingWeights, model: ClusterModel, rng) -> int:
    """Draw a same-class partner: cluster by weight, then uniformly inside it."""
    k = int(rng.choice(weights.k, p=weights.prob[label]))
    members = model.members[label][k]
    if len(members) >= 2:
        members = members[members != index]
    return int(members[rng.integers(len(members))])
