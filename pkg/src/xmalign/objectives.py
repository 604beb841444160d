"""Alignment losses and their analytic gradients.

Three variants are supported:

* ``TOTAL_L2NCE`` - symmetric InfoNCE whose logits are negative Euclidean
  distances between unit-normalized features (temperature fixed at 1).
* ``NCE_COSINE`` - the same symmetric objective with ``(1 - cos) / tau`` as
  the distance.
* ``L2_ONLY`` - mean Euclidean distance between raw paired features.

Encoders emit raw features; the normalization step lives here and the
returned gradients are taken with respect to the raw inputs.
"""

from dataclasses import dataclass
from enum import Enum

import numpy as np
from scipy.special import logsumexp

from .embedding import as_matrix, normalize_rows, pairwise_l2
from .errors import ContractError, NumericError


class LossTag(str, Enum):
    L2_ONLY = "L2_ONLY"
    NCE_COSINE = "NCE_COSINE"
    TOTAL_L2NCE = "TOTAL_L2NCE"


class Distance(str, Enum):
    L2 = "L2"
    COSINE = "COSINE"


@dataclass(frozen=True)
class LossVariant:
    tag: LossTag = LossTag.TOTAL_L2NCE
    temperature: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "tag", LossTag(self.tag))
        if not self.temperature > 0:
            raise ContractError(f"temperature must be positive, got {self.temperature}")


@dataclass
class LossResult:
    value: float
    grad_audio: np.ndarray
    grad_visual: np.ndarray


def _check_pair(a, b):
    a, b = np.asarray(a, dtype=np.float64), np.asarray(b, dtype=np.float64)
    if not (np.all(np.isfinite(a)) and np.all(np.isfinite(b))):
        raise NumericError("non-finite features passed to the loss")
    a, b = as_matrix(a), as_matrix(b)
    if a.shape != b.shape:
        raise ContractError(f"shape mismatch: {a.shape} vs {b.shape}")
    return a, b


def _distance_matrix(a, b, distance, temperature):
    if distance == Distance.L2:
        return pairwise_l2(a, b) / temperature
    return (1.0 - a @ b.T) / temperature


def infonce_term(anchor_index, anchors, candidates, distance=Distance.L2, temperature=1.0):
    """-log softmax weight of the positive candidate for one anchor row.

    ``anchors[j]`` is paired with ``candidates[j]``; every other candidate is
    a negative.
    """
    anchors, candidates = _check_pair(anchors, candidates)
    n = anchors.shape[0]
    if not 0 <= anchor_index < n:
        raise ContractError(f"anchor index {anchor_index} out of range for {n} rows")
    a = anchors[anchor_index]
    if Distance(distance) == Distance.L2:
        d = np.linalg.norm(candidates - a, axis=1) / temperature
    else:
        d = (1.0 - candidates @ a) / temperature
    return float(d[anchor_index] + logsumexp(-d))


def _infonce_rows(dist):
    # row j: anchor j against every column; max-subtracted inside logsumexp
    return np.diag(dist) + logsumexp(-dist, axis=1)


def loss_audio_centric(batch_audio, batch_visual) -> float:
    """Mean over the batch of audio-anchored InfoNCE terms (L2 distance)."""
    a, v = _check_pair(batch_audio, batch_visual)
    dist = pairwise_l2(a, v)
    return float(np.mean(_infonce_rows(dist)))


def normalize_backward(x, xhat, g):
    """Gradient wrt raw rows ``x`` given gradient ``g`` wrt ``xhat = x / ||x||``."""
    norms = np.linalg.norm(x, axis=1, keepdims=True)
    return (g - xhat * np.sum(xhat * g, axis=1, keepdims=True)) / norms


def _symmetric_nce(a, v, variant):
    ahat, vhat = normalize_rows(a), normalize_rows(v)
    b = a.shape[0]
    tau = 1.0 if variant.tag == LossTag.TOTAL_L2NCE else variant.temperature
    if variant.tag == LossTag.TOTAL_L2NCE:
        raw = pairwise_l2(ahat, vhat)
        dist = raw / tau
    else:
        dist = _distance_matrix(ahat, vhat, Distance.COSINE, tau)
    dist_t = np.ascontiguousarray(dist.T)
    lse_a = logsumexp(-dist, axis=1)
    lse_v = logsumexp(-dist_t, axis=1)
    value = float(np.sum((np.diag(dist) + lse_a) + (np.diag(dist_t) + lse_v)) / (2 * b))

    rows = np.exp(-dist - lse_a[:, None])
    cols = np.exp(-dist_t - lse_v[:, None]).T
    g = (2.0 * np.eye(b) - rows - cols) / (2 * b)  # dL/d dist

    if variant.tag == LossTag.TOTAL_L2NCE:
        with np.errstate(divide="ignore", invalid="ignore"):
            w = np.where(raw > 0, g / (tau * raw), 0.0)
        g_ahat = w.sum(axis=1)[:, None] * ahat - w @ vhat
        g_vhat = w.sum(axis=0)[:, None] * vhat - w.T @ ahat
    else:
        g_ahat = -(g @ vhat) / tau
        g_vhat = -(g.T @ ahat) / tau
    return value, normalize_backward(a, ahat, g_ahat), normalize_backward(v, vhat, g_vhat)


def _l2_only(a, v):
    diff = a - v
    norms = np.linalg.norm(diff, axis=1)
    b = a.shape[0]
    safe = np.where(norms > 0, norms, 1.0)[:, None]
    grad_a = np.where(norms[:, None] > 0, diff / safe, 0.0) / b
    return float(np.mean(norms)), grad_a, -grad_a


def loss_total(batch_audio, batch_visual, variant: LossVariant = LossVariant()) -> LossResult:
    """Batch loss and gradients with respect to the raw audio and visual features."""
    a, v = _check_pair(batch_audio, batch_visual)
    if variant.tag == LossTag.L2_ONLY:
        value, ga, gv = _l2_only(a, v)
    else:
        value, ga, gv = _symmetric_nce(a, v, variant)
    if not (np.isfinite(value) and np.all(np.isfinite(ga)) and np.all(np.isfinite(gv))):
        raise NumericError(f"non-finite loss under {variant.tag.value}")
    return LossResult(value=value, grad_audio=ga, grad_visual=gv)
