"""Modality-gap geometry on unit-normalized paired embeddings."""

from dataclasses import dataclass, field

import numpy as np

from .embedding import as_matrix, normalize_rows
from .errors import ContractError

DEGENERATE_NORM = 1e-12


def _paired(z_visual, z_audio):
    zv, za = as_matrix(z_visual), as_matrix(z_audio)
    if zv.shape != za.shape:
        raise ContractError(f"shape mismatch: {zv.shape} vs {za.shape}")
    return zv, za


def modality_gaps(z_visual, z_audio) -> np.ndarray:
    """Row i is the normalized visual row minus the normalized audio row."""
    zv, za = _paired(z_visual, z_audio)
    return normalize_rows(zv) - normalize_rows(za)


def magnitude_stats(gaps):
    """(per-row norms, mean, population std)."""
    norms = np.linalg.norm(as_matrix(gaps), axis=1)
    return norms, float(norms.mean()), float(norms.std())


def _mean_gap_direction(gaps):
    mean_gap = as_matrix(gaps).mean(axis=0)
    n = np.linalg.norm(mean_gap)
    if n <= DEGENERATE_NORM:
        return None
    return mean_gap / n


def orthogonality_samples(z_side, gaps):
    """Cosine between each centred feature row and the mean gap.

    Returns ``(samples, degenerate)``. When the mean gap has no direction
    the samples are NaN and ``degenerate`` is True. A row that coincides
    with the feature mean has cosine 0.
    """
    z = as_matrix(z_side)
    direction = _mean_gap_direction(gaps)
    if direction is None:
        return np.full(z.shape[0], np.nan), True
    centred = z - z.mean(axis=0)
    norms = np.linalg.norm(centred, axis=1)
    dots = centred @ direction
    cos = np.divide(dots, norms, out=np.zeros_like(dots), where=norms > DEGENERATE_NORM)
    return np.clip(cos, -1.0, 1.0), False


def centering_values(z_side, gaps):
    """Per-dimension mean of each row after removing its component along
    the unit mean gap g'. Returns ``(values, degenerate)``."""
    z = as_matrix(z_side)
    direction = _mean_gap_direction(gaps)
    if direction is None:
        return np.full(z.shape[1], np.nan), True
    residual = z - np.outer(z @ direction, direction)
    return residual.mean(axis=0), False


def alignment_score(z_visual, z_audio) -> float:
    """Mean cosine similarity over pairs."""
    zv, za = _paired(z_visual, z_audio)
    cos = np.sum(normalize_rows(zv) * normalize_rows(za), axis=1)
    return float(np.clip(cos, -1.0, 1.0).mean())


@dataclass
class Projection:
    coords: np.ndarray  # (2N, 2); visual rows first, then audio rows
    modality: list
    explained: np.ndarray
    rank_deficient: bool


def project_2d(z_visual, z_audio) -> Projection:
    """PCA of the stacked pairs onto the top two principal axes.

    Each axis is signed so its first non-negligible loading is positive.
    If fewer than two axes carry variance, the missing coordinate is 0 and
    ``rank_deficient`` is set.
    """
    zv, za = _paired(z_visual, z_audio)
    if zv.shape[0] < 2:
        raise ContractError("need at least two pairs")
    x = np.vstack([zv, za])
    centred = x - x.mean(axis=0)
    cov = centred.T @ centred / x.shape[0]
    evals, evecs = np.linalg.eigh((cov + cov.T) / 2)
    order = np.argsort(evals)[::-1]
    evals, evecs = evals[order], evecs[:, order]
    scale = max(float(evals[0]), 0.0)
    tol = max(scale, 1.0) * 1e-12
    axes = np.zeros((x.shape[1], 2))
    rank = 0
    for j in range(min(2, x.shape[1])):
        if evals[j] > tol:
            v = evecs[:, j]
            lead = np.flatnonzero(np.abs(v) > 1e-12)[0]
            axes[:, j] = v if v[lead] > 0 else -v
            rank += 1
    explained = np.array([max(float(e), 0.0) for e in evals[:2]] + [0.0] * (2 - min(2, len(evals))))
    return Projection(centred @ axes, ["visual"] * zv.shape[0] + ["audio"] * za.shape[0], explained, rank < 2)


@dataclass
class GapReport:
    magnitudes: list
    magnitude_mean: float
    magnitude_std: float
    orthogonality_visual: list
    orthogonality_audio: list
    centering_visual: list
    centering_audio: list
    alignment: float
    num_pairs: int
    degenerate: bool = False
    summary: dict = field(default_factory=dict)

    def to_json(self) -> dict:
        def clean(xs):
            return [None if not np.isfinite(x) else float(x) for x in xs]

        return {
            "magnitudes": clean(self.magnitudes),
            "magnitude_mean": self.magnitude_mean,
            "magnitude_std": self.magnitude_std,
            "orthogonality_visual": clean(self.orthogonality_visual),
            "orthogonality_audio": clean(self.orthogonality_audio),
            "centering_visual": clean(self.centering_visual),
            "centering_audio": clean(self.centering_audio),
            "alignment": self.alignment,
            "num_pairs": self.num_pairs,
            "degenerate": self.degenerate,
            "summary": self.summary,
        }


def gap_report(z_visual, z_audio) -> GapReport:
    """Every gap statistic, computed on unit-normalized rows."""
    zv, za = _paired(z_visual, z_audio)
    zv, za = normalize_rows(zv), normalize_rows(za)
    gaps = zv - za
    norms, mean, std = magnitude_stats(gaps)
    ov, deg = orthogonality_samples(zv, gaps)
    oa, _ = orthogonality_samples(za, gaps)
    cv, _ = centering_values(zv, gaps)
    ca, _ = centering_values(za, gaps)
    summary = {}
    if not deg:
        summary = {
            "mean_orthogonality_visual": float(ov.mean()),
            "mean_orthogonality_audio": float(oa.mean()),
            "max_abs_centering_visual": float(np.abs(cv).max()),
            "max_abs_centering_audio": float(np.abs(ca).max()),
        }
    return GapReport(
        norms.tolist(), mean, std, ov.tolist(), oa.tolist(), cv.tolist(), ca.tolist(),
        alignment_score(zv, za), zv.shape[0], deg, summary,
    )
