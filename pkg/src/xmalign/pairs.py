"""Per-timestep audio-visual correlation scoring and moment selection."""

from dataclasses import asdict, dataclass
from enum import Enum

import numpy as np

from .data import Dataset, projections
from .errors import ContractError

LOW_CONFIDENCE = 0.1


class PairSource(str, Enum):
    SELECTED_TOP1 = "SELECTED_TOP1"
    MID_FRAME = "MID_FRAME"


@dataclass
class MomentAnnotation:
    clip_id: int
    mode: str
    indices: list
    scores: list
    low_confidence: bool = False

    def to_json(self) -> dict:
        return asdict(self)


def correlation_scores(q_visual, q_audio) -> np.ndarray:
    """Row-wise dot products of two (T, m) feature streams."""
    qv = np.asarray(q_visual, dtype=np.float64)
    qa = np.asarray(q_audio, dtype=np.float64)
    if qv.ndim != 2 or qv.shape != qa.shape or qv.shape[0] < 1:
        raise ContractError(f"expected matching (T, m) streams, got {qv.shape} and {qa.shape}")
    return np.einsum("tm,tm->t", qv, qa)


def top_k_moments(scores, k: int, clip_id: int = -1, mode: str = PairSource.SELECTED_TOP1.value) -> MomentAnnotation:
    scores = np.asarray(scores, dtype=np.float64)
    t_len = scores.shape[0]
    if not 1 <= k <= t_len:
        raise ContractError(f"k={k} outside [1, {t_len}]")
    if not np.all(np.isfinite(scores)):
        raise ContractError("scores must be finite")
    # stable sort on -score keeps the earliest timestep first among ties
    order = np.argsort(-scores, kind="stable")[:k]
    return MomentAnnotation(clip_id, mode, [int(i) for i in order], [float(s) for s in scores])


def _unit_rows(x):
    n = np.linalg.norm(x, axis=-1, keepdims=True)
    return np.divide(x, n, out=np.zeros_like(x), where=n > 0)


class StreamScorer:
    """Stand-in localizer: maps both observation streams back to the shared
    latent space with the synthesizer's (pseudo-inverse) projections, then
    unit-normalizes each timestep.
    """

    def __init__(self, dataset: Dataset):
        p_v, p_a, _ = projections(dataset.header)
        self.unproject_v = np.linalg.pinv(p_v)
        self.unproject_a = np.linalg.pinv(p_a)

    def features(self, visual, audio):
        qv = _unit_rows(np.asarray(visual, np.float64) @ self.unproject_v.T)
        qa = _unit_rows(np.asarray(audio, np.float64) @ self.unproject_a.T)
        return qv, qa

    def __call__(self, visual, audio) -> np.ndarray:
        return correlation_scores(*self.features(visual, audio))


def annotate_dataset(dataset: Dataset, mode=PairSource.SELECTED_TOP1, scorer=None,
                     threshold: float = LOW_CONFIDENCE, indices=None) -> list:
    """One MomentAnnotation per clip (or per clip in ``indices``)."""
    mode = PairSource(mode)
    if len(dataset) == 0:
        raise ContractError("empty dataset")
    if scorer is None:
        scorer = StreamScorer(dataset)
    rows = range(len(dataset)) if indices is None else indices
    t_len = dataset.header.timesteps
    out = []
    for i in rows:
        scores = scorer(dataset.visual[i], dataset.audio[i])
        if mode == PairSource.MID_FRAME:
            ann = MomentAnnotation(int(dataset.ids[i]), mode.value, [t_len // 2], [float(s) for s in scores])
        else:
            ann = top_k_moments(scores, 1, int(dataset.ids[i]), mode.value)
        ann.low_confidence = bool(np.max(scores) < threshold)
        out.append(ann)
    return out


def selected_indices(annotations) -> np.ndarray:
    return np.array([a.indices[0] for a in annotations], dtype=np.int64)
