"""Evaluation: frozen frame classifier, generation from audio, and the
baseline grid."""

from dataclasses import dataclass

import numpy as np
from scipy.special import log_softmax, softmax

from .data import Dataset
from .errors import ContractError
from .networks import Adam, AdamConfig, Network, generate
from .training import condition, event_frames


@dataclass
class FrameClassifier:
    """Linear softmax head on the frozen visual expert's normalized features."""

    f_v: Network
    weight: np.ndarray
    bias: np.ndarray

    def features(self, frames):
        return condition(self.f_v.forward(np.asarray(frames, dtype=np.float64)))

    def logits(self, frames):
        return self.features(frames) @ self.weight + self.bias

    def predict_proba(self, frames) -> np.ndarray:
        return softmax(self.logits(frames), axis=1)


def train_classifier(dataset: Dataset, f_v: Network, epochs: int = 300, lr: float = 0.05) -> FrameClassifier:
    """Full-batch softmax regression on the event frames of the train split.

    Weights start at zero and the optimizer is deterministic, so the result
    depends only on the data and the frozen expert.
    """
    rows = dataset.split_indices()["train"]
    x = event_frames(dataset, rows)
    labels = np.repeat(dataset.labels[rows], dataset.masks[rows].sum(axis=1)).astype(np.int64)
    k = dataset.header.num_classes
    clf = FrameClassifier(f_v, np.zeros((f_v.spec.out_dim, k)), np.zeros(k))
    feats = clf.features(x)
    onehot = np.eye(k)[labels]
    opt = Adam([clf.weight, clf.bias], AdamConfig(lr=lr, weight_decay=0.0))
    for _ in range(epochs):
        p = softmax(feats @ clf.weight + clf.bias, axis=1)
        g = (p - onehot) / len(labels)
        opt.step([clf.weight, clf.bias], [feats.T @ g, g.sum(axis=0)])
    return clf


def classifier_recall(probs, labels, k: int) -> float:
    """Fraction of rows whose true label is among the k most probable classes.

    Ties are broken toward the lower class index.
    """
    probs = np.asarray(probs, dtype=np.float64)
    labels = np.asarray(labels)
    if probs.ndim != 2 or probs.shape[0] != labels.shape[0]:
        raise ContractError("need one probability row per label")
    if not 1 <= k <= probs.shape[1]:
        raise ContractError(f"k={k} outside [1, {probs.shape[1]}]")
    top = np.argsort(-probs, axis=1, kind="stable")[:, :k]
    return float((top == labels[:, None]).any(axis=1).mean())


def cross_entropy(probs, labels) -> float:
    p = np.asarray(probs, dtype=np.float64)
    return float(-np.mean(np.log(np.maximum(p[np.arange(len(labels)), labels], 1e-300))))


def generate_from_audio(g: Network, f_a: Network, audio, noise_dim: int, rng: np.random.Generator):
    z_a = condition(f_a.forward(audio))
    z_noise = rng.standard_normal((z_a.shape[0], noise_dim))
    return generate(g, z_noise, z_a)


BASELINE_ROWS = ("GENERATED_FROM_AUDIO", "RETRIEVAL_BASELINE", "UPPER_BOUND_FRAMES")


@dataclass
class BaselineRow:
    name: str
    recall_at_1: float
    recall_at_5: float
    frechet: float
    score: float
    per_class: list

    def to_json(self) -> dict:
        return {
            "name": self.name,
            "recall_at_1": self.recall_at_1,
            "recall_at_5": self.recall_at_5,
            "frechet": self.frechet,
            "score": self.score,
            "per_class_recall_at_1": self.per_class,
        }


@dataclass
class EvalReport:
    """Embedding retrieval recalls plus one row per generation baseline."""

    instance_recall: dict
    class_recall: dict
    rows: list
    num_queries: int
    frechet_clamped_mass: float

    def row(self, name) -> BaselineRow:
        for r in self.rows:
            if r.name == name:
                return r
        raise KeyError(name)

    def to_json(self) -> dict:
        return {
            "instance_recall": self.instance_recall,
            "class_recall": self.class_recall,
            "rows": [r.to_json() for r in self.rows],
            "num_queries": self.num_queries,
            "frechet_clamped_mass": self.frechet_clamped_mass,
        }

    def per_class_table(self) -> list:
        """Rows of (class, recall@1 for each baseline) for CSV output."""
        k = len(self.rows[0].per_class)
        return [[c] + [r.per_class[c] for r in self.rows] for c in range(k)]


def _per_class(probs, labels, num_classes):
    out = []
    for c in range(num_classes):
        sel = labels == c
        out.append(classifier_recall(probs[sel], labels[sel], 1) if sel.any() else float("nan"))
    return out


def run_baseline_grid(dataset: Dataset, f_v: Network, g: Network, f_a: Network, duration: int = 20,
                      seed: int = 1, classifier: FrameClassifier = None, splits: int = 4) -> EvalReport:
    """Score the three generation baselines on the test split.

    GENERATED_FROM_AUDIO classifies G(z_N, f_A(audio)); RETRIEVAL_BASELINE
    classifies the training frame whose embedding is nearest to f_A(audio);
    UPPER_BOUND_FRAMES classifies the real test frames. Frechet distance and
    the score analog use f_V features and classifier outputs respectively.
    """
    from .metrics import frechet_distance, rank_database, recall_at_k, score_analog
    from .training import inference_pairs

    for name, net in (("f_v", f_v), ("g", g), ("f_a", f_a)):
        if net is None:
            raise ContractError(f"missing model: {name}")
    if classifier is None:
        classifier = train_classifier(dataset, f_v)
    split_rows = dataset.split_indices()
    test = inference_pairs(dataset, f_v, split_rows["test"], duration)
    labels = dataset.labels[test.rows].astype(np.int64)
    ids = dataset.ids[test.rows]
    k = dataset.header.num_classes
    z_a = f_a.forward(test.audio)

    inst = {f"R@{n}": recall_at_k(z_a, test.visual_targets, ids, ids, n) for n in (1, 5)}
    cls = {f"R@{n}": recall_at_k(z_a, test.visual_targets, labels, labels, n) for n in (1, 5)}

    real_frames = dataset.visual[test.rows, test.moments].astype(np.float64)
    real_feats = f_v.forward(real_frames)
    noise_dim = g.spec.in_dim - f_v.spec.out_dim
    generated = generate_from_audio(g, f_a, test.audio, noise_dim, np.random.default_rng([int(seed), 30]))

    train_rows = split_rows["train"]
    db_frames = event_frames(dataset, train_rows)
    nearest = rank_database(z_a, f_v.forward(db_frames))[:, 0]
    retrieved = db_frames[nearest]

    rows, clamped = [], 0.0
    for name, outputs in zip(BASELINE_ROWS, (generated, retrieved, real_frames)):
        probs = classifier.predict_proba(outputs)
        fd, mass = frechet_distance(real_feats, f_v.forward(outputs), with_clamp=True)
        clamped = max(clamped, mass)
        rows.append(BaselineRow(
            name,
            classifier_recall(probs, labels, 1),
            classifier_recall(probs, labels, min(5, k)),
            fd,
            score_analog(probs, min(splits, len(labels))),
            _per_class(probs, labels, k),
        ))
    return EvalReport(inst, cls, rows, len(labels), clamped)
