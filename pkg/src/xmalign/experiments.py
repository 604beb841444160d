"""End-to-end pipelines shared by the command line and the acceptance tests."""

from dataclasses import replace

import numpy as np

from .config import ExperimentConfig
from .data import synth_dataset
from .evaluation import classifier_recall, generate_from_audio, train_classifier
from .gap import gap_report
from .metrics import recall_at_k
from .objectives import LossTag, LossVariant
from .pairs import PairSource
from .training import inference_pairs, pretrain_visual, train_audio_encoder

ABLATION_COLUMNS = (
    "seed", "loss_variant", "pair_source", "duration", "class_r1", "class_r5", "instance_r1",
    "generated_r1", "gap_magnitude", "alignment", "best_epoch", "stopped_epoch",
)


def table2_runs(duration: int = 20):
    """The ablation rows: each loss at top-1 selection, mid-frame selection,
    and shorter audio windows."""
    top1, mid = PairSource.SELECTED_TOP1.value, PairSource.MID_FRAME.value
    runs = [(tag.value, top1, duration) for tag in (LossTag.TOTAL_L2NCE, LossTag.NCE_COSINE, LossTag.L2_ONLY)]
    runs.append((LossTag.TOTAL_L2NCE.value, mid, duration))
    runs += [(LossTag.TOTAL_L2NCE.value, top1, d) for d in (10, 2) if d < duration]
    return runs


def full_grid_runs(duration: int = 20):
    durations = sorted({duration, 10, 2} & set(range(1, duration + 1)), reverse=True)
    return [(tag.value, src.value, d) for tag in LossTag for src in PairSource for d in durations]


def evaluate_alignment(dataset, f_v, g, f_a, duration, classifier, seed):
    rows = dataset.split_indices()["test"]
    test = inference_pairs(dataset, f_v, rows, duration)
    labels = dataset.labels[rows].astype(np.int64)
    ids = dataset.ids[rows]
    z_a = f_a.forward(test.audio)
    noise_dim = g.spec.in_dim - f_v.spec.out_dim
    generated = generate_from_audio(g, f_a, test.audio, noise_dim, np.random.default_rng([int(seed), 30]))
    gaps = gap_report(test.visual_targets, z_a)
    return {
        "class_r1": recall_at_k(z_a, test.visual_targets, labels, labels, 1),
        "class_r5": recall_at_k(z_a, test.visual_targets, labels, labels, 5),
        "instance_r1": recall_at_k(z_a, test.visual_targets, ids, ids, 1),
        "generated_r1": classifier_recall(classifier.predict_proba(generated), labels, 1),
        "gap_magnitude": gaps.magnitude_mean,
        "alignment": gaps.alignment,
    }


def run_ablation(cfg: ExperimentConfig, seeds=None, runs=None, progress=None) -> list:
    """One row per (seed, run). Every seed gets its own dataset, expert and
    classifier; runs within a seed share them."""
    seeds = [cfg.seed] if seeds is None else list(seeds)
    runs = table2_runs(cfg.train.duration_timesteps) if runs is None else runs
    out = []
    for seed in seeds:
        dataset = synth_dataset(replace(cfg.dataset, seed=seed))
        f_v, g, _ = pretrain_visual(dataset, cfg.visual, seed=seed)
        clf = train_classifier(dataset, f_v, cfg.eval.classifier_epochs, cfg.eval.classifier_lr)
        for tag, source, duration in runs:
            variant = LossVariant(tag, cfg.train.temperature)
            f_a, log = train_audio_encoder(dataset, f_v, variant, source, duration, cfg.audio_config, seed=seed)
            row = {"seed": seed, "loss_variant": tag, "pair_source": source, "duration": duration}
            row.update(evaluate_alignment(dataset, f_v, g, f_a, duration, clf, seed))
            row.update(best_epoch=log.best_epoch, stopped_epoch=log.stopped_epoch)
            out.append(row)
            if progress:
                progress(row)
    return out
