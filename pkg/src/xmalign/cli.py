"""Command line experiment runner.

Every subcommand writes its primary output atomically, plus a JSON report
carrying ``schema_version``, the tool version, the seed, the full config
echo and a checksum that ignores wall-clock fields. Exit codes: 0 success,
2 configuration error, 3 I/O or file-format error, 4 numeric failure; on
failure a JSON error object is printed to stderr.
"""

import argparse
import csv
import hashlib
import io
import json
import os
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import __version__
from .config import ExperimentConfig, load_config_text
from .data import load_dataset, save_dataset, synth_dataset
from .errors import ConfigError, ContractError, FormatError, NumericError
from .evaluation import run_baseline_grid, train_classifier
from .experiments import ABLATION_COLUMNS, full_grid_runs, run_ablation, table2_runs
from .gap import gap_report, project_2d
from .ioutil import atomic_write_bytes, atomic_write_text, dump_json
from .manipulation import AudioClip, edit_direction, interpolate_latent, mix_clips, scale_volume, temporal_saliency
from .networks import generate, load_checkpoint, save_checkpoint
from .pairs import PairSource, annotate_dataset
from .plotting import plot_bars, plot_projection, plot_saliency, plot_training_curves
from .training import condition, inference_pairs, invert_generator, pretrain_visual, train_audio_encoder

SCHEMA_VERSION = 1
VOLATILE_KEYS = {"wall_clock", "checksum"}

DEFAULT_EXPERIMENT = {
    "volume": {"clip": 0, "gains": [0.5, 1.0, 2.0]},
    "mix": {"clips": [0, 1], "weights": [[1.0, 0.0], [0.5, 0.5], [0.0, 1.0]]},
    "interpolate": {"visual_clip": 0, "audio_clip": 1, "lambdas": [0.0, 0.25, 0.5, 0.75, 1.0]},
    "edit": {"visual_clip": 0, "audio_clips": [1, 2], "lambdas": [0.0, 0.5, 1.0]},
    "saliency": {"clips": None},
}


def _strip_volatile(obj):
    if isinstance(obj, dict):
        return {k: _strip_volatile(v) for k, v in obj.items() if k not in VOLATILE_KEYS}
    if isinstance(obj, list):
        return [_strip_volatile(v) for v in obj]
    return obj


def report_checksum(report: dict) -> str:
    canonical = json.dumps(_strip_volatile(report), sort_keys=True, separators=(",", ":"), allow_nan=False)
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        return float(obj) if np.isfinite(obj) else None
    return obj


def file_sha256(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def make_report(command: str, cfg: ExperimentConfig, body: dict, inputs=None) -> dict:
    report = {
        "schema_version": SCHEMA_VERSION,
        "tool": "xmalign",
        "version": __version__,
        "command": command,
        "seed": cfg.seed,
        "config": cfg.flat(),
        "inputs": {k: file_sha256(v) for k, v in (inputs or {}).items()},
    }
    report.update(_jsonable(body))
    report["checksum"] = report_checksum(report)
    return report


def write_report(path, report):
    atomic_write_text(Path(path), dump_json(report))


def write_csv(path, header, rows):
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    for row in rows:
        writer.writerow([f"{v:.10g}" if isinstance(v, float) else v for v in row])
    atomic_write_text(Path(path), buf.getvalue())


def _sidecar(out: Path, suffix: str) -> Path:
    return out.with_name(out.name + suffix)


class Runner:
    def __init__(self, args):
        self.args = args
        self.out = Path(args.out)
        text = Path(args.config).read_text() if args.config else ""
        cfg = load_config_text(text)
        if args.seed is not None:
            if not 0 <= args.seed < 2**64:
                raise ConfigError("seed must fit in 64 bits")
            cfg = replace(cfg, seed=args.seed)
        self.cfg = cfg

    def say(self, msg):
        if not self.args.quiet:
            print(msg)

    def dataset(self):
        return load_dataset(self.args.dataset)

    def networks(self, path, *names):
        nets = load_checkpoint(path)
        missing = [n for n in names if n not in nets]
        if missing:
            raise FormatError(f"{path}: checkpoint lacks network(s) {', '.join(missing)}")
        return [nets[n] for n in names]

    def models(self):
        f_v, g = self.networks(self.args.visual, "f_v", "g")
        (f_a,) = self.networks(self.args.audio, "f_a")
        return f_v, g, f_a

    def model_inputs(self):
        return {"dataset": self.args.dataset, "visual": self.args.visual, "audio": self.args.audio}


def cmd_synth_data(r: Runner):
    ds = synth_dataset(r.cfg.synth)
    save_dataset(ds, r.out)
    events = float(ds.masks.mean())
    body = {"num_clips": len(ds), "event_fraction": events, "file_sha256": file_sha256(r.out)}
    write_report(_sidecar(r.out, ".json"), make_report("synth-data", r.cfg, body))
    r.say(f"wrote {len(ds)} clips to {r.out} (event fraction {events:.3f})")


def cmd_pretrain_visual(r: Runner):
    ds = r.dataset()
    f_v, g, log = pretrain_visual(ds, r.cfg.visual, seed=r.cfg.seed)
    save_checkpoint({"f_v": f_v, "g": g}, r.out)
    body = {"training_log": log.to_json(), "checkpoint_sha256": file_sha256(r.out)}
    write_report(_sidecar(r.out, ".json"), make_report("pretrain-visual", r.cfg, body, {"dataset": r.args.dataset}))
    plot_training_curves(log, _sidecar(r.out, ".png"), "visual pretraining (reconstruction)")
    r.say(f"visual expert saved to {r.out}; final loss {log.losses[-1] if log.losses else log.initial_loss:.4f}")


def _annotation_summary(annotations):
    return {
        "num_clips": len(annotations),
        "low_confidence": sum(a.low_confidence for a in annotations),
    }


def cmd_train_audio(r: Runner):
    ds = r.dataset()
    f_v, _g = r.networks(r.args.visual, "f_v", "g")
    t = r.cfg.train
    f_a, log = train_audio_encoder(ds, f_v, r.cfg.variant, t.pair_source, t.duration_timesteps,
                                   r.cfg.audio_config, seed=r.cfg.seed)
    save_checkpoint({"f_a": f_a}, r.out)
    train_rows = ds.split_indices()["train"]
    ann = annotate_dataset(ds, t.pair_source, indices=train_rows)
    body = {
        "training_log": log.to_json(),
        "annotations": _annotation_summary(ann),
        "checkpoint_sha256": file_sha256(r.out),
    }
    inputs = {"dataset": r.args.dataset, "visual": r.args.visual}
    write_report(_sidecar(r.out, ".json"), make_report("train-audio", r.cfg, body, inputs))
    plot_training_curves(log, _sidecar(r.out, ".png"), f"audio alignment ({t.loss_variant})")
    r.say(f"audio encoder saved to {r.out}; best epoch {log.best_epoch}, validation loss "
          f"{min(log.val_metric, default=float('nan')):.4f}")


def cmd_select_pairs(r: Runner):
    ds = r.dataset()
    ann = annotate_dataset(ds, PairSource(r.args.mode))
    body = {"mode": r.args.mode, "summary": _annotation_summary(ann), "annotations": [a.to_json() for a in ann]}
    write_report(r.out, make_report("select-pairs", r.cfg, body, {"dataset": r.args.dataset}))
    r.say(f"{len(ann)} annotations written to {r.out}")


def cmd_evaluate(r: Runner):
    ds = r.dataset()
    f_v, g, f_a = r.models()
    e = r.cfg.eval
    clf = train_classifier(ds, f_v, e.classifier_epochs, e.classifier_lr)
    report = run_baseline_grid(ds, f_v, g, f_a, r.cfg.train.duration_timesteps, r.cfg.seed, clf, e.score_splits)
    write_report(r.out, make_report("evaluate", r.cfg, {"eval": report.to_json()}, r.model_inputs()))
    write_csv(_sidecar(r.out, ".per_class.csv"), ["class"] + [row.name for row in report.rows],
              report.per_class_table())
    plot_bars([row.name for row in report.rows], [row.recall_at_1 for row in report.rows],
              _sidecar(r.out, ".png"), "classifier R@1", "baselines")
    gen = report.row("GENERATED_FROM_AUDIO")
    r.say(f"class R@1 {report.class_recall['R@1']:.3f}; generated R@1 {gen.recall_at_1:.3f}, FD {gen.frechet:.3f}")


def cmd_gap_report(r: Runner):
    ds = r.dataset()
    f_v, _g, f_a = r.models()
    rows = ds.split_indices()["test"]
    test = inference_pairs(ds, f_v, rows, r.cfg.train.duration_timesteps)
    z_a = f_a.forward(test.audio)
    gaps = gap_report(test.visual_targets, z_a)
    proj = project_2d(condition(test.visual_targets), condition(z_a))
    labels = ds.labels[rows].astype(int)
    body = {"gap": gaps.to_json(), "projection": {"explained": proj.explained, "rank_deficient": proj.rank_deficient}}
    write_report(r.out, make_report("gap-report", r.cfg, body, r.model_inputs()))
    both = np.concatenate([labels, labels])
    write_csv(_sidecar(r.out, ".projection.csv"), ["modality", "class", "x", "y"],
              [[m, int(c), float(x), float(y)] for m, c, (x, y) in zip(proj.modality, both, proj.coords)])
    plot_projection(proj, labels, _sidecar(r.out, ".png"))
    r.say(f"gap magnitude {gaps.magnitude_mean:.3f} +- {gaps.magnitude_std:.3f}, alignment {gaps.alignment:.3f}")


def _load_experiment(path):
    if path is None:
        return DEFAULT_EXPERIMENT
    try:
        spec = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"bad experiment spec: {exc}") from None
    unknown = set(spec) - set(DEFAULT_EXPERIMENT)
    if unknown:
        raise ConfigError(f"unknown experiment sections: {sorted(unknown)}")
    return spec


def cmd_manipulate(r: Runner):
    ds = r.dataset()
    f_v, g, f_a = r.models()
    spec = _load_experiment(r.args.experiment)
    rows = ds.split_indices()["test"]
    duration = r.cfg.train.duration_timesteps
    test = inference_pairs(ds, f_v, rows, duration)
    noise_dim = g.spec.in_dim - f_v.spec.out_dim
    zero_noise = np.zeros(noise_dim)

    def clip(i):
        if not 0 <= i < len(rows):
            raise ConfigError(f"clip index {i} outside the {len(rows)} test clips")
        return AudioClip(test.audio[i])

    def emit(op, inputs, param, latent):
        out = generate(g, zero_noise, latent)
        return {"op": op, "inputs": inputs, "param": param, "latent": latent, "generated": out}

    results = []
    if "volume" in spec:
        s = spec["volume"]
        for gain in s["gains"]:
            c = scale_volume(clip(s["clip"]), gain)
            results.append(emit("volume", {"clip": s["clip"]}, gain, condition(f_a.forward(c.samples))[0]))
    if "mix" in spec:
        s = spec["mix"]
        for w in s["weights"]:
            c = mix_clips([clip(i) for i in s["clips"]], w)
            results.append(emit("mix", {"clips": s["clips"]}, w, condition(f_a.forward(c.samples))[0]))
    if "interpolate" in spec:
        s = spec["interpolate"]
        z_v = condition(test.visual_targets[s["visual_clip"]])[0]
        z_a = condition(f_a.forward(clip(s["audio_clip"]).samples))[0]
        for lam in s["lambdas"]:
            results.append(emit("interpolate", {"visual_clip": s["visual_clip"], "audio_clip": s["audio_clip"]},
                                lam, interpolate_latent(z_v, z_a, lam)))
    if "edit" in spec:
        s = spec["edit"]
        frame = ds.visual[rows[s["visual_clip"]], test.moments[s["visual_clip"]]].astype(np.float64)
        inv = invert_generator(g, frame, noise_dim)
        z1, z2 = (condition(f_a.forward(clip(i).samples))[0] for i in s["audio_clips"])
        for lam in s["lambdas"]:
            row = emit("edit", {"visual_clip": s["visual_clip"], "audio_clips": s["audio_clips"]},
                       lam, edit_direction(inv.z_cond, z1, z2, lam))
            row["inversion_residual"] = inv.residual
            results.append(row)
    saliency_rows = []
    if "saliency" in spec:
        count = spec["saliency"].get("clips") or r.cfg.eval.saliency_clips
        count = min(count, len(rows))
        full = ds.audio[rows[:count]].astype(np.float64)
        for i in range(count):
            s = temporal_saliency(f_a, g, full[i])
            saliency_rows.append((int(ds.ids[rows[i]]), s, ds.masks[rows[i]]))
    body = {
        "experiment": spec,
        "rows": results,
        "saliency": [{"clip_id": cid, "weights": s.weights, "degenerate": s.degenerate} for cid, s, _ in saliency_rows],
    }
    write_report(r.out, make_report("manipulate", r.cfg, body, r.model_inputs()))
    t_len = ds.header.timesteps
    write_csv(_sidecar(r.out, ".saliency.csv"), ["clip_id", "timestep", "saliency", "event"],
              [[cid, t, float(s.weights[t]), int(m[t])] for cid, s, m in saliency_rows for t in range(t_len)])
    if saliency_rows:
        plot_saliency(np.array([s.weights for _, s, _ in saliency_rows]),
                      np.array([m for _, _, m in saliency_rows]), _sidecar(r.out, ".png"))
    r.say(f"{len(results)} manipulation rows and {len(saliency_rows)} saliency maps written to {r.out}")


def _parse_seeds(text):
    try:
        return [int(s) for s in text.split(",") if s.strip()]
    except ValueError:
        raise ConfigError(f"bad seed list: {text!r}") from None


def cmd_ablation_grid(r: Runner):
    seeds = _parse_seeds(r.args.seeds) if r.args.seeds else [r.cfg.seed]
    duration = r.cfg.train.duration_timesteps
    runs = full_grid_runs(duration) if r.args.full else table2_runs(duration)

    def progress(row):
        r.say(f"seed {row['seed']} {row['loss_variant']:<12} {row['pair_source']:<13} T={row['duration']:<3}"
              f" class R@1 {row['class_r1']:.3f}")

    rows = run_ablation(r.cfg, seeds, runs, progress)
    r.out.mkdir(parents=True, exist_ok=True)
    write_csv(r.out / "ablation.csv", ABLATION_COLUMNS, [[row[c] for c in ABLATION_COLUMNS] for row in rows])
    write_report(r.out / "ablation.json", make_report("ablation-grid", r.cfg, {"seeds": seeds, "rows": rows}))
    names, means = [], []
    for tag, source, dur in runs:
        sel = [row["class_r1"] for row in rows
               if (row["loss_variant"], row["pair_source"], row["duration"]) == (tag, source, dur)]
        names.append(f"{tag}/{source}/{dur}")
        means.append(float(np.mean(sel)))
    plot_bars(names, means, r.out / "ablation.png", "class R@1 (mean over seeds)", "ablation")


COMMANDS = {
    "synth-data": cmd_synth_data,
    "pretrain-visual": cmd_pretrain_visual,
    "train-audio": cmd_train_audio,
    "select-pairs": cmd_select_pairs,
    "evaluate": cmd_evaluate,
    "gap-report": cmd_gap_report,
    "manipulate": cmd_manipulate,
    "ablation-grid": cmd_ablation_grid,
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="key = value file, or a JSON report whose config echo to reuse")
    common.add_argument("--seed", type=int, help="overrides the config seed")
    common.add_argument("--out", required=True, help="output path (a directory for ablation-grid)")
    common.add_argument("--quiet", action="store_true")

    parser = argparse.ArgumentParser(prog="xmalign", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"xmalign {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("synth-data", parents=[common], help="write a synthetic dataset file")
    p = sub.add_parser("pretrain-visual", parents=[common], help="fit the visual expert and generator")
    p.add_argument("--dataset", required=True)
    p = sub.add_parser("train-audio", parents=[common], help="align an audio encoder to the frozen expert")
    p.add_argument("--dataset", required=True)
    p.add_argument("--visual", required=True, help="checkpoint from pretrain-visual")
    p = sub.add_parser("select-pairs", parents=[common], help="annotate each clip's training moment")
    p.add_argument("--dataset", required=True)
    p.add_argument("--mode", choices=[s.value for s in PairSource], default=PairSource.SELECTED_TOP1.value)
    for name, extra in (("evaluate", "baseline grid and retrieval metrics"),
                        ("gap-report", "modality gap geometry and 2-D projection"),
                        ("manipulate", "volume, mixing, latent edits and saliency")):
        p = sub.add_parser(name, parents=[common], help=extra)
        p.add_argument("--dataset", required=True)
        p.add_argument("--visual", required=True)
        p.add_argument("--audio", required=True, help="checkpoint from train-audio")
        if name == "manipulate":
            p.add_argument("--experiment", help="JSON experiment spec (defaults built in)")
    p = sub.add_parser("ablation-grid", parents=[common], help="loss x pair source x duration table")
    p.add_argument("--seeds", help="comma-separated seeds (default: the config seed)")
    p.add_argument("--full", action="store_true", help="cross every variant, source and duration")
    return parser


def _fail(exc, code, **extra):
    payload = {"error": type(exc).__name__, "message": str(exc), "exit_code": code, **extra}
    print(json.dumps(payload, sort_keys=True), file=sys.stderr)
    return code


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    threads = os.environ.get("XMA_THREADS")
    try:
        if threads is not None:
            try:
                threads = int(threads)
            except ValueError:
                raise ConfigError(f"XMA_THREADS must be an integer, got {threads!r}") from None
            if threads < 1:
                raise ConfigError("XMA_THREADS must be >= 1")
            from threadpoolctl import threadpool_limits

            with threadpool_limits(limits=threads):
                COMMANDS[args.command](Runner(args))
        else:
            COMMANDS[args.command](Runner(args))
    except (ConfigError, ContractError) as exc:
        return _fail(exc, 2)
    except FormatError as exc:
        return _fail(exc, 3)
    except OSError as exc:
        return _fail(exc, 3, path=exc.filename)
    except NumericError as exc:
        return _fail(exc, 4)
    return 0


if __name__ == "__main__":
    sys.exit(main())
