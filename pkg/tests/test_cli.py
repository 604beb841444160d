import json
from pathlib import Path

import numpy as np
import pytest

from xmalign.cli import main, report_checksum
from xmalign.networks import Activation, Network, NetworkSpec, save_checkpoint

TINY_CONFIG = """\
dataset.num_classes = 3
dataset.clips_per_class = 20
dataset.timesteps = 6
dataset.visual_dim = 10
dataset.audio_dim = 5
dataset.latent_dim = 4
visual.embed_dim = 6
visual.hidden = 12
visual.generator_hidden = 12
visual.noise_dim = 2
visual.epochs = 2
visual.refit_epochs = 1
audio.hidden = 8
train.epochs = 2
train.duration_timesteps = 6
eval.classifier_epochs = 5
eval.saliency_clips = 3
"""


def _run(*args):
    return main([str(a) for a in args])


def _pipeline(root: Path, config: Path, seed=5):
    root.mkdir(exist_ok=True)
    common = ["--config", config, "--seed", seed, "--quiet"]
    assert _run("synth-data", *common, "--out", root / "d.xmav") == 0
    assert _run("pretrain-visual", *common, "--dataset", root / "d.xmav", "--out", root / "v.ckpt") == 0
    assert _run("train-audio", *common, "--dataset", root / "d.xmav", "--visual", root / "v.ckpt",
                "--out", root / "a.ckpt") == 0
    models = ["--dataset", root / "d.xmav", "--visual", root / "v.ckpt", "--audio", root / "a.ckpt"]
    assert _run("evaluate", *common, *models, "--out", root / "eval.json") == 0
    assert _run("gap-report", *common, *models, "--out", root / "gap.json") == 0
    assert _run("manipulate", *common, *models, "--out", root / "manip.json") == 0
    assert _run("select-pairs", *common, "--dataset", root / "d.xmav", "--out", root / "pairs.json") == 0


@pytest.fixture(scope="module")
def runs(tmp_path_factory):
    base = tmp_path_factory.mktemp("cli")
    config = base / "tiny.cfg"
    config.write_text(TINY_CONFIG)
    _pipeline(base / "one", config)
    _pipeline(base / "two", config)
    return base, config


OUTPUTS = ["d.xmav", "v.ckpt", "a.ckpt", "d.xmav.json", "v.ckpt.json", "a.ckpt.json", "eval.json", "gap.json",
           "manip.json", "pairs.json", "eval.json.per_class.csv", "gap.json.projection.csv",
           "manip.json.saliency.csv", "v.ckpt.png", "a.ckpt.png", "eval.json.png", "gap.json.png", "manip.json.png"]


def test_every_output_written(runs):
    base, _ = runs
    for name in OUTPUTS:
        assert (base / "one" / name).stat().st_size > 0, name


def test_binary_outputs_identical_across_runs(runs):
    base, _ = runs
    for name in ("d.xmav", "v.ckpt", "a.ckpt", "eval.json", "gap.json", "manip.json", "pairs.json",
                 "eval.json.per_class.csv", "gap.json.projection.csv", "eval.json.png", "gap.json.png"):
        assert (base / "one" / name).read_bytes() == (base / "two" / name).read_bytes(), name


def test_report_checksums_identical_and_valid(runs):
    base, _ = runs
    for name in ("d.xmav.json", "v.ckpt.json", "a.ckpt.json", "eval.json", "gap.json", "manip.json"):
        one = json.loads((base / "one" / name).read_text())
        two = json.loads((base / "two" / name).read_text())
        assert one["checksum"] == two["checksum"] == report_checksum(one)
        assert one["schema_version"] == 1 and one["seed"] == 5 and "version" in one


def test_checksum_ignores_wall_clock(runs):
    base, _ = runs
    report = json.loads((base / "one" / "a.ckpt.json").read_text())
    report["training_log"]["wall_clock"] = [123.0]
    assert report_checksum(report) == report["checksum"]
    report["training_log"]["losses"][0] += 1.0
    assert report_checksum(report) != report["checksum"]


def test_rerun_from_config_echo(runs, tmp_path):
    base, _ = runs
    echo = base / "one" / "a.ckpt.json"
    args = ["--dataset", base / "one" / "d.xmav", "--visual", base / "one" / "v.ckpt"]
    assert _run("train-audio", "--config", echo, "--quiet", *args, "--out", tmp_path / "a.ckpt") == 0
    again = json.loads((tmp_path / "a.ckpt.json").read_text())
    original = json.loads(echo.read_text())
    assert again["checksum"] == original["checksum"]
    assert (tmp_path / "a.ckpt").read_bytes() == (base / "one" / "a.ckpt").read_bytes()


def test_projection_csv_columns(runs):
    base, _ = runs
    lines = (base / "one" / "gap.json.projection.csv").read_text().splitlines()
    assert lines[0] == "modality,class,x,y"
    assert len(lines) == 1 + 2 * 3 * 3


def test_missing_checkpoint_exit_3(runs, tmp_path, capsys):
    base, _ = runs
    code = _run("evaluate", "--dataset", base / "one" / "d.xmav", "--visual", tmp_path / "nope.ckpt",
                "--audio", base / "one" / "a.ckpt", "--out", tmp_path / "e.json")
    assert code == 3
    err = json.loads(capsys.readouterr().err)
    assert err["exit_code"] == 3 and "nope.ckpt" in err["path"]


def test_wrong_checkpoint_contents_exit_3(runs, tmp_path, capsys):
    base, _ = runs
    code = _run("evaluate", "--dataset", base / "one" / "d.xmav", "--visual", base / "one" / "a.ckpt",
                "--audio", base / "one" / "a.ckpt", "--out", tmp_path / "e.json")
    assert code == 3
    assert "f_v" in json.loads(capsys.readouterr().err)["message"]


def test_corrupt_dataset_exit_3(tmp_path, capsys):
    bad = tmp_path / "bad.xmav"
    bad.write_bytes(b"JUNKJUNK")
    assert _run("select-pairs", "--dataset", bad, "--out", tmp_path / "p.json") == 3
    assert json.loads(capsys.readouterr().err)["error"] == "BadMagicError"


def test_config_error_exit_2(tmp_path, capsys):
    cfg = tmp_path / "bad.cfg"
    cfg.write_text("train.momentum = 0.9\n")
    assert _run("synth-data", "--config", cfg, "--out", tmp_path / "d.xmav") == 2
    err = json.loads(capsys.readouterr().err)
    assert err["exit_code"] == 2 and "momentum" in err["message"]
    assert not (tmp_path / "d.xmav").exists()


def test_bad_thread_env_exit_2(tmp_path, monkeypatch):
    monkeypatch.setenv("XMA_THREADS", "lots")
    assert _run("synth-data", "--out", tmp_path / "d.xmav", "--quiet") == 2


def test_thread_cap_runs(runs, tmp_path, monkeypatch):
    base, config = runs
    monkeypatch.setenv("XMA_THREADS", "1")
    assert _run("synth-data", "--config", config, "--seed", 5, "--quiet", "--out", tmp_path / "d.xmav") == 0
    assert (tmp_path / "d.xmav").read_bytes() == (base / "one" / "d.xmav").read_bytes()


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_numeric_failure_exit_4(runs, tmp_path, capsys):
    base, _ = runs
    spec_v = NetworkSpec((10, 12, 6))
    bad = Network(spec_v, [np.full((10, 12), np.inf), np.zeros((12, 6))], [np.zeros(12), np.zeros(6)])
    g = Network.init(NetworkSpec((8, 12, 10), Activation.TANH), np.random.default_rng(0))
    save_checkpoint({"f_v": bad, "g": g}, tmp_path / "v.ckpt")
    code = _run("train-audio", "--config", runs[1], "--dataset", base / "one" / "d.xmav",
                "--visual", tmp_path / "v.ckpt", "--out", tmp_path / "a.ckpt")
    assert code == 4
    assert json.loads(capsys.readouterr().err)["exit_code"] == 4


def test_manipulation_rows(runs):
    base, _ = runs
    report = json.loads((base / "one" / "manip.json").read_text())
    ops = [r["op"] for r in report["rows"]]
    assert ops.count("volume") == 3 and ops.count("interpolate") == 5 and ops.count("edit") == 3
    assert len(report["saliency"]) == 3
    for s in report["saliency"]:
        assert abs(sum(s["weights"]) - 1.0) <= 1e-12


def test_custom_experiment_spec(runs, tmp_path):
    base, config = runs
    spec = tmp_path / "exp.json"
    spec.write_text(json.dumps({"volume": {"clip": 1, "gains": [3.0]}}))
    models = ["--dataset", base / "one" / "d.xmav", "--visual", base / "one" / "v.ckpt", "--audio", base / "one" / "a.ckpt"]
    assert _run("manipulate", "--config", config, "--quiet", *models, "--experiment", spec, "--out", tmp_path / "m.json") == 0
    rows = json.loads((tmp_path / "m.json").read_text())["rows"]
    assert [r["op"] for r in rows] == ["volume"]
    spec.write_text(json.dumps({"reverse": {}}))
    assert _run("manipulate", "--config", config, "--quiet", *models, "--experiment", spec, "--out", tmp_path / "m.json") == 2


def test_ablation_grid_outputs(runs, tmp_path):
    _, config = runs
    out = tmp_path / "grid"
    assert _run("ablation-grid", "--config", config, "--quiet", "--seeds", "1,2", "--out", out) == 0
    lines = (out / "ablation.csv").read_text().splitlines()
    assert lines[0].startswith("seed,loss_variant,pair_source,duration,class_r1")
    # three losses, mid-frame, and the one shorter duration that fits in 6 steps
    assert len(lines) == 1 + 2 * 5
    assert (out / "ablation.png").stat().st_size > 0
    report = json.loads((out / "ablation.json").read_text())
    assert report["seeds"] == [1, 2] and len(report["rows"]) == 10
