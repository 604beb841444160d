import numpy as np
import pytest

from xmalign.data import SynthConfig, synth_dataset
from xmalign.evaluation import train_classifier
from xmalign.training import AudioConfig, VisualConfig, pretrain_visual, train_audio_encoder

SMALL = SynthConfig(num_classes=4, clips_per_class=20, timesteps=8, visual_dim=12, audio_dim=6, latent_dim=6, seed=7)
SMALL_VISUAL = VisualConfig(embed_dim=8, hidden=(16,), generator_hidden=(16,), noise_dim=2, epochs=3, refit_epochs=2)
SMALL_AUDIO = AudioConfig(hidden=(12,), epochs=3, patience=2)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def small_dataset():
    return synth_dataset(SMALL)


@pytest.fixture(scope="session")
def small_models(small_dataset):
    f_v, g, _ = pretrain_visual(small_dataset, SMALL_VISUAL, seed=3)
    f_a, _ = train_audio_encoder(small_dataset, f_v, duration_timesteps=8, config=SMALL_AUDIO, seed=3)
    return f_v, g, f_a


@pytest.fixture(scope="session")
def default_dataset():
    return synth_dataset(SynthConfig(seed=1))


@pytest.fixture(scope="session")
def default_pipeline(default_dataset):
    """Seed-1 default benchmark: frozen expert, generator, aligned encoder, classifier."""
    f_v, g, v_log = pretrain_visual(default_dataset, seed=1)
    f_a, a_log = train_audio_encoder(default_dataset, f_v, seed=1)
    clf = train_classifier(default_dataset, f_v)
    return {"f_v": f_v, "g": g, "f_a": f_a, "clf": clf, "visual_log": v_log, "audio_log": a_log}


_CRITERIA = {}


def pytest_runtest_logreport(report):
    if "test_acceptance.py::test_criterion_" not in report.nodeid:
        return
    if report.when == "call" or (report.when == "setup" and not report.passed):
        detail = dict(report.user_properties).get("detail", "")
        _CRITERIA[report.nodeid.split("::")[-1]] = (report.outcome, detail)


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for name in sorted(_CRITERIA):
        outcome, detail = _CRITERIA[name]
        verdict = "PASS" if outcome == "passed" else "FAIL"
        terminalreporter.write_line(f"{verdict}  {name[len('test_criterion_'):]}  {detail}")
