import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))


@pytest.fixture(scope="session")
def small_manifest(tmp_path_factory):
    """Four 20-second recordings per class; split 2/1/1 per class."""
    from ssmadc.synthetic import GenConfig, generate_dataset
    out = tmp_path_factory.mktemp("small")
    return generate_dataset(GenConfig(recordings_per_class=4, duration=20.0, seed=3), out)


@pytest.fixture(scope="session")
def small_run(small_manifest, tmp_path_factory):
    """A briefly trained audio model and text model on the small corpus."""
    from ssmadc.pipeline import Corpus, SegmentOptions
    from ssmadc.ssm.model import preset
    from ssmadc.training import LossConfig, OptimConfig, train, train_text
    out = tmp_path_factory.mktemp("small_run")
    corpus = Corpus(small_manifest)
    optim = OptimConfig(lr0=1e-3, epochs=1, warmup_steps=4)
    result = train(corpus, preset("tiny"), LossConfig(), optim, SegmentOptions(max_dur=10.0), out)
    train_text(corpus, out / "text_model.json")
    return out


def pytest_terminal_summary(terminalreporter):
    from verdicts import VERDICTS
    if VERDICTS:
        terminalreporter.section("acceptance criteria")
        for line in VERDICTS:
            terminalreporter.write_line(line)
