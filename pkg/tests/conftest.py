import pytest

from services.config import TrainConfig
from services.data import VideoCollection
from services.synth import SynthSpec, generate_dataset
from services.vocabulary import load_vocabulary

# two subjects (B, C), one video each, three gestures of about ten working frames
TINY_SPEC = SynthSpec(n_subjects=2, videos_per_subject=1, num_classes=3, mean_segment_len=10, segment_jitter=2,
                      cycles=1, frame_size=32, object_size=8, seed=3)


def pytest_addoption(parser):
    parser.addoption("--runslow", action="store_true", default=False, help="run end-to-end training tests")


def pytest_collection_modifyitems(config, items):
    if config.getoption("--runslow"):
        return
    skip_slow = pytest.mark.skip(reason="needs --runslow")
    for item in items:
        if "slow" in item.keywords:
            item.add_marker(skip_slow)


@pytest.fixture(scope="session")
def tiny_manifest(tmp_path_factory):
    return generate_dataset(TINY_SPEC, tmp_path_factory.mktemp("synth"))


@pytest.fixture
def tiny_collection(tiny_manifest):
    vocab = load_vocabulary(tiny_manifest.parent / "vocabulary.csv")
    return VideoCollection.from_manifest(tiny_manifest, vocab)


@pytest.fixture
def tiny_config():
    return TrainConfig(epochs=1, batch_size=4, snippets_per_epoch=8, width=4, load_size=32, input_size=32,
                       checkpoint_every=1, device="cpu")
