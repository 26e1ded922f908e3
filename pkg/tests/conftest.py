import numpy as np
import pytest
import torch

from hashcondense.data import LabeledDataset, NormStats, load_dataset, write_toy_image_folder

torch.set_num_threads(1)


def make_toy(num_classes=3, per_class=10, side=8, channels=3, seed=0, split="train"):
    """Separable in-memory toy set: class prototype plus noise."""
    rng = np.random.default_rng(seed)
    protos = rng.normal(0, 1, size=(num_classes, channels, side, side))
    x = np.concatenate([protos[c] + 0.3 * rng.normal(size=(per_class, channels, side, side))
                        for c in range(num_classes)]).astype(np.float32)
    y = np.repeat(np.arange(num_classes), per_class)
    stats = NormStats((0.0,) * channels, (1.0,) * channels)
    return LabeledDataset(torch.from_numpy(x), torch.from_numpy(y), num_classes, split, stats, "toy")


@pytest.fixture
def toy():
    return make_toy()


@pytest.fixture
def toy_root(tmp_path):
    write_toy_image_folder(tmp_path, "toy", num_classes=3, per_class=10, side=8)
    return tmp_path


@pytest.fixture
def toy_loaded(toy_root):
    return load_dataset(toy_root, "toy", "train")


ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
