import numpy as np
import pytest

from cplx_sparse_vd.core.data import Dataset, load_splits, write_idx
from cplx_sparse_vd.models.config_models import build_experiment_config

TINY_EXPERIMENT = {
    "dataset.source": "synthetic",
    "dataset.n_per_class": 20,
    "dataset.n_classes": 2,
    "dataset.dim": 4,
    "dataset.seed": 3,
    "model.kind": "complex",
    "model.arch": "dense",
    "model.hidden": 8,
    "penalty": "CVD",
    "stages.pretrain.epochs": 2,
    "stages.pretrain.batch_size": 16,
    "stages.pretrain.base_lr": 0.01,
    "stages.sparsify.epochs": 3,
    "stages.sparsify.batch_size": 16,
    "stages.sparsify.base_lr": 0.01,
    "stages.finetune.epochs": 2,
    "stages.finetune.batch_size": 16,
    "stages.finetune.base_lr": 0.01,
    "c_grid": [0.5],
    "replications": [0],
}


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def tiny_config(tmp_path):
    """Fábrica de configurações mínimas sobre o conjunto sintético."""

    def make(**overrides):
        values = dict(TINY_EXPERIMENT)
        values["output_dir"] = str(tmp_path / "runs")
        values.update(overrides)
        return build_experiment_config(values)

    return make


@pytest.fixture
def tiny_splits(tiny_config):
    config = tiny_config()
    return load_splits(config.dataset, config.model.kind)


def _random_dataset(rng, n, split):
    pixels = rng.integers(0, 256, size=(n, 8, 8)).astype(np.float64) / 255.0
    labels = rng.integers(0, 10, size=n)
    return Dataset(images=pixels, labels=labels, split=split, n_classes=10)


@pytest.fixture
def idx_dir(tmp_path):
    """Diretório no layout MNIST com imagens 8x8 aleatórias."""
    rng = np.random.default_rng(7)
    directory = tmp_path / "mnist"
    directory.mkdir()
    train = _random_dataset(rng, 30, "train")
    test = _random_dataset(rng, 12, "test")
    write_idx(train, directory / "train-images-idx3-ubyte", directory / "train-labels-idx1-ubyte")
    write_idx(test, directory / "t10k-images-idx3-ubyte", directory / "t10k-labels-idx1-ubyte")
    return directory, train, test


@pytest.fixture
def tiny_values():
    """Chaves pontuadas da configuração mínima (sem output_dir)."""
    return dict(TINY_EXPERIMENT)
