import os
import shutil

import numpy as np
import pandas as pd
import pytest

from cplx_sparse_vd.core.checkpoint import Checkpoint
from cplx_sparse_vd.core.data import load_splits
from cplx_sparse_vd.core.errors import CheckpointError
from cplx_sparse_vd.flows.compression_flow import run_experiment
from cplx_sparse_vd.main import train_experiment
from cplx_sparse_vd.models.config_models import load_experiment_config
from cplx_sparse_vd.models.report_models import METRIC_COLUMNS


def _numeric(frame):
    return frame.drop(columns=["replication"]).reset_index(drop=True)


class TestRunExperiment:
    def test_single_run(self, tiny_config, tiny_splits, tmp_path):
        config = tiny_config()
        train, test = tiny_splits
        states = run_experiment(config, train, test, output_dir=tmp_path / "run")
        assert len(states) == 1
        state = states[0]
        assert state.run_completed
        assert state.config_hash == config.config_hash()
        assert [r.stage for r in state.stage_reports] == ["pretrain", "sparsify", "finetune"]

        metrics = pd.read_csv(tmp_path / "run" / "metrics.csv")
        assert list(metrics.columns) == METRIC_COLUMNS
        assert len(metrics) == 2 * (2 + 3 + 2) + 1
        final = metrics.iloc[-1]
        assert (final["stage"], final["epoch"], final["split"]) == ("final", -1, "test")
        assert final["C"] == 0.5
        assert final["accuracy"] == pytest.approx(state.final_metrics.accuracy)
        assert (metrics.loc[metrics["stage"] != "sparsify", "kl_term"] == 0).all()
        assert (tmp_path / "run" / "checkpoints" / "r0-pretrain.ckpt").exists()
        assert (tmp_path / "run" / "checkpoints" / "r0-c0.ckpt").exists()

    def test_grid_order_and_shared_pretrain(self, tiny_config, tiny_splits, tmp_path):
        config = tiny_config(c_grid=[0.5, 0.25], replications=[0, 1])
        train, test = tiny_splits
        states = run_experiment(config, train, test, output_dir=tmp_path)
        assert [(s.replication, s.c_index) for s in states] == [(0, 0), (0, 1), (1, 0), (1, 1)]
        metrics = pd.read_csv(tmp_path / "metrics.csv")
        pretrain = metrics[metrics["stage"] == "pretrain"]
        # pré-treino executado uma vez por replicação
        assert len(pretrain) == 2 * 2 * 2
        finals = metrics[metrics["stage"] == "final"]
        assert finals["C"].tolist() == [0.5, 0.25, 0.5, 0.25]

    def test_duplicated_replication_repeats_exactly(self, tiny_config, tiny_splits, tmp_path):
        config = tiny_config(replications=[3, 3])
        train, test = tiny_splits
        run_experiment(config, train, test, output_dir=tmp_path)
        metrics = pd.read_csv(tmp_path / "metrics.csv")
        half = len(metrics) // 2
        pd.testing.assert_frame_equal(
            metrics.iloc[:half].reset_index(drop=True), metrics.iloc[half:].reset_index(drop=True)
        )

    def test_keep_checkpoints(self, tiny_config, tiny_splits, tmp_path):
        config = tiny_config(keep_checkpoints=True)
        train, test = tiny_splits
        run_experiment(config, train, test, output_dir=tmp_path)
        names = sorted(p.name for p in (tmp_path / "checkpoints").iterdir())
        assert "r0-pretrain-pretrain-e001.ckpt" in names
        assert "r0-c0-sparsify-e002.ckpt" in names
        assert "r0-c0-finetune-e000.ckpt" in names

    def test_validation_split_drives_early_stopping(self, tiny_config, tiny_splits, tmp_path):
        config = tiny_config(**{
            "dataset.valid_n": 10,
            "stages.finetune.early_stop": {"patience": 1, "metric": "loss"},
        })
        train, test = tiny_splits
        states = run_experiment(config, train, test, output_dir=tmp_path)
        metrics = pd.read_csv(tmp_path / "metrics.csv")
        per_epoch = metrics[metrics["stage"] != "final"]
        assert set(per_epoch["split"]) == {"train", "test", "valid"}
        assert (per_epoch.groupby(["stage", "epoch"])["split"].nunique() == 3).all()
        finetune = states[0].stage_reports[-1]
        assert finetune.stage == "finetune" and finetune.best_epoch is not None

    def test_compression_grows_with_coefficient(self, tiny_config, tmp_path):
        config = tiny_config(**{
            "dataset.n_per_class": 50,
            "dataset.n_classes": 3,
            "dataset.dim": 8,
            "model.hidden": 16,
            "stages.pretrain.epochs": 5,
            "stages.pretrain.batch_size": 32,
            "stages.sparsify.epochs": 30,
            "stages.sparsify.batch_size": 32,
            "stages.sparsify.base_lr": 0.1,
            "stages.sparsify.lr_schedule": [],
            "stages.finetune.epochs": 1,
            "stages.finetune.batch_size": 32,
            "c_grid": [1e-3, 1e-2, 1e-1],
        })
        train, test = load_splits(config.dataset, config.model.kind)
        states = run_experiment(config, train, test, output_dir=tmp_path)
        rates = [state.final_metrics.compression_rate for state in states]
        assert [state.kl_coeff for state in states] == [1e-3, 1e-2, 1e-1]
        assert rates == sorted(rates)


class TestResume:
    def test_resume_matches_uninterrupted_run(self, tiny_config, tiny_splits, tmp_path):
        config = tiny_config(keep_checkpoints=True)
        train, test = tiny_splits
        run_experiment(config, train, test, output_dir=tmp_path / "full")
        full = pd.read_csv(tmp_path / "full" / "metrics.csv")

        checkpoint = Checkpoint.load(tmp_path / "full" / "checkpoints" / "r0-c0-sparsify-e000.ckpt")
        assert checkpoint.metadata["stage"] == "sparsify"
        assert checkpoint.metadata["c_index"] == 0
        run_experiment(config, train, test, output_dir=tmp_path / "resumed", resume=checkpoint)
        resumed = pd.read_csv(tmp_path / "resumed" / "metrics.csv")

        tail = full[~((full["stage"] == "pretrain") | ((full["stage"] == "sparsify") & (full["epoch"] == 0)))]
        pd.testing.assert_frame_equal(_numeric(resumed), _numeric(tail))

    def test_resume_reuses_stored_pretrain(self, tiny_config, tiny_splits, tmp_path):
        config = tiny_config(c_grid=[0.5, 0.25], keep_checkpoints=True)
        train, test = tiny_splits
        run_experiment(config, train, test, output_dir=tmp_path / "full")
        full = pd.read_csv(tmp_path / "full" / "metrics.csv")

        stored = tmp_path / "resumed" / "checkpoints"
        stored.mkdir(parents=True)
        shutil.copy(tmp_path / "full" / "checkpoints" / "r0-pretrain.ckpt", stored / "r0-pretrain.ckpt")
        checkpoint = Checkpoint.load(tmp_path / "full" / "checkpoints" / "r0-c0-sparsify-e000.ckpt")
        run_experiment(config, train, test, output_dir=tmp_path / "resumed", resume=checkpoint)
        resumed = pd.read_csv(tmp_path / "resumed" / "metrics.csv")

        assert not (resumed["stage"] == "pretrain").any()
        skipped = (full["stage"] == "pretrain") | (
            (full["stage"] == "sparsify") & (full["epoch"] == 0) & (full["C"] == 0.5)
        )
        pd.testing.assert_frame_equal(_numeric(resumed), _numeric(full[~skipped]))

    def test_resume_rejects_other_config(self, tiny_config, tiny_splits, tmp_path):
        config = tiny_config()
        train, test = tiny_splits
        run_experiment(config, train, test, output_dir=tmp_path)
        checkpoint = Checkpoint.load(tmp_path / "checkpoints" / "r0-c0.ckpt")
        with pytest.raises(CheckpointError):
            run_experiment(tiny_config(c_grid=[0.25]), train, test, output_dir=tmp_path, resume=checkpoint)

    def test_final_checkpoint_holds_masks(self, tiny_config, tiny_splits, tmp_path):
        config = tiny_config()
        train, test = tiny_splits
        run_experiment(config, train, test, output_dir=tmp_path)
        checkpoint = Checkpoint.load(tmp_path / "checkpoints" / "r0-c0.ckpt")
        assert checkpoint.metadata["stage"] == "finetune"
        assert checkpoint.metadata["epoch"] == 1
        mask = checkpoint.record("dense1.weight").mask
        assert mask is not None and mask.dtype == np.bool_


MNIST_DIR = os.environ.get("CPLX_SPARSE_VD_MNIST_DIR")


@pytest.mark.slow
@pytest.mark.skipif(not MNIST_DIR, reason="defina CPLX_SPARSE_VD_MNIST_DIR com os arquivos IDX do MNIST")
def test_mnist_bench_run(tmp_path):
    config = load_experiment_config(
        os.path.join(os.path.dirname(__file__), "..", "src", "cplx_sparse_vd", "flows",
                     "compression_flow", "config", "mnist_dense.yaml"),
        {
            "dataset.path": MNIST_DIR,
            "dataset.test_n": 2000,
            "c_grid": [1e-3, 1e-2, 1e-1],
            "replications": [0],
        },
    )
    states = train_experiment(config, out=str(tmp_path))
    metrics = pd.read_csv(tmp_path / "metrics.csv")
    pretrain = metrics[(metrics["stage"] == "pretrain") & (metrics["split"] == "test")]
    pretrain_acc = pretrain.sort_values("epoch")["accuracy"].iloc[-1]
    assert pretrain_acc >= 0.90

    finals = {state.kl_coeff: state.final_metrics for state in states}
    assert finals[1e-2].compression_rate >= 10.0
    assert finals[1e-2].accuracy >= pretrain_acc - 0.03
    rates = [finals[c].compression_rate for c in (1e-3, 1e-2, 1e-1)]
    assert rates == sorted(rates)
