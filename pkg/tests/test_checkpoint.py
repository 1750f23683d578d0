import numpy as np
import pytest

from cplx_sparse_vd.core.checkpoint import (
    MAGIC,
    Checkpoint,
    CheckpointRecord,
    build_checkpoint,
    restore_model,
    restore_optimizer,
    restore_progress,
    rng_from_state,
    rng_state,
)
from cplx_sparse_vd.core.errors import CheckpointError
from cplx_sparse_vd.core.networks import build_network
from cplx_sparse_vd.core.pipeline import Adam, StageProgress, run_stage
from cplx_sparse_vd.models.config_models import ModelConfig, PenaltySpec, Stage


def _model(config, train, seed=0):
    return build_network(config.model, config.penalty, train.input_shape, train.n_classes,
                         np.random.default_rng(seed))


@pytest.fixture
def sample_checkpoint(rng):
    mask = rng.random((3, 5)) > 0.5
    return Checkpoint(
        metadata={"stage": "sparsify", "epoch": 2, "c_index": None, "nested": {"a": [1, 2]}},
        records=[
            CheckpointRecord(name="dense1.weight", parts=[rng.standard_normal((3, 5)), rng.standard_normal((3, 5))],
                             mask=mask),
            CheckpointRecord(name="dense1.bias", parts=[rng.standard_normal(3)]),
        ],
    )


class TestContainer:
    def test_bytes_round_trip(self, sample_checkpoint):
        raw = sample_checkpoint.to_bytes()
        assert raw.startswith(MAGIC)
        loaded = Checkpoint.from_bytes(raw)
        assert loaded.metadata == sample_checkpoint.metadata
        for original, restored in zip(sample_checkpoint.records, loaded.records):
            assert original.name == restored.name
            for a, b in zip(original.parts, restored.parts):
                np.testing.assert_array_equal(a, b)
        np.testing.assert_array_equal(loaded.record("dense1.weight").mask, sample_checkpoint.records[0].mask)
        assert loaded.record("dense1.bias").mask is None
        assert loaded.to_bytes() == raw

    def test_save_and_load(self, sample_checkpoint, tmp_path):
        path = sample_checkpoint.save(tmp_path / "nested" / "run.ckpt")
        assert Checkpoint.load(path).metadata["epoch"] == 2

    def test_bad_magic(self, sample_checkpoint):
        raw = sample_checkpoint.to_bytes()
        with pytest.raises(CheckpointError):
            Checkpoint.from_bytes(b"X" + raw[1:])

    def test_unsupported_version(self, sample_checkpoint):
        raw = bytearray(sample_checkpoint.to_bytes())
        raw[len(MAGIC)] = 9
        with pytest.raises(CheckpointError):
            Checkpoint.from_bytes(bytes(raw))

    @pytest.mark.parametrize("cut", [4, 20, 60])
    def test_truncated(self, sample_checkpoint, cut):
        raw = sample_checkpoint.to_bytes()
        with pytest.raises(CheckpointError):
            Checkpoint.from_bytes(raw[:-cut])

    def test_trailing_bytes(self, sample_checkpoint):
        with pytest.raises(CheckpointError):
            Checkpoint.from_bytes(sample_checkpoint.to_bytes() + b"\x00")

    def test_missing_record(self, sample_checkpoint):
        with pytest.raises(CheckpointError):
            sample_checkpoint.record("dense2.weight")


class TestModelState:
    def test_restore_model_with_masks(self, tiny_config, tiny_splits):
        config = tiny_config()
        train, _ = tiny_splits
        source = _model(config, train, seed=1)
        dense1 = source.variational_layers()[0]
        mask = np.zeros(dense1.weight_shape, dtype=bool)
        mask[:, 0] = True
        dense1.apply_mask(mask)

        target = _model(config, train, seed=2)
        restore_model(Checkpoint.from_bytes(build_checkpoint(source, {}).to_bytes()), target)
        for (name, a), (_, b) in zip(source.named_parameters(), target.named_parameters()):
            for x, y in zip(a.parts, b.parts):
                np.testing.assert_array_equal(x, y, err_msg=name)
        np.testing.assert_array_equal(target.variational_layers()[0].mask, mask)
        assert target.variational_layers()[1].mask is None

    def test_incompatible_model(self, tiny_config, tiny_splits, rng):
        config = tiny_config()
        train, _ = tiny_splits
        checkpoint = build_checkpoint(_model(config, train), {})
        other = build_network(ModelConfig(hidden=3), PenaltySpec(), train.input_shape, train.n_classes, rng)
        with pytest.raises(CheckpointError):
            restore_model(checkpoint, other)

    def test_optimizer_state_required(self, tiny_config, tiny_splits):
        config = tiny_config()
        train, _ = tiny_splits
        model = _model(config, train)
        with pytest.raises(CheckpointError):
            restore_optimizer(build_checkpoint(model, {}), Adam(model.parameters()))

    def test_rng_state_round_trip(self):
        rng = np.random.default_rng(42)
        rng.random(3)
        clone = rng_from_state(rng_state(rng))
        np.testing.assert_array_equal(rng.random(5), clone.random(5))

    def test_progress_round_trip(self, tiny_config, tiny_splits):
        config = tiny_config()
        train, _ = tiny_splits
        model = _model(config, train)
        progress = StageProgress()
        progress.best_value, progress.best_epoch, progress.wait = 0.75, 3, 1
        progress.best_params = {p.name: [x + 1.0 for x in p.parts] for p in model.parameters()}
        checkpoint = Checkpoint.from_bytes(build_checkpoint(model, {}, progress=progress).to_bytes())
        restored = StageProgress()
        restore_progress(checkpoint, restored)
        assert (restored.best_value, restored.best_epoch, restored.wait) == (0.75, 3, 1)
        for name, parts in progress.best_params.items():
            for a, b in zip(parts, restored.best_params[name]):
                np.testing.assert_array_equal(a, b)


class TestResume:
    def test_resumed_sparsify_is_bit_exact(self, tiny_config, tiny_splits):
        config = tiny_config()
        train, _ = tiny_splits
        plan = config.plan_for(Stage.SPARSIFY, 0.5)
        saved = {}

        model = _model(config, train)
        optimizer = Adam(model.parameters())
        rng = np.random.default_rng(5)

        def save(epoch, progress):
            if epoch == 0:
                metadata = {"epoch": epoch, "rng_state": rng_state(rng)}
                saved["raw"] = build_checkpoint(model, metadata, optimizer, progress).to_bytes()

        full = run_stage(model, train, plan, optimizer=optimizer, rng=rng, on_epoch_end=save)

        checkpoint = Checkpoint.from_bytes(saved["raw"])
        resumed_model = _model(config, train, seed=99)
        restore_model(checkpoint, resumed_model)
        resumed_optimizer = Adam(resumed_model.parameters())
        restore_optimizer(checkpoint, resumed_optimizer)
        progress = StageProgress()
        restore_progress(checkpoint, progress)
        resumed = run_stage(
            resumed_model, train, plan,
            start_epoch=checkpoint.metadata["epoch"] + 1,
            optimizer=resumed_optimizer,
            rng=rng_from_state(checkpoint.metadata["rng_state"]),
            progress=progress,
        )

        assert resumed_optimizer.step_count == optimizer.step_count
        for (name, a), (_, b) in zip(model.named_parameters(), resumed_model.named_parameters()):
            for x, y in zip(a.parts, b.parts):
                np.testing.assert_array_equal(x, y, err_msg=name)
        assert [m.model_dump() for m in full.metrics[1:]] == [m.model_dump() for m in resumed.metrics]
