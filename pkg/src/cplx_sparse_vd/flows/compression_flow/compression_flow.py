from pathlib import Path
from typing import Callable, List, Optional

import numpy as np
from crewai.flow import Flow, listen, start

from ...core import pruning
from ...core.checkpoint import (
    Checkpoint,
    build_checkpoint,
    restore_model,
    restore_optimizer,
    restore_progress,
    rng_from_state,
    rng_state,
)
from ...core.data import FeatureSet, holdout
from ...core.errors import CheckpointError, InfiniteCompressionError
from ...core.metrics import MetricsSink
from ...core.networks import VariationalNetwork, build_network
from ...core.pipeline import Adam, StageProgress, evaluate, mask_from_layers, run_stage
from ...core.varlayers import LayerMode
from ...models.config_models import ExperimentConfig, Stage
from ...models.report_models import CompressionState, EpochMetrics

STAGE_ORDER = [Stage.PRETRAIN, Stage.SPARSIFY, Stage.FINETUNE]


class CompressionFlow(Flow[CompressionState]):
    """Flow de compressão: pré-treino, esparsificação, máscaras e ajuste fino"""

    def __init__(
        self,
        config: ExperimentConfig,
        train: FeatureSet,
        test: FeatureSet,
        output_dir: Optional[Path] = None,
        resume: Optional[Checkpoint] = None,
        pretrained: Optional[Checkpoint] = None,
        valid: Optional[FeatureSet] = None,
        **kwargs,
    ):
        # objetos pesados ficam fora do estado pydantic do flow
        self.config = config
        self.train = train
        self.test = test
        self.valid = valid
        self.output_dir = Path(output_dir or config.output_dir)
        self.resume = resume
        self.pretrained = pretrained
        self.model: Optional[VariationalNetwork] = None
        self.sink = MetricsSink(self.output_dir / "metrics.csv")
        super().__init__(**kwargs)

    # --- auxiliares -----------------------------------------------------------
    def _resume_point(self) -> Optional[tuple]:
        if self.resume is None:
            return None
        meta = self.resume.metadata
        return STAGE_ORDER.index(Stage(meta["stage"])), int(meta["epoch"])

    def _checkpoint_path(self, stage: Stage, epoch: Optional[int] = None) -> Path:
        run = (
            f"r{self.state.replication}-pretrain" if stage is Stage.PRETRAIN
            else f"r{self.state.replication}-c{self.state.c_index}"
        )
        suffix = "" if epoch is None else f"-{stage.value}-e{epoch:03d}"
        return self.output_dir / "checkpoints" / f"{run}{suffix}.ckpt"

    def _saver(self, stage: Stage, optimizer: Adam, rng: np.random.Generator) -> Callable[[int, StageProgress], None]:
        def save(epoch: int, progress: StageProgress) -> None:
            metadata = {
                "stage": stage.value,
                "epoch": epoch,
                "replication": self.state.replication,
                "c_index": None if stage is Stage.PRETRAIN else self.state.c_index,
                "kl_coeff": self.state.kl_coeff,
                "config_hash": self.state.config_hash,
                "rng_state": rng_state(rng),
            }
            checkpoint = build_checkpoint(self.model, metadata, optimizer, progress)
            checkpoint.save(self._checkpoint_path(stage))
            if self.config.keep_checkpoints:
                checkpoint.save(self._checkpoint_path(stage, epoch))
        return save

    def _run_stage(self, stage: Stage) -> None:
        index = STAGE_ORDER.index(stage)
        resume_point = self._resume_point()
        if resume_point is not None and index < resume_point[0]:
            print(f"⏭️ {stage.value}: retomado de checkpoint, estágio pulado")
            return

        plan = self.config.plan_for(stage, self.state.kl_coeff).model_copy(
            update={"seed": self.state.replication}
        )
        optimizer = Adam(self.model.parameters())
        rng = np.random.default_rng([self.state.replication, index])
        progress = StageProgress()
        start_epoch = 0
        if resume_point is not None and index == resume_point[0]:
            start_epoch = resume_point[1] + 1
            restore_optimizer(self.resume, optimizer)
            restore_progress(self.resume, progress)
            rng = rng_from_state(self.resume.metadata["rng_state"])
            print(f"🔁 {stage.value}: retomando na época {start_epoch}")

        print(f"🏋️ {stage.value}: {plan.epochs} épocas, lr={plan.base_lr}, C={plan.kl_coeff if stage is Stage.SPARSIFY else 0}")
        report = run_stage(
            self.model,
            self.train,
            plan,
            valid=self.valid,
            test=self.test,
            start_epoch=start_epoch,
            optimizer=optimizer,
            rng=rng,
            progress=progress,
            on_epoch_end=self._saver(stage, optimizer, rng),
            replication=self.state.replication,
        )
        self.sink.append(report.metrics)
        self.state.stage_reports.append(report)
        last = report.metrics[-1] if report.metrics else None
        if last is not None:
            print(f"✅ {stage.value}: acurácia {last.accuracy:.4f}, compressão x{report.compression_rate:.2f}")
        else:
            print(f"✅ {stage.value}: nada a executar")

    # --- etapas ----------------------------------------------------------------
    @start()
    def prepare_run(self):
        """Monta a rede da replicação e restaura checkpoints quando houver"""
        print(f"🚀 Replicação {self.state.replication}, C={self.state.kl_coeff:g}")
        self.state.config_hash = self.config.config_hash()
        self.state.stage_reports = []
        self.state.run_completed = False
        rng = np.random.default_rng(self.state.replication)
        self.model = build_network(
            self.config.model, self.config.penalty, self.train.input_shape, self.train.n_classes, rng
        )
        for source in (self.resume, self.pretrained):
            if source is None:
                continue
            if source.metadata.get("config_hash") != self.state.config_hash:
                print("❌ Checkpoint gerado com outra configuração")
                raise CheckpointError("hash da configuração não confere com o checkpoint")
            restore_model(source, self.model)
            print("📂 Parâmetros restaurados do checkpoint")
            break

    @listen(prepare_run)
    def pretrain(self):
        """Treino determinístico sem penalidade"""
        if self.pretrained is not None and self.resume is None:
            print("⏭️ pretrain: reaproveitando o pré-treino desta replicação")
            return
        resume_point = self._resume_point()
        self._run_stage(Stage.PRETRAIN)
        if resume_point is not None and resume_point[0] > 0:
            return
        self.pretrained = build_checkpoint(
            self.model, {"stage": Stage.PRETRAIN.value, "config_hash": self.state.config_hash}
        )

    @listen(pretrain)
    def sparsify(self):
        """Treino estocástico com o termo KL ponderado por C / N"""
        self._run_stage(Stage.SPARSIFY)

    @listen(sparsify)
    def compute_masks(self):
        """Fronteira sparsify -> fine-tune: poda em log alpha <= tau"""
        layers = self.model.variational_layers()
        if any(layer.mask is None for layer in layers):
            pruning.apply_masks(self.model, pruning.compute_masks(self.model, self.config.tau))
        mask = mask_from_layers(self.model, self.config.tau)
        self.state.compression_limit = pruning.compression_limit(mask)
        kept = mask.n_kept
        print(f"✂️ Máscaras em tau={self.config.tau}: {kept}/{mask.n_par} valores mantidos")

    @listen(compute_masks)
    def finetune(self):
        """Treino determinístico só dos parâmetros não podados"""
        self._run_stage(Stage.FINETUNE)

    @listen(finetune)
    def finalize_run(self):
        """Grava a linha final de compressão x acurácia"""
        try:
            loss, accuracy = evaluate(self.model, self.test, LayerMode.MASKED)
            mask = mask_from_layers(self.model, self.config.tau)
            try:
                rate = pruning.compression_rate(mask)
            except InfiniteCompressionError:
                rate = float("inf")
            final = EpochMetrics(
                replication=self.state.replication, stage="final", epoch=-1, split="test",
                loss=loss, accuracy=accuracy, kl_term=0.0, compression_rate=rate,
                tau=self.config.tau, C=self.state.kl_coeff,
            )
            self.sink.append([final])
            self.state.final_metrics = final
            self.state.run_completed = True
            print(f"🎉 Final: acurácia {accuracy:.4f}, compressão x{rate:.2f} (limite x{self.state.compression_limit:.1f})")
        except Exception as e:
            print(f"❌ Erro ao finalizar a execução: {str(e)}")
            raise


def stored_pretrain(config: ExperimentConfig, output_dir: Path, replication: int) -> Optional[Checkpoint]:
    """Checkpoint do pré-treino completo desta replicação, se houver um compatível em disco.

    Com parada antecipada no pré-treino o arquivo guarda a última época, não a
    melhor, e não serve como cache.
    """
    plan = config.stages.pretrain
    path = output_dir / "checkpoints" / f"r{replication}-pretrain.ckpt"
    if plan.early_stop is not None or plan.epochs == 0 or not path.exists():
        return None
    checkpoint = Checkpoint.load(path)
    meta = checkpoint.metadata
    if meta.get("config_hash") != config.config_hash() or meta.get("epoch") != plan.epochs - 1:
        return None
    return checkpoint


def run_experiment(
    config: ExperimentConfig,
    train: FeatureSet,
    test: FeatureSet,
    output_dir: Optional[Path] = None,
    resume: Optional[Checkpoint] = None,
) -> List[CompressionState]:
    """Executa todas as replicações x valores de C, em ordem.

    Com `resume`, as execuções anteriores ao checkpoint são puladas e a
    execução do checkpoint continua da época seguinte à salva. Com
    `dataset.valid_n`, essa quantidade de amostras sai do treino e vira o
    conjunto de validação da parada antecipada.
    """
    output_dir = Path(output_dir or config.output_dir)
    if resume is not None and resume.metadata.get("config_hash") != config.config_hash():
        raise CheckpointError("hash da configuração não confere com o checkpoint")
    valid = None
    if config.dataset.valid_n is not None:
        train, valid = holdout(train, config.dataset.valid_n, config.dataset.seed)
        print(f"🧪 Validação: {len(valid)} amostras reservadas do treino")
    start_rep = None if resume is None else resume.metadata["replication"]
    start_c = None if resume is None else resume.metadata.get("c_index")
    states = []
    pending_resume = resume
    for replication in config.replications:
        if start_rep is not None and replication != start_rep and pending_resume is not None:
            continue
        pretrained: Optional[Checkpoint] = None
        for c_index, kl_coeff in enumerate(config.c_grid):
            if pending_resume is not None and start_c is not None and c_index < start_c:
                continue
            flow = CompressionFlow(
                config, train, test, output_dir=output_dir, resume=pending_resume,
                pretrained=pretrained, valid=valid,
            )
            flow.kickoff(inputs={"replication": replication, "c_index": c_index, "kl_coeff": kl_coeff})
            pending_resume = None
            pretrained = flow.pretrained
            if pretrained is None:
                pretrained = stored_pretrain(config, output_dir, replication)
            states.append(flow.state)
    return states
