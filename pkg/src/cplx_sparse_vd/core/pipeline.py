"""Procedimento em três estágios: objetivo com coeficiente C, ADAM, clipping
global do gradiente, agendamento da taxa de aprendizado e parada antecipada."""
import math
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np

from . import functional as F
from .autograd import Node, Parameter, backward
from .data import FeatureSet, iterate_batches
from .errors import InfiniteCompressionError, NonFiniteGradientError, StagePlanError
from .pruning import SparsityMask, apply_masks, compression_limit, compression_rate, compute_masks, count_parameters
from .varlayers import LayerMode
from ..models.config_models import Stage, StagePlan
from ..models.report_models import EpochMetrics, StageReport

ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8

STAGE_MODES = {
    Stage.PRETRAIN: (LayerMode.DETERMINISTIC, LayerMode.DETERMINISTIC),
    Stage.SPARSIFY: (LayerMode.STOCHASTIC, LayerMode.DETERMINISTIC),
    Stage.FINETUNE: (LayerMode.MASKED, LayerMode.MASKED),
}

Grads = List[List[np.ndarray]]


def adam_step(
    values: Sequence[np.ndarray],
    grads: Sequence[np.ndarray],
    m: Sequence[np.ndarray],
    v: Sequence[np.ndarray],
    step: int,
    lr: float,
    beta1: float = ADAM_BETA1,
    beta2: float = ADAM_BETA2,
    eps: float = ADAM_EPS,
) -> Tuple[List[np.ndarray], List[np.ndarray], List[np.ndarray]]:
    """Atualização ADAM componente a componente; `step` já incrementado (>= 1)."""
    new_values, new_m, new_v = [], [], []
    bias1 = 1.0 - beta1 ** step
    bias2 = 1.0 - beta2 ** step
    for x, g, mk, vk in zip(values, grads, m, v):
        mk = beta1 * mk + (1.0 - beta1) * g
        vk = beta2 * vk + (1.0 - beta2) * g * g
        x = x - lr * (mk / bias1) / (np.sqrt(vk / bias2) + eps)
        new_values.append(x)
        new_m.append(mk)
        new_v.append(vk)
    return new_values, new_m, new_v


class Adam:
    """Estado ADAM por parâmetro, indexado pelo nome pontuado"""

    def __init__(self, params: Sequence[Parameter], beta1: float = ADAM_BETA1,
                 beta2: float = ADAM_BETA2, eps: float = ADAM_EPS):
        self.params = list(params)
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.step_count = 0
        self.m: Dict[str, List[np.ndarray]] = {p.name: [np.zeros_like(x) for x in p.parts] for p in self.params}
        self.v: Dict[str, List[np.ndarray]] = {p.name: [np.zeros_like(x) for x in p.parts] for p in self.params}

    def zero_grad(self) -> None:
        for p in self.params:
            p.zero_grad()

    def gradients(self) -> Grads:
        grads = []
        for p in self.params:
            if p.grad_parts is None:
                grads.append([np.zeros_like(x) for x in p.parts])
                continue
            if not all(np.all(np.isfinite(g)) for g in p.grad_parts):
                raise NonFiniteGradientError(p.name)
            grads.append([np.asarray(g) for g in p.grad_parts])
        return grads

    def step(self, lr: float, grads: Optional[Grads] = None) -> None:
        grads = self.gradients() if grads is None else grads
        self.step_count += 1
        for p, g in zip(self.params, grads):
            keep = None if p.mask is None else p.mask.astype(np.float64)
            if keep is not None:
                g = [gk * keep for gk in g]
            values, self.m[p.name], self.v[p.name] = adam_step(
                p.parts, g, self.m[p.name], self.v[p.name], self.step_count, lr,
                self.beta1, self.beta2, self.eps,
            )
            if keep is not None:
                values = [x * keep for x in values]
            p.assign(values)

    def state_arrays(self) -> Dict[str, List[np.ndarray]]:
        state = {f"adam.m.{name}": parts for name, parts in self.m.items()}
        state.update({f"adam.v.{name}": parts for name, parts in self.v.items()})
        return state

    def load_state(self, arrays: Dict[str, List[np.ndarray]], step_count: int) -> None:
        for name in self.m:
            self.m[name] = [np.array(x) for x in arrays[f"adam.m.{name}"]]
            self.v[name] = [np.array(x) for x in arrays[f"adam.v.{name}"]]
        self.step_count = step_count


def global_norm(grads: Grads) -> float:
    return math.sqrt(sum(float(np.sum(g * g)) for parts in grads for g in parts))


def clip_global_norm(grads: Grads, max_norm: float) -> Tuple[Grads, float]:
    """Reescala todos os gradientes por max_norm / norma quando a norma global excede max_norm."""
    if max_norm <= 0:
        raise StagePlanError(f"max_norm deve ser positivo: {max_norm}")
    norm = global_norm(grads)
    if norm <= max_norm:
        return grads, norm
    factor = max_norm / norm
    return [[g * factor for g in parts] for parts in grads], norm


def _sparsify_terms(model, inputs, labels: np.ndarray, kl_coeff: float, n_train: int,
                    rng: Optional[np.random.Generator]) -> Tuple[Node, Node]:
    if not 0.0 < kl_coeff <= 1.0:
        raise StagePlanError(f"C deve estar em (0, 1], recebido {kl_coeff}")
    if n_train < 1:
        raise StagePlanError("tamanho do conjunto de treino deve ser positivo")
    logits = model.forward(inputs, rng=rng, mode=LayerMode.STOCHASTIC)
    nll = F.cross_entropy(logits, labels)
    kl = model.penalty()
    return F.add(nll, F.scale(kl, kl_coeff / n_train)), logits


def objective_sparsify(model, inputs, labels: np.ndarray, kl_coeff: float, n_train: int,
                       rng: Optional[np.random.Generator] = None) -> Node:
    """(C / N) * sum KL + entropia cruzada média sobre Re(logits)."""
    loss, _ = _sparsify_terms(model, inputs, labels, kl_coeff, n_train, rng)
    return loss


def _accuracy(logits: Node, labels: np.ndarray) -> float:
    return float(np.mean(np.argmax(logits.value.data, axis=1) == labels))


def evaluate(model, data: FeatureSet, mode: LayerMode, batch_size: int = 512) -> Tuple[float, float]:
    """Perda e acurácia médias sem ruído (modo determinístico ou mascarado)."""
    total_loss, total_hits = 0.0, 0.0
    for idx in iterate_batches(len(data), batch_size):
        inputs, labels = data.take(idx)
        logits = model.forward(inputs, mode=mode)
        total_loss += float(F.cross_entropy(logits, labels).value.data) * len(idx)
        total_hits += _accuracy(logits, labels) * len(idx)
    return total_loss / len(data), total_hits / len(data)


def mask_from_layers(model, tau: float) -> SparsityMask:
    """Contagem a partir das máscaras já aplicadas às camadas."""
    masks, n_zer = {}, 0
    for layer in model.variational_layers():
        keep = layer.mask if layer.mask is not None else np.ones(layer.weight_shape, dtype=bool)
        masks[layer.name] = keep.copy()
        n_zer += (2 if layer.is_complex else 1) * int(keep.size - keep.sum())
    return SparsityMask(masks=masks, tau=tau, n_zer=n_zer, **count_parameters(model))


def _safe_rate(mask: SparsityMask) -> float:
    try:
        return compression_rate(mask)
    except InfiniteCompressionError:
        return math.inf


class StageProgress:
    """Estado da parada antecipada (salvo nos checkpoints)"""

    def __init__(self):
        self.best_value: Optional[float] = None
        self.best_epoch: Optional[int] = None
        self.wait = 0
        self.best_params: Dict[str, List[np.ndarray]] = {}

    def improved(self, value: float, metric: str) -> bool:
        if self.best_value is None:
            return True
        return value > self.best_value if metric == "accuracy" else value < self.best_value


EpochCallback = Callable[[int, StageProgress], None]


def run_stage(
    model,
    data: FeatureSet,
    plan: StagePlan,
    *,
    valid: Optional[FeatureSet] = None,
    test: Optional[FeatureSet] = None,
    start_epoch: int = 0,
    optimizer: Optional[Adam] = None,
    rng: Optional[np.random.Generator] = None,
    progress: Optional[StageProgress] = None,
    on_epoch_end: Optional[EpochCallback] = None,
    replication: int = 0,
) -> StageReport:
    """Executa um estágio; o sparsify termina aplicando as máscaras em `plan.tau`.

    `test` só gera linhas de acompanhamento; a parada antecipada observa `valid`.
    A coluna `kl_term` guarda o termo otimizado, (C / N) * soma KL.
    """
    stage = Stage(plan.stage)
    if len(data) == 0:
        raise StagePlanError("conjunto de dados vazio")
    if plan.early_stop is not None and valid is None:
        raise StagePlanError("parada antecipada exige um conjunto de validação")
    layers = model.variational_layers()
    if stage is Stage.FINETUNE and any(layer.mask is None for layer in layers):
        raise StagePlanError("fine-tune exige máscaras em todas as camadas")
    report = StageReport(stage=stage.value)
    if plan.epochs == 0:
        return report

    train_mode, eval_mode = STAGE_MODES[stage]
    model.set_mode(train_mode)
    rng = np.random.default_rng(plan.seed) if rng is None else rng
    optimizer = Adam(model.parameters()) if optimizer is None else optimizer
    progress = StageProgress() if progress is None else progress
    if stage is Stage.SPARSIFY and start_epoch == 0:
        for layer in layers:
            layer.reset_log_sigma2()
    n_train = len(data)
    coeff = plan.kl_coeff if stage is Stage.SPARSIFY else 0.0

    def row(split: str, epoch: int, loss: float, acc: float, kl: float, rate: float) -> EpochMetrics:
        return EpochMetrics(
            replication=replication, stage=stage.value, epoch=epoch, split=split, loss=loss,
            accuracy=acc, kl_term=kl, compression_rate=rate, tau=plan.tau, C=coeff,
        )

    for epoch in range(start_epoch, plan.epochs):
        lr = plan.lr_at(epoch)
        total_loss, total_hits = 0.0, 0.0
        for idx in iterate_batches(n_train, plan.batch_size, rng):
            inputs, labels = data.take(idx)
            optimizer.zero_grad()
            if stage is Stage.SPARSIFY:
                loss, logits = _sparsify_terms(model, inputs, labels, plan.kl_coeff, n_train, rng)
            else:
                logits = model.forward(inputs, mode=train_mode)
                loss = F.cross_entropy(logits, labels)
            backward(loss)
            grads, _ = clip_global_norm(optimizer.gradients(), plan.clip_norm)
            optimizer.step(lr, grads)
            if stage is Stage.SPARSIFY:
                for layer in layers:
                    layer.clamp_log_sigma2()
            total_loss += float(loss.value.data) * len(idx)
            total_hits += _accuracy(logits, labels) * len(idx)

        kl = coeff / n_train * float(model.penalty().value.data) if stage is Stage.SPARSIFY else 0.0
        mask = mask_from_layers(model, plan.tau) if stage is Stage.FINETUNE else compute_masks(model, plan.tau)
        rate = _safe_rate(mask)
        report.metrics.append(row("train", epoch, total_loss / n_train, total_hits / n_train, kl, rate))
        report.epochs_run += 1
        if test is not None:
            t_loss, t_acc = evaluate(model, test, eval_mode)
            report.metrics.append(row("test", epoch, t_loss, t_acc, kl, rate))

        stop = False
        if valid is not None:
            v_loss, v_acc = evaluate(model, valid, eval_mode)
            report.metrics.append(row("valid", epoch, v_loss, v_acc, kl, rate))
            if plan.early_stop is not None:
                value = v_acc if plan.early_stop.metric == "accuracy" else v_loss
                if progress.improved(value, plan.early_stop.metric):
                    progress.best_value, progress.best_epoch, progress.wait = value, epoch, 0
                    progress.best_params = {p.name: [x.copy() for x in p.parts] for p in model.parameters()}
                else:
                    progress.wait += 1
                    stop = progress.wait >= plan.early_stop.patience
        if on_epoch_end is not None:
            on_epoch_end(epoch, progress)
        if stop:
            report.stopped_early = True
            break

    if progress.best_params and plan.early_stop is not None and valid is not None:
        for p in model.parameters():
            p.assign(progress.best_params[p.name])
        report.best_epoch = progress.best_epoch

    if stage is Stage.SPARSIFY:
        mask = compute_masks(model, plan.tau)
        apply_masks(model, mask)
    else:
        mask = mask_from_layers(model, plan.tau) if stage is Stage.FINETUNE else compute_masks(model, plan.tau)
    report.compression_rate = _safe_rate(mask)
    report.compression_limit = compression_limit(mask)
    return report
