import hashlib
import json
import math
from enum import Enum
from pathlib import Path
from typing import Any, Dict, List, Literal, Mapping, Optional, Tuple, Union

import yaml
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

from ..core.errors import ConfigError

DEFAULT_STAGES_PATH = Path(__file__).resolve().parents[1] / "flows" / "compression_flow" / "config" / "stages.yaml"
NON_SEMANTIC_FIELDS = {"output_dir", "keep_checkpoints"}


class PenaltyKind(str, Enum):
    """Tipos de penalidade KL"""
    CVD = "CVD"
    CARD = "CARD"
    RVD = "RVD"
    RARD = "RARD"
    RSCALE = "RSCALE"

    @property
    def is_complex(self) -> bool:
        """Camadas com média complexa (RSCALE usa ruído real sobre mu complexo)"""
        return self in (PenaltyKind.CVD, PenaltyKind.CARD, PenaltyKind.RSCALE)


RVD_K1 = 0.63576
RVD_K2 = 1.8732
RVD_K3 = 1.48695


class PenaltySpec(BaseModel):
    """Seletor e constantes de uma penalidade KL"""
    model_config = ConfigDict(frozen=True, extra="forbid")

    kind: PenaltyKind = Field(PenaltyKind.CVD, description="Tipo de penalidade")
    k1: float = Field(RVD_K1, description="Peso do termo sigmoide (RVD)")
    k2: float = Field(RVD_K2, description="Deslocamento do sigmoide (RVD)")
    k3: float = Field(RVD_K3, description="Inclinação do sigmoide (RVD)")
    exact_gradient: bool = Field(
        False, description="RVD/RSCALE: usa a derivada exata (Dawson) no backward"
    )

    @model_validator(mode="after")
    def _fixed_constants(self) -> "PenaltySpec":
        if (self.k1, self.k2, self.k3) != (RVD_K1, RVD_K2, RVD_K3):
            raise ValueError("as constantes k1, k2, k3 são fixas")
        return self


class Stage(str, Enum):
    PRETRAIN = "pretrain"
    SPARSIFY = "sparsify"
    FINETUNE = "finetune"


class EarlyStop(BaseModel):
    model_config = ConfigDict(extra="forbid")

    patience: int = Field(..., ge=1, description="Épocas sem melhora antes de parar")
    metric: Literal["loss", "accuracy"] = Field("accuracy", description="Métrica de validação")


class StagePlan(BaseModel):
    """Plano de um estágio de treinamento"""
    model_config = ConfigDict(extra="forbid")

    stage: Stage
    epochs: int = Field(..., ge=0, description="Número de épocas")
    batch_size: int = Field(128, ge=1, description="Tamanho do lote")
    base_lr: float = Field(1e-3, gt=0, description="Taxa de aprendizado inicial do estágio")
    lr_schedule: List[Tuple[int, float]] = Field(
        default_factory=lambda: [(10, 0.1)],
        description="Pares (época, fator): a partir da época o lr é base_lr * fator",
    )
    kl_coeff: float = Field(1e-2, description="Coeficiente C do termo KL (só no sparsify)")
    tau: float = Field(-0.5, description="Limiar de log alpha (fronteira sparsify -> finetune)")
    clip_norm: float = Field(0.5, gt=0, description="Norma global máxima do gradiente")
    seed: int = Field(0, description="Semente do estágio")
    early_stop: Optional[EarlyStop] = Field(None, description="Parada antecipada (paciência, métrica)")

    @field_validator("lr_schedule")
    @classmethod
    def _increasing(cls, value: List[Tuple[int, float]]) -> List[Tuple[int, float]]:
        epochs = [epoch for epoch, _ in value]
        if any(b <= a for a, b in zip(epochs, epochs[1:])):
            raise ValueError(f"épocas do agendamento devem ser estritamente crescentes: {epochs}")
        return value

    @field_validator("kl_coeff")
    @classmethod
    def _coefficient_range(cls, value: float) -> float:
        if not 0.0 < value <= 1.0:
            raise ValueError(f"C deve estar em (0, 1], recebido {value}")
        return value

    def lr_at(self, epoch: int) -> float:
        lr = self.base_lr
        for start, factor in self.lr_schedule:
            if epoch >= start:
                lr = self.base_lr * factor
        return lr

    def scaled(self, factor: float) -> "StagePlan":
        """Divide a duração (e o agendamento) por `factor` para execuções de bancada."""
        if factor <= 1:
            return self
        epochs = 0 if self.epochs == 0 else max(1, math.ceil(self.epochs / factor))
        schedule = []
        for start, lr_factor in self.lr_schedule:
            scaled_start = max(1, math.ceil(start / factor))
            if not schedule or scaled_start > schedule[-1][0]:
                schedule.append((scaled_start, lr_factor))
        return self.model_copy(update={"epochs": epochs, "lr_schedule": schedule})


class DatasetConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    source: Literal["idx", "synthetic"] = Field("idx", description="Origem dos dados")
    path: Optional[str] = Field(None, description="Diretório com os arquivos IDX")
    subset_n: Optional[int] = Field(10000, ge=1, description="Tamanho do subconjunto fixo de treino")
    test_n: Optional[int] = Field(None, ge=1, description="Subconjunto do teste (execuções de bancada)")
    valid_n: Optional[int] = Field(
        None, ge=1, description="Amostras do treino reservadas para validação (parada antecipada)"
    )
    seed: int = Field(0, description="Semente do subconjunto")
    features: Literal["raw", "fft"] = Field("raw", description="Pré-processamento")
    fft_norm: Literal["backward", "ortho", "forward"] = Field("ortho", description="Normalização da DFT")
    n_per_class: int = Field(100, ge=1, description="Sintético: amostras por classe")
    n_classes: int = Field(2, ge=2, description="Sintético: número de classes")
    dim: int = Field(8, ge=1, description="Sintético: dimensão")

    @model_validator(mode="after")
    def _path_for_idx(self) -> "DatasetConfig":
        if self.source == "idx" and not self.path:
            raise ValueError("dataset.path é obrigatório para source=idx")
        return self


class ModelConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    kind: Literal["real", "complex"] = Field("complex", description="Corpo dos parâmetros")
    arch: Literal["dense", "conv"] = Field("dense", description="Arquitetura")
    width: float = Field(1.0, description="Multiplicador de largura (1/2 C, 2 R)")
    hidden: int = Field(256, ge=1, description="Largura oculta da rede densa antes do multiplicador")

    @field_validator("width")
    @classmethod
    def _allowed_width(cls, value: float) -> float:
        if value not in (0.5, 1.0, 2.0):
            raise ValueError(f"multiplicador de largura deve ser 0.5, 1 ou 2: {value}")
        return value


class StagesConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    pretrain: StagePlan
    sparsify: StagePlan
    finetune: StagePlan

    @model_validator(mode="after")
    def _stage_tags(self) -> "StagesConfig":
        for name in ("pretrain", "sparsify", "finetune"):
            if getattr(self, name).stage.value != name:
                raise ValueError(f"stages.{name} com estágio trocado")
        return self

    def ordered(self) -> List[StagePlan]:
        return [self.pretrain, self.sparsify, self.finetune]


class ExperimentConfig(BaseModel):
    """Configuração completa de um experimento"""
    model_config = ConfigDict(extra="forbid")

    dataset: DatasetConfig
    model: ModelConfig = Field(default_factory=ModelConfig)
    penalty: PenaltySpec = Field(default_factory=PenaltySpec)
    stages: StagesConfig
    c_grid: List[float] = Field(default_factory=lambda: [1e-2], description="Valores de C")
    tau: float = Field(-0.5, description="Limiar de log alpha")
    replications: List[int] = Field(default_factory=lambda: [0, 1, 2, 3, 4], description="Sementes")
    output_dir: str = Field("runs", description="Diretório de saída")
    keep_checkpoints: bool = Field(False, description="Mantém um checkpoint por época (senão só o último)")

    @field_validator("penalty", mode="before")
    @classmethod
    def _penalty_shorthand(cls, value):
        if isinstance(value, (str, PenaltyKind)):
            return {"kind": value}
        return value

    @field_validator("c_grid", mode="before")
    @classmethod
    def _named_grid(cls, value):
        if value == "geometric":
            return geometric_c_grid()
        return value

    @field_validator("c_grid")
    @classmethod
    def _grid_range(cls, value: List[float]) -> List[float]:
        if not value:
            raise ValueError("c_grid vazio")
        for c in value:
            if not 0.0 < c <= 1.0:
                raise ValueError(f"C deve estar em (0, 1], recebido {c}")
        return value

    @model_validator(mode="after")
    def _penalty_matches_kind(self) -> "ExperimentConfig":
        if self.penalty.kind.is_complex != (self.model.kind == "complex"):
            raise ValueError(
                f"penalidade {self.penalty.kind.value} incompatível com modelo {self.model.kind}"
            )
        return self

    @model_validator(mode="after")
    def _early_stop_needs_validation(self) -> "ExperimentConfig":
        stopping = [plan.stage.value for plan in self.stages.ordered() if plan.early_stop is not None]
        if stopping and self.dataset.valid_n is None:
            raise ValueError(f"parada antecipada em {', '.join(stopping)} exige dataset.valid_n")
        return self

    def plan_for(self, stage: Stage, kl_coeff: Optional[float] = None) -> StagePlan:
        plan = getattr(self.stages, stage.value)
        update: Dict[str, Any] = {"tau": self.tau}
        if stage is Stage.SPARSIFY and kl_coeff is not None:
            update["kl_coeff"] = kl_coeff
        return plan.model_copy(update=update)

    def scaled(self, factor: float) -> "ExperimentConfig":
        """Estágios encurtados por `factor` (execuções de bancada)."""
        stages = StagesConfig(**{plan.stage.value: plan.scaled(factor) for plan in self.stages.ordered()})
        return self.model_copy(update={"stages": stages})

    def config_hash(self) -> str:
        """SHA-256 do JSON canônico, sem os campos que não mudam o experimento."""
        payload = self.model_dump(mode="json", exclude=NON_SEMANTIC_FIELDS)
        canonical = json.dumps(payload, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(canonical.encode("utf-8")).hexdigest()


def geometric_c_grid(k_min: int = 2, k_max: int = 38) -> List[float]:
    """C = 3/2 * 2^(-k/2), k = k_min..k_max"""
    return [1.5 * 2.0 ** (-k / 2.0) for k in range(k_min, k_max + 1)]


def flatten_keys(data: Mapping[str, Any], prefix: str = "") -> Dict[str, Any]:
    """{"a": {"b": 1}} -> {"a.b": 1}; listas e escalares são folhas."""
    flat: Dict[str, Any] = {}
    for key, value in data.items():
        dotted = f"{prefix}{key}"
        if isinstance(value, Mapping):
            flat.update(flatten_keys(value, f"{dotted}."))
        else:
            flat[dotted] = value
    return flat


def unflatten_keys(flat: Mapping[str, Any]) -> Dict[str, Any]:
    nested: Dict[str, Any] = {}
    for dotted, value in flat.items():
        node = nested
        parts = dotted.split(".")
        for part in parts[:-1]:
            child = node.setdefault(part, {})
            if not isinstance(child, dict):
                raise ConfigError(f"chave '{dotted}' conflita com o valor de '{part}'")
            node = child
        if isinstance(node.get(parts[-1]), dict):
            raise ConfigError(f"chave '{dotted}' conflita com uma seção")
        node[parts[-1]] = value
    return nested


def _read_yaml(path: Union[str, Path]) -> Dict[str, Any]:
    try:
        with open(path, "r", encoding="utf-8") as f:
            data = yaml.safe_load(f) or {}
    except FileNotFoundError:
        raise ConfigError(f"arquivo de configuração não encontrado: {path}") from None
    except yaml.YAMLError as exc:
        raise ConfigError(f"YAML inválido em {path}: {exc}") from None
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: a configuração deve ser um mapeamento de chaves")
    return data


def build_experiment_config(values: Mapping[str, Any]) -> ExperimentConfig:
    """Valida chaves pontuadas (sobre os planos padrão) e converte erros em ConfigError."""
    merged = flatten_keys(_read_yaml(DEFAULT_STAGES_PATH))
    merged.update(flatten_keys(values))
    try:
        return ExperimentConfig.model_validate(unflatten_keys(merged))
    except ValidationError as exc:
        problems = []
        for error in exc.errors():
            key = ".".join(str(part) for part in error["loc"])
            if error["type"] == "extra_forbidden":
                problems.append(f"chave desconhecida '{key}'")
            else:
                problems.append(f"'{key}': {error['msg']}")
        raise ConfigError("; ".join(problems)) from None


def load_experiment_config(path: Union[str, Path], overrides: Optional[Mapping[str, Any]] = None) -> ExperimentConfig:
    values = flatten_keys(_read_yaml(path))
    values.update(overrides or {})
    return build_experiment_config(values)
