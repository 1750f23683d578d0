from typing import List, Optional

from pydantic import BaseModel, Field

METRIC_COLUMNS = [
    "replication", "stage", "epoch", "split", "loss", "accuracy",
    "kl_term", "compression_rate", "tau", "C",
]


class EpochMetrics(BaseModel):
    """Uma linha do CSV de métricas"""
    replication: int = Field(0, description="Semente da replicação")
    stage: str = Field(..., description="pretrain, sparsify, finetune ou final")
    epoch: int = Field(..., description="Época dentro do estágio (-1 na linha final)")
    split: str = Field(..., description="train, test ou valid")
    loss: float = Field(..., description="Perda média da época")
    accuracy: float = Field(..., description="Acurácia (0-1)")
    kl_term: float = Field(0.0, description="Termo KL otimizado, (C / N) * soma das penalidades (só no sparsify)")
    compression_rate: float = Field(1.0, description="Compressão no limiar tau")
    tau: float = Field(-0.5, description="Limiar de log alpha")
    C: float = Field(0.0, description="Coeficiente do termo KL")

    def as_row(self) -> dict:
        return {column: getattr(self, column) for column in METRIC_COLUMNS}


class StageReport(BaseModel):
    """Resumo de um estágio de treinamento"""
    stage: str = Field(..., description="Estágio executado")
    metrics: List[EpochMetrics] = Field(default_factory=list, description="Linhas por época e split")
    epochs_run: int = Field(0, description="Épocas efetivamente executadas")
    stopped_early: bool = Field(False, description="Parada antecipada acionada")
    best_epoch: Optional[int] = Field(None, description="Época restaurada pela parada antecipada")
    compression_rate: float = Field(1.0, description="Compressão ao final do estágio")
    compression_limit: Optional[float] = Field(None, description="Assíntota da compressão (bias)")

    @property
    def is_empty(self) -> bool:
        return not self.metrics


class KLGridRow(BaseModel):
    """Ponto do grid de log alpha na verificação das penalidades"""
    log_alpha: float
    rvd_mc: float = Field(..., description="Estimativa MC da divergência real (até constante)")
    rvd_mc_se: float
    rvd_penalty: float = Field(..., description="Aproximação implementada")
    rvd_exact_derivative: float
    rvd_approx_derivative: float
    rvd_mc_derivative: float = Field(..., description="Diferença progressiva da estimativa MC")
    rvd_mc_derivative_se: float
    rvd_rel_error: float = Field(..., description="|aprox - exata| / |exata|")
    cvd_mc: float
    cvd_mc_se: float
    cvd_penalty: float
    cvd_offset: float = Field(..., description="penalidade - MC")
    cvd_exact_derivative: float
    cvd_fd_derivative: float = Field(..., description="Diferenças centrais da penalidade")
    cvd_fd_rel_error: float


class KLVerificationReport(BaseModel):
    """Resultado consolidado da verificação das penalidades KL"""
    grid: int
    samples: int
    rows: List[KLGridRow] = Field(default_factory=list)
    approx_within_4pct: bool = Field(..., description="Derivada aproximada a 4% da exata onde |exata| > 1e-4")
    exact_vs_mc_fraction: float = Field(..., description="Fração do grid com a derivada exata a 3 EP da MC")
    cvd_offset_std: float
    cvd_pooled_se: float
    cvd_derivative_max_rel_error: float
    cvd_penalty_at_max_alpha: float

    @property
    def passed(self) -> bool:
        return (
            self.approx_within_4pct
            and self.exact_vs_mc_fraction >= 0.98
            and self.cvd_offset_std < 3.0 * self.cvd_pooled_se
            and self.cvd_derivative_max_rel_error < 1e-6
            and abs(self.cvd_penalty_at_max_alpha) < 1e-3
        )


class LRTCheck(BaseModel):
    """Comparação de um momento de uma saída contra o valor analítico"""
    check: str = Field(..., description="Nome da comparação (mean, variance, relation, ...)")
    output: int = Field(..., description="Índice da saída (-1 para covariâncias cruzadas)")
    expected: float
    observed: float
    standard_error: float
    passed: bool


class LRTVerificationReport(BaseModel):
    penalty: str
    samples: int
    exact_branch: bool = Field(False, description="Variância nula: comparação por igualdade exata")
    checks: List[LRTCheck] = Field(default_factory=list)

    @property
    def passed(self) -> bool:
        """Ramo exato: todas as comparações; MC: fração >= 0.98 dentro de 3 EP."""
        if not self.checks:
            return False
        if self.exact_branch:
            return all(c.passed for c in self.checks)
        return sum(c.passed for c in self.checks) / len(self.checks) >= 0.98


class GradcheckRow(BaseModel):
    """Uma combinação (camada, penalidade) ou composição do gradcheck"""
    case: str = Field(..., description="Camada ou composição verificada")
    penalty: str = Field("", description="Penalidade (vazia para composições)")
    derivative: str = Field("", description="Derivada registrada usada no backward")
    max_rel_error: float
    passed: bool


class TradeoffRow(BaseModel):
    """Linha agregada por C da curva compressão x acurácia"""
    C: float
    runs: int
    compression_rate: float = Field(..., description="Mediana da compressão final")
    accuracy_min: float
    accuracy_median: float
    accuracy_max: float


class CompressionState(BaseModel):
    """Estado do flow de compressão (uma replicação, um valor de C)"""
    replication: int = Field(0, description="Semente da replicação")
    c_index: int = Field(0, description="Posição de C no grid")
    kl_coeff: float = Field(1e-2, description="Coeficiente C do sparsify")
    config_hash: str = Field("", description="Hash da configuração do experimento")
    stage_reports: List[StageReport] = Field(default_factory=list, description="Relatórios dos estágios executados", exclude=True)
    final_metrics: Optional[EpochMetrics] = Field(None, description="Linha final (compressão x acurácia)", exclude=True)
    compression_limit: Optional[float] = Field(None, description="Assíntota da compressão")
    run_completed: bool = Field(False, description="Flag indicando se os três estágios terminaram", exclude=True)
