"""Limiar de relevância, máscaras e contagem da taxa de compressão.

A contagem é feita em valores de ponto flutuante armazenados: um parâmetro
complexo conta como dois. log sigma^2 não é armazenado no modelo final.
"""
import math
from typing import Dict

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, model_validator
from scipy.special import erfinv

from .errors import DomainError, InfiniteCompressionError, NoVariationalLayersError, ShapeMismatchError


class SparsityMask(BaseModel):
    """Máscaras por camada (True = mantido) e a contagem n_par / n_zer"""
    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    masks: Dict[str, np.ndarray] = Field(default_factory=dict, description="Máscara booleana por camada")
    tau: float = Field(-0.5, description="Limiar de log alpha usado")
    n_par: int = Field(..., ge=0, description="Total de valores armazenados")
    n_zer: int = Field(0, ge=0, description="Valores zerados pela poda")
    n_point: int = Field(0, ge=0, description="Valores de estimativas pontuais (sempre mantidos)")

    @model_validator(mode="after")
    def _counts(self) -> "SparsityMask":
        if self.n_zer > self.n_par:
            raise ValueError(f"n_zer ({self.n_zer}) maior que n_par ({self.n_par})")
        for mask in self.masks.values():
            mask.setflags(write=False)
        return self

    @property
    def n_kept(self) -> int:
        return self.n_par - self.n_zer


def _values_per_entry(layer) -> int:
    return 2 if layer.is_complex else 1


def count_parameters(model) -> Dict[str, int]:
    """n_par e a parte de estimativas pontuais (bias) de um modelo."""
    n_par = 0
    n_point = 0
    for layer in model.variational_layers():
        per = _values_per_entry(layer)
        n_par += per * int(np.prod(layer.weight_shape))
        bias = per * int(np.prod(layer.bias.shape))
        n_par += bias
        n_point += bias
    return {"n_par": n_par, "n_point": n_point}


def compute_masks(model, tau: float = -0.5) -> SparsityMask:
    """mask = (log alpha <= tau); empates são mantidos."""
    layers = model.variational_layers()
    if not layers:
        raise NoVariationalLayersError("modelo sem camadas variacionais")
    masks: Dict[str, np.ndarray] = {}
    n_zer = 0
    for layer in layers:
        keep = layer.log_alpha().data <= tau
        masks[layer.name] = keep
        n_zer += _values_per_entry(layer) * int(keep.size - keep.sum())
    counts = count_parameters(model)
    return SparsityMask(masks=masks, tau=tau, n_zer=n_zer, **counts)


def apply_masks(model, mask: SparsityMask) -> None:
    for layer in model.variational_layers():
        if layer.name not in mask.masks:
            raise ShapeMismatchError((), layer.weight_shape, f"máscara ausente para '{layer.name}'")
        layer.apply_mask(mask.masks[layer.name])


def compression_rate(mask: SparsityMask) -> float:
    """n_par / (n_par - n_zer)"""
    if mask.n_zer >= mask.n_par:
        raise InfiniteCompressionError("todos os valores armazenados foram zerados")
    return mask.n_par / (mask.n_par - mask.n_zer)


def compression_limit(mask: SparsityMask) -> float:
    """Assíntota da compressão, determinada pelas estimativas pontuais."""
    if mask.n_point == 0:
        return math.inf
    return mask.n_par / mask.n_point


def chi2_quantile(prob: float, k: int) -> float:
    """Quantil de chi^2 com k = 1 ou 2 graus de liberdade."""
    if not 0.0 < prob < 1.0:
        raise DomainError(f"probabilidade fora de (0, 1): {prob}")
    if k == 2:
        return -2.0 * math.log1p(-prob)
    if k == 1:
        # P(Z^2 <= q) = erf(sqrt(q / 2))
        return 2.0 * float(erfinv(prob)) ** 2
    raise DomainError(f"graus de liberdade devem ser 1 ou 2, recebido {k}")


def threshold_for_tolerance(delta: float, prob: float, k: int = 2) -> float:
    """Maior log alpha que garante P(|w - mu| <= delta |mu|) >= prob.

    k = 2 para pesos complexos e k = 1 para reais.
    """
    if not 0.0 < delta < 1.0:
        raise DomainError(f"delta fora de (0, 1): {delta}")
    quantile = chi2_quantile(prob, k)
    if quantile == 0.0:
        return math.inf
    return math.log(k * delta * delta / quantile)
