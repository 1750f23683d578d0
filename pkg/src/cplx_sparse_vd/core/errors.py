"""Hierarquia de exceções do pacote."""
from typing import Sequence


class CplxSparseError(Exception):
    """Erro base de todas as operações do pacote"""


class ShapeMismatchError(CplxSparseError, ValueError):
    """Formatos incompatíveis entre dois operandos"""

    def __init__(self, left: Sequence[int], right: Sequence[int], op: str = ""):
        self.left = tuple(left)
        self.right = tuple(right)
        prefix = f"{op}: " if op else ""
        super().__init__(f"{prefix}formatos incompatíveis {self.left} e {self.right}")


class DomainError(CplxSparseError, ValueError):
    """Argumento fora do domínio da função"""


class DegenerateDistributionError(CplxSparseError, ValueError):
    """Distribuição degenerada (variância nula ou |xi| = 1)"""


class GradientError(CplxSparseError, RuntimeError):
    """Uso inválido do backward"""


class NonFiniteGradientError(CplxSparseError, FloatingPointError):
    """Gradiente com NaN/Inf; o nome do parâmetro vai na mensagem"""

    def __init__(self, name: str):
        self.name = name
        super().__init__(f"gradiente não finito no parâmetro '{name}'")


class NonFinitePenaltyError(CplxSparseError, FloatingPointError):
    """log alpha não finito ao calcular a penalidade KL"""


class InfiniteCompressionError(CplxSparseError, ZeroDivisionError):
    """Todos os valores armazenados foram zerados"""


class NoVariationalLayersError(CplxSparseError, ValueError):
    """Modelo sem camadas variacionais"""


class StagePlanError(CplxSparseError, ValueError):
    """Plano de estágio inconsistente com o estado do modelo"""


class IdxFormatError(CplxSparseError, ValueError):
    """Arquivo IDX malformado"""


class IdxMagicError(IdxFormatError):
    """Número mágico inesperado"""


class IdxTruncatedError(IdxFormatError):
    """Arquivo IDX menor que o declarado no cabeçalho"""


class IdxCountMismatchError(IdxFormatError):
    """Quantidade de imagens diferente da quantidade de rótulos"""


class ConfigError(CplxSparseError, ValueError):
    """Configuração inválida"""


class CheckpointError(CplxSparseError, ValueError):
    """Checkpoint ilegível ou incompatível com a configuração"""
