"""Diferenciação reversa sobre grafos dinâmicos de CTensor/RTensor.

Parâmetros complexos recebem o gradiente conjugado ∇_z̄ no formato
∂F/∂u + j·∂F/∂v, ou seja, o gradiente de R^2 empacotado como complexo.
As regras de backward trabalham diretamente sobre os pares (re, im).
"""
from typing import Callable, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
from pydantic import BaseModel, Field

from .ctensor import CTensor, RTensor
from .errors import GradientError

Value = Union[CTensor, RTensor]
Parts = Tuple[np.ndarray, ...]
BackwardFn = Callable[[Parts], Sequence[Optional[Parts]]]


def value_parts(value: Value) -> Parts:
    if isinstance(value, CTensor):
        return (value.re, value.im)
    return (value.data,)


def value_from_parts(parts: Parts) -> Value:
    if len(parts) == 2:
        return CTensor(parts[0], parts[1])
    return RTensor(parts[0])


class Node:
    """Vértice do grafo: valor, pais e regra de backward"""

    __slots__ = ("value", "parents", "backward_fn", "requires_grad", "op")

    def __init__(
        self,
        value: Value,
        parents: Sequence["Node"] = (),
        backward_fn: Optional[BackwardFn] = None,
        op: str = "leaf",
    ):
        self.value = value
        self.parents = tuple(parents)
        self.backward_fn = backward_fn
        self.requires_grad = any(p.requires_grad for p in self.parents)
        self.op = op

    @property
    def is_complex(self) -> bool:
        return isinstance(self.value, CTensor)

    @property
    def shape(self) -> Tuple[int, ...]:
        return self.value.shape

    @property
    def parts(self) -> Parts:
        return value_parts(self.value)

    def __repr__(self) -> str:
        return f"Node(op={self.op}, shape={self.shape}, complex={self.is_complex})"


def constant(value: Union[Value, np.ndarray, float]) -> Node:
    """Folha sem gradiente (entradas, ruído, máscaras)."""
    if not isinstance(value, (CTensor, RTensor)):
        value = RTensor(value)
    return Node(value)


class Parameter(Node):
    """Folha treinável com acumulador de gradiente e nome pontuado"""

    __slots__ = ("name", "grad_parts", "mask")

    def __init__(self, value: Value, name: str, requires_grad: bool = True):
        super().__init__(value)
        self.name = name
        self.requires_grad = requires_grad
        self.grad_parts: Optional[List[np.ndarray]] = None
        # entradas com máscara 0 ficam congeladas no otimizador
        self.mask: Optional[np.ndarray] = None

    @property
    def grad(self) -> Optional[Value]:
        if self.grad_parts is None:
            return None
        return value_from_parts(tuple(self.grad_parts))

    def zero_grad(self) -> None:
        self.grad_parts = None

    def assign(self, parts: Sequence[np.ndarray]) -> None:
        """Substitui o valor mantendo tipo e formato."""
        parts = tuple(np.asarray(p, dtype=np.float64) for p in parts)
        if len(parts) != len(self.parts) or any(p.shape != self.shape for p in parts):
            raise GradientError(f"atribuição incompatível ao parâmetro '{self.name}'")
        self.value = value_from_parts(parts)

    def __repr__(self) -> str:
        return f"Parameter(name={self.name}, shape={self.shape}, complex={self.is_complex})"


def _topological_order(root: Node) -> List[Node]:
    order: List[Node] = []
    visited = set()
    stack: List[Tuple[Node, bool]] = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        stack.append((node, True))
        for parent in reversed(node.parents):
            if parent.requires_grad and id(parent) not in visited:
                stack.append((parent, False))
    return order


def backward(loss: Node) -> None:
    """Propaga a partir de um escalar real e acumula em `Parameter.grad_parts`."""
    if loss.is_complex:
        raise GradientError("backward exige perda real; use a parte real da saída")
    if loss.value.data.size != 1:
        raise GradientError(f"backward exige perda escalar, formato {loss.shape}")
    if not loss.requires_grad:
        return

    grads: Dict[int, List[np.ndarray]] = {id(loss): [np.ones_like(loss.value.data)]}
    for node in reversed(_topological_order(loss)):
        node_grad = grads.pop(id(node), None)
        if node_grad is None:
            continue
        if isinstance(node, Parameter):
            if node.grad_parts is None:
                node.grad_parts = [g.copy() for g in node_grad]
            else:
                for acc, g in zip(node.grad_parts, node_grad):
                    acc += g
            continue
        if node.backward_fn is None:
            continue
        parent_grads = node.backward_fn(tuple(node_grad))
        for parent, pgrad in zip(node.parents, parent_grads):
            if pgrad is None or not parent.requires_grad:
                continue
            slot = grads.get(id(parent))
            if slot is None:
                grads[id(parent)] = [np.array(g, dtype=np.float64, copy=True) for g in pgrad]
            else:
                for acc, g in zip(slot, pgrad):
                    acc += g


class ParameterCheck(BaseModel):
    """Resultado do gradcheck de um parâmetro"""
    name: str = Field(..., description="Nome pontuado do parâmetro")
    max_rel_error: float = Field(..., description="Maior erro relativo entre gradiente analítico e numérico")
    passed: bool = Field(..., description="Erro abaixo da tolerância")


class GradcheckReport(BaseModel):
    """Relatório consolidado do gradcheck"""
    eps: float
    tol: float
    checks: List[ParameterCheck] = Field(default_factory=list)

    @property
    def passed(self) -> bool:
        return all(check.passed for check in self.checks)

    @property
    def max_rel_error(self) -> float:
        return max((c.max_rel_error for c in self.checks), default=0.0)


def _scalar(node: Node) -> float:
    if node.is_complex or node.value.data.size != 1:
        raise GradientError("gradcheck exige função escalar real")
    return float(node.value.data.reshape(()))


def gradcheck(
    build: Callable[[], Node],
    params: Sequence[Parameter],
    eps: float = 1e-6,
    tol: float = 1e-5,
    floor: float = 1e-3,
) -> GradcheckReport:
    """Compara gradientes analíticos com diferenças centrais em re e im.

    `build` deve reconstruir o grafo de forma determinística (ruído com semente fixa).
    O erro relativo usa max(|analítico|, |numérico|, floor) no denominador.
    """
    if not 1e-8 < eps < 1e-2:
        raise GradientError(f"eps fora de (1e-8, 1e-2): {eps}")
    active = [p for p in params if p.requires_grad]
    for p in active:
        p.zero_grad()
    backward(build())
    report = GradcheckReport(eps=eps, tol=tol)
    for p in active:
        analytic = [np.zeros(p.shape)] * len(p.parts) if p.grad_parts is None else p.grad_parts
        worst = 0.0
        for k, base in enumerate(p.parts):
            flat = base.reshape(-1)
            for idx in range(flat.size):
                parts = [q.copy() for q in p.parts]
                original = flat[idx]
                parts[k].reshape(-1)[idx] = original + eps
                p.assign(parts)
                f_plus = _scalar(build())
                parts[k].reshape(-1)[idx] = original - eps
                p.assign(parts)
                f_minus = _scalar(build())
                parts[k].reshape(-1)[idx] = original
                p.assign(parts)
                numeric = (f_plus - f_minus) / (2.0 * eps)
                exact = float(analytic[k].reshape(-1)[idx])
                denom = max(abs(exact), abs(numeric), floor)
                worst = max(worst, abs(exact - numeric) / denom)
        report.checks.append(ParameterCheck(name=p.name, max_rel_error=worst, passed=worst < tol))
    for p in active:
        p.zero_grad()
    return report
