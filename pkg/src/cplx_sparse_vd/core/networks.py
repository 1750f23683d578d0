"""Redes de classificação montadas com as camadas variacionais."""
from typing import List, Optional, Sequence, Tuple, Union

import numpy as np

from . import functional as F
from .autograd import Node, Parameter
from .ctensor import CTensor, RTensor
from .errors import NoVariationalLayersError, ShapeMismatchError
from .varlayers import LayerMode, VarConv2d, VariationalLayer, VarLinear
from ..models.config_models import ModelConfig, PenaltySpec

Value = Union[CTensor, RTensor]


class VariationalNetwork:
    """Sequência de camadas variacionais com ReLU (CReLU no caso complexo).

    A entrada chega sempre como (B, c, H, W); a rede densa achata os eixos
    finais. Os logits de saída são a parte real da última camada.
    """

    def __init__(self, arch: str, layers: Sequence[VariationalLayer], pool: int = 2):
        if not layers:
            raise NoVariationalLayersError("rede sem camadas variacionais")
        self.arch = arch
        self.layers: List[VariationalLayer] = list(layers)
        self.pool = pool
        self.is_complex = self.layers[0].is_complex

    def variational_layers(self) -> List[VariationalLayer]:
        return list(self.layers)

    def parameters(self) -> List[Parameter]:
        return [p for layer in self.layers for p in layer.parameters()]

    def named_parameters(self) -> List[Tuple[str, Parameter]]:
        return [(p.name, p) for p in self.parameters()]

    def set_mode(self, mode: LayerMode) -> None:
        for layer in self.layers:
            layer.set_mode(mode)

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.zero_grad()

    def penalty(self) -> Node:
        total: Optional[Node] = None
        for layer in self.layers:
            term = layer.penalty_node()
            total = term if total is None else F.add(total, term)
        return total

    def forward(self, x: Union[Node, Value], rng: Optional[np.random.Generator] = None,
                mode: Optional[LayerMode] = None) -> Node:
        h = F._node(x)
        if h.is_complex != self.is_complex:
            raise ShapeMismatchError(h.shape, (), "corpo da entrada diferente do corpo da rede")
        last = len(self.layers) - 1
        for i, layer in enumerate(self.layers):
            if isinstance(layer, VarLinear) and len(h.shape) > 2:
                h = F.flatten(h)
            h = layer.forward(h, rng=rng, mode=mode)
            if i == last:
                break
            h = F.relu(h)
            if isinstance(layer, VarConv2d):
                h = F.avg_pool2d(h, self.pool, self.pool)
        return F.real_part(h)


def _scaled(width: int, multiplier: float) -> int:
    return max(1, int(round(width * multiplier)))


def build_network(
    config: ModelConfig,
    penalty: PenaltySpec,
    input_shape: Tuple[int, int, int],
    n_classes: int,
    rng: np.random.Generator,
) -> VariationalNetwork:
    """Densa: in -> hidden*w -> n_classes. Convolucional: k5 20w -> pool -> k5 50w -> pool -> 500w -> n_classes."""
    channels, height, width = input_shape
    w = config.width
    if config.arch == "dense":
        n_in = channels * height * width
        hidden = _scaled(config.hidden, w)
        layers = [
            VarLinear(n_in, hidden, penalty, rng, name="dense1"),
            VarLinear(hidden, n_classes, penalty, rng, name="dense2"),
        ]
        return VariationalNetwork("dense", layers)

    c1, c2, fc = _scaled(20, w), _scaled(50, w), _scaled(500, w)
    h, wd = height, width
    for _ in range(2):
        h, wd = (h - 5 + 1) // 2, (wd - 5 + 1) // 2
    if h < 1 or wd < 1:
        raise ShapeMismatchError(input_shape, (1, 16, 16), "rede convolucional exige imagens >= 16x16")
    layers = [
        VarConv2d(channels, c1, 5, penalty, rng, name="conv1"),
        VarConv2d(c1, c2, 5, penalty, rng, name="conv2"),
        VarLinear(c2 * h * wd, fc, penalty, rng, name="dense1"),
        VarLinear(fc, n_classes, penalty, rng, name="dense2"),
    ]
    return VariationalNetwork("conv", layers)
