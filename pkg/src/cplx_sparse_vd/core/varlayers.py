"""Camadas variacionais (densa e convolucional, reais e complexas) com o truque
de reparametrização local e as cinco penalidades KL.

Parametrização de ruído aditivo: (mu, log sigma^2) são livres e alpha é derivado,
alpha = sigma^2 / |mu|^2. No RSCALE o parâmetro `log_sigma2` guarda log alpha
diretamente (variância do ruído multiplicativo real).
"""
from enum import Enum
from typing import List, Optional, Tuple

import numpy as np

from . import functional as F
from .autograd import Node, Parameter
from .ctensor import CTensor, RTensor
from .dist import dawson, ein
from .errors import DomainError, NonFinitePenaltyError, ShapeMismatchError
from ..models.config_models import PenaltyKind, PenaltySpec

LOG_ALPHA_EPS = 1e-12
LOG_SIGMA2_BOUNDS = (-20.0, 5.0)
SPARSIFY_INIT_LOG_ALPHA = -8.0


class LayerMode(str, Enum):
    DETERMINISTIC = "deterministic"
    STOCHASTIC = "stochastic"
    MASKED = "masked"


def _sigmoid(x: np.ndarray) -> np.ndarray:
    return np.exp(-np.logaddexp(0.0, -x))


def penalty_value(spec: PenaltySpec, log_alpha: np.ndarray) -> np.ndarray:
    """Penalidade por peso em função de log alpha; zero quando alpha -> infinito."""
    la = np.asarray(log_alpha, dtype=np.float64)
    kind = spec.kind
    if kind is PenaltyKind.CVD:
        # log(1/alpha) - Ei(-1/alpha) + gamma = Ein(1/alpha)
        return ein(np.exp(-la))
    if kind is PenaltyKind.CARD:
        return np.logaddexp(0.0, -la)
    if kind is PenaltyKind.RARD:
        return 0.5 * np.logaddexp(0.0, -la)
    # RVD e RSCALE: aproximação sigmoide + softplus
    return 0.5 * np.logaddexp(0.0, -la) + spec.k1 * _sigmoid(-(spec.k2 + spec.k3 * la))


def rvd_exact_derivative(log_alpha: np.ndarray) -> np.ndarray:
    """dK/dlog alpha = -(1/sqrt(2 alpha)) F(1/sqrt(2 alpha)), F = integral de Dawson."""
    y = np.exp(-0.5 * np.asarray(log_alpha, dtype=np.float64)) / np.sqrt(2.0)
    return -y * dawson(y)


def penalty_derivative(spec: PenaltySpec, log_alpha: np.ndarray, exact: Optional[bool] = None) -> np.ndarray:
    """Derivada em relação a log alpha usada no backward."""
    la = np.asarray(log_alpha, dtype=np.float64)
    exact = spec.exact_gradient if exact is None else exact
    kind = spec.kind
    if kind is PenaltyKind.CVD:
        return np.expm1(-np.exp(-la))
    if kind is PenaltyKind.CARD:
        return -_sigmoid(-la)
    if kind is PenaltyKind.RARD:
        return -0.5 * _sigmoid(-la)
    if exact:
        return rvd_exact_derivative(la)
    s = _sigmoid(-(spec.k2 + spec.k3 * la))
    return -0.5 * _sigmoid(-la) - spec.k1 * spec.k3 * s * (1.0 - s)


def kl_penalty(log_alpha: Node, spec: PenaltySpec) -> Node:
    """Soma da penalidade sobre os pesos, com a derivada registrada."""
    la = log_alpha.value.data
    if not np.all(np.isfinite(la)):
        raise NonFinitePenaltyError(f"log alpha não finito na penalidade {spec.kind.value}")
    per_weight = F.elementwise(
        log_alpha,
        lambda x: penalty_value(spec, x),
        lambda x: penalty_derivative(spec, x),
        f"kl_{spec.kind.value.lower()}",
    )
    return F.sum_all(per_weight)


class VariationalLayer:
    """Base das camadas variacionais: mu, log sigma^2 e bias (estimativa pontual)"""

    def __init__(
        self,
        weight_shape: Tuple[int, ...],
        n_out: int,
        fan_in: int,
        penalty: PenaltySpec,
        rng: np.random.Generator,
        name: str,
    ):
        self.penalty = penalty
        self.is_complex = penalty.kind.is_complex
        self.name = name
        if self.is_complex:
            std = np.sqrt(1.0 / (2.0 * fan_in))
            weight = CTensor(
                std * rng.standard_normal(weight_shape), std * rng.standard_normal(weight_shape)
            )
            bias = CTensor(np.zeros(n_out))
        else:
            weight = RTensor(np.sqrt(1.0 / fan_in) * rng.standard_normal(weight_shape))
            bias = RTensor(np.zeros(n_out))
        self.weight = Parameter(weight, f"{name}.weight")
        self.log_sigma2 = Parameter(
            RTensor(np.full(weight_shape, LOG_SIGMA2_BOUNDS[0])), f"{name}.log_sigma2"
        )
        self.bias = Parameter(bias, f"{name}.bias")
        self.mode = LayerMode.DETERMINISTIC
        self.mask: Optional[np.ndarray] = None

    # --- a ser especializado -------------------------------------------------
    def _linear(self, weight: Node, x: Node) -> Node:
        raise NotImplementedError

    def _bias_view(self) -> Node:
        return self.bias

    # -------------------------------------------------------------------------
    def parameters(self) -> List[Parameter]:
        return [self.weight, self.log_sigma2, self.bias]

    @property
    def weight_shape(self) -> Tuple[int, ...]:
        return self.weight.shape

    def log_alpha_node(self) -> Node:
        if self.penalty.kind is PenaltyKind.RSCALE:
            return self.log_sigma2
        return F.sub(self.log_sigma2, F.log(F.add(F.abs2(self.weight), LOG_ALPHA_EPS)))

    def log_alpha(self) -> RTensor:
        return self.log_alpha_node().value

    def penalty_node(self) -> Node:
        return kl_penalty(self.log_alpha_node(), self.penalty)

    def set_mode(self, mode: LayerMode) -> None:
        mode = LayerMode(mode)
        if mode is LayerMode.MASKED and self.mask is None:
            raise DomainError(f"camada '{self.name}' sem máscara para o modo masked")
        self.mode = mode

    def apply_mask(self, mask: np.ndarray) -> None:
        """Zera as entradas podadas de mu e as congela no otimizador."""
        mask = np.asarray(mask, dtype=bool)
        if mask.shape != self.weight_shape:
            raise ShapeMismatchError(mask.shape, self.weight_shape, "apply_mask")
        keep = mask.astype(np.float64)
        self.weight.assign(tuple(part * keep for part in self.weight.parts))
        self.weight.mask = mask
        self.mask = mask
        self.mode = LayerMode.MASKED

    def reset_log_sigma2(self, log_alpha: float = SPARSIFY_INIT_LOG_ALPHA) -> None:
        """Inicializa a entrada no sparsify com log alpha constante."""
        if self.penalty.kind is PenaltyKind.RSCALE:
            values = np.full(self.weight_shape, log_alpha)
        else:
            values = np.log(F.abs2(self.weight).value.data + LOG_ALPHA_EPS) + log_alpha
        self.log_sigma2.assign((np.clip(values, *LOG_SIGMA2_BOUNDS),))

    def clamp_log_sigma2(self) -> None:
        self.log_sigma2.assign((np.clip(self.log_sigma2.value.data, *LOG_SIGMA2_BOUNDS),))

    def forward(
        self,
        x: Node,
        rng: Optional[np.random.Generator] = None,
        mode: Optional[LayerMode] = None,
        mask: Optional[np.ndarray] = None,
    ) -> Node:
        x = F._node(x)
        if x.is_complex != self.is_complex:
            raise ShapeMismatchError(x.shape, self.weight_shape, f"{self.name}: corpo da entrada")
        mode = self.mode if mode is None else LayerMode(mode)
        if mode is LayerMode.STOCHASTIC:
            if rng is None:
                raise DomainError("modo estocástico exige um gerador de ruído")
            return self._forward_stochastic(x, rng)
        weight: Node = self.weight
        if mode is LayerMode.MASKED:
            weight = F.maybe_mask(weight, self.mask if mask is None else mask)
        return F.add(self._linear(weight, x), self._bias_view())

    def _forward_stochastic(self, x: Node, rng: np.random.Generator) -> Node:
        mean = F.add(self._linear(self.weight, x), self._bias_view())
        kind = self.penalty.kind
        if kind is PenaltyKind.RSCALE:
            return F.add(mean, self._rscale_noise(x, mean.shape, rng))
        variance = self._linear(F.exp(self.log_sigma2), F.abs2(x))
        if self.is_complex:
            # re e im iid com variância s^2 / 2 (relação nula, xi = 0)
            std = F.safe_sqrt(F.scale(variance, 0.5))
            eps_re = rng.standard_normal(mean.shape)
            eps_im = rng.standard_normal(mean.shape)
            noise = F.make_complex(F.mul(std, eps_re), F.mul(std, eps_im))
        else:
            noise = F.mul(F.safe_sqrt(variance), rng.standard_normal(mean.shape))
        return F.add(mean, noise)

    def _rscale_noise(self, x: Node, shape: Tuple[int, ...], rng: np.random.Generator) -> Node:
        """Ruído CN escalar com variância sum alpha|mu x|^2 e relação sum alpha (mu x)^2,
        amostrado pelo Cholesky 2x2 da covariância real de (re, im)."""
        alpha = F.exp(self.log_sigma2)
        P, Q = F.real_part(self.weight), F.imag_part(self.weight)
        u, v = F.real_part(x), F.imag_part(x)
        aPP = F.mul(alpha, F.abs2(P))
        aQQ = F.mul(alpha, F.abs2(Q))
        aPQ = F.mul(alpha, F.mul(P, Q))
        uu, vv, uv = F.abs2(u), F.abs2(v), F.mul(u, v)
        lin = self._linear
        # Re(mu x) = Pu - Qv ; Im(mu x) = Pv + Qu
        g_rr = F.sub(F.add(lin(aPP, uu), lin(aQQ, vv)), F.scale(lin(aPQ, uv), 2.0))
        g_ii = F.add(F.add(lin(aPP, vv), lin(aQQ, uu)), F.scale(lin(aPQ, uv), 2.0))
        g_ri = F.add(lin(F.sub(aPP, aQQ), uv), lin(aPQ, F.sub(uu, vv)))
        l11 = F.safe_sqrt(g_rr)
        l21 = F.safe_div(g_ri, l11)
        l22 = F.safe_sqrt(F.sub(g_ii, F.abs2(l21)))
        eps1 = rng.standard_normal(shape)
        eps2 = rng.standard_normal(shape)
        return F.make_complex(F.mul(l11, eps1), F.add(F.mul(l21, eps1), F.mul(l22, eps2)))

    def output_moments(self, x: CTensor) -> Tuple[CTensor, RTensor, CTensor]:
        """Média, variância e relação analíticas da saída estocástica (entrada fixa)."""
        node = F._node(x)
        mean = F.add(self._linear(self.weight, node), self._bias_view()).value
        if self.penalty.kind is PenaltyKind.RSCALE:
            alpha = np.exp(self.log_sigma2.value.data)
            w = self.weight.value.to_complex()
            z = node.value.to_complex()
            variance = self._linear_values(alpha * np.abs(w) ** 2, np.abs(z) ** 2)
            rel_re = self._linear_values(alpha * (w.real ** 2 - w.imag ** 2), z.real ** 2 - z.imag ** 2) - \
                self._linear_values(alpha * 2 * w.real * w.imag, 2 * z.real * z.imag)
            rel_im = self._linear_values(alpha * (w.real ** 2 - w.imag ** 2), 2 * z.real * z.imag) + \
                self._linear_values(alpha * 2 * w.real * w.imag, z.real ** 2 - z.imag ** 2)
            return mean, RTensor(variance), CTensor(rel_re, rel_im)
        sigma2 = np.exp(self.log_sigma2.value.data)
        parts = node.parts
        abs_x = parts[0] ** 2 + (parts[1] ** 2 if len(parts) == 2 else 0.0)
        variance = self._linear_values(sigma2, abs_x)
        return mean, RTensor(variance), CTensor(np.zeros_like(variance))

    def _linear_values(self, weight: np.ndarray, x: np.ndarray) -> np.ndarray:
        return self._linear(F._node(RTensor(weight)), F._node(RTensor(x))).value.data


class VarLinear(VariationalLayer):
    """Camada densa variacional: y = b + W x"""

    def __init__(self, in_features: int, out_features: int, penalty: PenaltySpec,
                 rng: np.random.Generator, name: str = "linear"):
        self.in_features = in_features
        self.out_features = out_features
        super().__init__((out_features, in_features), out_features, in_features, penalty, rng, name)

    def _linear(self, weight: Node, x: Node) -> Node:
        return F.matmul(weight, x)


class VarConv2d(VariationalLayer):
    """Convolução 'valid' variacional; cada posição recebe ruído independente"""

    def __init__(self, in_channels: int, out_channels: int, kernel_size: int, penalty: PenaltySpec,
                 rng: np.random.Generator, stride: int = 1, name: str = "conv"):
        self.in_channels = in_channels
        self.out_channels = out_channels
        self.kernel_size = kernel_size
        self.stride = stride
        shape = (out_channels, in_channels, kernel_size, kernel_size)
        fan_in = in_channels * kernel_size * kernel_size
        super().__init__(shape, out_channels, fan_in, penalty, rng, name)

    def _linear(self, weight: Node, x: Node) -> Node:
        return F.conv2d(weight, x, self.stride)

    def _bias_view(self) -> Node:
        return F.reshape(self.bias, (self.out_channels, 1, 1))
