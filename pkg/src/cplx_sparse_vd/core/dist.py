"""Gaussiana complexa escalar e funções especiais das penalidades KL.

Ei, Dawson e digamma são avaliadas em numpy (vetorizadas); onde a derivada
é conhecida em forma fechada ela é registrada junto da função.
"""
from typing import Union

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

from .errors import DegenerateDistributionError, DomainError

EULER_GAMMA = 0.57721566490153286

ArrayLike = Union[float, np.ndarray]

# ponto de troca série / fração contínua para Ei
_EI_SWITCH = 6.0
_SERIES_TERMS = 80
_CF_MAX_ITER = 500
_DAWSON_SWITCH = 6.0


class CGaussScalar(BaseModel):
    """CN(mu, sigma2, sigma2 * xi) escalar; xi = 0 é o caso circular"""

    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    mu: complex = Field(0j, description="Média complexa")
    sigma2: float = Field(..., description="Variância E|z - mu|^2")
    xi: complex = Field(0j, description="Relação normalizada, |xi| <= 1")

    @field_validator("mu", "xi", mode="before")
    @classmethod
    def _to_complex(cls, value):
        return complex(value)

    @field_validator("sigma2")
    @classmethod
    def _non_negative(cls, value: float) -> float:
        if value < 0:
            raise ValueError(f"sigma2 negativo: {value}")
        return value

    @model_validator(mode="after")
    def _relation_bound(self) -> "CGaussScalar":
        if abs(self.xi) > 1.0 + 1e-12:
            raise ValueError(f"|xi| deve ser <= 1, recebido {abs(self.xi)}")
        return self


def sample_cn(d: CGaussScalar, n: int, rng: np.random.Generator) -> np.ndarray:
    """n amostras de CN circular: re e im iid N(., sigma2/2)."""
    if d.xi != 0:
        raise DomainError("amostragem com xi != 0 não suportada")
    if d.sigma2 == 0:
        return np.full(n, d.mu, dtype=np.complex128)
    scale = np.sqrt(d.sigma2 / 2.0)
    re = d.mu.real + scale * rng.standard_normal(n)
    im = d.mu.imag + scale * rng.standard_normal(n)
    return re + 1j * im


def entropy_cn(d: CGaussScalar) -> float:
    """log(pi e sigma2) + 1/2 log(1 - |xi|^2)"""
    rho = 1.0 - abs(d.xi) ** 2
    if d.sigma2 <= 0 or rho <= 0:
        raise DegenerateDistributionError(
            f"entropia indefinida para sigma2={d.sigma2}, |xi|={abs(d.xi)}"
        )
    return float(np.log(np.pi * np.e * d.sigma2) + 0.5 * np.log(rho))


def _ein_series(z: np.ndarray) -> np.ndarray:
    """Ein(z) = sum_{k>=1} (-1)^{k+1} z^k / (k k!), função inteira."""
    total = np.zeros_like(z)
    term = np.ones_like(z)
    for k in range(1, _SERIES_TERMS + 1):
        term = term * (-z) / k
        total = total - term / k
    return total


def _e1_continued_fraction(t: np.ndarray) -> np.ndarray:
    """E1(t) para t > 1 por Lentz modificado."""
    tiny = 1e-300
    b = t + 1.0
    c = np.full_like(t, 1.0 / tiny)
    d = 1.0 / b
    h = d.copy()
    active = np.ones(t.shape, dtype=bool)
    for i in range(1, _CF_MAX_ITER + 1):
        an = -float(i * i)
        b = b + 2.0
        d = 1.0 / (an * d + b)
        c = b + an / c
        delta = c * d
        h = np.where(active, h * delta, h)
        active &= np.abs(delta - 1.0) > 1e-16
        if not active.any():
            break
    return h * np.exp(-t)


def ein(z: ArrayLike) -> np.ndarray:
    """Ein(z) = int_0^z (1 - e^-t)/t dt = E1(z) + log z + gamma, z >= 0."""
    z = np.asarray(z, dtype=np.float64)
    out = np.empty_like(z)
    small = z <= _EI_SWITCH
    out[small] = _ein_series(z[small])
    big = ~small
    if big.any():
        t = z[big]
        out[big] = _e1_continued_fraction(t) + np.log(t) + EULER_GAMMA
    return out


def ei(x: ArrayLike) -> np.ndarray:
    """Integral exponencial Ei(x) para x < 0."""
    x = np.asarray(x, dtype=np.float64)
    if np.any(x >= 0) or np.any(np.isnan(x)):
        raise DomainError("ei definido apenas para x < 0")
    t = -x
    out = np.empty_like(x)
    small = t <= _EI_SWITCH
    # Ei(-t) = gamma + log t - Ein(t)
    out[small] = EULER_GAMMA + np.log(t[small]) - _ein_series(t[small])
    big = ~small
    if big.any():
        out[big] = -_e1_continued_fraction(t[big])
    return out


def ei_derivative(x: ArrayLike) -> np.ndarray:
    """d/dx Ei(x) = e^x / x (exata)."""
    x = np.asarray(x, dtype=np.float64)
    if np.any(x >= 0):
        raise DomainError("ei definido apenas para x < 0")
    return np.exp(x) / x


def dawson(x: ArrayLike) -> np.ndarray:
    """F(x) = e^{-x^2} int_0^x e^{u^2} du para x >= 0."""
    x = np.asarray(x, dtype=np.float64)
    if np.any(x < 0):
        raise DomainError("dawson implementado apenas para x >= 0")
    out = np.empty_like(x)
    small = x <= _DAWSON_SWITCH
    xs = x[small]
    x2 = xs * xs
    # série de termos positivos: sum x^{2k+1} / (k! (2k+1))
    term = xs.copy()
    total = xs.copy()
    for k in range(1, 200):
        term = term * x2 / k
        total = total + term / (2 * k + 1)
    out[small] = np.exp(-x2) * total
    big = ~small
    if big.any():
        xb = x[big]
        inv = 1.0 / (2.0 * xb * xb)
        # 1/(2x) sum (2k-1)!! / (2x^2)^k
        term = np.ones_like(xb)
        total = np.ones_like(xb)
        for k in range(1, 30):
            term = term * (2 * k - 1) * inv
            total = total + term
        out[big] = total / (2.0 * xb)
    return out


def digamma(x: ArrayLike) -> np.ndarray:
    """psi(x) por recorrência psi(z+1) = psi(z) + 1/z e série assintótica."""
    x = np.asarray(x, dtype=np.float64)
    if np.any(x <= 0):
        raise DomainError("digamma implementado apenas para x > 0")
    z = x.copy()
    shift = np.zeros_like(z)
    while True:
        low = z < 10.0
        if not low.any():
            break
        shift[low] -= 1.0 / z[low]
        z[low] += 1.0
    inv2 = 1.0 / (z * z)
    series = inv2 * (
        1.0 / 12
        - inv2 * (1.0 / 120 - inv2 * (1.0 / 252 - inv2 * (1.0 / 240 - inv2 * (1.0 / 132))))
    )
    return shift + np.log(z) - 0.5 / z - series


def log_moment_cn(theta: Union[complex, np.ndarray]) -> np.ndarray:
    """E_{z ~ CN(0,1,0)} log|theta + z|^2 = log|theta|^2 - Ei(-|theta|^2); -gamma em 0."""
    s = np.abs(np.asarray(theta, dtype=np.complex128)) ** 2
    # log s - Ei(-s) = Ein(s) - gamma, contínua em s = 0
    return ein(s) - EULER_GAMMA
