"""Tensores complexos armazenados como pares de arrays reais (C ~ R^2).

Toda a aritmética complexa é "cabeada" sobre as partes real e imaginária:
para W = P + jQ e x = u + jv temos Wx = (Pu - Qv) + j(Pv + Qu).
"""
from functools import lru_cache
from typing import Literal, Tuple, Union

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import DomainError, ShapeMismatchError

Scalar = Union[int, float, complex]
DftNorm = Literal["backward", "ortho", "forward"]


class RTensor:
    """Tensor real (variâncias, |x|^2, máscaras como floats)"""

    __slots__ = ("data",)

    def __init__(self, data):
        self.data = np.asarray(data, dtype=np.float64)

    @property
    def shape(self) -> Tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def __repr__(self) -> str:
        return f"RTensor(shape={self.shape})"


class CTensor:
    """Tensor complexo com `re` e `im` de mesmo formato"""

    __slots__ = ("re", "im")

    def __init__(self, re, im=None):
        re = np.asarray(re, dtype=np.float64)
        im = np.zeros_like(re) if im is None else np.asarray(im, dtype=np.float64)
        if re.shape != im.shape:
            raise ShapeMismatchError(re.shape, im.shape, "CTensor")
        self.re = re
        self.im = im

    @classmethod
    def from_complex(cls, z) -> "CTensor":
        z = np.asarray(z, dtype=np.complex128)
        return cls(z.real.copy(), z.imag.copy())

    def to_complex(self) -> np.ndarray:
        return self.re + 1j * self.im

    @property
    def shape(self) -> Tuple[int, ...]:
        return self.re.shape

    @property
    def ndim(self) -> int:
        return self.re.ndim

    def __repr__(self) -> str:
        return f"CTensor(shape={self.shape})"


def as_ctensor(value: Union[CTensor, Scalar, np.ndarray]) -> CTensor:
    if isinstance(value, CTensor):
        return value
    return CTensor.from_complex(value)


def broadcast_shape(left: Tuple[int, ...], right: Tuple[int, ...], op: str = "") -> Tuple[int, ...]:
    """Broadcast restrito: um dos operandos precisa ter o formato do resultado."""
    try:
        out = np.broadcast_shapes(left, right)
    except ValueError:
        raise ShapeMismatchError(left, right, op) from None
    if out != tuple(left) and out != tuple(right):
        raise ShapeMismatchError(left, right, op)
    return out


def cadd(a, b) -> CTensor:
    a, b = as_ctensor(a), as_ctensor(b)
    broadcast_shape(a.shape, b.shape, "cadd")
    return CTensor(a.re + b.re, a.im + b.im)


def csub(a, b) -> CTensor:
    a, b = as_ctensor(a), as_ctensor(b)
    broadcast_shape(a.shape, b.shape, "csub")
    return CTensor(a.re - b.re, a.im - b.im)


def cmul(a, b) -> CTensor:
    a, b = as_ctensor(a), as_ctensor(b)
    broadcast_shape(a.shape, b.shape, "cmul")
    return CTensor(a.re * b.re - a.im * b.im, a.re * b.im + a.im * b.re)


def conj(a) -> CTensor:
    a = as_ctensor(a)
    return CTensor(a.re, -a.im)


def abs2(a) -> RTensor:
    a = as_ctensor(a)
    return RTensor(a.re * a.re + a.im * a.im)


def cmatmul(W: CTensor, x: CTensor) -> CTensor:
    """F(u, v) = (Pu - Qv, Pv + Qu), aplicado sobre os eixos iniciais de `x`."""
    W, x = as_ctensor(W), as_ctensor(x)
    if W.ndim != 2 or x.ndim < 1 or x.shape[-1] != W.shape[1]:
        raise ShapeMismatchError(W.shape, x.shape, "cmatmul")
    P, Q = W.re, W.im
    return CTensor(x.re @ P.T - x.im @ Q.T, x.im @ P.T + x.re @ Q.T)


def crelu(x: CTensor) -> CTensor:
    return CTensor(np.maximum(x.re, 0.0), np.maximum(x.im, 0.0))


# kernels reais (im2col) compartilhados com o autograd

def _as_batch(x: np.ndarray) -> Tuple[np.ndarray, bool]:
    if x.ndim == 3:
        return x[None], True
    if x.ndim == 4:
        return x, False
    raise ShapeMismatchError(x.shape, ("B?", "C", "H", "W"), "conv2d")


def conv_output_size(size: int, k: int, stride: int) -> int:
    return (size - k) // stride + 1


def im2col(x: np.ndarray, k: int, stride: int) -> np.ndarray:
    """(B, c, H, W) -> (B, Ho, Wo, c*k*k)"""
    windows = sliding_window_view(x, (k, k), axis=(2, 3))[:, :, ::stride, ::stride]
    B, c, Ho, Wo = windows.shape[:4]
    return windows.transpose(0, 2, 3, 1, 4, 5).reshape(B, Ho, Wo, c * k * k)


def col2im(cols: np.ndarray, x_shape: Tuple[int, ...], k: int, stride: int) -> np.ndarray:
    """Adjunto de `im2col`: soma as janelas de volta na imagem."""
    B, c, H, W = x_shape
    Ho, Wo = cols.shape[1], cols.shape[2]
    patches = cols.reshape(B, Ho, Wo, c, k, k)
    out = np.zeros(x_shape, dtype=np.float64)
    for i in range(k):
        for j in range(k):
            out[:, :, i:i + stride * Ho:stride, j:j + stride * Wo:stride] += (
                patches[:, :, :, :, i, j].transpose(0, 3, 1, 2)
            )
    return out


def _check_conv(kernel_shape: Tuple[int, ...], x_shape: Tuple[int, ...], stride: int) -> None:
    if stride < 1:
        raise DomainError(f"stride deve ser >= 1, recebido {stride}")
    if len(kernel_shape) != 4 or kernel_shape[2] != kernel_shape[3]:
        raise ShapeMismatchError(kernel_shape, ("O", "C", "k", "k"), "conv2d")
    if kernel_shape[1] != x_shape[1]:
        raise ShapeMismatchError(kernel_shape, x_shape, "conv2d (canais)")
    k = kernel_shape[2]
    if k > x_shape[2] or k > x_shape[3]:
        raise ShapeMismatchError(kernel_shape, x_shape, "conv2d (kernel maior que a entrada)")


def conv2d_real(kernel: np.ndarray, x: np.ndarray, stride: int = 1) -> np.ndarray:
    """Convolução 'valid' real: kernel (o, c, k, k), x (B, c, H, W) -> (B, o, Ho, Wo)"""
    _check_conv(kernel.shape, x.shape, stride)
    k = kernel.shape[2]
    cols = im2col(x, k, stride)
    out = cols @ kernel.reshape(kernel.shape[0], -1).T
    return out.transpose(0, 3, 1, 2)


def conv2d_real_grads(
    grad: np.ndarray, kernel: np.ndarray, x: np.ndarray, stride: int
) -> Tuple[np.ndarray, np.ndarray]:
    """Gradientes de `conv2d_real` em relação ao kernel e à entrada."""
    o, k = kernel.shape[0], kernel.shape[2]
    cols = im2col(x, k, stride)
    g = grad.transpose(0, 2, 3, 1)  # (B, Ho, Wo, o)
    d_kernel = np.einsum("bhwo,bhwp->op", g, cols).reshape(kernel.shape)
    d_cols = g @ kernel.reshape(o, -1)
    return d_kernel, col2im(d_cols, x.shape, k, stride)


def cconv2d(kernel: CTensor, x: CTensor, stride: int = 1) -> CTensor:
    """Convolução complexa 'valid'; `x` em (c, H, W) ou (B, c, H, W)."""
    xr, single = _as_batch(x.re)
    xi, _ = _as_batch(x.im)
    P, Q = kernel.re, kernel.im
    re = conv2d_real(P, xr, stride) - conv2d_real(Q, xi, stride)
    im = conv2d_real(P, xi, stride) + conv2d_real(Q, xr, stride)
    if single:
        re, im = re[0], im[0]
    return CTensor(re, im)


def pad2d(x: Union[CTensor, RTensor], pad: int):
    """Zero-padding explícito nos dois últimos eixos."""
    if pad < 0:
        raise DomainError(f"padding negativo: {pad}")
    width = [(0, 0)] * (x.ndim - 2) + [(pad, pad), (pad, pad)]
    if isinstance(x, CTensor):
        return CTensor(np.pad(x.re, width), np.pad(x.im, width))
    return RTensor(np.pad(x.data, width))


def _check_pool(shape: Tuple[int, ...], k: int, s: int) -> None:
    if k < 1 or s < 1:
        raise DomainError(f"janela e passo devem ser >= 1 (k={k}, s={s})")
    if len(shape) < 2 or k > shape[-2] or k > shape[-1]:
        raise ShapeMismatchError((k, k), shape, "avg_pool2d (janela maior que a entrada)")


def avg_pool2d_real(x: np.ndarray, k: int, s: int) -> np.ndarray:
    _check_pool(x.shape, k, s)
    windows = sliding_window_view(x, (k, k), axis=(-2, -1))[..., ::s, ::s, :, :]
    return windows.mean(axis=(-2, -1))


def avg_pool2d_real_grad(grad: np.ndarray, x_shape: Tuple[int, ...], k: int, s: int) -> np.ndarray:
    Ho, Wo = grad.shape[-2], grad.shape[-1]
    out = np.zeros(x_shape, dtype=np.float64)
    share = grad / (k * k)
    for i in range(k):
        for j in range(k):
            out[..., i:i + s * Ho:s, j:j + s * Wo:s] += share
    return out


def avg_pool2d(x: CTensor, k: int, s: int) -> CTensor:
    return CTensor(avg_pool2d_real(x.re, k, s), avg_pool2d_real(x.im, k, s))


@lru_cache(maxsize=None)
def dft_twiddles(n: int) -> Tuple[np.ndarray, np.ndarray]:
    """Tabelas cos/sin de exp(-2πi kn/N); simétricas em (k, n)."""
    idx = np.arange(n)
    angle = 2.0 * np.pi * np.outer(idx, idx) / n
    cos, sin = np.cos(angle), np.sin(angle)
    cos.setflags(write=False)
    sin.setflags(write=False)
    return cos, sin


def dft_scale(h: int, w: int, norm: DftNorm) -> float:
    if norm == "backward":
        return 1.0
    if norm == "ortho":
        return 1.0 / np.sqrt(h * w)
    if norm == "forward":
        return 1.0 / (h * w)
    raise DomainError(f"normalização de DFT desconhecida: {norm!r}")


def dft2d_centered(x: Union[RTensor, np.ndarray], norm: DftNorm = "backward") -> CTensor:
    """DFT 2D por soma direta nos dois últimos eixos, com a frequência (0, 0)
    deslocada para (H//2, W//2)."""
    data = x.data if isinstance(x, RTensor) else np.asarray(x, dtype=np.float64)
    H, W = data.shape[-2:]
    ch, sh = dft_twiddles(H)
    cw, sw = dft_twiddles(W)
    # (C - jS) x (C - jS) com x real
    re = ch @ data @ cw - sh @ data @ sw
    im = -(ch @ data @ sw + sh @ data @ cw)
    scale = dft_scale(H, W, norm)
    shift = (H // 2, W // 2)
    re = np.roll(re * scale, shift, axis=(-2, -1))
    im = np.roll(im * scale, shift, axis=(-2, -1))
    return CTensor(re, im)
