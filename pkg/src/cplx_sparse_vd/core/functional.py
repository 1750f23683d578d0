"""Operações diferenciáveis sobre `Node`.

Cada operação calcula o valor com os kernels de `ctensor` e registra a regra
de backward sobre os pares (re, im). Operandos complexos e reais podem ser
misturados em soma e produto; o real entra como parte real.
"""
from typing import Callable, Optional, Sequence, Tuple, Union

import numpy as np

from . import ctensor as ct
from . import dist
from .autograd import Node, Parts, constant
from .ctensor import CTensor, RTensor
from .errors import ShapeMismatchError

Operand = Union[Node, CTensor, RTensor, np.ndarray, float]


def _node(x: Operand) -> Node:
    return x if isinstance(x, Node) else constant(x)


def _unbroadcast(grad: np.ndarray, shape: Tuple[int, ...]) -> np.ndarray:
    if grad.shape == shape:
        return grad
    lead = grad.ndim - len(shape)
    if lead:
        grad = grad.sum(axis=tuple(range(lead)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


def _cparts(node: Node) -> Tuple[np.ndarray, np.ndarray]:
    if node.is_complex:
        return node.value.re, node.value.im
    return node.value.data, np.zeros_like(node.value.data)


def add(a: Operand, b: Operand) -> Node:
    a, b = _node(a), _node(b)
    ct.broadcast_shape(a.shape, b.shape, "add")
    if not a.is_complex and not b.is_complex:
        out = RTensor(a.value.data + b.value.data)
    else:
        ar, ai = _cparts(a)
        br, bi = _cparts(b)
        out = CTensor(ar + br, ai + bi)

    def backward(g: Parts):
        return tuple(
            tuple(_unbroadcast(gk, n.shape) for gk in g[: len(n.parts)]) for n in (a, b)
        )

    return Node(out, (a, b), backward, "add")


def neg(a: Operand) -> Node:
    a = _node(a)
    out = CTensor(-a.value.re, -a.value.im) if a.is_complex else RTensor(-a.value.data)
    return Node(out, (a,), lambda g: (tuple(-gk for gk in g),), "neg")


def sub(a: Operand, b: Operand) -> Node:
    return add(a, neg(b))


def mul(a: Operand, b: Operand) -> Node:
    """Produto elemento a elemento (R*R, C*C, C*R)."""
    a, b = _node(a), _node(b)
    ct.broadcast_shape(a.shape, b.shape, "mul")
    if not a.is_complex and not b.is_complex:
        x, y = a.value.data, b.value.data

        def backward_real(g: Parts):
            return ((_unbroadcast(g[0] * y, a.shape),), (_unbroadcast(g[0] * x, b.shape),))

        return Node(RTensor(x * y), (a, b), backward_real, "mul")

    ar, ai = _cparts(a)
    br, bi = _cparts(b)
    out = CTensor(ar * br - ai * bi, ar * bi + ai * br)

    def backward(g: Parts):
        gr, gi = g
        # grad_a = G * conj(b), grad_b = G * conj(a)
        ga = (_unbroadcast(gr * br + gi * bi, a.shape), _unbroadcast(gi * br - gr * bi, a.shape))
        gb = (_unbroadcast(gr * ar + gi * ai, b.shape), _unbroadcast(gi * ar - gr * ai, b.shape))
        return (ga[: len(a.parts)], gb[: len(b.parts)])

    return Node(out, (a, b), backward, "mul")


def scale(a: Operand, factor: float) -> Node:
    a = _node(a)
    out = (
        CTensor(a.value.re * factor, a.value.im * factor)
        if a.is_complex
        else RTensor(a.value.data * factor)
    )
    return Node(out, (a,), lambda g: (tuple(gk * factor for gk in g),), "scale")


def conj(a: Operand) -> Node:
    a = _node(a)
    return Node(ct.conj(a.value), (a,), lambda g: ((g[0], -g[1]),), "conj")


def real_part(a: Operand) -> Node:
    a = _node(a)
    if not a.is_complex:
        return a
    return Node(RTensor(a.value.re), (a,), lambda g: ((g[0], np.zeros_like(g[0])),), "real")


def imag_part(a: Operand) -> Node:
    a = _node(a)
    if not a.is_complex:
        return constant(np.zeros_like(a.value.data))
    return Node(RTensor(a.value.im), (a,), lambda g: ((np.zeros_like(g[0]), g[0]),), "imag")


def make_complex(re: Operand, im: Operand) -> Node:
    re, im = _node(re), _node(im)
    if re.is_complex or im.is_complex or re.shape != im.shape:
        raise ShapeMismatchError(re.shape, im.shape, "make_complex")
    return Node(
        CTensor(re.value.data, im.value.data), (re, im), lambda g: ((g[0],), (g[1],)), "complex"
    )


def abs2(a: Operand) -> Node:
    """|z|^2 (ou x^2 para reais)."""
    a = _node(a)
    if a.is_complex:
        re, im = a.value.re, a.value.im
        return Node(
            RTensor(re * re + im * im), (a,), lambda g: ((2.0 * g[0] * re, 2.0 * g[0] * im),), "abs2"
        )
    x = a.value.data
    return Node(RTensor(x * x), (a,), lambda g: ((2.0 * g[0] * x,),), "square")


def elementwise(
    a: Operand,
    fn: Callable[[np.ndarray], np.ndarray],
    deriv: Callable[[np.ndarray], np.ndarray],
    op: str,
) -> Node:
    """Função real elemento a elemento com derivada registrada (sem diferenças numéricas)."""
    a = _node(a)
    if a.is_complex:
        raise ShapeMismatchError(a.shape, (), f"{op} exige argumento real")
    x = a.value.data
    return Node(RTensor(fn(x)), (a,), lambda g: ((g[0] * deriv(x),),), op)


def exp(a: Operand) -> Node:
    return elementwise(a, np.exp, np.exp, "exp")


def log(a: Operand) -> Node:
    return elementwise(a, np.log, lambda x: 1.0 / x, "log")


def ei(a: Operand) -> Node:
    """Integral exponencial Ei(x), x < 0; backward e^x / x."""
    return elementwise(a, dist.ei, dist.ei_derivative, "ei")


def safe_sqrt(a: Operand) -> Node:
    """sqrt com derivada nula em 0 (ruído nulo continua determinístico)."""

    def deriv(x: np.ndarray) -> np.ndarray:
        root = np.sqrt(np.maximum(x, 0.0))
        return np.divide(0.5, root, out=np.zeros_like(root), where=root > 0)

    return elementwise(a, lambda x: np.sqrt(np.maximum(x, 0.0)), deriv, "sqrt")


def safe_div(a: Operand, b: Operand) -> Node:
    """a / b com resultado 0 onde b == 0 (reais)."""
    a, b = _node(a), _node(b)
    x, y = a.value.data, b.value.data
    nz = y != 0
    inv = np.divide(1.0, y, out=np.zeros_like(y), where=nz)
    out = x * inv

    def backward(g: Parts):
        return ((_unbroadcast(g[0] * inv, a.shape),), (_unbroadcast(-g[0] * out * inv, b.shape),))

    return Node(RTensor(out), (a, b), backward, "div")


def softplus(a: Operand) -> Node:
    return elementwise(a, lambda x: np.logaddexp(0.0, x), sigmoid_np, "softplus")


def sigmoid_np(x: np.ndarray) -> np.ndarray:
    return np.exp(-np.logaddexp(0.0, -x))


def relu(a: Operand) -> Node:
    """ReLU real ou CReLU (aplicada a re e im separadamente)."""
    a = _node(a)
    if a.is_complex:
        mr, mi = a.value.re > 0, a.value.im > 0
        return Node(ct.crelu(a.value), (a,), lambda g: ((g[0] * mr, g[1] * mi),), "crelu")
    m = a.value.data > 0
    return Node(RTensor(np.maximum(a.value.data, 0.0)), (a,), lambda g: ((g[0] * m,),), "relu")


def sum_all(a: Operand) -> Node:
    a = _node(a)
    shape = a.shape
    out = (
        CTensor(a.value.re.sum(), a.value.im.sum()) if a.is_complex else RTensor(a.value.data.sum())
    )
    return Node(out, (a,), lambda g: (tuple(np.broadcast_to(gk, shape) for gk in g),), "sum")


def mean_all(a: Operand) -> Node:
    a = _node(a)
    return scale(sum_all(a), 1.0 / max(int(np.prod(a.shape)), 1))


def reshape(a: Operand, shape: Sequence[int]) -> Node:
    a = _node(a)
    src = a.shape
    if a.is_complex:
        out = CTensor(a.value.re.reshape(shape), a.value.im.reshape(shape))
    else:
        out = RTensor(a.value.data.reshape(shape))
    return Node(out, (a,), lambda g: (tuple(gk.reshape(src) for gk in g),), "reshape")


def flatten(a: Operand) -> Node:
    """Achata tudo menos o eixo do lote."""
    a = _node(a)
    return reshape(a, (a.shape[0], -1))


def matmul(W: Operand, x: Operand) -> Node:
    """y = W x sobre o último eixo de `x` (R-R ou C-C, cabeamento de Eq. linear)."""
    W, x = _node(W), _node(x)
    if W.is_complex != x.is_complex:
        raise ShapeMismatchError(W.shape, x.shape, "matmul exige operandos do mesmo corpo")
    if len(W.shape) != 2 or x.shape[-1] != W.shape[1]:
        raise ShapeMismatchError(W.shape, x.shape, "matmul")

    def _grad_w(g: np.ndarray, v: np.ndarray) -> np.ndarray:
        return g.reshape(-1, g.shape[-1]).T @ v.reshape(-1, v.shape[-1])

    if not W.is_complex:
        P, u = W.value.data, x.value.data

        def backward_real(g: Parts):
            return ((_grad_w(g[0], u),), (g[0] @ P,))

        return Node(RTensor(u @ P.T), (W, x), backward_real, "matmul")

    P, Q = W.value.re, W.value.im
    u, v = x.value.re, x.value.im

    def backward(g: Parts):
        gr, gi = g
        dP = _grad_w(gr, u) + _grad_w(gi, v)
        dQ = _grad_w(gi, u) - _grad_w(gr, v)
        du = gr @ P + gi @ Q
        dv = gi @ P - gr @ Q
        return ((dP, dQ), (du, dv))

    return Node(ct.cmatmul(W.value, x.value), (W, x), backward, "cmatmul")


def conv2d(kernel: Operand, x: Operand, stride: int = 1) -> Node:
    """Convolução 'valid' em lote (B, c, H, W), R-R ou C-C."""
    kernel, x = _node(kernel), _node(x)
    if kernel.is_complex != x.is_complex:
        raise ShapeMismatchError(kernel.shape, x.shape, "conv2d exige operandos do mesmo corpo")
    if len(x.shape) != 4:
        raise ShapeMismatchError(x.shape, ("B", "C", "H", "W"), "conv2d")

    if not kernel.is_complex:
        K, u = kernel.value.data, x.value.data

        def backward_real(g: Parts):
            dK, du = ct.conv2d_real_grads(g[0], K, u, stride)
            return ((dK,), (du,))

        return Node(RTensor(ct.conv2d_real(K, u, stride)), (kernel, x), backward_real, "conv2d")

    P, Q = kernel.value.re, kernel.value.im
    u, v = x.value.re, x.value.im

    def backward(g: Parts):
        gr, gi = g
        # re = P*u - Q*v ; im = P*v + Q*u
        dP_r, du_r = ct.conv2d_real_grads(gr, P, u, stride)
        dQ_r, dv_r = ct.conv2d_real_grads(gr, Q, v, stride)
        dP_i, dv_i = ct.conv2d_real_grads(gi, P, v, stride)
        dQ_i, du_i = ct.conv2d_real_grads(gi, Q, u, stride)
        return ((dP_r + dP_i, dQ_i - dQ_r), (du_r + du_i, dv_i - dv_r))

    return Node(ct.cconv2d(kernel.value, x.value, stride), (kernel, x), backward, "cconv2d")


def avg_pool2d(a: Operand, k: int, s: int) -> Node:
    a = _node(a)
    shape = a.shape
    out = (
        ct.avg_pool2d(a.value, k, s)
        if a.is_complex
        else RTensor(ct.avg_pool2d_real(a.value.data, k, s))
    )
    return Node(
        out,
        (a,),
        lambda g: (tuple(ct.avg_pool2d_real_grad(gk, shape, k, s) for gk in g),),
        "avg_pool2d",
    )


def dft2d_centered(a: Operand, norm: ct.DftNorm = "backward") -> Node:
    """DFT 2D centrada de entrada real; linear, então o backward é o adjunto."""
    a = _node(a)
    if a.is_complex:
        raise ShapeMismatchError(a.shape, (), "dft2d_centered exige entrada real")
    H, W = a.shape[-2:]
    ch, sh = ct.dft_twiddles(H)
    cw, sw = ct.dft_twiddles(W)
    factor = ct.dft_scale(H, W, norm)

    def backward(g: Parts):
        gr = np.roll(g[0], (-(H // 2), -(W // 2)), axis=(-2, -1)) * factor
        gi = np.roll(g[1], (-(H // 2), -(W // 2)), axis=(-2, -1)) * factor
        dx = ch @ gr @ cw - sh @ gr @ sw - ch @ gi @ sw - sh @ gi @ cw
        return ((dx,),)

    return Node(ct.dft2d_centered(a.value, norm), (a,), backward, "dft2d")


def cross_entropy(logits: Operand, labels: np.ndarray) -> Node:
    """Entropia cruzada softmax média sobre o lote; logits reais (B, K)."""
    logits = _node(logits)
    if logits.is_complex:
        raise ShapeMismatchError(logits.shape, (), "cross_entropy exige logits reais")
    z = logits.value.data
    labels = np.asarray(labels, dtype=np.int64)
    if z.ndim != 2 or labels.shape != (z.shape[0],):
        raise ShapeMismatchError(z.shape, labels.shape, "cross_entropy")
    shifted = z - z.max(axis=1, keepdims=True)
    log_norm = np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    log_probs = shifted - log_norm
    B = z.shape[0]
    loss = -log_probs[np.arange(B), labels].mean()

    def backward(g: Parts):
        probs = np.exp(log_probs)
        probs[np.arange(B), labels] -= 1.0
        return ((g[0] * probs / B,),)

    return Node(RTensor(loss), (logits,), backward, "cross_entropy")


def pad2d(a: Operand, pad: int) -> Node:
    a = _node(a)
    out = ct.pad2d(a.value, pad)
    H, W = a.shape[-2:]

    def backward(g: Parts):
        return (tuple(gk[..., pad:pad + H, pad:pad + W] for gk in g),)

    return Node(out, (a,), backward, "pad2d")


def maybe_mask(a: Node, mask: Optional[np.ndarray]) -> Node:
    """Multiplica por uma máscara constante (0/1) quando houver."""
    if mask is None:
        return a
    return mul(a, constant(mask.astype(np.float64)))
