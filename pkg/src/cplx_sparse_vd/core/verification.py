"""Verificações numéricas: penalidades KL contra Monte Carlo, truque de
reparametrização local contra amostragem de pesos e o gradcheck completo."""
from typing import Callable, List, Optional

import numpy as np

from . import functional as F
from .autograd import Node, Parameter, gradcheck
from .ctensor import CTensor, RTensor
from .errors import DomainError
from .varlayers import LayerMode, VarConv2d, VariationalLayer, VarLinear, penalty_derivative, penalty_value
from .varlayers import rvd_exact_derivative
from ..models.config_models import PenaltyKind, PenaltySpec
from ..models.report_models import (
    GradcheckRow,
    KLGridRow,
    KLVerificationReport,
    LRTCheck,
    LRTVerificationReport,
)

CVD_FD_STEP = 1e-5


def verify_kl(grid: int = 1024, samples: int = 100_000, seed: int = 0,
              low: float = -12.0, high: float = 12.0) -> KLVerificationReport:
    """Penalidades RVD e CVD contra estimativas MC das divergências com prior log-uniforme.

    As mesmas amostras de ruído são usadas em todo o grid, então a diferença
    progressiva da estimativa MC tem variância baixa.
    """
    if grid < 2:
        raise DomainError(f"grid deve ter pelo menos 2 pontos: {grid}")
    if samples < 10_000:
        raise DomainError(f"samples deve ser >= 1e4: {samples}")
    rng = np.random.default_rng(seed)
    eps_real = rng.standard_normal(samples)
    eps_cplx = (rng.standard_normal(samples) + 1j * rng.standard_normal(samples)) / np.sqrt(2.0)
    log_alpha = np.linspace(low, high, grid)
    step = log_alpha[1] - log_alpha[0]
    rvd = PenaltySpec(kind=PenaltyKind.RVD)
    cvd = PenaltySpec(kind=PenaltyKind.CVD)
    sqrt_n = np.sqrt(samples)

    def real_terms(la: float) -> np.ndarray:
        return np.log(np.abs(1.0 + np.exp(0.5 * la) * eps_real))

    rows: List[KLGridRow] = []
    within = 0
    current = real_terms(log_alpha[0])
    for la in log_alpha:
        following = real_terms(la + step)
        rvd_mc = -0.5 * la + current.mean()
        diff = (following - current) / step
        mc_derivative = diff.mean() - 0.5
        mc_derivative_se = diff.std() / sqrt_n
        exact = float(rvd_exact_derivative(np.array([la]))[0])
        approx = float(penalty_derivative(rvd, np.array([la]), exact=False)[0])
        midpoint = float(rvd_exact_derivative(np.array([la + 0.5 * step]))[0])
        within += abs(midpoint - mc_derivative) <= 3.0 * mc_derivative_se

        cplx_terms = np.log(np.abs(1.0 + np.exp(0.5 * la) * eps_cplx) ** 2)
        cvd_mc = -la + cplx_terms.mean()
        cvd_penalty = float(penalty_value(cvd, np.array([la]))[0])
        cvd_exact = float(np.expm1(-np.exp(-la)))
        fd = float(
            (penalty_value(cvd, np.array([la + CVD_FD_STEP]))[0]
             - penalty_value(cvd, np.array([la - CVD_FD_STEP]))[0]) / (2.0 * CVD_FD_STEP)
        )
        rows.append(KLGridRow(
            log_alpha=float(la),
            rvd_mc=float(rvd_mc),
            rvd_mc_se=float(current.std() / sqrt_n),
            rvd_penalty=float(penalty_value(rvd, np.array([la]))[0]),
            rvd_exact_derivative=exact,
            rvd_approx_derivative=approx,
            rvd_mc_derivative=float(mc_derivative),
            rvd_mc_derivative_se=float(mc_derivative_se),
            rvd_rel_error=abs(approx - exact) / abs(exact) if exact != 0 else 0.0,
            cvd_mc=float(cvd_mc),
            cvd_mc_se=float(cplx_terms.std() / sqrt_n),
            cvd_penalty=cvd_penalty,
            cvd_offset=cvd_penalty - float(cvd_mc),
            cvd_exact_derivative=cvd_exact,
            cvd_fd_derivative=fd,
            cvd_fd_rel_error=abs(fd - cvd_exact) / max(abs(cvd_exact), 1e-300),
        ))
        current = following

    significant = [r for r in rows if abs(r.rvd_exact_derivative) > 1e-4]
    offsets = np.array([r.cvd_offset for r in rows])
    pooled = float(np.sqrt(np.mean([r.cvd_mc_se ** 2 for r in rows])))
    return KLVerificationReport(
        grid=grid,
        samples=samples,
        rows=rows,
        approx_within_4pct=all(r.rvd_rel_error <= 0.04 for r in significant),
        exact_vs_mc_fraction=within / grid,
        cvd_offset_std=float(offsets.std()),
        cvd_pooled_se=pooled,
        cvd_derivative_max_rel_error=max(r.cvd_fd_rel_error for r in rows),
        cvd_penalty_at_max_alpha=rows[-1].cvd_penalty,
    )


def _random_complex(rng: np.random.Generator, shape) -> np.ndarray:
    return rng.standard_normal(shape) + 1j * rng.standard_normal(shape)


def _moment_checks(label: str, samples: np.ndarray, mean: np.ndarray, variance: np.ndarray,
                   relation: np.ndarray) -> List[LRTCheck]:
    """Média (re, im), variância E|y - m|^2 e relação E(y - m)^2 por saída, a 3 EP."""
    n = samples.shape[0]
    centered = samples - mean
    checks = []

    def add(check: str, output: int, values: np.ndarray, expected: float):
        observed = float(values.mean())
        se = float(values.std() / np.sqrt(n))
        checks.append(LRTCheck(
            check=f"{label}.{check}", output=output, expected=float(expected), observed=observed,
            standard_error=se, passed=abs(observed - expected) <= 3.0 * se,
        ))

    for j in range(samples.shape[1]):
        add("mean.re", j, samples[:, j].real, mean[j].real)
        add("mean.im", j, samples[:, j].imag, mean[j].imag)
        add("variance", j, np.abs(centered[:, j]) ** 2, variance[j])
        squared = centered[:, j] ** 2
        add("relation.re", j, squared.real, relation[j].real)
        add("relation.im", j, squared.imag, relation[j].imag)
    return checks


def _cross_checks(label: str, samples: np.ndarray, mean: np.ndarray) -> List[LRTCheck]:
    """Covariâncias e relações cruzadas entre saídas distintas devem ser nulas."""
    n = samples.shape[0]
    centered = samples - mean
    checks = []
    for i in range(samples.shape[1]):
        for j in range(i + 1, samples.shape[1]):
            for name, values in (
                ("cov", centered[:, i] * np.conj(centered[:, j])),
                ("rel", centered[:, i] * centered[:, j]),
            ):
                for part, arr in (("re", values.real), ("im", values.imag)):
                    observed = float(arr.mean())
                    se = float(arr.std() / np.sqrt(n))
                    checks.append(LRTCheck(
                        check=f"{label}.{name}[{i},{j}].{part}", output=-1, expected=0.0,
                        observed=observed, standard_error=se, passed=abs(observed) <= 3.0 * se,
                    ))
    return checks


def verify_lrt(kind: PenaltyKind = PenaltyKind.CVD, samples: int = 100_000, n_in: int = 6,
               n_out: int = 4, seed: int = 0, zero_variance: bool = False) -> LRTVerificationReport:
    """Momentos da saída por reparametrização local contra amostragem direta dos pesos."""
    kind = PenaltyKind(kind)
    if not kind.is_complex:
        raise DomainError(f"verificação do LRT complexo exige penalidade complexa: {kind.value}")
    if samples < 10_000:
        raise DomainError(f"samples deve ser >= 1e4: {samples}")
    rng = np.random.default_rng(seed)
    layer = VarLinear(n_in, n_out, PenaltySpec(kind=kind), rng, name="lrt")
    layer.bias.assign((0.1 * rng.standard_normal(n_out), 0.1 * rng.standard_normal(n_out)))
    mu = layer.weight.value.to_complex()
    if zero_variance:
        layer.log_sigma2.assign((np.full(layer.weight_shape, -np.inf),))
    elif kind is PenaltyKind.RSCALE:
        layer.log_sigma2.assign((rng.uniform(-2.0, 0.0, layer.weight_shape),))
    else:
        log_alpha = rng.uniform(-2.0, 0.0, layer.weight_shape)
        layer.log_sigma2.assign((np.log(np.abs(mu) ** 2) + log_alpha,))

    x = _random_complex(rng, n_in)
    mean_t, variance_t, relation_t = layer.output_moments(CTensor.from_complex(x[None]))
    mean = mean_t.to_complex()[0]
    variance = variance_t.data[0]
    relation = relation_t.to_complex()[0]

    batch = CTensor.from_complex(np.broadcast_to(x, (samples, n_in)))
    lrt = layer.forward(batch, rng=rng, mode=LayerMode.STOCHASTIC).value.to_complex()
    report = LRTVerificationReport(penalty=kind.value, samples=samples, exact_branch=zero_variance)
    if zero_variance:
        deterministic = layer.forward(batch, mode=LayerMode.DETERMINISTIC).value.to_complex()
        gap = float(np.max(np.abs(lrt - deterministic)))
        report.checks.append(LRTCheck(
            check="lrt.exact", output=-1, expected=0.0, observed=gap, standard_error=0.0, passed=gap == 0.0,
        ))
        return report

    bias = layer.bias.value.to_complex()
    sigma2 = np.exp(layer.log_sigma2.value.data)
    chunks = []
    for start in range(0, samples, 10_000):
        m = min(10_000, samples - start)
        if kind is PenaltyKind.RSCALE:
            noise = rng.standard_normal((m,) + mu.shape)
            weights = mu * (1.0 + np.sqrt(sigma2) * noise)
        else:
            weights = mu + np.sqrt(sigma2 / 2.0) * _random_complex(rng, (m,) + mu.shape)
        chunks.append(weights @ x + bias)
    sampled = np.concatenate(chunks)

    report.checks.extend(_moment_checks("lrt", lrt, mean, variance, relation))
    report.checks.extend(_moment_checks("weights", sampled, mean, variance, relation))
    report.checks.extend(_cross_checks("weights", sampled, mean))
    return report


# --- gradcheck ---------------------------------------------------------------

DERIVATIVE_LABELS = {
    PenaltyKind.CVD: "exp(-1/alpha) - 1",
    PenaltyKind.CARD: "-sigmoid(-log alpha)",
    PenaltyKind.RARD: "-sigmoid(-log alpha) / 2",
    PenaltyKind.RVD: "aproximação sigmoide",
    PenaltyKind.RSCALE: "aproximação sigmoide",
}


def _readout(y: Node, rng: np.random.Generator) -> Node:
    """Funcional real e linear da saída (parte real e imaginária com pesos fixos)."""
    c_re = rng.standard_normal(y.shape)
    c_im = rng.standard_normal(y.shape)
    total = F.mul(F.real_part(y), c_re)
    if y.is_complex:
        total = F.add(total, F.mul(F.imag_part(y), c_im))
    return F.sum_all(total)


def _layer_case(layer: VariationalLayer, x_value, seed: int) -> Callable[[], Node]:
    def build() -> Node:
        rng = np.random.default_rng(seed)
        y = layer.forward(x_value, rng=rng, mode=LayerMode.STOCHASTIC)
        return F.add(_readout(y, rng), layer.penalty_node())
    return build


def _prepare(layer: VariationalLayer, rng: np.random.Generator) -> None:
    """log alpha em [-2, 1] para que a penalidade não fique plana."""
    log_alpha = rng.uniform(-2.0, 1.0, layer.weight_shape)
    if layer.penalty.kind is PenaltyKind.RSCALE:
        layer.log_sigma2.assign((log_alpha,))
    else:
        layer.log_sigma2.assign((np.log(F.abs2(layer.weight).value.data) + log_alpha,))
    layer.bias.assign(tuple(0.1 * rng.standard_normal(layer.bias.shape) for _ in layer.bias.parts))


def _input(rng: np.random.Generator, shape, is_complex: bool):
    if is_complex:
        return CTensor(rng.standard_normal(shape), rng.standard_normal(shape))
    return RTensor(rng.standard_normal(shape))


def gradcheck_sweep(seed: int = 0, eps: float = 1e-6, tol: float = 1e-5) -> List[GradcheckRow]:
    """Uma linha por (camada, penalidade) mais composições com DFT, convolução e pooling."""
    rng = np.random.default_rng(seed)
    rows: List[GradcheckRow] = []
    for kind in PenaltyKind:
        spec = PenaltySpec(kind=kind)
        cases = [
            ("linear", VarLinear(3, 2, spec, rng, name="linear"), (2, 3)),
            ("conv2d", VarConv2d(1, 2, 2, spec, rng, name="conv"), (1, 1, 3, 3)),
        ]
        for case, layer, shape in cases:
            _prepare(layer, rng)
            x = _input(rng, shape, layer.is_complex)
            report = gradcheck(_layer_case(layer, x, seed), layer.parameters(), eps=eps, tol=tol)
            rows.append(GradcheckRow(
                case=case, penalty=kind.value, derivative=DERIVATIVE_LABELS[kind],
                max_rel_error=report.max_rel_error, passed=report.passed,
            ))
    rows.extend(_composition_rows(rng, seed, eps, tol))
    return rows


def _composition_rows(rng: np.random.Generator, seed: int, eps: float, tol: float) -> List[GradcheckRow]:
    spec = PenaltySpec(kind=PenaltyKind.CVD)
    rows = []

    image = Parameter(RTensor(rng.standard_normal((1, 1, 4, 4))), "image")
    dense = VarLinear(16, 2, spec, rng, name="dft_dense")
    _prepare(dense, rng)

    def dft_case() -> Node:
        local = np.random.default_rng(seed)
        spectrum = F.dft2d_centered(image, "ortho")
        y = dense.forward(F.flatten(spectrum), rng=local, mode=LayerMode.STOCHASTIC)
        return _readout(y, local)

    rows.append(_composition("dft2d+linear", dft_case, [image] + dense.parameters(), eps, tol))

    signal = Parameter(_input(rng, (1, 1, 6, 6), True), "signal")
    conv = VarConv2d(1, 2, 3, spec, rng, name="conv_pool")
    _prepare(conv, rng)

    def conv_pool_case() -> Node:
        local = np.random.default_rng(seed)
        h = conv.forward(F.pad2d(signal, 1), rng=local, mode=LayerMode.STOCHASTIC)
        h = F.avg_pool2d(F.relu(h), 2, 2)
        return _readout(h, local)

    rows.append(_composition("pad2d+conv2d+crelu+avg_pool2d", conv_pool_case,
                             [signal] + conv.parameters(), eps, tol))
    return rows


def _composition(case: str, build: Callable[[], Node], params: List[Parameter], eps: float,
                 tol: float) -> GradcheckRow:
    report = gradcheck(build, params, eps=eps, tol=tol)
    return GradcheckRow(case=case, max_rel_error=report.max_rel_error, passed=report.passed)


def gradcheck_passed(rows: List[GradcheckRow]) -> bool:
    return all(row.passed for row in rows)


def max_rel_error(rows: List[GradcheckRow]) -> Optional[float]:
    return max((row.max_rel_error for row in rows), default=None)
