import numpy as np
import pytest

from cplx_sparse_vd.core import functional as F
from cplx_sparse_vd.core.autograd import gradcheck
from cplx_sparse_vd.core.ctensor import CTensor, RTensor
from cplx_sparse_vd.core.errors import DomainError, NonFinitePenaltyError, ShapeMismatchError
from cplx_sparse_vd.core.varlayers import (
    LOG_SIGMA2_BOUNDS,
    LayerMode,
    VarConv2d,
    VarLinear,
    kl_penalty,
    penalty_derivative,
    penalty_value,
    rvd_exact_derivative,
)
from cplx_sparse_vd.core.autograd import constant
from cplx_sparse_vd.models.config_models import PenaltyKind, PenaltySpec

ALL_KINDS = list(PenaltyKind)


def _complex_input(rng, shape):
    return CTensor(rng.standard_normal(shape), rng.standard_normal(shape))


class TestPenalties:
    @pytest.mark.parametrize("kind", ALL_KINDS)
    def test_vanishes_for_large_alpha(self, kind):
        value = penalty_value(PenaltySpec(kind=kind), np.array([30.0]))
        assert abs(value[0]) < 1e-6

    def test_cvd_close_to_zero_at_grid_edge(self):
        assert abs(penalty_value(PenaltySpec(kind=PenaltyKind.CVD), np.array([12.0]))[0]) < 1e-3

    @pytest.mark.parametrize("kind", ALL_KINDS)
    def test_penalty_decreases_with_alpha(self, kind):
        la = np.linspace(-10, 10, 101)
        assert np.all(np.diff(penalty_value(PenaltySpec(kind=kind), la)) < 0)

    @pytest.mark.parametrize("kind", ALL_KINDS)
    def test_derivative_matches_differences(self, kind):
        spec = PenaltySpec(kind=kind)
        la = np.linspace(-8, 8, 33)
        h = 1e-5
        numeric = (penalty_value(spec, la + h) - penalty_value(spec, la - h)) / (2 * h)
        np.testing.assert_allclose(penalty_derivative(spec, la, exact=False), numeric, rtol=1e-6, atol=1e-9)

    def test_cvd_derivative_closed_form(self):
        la = np.array([-3.0, 0.0, 2.0])
        expected = np.exp(-np.exp(-la)) - 1.0
        np.testing.assert_allclose(penalty_derivative(PenaltySpec(kind=PenaltyKind.CVD), la), expected)

    def test_rvd_exact_derivative_limits(self):
        assert rvd_exact_derivative(np.array([-30.0]))[0] == pytest.approx(-0.5, rel=1e-6)
        la = np.array([15.0])
        assert rvd_exact_derivative(la)[0] == pytest.approx(-0.5 * np.exp(-15.0), rel=1e-5)

    def test_rvd_approximation_within_four_percent(self):
        spec = PenaltySpec(kind=PenaltyKind.RVD)
        la = np.linspace(-12, 12, 481)
        exact = rvd_exact_derivative(la)
        approx = penalty_derivative(spec, la, exact=False)
        significant = np.abs(exact) > 1e-4
        assert np.all(np.abs(approx - exact)[significant] <= 0.04 * np.abs(exact)[significant])

    def test_exact_gradient_flag(self):
        spec = PenaltySpec(kind=PenaltyKind.RVD, exact_gradient=True)
        la = np.array([0.5])
        np.testing.assert_allclose(penalty_derivative(spec, la), rvd_exact_derivative(la))

    def test_constants_are_fixed(self):
        with pytest.raises(ValueError):
            PenaltySpec(kind=PenaltyKind.RVD, k1=0.5)

    def test_non_finite_log_alpha(self):
        node = constant(RTensor(np.array([0.0, np.nan])))
        with pytest.raises(NonFinitePenaltyError):
            kl_penalty(node, PenaltySpec())


class TestLayerParameters:
    def test_log_alpha_from_additive_noise(self, rng):
        layer = VarLinear(3, 2, PenaltySpec(), rng)
        mu2 = np.abs(layer.weight.value.to_complex()) ** 2
        np.testing.assert_allclose(layer.log_alpha().data, LOG_SIGMA2_BOUNDS[0] - np.log(mu2 + 1e-12))

    def test_rscale_stores_log_alpha(self, rng):
        layer = VarLinear(3, 2, PenaltySpec(kind=PenaltyKind.RSCALE), rng)
        layer.log_sigma2.assign((np.full((2, 3), -1.5),))
        np.testing.assert_array_equal(layer.log_alpha().data, np.full((2, 3), -1.5))

    def test_sparsify_reset(self, rng):
        layer = VarLinear(4, 3, PenaltySpec(), rng)
        layer.reset_log_sigma2()
        np.testing.assert_allclose(layer.log_alpha().data, -8.0, atol=1e-6)

    def test_clamp(self, rng):
        layer = VarLinear(2, 2, PenaltySpec(), rng)
        layer.log_sigma2.assign((np.array([[-50.0, 0.0], [3.0, 40.0]]),))
        layer.clamp_log_sigma2()
        np.testing.assert_array_equal(layer.log_sigma2.value.data, [[-20.0, 0.0], [3.0, 5.0]])

    def test_apply_mask(self, rng):
        layer = VarLinear(3, 2, PenaltySpec(), rng)
        mask = np.array([[True, False, True], [False, False, True]])
        layer.apply_mask(mask)
        w = layer.weight.value.to_complex()
        assert np.all(w[~mask] == 0)
        assert np.all(w[mask] != 0)
        assert layer.mode is LayerMode.MASKED

    def test_mask_shape_checked(self, rng):
        layer = VarLinear(3, 2, PenaltySpec(), rng)
        with pytest.raises(ShapeMismatchError):
            layer.apply_mask(np.ones((3, 2), dtype=bool))

    def test_masked_mode_requires_mask(self, rng):
        layer = VarLinear(3, 2, PenaltySpec(), rng)
        with pytest.raises(DomainError):
            layer.set_mode(LayerMode.MASKED)


class TestForward:
    def test_deterministic_is_affine(self, rng):
        layer = VarLinear(3, 2, PenaltySpec(), rng)
        layer.bias.assign((np.array([0.1, -0.2]), np.array([0.3, 0.0])))
        x = _complex_input(rng, (4, 3))
        y = layer.forward(x, mode=LayerMode.DETERMINISTIC).value.to_complex()
        expected = x.to_complex() @ layer.weight.value.to_complex().T + layer.bias.value.to_complex()
        np.testing.assert_allclose(y, expected)

    def test_field_mismatch(self, rng):
        layer = VarLinear(3, 2, PenaltySpec(kind=PenaltyKind.RVD), rng)
        with pytest.raises(ShapeMismatchError):
            layer.forward(_complex_input(rng, (1, 3)))

    def test_stochastic_needs_rng(self, rng):
        layer = VarLinear(3, 2, PenaltySpec(), rng)
        with pytest.raises(DomainError):
            layer.forward(_complex_input(rng, (1, 3)), mode=LayerMode.STOCHASTIC)

    def test_conv_output_shape(self, rng):
        layer = VarConv2d(2, 3, 3, PenaltySpec(), rng, stride=1)
        y = layer.forward(_complex_input(rng, (4, 2, 6, 5)), rng=rng, mode=LayerMode.STOCHASTIC)
        assert y.shape == (4, 3, 4, 3)
        assert y.is_complex

    @pytest.mark.parametrize("kind", [PenaltyKind.CVD, PenaltyKind.CARD])
    def test_complex_moments(self, rng, kind):
        layer = VarLinear(3, 2, PenaltySpec(kind=kind), rng)
        mu2 = np.abs(layer.weight.value.to_complex()) ** 2
        layer.log_sigma2.assign((np.log(mu2) + rng.uniform(-2.0, 0.0, (2, 3)),))
        x = _complex_input(rng, (1, 3))
        mean, variance, relation = layer.output_moments(x)
        n = 50_000
        batch = CTensor(np.repeat(x.re, n, axis=0), np.repeat(x.im, n, axis=0))
        y = layer.forward(batch, rng=rng, mode=LayerMode.STOCHASTIC).value.to_complex()
        centered = y - mean.to_complex()
        se = np.sqrt(variance.data[0] / n)
        assert np.all(np.abs(centered.mean(axis=0)) < 4 * se)
        np.testing.assert_allclose(np.mean(np.abs(centered) ** 2, axis=0), variance.data[0], rtol=0.05)
        assert np.all(np.abs(np.mean(centered ** 2, axis=0)) < 0.05 * variance.data[0])
        np.testing.assert_allclose(relation.to_complex(), 0.0)

    def test_real_moments(self, rng):
        layer = VarLinear(3, 2, PenaltySpec(kind=PenaltyKind.RVD), rng)
        layer.log_sigma2.assign((np.full((2, 3), -1.0),))
        x = RTensor(rng.standard_normal((1, 3)))
        _, variance, _ = layer.output_moments(x)
        n = 50_000
        y = layer.forward(RTensor(np.repeat(x.data, n, axis=0)), rng=rng, mode=LayerMode.STOCHASTIC)
        np.testing.assert_allclose(y.value.data.var(axis=0), variance.data[0], rtol=0.05)

    def test_rscale_relation(self, rng):
        layer = VarLinear(3, 2, PenaltySpec(kind=PenaltyKind.RSCALE), rng)
        layer.log_sigma2.assign((np.full((2, 3), -0.5),))
        x = _complex_input(rng, (1, 3))
        mean, variance, relation = layer.output_moments(x)
        w, z = layer.weight.value.to_complex(), x.to_complex()[0]
        alpha = np.exp(-0.5)
        np.testing.assert_allclose(relation.to_complex()[0], (alpha * (w * z) ** 2).sum(axis=1))
        np.testing.assert_allclose(variance.data[0], (alpha * np.abs(w * z) ** 2).sum(axis=1))
        n = 50_000
        batch = CTensor(np.repeat(x.re, n, axis=0), np.repeat(x.im, n, axis=0))
        y = layer.forward(batch, rng=rng, mode=LayerMode.STOCHASTIC).value.to_complex()
        centered = y - mean.to_complex()
        scale = variance.data[0]
        assert np.all(np.abs(np.mean(centered ** 2, axis=0) - relation.to_complex()[0]) < 0.05 * scale)

    def test_penalty_gradients(self, rng):
        for kind in PenaltyKind:
            layer = VarLinear(2, 2, PenaltySpec(kind=kind), rng)
            layer.log_sigma2.assign((rng.uniform(-3.0, 1.0, (2, 2)),))
            report = gradcheck(lambda: F.scale(layer.penalty_node(), 1.0), layer.parameters())
            assert report.passed, (kind, report.max_rel_error)
