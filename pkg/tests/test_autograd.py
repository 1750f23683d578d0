import numpy as np
import pytest

from cplx_sparse_vd.core import functional as F
from cplx_sparse_vd.core.autograd import Parameter, backward, constant, gradcheck
from cplx_sparse_vd.core.ctensor import CTensor, RTensor
from cplx_sparse_vd.core.errors import DomainError, GradientError


def _cparam(rng, shape, name):
    return Parameter(CTensor(rng.standard_normal(shape), rng.standard_normal(shape)), name)


class TestBackward:
    def test_abs2_gradient_is_two_z(self):
        z = Parameter(CTensor(np.array([1.0, -2.0]), np.array([0.5, 3.0])), "z")
        backward(F.sum_all(F.abs2(z)))
        np.testing.assert_allclose(z.grad.re, [2.0, -4.0])
        np.testing.assert_allclose(z.grad.im, [1.0, 6.0])

    def test_real_part_of_product(self):
        # f = Re(a b) = ar br - ai bi -> grad_a = conj(b) packed as (br, -bi)
        a = Parameter(CTensor(np.array([1.0]), np.array([2.0])), "a")
        b = constant(CTensor(np.array([3.0]), np.array([-1.0])))
        backward(F.sum_all(F.real_part(F.mul(a, b))))
        np.testing.assert_allclose(a.grad.re, [3.0])
        np.testing.assert_allclose(a.grad.im, [1.0])

    def test_shared_node_accumulates(self):
        x = Parameter(RTensor(np.array([2.0])), "x")
        y = F.mul(x, x)
        backward(F.sum_all(F.add(y, x)))
        np.testing.assert_allclose(x.grad.data, [5.0])

    def test_complex_loss_rejected(self):
        z = Parameter(CTensor(np.ones(1)), "z")
        with pytest.raises(GradientError):
            backward(F.sum_all(z))

    def test_non_scalar_loss_rejected(self):
        x = Parameter(RTensor(np.ones(3)), "x")
        with pytest.raises(GradientError):
            backward(F.scale(x, 2.0))

    def test_bias_broadcast_is_summed(self, rng):
        bias = Parameter(RTensor(np.zeros((2, 1, 1))), "bias")
        x = constant(RTensor(rng.standard_normal((3, 2, 4, 4))))
        backward(F.sum_all(F.add(x, bias)))
        np.testing.assert_allclose(bias.grad.data, np.full((2, 1, 1), 48.0))

    def test_assign_checks_shape(self):
        p = Parameter(RTensor(np.zeros(3)), "p")
        with pytest.raises(GradientError):
            p.assign((np.zeros(4),))


class TestGradcheck:
    def test_complex_dense_composition(self, rng):
        W = _cparam(rng, (3, 4), "W")
        x = constant(CTensor(rng.standard_normal((5, 4)), rng.standard_normal((5, 4))))
        labels = np.array([0, 1, 2, 1, 0])

        def build():
            h = F.relu(F.matmul(W, x))
            return F.cross_entropy(F.real_part(h), labels)

        report = gradcheck(build, [W])
        assert report.passed, report.max_rel_error

    def test_complex_conv_pool_dft(self, rng):
        image = Parameter(RTensor(rng.standard_normal((2, 1, 5, 5))), "image")
        kernel = _cparam(rng, (2, 1, 2, 2), "kernel")

        def build():
            spectrum = F.dft2d_centered(image, "ortho")
            h = F.avg_pool2d(F.conv2d(kernel, F.pad2d(spectrum, 1), stride=1), 2, 2)
            return F.sum_all(F.abs2(h))

        report = gradcheck(build, [image, kernel])
        assert report.passed, report.max_rel_error

    def test_safe_ops(self, rng):
        a = Parameter(RTensor(rng.uniform(0.5, 2.0, 4)), "a")
        b = Parameter(RTensor(rng.uniform(0.5, 2.0, 4)), "b")

        def build():
            return F.sum_all(F.add(F.safe_sqrt(a), F.mul(F.safe_div(a, b), F.log(b))))

        assert gradcheck(build, [a, b]).passed

    def test_exponential_integral(self):
        # pontos dos dois lados da troca série / fração contínua
        values = np.array([-0.3, -2.0, -5.9, -6.5, -9.0])
        x = Parameter(RTensor(values.copy()), "x")
        assert gradcheck(lambda: F.sum_all(F.ei(x)), [x]).passed

        backward(F.sum_all(F.ei(x)))
        np.testing.assert_array_equal(x.grad.data, np.exp(values) / values)

    def test_exponential_integral_domain(self):
        with pytest.raises(DomainError):
            F.ei(Parameter(RTensor(np.array([-1.0, 0.0])), "x"))

    def test_frozen_parameter_is_excluded(self, rng):
        w = Parameter(RTensor(rng.standard_normal(3)), "w")
        frozen = Parameter(RTensor(rng.standard_normal(3)), "frozen", requires_grad=False)
        report = gradcheck(lambda: F.sum_all(F.mul(w, frozen)), [w, frozen])
        assert [c.name for c in report.checks] == ["w"]

    def test_wrong_gradient_is_reported(self):
        x = Parameter(RTensor(np.array([1.0, 2.0])), "x")

        def build():
            # derivada registrada propositalmente errada
            return F.sum_all(F.elementwise(x, np.sin, np.sin, "bad_sin"))

        assert not gradcheck(build, [x]).passed

    def test_eps_range(self):
        x = Parameter(RTensor(np.ones(1)), "x")
        with pytest.raises(GradientError):
            gradcheck(lambda: F.sum_all(x), [x], eps=0.5)
