import math

import numpy as np
import pytest
import torch

from drgaze.errors import DegenerateOutputError
from drgaze.losses import (
    LossWeights,
    l_new,
    l_original,
    la,
    la_call_count,
    lb,
    reset_la_call_count,
    total_loss,
)
from helpers import (
    autograd_gradient,
    central_difference_gradient,
    relative_gradient_error,
    sample_loss_points,
)

G = [0.3, -0.1, -0.9]
G_HAT = [0.05, 0.2, -0.95]
GUIDE = [-0.2, 0.1, -0.97]


def val(x):
    return float(x)


class TestValues:
    def test_l_original_identity(self):
        assert val(l_original(G, G)) == 0.0

    def test_l_original_single_component(self):
        assert val(l_original([1.0, 0.0, 0.0], [0.0, 0.0, 0.0])) == 1.0

    def test_l_original_summed_components(self):
        # |0.1| + |0.2| + |0.1| summed by hand
        assert val(l_original([0.1, 0.2, -0.9], [0.0, 0.0, -1.0])) == pytest.approx(0.4, abs=1e-12)

    def test_l_new_identity(self):
        assert val(l_new(G, G)) == 0.0

    def test_l_new_orthogonal(self):
        assert val(l_new([1.0, 0.0, 0.0], [0.0, 1.0, 0.0])) == pytest.approx(
            math.pi / 2, abs=1e-12
        )

    def test_l_new_from_normalized_dot(self):
        # arccos(0.8), dot product evaluated independently
        assert val(l_new([0.6, 0.0, -0.8], [0.0, 0.0, -1.0])) == pytest.approx(
            0.6435011087932843, abs=1e-12
        )

    def test_la_vanishes_when_diff_matches_test(self):
        assert val(la(G_HAT, G_HAT, GUIDE)) == 0.0

    def test_la_all_equal(self):
        assert val(la(G, G, G)) == 0.0

    def test_la_orthogonal_triple(self):
        # both angles are pi/2, verified by direct evaluation
        assert val(la([1, 0, 0], [0, 1, 0], [0, 0, 1])) == 0.0


class TestEndpointIdentities:
    def test_lb_alpha_one_is_l_new(self):
        assert abs(val(lb(G, G_HAT, 1.0)) - val(l_new(G, G_HAT))) <= 1e-12

    def test_lb_alpha_zero_is_l_original(self):
        assert abs(val(lb(G, G_HAT, 0.0)) - val(l_original(G, G_HAT))) <= 1e-12

    def test_total_beta_one_is_lb(self):
        w = LossWeights(alpha=0.3, beta=1.0)
        assert abs(val(total_loss(G, G, G_HAT, GUIDE, w)) - val(lb(G, G_HAT, 0.3))) <= 1e-12

    def test_total_beta_zero_is_la(self):
        w = LossWeights(alpha=0.3, beta=0.0)
        diff = [0.4, 0.2, -0.8]
        assert (
            abs(val(total_loss(G, diff, G_HAT, GUIDE, w)) - val(la(diff, G_HAT, GUIDE))) <= 1e-12
        )

    def test_default_operating_point(self):
        w = LossWeights()
        assert w.alpha == 0.75 and w.beta == 0.75


class TestProperties:
    def test_l_new_invariant_under_positive_rescaling(self, rng):
        for _ in range(30):
            g = rng.normal(size=3)
            g_hat = rng.normal(size=3)
            k1, k2 = rng.uniform(0.1, 50.0, 2)
            assert val(l_new(k1 * g, k2 * g_hat)) == pytest.approx(val(l_new(g, g_hat)), abs=1e-9)

    def test_l_original_not_scale_invariant(self):
        assert val(l_original(np.array(G) * 2.0, G_HAT)) != pytest.approx(
            val(l_original(G, G_HAT)), abs=1e-6
        )

    def test_all_losses_nonnegative(self, rng):
        for _ in range(50):
            g, g_hat = rng.normal(size=3), rng.normal(size=3)
            d, guide = rng.normal(size=3), rng.normal(size=3)
            w = LossWeights(alpha=rng.uniform(), beta=rng.uniform())
            assert val(l_original(g, g_hat)) >= 0.0
            assert val(l_new(g, g_hat)) >= 0.0
            assert val(lb(g, g_hat, w.alpha)) >= 0.0
            assert val(la(d, g_hat, guide)) >= 0.0
            assert val(total_loss(g, d, g_hat, guide, w)) >= 0.0

    def test_batched_shapes(self, rng):
        g = torch.tensor(rng.normal(size=(5, 3)))
        g_hat = torch.tensor(rng.normal(size=(5, 3)))
        assert l_original(g, g_hat).shape == (5,)
        assert l_new(g, g_hat).shape == (5,)
        assert total_loss(g, g, g_hat, g_hat, LossWeights()).shape == (5,)

    def test_l_original_l2_and_pitchyaw_options(self):
        assert val(l_original([1.0, 2.0, 2.0], [0.0, 0.0, 0.0], norm="l2")) == pytest.approx(3.0)
        assert val(l_original(G, G, space="pitchyaw")) == 0.0
        with pytest.raises(ValueError):
            l_original(G, G_HAT, norm="l3")
        with pytest.raises(ValueError):
            l_original(G, G_HAT, space="polar")


class TestErrors:
    def test_zero_norm_prediction_raises(self):
        with pytest.raises(DegenerateOutputError):
            l_new([0.0, 0.0, 0.0], G_HAT)
        with pytest.raises(DegenerateOutputError):
            la([0.0, 0.0, 0.0], G_HAT, GUIDE)
        # the L1 gap stays defined for degenerate predictions
        assert val(l_original([0.0, 0.0, 0.0], [1.0, 0.0, 0.0])) == 1.0

    def test_weight_validation(self):
        with pytest.raises(ValueError):
            LossWeights(alpha=1.5)
        with pytest.raises(ValueError):
            LossWeights(beta=-0.1)
        with pytest.raises(ValueError):
            lb(G, G_HAT, 2.0)

    def test_wrong_vector_size(self):
        with pytest.raises(ValueError):
            l_new([1.0, 2.0], [0.0, 1.0])


class TestInstrumentation:
    def test_la_counter_increments(self):
        reset_la_call_count()
        la(G, G_HAT, GUIDE)
        la(G, G_HAT, GUIDE)
        assert la_call_count() == 2

    def test_total_loss_beta_one_never_calls_la(self):
        reset_la_call_count()
        total_loss(G, G, G_HAT, None, LossWeights(beta=1.0))
        assert la_call_count() == 0


class TestGradients:
    """Analytic gradients against central finite differences (the oracle)."""

    def _check(self, make_loss, point, tol=1e-4):
        analytic = autograd_gradient(make_loss, point)
        numeric = central_difference_gradient(lambda x: float(make_loss(torch.tensor(x))), point)
        assert relative_gradient_error(analytic, numeric) < tol

    def test_gradients_match_finite_differences(self, rng):
        points = sample_loss_points(rng, 20)
        w = LossWeights(alpha=0.6, beta=0.4)
        for g, g_hat in points:
            guide = rng.normal(size=3)
            t_hat = torch.tensor(g_hat)
            t_guide = torch.tensor(guide)
            self._check(lambda t: l_original(t, t_hat), g)
            self._check(lambda t: l_new(t, t_hat), g)
            self._check(lambda t: lb(t, t_hat, 0.6), g)
            self._check(lambda t: la(t, t_hat, t_guide), g)
            self._check(lambda t: total_loss(t, t_guide + 0.1, t_hat, t_guide, w), g)
            # total_loss gradient with respect to the differential output
            self._check(lambda t: total_loss(t_hat + 0.2, t, t_hat, t_guide, w), g)

    def test_gradient_finite_at_clamp_boundary(self):
        g = torch.tensor([0.0, 0.0, -1.0], requires_grad=True)
        l_new(g, torch.tensor([0.0, 0.0, -1.0])).backward()
        assert torch.isfinite(g.grad).all()
