import math

import numpy as np
import pytest

from gazeattn.adversarial import AttackConfig, evaluate_robustness, fgsm_batch, fgsm_perturb, input_gradient
from gazeattn.gradcheck import _randomized_params
from gazeattn.synthetic import generate_synthetic_task
from gazeattn.toy_model import ModelConfig, batch_losses, default_attention, forward_batch, init_params
from gazeattn.training import TrainConfig, train

POSTHOC = default_attention("activation_posthoc")


def logistic_model():
    """1x1 grid, one input channel: logits (-x, x), so p(label 0) = sigmoid(-2x)."""
    p = init_params(ModelConfig(grid=1, in_channels=1, features=2, num_classes=2, feature_gain=1.0), 0)
    p.feat_w[:] = 0.0
    p.feat_w[1, 1, 0, 0] = 1.0
    p.feat_b[:] = 0.0
    p.cls_w[:] = [[-1.0, 1.0], [0.0, 0.0]]
    p.cls_b[:] = 0.0
    p.trained_steps = 1
    return p


class TestLogisticHandCase:
    def test_gradient_closed_form(self):
        p = logistic_model()
        x = 0.3
        g = input_gradient(p, np.full((1, 1, 1, 1), x), [0], POSTHOC)
        # d/dx log(1 + exp(2x)) = 2 sigmoid(2x)
        assert g[0, 0, 0, 0] == pytest.approx(2 / (1 + math.exp(-2 * x)), abs=1e-12)

    @pytest.mark.parametrize("x, label, eps, expected", [
        (0.3, 0, 0.1, 0.4),
        (0.3, 1, 0.1, 0.2),
        (0.95, 0, 0.1, 1.0),
        (0.05, 1, 0.1, 0.0),
    ])
    def test_perturbed_value(self, x, label, eps, expected):
        xp = fgsm_perturb(logistic_model(), np.full((1, 1, 1), x), label, AttackConfig(eps), POSTHOC)
        assert xp[0, 0, 0] == pytest.approx(expected, abs=1e-15)


@pytest.fixture(scope="module")
def trained():
    ds = generate_synthetic_task(num_classes=3, grid=8, samples=60, seed=5)
    res = train(ds, TrainConfig(baseline="softmax", steps=30))
    return ds, res.params


class TestContract:
    def test_linf_bound(self, trained):
        ds, p = trained
        for eps in (1e-4, 0.01, 0.2):
            xp = fgsm_batch(p, ds.images, ds.labels, AttackConfig(eps), default_attention("softmax"))
            assert np.max(np.abs(xp - ds.images)) <= eps
            assert xp.min() >= 0.0 and xp.max() <= 1.0

    def test_full_step_where_gradient_nonzero(self, trained):
        ds, p = trained
        attn = default_attention("softmax")
        eps = 0.01
        g = input_gradient(p, ds.images, ds.labels, attn)
        xp = fgsm_batch(p, ds.images, ds.labels, AttackConfig(eps), attn)
        free = (g != 0) & (ds.images + eps <= 1.0) & (ds.images - eps >= 0.0)
        assert free.sum() > 100
        # equal to eps up to the single rounding of x + eps
        np.testing.assert_allclose(np.abs(xp - ds.images)[free], eps, rtol=0, atol=1e-15)
        np.testing.assert_array_equal(xp[g == 0], ds.images[g == 0])

    def test_zero_eps_identity(self, trained):
        ds, p = trained
        xp = fgsm_batch(p, ds.images, ds.labels, AttackConfig(0.0), default_attention("softmax"))
        np.testing.assert_array_equal(xp, ds.images)
        res = evaluate_robustness({"softmax": p}, ds, AttackConfig(0.0), {"softmax": default_attention("softmax")})
        assert res.fooling_rates["softmax"] == 0.0

    def test_first_order_ascent(self, trained):
        ds, p = trained
        attn = default_attention("softmax")
        before, _, _ = batch_losses(forward_batch(p, ds.images, attn), ds.labels, attn)
        xp = fgsm_batch(p, ds.images, ds.labels, AttackConfig(1e-4), attn)
        after, _, _ = batch_losses(forward_batch(p, xp, attn), ds.labels, attn)
        assert np.all(after >= before - 1e-9)

    def test_fooling_recount(self):
        ds = generate_synthetic_task(num_classes=4, grid=8, samples=40, seed=9)
        p = _randomized_params(ModelConfig(grid=8, in_channels=3, features=6, num_classes=4), 2)
        p.trained_steps = 1
        attn = default_attention("sigmoid")
        cfg = AttackConfig(0.3)
        res = evaluate_robustness({"sigmoid": p}, ds, cfg, {"sigmoid": attn})
        changed = 0
        for n in range(len(ds)):
            clean = int(np.argmax(forward_batch(p, ds.images[n:n + 1], attn).probs[0]))
            xp = fgsm_perturb(p, ds.images[n], int(ds.labels[n]), cfg, attn)
            pert = int(np.argmax(forward_batch(p, xp[None], attn).probs[0]))
            changed += clean != pert
        assert res.fooling_rates["sigmoid"] == changed / len(ds)

    def test_untrained_refused(self, trained):
        ds, _ = trained
        p = init_params(ModelConfig(grid=8, in_channels=3, num_classes=3), 0)
        with pytest.raises(ValueError, match="untrained"):
            evaluate_robustness({"x": p}, ds, AttackConfig(0.1), {"x": default_attention("softmax")})

    def test_table(self, trained):
        ds, p = trained
        res = evaluate_robustness({"softmax": p}, ds, AttackConfig(0.05), {"softmax": default_attention("softmax")})
        t = res.table()
        assert t.col_labels == ["clean_accuracy", "fooling_rate"]
        assert t.cell("softmax", "fooling_rate") == res.fooling_rates["softmax"]

    def test_config_validation(self):
        with pytest.raises(ValueError):
            AttackConfig(-0.1)
        with pytest.raises(ValueError):
            AttackConfig(0.1, (1.0, 0.0))
