import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from maadnet.autodiff import Conv2d, Parameter, Tensor, grad_check, ops
from maadnet.maad import (
    AdversarialBranch,
    DomainClassifier,
    DomainClassifierConfig,
    GrlConfig,
    MaadObjectiveConfig,
    SpatialAttention,
    bce_discriminator_loss,
    domain_accuracy,
    grl,
    haad_forward,
    laad_forward,
    lsq_discriminator_loss,
    maad_objective,
    median_bandwidth,
    mmd_rbf,
)

from oracles import scalar_bce, scalar_lsq, scalar_mmd, scalar_spatial_attention


def randomise(module, rng, scale=0.3):
    for _, p in module.named_parameters():
        p.data = rng.normal(0.0, scale, size=p.shape)


def logit(p):
    return math.log(p / (1 - p))


# -- GRL -------------------------------------------------------------------------

def test_grl_forward_is_identity():
    x = Tensor([1.5, -2.0])
    out = grl(x, 0.7)
    np.testing.assert_array_equal(out.data, [1.5, -2.0])


@pytest.mark.parametrize("lam", [0.0, 0.5, 1.0, 0.7])
def test_grl_backward_scales_upstream(lam):
    rng = np.random.default_rng(0)
    x = Tensor(rng.normal(size=(2, 3, 4, 4)), requires_grad=True)
    g = rng.normal(size=(2, 3, 4, 4))
    out = grl(x, lam)
    assert np.array_equal(out.data, x.data)
    (out * Tensor(g)).sum().backward()
    np.testing.assert_array_equal(x.grad, g * -lam)


def test_grl_rejects_negative():
    with pytest.raises(ValueError):
        grl(Tensor([1.0]), -0.1)


def test_grl_schedule():
    assert GrlConfig().value(0.3) == 1.0
    ramp = GrlConfig(schedule="dann_ramp")
    assert ramp.value(0.0) == 0.0
    assert ramp.value(1.0) == pytest.approx(2 / (1 + math.exp(-10)) - 1)
    vals = [ramp.value(p) for p in np.linspace(0, 1, 11)]
    assert all(0 <= v < 1 for v in vals) and vals == sorted(vals)
    with pytest.raises(ValueError):
        GrlConfig(lambda_p=-1)


def test_grl_wrapped_classifier_gradients_flip_sign():
    rng = np.random.default_rng(1)
    clf = DomainClassifier(4, DomainClassifierConfig.low((6, 5, 3, 1))).eval()
    randomise(clf, rng)
    x = Tensor(rng.normal(size=(2, 4, 3, 3)), requires_grad=True)
    clf(x).sum().backward()
    plain = x.grad.copy()
    x.grad = None
    clf(grl(x, 1.0)).sum().backward()
    np.testing.assert_array_equal(x.grad, -plain)


# -- spatial attention --------------------------------------------------------------

def test_attention_zero_weights_half():
    att = SpatialAttention()
    f = Tensor(np.random.default_rng(2).normal(size=(2, 5, 6, 6)))
    m, fw = att(f)
    assert m.shape == (2, 1, 6, 6)
    np.testing.assert_array_equal(m.data, 0.5)
    np.testing.assert_array_equal(fw.data, 0.5 * f.data)


@settings(max_examples=30, deadline=None)
@given(arrays(np.float64, (1, 3, 5, 4), elements=st.floats(-10, 10)))
def test_attention_map_strictly_inside_unit_interval(f):
    # float64 sigmoid saturates to exactly 1.0 past a logit of ~37
    att = SpatialAttention()
    randomise(att, np.random.default_rng(3), scale=0.02)
    m, _ = att(Tensor(f))
    assert np.all(m.data > 0) and np.all(m.data < 1)


def test_attention_matches_scalar_reference():
    rng = np.random.default_rng(4)
    att = SpatialAttention()
    randomise(att, rng)
    f = rng.normal(size=(2, 3, 5, 6))
    m, fw = att(Tensor(f))
    m_ref, fw_ref = scalar_spatial_attention(f, att.conv.weight.data, att.conv.bias.data)
    np.testing.assert_allclose(m.data, m_ref, atol=1e-12)
    np.testing.assert_allclose(fw.data, fw_ref, atol=1e-12)


def test_attention_any_spatial_size():
    m, _ = SpatialAttention()(Tensor(np.ones((1, 2, 1, 1))))
    assert m.shape == (1, 1, 1, 1)


# -- classifiers ------------------------------------------------------------------

def test_haad_output_shape():
    clf = DomainClassifier(64, DomainClassifierConfig.high())
    out = haad_forward(Tensor(np.random.default_rng(5).normal(size=(2, 64, 16, 16))), clf)
    assert out.shape == (2, 1, 4, 4)
    assert DomainClassifierConfig.high().output_size(16) == 4


def test_haad_structure():
    clf = DomainClassifier(8, DomainClassifierConfig.high())
    assert [c.out_channels for c in clf.convs] == [128, 256, 512, 1]
    assert [c.weight.shape[2] for c in clf.convs] == [4, 4, 4, 4]
    assert len(clf.norms) == 2
    assert [n.weight.shape[0] for n in clf.norms] == [256, 512]


def test_haad_zero_weights_give_bias():
    clf = DomainClassifier(4, DomainClassifierConfig.high((8, 8, 8, 1)))
    clf.convs[-1].bias.data = np.array([0.37])
    out = clf(Tensor(np.random.default_rng(6).normal(size=(2, 4, 8, 8))))
    np.testing.assert_array_equal(out.data, 0.37)


def test_haad_rejects_tiny_input():
    clf = DomainClassifier(4, DomainClassifierConfig.high((8, 8, 8, 1)))
    with pytest.raises(ValueError):
        clf(Tensor(np.ones((1, 4, 3, 3))))


def test_laad_preserves_resolution_and_is_local():
    rng = np.random.default_rng(7)
    clf = DomainClassifier(8, DomainClassifierConfig.low((16, 16, 16, 1))).eval()
    randomise(clf, rng)
    x = rng.normal(size=(2, 8, 5, 6))
    out = laad_forward(Tensor(x), clf)
    assert out.shape == (2, 1, 5, 6)
    perm = rng.permutation(30)
    xp = x.reshape(2, 8, 30)[:, :, perm].reshape(2, 8, 5, 6)
    outp = clf(Tensor(xp)).data
    np.testing.assert_allclose(outp.reshape(2, 30), out.data.reshape(2, 30)[:, perm], atol=1e-12)
    single = clf(Tensor(np.ones((1, 8, 1, 1))))
    assert single.shape == (1, 1, 1, 1)


def test_laad_default_filters():
    clf = DomainClassifier(16, DomainClassifierConfig.low())
    assert [c.out_channels for c in clf.convs] == [128, 256, 512, 1]
    assert all(c.weight.shape[2:] == (1, 1) and c.stride == 1 and c.padding == 0 for c in clf.convs)


def test_classifier_config_validation():
    with pytest.raises(ValueError):
        DomainClassifierConfig(layer_filters=(8, 8, 2))


def test_full_haad_stack_gradcheck():
    rng = np.random.default_rng(8)
    branch = AdversarialBranch(3, DomainClassifierConfig.high((4, 5, 3, 1)), use_attention=True)
    randomise(branch, rng, 0.5)
    x = Tensor(rng.normal(size=(2, 3, 8, 8)))
    d = [1, 0]
    branch.train()
    branch(x)  # populate running stats
    branch.eval()
    params = dict(branch.named_parameters())
    reversed_side = {n: -1.0 for n in params if n.startswith("attention")}
    report = grad_check(
        lambda: bce_discriminator_loss(branch(x, 1.0), d), params,
        tolerance=1e-3, modules=[branch], expected_scale=reversed_side,
    )
    assert report.passed, report.summary()


# -- losses ---------------------------------------------------------------------------

def test_bce_maximal_confusion():
    assert bce_discriminator_loss(Tensor(np.zeros((3, 1, 2, 2))), [1, 0, 1]).item() == pytest.approx(math.log(2), abs=1e-12)


def test_bce_perfect_discriminator():
    loss = bce_discriminator_loss(Tensor(np.full((1, 1, 2, 2), 40.0)), [1]).item()
    assert loss < 1e-6


def test_bce_example_value():
    p = [0.9, 0.8, 0.6, 0.5]
    logits = Tensor(np.array([logit(v) for v in p]).reshape(1, 1, 2, 2))
    expected = -sum(math.log(v) for v in p) / 4
    assert expected == pytest.approx(0.383119, abs=1e-6)
    assert bce_discriminator_loss(logits, [1]).item() == pytest.approx(expected, abs=1e-12)


def test_lsq_examples():
    big = Tensor(np.full((1, 1, 1, 2), 800.0))
    assert lsq_discriminator_loss(big, [1]).item() == 0.0
    assert lsq_discriminator_loss(big, [0]).item() == 1.0
    logits = Tensor(np.array([0.0, logit(0.75)]).reshape(1, 1, 1, 2))
    assert lsq_discriminator_loss(logits, [1]).item() == pytest.approx(0.15625, abs=1e-12)


def test_losses_match_scalar_references():
    rng = np.random.default_rng(9)
    for _ in range(20):
        logits = rng.normal(0, 3, size=(4, 1, 3, 2))
        d = rng.integers(0, 2, size=4)
        assert abs(bce_discriminator_loss(Tensor(logits), d).item() - scalar_bce(logits, d)) < 1e-10
        assert abs(lsq_discriminator_loss(Tensor(logits), d).item() - scalar_lsq(logits, d)) < 1e-10


def test_label_count_checked():
    with pytest.raises(ValueError):
        bce_discriminator_loss(Tensor(np.zeros((2, 1, 1, 1))), [1])


def test_domain_accuracy():
    logits = np.array([3.0, -2.0, 1.0, 1.0]).reshape(4, 1, 1, 1)
    assert domain_accuracy(logits, [1, 0, 0, 1]) == 0.75


# -- objective ---------------------------------------------------------------------

def test_objective_supervised_fallback():
    cfg = MaadObjectiveConfig(enable_had=False, enable_lad=False)
    l_det = Tensor(1.3)
    assert maad_objective(l_det, Tensor(0.5), Tensor(0.5), cfg) is l_det


def test_objective_had_only():
    cfg = MaadObjectiveConfig(lambda_had=0.001, enable_lad=False)
    total = maad_objective(Tensor(1.0), Tensor(0.7), Tensor(123.0), cfg)
    assert total.item() == pytest.approx(1.0007, abs=1e-15)


def test_objective_all_enabled():
    cfg = MaadObjectiveConfig(lambda_had=0.001, lambda_lad=0.0001)
    assert maad_objective(Tensor(2.0), Tensor(0.6), Tensor(0.5), cfg).item() == pytest.approx(2.00065, abs=1e-15)


def test_objective_disabled_terms_get_no_gradient():
    p = Parameter(np.array([1.0]))
    cfg = MaadObjectiveConfig(enable_lad=False)
    maad_objective(Tensor(1.0) + p * 0.0, p * 2.0, Parameter(np.array([3.0])) * 1.0, cfg).backward()
    assert p.grad[0] == pytest.approx(0.002)


def test_objective_rejects_negative_weights():
    with pytest.raises(ValueError):
        MaadObjectiveConfig(lambda_had=-1.0)


def test_minimax_wiring_matches_two_separate_passes():
    """One backward through GRL == (+grad for discriminator, -lambda grad for extractor)."""
    rng = np.random.default_rng(10)
    extractor = Conv2d(3, 4, 3, padding=1)
    randomise(extractor, rng)
    branch = AdversarialBranch(4, DomainClassifierConfig.high((4, 4, 4, 1)), use_attention=True)
    randomise(branch, rng)
    branch.eval()
    x = Tensor(rng.normal(size=(4, 3, 8, 8)))
    d = [1, 1, 0, 0]
    lam_p, lam_w = 0.5, 0.01

    def run(reverse):
        extractor.zero_grad()
        branch.zero_grad()
        feats = extractor(x)
        loss = lam_w * bce_discriminator_loss(branch(feats, lam_p, reverse=reverse), d)
        loss.backward()
        return {n: p.grad.copy() for n, p in extractor.named_parameters()}, {n: p.grad.copy() for n, p in branch.named_parameters()}

    ext_grl, disc_grl = run(True)
    ext_plain, disc_plain = run(False)
    for name in disc_grl:
        if name.startswith("attention"):
            np.testing.assert_allclose(disc_grl[name], -lam_p * disc_plain[name], atol=1e-14)
        else:
            np.testing.assert_array_equal(disc_grl[name], disc_plain[name])
    for name in ext_grl:
        np.testing.assert_allclose(ext_grl[name], -lam_p * ext_plain[name], rtol=1e-12, atol=1e-16)


# -- MMD --------------------------------------------------------------------------------

def test_mmd_identical_sets_zero():
    x = np.random.default_rng(11).normal(size=(5, 3))
    assert abs(mmd_rbf(Tensor(x), Tensor(x.copy()), 1.3).item()) < 1e-12


def test_mmd_single_sample_closed_form():
    x = np.array([[0.5, -1.0, 2.0]])
    y = np.array([[1.0, 0.0, 1.5]])
    sigma = 0.8
    expected = 2 - 2 * math.exp(-np.sum((x - y) ** 2) / (2 * sigma**2))
    assert mmd_rbf(Tensor(x), Tensor(y), sigma).item() == pytest.approx(expected, abs=1e-12)


def test_mmd_matches_scalar_reference_and_nonnegative():
    rng = np.random.default_rng(12)
    for _ in range(20):
        xs = rng.normal(size=(4, 3))
        ys = rng.normal(0.5, 1.0, size=(3, 3))
        sigma = median_bandwidth(xs, ys)
        val = mmd_rbf(Tensor(xs), Tensor(ys)).item()
        assert abs(val - scalar_mmd(xs.tolist(), ys.tolist(), sigma)) < 1e-10
        assert val >= -1e-15


def test_mmd_empty_rejected():
    with pytest.raises(ValueError):
        mmd_rbf(Tensor(np.zeros((0, 3))), Tensor(np.ones((2, 3))))


def test_mmd_gradient():
    rng = np.random.default_rng(13)
    xs = Tensor(rng.normal(size=(3, 4)), requires_grad=True)
    ys = Tensor(rng.normal(size=(2, 4)), requires_grad=True)
    assert grad_check(lambda: mmd_rbf(xs, ys, 1.5), [xs, ys]).passed
