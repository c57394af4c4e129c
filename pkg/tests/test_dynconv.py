import numpy as np
import pytest

from ddrf import autodiff as ad
from ddrf.dynconv import DynamicConv, StaticConv, dynamic_forward, static_forward
from fdcheck import check, probe


def _zero_attention(layer):
    for p in (layer.att_w1, layer.att_b1, layer.att_w2, layer.att_b2):
        p.values = np.zeros(p.shape)


def test_single_candidate_is_static_bit_exact():
    rng = np.random.default_rng(0)
    layer = DynamicConv(3, 5, 3, candidates=1, rng=rng)
    x = ad.constant(rng.normal(size=(2, 3, 9, 9)))
    ref = static_forward(ad.constant(layer.weights.values[0]), ad.constant(layer.biases.values[0]), x)
    assert np.array_equal(dynamic_forward(layer, x).values, ref.values)


@pytest.mark.parametrize("literal", [True, False])
def test_identical_candidates_uniform_pi(literal):
    rng = np.random.default_rng(1)
    n = 4
    layer = DynamicConv(3, 2, 3, candidates=n, rng=rng, eq6_literal=literal)
    w = rng.normal(size=(2, 3, 3, 3))
    b = rng.normal(size=2)
    layer.weights.values = np.broadcast_to(w, (n,) + w.shape).copy()
    layer.biases.values = np.tile(b, (n, 1))
    _zero_attention(layer)
    factor = 1.0 / n if literal else 1.0
    x = ad.constant(rng.normal(size=(3, 3, 8, 8)))
    ref = static_forward(ad.constant(factor * w), ad.constant(factor * b), x)
    assert np.max(np.abs(dynamic_forward(layer, x).values - ref.values)) < 1e-12


def test_uniform_pi_equals_average_candidate():
    rng = np.random.default_rng(2)
    n = 3
    layer = DynamicConv(2, 4, 3, candidates=n, rng=rng, eq6_literal=False)
    layer.biases.values = rng.normal(size=(n, 4))
    _zero_attention(layer)
    x = ad.constant(rng.normal(size=(2, 7, 7)))
    ref = static_forward(ad.constant(layer.weights.values.mean(0)), ad.constant(layer.biases.values.mean(0)), x)
    assert np.max(np.abs(dynamic_forward(layer, x).values - ref.values)) < 1e-12


def test_attention_depends_on_input():
    rng = np.random.default_rng(3)
    layer = DynamicConv(4, 4, 3, candidates=4, rng=rng)
    # scale up the output layer so the test does not hinge on the near-uniform init
    layer.att_w2.values = rng.normal(size=layer.att_w2.shape)
    x1 = rng.normal(size=(4, 6, 6))
    x2 = x1 + np.array([3.0, -2.0, 1.0, 0.5])[:, None, None]
    p1, p2 = layer.attention(ad.constant(x1[None])).values, layer.attention(ad.constant(x2[None])).values
    assert np.max(np.abs(p1 - p2)) > 1e-6
    assert np.allclose(p1.sum(), 1.0, atol=1e-12) and np.all(p1 >= 0)


def test_permuting_candidates_with_attention():
    rng = np.random.default_rng(4)
    layer = DynamicConv(3, 2, 3, candidates=4, rng=rng)
    layer.att_w2.values = rng.normal(size=layer.att_w2.shape)
    layer.att_b2.values = rng.normal(size=4)
    layer.biases.values = rng.normal(size=(4, 2))
    x = ad.constant(rng.normal(size=(2, 3, 6, 6)))
    base = dynamic_forward(layer, x).values
    perm = np.array([2, 0, 3, 1])
    layer.weights.values = layer.weights.values[perm]
    layer.biases.values = layer.biases.values[perm]
    layer.att_w2.values = layer.att_w2.values[:, perm]
    layer.att_b2.values = layer.att_b2.values[perm]
    assert np.allclose(dynamic_forward(layer, x).values, base, rtol=0, atol=1e-12)


def test_every_candidate_receives_gradient():
    rng = np.random.default_rng(5)
    layer = DynamicConv(3, 2, 3, candidates=4, rng=rng)
    x = ad.constant(rng.normal(size=(2, 3, 6, 6)))
    with ad.GradientTape() as tape:
        loss = ad.sum(ad.square(dynamic_forward(layer, x)))
    (gw,) = tape.gradient(loss, [layer.weights])
    assert all(np.linalg.norm(gw[k]) > 0 for k in range(4))


def test_dynamic_layer_gradients():
    rng = np.random.default_rng(6)
    layer = DynamicConv(2, 2, 3, candidates=3, rng=rng)
    layer.att_w2.values = rng.normal(size=layer.att_w2.shape)
    layer.biases.values = rng.normal(size=(3, 2))
    x = ad.parameter(rng.normal(size=(2, 2, 5, 5)))
    params = [x] + [p for _, p in layer.parameters()]
    r = probe((2, 2, 5, 5), rng)

    def loss(x, w, b, a1, c1, a2, c2):
        layer.weights, layer.biases = w, b
        layer.att_w1, layer.att_b1, layer.att_w2, layer.att_b2 = a1, c1, a2, c2
        return ad.sum(ad.mul(dynamic_forward(layer, x), r))

    assert check(loss, params) < 1e-4


def test_mixture_init_matches_he_variance():
    rng = np.random.default_rng(7)
    for literal in (True, False):
        layer = DynamicConv(32, 32, 3, candidates=4, rng=rng, eq6_literal=literal)
        mix = layer.weights.values.mean(0) / (4 if literal else 1)
        assert np.std(mix) == pytest.approx(np.sqrt(2.0 / (32 * 9)), rel=0.05)


def test_channel_mismatch_rejected():
    layer = DynamicConv(3, 2, 3, candidates=2)
    with pytest.raises(ValueError, match="3 input channels"):
        layer(ad.constant(np.zeros((4, 5, 5))))
    with pytest.raises(ValueError, match="3 input channels"):
        StaticConv(3, 2)(ad.constant(np.zeros((4, 5, 5))))


def test_static_identity_and_bias_only():
    x = ad.constant(np.random.default_rng(8).normal(size=(1, 6, 6)))
    w = np.zeros((1, 1, 3, 3))
    w[0, 0, 1, 1] = 1.0
    assert np.array_equal(static_forward(ad.constant(w), None, x).values, x.values)
    out = static_forward(ad.constant(np.zeros((2, 1, 3, 3))), ad.constant([0.25, -1.0]), x).values
    assert np.all(out[0] == 0.25) and np.all(out[1] == -1.0)


def test_unbatched_input_keeps_rank():
    layer = DynamicConv(2, 3, 3, candidates=2)
    assert layer(ad.constant(np.ones((2, 5, 5)))).shape == (3, 5, 5)
    assert layer.attention(ad.constant(np.ones((2, 5, 5)))).shape == (2,)


def test_literal_candidate_steps_match_unscaled_mixture():
    # Adam with the N-fold candidate step on the literal layer follows the
    # same mixed kernels as the plain layer holding candidates / N
    rng = np.random.default_rng(11)
    x = rng.normal(size=(2, 3, 9, 9))
    target = rng.normal(size=(2, 5, 9, 9))
    lit = DynamicConv(3, 5, 3, 4, np.random.default_rng(1), eq6_literal=True)
    plain = DynamicConv(3, 5, 3, 4, np.random.default_rng(2), eq6_literal=False)
    for name, p in plain.parameters():
        src = dict(lit.parameters())[name].values
        p.values = src / 4 if name in ("weights", "biases") else src.copy()
    opts = [ad.Adam([p for _, p in layer.parameters()], lr=1e-2, eps=0.0, lr_scales=layer.lr_scales())
            for layer in (lit, plain)]
    for _ in range(5):
        for layer, opt in zip((lit, plain), opts):
            with ad.GradientTape() as tape:
                loss = ad.mean(ad.square(dynamic_forward(layer, x) - target))
            opt.step(tape.backward(loss))
    assert lit.lr_scales()[:2] == [4.0, 4.0] and plain.lr_scales() == [1.0] * 6
    np.testing.assert_allclose(lit.weights.values / 4, plain.weights.values, rtol=1e-9, atol=1e-12)
    np.testing.assert_allclose(dynamic_forward(lit, x).values, dynamic_forward(plain, x).values, atol=1e-10)


def test_optimiser_scales_are_checked():
    x = ad.parameter([1.0, 1.0])
    with pytest.raises(ValueError, match="scales"):
        ad.SGD([x], lr_scales=[1.0, 2.0])
    fast, slow = ad.parameter([1.0]), ad.parameter([1.0])
    opt = ad.SGD([fast, slow], lr=0.1, lr_scales=[3.0, 1.0])
    with ad.GradientTape() as tape:
        loss = ad.sum(fast) + ad.sum(slow)
    opt.step(tape.backward(loss))
    assert fast.values[0] == pytest.approx(0.7) and slow.values[0] == pytest.approx(0.9)
