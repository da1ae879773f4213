import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from bdpp import diffcore as dc
from bdpp.searchspace import (
    EDGES,
    OPS,
    ArchParams,
    Genotype,
    ParseError,
    Supernet,
    all_genotypes,
    beta_of_alpha,
    discretize,
    expected_num_weights,
    genotype_to_string,
    mixed_edge_forward,
    string_to_genotype,
    supernet_forward,
)

ALL_SKIP = "|skip~0|+|skip~0|skip~1|+|skip~0|skip~1|skip~2|"


def small_net(**kw):
    args = dict(width=4, depth=1, input_dim=4, num_classes=3, seed=0)
    args.update(kw)
    return Supernet.init(**args)


class TestBeta:
    def test_uniform(self):
        np.testing.assert_allclose(beta_of_alpha(np.zeros((1, 5))), 0.2, atol=1e-15)

    def test_ln3(self):
        np.testing.assert_allclose(beta_of_alpha(np.array([[math.log(3), 0.0]])), [[0.75, 0.25]], atol=1e-15)

    def test_shift(self):
        a = np.random.default_rng(0).normal(size=(6, 5))
        np.testing.assert_allclose(beta_of_alpha(a + 7), beta_of_alpha(a), atol=1e-12)

    def test_arch_property(self):
        arch = ArchParams.zeros()
        assert arch.alpha.shape == (len(EDGES), len(OPS))
        np.testing.assert_allclose(arch.beta, 0.2)


alpha_mats = arrays(np.float64, st.tuples(st.integers(1, 6), st.integers(1, 8)), elements=st.floats(-30, 30))


@settings(max_examples=200, deadline=None)
@given(alpha_mats)
def test_beta_rows_positive_and_normalised(a):
    b = beta_of_alpha(a)
    assert np.all(b > 0)
    np.testing.assert_allclose(b.sum(axis=1), 1.0, atol=1e-12)
    norms = np.linalg.norm(b, axis=1)
    assert np.all(norms >= 1 / math.sqrt(a.shape[1]) - 1e-12)
    assert np.all(norms <= 1 + 1e-12)


@settings(max_examples=200, deadline=None)
@given(alpha_mats, st.floats(0.01, 10), st.floats(-10, 10))
def test_discretize_invariant_under_positive_affine(a, scale, shift):
    # only rows whose leader survives rounding of the transformed values
    if a.shape[1] > 1:
        top2 = np.sort(a, axis=1)[:, -2:]
        if np.any(top2[:, 1] - top2[:, 0] < 1e-9 * (1 + np.abs(top2).max() + abs(shift))):
            return
    assert discretize(a * scale + shift) == discretize(a)


class TestDiscretize:
    def test_uniform_rows_pick_first_op(self):
        assert discretize(ArchParams.zeros()).ops == (0,) * 6

    def test_distinct_maxima(self):
        a = np.zeros((6, 5))
        for e in range(6):
            a[e, (e + 1) % 5] = 1.0
        assert discretize(a).ops == tuple((e + 1) % 5 for e in range(6))

    def test_beta_decay_step_keeps_argmax(self):
        rng = np.random.default_rng(3)
        for _ in range(1000):
            a = rng.normal(scale=3, size=(6, 5))
            step = rng.uniform(0, 1)
            assert discretize(a - step * beta_of_alpha(a)) == discretize(a)


class TestGenotypeStrings:
    def test_all_skip(self):
        assert genotype_to_string(Genotype((1,) * 6)) == ALL_SKIP

    def test_round_trip_exhaustive(self):
        count = 0
        for g in all_genotypes():
            assert string_to_genotype(genotype_to_string(g)) == g
            count += 1
        assert count == 5 ** 6

    def test_names(self):
        assert Genotype((2,) * 6).names() == ("lin",) * 6

    @pytest.mark.parametrize("bad, pos", [
        ("|conv~0|+|skip~0|skip~1|+|skip~0|skip~1|skip~2|", 1),
        ("|skip~1|+|skip~0|skip~1|+|skip~0|skip~1|skip~2|", 6),
        (ALL_SKIP + "x", len(ALL_SKIP)),
        (ALL_SKIP[:-1], len(ALL_SKIP) - 1),
        ("skip~0|", 0),
    ])
    def test_parse_errors_carry_position(self, bad, pos):
        with pytest.raises(ParseError) as exc:
            string_to_genotype(bad)
        assert exc.value.position == pos

    def test_wrong_length_genotype(self):
        with pytest.raises(ValueError):
            genotype_to_string(Genotype((0,) * 5))


class TestMixedEdge:
    def test_uniform_is_mean_of_ops(self):
        net = small_net()
        x = np.random.default_rng(1).normal(size=(3, 4))
        beta = dc.softmax(dc.constant(np.zeros((6, 5))))
        out = mixed_edge_forward(net, dc.constant(x), 0, beta, net.params).data
        p = net.params
        lin = x @ p["L0.e0.lin.W"].T + p["L0.e0.lin.b"]
        lr = np.maximum(x @ p["L0.e0.lin_relu.W"].T + p["L0.e0.lin_relu.b"], 0)
        avg = np.repeat(x.mean(axis=1, keepdims=True), 4, axis=1)
        np.testing.assert_allclose(out, (x + lin + lr + avg) / 5, atol=1e-12)

    def test_saturated_skip(self):
        net = small_net()
        x = np.random.default_rng(2).normal(size=(2, 4))
        a = np.zeros((6, 5))
        a[3, 1] = 1e6
        out = mixed_edge_forward(net, dc.constant(x), 3, dc.softmax(dc.constant(a)), net.params).data
        np.testing.assert_allclose(out, x, atol=1e-9)

    def test_two_op_hand_example(self):
        net = small_net(width=2, input_dim=2, ops=("skip", "none"))
        a = np.zeros((6, 2))
        a[0] = [math.log(3), 0.0]
        out = mixed_edge_forward(net, dc.constant([[1.0, 2.0]]), 0, dc.softmax(dc.constant(a)), net.params).data
        np.testing.assert_allclose(out, [[0.75, 1.5]], atol=1e-15)

    def test_width_mismatch(self):
        net = small_net()
        with pytest.raises(dc.ShapeError):
            mixed_edge_forward(net, dc.constant(np.zeros((2, 3))), 0, dc.constant(np.zeros((6, 5))), net.params)


class TestSupernet:
    def test_output_shape(self):
        net = small_net(depth=2)
        assert supernet_forward(net, np.zeros((6, 5)), net.params, np.ones((7, 4))).shape == (7, 3)

    def test_all_none_gives_head_bias(self):
        net = small_net()
        net.params["head.b"] = np.array([0.1, -0.2, 0.3])
        a = np.full((6, 5), -1e6)
        a[:, 0] = 0.0
        out = supernet_forward(net, a, net.params, np.random.default_rng(0).normal(size=(4, 4))).data
        np.testing.assert_allclose(out, np.tile([0.1, -0.2, 0.3], (4, 1)), atol=1e-12)

    def test_deterministic(self):
        x = np.random.default_rng(5).normal(size=(5, 4))
        a = np.random.default_rng(6).normal(size=(6, 5))
        outs = [supernet_forward(small_net(seed=9), a, small_net(seed=9).params, x).data for _ in range(2)]
        assert outs[0].tobytes() == outs[1].tobytes()

    def test_input_dim_checked(self):
        net = small_net()
        with pytest.raises(dc.ShapeError):
            supernet_forward(net, np.zeros((6, 5)), net.params, np.zeros((2, 5)))

    def test_alpha_shape_checked(self):
        net = small_net()
        with pytest.raises(dc.ShapeError):
            supernet_forward(net, np.zeros((5, 5)), net.params, np.zeros((2, 4)))

    @pytest.mark.parametrize("depth, width", [(1, 1), (1, 8), (3, 2), (5, 16)])
    def test_weight_count_closed_form(self, depth, width):
        net = Supernet.init(width, depth, 8, 3, seed=0)
        assert net.num_weights() == expected_num_weights(depth, width, 2, 3)

    def test_width_differs_from_input(self):
        net = Supernet.init(2, 1, 8, 3, seed=0)
        assert net.stem.shape == (2, 8)
        assert supernet_forward(net, np.zeros((6, 5)), net.params, np.ones((3, 8))).shape == (3, 3)

    def test_invalid_sizes(self):
        with pytest.raises(ValueError):
            Supernet.init(0, 1, 8, 3, seed=0)
        with pytest.raises(ValueError):
            Supernet.init(4, 0, 8, 3, seed=0)

    def test_fingerprint_ignores_values(self):
        a, b = small_net(seed=1), small_net(seed=2)
        assert a.fingerprint() == b.fingerprint()
        assert a.fingerprint() != small_net(depth=2).fingerprint()

    def test_copy_is_deep(self):
        net = small_net()
        c = net.copy()
        c.params["head.b"][0] = 99.0
        assert net.params["head.b"][0] == 0.0

    @pytest.mark.parametrize("batch_norm", [False, True])
    def test_gradients_pass_finite_differences(self, batch_norm):
        net = small_net(width=3, input_dim=3, num_classes=2, seed=4, batch_norm=batch_norm)
        rng = np.random.default_rng(7)
        x = rng.normal(size=(6, 3))
        y = np.array([0, 1, 0, 1, 1, 0])

        def on_alpha(g, a):
            return dc.cross_entropy(supernet_forward(net, a, net.params, x), y)

        assert dc.finite_diff_check(on_alpha, rng.normal(size=(6, 5)), h=1e-5) < 1e-4

        a0 = rng.normal(size=(6, 5))
        for key in ("L0.e2.lin.W", "L0.e5.lin_relu.W", "head.W"):
            def on_w(g, w, key=key):
                params = dict(net.params)
                params[key] = w
                return dc.cross_entropy(supernet_forward(net, a0, params, x), y)

            assert dc.finite_diff_check(on_w, net.params[key], h=1e-5) < 1e-4
