import numpy as np
import pytest
from hypothesis import given, strategies as st

from reluid.domain import DomainSpec
from reluid.equivalence import (EquivalenceWitness, NormalizationImpossible, WitnessError,
                                apply_transform, check_equivalent, compose_witness,
                                invert_witness, normalize)
from reluid.network import Architecture, NetworkParams, ShapeError
from reluid.oracle import comparative, example1, example2, functional_distance

from conftest import params_and_seed, random_params


def random_witness(rng, arch: Architecture, lo=0.2, hi=5.0) -> EquivalenceWitness:
    K = arch.depth
    perms, scales = [], []
    for k in range(K + 1):
        n = arch.width(k)
        if k in (0, K):
            perms.append(np.arange(n))
            scales.append(np.ones(n))
        else:
            perms.append(rng.permutation(n))
            scales.append(np.exp(rng.uniform(np.log(lo), np.log(hi), n)))
    return EquivalenceWitness(tuple(perms), tuple(scales))


@st.composite
def params_witness(draw, **kw):
    p, seed = draw(params_and_seed(**kw))
    rng = np.random.default_rng(seed + 1)
    return p, random_witness(rng, p.arch), seed


def one_hidden(M1, b1, M0, b0):
    return NetworkParams.from_layers({1: (M1, b1), 0: (M0, b0)})


class TestWitness:
    def test_boundary_layers_fixed(self):
        with pytest.raises(WitnessError):
            EquivalenceWitness(([0], [0, 1], [1, 0]), ([1.0], [1.0, 1.0], [1.0, 1.0]))
        with pytest.raises(WitnessError):
            EquivalenceWitness(([0], [0], [0]), ([2.0], [1.0], [1.0]))

    @pytest.mark.parametrize("scale", [0.0, -1.0, np.inf])
    def test_scales_positive(self, scale):
        with pytest.raises(WitnessError):
            EquivalenceWitness(([0], [0], [0]), ([1.0], [scale], [1.0]))

    def test_not_a_permutation(self):
        with pytest.raises(WitnessError):
            EquivalenceWitness(([0], [0, 0], [0]), ([1.0], [1.0, 1.0], [1.0]))

    def test_size_mismatch(self):
        w = EquivalenceWitness.identity(Architecture((2, 3, 1)))
        with pytest.raises(WitnessError):
            apply_transform(comparative(), w)

    def test_document_round_trip(self, rng):
        w = random_witness(rng, Architecture((3, 4, 2, 1)))
        assert EquivalenceWitness.loads(w.dumps()).close_to(w, 0.0)
        doc = w.to_document()
        assert set(doc) == {"perms", "scales"}


class TestApplyTransform:
    def test_identity_bit_exact(self, rng):
        p = random_params(rng, (3, 4, 2, 1))
        q = apply_transform(p, EquivalenceWitness.identity(p.arch))
        for a, b in zip(p.weights + p.biases, q.weights + q.biases):
            np.testing.assert_array_equal(a, b)

    def test_single_rescale(self):
        p = one_hidden([[1.0]], [0.0], [[1.0]], [0.0])
        w = EquivalenceWitness(([0], [0], [0]), ([1.0], [2.0], [1.0]))
        q = apply_transform(p, w)
        np.testing.assert_array_equal(q.weight(1), [[2.0]])
        np.testing.assert_array_equal(q.bias(1), [0.0])
        np.testing.assert_array_equal(q.weight(0), [[0.5]])

    def test_permutation_moves_rows_and_columns(self):
        p = one_hidden([[1.0, 0.0], [0.0, 3.0]], [1.0, 2.0], [[5.0, 7.0]], [0.0])
        w = EquivalenceWitness(([0], [1, 0], [0, 1]), ([1.0], [1.0, 1.0], [1.0, 1.0]))
        q = apply_transform(p, w)
        np.testing.assert_array_equal(q.weight(1), [[0.0, 3.0], [1.0, 0.0]])
        np.testing.assert_array_equal(q.bias(1), [2.0, 1.0])
        np.testing.assert_array_equal(q.weight(0), [[7.0, 5.0]])

    @given(params_witness())
    def test_function_preserved(self, pw):
        p, w, seed = pw
        q = apply_transform(p, w)
        dom = DomainSpec.cube(p.arch.n_in, -5, 5)
        sup, _ = functional_distance(p, q, dom, n=1000, seed=seed % 1000)
        scale = 1 + float(np.abs(p(dom.sample(64, 0))).max())
        assert sup <= 1e-9 * scale

    @given(params_witness())
    def test_inverse_restores(self, pw):
        p, w, _ = pw
        back = apply_transform(apply_transform(p, w), invert_witness(w))
        assert back.max_abs_diff(p) <= 1e-12 * max(1.0, max(np.abs(a).max() for a in p.weights))


class TestGroupLaws:
    @given(params_witness(max_depth=3))
    def test_compose_matches_sequential(self, pw):
        p, w1, seed = pw
        w2 = random_witness(np.random.default_rng(seed + 7), p.arch)
        seq = apply_transform(apply_transform(p, w1), w2)
        once = apply_transform(p, compose_witness(w1, w2))
        assert once.max_abs_diff(seq) <= 1e-12 * 25 * max(1.0, max(np.abs(a).max() for a in
                                                                    p.weights + p.biases))

    @given(params_witness())
    def test_inverse_two_sided(self, pw):
        _, w, _ = pw
        assert compose_witness(w, invert_witness(w)).is_identity(1e-12)
        assert compose_witness(invert_witness(w), w).is_identity(1e-12)

    def test_identity_neutral(self, rng):
        arch = Architecture((3, 4, 3, 1))
        w = random_witness(rng, arch)
        e = EquivalenceWitness.identity(arch)
        assert compose_witness(e, w).close_to(w, 0.0)
        assert compose_witness(w, e).close_to(w, 0.0)

    @given(st.integers(0, 10_000))
    def test_associative(self, seed):
        rng = np.random.default_rng(seed)
        arch = Architecture((2, 5, 4, 3, 1))
        a, b, c = (random_witness(rng, arch) for _ in range(3))
        left = compose_witness(compose_witness(a, b), c)
        right = compose_witness(a, compose_witness(b, c))
        assert left.close_to(right, 1e-12)


class TestNormalize:
    def test_fixed_point(self):
        p = one_hidden([[0.6, 0.8]], [1.0], [[2.0]], [0.5])
        q, w = normalize(p)
        assert w.is_identity(1e-15)
        assert q.max_abs_diff(p) <= 1e-15

    def test_hand_recursion(self):
        q, w = normalize(one_hidden([[3.0, 4.0]], [1.0], [[2.0]], [0.0]))
        np.testing.assert_allclose(q.weight(1), [[0.6, 0.8]], rtol=0, atol=1e-15)
        np.testing.assert_allclose(w.scales[1], [0.2], rtol=1e-15)
        np.testing.assert_allclose(q.weight(0), [[10.0]], rtol=1e-15)

    def test_comparative_rows(self):
        q, _ = normalize(comparative())
        np.testing.assert_allclose(q.weight(1), [[1 / np.sqrt(2), -1 / np.sqrt(2)],
                                                 [-1 / np.sqrt(5), 2 / np.sqrt(5)]], atol=1e-15)

    def test_zero_row(self):
        with pytest.raises(NormalizationImpossible):
            normalize(one_hidden([[0.0, 0.0], [1.0, 0.0]], [1.0, 0.0], [[1.0, 1.0]], [0.0]))

    @given(params_and_seed())
    def test_unit_rows_and_idempotent(self, ps):
        p, seed = ps
        q, w = normalize(p)
        for k in range(1, p.depth):
            np.testing.assert_allclose(np.linalg.norm(q.weight(k), axis=1), 1.0,
                                       rtol=0, atol=1e-12)
        _, w2 = normalize(q)
        assert w2.is_identity(1e-12)
        assert apply_transform(p, w).max_abs_diff(q) == 0.0


class TestCheckEquivalent:
    @given(params_witness())
    def test_finds_witness(self, pw):
        p, w, _ = pw
        q = apply_transform(p, w)
        found = check_equivalent(p, q)
        assert found is not None
        scale = max(1.0, max(np.abs(a).max() for a in q.weights + q.biases))
        assert apply_transform(p, found).max_abs_diff(q) <= 1e-9 * scale

    @given(params_witness(max_depth=3))
    def test_symmetric(self, pw):
        p, w, _ = pw
        q = apply_transform(p, w)
        a, b = check_equivalent(p, q), check_equivalent(q, p)
        assert (a is None) == (b is None)
        assert compose_witness(a, b).is_identity(1e-9)

    @given(params_witness(max_depth=3))
    def test_reflexive_and_transitive(self, pw):
        p, w, seed = pw
        w2 = random_witness(np.random.default_rng(seed + 3), p.arch)
        q = apply_transform(p, w)
        r = apply_transform(q, w2)
        assert check_equivalent(p, p).is_identity(1e-12)
        assert check_equivalent(p, q) is not None and check_equivalent(q, r) is not None
        assert check_equivalent(p, r) is not None

    def test_example2_not_equivalent(self):
        assert check_equivalent(example2(1.0), example2(2.0)) is None

    def test_example1_sign_flip_not_equivalent(self):
        p, q = example1()
        assert check_equivalent(p, q) is None

    def test_perturbed_bias_not_equivalent(self, rng):
        p = random_params(rng, (3, 3, 2, 1))
        q = p.replace_layer(1, bias=p.bias(1) + np.array([0.5, 0.0]))
        assert check_equivalent(p, q) is None

    def test_architecture_mismatch(self, rng):
        with pytest.raises(ShapeError):
            check_equivalent(random_params(rng, (2, 2, 1)), random_params(rng, (2, 3, 1)))

    def test_near_duplicate_rows_need_optimal_matching(self):
        # two nearly parallel rows: greedy nearest matching would pair them wrongly
        M1 = np.array([[1.0, 0.0], [1.0, 1e-3], [0.0, 1.0]])
        p = one_hidden(M1, [0.0, 0.0, 1.0], [[1.0, 2.0, 3.0]], [0.0])
        w = EquivalenceWitness(([0], [2, 0, 1], [0, 1]), ([1.0], [2.0, 0.5, 3.0], [1.0, 1.0]))
        q = apply_transform(p, w)
        found = check_equivalent(p, q, tol=1e-9)
        assert found is not None
        np.testing.assert_array_equal(found.perms[1], [2, 0, 1])
