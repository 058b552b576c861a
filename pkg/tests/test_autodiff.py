"""Gradient and value checks for the reverse-mode core.

Every operation is checked against central finite differences on random
seeded inputs, and a handful of values are pinned to hand-computed
constants so a silent rescaling cannot slip through.
"""

import math

import numpy as np
import pytest

from laguna import autodiff
from laguna.autodiff import Node
from laguna.errors import (
    LabelOutOfRangeError,
    NonScalarLossError,
    NotPositiveDefiniteError,
    NotSymmetricError,
    ShapeMismatchError,
)

GRAD_TOL = 1e-6


def gradcheck(build, arrays, seed_note=""):
    """Compare autodiff grads of a scalar builder against finite differences."""
    nodes = [Node(a) for a in arrays]
    loss = build(*nodes)
    autodiff.backward(loss)
    for i, node in enumerate(nodes):
        def scalar(flat, i=i):
            probe = [a.copy() for a in arrays]
            probe[i] = flat.reshape(arrays[i].shape)
            out = build(*[Node(p) for p in probe])
            return float(out.value[0, 0])

        numeric = autodiff.finite_difference(scalar, arrays[i].ravel().copy())
        err = autodiff.relative_error(node.grad.ravel(), numeric)
        assert err < GRAD_TOL, f"arg {i} rel err {err:.3e} {seed_note}"


# -- values ----------------------------------------------------------------

def test_softmax_pinned_value():
    s = autodiff.softmax_rows(Node([[1.0, 0.0]]))
    assert abs(s.value[0, 0] - 0.7310585786300049) < 1e-12
    assert abs(s.value[0, 1] - 0.2689414213699951) < 1e-12


def test_softmax_rows_sum_to_one():
    rng = np.random.default_rng(7)
    for _ in range(20):
        x = rng.standard_normal((5, 8)) * rng.uniform(0.1, 50.0)
        s = autodiff.softmax_rows(Node(x)).value
        assert np.allclose(s.sum(axis=1), 1.0, atol=1e-12)
        assert np.all(s > 0)


def test_softmax_shift_invariance():
    rng = np.random.default_rng(11)
    for _ in range(10):
        x = rng.standard_normal((4, 6))
        c = rng.uniform(-100.0, 100.0)
        a = autodiff.softmax_rows(Node(x)).value
        b = autodiff.softmax_rows(Node(x + c)).value
        assert np.allclose(a, b, atol=1e-12)


def test_softmax_extreme_logits_finite():
    x = np.array([[1000.0, 0.0, -1000.0], [-800.0, -800.0, -800.0]])
    s = autodiff.softmax_rows(Node(x)).value
    assert np.all(np.isfinite(s))
    assert np.allclose(s.sum(axis=1), 1.0)
    assert np.allclose(s[1], 1.0 / 3.0)


def test_cross_entropy_pinned_value():
    # easy example: logit gap 20 in favor of the true class
    ce = autodiff.cross_entropy(Node([[10.0, -10.0]]), np.array([0]))
    assert abs(ce.value[0, 0] - 2.061153620314381e-09) < 1e-15


def test_cross_entropy_uniform_logits():
    ce = autodiff.cross_entropy(Node(np.zeros((3, 4))), np.array([0, 1, 3]))
    assert abs(ce.value[0, 0] - math.log(4.0)) < 1e-12


def test_cross_entropy_label_bounds():
    with pytest.raises(LabelOutOfRangeError):
        autodiff.cross_entropy(Node(np.zeros((2, 3))), np.array([0, 3]))
    with pytest.raises(LabelOutOfRangeError):
        autodiff.cross_entropy(Node(np.zeros((2, 3))), np.array([-1, 0]))


def test_cholesky_logdet_pinned_values():
    ld = autodiff.cholesky_logdet(Node([[2.0, 1.0], [1.0, 2.0]]))
    assert abs(ld.value[0, 0] - 1.0986122886681098) < 1e-12
    a = np.array([[4.0, 1.0, 0.5], [1.0, 3.0, 0.2], [0.5, 0.2, 2.5]])
    ld3 = autodiff.cholesky_logdet(Node(a))
    assert abs(ld3.value[0, 0] - 3.2880286835565173) < 1e-12


def test_cholesky_logdet_matches_cofactor_oracle():
    rng = np.random.default_rng(3)
    for _ in range(25):
        n = int(rng.integers(2, 6))
        b = rng.standard_normal((n, n + 2))
        m = b @ b.T + 0.5 * np.eye(n)
        got = autodiff.cholesky_logdet(Node(m)).value[0, 0]
        want = math.log(autodiff.cofactor_determinant(m))
        assert abs(got - want) < 1e-8 * max(1.0, abs(want))


def test_cholesky_logdet_rejects_bad_inputs():
    with pytest.raises(NotSymmetricError):
        autodiff.cholesky_logdet(Node([[1.0, 0.5], [0.0, 1.0]]))
    with pytest.raises(NotPositiveDefiniteError):
        autodiff.cholesky_logdet(Node([[1.0, 0.0], [0.0, -1.0]]))
    with pytest.raises(NotPositiveDefiniteError):
        autodiff.cholesky_logdet(Node([[1.0, 1.0], [1.0, 1.0]]))


def test_cholesky_ladder_recovers_near_singular():
    # rank-deficient gram: plain call fails, the jitter ladder succeeds
    v = np.array([[1.0, 2.0], [2.0, 4.0]])
    with pytest.raises(NotPositiveDefiniteError):
        autodiff.cholesky_logdet(Node(v))
    ld = autodiff.cholesky_logdet_ladder(Node(v))
    assert np.isfinite(ld.value[0, 0])


def test_matmul_rejects_bad_shapes():
    with pytest.raises(ShapeMismatchError):
        autodiff.matmul(Node(np.ones((2, 3))), Node(np.ones((4, 2))))
    with pytest.raises(ShapeMismatchError):
        autodiff.matmul(Node(np.ones((2, 0))), Node(np.ones((0, 2))))


def test_backward_requires_scalar():
    with pytest.raises(NonScalarLossError):
        autodiff.backward(autodiff.add(Node(np.ones((2, 2))), Node(np.ones((2, 2)))))


def test_as_matrix_rejects_nonfinite():
    with pytest.raises(ShapeMismatchError):
        Node(np.array([[1.0, np.nan]]))
    with pytest.raises(ShapeMismatchError):
        Node(np.array([[np.inf, 0.0]]))


def test_l2_normalize_rows_unit_norm():
    rng = np.random.default_rng(5)
    x = rng.standard_normal((6, 4)) * 3.0
    u = autodiff.l2_normalize_rows(Node(x)).value
    assert np.allclose(np.linalg.norm(u, axis=1), 1.0, atol=1e-12)


def test_cosine_rows_pinned_value():
    a = np.array([[1.0, 0.0]])
    b = np.array([[1.0, 1.0]])
    c = autodiff.cosine_rows(Node(a), Node(b)).value
    assert abs(c[0, 0] - 0.7071067811865476) < 1e-12


# -- gradients -------------------------------------------------------------

def test_grad_matmul_chain():
    rng = np.random.default_rng(0)
    for trial in range(5):
        a = rng.standard_normal((3, 4))
        b = rng.standard_normal((4, 2))

        def build(na, nb):
            return autodiff.sum_(autodiff.tanh(autodiff.matmul(na, nb)))

        gradcheck(build, [a, b], f"trial {trial}")


def test_grad_add_sub_mul_scale():
    rng = np.random.default_rng(1)
    a = rng.standard_normal((2, 5))
    b = rng.standard_normal((2, 5))

    def build(na, nb):
        s = autodiff.add(autodiff.mul(na, nb), autodiff.sub(na, nb))
        return autodiff.mean(autodiff.scale(s, 1.7))

    gradcheck(build, [a, b])


def test_grad_add_rowvec_bias():
    rng = np.random.default_rng(2)
    x = rng.standard_normal((4, 3))
    bias = rng.standard_normal((1, 3))

    def build(nx, nb):
        return autodiff.sum_(autodiff.tanh(autodiff.add_rowvec(nx, nb)))

    gradcheck(build, [x, bias])


def test_grad_softmax_rows():
    rng = np.random.default_rng(3)
    x = rng.standard_normal((3, 5))
    w = rng.standard_normal((3, 5))

    def build(nx, nw):
        return autodiff.sum_(autodiff.mul(autodiff.softmax_rows(nx), nw))

    gradcheck(build, [x, w])


def test_grad_cross_entropy():
    rng = np.random.default_rng(4)
    for trial in range(4):
        logits = rng.standard_normal((6, 4)) * 2.0
        y = rng.integers(0, 4, size=6)

        def build(nl):
            return autodiff.cross_entropy(nl, y)

        gradcheck(build, [logits], f"trial {trial}")


def test_grad_abs_away_from_kink():
    rng = np.random.default_rng(6)
    x = rng.standard_normal((4, 4))
    x[np.abs(x) < 0.1] += 0.3  # keep clear of the nondifferentiable point

    def build(nx):
        return autodiff.mean(autodiff.abs_(nx))

    gradcheck(build, [x])


def test_grad_l2_normalize_and_cosine():
    rng = np.random.default_rng(8)
    for trial in range(3):
        a = rng.standard_normal((3, 6))
        b = rng.standard_normal((4, 6))
        w = rng.standard_normal((3, 4))

        def build(na, nb):
            return autodiff.sum_(autodiff.mul(autodiff.cosine_rows(na, nb), Node(w)))

        gradcheck(build, [a, b], f"trial {trial}")


def test_grad_cholesky_logdet():
    rng = np.random.default_rng(9)
    for trial in range(4):
        n = 4
        b = rng.standard_normal((n, n + 3))
        m = b @ b.T + np.eye(n)

        # perturb through a symmetric parameterization so probes stay valid
        def build(nb):
            gram = autodiff.matmul(nb, autodiff.transpose(nb))
            return autodiff.cholesky_logdet(gram)

        gradcheck(build, [b], f"trial {trial}")


def test_grad_slice_concat():
    rng = np.random.default_rng(10)
    x = rng.standard_normal((3, 6))

    def build(nx):
        left = autodiff.slice_cols(nx, 0, 3)
        right = autodiff.slice_cols(nx, 3, 6)
        swapped = autodiff.concat_cols([right, left])
        return autodiff.sum_(autodiff.tanh(swapped))

    gradcheck(build, [x])


def test_grad_accumulates_on_shared_node():
    # same node used twice: grads from both paths must add
    x = np.array([[1.5, -0.5]])
    n = Node(x)
    loss = autodiff.sum_(autodiff.add(autodiff.mul(n, n), n))
    autodiff.backward(loss)
    assert np.allclose(n.grad, 2.0 * x + 1.0, atol=1e-12)


def test_zero_grad_resets():
    n = Node(np.ones((2, 2)))
    loss = autodiff.sum_(n)
    autodiff.backward(loss)
    assert np.allclose(n.grad, 1.0)
    n.zero_grad()
    assert np.allclose(n.grad, 0.0)


def test_deep_graph_backward_no_recursion_limit():
    # iterative topo-sort must survive graphs deeper than CPython's stack
    n = Node(np.array([[0.1]]))
    out = n
    for _ in range(5000):
        out = autodiff.scale(out, 1.0001)
    autodiff.backward(autodiff.sum_(out))
    assert np.isfinite(n.grad[0, 0])
    assert n.grad[0, 0] > 1.0
