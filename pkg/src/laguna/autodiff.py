"""Matrix-valued reverse-mode autodiff on dense float64 arrays.

The graph is define-by-run: every op returns a fresh :class:`Node` holding the
forward value plus a closure that scatters the upstream gradient to its
parents.  ``backward(loss)`` walks the graph once in reverse topological
order.  There is no tape reuse; training loops rebuild the graph each step.

Values are plain ``numpy.ndarray`` (2-D, float64).  Ops validate shapes
eagerly and raise package exceptions rather than letting numpy broadcast
silently.
"""

from __future__ import annotations

import math

import numpy as np

from .errors import (
    LabelOutOfRangeError,
    NonPositiveTemperatureError,
    NonScalarLossError,
    NotPositiveDefiniteError,
    NotSymmetricError,
    ShapeMismatchError,
)

#: Jitter escalation ladder for Gram log-determinants: try the matrix as-is,
#: then retry with progressively larger diagonal bumps before giving up.
JITTER_LADDER = (0.0, 1e-8, 1e-6, 1e-4)


def as_matrix(data) -> np.ndarray:
    """Coerce input to a 2-D float64 array; 1-D becomes a single row.

    Raises ShapeMismatchError for higher ranks or non-finite entries.
    """
    arr = np.asarray(data, dtype=np.float64)
    if arr.ndim == 1:
        arr = arr.reshape(1, -1)
    if arr.ndim != 2:
        raise ShapeMismatchError(f"expected a matrix, got ndim={arr.ndim}")
    if not np.all(np.isfinite(arr)):
        raise ShapeMismatchError("matrix contains non-finite entries")
    return arr


class Node:
    """One vertex of the computation graph.

    value    -- forward result, 2-D float64 array
    grad     -- accumulated d(loss)/d(value), same shape, starts at zeros
    _parents -- upstream nodes this one was computed from
    _backward-- closure that adds this node's contribution to parent grads
    """

    __slots__ = ("value", "grad", "_parents", "_backward")

    def __init__(self, value, parents=(), backward=None):
        self.value = as_matrix(value)
        self.grad = np.zeros_like(self.value)
        self._parents = tuple(parents)
        self._backward = backward if backward is not None else lambda: None

    @property
    def shape(self):
        return self.value.shape

    def zero_grad(self):
        self.grad = np.zeros_like(self.value)

    def __repr__(self):
        r, c = self.value.shape
        return f"Node(shape=({r}, {c}))"


def constant(data) -> Node:
    """Leaf node that never receives gradient updates of interest."""
    return Node(data)


def _binary_same_shape(a: Node, b: Node, opname: str):
    if a.value.shape != b.value.shape:
        raise ShapeMismatchError(
            f"{opname}: shapes {a.value.shape} and {b.value.shape} differ"
        )


def add(a: Node, b: Node) -> Node:
    _binary_same_shape(a, b, "add")
    out = Node(a.value + b.value, (a, b))

    def _backward():
        a.grad += out.grad
        b.grad += out.grad

    out._backward = _backward
    return out


def add_rowvec(a: Node, bias: Node) -> Node:
    """Add a 1 x C bias row to every row of an N x C matrix."""
    if bias.value.shape[0] != 1 or bias.value.shape[1] != a.value.shape[1]:
        raise ShapeMismatchError(
            f"add_rowvec: bias {bias.value.shape} incompatible with {a.value.shape}"
        )
    out = Node(a.value + bias.value, (a, bias))

    def _backward():
        a.grad += out.grad
        bias.grad += out.grad.sum(axis=0, keepdims=True)

    out._backward = _backward
    return out


def sub(a: Node, b: Node) -> Node:
    _binary_same_shape(a, b, "sub")
    out = Node(a.value - b.value, (a, b))

    def _backward():
        a.grad += out.grad
        b.grad -= out.grad

    out._backward = _backward
    return out


def mul(a: Node, b: Node) -> Node:
    """Elementwise (Hadamard) product."""
    _binary_same_shape(a, b, "mul")
    out = Node(a.value * b.value, (a, b))

    def _backward():
        a.grad += out.grad * b.value
        b.grad += out.grad * a.value

    out._backward = _backward
    return out


def scale(a: Node, k: float) -> Node:
    """Multiply by a python float constant."""
    k = float(k)
    out = Node(a.value * k, (a,))

    def _backward():
        a.grad += out.grad * k

    out._backward = _backward
    return out


def matmul(a: Node, b: Node) -> Node:
    ar, ac = a.value.shape
    br, bc = b.value.shape
    if ac != br or 0 in (ar, ac, br, bc):
        raise ShapeMismatchError(
            f"matmul: cannot multiply ({ar}, {ac}) by ({br}, {bc})"
        )
    out = Node(a.value @ b.value, (a, b))

    def _backward():
        a.grad += out.grad @ b.value.T
        b.grad += a.value.T @ out.grad

    out._backward = _backward
    return out


def transpose(a: Node) -> Node:
    out = Node(a.value.T, (a,))

    def _backward():
        a.grad += out.grad.T

    out._backward = _backward
    return out


def tanh(a: Node) -> Node:
    t = np.tanh(a.value)
    out = Node(t, (a,))

    def _backward():
        a.grad += out.grad * (1.0 - t * t)

    out._backward = _backward
    return out


def abs_(a: Node) -> Node:
    """Elementwise absolute value; subgradient 0 at exactly zero."""
    out = Node(np.abs(a.value), (a,))

    def _backward():
        a.grad += out.grad * np.sign(a.value)

    out._backward = _backward
    return out


def sum_(a: Node) -> Node:
    """Sum all entries down to a 1x1 node."""
    out = Node(np.array([[a.value.sum()]]), (a,))

    def _backward():
        a.grad += out.grad[0, 0]

    out._backward = _backward
    return out


def mean(a: Node) -> Node:
    """Mean of all entries, as a 1x1 node."""
    n = a.value.size
    out = Node(np.array([[a.value.sum() / n]]), (a,))

    def _backward():
        a.grad += out.grad[0, 0] / n

    out._backward = _backward
    return out


def slice_cols(a: Node, start: int, stop: int) -> Node:
    """View columns [start, stop) as a new node (copying the block)."""
    if not (0 <= start < stop <= a.value.shape[1]):
        raise ShapeMismatchError(
            f"slice_cols: [{start}, {stop}) out of range for {a.value.shape}"
        )
    out = Node(a.value[:, start:stop].copy(), (a,))

    def _backward():
        a.grad[:, start:stop] += out.grad

    out._backward = _backward
    return out


def concat_cols(parts) -> Node:
    parts = list(parts)
    if not parts:
        raise ShapeMismatchError("concat_cols: need at least one block")
    rows = parts[0].value.shape[0]
    for p in parts:
        if p.value.shape[0] != rows:
            raise ShapeMismatchError("concat_cols: row counts differ")
    out = Node(np.concatenate([p.value for p in parts], axis=1), tuple(parts))
    widths = [p.value.shape[1] for p in parts]

    def _backward():
        offset = 0
        for p, w in zip(parts, widths):
            p.grad += out.grad[:, offset:offset + w]
            offset += w

    out._backward = _backward
    return out


def clip_unit(a: Node) -> Node:
    """Clamp entries to [-1, 1]; gradient passes only strictly inside."""
    out = Node(np.clip(a.value, -1.0, 1.0), (a,))
    inside = np.abs(a.value) < 1.0

    def _backward():
        a.grad += out.grad * inside

    out._backward = _backward
    return out


def l2_normalize_rows(a: Node, eps: float = 1e-12) -> Node:
    """Divide each row by its Euclidean norm (rows with norm <= eps divide by eps)."""
    norms = np.linalg.norm(a.value, axis=1, keepdims=True)
    safe = np.maximum(norms, eps)
    y = a.value / safe
    out = Node(y, (a,))
    guarded = norms <= eps

    def _backward():
        u = out.grad
        # d/dx (x/|x|) = u/|x| - x (u.x)/|x|^3 ; guarded rows are a plain
        # division by the constant eps.
        dots = (u * a.value).sum(axis=1, keepdims=True)
        g = u / safe - a.value * dots / safe**3
        g = np.where(guarded, u / eps, g)
        a.grad += g

    out._backward = _backward
    return out


def softmax_rows(a: Node, temperature: float = 1.0) -> Node:
    if temperature <= 0.0:
        raise NonPositiveTemperatureError(f"temperature={temperature}")
    z = a.value / temperature
    z = z - z.max(axis=1, keepdims=True)
    e = np.exp(z)
    s = e / e.sum(axis=1, keepdims=True)
    out = Node(s, (a,))

    def _backward():
        u = out.grad
        dots = (u * s).sum(axis=1, keepdims=True)
        a.grad += s * (u - dots) / temperature

    out._backward = _backward
    return out


def cross_entropy(logits: Node, labels) -> Node:
    """Mean negative log-likelihood of integer labels under row softmax.

    Fused log-sum-exp form; returns a 1x1 node.
    """
    y = np.asarray(labels, dtype=np.int64).ravel()
    n, c = logits.value.shape
    if y.shape[0] != n:
        raise ShapeMismatchError(f"cross_entropy: {y.shape[0]} labels for {n} rows")
    if y.size and (y.min() < 0 or y.max() >= c):
        raise LabelOutOfRangeError(f"labels must lie in [0, {c})")
    z = logits.value
    m = z.max(axis=1, keepdims=True)
    lse = m[:, 0] + np.log(np.exp(z - m).sum(axis=1))
    picked = z[np.arange(n), y]
    out = Node(np.array([[(lse - picked).mean()]]), (logits,))

    def _backward():
        p = np.exp(z - m)
        p /= p.sum(axis=1, keepdims=True)
        p[np.arange(n), y] -= 1.0
        logits.grad += p * (out.grad[0, 0] / n)

    out._backward = _backward
    return out


def _check_square_symmetric(m: np.ndarray, tol: float = 1e-10):
    r, c = m.shape
    if r != c:
        raise ShapeMismatchError(f"expected square matrix, got ({r}, {c})")
    if not np.allclose(m, m.T, atol=tol, rtol=0.0):
        raise NotSymmetricError("matrix deviates from symmetry beyond 1e-10")


def cholesky_logdet(a: Node, jitter: float = 0.0) -> Node:
    """log det of a symmetric positive definite matrix via Cholesky.

    jitter is added to the diagonal before factoring (and is treated as a
    constant: the gradient is the inverse of the jittered matrix).
    """
    _check_square_symmetric(a.value)
    m = a.value
    if jitter:
        m = m + jitter * np.eye(m.shape[0])
    try:
        chol = np.linalg.cholesky(m)
    except np.linalg.LinAlgError as exc:
        raise NotPositiveDefiniteError(str(exc)) from exc
    val = 2.0 * np.log(np.diag(chol)).sum()
    out = Node(np.array([[val]]), (a,))

    def _backward():
        inv = np.linalg.inv(m)
        # symmetrize to kill roundoff asymmetry in the inverse
        a.grad += out.grad[0, 0] * 0.5 * (inv + inv.T)

    out._backward = _backward
    return out


def cholesky_logdet_ladder(a: Node, ladder=JITTER_LADDER) -> Node:
    """cholesky_logdet with escalating diagonal jitter on failure."""
    last: Exception | None = None
    for jitter in ladder:
        try:
            return cholesky_logdet(a, jitter=jitter)
        except NotPositiveDefiniteError as exc:
            last = exc
    raise NotPositiveDefiniteError(
        f"matrix stayed indefinite through jitter ladder {tuple(ladder)}"
    ) from last


def cosine_rows(a: Node, b: Node, eps: float = 1e-12) -> Node:
    """Pairwise cosine similarities: row i of a vs row j of b, clipped to [-1, 1]."""
    if a.value.shape[1] != b.value.shape[1]:
        raise ShapeMismatchError(
            f"cosine_rows: widths {a.value.shape[1]} and {b.value.shape[1]} differ"
        )
    return clip_unit(matmul(l2_normalize_rows(a, eps), transpose(l2_normalize_rows(b, eps))))


def backward(loss: Node):
    """Reverse-accumulate gradients from a scalar loss through the graph."""
    if loss.value.shape != (1, 1):
        raise NonScalarLossError(f"loss has shape {loss.value.shape}, need (1, 1)")
    # iterative topological sort (graphs can be deep for long chains)
    order = []
    seen = set()
    stack = [(loss, iter(loss._parents))]
    seen.add(id(loss))
    while stack:
        node, parents = stack[-1]
        advanced = False
        for p in parents:
            if id(p) not in seen:
                seen.add(id(p))
                stack.append((p, iter(p._parents)))
                advanced = True
                break
        if not advanced:
            order.append(node)
            stack.pop()
    loss.grad = np.ones_like(loss.value)
    for node in reversed(order):
        node._backward()


def finite_difference(f, x: np.ndarray, h: float = 1e-5) -> np.ndarray:
    """Central-difference gradient of scalar f at x, for test oracles."""
    x = np.asarray(x, dtype=np.float64)
    g = np.zeros_like(x)
    it = np.nditer(x, flags=["multi_index"])
    for _ in it:
        idx = it.multi_index
        xp = x.copy()
        xm = x.copy()
        xp[idx] += h
        xm[idx] -= h
        g[idx] = (f(xp) - f(xm)) / (2.0 * h)
    return g


def relative_error(approx: np.ndarray, exact: np.ndarray) -> float:
    """max |a - e| / max(1, |e|) over entries — scale-aware comparison."""
    approx = np.asarray(approx, dtype=np.float64)
    exact = np.asarray(exact, dtype=np.float64)
    denom = np.maximum(1.0, np.abs(exact))
    return float(np.max(np.abs(approx - exact) / denom)) if approx.size else 0.0


def cosine_similarity(u, v, eps: float = 1e-12) -> float:
    """Plain scalar cosine between two vectors (no graph)."""
    u = np.asarray(u, dtype=np.float64).ravel()
    v = np.asarray(v, dtype=np.float64).ravel()
    nu = max(float(np.linalg.norm(u)), eps)
    nv = max(float(np.linalg.norm(v)), eps)
    return float(np.clip(np.dot(u, v) / (nu * nv), -1.0, 1.0))


def cofactor_determinant(m: np.ndarray) -> float:
    """Determinant by Laplace cofactor expansion; O(n!) — test oracle only."""
    m = np.asarray(m, dtype=np.float64)
    n = m.shape[0]
    if n == 1:
        return float(m[0, 0])
    total = 0.0
    for j in range(n):
        minor = np.delete(np.delete(m, 0, axis=0), j, axis=1)
        total += ((-1.0) ** j) * m[0, j] * cofactor_determinant(minor)
    return total


def logdet_reference(m: np.ndarray) -> float:
    """log of the cofactor-expansion determinant (oracle counterpart)."""
    return math.log(cofactor_determinant(m))
