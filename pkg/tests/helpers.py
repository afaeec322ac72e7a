import numpy as np

from textdistill import autodiff as ad
from textdistill.classifier import loss, sgd_step
from textdistill.strategies import materialize


def numeric_grad(fn, x, eps=1e-5):
    """Central differences of scalar ``fn`` at array ``x``."""
    x = np.array(x, dtype=np.float64)
    g = np.zeros_like(x)
    for idx in np.ndindex(x.shape):
        old = x[idx]
        x[idx] = old + eps
        hi = fn(x)
        x[idx] = old - eps
        lo = fn(x)
        x[idx] = old
        g[idx] = (hi - lo) / (2 * eps)
    return g


def rel_err(a, b):
    a, b = np.asarray(a, dtype=float), np.asarray(b, dtype=float)
    return float(np.max(np.abs(a - b)) / max(np.max(np.abs(a)), np.max(np.abs(b)), 1e-12))


def check_op(op, *arrays, tol=1e-6):
    """Compare autodiff gradients of ``sum(op(...) * w)`` against central differences."""
    rng = np.random.default_rng(123)
    out = op(*[ad.Tensor(a) for a in arrays])
    w = rng.normal(size=out.shape)
    for k in range(len(arrays)):
        leaves = [ad.Tensor(a, requires_grad=(i == k)) for i, a in enumerate(arrays)]
        (g,) = ad.grad(ad.sum(op(*leaves) * w), [leaves[k]])

        def scalar(v, k=k):
            args = [ad.Tensor(v if i == k else a) for i, a in enumerate(arrays)]
            with ad.no_grad():
                return float(np.sum(op(*args).data * w))

        assert rel_err(g.data, numeric_grad(scalar, arrays[k])) < tol, f"input {k}"


def meta_value(dd, encoder, real_x, real_y, inits, noise=None):
    """Summed real-batch loss after one plain SGD step per init, no second-order graph."""
    with ad.no_grad():
        X = materialize(dd, encoder, noise=noise)
    total = 0.0
    for theta0 in inits:
        leaves = theta0.leaves()
        grads = ad.grad(loss(leaves, X, dd.y, validate=False), leaves.values())
        with ad.no_grad():
            total += loss(sgd_step(theta0, grads, dd.eta), real_x, real_y).item()
    return total
