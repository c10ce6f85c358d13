"""Shared test utilities.

The finite-difference checker here is the reference oracle for every
analytic gradient in the package.  It only ever calls forward code, so a
bug in backward() cannot leak into the expected values.
"""

import numpy as np

from vagnmt.autodiff import Tensor

FD_STEP = 1e-3
FD_RTOL = 1e-3


def finite_difference(func, tensors, step=FD_STEP):
    """Central-difference gradients of a scalar-valued func().

    `func` must re-run the forward pass from the current contents of
    `tensors` and return a Python float.  Entries are perturbed in place.
    """
    grads = []
    for t in tensors:
        flat = t.data.reshape(-1)
        grad = np.zeros_like(flat)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + step
            hi = func()
            flat[i] = orig - step
            lo = func()
            flat[i] = orig
            grad[i] = (hi - lo) / (2.0 * step)
        grads.append(grad.reshape(t.data.shape))
    return grads


def max_rel_err(analytic, numeric):
    analytic = np.asarray(analytic, dtype=np.float64)
    numeric = np.asarray(numeric, dtype=np.float64)
    denom = np.maximum(np.abs(analytic) + np.abs(numeric), 1e-8)
    return float(np.max(np.abs(analytic - numeric) / denom))


def assert_grads_match(loss_fn, tensors, rtol=FD_RTOL, step=FD_STEP):
    """Backprop loss_fn once, then compare each tensor.grad to the oracle."""
    for t in tensors:
        t.grad = None
    loss = loss_fn()
    loss.backward()
    numeric = finite_difference(lambda: float(loss_fn().data), tensors, step)
    for t, num in zip(tensors, numeric):
        assert t.grad is not None, "leaf received no gradient"
        err = max_rel_err(t.grad, num)
        assert err <= rtol, f"gradient mismatch: rel err {err:.3e} > {rtol}"


def rand_tensor(rng, *shape, scale=1.0, dtype=np.float64):
    """Leaf tensor with entries in (-scale, scale), requires_grad on."""
    data = (rng.random(shape) * 2.0 - 1.0) * scale
    return Tensor(data.astype(dtype), requires_grad=True)
