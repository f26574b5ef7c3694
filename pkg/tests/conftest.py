"""Shared helpers for the test suite."""

import numpy as np

from siamgrid.autodiff import Tensor, backward, no_grad, tape_scope
from siamgrid.model import TINY_ENCODER, SimSiamModel, forward_views, simsiam_loss


def tiny_model(seed: int) -> SimSiamModel:
    return SimSiamModel(TINY_ENCODER, proj_dim=16, seed=seed)


def tiny_loss_fd_max_err(seed: int, batch: int = 4, size: int = 8, eps: float = 1e-3) -> float:
    """Max finite-difference error over every parameter of a tiny Siamese
    model's full loss, relative to the gradient's global scale.

    Finite differences cannot see stop-gradient: perturbing a parameter
    also moves the stopped targets. The oracle therefore freezes the
    targets at their center values (the non-stopped path), after checking
    bit-exactly that the real stop-gradient loss produces the same
    analytic gradients as that frozen-target surrogate.
    """
    model = tiny_model(seed)
    model.train()
    rng = np.random.default_rng(seed)
    x1 = Tensor(rng.uniform(0, 1, size=(batch, 1, size, size)).astype(np.float32))
    x2 = Tensor(rng.uniform(0, 1, size=(batch, 1, size, size)).astype(np.float32))

    with tape_scope() as tape:
        p1, p2, z1, z2 = forward_views(model, x1, x2)
        const_z1 = Tensor(z1.data.copy())
        const_z2 = Tensor(z2.data.copy())
        backward(simsiam_loss(p1, p2, z1, z2), tape)
    params = model.named_parameters()
    real_grads = {n: p.grad.copy() for n, p in params.items() if p.grad is not None}
    model.zero_grad()

    def surrogate():
        p1s, p2s, _, _ = forward_views(model, x1, x2)
        return simsiam_loss(p1s, p2s, const_z1, const_z2)

    with tape_scope() as tape:
        backward(surrogate(), tape)
    analytic = {}
    for name, p in params.items():
        assert p.grad is not None, f"no gradient reached {name}"
        assert np.array_equal(real_grads[name], p.grad), (
            f"stop-gradient placement differs at {name}"
        )
        analytic[name] = p.grad.astype(np.float64).copy()
    model.zero_grad()

    scale = max(np.abs(g).max() for g in analytic.values())
    worst_abs = 0.0
    with no_grad():
        for name, p in params.items():
            flat = p.data.reshape(-1)
            a = analytic[name].reshape(-1)
            for i in range(flat.size):
                orig = flat[i]
                flat[i] = orig + np.float32(eps)
                hi = surrogate().item()
                flat[i] = orig - np.float32(eps)
                lo = surrogate().item()
                flat[i] = orig
                fd = (hi - lo) / (2.0 * eps)
                scale = max(scale, abs(fd))
                worst_abs = max(worst_abs, abs(a[i] - fd))
    return worst_abs / max(scale, 1e-8)
