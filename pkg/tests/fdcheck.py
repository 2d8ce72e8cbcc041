"""Central finite-difference oracle for the autodiff tests."""
import numpy as np

from scatseg.numcore import Tape


def analytic_grads(loss_fn, params):
    for p in params:
        p.grad = None
    with Tape() as tape:
        loss = loss_fn()
        tape.backward(loss, params)
    return [p.grad.copy() for p in params]


def numeric_grads(loss_fn, params, eps=1e-5):
    out = []
    for p in params:
        g = np.zeros_like(p.data)
        flat = p.data.reshape(-1)
        for i in range(flat.size):
            keep = flat[i]
            flat[i] = keep + eps
            up = loss_fn().item()
            flat[i] = keep - eps
            down = loss_fn().item()
            flat[i] = keep
            g.reshape(-1)[i] = (up - down) / (2 * eps)
        out.append(g)
    return out


def rel_error(a, b):
    """Norm-wise relative error, robust to tiny gradients."""
    a = np.concatenate([x.ravel() for x in a])
    b = np.concatenate([x.ravel() for x in b])
    return np.linalg.norm(a - b) / max(np.linalg.norm(a) + np.linalg.norm(b), 1e-12)


def check(loss_fn, params, eps=1e-5):
    return rel_error(analytic_grads(loss_fn, params), numeric_grads(loss_fn, params, eps))
