"""Dense numerics used by every trainable component.

All training math runs in float64 so the finite-difference gradient
checks can hold a 1e-4 relative tolerance. Matrices are plain numpy
arrays; gradients are hand-derived by the callers and verified here
with ``finite_diff_check``.
"""

from dataclasses import dataclass

import numpy as np

from .errors import DomainError, NumericError, ShapeError

FLOAT = np.float64


def matmul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Matrix product with an explicit shape check.

    a (n, k) @ b (k, m) -> (n, m).
    """
    a = np.asarray(a)
    b = np.asarray(b)
    if a.ndim != 2 or b.ndim != 2:
        raise ShapeError(f"numerics: matmul expects 2-D operands, got {a.shape} and {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"numerics: matmul shapes {a.shape} and {b.shape} are not aligned")
    return a @ b


def softmax(x: np.ndarray) -> np.ndarray:
    """Stable softmax: invariant to adding a constant to every entry."""
    x = np.asarray(x, dtype=FLOAT)
    if x.size == 0:
        raise DomainError("numerics: softmax of an empty vector")
    shifted = x - x.max()
    e = np.exp(shifted)
    return e / e.sum()


def cross_entropy(logits: np.ndarray, target: int) -> tuple[float, np.ndarray]:
    """Softmax cross-entropy loss and its gradient w.r.t. the logits.

    loss = -log softmax(logits)[target], computed via logsumexp so
    saturated logits do not overflow. gradient = softmax(logits) - onehot.
    """
    logits = np.asarray(logits, dtype=FLOAT)
    if not 0 <= target < logits.size:
        raise IndexError(f"numerics: cross_entropy target {target} out of range for {logits.size} classes")
    m = logits.max()
    lse = m + np.log(np.exp(logits - m).sum())
    loss = float(lse - logits[target])
    grad = softmax(logits)
    grad[target] -= 1.0
    return loss, grad


@dataclass
class AdamState:
    """Per-parameter Adam buffers and hyperparameters.

    ``weight_decay`` is classic L2: it is added to the gradient before
    the moment updates, not applied decoupled.
    """

    m: np.ndarray
    v: np.ndarray
    step: int = 0
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 0.0

    @classmethod
    def for_param(cls, param: np.ndarray, lr: float = 1e-3, beta1: float = 0.9,
                  beta2: float = 0.999, eps: float = 1e-8, weight_decay: float = 0.0) -> "AdamState":
        return cls(m=np.zeros_like(param, dtype=FLOAT), v=np.zeros_like(param, dtype=FLOAT),
                   step=0, lr=lr, beta1=beta1, beta2=beta2, eps=eps, weight_decay=weight_decay)


def adam_step(param: np.ndarray, grad: np.ndarray, state: AdamState) -> tuple[np.ndarray, AdamState]:
    """One bias-corrected Adam update, in place on ``param`` and ``state``."""
    if param.shape != grad.shape or param.shape != state.m.shape:
        raise ShapeError(
            f"numerics: adam_step shapes disagree: param {param.shape}, grad {grad.shape}, state {state.m.shape}")
    state.step += 1
    g = grad + state.weight_decay * param if state.weight_decay != 0.0 else grad
    state.m *= state.beta1
    state.m += (1.0 - state.beta1) * g
    state.v *= state.beta2
    state.v += (1.0 - state.beta2) * (g * g)
    m_hat = state.m / (1.0 - state.beta1 ** state.step)
    v_hat = state.v / (1.0 - state.beta2 ** state.step)
    param -= state.lr * m_hat / (np.sqrt(v_hat) + state.eps)
    if not np.all(np.isfinite(param)):
        raise NumericError("numerics: adam_step produced non-finite parameter entries")
    return param, state


def finite_diff_check(loss_fn, params: dict[str, np.ndarray],
                      analytic_grads: dict[str, np.ndarray], h: float = 1e-5) -> float:
    """Compare analytic gradients against central differences.

    ``loss_fn(params) -> float`` must be deterministic. Each entry of each
    array in ``params`` is perturbed in place by +/- h; the relative error
    per entry is |g_a - g_n| / max(1e-8, |g_a| + |g_n|). Returns the worst
    entry over all parameters.
    """
    if h <= 0:
        raise DomainError("numerics: finite_diff_check requires h > 0")
    worst = 0.0
    for name, p in params.items():
        g_analytic = analytic_grads[name]
        if g_analytic.shape != p.shape:
            raise ShapeError(f"numerics: gradient shape {g_analytic.shape} != param shape {p.shape} for '{name}'")
        flat = p.reshape(-1)
        g_flat = g_analytic.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            up = loss_fn(params)
            flat[i] = orig - h
            down = loss_fn(params)
            flat[i] = orig
            if not (np.isfinite(up) and np.isfinite(down)):
                raise NumericError(f"numerics: non-finite loss while probing '{name}'[{i}]")
            g_numeric = (up - down) / (2.0 * h)
            err = abs(g_flat[i] - g_numeric) / max(1e-8, abs(g_flat[i]) + abs(g_numeric))
            if err > worst:
                worst = err
    return worst
