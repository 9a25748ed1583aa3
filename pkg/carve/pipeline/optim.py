"""
Adam optimizer over plain numpy arrays
"""

from dataclasses import dataclass, field

import numpy as np

from carve.errors import ShapeMismatchError


@dataclass
class AdamState:
    step: int = 0
    m: list = field(default_factory=list)
    v: list = field(default_factory=list)


def adam_step(params, grads, state, lr, beta1=0.9, beta2=0.999, eps=1e-8):
    """
    One bias-corrected Adam update

    Args:
        params: list of arrays (not modified)
        grads: list of arrays, same shapes as params
        state: AdamState or None for a fresh optimizer
        lr: learning rate, or one rate per parameter array

    Returns:
        (new_params, new_state)
    """
    if len(params) != len(grads):
        raise ShapeMismatchError(f"{len(params)} parameter arrays but {len(grads)} gradients")
    for i, (p, g) in enumerate(zip(params, grads)):
        if np.shape(p) != np.shape(g):
            raise ShapeMismatchError(
                f"parameter {i} has shape {np.shape(p)} but its gradient has shape {np.shape(g)}"
            )
    if state is None or not state.m:
        state = AdamState(0, [np.zeros_like(p, dtype=np.float64) for p in params],
                          [np.zeros_like(p, dtype=np.float64) for p in params])
    elif len(state.m) != len(params):
        raise ShapeMismatchError("optimizer state does not match the parameter list")

    rates = list(lr) if np.ndim(lr) else [lr] * len(params)
    if len(rates) != len(params):
        raise ShapeMismatchError(f"{len(rates)} learning rates for {len(params)} parameter arrays")

    t = state.step + 1
    new_params, new_m, new_v = [], [], []
    for p, g, m, v, rate in zip(params, grads, state.m, state.v, rates):
        m = beta1 * m + (1.0 - beta1) * g
        v = beta2 * v + (1.0 - beta2) * g * g
        m_hat = m / (1.0 - beta1 ** t)
        v_hat = v / (1.0 - beta2 ** t)
        new_params.append(p - rate * m_hat / (np.sqrt(v_hat) + eps))
        new_m.append(m)
        new_v.append(v)
    return new_params, AdamState(t, new_m, new_v)


class Adam:
    """Stateful wrapper: updates the given arrays in place"""

    def __init__(self, lr, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.state = None

    def step(self, params, grads):
        updated, self.state = adam_step(
            params, grads, self.state, self.lr, self.beta1, self.beta2, self.eps
        )
        for target, value in zip(params, updated):
            target[...] = value


def annealed_lr(lr, iteration, iters, hold=0.5, floor=0.01):
    """
    Learning rate for one iteration: constant over the first `hold` fraction
    of the run, then geometric decay reaching `floor * lr` on the last step
    """
    start = int(hold * iters)
    if iteration < start or iters - start <= 1:
        return lr
    return lr * floor ** ((iteration - start) / (iters - start - 1))
