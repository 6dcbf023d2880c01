"""Adam with decoupled weight decay, operating on named parameter dicts."""

import numpy as np


class AdamState:
    """Per-parameter moment buffers plus the shared step counter."""

    def __init__(self, params, learning_rate, weight_decay=0.0,
                 beta1=0.9, beta2=0.999, epsilon=1e-8):
        self.learning_rate = learning_rate
        self.weight_decay = weight_decay
        self.beta1 = beta1
        self.beta2 = beta2
        self.epsilon = epsilon
        self.step_count = 0
        self.m = {k: np.zeros_like(p.data) for k, p in params.items()}
        self.v = {k: np.zeros_like(p.data) for k, p in params.items()}


def adam_step(params, state):
    """One bias-corrected Adam update from each parameter's ``.grad``.

    Decoupled weight decay is applied to the parameter before the adaptive
    step; parameters with no gradient this step only decay.
    """
    state.step_count += 1
    t = state.step_count
    lr, wd = state.learning_rate, state.weight_decay
    bc1 = 1.0 - state.beta1 ** t
    bc2 = 1.0 - state.beta2 ** t
    for name, p in params.items():
        g = p.grad
        if g is not None and g.shape != p.data.shape:
            raise ValueError(f"gradient shape {g.shape} != parameter shape "
                             f"{p.data.shape} for '{name}'")
        if wd:
            p.data *= (1.0 - lr * wd)
        if g is None:
            continue
        m = state.m[name]
        v = state.v[name]
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * g * g
        p.data -= lr * (m / bc1) / (np.sqrt(v / bc2) + state.epsilon)


def zero_grads(params):
    for p in params.values():
        p.grad = None
