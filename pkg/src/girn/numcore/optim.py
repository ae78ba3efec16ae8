from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


@dataclass
class OptimizerState:
    lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    step: int = 0
    first_moment: dict = field(default_factory=dict)
    second_moment: dict = field(default_factory=dict)

    def __post_init__(self):
        if not (0 < self.beta1 < 1 and 0 < self.beta2 < 1):
            raise ValueError("Adam betas must lie in (0, 1)")
        if self.step < 0:
            raise ValueError("step counter must be >= 0")


def adam_step(params: dict, grads: dict, state: OptimizerState):
    """One bias-corrected Adam update. Returns new params and new state."""
    if params.keys() != grads.keys():
        raise ValueError(f"parameter/gradient key mismatch: {sorted(set(params) ^ set(grads))}")
    t = state.step + 1
    b1, b2 = state.beta1, state.beta2
    c1, c2 = 1.0 - b1 ** t, 1.0 - b2 ** t
    new_params, m_all, v_all = {}, {}, {}
    for name, p in params.items():
        g = np.asarray(grads[name], dtype=np.float64)
        if g.shape != np.shape(p):
            raise ValueError(f"shape mismatch for {name}: param {np.shape(p)} vs grad {g.shape}")
        m = state.first_moment.get(name)
        v = state.second_moment.get(name)
        m = (1 - b1) * g if m is None else b1 * m + (1 - b1) * g
        v = (1 - b2) * g * g if v is None else b2 * v + (1 - b2) * g * g
        new_params[name] = p - state.lr * (m / c1) / (np.sqrt(v / c2) + state.epsilon)
        m_all[name], v_all[name] = m, v
    new_state = OptimizerState(state.lr, b1, b2, state.epsilon, t, m_all, v_all)
    return new_params, new_state
