"""Adam with bias correction, operating in place on named parameter arrays."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

DEFAULT_LR = 0.0002
DEFAULT_BETA1 = 0.5
DEFAULT_BETA2 = 0.9


@dataclass
class AdamState:
    lr: float = DEFAULT_LR
    beta1: float = DEFAULT_BETA1
    beta2: float = DEFAULT_BETA2
    eps: float = 1e-8
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)

    @classmethod
    def for_params(cls, params, **hyper):
        state = cls(**hyper)
        for name in sorted(params):
            state.m[name] = np.zeros_like(params[name])
            state.v[name] = np.zeros_like(params[name])
        return state


def adam_step(params, grads, state: AdamState):
    """One Adam update of ``params`` (name -> ndarray, modified in place).

    Returns ``(params, state)`` for convenience.
    """
    if set(grads) != set(params):
        raise ValueError(f"adam_step: gradient names {sorted(set(grads) ^ set(params))} do not match parameters")
    state.step += 1
    t = state.step
    c1 = 1.0 - state.beta1 ** t
    c2 = 1.0 - state.beta2 ** t
    for name in sorted(params):
        p, g = params[name], grads[name]
        if name not in state.m:
            state.m[name] = np.zeros_like(p)
            state.v[name] = np.zeros_like(p)
        m, v = state.m[name], state.v[name]
        if g.shape != p.shape or m.shape != p.shape:
            raise ValueError(f"adam_step: shape mismatch for {name}: param {p.shape}, grad {g.shape}, moment {m.shape}")
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * (g * g)
        p -= state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
    return params, state
