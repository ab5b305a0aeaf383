"""Minimal Adam optimizer used by both training and inversion.

Standard moment estimates with bias correction; hyperparameters follow
the common defaults (beta1=0.9, beta2=0.999, eps=1e-8). State lives in
this object, parameters are updated in place.
"""

from __future__ import annotations

import numpy as np

__all__ = ["Adam", "ADAM_BETA1", "ADAM_BETA2", "ADAM_EPS"]

ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8


class Adam:
    def __init__(self, params: list[np.ndarray], lr: float):
        self.params = params
        self.lr = float(lr)
        self.m = [np.zeros_like(p) for p in params]
        self.v = [np.zeros_like(p) for p in params]
        self.t = 0

    def step(self, grads: list[np.ndarray]) -> None:
        self.t += 1
        b1t = 1.0 - ADAM_BETA1**self.t
        b2t = 1.0 - ADAM_BETA2**self.t
        for p, g, m, v in zip(self.params, grads, self.m, self.v):
            m *= ADAM_BETA1
            m += (1.0 - ADAM_BETA1) * g
            v *= ADAM_BETA2
            v += (1.0 - ADAM_BETA2) * np.square(g)
            p -= self.lr * (m / b1t) / (np.sqrt(v / b2t) + ADAM_EPS)
