"""AdamW with decoupled weight decay, plus the EMA target-network update."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autodiff import Tensor
from .nn import Network, SpecMismatchError


@dataclass
class EmaConfig:
    """Momentum coefficient for the target-network update."""

    tau: float

    def __post_init__(self):
        if not 0.0 <= self.tau <= 1.0:
            raise ValueError(f"tau must lie in [0,1], got {self.tau}")


class AdamW:
    """Decoupled-weight-decay Adam over an explicit parameter list.

    Only registered parameters are ever touched; the target encoder is
    never registered, which is the structural half of the stop-gradient
    guarantee. A NaN/Inf gradient aborts the step and raises the
    ``diverged`` flag instead of corrupting parameters.
    """

    def __init__(self, params: list[Tensor], lr: float, weight_decay: float = 0.0,
                 beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        if weight_decay < 0.0:
            raise ValueError(f"weight decay must be >= 0, got {weight_decay}")
        self.params = list(params)
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.weight_decay = weight_decay
        self.m = [np.zeros_like(p.values) for p in self.params]
        self.v = [np.zeros_like(p.values) for p in self.params]
        self.step_count = 0
        self.diverged = False

    def zero_grad(self) -> None:
        for p in self.params:
            p.grad = None

    def step(self) -> bool:
        """Apply one update from the accumulated ``grad`` slots.

        Returns False (and raises the diverged flag) if any gradient is
        non-finite; parameters are left untouched in that case.
        """
        grads = []
        for p in self.params:
            g = p.grad if p.grad is not None else np.zeros_like(p.values)
            if not np.all(np.isfinite(g)):
                self.diverged = True
                return False
            grads.append(g)

        self.step_count += 1
        t = self.step_count
        b1, b2 = self.beta1, self.beta2
        bc1 = 1.0 - b1 ** t
        bc2 = 1.0 - b2 ** t
        for p, g, m, v in zip(self.params, grads, self.m, self.v):
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * (g * g)
            m_hat = m / bc1
            v_hat = v / bc2
            update = m_hat / (np.sqrt(v_hat) + self.eps)
            if self.weight_decay != 0.0:
                update = update + self.weight_decay * p.values
            p.values -= self.lr * update
        return True


def set_weight_decay(opt: AdamW, weight_decay: float) -> None:
    """Change λ for all subsequent steps."""
    if weight_decay < 0.0:
        raise ValueError(f"weight decay must be >= 0, got {weight_decay}")
    opt.weight_decay = weight_decay


def ema_update(target: Network, online: Network, cfg: EmaConfig) -> None:
    """p̄ ← τ·p̄ + (1−τ)·p for every parameter pair."""
    if target.spec() != online.spec():
        raise SpecMismatchError("ema_update needs identical network specs")
    tau = cfg.tau
    for p_t, p_o in zip(target.parameters(), online.parameters()):
        p_t.values[...] = tau * p_t.values + (1.0 - tau) * p_o.values
