"""The bi-directional joint-embedding training system.

One model owns four networks: an online encoder that receives gradients,
a target encoder updated only by EMA, a forward predictor (context
embedding -> target embedding), and an optional backward predictor
(target embedding -> context embedding). The loss is a convex
combination of the two prediction errors; alpha=1 is the classic
one-directional case and drops the backward predictor entirely.

Three constraint regimes control embedding stability: Unconstrained
(no normalization, no decay; prone to magnitude explosion), Expressive
(layer norm + weight decay), and Restrictive (additionally projecting
every embedding onto the unit sphere).
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor, sphere_project
from .nn import Network, SpecMismatchError, clone_into
from .optim import AdamW, EmaConfig, ema_update

__all__ = [
    "ConstraintMode", "BiJepaModel", "StepMetrics", "sphere_project",
    "forward_pass", "backward_pass", "total_loss", "train_step",
    "encode_for_inference", "predict_forward_for_inference",
]


class ConstraintMode(enum.Enum):
    UNCONSTRAINED = "unconstrained"
    EXPRESSIVE = "expressive"
    RESTRICTIVE = "restrictive"

    @property
    def with_ln(self) -> bool:
        return self is not ConstraintMode.UNCONSTRAINED

    @property
    def weight_decay(self) -> float:
        return 0.0 if self is ConstraintMode.UNCONSTRAINED else 1e-4

    @property
    def project(self) -> bool:
        return self is ConstraintMode.RESTRICTIVE


@dataclass
class StepMetrics:
    total_loss: float
    fwd_loss: float
    bwd_loss: float
    mean_embedding_norm: float
    step: int
    diverged: bool = False


class BiJepaModel:
    """Four networks plus (alpha, tau, constraint mode)."""

    def __init__(self, online_encoder: Network, target_encoder: Network,
                 p_fwd: Network, p_bwd: Network | None, alpha: float,
                 ema: EmaConfig, mode: ConstraintMode):
        if not 0.0 <= alpha <= 1.0:
            raise ValueError(f"alpha must lie in [0,1], got {alpha}")
        if online_encoder.spec() != target_encoder.spec():
            raise SpecMismatchError("online and target encoder specs differ")
        if (p_bwd is None) != (alpha == 1.0):
            raise ValueError("p_bwd must be absent exactly when alpha == 1")
        self.online_encoder = online_encoder
        self.target_encoder = target_encoder
        self.p_fwd = p_fwd
        self.p_bwd = p_bwd
        self.alpha = alpha
        self.ema = ema
        self.mode = mode

    @classmethod
    def create(cls, online_encoder: Network, target_builder, p_fwd: Network,
               p_bwd: Network | None, alpha: float, ema: EmaConfig,
               mode: ConstraintMode) -> "BiJepaModel":
        """Build with the target encoder as a fresh copy of the online one."""
        target = target_builder()
        clone_into(online_encoder, target)
        return cls(online_encoder, target, p_fwd, p_bwd, alpha, ema, mode)

    def trainable_networks(self) -> list[Network]:
        nets = [self.online_encoder, self.p_fwd]
        if self.p_bwd is not None:
            nets.append(self.p_bwd)
        return nets

    def trainable_parameters(self):
        return [p for net in self.trainable_networks() for p in net.parameters()]

    def train_mode(self) -> None:
        for net in (self.online_encoder, self.target_encoder, self.p_fwd, self.p_bwd):
            if net is not None:
                net.train()

    def eval_mode(self) -> None:
        for net in (self.online_encoder, self.target_encoder, self.p_fwd, self.p_bwd):
            if net is not None:
                net.eval()


def _maybe_project(model: BiJepaModel, s: Tensor) -> Tensor:
    return sphere_project(s) if model.mode.project else s


def forward_pass(model: BiJepaModel, x: Tensor, y: Tensor):
    """Predict the target embedding from the context view.

    Returns (prediction, target); the target carries no gradient.
    """
    s_x = _maybe_project(model, model.online_encoder(x))
    pred = _maybe_project(model, model.p_fwd(s_x))
    tgt = ad.stop_gradient(_maybe_project(model, model.target_encoder(y)))
    return pred, tgt


def backward_pass(model: BiJepaModel, x: Tensor, y: Tensor):
    """Predict the context embedding from the target view.

    The target view feeds the online encoder here; gradients reach it
    only through this branch's y input.
    """
    if model.p_bwd is None:
        raise ValueError("backward pass undefined for alpha == 1 (no backward predictor)")
    s_y = _maybe_project(model, model.online_encoder(y))
    pred = _maybe_project(model, model.p_bwd(s_y))
    tgt = ad.stop_gradient(_maybe_project(model, model.target_encoder(x)))
    return pred, tgt


def total_loss(model: BiJepaModel, x: Tensor, y: Tensor, step: int = 0):
    """Convex combination of forward and backward errors.

    Returns (loss tensor, StepMetrics). With alpha == 1 the backward
    branch is never built and the loss is exactly the forward MSE.
    """
    s_x_online = _maybe_project(model, model.online_encoder(x))
    fwd_pred = _maybe_project(model, model.p_fwd(s_x_online))
    fwd_tgt = ad.stop_gradient(_maybe_project(model, model.target_encoder(y)))
    fwd = ad.mse_loss(fwd_pred, fwd_tgt)
    norm = float(np.linalg.norm(s_x_online.values, axis=1).mean())

    alpha = model.alpha
    if model.p_bwd is None:
        loss = fwd
        fwd_val = loss.item()
        metrics = StepMetrics(fwd_val, fwd_val, 0.0, norm, step)
        return loss, metrics

    bwd_pred, bwd_tgt = backward_pass(model, x, y)
    bwd = ad.mse_loss(bwd_pred, bwd_tgt)
    loss = ad.add(ad.scale(fwd, alpha), ad.scale(bwd, 1.0 - alpha))
    metrics = StepMetrics(loss.item(), fwd.item(), bwd.item(), norm, step)
    return loss, metrics


_DIVERGENCE_CEILING = 1e6


def train_step(model: BiJepaModel, opt: AdamW, x: Tensor, y: Tensor,
               step: int = 0) -> StepMetrics:
    """One full update: loss, backprop, optimizer step, then EMA.

    The target encoder is not registered with the optimizer and evolves
    only through the EMA update. A non-finite loss flags divergence and
    skips the update so the recorded history stays meaningful.
    """
    loss, metrics = total_loss(model, x, y, step)
    if not np.isfinite(metrics.total_loss):
        metrics.diverged = True
        return metrics
    if metrics.total_loss > _DIVERGENCE_CEILING:
        metrics.diverged = True

    opt.zero_grad()
    loss.backward()
    if not opt.step():
        metrics.diverged = True
        opt.zero_grad()
        return metrics
    opt.zero_grad()
    ema_update(model.target_encoder, model.online_encoder, model.ema)
    return metrics


def encode_for_inference(model: BiJepaModel, x: Tensor) -> Tensor:
    """Context embedding from the online encoder, projected when the
    Restrictive regime demands unit-norm embeddings at inference.

    The target encoder plays no role once training ends.
    """
    return _maybe_project(model, model.online_encoder(x))


def predict_forward_for_inference(model: BiJepaModel, x: Tensor) -> Tensor:
    """Predicted target embedding: forward predictor over the inference
    encoding, projected under the Restrictive regime."""
    return _maybe_project(model, model.p_fwd(encode_for_inference(model, x)))
