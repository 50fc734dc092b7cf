"""Training objectives. All reductions are means.

The classifier update uses ``combo_ce``; the encoder update uses
``kl_to_uniform``. Nothing here negates the cross-entropy.
"""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass

import torch
import torch.nn.functional as F

from .errors import ConfigError


class AdvForm(str, enum.Enum):
    LSQ = "LSQ"
    LOG = "LOG"


@dataclass(frozen=True)
class LossWeights:
    w_cycle: float = 10.0
    w_adv: float = 1.0
    w_feat: float = 1.0
    w_kl: float = 1.0

    def validate(self) -> None:
        for name in ("w_cycle", "w_adv", "w_feat", "w_kl"):
            if getattr(self, name) < 0:
                raise ConfigError(f"{name} must be >= 0, got {getattr(self, name)}")


def _same_shape(a, b):
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {tuple(a.shape)} vs {tuple(b.shape)}")


def _finite(*tensors):
    for t in tensors:
        if not torch.isfinite(t).all():
            raise ValueError("non-finite discriminator scores")


def cycle_l1(x, x_cycled):
    _same_shape(x, x_cycled)
    return (x_cycled - x).abs().mean()


def feature_l1(feat_out, feat_in):
    _same_shape(feat_out, feat_in)
    return (feat_out - feat_in).abs().mean()


def disc_loss(d_real, d_fake, form: AdvForm | str = AdvForm.LSQ):
    """Discriminator objective, to be minimized.

    LSQ: mean((real-1)^2) + mean(fake^2).
    LOG: -mean(log sigmoid(real)) - mean(log(1 - sigmoid(fake))).
    """
    _finite(d_real, d_fake)
    if AdvForm(form) is AdvForm.LSQ:
        return ((d_real - 1) ** 2).mean() + (d_fake ** 2).mean()
    return F.softplus(-d_real).mean() + F.softplus(d_fake).mean()


def gen_adv_loss(d_fake, form: AdvForm | str = AdvForm.LSQ):
    _finite(d_fake)
    if AdvForm(form) is AdvForm.LSQ:
        return ((d_fake - 1) ** 2).mean()
    # non-saturating generator form of the log objective
    return F.softplus(-d_fake).mean()


def _check_onehot(y):
    ok = ((y == 0) | (y == 1)).all(dim=-1) & (y.sum(dim=-1) == 1)
    if not bool(ok.all()):
        raise ValueError("combination label must be one-hot")


def combo_ce(logits, y):
    """Cross-entropy of softmax(logits) against one-hot y, averaged over a batch."""
    y = torch.as_tensor(y, dtype=logits.dtype)
    _same_shape(logits, y)
    _check_onehot(y)
    return -(y * F.log_softmax(logits, dim=-1)).sum(dim=-1).mean()


def kl_to_uniform(logits):
    """KL(softmax(logits) || uniform), averaged over a batch."""
    logp = F.log_softmax(logits, dim=-1)
    k = logits.shape[-1]
    return (logp.exp() * (logp + math.log(k))).sum(dim=-1).mean()
