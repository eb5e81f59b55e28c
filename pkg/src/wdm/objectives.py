"""Contrastive dependency objectives, all in the maximization sense.

Scores are a (K, K) matrix with S[i, j] = f(x_i, y_j); the diagonal holds the
paired samples and the off-diagonal entries act as in-batch negatives.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import torch

OBJECTIVE_KINDS = ("cpc", "wpc", "wdm_dual")


@dataclass
class ObjectiveConfig:
    kind: str = "cpc"
    penalty_coeff: float = 10.0
    penalty_target: float = 1.0
    batch_size: int = 64

    def __post_init__(self):
        if self.kind not in OBJECTIVE_KINDS:
            raise ValueError(f"unknown objective {self.kind!r}")
        if self.penalty_coeff < 0:
            raise ValueError("penalty_coeff must be nonnegative")
        if self.batch_size < 2:
            raise ValueError("batch_size must be at least 2")

    @property
    def uses_penalty(self) -> bool:
        return self.kind != "cpc" and self.penalty_coeff > 0


def _scores(S) -> torch.Tensor:
    S = torch.as_tensor(S)
    if not S.is_floating_point():
        S = S.double()
    if S.ndim != 2 or S.shape[0] != S.shape[1] or S.shape[0] < 2:
        raise ValueError(f"expected a square score matrix with K >= 2, got {tuple(S.shape)}")
    if not torch.isfinite(S).all():
        raise ValueError("score matrix contains non-finite values")
    return S


def cpc_objective(S) -> torch.Tensor:
    """(1/K) sum_i [S_ii - logsumexp_j S_ij]; the positive stays in the denominator."""
    S = _scores(S)
    return (S.diagonal() - torch.logsumexp(S, dim=1)).mean()


def mi_estimate(J, K: int) -> float:
    """MI reported by the InfoNCE bound: J + ln K, never above ln K."""
    return float(J) + math.log(K)


def wpc_objective(S, gp, penalty_coeff: float) -> torch.Tensor:
    return cpc_objective(S) - penalty_coeff * gp


def wdm_dual_objective(S, gp, penalty_coeff: float) -> torch.Tensor:
    """Mean paired score minus mean unpaired (off-diagonal) score, penalized."""
    S = _scores(S)
    k = S.shape[0]
    diag = S.diagonal()
    off = (S.sum() - diag.sum()) / (k * (k - 1))
    return diag.mean() - off - penalty_coeff * gp


def interpolate(pos, neg, eps: torch.Tensor) -> torch.Tensor:
    shape = (-1,) + (1,) * (pos.ndim - 1)
    return eps.view(shape) * pos + (1 - eps.view(shape)) * neg


def gradient_penalty(
    pair_score: Callable[[torch.Tensor, torch.Tensor], torch.Tensor],
    x_pos, y_pos, x_neg, y_neg,
    generator: torch.Generator | None = None,
    eps: torch.Tensor | None = None,
    target: float = 1.0,
) -> torch.Tensor:
    """Two-sided penalty E[(||grad_(x,y) f(x~, y~)||_2 - target)^2].

    Interpolates mix the paired and unpaired batches with one uniform weight
    per sample. ``pair_score`` maps aligned batches to per-sample scores, and
    the result keeps its graph so the penalty can itself be differentiated.
    """
    x_pos, y_pos = torch.as_tensor(x_pos), torch.as_tensor(y_pos)
    x_neg, y_neg = torch.as_tensor(x_neg), torch.as_tensor(y_neg)
    if x_pos.shape != x_neg.shape or y_pos.shape != y_neg.shape or x_pos.shape[0] != y_pos.shape[0]:
        raise ValueError("paired and unpaired batches must have matching shapes")
    if eps is None:
        eps = torch.rand(x_pos.shape[0], generator=generator, dtype=x_pos.dtype)
    eps = torch.as_tensor(eps, dtype=x_pos.dtype)
    xt = interpolate(x_pos, x_neg, eps).detach().requires_grad_(True)
    yt = interpolate(y_pos, y_neg, eps).detach().requires_grad_(True)
    keep_graph = torch.is_grad_enabled()
    with torch.enable_grad():
        out = pair_score(xt, yt)
        gx, gy = torch.autograd.grad(out.sum(), (xt, yt), create_graph=keep_graph)
    sq = gx.flatten(1).pow(2).sum(1) + gy.flatten(1).pow(2).sum(1)
    if not torch.isfinite(sq).all():
        raise FloatingPointError("non-finite critic gradient in gradient penalty")
    # sqrt has an infinite derivative at 0; a tiny floor keeps double-backward finite
    norm = torch.sqrt(sq + 1e-12)
    return ((norm - target) ** 2).mean()
