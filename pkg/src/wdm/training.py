"""Gradient-ascent training of a critic under CPC, WPC or the dual WDM objective."""
from __future__ import annotations

import csv
import logging
import math
import time
from dataclasses import dataclass, field

import numpy as np
import torch

from .datasets import PairDataset
from .models import Critic, EncoderConfig, build_critic
from .objectives import ObjectiveConfig, cpc_objective, gradient_penalty, mi_estimate, wdm_dual_objective

logger = logging.getLogger(__name__)

RUNLOG_COLUMNS = ("step", "objective", "mi_estimate", "gp", "wallclock_s")


class TrainingDiverged(FloatingPointError):
    def __init__(self, message, log):
        super().__init__(message)
        self.log = log


class OrderingViolation(AssertionError):
    pass


@dataclass
class TrainConfig:
    steps: int = 20000
    batch_size: int = 64
    learning_rate: float = 1e-4
    seed: int = 0
    eval_every: int = 200
    optimizer: str = "adaptive_moment"
    eval_batches: int = 16

    def __post_init__(self):
        if self.steps < 0:
            raise ValueError("steps must be >= 0")
        if self.batch_size < 2:
            raise ValueError("batch_size must be at least 2")
        if self.optimizer not in ("plain_sgd", "adaptive_moment"):
            raise ValueError(f"unknown optimizer {self.optimizer!r}")
        if self.eval_every < 1:
            raise ValueError("eval_every must be positive")


@dataclass
class RunLog:
    records: list[dict] = field(default_factory=list)
    batch_size: int = 0
    penalty_grad: str = "autograd"
    ordering_checks: int = 0
    gp_trace: list[float] = field(default_factory=list)
    failure: dict | None = None

    def append(self, step, objective, mi, gp, wallclock):
        if self.records and step <= self.records[-1]["step"]:
            raise ValueError("run log steps must increase")
        self.records.append({"step": int(step), "objective": float(objective),
                             "mi_estimate": float(mi), "gp": float(gp), "wallclock_s": float(wallclock)})

    def column(self, name) -> list:
        return [r[name] for r in self.records]

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.DictWriter(fh, fieldnames=RUNLOG_COLUMNS)
            w.writeheader()
            w.writerows(self.records)

    def without_wallclock(self) -> list[tuple]:
        return [tuple(r[c] for c in RUNLOG_COLUMNS[:-1]) for r in self.records]


def _batch_terms(critic: Critic, x, y, obj: ObjectiveConfig, gen: torch.Generator):
    """Return (objective, cpc value, gp) for one batch."""
    S = critic.scores(x, y)
    cpc = cpc_objective(S)
    if obj.kind == "cpc" or obj.penalty_coeff == 0:
        gp = torch.zeros((), dtype=S.dtype)
    else:
        k = x.shape[0]
        x_neg = x[torch.randperm(k, generator=gen)]
        y_neg = y[torch.randperm(k, generator=gen)]
        gp = gradient_penalty(critic.pair_scores, x, y, x_neg, y_neg, generator=gen,
                              target=obj.penalty_target)
    if obj.kind == "cpc":
        value = cpc
    elif obj.kind == "wpc":
        value = cpc - obj.penalty_coeff * gp
    else:
        value = wdm_dual_objective(S, gp, obj.penalty_coeff)
    return value, cpc, gp


def train(dataset: PairDataset, encoder_cfg: EncoderConfig, objective_cfg: ObjectiveConfig,
          train_cfg: TrainConfig, critic: Critic | None = None) -> tuple[Critic, RunLog]:
    """Maximize the configured objective by minibatch gradient ascent.

    Batches of ``train_cfg.batch_size`` are drawn with replacement each step.
    For WPC the in-loop check ``wpc <= cpc`` runs on every batch.
    """
    if len(dataset) == 0:
        raise ValueError("empty dataset")
    if critic is None:
        critic = build_critic(encoder_cfg, seed=train_cfg.seed)
    dtype = next(critic.parameters()).dtype
    x_all = torch.as_tensor(dataset.x, dtype=dtype)
    y_all = torch.as_tensor(dataset.y, dtype=dtype)
    if tuple(x_all.shape[1:]) != encoder_cfg.input_shape:
        raise ValueError(f"dataset images {tuple(x_all.shape[1:])} do not match encoder input {encoder_cfg.input_shape}")

    k = train_cfg.batch_size
    gen = torch.Generator().manual_seed(train_cfg.seed + 1)
    params = list(critic.parameters())
    if train_cfg.optimizer == "adaptive_moment":
        opt = torch.optim.Adam(params, lr=train_cfg.learning_rate)
    else:
        opt = torch.optim.SGD(params, lr=train_cfg.learning_rate)

    log = RunLog(batch_size=k)
    start = time.perf_counter()
    window: list[tuple[float, float, float]] = []
    critic.train()
    for step in range(train_cfg.steps):
        idx = torch.randint(len(dataset), (k,), generator=gen)
        try:
            value, cpc, gp = _batch_terms(critic, x_all[idx], y_all[idx], objective_cfg, gen)
            if not (torch.isfinite(value) and torch.isfinite(gp)):
                raise FloatingPointError(f"objective {value.item()}, gp {gp.item()}")
        except (ValueError, FloatingPointError) as exc:
            log.failure = {"step": step, "error": str(exc)}
            raise TrainingDiverged(f"non-finite objective at step {step}: {exc}", log) from exc
        if objective_cfg.kind == "wpc":
            log.ordering_checks += 1
            if not value.item() <= cpc.item():
                raise OrderingViolation(f"wpc {value.item()} > cpc {cpc.item()} at step {step}")
        if step == 0:
            log.append(0, value.item(), mi_estimate(cpc.item(), k), gp.item(), 0.0)
        window.append((value.item(), cpc.item(), gp.item()))
        log.gp_trace.append(gp.item())

        opt.zero_grad(set_to_none=True)
        (-value).backward()
        opt.step()

        done = step + 1
        if done % train_cfg.eval_every == 0 or done == train_cfg.steps:
            v, c, g = np.mean(window, axis=0)
            log.append(done, v, mi_estimate(c, k), g, time.perf_counter() - start)
            window.clear()
    critic.eval()
    return critic, log


@torch.no_grad()
def estimate_mi(critic: Critic, dataset: PairDataset, batch_size: int, n_batches: int = 16,
                seed: int = 0) -> float:
    """Mean InfoNCE estimate J + ln K over fresh random batches."""
    dtype = next(critic.parameters()).dtype
    gen = torch.Generator().manual_seed(seed)
    vals = []
    for _ in range(n_batches):
        idx = torch.randint(len(dataset), (batch_size,), generator=gen)
        x = torch.as_tensor(dataset.x[idx.numpy()], dtype=dtype)
        y = torch.as_tensor(dataset.y[idx.numpy()], dtype=dtype)
        vals.append(cpc_objective(critic.scores(x, y)).item())
    return mi_estimate(float(np.mean(vals)), batch_size)


def saturation_experiment(datasets: list[PairDataset], K_values: list[int], train_cfg: TrainConfig,
                          encoder_cfg: EncoderConfig | None = None,
                          objective_cfg: ObjectiveConfig | None = None,
                          seeds=(0,)) -> list[dict]:
    """Train CPC at every (dataset, K) and tabulate the converged estimate against the true MI.

    The estimate cannot exceed ln K whatever the true MI is.
    """
    rows = []
    for ds in datasets:
        cfg = encoder_cfg or EncoderConfig(ds.x.shape[1:])
        for K in K_values:
            finals, logged_max = [], -math.inf
            for seed in seeds:
                tc = TrainConfig(**{**train_cfg.__dict__, "batch_size": K, "seed": seed})
                oc = objective_cfg or ObjectiveConfig("cpc", batch_size=K)
                critic, log = train(ds, cfg, oc, tc)
                logged_max = max(logged_max, *log.column("mi_estimate"))
                finals.append(estimate_mi(critic, ds, K, tc.eval_batches, seed=seed))
            rows.append({"true_mi": ds.mi_certificate, "K": K,
                         "mean_final_mi_estimate": float(np.mean(finals)),
                         "max_logged_mi_estimate": float(logged_max)})
            logger.info("saturation: true MI %.3f, K %d -> %.3f", ds.mi_certificate, K, rows[-1]["mean_final_mi_estimate"])
    return rows
