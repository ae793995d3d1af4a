"""Structure preference optimization for the masked-diffusion backbone.

Implicit rewards are scaled mean log-likelihoods over the masked positions
under chosen vs. perturbed graph conditioning (one shared mask realization);
the objective is a clipped log-sigmoid on the reward margin. The scale beta
multiplies both the rewards and the outer margin, as the objective is
written.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import Mapping

import numpy as np

from .numerics import Tensor, log_softmax, minimum, softplus
from .records import TASKS

__all__ = ["MolpoConfig", "implicit_reward", "molpo_loss", "total_loss"]


@dataclass
class MolpoConfig:
    beta: float = 0.1
    lambda_clip: float = 1.0
    gamma: Mapping[str, float] = field(default_factory=dict)  # per-task target margin
    c: float = 0.1   # weight of the preference term in the total loss

    def __post_init__(self):
        if self.beta <= 0:
            raise ValueError("beta must be > 0")
        if self.lambda_clip < 0:
            raise ValueError("lambda_clip must be >= 0")
        if self.c < 0:
            raise ValueError("c must be >= 0")


def implicit_reward(logits: Tensor, x0: np.ndarray, mask: np.ndarray,
                    cfg: MolpoConfig) -> Tensor:
    """beta * mean over masked positions of log p(x0_i | .), differentiable."""
    mask = np.asarray(mask, dtype=bool)
    n_mask = int(mask.sum())
    if n_mask == 0:
        raise ValueError("implicit reward undefined with zero masked positions")
    x0 = np.asarray(x0, dtype=np.int64)
    lp = log_softmax(logits, axis=-1)
    picked = lp[np.arange(len(x0)), x0]
    return (picked * Tensor(mask.astype(logits.dtype))).sum() * (cfg.beta / n_mask)


def molpo_loss(r_w, r_l, task: str, cfg: MolpoConfig) -> Tensor:
    """-log sigmoid(beta * (min(r_w - r_l, lambda*|r_w|) - gamma_task)).

    Beyond the clip point the loss is exactly flat in r_l. Unknown task ids
    fall back to a zero margin with a warning.
    """
    if task not in TASKS and task not in cfg.gamma:
        warnings.warn(f"unknown task id {task!r}; using gamma=0", stacklevel=2)
    gamma = float(cfg.gamma.get(task, 0.0))
    r_w = r_w if isinstance(r_w, Tensor) else Tensor(np.asarray(r_w, dtype=np.float64))
    r_l = r_l if isinstance(r_l, Tensor) else Tensor(np.asarray(r_l, dtype=np.float64))
    margin = minimum(r_w - r_l, r_w.abs() * cfg.lambda_clip)
    return softplus((margin - gamma) * (-cfg.beta))


def total_loss(l_sft: Tensor, l_molpo: Tensor, cfg: MolpoConfig) -> Tensor:
    return l_sft + l_molpo * cfg.c
