"""Denoising-steps ablation: evaluate one task at several step counts."""

from __future__ import annotations

from dataclasses import dataclass

from ..records import InstructionRecord
from ..sampler import SamplerConfig
from .bundle import ModelBundle
from .metrics import evaluate

__all__ = ["AblationRow", "ablate_steps"]


@dataclass
class AblationRow:
    steps: int
    exact: float
    fp_sim: float
    seconds: float


def ablate_steps(bundle: ModelBundle, records: list[InstructionRecord], task: str,
                 steps_list: list[int],
                 base: SamplerConfig | None = None) -> list[AblationRow]:
    """One evaluate() run per step count; wall-clock comes from the sampler loop."""
    if not steps_list:
        raise ValueError("steps_list must be nonempty")
    if base is None:
        base = SamplerConfig()
    rows = []
    for steps in steps_list:
        cfg = SamplerConfig(steps=int(steps), gen_len=base.gen_len, strategy=base.strategy,
                            block_len=base.block_len, temperature=base.temperature,
                            seed=base.seed)
        res = evaluate(bundle, records, task, sampler_cfg=cfg)
        rows.append(AblationRow(steps=int(steps), exact=res.get("exact", float("nan")),
                                fp_sim=res.get("fp_sim", float("nan")),
                                seconds=res["seconds"]))
    return rows
