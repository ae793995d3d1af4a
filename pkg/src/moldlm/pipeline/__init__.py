"""Dataset generation, staged training, evaluation, ablations, and the CLI."""

from .vocab import build_vocab
from .datagen import gen_dataset
from .bundle import ModelBundle
from .stages import StageConfig, run_stage
from .metrics import rouge1, auroc, evaluate
from .ablate import ablate_steps
from .config import Config

__all__ = [
    "build_vocab", "gen_dataset", "ModelBundle", "StageConfig", "run_stage",
    "rouge1", "auroc", "evaluate", "ablate_steps", "Config",
]
