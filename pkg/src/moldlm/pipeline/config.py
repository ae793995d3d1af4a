"""Flat key/value configuration with one section per module.

Plain INI text (configparser). Every key has a default; `Config.dump()`
prints the full effective configuration, which is also the documented
schema. Unknown keys raise.
"""

from __future__ import annotations

import configparser
import io
from dataclasses import dataclass, field, fields

import numpy as np

from ..records import TASKS

__all__ = ["Config"]


@dataclass
class RunSection:
    seed: int = 0
    out: str = "runs"
    dtype: str = "float32"   # training dtype; tests always use float64


@dataclass
class DataSection:
    max_atoms: int = 9
    # per-task "train,val,test" record counts
    size_caption: str = "2000,100,200"
    size_generate: str = "1000,50,100"
    size_prop_reg: str = "1000,50,100"
    size_prop_cls: str = "1000,50,100"
    size_forward: str = "2000,100,200"
    size_retro: str = "1000,50,100"

    def sizes(self) -> dict[str, tuple[int, int, int]]:
        out = {}
        for task in TASKS:
            raw = getattr(self, f"size_{task}")
            parts = tuple(int(x) for x in raw.split(","))
            if len(parts) != 3:
                raise ValueError(f"size_{task} must be 'train,val,test', got {raw!r}")
            out[task] = parts
        return out


@dataclass
class EncoderSection:
    d_g: int = 64
    gine_layers: int = 3
    gt_layers: int = 2
    gt_heads: int = 4


@dataclass
class AlignerSection:
    n_queries: int = 32
    n_heads: int = 4
    depth: int = 1


@dataclass
class DlmSection:
    d_model: int = 128
    n_layers: int = 4
    n_heads: int = 4
    d_ff: int = 256
    max_len: int = 256
    prompt_len: int = 32        # question+string region, right-padded to this
    resp_caption: int = 24
    resp_generate: int = 18
    resp_prop_reg: int = 10
    resp_prop_cls: int = 3
    resp_forward: int = 18
    resp_retro: int = 18

    def response_len(self, task: str) -> int:
        return getattr(self, f"resp_{task}")


@dataclass
class MolpoSection:
    beta: float = 0.1
    lambda_clip: float = 1.0
    c: float = 0.1
    gamma_caption: float = 0.0
    gamma_generate: float = 0.0
    gamma_prop_reg: float = 0.0
    gamma_prop_cls: float = 0.0
    gamma_forward: float = 0.0
    gamma_retro: float = 0.0

    def gamma_map(self) -> dict[str, float]:
        return {task: getattr(self, f"gamma_{task}") for task in TASKS}


@dataclass
class SamplerSection:
    steps: int = 64
    block_len: int = 8
    temperature: float = 0.0


@dataclass
class TrainSection:
    batch_size: int = 16
    t_floor: float = 0.01        # lower cutoff for the masking-ratio draw
    encoder_subset: int = 2000   # max distinct graphs for encoder pretraining
    epochs_pretrain_encoder: int = 8
    lr_pretrain_encoder: float = 1e-3
    epochs_sft: int = 4
    lr_sft: float = 1e-3
    epochs_align: int = 1
    lr_align: float = 5e-4
    epochs_molpo: int = 1
    lr_molpo: float = 2e-4


_SECTIONS = {
    "run": RunSection,
    "data": DataSection,
    "encoder": EncoderSection,
    "aligner": AlignerSection,
    "dlm": DlmSection,
    "molpo": MolpoSection,
    "sampler": SamplerSection,
    "train": TrainSection,
}


@dataclass
class Config:
    run: RunSection = field(default_factory=RunSection)
    data: DataSection = field(default_factory=DataSection)
    encoder: EncoderSection = field(default_factory=EncoderSection)
    aligner: AlignerSection = field(default_factory=AlignerSection)
    dlm: DlmSection = field(default_factory=DlmSection)
    molpo: MolpoSection = field(default_factory=MolpoSection)
    sampler: SamplerSection = field(default_factory=SamplerSection)
    train: TrainSection = field(default_factory=TrainSection)

    def train_dtype(self):
        if self.run.dtype == "float32":
            return np.float32
        if self.run.dtype == "float64":
            return np.float64
        raise ValueError(f"dtype must be float32 or float64, got {self.run.dtype!r}")

    @staticmethod
    def from_file(path) -> "Config":
        parser = configparser.ConfigParser()
        with open(path, encoding="utf-8") as f:
            parser.read_file(f)
        cfg = Config()
        for section_name, section in parser.items():
            if section_name == "DEFAULT":
                continue
            if section_name not in _SECTIONS:
                raise ValueError(f"unknown config section [{section_name}]")
            target = getattr(cfg, section_name)
            known = {f.name: f.type for f in fields(target)}
            for key, raw in section.items():
                if key not in known:
                    raise ValueError(f"unknown key {key!r} in section [{section_name}]")
                current = getattr(target, key)
                if isinstance(current, bool):
                    setattr(target, key, parser.getboolean(section_name, key))
                elif isinstance(current, int):
                    setattr(target, key, int(raw))
                elif isinstance(current, float):
                    setattr(target, key, float(raw))
                else:
                    setattr(target, key, raw)
        return cfg

    def dump(self) -> str:
        parser = configparser.ConfigParser()
        for name in _SECTIONS:
            section = getattr(self, name)
            parser[name] = {f.name: str(getattr(section, f.name)) for f in fields(section)}
        buf = io.StringIO()
        parser.write(buf)
        return buf.getvalue()
