"""Instruction records: one task instance per line of a JSONL dataset file."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Iterable, Iterator

__all__ = ["TASKS", "SPLITS", "InstructionRecord", "write_records", "read_records"]

TASKS = ("caption", "generate", "prop_reg", "prop_cls", "forward", "retro")
SPLITS = ("train", "val", "test")


@dataclass
class InstructionRecord:
    task: str
    question: str
    selfies_in: str   # bracketed dialect string; empty for generate
    target: str       # text or bracketed dialect string
    split: str

    def __post_init__(self):
        if self.task not in TASKS:
            raise ValueError(f"unknown task {self.task!r}")
        if self.split not in SPLITS:
            raise ValueError(f"unknown split {self.split!r}")
        if not self.target:
            raise ValueError("target must be nonempty")

    def to_json(self) -> str:
        return json.dumps(asdict(self))

    @staticmethod
    def from_json(line: str) -> "InstructionRecord":
        return InstructionRecord(**json.loads(line))


def write_records(path, records: Iterable[InstructionRecord]) -> int:
    n = 0
    with open(path, "w", encoding="utf-8") as f:
        for rec in records:
            f.write(rec.to_json() + "\n")
            n += 1
    return n


def read_records(path) -> Iterator[InstructionRecord]:
    """Yield records from a JSONL file, skipping schema header lines."""
    with open(path, encoding="utf-8") as f:
        for line in f:
            line = line.strip()
            if not line:
                continue
            obj = json.loads(line)
            if "schema" in obj:
                continue
            yield InstructionRecord(**obj)
