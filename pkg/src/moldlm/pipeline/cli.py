"""Command-line interface.

Subcommands: gen-data, pretrain-encoder, sft, align, molpo, sample, eval,
ablate-steps, config. Global flags: --config <file> --seed <int> --out <dir>
--trace.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np

from ..records import TASKS, read_records
from ..sampler import Conditioning, SamplerConfig, sample_block, sample_pure, truncate_eos
from ..selfies import split_tokens
from ..text import render_text
from .ablate import ablate_steps
from .bundle import MOLECULE_TASKS, ModelBundle
from .config import Config
from .datagen import gen_dataset
from .metrics import canonical_rendering, evaluate, metrics_rows, write_metrics_csv
from .stages import STAGES, StageConfig, run_stage

STAGE_COMMANDS = {
    "pretrain-encoder": "pretrain_encoder",
    "sft": "sft_text",
    "align": "align",
    "molpo": "molpo_joint",
}

# each stage initializes from the previous stage's checkpoint
PREREQUISITE = {
    "pretrain_encoder": None,
    "sft_text": "pretrain_encoder",
    "align": "sft_text",
    "molpo_joint": "align",
}


def _load_config(args) -> Config:
    cfg = Config.from_file(args.config) if args.config else Config()
    if args.seed is not None:
        cfg.run.seed = args.seed
    if args.out is not None:
        cfg.run.out = args.out
    return cfg


def _data_paths(cfg: Config, args) -> dict[str, Path]:
    root = Path(args.data) if getattr(args, "data", None) else Path(cfg.run.out) / "data"
    return {split: root / f"{split}.jsonl" for split in ("train", "val", "test")}


def _run_training_stage(stage: str, cfg: Config, args) -> int:
    paths = _data_paths(cfg, args)
    if not paths["train"].exists():
        print(f"error: missing dataset {paths['train']}; run gen-data first", file=sys.stderr)
        return 2
    records = list(read_records(paths["train"]))

    ckpt_dir = Path(cfg.run.out) / "checkpoints"
    prereq = PREREQUISITE[stage]
    init = getattr(args, "init", None)
    if init is None and prereq is not None:
        init = ckpt_dir / f"{prereq}.ckpt"
    if prereq is not None and not Path(init).exists():
        print(f"error: missing prerequisite checkpoint {init} "
              f"(run the {prereq} stage first or pass --init)", file=sys.stderr)
        return 2

    bundle = ModelBundle(cfg)
    if prereq is not None:
        bundle.load(init)

    train = cfg.train
    stage_cfg = StageConfig(
        stage=stage,
        epochs=getattr(train, f"epochs_{stage}"),
        lr=getattr(train, f"lr_{stage}"),
        batch_size=train.batch_size,
        seed=cfg.run.seed,
        verbose=True,
    )
    result = run_stage(stage_cfg, bundle, records, out_dir=ckpt_dir)
    print(f"{stage}: checkpoint written to {result.checkpoint}")
    for name, series in result.losses.items():
        if series:
            print(f"  {name}: first {series[0]:.4f} last {series[-1]:.4f}")
    return 0


def cmd_gen_data(cfg: Config, args) -> int:
    out = Path(args.data) if args.data else Path(cfg.run.out) / "data"
    rng = np.random.default_rng(cfg.run.seed)
    paths = gen_dataset(rng, cfg.data.sizes(), out, max_atoms=cfg.data.max_atoms)
    for split, path in paths.items():
        n = sum(1 for _ in read_records(path))
        print(f"{split}: {n} records -> {path}")
    return 0


def cmd_sample(cfg: Config, args) -> int:
    bundle = ModelBundle.from_checkpoint(cfg, args.ckpt)
    if args.task not in TASKS:
        print(f"error: unknown task {args.task!r}", file=sys.stderr)
        return 2
    from ..text import tokenize_text
    from ..selfies import tokenize_selfies
    from .datagen import QUESTIONS

    question = args.question or QUESTIONS[args.task]
    if args.task == "generate" and "{caption}" in question:
        question = question.format(caption=args.description or "")
    q = np.asarray(tokenize_text(question, bundle.vocab), dtype=np.int64)
    s = np.asarray(tokenize_selfies(args.selfies, bundle.vocab), dtype=np.int64) \
        if args.selfies else np.zeros(0, dtype=np.int64)
    h = None
    if len(s):
        from ..selfies import decode_tokens
        bundle.encoder.train_mode = False
        h = bundle.align_graph(decode_tokens(split_tokens(args.selfies)))

    strategy = "pure" if args.task in MOLECULE_TASKS else "block"
    scfg = SamplerConfig(steps=args.steps or cfg.sampler.steps,
                         gen_len=bundle.response_len(args.task),
                         strategy=strategy,
                         block_len=min(cfg.sampler.block_len, bundle.response_len(args.task)),
                         temperature=cfg.sampler.temperature, seed=cfg.run.seed)
    fn = sample_pure if strategy == "pure" else sample_block
    tokens, trace = fn(bundle.predictor(), Conditioning(q=q, s=s, h_aligned=h),
                       scfg, bundle.vocab)
    out = truncate_eos(tokens, bundle.vocab.eos_id)
    if args.task in MOLECULE_TASKS:
        rendered, _ = canonical_rendering(out, bundle.vocab)
    else:
        rendered = render_text(out, bundle.vocab)
    print(rendered)
    if args.trace:
        path = Path(cfg.run.out) / "trace.jsonl"
        path.parent.mkdir(parents=True, exist_ok=True)
        trace.dump(path)
        print(f"trace -> {path}", file=sys.stderr)
    return 0


def cmd_eval(cfg: Config, args) -> int:
    bundle = ModelBundle.from_checkpoint(cfg, args.ckpt)
    paths = _data_paths(cfg, args)
    records = list(read_records(paths[args.split]))
    tasks = args.tasks.split(",") if args.tasks else sorted({r.task for r in records})
    results = {}
    for task in tasks:
        res = evaluate(bundle, records, task,
                       trace_dir=(Path(cfg.run.out) / "traces") if args.trace else None)
        results[task] = res
        shown = {k: round(v, 4) for k, v in res.items() if k not in ("n", "seconds")}
        print(f"{task}: {shown} (n={int(res['n'])}, {res['seconds']:.1f}s)")
    out_csv = Path(args.metrics_out) if args.metrics_out \
        else Path(cfg.run.out) / "metrics.csv"
    out_csv.parent.mkdir(parents=True, exist_ok=True)
    write_metrics_csv(out_csv, metrics_rows(results))
    print(f"metrics -> {out_csv}")
    return 0


def cmd_ablate(cfg: Config, args) -> int:
    bundle = ModelBundle.from_checkpoint(cfg, args.ckpt)
    paths = _data_paths(cfg, args)
    records = list(read_records(paths[args.split]))
    steps_list = [int(x) for x in args.steps_list.split(",")]
    rows = ablate_steps(bundle, records, args.task, steps_list)
    print("T,exact,fp_sim,seconds")
    for row in rows:
        print(f"{row.steps},{row.exact:.4f},{row.fp_sim:.4f},{row.seconds:.2f}")
    if args.metrics_out:
        with open(args.metrics_out, "w", encoding="utf-8") as f:
            f.write("T,exact,fp_sim,seconds\n")
            for row in rows:
                f.write(f"{row.steps},{row.exact:.6f},{row.fp_sim:.6f},{row.seconds:.3f}\n")
    return 0


def cmd_config(cfg: Config, args) -> int:
    if args.dump:
        print(cfg.dump(), end="")
        return 0
    print("use `config --dump` to print the effective configuration")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="moldlm",
                                     description="molecular masked-diffusion LM toolkit")
    parser.add_argument("--config", help="INI config file")
    parser.add_argument("--seed", type=int, default=None, help="override [run] seed")
    parser.add_argument("--out", default=None, help="override [run] out directory")
    parser.add_argument("--trace", action="store_true", help="dump denoising traces")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="generate the synthetic dataset")
    p.add_argument("--data", help="dataset directory (default <out>/data)")

    for name in STAGE_COMMANDS:
        p = sub.add_parser(name, help=f"run the {STAGE_COMMANDS[name]} training stage")
        p.add_argument("--data", help="dataset directory (default <out>/data)")
        p.add_argument("--init", help="checkpoint to initialize from")

    p = sub.add_parser("sample", help="draw one sample from a checkpoint")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--task", required=True, choices=TASKS)
    p.add_argument("--selfies", default="", help="input molecular string")
    p.add_argument("--question", default=None, help="override the task question")
    p.add_argument("--description", default=None, help="caption for generate")
    p.add_argument("--steps", type=int, default=None)

    p = sub.add_parser("eval", help="evaluate a checkpoint on a split")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--data", help="dataset directory")
    p.add_argument("--split", default="test", choices=("train", "val", "test"))
    p.add_argument("--tasks", default=None, help="comma list (default: all present)")
    p.add_argument("--metrics-out", dest="metrics_out", default=None)

    p = sub.add_parser("ablate-steps", help="denoising-steps ablation table")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--data", help="dataset directory")
    p.add_argument("--split", default="val", choices=("train", "val", "test"))
    p.add_argument("--task", default="forward", choices=TASKS)
    p.add_argument("--steps-list", dest="steps_list", default="4,16,64")
    p.add_argument("--metrics-out", dest="metrics_out", default=None)

    p = sub.add_parser("config", help="print configuration")
    p.add_argument("--dump", action="store_true")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    cfg = _load_config(args)
    if args.command == "gen-data":
        return cmd_gen_data(cfg, args)
    if args.command in STAGE_COMMANDS:
        return _run_training_stage(STAGE_COMMANDS[args.command], cfg, args)
    if args.command == "sample":
        return cmd_sample(cfg, args)
    if args.command == "eval":
        return cmd_eval(cfg, args)
    if args.command == "ablate-steps":
        return cmd_ablate(cfg, args)
    if args.command == "config":
        return cmd_config(cfg, args)
    raise AssertionError(f"unhandled command {args.command}")


if __name__ == "__main__":
    sys.exit(main())
