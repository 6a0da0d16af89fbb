"""Command-line entry point: ``airmm {gen,align,pretrain-lm,train,eval,ablate}``.

Exit codes: 0 success, 2 configuration error, 3 data or format error,
4 missing output of an earlier stage.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from .encoders import ALIGN_AREAS, ALIGN_HELD_OUT_PER_AREA, ALIGN_PAIRS_PER_AREA
from .errors import AirmmError, ConfigError
from .pinned import PINNED_SEED

log = logging.getLogger("airmm")


def _settings(args) -> dict:
    from .harness import read_settings

    return read_settings(args.settings) if getattr(args, "settings", None) else {}


def cmd_gen(args) -> int:
    from .scene import generate_dataset_dir

    n_test = args.test_samples if args.test_samples is not None else args.samples // 4
    if args.areas < 1 or args.samples < 1 or n_test < 0:
        raise ConfigError("--areas and --samples must be positive, --test-samples non-negative")
    paths = generate_dataset_dir(args.out, args.seed, args.areas, args.samples, n_test, first_area=args.first_area)
    for p in paths:
        print(p)
    return 0


def _data_seed(data_dir) -> tuple[int, dict]:
    from .harness import area_indices
    from .scene import load_dataset

    a = area_indices(data_dir)[0]
    meta = load_dataset(Path(data_dir) / f"area_{a:05d}.train.aimm").metadata
    return int(meta["seed"]), meta["config"]


def cmd_align(args) -> int:
    from .encoders import align, alignment_corpus, codes, matched_mismatched, retrieval_top1, save_encoders
    from .errors import BatchError
    from .scene import ChannelConfig

    seed, cfg = _data_seed(args.data)
    if args.seed is not None:
        seed = args.seed
    if min(args.areas, args.pairs) < 1 or args.held_out < 1:
        raise ConfigError("--areas, --pairs and --held-out must be positive")
    train, held = alignment_corpus(seed, ChannelConfig.from_dict(cfg), n_areas=args.areas, per_area=args.pairs,
                                   held_out_per_area=args.held_out)
    enc, history = align(train, seed, epochs=args.epochs, batch=args.batch, lr=args.lr)
    out = Path(args.out) if args.out else Path(args.data) / "encoders.aimw"
    save_encoders(out, enc)
    env, csi = codes(enc, held)
    matched, mismatched = matched_mismatched(env, csi)
    try:
        top1 = retrieval_top1(env, csi)
    except BatchError:
        top1 = None  # fewer held-out pairs than one retrieval batch
    report = {"seed": seed, "epochs": args.epochs, "final_loss": history[-1] if history else None,
              "temperature": enc.temperature, "held_out_pairs": len(held),
              "retrieval_top1_b64": top1, "matched_cos": matched, "mismatched_cos": mismatched}
    out.with_suffix(".json").write_text(json.dumps(report, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    print(json.dumps(report, sort_keys=True))
    return 0


def cmd_pretrain(args) -> int:
    from .backbone import init_backbone, pretrain_lm, save_backbone

    if args.steps < 0:
        raise ConfigError("--steps must be non-negative")
    bb = init_backbone(args.seed)
    stats = pretrain_lm(bb, args.seed, args.steps, batch=args.batch, lr=args.lr)
    save_backbone(args.out, bb, {"pretrain": stats, "seed": args.seed})
    print(json.dumps(stats, sort_keys=True))
    return 0


def _run_config(args, **kw):
    from .harness import RunConfig

    run = RunConfig(data_dir=args.data, seed=args.seed, **kw)
    run = run.with_overrides(_settings(args))
    if args.encoders:
        run.encoders_path = args.encoders
    if args.backbone:
        run.backbone_path = args.backbone
    if args.pooled:
        run.pooled = True
    return run


def cmd_train(args) -> int:
    from .harness import train

    run = _run_config(args, config=args.config, out_dir=args.out)
    if args.epochs is not None:
        run.epochs = args.epochs
    result = train(run, resume=args.resume, stop_at_step=args.stop_at_step,
                   state_path=Path(args.out) / "state.aims" if args.stop_at_step else None)
    if result.reports:
        for r in result.reports:
            print(f"{r.config}\t{r.task_id}\t{r.metric}\t{r.value:.6g}")
    else:
        print(f"stopped at step {result.steps}; state saved to {Path(args.out) / 'state.aims'}")
    if not result.reports or result.census_ok:
        return 0
    log.error("freeze census failed: changed %s, expected %s", result.changed_groups, result.expected_groups)
    return 1


def cmd_eval(args) -> int:
    from .harness import append_csv, evaluate

    reports = evaluate(args.ckpt, args.data, split=args.split)
    if args.csv:
        append_csv(args.csv, reports)
    for r in reports:
        print(f"{r.config}\t{r.task_id}\t{r.metric}\t{r.value:.6g}")
    return 0


def cmd_ablate(args) -> int:
    from .harness import ablate

    base = _run_config(args)
    if args.epochs is not None:
        base.epochs = args.epochs
    results = ablate(args.seed, args.data, csv_path=args.csv, out_root=args.out, base=base, threads=args.threads)
    bad = [r.run.config for r in results if not r.census_ok]
    print(Path(args.csv).read_text(encoding="utf-8"), end="")
    if bad:
        log.error("freeze census failed for %s", ", ".join(bad))
        return 1
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="airmm", description="Desk-scale multi-modal wireless universal model.")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen", help="generate per-area train/test dataset files")
    g.add_argument("--seed", type=int, default=PINNED_SEED)
    g.add_argument("--areas", type=int, default=2)
    g.add_argument("--samples", type=int, default=2000, help="training samples per area")
    g.add_argument("--test-samples", type=int, default=None, help="test samples per area (default samples/4)")
    g.add_argument("--first-area", type=int, default=0)
    g.add_argument("--out", required=True)
    g.set_defaults(func=cmd_gen)

    a = sub.add_parser("align", help="contrastive pretraining of the modality encoders")
    a.add_argument("--data", required=True, help="dataset directory (seed and channel config are read from it)")
    a.add_argument("--epochs", type=int, default=50)
    a.add_argument("--batch", type=int, default=64)
    a.add_argument("--lr", type=float, default=1e-3)
    a.add_argument("--seed", type=int, default=None)
    a.add_argument("--areas", type=int, default=ALIGN_AREAS, help="areas in the alignment corpus")
    a.add_argument("--pairs", type=int, default=ALIGN_PAIRS_PER_AREA, help="training pairs per area")
    a.add_argument("--held-out", type=int, default=ALIGN_HELD_OUT_PER_AREA, help="held-out pairs per area")
    a.add_argument("--out", default=None, help="default: DATA/encoders.aimw")
    a.set_defaults(func=cmd_align)

    m = sub.add_parser("pretrain-lm", help="pretrain the backbone on the synthetic corpus")
    m.add_argument("--steps", type=int, default=1500)
    m.add_argument("--seed", type=int, default=PINNED_SEED)
    m.add_argument("--batch", type=int, default=32)
    m.add_argument("--lr", type=float, default=3e-3)
    m.add_argument("--out", required=True)
    m.set_defaults(func=cmd_pretrain)

    def run_args(sp):
        sp.add_argument("--seed", type=int, default=PINNED_SEED)
        sp.add_argument("--data", required=True)
        sp.add_argument("--encoders", default=None, help="default: DATA/encoders.aimw")
        sp.add_argument("--backbone", default=None, help="default: DATA/backbone.aimb")
        sp.add_argument("--epochs", type=int, default=None)
        sp.add_argument("--settings", default=None, help="key=value file overriding run defaults")
        sp.add_argument("--pooled", action="store_true", help="train every task on all areas")

    t = sub.add_parser("train", help="train one configuration")
    t.add_argument("--config", required=True)
    run_args(t)
    t.add_argument("--out", required=True)
    t.add_argument("--resume", default=None, help="train state (.aims) to continue from")
    t.add_argument("--stop-at-step", type=int, default=None, help="save state after this many steps and stop")
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="evaluate a trained model checkpoint")
    e.add_argument("--ckpt", required=True)
    e.add_argument("--data", required=True)
    e.add_argument("--csv", default=None, help="append metric rows here")
    e.add_argument("--split", choices=("test", "train"), default="test")
    e.set_defaults(func=cmd_eval)

    b = sub.add_parser("ablate", help="train and evaluate all eight configurations")
    run_args(b)
    b.add_argument("--csv", required=True)
    b.add_argument("--out", default=None, help="keep each run's checkpoints under OUT/<config>")
    b.add_argument("--threads", type=int, default=None, help="parallel runs (default: AIMM_THREADS or 1)")
    b.set_defaults(func=cmd_ablate)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        # argparse reports usage errors with status 2, which is our config-error code too
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(name)s %(levelname)s %(message)s")
    try:
        return args.func(args)
    except AirmmError as exc:
        print(f"airmm: error: {exc}", file=sys.stderr)
        return exc.exit_code


if __name__ == "__main__":
    sys.exit(main())
