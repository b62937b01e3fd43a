"""Command-line entry point: ``helmnet <subcommand> ...``.

Exit codes: 0 success, 1 usage error, 2 data error, 3 runtime/numerical error.
Resolved configuration is echoed to stderr as ``# key=value`` lines; data
goes to stdout.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path


from . import augment, data, metrics, model, trainer
from .optim import softmax

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_RUNTIME = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: error: {message}")


def _echo(pairs: dict):
    for k, v in pairs.items():
        print(f"# {k}={v}", file=sys.stderr)


def _ratios(text: str):
    try:
        values = tuple(float(x) for x in text.split(","))
        return data.validate_ratios(values)
    except ValueError as exc:
        raise UsageError(f"--ratios: {exc}") from None


def cmd_synth(args):
    _echo({"out": args.out, "per_class": args.per_class, "size": args.size, "seed": args.seed,
           "threads": args.threads})
    files = data.generate_synthetic_corpus(args.per_class, args.size, args.seed, args.out, args.threads)
    print(f"wrote {len(files)} images to {args.out}")


def cmd_split(args):
    ratios = _ratios(args.ratios)
    _echo({"in": args.input, "out": args.out, "ratios": ",".join(map(repr, ratios)), "seed": args.seed})
    errors = []
    samples = data.load_corpus(args.input, size=None, threads=args.threads, errors=errors)
    for path, why in errors:
        print(f"skipped {path}: {why}", file=sys.stderr)
    split = data.stratified_split(samples, ratios, args.seed)
    data.write_manifest(split, args.out)
    print(f"train={len(split.train)} val={len(split.validation)} test={len(split.test)}")


def cmd_augment(args):
    plan = (augment.parse_plan(Path(args.plan).read_text(), args.seed) if args.plan
            else augment.default_plan(args.seed))
    _echo({"in": args.input, "out": args.out, "plan": args.plan or "(default)", "seed": args.seed,
           "ops": "; ".join(f"{o.kind} {'+-' if o.random_sign else ''}{o.parameter:g}" for o in plan.ops),
           "include_original": plan.include_original})
    errors = []
    samples = data.load_corpus(args.input, size=None, threads=args.threads, errors=errors)
    for path, why in errors:
        print(f"skipped {path}: {why}", file=sys.stderr)
    out = augment.expand_dataset(samples, plan, threads=args.threads)
    augment.write_corpus(out, args.out)
    print(f"{len(samples)} sources -> {len(out)} images in {args.out}")


_TRAIN_FLAGS = {
    "variant": str, "use_batchnorm": str, "dropout_rate": float, "image_size": int, "batch_size": int,
    "learning_rate": float, "epochs": int, "momentum": float, "seed": int, "data_root": str,
    "manifest": str, "ratios": str, "max_train_samples": int, "log_path": str, "checkpoint_path": str,
}


def _train_config(args) -> trainer.TrainConfig:
    values = trainer.parse_key_values(Path(args.config).read_text()) if args.config else {}
    for key in _TRAIN_FLAGS:
        v = getattr(args, key, None)
        if v is not None:
            values[key] = str(v)
    values["threads"] = str(args.threads)
    return trainer.TrainConfig.from_mapping(values)


def cmd_train(args):
    cfg = _train_config(args)
    resume = trainer.load_checkpoint(args.resume) if args.resume else None
    _echo(trainer.parse_key_values(cfg.to_text()))
    res = trainer.fit(cfg, resume=resume)
    print(trainer.EpochLog.HEADER)
    for entry in res.logs:
        print(entry.csv_row())
    for name, rep in (("validation", res.val_report), ("test", res.test_report)):
        if rep is not None:
            print(f"\n[{name}]\n{rep.format()}\n{rep.confusion.format()}")


def _checkpoint_model(path, data_root=None):
    ckpt = trainer.load_checkpoint(path)
    cfg = ckpt.config
    if data_root:
        cfg = trainer.TrainConfig.from_mapping({**trainer.parse_key_values(cfg.to_text()),
                                                "data_root": data_root, "manifest": ""})
    net, _ = trainer.restore(ckpt)
    return cfg, net


def cmd_eval(args):
    cfg, net = _checkpoint_model(args.checkpoint, args.data)
    cfg.threads = args.threads
    _echo({"checkpoint": args.checkpoint, "data": args.data, "subset": args.subset,
           **trainer.parse_key_values(cfg.to_text())})
    split = trainer.load_split(cfg)
    train = trainer.limit_train(split, cfg.max_train_samples)
    train_acc = metrics.accuracy(net, train, cfg.batch_size)
    val_acc = metrics.accuracy(net, split.validation, cfg.batch_size)
    subset = train if args.subset == "train" else split.subset(args.subset)
    _, cm = metrics.evaluate(net, subset, cfg.batch_size)
    rep = metrics.report(cm, train_acc, val_acc)
    print(f"[{args.subset}] n={cm.total}\n{rep.format()}\n{cm.format()}")
    print(metrics.EvalReport.CSV_HEADER)
    print(rep.csv_row())


def cmd_predict(args):
    cfg, net = _checkpoint_model(args.checkpoint)
    _echo({"checkpoint": args.checkpoint, "image": args.image, "image_size": cfg.image_size})
    img = data.read_ppm(args.image)
    img = data.resize_bilinear(img, cfg.image_size, cfg.image_size)
    logits = net.forward(data.to_input([img]), train=False)
    probs = softmax(logits)[0]
    label = int(logits[0, 1] > logits[0, 0])
    print(f"{data.CLASSES[label]} p(no_helmet)={probs[0]:.6f} p(helmet)={probs[1]:.6f}")


def cmd_inspect(args):
    cfg = model.ModelConfig(args.variant, args.batchnorm, args.dropout, input_size=args.image_size)
    _echo({"variant": cfg.variant, "use_batchnorm": cfg.use_batchnorm, "dropout_rate": cfg.dropout_rate,
           "image_size": cfg.input_size})
    rows = model.summarize(model.build(cfg))
    print(model.format_summary(rows))
    if args.csv:
        Path(args.csv).write_text(model.summary_csv(rows))


def cmd_grid(args):
    base = _train_config(args)
    grid = trainer.parse_grid(Path(args.grid).read_text())
    _echo({**trainer.parse_key_values(base.to_text()),
           **{f"grid.{k}": ",".join(map(str, v)) for k, v in grid.items()}})
    text = trainer.run_experiment_grid(base, grid)
    if args.out:
        Path(args.out).write_text(text)
    sys.stdout.write(text)


def _train_overrides(p):
    p.add_argument("--config", help="key=value file mirroring TrainConfig")
    for key, kind in _TRAIN_FLAGS.items():
        p.add_argument("--" + key.replace("_", "-"), dest=key, type=kind, default=None)


def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--threads", type=int, default=1,
                        help="worker threads for I/O and augmentation; never changes results")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = _Parser(prog="helmnet", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", parser_class=_Parser, required=True)

    p = sub.add_parser("synth", parents=[common], help="write a synthetic two-class corpus")
    p.add_argument("--out", required=True)
    p.add_argument("--per-class", type=int, default=150)
    p.add_argument("--size", type=int, default=64)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("split", parents=[common], help="stratified split -> CSV manifest")
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--ratios", default="0.7,0.2,0.1")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_split)

    p = sub.add_parser("augment", parents=[common], help="expand a corpus with crop/rotate/brightness")
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--plan")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_augment)

    p = sub.add_parser("train", parents=[common], help="train a model")
    _train_overrides(p)
    p.add_argument("--resume", help="checkpoint to continue from")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", parents=[common], help="evaluate a checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", help="corpus root (defaults to the checkpoint's)")
    p.add_argument("--subset", choices=("train", "val", "test"), default="test")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("predict", parents=[common], help="classify one PPM image")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--image", required=True)
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("inspect", parents=[common], help="print the layer summary table")
    p.add_argument("--variant", choices=sorted(model.VARIANTS), default="final")
    p.add_argument("--batchnorm", action="store_true")
    p.add_argument("--dropout", type=float, default=0.0)
    p.add_argument("--image-size", type=int, default=224)
    p.add_argument("--csv", help="also write the table as CSV")
    p.set_defaults(func=cmd_inspect)

    p = sub.add_parser("grid", parents=[common], help="run an experiment grid -> CSV")
    _train_overrides(p)
    p.add_argument("--grid", required=True)
    p.add_argument("--out")
    p.set_defaults(func=cmd_grid)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.threads < 1:
            raise UsageError("--threads must be >= 1")
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_USAGE
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        args.func(args)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_USAGE
    except (trainer.NumericalError, FloatingPointError, ArithmeticError) as exc:
        print(f"numerical error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    except (OSError, ValueError, KeyError) as exc:
        # covers PPMError, CorpusError, CheckpointError and malformed config files
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except Exception as exc:  # noqa: BLE001
        print(f"runtime error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
