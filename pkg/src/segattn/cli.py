"""Command line front end.

Subcommands: gradcheck, bench, analyze, sweep, gen-data, train, eval.
Exit codes: 0 ok, 1 usage, 2 data/format, 3 numeric divergence,
4 assertion/acceptance failure. Every error prints one
machine-parseable line: ``error: <kind>: <reason>``.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import complexity, scenes, training
from .config import RunConfig, read_config_file
from .errors import DivergenceError, EvaluationError, HmatFormatError, LabelError
from .gradsuite import all_cases, run_case
from .network import LossWeights, init_net
from .partition import PartitionSpec
from .region_attention import rsa_attention_flops

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_DIVERGED = 3
EXIT_ASSERT = 4


class UsageError(Exception):
    pass


class CheckFailure(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def build_parser() -> _Parser:
    parser = _Parser(prog="segattn", description=__doc__.splitlines()[0])
    parser.add_argument("--config", help="key = value file; flags override it")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gradcheck", help="finite-difference checks for all ops and modules")
    p.add_argument("--all", action="store_true", help="run every case (default)")
    p.add_argument("--case", action="append", help="run only the named case(s)")
    p.add_argument("--seed", type=int, default=0, help="first seed")
    p.add_argument("--seeds", type=int, default=20, help="seeds per case")

    p = sub.add_parser("bench", help="wallclock forward timing")
    p.add_argument("--kind", choices=["sa", "rsa", "both"], default="both")
    p.add_argument("--b", type=int, default=1)
    p.add_argument("--c", type=int, default=256)
    p.add_argument("--h", type=int, default=64)
    p.add_argument("--w", type=int, default=64)
    p.add_argument("--gh", type=int, default=8)
    p.add_argument("--gw", type=int, default=8)
    p.add_argument("--reps", type=int, default=5)
    p.add_argument("--threads", type=int, default=1)
    p.add_argument("--assert-speedup", type=float, default=None,
                   help="exit 4 unless sa/rsa median ratio reaches this")
    p.add_argument("--out", help="JSON-lines output path (default stdout)")

    p = sub.add_parser("analyze", help="symbolic params/memory/FLOPs report")
    p.add_argument("--kind", choices=["sa", "rsa", "caa", "all"], default="all")
    p.add_argument("--b", type=int, default=1)
    p.add_argument("--c", type=int, default=2048)
    p.add_argument("--h", type=int, default=128)
    p.add_argument("--w", type=int, default=128)
    p.add_argument("--gh", type=int, default=8)
    p.add_argument("--gw", type=int, default=8)
    p.add_argument("--out", help="CSV output path (default stdout)")

    p = sub.add_parser("sweep", help="cost curves or hyperparameter sweeps")
    p.add_argument("--what", choices=["flops", "alpha", "partition"], default="flops",
                   help="flops: analyzer curves over sizes; alpha/partition: "
                        "train and evaluate per setting")
    p.add_argument("--kinds", default="sa,rsa", help="comma list of sa,rsa,caa")
    p.add_argument("--sizes", default="32,64,96,128", help="comma list of square extents")
    p.add_argument("--c", type=int, default=2048)
    p.add_argument("--fixed-p", type=int, default=16,
                   help="hold region extent fixed (grid grows with the image)")
    p.add_argument("--grid", default=None,
                   help="GHxGW: hold the grid fixed instead of the region extent")
    p.add_argument("--alphas", default="50,100,150,200",
                   help="gate ratios for --what alpha")
    p.add_argument("--grids", default="8x8,4x4,2x2",
                   help="partition grids for --what partition")
    p.add_argument("--data", help="training dataset directory (alpha/partition)")
    p.add_argument("--eval-data", help="held-out dataset directory (default: --data)")
    for name, default in (("seed", 0), ("iterations", 400), ("batch", 4), ("classes", 6)):
        p.add_argument(f"--{name}", type=int, default=default)
    p.add_argument("--out", help="CSV output path (default stdout)")

    p = sub.add_parser("gen-data", help="write a synthetic scene dataset")
    p.add_argument("--out", required=True)
    p.add_argument("--count", type=int, default=200)
    p.add_argument("--height", type=int, default=64)
    p.add_argument("--width", type=int, default=64)
    p.add_argument("--seed", type=int, default=0)

    p = sub.add_parser("train", help="train the toy network on a dataset directory")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    for name, default in (("seed", 0), ("iterations", 2000), ("batch", 4),
                          ("classes", 6), ("gh", 4), ("gw", 4), ("alpha", 150)):
        p.add_argument(f"--{name}", type=int, default=default)
    for name, default in (("lr", 0.01), ("momentum", 0.9), ("weight-decay", 5e-4),
                          ("power", 0.9), ("lam-ce", 1.0), ("lam-cls", 0.5),
                          ("lam-aux", 0.4)):
        p.add_argument(f"--{name}", type=float, default=default)
    p.add_argument("--zero-attention", action="store_true",
                   help="train with both attention branch outputs forced to zero")

    p = sub.add_parser("eval", help="evaluate a checkpoint on a dataset directory")
    p.add_argument("--data", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--out", help="metric CSV path (default stdout)")
    return parser


def _emit(text: str, out: str | None) -> None:
    if out:
        Path(out).write_text(text)
    else:
        sys.stdout.write(text)


def _report_csv(reports, config_echo: str | None = None) -> str:
    lines = []
    if config_echo:
        lines.extend(f"# {l}" for l in config_echo.strip().splitlines())
    lines.append("kind,H,W,C,params,memory_bytes,flops,attention_flops,formula_ratio")
    for r in reports:
        if r.kind == "rsa":
            ratio = f"{rsa_attention_flops(r.spec, r.h, r.w, r.c).ratio:.17g}"
        elif r.kind == "sa":
            ratio = "1"
        else:
            ratio = ""
        lines.append(f"{r.kind},{r.h},{r.w},{r.c},{r.params},{r.memory_bytes},"
                     f"{r.flops},{r.attention_flops},{ratio}")
    return "\n".join(lines) + "\n"


def _cmd_gradcheck(args) -> int:
    cases = all_cases()
    if args.case:
        wanted = set(args.case)
        cases = [c for c in cases if c.name in wanted]
        missing = wanted - {c.name for c in cases}
        if missing:
            raise UsageError(f"unknown gradcheck case(s): {sorted(missing)}")
    failures = 0
    for case in cases:
        worst = 0.0
        for seed in range(args.seed, args.seed + args.seeds):
            worst = max(worst, run_case(case, seed))
        ok = worst < case.tol
        failures += not ok
        print(f"{'PASS' if ok else 'FAIL'} {case.name} max_rel_err={worst:.3e} "
              f"tol={case.tol:g} seeds={args.seeds}")
    if failures:
        raise CheckFailure(f"{failures} gradcheck case(s) above tolerance")
    return EXIT_OK


def _cmd_bench(args) -> int:
    kinds = ["sa", "rsa"] if args.kind == "both" else [args.kind]
    spec = PartitionSpec.from_grid(args.gh, args.gw, args.h, args.w)
    results = {}
    lines = []
    for kind in kinds:
        res = complexity.wallclock_bench(kind, args.b, args.c, args.h, args.w,
                                         spec=spec, repetitions=args.reps,
                                         threads=args.threads)
        results[kind] = res
        lines.append(json.dumps({
            "kind": res.kind, "b": res.b, "c": res.c, "h": res.h, "w": res.w,
            "median_s": res.median_s, "times": res.times, "host": res.host}))
    _emit("\n".join(lines) + "\n", args.out)
    if args.assert_speedup is not None:
        if set(results) != {"sa", "rsa"}:
            raise UsageError("--assert-speedup needs --kind both")
        ratio = results["sa"].median_s / results["rsa"].median_s
        print(f"speedup sa/rsa = {ratio:.2f}x (required {args.assert_speedup:g}x)")
        if ratio < args.assert_speedup:
            raise CheckFailure(f"speedup {ratio:.2f}x below {args.assert_speedup:g}x")
    return EXIT_OK


def _echo(args, keys) -> str:
    return "\n".join(f"{k} = {getattr(args, k)}" for k in keys)


def _cmd_analyze(args) -> int:
    kinds = ["sa", "rsa", "caa"] if args.kind == "all" else [args.kind]
    reports = []
    for kind in kinds:
        spec = None
        if kind == "rsa":
            spec = PartitionSpec.from_grid(args.gh, args.gw, args.h, args.w)
        reports.append(complexity.analyze(kind, args.b, args.c, args.h, args.w, spec))
    _emit(_report_csv(reports, _echo(args, ("kind", "b", "c", "h", "w", "gh", "gw"))),
          args.out)
    return EXIT_OK


def _cmd_sweep(args) -> int:
    if args.what == "flops":
        kinds = [k.strip() for k in args.kinds.split(",") if k.strip()]
        sizes = [(int(s), int(s)) for s in args.sizes.split(",") if s.strip()]
        grid = None
        if args.grid:
            gh, _, gw = args.grid.partition("x")
            grid = (int(gh), int(gw))
        reports = complexity.sweep(kinds, sizes, args.c,
                                   fixed_region=(args.fixed_p, args.fixed_p), grid=grid)
        _emit(_report_csv(reports, _echo(args, ("what", "kinds", "sizes", "c",
                                                "fixed_p", "grid"))), args.out)
        return EXIT_OK

    if not args.data:
        raise UsageError(f"--what {args.what} needs --data")
    images, labels = _load_dataset(args.data)
    eval_images, eval_labels = (images, labels) if not args.eval_data \
        else _load_dataset(args.eval_data)

    if args.what == "alpha":
        settings = [("alpha", int(a)) for a in args.alphas.split(",") if a.strip()]
    else:
        settings = []
        for token in args.grids.split(","):
            gh, _, gw = token.strip().partition("x")
            settings.append(("grid", (int(gh), int(gw))))

    lines = [f"# what = {args.what}", f"# seed = {args.seed}",
             f"# iterations = {args.iterations}", f"# batch = {args.batch}",
             "setting,loss_ratio,mean_f1,mean_iou,overall_accuracy"]
    for kind, value in settings:
        cfg = RunConfig(seed=args.seed, classes=args.classes,
                        iterations=args.iterations, batch=args.batch)
        if kind == "alpha":
            cfg.alpha = value
            label = str(value)
        else:
            cfg.gh, cfg.gw = value
            label = f"{value[0]}x{value[1]}"
        net, result = _train_with_config(cfg, images, labels)
        summary = training.evaluate_model(net, eval_images, eval_labels)
        lines.append(f"{label},{result.final_loss / result.initial_loss:.6f},"
                     f"{summary.mean_f1:.6f},{summary.mean_iou:.6f},{summary.oa:.6f}")
    _emit("\n".join(lines) + "\n", args.out)
    return EXIT_OK


def _cmd_gen_data(args) -> int:
    scenes.write_dataset(args.out, args.count, args.height, args.width, args.seed)
    print(f"wrote {args.count} scenes to {args.out}")
    return EXIT_OK


def _load_dataset(path: str):
    data = scenes.read_dataset(path)
    return [s.image.astype("f64") for s in data], [s.labels for s in data]


def _train_with_config(cfg: RunConfig, images, labels):
    rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, 0x11]))
    net = init_net(rng, num_classes=cfg.classes, grid=(cfg.gh, cfg.gw), cca_ratio=cfg.alpha)
    result = training.train(
        net, images, labels, iterations=cfg.iterations, batch_size=cfg.batch,
        base_lr=cfg.lr, momentum=cfg.momentum, weight_decay=cfg.weight_decay,
        power=cfg.power, seed=cfg.seed, zero_attention=cfg.zero_attention,
        weights=LossWeights(cfg.lam_ce, cfg.lam_cls, cfg.lam_aux))
    return net, result


def _cmd_train(args) -> int:
    cfg = RunConfig(seed=args.seed, classes=args.classes, alpha=args.alpha,
                    gh=args.gh, gw=args.gw, lam_ce=args.lam_ce, lam_cls=args.lam_cls,
                    lam_aux=args.lam_aux, lr=args.lr, momentum=args.momentum,
                    weight_decay=args.weight_decay, power=args.power,
                    iterations=args.iterations, batch=args.batch,
                    zero_attention=args.zero_attention)
    images, labels = _load_dataset(args.data)
    cfg.height, cfg.width = labels[0].shape
    net, result = _train_with_config(cfg, images, labels)
    out = Path(args.out)
    training.save_checkpoint(out, net, cfg.iterations, cfg.seed, cfg.to_text())
    log = ["# " + l for l in cfg.to_text().strip().splitlines()]
    log.append("iteration,lr,total,main,cls,aux")
    for row in result.history:
        log.append(f"{int(row['iteration'])},{row['lr']:.8f},{row['total']:.8f},"
                   f"{row['main']:.8f},{row['cls']:.8f},{row['aux']:.8f}")
    (out / "loss_log.csv").write_text("\n".join(log) + "\n")
    print(f"initial loss {result.initial_loss:.4f}, final loss {result.final_loss:.4f}")
    return EXIT_OK


def _cmd_eval(args) -> int:
    images, labels = _load_dataset(args.data)
    meta = (Path(args.checkpoint) / "checkpoint.txt").read_text()
    cfg = RunConfig.from_text(meta)
    rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, 0x11]))
    net = init_net(rng, num_classes=cfg.classes, grid=(cfg.gh, cfg.gw), cca_ratio=cfg.alpha)
    training.load_checkpoint(args.checkpoint, net)
    summary = training.evaluate_model(net, images, labels,
                                      zero_attention=cfg.zero_attention)
    echo = "".join(f"# {l}\n" for l in cfg.to_text().strip().splitlines())
    _emit(echo + summary.to_csv(), args.out)
    return EXIT_OK


_COMMANDS = {
    "gradcheck": _cmd_gradcheck,
    "bench": _cmd_bench,
    "analyze": _cmd_analyze,
    "sweep": _cmd_sweep,
    "gen-data": _cmd_gen_data,
    "train": _cmd_train,
    "eval": _cmd_eval,
}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.config:
            file_values = read_config_file(args.config)
            _apply_config_file(parser, args, file_values, argv)
        return _COMMANDS[args.command](args)
    except UsageError as e:
        print(f"error: usage: {e}", file=sys.stderr)
        return EXIT_USAGE
    except (HmatFormatError, LabelError, FileNotFoundError, NotADirectoryError, KeyError) as e:
        print(f"error: data: {e}", file=sys.stderr)
        return EXIT_DATA
    except (DivergenceError, EvaluationError) as e:
        print(f"error: divergence: {e}", file=sys.stderr)
        return EXIT_DIVERGED
    except CheckFailure as e:
        print(f"error: check-failed: {e}", file=sys.stderr)
        return EXIT_ASSERT
    except ValueError as e:
        print(f"error: data: {e}", file=sys.stderr)
        return EXIT_DATA


def _apply_config_file(parser, args, file_values: dict[str, str], argv) -> None:
    """File supplies defaults; explicit flags keep priority."""
    given = set()
    for token in (argv if argv is not None else sys.argv[1:]):
        if token.startswith("--"):
            given.add(token[2:].split("=")[0].replace("-", "_"))
    for action in parser._subparsers._group_actions[0].choices.values():  # noqa: SLF001
        for act in action._actions:  # noqa: SLF001
            key = act.dest
            if key in file_values and key not in given and hasattr(args, key):
                value = file_values[key]
                if act.type is not None:
                    value = act.type(value)
                elif isinstance(act.const, bool) or isinstance(getattr(args, key), bool):
                    value = value.lower() in ("1", "true", "yes", "on")
                setattr(args, key, value)


if __name__ == "__main__":
    sys.exit(main())
