"""Command-line interface: ``lpbfgs {train,attribute,attack,evaluate}``.

Exit status is 0 on success, 1 for usage errors and 2 for runtime failures.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from dataclasses import asdict

import numpy as np

from .attacks import ATTACKS, LOSSES, AttackConfig, run_attack
from .attribution import DEFAULT_IG_STEPS, STRATEGIES, integrated_gradients
from .errors import LpbfgsError, UsageError
from .experiment import GridSpec, run_experiment
from .model import Image, TrainSpec, atomic_write_text, load_image, load_model, predict, save_image, \
    save_model, train_toy
from .optim import write_trace


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="lpbfgs", description="Sparse adversarial attacks with IG pixel selection and BFGS.")
    p.add_argument("-v", "--verbose", action="count", default=0)
    sub = p.add_subparsers(dest="command", parser_class=_Parser)
    sub.required = True

    t = sub.add_parser("train", help="train the toy classifier on the synthetic blob task")
    t.add_argument("--out", required=True, help="model JSON path")
    t.add_argument("--samples", type=int, default=2000)
    t.add_argument("--epochs", type=int, default=20)
    t.add_argument("--lr", type=float, default=0.05)
    t.add_argument("--seed", type=int, default=7)
    t.add_argument("--classes", type=int, default=2)
    t.add_argument("--shape", type=int, nargs=3, default=(1, 8, 8), metavar=("C", "H", "W"))
    t.add_argument("--hidden", type=int, nargs="+", default=(64, 32))
    t.add_argument("--activation", choices=("tanh", "relu"), default="tanh")
    t.add_argument("--noise", type=float, default=0.1)
    t.add_argument("--export-images", metavar="DIR", help="write correctly classified test images here")
    t.add_argument("--export-count", type=int, default=10)

    a = sub.add_parser("attribute", help="Integrated Gradients scores for one image")
    a.add_argument("--model", required=True)
    a.add_argument("--image", required=True)
    a.add_argument("--label", type=int, help="class to attribute (default: predicted)")
    a.add_argument("--ig-steps", type=int, default=DEFAULT_IG_STEPS)
    a.add_argument("--out", required=True, help="score file ('ATTR N' header)")
    a.add_argument("--csv", help="optional per-pixel CSV (index, score, |score|, rank)")

    k = sub.add_parser("attack", help="attack one image and write a JSON result record")
    k.add_argument("--model", required=True)
    k.add_argument("--image", required=True)
    k.add_argument("--label", type=int, help="true label (default: model prediction)")
    _attack_flags(k)
    k.add_argument("--target", type=int, help="JSMA target class (default: seeded random)")
    k.add_argument("--out", required=True, help="result JSON path")
    k.add_argument("--adv-out", help="write the adversarial image here")
    k.add_argument("--trace", help="BFGS per-iteration CSV trace (lpbfgs only)")

    e = sub.add_parser("evaluate", help="run an attack grid over the synthetic test split")
    e.add_argument("--grid", help="grid spec JSON; replaces the grid flags below")
    e.add_argument("--model", help="model JSON (default: train from the grid's train spec)")
    e.add_argument("--attacks", nargs="+", choices=ATTACKS, default=["lpbfgs", "fgsm"])
    e.add_argument("--losses", nargs="+", choices=LOSSES, default=["cw"])
    e.add_argument("--selectors", nargs="+", choices=STRATEGIES, default=["ig-top"])
    e.add_argument("--ks", nargs="+", type=int, default=[8])
    e.add_argument("--examples", type=int, default=200)
    e.add_argument("--c", type=float, default=1e3)
    e.add_argument("--kappa", type=float, default=0.0)
    e.add_argument("--iters", type=int, default=200)
    e.add_argument("--eps-fgsm", type=float, default=1.0)
    e.add_argument("--ig-steps", type=int, default=DEFAULT_IG_STEPS)
    e.add_argument("--seed", type=int, default=0)
    e.add_argument("--jobs", type=int, default=1)
    e.add_argument("--out", required=True, help="output directory")
    return p


def _attack_flags(p):
    d = AttackConfig()
    p.add_argument("--attack", choices=ATTACKS, default=d.attack)
    p.add_argument("--loss", choices=LOSSES, default=d.loss)
    p.add_argument("--selector", choices=STRATEGIES, default=d.strategy)
    p.add_argument("--pixels", type=int, default=d.pixels, help="pixel budget K")
    p.add_argument("--c", type=float, default=d.c)
    p.add_argument("--kappa", type=float, default=d.kappa)
    p.add_argument("--iters", type=int, default=d.iterations)
    p.add_argument("--tol", type=float, default=d.tolerance)
    p.add_argument("--eps-fgsm", type=float, default=d.eps_fgsm)
    p.add_argument("--adam-step", type=float, default=d.adam_step)
    p.add_argument("--max-step", type=float, default=d.max_step)
    p.add_argument("--ig-steps", type=int, default=d.ig_steps)
    p.add_argument("--seed", type=int, default=d.seed)


def _load_inputs(args):
    model = load_model(args.model)
    image = load_image(args.image)
    if image.size != model.n_inputs:
        raise UsageError(f"image has {image.size} components but the model expects {model.n_inputs}")
    label = predict(model, image) if args.label is None else args.label
    if not 0 <= label < model.classes:
        raise UsageError(f"--label must lie in [0, {model.classes}), got {label}")
    return model, image, label


def cmd_train(args):
    spec = TrainSpec(shape=tuple(args.shape), classes=args.classes, samples=args.samples, epochs=args.epochs,
                     lr=args.lr, seed=args.seed, hidden=tuple(args.hidden), activation=args.activation,
                     noise=args.noise)
    model, report, (_, test) = train_toy(spec)
    save_model(model, args.out)
    print(json.dumps({"model": args.out, **asdict(report)}))
    if args.export_images:
        os.makedirs(args.export_images, exist_ok=True)
        preds = [predict(model, x) for x in test.X]
        written = 0
        for i, (x, y) in enumerate(zip(test.X, test.y)):
            if written >= args.export_count:
                break
            if preds[i] == y:
                save_image(Image(x, spec.shape), os.path.join(args.export_images, f"test{i:04d}_label{y}.txt"))
                written += 1
    return 0


def cmd_attribute(args):
    model, image, label = _load_inputs(args)
    amap = integrated_gradients(model, image, None, label, args.ig_steps)
    scores = amap.scores
    atomic_write_text(args.out, f"ATTR {scores.size}\n" + "\n".join(repr(float(s)) for s in scores) + "\n")
    if args.csv:
        order = np.argsort(-np.abs(scores), kind="stable")
        rank = np.empty(scores.size, dtype=int)
        rank[order] = np.arange(1, scores.size + 1)
        lines = ["index,score,abs_score,rank"]
        lines += [f"{i},{s!r},{abs(s)!r},{rank[i]}" for i, s in enumerate(scores.tolist())]
        atomic_write_text(args.csv, "\n".join(lines) + "\n")
    return 0


def cmd_attack(args):
    model, image, label = _load_inputs(args)
    config = AttackConfig(attack=args.attack, loss=args.loss, c=args.c, kappa=args.kappa, eps_fgsm=args.eps_fgsm,
                          iterations=args.iters, tolerance=args.tol, pixels=args.pixels, strategy=args.selector,
                          adam_step=args.adam_step, seed=args.seed, ig_steps=args.ig_steps,
                          max_step=args.max_step)
    if config.attack != "jsma" and config.pixels > image.size:
        raise UsageError(f"--pixels K must satisfy 1 <= K <= N={image.size}")
    if config.attack == "jsma" and args.target is not None:
        from .attacks import jsma_attack

        result = jsma_attack(model, image, label, args.target, config.pixels, config.jsma_theta)
    elif config.attack == "lpbfgs" and args.trace:
        from .attacks import lp_bfgs_attack

        reports = []
        result = lp_bfgs_attack(model, image, label, config, report=reports)
        write_trace(reports[0], args.trace)
    else:
        result = run_attack(model, image, label, config)
    atomic_write_text(args.out, json.dumps(result.record(config), indent=2) + "\n")
    if args.adv_out:
        save_image(Image(result.adversarial, image.shape), args.adv_out)
    return 0


def cmd_evaluate(args):
    if args.grid:
        with open(args.grid, encoding="utf-8") as fh:
            try:
                doc = json.load(fh)
            except json.JSONDecodeError as exc:
                raise UsageError(f"{args.grid}: invalid JSON ({exc.msg})") from None
        grid = GridSpec.from_dict(doc)
        if args.model:
            grid.model = args.model
    else:
        grid = GridSpec(attacks=tuple(args.attacks), losses=tuple(args.losses), strategies=tuple(args.selectors),
                        ks=tuple(args.ks), examples=args.examples, seed=args.seed, c=args.c, kappa=args.kappa,
                        iterations=args.iters, eps_fgsm=args.eps_fgsm, ig_steps=args.ig_steps, model=args.model)
    grid.base_config()  # validate numeric flags before any work
    if args.jobs < 1:
        raise UsageError("--jobs must be >= 1")
    out = run_experiment(grid, args.out, jobs=args.jobs)
    for row in out["rows"]:
        print(f"{row.attack:7s} {row.loss:5s} {row.strategy:9s} k={row.k:<4d} ASR={row.asr:6.2f}%  "
              f"L2={row.l2:.4f}  conf={row.confidence:.4f}")
    return 0


COMMANDS = {"train": cmd_train, "attribute": cmd_attribute, "attack": cmd_attack, "evaluate": cmd_evaluate}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2), format="%(levelname)s %(message)s")
    try:
        return COMMANDS[args.command](args)
    except FileNotFoundError as exc:
        print(f"error: file not found: {exc.filename}", file=sys.stderr)
        return 1
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (LpbfgsError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
