"""Command line entry point: ``coopreg {train,eval,run,sweep,report,render}``."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from coopreg import experiments as ex
from coopreg.fields import warp_image
from coopreg.figures import pair_figure, render_falsecolor
from coopreg.metrics import predict_fields
from coopreg.rawio import write_png
from coopreg.training import load_checkpoint


def _load_spec(args) -> ex.ExperimentSpec:
    spec = ex.ExperimentSpec.from_json(args.config)
    if args.seed is not None:
        spec = spec.with_seed(args.seed)
    if getattr(args, "output_dir", None):
        spec = ex.ExperimentSpec.from_dict({**spec.to_dict(), "output_dir": args.output_dir})
    return spec


def _progress(it, values):
    logging.info("iter %6d  %s", it, "  ".join(f"{k}={v:.5g}" for k, v in values.items()))


def cmd_train(args):
    spec = _load_spec(args)
    ex.train_stage(spec, progress=_progress)
    print(f"checkpoint written to {Path(spec.output_dir) / 'checkpoint'}")


def cmd_eval(args):
    spec = _load_spec(args)
    row = ex.eval_stage(spec)
    print(json.dumps(row.__dict__))


def cmd_run(args):
    spec = _load_spec(args)
    row = ex.run_experiment(spec, progress=_progress)
    print(json.dumps(row.__dict__))


def cmd_sweep(args):
    spec = _load_spec(args)
    out = Path(spec.output_dir)
    model = load_checkpoint(out / "checkpoint")
    fig_dir = out / "figures"
    fig_dir.mkdir(parents=True, exist_ok=True)
    rows = ex.latent_sweep(model, spec.dataset.family, args.n_sources,
                           figure_path=fig_dir / "sweep.png")
    ex.write_sweep_csv(rows, fig_dir / "sweep.csv")
    print(f"spearman={ex.sweep_monotonicity(rows):.4f}")


def cmd_report(args):
    rows = []
    for cfg in args.config:
        spec = ex.ExperimentSpec.from_json(cfg)
        result = ex.read_eval_csv(Path(spec.output_dir) / "eval.csv")
        rows.append(ex.ReportRow.from_eval(spec, result))
    ex.emit_report(rows, args.out)
    print(Path(args.out).with_suffix(".txt").read_text(), end="")


def cmd_render(args):
    spec = _load_spec(args)
    out = Path(spec.output_dir)
    model = load_checkpoint(out / "checkpoint")
    dataset = ex.load_dataset_for(spec)
    i, j = dataset.test_index[args.pair]
    s, t = dataset.samples[i].image, dataset.samples[j].image
    field = predict_fields(model.primary, s[None], t[None])[0]
    registered = warp_image(s, field.astype(np.float64))
    fig_dir = out / "figures"
    fig_dir.mkdir(parents=True, exist_ok=True)
    write_png(fig_dir / f"falsecolor_{args.pair:04d}.png", render_falsecolor(t, registered))
    pair_figure(fig_dir / f"render_{args.pair:04d}.png", s, t, registered, field)
    print(f"figures written to {fig_dir}")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="coopreg", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, func, help_text, multi_config=False):
        p = sub.add_parser(name, help=help_text)
        if multi_config:
            p.add_argument("--config", action="append", required=True,
                           help="experiment JSON (repeatable)")
        else:
            p.add_argument("--config", required=True, help="experiment JSON")
            p.add_argument("--output-dir", help="override the spec's output_dir")
        p.add_argument("--seed", type=int, help="override the training seed")
        p.set_defaults(func=func)
        return p

    add("train", cmd_train, "train and write a checkpoint")
    add("eval", cmd_eval, "evaluate a trained checkpoint on the test pairs")
    add("run", cmd_run, "train then evaluate")
    add("sweep", cmd_sweep, "latent sweep against the centered target").add_argument(
        "--n-sources", type=int, default=100)
    add("report", cmd_report, "collect eval.csv files into a table", multi_config=True
        ).add_argument("--out", required=True, help="report CSV path")
    add("render", cmd_render, "false-color figure for one test pair").add_argument(
        "--pair", type=int, default=0)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(message)s")
    try:
        args.func(args)
    except Exception as exc:  # noqa: BLE001
        print(f"coopreg {args.command}: error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
