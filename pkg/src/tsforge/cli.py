"""Command-line entry point: ``tsforge <subcommand>`` or ``python -m tsforge``."""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import pipeline as pl
from .config import ConfigError, load_config
from .dataset import (CorpusError, SequenceCorpus, Scaler, apply_scaler, fit_scaler,
                      generate_synthetic, load_corpus, save_corpus)
from .diffusion import DenoiserModel, sample_first_steps
from .evaluation import (NumericalError, avg_fid_over_classes, run_table1_matrix,
                         run_uplift_experiment, traditional_augment)
from .netcore import GraphError
from .segloss import DegenerateSegmentationError, IntervalSegmentation, segment_corpus
from .seqmodel import SeqModel, generate_sequence

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC, EXIT_DEGENERATE = 0, 2, 3, 4

log = logging.getLogger("tsforge")


def resolve_seed(arg, default: int = 0) -> int:
    if arg is not None:
        return int(arg)
    env = os.environ.get("TSFORGE_SEED")
    if env is not None:
        try:
            return int(env)
        except ValueError:
            raise ConfigError(f"TSFORGE_SEED must be an integer, got {env!r}")
    return default


def _config(args):
    cfg = load_config(getattr(args, "config", None), getattr(args, "paper_scale", False))
    return replace(cfg, seed=resolve_seed(args.seed, cfg.seed))


def _scaled(corpus: SequenceCorpus, method: str):
    scaler = fit_scaler(corpus, method)
    return scaler, apply_scaler(corpus, scaler)


# subcommands -------------------------------------------------------------------

def cmd_synth(args):
    cfg = _config(args)
    corpus = generate_synthetic(cfg.synthetic, cfg.seed)
    save_corpus(corpus, args.out)
    print(f"wrote {corpus.n} sequences ({corpus.length} x {corpus.channels}) to {args.out}")


def cmd_segment(args):
    _, scaled = _scaled(load_corpus(args.corpus), args.scaler)
    seg, curve, fit = segment_corpus(scaled.samples, args.degree, fallback=args.fallback)
    pl.write_json(args.out, seg.to_dict())
    print(f"boundaries {list(seg.boundaries)}")
    if args.emit_curves:
        avg, fitted = curve.average, fit(curve.times)
        rows = [{"t": t, "average": avg[t - 1],
                 "difference": "" if t == 1 else curve.values[t - 2],
                 "fitted": "" if t == 1 else fitted[t - 2]} for t in range(1, len(avg) + 1)]
        pl.write_rows(args.emit_curves, rows)


def cmd_train_diffusion(args):
    cfg = _config(args)
    corpus = load_corpus(args.corpus)
    scaler, scaled = _scaled(corpus, args.scaler)
    dcfg = replace(cfg.diffusion, steps=args.steps or cfg.diffusion.steps,
                   epochs=cfg.diffusion.epochs if args.epochs is None else args.epochs,
                   lr=cfg.diffusion.lr if args.lr is None else args.lr,
                   target=args.target or cfg.diffusion.target)
    cfg = replace(cfg, diffusion=dcfg, scaler=args.scaler)
    cfg.validate()
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    model = pl.diffusion_stage(scaled, cfg, out)
    # diffusion_stage writes into out/diffusion; keep a flat model directory
    for f in (out / "diffusion").iterdir():
        f.replace(out / f.name)
    (out / "diffusion").rmdir()
    pl.write_json(out / "scaler.json", scaler.to_dict())
    print(f"trained denoiser ({model.config.target} target) -> {out}")


def cmd_sample_first(args):
    model = DenoiserModel.load(args.model)
    scaler_path = Path(args.model) / "scaler.json"
    bounds = (0.0, 1.0)
    if scaler_path.exists():
        bounds = Scaler.from_dict(json.loads(scaler_path.read_text())).bounds
    frames = sample_first_steps(model, args.cls, args.count, resolve_seed(args.seed), bounds)
    pl.write_first_frames(args.out, frames)
    print(f"wrote {len(frames)} first frames to {args.out}")


def cmd_train_seq(args):
    cfg = _config(args)
    corpus = load_corpus(args.corpus)
    scaler, scaled = _scaled(corpus, cfg.scaler)
    if args.seg:
        seg = IntervalSegmentation.from_dict(json.loads(Path(args.seg).read_text()))
    else:
        seg, _, _ = segment_corpus(scaled.samples, cfg.segment.degree, cfg.segment.weights,
                                   cfg.segment.fallback)
    window = args.window if args.window is not None else cfg.seq.window
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    model, history = pl.seq_stage(scaled, seg, cfg, window, out)
    d = out / f"seq_w{window}"
    for f in d.iterdir():
        f.replace(out / f.name)
    d.rmdir()
    pl.write_json(out / "scaler.json", scaler.to_dict())
    pl.write_json(out / "seg.json", seg.to_dict())
    print(f"final loss {history[-1]['loss']:.6g} after {len(history)} epochs -> {out}")


def cmd_generate(args):
    model = SeqModel.load(args.seq_model)
    scaler = Scaler.from_dict(json.loads((Path(args.seq_model) / "scaler.json").read_text()))
    first = pl.read_first_frames(args.first)
    if first.shape[1] != model.config.features:
        raise ConfigError(f"first frames have {first.shape[1]} values, model expects {model.config.features}")
    length = args.length or model.config.length
    labels = np.full(len(first), args.cls)
    seqs = generate_sequence(model, first, labels, length)
    corpus = SequenceCorpus(scaler.invert(seqs), labels, np.full(len(first), length),
                            model.config.classes, scaler)
    save_corpus(corpus, args.out)
    print(f"wrote {corpus.n} generated sequences to {args.out}")


def cmd_evaluate(args):
    seed = resolve_seed(args.seed)
    if args.what == "fid":
        real, gen = load_corpus(args.real), load_corpus(args.gen)
        res = avg_fid_over_classes(real.first_frames(), real.labels, gen.first_frames(), gen.labels,
                                   real.class_count, args.reps, args.fraction, seed)
        report = {"fid": res}
        print(f"average FID {res['mean']:.6g} (repetition variance {res['rep_variance']:.3g})")
    elif args.what == "table1":
        cfg = _config(args)
        seed = cfg.seed
        report = run_table1_matrix(load_corpus(args.corpus), cfg.diffusion, cfg.evaluation.first_per_class,
                                   args.reps or cfg.evaluation.repetitions, cfg.evaluation.fraction, seed)
        print(report["csv"], end="")
    else:
        cfg = _config(args)
        seed = cfg.seed
        train, test = load_corpus(args.train), load_corpus(args.test)
        scaler = fit_scaler(train, cfg.scaler)
        tr = apply_scaler(train, scaler)
        gens = {Path(g).name: apply_scaler(load_corpus(g), scaler) for g in args.gen}
        trad = traditional_augment(tr, cfg.evaluation.gen_per_class, seed)
        report = run_uplift_experiment(tr, apply_scaler(test, scaler), gens, trad,
                                       cfg.evaluation.classifier, seed)
        print(report["table2"]["csv"], end="")
    if args.out:
        pl.write_json(args.out, report)


def cmd_run(args):
    cfg = _config(args)
    report = pl.run_pipeline(cfg, args.out)
    print(report["uplift"]["table2"]["csv"], end="")
    if "table1" in report:
        print(report["table1"]["csv"], end="")
    print(f"report -> {Path(args.out) / 'report.json'}")


def cmd_emit_curves(args):
    for p in pl.emit_curves(args.run_dir):
        print(p)


# parser ------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="tsforge", description="Diffusion + masked sequence model data synthesis.")
    p.add_argument("-v", "--verbose", action="count", default=0)
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, config=True):
        sp.add_argument("--seed", type=int, default=None, help="falls back to $TSFORGE_SEED")
        if config:
            sp.add_argument("--config", default=None, help="pipeline config JSON")
            sp.add_argument("--paper-scale", action="store_true", help="T=610, d=34, width 512, depth 6")

    sp = sub.add_parser("synth", help="write the synthetic corpus as a bundle")
    common(sp)
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=cmd_synth)

    sp = sub.add_parser("segment", help="quartile segmentation of a corpus")
    sp.add_argument("--corpus", required=True)
    sp.add_argument("--degree", type=int, default=20)
    sp.add_argument("--scaler", default="unit_interval")
    sp.add_argument("--fallback", action="store_true", help="equal quarters on a degenerate curve")
    sp.add_argument("--out", required=True)
    sp.add_argument("--emit-curves", default=None, metavar="CSV")
    sp.set_defaults(func=cmd_segment)

    sp = sub.add_parser("train-diffusion", help="train the first-frame denoiser")
    common(sp)
    sp.add_argument("--corpus", required=True)
    sp.add_argument("--steps", type=int, default=None)
    sp.add_argument("--epochs", type=int, default=None)
    sp.add_argument("--lr", type=float, default=None)
    sp.add_argument("--target", choices=("x0", "eps"), default=None)
    sp.add_argument("--scaler", default="unit_interval")
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=cmd_train_diffusion)

    sp = sub.add_parser("sample-first", help="sample first frames for one class")
    common(sp, config=False)
    sp.add_argument("--model", required=True)
    sp.add_argument("--class", dest="cls", type=int, required=True)
    sp.add_argument("--count", type=int, required=True)
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=cmd_sample_first)

    sp = sub.add_parser("train-seq", help="train the masked sequence model")
    common(sp)
    sp.add_argument("--corpus", required=True)
    sp.add_argument("--window", type=int, default=None)
    sp.add_argument("--seg", default=None, help="seg.json; computed from the corpus when absent")
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=cmd_train_seq)

    sp = sub.add_parser("generate", help="extend first frames into full sequences")
    sp.add_argument("--seq-model", required=True)
    sp.add_argument("--first", required=True)
    sp.add_argument("--class", dest="cls", type=int, required=True)
    sp.add_argument("--length", type=int, default=None)
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=cmd_generate)

    sp = sub.add_parser("evaluate", help="fid | table1 | uplift")
    ev = sp.add_subparsers(dest="what", required=True)
    e = ev.add_parser("fid")
    common(e, config=False)
    e.add_argument("--real", required=True)
    e.add_argument("--gen", required=True)
    e.add_argument("--reps", type=int, default=100)
    e.add_argument("--fraction", type=float, default=0.8)
    e.add_argument("--out", default=None)
    e = ev.add_parser("table1")
    common(e)
    e.add_argument("--corpus", required=True)
    e.add_argument("--reps", type=int, default=None)
    e.add_argument("--out", default=None)
    e = ev.add_parser("uplift")
    common(e)
    e.add_argument("--train", required=True)
    e.add_argument("--test", required=True)
    e.add_argument("--gen", nargs="+", required=True)
    e.add_argument("--out", default=None)
    sp.set_defaults(func=cmd_evaluate)

    sp = sub.add_parser("run", help="full pipeline into one artifact directory")
    common(sp)
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=cmd_run)

    sp = sub.add_parser("emit-curves", help="plot-ready CSVs from a run directory")
    sp.add_argument("--run-dir", required=True)
    sp.set_defaults(func=cmd_emit_curves)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    level = logging.WARNING - 10 * min(args.verbose, 2)
    logging.basicConfig(level=level, format="%(levelname)s %(message)s")
    try:
        args.func(args)
    except DegenerateSegmentationError as exc:
        print(f"degenerate segmentation: {exc}", file=sys.stderr)
        return EXIT_DEGENERATE
    except (NumericalError, FloatingPointError, GraphError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (ConfigError, CorpusError, pl.MissingArtifactError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
