"""End-to-end run: corpus -> scale -> segment -> diffusion -> first frames ->
sequence models -> generation -> evaluation -> report.json.

Every stage writes into one artifact directory and records its config hash
and seed in manifest.json. A failing stage leaves a FAILED marker next to
whatever was already written.
"""
from __future__ import annotations

import csv
import json
import logging
from dataclasses import asdict, replace
from pathlib import Path

import numpy as np

from .config import PipelineConfig, config_hash
from .dataset import (Scaler, SequenceCorpus, apply_scaler, concat_corpora, fit_scaler,
                      generate_synthetic, load_corpus, save_corpus, split_per_class)
from .diffusion import DenoiserModel, sample_first_steps, train_diffusion
from .evaluation import (avg_fid_over_classes, real_split_fid, run_table1_matrix,
                         run_uplift_experiment, traditional_augment)
from .segloss import (IntervalSegmentation, PolyFit, average_feature_curve, difference_curve,
                      segment_corpus)
from .seqmodel import SeqModel, alternating_train, generate_sequence

log = logging.getLogger("tsforge")


class MissingArtifactError(FileNotFoundError):
    pass


def write_json(path, obj):
    Path(path).write_text(json.dumps(obj, indent=1, sort_keys=True) + "\n")


def write_rows(path, rows: list[dict]):
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=list(rows[0]), lineterminator="\n")
        w.writeheader()
        w.writerows(rows)


def read_first_frames(path) -> np.ndarray:
    return np.atleast_2d(np.loadtxt(path, delimiter=",", ndmin=2))


def write_first_frames(path, frames):
    np.savetxt(path, np.asarray(frames), delimiter=",", fmt="%.9g")


# stages ----------------------------------------------------------------------

def prepare_corpora(cfg: PipelineConfig) -> tuple[SequenceCorpus, SequenceCorpus]:
    """(train, test) in original range."""
    if cfg.corpus is None:
        full = generate_synthetic(cfg.synthetic, cfg.seed)
    else:
        full = load_corpus(cfg.corpus)
    if cfg.test_corpus is not None:
        return full, load_corpus(cfg.test_corpus)
    return split_per_class(full, 0.5, cfg.seed)


def segment_stage(scaled: SequenceCorpus, cfg: PipelineConfig, out: Path) -> IntervalSegmentation:
    seg, _, _ = segment_corpus(scaled.samples, cfg.segment.degree, cfg.segment.weights,
                               cfg.segment.fallback)
    write_json(out / "seg.json", seg.to_dict())
    return seg


def diffusion_stage(scaled: SequenceCorpus, cfg: PipelineConfig, out: Path) -> DenoiserModel:
    dcfg = replace(cfg.diffusion, seed=cfg.seed)
    model, history = train_diffusion(scaled.first_frames(), scaled.labels, scaled.class_count, dcfg)
    model.save(out / "diffusion")
    write_rows(out / "diffusion" / "loss.csv", [{"epoch": i, "loss": v} for i, v in enumerate(history)])
    return model


def first_frame_stage(model: DenoiserModel, scaler: Scaler, per_class: int, seed: int, out: Path):
    frames, labels = [], []
    for c in range(model.classes):
        frames.append(sample_first_steps(model, c, per_class, seed=seed * 1000 + c, bounds=scaler.bounds))
        labels.append(np.full(per_class, c))
    frames, labels = np.concatenate(frames), np.concatenate(labels)
    write_first_frames(out / "first_frames.csv", frames)
    write_first_frames(out / "first_labels.csv", labels[:, None])
    return frames, labels


def seq_stage(scaled: SequenceCorpus, seg: IntervalSegmentation, cfg: PipelineConfig, window: int,
              out: Path):
    scfg = replace(cfg.seq, window=int(window), length=scaled.length, features=scaled.channels,
                   classes=scaled.class_count, seed=cfg.seed)
    model = SeqModel(scfg)
    schedule = replace(cfg.schedule, seed=cfg.seed)
    history = alternating_train(model, scaled.samples, scaled.labels, seg, schedule,
                                progress=lambda row: log.debug("w=%d %s", window, row))
    d = model.save(out / f"seq_w{window}")
    write_rows(d / "loss_log.csv", history)
    return model, history


def generate_stage(model: SeqModel, frames, labels, scaler: Scaler, out: Path, window: int) -> SequenceCorpus:
    T = model.config.length
    seqs = generate_sequence(model, frames, labels, T)
    scaled = SequenceCorpus(seqs, labels, np.full(len(labels), T), model.config.classes, scaler)
    save_corpus(scaled.with_samples(scaler.invert(seqs)), out / f"gen_w{window}")
    return scaled


# orchestration ----------------------------------------------------------------

STAGE_SECTIONS = {
    "corpus": ("corpus", "test_corpus", "synthetic"),
    "scale": ("scaler",),
    "segment": ("segment",),
    "diffusion": ("diffusion",),
    "first_frames": ("diffusion", "evaluation"),
    "seq": ("seq", "schedule", "segment"),
    "generate": ("seq", "evaluation"),
    "evaluate": ("evaluation", "diffusion", "scaler"),
}


class Manifest:
    def __init__(self, cfg: PipelineConfig, out: Path):
        self.cfg, self.out = cfg, out
        self.data = {"config_hash": cfg.digest(), "seed": cfg.seed, "stages": []}

    def record(self, stage: str, **extra):
        full = self.cfg.to_dict()
        section = {k: full[k] for k in STAGE_SECTIONS[stage]}
        self.data["stages"].append({"stage": stage, "config_hash": config_hash(section),
                                    "seed": self.cfg.seed, **extra})
        write_json(self.out / "manifest.json", self.data)


def run_pipeline(cfg: PipelineConfig, out) -> dict:
    """Run every stage; returns the report (also written to ``out``/report.json)."""
    cfg.validate()
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "FAILED").unlink(missing_ok=True)
    write_json(out / "config.json", cfg.to_dict())
    manifest = Manifest(cfg, out)
    try:
        report = _run(cfg, out, manifest)
    except BaseException as exc:
        (out / "FAILED").write_text(f"{type(exc).__name__}: {exc}\n")
        raise
    return report


def _run(cfg: PipelineConfig, out: Path, manifest: Manifest) -> dict:
    ev = cfg.evaluation
    train, test = prepare_corpora(cfg)
    save_corpus(train, out / "corpus" / "train")
    save_corpus(test, out / "corpus" / "test")
    manifest.record("corpus", n_train=train.n, n_test=test.n)

    scaler = fit_scaler(train, cfg.scaler)
    write_json(out / "scaler.json", scaler.to_dict())
    tr, te = apply_scaler(train, scaler), apply_scaler(test, scaler)
    manifest.record("scale")

    log.info("segmenting %d training sequences", tr.n)
    seg = segment_stage(tr, cfg, out)
    manifest.record("segment", boundaries=list(seg.boundaries))
    emit_curves(out)

    log.info("training diffusion model (%d epochs)", cfg.diffusion.epochs)
    denoiser = diffusion_stage(tr, cfg, out)
    manifest.record("diffusion")
    frames, labels = first_frame_stage(denoiser, scaler, ev.gen_per_class, cfg.seed, out)
    manifest.record("first_frames", count=len(frames))

    generated = {}
    seq_summary = {}
    for w in ev.windows:
        log.info("training sequence model, window %d", w)
        model, history = seq_stage(tr, seg, cfg, w, out)
        manifest.record("seq", window=int(w))
        generated[f"w={w}"] = generate_stage(model, frames, labels, scaler, out, w)
        manifest.record("generate", window=int(w))
        seq_summary[f"w={w}"] = {k: history[-1][k] for k in ("loss", "mse", "weighted")}

    log.info("evaluating")
    trad = traditional_augment(tr, ev.gen_per_class, cfg.seed)
    save_corpus(trad.with_samples(scaler.invert(trad.samples)), out / "traditional")
    report = {
        "config_hash": cfg.digest(),
        "seed": cfg.seed,
        "corpus": {"train": train.n, "test": test.n, "T": train.length, "d": train.channels,
                   "C": train.class_count},
        "segmentation": seg.to_dict(),
        "sequence_training": seq_summary,
        "first_frame_fid": avg_fid_over_classes(train.first_frames(), train.labels, scaler.invert(frames),
                                                labels, train.class_count, ev.repetitions,
                                                ev.fraction, cfg.seed),
        "uplift": run_uplift_experiment(tr, te, generated, trad, ev.classifier, cfg.seed),
    }
    if ev.table1:
        log.info("Table I arms")
        # the six arms and the real split use every real sequence
        report["table1"] = run_table1_matrix(concat_corpora(train, test), cfg.diffusion,
                                             ev.first_per_class, ev.repetitions, ev.fraction, cfg.seed)
    manifest.record("evaluate")
    write_json(out / "report.json", report)
    return report


# plot data ----------------------------------------------------------------------

def _need(path: Path, stage: str) -> Path:
    if not path.exists():
        raise MissingArtifactError(f"{path} missing: run the {stage} stage first")
    return path


def emit_curves(out) -> list[Path]:
    """curves.csv, boundaries.csv and one loss CSV per trained sequence model."""
    out = Path(out)
    seg = IntervalSegmentation.from_dict(json.loads(_need(out / "seg.json", "segment").read_text()))
    train = load_corpus(_need(out / "corpus" / "train", "corpus"))
    scaler = Scaler.from_dict(json.loads(_need(out / "scaler.json", "scale").read_text()))
    avg = average_feature_curve(scaler.apply(train.samples))
    curve = difference_curve(avg)
    fitted = PolyFit(np.asarray(seg.coefficients), (2.0, float(len(avg))), 0.0)(curve.times)
    rows = [{"t": t, "average": avg[t - 1],
             "difference": "" if t == 1 else curve.values[t - 2],
             "fitted": "" if t == 1 else fitted[t - 2]} for t in range(1, len(avg) + 1)]
    write_rows(out / "curves.csv", rows)
    bounds = [{"kind": "boundary", "index": i + 1, "value": b} for i, b in enumerate(seg.boundaries)]
    bounds += [{"kind": "weight", "index": i + 1, "value": w} for i, w in enumerate(seg.weights)]
    write_rows(out / "boundaries.csv", bounds)
    written = [out / "curves.csv", out / "boundaries.csv"]
    for d in sorted(out.glob("seq_w*")):
        log_path = d / "loss_log.csv"
        if log_path.exists():
            target = out / f"loss_{d.name}.csv"
            target.write_text(log_path.read_text())
            written.append(target)
    return written
