"""Quality measures for generated data.

* Fréchet distance between Gaussian fits of raw first-frame vectors,
  averaged over repeated subsamples and over classes.
* The six-arm scaling x prediction-target comparison for the diffusion stage.
* Classifier-based checks: accuracy uplift from augmentation and how often a
  classifier fitted on real data recognises generated samples.
"""
from __future__ import annotations

import io
import csv
from dataclasses import asdict, dataclass

import numpy as np

from . import netcore as nc
from .dataset import (SequenceCorpus, apply_scaler, concat_corpora, fit_scaler,
                      split_per_class, SCALER_METHODS)
from .diffusion import DiffusionConfig, sample_first_steps, train_diffusion


class NumericalError(ArithmeticError):
    pass


# FID -------------------------------------------------------------------------

@dataclass
class FidStats:
    mean: np.ndarray
    cov: np.ndarray

    @classmethod
    def from_samples(cls, x) -> "FidStats":
        x = np.asarray(x, dtype=float)
        if x.ndim != 2 or x.shape[0] < 2:
            raise ValueError("need an n x d sample matrix with n >= 2")
        if not np.all(np.isfinite(x)):
            raise NumericalError("non-finite feature values")
        return cls(x.mean(axis=0), np.atleast_2d(np.cov(x, rowvar=False)))


def _psd_sqrt(a: np.ndarray):
    w, v = np.linalg.eigh((a + a.T) / 2.0)
    if w.min() < -1e-8 * max(1.0, abs(w).max()):
        raise NumericalError(f"covariance has a negative eigenvalue {w.min():.3g}")
    return (v * np.sqrt(np.clip(w, 0.0, None))) @ v.T


def fid_from_stats(s1: FidStats, s2: FidStats, eps: float = 1e-6) -> float:
    """||mu1-mu2||^2 + Tr(S1 + S2 - 2 (S1 S2)^(1/2)).

    Tr (S1 S2)^(1/2) equals the sum of singular values of S2^(1/2) S1^(1/2);
    the SVD resolves small singular values that an eigen-decomposition of
    the squared product would lose.
    """
    d = len(s1.mean)
    c1 = s1.cov + eps * np.eye(d)
    c2 = s2.cov + eps * np.eye(d)
    tr_sqrt = np.linalg.svd(_psd_sqrt(c2) @ _psd_sqrt(c1), compute_uv=False).sum()
    diff = s1.mean - s2.mean
    value = float(diff @ diff + np.trace(c1) + np.trace(c2) - 2.0 * tr_sqrt)
    if not np.isfinite(value):
        raise NumericalError("FID is not finite")
    return max(value, 0.0)


def fid(real, gen) -> float:
    return fid_from_stats(FidStats.from_samples(real), FidStats.from_samples(gen))


def avg_fid_over_classes(real, real_labels, gen, gen_labels, classes: int,
                         repetitions: int = 100, fraction: float = 0.8, seed: int = 0) -> dict:
    """Per-class FID between real and generated vectors, averaged over
    ``repetitions`` random subsamples (``fraction`` of the generated set,
    without replacement)."""
    real, gen = np.asarray(real, float), np.asarray(gen, float)
    real_labels, gen_labels = np.asarray(real_labels), np.asarray(gen_labels)
    rng = np.random.default_rng(seed)
    per_rep = np.zeros((repetitions, classes))
    for c in range(classes):
        r = real[real_labels == c]
        g = gen[gen_labels == c]
        k = len(g) if repetitions == 1 and fraction >= 1 else int(np.floor(fraction * len(g)))
        if len(r) < 2 or k < 2:
            raise ValueError(f"class {c}: need >= 2 real and >= 2 subsampled generated vectors")
        rstats = FidStats.from_samples(r)
        for rep in range(repetitions):
            idx = rng.choice(len(g), size=k, replace=False) if k < len(g) else np.arange(len(g))
            per_rep[rep, c] = fid_from_stats(rstats, FidStats.from_samples(g[idx]))
    rep_means = per_rep.mean(axis=1)
    return {
        "per_class": per_rep.mean(axis=0).tolist(),
        "mean": float(per_rep.mean()),
        "rep_variance": float(rep_means.var()),
        "repetitions": repetitions,
    }


def real_split_fid(corpus: SequenceCorpus, seed: int = 0, features=None) -> float:
    """Average per-class FID between two near-equal halves of real first frames."""
    counts = corpus.class_counts()
    if counts.min() < 4:
        raise ValueError("need at least 4 samples per class for a split FID")
    a, b = split_per_class(corpus, 0.5, seed)
    fa = a.first_frames() if features is None else features(a)
    fb = b.first_frames() if features is None else features(b)
    vals = [fid(fa[a.labels == c], fb[b.labels == c]) for c in range(corpus.class_count)]
    return float(np.mean(vals))


# diffusion comparison ---------------------------------------------------------

def first_frame_generator(train: SequenceCorpus, method: str, config: DiffusionConfig,
                          per_class: int, seed: int):
    """Train a denoiser on scaled first frames and return generated frames in original range."""
    scaler = fit_scaler(train, method)
    scaled = scaler.apply(train.first_frames())
    model, history = train_diffusion(scaled, train.labels, train.class_count, config)
    frames, labels = [], []
    for c in range(train.class_count):
        frames.append(sample_first_steps(model, c, per_class, seed=seed * 1000 + c,
                                         bounds=scaler.bounds))
        labels.append(np.full(per_class, c))
    return scaler.invert(np.concatenate(frames)), np.concatenate(labels), history


def run_table1_matrix(train: SequenceCorpus, config: DiffusionConfig | None = None,
                      per_class: int = 100, repetitions: int = 100, fraction: float = 0.8,
                      seed: int = 0, methods=SCALER_METHODS, targets=("x0", "eps")) -> dict:
    config = config or DiffusionConfig()
    real = train.first_frames()
    rows = []
    for method in methods:
        for target in targets:
            cfg = DiffusionConfig(**{**asdict(config), "target": target, "seed": seed})
            gen, gen_labels, history = first_frame_generator(train, method, cfg, per_class, seed)
            res = avg_fid_over_classes(real, train.labels, gen, gen_labels, train.class_count,
                                       repetitions, fraction, seed)
            rows.append({
                "arm": f"{method}+{target}",
                "scaling": method,
                "target": target,
                "steps": cfg.steps,
                "real": int(train.n),
                "generated": int(len(gen)),
                "avg_fid": res["mean"],
                "rep_variance": res["rep_variance"],
                "final_loss": float(history[-1]) if history else None,
            })
    baseline = real_split_fid(train, seed)
    return {"rows": rows, "real_split_fid": baseline,
            "csv": table_csv(rows + [{"arm": "real_split", "avg_fid": baseline}],
                             ["arm", "steps", "real", "generated", "avg_fid"])}


# augmentation baselines ---------------------------------------------------------

def jitter(seq: np.ndarray, valid_length: int, rng, sigma: float = 0.03) -> np.ndarray:
    out = np.array(seq, dtype=float)
    L = int(valid_length)
    out[:L] += sigma * rng.standard_normal(out[:L].shape)
    out[L:] = out[L - 1]
    return out


def time_warp(seq: np.ndarray, valid_length: int, rng, knots: int = 4, strength: float = 0.1):
    """Piecewise-linear warp of the time axis with ``knots`` interior knots
    displaced by up to ``strength`` * (T-1); returns (warped, new valid length)."""
    seq = np.asarray(seq, dtype=float)
    T = seq.shape[0]
    anchors = np.linspace(0.0, T - 1, knots + 2)
    moved = anchors.copy()
    moved[1:-1] += rng.uniform(-strength, strength, size=knots) * (T - 1)
    moved = np.clip(np.maximum.accumulate(moved), 0.0, T - 1)
    phi = np.interp(np.arange(T), anchors, moved)
    out = np.stack([np.interp(phi, np.arange(T), seq[:, j]) for j in range(seq.shape[1])], axis=1)
    L = int(valid_length)
    reached = np.flatnonzero(phi >= L - 1)
    new_len = int(reached[0]) + 1 if len(reached) else T
    out[new_len:] = out[new_len - 1]
    return out, new_len


def traditional_augment(corpus: SequenceCorpus, per_class: int = 25, seed: int = 0,
                        sigma: float = 0.03, strength: float = 0.1, knots: int = 4) -> SequenceCorpus:
    """Alternate jitter and time-warp copies of randomly chosen class members."""
    rng = np.random.default_rng(seed)
    samples, labels, lengths = [], [], []
    for c in range(corpus.class_count):
        idx = np.flatnonzero(corpus.labels == c)
        if len(idx) == 0:
            continue
        src = rng.choice(idx, size=per_class, replace=per_class > len(idx))
        for k, i in enumerate(src):
            if k % 2 == 0:
                x, L = jitter(corpus.samples[i], corpus.valid_lengths[i], rng, sigma), corpus.valid_lengths[i]
            else:
                x, L = time_warp(corpus.samples[i], corpus.valid_lengths[i], rng, knots, strength)
            samples.append(x)
            labels.append(c)
            lengths.append(L)
    return SequenceCorpus(np.stack(samples), labels, lengths, corpus.class_count, corpus.scaler)


# classifier probe -------------------------------------------------------------

@dataclass
class ClassifierConfig:
    stride: int = 4
    hidden: int = 64
    epochs: int = 150
    lr: float = 2e-3
    batch_size: int = 50
    repeats: int = 3
    seed: int = 0


class Classifier:
    """Dense network over the stride-subsampled, flattened sequence."""

    def __init__(self, length: int, features: int, classes: int, config: ClassifierConfig, seed: int):
        self.config = config
        self.classes = classes
        self.inputs = len(range(0, length, config.stride)) * features
        s = self.store = nc.ParameterStore(seed)
        s.dense("hidden", self.inputs, config.hidden)
        s.dense("out", config.hidden, classes)

    def features(self, samples: np.ndarray) -> np.ndarray:
        x = np.asarray(samples, dtype=float)[:, ::self.config.stride, :]
        return x.reshape(len(x), -1)

    def logits(self, samples) -> nc.Tensor:
        x = self.features(samples)
        if x.shape[1] != self.inputs:
            raise ValueError(f"classifier expects {self.inputs} inputs, got {x.shape[1]}")
        return nc.dense(self.store, "out", nc.gelu(nc.dense(self.store, "hidden", x)))

    def predict_proba(self, samples) -> np.ndarray:
        return nc.softmax_rows(self.logits(samples)).data

    def predict(self, samples) -> np.ndarray:
        return self.logits(samples).data.argmax(axis=1)


def _fit_one(train: SequenceCorpus, config: ClassifierConfig, seed: int) -> Classifier:
    clf = Classifier(train.length, train.channels, train.class_count, config, seed)
    rng = np.random.default_rng(seed + 7)
    for _ in range(config.epochs):
        order = rng.permutation(train.n)
        for start in range(0, train.n, config.batch_size):
            idx = order[start:start + config.batch_size]
            clf.store.zero_grad()
            loss = nc.cross_entropy(clf.logits(train.samples[idx]), train.labels[idx])
            loss.backward()
            nc.optimizer_step(clf.store, config.lr)
    return clf


def train_classifier(train: SequenceCorpus, config: ClassifierConfig | None = None,
                     seed: int | None = None) -> list[Classifier]:
    """Fit ``config.repeats`` independently initialised classifiers."""
    config = config or ClassifierConfig()
    seed = config.seed if seed is None else seed
    return [_fit_one(train, config, seed * 100 + r) for r in range(config.repeats)]


def confusion_matrix(true, pred, classes: int) -> np.ndarray:
    cm = np.zeros((classes, classes), dtype=int)
    np.add.at(cm, (np.asarray(true), np.asarray(pred)), 1)
    return cm


def evaluate_classifier(classifiers, test: SequenceCorpus) -> dict:
    """Confusion matrix summed over the classifier repeats, and its accuracy."""
    if isinstance(classifiers, Classifier):
        classifiers = [classifiers]
    for clf in classifiers:
        if clf.classes != test.class_count:
            raise ValueError(f"classifier has {clf.classes} classes, test corpus {test.class_count}")
    cm = sum(confusion_matrix(test.labels, clf.predict(test.samples), test.class_count)
             for clf in classifiers)
    return {"accuracy": float(np.trace(cm) / cm.sum()), "confusion": cm.tolist()}


def run_uplift_experiment(train: SequenceCorpus, test: SequenceCorpus, generated: dict,
                          traditional: SequenceCorpus | None, config: ClassifierConfig | None = None,
                          seed: int = 0) -> dict:
    """Accuracy with no augmentation, traditional augmentation and each generated set.

    ``generated`` maps a label such as ``"w=3"`` to a corpus; all corpora must
    be in the same (scaled) space as ``train``.
    """
    config = config or ClassifierConfig()
    for c in [test, traditional, *generated.values()]:
        if c is not None and (c.samples.shape[1:] != train.samples.shape[1:] or c.class_count != train.class_count):
            raise ValueError("all corpora must share T, d and class count")
    arms = {"no_aug": train}
    if traditional is not None:
        arms["traditional"] = concat_corpora(train, traditional)
    for name, gen in generated.items():
        arms[name] = concat_corpora(train, gen)
    results = {}
    for name, data in arms.items():
        results[name] = evaluate_classifier(train_classifier(data, config, seed), test)
    base = results["no_aug"]["accuracy"]
    table2 = [{"method": k, "accuracy": v["accuracy"],
               "increase": None if k == "no_aug" else v["accuracy"] - base} for k, v in results.items()]
    table3 = []
    if traditional is not None:
        trad = results["traditional"]["accuracy"]
        table3 = [{"method": k, "accuracy": v["accuracy"],
                   "increase": None if k == "traditional" else v["accuracy"] - trad}
                  for k, v in results.items() if k != "no_aug"]
    probe = train_classifier(concat_corpora(train, test), config, seed)
    similarity = {name: evaluate_classifier(probe, gen) for name, gen in generated.items()}
    return {
        "arms": results,
        "table2": {"rows": table2, "csv": table_csv(table2, ["method", "accuracy", "increase"])},
        "table3": {"rows": table3, "csv": table_csv(table3, ["method", "accuracy", "increase"])},
        "similarity": similarity,
    }


def table_csv(rows, columns) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for r in rows:
        w.writerow(["" if r.get(c) is None else (f"{r[c]:.6g}" if isinstance(r.get(c), float) else r.get(c))
                    for c in columns])
    return buf.getvalue()
