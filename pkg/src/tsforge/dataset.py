"""Corpus container, per-channel scalers, last-frame padding, on-disk bundles
and the synthetic gesture corpus used in place of real glove recordings."""
from __future__ import annotations

import csv
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

SCALER_METHODS = ("unit_interval", "signed_unit", "zscore")


class CorpusError(ValueError):
    pass


class CorpusParseError(CorpusError):
    pass


class IntegrityError(CorpusError):
    pass


@dataclass
class Scaler:
    method: str
    # per-channel: (min, max) for the interval methods, (mean, std) for zscore
    a: np.ndarray
    b: np.ndarray

    @property
    def channels(self) -> int:
        return len(self.a)

    def _flat(self):
        if self.method == "zscore":
            return self.b == 0
        return self.b == self.a

    def _check(self, x):
        if x.shape[-1] != self.channels:
            raise CorpusError(f"scaler fitted on {self.channels} channels, got {x.shape[-1]}")

    def apply(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        self._check(x)
        flat = self._flat()
        if self.method == "zscore":
            std = np.where(flat, 1.0, self.b)
            out = (x - self.a) / std
        else:
            span = np.where(flat, 1.0, self.b - self.a)
            out = (x - self.a) / span
            if self.method == "signed_unit":
                out = 2.0 * out - 1.0
        return np.where(flat, 0.0, out)

    def invert(self, y: np.ndarray) -> np.ndarray:
        y = np.asarray(y, dtype=float)
        self._check(y)
        flat = self._flat()
        if self.method == "zscore":
            std = np.where(flat, 1.0, self.b)
            out = y * std + self.a
        else:
            span = np.where(flat, 1.0, self.b - self.a)
            u = (y + 1.0) / 2.0 if self.method == "signed_unit" else y
            out = u * span + self.a
        return np.where(flat, self.a, out)

    @property
    def bounds(self) -> tuple[float, float] | None:
        """Range that scaled data occupies, or None when unbounded."""
        return {"unit_interval": (0.0, 1.0), "signed_unit": (-1.0, 1.0)}.get(self.method)

    def to_dict(self) -> dict:
        return {"method": self.method, "a": [float(v) for v in self.a], "b": [float(v) for v in self.b]}

    @classmethod
    def from_dict(cls, d: dict) -> "Scaler":
        return cls(d["method"], np.array(d["a"], dtype=float), np.array(d["b"], dtype=float))


@dataclass
class SequenceCorpus:
    samples: np.ndarray  # (n, T, d)
    labels: np.ndarray  # (n,)
    valid_lengths: np.ndarray  # (n,)
    class_count: int
    scaler: Scaler | None = None

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=float)
        self.labels = np.asarray(self.labels, dtype=int)
        self.valid_lengths = np.asarray(self.valid_lengths, dtype=int)
        self.validate()

    @property
    def n(self) -> int:
        return self.samples.shape[0]

    @property
    def length(self) -> int:
        return self.samples.shape[1]

    @property
    def channels(self) -> int:
        return self.samples.shape[2]

    def validate(self):
        if self.samples.ndim != 3:
            raise CorpusError(f"samples must be n x T x d, got shape {self.samples.shape}")
        n, T, _ = self.samples.shape
        if self.labels.shape != (n,) or self.valid_lengths.shape != (n,):
            raise CorpusError("labels and valid_lengths need one entry per sample")
        if n and (self.labels.min() < 0 or self.labels.max() >= self.class_count):
            raise CorpusError(f"labels must lie in [0, {self.class_count})")
        if n and (self.valid_lengths.min() < 1 or self.valid_lengths.max() > T):
            raise CorpusError(f"valid lengths must lie in [1, {T}]")
        for i, L in enumerate(self.valid_lengths):
            tail = self.samples[i, L:]
            if tail.size and not np.array_equal(tail, np.broadcast_to(self.samples[i, L - 1], tail.shape)):
                raise IntegrityError(f"sample {i}: padded frames differ from frame {L - 1}")

    def with_samples(self, samples: np.ndarray, scaler: Scaler | None = None) -> "SequenceCorpus":
        return SequenceCorpus(samples, self.labels.copy(), self.valid_lengths.copy(),
                              self.class_count, scaler if scaler is not None else self.scaler)

    def subset(self, idx) -> "SequenceCorpus":
        idx = np.asarray(idx, dtype=int)
        return SequenceCorpus(self.samples[idx], self.labels[idx], self.valid_lengths[idx],
                              self.class_count, self.scaler)

    def first_frames(self) -> np.ndarray:
        return self.samples[:, 0, :]

    def class_counts(self) -> np.ndarray:
        return np.bincount(self.labels, minlength=self.class_count)


def concat_corpora(*corpora: SequenceCorpus) -> SequenceCorpus:
    first = corpora[0]
    for c in corpora[1:]:
        if c.samples.shape[1:] != first.samples.shape[1:] or c.class_count != first.class_count:
            raise CorpusError("corpora disagree on T, d or class count")
    return SequenceCorpus(np.concatenate([c.samples for c in corpora]),
                          np.concatenate([c.labels for c in corpora]),
                          np.concatenate([c.valid_lengths for c in corpora]),
                          first.class_count, first.scaler)


# scaling ---------------------------------------------------------------

def fit_scaler(corpus: SequenceCorpus, method: str = "unit_interval") -> Scaler:
    if method not in SCALER_METHODS:
        raise ValueError(f"unknown scaler method {method!r}; expected one of {SCALER_METHODS}")
    if corpus.n == 0:
        raise CorpusError("cannot fit a scaler on an empty corpus")
    flat = corpus.samples.reshape(-1, corpus.channels)
    if method == "zscore":
        return Scaler(method, flat.mean(axis=0), flat.std(axis=0))
    return Scaler(method, flat.min(axis=0), flat.max(axis=0))


def apply_scaler(corpus: SequenceCorpus, scaler: Scaler) -> SequenceCorpus:
    return corpus.with_samples(scaler.apply(corpus.samples), scaler)


def invert_scaler(corpus: SequenceCorpus, scaler: Scaler) -> SequenceCorpus:
    return corpus.with_samples(scaler.invert(corpus.samples), scaler)


# padding -----------------------------------------------------------------

def pad_sequence(seq: np.ndarray, T: int) -> np.ndarray:
    seq = np.asarray(seq, dtype=float)
    if seq.ndim == 1:
        seq = seq[:, None]
    L = seq.shape[0]
    if L < 1 or L > T:
        raise CorpusError(f"sequence length {L} outside [1, {T}]")
    return np.concatenate([seq, np.repeat(seq[-1:], T - L, axis=0)], axis=0)


def pad_to_length(sequences, T: int, labels=None, class_count: int | None = None) -> SequenceCorpus:
    """Last-frame pad ragged sequences (each L x d) to a common length T."""
    padded = [pad_sequence(s, T) for s in sequences]
    lengths = [len(s) for s in sequences]
    if labels is None:
        labels = np.zeros(len(padded), dtype=int)
    labels = np.asarray(labels, dtype=int)
    if class_count is None:
        class_count = int(labels.max()) + 1 if len(labels) else 1
    return SequenceCorpus(np.stack(padded), labels, np.array(lengths), class_count)


# splitting ---------------------------------------------------------------

def split_per_class(corpus: SequenceCorpus, fraction: float = 0.5, seed: int = 0):
    """Split each class into two parts; the first receives floor(fraction * n_c)."""
    rng = np.random.default_rng(seed)
    first, second = [], []
    for c in range(corpus.class_count):
        idx = np.flatnonzero(corpus.labels == c)
        if len(idx) == 0:
            continue
        if len(idx) < 2:
            raise CorpusError(f"class {c} has {len(idx)} sample; need at least 2 to split")
        idx = rng.permutation(idx)
        k = min(max(int(np.floor(fraction * len(idx))), 1), len(idx) - 1)
        first.extend(sorted(idx[:k]))
        second.extend(sorted(idx[k:]))
    return corpus.subset(first), corpus.subset(second)


# bundles -----------------------------------------------------------------

def save_corpus(corpus: SequenceCorpus, path) -> Path:
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    manifest = {
        "n": corpus.n,
        "T": corpus.length,
        "d": corpus.channels,
        "C": corpus.class_count,
        "scaler": corpus.scaler.to_dict() if corpus.scaler is not None else None,
        "valid_lengths": [int(v) for v in corpus.valid_lengths],
        "labels": [int(v) for v in corpus.labels],
    }
    (path / "manifest.json").write_text(json.dumps(manifest, indent=1) + "\n")
    with open(path / "data.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["sample_index", "t"] + [f"x{j}" for j in range(corpus.channels)])
        for i in range(corpus.n):
            for t in range(corpus.length):
                w.writerow([i, t] + [f"{v:.9g}" for v in corpus.samples[i, t]])
    return path


def load_corpus(path) -> SequenceCorpus:
    path = Path(path)
    mpath, dpath = path / "manifest.json", path / "data.csv"
    if not mpath.exists() or not dpath.exists():
        raise CorpusParseError(f"{path} is not a corpus bundle (manifest.json + data.csv)")
    try:
        m = json.loads(mpath.read_text())
    except json.JSONDecodeError as exc:
        raise CorpusParseError(f"{mpath}: {exc}") from exc
    for key in ("n", "T", "d", "C", "valid_lengths", "labels"):
        if key not in m:
            raise CorpusParseError(f"{mpath}: missing field {key!r}")
    n, T, d = int(m["n"]), int(m["T"]), int(m["d"])
    samples = np.full((n, T, d), np.nan)
    seen = np.zeros((n, T), dtype=bool)
    with open(dpath, newline="") as fh:
        reader = csv.reader(fh)
        next(reader, None)
        for row_no, row in enumerate(reader, start=2):
            if len(row) != d + 2:
                raise CorpusParseError(
                    f"{dpath}:{row_no}: expected {d + 2} fields (sample_index, t, {d} values), got {len(row)}")
            try:
                i, t = int(row[0]), int(row[1])
            except ValueError as exc:
                raise CorpusParseError(f"{dpath}:{row_no}: bad index field: {exc}") from exc
            if not (0 <= i < n):
                raise CorpusParseError(f"{dpath}:{row_no}: sample_index {i} outside [0, {n})")
            if not (0 <= t < T):
                raise CorpusError(f"{dpath}:{row_no}: time step {t} outside [0, {T}) (shape mismatch)")
            for j, v in enumerate(row[2:]):
                try:
                    samples[i, t, j] = float(v)
                except ValueError as exc:
                    raise CorpusParseError(f"{dpath}:{row_no}: field x{j}: {exc}") from exc
            seen[i, t] = True
    if not seen.all():
        i, t = np.argwhere(~seen)[0]
        raise CorpusError(f"{dpath}: missing row for sample {i}, t={t} (shape mismatch)")
    scaler = Scaler.from_dict(m["scaler"]) if m.get("scaler") else None
    return SequenceCorpus(samples, m["labels"], m["valid_lengths"], int(m["C"]), scaler)


# synthetic corpus ----------------------------------------------------------

@dataclass
class SyntheticSpec:
    """Parameterised ramp-plateau-oscillation gestures.

    Per-class waveform parameters (onset, start/plateau levels, oscillation
    frequency) are drawn from ``param_seed`` unless given explicitly, then
    pulled toward their across-class mean by ``class_separation`` (1 keeps
    them as drawn). Each sample follows its class template over a random
    active duration in [duration_lo, duration_hi] with per-sample level,
    amplitude and onset jitter, plus additive observation noise, and is then
    last-frame padded to ``length``. ``level_correlation`` ties the plateau
    offset to the start offset, so the first frame carries part of the
    sample's later shape.
    """

    class_count: int = 10
    channels: int = 8
    length: int = 64
    samples_per_class: int = 50
    noise: float = 0.05
    sample_jitter: float = 0.15
    duration_lo: int = 24
    duration_hi: int = 56
    osc_amplitude: float = 0.25
    class_separation: float = 1.0
    # correlation between a sample's start-level and plateau-level offsets
    level_correlation: float = 0.0
    param_seed: int = 1234
    # channel-wise affine map into a sensor-like original range
    channel_offset: float = 200.0
    channel_scale: float = 100.0
    onsets: list | None = None
    start_levels: list | None = None
    plateau_levels: list | None = None
    frequencies: list | None = None

    def __post_init__(self):
        if not (1 <= self.duration_lo <= self.duration_hi <= self.length):
            raise ValueError("duration bounds must satisfy 1 <= lo <= hi <= length")
        if self.class_count < 1 or self.channels < 1 or self.samples_per_class < 1:
            raise ValueError("class_count, channels and samples_per_class must be positive")
        if not -1.0 <= self.level_correlation <= 1.0:
            raise ValueError("level_correlation must lie in [-1, 1]")
        rng = np.random.default_rng(self.param_seed)
        C, d = self.class_count, self.channels

        def draw(lo, hi, shape):
            p = rng.uniform(lo, hi, size=shape)
            centre = p.mean(axis=0, keepdims=True)
            return (centre + self.class_separation * (p - centre)).tolist()

        if self.onsets is None:
            self.onsets = draw(0.05, 0.5, C)
        if self.start_levels is None:
            self.start_levels = draw(0.1, 0.6, (C, d))
        if self.plateau_levels is None:
            self.plateau_levels = draw(0.2, 1.0, (C, d))
        if self.frequencies is None:
            self.frequencies = draw(0.5, 3.0, C)

    def to_dict(self) -> dict:
        return asdict(self)


def class_template(spec: SyntheticSpec, c: int, L: int, amp: float = 1.0, start_shift=0.0,
                   plateau_shift=0.0, onset_shift: float = 0.0) -> np.ndarray:
    """Active segment of class ``c`` with duration ``L`` (L x d), before noise."""
    tau = np.linspace(0.0, 1.0, L)[:, None] if L > 1 else np.zeros((1, 1))
    onset = float(np.clip(spec.onsets[c] + onset_shift, 0.0, 0.9))
    start = np.asarray(spec.start_levels[c]) + start_shift
    plateau = np.asarray(spec.plateau_levels[c]) + plateau_shift
    ramp = np.clip((tau - onset) / (1.0 - onset) * 2.0, 0.0, 1.0)
    ramp = ramp * ramp * (3.0 - 2.0 * ramp)  # smoothstep
    phase = np.linspace(0.0, np.pi, spec.channels)[None, :]
    osc = spec.osc_amplitude * np.sin(2 * np.pi * spec.frequencies[c] * tau + phase) * ramp
    return amp * (start + (plateau - start) * ramp + osc)


def generate_synthetic(spec: SyntheticSpec, seed: int = 0) -> SequenceCorpus:
    rng = np.random.default_rng(seed)
    j = spec.sample_jitter
    seqs, labels = [], []
    for c in range(spec.class_count):
        for _ in range(spec.samples_per_class):
            L = int(rng.integers(spec.duration_lo, spec.duration_hi + 1))
            amp = 1.0 + j * rng.standard_normal()
            start = rng.standard_normal(spec.channels)
            rho = spec.level_correlation
            plateau = rho * start + np.sqrt(1.0 - rho * rho) * rng.standard_normal(spec.channels)
            x = class_template(spec, c, L, amp, start_shift=j * start, plateau_shift=j * plateau,
                               onset_shift=0.5 * j * rng.standard_normal())
            x = x + spec.noise * rng.standard_normal(x.shape)
            seqs.append(spec.channel_offset + spec.channel_scale * x)
            labels.append(c)
    return pad_to_length(seqs, spec.length, labels, spec.class_count)
